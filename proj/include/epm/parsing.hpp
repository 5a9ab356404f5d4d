#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "epm/error.hpp"
#include "epm/text.hpp"

namespace epm::parsing {

/// Result of reading one model response. `format_ok` means the response
/// carried exactly one <reason> block followed by exactly one <label> block
/// whose body is 0 or 1. The label (and reasoning) are still recovered on a
/// best-effort basis when the format is broken.
struct ParsedOutput {
    std::optional<std::string> reasoning;
    std::optional<int> label;
    bool format_ok = false;
    std::string raw;
};

namespace detail {

inline std::size_t count_of(std::string_view hay, std::string_view needle)
{
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) ++n;
    return n;
}

inline std::optional<int> binary_body(std::string_view body)
{
    auto t = text::trim(body);
    if (t == "0") return 0;
    if (t == "1") return 1;
    return std::nullopt;
}

constexpr std::string_view reason_open = "<reason>";
constexpr std::string_view reason_close = "</reason>";
constexpr std::string_view label_open = "<label>";
constexpr std::string_view label_close = "</label>";

}  // namespace detail

inline ParsedOutput parse_structured_output(std::string_view text)
{
    using namespace detail;
    ParsedOutput out;
    out.raw = std::string(text);
    const std::string lower = text::to_lower(text);  // tag lengths are unchanged by lowercasing

    const auto ro = lower.find(reason_open);
    if (ro != std::string::npos) {
        const auto body = ro + reason_open.size();
        const auto rc = lower.find(reason_close, body);
        if (rc != std::string::npos) out.reasoning = std::string(text.substr(body, rc - body));
    }

    const auto lo = lower.find(label_open);
    std::size_t lc = std::string::npos;
    if (lo != std::string::npos) {
        const auto body = lo + label_open.size();
        lc = lower.find(label_close, body);
        if (lc != std::string::npos) out.label = binary_body(text.substr(body, lc - body));
    }

    out.format_ok = count_of(lower, reason_open) == 1 && count_of(lower, reason_close) == 1 &&
                    count_of(lower, label_open) == 1 && count_of(lower, label_close) == 1 &&
                    out.reasoning.has_value() && lc != std::string::npos &&
                    lower.find(reason_close) < lo && out.label.has_value();
    return out;
}

/// Exactly "0" or "1" after trimming whitespace.
inline int parse_bare_label(std::string_view text)
{
    if (auto v = detail::binary_body(text)) return *v;
    throw invalid_label_error("expected a single 0 or 1, got \"" + std::string(text::trim(text)) + "\"");
}

inline int format_score(const ParsedOutput& parsed) { return parsed.format_ok ? 1 : 0; }

inline std::string render_structured_output(std::string_view reasoning, int label)
{
    std::string out;
    out += "<reason>";
    out += reasoning;
    out += "</reason><label>";
    out += label == 1 ? '1' : '0';
    out += "</label>";
    return out;
}

}  // namespace epm::parsing
