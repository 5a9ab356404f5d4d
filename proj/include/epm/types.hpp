#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "epm/error.hpp"
#include "epm/text.hpp"

namespace epm {

using json = nlohmann::json;

/// One mapping instance: the base listing title and the compared listing title.
struct ProductPair {
    std::string base_title;
    std::string compared_title;
    std::optional<std::string> brand;
    std::string pair_id;

    bool operator==(const ProductPair&) const = default;
};

struct LabeledPair {
    ProductPair pair;
    int label = 0;
    std::optional<std::string> reasoning;

    bool operator==(const LabeledPair&) const = default;
};

/// Stable identity for pairs that arrive without an id.
inline std::string content_pair_id(std::string_view base, std::string_view compared,
                                   const std::optional<std::string>& brand)
{
    auto h = text::fnv1a(base);
    h = text::fnv1a(std::string_view("\x1f", 1), h);
    h = text::fnv1a(compared, h);
    h = text::fnv1a(std::string_view("\x1f", 1), h);
    if (brand) h = text::fnv1a(*brand, h);
    return "h" + text::hex64(h);
}

inline ProductPair make_pair(std::string base, std::string compared,
                             std::optional<std::string> brand = std::nullopt)
{
    ProductPair p{std::move(base), std::move(compared), std::move(brand), {}};
    p.pair_id = content_pair_id(p.base_title, p.compared_title, p.brand);
    return p;
}

inline void validate(const LabeledPair& lp)
{
    if (text::trim(lp.pair.base_title).empty()) throw validation_error("base_title is empty");
    if (text::trim(lp.pair.compared_title).empty()) throw validation_error("compared_title is empty");
    if (lp.label != 0 && lp.label != 1)
        throw validation_error("label must be 0 or 1, got " + std::to_string(lp.label));
}

inline json to_json(const LabeledPair& lp)
{
    json j = json::object();
    j["pair_id"] = lp.pair.pair_id;
    j["base_title"] = lp.pair.base_title;
    j["compared_title"] = lp.pair.compared_title;
    if (lp.pair.brand) j["brand"] = *lp.pair.brand;
    j["label"] = lp.label;
    if (lp.reasoning) j["reasoning"] = *lp.reasoning;
    return j;
}

}  // namespace epm
