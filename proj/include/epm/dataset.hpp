#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "epm/rng.hpp"
#include "epm/types.hpp"

namespace epm::dataset {

enum class file_format { jsonl, csv };

struct SplitBundle {
    std::vector<LabeledPair> peft;
    std::vector<LabeledPair> rl;
    std::vector<LabeledPair> val;
    std::vector<LabeledPair> test;
};

inline constexpr std::array<const char*, 4> split_names{"peft", "rl", "val", "test"};

struct DatasetStats {
    std::size_t total = 0;
    double positive_fraction = 0.0;
    std::size_t brand_count = 0;
    std::map<std::string, double> per_split_positive_fraction;
    std::map<std::string, std::size_t> per_split_size;
};

struct GeneratorConfig {
    long long n = 12000;
    double positive_fraction = 0.706;
    long long brand_count = 500;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::string record_error(std::size_t line, const std::string& what)
{
    return "line " + std::to_string(line) + ": " + what;
}

inline int parse_label_field(const json& v)
{
    if (v.is_number_integer()) {
        auto x = v.get<long long>();
        if (x == 0 || x == 1) return static_cast<int>(x);
        throw validation_error("label must be 0 or 1, got " + std::to_string(x));
    }
    if (v.is_number_float()) {
        auto x = v.get<double>();
        if (x == 0.0 || x == 1.0) return static_cast<int>(x);
        throw validation_error("label must be 0 or 1, got " + v.dump());
    }
    if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
    if (v.is_string()) {
        auto s = text::trim(v.get_ref<const std::string&>());
        if (s == "0") return 0;
        if (s == "1") return 1;
        throw validation_error("label must be 0 or 1, got \"" + std::string(s) + "\"");
    }
    throw validation_error("label must be 0 or 1, got " + v.dump());
}

inline std::optional<std::string> optional_string(const json& j, const char* key)
{
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (it->is_string()) {
        if (it->get_ref<const std::string&>().empty()) return std::nullopt;
        return it->get<std::string>();
    }
    if (it->is_number()) return it->dump();
    throw validation_error(std::string(key) + " must be a string");
}

inline LabeledPair record_from_json(const json& j)
{
    if (!j.is_object()) throw validation_error("record is not a JSON object");
    LabeledPair lp;
    auto base = optional_string(j, "base_title");
    auto compared = optional_string(j, "compared_title");
    if (!base) throw validation_error("missing base_title");
    if (!compared) throw validation_error("missing compared_title");
    lp.pair.base_title = *base;
    lp.pair.compared_title = *compared;
    lp.pair.brand = optional_string(j, "brand");
    auto label = j.find("label");
    if (label == j.end()) throw validation_error("missing label");
    lp.label = parse_label_field(*label);
    lp.reasoning = optional_string(j, "reasoning");
    auto id = optional_string(j, "pair_id");
    lp.pair.pair_id = id ? *id : content_pair_id(lp.pair.base_title, lp.pair.compared_title, lp.pair.brand);
    validate(lp);
    return lp;
}

struct csv_row {
    std::size_t line;
    std::vector<std::string> fields;
};

// RFC 4180: quoted fields may contain commas, doubled quotes and newlines.
inline std::vector<csv_row> parse_csv(const std::string& content)
{
    std::vector<csv_row> rows;
    csv_row row{1, {}};
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t line = 1;
    auto end_field = [&] {
        row.fields.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        if (!(row.fields.size() == 1 && row.fields[0].empty())) rows.push_back(std::move(row));
        row = csv_row{line, {}};
    };
    for (std::size_t i = 0; i < content.size(); ++i) {
        char c = content[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            if (field_started && !field.empty())
                throw validation_error(record_error(line, "stray quote inside unquoted field"));
            quoted = true;
            field_started = true;
            break;
        case ',':
            end_field();
            break;
        case '\r':
            break;
        case '\n':
            ++line;
            end_row();
            break;
        default:
            field.push_back(c);
            field_started = true;
        }
    }
    if (quoted) throw validation_error(record_error(row.line, "unterminated quoted field"));
    if (field_started || !row.fields.empty()) end_row();
    return rows;
}

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

inline file_format format_from_path(const std::filesystem::path& path)
{
    return path.extension() == ".csv" ? file_format::csv : file_format::jsonl;
}

/// Parses and validates a dataset. Errors carry the 1-based line number of
/// the offending record. Record order is preserved.
inline std::vector<LabeledPair> load_dataset(const std::filesystem::path& path, file_format format)
{
    if (!std::filesystem::exists(path)) throw validation_error("no such file: " + path.string());
    const std::string content = detail::read_file(path);
    std::vector<LabeledPair> out;
    std::unordered_set<std::string> seen;
    auto accept = [&](LabeledPair lp, std::size_t line) {
        if (!seen.insert(lp.pair.pair_id).second)
            throw validation_error(detail::record_error(line, "duplicate pair_id " + lp.pair.pair_id));
        out.push_back(std::move(lp));
    };

    if (format == file_format::jsonl) {
        std::istringstream in(content);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (text::trim(line).empty()) continue;
            LabeledPair lp;
            try {
                lp = detail::record_from_json(json::parse(line));
            } catch (const json::exception& e) {
                throw validation_error(detail::record_error(lineno, std::string("malformed JSON: ") + e.what()));
            } catch (const validation_error& e) {
                throw validation_error(detail::record_error(lineno, e.what()));
            }
            accept(std::move(lp), lineno);
        }
        return out;
    }

    auto rows = detail::parse_csv(content);
    if (rows.empty()) return out;
    const auto& header = rows.front().fields;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.fields.size() != header.size())
            throw validation_error(detail::record_error(
                row.line, "expected " + std::to_string(header.size()) + " fields, got " +
                              std::to_string(row.fields.size())));
        json j = json::object();
        for (std::size_t c = 0; c < header.size(); ++c) {
            auto key = std::string(text::trim(header[c]));
            if (key == "label") {
                j[key] = row.fields[c];
            } else if (!row.fields[c].empty()) {
                j[key] = row.fields[c];
            }
        }
        LabeledPair lp;
        try {
            lp = detail::record_from_json(j);
        } catch (const validation_error& e) {
            throw validation_error(detail::record_error(row.line, e.what()));
        }
        accept(std::move(lp), row.line);
    }
    return out;
}

inline std::vector<LabeledPair> load_dataset(const std::filesystem::path& path)
{
    return load_dataset(path, format_from_path(path));
}

inline std::string to_jsonl(const std::vector<LabeledPair>& data)
{
    std::string out;
    for (const auto& lp : data) {
        out += to_json(lp).dump();
        out += '\n';
    }
    return out;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<LabeledPair>& data)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw validation_error("cannot write " + path.string());
    out << to_jsonl(data);
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace detail {

struct attribute {
    std::string format;  // "{}" is replaced by the value
    std::vector<std::string> values;
};

struct product_template {
    std::string line;
    std::string type;
    std::vector<attribute> variants;  // every one is variant-critical
};

inline const std::vector<product_template>& templates()
{
    static const std::vector<product_template> t{
        {"MegaDose", "Vitamin D3", {{"{}IU", {"1000", "2000", "4000", "5000"}}, {"{} tablets", {"60", "90", "120", "180"}}, {"x {}", {"1", "2", "3", "4"}}}},
        {"Zero", "Cola", {{"{}mL", {"190", "250", "355", "500"}}, {"x {} cans", {"6", "12", "24", "30"}}}},
        {"Vertuo", "Espresso Pods Variety Pack", {{"{} count", {"10", "30", "40", "60"}}}},
        {"Pro", "Wireless Earbuds", {{"Gen {}", {"1", "2", "3"}}, {"{}", {"Black", "White", "Blue", "Pink"}}}},
        {"Whey", "Protein Powder", {{"{}g", {"500", "908", "1000", "2000"}}, {"{} Flavor", {"Chocolate", "Vanilla", "Strawberry"}}}},
        {"Fresh", "Laundry Detergent", {{"{}L", {"1", "2", "3", "4"}}, {"x {}", {"1", "2", "3"}}}},
        {"Hydra", "Face Cream", {{"{}mL", {"30", "50", "75", "100"}}}},
        {"Smooth", "Ballpoint Pens", {{"{} pack", {"10", "12", "20", "50"}}, {"{} Ink", {"Black", "Blue", "Red"}}}},
        {"Volt", "Power Bank", {{"{}mAh", {"5000", "10000", "20000"}}, {"{}", {"Gray", "White", "Navy"}}}},
        {"Natural", "Dry Dog Food", {{"{}kg", {"2", "5", "10", "15"}}, {"{} Recipe", {"Chicken", "Lamb", "Salmon"}}}},
        {"Ultra", "Toothpaste", {{"{}g", {"100", "120", "150"}}, {"x {}", {"1", "3", "6"}}}},
        {"Air", "Running Shoes", {{"Size {}", {"250", "260", "270", "280"}}, {"{}", {"Black", "White", "Red"}}}},
    };
    return t;
}

inline const std::vector<std::string>& non_essential_descriptors()
{
    static const std::vector<std::string> d{
        "Swiss-made", "Made in Korea", "Imported", "Official Store", "Best Seller",
        "Free Shipping", "New Packaging", "Eco Packaging", "Limited Time Deal", "Genuine",
    };
    return d;
}

inline const std::vector<std::string>& bundle_extras()
{
    static const std::vector<std::string> d{
        "+ cooler bag gift set", "+ travel pouch set", "+ bonus refill", "+ free sample bundle",
    };
    return d;
}

inline std::string brand_name(long long index)
{
    static const std::array<const char*, 24> syl{"ka", "lo", "mi", "ra", "ve", "no", "su", "ta",
                                                  "zen", "ko", "ri", "pa", "do", "shi", "ma", "lu",
                                                  "to", "ne", "bi", "sa", "ro", "va", "gu", "fe"};
    std::string name;
    long long v = index;
    for (int i = 0; i < 3; ++i) {
        name += syl[static_cast<std::size_t>(v % 24)];
        v /= 24;
    }
    if (v > 0) name += std::to_string(v);
    name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    return name;
}

inline std::string fill(const std::string& fmt, const std::string& value)
{
    auto pos = fmt.find("{}");
    return fmt.substr(0, pos) + value + fmt.substr(pos + 2);
}

inline std::string render(const std::string& brand, const product_template& t,
                          const std::vector<std::size_t>& choice)
{
    std::string title = brand + " " + t.line + " " + t.type;
    for (std::size_t a = 0; a < t.variants.size(); ++a) {
        title += a == 0 ? " " : ", ";
        title += fill(t.variants[a].format, t.variants[a].values[choice[a]]);
    }
    return title;
}

}  // namespace detail

/// Deterministic synthetic product pairs. Positives append non-essential
/// descriptors (origin, packaging, marketing). Hard negatives change exactly
/// one variant-critical attribute or add a bundle component.
inline std::vector<LabeledPair> synthesize_dataset(const GeneratorConfig& cfg)
{
    if (cfg.n <= 0) throw validation_error("n must be positive");
    if (!(cfg.positive_fraction >= 0.0 && cfg.positive_fraction <= 1.0))
        throw validation_error("positive_fraction must be in [0, 1]");
    if (cfg.brand_count <= 0) throw validation_error("brand_count must be positive");

    const auto n = static_cast<std::size_t>(cfg.n);
    rng_t rng(cfg.seed);

    const auto positives = static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.positive_fraction));
    std::vector<int> labels(n, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(positives), 1);
    shuffle(labels, rng);

    std::vector<std::string> brands;
    brands.reserve(static_cast<std::size_t>(cfg.brand_count));
    for (long long b = 0; b < cfg.brand_count; ++b) brands.push_back(detail::brand_name(b));
    std::vector<std::size_t> brand_of(n);
    for (std::size_t i = 0; i < n; ++i) brand_of[i] = i % brands.size();
    shuffle(brand_of, rng);

    const auto& tmpl = detail::templates();
    std::vector<LabeledPair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& brand = brands[brand_of[i]];
        const auto& t = pick(tmpl, rng);
        std::vector<std::size_t> choice;
        for (const auto& a : t.variants) choice.push_back(uniform_index(rng, a.values.size()));

        std::string base = detail::render(brand, t, choice);
        std::string compared;
        if (labels[i] == 1) {
            auto variant = choice;
            compared = detail::render(brand, t, variant);
            const auto& d = pick(detail::non_essential_descriptors(), rng);
            switch (uniform_index(rng, 3)) {
            case 0: compared = brand + " " + t.line + " " + t.type + " " + d +
                               compared.substr(brand.size() + t.line.size() + t.type.size() + 2);
                break;
            case 1: compared += " " + d; break;
            default: compared = "[" + d + "] " + compared; break;
            }
        } else {
            // Bundle composition or a single attribute flip.
            const std::size_t options = t.variants.size() + 1;
            const auto which = uniform_index(rng, options);
            if (which == t.variants.size()) {
                compared = base + " " + pick(detail::bundle_extras(), rng);
            } else {
                auto variant = choice;
                const auto& values = t.variants[which].values;
                variant[which] = (choice[which] + 1 + uniform_index(rng, values.size() - 1)) % values.size();
                compared = detail::render(brand, t, variant);
            }
        }
        if (uniform_index(rng, 2) == 1) std::swap(base, compared);

        LabeledPair lp;
        lp.pair.base_title = std::move(base);
        lp.pair.compared_title = std::move(compared);
        lp.pair.brand = brand;
        lp.pair.pair_id = "s" + std::to_string(cfg.seed) + "-" + std::to_string(i);
        lp.label = labels[i];
        out.push_back(std::move(lp));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

/// Four-way split stratified jointly on (brand, label). Each stratum is
/// apportioned with largest-remainder rounding; the rounding residue of
/// earlier strata is carried into the remainders of later ones so split
/// totals and per-label totals stay within one record of their targets.
inline SplitBundle stratified_split(const std::vector<LabeledPair>& data,
                                    const std::array<double, 4>& ratios, std::uint64_t seed)
{
    if (data.empty()) throw validation_error("cannot split an empty dataset");
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) throw validation_error("split ratios must be nonnegative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw validation_error("split ratios must sum to 1");

    // Strata ordered by label first so the carried residue is bounded per label.
    std::map<std::pair<int, std::string>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& lp = data[i];
        strata[{lp.label, lp.pair.brand.value_or("")}].push_back(i);
    }

    rng_t rng(seed);
    std::vector<int> assignment(data.size(), -1);
    std::array<double, 4> carry{};
    for (auto& [key, members] : strata) {
        std::sort(members.begin(), members.end(),
                  [&](std::size_t a, std::size_t b) { return data[a].pair.pair_id < data[b].pair.pair_id; });
        shuffle(members, rng);

        const auto count = static_cast<double>(members.size());
        std::array<double, 4> quota{};
        std::array<std::size_t, 4> alloc{};
        std::size_t allocated = 0;
        for (std::size_t s = 0; s < 4; ++s) {
            quota[s] = count * ratios[s];
            alloc[s] = static_cast<std::size_t>(std::floor(quota[s]));
            allocated += alloc[s];
        }
        std::array<std::size_t, 4> order{0, 1, 2, 3};
        std::array<double, 4> remainder{};
        for (std::size_t s = 0; s < 4; ++s)
            remainder[s] = ratios[s] > 0.0 ? quota[s] - std::floor(quota[s]) + carry[s] : -1e300;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
        for (std::size_t k = 0; allocated < members.size(); ++k, ++allocated) ++alloc[order[k % 4]];
        for (std::size_t s = 0; s < 4; ++s) carry[s] += quota[s] - static_cast<double>(alloc[s]);

        std::size_t pos = 0;
        for (std::size_t s = 0; s < 4; ++s)
            for (std::size_t c = 0; c < alloc[s]; ++c) assignment[members[pos++]] = static_cast<int>(s);
    }

    SplitBundle bundle;
    std::array<std::vector<LabeledPair>*, 4> targets{&bundle.peft, &bundle.rl, &bundle.val, &bundle.test};
    for (std::size_t i = 0; i < data.size(); ++i) targets[static_cast<std::size_t>(assignment[i])]->push_back(data[i]);
    return bundle;
}

inline DatasetStats dataset_stats(const std::vector<LabeledPair>& data)
{
    DatasetStats st;
    st.total = data.size();
    std::size_t pos = 0;
    std::set<std::string> brands;
    for (const auto& lp : data) {
        pos += lp.label == 1 ? 1 : 0;
        if (lp.pair.brand) brands.insert(*lp.pair.brand);
    }
    st.positive_fraction = st.total == 0 ? 0.0 : static_cast<double>(pos) / static_cast<double>(st.total);
    st.brand_count = brands.size();
    return st;
}

inline DatasetStats dataset_stats(const SplitBundle& bundle)
{
    std::vector<LabeledPair> all;
    std::array<const std::vector<LabeledPair>*, 4> parts{&bundle.peft, &bundle.rl, &bundle.val, &bundle.test};
    for (const auto* p : parts) all.insert(all.end(), p->begin(), p->end());
    auto st = dataset_stats(all);
    for (std::size_t s = 0; s < 4; ++s) {
        st.per_split_positive_fraction[split_names[s]] = dataset_stats(*parts[s]).positive_fraction;
        st.per_split_size[split_names[s]] = parts[s]->size();
    }
    return st;
}

inline json to_json(const DatasetStats& st)
{
    json j{{"total", st.total}, {"positive_fraction", st.positive_fraction}, {"brand_count", st.brand_count}};
    if (!st.per_split_positive_fraction.empty()) {
        j["per_split_positive_fraction"] = st.per_split_positive_fraction;
        j["per_split_size"] = st.per_split_size;
    }
    return j;
}

}  // namespace epm::dataset
