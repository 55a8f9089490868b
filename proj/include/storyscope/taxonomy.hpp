#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "parallel.hpp"

namespace storyscope::taxonomy {

enum class ResponseType { categorical, ordinal, scale, binary, multi_select };

inline std::string to_string(ResponseType t) {
    switch (t) {
        case ResponseType::categorical: return "categorical";
        case ResponseType::ordinal: return "ordinal";
        case ResponseType::scale: return "scale";
        case ResponseType::binary: return "binary";
        case ResponseType::multi_select: return "multi_select";
    }
    return "?";
}

inline ResponseType parse_response_type(const std::string& s) {
    if (s == "categorical") return ResponseType::categorical;
    if (s == "ordinal") return ResponseType::ordinal;
    if (s == "scale") return ResponseType::scale;
    if (s == "binary") return ResponseType::binary;
    if (s == "multi_select") return ResponseType::multi_select;
    throw ParseError("unknown response_type: " + s);
}

enum class StyleDependence { high, medium, low };

inline std::string to_string(StyleDependence s) {
    switch (s) {
        case StyleDependence::high: return "high";
        case StyleDependence::medium: return "medium";
        case StyleDependence::low: return "low";
    }
    return "?";
}

inline StyleDependence parse_style_dependence(const std::string& s) {
    if (s == "high") return StyleDependence::high;
    if (s == "medium") return StyleDependence::medium;
    if (s == "low") return StyleDependence::low;
    throw ParseError("unknown style_dependence: " + s);
}

/// Canonical lowercase dimension names plus the short-code alias table used
/// in the tabular label set. Returns empty string when unrecognized.
inline std::string canonical_dimension(const std::string& dim) {
    static const std::unordered_map<std::string, std::string> alias = {
        {"agent", "agent"},           {"social_network", "social_network"},
        {"event", "event"},           {"plot", "plot"},
        {"structure", "structure"},   {"setting", "setting"},
        {"time", "time"},             {"revelation", "revelation"},
        {"perspective", "perspective"}, {"style", "style"},
        // Short codes from the tabular label set.
        {"AGENT", "agent"}, {"SOC", "social_network"}, {"EVT", "event"},
        {"PLT", "plot"},    {"SIT", "structure"},      {"SET", "setting"},
        {"TMP", "time"},    {"REV", "revelation"},     {"PER", "perspective"},
        {"STY", "style"},
        // "situatedness" appears as an alternate name for the structure aspect.
        {"situatedness", "structure"},
    };
    auto it = alias.find(dim);
    return it == alias.end() ? std::string() : it->second;
}

struct FeatureDef {
    std::string feature_id;
    std::string name;
    std::string question;
    std::string description;
    std::string dimension;  // stored as given; compare via canonical_dimension
    ResponseType response_type = ResponseType::categorical;
    std::vector<std::string> options;
    StyleDependence style_dependence = StyleDependence::low;
    bool style_flagged = false;

    bool in_style_dimension() const { return canonical_dimension(dimension) == "style"; }
};

struct Taxonomy {
    std::string version;
    std::vector<FeatureDef> features;

    std::map<ResponseType, std::size_t> type_counts() const {
        std::map<ResponseType, std::size_t> c;
        for (const auto& f : features) c[f.response_type]++;
        return c;
    }

    const FeatureDef* find(const std::string& feature_id) const {
        for (const auto& f : features)
            if (f.feature_id == feature_id) return &f;
        return nullptr;
    }
};

struct CandidateFeature {
    FeatureDef def;
    std::vector<double> embedding;
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct ValidationReport {
    std::vector<std::string> violations;
    bool valid() const { return violations.empty(); }
};

inline bool is_integer_literal(const std::string& s) {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '-') ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i)
        if (s[i] < '0' || s[i] > '9') return false;
    return true;
}

inline ValidationReport validate_taxonomy(const Taxonomy& tax) {
    ValidationReport rep;
    std::unordered_set<std::string> seen;
    for (const auto& f : tax.features) {
        if (!seen.insert(f.feature_id).second)
            rep.violations.push_back("duplicate feature_id: " + f.feature_id);
        if (f.options.empty())
            rep.violations.push_back(f.feature_id + ": options must be non-empty");
        if (canonical_dimension(f.dimension).empty())
            rep.violations.push_back(f.feature_id + ": unknown dimension '" + f.dimension + "'");
        if (f.response_type == ResponseType::binary) {
            std::set<std::string> opts(f.options.begin(), f.options.end());
            if (opts != std::set<std::string>{"no", "yes"})
                rep.violations.push_back(f.feature_id + ": binary options must be {no, yes}");
        }
        if (f.response_type == ResponseType::scale) {
            bool ok = !f.options.empty();
            long prev = 0;
            for (std::size_t i = 0; ok && i < f.options.size(); ++i) {
                if (!is_integer_literal(f.options[i])) { ok = false; break; }
                long v = std::stol(f.options[i]);
                if (i > 0 && v != prev + 1) ok = false;
                prev = v;
            }
            if (!ok)
                rep.violations.push_back(f.feature_id + ": scale options must be consecutive integers");
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Deduplication (single linkage over embedding cosine similarity)
// ---------------------------------------------------------------------------

struct DedupReport {
    struct Cluster {
        std::vector<std::string> member_ids;  // sorted
        std::string representative_id;
    };
    std::vector<Cluster> merged_clusters;  // clusters with >= 2 members
    std::size_t n_candidates = 0;
    std::size_t n_representatives = 0;
};

namespace detail {

inline std::vector<double> unit_normalize(const std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    double n = std::sqrt(n2);
    std::vector<double> out(v.size(), 0.0);
    if (n > 0.0)
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) {
        for (std::size_t i = 0; i < n; ++i) parent[i] = i;
    }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace detail

/// Single-linkage clustering at the given cosine threshold; the representative
/// of each cluster is the member closest to the centroid of unit-normalized
/// embeddings (ties -> lowest feature_id). Representatives keep input order.
inline std::pair<Taxonomy, DedupReport> dedup_features(const std::vector<CandidateFeature>& candidates,
                                                       double threshold, int threads = 1) {
    if (candidates.empty()) throw ValidationError("dedup_features needs at least one candidate");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("cosine threshold must be in (0, 1)");
    const std::size_t n = candidates.size();
    const std::size_t dim = candidates[0].embedding.size();
    for (const auto& c : candidates)
        if (c.embedding.size() != dim)
            throw ValidationError("embedding dimension mismatch for " + c.def.feature_id);

    std::vector<std::vector<double>> unit(n);
    for (std::size_t i = 0; i < n; ++i) unit[i] = detail::unit_normalize(candidates[i].embedding);

    // Pairwise links computed in parallel per row, merged in a fixed order.
    std::vector<std::vector<std::size_t>> links(n);
    parallel_for(std::size_t{0}, n, threads, [&](std::size_t i) {
        for (std::size_t j = i + 1; j < n; ++j)
            if (detail::dot(unit[i], unit[j]) >= threshold) links[i].push_back(j);
    });
    detail::UnionFind uf(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j : links[i]) uf.unite(i, j);

    std::map<std::size_t, std::vector<std::size_t>> clusters;  // root -> members (input order)
    for (std::size_t i = 0; i < n; ++i) clusters[uf.find(i)].push_back(i);

    DedupReport rep;
    rep.n_candidates = n;
    std::vector<std::size_t> representatives;
    for (const auto& [root, members] : clusters) {
        std::vector<double> centroid(dim, 0.0);
        for (std::size_t m : members)
            for (std::size_t d = 0; d < dim; ++d) centroid[d] += unit[m][d];
        for (std::size_t d = 0; d < dim; ++d) centroid[d] /= static_cast<double>(members.size());
        auto centroid_unit = detail::unit_normalize(centroid);
        std::size_t best = members[0];
        double best_cos = -2.0;
        for (std::size_t m : members) {
            double c = detail::dot(unit[m], centroid_unit);
            if (c > best_cos + 1e-12 ||
                (std::abs(c - best_cos) <= 1e-12 &&
                 candidates[m].def.feature_id < candidates[best].def.feature_id)) {
                best = m;
                best_cos = std::max(best_cos, c);
            }
        }
        representatives.push_back(best);
        if (members.size() >= 2) {
            DedupReport::Cluster cl;
            for (std::size_t m : members) cl.member_ids.push_back(candidates[m].def.feature_id);
            std::sort(cl.member_ids.begin(), cl.member_ids.end());
            cl.representative_id = candidates[best].def.feature_id;
            rep.merged_clusters.push_back(std::move(cl));
        }
    }
    std::sort(representatives.begin(), representatives.end());
    Taxonomy out;
    out.version = "deduped";
    for (std::size_t r : representatives) out.features.push_back(candidates[r].def);
    rep.n_representatives = out.features.size();
    return {std::move(out), std::move(rep)};
}

// ---------------------------------------------------------------------------
// Variant selection
// ---------------------------------------------------------------------------

enum class Variant { all, narrative, style_only, core_only, core_plus_fingerprint };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::all: return "all";
        case Variant::narrative: return "narrative";
        case Variant::style_only: return "style_only";
        case Variant::core_only: return "core_only";
        case Variant::core_plus_fingerprint: return "core_plus_fingerprint";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "all") return Variant::all;
    if (s == "narrative") return Variant::narrative;
    if (s == "style_only") return Variant::style_only;
    if (s == "core_only") return Variant::core_only;
    if (s == "core_plus_fingerprint") return Variant::core_plus_fingerprint;
    throw ParseError("unknown variant: " + s);
}

/// Feature-id sets produced by the attribution module's role assignment.
struct RoleSets {
    std::set<std::string> core_ids;
    std::set<std::string> fingerprint_ids;
};

inline Taxonomy select_variant(const Taxonomy& tax, Variant variant, const RoleSets* roles = nullptr) {
    if ((variant == Variant::core_only || variant == Variant::core_plus_fingerprint) && roles == nullptr)
        throw ConfigError("variant " + to_string(variant) + " requires a role report");
    Taxonomy out;
    out.version = tax.version + ":" + to_string(variant);
    for (const auto& f : tax.features) {
        bool keep = false;
        switch (variant) {
            case Variant::all: keep = true; break;
            case Variant::narrative: keep = !f.in_style_dimension() && !f.style_flagged; break;
            case Variant::style_only: keep = f.in_style_dimension(); break;
            case Variant::core_only: keep = roles->core_ids.count(f.feature_id) > 0; break;
            case Variant::core_plus_fingerprint:
                keep = roles->core_ids.count(f.feature_id) > 0 || roles->fingerprint_ids.count(f.feature_id) > 0;
                break;
        }
        if (keep) out.features.push_back(f);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline Json feature_to_json(const FeatureDef& f) {
    return Json{{"feature_id", f.feature_id},
                {"name", f.name},
                {"question", f.question},
                {"description", f.description},
                {"dimension", f.dimension},
                {"response_type", to_string(f.response_type)},
                {"options", f.options},
                {"style_dependence", to_string(f.style_dependence)},
                {"style_flagged", f.style_flagged}};
}

inline FeatureDef feature_from_json(const Json& j) {
    FeatureDef f;
    f.feature_id = j.at("feature_id").get<std::string>();
    f.name = j.value("name", f.feature_id);
    f.question = j.value("question", std::string());
    f.description = j.value("description", std::string());
    f.dimension = j.at("dimension").get<std::string>();
    f.response_type = parse_response_type(j.at("response_type").get<std::string>());
    f.options = j.at("options").get<std::vector<std::string>>();
    f.style_dependence = parse_style_dependence(j.value("style_dependence", std::string("low")));
    f.style_flagged = j.value("style_flagged", false);
    return f;
}

inline Json to_json(const Taxonomy& tax) {
    Json features = Json::array();
    for (const auto& f : tax.features) features.push_back(feature_to_json(f));
    return Json{{"version", tax.version}, {"features", features}};
}

inline Taxonomy taxonomy_from_json(const Json& j) {
    Taxonomy tax;
    tax.version = j.value("version", std::string("unversioned"));
    for (const auto& jf : j.at("features")) tax.features.push_back(feature_from_json(jf));
    return tax;
}

inline Taxonomy load_taxonomy(const std::filesystem::path& path) { return taxonomy_from_json(load_json(path)); }

inline void save_taxonomy(const std::filesystem::path& path, const Taxonomy& tax) { save_json(path, to_json(tax)); }

inline std::vector<CandidateFeature> candidates_from_json(const Json& j) {
    std::vector<CandidateFeature> out;
    for (const auto& jf : j.at("features")) {
        CandidateFeature c;
        c.def = feature_from_json(jf);
        c.embedding = jf.at("embedding").get<std::vector<double>>();
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace storyscope::taxonomy
