#pragma once

/// End-to-end orchestration: a declarative run configuration, stages executed
/// in dependency order under one output directory, and a manifest recording a
/// SHA-256 content hash for every file written. For a fixed (inputs, config)
/// pair every output byte is deterministic, so re-running a config reproduces
/// the manifest exactly. The module also ships the planted-signal synthetic
/// generator used by the test fixtures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "audit.hpp"
#include "baselines.hpp"
#include "boosting.hpp"
#include "corpus.hpp"
#include "encoding.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "hash.hpp"
#include "induction.hpp"
#include "io.hpp"
#include "matrix.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "roles.hpp"
#include "taxonomy.hpp"
#include "treeshap.hpp"

namespace storyscope::pipeline {

// ---------------------------------------------------------------------------
// Synthetic fixture generator
// ---------------------------------------------------------------------------

/// Ground truth for one generated feature: its planted role, the direction of
/// the human-vs-AI shift for core features, and the target source for
/// fingerprint features. Shifts are in standard-deviation units of the value
/// noise before rounding to the 1..7 grid.
struct PlantedFeature {
    std::string feature_id;
    std::string role;    // "core" | "fingerprint" | "noise"
    std::string sign;    // core only: "human_leaning" | "ai_leaning"
    std::string source;  // fingerprint only: the elevated source
    double shift = 0.0;

    Json to_json() const {
        return Json{{"feature_id", feature_id},
                    {"role", role},
                    {"sign", sign},
                    {"source", source},
                    {"shift", shift}};
    }

    static PlantedFeature from_json(const Json& j) {
        PlantedFeature f;
        f.feature_id = j.at("feature_id").get<std::string>();
        f.role = j.at("role").get<std::string>();
        f.sign = j.value("sign", std::string());
        f.source = j.value("source", std::string());
        f.shift = j.value("shift", 0.0);
        return f;
    }
};

struct SyntheticConfig {
    std::size_t n_prompts = 600;
    std::size_t n_core = 10;
    std::size_t n_fingerprint = 5;  // one per AI source, at most the number of AI sources
    std::size_t n_noise = 15;
    double shift_scale = 1.0;       // 0 erases every planted signal
    double fingerprint_shift = 1.8; // sd units on the elevated source
    double noise_sd = 1.2;          // value noise before rounding to the 1..7 grid
    double core_shift_max = 2.6;    // planted core shifts interpolate max..min
    double core_shift_min = 0.9;
    std::uint64_t seed = 1;

    Json to_json() const {
        return Json{{"n_prompts", n_prompts},
                    {"n_core", n_core},
                    {"n_fingerprint", n_fingerprint},
                    {"n_noise", n_noise},
                    {"shift_scale", shift_scale},
                    {"fingerprint_shift", fingerprint_shift},
                    {"noise_sd", noise_sd},
                    {"core_shift_max", core_shift_max},
                    {"core_shift_min", core_shift_min},
                    {"seed", seed}};
    }

    static SyntheticConfig from_json(const Json& j) {
        SyntheticConfig c;
        c.n_prompts = j.value("n_prompts", c.n_prompts);
        c.n_core = j.value("n_core", c.n_core);
        c.n_fingerprint = j.value("n_fingerprint", c.n_fingerprint);
        c.n_noise = j.value("n_noise", c.n_noise);
        c.shift_scale = j.value("shift_scale", c.shift_scale);
        c.fingerprint_shift = j.value("fingerprint_shift", c.fingerprint_shift);
        c.noise_sd = j.value("noise_sd", c.noise_sd);
        c.core_shift_max = j.value("core_shift_max", c.core_shift_max);
        c.core_shift_min = j.value("core_shift_min", c.core_shift_min);
        c.seed = j.value("seed", c.seed);
        return c;
    }
};

struct SyntheticData {
    corpus::Corpus corpus;
    taxonomy::Taxonomy taxonomy;
    std::vector<encoding::AssignmentRecord> assignments;
    std::vector<PlantedFeature> truth;  // one entry per feature, taxonomy order
    SyntheticConfig config;
};

namespace detail {

inline std::string zero_pad(std::size_t v, std::size_t width) {
    std::string s = std::to_string(v);
    return s.size() >= width ? s : std::string(width - s.size(), '0') + s;
}

/// Deterministic word stream: short sentences of synthetic vocabulary tokens,
/// a paragraph break every few sentences.
inline std::string synthetic_text(Rng& rng, std::size_t n_words) {
    std::string out;
    out.reserve(n_words * 6);
    std::size_t sentence_left = 8 + rng.bounded(9);
    std::size_t sentences_in_par = 0;
    for (std::size_t w = 0; w < n_words; ++w) {
        if (!out.empty()) out += ' ';
        out += 'w';
        out += zero_pad(rng.bounded(400), 3);
        if (--sentence_left == 0 && w + 1 < n_words) {
            out += '.';
            sentence_left = 8 + rng.bounded(9);
            if (++sentences_in_par == 4) {
                out += "\n\n";
                sentences_in_par = 0;
            }
        }
    }
    out += '.';
    return out;
}

}  // namespace detail

/// Planted-signal corpus: `n_prompts` writing prompts, one story per known
/// source, and scale features (options 1..7) with three planted roles. Core
/// features shift the human mean against all AI sources with alternating
/// direction and decaying magnitude; fingerprint features elevate exactly one
/// AI source; noise features carry no signal. Everything is a pure function of
/// the config.
inline SyntheticData make_synthetic(const SyntheticConfig& cfg = SyntheticConfig{}) {
    if (cfg.n_prompts < 3) throw ConfigError("synthetic corpus needs at least 3 prompts");
    if (cfg.n_core + cfg.n_fingerprint + cfg.n_noise == 0)
        throw ConfigError("synthetic taxonomy needs at least one feature");
    if (!(cfg.noise_sd > 0.0)) throw ConfigError("noise_sd must be positive");
    const auto& sources = corpus::known_sources();
    std::vector<std::string> ai_sources;
    for (const auto& s : sources)
        if (s != "human") ai_sources.push_back(s);
    std::sort(ai_sources.begin(), ai_sources.end());
    if (cfg.n_fingerprint > ai_sources.size())
        throw ConfigError("n_fingerprint exceeds the number of AI sources");

    SyntheticData data;
    data.config = cfg;

    // Taxonomy: scale features spread round-robin over the ten dimensions.
    const auto& dims = induction::dimensions();
    const std::size_t n_features = cfg.n_core + cfg.n_fingerprint + cfg.n_noise;
    const std::size_t id_width = n_features > 99 ? 3 : 2;
    std::vector<std::string> options;
    for (int v = 1; v <= 7; ++v) options.push_back(std::to_string(v));
    data.taxonomy.version = "synthetic-1";
    for (std::size_t j = 0; j < n_features; ++j) {
        taxonomy::FeatureDef f;
        f.feature_id = "feat_" + detail::zero_pad(j + 1, id_width);
        f.name = "Synthetic axis " + std::to_string(j + 1);
        f.question = "Where does the story sit on synthetic axis " + std::to_string(j + 1) + "?";
        f.description = "Generated scale feature used by the fixture corpus.";
        f.dimension = dims[j % dims.size()];
        f.response_type = taxonomy::ResponseType::scale;
        f.options = options;
        f.style_dependence = taxonomy::StyleDependence::low;
        f.style_flagged = false;
        data.taxonomy.features.push_back(std::move(f));

        PlantedFeature t;
        t.feature_id = data.taxonomy.features.back().feature_id;
        if (j < cfg.n_core) {
            // Two shift tiers: a well-separated leading pack and a weak tail, so
            // recovery has a sharp expected boundary instead of a smooth ramp.
            static constexpr double canonical[10] = {2.6, 2.45, 2.3, 2.15, 2.0,
                                                     1.85, 1.7, 1.55, 1.1, 0.9};
            t.role = "core";
            t.sign = j % 2 == 0 ? "human_leaning" : "ai_leaning";
            if (cfg.n_core == 10 && cfg.core_shift_max == 2.6 && cfg.core_shift_min == 0.9) {
                t.shift = canonical[j] * cfg.shift_scale;
            } else {
                double frac =
                    cfg.n_core > 1 ? static_cast<double>(j) / static_cast<double>(cfg.n_core - 1) : 0.0;
                t.shift =
                    (cfg.core_shift_max - (cfg.core_shift_max - cfg.core_shift_min) * frac) * cfg.shift_scale;
            }
        } else if (j < cfg.n_core + cfg.n_fingerprint) {
            t.role = "fingerprint";
            t.source = ai_sources[j - cfg.n_core];
            t.shift = cfg.fingerprint_shift * cfg.shift_scale;
        } else {
            t.role = "noise";
        }
        data.truth.push_back(std::move(t));
    }

    // Stories and assignments. Per-story RNG streams keep values and texts
    // independent of each other and of the corpus size.
    const std::size_t prompt_width = cfg.n_prompts > 9999 ? 5 : 4;
    std::size_t story_index = 0;
    for (std::size_t p = 0; p < cfg.n_prompts; ++p) {
        const std::string prompt_id = "p" + detail::zero_pad(p, prompt_width);
        corpus::PromptGroup group;
        group.prompt_id = prompt_id;
        for (const auto& source : sources) {
            corpus::StoryRecord st;
            st.story_id = prompt_id + "_" + source;
            st.prompt_id = prompt_id;
            st.source = source;

            Rng values_rng(derive_seed(cfg.seed, 2 * story_index));
            encoding::AssignmentRecord rec;
            rec.story_id = st.story_id;
            for (std::size_t j = 0; j < n_features; ++j) {
                const auto& t = data.truth[j];
                double mu = 4.0;
                if (t.role == "core") {
                    double direction = (source == "human") == (t.sign == "human_leaning") ? 1.0 : -1.0;
                    mu += 0.5 * direction * t.shift * cfg.noise_sd;
                } else if (t.role == "fingerprint" && source == t.source) {
                    mu += t.shift * cfg.noise_sd;
                }
                double raw = mu + cfg.noise_sd * values_rng.normal();
                int v = static_cast<int>(std::lround(std::clamp(raw, 1.0, 7.0)));
                rec.values[data.taxonomy.features[j].feature_id] = std::to_string(v);
            }
            data.assignments.push_back(std::move(rec));

            Rng text_rng(derive_seed(cfg.seed, 2 * story_index + 1));
            const double mean = source == "human" ? 160.0 : 135.0;
            const double sd = source == "human" ? 25.0 : 20.0;
            const auto n_words =
                static_cast<std::size_t>(std::max(40.0, std::round(mean + sd * text_rng.normal())));
            st.text = detail::synthetic_text(text_rng, n_words);
            st.word_count = static_cast<std::int64_t>(count_words(*st.text));

            group.story_indices.push_back(data.corpus.stories.size());
            data.corpus.stories.push_back(std::move(st));
            ++story_index;
        }
        data.corpus.prompts.push_back(std::move(group));
    }
    return data;
}

/// Write the four fixture files under `dir` and return their paths in a fixed
/// order: corpus.jsonl, taxonomy.json, assignments.jsonl, truth.json.
inline std::vector<std::filesystem::path> write_synthetic(const std::filesystem::path& dir,
                                                          const SyntheticData& data) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    written.push_back(dir / "corpus.jsonl");
    corpus::save_corpus(written.back(), data.corpus);
    written.push_back(dir / "taxonomy.json");
    save_json(written.back(), taxonomy::to_json(data.taxonomy));
    written.push_back(dir / "assignments.jsonl");
    encoding::save_assignments(written.back(), data.assignments);
    written.push_back(dir / "truth.json");
    Json truth = Json::array();
    for (const auto& t : data.truth) truth.push_back(t.to_json());
    save_json(written.back(), Json{{"config", data.config.to_json()}, {"features", truth}});
    return written;
}

// ---------------------------------------------------------------------------
// Feature-matrix replay input
// ---------------------------------------------------------------------------

/// Read a feature matrix exported by encoding::export_csv (or any CSV with a
/// story_id column followed by numeric columns). Returns row ids and values.
inline std::pair<std::vector<std::string>, Matrix> load_features_csv(const std::filesystem::path& path) {
    const std::string body = read_file(path);
    std::vector<std::string> ids;
    std::vector<std::vector<double>> rows;
    std::size_t n_cols = 0;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < body.size()) {
        std::size_t end = body.find('\n', pos);
        if (end == std::string::npos) end = body.size();
        std::string_view line(body.data() + pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.empty()) continue;
        if (line_no == 1) {
            n_cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
            if (n_cols == 0) throw ParseError("features CSV has no value columns");
            continue;
        }
        std::vector<double> vals;
        vals.reserve(n_cols);
        std::size_t field_start = 0;
        std::string id;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i != line.size() && line[i] != ',') continue;
            std::string_view field = line.substr(field_start, i - field_start);
            if (field_start == 0) {
                id = std::string(field);
            } else {
                std::string buf(field);
                char* parsed_end = nullptr;
                double v = std::strtod(buf.c_str(), &parsed_end);
                if (parsed_end == buf.c_str() || *parsed_end != '\0')
                    throw ParseError("features CSV line " + std::to_string(line_no) +
                                     ": non-numeric value '" + buf + "'");
                vals.push_back(v);
            }
            field_start = i + 1;
        }
        if (vals.size() != n_cols)
            throw ParseError("features CSV line " + std::to_string(line_no) + ": expected " +
                             std::to_string(n_cols) + " values, found " + std::to_string(vals.size()));
        ids.push_back(std::move(id));
        rows.push_back(std::move(vals));
    }
    if (ids.empty()) throw ParseError("features CSV has no data rows");
    Matrix m(rows.size(), n_cols);
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    return {std::move(ids), std::move(m)};
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct StageToggles {
    bool encode = true;
    bool train = true;
    bool shap = true;
    bool roles = true;
    bool geometry = true;
    bool rarity = true;
    bool audit = true;
    bool length = true;
    bool baselines = true;
    bool induction = false;  // mock-provider annotation replay; opt in

    Json to_json() const {
        return Json{{"encode", encode},   {"train", train},         {"shap", shap},
                    {"roles", roles},     {"geometry", geometry},   {"rarity", rarity},
                    {"audit", audit},     {"length", length},       {"baselines", baselines},
                    {"induction", induction}};
    }

    static StageToggles from_json(const Json& j) {
        StageToggles t;
        t.encode = j.value("encode", t.encode);
        t.train = j.value("train", t.train);
        t.shap = j.value("shap", t.shap);
        t.roles = j.value("roles", t.roles);
        t.geometry = j.value("geometry", t.geometry);
        t.rarity = j.value("rarity", t.rarity);
        t.audit = j.value("audit", t.audit);
        t.length = j.value("length", t.length);
        t.baselines = j.value("baselines", t.baselines);
        t.induction = j.value("induction", t.induction);
        return t;
    }
};

namespace detail {

inline Json thresholds_to_json(const attribution::RoleThresholds& t) {
    return Json{{"stab_min", t.stab_min},
                {"top25_min", t.top25_min},
                {"gap_min", t.gap_min},
                {"ai_spread_max", t.ai_spread_max},
                {"p_max", t.p_max}};
}

inline attribution::RoleThresholds thresholds_from_json(const Json& j) {
    attribution::RoleThresholds t;
    t.stab_min = j.value("stab_min", t.stab_min);
    t.top25_min = j.value("top25_min", t.top25_min);
    t.gap_min = j.value("gap_min", t.gap_min);
    t.ai_spread_max = j.value("ai_spread_max", t.ai_spread_max);
    t.p_max = j.value("p_max", t.p_max);
    return t;
}

inline Json fingerprint_thresholds_to_json(const attribution::FingerprintThresholds& t) {
    return Json{{"uniqueness_min", t.uniqueness_min}, {"effect_min", t.effect_min}};
}

inline attribution::FingerprintThresholds fingerprint_thresholds_from_json(const Json& j) {
    attribution::FingerprintThresholds t;
    t.uniqueness_min = j.value("uniqueness_min", t.uniqueness_min);
    t.effect_min = j.value("effect_min", t.effect_min);
    return t;
}

inline Json audit_config_to_json(const audit::AuditConfig& c) {
    return Json{{"exact_n", c.exact_n},
                {"near_n", c.near_n},
                {"coverage_min", c.coverage_min},
                {"distinct_min", c.distinct_min},
                {"span_min_tokens", c.span_min_tokens},
                {"control_pairs", c.control_pairs},
                {"control_quantile", c.control_quantile},
                {"seed", c.seed}};
}

inline audit::AuditConfig audit_config_from_json(const Json& j) {
    audit::AuditConfig c;
    c.exact_n = j.value("exact_n", c.exact_n);
    c.near_n = j.value("near_n", c.near_n);
    c.coverage_min = j.value("coverage_min", c.coverage_min);
    c.distinct_min = j.value("distinct_min", c.distinct_min);
    c.span_min_tokens = j.value("span_min_tokens", c.span_min_tokens);
    c.control_pairs = j.value("control_pairs", c.control_pairs);
    c.control_quantile = j.value("control_quantile", c.control_quantile);
    c.seed = j.value("seed", c.seed);
    return c;
}

}  // namespace detail

/// Declarative configuration for `run`. Paths must exist when the stage that
/// reads them starts; every seed that influences an output is recorded here
/// and echoed into the stage reports.
struct RunConfig {
    std::filesystem::path corpus_path;
    std::filesystem::path taxonomy_path;
    std::filesystem::path assignments_path;
    std::filesystem::path out_dir;
    std::filesystem::path roles_path;  // prior roles.json; required by the core_* variants

    taxonomy::Variant variant = taxonomy::Variant::all;
    std::string task = "binary";  // "binary" (human vs AI) | "multiclass" (per source)

    // Detection model. The objective and class count follow `task`.
    boosting::TrainConfig train = binary_train_defaults();
    // Lighter retrain configs for the bootstrap loop and the fingerprint model.
    boosting::TrainConfig bootstrap_train = bootstrap_train_defaults();
    boosting::TrainConfig fingerprint_train = fingerprint_train_defaults();

    double train_frac = 0.70;
    double val_frac = 0.15;
    double test_frac = 0.15;

    std::uint64_t split_seed = 1;
    std::uint64_t roles_seed = 17;
    std::uint64_t length_seed = 9;
    std::uint64_t provider_seed = 101;

    std::size_t bootstrap_B = 50;
    std::size_t null_permutations = 20;
    attribution::RoleThresholds role_thresholds{};
    attribution::FingerprintThresholds fingerprint_thresholds{};

    geometry::RarityConfig rarity{};
    audit::AuditConfig audit{};

    std::size_t tfidf_k = 5000;
    std::size_t shap_row_cap = 2000;

    std::string provider = "mock";  // the only provider this build can run
    std::size_t induce_story_cap = 48;
    std::size_t induce_runs = 2;

    int threads = 1;
    StageToggles stages;

    static boosting::TrainConfig binary_train_defaults() {
        boosting::TrainConfig c;  // n_estimators 420, depth 8, lambda 2.0
        c.scale_pos_weight = 5.0;
        c.objective = boosting::Objective::binary_logistic;
        c.seed = 7;
        return c;
    }

    static boosting::TrainConfig bootstrap_train_defaults() {
        boosting::TrainConfig c;
        c.n_estimators = 60;
        c.max_depth = 4;
        c.lambda = 1.0;
        c.learning_rate = 0.3;
        c.scale_pos_weight = 5.0;
        c.objective = boosting::Objective::binary_logistic;
        return c;
    }

    static boosting::TrainConfig fingerprint_train_defaults() {
        boosting::TrainConfig c;
        c.n_estimators = 150;
        c.max_depth = 5;
        c.lambda = 1.0;
        c.learning_rate = 0.3;
        c.objective = boosting::Objective::multiclass_softmax;
        return c;
    }

    Json to_json() const {
        return Json{{"corpus", corpus_path.string()},
                    {"taxonomy", taxonomy_path.string()},
                    {"assignments", assignments_path.string()},
                    {"out", out_dir.string()},
                    {"roles_path", roles_path.string()},
                    {"variant", taxonomy::to_string(variant)},
                    {"task", task},
                    {"train", train.to_json()},
                    {"bootstrap_train", bootstrap_train.to_json()},
                    {"fingerprint_train", fingerprint_train.to_json()},
                    {"train_frac", train_frac},
                    {"val_frac", val_frac},
                    {"test_frac", test_frac},
                    {"split_seed", split_seed},
                    {"roles_seed", roles_seed},
                    {"length_seed", length_seed},
                    {"provider_seed", provider_seed},
                    {"bootstrap_B", bootstrap_B},
                    {"null_permutations", null_permutations},
                    {"role_thresholds", detail::thresholds_to_json(role_thresholds)},
                    {"fingerprint_thresholds", detail::fingerprint_thresholds_to_json(fingerprint_thresholds)},
                    {"rarity_k", rarity.k},
                    {"audit", detail::audit_config_to_json(audit)},
                    {"tfidf_k", tfidf_k},
                    {"shap_row_cap", shap_row_cap},
                    {"provider", provider},
                    {"induce_story_cap", induce_story_cap},
                    {"induce_runs", induce_runs},
                    {"threads", threads},
                    {"stages", stages.to_json()}};
    }

    static RunConfig from_json(const Json& j) {
        RunConfig c;
        c.corpus_path = j.value("corpus", std::string());
        c.taxonomy_path = j.value("taxonomy", std::string());
        c.assignments_path = j.value("assignments", std::string());
        c.out_dir = j.value("out", std::string());
        c.roles_path = j.value("roles_path", std::string());
        c.variant = taxonomy::parse_variant(j.value("variant", std::string("all")));
        c.task = j.value("task", c.task);
        if (j.contains("train")) c.train = boosting::TrainConfig::from_json(j.at("train"));
        if (j.contains("bootstrap_train"))
            c.bootstrap_train = boosting::TrainConfig::from_json(j.at("bootstrap_train"));
        if (j.contains("fingerprint_train"))
            c.fingerprint_train = boosting::TrainConfig::from_json(j.at("fingerprint_train"));
        c.train_frac = j.value("train_frac", c.train_frac);
        c.val_frac = j.value("val_frac", c.val_frac);
        c.test_frac = j.value("test_frac", c.test_frac);
        c.split_seed = j.value("split_seed", c.split_seed);
        c.roles_seed = j.value("roles_seed", c.roles_seed);
        c.length_seed = j.value("length_seed", c.length_seed);
        c.provider_seed = j.value("provider_seed", c.provider_seed);
        c.bootstrap_B = j.value("bootstrap_B", c.bootstrap_B);
        c.null_permutations = j.value("null_permutations", c.null_permutations);
        if (j.contains("role_thresholds"))
            c.role_thresholds = detail::thresholds_from_json(j.at("role_thresholds"));
        if (j.contains("fingerprint_thresholds"))
            c.fingerprint_thresholds = detail::fingerprint_thresholds_from_json(j.at("fingerprint_thresholds"));
        c.rarity.k = j.value("rarity_k", c.rarity.k);
        if (j.contains("audit")) c.audit = detail::audit_config_from_json(j.at("audit"));
        c.tfidf_k = j.value("tfidf_k", c.tfidf_k);
        c.shap_row_cap = j.value("shap_row_cap", c.shap_row_cap);
        c.provider = j.value("provider", c.provider);
        c.induce_story_cap = j.value("induce_story_cap", c.induce_story_cap);
        c.induce_runs = j.value("induce_runs", c.induce_runs);
        c.threads = j.value("threads", c.threads);
        if (j.contains("stages")) c.stages = StageToggles::from_json(j.at("stages"));
        return c;
    }
};

struct RunResult {
    Json manifest;
    std::filesystem::path manifest_path;
    std::vector<std::string> stage_order;
};

// ---------------------------------------------------------------------------
// Orchestrator
// ---------------------------------------------------------------------------

namespace detail {

/// Records one stage's outputs as relative path -> SHA-256 of the file bytes.
class StageWriter {
public:
    StageWriter(Json& outputs, std::filesystem::path out_dir)
        : outputs_(&outputs), out_dir_(std::move(out_dir)) {}

    void text(const std::string& rel, std::string_view content) {
        write_file(out_dir_ / rel, content);
        (*outputs_)[rel] = sha256_hex(content);
    }

    void json(const std::string& rel, const Json& j) { text(rel, j.dump(2) + "\n"); }

    /// Hash a file some library call already wrote under the output directory.
    void existing(const std::string& rel) { (*outputs_)[rel] = sha256_hex(read_file(out_dir_ / rel)); }

private:
    Json* outputs_;
    std::filesystem::path out_dir_;
};

inline void require_file(const std::filesystem::path& p, const std::string& what) {
    if (p.empty()) throw ConfigError(what + " path is not set");
    if (!std::filesystem::exists(p)) throw ConfigError(what + " path does not exist: " + p.string());
}

inline int label_of(const std::string& source, const std::string& task,
                    const std::vector<std::string>& class_names) {
    if (task == "binary") return source == "human" ? 1 : 0;
    auto it = std::lower_bound(class_names.begin(), class_names.end(), source);
    if (it == class_names.end() || *it != source)
        throw ValidationError("source '" + source + "' missing from class list");
    return static_cast<int>(it - class_names.begin());
}

inline const char* part_name(corpus::SplitSpec::Part p) {
    switch (p) {
        case corpus::SplitSpec::Part::train: return "train";
        case corpus::SplitSpec::Part::val: return "val";
        case corpus::SplitSpec::Part::test: return "test";
    }
    return "?";
}

/// Everything later stages share, built up as stages run.
struct RunContext {
    corpus::Corpus corpus;
    corpus::SplitSpec split;
    std::map<std::string, corpus::SplitSpec::Part> part_of;

    taxonomy::Taxonomy variant_tax;
    encoding::ColumnMap map;
    encoding::EncodedMatrix enc;

    // Aligned with enc.rows.
    std::vector<std::string> sources;
    std::vector<std::string> prompts;
    std::vector<corpus::SplitSpec::Part> parts;
    std::vector<int> y;
    std::vector<std::size_t> fit_rows;   // train + val
    std::vector<std::size_t> test_rows;

    std::vector<std::string> class_names;  // sorted distinct sources present
    boosting::TreeEnsemble model;
    bool model_ready = false;
};

inline Json classification_json(const metrics::ClassificationReport& rep) { return rep.to_json(); }

}  // namespace detail

/// Execute the configured stages in dependency order. Every file written lands
/// under `config.out_dir` and is listed in manifest.json with its SHA-256. On
/// a stage failure the manifest (with all completed stages and the failure
/// note) is saved before the typed error propagates to the caller.
inline RunResult run(const RunConfig& cfg) {
    // Fail before creating any output when the configuration is unusable.
    if (cfg.task != "binary" && cfg.task != "multiclass")
        throw ConfigError("task must be 'binary' or 'multiclass', got '" + cfg.task + "'");
    if (cfg.out_dir.empty()) throw ConfigError("output directory is not set");
    detail::require_file(cfg.corpus_path, "corpus");
    const bool needs_encoding = cfg.stages.encode || cfg.stages.train || cfg.stages.shap ||
                                cfg.stages.roles || cfg.stages.geometry || cfg.stages.rarity;
    if (needs_encoding && !cfg.stages.encode)
        throw ConfigError("train/shap/roles/geometry/rarity stages require the encode stage");
    if (cfg.stages.shap && !cfg.stages.train) throw ConfigError("shap stage requires the train stage");
    if (needs_encoding) {
        detail::require_file(cfg.taxonomy_path, "taxonomy");
        detail::require_file(cfg.assignments_path, "assignments");
    }
    if (cfg.stages.induction) {
        detail::require_file(cfg.taxonomy_path, "taxonomy");
        if (cfg.provider != "mock")
            throw ConfigError("provider '" + cfg.provider +
                              "' is not available in this build; only 'mock' runs offline");
    }
    const bool needs_roles_file = cfg.variant == taxonomy::Variant::core_only ||
                                  cfg.variant == taxonomy::Variant::core_plus_fingerprint;
    if (needs_roles_file) detail::require_file(cfg.roles_path, "roles report");

    std::filesystem::create_directories(cfg.out_dir);
    const int threads = cfg.threads;

    RunResult result;
    result.manifest_path = cfg.out_dir / "manifest.json";
    result.manifest = Json{{"schema", "storyscope.run_manifest.v1"},
                           {"config", cfg.to_json()},
                           {"stages", Json::object()},
                           {"stage_order", Json::array()},
                           {"status", "running"}};
    auto save_manifest = [&] { save_json(result.manifest_path, result.manifest); };

    detail::RunContext ctx;

    auto stage = [&](const std::string& name, bool enabled, auto&& body) {
        if (!enabled) return;
        Json outputs = Json::object();
        detail::StageWriter w(outputs, cfg.out_dir);
        try {
            body(w);
        } catch (const std::exception& e) {
            result.manifest["status"] = "failed";
            result.manifest["failed_stage"] = name;
            result.manifest["error"] = e.what();
            save_manifest();
            throw;
        }
        result.manifest["stages"][name] = Json{{"outputs", std::move(outputs)}};
        result.stage_order.push_back(name);
        result.manifest["stage_order"].push_back(name);
        save_manifest();
    };

    // ---- ingest ------------------------------------------------------------
    stage("ingest", true, [&](detail::StageWriter& w) {
        ctx.corpus = corpus::load_corpus(cfg.corpus_path);
        std::map<std::string, std::size_t> counts;
        std::size_t missing_text = 0;
        for (const auto& st : ctx.corpus.stories) {
            ++counts[st.source];
            if (!st.text.has_value()) ++missing_text;
        }
        Json per_source = Json::object();
        for (const auto& [src, n] : counts) per_source[src] = n;
        w.json("ingest_report.json",
               Json{{"n_stories", ctx.corpus.stories.size()},
                    {"n_prompts", ctx.corpus.prompts.size()},
                    {"per_source", per_source},
                    {"n_missing_text", missing_text},
                    {"unknown_sources", ctx.corpus.report.unknown_sources},
                    {"incomplete_prompts", ctx.corpus.report.incomplete_prompts.size()}});
    });

    // ---- split ---------------------------------------------------------------
    stage("split", true, [&](detail::StageWriter& w) {
        ctx.split = corpus::split_prompts(ctx.corpus, cfg.train_frac, cfg.val_frac, cfg.test_frac,
                                          cfg.split_seed);
        ctx.part_of = ctx.split.index();
        Json j = ctx.split.to_json();
        j["counts"] = Json{{"train", ctx.split.train.size()},
                           {"val", ctx.split.val.size()},
                           {"test", ctx.split.test.size()}};
        w.json("splits.json", j);
    });

    // ---- encode --------------------------------------------------------------
    stage("encode", cfg.stages.encode, [&](detail::StageWriter& w) {
        auto tax = taxonomy::load_taxonomy(cfg.taxonomy_path);
        auto report = taxonomy::validate_taxonomy(tax);
        if (!report.valid())
            throw ValidationError("taxonomy invalid: " + report.violations.front());
        std::optional<taxonomy::RoleSets> role_sets;
        if (needs_roles_file) {
            auto prior = attribution::RoleReport::from_json(load_json(cfg.roles_path));
            role_sets = attribution::role_sets(prior);
        }
        ctx.variant_tax = taxonomy::select_variant(tax, cfg.variant, role_sets ? &*role_sets : nullptr);
        if (ctx.variant_tax.features.empty())
            throw ConfigError("variant '" + taxonomy::to_string(cfg.variant) + "' selects no features");
        ctx.map = encoding::build_column_map(ctx.variant_tax);

        auto assignments = encoding::load_assignments(cfg.assignments_path);
        std::map<std::string, const corpus::StoryRecord*> story_of;
        for (const auto& st : ctx.corpus.stories) story_of[st.story_id] = &st;
        std::vector<encoding::AssignmentRecord> rows;
        rows.reserve(assignments.size());
        std::size_t unknown_stories = 0;
        for (auto& rec : assignments) {
            if (story_of.count(rec.story_id) == 0) {
                ++unknown_stories;
                continue;
            }
            rows.push_back(std::move(rec));
        }
        if (rows.empty()) throw ValidationError("no assignment rows match the corpus");
        std::sort(rows.begin(), rows.end(),
                  [](const auto& a, const auto& b) { return a.story_id < b.story_id; });
        ctx.enc = encoding::encode(rows, ctx.map, threads);

        ctx.sources.reserve(ctx.enc.rows.size());
        for (std::size_t r = 0; r < ctx.enc.rows.size(); ++r) {
            const auto* st = story_of.at(ctx.enc.rows[r]);
            ctx.sources.push_back(st->source);
            ctx.prompts.push_back(st->prompt_id);
            ctx.parts.push_back(ctx.part_of.at(st->prompt_id));
            if (ctx.parts.back() == corpus::SplitSpec::Part::test)
                ctx.test_rows.push_back(r);
            else
                ctx.fit_rows.push_back(r);
        }
        std::set<std::string> names(ctx.sources.begin(), ctx.sources.end());
        ctx.class_names.assign(names.begin(), names.end());
        ctx.y.reserve(ctx.sources.size());
        for (const auto& s : ctx.sources)
            ctx.y.push_back(detail::label_of(s, cfg.task, ctx.class_names));

        encoding::export_csv(ctx.enc, cfg.out_dir / "features.csv", cfg.out_dir / "column_map.json");
        w.existing("features.csv");
        w.existing("column_map.json");
        w.json("encode_report.json",
               Json{{"variant", taxonomy::to_string(cfg.variant)},
                    {"n_rows", ctx.enc.matrix.rows},
                    {"n_features", ctx.map.n_features()},
                    {"n_columns", ctx.map.width()},
                    {"n_missing", ctx.enc.n_missing},
                    {"n_empty_multiselect", ctx.enc.n_empty_multiselect},
                    {"rows_without_story", unknown_stories}});
    });

    // ---- train + eval ----------------------------------------------------------
    stage("train", cfg.stages.train, [&](detail::StageWriter& w) {
        if (ctx.fit_rows.empty() || ctx.test_rows.empty())
            throw ValidationError("train stage needs non-empty fit and test parts");
        auto tcfg = cfg.train;
        if (cfg.task == "binary") {
            tcfg.objective = boosting::Objective::binary_logistic;
            tcfg.n_classes = 2;
        } else {
            tcfg.objective = boosting::Objective::multiclass_softmax;
            tcfg.n_classes = static_cast<int>(ctx.class_names.size());
        }
        Matrix x_fit = ctx.enc.matrix.gather_rows(ctx.fit_rows);
        std::vector<int> y_fit;
        y_fit.reserve(ctx.fit_rows.size());
        for (auto r : ctx.fit_rows) y_fit.push_back(ctx.y[r]);
        ctx.model = boosting::train(x_fit, y_fit, tcfg, threads, "column_map.json");
        ctx.model_ready = true;
        boosting::save_ensemble(cfg.out_dir / "model.json", ctx.model);
        w.existing("model.json");

        Matrix x_test = ctx.enc.matrix.gather_rows(ctx.test_rows);
        std::vector<int> y_test;
        y_test.reserve(ctx.test_rows.size());
        for (auto r : ctx.test_rows) y_test.push_back(ctx.y[r]);
        auto y_pred = boosting::predict_labels(ctx.model, x_test, threads);
        auto rep = metrics::classification_report(y_test, y_pred, tcfg.n_classes);

        Json eval{{"task", cfg.task},
                  {"n_fit", ctx.fit_rows.size()},
                  {"n_test", ctx.test_rows.size()},
                  {"train_config", tcfg.to_json()},
                  {"seeds", Json{{"split", cfg.split_seed}, {"train", tcfg.seed}}},
                  {"report", rep.to_json()}};
        std::vector<double> proba;
        if (cfg.task == "binary") {
            proba = boosting::predict_positive_proba(ctx.model, x_test, threads);
            eval["auprc"] = metrics::average_precision(proba, y_test);
            eval["class_names"] = Json::array({"ai", "human"});
        } else {
            eval["class_names"] = ctx.class_names;
        }
        w.json("eval_report.json", eval);

        std::string csv = "story_id,part,source,y_true,y_pred,score\n";
        char buf[64];
        for (std::size_t i = 0; i < ctx.test_rows.size(); ++i) {
            const auto r = ctx.test_rows[i];
            const double score = cfg.task == "binary" ? proba[i] : static_cast<double>(y_pred[i]);
            std::snprintf(buf, sizeof(buf), "%d,%d,%.17g\n", y_test[i], y_pred[i], score);
            csv += ctx.enc.rows[r] + "," + detail::part_name(ctx.parts[r]) + "," + ctx.sources[r] + "," + buf;
        }
        w.text("predictions.csv", csv);
    });

    // ---- shap ------------------------------------------------------------------
    stage("shap", cfg.stages.shap, [&](detail::StageWriter& w) {
        std::vector<std::size_t> rows = ctx.test_rows;
        if (rows.size() > cfg.shap_row_cap) rows.resize(cfg.shap_row_cap);
        Matrix x = ctx.enc.matrix.gather_rows(rows);
        auto shap = attribution::tree_shap(ctx.model, x, threads);
        auto agg = attribution::aggregate_shap(shap, ctx.map);

        std::vector<std::size_t> order(agg.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return agg[a].importance() > agg[b].importance(); });
        Json features = Json::array();
        for (auto i : order)
            features.push_back(Json{{"feature_id", agg[i].feature_id}, {"per_class", agg[i].per_class}});
        w.json("shap_summary.json", Json{{"n_rows_explained", rows.size()},
                                         {"n_outputs", shap.n_outputs},
                                         {"base", shap.base},
                                         {"features", features}});
    });

    // ---- roles -------------------------------------------------------------------
    stage("roles", cfg.stages.roles, [&](detail::StageWriter& w) {
        if (ctx.fit_rows.empty()) throw ValidationError("roles stage needs fit rows");
        Matrix x_fit = ctx.enc.matrix.gather_rows(ctx.fit_rows);
        std::vector<int> y_bin;
        std::vector<std::string> prompts_fit, sources_fit;
        y_bin.reserve(ctx.fit_rows.size());
        for (auto r : ctx.fit_rows) {
            y_bin.push_back(ctx.sources[r] == "human" ? 1 : 0);
            prompts_fit.push_back(ctx.prompts[r]);
            sources_fit.push_back(ctx.sources[r]);
        }
        auto bcfg = cfg.bootstrap_train;
        bcfg.objective = boosting::Objective::binary_logistic;
        bcfg.n_classes = 2;
        bcfg.seed = cfg.roles_seed;
        auto boot = attribution::bootstrap_roles(x_fit, y_bin, prompts_fit, ctx.map, bcfg, cfg.bootstrap_B,
                                           cfg.null_permutations, cfg.roles_seed, threads);
        auto gaps = attribution::per_source_gaps(x_fit, sources_fit, ctx.map);
        auto report = attribution::assign_roles(boot, gaps, cfg.role_thresholds);

        // Fingerprints come from a multiclass model over all sources.
        auto fcfg = cfg.fingerprint_train;
        fcfg.objective = boosting::Objective::multiclass_softmax;
        fcfg.n_classes = static_cast<int>(ctx.class_names.size());
        fcfg.seed = cfg.roles_seed;
        std::vector<int> y_multi;
        y_multi.reserve(ctx.fit_rows.size());
        for (auto r : ctx.fit_rows)
            y_multi.push_back(detail::label_of(ctx.sources[r], "multiclass", ctx.class_names));
        auto fp_model = boosting::train(x_fit, y_multi, fcfg, threads, "column_map.json");
        std::vector<std::size_t> shap_rows = ctx.test_rows.empty() ? ctx.fit_rows : ctx.test_rows;
        if (shap_rows.size() > cfg.shap_row_cap) shap_rows.resize(cfg.shap_row_cap);
        auto fp_shap = attribution::tree_shap(fp_model, ctx.enc.matrix.gather_rows(shap_rows), threads);
        auto per_class = attribution::aggregate_shap(fp_shap, ctx.map);
        auto fps = attribution::assign_fingerprints(per_class, ctx.class_names, x_fit, sources_fit, ctx.map,
                                              cfg.fingerprint_thresholds);
        attribution::attach_fingerprints(report, fps);

        w.json("roles.json", Json{{"seeds", Json{{"roles", cfg.roles_seed}, {"split", cfg.split_seed}}},
                                  {"bootstrap", Json{{"B", cfg.bootstrap_B},
                                                     {"n_permutations", cfg.null_permutations},
                                                     {"train", bcfg.to_json()}}},
                                  {"fingerprint_train", fcfg.to_json()},
                                  {"report", report.to_json()}});
        w.text("core_table.csv", attribution::core_table_csv(report));
    });

    // ---- geometry ------------------------------------------------------------------
    stage("geometry", cfg.stages.geometry, [&](detail::StageWriter& w) {
        auto proj = geometry::lda_project(ctx.enc.matrix, ctx.sources);
        w.text("lda_coords.csv", geometry::coords_csv(proj, ctx.enc.rows, ctx.sources));
        auto cent = geometry::centroid_stats(ctx.enc.matrix, ctx.sources, 10, threads);
        w.json("centroid_report.json", Json{{"seeds", Json{{"split", cfg.split_seed}}},
                                            {"report", cent.to_json()}});
        w.text("centroids.csv", geometry::centroid_csv(cent));
    });

    // ---- rarity --------------------------------------------------------------------
    stage("rarity", cfg.stages.rarity, [&](detail::StageWriter& w) {
        if (ctx.test_rows.empty()) throw ValidationError("rarity stage needs test rows");
        std::vector<std::size_t> human_test;
        for (auto r : ctx.test_rows)
            if (ctx.sources[r] == "human") human_test.push_back(r);
        if (human_test.empty()) throw ValidationError("rarity stage needs human test rows");
        Matrix reference = ctx.enc.matrix.gather_rows(human_test);
        Matrix query = ctx.enc.matrix.gather_rows(ctx.test_rows);
        auto rep = geometry::rarity(reference, query, cfg.rarity, threads);
        std::vector<std::string> ids, labels, prompts;
        for (auto r : ctx.test_rows) {
            ids.push_back(ctx.enc.rows[r]);
            labels.push_back(ctx.sources[r]);
            prompts.push_back(ctx.prompts[r]);
        }
        auto summary = geometry::rarity_summary(rep, labels, prompts);
        w.text("rarity.csv", geometry::rarity_csv(rep, ids, labels));
        w.json("rarity_summary.json", Json{{"k", cfg.rarity.k},
                                           {"seeds", Json{{"split", cfg.split_seed}}},
                                           {"summary", summary.to_json()}});
    });

    // ---- audit ---------------------------------------------------------------------
    stage("audit", cfg.stages.audit, [&](detail::StageWriter& w) {
        auto rep = audit::audit_corpus(ctx.corpus, ctx.split, cfg.audit, threads);
        w.json("audit_report.json", Json{{"seeds", Json{{"audit", cfg.audit.seed}}},
                                         {"report", rep.to_json()}});
    });

    // ---- length --------------------------------------------------------------------
    stage("length", cfg.stages.length, [&](detail::StageWriter& w) {
        auto match = audit::length_match(ctx.corpus, ctx.split, cfg.length_seed);
        std::vector<double> counts;
        std::vector<int> labels;
        std::vector<corpus::SplitSpec::Part> parts;
        for (const auto& st : ctx.corpus.stories) {
            auto it = ctx.part_of.find(st.prompt_id);
            if (it == ctx.part_of.end()) continue;
            counts.push_back(static_cast<double>(st.word_count));
            labels.push_back(st.source == "human" ? 1 : 0);
            parts.push_back(it->second);
        }
        auto base = audit::length_only_baseline(counts, labels, parts);
        w.json("length_report.json",
               Json{{"seeds", Json{{"length", cfg.length_seed}, {"split", cfg.split_seed}}},
                    {"match", match.to_json()},
                    {"baseline", Json{{"intercept", base.intercept},
                                      {"slope", base.slope},
                                      {"mean", base.mean},
                                      {"sd", base.sd},
                                      {"iterations", base.iterations},
                                      {"report", base.test_report.to_json()}}}});
    });

    // ---- baselines -----------------------------------------------------------------
    stage("baselines", cfg.stages.baselines, [&](detail::StageWriter& w) {
        std::vector<std::string> texts;
        std::vector<int> y_bin;
        std::vector<std::size_t> fit_idx, test_idx;
        for (const auto& st : ctx.corpus.stories) {
            if (!st.text.has_value()) continue;
            auto it = ctx.part_of.find(st.prompt_id);
            if (it == ctx.part_of.end()) continue;
            if (it->second == corpus::SplitSpec::Part::test)
                test_idx.push_back(texts.size());
            else
                fit_idx.push_back(texts.size());
            texts.push_back(*st.text);
            y_bin.push_back(st.source == "human" ? 1 : 0);
        }
        if (fit_idx.empty() || test_idx.empty())
            throw ValidationError("baselines need stories with text in fit and test parts");
        auto tcfg = cfg.train;
        tcfg.objective = boosting::Objective::binary_logistic;
        tcfg.n_classes = 2;
        std::vector<int> y_fit, y_test;
        for (auto i : fit_idx) y_fit.push_back(y_bin[i]);
        for (auto i : test_idx) y_test.push_back(y_bin[i]);

        auto evaluate = [&](const Matrix& m) {
            Matrix x_fit = m.gather_rows(fit_idx);
            Matrix x_test = m.gather_rows(test_idx);
            auto model = boosting::train(x_fit, y_fit, tcfg, threads);
            auto pred = boosting::predict_labels(model, x_test, threads);
            auto rep = metrics::classification_report(y_test, pred, 2);
            auto proba = boosting::predict_positive_proba(model, x_test, threads);
            return Json{{"report", rep.to_json()},
                        {"auprc", metrics::average_precision(proba, y_test)},
                        {"n_columns", m.cols}};
        };

        Matrix styl = baselines::stylometric_matrix(texts, threads);
        Json styl_json = evaluate(styl);

        std::vector<std::string> fit_texts;
        for (auto i : fit_idx) fit_texts.push_back(texts[i]);
        auto tfidf = baselines::tfidf_fit(fit_texts, cfg.tfidf_k);
        Matrix tf = baselines::tfidf_matrix(tfidf, texts, threads);
        Json tf_json = evaluate(tf);
        tf_json["k"] = cfg.tfidf_k;
        tf_json["vocabulary"] = tfidf.size();

        w.json("baseline_report.json", Json{{"seeds", Json{{"train", tcfg.seed}, {"split", cfg.split_seed}}},
                                            {"train_config", tcfg.to_json()},
                                            {"stylometry", styl_json},
                                            {"tfidf", tf_json}});
    });

    // ---- induction (mock provider replay) --------------------------------------------
    stage("induce", cfg.stages.induction, [&](detail::StageWriter& w) {
        auto tax = taxonomy::load_taxonomy(cfg.taxonomy_path);
        corpus::Corpus sub;
        for (const auto& prompt : ctx.corpus.prompts) {
            if (sub.stories.size() >= cfg.induce_story_cap) break;
            corpus::PromptGroup g;
            g.prompt_id = prompt.prompt_id;
            for (auto i : prompt.story_indices) {
                g.story_indices.push_back(sub.stories.size());
                sub.stories.push_back(ctx.corpus.stories[i]);
            }
            sub.prompts.push_back(std::move(g));
        }
        induction::MockConfig mock_cfg;
        mock_cfg.seed = cfg.provider_seed;
        induction::MockProvider provider(mock_cfg);
        induction::InductionOptions opts;
        opts.seed = cfg.provider_seed;
        std::set<std::string> source_names;
        for (const auto& st : sub.stories) source_names.insert(st.source);
        opts.forbidden_tokens.assign(source_names.begin(), source_names.end());

        auto templates = induction::extract_templates(sub, provider, opts);
        auto analyses = induction::comparative_analysis(sub, provider, opts);
        auto discovery = induction::discover_features(analyses.batches, provider, 3, opts);
        auto assignment = induction::assign_features(sub, tax, provider, opts);
        auto repeat = induction::repeatability(sub, tax, provider, cfg.induce_runs, opts);

        w.json("induction_report.json",
               Json{{"provider", cfg.provider},
                    {"seeds", Json{{"provider", cfg.provider_seed}}},
                    {"n_stories", sub.stories.size()},
                    {"templates", Json{{"count", templates.templates.size()},
                                       {"provider_calls", templates.provider_calls}}},
                    {"analysis", Json{{"batches", analyses.batches.size()},
                                      {"mean_prompts_per_batch", analyses.mean_prompts_per_batch}}},
                    {"discovery", Json{{"candidates", discovery.candidates.size()},
                                       {"runs_completed", discovery.runs_completed}}},
                    {"assignment", Json{{"coverage", assignment.coverage},
                                        {"story_coverage", assignment.story_coverage}}},
                    {"repeatability", repeat.to_json()}});
    });

    result.manifest["status"] = "complete";
    save_manifest();
    return result;
}

// ---------------------------------------------------------------------------
// Replay evaluation
// ---------------------------------------------------------------------------

/// Score an externally supplied feature matrix against corpus labels with a
/// saved model: the documented replay path. Row ids must resolve to corpus
/// stories; matrix width must match the ensemble.
inline Json replay_eval(const std::filesystem::path& features_csv,
                        const std::filesystem::path& corpus_path,
                        const std::filesystem::path& model_path, const std::string& task,
                        int threads = 1) {
    if (task != "binary" && task != "multiclass")
        throw ConfigError("task must be 'binary' or 'multiclass', got '" + task + "'");
    auto [ids, x] = load_features_csv(features_csv);
    auto c = corpus::load_corpus(corpus_path);
    auto model = boosting::load_ensemble(model_path);
    if (x.cols != static_cast<std::size_t>(model.n_columns))
        throw ValidationError("feature matrix width " + std::to_string(x.cols) +
                              " does not match model columns " + std::to_string(model.n_columns));

    std::map<std::string, const corpus::StoryRecord*> story_of;
    for (const auto& st : c.stories) story_of[st.story_id] = &st;
    std::vector<std::string> sources;
    sources.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = story_of.find(id);
        if (it == story_of.end()) throw ValidationError("story '" + id + "' missing from corpus");
        sources.push_back(it->second->source);
    }
    std::set<std::string> names(sources.begin(), sources.end());
    std::vector<std::string> class_names(names.begin(), names.end());
    const int n_classes = task == "binary" ? 2 : static_cast<int>(class_names.size());
    if (task == "multiclass" && n_classes != model.n_classes)
        throw ValidationError("corpus has " + std::to_string(n_classes) +
                              " classes but the model expects " + std::to_string(model.n_classes));

    std::vector<int> y_true;
    y_true.reserve(ids.size());
    for (const auto& s : sources) y_true.push_back(detail::label_of(s, task, class_names));
    auto y_pred = boosting::predict_labels(model, x, threads);
    auto rep = metrics::classification_report(y_true, y_pred, n_classes);

    Json out{{"task", task},
             {"n_rows", ids.size()},
             {"report", rep.to_json()},
             {"class_names", task == "binary" ? Json::array({"ai", "human"}) : Json(class_names)}};
    if (task == "binary") {
        auto proba = boosting::predict_positive_proba(model, x, threads);
        out["auprc"] = metrics::average_precision(proba, y_true);
    }
    return out;
}

}  // namespace storyscope::pipeline
