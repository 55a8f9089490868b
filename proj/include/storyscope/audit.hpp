#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "storyscope/corpus.hpp"
#include "storyscope/errors.hpp"
#include "storyscope/io.hpp"
#include "storyscope/metrics.hpp"
#include "storyscope/parallel.hpp"
#include "storyscope/rng.hpp"
#include "storyscope/text.hpp"

namespace storyscope::audit {

using TokenSeq = std::vector<std::string>;

struct AuditConfig {
    std::size_t exact_n = 13;
    std::size_t near_n = 8;
    double coverage_min = 0.05;
    std::size_t distinct_min = 4;
    std::size_t span_min_tokens = 30;
    std::size_t control_pairs = 200;
    double control_quantile = 0.95;
    std::uint64_t seed = 0;

    void validate() const {
        if (near_n < 1 || exact_n <= near_n)
            throw ConfigError("audit n-gram orders need exact_n > near_n >= 1");
        if (!(control_quantile > 0.0 && control_quantile <= 1.0))
            throw ConfigError("control_quantile must be in (0, 1]");
        if (control_pairs == 0) throw ConfigError("control_pairs must be at least 1");
    }
};

struct PairAudit {
    std::size_t shared_exact = 0;
    std::size_t distinct_shared_near = 0;
    double near_coverage = 0.0;
    std::size_t longest_common_span = 0;
    bool exact_flag = false;
    bool near_verbatim_flag = false;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Map both token sequences onto one shared integer vocabulary.
inline std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> to_ids(const TokenSeq& a,
                                                                                const TokenSeq& b) {
    std::unordered_map<std::string_view, std::uint32_t> vocab;
    auto encode = [&](const TokenSeq& t) {
        std::vector<std::uint32_t> ids;
        ids.reserve(t.size());
        for (const auto& tok : t) {
            auto [it, inserted] = vocab.emplace(tok, static_cast<std::uint32_t>(vocab.size()));
            ids.push_back(it->second);
        }
        return ids;
    };
    auto ia = encode(a);
    auto ib = encode(b);
    return {std::move(ia), std::move(ib)};
}

inline std::set<std::vector<std::uint32_t>> ngram_set(const std::vector<std::uint32_t>& ids,
                                                      std::size_t n) {
    std::set<std::vector<std::uint32_t>> out;
    if (ids.size() < n) return out;
    for (std::size_t i = 0; i + n <= ids.size(); ++i)
        out.insert(std::vector<std::uint32_t>(ids.begin() + static_cast<std::ptrdiff_t>(i),
                                              ids.begin() + static_cast<std::ptrdiff_t>(i + n)));
    return out;
}

inline std::size_t intersection_size(const std::set<std::vector<std::uint32_t>>& a,
                                     const std::set<std::vector<std::uint32_t>>& b) {
    const auto& small = a.size() <= b.size() ? a : b;
    const auto& large = a.size() <= b.size() ? b : a;
    std::size_t n = 0;
    for (const auto& g : small) n += large.count(g);
    return n;
}

/// Does a common run of exactly `len` tokens exist? Rolling hashes propose
/// candidates; every hash hit is verified against the actual tokens, so a
/// collision can never produce a wrong answer.
inline bool has_common_run(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b,
                           std::size_t len) {
    if (len == 0) return true;
    if (a.size() < len || b.size() < len) return false;
    constexpr std::uint64_t base = 1000003ULL;
    std::uint64_t top = 1;  // base^(len-1), wrapping arithmetic
    for (std::size_t i = 1; i < len; ++i) top *= base;

    std::unordered_multimap<std::uint64_t, std::size_t> windows;
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        h = h * base + a[i];
        if (i + 1 >= len) {
            windows.emplace(h, i + 1 - len);
            h -= top * a[i + 1 - len];
        }
    }
    h = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        h = h * base + b[i];
        if (i + 1 >= len) {
            const std::size_t start_b = i + 1 - len;
            auto [lo, hi] = windows.equal_range(h);
            for (auto it = lo; it != hi; ++it) {
                const std::size_t start_a = it->second;
                if (std::equal(a.begin() + static_cast<std::ptrdiff_t>(start_a),
                               a.begin() + static_cast<std::ptrdiff_t>(start_a + len),
                               b.begin() + static_cast<std::ptrdiff_t>(start_b)))
                    return true;
            }
            h -= top * b[start_b];
        }
    }
    return false;
}

/// Longest common substring length, binary search over the feasible run length.
inline std::size_t longest_common_run(const std::vector<std::uint32_t>& a,
                                      const std::vector<std::uint32_t>& b) {
    std::size_t lo = 0, hi = std::min(a.size(), b.size());
    while (lo < hi) {
        const std::size_t mid = lo + (hi - lo + 1) / 2;
        if (has_common_run(a, b, mid))
            lo = mid;
        else
            hi = mid - 1;
    }
    return lo;
}

inline std::string part_name(corpus::SplitSpec::Part p) {
    switch (p) {
        case corpus::SplitSpec::Part::train: return "train";
        case corpus::SplitSpec::Part::val: return "val";
        default: return "test";
    }
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw ValidationError("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Raw overlap statistics for one (AI, human) text pair, before any control
/// calibration. Coverage is normalized by the distinct near-n-grams of the
/// shorter text (ties resolved toward the smaller distinct count).
inline PairAudit pair_audit(const TokenSeq& a, const TokenSeq& b, const AuditConfig& cfg = {}) {
    cfg.validate();
    if (a.empty() || b.empty()) throw ValidationError("pair audit needs two non-empty token sequences");
    auto [ia, ib] = detail::to_ids(a, b);

    PairAudit out;
    const auto exact_a = detail::ngram_set(ia, cfg.exact_n);
    const auto exact_b = detail::ngram_set(ib, cfg.exact_n);
    out.shared_exact = detail::intersection_size(exact_a, exact_b);

    const auto near_a = detail::ngram_set(ia, cfg.near_n);
    const auto near_b = detail::ngram_set(ib, cfg.near_n);
    out.distinct_shared_near = detail::intersection_size(near_a, near_b);
    std::size_t denom = 0;
    if (a.size() < b.size())
        denom = near_a.size();
    else if (b.size() < a.size())
        denom = near_b.size();
    else
        denom = std::min(near_a.size(), near_b.size());
    out.near_coverage =
        denom == 0 ? 0.0 : static_cast<double>(out.distinct_shared_near) / static_cast<double>(denom);

    out.longest_common_span = detail::longest_common_run(ia, ib);
    return out;
}

struct ControlThresholds {
    double shared_exact = 0.0;
    double distinct_shared_near = 0.0;
    double near_coverage = 0.0;
    double longest_common_span = 0.0;
    std::size_t n_pairs = 0;
    std::uint64_t seed = 0;

    Json to_json() const {
        return Json{{"shared_exact", shared_exact},
                    {"distinct_shared_near", distinct_shared_near},
                    {"near_coverage", near_coverage},
                    {"longest_common_span", longest_common_span},
                    {"n_pairs", n_pairs},
                    {"seed", seed}};
    }
};

/// Thresholds = the control-quantile order statistic of each raw statistic over
/// seeded mismatched pairs: an AI story versus a human story from a different
/// prompt in the same split part.
inline ControlThresholds calibrate_controls(const corpus::Corpus& c, const corpus::SplitSpec& spec,
                                            corpus::SplitSpec::Part part, const std::string& model_source,
                                            const AuditConfig& cfg, int threads = 1) {
    cfg.validate();
    const auto rows = corpus::stories_in_part(c, spec, part);
    std::vector<std::size_t> ai_rows, human_rows;
    for (std::size_t i : rows) {
        const auto& st = c.stories[i];
        if (!st.text.has_value()) continue;
        if (st.source == model_source)
            ai_rows.push_back(i);
        else if (st.source == "human")
            human_rows.push_back(i);
    }
    std::size_t available = 0;
    for (std::size_t ai : ai_rows)
        for (std::size_t h : human_rows)
            if (c.stories[h].prompt_id != c.stories[ai].prompt_id) ++available;
    if (available < cfg.control_pairs)
        throw ValidationError("insufficient mismatched control pairs for " + model_source + "/" +
                              detail::part_name(part) + ": " + std::to_string(available) + " < " +
                              std::to_string(cfg.control_pairs));

    std::map<std::size_t, TokenSeq> tokens;
    for (std::size_t i : ai_rows) tokens[i] = tokenize_words(*c.stories[i].text);
    for (std::size_t i : human_rows) tokens[i] = tokenize_words(*c.stories[i].text);

    const std::uint64_t stream =
        detail::fnv1a(model_source + "|" + detail::part_name(part));
    Rng rng(derive_seed(cfg.seed, stream));
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(cfg.control_pairs);
    while (pairs.size() < cfg.control_pairs) {
        const std::size_t ai = ai_rows[rng.bounded(ai_rows.size())];
        std::vector<std::size_t> eligible;
        for (std::size_t h : human_rows)
            if (c.stories[h].prompt_id != c.stories[ai].prompt_id) eligible.push_back(h);
        if (eligible.empty()) continue;  // this AI story's prompt covers every human
        pairs.emplace_back(ai, eligible[rng.bounded(eligible.size())]);
    }

    std::vector<PairAudit> stats(pairs.size());
    parallel_for(0, pairs.size(), static_cast<unsigned>(threads), [&](std::size_t p) {
        stats[p] = pair_audit(tokens.at(pairs[p].first), tokens.at(pairs[p].second), cfg);
    });

    auto threshold = [&](auto getter) {
        std::vector<double> v(stats.size());
        for (std::size_t i = 0; i < stats.size(); ++i) v[i] = getter(stats[i]);
        std::sort(v.begin(), v.end());
        return metrics::quantile_nearest_rank(v, cfg.control_quantile);
    };
    ControlThresholds thr;
    thr.shared_exact = threshold([](const PairAudit& s) { return static_cast<double>(s.shared_exact); });
    thr.distinct_shared_near =
        threshold([](const PairAudit& s) { return static_cast<double>(s.distinct_shared_near); });
    thr.near_coverage = threshold([](const PairAudit& s) { return s.near_coverage; });
    thr.longest_common_span =
        threshold([](const PairAudit& s) { return static_cast<double>(s.longest_common_span); });
    thr.n_pairs = pairs.size();
    thr.seed = cfg.seed;
    return thr;
}

/// Flagging rules against fixed minima and the control thresholds ("beyond" is
/// strictly greater than the control order statistic).
inline void apply_flags(PairAudit& s, const AuditConfig& cfg, const ControlThresholds& thr) {
    s.exact_flag = s.shared_exact >= 1 &&
                   static_cast<double>(s.shared_exact) > thr.shared_exact;
    s.near_verbatim_flag =
        s.near_coverage >= cfg.coverage_min && s.near_coverage > thr.near_coverage &&
        s.distinct_shared_near >= cfg.distinct_min &&
        static_cast<double>(s.distinct_shared_near) > thr.distinct_shared_near &&
        s.longest_common_span >= cfg.span_min_tokens &&
        static_cast<double>(s.longest_common_span) > thr.longest_common_span;
}

struct MatchedAudit {
    std::string prompt_id;
    std::string ai_story_id;
    std::string human_story_id;
    std::string source;
    corpus::SplitSpec::Part part = corpus::SplitSpec::Part::train;
    PairAudit stats;
};

struct AuditReport {
    AuditConfig config;
    std::map<std::string, ControlThresholds> thresholds;  // "source|part"
    std::vector<MatchedAudit> audits;
    std::vector<std::string> ablated_prompts;  // sorted, distinct
    std::size_t n_prompts_audited = 0;
    std::size_t n_pairs_skipped = 0;  // matched pairs missing text

    std::size_t n_flagged_pairs() const {
        std::size_t n = 0;
        for (const auto& a : audits)
            if (a.stats.exact_flag || a.stats.near_verbatim_flag) ++n;
        return n;
    }

    Json to_json() const {
        Json thr = Json::object();
        for (const auto& [key, t] : thresholds) thr[key] = t.to_json();
        Json rows = Json::array();
        for (const auto& a : audits)
            rows.push_back(Json{{"prompt_id", a.prompt_id},
                                {"ai_story_id", a.ai_story_id},
                                {"human_story_id", a.human_story_id},
                                {"source", a.source},
                                {"part", detail::part_name(a.part)},
                                {"shared_exact", a.stats.shared_exact},
                                {"distinct_shared_near", a.stats.distinct_shared_near},
                                {"near_coverage", a.stats.near_coverage},
                                {"longest_common_span", a.stats.longest_common_span},
                                {"exact_flag", a.stats.exact_flag},
                                {"near_verbatim_flag", a.stats.near_verbatim_flag}});
        // per-model flag rates in the appendix layout
        std::map<std::string, std::array<std::size_t, 3>> per_model;  // pairs, exact, near
        for (const auto& a : audits) {
            auto& row = per_model[a.source];
            ++row[0];
            if (a.stats.exact_flag) ++row[1];
            if (a.stats.near_verbatim_flag) ++row[2];
        }
        Json rates = Json::array();
        for (const auto& [source, row] : per_model)
            rates.push_back(Json{{"source", source},
                                 {"pairs", row[0]},
                                 {"exact_flagged", row[1]},
                                 {"near_flagged", row[2]}});
        return Json{{"thresholds", thr},
                    {"pairs", rows},
                    {"rates", rates},
                    {"ablated_prompts", ablated_prompts},
                    {"n_prompts_audited", n_prompts_audited},
                    {"n_pairs_skipped", n_pairs_skipped},
                    {"n_flagged_pairs", n_flagged_pairs()}};
    }
};

/// Apply flags to matched audits and collect the prompts to ablate: one flagged
/// pair removes its whole prompt.
inline std::vector<std::string> flag_and_ablate(std::vector<MatchedAudit>& audits,
                                                const std::map<std::string, ControlThresholds>& thresholds,
                                                const AuditConfig& cfg) {
    std::set<std::string> ablated;
    for (auto& a : audits) {
        const std::string key = a.source + "|" + detail::part_name(a.part);
        const auto it = thresholds.find(key);
        if (it == thresholds.end())
            throw ValidationError("no control thresholds calibrated for " + key);
        apply_flags(a.stats, cfg, it->second);
        if (a.stats.exact_flag || a.stats.near_verbatim_flag) ablated.insert(a.prompt_id);
    }
    return {ablated.begin(), ablated.end()};
}

/// Full memorization audit: per (model, split part) controls, matched-pair
/// statistics, flags, and the prompt-level ablation list.
inline AuditReport audit_corpus(const corpus::Corpus& c, const corpus::SplitSpec& spec,
                                const AuditConfig& cfg, int threads = 1) {
    cfg.validate();
    AuditReport rep;
    rep.config = cfg;

    const auto part_of = spec.index();
    std::map<std::size_t, TokenSeq> tokens;
    std::set<std::string> audited_prompts;

    // matched pairs grouped per (source, part) so controls match the split
    std::map<std::string, std::vector<std::size_t>> audit_rows_by_key;
    for (const auto& prompt : c.prompts) {
        const auto part_it = part_of.find(prompt.prompt_id);
        if (part_it == part_of.end()) continue;
        std::optional<std::size_t> human_row;
        for (std::size_t i : prompt.story_indices)
            if (c.stories[i].source == "human") human_row = i;
        for (std::size_t i : prompt.story_indices) {
            const auto& st = c.stories[i];
            if (st.source == "human") continue;
            if (!human_row.has_value() || !st.text.has_value() ||
                !c.stories[*human_row].text.has_value()) {
                ++rep.n_pairs_skipped;
                continue;
            }
            MatchedAudit m;
            m.prompt_id = prompt.prompt_id;
            m.ai_story_id = st.story_id;
            m.human_story_id = c.stories[*human_row].story_id;
            m.source = st.source;
            m.part = part_it->second;
            rep.audits.push_back(std::move(m));
            const std::size_t idx = rep.audits.size() - 1;
            audit_rows_by_key[st.source + "|" + detail::part_name(part_it->second)].push_back(idx);
            audited_prompts.insert(prompt.prompt_id);
            if (tokens.count(i) == 0) tokens[i] = tokenize_words(*st.text);
            if (tokens.count(*human_row) == 0) tokens[*human_row] = tokenize_words(*c.stories[*human_row].text);
        }
    }
    rep.n_prompts_audited = audited_prompts.size();

    std::map<std::string, std::size_t> row_of_story;
    for (std::size_t i = 0; i < c.stories.size(); ++i) row_of_story[c.stories[i].story_id] = i;
    parallel_for(0, rep.audits.size(), static_cast<unsigned>(threads), [&](std::size_t i) {
        auto& m = rep.audits[i];
        m.stats = pair_audit(tokens.at(row_of_story.at(m.ai_story_id)),
                             tokens.at(row_of_story.at(m.human_story_id)), cfg);
    });

    for (const auto& [key, rows] : audit_rows_by_key) {
        const auto bar = key.find('|');
        const std::string source = key.substr(0, bar);
        const std::string part = key.substr(bar + 1);
        const auto p = part == "train"  ? corpus::SplitSpec::Part::train
                       : part == "val" ? corpus::SplitSpec::Part::val
                                        : corpus::SplitSpec::Part::test;
        rep.thresholds[key] = calibrate_controls(c, spec, p, source, cfg, threads);
    }
    rep.ablated_prompts = flag_and_ablate(rep.audits, rep.thresholds, cfg);
    return rep;
}

// ---------------------------------------------------------------------------
// Length-confound audit
// ---------------------------------------------------------------------------

struct LengthMatchBin {
    std::vector<std::string> human_ids;  // matched, sorted draws aside
    std::vector<std::string> ai_ids;
    bool human_downsampled = false;
};

struct LengthMatchReport {
    std::vector<double> boundaries;  // nine decile boundaries of human lengths
    std::vector<LengthMatchBin> bins;
    std::vector<std::string> human_ids;  // flattened matched subset
    std::vector<std::string> ai_ids;
    double human_median = 0.0;
    double ai_median = 0.0;
    std::uint64_t seed = 0;

    Json to_json() const {
        Json bj = Json::array();
        for (const auto& b : bins)
            bj.push_back(Json{{"human_ids", b.human_ids},
                              {"ai_ids", b.ai_ids},
                              {"human_downsampled", b.human_downsampled}});
        return Json{{"boundaries", boundaries}, {"bins", bj},
                    {"human_ids", human_ids},   {"ai_ids", ai_ids},
                    {"human_median", human_median}, {"ai_median", ai_median},
                    {"seed", seed}};
    }
};

namespace detail {

inline std::size_t decile_bin(double x, const std::vector<double>& boundaries) {
    std::size_t b = 0;
    while (b < boundaries.size() && x > boundaries[b]) ++b;
    return b;  // bin b holds boundaries[b-1] < x <= boundaries[b]
}

}  // namespace detail

/// Decile-stratified length matching on the test split: bins from human word
/// counts; per bin the AI side is sampled without replacement down to the human
/// count (or the human side down to the AI count when AI stories are scarce).
inline LengthMatchReport length_match(const corpus::Corpus& c, const corpus::SplitSpec& spec,
                                      std::uint64_t seed) {
    const auto rows = corpus::stories_in_part(c, spec, corpus::SplitSpec::Part::test);
    std::vector<std::size_t> human_rows, ai_rows;
    for (std::size_t i : rows)
        (c.stories[i].source == "human" ? human_rows : ai_rows).push_back(i);
    if (human_rows.size() < 10)
        throw ValidationError("length matching needs at least 10 human test stories, got " +
                              std::to_string(human_rows.size()));

    LengthMatchReport rep;
    rep.seed = seed;
    std::vector<double> human_counts;
    for (std::size_t i : human_rows) human_counts.push_back(static_cast<double>(c.stories[i].word_count));
    std::sort(human_counts.begin(), human_counts.end());
    for (int d = 1; d <= 9; ++d)
        rep.boundaries.push_back(metrics::quantile_nearest_rank(human_counts, d / 10.0));

    // canonical story_id order inside each bin keeps the draws reproducible
    auto sorted_by_id = [&](std::vector<std::size_t> v) {
        std::sort(v.begin(), v.end(),
                  [&](std::size_t a, std::size_t b) { return c.stories[a].story_id < c.stories[b].story_id; });
        return v;
    };
    std::vector<std::vector<std::size_t>> human_bins(10), ai_bins(10);
    for (std::size_t i : sorted_by_id(human_rows))
        human_bins[detail::decile_bin(static_cast<double>(c.stories[i].word_count), rep.boundaries)].push_back(i);
    for (std::size_t i : sorted_by_id(ai_rows))
        ai_bins[detail::decile_bin(static_cast<double>(c.stories[i].word_count), rep.boundaries)].push_back(i);

    std::vector<double> matched_human_counts, matched_ai_counts;
    for (std::size_t b = 0; b < 10; ++b) {
        LengthMatchBin bin;
        Rng rng(derive_seed(seed, b));
        const auto& humans = human_bins[b];
        const auto& ais = ai_bins[b];
        std::vector<std::size_t> picked_h, picked_a;
        if (ais.size() >= humans.size()) {
            picked_h = humans;
            for (std::size_t j : rng.sample_without_replacement(ais.size(), humans.size()))
                picked_a.push_back(ais[j]);
        } else {
            picked_a = ais;
            for (std::size_t j : rng.sample_without_replacement(humans.size(), ais.size()))
                picked_h.push_back(humans[j]);
            bin.human_downsampled = true;
        }
        for (std::size_t i : picked_h) {
            bin.human_ids.push_back(c.stories[i].story_id);
            matched_human_counts.push_back(static_cast<double>(c.stories[i].word_count));
        }
        for (std::size_t i : picked_a) {
            bin.ai_ids.push_back(c.stories[i].story_id);
            matched_ai_counts.push_back(static_cast<double>(c.stories[i].word_count));
        }
        rep.human_ids.insert(rep.human_ids.end(), bin.human_ids.begin(), bin.human_ids.end());
        rep.ai_ids.insert(rep.ai_ids.end(), bin.ai_ids.begin(), bin.ai_ids.end());
        rep.bins.push_back(std::move(bin));
    }
    if (matched_human_counts.empty() || matched_ai_counts.empty())
        throw ValidationError("length matching produced an empty subset");
    rep.human_median = detail::median(matched_human_counts);
    rep.ai_median = detail::median(matched_ai_counts);
    return rep;
}

// ---------------------------------------------------------------------------
// Length-only baseline
// ---------------------------------------------------------------------------

struct LengthBaselineResult {
    double intercept = 0.0;
    double slope = 0.0;  // on the standardized count
    double mean = 0.0;   // train+val standardization
    double sd = 1.0;
    std::size_t iterations = 0;
    metrics::ClassificationReport test_report;
};

/// Single-feature logistic regression on standardized word counts, fit by
/// Newton / IRLS until the log-loss change falls below 1e-8, evaluated on test.
inline LengthBaselineResult length_only_baseline(const std::vector<double>& word_counts,
                                                 const std::vector<int>& labels,
                                                 const std::vector<corpus::SplitSpec::Part>& parts,
                                                 std::size_t max_iter = 100) {
    const std::size_t n = word_counts.size();
    if (labels.size() != n || parts.size() != n)
        throw ValidationError("word counts, labels, and parts must align");
    std::vector<std::size_t> fit_rows, test_rows;
    for (std::size_t i = 0; i < n; ++i) {
        if (word_counts[i] <= 0.0)
            throw ValidationError("word counts must be positive, got " + std::to_string(word_counts[i]) +
                                  " at row " + std::to_string(i));
        if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be binary 0/1");
        (parts[i] == corpus::SplitSpec::Part::test ? test_rows : fit_rows).push_back(i);
    }
    if (fit_rows.empty() || test_rows.empty())
        throw ValidationError("length baseline needs both fit and test rows");
    bool has0 = false, has1 = false;
    for (std::size_t i : fit_rows) (labels[i] == 0 ? has0 : has1) = true;
    if (!has0 || !has1) throw ValidationError("length baseline needs both classes in train+val");

    LengthBaselineResult res;
    for (std::size_t i : fit_rows) res.mean += word_counts[i];
    res.mean /= static_cast<double>(fit_rows.size());
    double ss = 0.0;
    for (std::size_t i : fit_rows) ss += (word_counts[i] - res.mean) * (word_counts[i] - res.mean);
    res.sd = std::sqrt(ss / static_cast<double>(fit_rows.size()));
    if (res.sd == 0.0) res.sd = 1.0;  // constant counts degrade to an intercept-only model

    auto z = [&](std::size_t i) { return (word_counts[i] - res.mean) / res.sd; };
    auto log_loss = [&]() {
        double loss = 0.0;
        for (std::size_t i : fit_rows) {
            const double m = res.intercept + res.slope * z(i);
            // numerically stable log(1 + exp(.)) around the margin
            const double t = labels[i] == 1 ? -m : m;
            loss += t > 30.0 ? t : std::log1p(std::exp(t));
        }
        return loss / static_cast<double>(fit_rows.size());
    };

    double prev_loss = log_loss();
    bool converged = false;
    for (std::size_t it = 1; it <= max_iter; ++it) {
        double g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
        for (std::size_t i : fit_rows) {
            const double x = z(i);
            const double p = 1.0 / (1.0 + std::exp(-(res.intercept + res.slope * x)));
            const double r = static_cast<double>(labels[i]) - p;
            const double w = p * (1.0 - p);
            g0 += r;
            g1 += r * x;
            h00 += w;
            h01 += w * x;
            h11 += w * x * x;
        }
        const double det = h00 * h11 - h01 * h01;
        if (std::abs(det) < 1e-300) {
            converged = true;  // weights vanished: predictions saturated
            res.iterations = it;
            break;
        }
        res.intercept += (h11 * g0 - h01 * g1) / det;
        res.slope += (h00 * g1 - h01 * g0) / det;
        const double loss = log_loss();
        res.iterations = it;
        if (std::abs(prev_loss - loss) <= 1e-8) {
            converged = true;
            break;
        }
        prev_loss = loss;
    }
    if (!converged)
        throw TrainError("length-only logistic regression did not converge in " +
                         std::to_string(max_iter) + " iterations");

    std::vector<int> y_true, y_pred;
    for (std::size_t i : test_rows) {
        y_true.push_back(labels[i]);
        const double p = 1.0 / (1.0 + std::exp(-(res.intercept + res.slope * z(i))));
        y_pred.push_back(p >= 0.5 ? 1 : 0);
    }
    res.test_report = metrics::classification_report(y_true, y_pred, 2);
    return res;
}

}  // namespace storyscope::audit
