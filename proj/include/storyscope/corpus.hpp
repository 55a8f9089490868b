#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"
#include "text.hpp"

namespace storyscope::corpus {

/// Sources shipped with the released corpus. The label set is open: unknown
/// sources load fine but are flagged in the load report.
inline const std::vector<std::string>& known_sources() {
    static const std::vector<std::string> k = {"human", "claude", "gpt", "deepseek", "gemini", "kimi"};
    return k;
}

struct StoryRecord {
    std::string story_id;
    std::string prompt_id;
    std::string source;
    std::optional<std::string> text;
    std::int64_t word_count = 0;
};

struct PromptGroup {
    std::string prompt_id;
    std::vector<std::size_t> story_indices;  // indices into Corpus::stories, sorted by source
};

struct LoadReport {
    std::vector<std::string> unknown_sources;   // distinct, in first-seen order
    std::vector<std::string> incomplete_prompts;  // prompts missing at least one known source
    std::size_t n_stories = 0;
    std::size_t n_prompts = 0;
};

struct Corpus {
    std::vector<StoryRecord> stories;
    std::vector<PromptGroup> prompts;  // sorted by prompt_id
    LoadReport report;

    const StoryRecord& story(std::size_t i) const { return stories[i]; }

    std::vector<std::string> sources_present() const {
        std::set<std::string> s;
        for (const auto& st : stories) s.insert(st.source);
        return {s.begin(), s.end()};
    }
};

/// Parse and validate a JSONL corpus. Each line:
///   {"story_id","prompt_id","source","text"?,"word_count"?}
/// At least one of text/word_count must be present; when both are, they must
/// agree under the shared tokenizer. Duplicate story_id or duplicate
/// (prompt_id, source) is an error.
inline Corpus load_corpus(const std::filesystem::path& path) {
    Corpus c;
    std::unordered_set<std::string> seen_story_ids;
    std::set<std::pair<std::string, std::string>> seen_prompt_source;
    const std::unordered_set<std::string> known(known_sources().begin(), known_sources().end());
    std::vector<std::string> unknown_order;
    std::unordered_set<std::string> unknown_seen;

    for_each_jsonl(path, [&](std::size_t line_no, const Json& j) {
        StoryRecord rec;
        try {
            rec.story_id = j.at("story_id").get<std::string>();
            rec.prompt_id = j.at("prompt_id").get<std::string>();
            rec.source = j.at("source").get<std::string>();
            if (j.contains("text") && !j["text"].is_null()) rec.text = j["text"].get<std::string>();
            if (j.contains("word_count") && !j["word_count"].is_null()) {
                rec.word_count = j["word_count"].get<std::int64_t>();
                if (rec.word_count < 0)
                    throw ValidationError("word_count must be non-negative");
            } else if (rec.text) {
                rec.word_count = static_cast<std::int64_t>(count_words(*rec.text));
            } else {
                throw ValidationError("record needs text or word_count");
            }
        } catch (const Json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (rec.text) {
            auto counted = static_cast<std::int64_t>(count_words(*rec.text));
            if (j.contains("word_count") && !j["word_count"].is_null() && counted != rec.word_count)
                throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": word_count " +
                                      std::to_string(rec.word_count) + " disagrees with tokenizer count " +
                                      std::to_string(counted) + " for story " + rec.story_id);
        }
        if (!seen_story_ids.insert(rec.story_id).second)
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": duplicate story_id " +
                                  rec.story_id);
        if (!seen_prompt_source.insert({rec.prompt_id, rec.source}).second)
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": duplicate (prompt_id, source) (" +
                                  rec.prompt_id + ", " + rec.source + ")");
        if (!known.count(rec.source) && unknown_seen.insert(rec.source).second)
            unknown_order.push_back(rec.source);
        c.stories.push_back(std::move(rec));
    });

    std::map<std::string, std::vector<std::size_t>> by_prompt;
    for (std::size_t i = 0; i < c.stories.size(); ++i) by_prompt[c.stories[i].prompt_id].push_back(i);
    for (auto& [pid, idx] : by_prompt) {
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return c.stories[a].source < c.stories[b].source;
        });
        std::unordered_set<std::string> have;
        for (auto i : idx) have.insert(c.stories[i].source);
        bool complete = true;
        for (const auto& s : known_sources())
            if (!have.count(s)) complete = false;
        if (!complete) c.report.incomplete_prompts.push_back(pid);
        c.prompts.push_back(PromptGroup{pid, std::move(idx)});
    }
    c.report.unknown_sources = std::move(unknown_order);
    c.report.n_stories = c.stories.size();
    c.report.n_prompts = c.prompts.size();
    return c;
}

inline void save_corpus(const std::filesystem::path& path, const Corpus& c) {
    std::string out;
    for (const auto& s : c.stories) {
        Json j{{"story_id", s.story_id}, {"prompt_id", s.prompt_id}, {"source", s.source},
               {"word_count", s.word_count}};
        if (s.text) j["text"] = *s.text;
        out += j.dump();
        out += '\n';
    }
    write_file(path, out);
}

struct SplitSpec {
    std::uint64_t seed = 0;
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;

    enum class Part { train, val, test };

    /// prompt_id -> part; every prompt in exactly one part.
    std::map<std::string, Part> index() const {
        std::map<std::string, Part> m;
        auto add = [&](const std::vector<std::string>& ids, Part p) {
            for (const auto& id : ids)
                if (!m.emplace(id, p).second)
                    throw ValidationError("prompt " + id + " appears in more than one split");
        };
        add(train, Part::train);
        add(val, Part::val);
        add(test, Part::test);
        return m;
    }

    Json to_json() const { return Json{{"seed", seed}, {"train", train}, {"val", val}, {"test", test}}; }

    static SplitSpec from_json(const Json& j) {
        SplitSpec s;
        s.seed = j.at("seed").get<std::uint64_t>();
        s.train = j.at("train").get<std::vector<std::string>>();
        s.val = j.at("val").get<std::vector<std::string>>();
        s.test = j.at("test").get<std::vector<std::string>>();
        s.index();  // validate disjointness
        return s;
    }
};

/// Apportion n items to parts by largest remainder; ties go to the earlier part.
inline std::vector<std::size_t> largest_remainder(std::size_t n, const std::vector<double>& ratios) {
    double total = 0.0;
    for (double r : ratios) total += r;
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    std::vector<std::size_t> counts(ratios.size());
    std::vector<double> rem(ratios.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        double exact = ratios[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-12));
        rem[i] = exact - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::vector<std::size_t> order(ratios.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) counts[order[i % order.size()]]++;
    return counts;
}

/// Prompt-disjoint split: shuffle the sorted prompt ids with the seed, then
/// slice contiguously into train/val/test sized by largest-remainder rounding.
inline SplitSpec split_prompts(const Corpus& c, double train, double val, double test, std::uint64_t seed) {
    if (c.prompts.size() < 3) throw ValidationError("need at least 3 prompts to split");
    std::vector<std::string> ids;
    ids.reserve(c.prompts.size());
    for (const auto& p : c.prompts) ids.push_back(p.prompt_id);
    std::sort(ids.begin(), ids.end());
    Rng rng(seed);
    rng.shuffle(ids);
    auto counts = largest_remainder(ids.size(), {train, val, test});
    SplitSpec s;
    s.seed = seed;
    s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(counts[0]));
    s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(counts[0]),
                 ids.begin() + static_cast<std::ptrdiff_t>(counts[0] + counts[1]));
    s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(counts[0] + counts[1]), ids.end());
    return s;
}

/// Story indices belonging to one split part, in corpus order.
inline std::vector<std::size_t> stories_in_part(const Corpus& c, const SplitSpec& spec, SplitSpec::Part part) {
    auto idx = spec.index();
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < c.stories.size(); ++i) {
        auto it = idx.find(c.stories[i].prompt_id);
        if (it != idx.end() && it->second == part) out.push_back(i);
    }
    return out;
}

}  // namespace storyscope::corpus
