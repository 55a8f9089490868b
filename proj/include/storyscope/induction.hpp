#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "storyscope/corpus.hpp"
#include "storyscope/encoding.hpp"
#include "storyscope/errors.hpp"
#include "storyscope/hash.hpp"
#include "storyscope/io.hpp"
#include "storyscope/metrics.hpp"
#include "storyscope/parallel.hpp"
#include "storyscope/rng.hpp"
#include "storyscope/taxonomy.hpp"

namespace storyscope::induction {

using Json = nlohmann::json;

/// The ten narrative dimensions, in canonical order. Every template covers all
/// of them and discovery/assignment calls are scoped to one dimension each.
inline const std::vector<std::string>& dimensions() {
    static const std::vector<std::string> dims = {
        "agent",  "social_network", "event", "plot",       "structure",
        "setting", "time",          "revelation", "perspective", "style"};
    return dims;
}

/// Vendor-neutral token estimate used only for batching.
inline std::size_t token_estimate(std::string_view text) { return (text.size() + 3) / 4; }

// ---------------------------------------------------------------------------
// Provider abstraction
// ---------------------------------------------------------------------------

struct Message {
    std::string role;
    std::string content;
};

struct ProviderRequest {
    std::vector<Message> messages;
    std::string schema_id;         // which response schema the stage expects
    std::string effort = "medium"; // provider effort hint

    Json to_json() const {
        Json msgs = Json::array();
        for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
        return Json{{"messages", msgs}, {"schema_id", schema_id}, {"effort", effort}};
    }

    /// Canonical serialization (nlohmann::json orders object keys), the basis
    /// for both the cache key and the mock provider's derived randomness.
    std::string canonical() const { return to_json().dump(); }
    std::string cache_key() const { return sha256_hex(canonical()); }
};

struct ProviderResponse {
    std::string text;
    std::size_t tokens_in = 0;
    std::size_t tokens_out = 0;
};

class Provider {
public:
    virtual ~Provider() = default;
    virtual ProviderResponse complete(const ProviderRequest& request) = 0;
    virtual std::string name() const = 0;
};

/// External provider description loaded from a config file. Transport is out
/// of scope for this offline build; the struct exists so run configs can carry
/// a provider block and so the CLI can reject non-mock providers explicitly.
struct ProviderConfig {
    std::string endpoint;
    std::string model;
    std::string auth_env;          // name of the environment variable holding the key
    std::string effort = "medium";

    Json to_json() const {
        return Json{{"endpoint", endpoint}, {"model", model}, {"auth_env", auth_env}, {"effort", effort}};
    }
    static ProviderConfig from_json(const Json& j) {
        ProviderConfig c;
        c.endpoint = j.value("endpoint", std::string());
        c.model = j.at("model").get<std::string>();
        c.auth_env = j.value("auth_env", std::string());
        c.effort = j.value("effort", std::string("medium"));
        return c;
    }
};

// ---------------------------------------------------------------------------
// On-disk request cache
// ---------------------------------------------------------------------------

/// Idempotent request/response store: one JSON file per request, keyed by the
/// SHA-256 of the canonicalized request. Only schema-valid responses are
/// written, so a warm cache replays a stage with zero provider calls.
class RequestCache {
public:
    explicit RequestCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    const std::filesystem::path& dir() const { return dir_; }

    std::optional<ProviderResponse> get(const std::string& key) const {
        std::lock_guard<std::mutex> lock(mutex_);
        const auto path = dir_ / (key + ".json");
        if (!std::filesystem::exists(path)) return std::nullopt;
        Json j = Json::parse(read_file(path), nullptr, false);
        if (j.is_discarded() || !j.contains("text")) return std::nullopt;
        ProviderResponse resp;
        resp.text = j.at("text").get<std::string>();
        resp.tokens_in = j.value("tokens_in", std::size_t{0});
        resp.tokens_out = j.value("tokens_out", std::size_t{0});
        return resp;
    }

    void put(const std::string& key, const ProviderRequest& request, const ProviderResponse& response) {
        std::lock_guard<std::mutex> lock(mutex_);
        Json j{{"request", request.to_json()},
               {"text", response.text},
               {"tokens_in", response.tokens_in},
               {"tokens_out", response.tokens_out}};
        write_file(dir_ / (key + ".json"), j.dump());
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mutex_);
        std::size_t n = 0;
        for (const auto& e : std::filesystem::directory_iterator(dir_))
            if (e.path().extension() == ".json") ++n;
        return n;
    }

private:
    std::filesystem::path dir_;
    mutable std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Options shared by the pipeline stages
// ---------------------------------------------------------------------------

struct InductionOptions {
    std::uint64_t seed = 0;
    int retries = 3;               // attempts beyond the first
    int backoff_ms = 250;          // doubled per retry; set 0 in tests
    int threads = 1;
    std::size_t token_budget = 10000;
    std::vector<std::string> forbidden_tokens;  // must never appear outbound
    RequestCache* cache = nullptr;
    std::string run_tag;           // nonce distinguishing repeatability runs
};

/// Blinding guard: every outbound payload must be free of the configured
/// forbidden tokens (typically the corpus source identifiers). A violation is
/// a bug or an irreducible leak (the token appears in story text itself), and
/// either way the stage must not send it.
inline void ensure_blinded(const ProviderRequest& request, const std::vector<std::string>& forbidden) {
    for (const auto& tok : forbidden) {
        if (tok.empty()) continue;
        for (const auto& m : request.messages)
            if (m.content.find(tok) != std::string::npos)
                throw ValidationError("blinding violation: forbidden token '" + tok +
                                      "' in outbound payload (schema " + request.schema_id + ")");
    }
}

/// Seeded presentation permutation: identical seed, identical order.
inline std::vector<std::size_t> presentation_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(derive_seed(seed, 0x70726573656e74ULL));  // "present"
    rng.shuffle(idx);
    return idx;
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline double hash01(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

inline std::string zero_pad(std::size_t v, int width = 5) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

inline std::string slug(const std::string& name) {
    std::string out;
    bool last_us = true;  // swallow leading separators
    for (char c : name) {
        if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
            out += c;
            last_us = false;
        } else if (c >= 'A' && c <= 'Z') {
            out += static_cast<char>(c - 'A' + 'a');
            last_us = false;
        } else if (!last_us) {
            out += '_';
            last_us = true;
        }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out.empty() ? std::string("feature") : out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Mock provider
// ---------------------------------------------------------------------------

struct MockConfig {
    std::uint64_t seed = 0;
    double flip_rate = 0.0;            // chance an assignment answer is swapped per call
    std::set<std::string> drop_dimensions;  // assignment calls answered with no values
    std::size_t malformed_first = 0;   // first N calls return non-JSON text
    bool run_indexed_names = false;    // discovery emits run-specific feature names
    std::size_t features_per_dimension = 2;
};

/// Deterministic stand-in provider: the response is a pure function of the
/// request hash and the configured seed, so every stage is replayable offline.
/// Noise channels (value flips, dimension dropout, malformed prefixes) drive
/// the agreement and retry tests.
class MockProvider : public Provider {
public:
    explicit MockProvider(MockConfig cfg = {}) : cfg_(std::move(cfg)) {}

    std::string name() const override { return "mock"; }

    std::size_t call_count() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return calls_;
    }

    std::vector<ProviderRequest> log() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return log_;
    }

    ProviderResponse complete(const ProviderRequest& request) override {
        std::size_t index;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            index = calls_++;
            log_.push_back(request);
        }
        const std::string canon = request.canonical();
        if (index < cfg_.malformed_first)
            return make_response(canon, "the model rambled instead of emitting JSON {{{");

        const std::uint64_t req_h = derive_seed(cfg_.seed, detail::fnv1a(canon));
        Json payload = Json::object();
        if (!request.messages.empty()) {
            Json parsed = Json::parse(request.messages.back().content, nullptr, false);
            if (parsed.is_object()) payload = std::move(parsed);
        }

        Json body;
        if (request.schema_id == "story_template")
            body = template_body(req_h);
        else if (request.schema_id == "comparative_analysis")
            body = analysis_body(req_h, payload);
        else if (request.schema_id == "feature_discovery")
            body = discovery_body(payload);
        else if (request.schema_id == "feature_assignment")
            body = assignment_body(canon, payload);
        else
            body = Json{{"echo", request.schema_id}};
        return make_response(canon, body.dump());
    }

private:
    static ProviderResponse make_response(const std::string& canon, std::string text) {
        ProviderResponse resp;
        resp.tokens_in = token_estimate(canon);
        resp.tokens_out = token_estimate(text);
        resp.text = std::move(text);
        return resp;
    }

    static std::string tag(std::uint64_t h) {
        static const char* hexd = "0123456789abcdef";
        std::string s;
        for (int i = 0; i < 6; ++i) s += hexd[(h >> (4 * i)) & 0xF];
        return s;
    }

    Json template_body(std::uint64_t req_h) const {
        Json dims = Json::object();
        for (const auto& d : dimensions())
            dims[d] = Json{{"summary", "notes on " + d + " " + tag(derive_seed(req_h, detail::fnv1a(d)))}};
        return Json{{"dimensions", dims}};
    }

    Json analysis_body(std::uint64_t req_h, const Json& payload) const {
        std::set<std::string> labels;
        if (payload.contains("prompts") && payload["prompts"].is_array())
            for (const auto& p : payload["prompts"])
                if (p.is_object() && p.contains("sources") && p["sources"].is_object())
                    for (const auto& item : p["sources"].items()) labels.insert(item.key());
        if (labels.empty()) labels.insert("source_1");
        Json per_source = Json::object();
        for (const auto& label : labels)
            per_source[label] = Json{{"notes", "dimension notes " + tag(derive_seed(req_h, detail::fnv1a(label)))}};
        return Json{{"per_source", per_source},
                    {"comparisons", Json::array({"contrast " + tag(req_h)})},
                    {"executive_summary", "summary " + tag(derive_seed(req_h, 1))}};
    }

    Json discovery_body(const Json& payload) const {
        const std::string dim = payload.value("dimension", std::string("agent"));
        const int run = payload.value("run", 0);
        Json feats = Json::array();
        for (std::size_t i = 0; i < cfg_.features_per_dimension; ++i) {
            std::string name = dim + " feature " + std::to_string(i);
            if (cfg_.run_indexed_names) name += " run " + std::to_string(run);
            feats.push_back(Json{{"name", name},
                                 {"question", "Does the " + dim + " dimension show " + name + "?"},
                                 {"description", "Mock candidate for " + dim + "."},
                                 {"response_type", "binary"},
                                 {"options", Json::array({"no", "yes"})}});
        }
        return Json{{"features", feats}};
    }

    Json assignment_body(const std::string& canon, const Json& payload) const {
        const std::string story_key = payload.value("story_key", std::string());
        const std::string dim = payload.value("dimension", std::string());
        Json values = Json::object();
        if (cfg_.drop_dimensions.count(dim)) return Json{{"values", values}};
        if (!payload.contains("features") || !payload["features"].is_array())
            return Json{{"values", values}};
        for (const auto& f : payload["features"]) {
            if (!f.is_object() || !f.contains("feature_id") || !f.contains("options")) continue;
            const std::string fid = f["feature_id"].get<std::string>();
            const auto opts = f["options"].get<std::vector<std::string>>();
            if (opts.empty()) continue;
            const std::string rt = f.value("response_type", std::string("categorical"));
            // The base answer depends only on (story, feature, seed) so that
            // noiseless runs agree perfectly; the flip channel is keyed by the
            // full request and so resamples independently per run.
            const std::uint64_t base_h = derive_seed(cfg_.seed, detail::fnv1a(story_key + "|" + fid));
            const std::uint64_t flip_h = derive_seed(cfg_.seed ^ 0xf11bf11bULL, detail::fnv1a(canon + "#" + fid));
            const bool flip = cfg_.flip_rate > 0.0 && detail::hash01(flip_h) < cfg_.flip_rate;
            if (rt == "multi_select") {
                std::vector<bool> member(opts.size());
                for (std::size_t j = 0; j < opts.size(); ++j) member[j] = (base_h >> (j % 60)) & 1;
                if (flip) {
                    const std::size_t j = static_cast<std::size_t>(flip_h % opts.size());
                    member[j] = !member[j];
                }
                Json arr = Json::array();
                for (std::size_t j = 0; j < opts.size(); ++j)
                    if (member[j]) arr.push_back(opts[j]);
                values[fid] = arr;
            } else {
                std::size_t idx = static_cast<std::size_t>(base_h % opts.size());
                if (flip && opts.size() > 1)
                    idx = (idx + 1 + static_cast<std::size_t>(flip_h % (opts.size() - 1))) % opts.size();
                values[fid] = opts[idx];
            }
        }
        return Json{{"values", values}};
    }

    MockConfig cfg_;
    mutable std::mutex mutex_;
    std::size_t calls_ = 0;
    std::vector<ProviderRequest> log_;
};

// ---------------------------------------------------------------------------
// Stage call helper: retries, validation, caching
// ---------------------------------------------------------------------------

namespace detail {

struct StageCall {
    Json json;                // parsed response (last shape-valid one)
    bool fully_valid = false; // value-level validation also passed
    int retries = 0;          // attempts beyond the first (0 on cache hit)
    bool cache_hit = false;
    std::size_t provider_calls = 0;
};

/// One provider round-trip with bounded retries. `shape_ok` throws a
/// ValidationError when the parsed JSON is structurally wrong (always retried,
/// never returned); `fully_ok` reports value-level validity — a shape-valid
/// but value-invalid response is returned after retries so the caller can
/// salvage the valid subset. Only fully valid responses are cached.
template <class ShapeOk, class FullyOk>
inline StageCall call_stage(Provider& provider, const ProviderRequest& request, const InductionOptions& opts,
                            ShapeOk&& shape_ok, FullyOk&& fully_ok) {
    ensure_blinded(request, opts.forbidden_tokens);
    const std::string key = request.cache_key();
    if (opts.cache) {
        if (auto cached = opts.cache->get(key)) {
            Json j = Json::parse(cached->text, nullptr, false);
            if (!j.is_discarded()) {
                try {
                    shape_ok(j);
                    StageCall out;
                    out.json = std::move(j);
                    out.fully_valid = true;
                    out.cache_hit = true;
                    return out;
                } catch (const Error&) {
                    // stale or corrupt entry: fall through to a live call
                }
            }
        }
    }

    std::optional<Json> shape_valid;
    std::string last_error = "no attempt made";
    StageCall out;
    const int attempts = std::max(1, opts.retries + 1);
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0 && opts.backoff_ms > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(opts.backoff_ms << (attempt - 1)));
        ProviderResponse resp;
        try {
            resp = provider.complete(request);
            out.provider_calls++;
        } catch (const ProviderError& e) {
            last_error = e.what();
            continue;
        }
        Json j = Json::parse(resp.text, nullptr, false);
        if (j.is_discarded()) {
            last_error = "response is not valid JSON";
            continue;
        }
        try {
            shape_ok(j);
        } catch (const Error& e) {
            last_error = e.what();
            continue;
        }
        if (fully_ok(j)) {
            if (opts.cache) opts.cache->put(key, request, resp);
            out.json = std::move(j);
            out.fully_valid = true;
            out.retries = attempt;
            return out;
        }
        shape_valid = std::move(j);
        last_error = "response values failed validation";
    }
    if (shape_valid) {
        out.json = std::move(*shape_valid);
        out.fully_valid = false;
        out.retries = attempts - 1;
        return out;
    }
    throw ProviderError("stage '" + request.schema_id + "' failed after " + std::to_string(attempts) +
                        " attempts: " + last_error);
}

/// Thread-safe accumulator for per-stage call statistics.
struct CallStats {
    std::mutex mutex;
    std::size_t provider_calls = 0;
    std::size_t retries = 0;
    std::size_t cache_hits = 0;

    void add(const StageCall& c) {
        std::lock_guard<std::mutex> lock(mutex);
        provider_calls += c.provider_calls;
        retries += static_cast<std::size_t>(c.retries);
        cache_hits += c.cache_hit ? 1 : 0;
    }
};

inline void require_object_field(const Json& j, const char* field, const char* kind) {
    if (!j.is_object() || !j.contains(field))
        throw ValidationError(std::string("response missing '") + field + "' object");
    if (std::string(kind) == "object" && !j.at(field).is_object())
        throw ValidationError(std::string("'") + field + "' must be an object");
    if (std::string(kind) == "array" && !j.at(field).is_array())
        throw ValidationError(std::string("'") + field + "' must be an array");
    if (std::string(kind) == "string" && !j.at(field).is_string())
        throw ValidationError(std::string("'") + field + "' must be a string");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// batch_prompts: first-fit-decreasing bin packing under a token budget
// ---------------------------------------------------------------------------

struct Batch {
    std::vector<std::string> prompt_ids;
    std::size_t token_estimate = 0;
};

inline std::vector<Batch> batch_prompts(std::vector<std::pair<std::string, std::size_t>> sizes,
                                        std::size_t budget) {
    if (budget == 0) throw ConfigError("token budget must be positive");
    for (const auto& [id, est] : sizes)
        if (est > budget)
            throw ConfigError("prompt '" + id + "' estimate " + std::to_string(est) +
                              " exceeds token budget " + std::to_string(budget));
    std::stable_sort(sizes.begin(), sizes.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<Batch> batches;
    for (const auto& [id, est] : sizes) {
        bool placed = false;
        for (auto& b : batches) {
            if (b.token_estimate + est <= budget) {
                b.prompt_ids.push_back(id);
                b.token_estimate += est;
                placed = true;
                break;
            }
        }
        if (!placed) batches.push_back(Batch{{id}, est});
    }
    return batches;
}

// ---------------------------------------------------------------------------
// extract_templates
// ---------------------------------------------------------------------------

struct StoryTemplate {
    std::string story_id;
    Json dimensions;  // object keyed by the ten dimension names

    Json to_json() const { return Json{{"story_id", story_id}, {"dimensions", dimensions}}; }
    static StoryTemplate from_json(const Json& j) {
        return StoryTemplate{j.at("story_id").get<std::string>(), j.at("dimensions")};
    }
};

inline void validate_template_json(const Json& j) {
    detail::require_object_field(j, "dimensions", "object");
    for (const auto& d : dimensions()) {
        if (!j.at("dimensions").contains(d))
            throw ValidationError("template missing dimension '" + d + "'");
        if (!j.at("dimensions").at(d).is_object())
            throw ValidationError("template dimension '" + d + "' must be an object");
    }
}

struct TemplateReport {
    std::vector<StoryTemplate> templates;  // sorted by story_id
    std::size_t provider_calls = 0;
    std::size_t retries = 0;
    std::size_t cache_hits = 0;

    Json to_json() const {
        Json arr = Json::array();
        for (const auto& t : templates) arr.push_back(t.to_json());
        return Json{{"templates", arr},
                    {"provider_calls", provider_calls},
                    {"retries", retries},
                    {"cache_hits", cache_hits}};
    }
};

namespace detail {

inline std::vector<std::size_t> stories_with_text(const corpus::Corpus& c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < c.stories.size(); ++i)
        if (c.stories[i].text && !c.stories[i].text->empty()) idx.push_back(i);
    return idx;
}

}  // namespace detail

/// One template per text-bearing story. Outbound payloads identify stories by
/// a blinded positional key in a seeded presentation order; source identities
/// never leave the process.
inline TemplateReport extract_templates(const corpus::Corpus& c, Provider& provider,
                                        const InductionOptions& opts = {}) {
    const auto idx = detail::stories_with_text(c);
    if (idx.empty()) throw ConfigError("extract_templates: no stories with text");
    const auto order = presentation_order(idx.size(), opts.seed);

    std::vector<StoryTemplate> out(idx.size());
    detail::CallStats stats;
    parallel_for(std::size_t{0}, idx.size(), static_cast<unsigned>(opts.threads), [&](std::size_t pos) {
        const std::size_t story_index = idx[order[pos]];
        const auto& story = c.stories[story_index];
        ProviderRequest req;
        req.schema_id = "story_template";
        req.messages.push_back(
            {"system",
             "You analyze one anonymized story and return a JSON template covering ten narrative "
             "dimensions (agent, social_network, event, plot, structure, setting, time, revelation, "
             "perspective, style). Respond with a single JSON object of the form "
             "{\"dimensions\": {<dimension>: {...}}}."});
        Json payload{{"schema", "story_template"},
                     {"story_key", "story_" + detail::zero_pad(pos)},
                     {"text", *story.text}};
        req.messages.push_back({"user", payload.dump()});
        auto call = detail::call_stage(provider, req, opts, validate_template_json,
                                       [](const Json&) { return true; });
        stats.add(call);
        out[order[pos]] = StoryTemplate{story.story_id, call.json.at("dimensions")};
    });

    TemplateReport rep;
    rep.templates = std::move(out);
    std::sort(rep.templates.begin(), rep.templates.end(),
              [](const StoryTemplate& a, const StoryTemplate& b) { return a.story_id < b.story_id; });
    rep.provider_calls = stats.provider_calls;
    rep.retries = stats.retries;
    rep.cache_hits = stats.cache_hits;
    return rep;
}

// ---------------------------------------------------------------------------
// comparative_analysis
// ---------------------------------------------------------------------------

struct AnalysisBatch {
    std::vector<std::string> prompt_ids;
    std::size_t token_estimate = 0;
    Json analysis;  // {per_source, comparisons, executive_summary}

    Json to_json() const {
        return Json{{"prompt_ids", prompt_ids}, {"token_estimate", token_estimate}, {"analysis", analysis}};
    }
};

inline void validate_analysis_json(const Json& j) {
    detail::require_object_field(j, "per_source", "object");
    for (const auto& [label, notes] : j.at("per_source").items())
        if (!notes.is_object())
            throw ValidationError("per_source entry '" + label + "' must be an object");
    detail::require_object_field(j, "comparisons", "array");
    detail::require_object_field(j, "executive_summary", "string");
}

struct AnalysisReport {
    std::vector<AnalysisBatch> batches;
    double mean_prompts_per_batch = 0.0;
    std::size_t provider_calls = 0;
    std::size_t retries = 0;
    std::size_t cache_hits = 0;

    Json to_json() const {
        Json arr = Json::array();
        for (const auto& b : batches) arr.push_back(b.to_json());
        return Json{{"batches", arr},
                    {"mean_prompts_per_batch", mean_prompts_per_batch},
                    {"provider_calls", provider_calls},
                    {"retries", retries},
                    {"cache_hits", cache_hits}};
    }
};

/// Batches prompt groups under the token budget (first-fit-decreasing) and
/// requests one structured comparative analysis per batch. Within a prompt the
/// stories are presented under shuffled neutral labels (source_1, source_2,
/// ...) so the provider never sees which system wrote what.
inline AnalysisReport comparative_analysis(const corpus::Corpus& c, Provider& provider,
                                           const InductionOptions& opts = {}) {
    std::vector<std::pair<std::string, std::size_t>> sizes;
    std::map<std::string, std::vector<std::size_t>> text_stories;  // prompt -> story indices
    for (const auto& g : c.prompts) {
        std::vector<std::size_t> with_text;
        for (std::size_t si : g.story_indices)
            if (c.stories[si].text && !c.stories[si].text->empty()) with_text.push_back(si);
        if (with_text.empty()) continue;
        std::size_t est = 0;
        for (std::size_t si : with_text) est += token_estimate(*c.stories[si].text);
        sizes.emplace_back(g.prompt_id, est);
        text_stories[g.prompt_id] = std::move(with_text);
    }
    if (sizes.empty()) throw ConfigError("comparative_analysis: no prompts with story text");
    auto batches = batch_prompts(std::move(sizes), opts.token_budget);

    AnalysisReport rep;
    rep.batches.resize(batches.size());
    detail::CallStats stats;
    parallel_for(std::size_t{0}, batches.size(), static_cast<unsigned>(opts.threads), [&](std::size_t bi) {
        const auto& batch = batches[bi];
        Json prompts = Json::array();
        for (std::size_t pi = 0; pi < batch.prompt_ids.size(); ++pi) {
            const auto& prompt_id = batch.prompt_ids[pi];
            auto stories = text_stories.at(prompt_id);
            Rng rng(derive_seed(opts.seed, detail::fnv1a("analysis|" + prompt_id)));
            rng.shuffle(stories);
            Json sources = Json::object();
            for (std::size_t k = 0; k < stories.size(); ++k)
                sources["source_" + std::to_string(k + 1)] = *c.stories[stories[k]].text;
            prompts.push_back(Json{{"prompt_key", "prompt_" + detail::zero_pad(pi, 3)}, {"sources", sources}});
        }
        ProviderRequest req;
        req.schema_id = "comparative_analysis";
        req.messages.push_back(
            {"system",
             "You compare anonymized stories written to the same prompts. Return a JSON object "
             "{\"per_source\": {<label>: {...}}, \"comparisons\": [...], \"executive_summary\": \"...\"} "
             "covering the ten narrative dimensions."});
        req.messages.push_back({"user", Json{{"schema", "comparative_analysis"}, {"prompts", prompts}}.dump()});
        auto call = detail::call_stage(provider, req, opts, validate_analysis_json,
                                       [](const Json&) { return true; });
        stats.add(call);
        rep.batches[bi] = AnalysisBatch{batch.prompt_ids, batch.token_estimate, std::move(call.json)};
    });

    std::size_t n_prompts = 0;
    for (const auto& b : rep.batches) n_prompts += b.prompt_ids.size();
    rep.mean_prompts_per_batch = static_cast<double>(n_prompts) / static_cast<double>(rep.batches.size());
    rep.provider_calls = stats.provider_calls;
    rep.retries = stats.retries;
    rep.cache_hits = stats.cache_hits;
    return rep;
}

// ---------------------------------------------------------------------------
// discover_features
// ---------------------------------------------------------------------------

struct DiscoveryResult {
    std::vector<taxonomy::CandidateFeature> candidates;  // first-seen order, exact (name, question) union
    std::size_t provider_calls = 0;
    std::size_t retries = 0;
    std::size_t cache_hits = 0;
    std::size_t failed_calls = 0;
    std::map<std::string, int> runs_completed;  // per dimension

    Json to_json() const {
        Json feats = Json::array();
        for (const auto& cand : candidates) feats.push_back(taxonomy::feature_to_json(cand.def));
        return Json{{"candidates", feats},
                    {"provider_calls", provider_calls},
                    {"retries", retries},
                    {"cache_hits", cache_hits},
                    {"failed_calls", failed_calls},
                    {"runs_completed", runs_completed}};
    }
};

namespace detail {

inline taxonomy::FeatureDef candidate_from_json(const Json& jf, const std::string& dimension) {
    if (!jf.is_object()) throw ValidationError("feature entry must be an object");
    taxonomy::FeatureDef def;
    def.feature_id = "candidate";  // assigned after the union
    if (!jf.contains("name") || !jf.at("name").is_string() || jf.at("name").get<std::string>().empty())
        throw ValidationError("feature entry missing non-empty 'name'");
    if (!jf.contains("question") || !jf.at("question").is_string() ||
        jf.at("question").get<std::string>().empty())
        throw ValidationError("feature entry missing non-empty 'question'");
    def.name = jf.at("name").get<std::string>();
    def.question = jf.at("question").get<std::string>();
    def.description = jf.value("description", std::string());
    def.dimension = dimension;
    if (!jf.contains("response_type") || !jf.at("response_type").is_string())
        throw ValidationError("feature entry missing 'response_type'");
    def.response_type = taxonomy::parse_response_type(jf.at("response_type").get<std::string>());
    if (!jf.contains("options") || !jf.at("options").is_array())
        throw ValidationError("feature entry missing 'options' array");
    def.options = jf.at("options").get<std::vector<std::string>>();
    if (jf.contains("style_dependence"))
        def.style_dependence = taxonomy::parse_style_dependence(jf.at("style_dependence").get<std::string>());
    // Reuse the taxonomy validation rules (non-empty options, binary = {no,
    // yes}, consecutive integer scales) on the singleton candidate.
    taxonomy::Taxonomy probe;
    probe.features = {def};
    auto violations = taxonomy::validate_taxonomy(probe).violations;
    if (!violations.empty()) throw ValidationError("invalid candidate: " + violations.front());
    return def;
}

}  // namespace detail

/// Runs the per-dimension expert prompts `runs` times over the comparative
/// analyses and unions the proposals, keyed by exact (name, question); the
/// semantic dedup lives in the taxonomy module. A dimension with zero
/// completed runs fails the stage.
inline DiscoveryResult discover_features(const std::vector<AnalysisBatch>& analyses, Provider& provider,
                                         int runs = 3, const InductionOptions& opts = {}) {
    if (runs < 1) throw ConfigError("discover_features: runs must be >= 1");
    if (analyses.empty()) throw ConfigError("discover_features: no analyses supplied");
    Json digest = Json::array();
    for (const auto& b : analyses) digest.push_back(b.analysis.value("executive_summary", std::string()));

    const auto& dims = dimensions();
    const std::size_t n_calls = static_cast<std::size_t>(runs) * dims.size();
    std::vector<std::optional<Json>> results(n_calls);
    detail::CallStats stats;
    std::atomic<std::size_t> failed{0};
    parallel_for(std::size_t{0}, n_calls, static_cast<unsigned>(opts.threads), [&](std::size_t job) {
        const int run = static_cast<int>(job / dims.size());
        const std::string& dim = dims[job % dims.size()];
        ProviderRequest req;
        req.schema_id = "feature_discovery";
        req.messages.push_back(
            {"system", "You are an expert on the '" + dim +
                           "' dimension of narrative. Propose measurable story features for it. Respond "
                           "with {\"features\": [{\"name\", \"question\", \"description\", "
                           "\"response_type\", \"options\"}]}."});
        req.messages.push_back(
            {"user",
             Json{{"schema", "feature_discovery"}, {"dimension", dim}, {"run", run}, {"analyses", digest}}
                 .dump()});
        try {
            auto call = detail::call_stage(
                provider, req, opts,
                [&](const Json& j) {
                    detail::require_object_field(j, "features", "array");
                    for (const auto& jf : j.at("features")) detail::candidate_from_json(jf, dim);
                },
                [](const Json&) { return true; });
            stats.add(call);
            results[job] = std::move(call.json);
        } catch (const ProviderError&) {
            failed++;
        }
    });

    DiscoveryResult out;
    out.failed_calls = failed;
    for (const auto& d : dims) out.runs_completed[d] = 0;
    std::set<std::pair<std::string, std::string>> seen;
    for (std::size_t job = 0; job < n_calls; ++job) {
        if (!results[job]) continue;
        const std::string& dim = dims[job % dims.size()];
        out.runs_completed[dim]++;
        for (const auto& jf : results[job]->at("features")) {
            auto def = detail::candidate_from_json(jf, dim);
            if (!seen.insert({def.name, def.question}).second) continue;
            out.candidates.push_back(taxonomy::CandidateFeature{std::move(def), {}});
        }
    }
    for (const auto& d : dims)
        if (out.runs_completed[d] == 0)
            throw ProviderError("feature discovery failed for dimension '" + d + "'");

    std::set<std::string> used_ids;
    for (auto& cand : out.candidates) {
        std::string base = detail::slug(cand.def.name);
        std::string id = base;
        for (int k = 2; !used_ids.insert(id).second; ++k) id = base + "_" + std::to_string(k);
        cand.def.feature_id = id;
    }
    out.provider_calls = stats.provider_calls;
    out.retries = stats.retries;
    out.cache_hits = stats.cache_hits;
    return out;
}

// ---------------------------------------------------------------------------
// assign_features
// ---------------------------------------------------------------------------

struct AssignmentResult {
    std::vector<encoding::AssignmentRecord> records;  // sorted by story_id
    std::map<std::string, double> story_coverage;
    double coverage = 0.0;       // assigned / (stories x features)
    std::size_t provider_calls = 0;
    std::size_t retries = 0;
    std::size_t cache_hits = 0;
    std::size_t failed_calls = 0;    // calls abandoned after retries
    std::size_t invalid_values = 0;  // values dropped as unparseable/illegal

    Json to_json() const {
        Json recs = Json::array();
        for (const auto& r : records) recs.push_back(Json{{"story_id", r.story_id}, {"values", r.values}});
        return Json{{"records", recs},
                    {"story_coverage", story_coverage},
                    {"coverage", coverage},
                    {"provider_calls", provider_calls},
                    {"retries", retries},
                    {"cache_hits", cache_hits},
                    {"failed_calls", failed_calls},
                    {"invalid_values", invalid_values}};
    }
};

namespace detail {

inline bool option_member(const std::vector<std::string>& options, const std::string& v) {
    return std::find(options.begin(), options.end(), v) != options.end();
}

inline bool value_valid(const taxonomy::FeatureDef& f, const Json& v) {
    using taxonomy::ResponseType;
    switch (f.response_type) {
        case ResponseType::categorical:
        case ResponseType::binary:
            return v.is_string() && option_member(f.options, v.get<std::string>());
        case ResponseType::ordinal:
            if (v.is_string()) return option_member(f.options, v.get<std::string>());
            return v.is_number_integer() && v.get<long>() >= 0 &&
                   v.get<long>() < static_cast<long>(f.options.size());
        case ResponseType::scale:
            if (v.is_string()) return option_member(f.options, v.get<std::string>());
            if (!v.is_number_integer()) return false;
            for (const auto& opt : f.options)
                if (std::stol(opt) == v.get<long>()) return true;
            return false;
        case ResponseType::multi_select: {
            if (!v.is_array()) return false;
            for (const auto& e : v)
                if (!e.is_string() || !option_member(f.options, e.get<std::string>())) return false;
            return true;
        }
    }
    return false;
}

}  // namespace detail

/// One call per (story, dimension): the story text plus that dimension's
/// feature definitions. Values are validated against the feature options;
/// invalid values are retried with the whole call and finally recorded as
/// missing. Provider failures are per-call and non-fatal.
inline AssignmentResult assign_features(const corpus::Corpus& c, const taxonomy::Taxonomy& tax,
                                        Provider& provider, const InductionOptions& opts = {}) {
    auto violations = taxonomy::validate_taxonomy(tax).violations;
    if (!violations.empty())
        throw ValidationError("assign_features: taxonomy invalid: " + violations.front());
    if (tax.features.empty()) throw ConfigError("assign_features: taxonomy has no features");

    std::vector<std::string> dims_used;
    std::map<std::string, std::vector<const taxonomy::FeatureDef*>> by_dim;
    for (const auto& f : tax.features) {
        const std::string dim = taxonomy::canonical_dimension(f.dimension);
        if (by_dim[dim].empty()) dims_used.push_back(dim);
        by_dim[dim].push_back(&f);
    }

    const auto idx = detail::stories_with_text(c);
    if (idx.empty()) throw ConfigError("assign_features: no stories with text");
    const auto order = presentation_order(idx.size(), opts.seed);

    const std::size_t n_stories = idx.size();
    const std::size_t n_dims = dims_used.size();
    const std::size_t total_features = tax.features.size();

    std::vector<encoding::AssignmentRecord> records(n_stories);
    for (std::size_t pos = 0; pos < n_stories; ++pos)
        records[order[pos]].story_id = c.stories[idx[order[pos]]].story_id;

    detail::CallStats stats;
    std::atomic<std::size_t> failed{0}, invalid{0};
    std::vector<std::mutex> record_locks(n_stories);

    parallel_for(std::size_t{0}, n_stories * n_dims, static_cast<unsigned>(opts.threads), [&](std::size_t job) {
        const std::size_t pos = job / n_dims;       // presentation rank
        const std::size_t di = job % n_dims;
        const std::size_t story_slot = order[pos];  // index into idx/records
        const auto& story = c.stories[idx[story_slot]];
        const auto& dim = dims_used[di];
        const auto& feats = by_dim[dim];

        Json fdefs = Json::array();
        for (const auto* f : feats)
            fdefs.push_back(Json{{"feature_id", f->feature_id},
                                 {"name", f->name},
                                 {"question", f->question},
                                 {"response_type", taxonomy::to_string(f->response_type)},
                                 {"options", f->options}});
        Json payload{{"schema", "feature_assignment"},
                     {"story_key", "story_" + detail::zero_pad(pos)},
                     {"dimension", dim},
                     {"features", fdefs},
                     {"text", *story.text}};
        if (!opts.run_tag.empty()) payload["run"] = opts.run_tag;

        ProviderRequest req;
        req.schema_id = "feature_assignment";
        req.messages.push_back(
            {"system", "You answer feature questions about one anonymized story, restricted to the '" +
                           dim + "' dimension. Respond with {\"values\": {<feature_id>: <answer>}}."});
        req.messages.push_back({"user", payload.dump()});

        auto fully_ok = [&](const Json& j) {
            for (const auto& [fid, v] : j.at("values").items()) {
                const taxonomy::FeatureDef* def = nullptr;
                for (const auto* f : feats)
                    if (f->feature_id == fid) def = f;
                if (!def || !detail::value_valid(*def, v)) return false;
            }
            return true;
        };
        try {
            auto call = detail::call_stage(
                provider, req, opts,
                [](const Json& j) { detail::require_object_field(j, "values", "object"); }, fully_ok);
            stats.add(call);
            const Json& values = call.json.at("values");
            std::lock_guard<std::mutex> lock(record_locks[story_slot]);
            for (const auto* f : feats) {
                auto it = values.find(f->feature_id);
                if (it == values.end()) continue;
                if (detail::value_valid(*f, *it))
                    records[story_slot].values[f->feature_id] = *it;
                else
                    invalid++;
            }
            if (!call.fully_valid)
                for (const auto& [fid, v] : values.items()) {
                    bool known = false;
                    for (const auto* f : feats) known = known || f->feature_id == fid;
                    if (!known) invalid++;
                }
        } catch (const ProviderError&) {
            failed++;
        }
    });

    AssignmentResult out;
    out.records = std::move(records);
    std::sort(out.records.begin(), out.records.end(),
              [](const auto& a, const auto& b) { return a.story_id < b.story_id; });
    std::size_t assigned = 0;
    for (const auto& r : out.records) {
        out.story_coverage[r.story_id] =
            static_cast<double>(r.values.size()) / static_cast<double>(total_features);
        assigned += r.values.size();
    }
    out.coverage = static_cast<double>(assigned) / static_cast<double>(n_stories * total_features);
    out.provider_calls = stats.provider_calls;
    out.retries = stats.retries;
    out.cache_hits = stats.cache_hits;
    out.failed_calls = failed;
    out.invalid_values = invalid;
    return out;
}

// ---------------------------------------------------------------------------
// repeatability
// ---------------------------------------------------------------------------

struct FeatureAgreement {
    std::string feature_id;
    double alpha = 0.0;
    double kappa = 0.0;
};

struct RepeatabilityReport {
    int runs = 0;
    std::vector<FeatureAgreement> per_feature;  // sorted by feature_id
    double pooled_alpha = 0.0;
    double pooled_kappa = 0.0;
    double mean_coverage = 0.0;

    Json to_json() const {
        Json feats = Json::array();
        for (const auto& f : per_feature)
            feats.push_back(Json{{"feature_id", f.feature_id}, {"alpha", f.alpha}, {"kappa", f.kappa}});
        return Json{{"runs", runs},
                    {"per_feature", feats},
                    {"pooled_alpha", pooled_alpha},
                    {"pooled_kappa", pooled_kappa},
                    {"mean_coverage", mean_coverage}};
    }
};

namespace detail {

/// Canonical nominal signature of an assignment value, so that "3" and 3 code
/// identically for a scale feature and multi-select sets compare as sets.
inline std::string value_signature(const taxonomy::FeatureDef& f, const Json& v) {
    using taxonomy::ResponseType;
    switch (f.response_type) {
        case ResponseType::categorical:
        case ResponseType::binary:
            return v.get<std::string>();
        case ResponseType::ordinal: {
            if (v.is_string()) {
                for (std::size_t i = 0; i < f.options.size(); ++i)
                    if (f.options[i] == v.get<std::string>()) return std::to_string(i);
                return v.get<std::string>();
            }
            return std::to_string(v.get<long>());
        }
        case ResponseType::scale:
            return v.is_string() ? std::to_string(std::stol(v.get<std::string>()))
                                 : std::to_string(v.get<long>());
        case ResponseType::multi_select: {
            std::vector<std::string> members = v.get<std::vector<std::string>>();
            std::sort(members.begin(), members.end());
            std::string sig;
            for (const auto& m : members) sig += m + "|";
            return sig;
        }
    }
    return std::string();
}

inline double mean_pairwise_kappa(const std::vector<std::vector<std::optional<int>>>& ratings, int runs) {
    double total = 0.0;
    int pairs = 0;
    for (int r1 = 0; r1 < runs; ++r1)
        for (int r2 = r1 + 1; r2 < runs; ++r2) {
            std::vector<int> a, b;
            for (const auto& unit : ratings)
                if (unit[static_cast<std::size_t>(r1)] && unit[static_cast<std::size_t>(r2)]) {
                    a.push_back(*unit[static_cast<std::size_t>(r1)]);
                    b.push_back(*unit[static_cast<std::size_t>(r2)]);
                }
            if (a.empty()) continue;
            total += metrics::cohen_kappa(a, b);
            pairs++;
        }
    return pairs == 0 ? std::numeric_limits<double>::quiet_NaN() : total / pairs;
}

inline double safe_alpha(const std::vector<std::vector<std::optional<int>>>& ratings) {
    try {
        return metrics::krippendorff_alpha_nominal(ratings);
    } catch (const Error&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

}  // namespace detail

/// Repeated-measures agreement: run assign_features `runs` times (each run
/// tagged so providers see distinct requests), code the answers nominally, and
/// report Krippendorff's alpha and mean pairwise Cohen's kappa per feature and
/// pooled over all (story, feature) units.
inline RepeatabilityReport repeatability(const corpus::Corpus& c, const taxonomy::Taxonomy& tax,
                                         Provider& provider, int runs = 5,
                                         const InductionOptions& opts = {}) {
    if (runs < 2) throw ConfigError("repeatability: runs must be >= 2");
    std::vector<AssignmentResult> run_results;
    run_results.reserve(static_cast<std::size_t>(runs));
    for (int r = 0; r < runs; ++r) {
        InductionOptions run_opts = opts;
        run_opts.run_tag = opts.run_tag.empty() ? "rep_" + std::to_string(r)
                                                : opts.run_tag + "_rep_" + std::to_string(r);
        run_results.push_back(assign_features(c, tax, provider, run_opts));
    }

    // Unified story list (assign_features sorts records by story_id).
    std::vector<std::string> story_ids;
    for (const auto& rec : run_results.front().records) story_ids.push_back(rec.story_id);
    std::vector<std::map<std::string, const encoding::AssignmentRecord*>> by_story(
        static_cast<std::size_t>(runs));
    for (int r = 0; r < runs; ++r)
        for (const auto& rec : run_results[static_cast<std::size_t>(r)].records)
            by_story[static_cast<std::size_t>(r)][rec.story_id] = &rec;

    RepeatabilityReport rep;
    rep.runs = runs;
    std::vector<std::vector<std::optional<int>>> pooled;
    int code_offset = 0;

    std::vector<const taxonomy::FeatureDef*> feats;
    for (const auto& f : tax.features) feats.push_back(&f);
    std::sort(feats.begin(), feats.end(),
              [](const auto* a, const auto* b) { return a->feature_id < b->feature_id; });

    for (const auto* f : feats) {
        std::map<std::string, int> codes;
        std::vector<std::vector<std::optional<int>>> ratings;
        for (const auto& sid : story_ids) {
            std::vector<std::optional<int>> unit(static_cast<std::size_t>(runs));
            for (int r = 0; r < runs; ++r) {
                const auto* rec = by_story[static_cast<std::size_t>(r)].count(sid)
                                      ? by_story[static_cast<std::size_t>(r)].at(sid)
                                      : nullptr;
                if (!rec) continue;
                auto it = rec->values.find(f->feature_id);
                if (it == rec->values.end() || it->second.is_null()) continue;
                const std::string sig = detail::value_signature(*f, it->second);
                auto [cit, inserted] = codes.emplace(sig, static_cast<int>(codes.size()));
                unit[static_cast<std::size_t>(r)] = cit->second;
            }
            ratings.push_back(std::move(unit));
        }
        FeatureAgreement fa;
        fa.feature_id = f->feature_id;
        fa.alpha = detail::safe_alpha(ratings);
        fa.kappa = detail::mean_pairwise_kappa(ratings, runs);
        rep.per_feature.push_back(fa);
        for (auto& unit : ratings) {
            for (auto& v : unit)
                if (v) v = *v + code_offset;
            pooled.push_back(std::move(unit));
        }
        code_offset += static_cast<int>(codes.size());
    }

    rep.pooled_alpha = detail::safe_alpha(pooled);
    rep.pooled_kappa = detail::mean_pairwise_kappa(pooled, runs);
    double cov = 0.0;
    for (const auto& rr : run_results) cov += rr.coverage;
    rep.mean_coverage = cov / static_cast<double>(runs);
    return rep;
}

}  // namespace storyscope::induction
