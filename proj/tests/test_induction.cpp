#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "storyscope/corpus.hpp"
#include "storyscope/encoding.hpp"
#include "storyscope/errors.hpp"
#include "storyscope/induction.hpp"
#include "storyscope/metrics.hpp"
#include "storyscope/taxonomy.hpp"

using namespace storyscope;
using namespace storyscope::induction;
using Catch::Approx;

namespace {

/// n_prompts x sources corpus with innocuous token texts (no source names).
corpus::Corpus mk_corpus(std::size_t n_prompts, const std::vector<std::string>& sources,
                         std::size_t words = 30) {
    corpus::Corpus c;
    for (std::size_t p = 0; p < n_prompts; ++p) {
        const std::string pid = "p" + std::to_string(p);
        corpus::PromptGroup g{pid, {}};
        for (const auto& src : sources) {
            std::string text;
            for (std::size_t w = 0; w < words; ++w)
                text += "w" + std::to_string(p) + "x" + std::to_string(w) + " ";
            g.story_indices.push_back(c.stories.size());
            c.stories.push_back({pid + "_" + src, pid, src, text, static_cast<std::int64_t>(words)});
        }
        c.prompts.push_back(std::move(g));
    }
    return c;
}

taxonomy::FeatureDef mk_feature(const std::string& id, const std::string& dim,
                                taxonomy::ResponseType rt, std::vector<std::string> options) {
    taxonomy::FeatureDef f;
    f.feature_id = id;
    f.name = id + " name";
    f.question = "Is " + id + " present?";
    f.dimension = dim;
    f.response_type = rt;
    f.options = std::move(options);
    return f;
}

/// Five features over three dimensions, one of each response type.
taxonomy::Taxonomy mk_taxonomy() {
    taxonomy::Taxonomy tax;
    tax.version = "test";
    tax.features.push_back(mk_feature("f1", "agent", taxonomy::ResponseType::binary, {"no", "yes"}));
    tax.features.push_back(
        mk_feature("f2", "agent", taxonomy::ResponseType::categorical, {"low", "mid", "high"}));
    tax.features.push_back(
        mk_feature("f3", "style", taxonomy::ResponseType::scale, {"1", "2", "3", "4", "5"}));
    tax.features.push_back(
        mk_feature("f4", "style", taxonomy::ResponseType::multi_select, {"a", "b", "c"}));
    tax.features.push_back(
        mk_feature("f5", "event", taxonomy::ResponseType::ordinal, {"first", "second", "third"}));
    return tax;
}

std::size_t forbidden_occurrences(const std::vector<ProviderRequest>& log,
                                  const std::vector<std::string>& forbidden) {
    std::size_t n = 0;
    for (const auto& req : log)
        for (const auto& m : req.messages)
            for (const auto& tok : forbidden) {
                std::size_t pos = 0;
                while ((pos = m.content.find(tok, pos)) != std::string::npos) {
                    ++n;
                    pos += tok.size();
                }
            }
    return n;
}

InductionOptions fast_opts(std::uint64_t seed = 7) {
    InductionOptions o;
    o.seed = seed;
    o.backoff_ms = 0;
    return o;
}

std::filesystem::path fresh_tmp_dir(const std::string& leaf) {
    auto dir = std::filesystem::temp_directory_path() / ("storyscope_test_" + leaf);
    std::filesystem::remove_all(dir);
    return dir;
}

double pooled_pairwise_kappa(const std::vector<std::vector<std::optional<int>>>& ratings, int runs) {
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
            total += metrics::cohen_kappa(a, b);
            pairs++;
        }
    return total / pairs;
}

}  // namespace

TEST_CASE("token estimate is ceil of chars over four", "[induction]") {
    CHECK(token_estimate("") == 0);
    CHECK(token_estimate("abcd") == 1);
    CHECK(token_estimate("abcde") == 2);
    CHECK(token_estimate(std::string(8, 'x')) == 2);
    CHECK(token_estimate(std::string(9, 'x')) == 3);
}

TEST_CASE("first-fit-decreasing batching matches the hand trace", "[induction]") {
    auto batches = batch_prompts({{"a", 6000}, {"b", 5000}, {"c", 4000}, {"d", 3000}}, 10000);
    REQUIRE(batches.size() == 2);
    CHECK(batches[0].prompt_ids == std::vector<std::string>{"a", "c"});
    CHECK(batches[0].token_estimate == 10000);
    CHECK(batches[1].prompt_ids == std::vector<std::string>{"b", "d"});
    CHECK(batches[1].token_estimate == 8000);

    SECTION("single prompt forms a single batch") {
        auto one = batch_prompts({{"solo", 123}}, 10000);
        REQUIRE(one.size() == 1);
        CHECK(one[0].prompt_ids == std::vector<std::string>{"solo"});
    }
    SECTION("sizes equal to the budget get one prompt per batch") {
        auto full = batch_prompts({{"a", 100}, {"b", 100}, {"c", 100}}, 100);
        REQUIRE(full.size() == 3);
        for (const auto& b : full) CHECK(b.prompt_ids.size() == 1);
    }
    SECTION("an oversize prompt is rejected") {
        CHECK_THROWS_AS(batch_prompts({{"big", 10001}}, 10000), ConfigError);
    }
    SECTION("batching is deterministic") {
        auto again = batch_prompts({{"a", 6000}, {"b", 5000}, {"c", 4000}, {"d", 3000}}, 10000);
        REQUIRE(again.size() == batches.size());
        for (std::size_t i = 0; i < again.size(); ++i)
            CHECK(again[i].prompt_ids == batches[i].prompt_ids);
    }
}

TEST_CASE("presentation order is a seeded permutation", "[induction]") {
    auto order = presentation_order(50, 11);
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
    CHECK(presentation_order(50, 11) == order);
    CHECK(presentation_order(50, 12) != order);
}

TEST_CASE("template extraction yields one valid template per story", "[induction]") {
    auto c = mk_corpus(5, {"human", "gpt"});
    // A word-count-only record must be skipped, not break the stage.
    c.prompts[0].story_indices.push_back(c.stories.size());
    c.stories.push_back({"p0_hidden", "p0", "claude", std::nullopt, 500});

    MockProvider mock;
    auto rep = extract_templates(c, mock, fast_opts());
    REQUIRE(rep.templates.size() == 10);
    CHECK(rep.provider_calls == 10);
    CHECK(rep.retries == 0);
    CHECK(rep.cache_hits == 0);
    CHECK(mock.call_count() == 10);
    for (std::size_t i = 1; i < rep.templates.size(); ++i)
        CHECK(rep.templates[i - 1].story_id < rep.templates[i].story_id);
    for (const auto& t : rep.templates) {
        REQUIRE(t.dimensions.is_object());
        for (const auto& d : dimensions()) {
            REQUIRE(t.dimensions.contains(d));
            CHECK(t.dimensions.at(d).is_object());
        }
    }

    SECTION("the run is deterministic for a fixed seed") {
        MockProvider mock2;
        auto rep2 = extract_templates(c, mock2, fast_opts());
        CHECK(rep2.to_json() == rep.to_json());
    }
    SECTION("a corpus without any text is rejected") {
        corpus::Corpus empty;
        empty.prompts.push_back({"p0", {0}});
        empty.stories.push_back({"s0", "p0", "human", std::nullopt, 100});
        MockProvider m;
        CHECK_THROWS_AS(extract_templates(empty, m, fast_opts()), ConfigError);
    }
}

TEST_CASE("template extraction retries malformed responses and logs the count", "[induction]") {
    auto c = mk_corpus(1, {"human"});
    MockConfig cfg;
    cfg.malformed_first = 2;
    MockProvider mock(cfg);
    auto opts = fast_opts();
    opts.retries = 3;
    auto rep = extract_templates(c, mock, opts);
    REQUIRE(rep.templates.size() == 1);
    CHECK(rep.retries == 2);
    CHECK(rep.provider_calls == 3);
    CHECK(mock.call_count() == 3);

    SECTION("exhausting the retry budget is a stage error") {
        MockConfig bad;
        bad.malformed_first = 10;
        MockProvider noisy(bad);
        CHECK_THROWS_AS(extract_templates(c, noisy, opts), ProviderError);
        CHECK(noisy.call_count() == 4);  // 1 attempt + 3 retries
    }
}

TEST_CASE("outbound payloads never contain source identifiers", "[induction]") {
    const std::vector<std::string> sources = {"alpha_model", "beta_model", "gamma_pen"};
    auto c = mk_corpus(4, sources);
    auto opts = fast_opts();
    opts.forbidden_tokens = sources;

    MockProvider mock;
    auto templates = extract_templates(c, mock, opts);
    auto analyses = comparative_analysis(c, mock, opts);
    auto discovered = discover_features(analyses.batches, mock, 2, opts);
    taxonomy::Taxonomy tax = mk_taxonomy();
    auto assigned = assign_features(c, tax, mock, opts);

    CHECK(templates.templates.size() == 12);
    CHECK(assigned.coverage == 1.0);
    CHECK(discovered.candidates.size() == 20);
    CHECK(forbidden_occurrences(mock.log(), sources) == 0);

    SECTION("a story whose text leaks a forbidden token fails loudly") {
        auto leaky = mk_corpus(2, sources);
        *leaky.stories[0].text += " alpha_model wrote this";
        MockProvider m;
        CHECK_THROWS_AS(extract_templates(leaky, m, opts), ValidationError);
    }
}

TEST_CASE("template presentation order is seeded and reproducible", "[induction]") {
    auto c = mk_corpus(5, {"human", "gpt"});
    auto payload_texts = [](const MockProvider& mock) {
        std::vector<std::string> texts;
        for (const auto& req : mock.log()) texts.push_back(req.messages.back().content);
        return texts;
    };
    MockProvider m1, m2, m3;
    extract_templates(c, m1, fast_opts(21));
    extract_templates(c, m2, fast_opts(21));
    extract_templates(c, m3, fast_opts(22));
    CHECK(payload_texts(m1) == payload_texts(m2));
    CHECK(payload_texts(m1) != payload_texts(m3));
}

TEST_CASE("request cache replays a stage with zero provider calls", "[induction]") {
    auto dir = fresh_tmp_dir("cache");
    auto c = mk_corpus(5, {"human", "gpt"});
    {
        RequestCache cache(dir);
        auto opts = fast_opts();
        opts.cache = &cache;

        MockProvider cold;
        auto rep1 = extract_templates(c, cold, opts);
        CHECK(cold.call_count() == 10);
        CHECK(rep1.cache_hits == 0);
        CHECK(cache.size() == 10);

        MockProvider warm;
        auto rep2 = extract_templates(c, warm, opts);
        CHECK(warm.call_count() == 0);
        CHECK(rep2.provider_calls == 0);
        CHECK(rep2.cache_hits == 10);
        CHECK(rep2.to_json().at("templates") == rep1.to_json().at("templates"));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("cache keys canonicalize the whole request", "[induction]") {
    ProviderRequest a;
    a.schema_id = "story_template";
    a.messages = {{"system", "inst"}, {"user", "payload"}};
    ProviderRequest b = a;
    CHECK(a.cache_key() == b.cache_key());
    b.messages[1].content = "payload!";
    CHECK(a.cache_key() != b.cache_key());
    b = a;
    b.schema_id = "feature_discovery";
    CHECK(a.cache_key() != b.cache_key());
    b = a;
    b.effort = "high";
    CHECK(a.cache_key() != b.cache_key());

    SECTION("the store survives garbage entries and round trips responses") {
        auto dir = fresh_tmp_dir("cache_store");
        {
            RequestCache cache(dir);
            CHECK_FALSE(cache.get("0000").has_value());
            ProviderResponse resp;
            resp.text = "{\"ok\":true}";
            resp.tokens_in = 5;
            resp.tokens_out = 3;
            cache.put(a.cache_key(), a, resp);
            auto got = cache.get(a.cache_key());
            REQUIRE(got.has_value());
            CHECK(got->text == resp.text);
            CHECK(got->tokens_in == 5);
            CHECK(got->tokens_out == 3);
            write_file(dir / "broken.json", "not json at all {{{");
            CHECK_FALSE(cache.get("broken").has_value());
        }
        std::filesystem::remove_all(dir);
    }
}

TEST_CASE("comparative analysis batches prompts under the token budget", "[induction]") {
    // One story per prompt with text sized to hit the FFD hand trace:
    // estimates 6000/5000/4000/3000 tokens against a 10000 budget.
    corpus::Corpus c;
    const std::vector<std::size_t> token_sizes = {6000, 5000, 4000, 3000};
    for (std::size_t p = 0; p < token_sizes.size(); ++p) {
        const std::string pid = "p" + std::to_string(p);
        c.prompts.push_back({pid, {c.stories.size()}});
        c.stories.push_back({pid + "_human", pid, "human", std::string(token_sizes[p] * 4, 'x'), 1});
    }
    MockProvider mock;
    auto opts = fast_opts();
    opts.token_budget = 10000;
    auto rep = comparative_analysis(c, mock, opts);
    REQUIRE(rep.batches.size() == 2);
    CHECK(rep.batches[0].prompt_ids == std::vector<std::string>{"p0", "p2"});
    CHECK(rep.batches[1].prompt_ids == std::vector<std::string>{"p1", "p3"});
    CHECK(rep.batches[0].token_estimate == 10000);
    CHECK(rep.batches[1].token_estimate == 8000);
    CHECK(rep.mean_prompts_per_batch == Approx(2.0));
    for (const auto& b : rep.batches) {
        CHECK(b.token_estimate <= opts.token_budget);
        REQUIRE(b.analysis.contains("per_source"));
        REQUIRE(b.analysis.contains("comparisons"));
        REQUIRE(b.analysis.at("executive_summary").is_string());
    }

    SECTION("small corpora fit one batch and stay deterministic") {
        auto small = mk_corpus(4, {"human", "gpt"});
        MockProvider m1, m2;
        auto r1 = comparative_analysis(small, m1, fast_opts(5));
        auto r2 = comparative_analysis(small, m2, fast_opts(5));
        REQUIRE(r1.batches.size() == 1);
        CHECK(r1.batches[0].prompt_ids.size() == 4);
        CHECK(r1.mean_prompts_per_batch == Approx(4.0));
        CHECK(r1.to_json() == r2.to_json());
    }
}

TEST_CASE("feature discovery unions candidates by exact name and question", "[induction]") {
    auto c = mk_corpus(3, {"human", "gpt"});
    MockProvider mock;
    auto analyses = comparative_analysis(c, mock, fast_opts());

    SECTION("identical runs collapse to one set") {
        MockProvider m;
        auto res = discover_features(analyses.batches, m, 3, fast_opts());
        CHECK(res.candidates.size() == 20);
        CHECK(res.provider_calls == 30);
        CHECK(res.failed_calls == 0);
        for (const auto& d : dimensions()) {
            CHECK(res.runs_completed.at(d) == 3);
            std::size_t in_dim = 0;
            for (const auto& cand : res.candidates)
                if (cand.def.dimension == d) ++in_dim;
            CHECK(in_dim == 2);
        }
        std::set<std::string> ids;
        for (const auto& cand : res.candidates) ids.insert(cand.def.feature_id);
        CHECK(ids.size() == res.candidates.size());
        CHECK(ids.count("agent_feature_0") == 1);

        MockProvider again;
        auto res2 = discover_features(analyses.batches, again, 3, fast_opts());
        REQUIRE(res2.candidates.size() == res.candidates.size());
        for (std::size_t i = 0; i < res.candidates.size(); ++i)
            CHECK(res2.candidates[i].def.feature_id == res.candidates[i].def.feature_id);
    }
    SECTION("run-indexed names survive the union") {
        MockConfig cfg;
        cfg.run_indexed_names = true;
        MockProvider m(cfg);
        auto res = discover_features(analyses.batches, m, 3, fast_opts());
        CHECK(res.candidates.size() == 60);
    }
    SECTION("a failed run is tolerated when the other runs cover the dimension") {
        MockConfig cfg;
        cfg.malformed_first = 10;  // exactly run 0: ten dimension calls
        MockProvider m(cfg);
        auto opts = fast_opts();
        opts.retries = 0;
        auto res = discover_features(analyses.batches, m, 3, opts);
        CHECK(res.failed_calls == 10);
        for (const auto& d : dimensions()) CHECK(res.runs_completed.at(d) == 2);
        CHECK(res.candidates.size() == 20);
    }
    SECTION("a dimension with no completed run fails the stage") {
        MockConfig cfg;
        cfg.malformed_first = 1000;
        MockProvider m(cfg);
        auto opts = fast_opts();
        opts.retries = 0;
        CHECK_THROWS_AS(discover_features(analyses.batches, m, 3, opts), ProviderError);
    }
}

TEST_CASE("feature assignment reaches full coverage with the canned mock", "[induction]") {
    auto c = mk_corpus(4, {"human", "gpt"});
    auto tax = mk_taxonomy();
    MockProvider mock;
    auto res = assign_features(c, tax, mock, fast_opts());
    REQUIRE(res.records.size() == 8);
    CHECK(res.coverage == 1.0);
    CHECK(res.failed_calls == 0);
    CHECK(res.invalid_values == 0);
    CHECK(res.provider_calls == 8 * 3);  // three dimensions in the taxonomy
    for (const auto& [sid, cov] : res.story_coverage) CHECK(cov == 1.0);
    for (std::size_t i = 1; i < res.records.size(); ++i)
        CHECK(res.records[i - 1].story_id < res.records[i].story_id);

    // The records must encode cleanly against the taxonomy's column map.
    auto cmap = encoding::build_column_map(tax);
    auto encoded = encoding::encode(res.records, cmap);
    CHECK(encoded.n_missing == 0);
    CHECK(encoded.matrix.rows == 8);

    SECTION("results are identical across thread counts and run tags") {
        MockProvider m1, m2, m3;
        auto opts1 = fast_opts();
        opts1.threads = 3;
        auto r1 = assign_features(c, tax, m1, opts1);
        auto opts2 = fast_opts();
        opts2.run_tag = "alpha";
        auto r2 = assign_features(c, tax, m2, opts2);
        auto opts3 = fast_opts();
        opts3.run_tag = "beta";
        auto r3 = assign_features(c, tax, m3, opts3);
        Json base = Json::array();
        for (const auto& r : res.records) base.push_back(Json{{"s", r.story_id}, {"v", r.values}});
        auto dump = [](const AssignmentResult& r) {
            Json arr = Json::array();
            for (const auto& rec : r.records) arr.push_back(Json{{"s", rec.story_id}, {"v", rec.values}});
            return arr;
        };
        CHECK(dump(r1) == base);
        CHECK(dump(r2) == base);
        CHECK(dump(r3) == base);
    }
}

TEST_CASE("dropped dimensions surface as missing values", "[induction]") {
    auto c = mk_corpus(4, {"human", "gpt"});
    auto tax = mk_taxonomy();
    MockConfig cfg;
    cfg.drop_dimensions = {"style"};  // two of the five features
    MockProvider mock(cfg);
    auto res = assign_features(c, tax, mock, fast_opts());
    CHECK(res.coverage == Approx(3.0 / 5.0));
    for (const auto& [sid, cov] : res.story_coverage) CHECK(cov == Approx(3.0 / 5.0));
    for (const auto& rec : res.records) {
        CHECK(rec.values.count("f3") == 0);
        CHECK(rec.values.count("f4") == 0);
        CHECK(rec.values.count("f1") == 1);
    }
    auto encoded = encoding::encode(res.records, encoding::build_column_map(tax));
    CHECK(encoded.n_missing == 8 * 2);
}

namespace {

/// Provider that answers the agent dimension with one illegal value and one
/// unknown feature id, and everything else correctly.
class BadValueProvider : public Provider {
public:
    std::string name() const override { return "bad-values"; }
    ProviderResponse complete(const ProviderRequest& req) override {
        Json payload = Json::parse(req.messages.back().content);
        Json values = Json::object();
        for (const auto& f : payload.at("features")) {
            const std::string fid = f.at("feature_id").get<std::string>();
            const auto options = f.at("options").get<std::vector<std::string>>();
            if (fid == "f2")
                values[fid] = "ILLEGAL";
            else if (f.at("response_type") == "multi_select")
                values[fid] = Json::array({options.front()});
            else
                values[fid] = options.front();
        }
        if (payload.at("dimension") == "agent") values["ghost"] = "boo";
        ProviderResponse resp;
        resp.text = Json{{"values", values}}.dump();
        return resp;
    }
};

/// Provider that fails transport for one dimension and delegates otherwise.
class FlakyDimensionProvider : public Provider {
public:
    std::string name() const override { return "flaky"; }
    ProviderResponse complete(const ProviderRequest& req) override {
        Json payload = Json::parse(req.messages.back().content);
        if (payload.value("dimension", std::string()) == "event")
            throw ProviderError("simulated transport failure");
        return inner_.complete(req);
    }

private:
    MockProvider inner_;
};

}  // namespace

TEST_CASE("invalid values are retried and then recorded missing", "[induction]") {
    auto c = mk_corpus(4, {"human", "gpt"});
    auto tax = mk_taxonomy();
    BadValueProvider provider;
    auto opts = fast_opts();
    opts.retries = 2;
    auto res = assign_features(c, tax, provider, opts);
    CHECK(res.coverage == Approx(4.0 / 5.0));
    for (const auto& rec : res.records) {
        CHECK(rec.values.count("f2") == 0);   // illegal option dropped
        CHECK(rec.values.count("f1") == 1);   // valid sibling kept
        CHECK(rec.values.count("ghost") == 0);
    }
    CHECK(res.invalid_values == 8 * 2);  // illegal f2 plus unknown ghost, per story
    CHECK(res.retries == 8 * 2);         // agent calls exhaust both retries
    CHECK(res.failed_calls == 0);
}

TEST_CASE("transport failures are per-call and non-fatal in assignment", "[induction]") {
    auto c = mk_corpus(4, {"human", "gpt"});
    auto tax = mk_taxonomy();
    FlakyDimensionProvider provider;
    auto opts = fast_opts();
    opts.retries = 1;
    auto res = assign_features(c, tax, provider, opts);
    CHECK(res.failed_calls == 8);
    CHECK(res.coverage == Approx(4.0 / 5.0));  // the ordinal event feature is missing
    for (const auto& rec : res.records) CHECK(rec.values.count("f5") == 0);
}

TEST_CASE("assignment validates the taxonomy before calling anyone", "[induction]") {
    auto c = mk_corpus(2, {"human"});
    MockProvider mock;
    taxonomy::Taxonomy bad;
    bad.features.push_back(mk_feature("b", "agent", taxonomy::ResponseType::binary, {"yes"}));
    CHECK_THROWS_AS(assign_features(c, bad, mock, fast_opts()), ValidationError);
    CHECK(mock.call_count() == 0);
    taxonomy::Taxonomy empty;
    CHECK_THROWS_AS(assign_features(c, empty, mock, fast_opts()), ConfigError);
}

TEST_CASE("repeatability of a deterministic provider is perfect", "[induction]") {
    auto c = mk_corpus(3, {"human", "gpt"});
    auto tax = mk_taxonomy();
    MockProvider mock;
    auto rep = repeatability(c, tax, mock, 3, fast_opts());
    CHECK(rep.runs == 3);
    CHECK(rep.pooled_alpha == 1.0);
    CHECK(rep.pooled_kappa == 1.0);
    CHECK(rep.mean_coverage == 1.0);
    REQUIRE(rep.per_feature.size() == 5);
    for (const auto& f : rep.per_feature) {
        CHECK(f.alpha == 1.0);
        CHECK(f.kappa == 1.0);
    }
    for (std::size_t i = 1; i < rep.per_feature.size(); ++i)
        CHECK(rep.per_feature[i - 1].feature_id < rep.per_feature[i].feature_id);

    SECTION("fewer than two runs is a config error") {
        CHECK_THROWS_AS(repeatability(c, tax, mock, 1, fast_opts()), ConfigError);
    }
}

TEST_CASE("flip noise lands in the band predicted by direct simulation", "[induction]") {
    // 300 stories x 8 binary features, five runs, 10% flips per answer.
    corpus::Corpus c;
    for (std::size_t p = 0; p < 300; ++p) {
        std::string pid = std::to_string(p);
        pid = "p" + std::string(3 - pid.size(), '0') + pid;
        c.prompts.push_back({pid, {c.stories.size()}});
        c.stories.push_back({pid + "_human", pid, "human", "story text " + pid, 3});
    }
    taxonomy::Taxonomy tax;
    for (int f = 0; f < 8; ++f)
        tax.features.push_back(
            mk_feature("b" + std::to_string(f), "agent", taxonomy::ResponseType::binary, {"no", "yes"}));

    MockConfig cfg;
    cfg.flip_rate = 0.10;
    cfg.seed = 33;
    MockProvider mock(cfg);
    const int runs = 5;
    auto rep = repeatability(c, tax, mock, runs, fast_opts());
    CHECK(rep.pooled_alpha < 0.95);  // the noise channel must actually bite

    // Direct simulation of the same process: a fixed base answer per unit,
    // each run flipping it independently with p = 0.1; codes offset per
    // feature exactly as the pooled report does.
    std::mt19937 gen(987654);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double alpha_sum = 0.0, kappa_sum = 0.0;
    const int reps = 50;
    for (int rep_i = 0; rep_i < reps; ++rep_i) {
        std::vector<std::vector<std::optional<int>>> ratings;
        for (int f = 0; f < 8; ++f)
            for (int s = 0; s < 300; ++s) {
                const int base = unif(gen) < 0.5 ? 0 : 1;
                std::vector<std::optional<int>> unit;
                for (int r = 0; r < runs; ++r) {
                    const int v = unif(gen) < 0.10 ? 1 - base : base;
                    unit.push_back(2 * f + v);
                }
                ratings.push_back(std::move(unit));
            }
        alpha_sum += metrics::krippendorff_alpha_nominal(ratings);
        kappa_sum += pooled_pairwise_kappa(ratings, runs);
    }
    const double alpha_expected = alpha_sum / reps;
    const double kappa_expected = kappa_sum / reps;
    CHECK(rep.pooled_alpha == Approx(alpha_expected).margin(0.03));
    CHECK(rep.pooled_kappa == Approx(kappa_expected).margin(0.03));
}

TEST_CASE("provider config and templates round trip through json", "[induction]") {
    ProviderConfig cfg;
    cfg.endpoint = "https://example.invalid/v1";
    cfg.model = "some-model";
    cfg.auth_env = "API_KEY";
    cfg.effort = "high";
    auto back = ProviderConfig::from_json(cfg.to_json());
    CHECK(back.endpoint == cfg.endpoint);
    CHECK(back.model == cfg.model);
    CHECK(back.auth_env == cfg.auth_env);
    CHECK(back.effort == cfg.effort);

    StoryTemplate t;
    t.story_id = "s1";
    t.dimensions = Json::object();
    for (const auto& d : dimensions()) t.dimensions[d] = Json::object();
    auto t2 = StoryTemplate::from_json(t.to_json());
    CHECK(t2.story_id == "s1");
    CHECK(t2.dimensions == t.dimensions);

    SECTION("template validation demands all ten dimensions") {
        Json j = Json{{"dimensions", t.dimensions}};
        CHECK_NOTHROW(validate_template_json(j));
        j["dimensions"].erase("style");
        CHECK_THROWS_AS(validate_template_json(j), ValidationError);
        Json flat = Json{{"dimensions", t.dimensions}};
        flat["dimensions"]["agent"] = "not an object";
        CHECK_THROWS_AS(validate_template_json(flat), ValidationError);
    }
}
