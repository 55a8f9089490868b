// Command-line entry point for the StoryScope toolkit.
//
// One subcommand per pipeline stage plus `all`, `synth` (fixture generator)
// and `eval` (replay scoring of exported matrices).  Precedence: built-in
// defaults < command-line flags < --config JSON.  Every run writes its
// artifacts under --out together with a manifest.json listing each output
// file with a SHA-256 content hash.

#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <string>

#include "storyscope/pipeline.hpp"

namespace {

using storyscope::Json;
namespace pl = storyscope::pipeline;

int exit_code_for(const storyscope::Error& e) {
    if (dynamic_cast<const storyscope::ConfigError*>(&e)) return 2;
    if (dynamic_cast<const storyscope::ParseError*>(&e)) return 3;
    if (dynamic_cast<const storyscope::ValidationError*>(&e)) return 4;
    if (dynamic_cast<const storyscope::TrainError*>(&e)) return 5;
    if (dynamic_cast<const storyscope::ProviderError*>(&e)) return 6;
    return 7;
}

const char* error_kind(const storyscope::Error& e) {
    if (dynamic_cast<const storyscope::ConfigError*>(&e)) return "config error";
    if (dynamic_cast<const storyscope::ParseError*>(&e)) return "parse error";
    if (dynamic_cast<const storyscope::ValidationError*>(&e)) return "validation error";
    if (dynamic_cast<const storyscope::TrainError*>(&e)) return "train error";
    if (dynamic_cast<const storyscope::ProviderError*>(&e)) return "provider error";
    return "error";
}

/// Mutable state shared by all run-style subcommands.
struct RunArgs {
    pl::RunConfig cfg;
    std::string corpus, taxonomy, assignments, roles, out, variant = "all", config_path;
};

/// Stage toggles implied by each subcommand (dependencies included).
pl::StageToggles toggles_for(const std::string& name) {
    pl::StageToggles t;
    t.encode = t.train = t.shap = t.roles = t.geometry = t.rarity = false;
    t.audit = t.length = t.baselines = t.induction = false;
    if (name == "all") {
        t = pl::StageToggles{};
        t.induction = true;
    } else if (name == "encode") {
        t.encode = true;
    } else if (name == "train") {
        t.encode = t.train = true;
    } else if (name == "shap") {
        t.encode = t.train = t.shap = true;
    } else if (name == "roles") {
        t.encode = t.roles = true;
    } else if (name == "geometry") {
        t.encode = t.geometry = true;
    } else if (name == "rarity") {
        t.encode = t.rarity = true;
    } else if (name == "audit") {
        t.audit = true;
    } else if (name == "length") {
        t.length = true;
    } else if (name == "baselines") {
        t.baselines = true;
    } else if (name == "induce") {
        t.induction = true;
    }
    // "ingest" and "split" always run; they need no extra toggles.
    return t;
}

/// Attach the flags shared by every run-style subcommand.
void add_run_flags(CLI::App* cmd, RunArgs& a) {
    cmd->add_option("--corpus", a.corpus, "Story corpus (JSONL)");
    cmd->add_option("--taxonomy", a.taxonomy, "Feature taxonomy (JSON)");
    cmd->add_option("--assignments", a.assignments, "Feature assignments (JSONL)");
    cmd->add_option("--roles-report", a.roles, "roles.json from a previous run (core_* variants)");
    cmd->add_option("--out", a.out, "Output directory (manifest.json plus stage artifacts)");
    cmd->add_option("--variant", a.variant,
                    "Taxonomy variant: all, narrative, style_only, core_only, core_plus_fingerprint");
    cmd->add_option("--task", a.cfg.task, "Detection task: binary or multiclass");
    cmd->add_option("--config", a.config_path,
                    "Run-config JSON; values here override flags and defaults");
    cmd->add_option("--threads", a.cfg.threads, "Worker-thread bound for all stages");

    cmd->add_option("--n-estimators", a.cfg.train.n_estimators, "Detection model: boosting rounds");
    cmd->add_option("--max-depth", a.cfg.train.max_depth, "Detection model: tree depth");
    cmd->add_option("--lambda", a.cfg.train.lambda, "Detection model: L2 leaf penalty");
    cmd->add_option("--learning-rate", a.cfg.train.learning_rate, "Detection model: shrinkage");
    cmd->add_option("--scale-pos-weight", a.cfg.train.scale_pos_weight,
                    "Detection model: positive-class weight");
    cmd->add_option("--train-seed", a.cfg.train.seed, "Detection model: RNG seed");

    cmd->add_option("--train-frac", a.cfg.train_frac, "Prompt share for the training part");
    cmd->add_option("--val-frac", a.cfg.val_frac, "Prompt share for the validation part");
    cmd->add_option("--test-frac", a.cfg.test_frac, "Prompt share for the test part");
    cmd->add_option("--split-seed", a.cfg.split_seed, "Prompt-split RNG seed");
    cmd->add_option("--roles-seed", a.cfg.roles_seed, "Bootstrap/permutation RNG seed");
    cmd->add_option("--length-seed", a.cfg.length_seed, "Length-matching RNG seed");
    cmd->add_option("--provider-seed", a.cfg.provider_seed, "Induction provider RNG seed");

    cmd->add_option("--bootstrap-B", a.cfg.bootstrap_B, "Bootstrap resamples for role analysis");
    cmd->add_option("--null-permutations", a.cfg.null_permutations,
                    "Label permutations for the importance null");
    cmd->add_option("--rarity-k", a.cfg.rarity.k, "k for k-NN rarity scores");
    cmd->add_option("--tfidf-k", a.cfg.tfidf_k, "TF-IDF vocabulary size");
    cmd->add_option("--shap-row-cap", a.cfg.shap_row_cap, "Max rows explained by SHAP");
    cmd->add_option("--provider", a.cfg.provider,
                    "Induction provider (this build runs only \"mock\"; live credentials would be "
                    "read from the STORYSCOPE_PROVIDER_TOKEN environment variable, never flags)");
    cmd->add_option("--induce-story-cap", a.cfg.induce_story_cap,
                    "Max stories handed to the induction provider");
    cmd->add_option("--induce-runs", a.cfg.induce_runs, "Repeatability runs for induction");
}

/// Fold flag values and, on top of them, the optional config file into cfg.
pl::RunConfig finalize(const RunArgs& a, const std::string& subcommand) {
    pl::RunConfig cfg = a.cfg;
    cfg.corpus_path = a.corpus;
    cfg.taxonomy_path = a.taxonomy;
    cfg.assignments_path = a.assignments;
    cfg.roles_path = a.roles;
    cfg.out_dir = a.out;
    cfg.variant = storyscope::taxonomy::parse_variant(a.variant);
    cfg.stages = toggles_for(subcommand);
    if (!a.config_path.empty()) {
        Json merged = cfg.to_json();
        merged.update(storyscope::load_json(a.config_path), /*merge_objects=*/true);
        cfg = pl::RunConfig::from_json(merged);
    }
    return cfg;
}

int do_run(const RunArgs& a, const std::string& subcommand) {
    auto result = pl::run(finalize(a, subcommand));
    std::printf("wrote %s (%zu stage%s complete)\n", result.manifest_path.string().c_str(),
                result.stage_order.size(), result.stage_order.size() == 1 ? "" : "s");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"StoryScope: taxonomy-based analysis of human and machine stories"};
    app.require_subcommand(1);

    RunArgs args;
    const char* run_stages[] = {"ingest",   "split",  "encode",    "train", "shap",
                                "roles",    "geometry", "rarity",  "audit", "length",
                                "baselines", "induce", "all"};
    const char* descriptions[] = {
        "Load and validate the corpus",
        "Split prompts into train/val/test",
        "Encode assignments into the numeric feature matrix",
        "Train the detection model and score held-out prompts",
        "Explain the detection model with exact SHAP values",
        "Bootstrap feature roles and per-source fingerprints",
        "Project stories and measure centroid geometry",
        "Score k-NN rarity against the human reference",
        "Audit prompt-matched story pairs for text overlap",
        "Length-match the corpus and fit the length-only baseline",
        "Run stylometric and TF-IDF baselines",
        "Run taxonomy induction against the mock provider",
        "Run every stage in dependency order",
    };
    std::map<std::string, CLI::App*> cmds;
    for (std::size_t i = 0; i < std::size(run_stages); ++i) {
        CLI::App* c = app.add_subcommand(run_stages[i], descriptions[i]);
        add_run_flags(c, args);
        cmds[run_stages[i]] = c;
    }

    // synth: write a planted-feature fixture (corpus, taxonomy, assignments, truth).
    pl::SyntheticConfig synth_cfg;
    std::string synth_out;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic planted-feature corpus");
    synth->add_option("--out", synth_out, "Directory for the fixture files")->required();
    synth->add_option("--prompts", synth_cfg.n_prompts, "Number of prompts (6 stories each)");
    synth->add_option("--core", synth_cfg.n_core, "Planted core features");
    synth->add_option("--fingerprints", synth_cfg.n_fingerprint, "Planted fingerprint features");
    synth->add_option("--noise", synth_cfg.n_noise, "Unshifted noise features");
    synth->add_option("--shift-scale", synth_cfg.shift_scale, "Multiplier on every planted shift");
    synth->add_option("--fingerprint-shift", synth_cfg.fingerprint_shift,
                      "Per-source shift, in noise SDs");
    synth->add_option("--noise-sd", synth_cfg.noise_sd, "Response noise SD on the 1..7 scale");
    synth->add_option("--seed", synth_cfg.seed, "Generator seed");

    // eval: replay scoring of an exported matrix with a saved model.
    std::string eval_features, eval_corpus, eval_model, eval_task = "binary", eval_out;
    int eval_threads = 1;
    CLI::App* eval = app.add_subcommand(
        "eval", "Re-score an exported feature matrix with a saved model (replay mode)");
    eval->add_option("--features", eval_features, "features.csv from a previous run")->required();
    eval->add_option("--corpus", eval_corpus, "Corpus JSONL supplying the true labels")->required();
    eval->add_option("--model", eval_model, "model.json from a previous run")->required();
    eval->add_option("--task", eval_task, "binary or multiclass");
    eval->add_option("--out", eval_out, "Optional directory for replay_eval.json");
    eval->add_option("--threads", eval_threads, "Worker-thread bound");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            auto written = pl::write_synthetic(synth_out, pl::make_synthetic(synth_cfg));
            for (const auto& p : written) std::printf("wrote %s\n", p.string().c_str());
            return 0;
        }
        if (eval->parsed()) {
            Json report = pl::replay_eval(eval_features, eval_corpus, eval_model, eval_task,
                                          eval_threads);
            if (!eval_out.empty()) {
                std::filesystem::create_directories(eval_out);
                storyscope::save_json(std::filesystem::path(eval_out) / "replay_eval.json", report);
            }
            std::printf("%s\n", report.dump(2).c_str());
            return 0;
        }
        for (const auto& [name, cmd] : cmds)
            if (cmd->parsed()) return do_run(args, name);
    } catch (const storyscope::Error& e) {
        std::fprintf(stderr, "storyscope: %s: %s\n", error_kind(e), e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "storyscope: unexpected error: %s\n", e.what());
        return 1;
    }
    return 0;
}
