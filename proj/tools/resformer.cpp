// Command-line entry point: data generation, training, evaluation,
// gradient checking, and the scaling benchmark.

#include "resformer/commands.hpp"
#include "resformer/config.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int guarded(const std::function<int()>& body) {
    using namespace resformer;
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return cmd::kExitConfig;
    } catch (const SpecError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cmd::kExitConfig;
    } catch (const LoadError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cmd::kExitData;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cmd::kExitData;
    } catch (const EvaluationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cmd::kExitData;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cmd::kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    using namespace resformer;

    CLI::App app{"ResFormer: reservoir-augmented transformer for long-context "
                 "sequence classification"};
    app.require_subcommand(1);

    std::string config_path, profile, out_dir;
    long long seed = -1;
    app.add_option("--config", config_path, "run configuration file")->envname("RESFORMER_CONFIG");
    app.add_option("--seed", seed, "override the configured seed");
    app.add_option("--profile", profile, "desk_scale or paper_defaults");
    app.add_option("--out", out_dir, "output directory override");

    auto load_cfg = [&]() {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (seed >= 0) cfg.train.seed = cfg.seed = static_cast<std::uint64_t>(seed);
        if (!profile.empty()) {
            if (profile != "desk_scale" && profile != "paper_defaults")
                throw ConfigError({"--profile must be desk_scale or paper_defaults"});
            cfg.profile = profile;
        }
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        return cfg;
    };

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic marker benchmark");
    cmd::GenDataOptions gen_opt;
    gen->add_option("--corpora", gen_opt.spec.num_corpora, "number of corpora");
    gen->add_option("--sentences", gen_opt.spec.sentences_per_corpus, "sentences per corpus");
    gen->add_option("--gap", gen_opt.spec.marker_gap, "minimum marker-to-query gap");
    gen->add_option("--classes", gen_opt.spec.num_classes, "signal classes");
    gen->add_option("--distractor-vocab", gen_opt.spec.distractor_vocab, "distractor word count");

    // train
    auto* tr = app.add_subcommand("train", "train on a JSONL corpus file");
    cmd::TrainOptions train_opt;
    std::string train_data, val_data;
    long long batch_override = -1;
    tr->add_option("--data", train_data, "training JSONL (overrides config)");
    tr->add_option("--val-data", val_data, "validation JSONL (overrides config)");
    tr->add_option("--batch-size", batch_override, "batch size override");
    tr->add_option("--resume", train_opt.resume_checkpoint, "resume from checkpoint");
    tr->add_flag("--reference-check", train_opt.reference_check,
                 "assert B=1 equivalence against the sequential reference before training");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    cmd::EvalOptions eval_opt;
    ev->add_option("--checkpoint", eval_opt.checkpoint)->required();
    ev->add_option("--data", eval_opt.data_path)->required();
    ev->add_option("--vocab", eval_opt.vocab_path)->required();
    ev->add_option("--labels", eval_opt.labels_path)->required();

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    cmd::GradcheckOptions gc_opt;
    gc->add_option("--threshold", gc_opt.threshold, "max allowed relative error");
    gc->add_option("--corrupt-group", gc_opt.corrupt_group,
                   "test hook: corrupt this group's analytic gradient");

    // bench
    auto* bn = app.add_subcommand("bench", "per-sentence latency and memory vs history depth");
    cmd::BenchOptions bn_opt;
    bn->add_option("--tolerance", bn_opt.tolerance, "late/early ratio tolerance");
    bn->add_option("--max-time-depth", bn_opt.time_depths.back(), "deepest latency point");

    CLI11_PARSE(app, argc, argv);

    return guarded([&]() -> int {
        if (gen->parsed()) {
            if (seed >= 0) gen_opt.spec.seed = static_cast<std::uint64_t>(seed);
            if (!out_dir.empty()) gen_opt.out_dir = out_dir;
            return cmd::gen_data(gen_opt);
        }
        if (tr->parsed()) {
            train_opt.cfg = load_cfg();
            if (!train_data.empty()) train_opt.cfg.data_path = train_data;
            if (!val_data.empty()) train_opt.cfg.val_data_path = val_data;
            if (batch_override > 0)
                train_opt.cfg.train.batch_size = static_cast<int>(batch_override);
            return cmd::train(train_opt);
        }
        if (ev->parsed()) {
            if (seed >= 0) eval_opt.seed = static_cast<std::uint64_t>(seed);
            return cmd::eval(eval_opt);
        }
        if (gc->parsed()) {
            if (seed >= 0) gc_opt.seed = static_cast<std::uint64_t>(seed);
            return cmd::gradcheck(gc_opt);
        }
        if (bn->parsed()) {
            if (seed >= 0) bn_opt.seed = static_cast<std::uint64_t>(seed);
            return cmd::bench(bn_opt);
        }
        return 1;
    });
}
