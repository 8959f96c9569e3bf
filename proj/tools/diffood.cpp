// Command-line experiment harness.

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "diffood/exp.hpp"
#include "diffood/runtime.hpp"
#include "diffood/tensor.hpp"

using namespace diffood;

namespace {

struct Globals {
    std::string config;
    std::vector<std::string> settings;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::size_t> threads;
    std::string checkpoint;
};

exp::ExperimentSpec build_spec(const Globals& g, const std::string& command) {
    exp::ExperimentSpec spec;
    spec.name = command;
    spec.train.lr = 1e-3;
    spec.out = std::filesystem::path("out") / command;
    if (!g.config.empty()) exp::apply_config_file(spec, g.config);
    for (const auto& kv : g.settings) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw exp::ConfigError("--set expects key=value, got '" + kv + "'");
        exp::apply_setting(spec, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed) spec.seed = *g.seed;
    if (!g.out.empty()) spec.out = g.out;
    if (g.threads) spec.threads = *g.threads;
    if (!g.checkpoint.empty()) spec.checkpoint = g.checkpoint;
    if (spec.threads == 0) throw exp::ConfigError("--threads must be >= 1");
    return spec;
}

void print_metrics(const std::vector<exp::MetricRow>& rows) {
    std::printf("%-14s %-14s %-16s %8s %8s\n", "id", "ood", "detector", "auroc", "far95");
    for (const auto& r : rows) {
        std::printf("%-14s %-14s %-16s %8.4f %8.4f\n", r.id_domain.c_str(), r.ood_domain.c_str(), r.detector.c_str(),
                    r.metrics.auroc, r.metrics.far95);
    }
}

void print_sweep(const std::vector<exp::SweepRow>& rows) {
    std::printf("%8s %-14s %6s %10s %10s %10s %10s\n", "step", "dataset", "t", "l_d", "l_c", "l_recon", "stderr");
    for (const auto& r : rows) {
        std::printf("%8zu %-14s %6d %10.4f %10.4f %10.4f %10.4f\n", r.step, r.dataset.c_str(), r.t, r.l_d, r.l_c,
                    r.l_recon, r.stderr_recon);
    }
}

int run(const std::string& command, const exp::ExperimentSpec& spec, const std::string& objective, bool baselines) {
    exp::Manifest manifest(spec);
    if (command == "gen-data") {
        for (const auto& s : exp::run_gen_data(spec)) {
            std::printf("%-10s count=%zu avg_len=%.2f (target %.0f)", s.domain.c_str(), s.count, s.avg_len,
                        s.target_avg_len);
            for (const auto& [other, v] : s.overlap) std::printf(" overlap[%s]=%.3f", other.c_str(), v);
            std::printf("\n");
        }
        std::printf("corpora written to %s\n", spec.out.string().c_str());
        return 0;
    }
    if (command == "length-bins") {
        const auto rows = exp::run_length_bins(spec, manifest);
        std::printf("%-6s %8s %6s %10s %10s\n", "model", "bin", "count", "l_recon", "stderr");
        for (const auto& r : rows) {
            std::printf("%-6s %3zu-%-4zu %6zu %10.4f %10.4f\n", r.model.c_str(), r.bin_lo, r.bin_hi, r.count, r.l_recon,
                        r.stderr_recon);
        }
        manifest.write(spec.out);
        return 0;
    }

    const auto ws = exp::prepare(spec);
    std::fprintf(stderr, "data: %zu train / %zu dev / %zu test, %zu OOD sets, vocab %zu, n=%zu\n",
                 ws.id_train.seqs.size(), ws.id_dev.seqs.size(), ws.id_test.seqs.size(), ws.ood.size(),
                 ws.vocab.size(), ws.n);
    if (command == "train") {
        auto config = spec.train_config();
        config.objective = objective_from_string(objective);
        std::size_t classes = 0;
        if (config.objective == Objective::Classifier) {
            for (const auto& l : ws.id_train.corpus.labels) {
                if (!l) throw exp::ConfigError("classifier training needs a labeled ID corpus");
                classes = std::max(classes, std::size_t(*l + 1));
            }
        }
        const auto series =
            exp::train_model(spec, ws, ws.id_train.seqs, config, "train", exp::model_config(spec, ws, spec.size_tag, classes));
        for (const auto& c : series) manifest.checkpoint("step_" + std::to_string(c.step), c);
        const auto& last = series.back();
        std::printf("trained %zu steps, final loss %.5f\n", last.step,
                    last.history.empty() ? 0.0 : last.history.back().loss);
        if (spec.save_checkpoints) {
            std::printf("checkpoints in %s\n", (spec.out / "checkpoints" / "train").string().c_str());
        }
    } else if (command == "sweep-t") {
        print_sweep(exp::run_sweep_t(spec, ws, exp::obtain_checkpoint(spec, ws, manifest), manifest));
    } else if (command == "sweep-steps") {
        const auto series = exp::obtain_series(spec, ws, manifest);
        print_sweep(exp::run_sweep_steps(spec, ws, series, manifest));
    } else if (command == "model-size") {
        std::printf("%-14s %-14s %10s %10s %8s\n", "size", "dataset", "l_recon", "stderr", "ratio");
        for (const auto& r : exp::run_model_size(spec, ws, manifest)) {
            std::printf("%-14s %-14s %10.4f %10.4f %8.3f\n", r.size_tag.c_str(), r.dataset.c_str(), r.l_recon,
                        r.stderr_recon, r.ratio);
        }
    } else if (command == "detect") {
        std::optional<Checkpoint> ckpt;
        if (!spec.checkpoint.empty()) ckpt = exp::obtain_checkpoint(spec, ws, manifest);
        print_metrics(exp::run_detection(spec, ws, ckpt ? &*ckpt : nullptr, manifest, baselines).metrics);
    } else if (command == "sweep-lambda") {
        const auto rows = exp::run_lambda_sweep(spec, ws, exp::obtain_checkpoint(spec, ws, manifest), manifest);
        std::printf("%8s %-14s %8s %8s\n", "lambda", "ood", "auroc", "far95");
        for (const auto& r : rows) {
            std::printf("%8.3f %-14s %8.4f %8.4f\n", r.lambda, r.ood_domain.c_str(), r.metrics.auroc, r.metrics.far95);
        }
    } else if (command == "sweep-beta") {
        std::printf("%10s %10s %-14s %10s %8s %8s\n", "beta_start", "beta_end", "dataset", "l_recon", "auroc", "far95");
        for (const auto& r : exp::run_beta_sweep(spec, ws, manifest)) {
            std::printf("%10.2g %10.2g %-14s %10.4f", r.beta_start, r.beta_end, r.dataset.c_str(), r.l_recon);
            if (r.metrics.n_ood > 0) std::printf(" %8.4f %8.4f", r.metrics.auroc, r.metrics.far95);
            std::printf("\n");
        }
    } else if (command == "fewshot") {
        std::printf("%6s %5s %-14s %-16s %8s %8s\n", "k", "seed", "ood", "detector", "auroc", "far95");
        for (const auto& r : exp::run_fewshot(spec, ws, manifest)) {
            std::printf("%6s %5zu %-14s %-16s %8.4f %8.4f\n", r.k == 0 ? "full" : std::to_string(r.k).c_str(),
                        r.seed_index, r.ood_domain.c_str(), r.detector.c_str(), r.metrics.auroc, r.metrics.far95);
        }
    } else if (command == "project") {
        const auto p = exp::run_project(spec, ws, exp::obtain_checkpoint(spec, ws, manifest), manifest);
        std::printf("projected %ld points; variance pc1=%.5g pc2=%.5g\n", long(p.points.rows()), p.variance(0),
                    p.variance(1));
    } else if (command == "distinct") {
        const auto r = exp::run_distinct(spec, exp::obtain_checkpoint(spec, ws, manifest), manifest);
        std::printf("dist-1 %.4f  dist-2 %.4f  dist-3 %.4f over %zu samples\n", r.dist[0], r.dist[1], r.dist[2],
                    r.samples.size());
    } else if (command == "stats") {
        std::printf("%-12s %-12s %8s %8s %8s %8s\n", "id", "ood", "vocab", "avg_len", "ood_len", "overlap");
        for (const auto& r : exp::run_stats(spec, ws, manifest)) {
            std::printf("%-12s %-12s %8zu %8.2f %8.2f %8.3f\n", r.id_domain.c_str(), r.ood_domain.c_str(),
                        r.stats.vocab_size, r.stats.avg_len, r.stats.avg_len_ood, r.stats.token_overlap);
        }
    }
    manifest.write(spec.out);
    if (!spec.out.empty()) std::fprintf(stderr, "outputs in %s\n", spec.out.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Diffusion-reconstruction OOD detection experiments on toy text domains"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "key = value config file")->check(CLI::ExistingFile);
    app.add_option("--set", g.settings, "override one config key (key=value), repeatable");
    app.add_option("--seed", g.seed, "experiment seed");
    app.add_option("--out", g.out, "output directory (default out/<command>)");
    app.add_option("--threads", g.threads, "evaluation worker threads");
    app.add_flag_callback(
        "--list-keys",
        [] {
            for (const auto& k : exp::config_keys()) std::cout << k << '\n';
            throw CLI::Success();
        },
        "print every config key and exit");

    std::string objective = "diffusion";
    bool no_baselines = false;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"gen-data", "write the toy domain corpora and their realized statistics"},
        {"train", "train a model on the ID corpus"},
        {"sweep-t", "reconstruction loss by diffusion step"},
        {"sweep-steps", "reconstruction loss by training step"},
        {"model-size", "ID/OOD loss for each model size"},
        {"length-bins", "per-token loss by sentence-length bin for short- and long-trained models"},
        {"detect", "AUROC/FAR95 of every detector"},
        {"sweep-lambda", "AUROC of the combined score for each lambda"},
        {"sweep-beta", "loss and AUROC for each beta range"},
        {"fewshot", "detection with K training sentences"},
        {"project", "2-D PCA of pooled sentence representations"},
        {"distinct", "Dist-1/2/3 of sampled sentences"},
        {"stats", "vocabulary overlap and length statistics"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        if (name != "gen-data" && name != "length-bins" && name != "train" && name != "model-size" &&
            name != "sweep-beta" && name != "fewshot" && name != "stats") {
            sub->add_option("--checkpoint", g.checkpoint, "evaluate this checkpoint (or series directory) instead of training");
        }
        if (name == "train") {
            sub->add_option("--objective", objective, "diffusion | mlm | classifier")
                ->check(CLI::IsMember({"diffusion", "mlm", "classifier"}));
        }
        if (name == "detect") sub->add_flag("--no-baselines", no_baselines, "only the diffusion detectors");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        const auto spec = build_spec(g, command);
        return run(command, spec, objective, !no_baselines);
    } catch (const exp::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
