#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>

#include "diffood/exp.hpp"
#include "diffood/toydata.hpp"

namespace diffood::exp {

using nlohmann::json;

namespace {

void emit_csv(const ExperimentSpec& spec, Manifest& manifest, const std::string& file,
              const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    if (spec.out.empty()) return;
    write_csv(spec.out / file, header, rows);
    manifest.output(file);
}

void emit_svg(const ExperimentSpec& spec, Manifest& manifest, const std::string& file, const std::string& svg) {
    if (spec.out.empty() || !spec.plots) return;
    std::filesystem::create_directories(spec.out);
    std::ofstream out(spec.out / file);
    out << svg;
    if (!out) throw std::runtime_error("cannot write " + (spec.out / file).string());
    manifest.output(file);
}

double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

double stderr_of(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double sq = 0.0;
    for (double x : v) sq += (x - m) * (x - m);
    return std::sqrt(sq / double(v.size() - 1) / double(v.size()));
}

std::vector<const Dataset*> eval_sets(const Workspace& ws) {
    std::vector<const Dataset*> out = {&ws.id_test};
    for (const auto& d : ws.ood) out.push_back(&d);
    return out;
}

std::vector<NamedData> named(const Workspace& ws) {
    std::vector<NamedData> out;
    for (const auto* d : eval_sets(ws)) out.push_back({d->name, d->seqs});
    return out;
}

ReconEvalOptions eval_options(const ExperimentSpec& spec, const Checkpoint& ckpt) {
    ReconEvalOptions opt;
    opt.t = spec.t_eval;
    opt.draws = spec.draws;
    opt.sigma0 = ckpt.train_config.sigma0;
    opt.threads = spec.threads;
    return opt;
}

std::vector<double> maha_scores(const Eigen::MatrixXd& H, const detect::MahalanobisStats& stats) {
    std::vector<double> out(std::size_t(H.rows()));
    for (Eigen::Index i = 0; i < H.rows(); ++i) out[std::size_t(i)] = detect::maha_score(H.row(i).transpose(), stats);
    return out;
}

struct SideScores {
    std::vector<double> recon, maha;
};

/// Reconstruction and class-free Mahalanobis scores of the diffusion model.
std::map<std::string, SideScores> score_diffusion(const ExperimentSpec& spec, const Checkpoint& ckpt,
                                                  std::span<const text::TokenSequence> fit_data,
                                                  const std::vector<const Dataset*>& sets) {
    const auto& model = *ckpt.model;
    const auto schedule = ckpt.train_config.schedule();
    const auto opt = eval_options(spec, ckpt);
    const Rng root = Rng(spec.seed).split("diffusion");
    const auto stats = detect::maha_fit(detect::hidden_reprs(model, fit_data, spec.threads));
    std::map<std::string, SideScores> out;
    for (const auto* d : sets) {
        auto& s = out[d->name];
        s.recon = detect::recon_scores(model, d->seqs, schedule, opt, root.split(d->name), spec.score_mode);
        s.maha = maha_scores(detect::hidden_reprs(model, d->seqs, spec.threads), stats);
    }
    return out;
}

/// Combined scores for every set, standardized on the dev set when requested.
std::map<std::string, std::vector<double>> combine(const ExperimentSpec& spec,
                                                   const std::map<std::string, SideScores>& side,
                                                   const std::string& dev_name, double lambda) {
    detect::Standardizer zr, zm;
    if (spec.standardize) {
        zr = detect::Standardizer::fit(side.at(dev_name).recon);
        zm = detect::Standardizer::fit(side.at(dev_name).maha);
    }
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, s] : side) {
        auto& v = out[name];
        for (std::size_t i = 0; i < s.recon.size(); ++i) {
            v.push_back(detect::combined_score(zr(s.recon[i]), zm(s.maha[i]), lambda));
        }
    }
    return out;
}

std::vector<std::string> metric_cells(const MetricRow& r) {
    return {r.id_domain, r.ood_domain, r.detector, fmt(r.metrics.auroc), fmt(r.metrics.far95),
            std::to_string(r.metrics.n_id), std::to_string(r.metrics.n_ood)};
}

const std::vector<std::string> kMetricHeader = {"id_domain", "ood_domain", "detector", "auroc", "far95", "n_id", "n_ood"};

Checkpoint train_one(const ExperimentSpec& spec, const Workspace& ws, std::span<const text::TokenSequence> data,
                     TrainConfig config, const std::string& tag, const ModelConfig& mc, Manifest& manifest) {
    config.checkpoint_every = 0;
    auto c = train_model(spec, ws, data, config, tag, mc).back();
    manifest.checkpoint(tag, c);
    return c;
}

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

std::vector<SweepRow> run_sweep_t(const ExperimentSpec& spec, const Workspace& ws, const Checkpoint& ckpt,
                                  Manifest& manifest) {
    const auto sets = named(ws);
    const auto eval = eval_loop(std::span(&ckpt, 1), sets, spec.t_values, spec.draws, spec.seed, spec.threads);
    std::vector<SweepRow> rows;
    std::vector<std::vector<std::string>> cells;
    std::map<std::string, Series> curves;
    for (const auto& e : eval) {
        rows.push_back({e.step, e.dataset, e.t, e.l_d, e.l_c, e.l_recon, e.stderr_recon});
        cells.push_back({e.dataset, std::to_string(e.t), fmt(e.l_d), fmt(e.l_c), fmt(e.l_recon), fmt(e.stderr_recon)});
        auto& s = curves[e.dataset];
        s.label = e.dataset;
        s.x.push_back(e.t);
        s.y.push_back(e.l_recon);
    }
    emit_csv(spec, manifest, "sweep_t.csv", {"dataset", "t", "l_d", "l_c", "l_recon", "stderr"}, cells);
    std::vector<Series> series;
    for (const auto& d : sets) series.push_back(curves[d.name]);
    emit_svg(spec, manifest, "sweep_t.svg", line_plot_svg("Reconstruction loss by diffusion step", "t", "L_recon", series));
    return rows;
}

std::vector<SweepRow> run_sweep_steps(const ExperimentSpec& spec, const Workspace& ws,
                                      std::span<const Checkpoint> series, Manifest& manifest) {
    const auto sets = named(ws);
    const auto eval = eval_loop(series, sets, spec.step_t_values, spec.draws, spec.seed, spec.threads);
    std::vector<SweepRow> rows;
    std::vector<std::vector<std::string>> cells;
    std::map<std::pair<std::string, int>, Series> curves;
    for (const auto& e : eval) {
        rows.push_back({e.step, e.dataset, e.t, e.l_d, e.l_c, e.l_recon, e.stderr_recon});
        cells.push_back({std::to_string(e.step), e.dataset, std::to_string(e.t), fmt(e.l_d), fmt(e.l_c), fmt(e.l_recon),
                         fmt(e.stderr_recon)});
        auto& s = curves[{e.dataset, e.t}];
        s.label = e.dataset + " t=" + std::to_string(e.t);
        s.x.push_back(double(e.step));
        s.y.push_back(e.l_recon);
    }
    emit_csv(spec, manifest, "sweep_steps.csv", {"step", "dataset", "t", "l_d", "l_c", "l_recon", "stderr"}, cells);
    std::vector<Series> plot;
    for (auto& [key, s] : curves) plot.push_back(s);
    emit_svg(spec, manifest, "sweep_steps.svg",
             line_plot_svg("Reconstruction loss by training step", "step", "L_recon", plot));
    return rows;
}

std::vector<SizeRow> run_model_size(const ExperimentSpec& spec, const Workspace& ws, Manifest& manifest) {
    std::vector<SizeRow> rows;
    std::vector<std::vector<std::string>> cells;
    const auto sets = named(ws);
    const int t = spec.t_eval;
    for (const auto& tag : spec.sizes) {
        const auto ckpt = train_one(spec, ws, ws.id_train.seqs, spec.train_config(), "size_" + tag,
                                    model_config(spec, ws, tag), manifest);
        const auto eval = eval_loop(std::span(&ckpt, 1), sets, std::span(&t, 1), spec.draws, spec.seed, spec.threads);
        const double id_loss = eval.front().l_recon;
        for (const auto& e : eval) {
            SizeRow r{tag, e.dataset, e.l_recon, e.stderr_recon, e.l_recon / id_loss};
            cells.push_back({r.size_tag, r.dataset, fmt(r.l_recon), fmt(r.stderr_recon), fmt(r.ratio)});
            rows.push_back(std::move(r));
        }
    }
    emit_csv(spec, manifest, "model_size.csv", {"size", "dataset", "l_recon", "stderr", "ratio"}, cells);
    return rows;
}

std::vector<LengthRow> run_length_bins(const ExperimentSpec& spec, Manifest& manifest) {
    spec.validate();
    if (!spec.data_dir.empty()) manifest.note("length-bins always uses the toy generator '" + spec.length_generator + "'");
    auto gen = [&](const LengthRange& r, std::size_t count, const std::string& key) {
        toy::ToyDomainSpec t;
        t.generator = spec.length_generator;
        t.count = count;
        t.overlap = spec.overlap;
        t.min_len = r.min;
        t.max_len = r.max;
        t.seed = Rng(spec.seed).split(key).seed();
        return toy::generate(t);
    };
    const auto short_c = gen(spec.short_lengths, spec.id_count, "short");
    const auto long_c = gen(spec.long_lengths, spec.id_count, "long");
    const auto eval_c = gen(spec.eval_lengths, spec.eval_count, "eval");

    Workspace ws;
    auto tokens = toy::lexicon(spec.overlap);
    tokens.insert(tokens.begin(), {"<pad>", "<unk>", "<bos>", "<eos>"});
    ws.vocab = text::Vocab::from_tokens(std::move(tokens));
    std::size_t longest = 0;
    for (const auto* c : {&short_c, &long_c, &eval_c}) {
        for (const auto& s : c->sentences) longest = std::max(longest, text::tokenize(s).size());
    }
    ws.n = spec.seq_len > 0 ? spec.seq_len : round_up(longest + 2, 8);

    const auto short_seqs = text::encode_corpus(short_c, ws.vocab, ws.n);
    const auto long_seqs = text::encode_corpus(long_c, ws.vocab, ws.n);
    const auto eval_seqs = text::encode_corpus(eval_c, ws.vocab, ws.n);

    std::vector<LengthRow> rows;
    std::vector<std::vector<std::string>> cells;
    std::vector<Series> plot;
    const auto mc = model_config(spec, ws, spec.size_tag);
    for (const auto& [label, data] : {std::pair<std::string, const std::vector<text::TokenSequence>*>{"short", &short_seqs},
                                      {"long", &long_seqs}}) {
        const auto ckpt = train_one(spec, ws, *data, spec.train_config(), "length_" + label, mc, manifest);
        const auto scores = detect::recon_scores(*ckpt.model, eval_seqs, ckpt.train_config.schedule(),
                                                 eval_options(spec, ckpt), Rng(spec.seed).split("length-eval"),
                                                 spec.score_mode);
        std::map<std::size_t, std::vector<double>> bins;
        for (std::size_t i = 0; i < eval_seqs.size(); ++i) {
            const std::size_t words = eval_seqs[i].length - 2;
            bins[words / spec.bin_width].push_back(scores[i]);
        }
        Series s{label + "-trained", {}, {}};
        const std::size_t first = spec.eval_lengths.min / spec.bin_width;
        const std::size_t last = spec.eval_lengths.max / spec.bin_width;
        for (std::size_t b = first; b <= last; ++b) {
            const std::size_t lo = b * spec.bin_width, hi = lo + spec.bin_width - 1;
            auto it = bins.find(b);
            if (it == bins.end()) {
                manifest.note("length bin " + std::to_string(lo) + "-" + std::to_string(hi) + " is empty for the " +
                              label + "-trained model; omitted");
                continue;
            }
            LengthRow r{label, lo, hi, it->second.size(), mean(it->second), stderr_of(it->second)};
            cells.push_back({r.model, std::to_string(r.bin_lo), std::to_string(r.bin_hi), std::to_string(r.count),
                             fmt(r.l_recon), fmt(r.stderr_recon)});
            s.x.push_back(0.5 * double(lo + hi));
            s.y.push_back(r.l_recon);
            rows.push_back(r);
        }
        plot.push_back(std::move(s));
    }
    emit_csv(spec, manifest, "length_bins.csv", {"model", "bin_lo", "bin_hi", "count", "l_recon", "stderr"}, cells);
    emit_svg(spec, manifest, "length_bins.svg",
             line_plot_svg("Per-token loss by sentence length", "sentence length (tokens)", "L_recon", plot));
    return rows;
}

std::vector<MetricRow> diffusion_metrics(const ExperimentSpec& spec, const Workspace& ws, const Checkpoint& ckpt,
                                         std::span<const text::TokenSequence> fit_data) {
    auto sets = eval_sets(ws);
    if (spec.standardize) sets.push_back(&ws.id_dev);
    const auto side = score_diffusion(spec, ckpt, fit_data, sets);
    const auto comb = combine(spec, side, ws.id_dev.name, spec.lambda);
    std::vector<MetricRow> rows;
    for (const auto& d : ws.ood) {
        rows.push_back({ws.id_test.name, d.name, "diffusion",
                        detect::evaluate(side.at(ws.id_test.name).recon, side.at(d.name).recon)});
        rows.push_back({ws.id_test.name, d.name, "diffusion+maha",
                        detect::evaluate(comb.at(ws.id_test.name), comb.at(d.name))});
    }
    return rows;
}

DetectionResult run_detection(const ExperimentSpec& spec, const Workspace& ws, const Checkpoint* diffusion,
                              Manifest& manifest, bool baselines) {
    Checkpoint owned;
    if (diffusion == nullptr) {
        owned = obtain_checkpoint(spec, ws, manifest);
        diffusion = &owned;
    } else {
        manifest.checkpoint("diffusion", *diffusion);
    }
    DetectionResult result;
    auto& S = result.scores;
    auto sets = eval_sets(ws);
    auto with_dev = sets;
    with_dev.push_back(&ws.id_dev);

    const auto side = score_diffusion(spec, *diffusion, ws.id_train.seqs, with_dev);
    const auto comb = combine(spec, side, ws.id_dev.name, spec.lambda);
    for (const auto* d : sets) {
        S[d->name]["diffusion"] = side.at(d->name).recon;
        S[d->name]["diffusion+maha"] = comb.at(d->name);
    }
    const double gamma = detect::calibrate_gamma(comb.at(ws.id_dev.name));
    std::size_t accepted = 0;
    for (double f : comb.at(ws.id_dev.name)) accepted += detect::decide(f, gamma) == 0;
    manifest.note("diffusion+maha threshold gamma = " + fmt(gamma) + " (95% of ID dev); ID dev accepted " +
                  std::to_string(accepted) + "/" + std::to_string(ws.id_dev.seqs.size()));

    if (baselines) {
        const Rng root(spec.seed);
        auto config = spec.train_config();
        config.steps = spec.baseline_steps;
        config.objective = Objective::Mlm;
        const auto mlm = train_one(spec, ws, ws.id_train.seqs, config, "mlm", model_config(spec, ws, spec.size_tag),
                                   manifest);
        for (const auto* d : sets) {
            S[d->name]["mlm"] = detect::mlm_scores(*mlm.model, d->seqs, spec.mlm_patterns, config.mask_rate,
                                                   root.split("mlm").split(d->name), spec.threads);
        }

        const Denoiser* repr_model = mlm.model.get();
        std::optional<std::vector<int>> labels;
        Checkpoint cls;
        if (ws.id_train.corpus.has_labels()) {
            std::vector<int> y;
            for (const auto& l : ws.id_train.corpus.labels) y.push_back(*l);
            const auto classes = std::size_t(*std::max_element(y.begin(), y.end()) + 1);
            config.objective = Objective::Classifier;
            cls = train_one(spec, ws, ws.id_train.seqs, config, "classifier",
                            model_config(spec, ws, spec.size_tag, classes), manifest);
            for (const auto* d : sets) {
                const auto logits = detect::classifier_logits(*cls.model, d->seqs, spec.threads);
                auto& msp = S[d->name]["msp"];
                auto& energy = S[d->name]["energy"];
                for (Eigen::Index i = 0; i < logits.rows(); ++i) {
                    const Eigen::VectorXd row = logits.row(i).transpose();
                    const std::span<const double> l(row.data(), std::size_t(row.size()));
                    msp.push_back(detect::msp_score(l));
                    energy.push_back(detect::energy_score(l));
                }
            }
            repr_model = cls.model.get();
            labels = std::move(y);
        } else {
            manifest.note("ID corpus '" + spec.id_domain + "' has no labels; msp and energy skipped, maha is class-free");
        }
        const auto train_h = detect::hidden_reprs(*repr_model, ws.id_train.seqs, spec.threads);
        const auto stats = labels ? detect::maha_fit(train_h, std::span<const int>(*labels)) : detect::maha_fit(train_h);
        const auto dev_h = detect::hidden_reprs(*repr_model, ws.id_dev.seqs, spec.threads);
        for (const auto* d : sets) {
            const auto H = detect::hidden_reprs(*repr_model, d->seqs, spec.threads);
            S[d->name]["maha"] = maha_scores(H, stats);
            auto& cos = S[d->name]["cosine"];
            for (Eigen::Index i = 0; i < H.rows(); ++i) cos.push_back(detect::cosine_score(H.row(i).transpose(), dev_h));
        }
    }

    std::vector<std::vector<std::string>> metric_rows, score_rows;
    const auto& id_scores = S.at(ws.id_test.name);
    for (const auto& d : ws.ood) {
        for (const auto& det : detect::detector_names()) {
            if (!id_scores.count(det)) continue;
            MetricRow r{ws.id_test.name, d.name, det, detect::evaluate(id_scores.at(det), S.at(d.name).at(det))};
            metric_rows.push_back(metric_cells(r));
            result.metrics.push_back(std::move(r));
        }
    }
    for (const auto* d : sets) {
        for (const auto& det : detect::detector_names()) {
            auto it = S.at(d->name).find(det);
            if (it == S.at(d->name).end()) continue;
            for (std::size_t i = 0; i < it->second.size(); ++i) {
                score_rows.push_back({std::to_string(i), d->name, det, fmt(it->second[i])});
            }
        }
    }
    emit_csv(spec, manifest, "metrics.csv", kMetricHeader, metric_rows);
    emit_csv(spec, manifest, "scores.csv", {"sample_id", "domain", "detector", "score"}, score_rows);
    return result;
}

std::vector<LambdaRow> run_lambda_sweep(const ExperimentSpec& spec, const Workspace& ws, const Checkpoint& ckpt,
                                        Manifest& manifest) {
    auto sets = eval_sets(ws);
    if (spec.standardize) sets.push_back(&ws.id_dev);
    const auto side = score_diffusion(spec, ckpt, ws.id_train.seqs, sets);
    std::vector<LambdaRow> rows;
    std::vector<std::vector<std::string>> cells;
    std::map<std::string, Series> curves;
    for (double lambda : spec.lambdas) {
        const auto comb = combine(spec, side, ws.id_dev.name, lambda);
        for (const auto& d : ws.ood) {
            LambdaRow r{lambda, d.name, detect::evaluate(comb.at(ws.id_test.name), comb.at(d.name))};
            cells.push_back({fmt(lambda), ws.id_test.name, d.name, fmt(r.metrics.auroc), fmt(r.metrics.far95)});
            auto& s = curves[d.name];
            s.label = d.name;
            s.x.push_back(lambda);
            s.y.push_back(r.metrics.auroc);
            rows.push_back(r);
        }
    }
    emit_csv(spec, manifest, "lambda_sweep.csv", {"lambda", "id_domain", "ood_domain", "auroc", "far95"}, cells);
    std::vector<Series> plot;
    for (auto& [k, s] : curves) plot.push_back(s);
    emit_svg(spec, manifest, "lambda_sweep.svg", line_plot_svg("AUROC by lambda", "lambda", "AUROC", plot));
    return rows;
}

std::vector<BetaRow> run_beta_sweep(const ExperimentSpec& spec, const Workspace& ws, Manifest& manifest) {
    std::vector<BetaRow> rows;
    std::vector<std::vector<std::string>> cells;
    for (std::size_t i = 0; i < spec.beta_ranges.size(); ++i) {
        auto config = spec.train_config();
        config.beta_start = spec.beta_ranges[i][0];
        config.beta_end = spec.beta_ranges[i][1];
        const auto ckpt = train_one(spec, ws, ws.id_train.seqs, config, "beta_" + std::to_string(i),
                                    model_config(spec, ws, spec.size_tag), manifest);
        const auto schedule = config.schedule();
        const Rng root = Rng(spec.seed).split("diffusion");
        std::map<std::string, std::vector<double>> scores;
        for (const auto* d : eval_sets(ws)) {
            scores[d->name] = detect::recon_scores(*ckpt.model, d->seqs, schedule, eval_options(spec, ckpt),
                                                   root.split(d->name), spec.score_mode);
        }
        const auto& id = scores.at(ws.id_test.name);
        BetaRow idr{config.beta_start, config.beta_end, ws.id_test.name, mean(id), {}};
        rows.push_back(idr);
        cells.push_back({fmt(idr.beta_start), fmt(idr.beta_end), idr.dataset, fmt(idr.l_recon), "", ""});
        for (const auto& d : ws.ood) {
            const auto& ood = scores.at(d.name);
            BetaRow r{config.beta_start, config.beta_end, d.name, mean(ood), detect::evaluate(id, ood)};
            cells.push_back({fmt(r.beta_start), fmt(r.beta_end), r.dataset, fmt(r.l_recon), fmt(r.metrics.auroc),
                             fmt(r.metrics.far95)});
            rows.push_back(r);
        }
    }
    emit_csv(spec, manifest, "beta_sweep.csv", {"beta_start", "beta_end", "dataset", "l_recon", "auroc", "far95"}, cells);
    return rows;
}

std::vector<FewshotRow> run_fewshot(const ExperimentSpec& spec, const Workspace& ws, Manifest& manifest) {
    for (auto k : spec.shots) {
        if (k == 1) throw ConfigError("fewshot: K must be >= 2 (the Mahalanobis fit needs two samples)");
    }
    std::vector<FewshotRow> rows;
    std::vector<std::vector<std::string>> cells;
    auto config = spec.train_config();
    if (spec.fewshot_steps > 0) config.steps = spec.fewshot_steps;
    const auto mc = model_config(spec, ws, spec.size_tag);
    for (auto k : spec.shots) {
        for (std::size_t s = 0; s < spec.fewshot_seeds; ++s) {
            const auto seed = Rng(spec.seed).split("fewshot").split(k).split(s).seed();
            const auto subset = k == 0 ? ws.id_train.corpus : text::subsample(ws.id_train.corpus, k, seed);
            const auto data = text::encode_corpus(subset, ws.vocab, ws.n);
            config.seed = seed;
            const std::string kname = k == 0 ? "full" : std::to_string(k);
            const auto ckpt = train_one(spec, ws, data, config, "fewshot_" + kname + "_" + std::to_string(s), mc, manifest);
            for (const auto& m : diffusion_metrics(spec, ws, ckpt, data)) {
                FewshotRow r{k, s, data.size(), m.ood_domain, m.detector, m.metrics};
                cells.push_back({kname, std::to_string(s), std::to_string(r.train_size), r.ood_domain, r.detector,
                                 fmt(r.metrics.auroc), fmt(r.metrics.far95)});
                rows.push_back(std::move(r));
            }
        }
    }
    emit_csv(spec, manifest, "fewshot.csv", {"k", "seed", "train_size", "ood_domain", "detector", "auroc", "far95"}, cells);

    std::map<std::tuple<std::size_t, std::string, std::string>, std::vector<double>> groups;
    std::map<std::pair<std::string, std::string>, Series> curves;
    for (const auto& r : rows) groups[{r.k, r.ood_domain, r.detector}].push_back(r.metrics.auroc);
    std::vector<std::vector<std::string>> summary;
    for (auto k : spec.shots) {
        for (const auto& [key, v] : groups) {
            if (std::get<0>(key) != k) continue;
            const double m = mean(v);
            double sd = 0.0;
            for (double x : v) sd += (x - m) * (x - m);
            sd = v.size() > 1 ? std::sqrt(sd / double(v.size() - 1)) : 0.0;
            summary.push_back({k == 0 ? "full" : std::to_string(k), std::get<1>(key), std::get<2>(key), fmt(m), fmt(sd),
                               std::to_string(v.size())});
            auto& c = curves[{std::get<1>(key), std::get<2>(key)}];
            c.label = std::get<1>(key) + " " + std::get<2>(key);
            c.x.push_back(std::log10(double(k == 0 ? ws.id_train.seqs.size() : k)));
            c.y.push_back(m);
        }
    }
    emit_csv(spec, manifest, "fewshot_summary.csv", {"k", "ood_domain", "detector", "mean_auroc", "sd_auroc", "seeds"},
             summary);
    std::vector<Series> plot;
    for (auto& [key, c] : curves) plot.push_back(c);
    emit_svg(spec, manifest, "fewshot.svg", line_plot_svg("AUROC by training shots", "log10 K", "AUROC", plot));
    return rows;
}

Projection run_project(const ExperimentSpec& spec, const Workspace& ws, const Checkpoint& ckpt, Manifest& manifest) {
    const auto sets = eval_sets(ws);
    std::vector<Eigen::MatrixXd> blocks;
    Eigen::Index total = 0;
    for (const auto* d : sets) {
        blocks.push_back(detect::hidden_reprs(*ckpt.model, d->seqs, spec.threads));
        total += blocks.back().rows();
    }
    Eigen::MatrixXd all(total, Eigen::Index(ckpt.model_config().d));
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        all.middleRows(at, b.rows()) = b;
        at += b.rows();
    }
    auto p = project_2d(all);
    if (p.degenerate) manifest.note("representations have rank < 2; pc2 set to 0");
    std::vector<std::vector<std::string>> cells;
    std::vector<Series> plot;
    at = 0;
    for (std::size_t k = 0; k < sets.size(); ++k) {
        Series s{sets[k]->name, {}, {}};
        for (Eigen::Index i = 0; i < blocks[k].rows(); ++i, ++at) {
            cells.push_back({std::to_string(i), sets[k]->name, fmt(p.points(at, 0)), fmt(p.points(at, 1))});
            s.x.push_back(p.points(at, 0));
            s.y.push_back(p.points(at, 1));
        }
        plot.push_back(std::move(s));
    }
    emit_csv(spec, manifest, "projection.csv", {"sample_id", "domain", "pc1", "pc2"}, cells);
    emit_svg(spec, manifest, "projection.svg",
             line_plot_svg("Pooled sentence representations (PCA)", "pc1", "pc2", plot, true));
    return p;
}

DistinctResult run_distinct(const ExperimentSpec& spec, const Checkpoint& ckpt, Manifest& manifest) {
    if (spec.distinct_samples == 0) throw ConfigError("distinct: distinct_samples must be > 0");
    DistinctResult r;
    r.samples.resize(spec.distinct_samples);
    const auto vocab = text::Vocab::from_tokens(ckpt.vocab);
    const auto schedule = ckpt.train_config.schedule();
    const Rng root = Rng(spec.seed).split("sample");
    parallel_chunks(r.samples.size(), 1, spec.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            r.samples[i] = text::decode(sample(*ckpt.model, schedule, root.split(i)), vocab);
        }
    });
    std::vector<std::vector<std::string>> cells;
    for (std::size_t n = 1; n <= 3; ++n) {
        try {
            r.dist[n - 1] = distinct_n(r.samples, n);
        } catch (const std::invalid_argument& e) {
            r.dist[n - 1] = std::nan("");
            manifest.note(std::string("dist-") + std::to_string(n) + ": " + e.what());
        }
        cells.push_back({std::to_string(n), fmt(r.dist[n - 1])});
    }
    emit_csv(spec, manifest, "distinct.csv", {"n", "distinct"}, cells);
    if (!spec.out.empty()) {
        std::ofstream out(spec.out / "samples.txt");
        for (const auto& s : r.samples) out << s << '\n';
        manifest.output("samples.txt");
    }
    return r;
}

std::vector<DomainStats> run_gen_data(const ExperimentSpec& spec) {
    if (!(spec.overlap > 0.0 && spec.overlap < 1.0)) throw ConfigError("gen-data: overlap must be in (0, 1)");
    const std::size_t count = spec.id_count + 2 * spec.eval_count;
    std::vector<text::Corpus> corpora;
    std::vector<std::set<std::string>> token_sets;
    for (const auto& g : toy::generators()) {
        toy::ToyDomainSpec t;
        t.generator = g;
        t.count = count;
        t.overlap = spec.overlap;
        t.seed = spec.seed;
        corpora.push_back(toy::generate(t));
        std::set<std::string> toks;
        for (const auto& s : corpora.back().sentences) {
            for (auto& w : text::tokenize(s)) toks.insert(std::move(w));
        }
        token_sets.push_back(std::move(toks));
    }
    std::vector<DomainStats> stats;
    json doc = {{"seed", spec.seed}, {"overlap_target", spec.overlap}, {"domains", json::array()}};
    for (std::size_t i = 0; i < corpora.size(); ++i) {
        const auto& c = corpora[i];
        DomainStats st{c.domain, c.size(), text::average_length(c.sentences), toy::default_avg_len(c.domain), {}};
        for (std::size_t j = 0; j < corpora.size(); ++j) {
            if (i == j) continue;
            std::size_t shared = 0;
            for (const auto& w : token_sets[i]) shared += token_sets[j].count(w);
            st.overlap[corpora[j].domain] = double(shared) / double(token_sets[i].size());
        }
        if (!spec.out.empty()) {
            text::save_corpus(c, spec.out / (c.domain + ".txt"), text::CorpusFormat::Plain);
            if (c.has_labels()) text::save_corpus(c, spec.out / (c.domain + ".jsonl"), text::CorpusFormat::Jsonl);
        }
        doc["domains"].push_back({{"domain", st.domain},
                                  {"count", st.count},
                                  {"avg_len", st.avg_len},
                                  {"target_avg_len", st.target_avg_len},
                                  {"labels", toy::num_labels(st.domain)},
                                  {"overlap", st.overlap}});
        stats.push_back(std::move(st));
    }
    if (!spec.out.empty()) {
        std::ofstream out(spec.out / "data_manifest.json");
        out << doc.dump(2) << '\n';
        if (!out) throw std::runtime_error("cannot write data manifest");
    }
    return stats;
}

std::vector<StatsRow> run_stats(const ExperimentSpec& spec, const Workspace& ws, Manifest& manifest) {
    // Overlap is measured against the vocabulary of the ID training corpus alone.
    const auto id_vocab = text::Vocab::build(ws.id_train.corpus.sentences);
    std::vector<StatsRow> rows;
    std::vector<std::vector<std::string>> cells;
    for (const auto& d : ws.ood) {
        StatsRow r{spec.id_domain, d.name, text::corpus_stats(ws.id_train.corpus, d.corpus, id_vocab)};
        cells.push_back({r.id_domain, r.ood_domain, std::to_string(r.stats.vocab_size), fmt(r.stats.avg_len),
                         fmt(r.stats.avg_len_ood), fmt(r.stats.token_overlap)});
        rows.push_back(std::move(r));
    }
    emit_csv(spec, manifest, "stats.csv", {"id_domain", "ood_domain", "vocab_size", "avg_len", "avg_len_ood", "token_overlap"},
             cells);
    return rows;
}

}  // namespace diffood::exp
