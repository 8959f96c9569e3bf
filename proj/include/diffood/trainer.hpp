#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffood/diffusion.hpp"
#include "diffood/model.hpp"
#include "diffood/rng.hpp"
#include "diffood/text.hpp"

namespace diffood {

enum class Objective { Diffusion, Mlm, Classifier };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct TrainConfig {
    std::size_t steps = 5000;
    std::size_t batch_size = 16;
    double lr = 5e-5;
    bool lr_decay = true;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double sigma0 = 1e-4;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // 0: final checkpoint only
    Objective objective = Objective::Diffusion;
    double mask_rate = 0.15;
    double max_grad_norm = 0.0;  // 0: no clipping
    std::size_t log_every = 50;

    NoiseSchedule schedule() const { return NoiseSchedule::linear(T, beta_start, beta_end); }
    /// lr0 * (1 - step / steps) with decay, lr0 otherwise.
    double lr_at(std::size_t step) const;
    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

class TrainingError : public std::runtime_error {
public:
    TrainingError(std::size_t step, double lr, const std::string& what);
    std::size_t step;
    double lr;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MetricPoint {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct Checkpoint {
    TrainConfig train_config;
    std::size_t step = 0;
    std::vector<MetricPoint> history;
    std::vector<std::string> vocab;  // id -> token
    std::shared_ptr<const Denoiser> model;

    const ModelConfig& model_config() const { return model->config(); }
};

struct TrainHooks {
    /// Called for every emitted checkpoint (including step 0 and the final one).
    std::function<void(const Checkpoint&)> on_checkpoint;
    /// Receives the `step,loss,lr` curve (header written first).
    std::ostream* curve_csv = nullptr;
    /// Keep model snapshots in the returned series (off: last one only).
    bool keep_all = true;
};

/// Positions (indices into seq.ids) to mask: round(rate * m) of the m content
/// tokens (at least one); for a sentence with no content tokens, one of its
/// real positions.
std::vector<std::size_t> choose_mask(const text::TokenSequence& seq, double rate, Rng& rng);

/// Trains `model` in place. Returns checkpoints at step 0, every
/// `checkpoint_every` steps and at the final step.
std::vector<Checkpoint> train(const TrainConfig& config, Denoiser& model, std::span<const text::TokenSequence> data,
                              const std::vector<std::string>& vocab, const TrainHooks& hooks = {});

/// Directory layout: manifest.json + params.bin (little-endian f32, entries
/// in manifest order at the listed element offsets).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

nlohmann::json model_config_json(const ModelConfig& c);
ModelConfig model_config_from(const nlohmann::json& j);
nlohmann::json train_config_json(const TrainConfig& c);
TrainConfig train_config_from(const nlohmann::json& j);

/// FNV-1a over the parameter bytes; identifies a checkpoint's weights.
std::uint64_t parameter_hash(const Denoiser& model);

struct EvalRow {
    std::size_t step = 0;
    std::string dataset;
    int t = 0;
    double l_d = 0.0;
    double l_c = 0.0;
    double l_recon = 0.0;
    double stderr_recon = 0.0;  // over sentences
};

struct NamedData {
    std::string name;
    std::span<const text::TokenSequence> data;
};

/// Mean per-word losses over (checkpoint x dataset x t). Sentence streams are
/// seed.split(dataset name).
std::vector<EvalRow> eval_loop(std::span<const Checkpoint> checkpoints, std::span<const NamedData> datasets,
                               std::span<const int> t_list, std::size_t draws, std::uint64_t seed,
                               std::size_t threads = 1);

}  // namespace diffood
