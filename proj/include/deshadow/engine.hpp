#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "deshadow/config.hpp"
#include "deshadow/cycle.hpp"
#include "deshadow/data.hpp"
#include "deshadow/features.hpp"
#include "deshadow/losses.hpp"
#include "deshadow/nets.hpp"

namespace deshadow::engine {

/// The two image translators a cycle needs. `remove` maps shadow images to
/// shadow-free ones; `insert` adds a shadow described by a [N, 1, H, W] mask.
struct Translators {
    std::function<torch::Tensor(const torch::Tensor&)> remove;
    std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)> insert;
};

/// Bin(shadow_free_like - shadow_like) on model-space images: channel-mean
/// difference, per-sample median threshold, strict comparison. The value is
/// hard; gradients follow sigmoid((d - median) / temperature).
CycleMask binarize_cycle(const torch::Tensor& shadow_free_like, const torch::Tensor& shadow_like,
                         double temperature = 0.02);

/// u_hat = G_f(v), v_hat = G_s(u, m), mask_f = Bin(u_hat - v), mask_s = Bin(u - v_hat).
CycleState forward_step(const torch::Tensor& u, const torch::Tensor& v, const torch::Tensor& m,
                        const Translators& nets, double temperature = 0.02);

/// u_rec = G_f(v_hat) (or G_f(u_hat) when `literal`), v_rec = G_s(u_hat, mask_f),
/// mask_rec_f = Bin(u_rec - v_hat), mask_rec_s = Bin(u_hat - v_rec).
void reconstruction_step(CycleState& state, const Translators& nets, bool literal = false,
                         double temperature = 0.02);

/// Pool of past synthetic images used as discriminator negatives. Until it
/// is full every query image is stored and returned; afterwards each image
/// is swapped for a random stored one with `swap_probability`.
class ReplayBuffer {
public:
    ReplayBuffer(size_t capacity, double swap_probability, uint64_t seed);

    /// batch: [N, C, H, W]; returns a batch of the same shape.
    torch::Tensor query(const torch::Tensor& batch);
    size_t size() const { return entries_.size(); }
    size_t capacity() const { return capacity_; }

    struct State {
        std::vector<torch::Tensor> entries;
        std::string rng;
    };
    State save() const;
    void load(const State& state);

private:
    size_t capacity_;
    double swap_probability_;
    std::vector<torch::Tensor> entries_;
    std::mt19937_64 rng_;
};

/// Constant rate until `decay_start_epoch`, then linear decay reaching 0 at
/// `epochs`. Valid for 0 <= epoch <= epochs.
double lr_schedule(int epoch, const TrainConfig& config);

struct Networks {
    nets::Generator remover{nullptr};   ///< G_f
    nets::Generator inserter{nullptr};  ///< G_s
    nets::Discriminator critic_f{nullptr}; ///< D_f
    nets::Discriminator critic_s{nullptr}; ///< D_s

    static Networks build(const TrainConfig& config);
    Translators translators();
    void train(bool on);
    /// Combined hash of all four architecture specs.
    std::string spec_hash() const;
};

struct Batch {
    torch::Tensor u; ///< shadow-free, model space
    torch::Tensor v; ///< shadow, model space
    torch::Tensor m; ///< [N, 1, H, W]
    /// Real examples for the discriminator duals; u and v when undefined.
    torch::Tensor u_real;
    torch::Tensor v_real;
    bool paired = false;
};

struct StepReport {
    int64_t step = 0;
    int epoch = 0;
    double lr = 0.0;
    double generator_total = 0.0;
    double critic_f = 0.0;
    double critic_s = 0.0;
    std::map<std::string, double> components; ///< unweighted terms
    size_t replay_f_size = 0;
    size_t replay_s_size = 0;
    size_t mask_bank_size = 0;
};

/// Everything a training step mutates.
struct TrainingState {
    TrainingState(const TrainConfig& config);

    TrainConfig config;
    Networks nets;
    std::unique_ptr<torch::optim::Adam> opt_generators;
    std::unique_ptr<torch::optim::Adam> opt_critic_f;
    std::unique_ptr<torch::optim::Adam> opt_critic_s;
    ReplayBuffer replay_f; ///< synthetic shadow images, negatives for D_f
    ReplayBuffer replay_s; ///< synthetic shadow-free images, negatives for D_s
    data::MaskBank mask_bank;

    void set_lr(double lr);
};

/// One optimization step: forward + reconstruction, replay and mask-bank
/// pushes, generator update on the regime's total loss, then one update of
/// each discriminator. Throws NumericFailure naming the first non-finite term.
StepReport train_step(const Batch& batch, TrainingState& state, features::FeatureExtractor& fx);

struct CheckpointHeader {
    std::string format;
    std::string spec_hash;
    std::string config_text;
    int epoch = 0;
    int64_t step = 0;
};

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);
/// Rebuilds the four networks from a checkpoint's stored config.
Networks load_networks(const std::filesystem::path& path, TrainConfig* config_out = nullptr);

/// Drives training over a dataset: sampling, LR schedule, checkpointing.
class Trainer {
public:
    Trainer(const TrainConfig& config, data::Dataset dataset, std::shared_ptr<features::FeatureExtractor> fx);

    StepReport step();

    int epoch() const;
    int64_t steps_done() const { return step_; }
    int64_t steps_per_epoch() const { return steps_per_epoch_; }
    bool finished() const;

    Networks& networks() { return state_.nets; }
    TrainingState& state() { return state_; }
    const TrainConfig& config() const { return state_.config; }

    void save_checkpoint(const std::filesystem::path& path) const;
    /// Restores a checkpoint written by a trainer with the same architecture.
    void load_checkpoint(const std::filesystem::path& path);

    Batch next_batch();

private:
    void seed_mask_bank();
    torch::Tensor draw_bank_mask(const torch::Tensor& v);

    TrainingState state_;
    data::Dataset dataset_;
    std::shared_ptr<features::FeatureExtractor> fx_;
    std::vector<torch::Tensor> shadow_pool_;
    std::vector<torch::Tensor> free_pool_;
    std::vector<torch::Tensor> masks_;
    std::mt19937_64 data_rng_;
    data::PoolCursor paired_cursor_;
    std::optional<data::UnpairedSampler> unpaired_;
    int64_t step_ = 0;
    int64_t steps_per_epoch_ = 1;
};

/// train_log.csv writer; the column set is fixed by the first report.
class TrainLog {
public:
    explicit TrainLog(const std::filesystem::path& path, bool append = false);
    void write(const StepReport& report);

private:
    std::ofstream out_;
    std::vector<std::string> columns_;
    bool header_written_ = false;
};

} // namespace deshadow::engine
