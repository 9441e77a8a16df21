#pragma once

// Optimization loop: cross-entropy + Adam with the poly learning-rate policy,
// random tile batches with dihedral augmentation, convergence stopping, and
// the footprint-to-flood transfer initialization.

#include <filesystem>
#include <functional>

#include "m3net/metrics.hpp"
#include "m3net/network.hpp"
#include "m3net/tiles.hpp"

namespace m3net {

// base * (1 - iter/max_iter)^power
double poly_lr(int64_t iter, int64_t max_iter, double base, double power);

template <typename T>
class Adam {
public:
    Adam(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // bias-corrected update of all trainable parameters; rejects non-finite
    // gradients naming the offending parameter
    void step(ParamStore<T>& params, T lr, T weight_decay = T(0), T grad_clip = T(0));

    int64_t steps() const { return step_count_; }

private:
    struct Slot {
        std::vector<T> m, v;
    };
    std::map<std::string, Slot> slots_;
    int64_t step_count_ = 0;
    T beta1_, beta2_, eps_;
};

struct TrainConfig {
    double base_lr = 1e-2;
    double poly_power = 0.9;
    int64_t batch_size = 8;
    int64_t max_iter = 20000;
    int64_t convergence_window = 200;
    double convergence_delta = 1e-4;  // relative moving-average improvement
    uint64_t seed = 0;
    std::string task = "footprint";  // footprint | flood
    double weight_decay = 0.0;
    double grad_clip = 0.0;
    int64_t eval_interval = 0;        // 0 disables validation passes
    int64_t checkpoint_interval = 0;  // 0 = final checkpoint only
    std::filesystem::path out_dir;    // empty = keep everything in memory
};

struct LogEntry {
    int64_t iteration = 0;
    double loss = 0.0;
    double lr = 0.0;
    double val_miou = -1.0;  // < 0 when no validation ran this iteration
};

struct TrainResult {
    int64_t iterations = 0;
    double final_loss = 0.0;
    bool converged = false;  // stopped by the convergence criterion
    std::vector<LogEntry> log;
};

// Global-confusion evaluation of a model over tiles (eval mode, no graph).
template <typename T>
IouMetrics evaluate(FusionModel<T>& model, const std::vector<TileSample>& tiles,
                    ConfusionMatrix* out_cm = nullptr);

// Builds the batched input tensor for one stream from tile samples.
template <typename T>
Tensor<T> batch_input(const std::vector<const TileSample*>& batch, const std::string& sensor);

template <typename T>
TrainResult train(FusionModel<T>& model, const std::vector<TileSample>& train_tiles,
                  const std::vector<TileSample>& val_tiles, const TrainConfig& config,
                  const std::function<void(const LogEntry&)>& on_log = nullptr);

struct TransferReport {
    std::vector<std::string> loaded;
    std::vector<std::string> extended;             // channel-extension applied
    std::vector<std::string> unmatched_checkpoint;  // entries with no model parameter
    std::vector<std::string> unmatched_model;       // parameters with no checkpoint entry
};

// Loads parameters by name; a first-conv input-channel mismatch from a
// 3-channel kernel is resolved with extend_input_channels, any other shape
// conflict is rejected listing the names.
template <typename T>
TransferReport transfer_init(FusionModel<T>& model, const Checkpoint& ckpt);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace m3net
