#pragma once

// The multi-stream segmentation network: per-sensor dilated-residual encoders
// (output stride 8), pyramid context aggregation, bilinear-upsampling decoders
// to a common grid, and a trainable late-fusion head over the per-stream
// class logits. Pre/post acquisitions enter a stream early-fused along the
// channel axis (pre first, post second).

#include <map>
#include <nlohmann/json.hpp>

#include "m3net/checkpoint.hpp"
#include "m3net/tensor.hpp"

namespace m3net {

// --- parameter store ------------------------------------------------------------

template <typename T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> t, bool trainable) {
        if (index_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
        index_[name] = entries_.size();
        t.set_requires_grad(trainable);
        entries_.push_back({name, std::move(t), trainable});
        return entries_.back().tensor;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
        return entries_[it->second].tensor;
    }

    struct Entry {
        std::string name;
        Tensor<T> tensor;
        bool trainable;
    };

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    void zero_grad() {
        for (auto& e : entries_)
            if (e.trainable) e.tensor.zero_grad();
    }

    int64_t trainable_count() const {
        int64_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.tensor.size();
        return n;
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

// --- configuration -----------------------------------------------------------------

struct StreamConfig {
    std::string sensor;            // "s1", "s2", or "vhr"
    int64_t in_channels = 0;       // s1: 6 (pre+post stacks), s2: 20, vhr: 3
    int64_t input_px = 0;          // pixels per side
    double gsd = 0.0;              // ground resolution in meters
    std::vector<int64_t> widths = {16, 32, 64, 128};  // stage widths
    std::vector<int64_t> blocks = {2, 2, 2, 2};       // residual blocks per stage
    int64_t decoder_blocks = 3;    // 0..3, planned against the common grid
};

struct FusionConfig {
    std::vector<StreamConfig> streams;
    int64_t classes = 2;
    double common_gsd = 10.0;  // 2 m when the VHR stream is active
    int64_t common_px = 0;
    int64_t fusion_width = 32;
};

// Decoder block count for a stream: log2(common/feature) when integral,
// otherwise the nearest lower count; capped at 3 with a bilinear resize at
// fuse time covering the remainder.
int64_t plan_decoder_blocks(int64_t input_px, int64_t common_px);

// Pyramid bins {1,2,3,6}; grids smaller than 6 px fall back to {1,2,3}.
std::vector<int64_t> context_bins(int64_t feature_px);

// Named presets: "desk" (widths 16..128, 2 blocks per stage) and "full"
// (ResNet34-style widths 64..512, blocks 3/4/6/3).
StreamConfig make_stream_config(const std::string& sensor, const std::string& preset, double tile_m);
FusionConfig make_fusion_config(const std::vector<std::string>& sensors, const std::string& preset,
                                double tile_m);

nlohmann::json stream_config_to_json(const StreamConfig& c);
StreamConfig stream_config_from_json(const nlohmann::json& j);
nlohmann::json fusion_config_to_json(const FusionConfig& c);
FusionConfig fusion_config_from_json(const nlohmann::json& j);

// First-conv channel extension: channels 0-2 are copied, every additional
// channel is the arithmetic mean of the three source filters.
template <typename T>
Tensor<T> extend_input_channels(const Tensor<T>& weight, int64_t target);

// Multitemporal early fusion: channel concatenation, pre first, post second.
template <typename T>
Tensor<T> early_fuse_temporal(const Tensor<T>& pre, const Tensor<T>& post);

// --- layers ---------------------------------------------------------------------------

template <typename T>
struct Conv2dLayer {
    Tensor<T> w, b;
    int64_t stride = 1, dilation = 1, padding = 0;

    Conv2dLayer() = default;
    Conv2dLayer(ParamStore<T>& store, const std::string& name, int64_t in, int64_t out, int64_t k,
                int64_t stride, int64_t dilation, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w, b, stride, dilation, padding); }
};

template <typename T>
struct BatchNormLayer {
    Tensor<T> gamma, beta, running_mean, running_var;

    BatchNormLayer() = default;
    BatchNormLayer(ParamStore<T>& store, const std::string& name, int64_t channels);
    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return batchnorm2d(x, gamma, beta, running_mean, running_var, training);
    }
};

template <typename T>
struct PReluLayer {
    Tensor<T> slope;

    PReluLayer() = default;
    PReluLayer(ParamStore<T>& store, const std::string& name, int64_t channels);
    Tensor<T> forward(const Tensor<T>& x) const { return prelu(x, slope); }
};

template <typename T>
struct ResidualBlock {
    Conv2dLayer<T> conv1, conv2, down_conv;
    BatchNormLayer<T> bn1, bn2, down_bn;
    PReluLayer<T> act1, act_out;
    bool has_down = false;

    ResidualBlock() = default;
    ResidualBlock(ParamStore<T>& store, const std::string& name, int64_t in, int64_t out, int64_t stride,
                  int64_t dilation, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x, bool training);
};

template <typename T>
struct ContextModule {
    std::vector<int64_t> bins;
    std::vector<Conv2dLayer<T>> convs;
    std::vector<BatchNormLayer<T>> bns;
    std::vector<PReluLayer<T>> acts;
    int64_t out_channels = 0;

    ContextModule() = default;
    ContextModule(ParamStore<T>& store, const std::string& name, int64_t channels, int64_t feature_px,
                  Rng& rng);
    Tensor<T> forward(const Tensor<T>& x, bool training);
};

template <typename T>
struct StreamNet {
    StreamConfig cfg;
    Conv2dLayer<T> stem_conv;
    BatchNormLayer<T> stem_bn;
    PReluLayer<T> stem_act;
    std::vector<ResidualBlock<T>> stages;  // flattened blocks
    ContextModule<T> context;
    std::vector<Conv2dLayer<T>> dec_convs;
    std::vector<PReluLayer<T>> dec_acts;
    Conv2dLayer<T> head;

    StreamNet() = default;
    StreamNet(ParamStore<T>& store, const StreamConfig& cfg, int64_t classes, Rng& rng);

    Tensor<T> encode(const Tensor<T>& x, bool training);
    Tensor<T> decode(const Tensor<T>& features, bool training);
    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return decode(context.forward(encode(x, training), training), training);
    }
};

// --- the fused model -------------------------------------------------------------------

template <typename T>
class FusionModel {
public:
    FusionModel(FusionConfig cfg, uint64_t init_seed);

    // inputs: sensor id -> NCHW tensor; every configured stream must be fed
    Tensor<T> forward(const std::map<std::string, Tensor<T>>& inputs, bool training);

    // per-stream logits on the common grid (resize applied when needed)
    Tensor<T> stream_logits(const std::string& sensor, const Tensor<T>& input, bool training);

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const FusionConfig& config() const { return cfg_; }
    StreamNet<T>& stream(const std::string& sensor);

    nlohmann::json metadata() const;
    Checkpoint to_checkpoint() const;
    // strict load: every model parameter must match by name and shape
    void load(const Checkpoint& ckpt);

private:
    Tensor<T> fuse(std::vector<Tensor<T>> stream_maps, bool training);

    FusionConfig cfg_;
    ParamStore<T> params_;
    std::map<std::string, StreamNet<T>> streams_;
    Conv2dLayer<T> fuse_conv1_, fuse_conv2_, fuse_head_;
    PReluLayer<T> fuse_act1_, fuse_act2_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class FusionModel<float>;
extern template class FusionModel<double>;
extern template struct StreamNet<float>;
extern template struct StreamNet<double>;
extern template Tensor<float> extend_input_channels<float>(const Tensor<float>&, int64_t);
extern template Tensor<double> extend_input_channels<double>(const Tensor<double>&, int64_t);

}  // namespace m3net
