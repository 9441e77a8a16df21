#include "m3net/network.hpp"

namespace m3net {

int64_t plan_decoder_blocks(int64_t input_px, int64_t common_px) {
    if (input_px % 8 != 0)
        throw ValidationError("stream input size " + std::to_string(input_px) +
                              " px is not divisible by the encoder stride 8; pad the input to " +
                              std::to_string((input_px / 8 + 1) * 8) + " px");
    int64_t feat = input_px / 8;
    int64_t blocks = 0;
    while (blocks < 3 && feat * (1LL << (blocks + 1)) <= common_px) ++blocks;
    return blocks;
}

std::vector<int64_t> context_bins(int64_t feature_px) {
    if (feature_px < 3)
        throw ValidationError("feature grid " + std::to_string(feature_px) +
                              " px is too small for the context module (needs >= 3)");
    if (feature_px < 6) return {1, 2, 3};
    return {1, 2, 3, 6};
}

StreamConfig make_stream_config(const std::string& sensor, const std::string& preset, double tile_m) {
    StreamConfig c;
    c.sensor = sensor;
    if (sensor == "s1") {
        c.in_channels = 6;  // pre + post three-band radar stacks
        c.gsd = 5.0;
    } else if (sensor == "s2") {
        c.in_channels = 20;  // pre + post ten-band optical
        c.gsd = 10.0;
    } else if (sensor == "vhr") {
        c.in_channels = 3;  // post-event only
        c.gsd = preset == "full" ? 0.5 : 2.0;
    } else {
        throw ValidationError("unknown sensor '" + sensor + "' (expected s1, s2, or vhr)");
    }
    if (preset == "desk") {
        c.widths = {16, 32, 64, 128};
        c.blocks = {2, 2, 2, 2};
    } else if (preset == "full") {
        c.widths = {64, 128, 256, 512};
        c.blocks = {3, 4, 6, 3};
    } else {
        throw ValidationError("unknown encoder preset '" + preset + "' (expected desk or full)");
    }
    double px = tile_m / c.gsd;
    c.input_px = static_cast<int64_t>(std::llround(px));
    if (std::abs(px - static_cast<double>(c.input_px)) > 1e-6)
        throw ValidationError("tile size " + std::to_string(tile_m) + " m is not a whole number of " +
                              sensor + " pixels at " + std::to_string(c.gsd) + " m");
    return c;
}

FusionConfig make_fusion_config(const std::vector<std::string>& sensors, const std::string& preset,
                                double tile_m) {
    if (sensors.empty()) throw ValidationError("fusion config needs at least one stream");
    FusionConfig f;
    bool has_vhr = false;
    for (const auto& s : sensors) {
        f.streams.push_back(make_stream_config(s, preset, tile_m));
        if (s == "vhr") has_vhr = true;
    }
    f.common_gsd = has_vhr ? 2.0 : 10.0;
    f.common_px = static_cast<int64_t>(std::llround(tile_m / f.common_gsd));
    f.fusion_width = preset == "full" ? 64 : 32;
    for (auto& s : f.streams) s.decoder_blocks = plan_decoder_blocks(s.input_px, f.common_px);
    return f;
}

nlohmann::json stream_config_to_json(const StreamConfig& c) {
    return {{"sensor", c.sensor},   {"in_channels", c.in_channels}, {"input_px", c.input_px},
            {"gsd", c.gsd},         {"widths", c.widths},           {"blocks", c.blocks},
            {"decoder_blocks", c.decoder_blocks}};
}

StreamConfig stream_config_from_json(const nlohmann::json& j) {
    StreamConfig c;
    c.sensor = j.at("sensor").get<std::string>();
    c.in_channels = j.at("in_channels").get<int64_t>();
    c.input_px = j.at("input_px").get<int64_t>();
    c.gsd = j.at("gsd").get<double>();
    c.widths = j.at("widths").get<std::vector<int64_t>>();
    c.blocks = j.at("blocks").get<std::vector<int64_t>>();
    c.decoder_blocks = j.at("decoder_blocks").get<int64_t>();
    return c;
}

nlohmann::json fusion_config_to_json(const FusionConfig& c) {
    nlohmann::json streams = nlohmann::json::array();
    for (const auto& s : c.streams) streams.push_back(stream_config_to_json(s));
    return {{"streams", streams},
            {"classes", c.classes},
            {"common_gsd", c.common_gsd},
            {"common_px", c.common_px},
            {"fusion_width", c.fusion_width}};
}

FusionConfig fusion_config_from_json(const nlohmann::json& j) {
    FusionConfig c;
    for (const auto& s : j.at("streams")) c.streams.push_back(stream_config_from_json(s));
    c.classes = j.at("classes").get<int64_t>();
    c.common_gsd = j.at("common_gsd").get<double>();
    c.common_px = j.at("common_px").get<int64_t>();
    c.fusion_width = j.at("fusion_width").get<int64_t>();
    return c;
}

template <typename T>
Tensor<T> extend_input_channels(const Tensor<T>& weight, int64_t target) {
    const Shape& s = weight.shape();
    if (s.size() != 4 || s[1] != 3)
        throw ValidationError("extend_input_channels expects a [Cout,3,k,k] kernel, got " + shape_str(s));
    if (target < 3)
        throw ValidationError("extend_input_channels target " + std::to_string(target) + " is below 3");
    if (target == 3) return weight.detach();
    int64_t c_out = s[0], k = s[2], kk = k * s[3];
    Tensor<T> out = Tensor<T>::zeros({c_out, target, k, s[3]});
    const T* src = weight.data().data();
    T* dst = out.data().data();
    for (int64_t co = 0; co < c_out; ++co) {
        for (int64_t ci = 0; ci < 3; ++ci)
            std::copy(src + (co * 3 + ci) * kk, src + (co * 3 + ci + 1) * kk, dst + (co * target + ci) * kk);
        for (int64_t i = 0; i < kk; ++i) {
            T mean = (src[co * 3 * kk + i] + src[(co * 3 + 1) * kk + i] + src[(co * 3 + 2) * kk + i]) / T(3);
            for (int64_t ci = 3; ci < target; ++ci) dst[(co * target + ci) * kk + i] = mean;
        }
    }
    return out;
}

template <typename T>
Tensor<T> early_fuse_temporal(const Tensor<T>& pre, const Tensor<T>& post) {
    if (pre.rank() != 4 || post.rank() != 4 || pre.dim(0) != post.dim(0) || pre.dim(2) != post.dim(2) ||
        pre.dim(3) != post.dim(3))
        throw ValidationError("early_fuse_temporal: spatial mismatch " + shape_str(pre.shape()) + " vs " +
                              shape_str(post.shape()));
    return concat_channels<T>({pre, post});
}

// --- layers ---------------------------------------------------------------------

template <typename T>
Conv2dLayer<T>::Conv2dLayer(ParamStore<T>& store, const std::string& name, int64_t in, int64_t out,
                            int64_t k, int64_t stride_, int64_t dilation_, Rng& rng)
    : stride(stride_), dilation(dilation_), padding(dilation_ * (k - 1) / 2) {
    // He-normal initialization
    T std_dev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(in * k * k)));
    w = store.add(name + ".weight", Tensor<T>::randn({out, in, k, k}, rng, std_dev), true);
    b = store.add(name + ".bias", Tensor<T>::zeros({out}), true);
}

template <typename T>
BatchNormLayer<T>::BatchNormLayer(ParamStore<T>& store, const std::string& name, int64_t channels) {
    gamma = store.add(name + ".gamma", Tensor<T>::filled({channels}, T(1)), true);
    beta = store.add(name + ".beta", Tensor<T>::zeros({channels}), true);
    running_mean = store.add(name + ".running_mean", Tensor<T>::zeros({channels}), false);
    running_var = store.add(name + ".running_var", Tensor<T>::filled({channels}, T(1)), false);
}

template <typename T>
PReluLayer<T>::PReluLayer(ParamStore<T>& store, const std::string& name, int64_t channels) {
    slope = store.add(name + ".slope", Tensor<T>::filled({channels}, T(0.25)), true);
}

template <typename T>
ResidualBlock<T>::ResidualBlock(ParamStore<T>& store, const std::string& name, int64_t in, int64_t out,
                                int64_t stride, int64_t dilation, Rng& rng)
    : conv1(store, name + ".conv1", in, out, 3, stride, dilation, rng),
      conv2(store, name + ".conv2", out, out, 3, 1, dilation, rng),
      bn1(store, name + ".bn1", out),
      bn2(store, name + ".bn2", out),
      act1(store, name + ".act1", out),
      act_out(store, name + ".act_out", out) {
    has_down = stride != 1 || in != out;
    if (has_down) {
        down_conv = Conv2dLayer<T>(store, name + ".down.conv", in, out, 1, stride, 1, rng);
        down_bn = BatchNormLayer<T>(store, name + ".down.bn", out);
    }
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, bool training) {
    Tensor<T> y = act1.forward(bn1.forward(conv1.forward(x), training));
    y = bn2.forward(conv2.forward(y), training);
    Tensor<T> skip = has_down ? down_bn.forward(down_conv.forward(x), training) : x;
    return act_out.forward(add(y, skip));
}

template <typename T>
ContextModule<T>::ContextModule(ParamStore<T>& store, const std::string& name, int64_t channels,
                                int64_t feature_px, Rng& rng) {
    bins = context_bins(feature_px);
    int64_t branch_ch = channels / static_cast<int64_t>(bins.size());
    out_channels = channels + branch_ch * static_cast<int64_t>(bins.size());
    for (int64_t bin : bins) {
        std::string bname = name + ".branch" + std::to_string(bin);
        convs.emplace_back(store, bname + ".conv", channels, branch_ch, 1, 1, 1, rng);
        bns.emplace_back(store, bname + ".bn", branch_ch);
        acts.emplace_back(store, bname + ".act", branch_ch);
    }
}

template <typename T>
Tensor<T> ContextModule<T>::forward(const Tensor<T>& x, bool training) {
    int64_t h = x.dim(2), w = x.dim(3);
    std::vector<Tensor<T>> parts{x};
    for (size_t i = 0; i < bins.size(); ++i) {
        Tensor<T> p = adaptive_avg_pool(x, bins[i]);
        p = acts[i].forward(bns[i].forward(convs[i].forward(p), training));
        parts.push_back(bilinear_resize(p, h, w));
    }
    return concat_channels(parts);
}

template <typename T>
StreamNet<T>::StreamNet(ParamStore<T>& store, const StreamConfig& config, int64_t classes, Rng& rng)
    : cfg(config) {
    if (cfg.widths.size() != 4 || cfg.blocks.size() != 4)
        throw ValidationError("stream config needs 4 stage widths and 4 block counts");
    const std::string p = cfg.sensor;
    stem_conv = Conv2dLayer<T>(store, p + ".stem.conv", cfg.in_channels, cfg.widths[0], 3, 2, 1, rng);
    stem_bn = BatchNormLayer<T>(store, p + ".stem.bn", cfg.widths[0]);
    stem_act = PReluLayer<T>(store, p + ".stem.act", cfg.widths[0]);

    // stages 1-2 downsample (total stride 8 with the stem); stages 3-4 keep
    // stride 1 with dilations 2 and 4
    int64_t in_ch = cfg.widths[0];
    const int64_t stage_stride[4] = {2, 2, 1, 1};
    const int64_t stage_dilation[4] = {1, 1, 2, 4};
    for (int stage = 0; stage < 4; ++stage) {
        for (int64_t blk = 0; blk < cfg.blocks[stage]; ++blk) {
            std::string name =
                p + ".stage" + std::to_string(stage + 1) + ".block" + std::to_string(blk);
            int64_t stride = blk == 0 ? stage_stride[stage] : 1;
            stages.emplace_back(store, name, in_ch, cfg.widths[stage], stride, stage_dilation[stage], rng);
            in_ch = cfg.widths[stage];
        }
    }

    if (cfg.input_px % 8 != 0)
        throw ValidationError("stream " + p + ": input " + std::to_string(cfg.input_px) +
                              " px is not divisible by the encoder stride 8; pad the input to " +
                              std::to_string((cfg.input_px / 8 + 1) * 8) + " px");
    int64_t feature_px = cfg.input_px / 8;
    context = ContextModule<T>(store, p + ".ctx", cfg.widths[3], feature_px, rng);

    int64_t dec_in = context.out_channels;
    int64_t width = std::max<int64_t>(16, cfg.widths[3] / 2);
    for (int64_t i = 0; i < cfg.decoder_blocks; ++i) {
        std::string name = p + ".dec.block" + std::to_string(i);
        dec_convs.emplace_back(store, name + ".conv", dec_in, width, 3, 1, 1, rng);
        dec_acts.emplace_back(store, name + ".act", width);
        dec_in = width;
        width = std::max<int64_t>(16, width / 2);
    }
    head = Conv2dLayer<T>(store, p + ".head", dec_in, classes, 1, 1, 1, rng);
}

template <typename T>
Tensor<T> StreamNet<T>::encode(const Tensor<T>& x, bool training) {
    if (x.dim(1) != cfg.in_channels)
        throw ValidationError("stream " + cfg.sensor + ": expected " + std::to_string(cfg.in_channels) +
                              " input channels, got " + shape_str(x.shape()));
    if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0)
        throw ValidationError("stream " + cfg.sensor + ": input " + shape_str(x.shape()) +
                              " is not divisible by the encoder stride 8; pad to " +
                              std::to_string((x.dim(2) / 8 + 1) * 8) + " px");
    Tensor<T> y = stem_act.forward(stem_bn.forward(stem_conv.forward(x), training));
    for (auto& block : stages) y = block.forward(y, training);
    return y;
}

template <typename T>
Tensor<T> StreamNet<T>::decode(const Tensor<T>& features, bool training) {
    (void)training;
    Tensor<T> y = features;
    for (size_t i = 0; i < dec_convs.size(); ++i) {
        y = bilinear_upsample(y, 2);
        y = dec_acts[i].forward(dec_convs[i].forward(y));
    }
    return head.forward(y);
}

// --- fusion model ------------------------------------------------------------------

template <typename T>
FusionModel<T>::FusionModel(FusionConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
    if (cfg_.streams.empty()) throw ValidationError("fusion model needs at least one stream");
    if (cfg_.common_px < 1) throw ValidationError("fusion model: common grid is unset");
    Rng rng = Rng(init_seed).stream("init");
    for (const auto& sc : cfg_.streams) {
        if (streams_.count(sc.sensor)) throw ValidationError("duplicate stream '" + sc.sensor + "'");
        streams_.emplace(sc.sensor, StreamNet<T>(params_, sc, cfg_.classes, rng));
    }
    int64_t concat_ch = cfg_.classes * static_cast<int64_t>(cfg_.streams.size());
    int64_t w1 = cfg_.fusion_width, w2 = std::max<int64_t>(4, cfg_.fusion_width / 2);
    fuse_conv1_ = Conv2dLayer<T>(params_, "fusion.conv1", concat_ch, w1, 3, 1, 1, rng);
    fuse_act1_ = PReluLayer<T>(params_, "fusion.act1", w1);
    fuse_conv2_ = Conv2dLayer<T>(params_, "fusion.conv2", w1, w2, 3, 1, 1, rng);
    fuse_act2_ = PReluLayer<T>(params_, "fusion.act2", w2);
    fuse_head_ = Conv2dLayer<T>(params_, "fusion.head", w2, cfg_.classes, 1, 1, 1, rng);
}

template <typename T>
StreamNet<T>& FusionModel<T>::stream(const std::string& sensor) {
    auto it = streams_.find(sensor);
    if (it == streams_.end()) throw ValidationError("model has no stream '" + sensor + "'");
    return it->second;
}

template <typename T>
Tensor<T> FusionModel<T>::stream_logits(const std::string& sensor, const Tensor<T>& input, bool training) {
    StreamNet<T>& net = stream(sensor);
    Tensor<T> logits = net.forward(input, training);
    if (logits.dim(2) != cfg_.common_px || logits.dim(3) != cfg_.common_px)
        logits = bilinear_resize(logits, cfg_.common_px, cfg_.common_px);
    return logits;
}

template <typename T>
Tensor<T> FusionModel<T>::fuse(std::vector<Tensor<T>> maps, bool training) {
    (void)training;
    if (maps.empty()) throw ValidationError("fuse: no stream maps");
    int64_t n = maps[0].dim(0);
    for (const auto& m : maps)
        if (m.dim(0) != n)
            throw ValidationError("fuse: mismatched batch size " + shape_str(m.shape()));
    Tensor<T> x = concat_channels(maps);
    x = fuse_act1_.forward(fuse_conv1_.forward(x));
    x = fuse_act2_.forward(fuse_conv2_.forward(x));
    return fuse_head_.forward(x);
}

template <typename T>
Tensor<T> FusionModel<T>::forward(const std::map<std::string, Tensor<T>>& inputs, bool training) {
    std::vector<Tensor<T>> maps;
    for (const auto& sc : cfg_.streams) {
        auto it = inputs.find(sc.sensor);
        if (it == inputs.end())
            throw ValidationError("forward: missing input for stream '" + sc.sensor + "'");
        maps.push_back(stream_logits(sc.sensor, it->second, training));
    }
    return fuse(std::move(maps), training);
}

template <typename T>
nlohmann::json FusionModel<T>::metadata() const {
    nlohmann::json bins = nlohmann::json::object();
    for (const auto& [sensor, net] : streams_) bins[sensor] = net.context.bins;
    return {{"format_version", 1},
            {"fusion", fusion_config_to_json(cfg_)},
            {"context_bins", bins},
            {"normalization", {{"kind", "batchnorm"}, {"momentum", 0.1}, {"eps", 1e-5}}},
            {"statistics_policy", "train mode updates running statistics; eval mode reads them"}};
}

template <typename T>
Checkpoint FusionModel<T>::to_checkpoint() const {
    Checkpoint ckpt;
    for (const auto& e : params_.entries()) ckpt.push_back(make_entry(e.name, e.tensor));
    return ckpt;
}

template <typename T>
void FusionModel<T>::load(const Checkpoint& ckpt) {
    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : ckpt) by_name[e.name] = &e;
    for (auto& e : params_.entries()) {
        auto it = by_name.find(e.name);
        if (it == by_name.end()) throw ValidationError("checkpoint is missing parameter '" + e.name + "'");
        if (it->second->shape != e.tensor.shape())
            throw ValidationError("checkpoint shape mismatch for '" + e.name + "': " +
                                  shape_str(it->second->shape) + " vs " + shape_str(e.tensor.shape()));
        e.tensor.data() = it->second->template values<T>();
    }
}

template struct Conv2dLayer<float>;
template struct Conv2dLayer<double>;
template struct BatchNormLayer<float>;
template struct BatchNormLayer<double>;
template struct PReluLayer<float>;
template struct PReluLayer<double>;
template struct ResidualBlock<float>;
template struct ResidualBlock<double>;
template struct ContextModule<float>;
template struct ContextModule<double>;
template struct StreamNet<float>;
template struct StreamNet<double>;
template class ParamStore<float>;
template class ParamStore<double>;
template class FusionModel<float>;
template class FusionModel<double>;
template Tensor<float> extend_input_channels<float>(const Tensor<float>&, int64_t);
template Tensor<double> extend_input_channels<double>(const Tensor<double>&, int64_t);
template Tensor<float> early_fuse_temporal<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> early_fuse_temporal<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace m3net
