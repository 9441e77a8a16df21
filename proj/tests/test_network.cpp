#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "m3net/network.hpp"
#include "oracles.hpp"

using namespace m3net;

namespace {

// tiny widths keep the shape/behavior tests fast
StreamConfig tiny_stream(const std::string& sensor, int64_t in_ch, int64_t px, int64_t dec_blocks) {
    StreamConfig c;
    c.sensor = sensor;
    c.in_channels = in_ch;
    c.input_px = px;
    c.gsd = 10.0;
    c.widths = {4, 4, 8, 8};
    c.blocks = {1, 1, 1, 1};
    c.decoder_blocks = dec_blocks;
    return c;
}

FusionConfig tiny_fusion(std::vector<StreamConfig> streams, int64_t common_px) {
    FusionConfig f;
    f.streams = std::move(streams);
    f.common_px = common_px;
    f.common_gsd = 10.0;
    f.fusion_width = 8;
    return f;
}

}  // namespace

TEST_CASE("encoder reaches stride 8 on the configured geometries") {
    Rng rng(401);
    // Sentinel-2 geometry: 20 channels at 96 px -> 12x12 features
    {
        FusionModel<float> model(tiny_fusion({tiny_stream("s2", 20, 96, 3)}, 96), 1);
        auto x = Tensor<float>::randn({1, 20, 96, 96}, rng, 0.5f);
        auto f = model.stream("s2").encode(x, false);
        CHECK(f.shape() == Shape{1, 8, 12, 12});
    }
    // Sentinel-1 geometry: 6 channels at 192 px -> 24x24 features
    {
        FusionModel<float> model(tiny_fusion({tiny_stream("s1", 6, 192, 2)}, 96), 1);
        auto x = Tensor<float>::randn({1, 6, 192, 192}, rng, 0.5f);
        auto f = model.stream("s1").encode(x, false);
        CHECK(f.shape() == Shape{1, 8, 24, 24});
    }
    // desk geometry: 64 px -> 8x8
    {
        FusionModel<float> model(tiny_fusion({tiny_stream("vhr", 3, 64, 3)}, 64), 1);
        auto x = Tensor<float>::randn({1, 3, 64, 64}, rng, 0.5f);
        auto f = model.stream("vhr").encode(x, false);
        CHECK(f.shape() == Shape{1, 8, 8, 8});
    }
}

TEST_CASE("encoder rejects inputs not divisible by 8 with a padding hint") {
    FusionModel<float> model(tiny_fusion({tiny_stream("s2", 4, 48, 3)}, 48), 1);
    auto x = Tensor<float>::zeros({1, 4, 44, 44});
    try {
        model.stream("s2").encode(x, false);
        FAIL("expected rejection");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("48") != std::string::npos);  // padding hint
    }
}

TEST_CASE("context module doubles channels with bins 1,2,3,6") {
    CHECK(context_bins(12) == std::vector<int64_t>{1, 2, 3, 6});
    CHECK(context_bins(6) == std::vector<int64_t>{1, 2, 3, 6});
    CHECK(context_bins(4) == std::vector<int64_t>{1, 2, 3});
    CHECK_THROWS_AS(context_bins(2), ValidationError);

    Rng rng(402);
    ParamStore<float> store;
    ContextModule<float> ctx(store, "ctx", 8, 12, rng);
    CHECK(ctx.out_channels == 16);  // C + 4*C/4
    auto x = Tensor<float>::randn({2, 8, 12, 12}, rng);
    auto y = ctx.forward(x, true);
    CHECK(y.shape() == Shape{2, 16, 12, 12});
}

TEST_CASE("context module on constant input stays constant per channel") {
    Rng rng(403);
    ParamStore<float> store;
    ContextModule<float> ctx(store, "ctx", 8, 8, rng);
    auto x = Tensor<float>::filled({2, 8, 8, 8}, 1.25f);
    auto y = ctx.forward(x, false);
    int64_t plane = 64;
    for (int64_t c = 0; c < y.dim(1); ++c) {
        float first = y.data()[c * plane];
        for (int64_t i = 0; i < plane; ++i) CHECK(y.data()[c * plane + i] == doctest::Approx(first).epsilon(1e-6));
    }
}

TEST_CASE("bin-1 context branch carries the global average") {
    Rng rng(404);
    auto x = Tensor<float>::randn({1, 3, 6, 6}, rng);
    auto pooled = adaptive_avg_pool(x, 1);
    auto spread = bilinear_resize(pooled, 6, 6);
    for (int64_t c = 0; c < 3; ++c) {
        double mean = 0;
        for (int64_t i = 0; i < 36; ++i) mean += x.data()[c * 36 + i];
        mean /= 36.0;
        for (int64_t i = 0; i < 36; ++i)
            CHECK(spread.data()[c * 36 + i] == doctest::Approx(mean).epsilon(1e-6));
    }
}

TEST_CASE("decoder block counts map feature grids to the common grid") {
    CHECK(plan_decoder_blocks(96, 96) == 3);    // S2: 12 -> 96
    CHECK(plan_decoder_blocks(192, 96) == 2);   // S1: 24 -> 96
    CHECK(plan_decoder_blocks(32, 32) == 3);    // desk S2: 4 -> 32
    CHECK(plan_decoder_blocks(64, 32) == 2);    // desk S1: 8 -> 32
    CHECK(plan_decoder_blocks(160, 160) == 3);  // desk VHR: 20 -> 160
    CHECK(plan_decoder_blocks(32, 160) == 3);   // capped; resize covers the rest
    CHECK(plan_decoder_blocks(160, 32) == 0);   // downscale at fuse time
    CHECK_THROWS_AS(plan_decoder_blocks(44, 96), ValidationError);
}

TEST_CASE("decode upsamples by 2^blocks and blocks 0 is the classifier only") {
    Rng rng(405);
    {
        FusionModel<float> model(tiny_fusion({tiny_stream("s2", 4, 96, 3)}, 96), 7);
        auto x = Tensor<float>::randn({1, 4, 96, 96}, rng, 0.3f);
        auto logits = model.stream("s2").forward(x, false);
        CHECK(logits.shape() == Shape{1, 2, 96, 96});
    }
    {
        FusionModel<float> model(tiny_fusion({tiny_stream("s1", 4, 192, 2)}, 96), 7);
        auto x = Tensor<float>::randn({1, 4, 192, 192}, rng, 0.3f);
        auto logits = model.stream("s1").forward(x, false);
        CHECK(logits.shape() == Shape{1, 2, 96, 96});
    }
    {
        FusionModel<float> model(tiny_fusion({tiny_stream("s2", 4, 32, 0)}, 4), 7);
        auto x = Tensor<float>::randn({1, 4, 32, 32}, rng, 0.3f);
        auto logits = model.stream("s2").forward(x, false);
        CHECK(logits.shape() == Shape{1, 2, 4, 4});  // spatial size preserved
    }
}

TEST_CASE("single-stream fusion head can pass logits through unchanged") {
    Rng rng(406);
    FusionModel<float> model(tiny_fusion({tiny_stream("s2", 4, 32, 3)}, 32), 3);
    // identity construction: center-tap kernels, linear activations
    auto& p = model.params();
    auto set_identity = [&](const std::string& name) {
        auto& w = p.at(name + ".weight");
        int64_t out_ch = w.dim(0), in_ch = w.dim(1), k = w.dim(2);
        std::fill(w.data().begin(), w.data().end(), 0.0f);
        for (int64_t c = 0; c < std::min(out_ch, in_ch); ++c)
            w.data()[(c * in_ch + c) * k * k + (k * k) / 2] = 1.0f;
        auto& b = p.at(name + ".bias");
        std::fill(b.data().begin(), b.data().end(), 0.0f);
    };
    set_identity("fusion.conv1");
    set_identity("fusion.conv2");
    set_identity("fusion.head");
    std::fill(p.at("fusion.act1.slope").data().begin(), p.at("fusion.act1.slope").data().end(), 1.0f);
    std::fill(p.at("fusion.act2.slope").data().begin(), p.at("fusion.act2.slope").data().end(), 1.0f);

    auto x = Tensor<float>::randn({2, 4, 32, 32}, rng, 0.3f);
    NoGradGuard guard;
    auto stream_map = model.stream_logits("s2", x, false);
    auto fused = model.forward({{"s2", x}}, false);
    REQUIRE(fused.shape() == stream_map.shape());
    for (size_t i = 0; i < fused.data().size(); ++i)
        CHECK(fused.data()[i] == doctest::Approx(stream_map.data()[i]).epsilon(1e-5));
}

TEST_CASE("fusion forward produces finite logits and reaches every stream backward") {
    Rng rng(407);
    FusionConfig cfg = tiny_fusion(
        {tiny_stream("s1", 6, 64, 2), tiny_stream("s2", 20, 32, 3), tiny_stream("vhr", 3, 64, 3)}, 32);
    FusionModel<float> model(cfg, 11);
    std::map<std::string, Tensor<float>> inputs;
    inputs["s1"] = Tensor<float>::randn({2, 6, 64, 64}, rng, 0.4f);
    inputs["s2"] = Tensor<float>::randn({2, 20, 32, 32}, rng, 0.4f);
    inputs["vhr"] = Tensor<float>::randn({2, 3, 64, 64}, rng, 0.4f);
    model.params().zero_grad();
    auto logits = model.forward(inputs, true);
    CHECK(logits.shape() == Shape{2, 2, 32, 32});
    for (float v : logits.data()) CHECK(std::isfinite(v));

    std::vector<int32_t> target(2 * 32 * 32, 0);
    for (size_t i = 0; i < target.size(); i += 3) target[i] = 1;
    auto loss = softmax_cross_entropy(logits, target);
    loss.backward();
    for (const char* stem : {"s1.stem.conv.weight", "s2.stem.conv.weight", "vhr.stem.conv.weight"}) {
        double norm = 0;
        for (float g : model.params().at(stem).grad()) norm += static_cast<double>(g) * g;
        CHECK(norm > 0.0);
    }
}

TEST_CASE("forward rejects a missing stream input") {
    FusionModel<float> model(tiny_fusion({tiny_stream("s1", 6, 32, 2), tiny_stream("s2", 20, 32, 3)}, 32), 1);
    std::map<std::string, Tensor<float>> inputs;
    inputs["s1"] = Tensor<float>::zeros({1, 6, 32, 32});
    CHECK_THROWS_AS(model.forward(inputs, false), ValidationError);
}

TEST_CASE("fuse rejects mismatched batch sizes") {
    FusionModel<float> model(tiny_fusion({tiny_stream("s1", 6, 32, 2), tiny_stream("s2", 20, 32, 3)}, 32), 1);
    std::map<std::string, Tensor<float>> inputs;
    inputs["s1"] = Tensor<float>::zeros({1, 6, 32, 32});
    inputs["s2"] = Tensor<float>::zeros({2, 20, 32, 32});
    CHECK_THROWS_AS(model.forward(inputs, false), ValidationError);
}

TEST_CASE("early temporal fusion concatenates pre before post") {
    auto pre = Tensor<float>::filled({1, 3, 4, 4}, 1.0f);
    auto post = Tensor<float>::filled({1, 3, 4, 4}, 2.0f);
    auto fused = early_fuse_temporal(pre, post);
    CHECK(fused.shape() == Shape{1, 6, 4, 4});
    CHECK(fused.data()[0] == 1.0f);
    CHECK(fused.data()[3 * 16] == 2.0f);

    auto pre10 = Tensor<float>::zeros({1, 10, 4, 4});
    auto post10 = Tensor<float>::zeros({1, 10, 4, 4});
    CHECK(early_fuse_temporal(pre10, post10).dim(1) == 20);

    auto swapped = early_fuse_temporal(post, pre);
    CHECK(swapped.shape() == fused.shape());
    CHECK(swapped.data() != fused.data());  // order-sensitive content

    auto bad = Tensor<float>::zeros({1, 3, 5, 4});
    CHECK_THROWS_AS(early_fuse_temporal(pre, bad), ValidationError);
}

TEST_CASE("extend_input_channels copies RGB filters and appends their mean") {
    // target 3 is the identity
    Rng rng(408);
    auto w3 = Tensor<float>::randn({4, 3, 3, 3}, rng);
    auto same = extend_input_channels(w3, 3);
    CHECK(same.data() == w3.data());

    // constant per-channel filters 1,2,3 -> every extra channel constant 2
    auto w = Tensor<float>::zeros({1, 3, 3, 3});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < 9; ++i) w.data()[c * 9 + i] = static_cast<float>(c + 1);
    auto w5 = extend_input_channels(w, 5);
    REQUIRE(w5.shape() == Shape{1, 5, 3, 3});
    for (int64_t c = 3; c < 5; ++c)
        for (int64_t i = 0; i < 9; ++i) CHECK(w5.data()[c * 9 + i] == doctest::Approx(2.0f));

    // target 20: 17 identical mean filters, verified elementwise
    auto wr = Tensor<double>::randn({2, 3, 3, 3}, rng);
    auto w20 = extend_input_channels(wr, 20);
    REQUIRE(w20.shape() == Shape{2, 20, 3, 3});
    for (int64_t co = 0; co < 2; ++co)
        for (int64_t i = 0; i < 9; ++i) {
            double mean = (wr.data()[(co * 3) * 9 + i] + wr.data()[(co * 3 + 1) * 9 + i] +
                           wr.data()[(co * 3 + 2) * 9 + i]) /
                          3.0;
            for (int64_t c = 0; c < 3; ++c)
                CHECK(w20.data()[(co * 20 + c) * 9 + i] == wr.data()[(co * 3 + c) * 9 + i]);
            for (int64_t c = 3; c < 20; ++c)
                CHECK(w20.data()[(co * 20 + c) * 9 + i] == doctest::Approx(mean).epsilon(1e-12));
        }

    CHECK_THROWS_AS(extend_input_channels(w3, 2), ValidationError);
    auto w4 = Tensor<float>::zeros({1, 4, 3, 3});
    CHECK_THROWS_AS(extend_input_channels(w4, 6), ValidationError);
}

TEST_CASE("shape contract holds over the configuration matrix") {
    Rng rng(409);
    struct Case {
        std::string sensor;
        int64_t ch, px;
    };
    const int64_t common = 32;
    for (const Case& c : {Case{"s1", 6, 64}, Case{"s2", 20, 32}, Case{"vhr", 3, 160}}) {
        StreamConfig sc = tiny_stream(c.sensor, c.ch, c.px, plan_decoder_blocks(c.px, common));
        FusionModel<float> model(tiny_fusion({sc}, common), 3);
        auto x = Tensor<float>::randn({1, c.ch, c.px, c.px}, rng, 0.3f);
        NoGradGuard guard;
        auto logits = model.forward({{c.sensor, x}}, false);
        CHECK(logits.shape() == Shape{1, 2, common, common});
    }
}

TEST_CASE("stream configs from presets match the published geometries") {
    FusionConfig full = make_fusion_config({"s1", "s2", "vhr"}, "full", 960.0);
    CHECK(full.common_gsd == 2.0);
    CHECK(full.common_px == 480);
    for (const auto& s : full.streams) {
        if (s.sensor == "s1") {
            CHECK(s.in_channels == 6);
            CHECK(s.input_px == 192);
        }
        if (s.sensor == "s2") {
            CHECK(s.in_channels == 20);
            CHECK(s.input_px == 96);
        }
        if (s.sensor == "vhr") {
            CHECK(s.in_channels == 3);
            CHECK(s.input_px == 1920);
            CHECK(s.decoder_blocks == 1);  // 240 -> 480
        }
    }
    FusionConfig sentinel = make_fusion_config({"s1", "s2"}, "full", 960.0);
    CHECK(sentinel.common_gsd == 10.0);
    CHECK(sentinel.common_px == 96);
    for (const auto& s : sentinel.streams) {
        if (s.sensor == "s2") CHECK(s.decoder_blocks == 3);
        if (s.sensor == "s1") CHECK(s.decoder_blocks == 2);
    }

    FusionConfig desk = make_fusion_config({"s1", "s2"}, "desk", 320.0);
    CHECK(desk.common_px == 32);
    CHECK(desk.streams[0].widths == std::vector<int64_t>{16, 32, 64, 128});
}

TEST_CASE("fusion config json round-trip") {
    FusionConfig cfg = make_fusion_config({"s2", "vhr"}, "desk", 320.0);
    FusionConfig back = fusion_config_from_json(fusion_config_to_json(cfg));
    CHECK(back.common_px == cfg.common_px);
    CHECK(back.streams.size() == 2);
    CHECK(back.streams[1].sensor == cfg.streams[1].sensor);
    CHECK(back.streams[0].widths == cfg.streams[0].widths);
}

TEST_CASE("model checkpoint save/load restores the forward pass bit-exactly") {
    Rng rng(410);
    set_thread_cap(1);
    FusionModel<float> model(tiny_fusion({tiny_stream("s2", 4, 32, 3)}, 32), 9);
    auto x = Tensor<float>::randn({1, 4, 32, 32}, rng, 0.3f);
    NoGradGuard guard;
    auto before = model.forward({{"s2", x}}, false);
    Checkpoint ckpt = model.to_checkpoint();

    FusionModel<float> other(tiny_fusion({tiny_stream("s2", 4, 32, 3)}, 32), 1234);
    other.load(ckpt);
    auto after = other.forward({{"s2", x}}, false);
    CHECK(before.data() == after.data());
    set_thread_cap(0);
}
