#include <doctest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "wase/common.hpp"
#include "wase/corpus.hpp"
#include "wase/model.hpp"
#include "wase/tensor.hpp"

using namespace wase;

namespace {

void randomize_params(WaseModel& model, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (const auto& [name, t] : model.named_params()) {
        (void)name;
        Tensor h = t;  // non-const handle to the shared node
        for (auto& v : h.values()) v = u(rng);
    }
}

Tensor rand_signal(int t, uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Tensor::uniform({1, t}, -0.8, 0.8, rng);
}

// deterministic weighted sum so every output element influences the loss
Tensor weighted(const Tensor& y, uint64_t salt) {
    std::mt19937_64 rng(salt);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> w(static_cast<size_t>(y.size()));
    for (auto& x : w) x = u(rng);
    return sum(mul(y, Tensor::from_values(y.shape(), std::move(w))));
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("config: presets validate, tiny stays under the FD budget, paper lands near 7.5M") {
    desk_config().validate();
    paper_config().validate();
    tiny_config().validate();

    WaseModel tiny(tiny_config());
    CHECK(tiny.param_count() == 1990);
    CHECK(tiny.param_count() <= 2000);

    WaseModel desk(desk_config());
    CHECK(desk.param_count() == 322120);

    WaseModel paper(paper_config());
    CHECK(paper.param_count() >= 6000000);
    CHECK(paper.param_count() <= 9000000);
    CHECK(paper.param_count() == 7513406);
}

TEST_CASE("config: json round trip, unknown keys and bad values rejected") {
    ModelConfig cfg = desk_config();
    cfg.cue_mode = "onset_voiceprint";
    cfg.groups = 3;
    ModelConfig back = model_config_from_json(model_config_to_json(cfg));
    CHECK(back.cue_mode == cfg.cue_mode);
    CHECK(back.groups == 3);
    CHECK(back.C == cfg.C);
    CHECK(model_config_to_json(back) == model_config_to_json(cfg));

    CHECK_THROWS_AS(model_config_from_json("{\"bogus\": 1}"), config_error);
    CHECK_THROWS_AS(model_config_from_json("{\"cue_mode\": \"psychic\"}"), config_error);
    CHECK_THROWS_AS(model_config_from_json("{\"K_dconv\": 4}"), config_error);
    CHECK_THROWS_AS(model_config_from_json("{\"C\": 0}"), config_error);
    CHECK_THROWS_AS(model_config_from_json("not json"), config_error);

    ModelConfig modes = desk_config();
    modes.cue_mode = "none";
    CHECK(!modes.has_detector());
    CHECK(!modes.has_voiceprint_gate());
    CHECK(!modes.uses_reference());
    modes.cue_mode = "voiceprint";
    CHECK(!modes.has_detector());
    CHECK(modes.has_voiceprint_gate());
    CHECK(modes.uses_reference());
    modes.cue_mode = "onset";
    CHECK(modes.has_detector());
    CHECK(!modes.has_voiceprint_gate());
    CHECK(modes.label_mode() == "onset");
    modes.cue_mode = "onset_offset_voiceprint";
    CHECK(modes.has_detector());
    CHECK(modes.has_voiceprint_gate());
    CHECK(modes.label_mode() == "onset_offset");
}

TEST_CASE("encode: frame count formula and bias-free zero map") {
    ModelConfig cfg = desk_config();
    CHECK(cfg.frames_for(32000) == 1599);  // floor((32000 - 40) / 20) + 1
    CHECK(cfg.frames_for(20000) == 999);
    CHECK_THROWS_AS(cfg.frames_for(10), std::invalid_argument);

    WaseModel model(tiny_config());
    Tensor u = model.encode(rand_signal(200, 3));
    REQUIRE(u.shape() == std::vector<int>{8, 49});

    Tensor uz = model.encode(Tensor::zeros({1, 200}));
    for (double v : uz.values()) CHECK(v == 0.0);

    CHECK_THROWS_AS(model.encode(Tensor::zeros({1, 4})), std::invalid_argument);
}

TEST_CASE("decode: length contract and bias-free zero map") {
    WaseModel model(tiny_config());
    randomize_params(model, 5);
    Tensor y = model.decode(Tensor::zeros({8, 49}));
    REQUIRE(y.shape() == std::vector<int>{1, 48 * 4 + 8});  // (L-1)*stride + kernel
    for (double v : y.values()) CHECK(v == 0.0);

    // output stays within one encoder stride of the input length
    const int t = 200;
    Tensor out = model.decode(model.encode(rand_signal(t, 7)));
    CHECK(out.dim(1) <= t);
    CHECK(t - out.dim(1) < tiny_config().enc_stride);
}

TEST_CASE("voiceprint: C x 1 shape for any length >= kernel, deterministic, length guard") {
    WaseModel model(tiny_config());
    randomize_params(model, 11);
    Tensor v1 = model.voiceprint(rand_signal(48, 21));
    Tensor v2 = model.voiceprint(rand_signal(131, 22));
    REQUIRE(v1.shape() == std::vector<int>{8, 1});
    REQUIRE(v2.shape() == std::vector<int>{8, 1});

    Tensor again = model.voiceprint(rand_signal(48, 21));
    CHECK(again.values() == v1.values());

    CHECK_THROWS_AS(model.voiceprint(rand_signal(15, 1)), std::invalid_argument);
}

TEST_CASE("voiceprint: same-speaker references embed closer than cross-speaker (desk model)") {
    Corpus c = synth_corpus(4, 3, 1.0, 8000, 29);
    WaseModel model(desk_config());  // untrained: a fixed random projection suffices

    std::vector<std::vector<double>> emb;
    std::vector<std::string> spk;
    {
        NoGradGuard ng;
        for (const auto& clip : c.clips) {
            Tensor r = Tensor::from_values({1, static_cast<int>(clip.audio.samples.size())},
                                           clip.audio.samples);
            emb.push_back(model.voiceprint(r).values());
            spk.push_back(clip.speaker_id);
        }
    }
    // center across the corpus so cosine measures speaker structure, not the
    // shared bias of the untrained network
    std::vector<double> mean(emb[0].size(), 0.0);
    for (const auto& e : emb) {
        for (size_t i = 0; i < e.size(); ++i) mean[i] += e[i] / static_cast<double>(emb.size());
    }
    for (auto& e : emb) {
        for (size_t i = 0; i < e.size(); ++i) e[i] -= mean[i];
    }

    double same_sum = 0, cross_sum = 0;
    int same_n = 0, cross_n = 0;
    for (size_t a = 0; a < emb.size(); ++a) {
        for (size_t b = a + 1; b < emb.size(); ++b) {
            const double cs = cosine(emb[a], emb[b]);
            if (spk[a] == spk[b]) {
                same_sum += cs;
                ++same_n;
            } else {
                cross_sum += cs;
                ++cross_n;
            }
        }
    }
    CHECK(same_sum / same_n > cross_sum / cross_n);
}

TEST_CASE("detect_cue: 1 x L output strictly inside (0,1), gradients reach U and v") {
    WaseModel model(tiny_config());
    randomize_params(model, 13);
    std::mt19937_64 rng(5);
    Tensor u = Tensor::uniform({8, 49}, -1, 1, rng, true);
    Tensor v = Tensor::uniform({8, 1}, -1, 1, rng, true);
    Tensor cue = model.detect_cue(u, v);
    REQUIRE(cue.shape() == std::vector<int>{1, 49});
    for (double x : cue.values()) {
        CHECK(x > 0.0);
        CHECK(x < 1.0);
    }
    backward(sum(cue));
    double gu = 0, gv = 0;
    for (double g : u.grad()) gu += std::abs(g);
    for (double g : v.grad()) gv += std::abs(g);
    CHECK(gu > 0.0);
    CHECK(gv > 0.0);
}

TEST_CASE("forward at init: zero residual/skip heads give a flat 0.5 mask") {
    // With zero-initialized TCN output heads the skip sum is zero, so the mask
    // head sees zeros and the mask is sigmoid(0) = 0.5 everywhere: both
    // decoded estimates coincide exactly.
    ModelConfig cfg = tiny_config();
    cfg.cue_mode = "none";
    WaseModel model(cfg);
    auto out = model.forward(rand_signal(200, 31), Tensor());
    REQUIRE(out.target_est.size() == out.interferer_est.size());
    for (int64_t i = 0; i < out.target_est.size(); ++i) {
        REQUIRE(out.target_est.values()[i] == out.interferer_est.values()[i]);
    }
    CHECK(!out.cue.defined());
    REQUIRE(out.probes.size() == 2);  // bottleneck + one group
}

TEST_CASE("forward: residual masks decode complementarily (mode none)") {
    ModelConfig cfg = tiny_config();
    cfg.cue_mode = "none";
    WaseModel model(cfg);
    randomize_params(model, 17);
    Tensor x = rand_signal(200, 33);
    auto out = model.forward(x, Tensor());
    Tensor whole = model.decode(model.encode(x));
    REQUIRE(out.target_est.size() == whole.size());
    for (int64_t i = 0; i < whole.size(); ++i) {
        const double sum2 = out.target_est.values()[i] + out.interferer_est.values()[i];
        REQUIRE(std::abs(sum2 - whole.values()[i]) <= 1e-12);
    }
}

TEST_CASE("forward_with_cue: all-zero cue annihilates the target output bit-exactly") {
    for (const char* mode : {"onset_offset", "onset_offset_voiceprint"}) {
        ModelConfig cfg = tiny_config();
        cfg.cue_mode = mode;
        WaseModel model(cfg);
        randomize_params(model, 19);  // nonzero biases everywhere
        std::vector<double> zeros(60, 0.0);
        auto out = model.forward_with_cue(rand_signal(200, 35), rand_signal(64, 36), zeros);
        for (double v : out.target_est.values()) REQUIRE(v == 0.0);
        // the interferer branch reads the ungated features and stays live
        double mag = 0.0;
        for (double v : out.interferer_est.values()) mag += std::abs(v);
        CHECK(mag > 0.0);
    }
}

TEST_CASE("forward_with_cue: all-one cue equals the ungated forward") {
    ModelConfig gated_cfg = tiny_config();
    gated_cfg.cue_mode = "onset_offset";
    ModelConfig plain_cfg = tiny_config();
    plain_cfg.cue_mode = "none";

    // same init seed and identical module shapes -> identical parameters
    WaseModel gated(gated_cfg, 77);
    WaseModel plain(plain_cfg, 77);
    randomize_params(gated, 21);
    randomize_params(plain, 21);

    Tensor x = rand_signal(200, 37);
    std::vector<double> ones(60, 1.0);
    auto a = gated.forward_with_cue(x, Tensor(), ones);
    auto b = plain.forward(x, Tensor());
    REQUIRE(a.target_est.size() == b.target_est.size());
    for (int64_t i = 0; i < a.target_est.size(); ++i) {
        REQUIRE(std::abs(a.target_est.values()[i] - b.target_est.values()[i]) <= 1e-12);
        REQUIRE(std::abs(a.interferer_est.values()[i] - b.interferer_est.values()[i]) <= 1e-12);
    }
}

TEST_CASE("forward_with_cue: cue shorter than the frame count is rejected") {
    WaseModel model(tiny_config());
    std::vector<double> short_cue(10, 1.0);
    CHECK_THROWS_AS(model.forward_with_cue(rand_signal(200, 39), rand_signal(64, 40), short_cue),
                    std::invalid_argument);
}

TEST_CASE("forward: deterministic and all-finite in every cue mode") {
    for (const char* mode :
         {"none", "voiceprint", "onset", "onset_offset", "onset_voiceprint",
          "onset_offset_voiceprint"}) {
        ModelConfig cfg = tiny_config();
        cfg.cue_mode = mode;
        WaseModel model(cfg);
        randomize_params(model, 23);
        Tensor x = rand_signal(200, 41);
        Tensor r = rand_signal(64, 42);
        auto a = model.forward(x, r);
        auto b = model.forward(x, r);
        REQUIRE(a.target_est.values() == b.target_est.values());
        for (double v : a.target_est.values()) REQUIRE(std::isfinite(v));
        for (double v : a.interferer_est.values()) REQUIRE(std::isfinite(v));
        CHECK(a.cue.defined() == cfg.has_detector());
        if (a.cue.defined()) {
            CHECK(a.cue.dim(1) == cfg.frames_for(200));
            REQUIRE(a.cue.values() == b.cue.values());
        }
        REQUIRE(a.probes.size() == static_cast<size_t>(cfg.groups) + 1);
        for (const auto& p : a.probes) {
            for (double v : p.values()) {
                REQUIRE(v > 0.0);
                REQUIRE(v < 1.0);
            }
        }
    }
}

TEST_CASE("end-to-end finite differences at tiny config" * doctest::timeout(90)) {
    // central differences over every parameter entry of the full model,
    // exercising voiceprint gate + detector + probes + extraction together
    for (uint64_t seed : {1ull, 2ull}) {
        WaseModel model(tiny_config());
        randomize_params(model, seed * 1000 + 7);
        Tensor x = rand_signal(200, seed * 1000 + 1);
        Tensor r = rand_signal(64, seed * 1000 + 2);

        auto loss_fn = [&]() {
            auto out = model.forward(x, r);
            Tensor loss = add(weighted(out.target_est, 50), weighted(out.interferer_est, 51));
            loss = add(loss, weighted(out.cue, 52));
            for (size_t p = 0; p < out.probes.size(); ++p) {
                loss = add(loss, weighted(out.probes[p], 53 + p));
            }
            return loss;
        };

        Tensor loss = loss_fn();
        for (const auto& [name, t] : model.named_params()) {
            (void)name;
            Tensor h = t;
            h.zero_grad();
        }
        backward(loss);

        const double step = 2e-5;
        double worst = 0.0;
        std::string worst_name;
        for (const auto& [name, t] : model.named_params()) {
            Tensor h = t;
            std::vector<double> analytic = h.grad();
            for (int64_t i = 0; i < h.size(); ++i) {
                const double keep = h.values()[static_cast<size_t>(i)];
                auto central = [&](double st) {
                    NoGradGuard ng;
                    h.values()[static_cast<size_t>(i)] = keep + st;
                    const double up = loss_fn().item();
                    h.values()[static_cast<size_t>(i)] = keep - st;
                    const double dn = loss_fn().item();
                    h.values()[static_cast<size_t>(i)] = keep;
                    return (up - dn) / (2 * st);
                };
                const double an = analytic[static_cast<size_t>(i)];
                auto rel = [&](double fd) {
                    return std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
                };
                double err = rel(central(step));
                // a perturbation can push a PReLU pre-activation across its
                // kink; re-estimating with a finer step separates that
                // artifact from a genuine gradient bug
                if (err > 1e-3) err = rel(central(step / 4));
                if (err > worst) {
                    worst = err;
                    worst_name = name;
                }
            }
        }
        INFO("worst relative error ", worst, " at ", worst_name, " seed ", seed);
        CHECK(worst < 1e-3);
    }
}
