#include "wase/model.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "wase/common.hpp"

using json = nlohmann::json;

namespace wase {

namespace {
const std::set<std::string> kCueModes = {"none",  "voiceprint",       "onset",
                                         "onset_offset", "onset_voiceprint",
                                         "onset_offset_voiceprint"};
}

bool ModelConfig::has_detector() const { return cue_mode.rfind("onset", 0) == 0; }

bool ModelConfig::has_voiceprint_gate() const {
    return cue_mode.size() >= 10 &&
           cue_mode.compare(cue_mode.size() - 10, 10, "voiceprint") == 0;
}

bool ModelConfig::uses_reference() const { return cue_mode != "none"; }

std::string ModelConfig::label_mode() const {
    if (!has_detector()) return "";
    return cue_mode.rfind("onset_offset", 0) == 0 ? "onset_offset" : "onset";
}

int ModelConfig::frames_for(int samples) const {
    if (samples < enc_kernel) {
        throw std::invalid_argument("input of " + std::to_string(samples) +
                                    " samples is shorter than the encoder kernel (" +
                                    std::to_string(enc_kernel) + ")");
    }
    return (samples - enc_kernel) / enc_stride + 1;
}

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw config_error(std::string(name) + " must be >= 1");
    };
    positive(sample_rate, "sample_rate");
    positive(C, "C");
    positive(enc_kernel, "enc_kernel");
    positive(enc_stride, "enc_stride");
    positive(B, "B");
    positive(H_conv, "H_conv");
    positive(K_dconv, "K_dconv");
    positive(groups, "groups");
    positive(blocks_per_group, "blocks_per_group");
    positive(Sc, "Sc");
    positive(vp_kernel, "vp_kernel");
    positive(vp_stride, "vp_stride");
    positive(vp_hidden, "vp_hidden");
    positive(probe_hidden, "probe_hidden");
    if (K_dconv % 2 == 0) throw config_error("K_dconv must be odd for symmetric padding");
    if (!kCueModes.count(cue_mode)) throw config_error("unknown cue_mode: " + cue_mode);
    if (!(cue_threshold > 0.0 && cue_threshold < 1.0)) {
        throw config_error("cue_threshold must be in (0,1)");
    }
}

ModelConfig desk_config() {
    // Paper time geometry (5 ms window, 2.5 ms hop, ~1.3 s receptive field)
    // at a channel budget that trains in minutes on one core.
    ModelConfig cfg;
    cfg.enc_kernel = 40;
    cfg.enc_stride = 20;
    cfg.blocks_per_group = 7;
    return cfg;
}

ModelConfig paper_config() {
    ModelConfig cfg;
    cfg.C = 512;
    cfg.B = 128;
    cfg.H_conv = 512;
    cfg.Sc = 128;
    cfg.groups = 3;
    cfg.blocks_per_group = 8;
    cfg.vp_hidden = 128;
    cfg.probe_hidden = 256;
    return cfg;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.C = 8;
    cfg.enc_kernel = 8;
    cfg.enc_stride = 4;
    cfg.B = 4;
    cfg.H_conv = 8;
    cfg.groups = 1;
    cfg.blocks_per_group = 2;
    cfg.Sc = 4;
    cfg.vp_kernel = 16;
    cfg.vp_stride = 8;
    cfg.vp_hidden = 4;
    cfg.probe_hidden = 4;
    cfg.cue_mode = "onset_offset_voiceprint";
    return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
    json j = {{"sample_rate", cfg.sample_rate},
              {"C", cfg.C},
              {"enc_kernel", cfg.enc_kernel},
              {"enc_stride", cfg.enc_stride},
              {"B", cfg.B},
              {"H_conv", cfg.H_conv},
              {"K_dconv", cfg.K_dconv},
              {"groups", cfg.groups},
              {"blocks_per_group", cfg.blocks_per_group},
              {"Sc", cfg.Sc},
              {"vp_kernel", cfg.vp_kernel},
              {"vp_stride", cfg.vp_stride},
              {"vp_hidden", cfg.vp_hidden},
              {"probe_hidden", cfg.probe_hidden},
              {"cue_mode", cfg.cue_mode},
              {"cue_threshold", cfg.cue_threshold}};
    return j.dump();
}

const std::vector<std::string>& model_config_keys() {
    static const std::vector<std::string> keys = {
        "sample_rate", "C",         "enc_kernel",   "enc_stride", "B",
        "H_conv",      "K_dconv",   "groups",       "blocks_per_group",
        "Sc",          "vp_kernel", "vp_stride",    "vp_hidden",
        "probe_hidden", "cue_mode", "cue_threshold"};
    return keys;
}

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw config_error("bad model config JSON: " + std::string(e.what()));
    }
    ModelConfig cfg;
    const auto& keys = model_config_keys();
    const std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [key, val] : j.items()) {
        if (!known.count(key)) throw config_error("unknown model config key: " + key);
        (void)val;
    }
    try {
        cfg.sample_rate = j.value("sample_rate", cfg.sample_rate);
        cfg.C = j.value("C", cfg.C);
        cfg.enc_kernel = j.value("enc_kernel", cfg.enc_kernel);
        cfg.enc_stride = j.value("enc_stride", cfg.enc_stride);
        cfg.B = j.value("B", cfg.B);
        cfg.H_conv = j.value("H_conv", cfg.H_conv);
        cfg.K_dconv = j.value("K_dconv", cfg.K_dconv);
        cfg.groups = j.value("groups", cfg.groups);
        cfg.blocks_per_group = j.value("blocks_per_group", cfg.blocks_per_group);
        cfg.Sc = j.value("Sc", cfg.Sc);
        cfg.vp_kernel = j.value("vp_kernel", cfg.vp_kernel);
        cfg.vp_stride = j.value("vp_stride", cfg.vp_stride);
        cfg.vp_hidden = j.value("vp_hidden", cfg.vp_hidden);
        cfg.probe_hidden = j.value("probe_hidden", cfg.probe_hidden);
        cfg.cue_mode = j.value("cue_mode", cfg.cue_mode);
        cfg.cue_threshold = j.value("cue_threshold", cfg.cue_threshold);
    } catch (const json::exception& e) {
        throw config_error("bad model config value: " + std::string(e.what()));
    }
    cfg.validate();
    return cfg;
}

Tensor WaseModel::reg(const std::string& name, Tensor t) {
    params_.emplace_back(name, t);
    return t;
}

Tensor WaseModel::reg_uniform(const std::string& name, std::vector<int> shape, double bound,
                              std::mt19937_64& rng) {
    return reg(name, Tensor::uniform(std::move(shape), -bound, bound, rng,
                                     /*requires_grad=*/true));
}

WaseModel::TcnBlock WaseModel::make_block(const std::string& name, int width, int skip,
                                          int dilation, std::mt19937_64& rng) {
    const int h = cfg_.H_conv;
    TcnBlock blk;
    blk.dilation = dilation;
    blk.pw_w = reg_uniform(name + ".pw.w", {h, width}, 1.0 / std::sqrt(width), rng);
    blk.pw_b = reg(name + ".pw.b", Tensor::zeros({h}, true));
    blk.prelu1 = reg(name + ".prelu1", Tensor::full({1}, 0.25, true));
    blk.gln1_g = reg(name + ".gln1.g", Tensor::full({h}, 1.0, true));
    blk.gln1_s = reg(name + ".gln1.s", Tensor::zeros({h}, true));
    blk.dconv_w = reg_uniform(name + ".dconv.w", {h, cfg_.K_dconv},
                              1.0 / std::sqrt(cfg_.K_dconv), rng);
    blk.prelu2 = reg(name + ".prelu2", Tensor::full({1}, 0.25, true));
    blk.gln2_g = reg(name + ".gln2.g", Tensor::full({h}, 1.0, true));
    blk.gln2_s = reg(name + ".gln2.s", Tensor::zeros({h}, true));
    blk.res_w = reg(name + ".res.w", Tensor::zeros({width, h}, true));
    blk.res_b = reg(name + ".res.b", Tensor::zeros({width}, true));
    if (skip > 0) {
        blk.skip_w = reg(name + ".skip.w", Tensor::zeros({skip, h}, true));
        blk.skip_b = reg(name + ".skip.b", Tensor::zeros({skip}, true));
    }
    return blk;
}

WaseModel::Probe WaseModel::make_probe(const std::string& name, std::mt19937_64& rng) {
    Probe p;
    p.w1 = reg_uniform(name + ".pw1.w", {cfg_.probe_hidden, cfg_.B}, 1.0 / std::sqrt(cfg_.B),
                       rng);
    p.b1 = reg(name + ".pw1.b", Tensor::zeros({cfg_.probe_hidden}, true));
    p.slope = reg(name + ".prelu", Tensor::full({1}, 0.25, true));
    p.w2 = reg_uniform(name + ".pw2.w", {1, cfg_.probe_hidden},
                       1.0 / std::sqrt(cfg_.probe_hidden), rng);
    p.b2 = reg(name + ".pw2.b", Tensor::zeros({1}, true));
    return p;
}

WaseModel::WaseModel(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(mix_seed(init_seed, 0, 0x3517));
    const int c = cfg_.C, h = cfg_.vp_hidden;

    enc_w_ = reg_uniform("encoder.w", {c, 1, cfg_.enc_kernel},
                         1.0 / std::sqrt(cfg_.enc_kernel), rng);
    dec_w_ = reg_uniform("decoder.w", {c, 1, cfg_.enc_kernel},
                         1.0 / std::sqrt(static_cast<double>(c) * cfg_.enc_kernel), rng);

    vp_param_begin_ = params_.size();
    vp_conv_w_ = reg_uniform("voiceprint.conv.w", {h, 1, cfg_.vp_kernel},
                             1.0 / std::sqrt(cfg_.vp_kernel), rng);
    vp_conv_b_ = reg("voiceprint.conv.b", Tensor::zeros({h}, true));
    const double rb = 1.0 / std::sqrt(h);
    auto lstm_bias = [&](const std::string& name) {
        Tensor b = Tensor::zeros({4 * h}, true);
        for (int i = h; i < 2 * h; ++i) b.values()[i] = 1.0;  // forget gate opens at init
        return reg(name, b);
    };
    vp_l1f_ih_ = reg_uniform("voiceprint.l1f.w_ih", {4 * h, h}, rb, rng);
    vp_l1f_hh_ = reg_uniform("voiceprint.l1f.w_hh", {4 * h, h}, rb, rng);
    vp_l1f_b_ = lstm_bias("voiceprint.l1f.b");
    vp_l1b_ih_ = reg_uniform("voiceprint.l1b.w_ih", {4 * h, h}, rb, rng);
    vp_l1b_hh_ = reg_uniform("voiceprint.l1b.w_hh", {4 * h, h}, rb, rng);
    vp_l1b_b_ = lstm_bias("voiceprint.l1b.b");
    vp_l2f_ih_ = reg_uniform("voiceprint.l2f.w_ih", {4 * h, 2 * h}, rb, rng);
    vp_l2f_hh_ = reg_uniform("voiceprint.l2f.w_hh", {4 * h, h}, rb, rng);
    vp_l2f_b_ = lstm_bias("voiceprint.l2f.b");
    vp_l2b_ih_ = reg_uniform("voiceprint.l2b.w_ih", {4 * h, 2 * h}, rb, rng);
    vp_l2b_hh_ = reg_uniform("voiceprint.l2b.w_hh", {4 * h, h}, rb, rng);
    vp_l2b_b_ = lstm_bias("voiceprint.l2b.b");
    vp_lin_w_ = reg_uniform("voiceprint.linear.w", {c, 2 * h}, 1.0 / std::sqrt(2.0 * h), rng);
    vp_lin_b_ = reg("voiceprint.linear.b", Tensor::zeros({c}, true));
    vp_param_end_ = params_.size();

    det_in_w_ = reg_uniform("detector.in.w", {cfg_.H_conv, 2 * c}, 1.0 / std::sqrt(2.0 * c),
                            rng);
    det_in_b_ = reg("detector.in.b", Tensor::zeros({cfg_.H_conv}, true));
    for (int b = 0; b < 2; ++b) {
        det_blocks_.push_back(make_block("detector.block" + std::to_string(b), cfg_.H_conv,
                                         /*skip=*/0, 1 << b, rng));
    }
    det_out_w_ = reg_uniform("detector.out.w", {1, cfg_.H_conv},
                             1.0 / std::sqrt(cfg_.H_conv), rng);
    det_out_b_ = reg("detector.out.b", Tensor::zeros({1}, true));

    bott_w_ = reg_uniform("extract.bottleneck.w", {cfg_.B, c}, 1.0 / std::sqrt(c), rng);
    bott_b_ = reg("extract.bottleneck.b", Tensor::zeros({cfg_.B}, true));
    for (int g = 0; g < cfg_.groups; ++g) {
        for (int b = 0; b < cfg_.blocks_per_group; ++b) {
            tcn_.push_back(make_block(
                "extract.g" + std::to_string(g) + ".block" + std::to_string(b), cfg_.B,
                cfg_.Sc, 1 << b, rng));
        }
    }
    mask_prelu_ = reg("extract.mask.prelu", Tensor::full({1}, 0.25, true));
    mask_w_ = reg_uniform("extract.mask.w", {c, cfg_.Sc}, 1.0 / std::sqrt(cfg_.Sc), rng);
    mask_b_ = reg("extract.mask.b", Tensor::zeros({c}, true));

    for (int p = 0; p <= cfg_.groups; ++p) {
        probes_.push_back(make_probe("probe" + std::to_string(p), rng));
    }
}

std::vector<Tensor> WaseModel::param_tensors() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) out.push_back(t);
    return out;
}

std::vector<bool> WaseModel::voiceprint_param_mask() const {
    std::vector<bool> mask(params_.size(), false);
    for (size_t i = vp_param_begin_; i < vp_param_end_; ++i) mask[i] = true;
    return mask;
}

int64_t WaseModel::param_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
}

Tensor WaseModel::encode(const Tensor& mixture) const {
    cfg_.frames_for(mixture.dim(1));  // length check
    return conv1d(mixture, enc_w_, cfg_.enc_stride);
}

Tensor WaseModel::decode(const Tensor& features) const {
    return conv1d_transpose(features, dec_w_, cfg_.enc_stride);
}

Tensor WaseModel::voiceprint(const Tensor& reference) const {
    if (reference.dim(1) < cfg_.vp_kernel) {
        throw std::invalid_argument("reference of " + std::to_string(reference.dim(1)) +
                                    " samples is shorter than the voiceprint kernel (" +
                                    std::to_string(cfg_.vp_kernel) + ")");
    }
    Tensor f = conv1d(reference, vp_conv_w_, cfg_.vp_stride, vp_conv_b_);
    Tensor seq = transpose2d(f);  // L x H
    Tensor l1 = hstack(lstm_layer(seq, vp_l1f_ih_, vp_l1f_hh_, vp_l1f_b_, false),
                       lstm_layer(seq, vp_l1b_ih_, vp_l1b_hh_, vp_l1b_b_, true));
    Tensor l2 = hstack(lstm_layer(l1, vp_l2f_ih_, vp_l2f_hh_, vp_l2f_b_, false),
                       lstm_layer(l1, vp_l2b_ih_, vp_l2b_hh_, vp_l2b_b_, true));
    Tensor emb = linear(l2, vp_lin_w_, vp_lin_b_);  // L x C
    return reshape(mean_pool_time(emb), {cfg_.C, 1});
}

Tensor WaseModel::apply_block(const TcnBlock& blk, const Tensor& x, Tensor* skip_accum) const {
    Tensor h = pointwise_conv(x, blk.pw_w, blk.pw_b);
    h = prelu(h, blk.prelu1);
    h = global_layer_norm(h, blk.gln1_g, blk.gln1_s, 1e-8);
    h = depthwise_conv1d(h, blk.dconv_w, blk.dilation);
    h = prelu(h, blk.prelu2);
    h = global_layer_norm(h, blk.gln2_g, blk.gln2_s, 1e-8);
    if (skip_accum && blk.skip_w.defined()) {
        Tensor s = pointwise_conv(h, blk.skip_w, blk.skip_b);
        *skip_accum = skip_accum->defined() ? add(*skip_accum, s) : s;
    }
    return add(x, pointwise_conv(h, blk.res_w, blk.res_b));
}

Tensor WaseModel::apply_probe(const Probe& p, const Tensor& feat) const {
    Tensor h = prelu(pointwise_conv(feat, p.w1, p.b1), p.slope);
    return sigmoid(pointwise_conv(h, p.w2, p.b2));
}

Tensor WaseModel::detect_cue(const Tensor& u, const Tensor& v) const {
    Tensor cat = vstack(u, broadcast_cols(v, u.dim(1)));
    Tensor h = pointwise_conv(cat, det_in_w_, det_in_b_);
    for (const auto& blk : det_blocks_) h = apply_block(blk, h, nullptr);
    return sigmoid(pointwise_conv(h, det_out_w_, det_out_b_));
}

WaseModel::Forward WaseModel::run(const Tensor& mixture, const Tensor& reference,
                                  const std::vector<double>* oracle_cue) const {
    Forward out;
    Tensor u = encode(mixture);
    const int l = u.dim(1);

    const bool need_vp = oracle_cue ? cfg_.has_voiceprint_gate() : cfg_.uses_reference();
    Tensor v;
    if (need_vp) v = voiceprint(reference);

    Tensor gated = cfg_.has_voiceprint_gate() ? mul_channels(u, sigmoid(v)) : u;
    if (oracle_cue) {
        if (static_cast<int>(oracle_cue->size()) < l) {
            throw std::invalid_argument("cue of " + std::to_string(oracle_cue->size()) +
                                        " frames is shorter than the feature map (" +
                                        std::to_string(l) + ")");
        }
        Tensor o = Tensor::from_values(
            {1, l}, std::vector<double>(oracle_cue->begin(), oracle_cue->begin() + l));
        gated = mul_frames(gated, o);
    } else if (cfg_.has_detector()) {
        out.cue = detect_cue(gated, v);
        gated = mul_frames(gated, out.cue);
    }

    Tensor b = pointwise_conv(gated, bott_w_, bott_b_);
    std::vector<Tensor> taps;
    taps.push_back(b);
    Tensor x = b;
    Tensor skip_sum;
    for (int g = 0; g < cfg_.groups; ++g) {
        for (int k = 0; k < cfg_.blocks_per_group; ++k) {
            x = apply_block(tcn_[static_cast<size_t>(g) * cfg_.blocks_per_group + k], x,
                            &skip_sum);
        }
        taps.push_back(x);
    }
    Tensor m = sigmoid(pointwise_conv(prelu(skip_sum, mask_prelu_), mask_w_, mask_b_));

    out.target_est = decode(mul(gated, m));
    // residual mask 1 - m over the *ungated* mixture features: the interferer
    // keeps speaking outside the target cue, so its supervision must cover the
    // whole clip
    out.interferer_est = decode(mul(u, affine(m, -1.0, 1.0)));
    out.probes.reserve(taps.size());
    for (size_t p = 0; p < taps.size(); ++p) out.probes.push_back(apply_probe(probes_[p], taps[p]));
    return out;
}

WaseModel::Forward WaseModel::forward(const Tensor& mixture, const Tensor& reference) const {
    return run(mixture, reference, nullptr);
}

WaseModel::Forward WaseModel::forward_with_cue(const Tensor& mixture, const Tensor& reference,
                                               const std::vector<double>& cue) const {
    return run(mixture, reference, &cue);
}

}  // namespace wase
