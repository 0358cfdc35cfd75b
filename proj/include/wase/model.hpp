#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wase/tensor.hpp"

namespace wase {

struct ModelConfig {
    int sample_rate = 8000;
    int C = 64;           // encoder feature channels
    int enc_kernel = 20;  // samples (2.5 ms at 8 kHz)
    int enc_stride = 8;   // samples (1 ms at 8 kHz); label stride equals this
    int B = 32;           // TCN bottleneck channels
    int H_conv = 64;      // TCN hidden channels
    int K_dconv = 3;      // depthwise kernel, odd
    int groups = 2;
    int blocks_per_group = 3;  // dilation of block b is 2^b
    int Sc = 32;               // skip channels
    int vp_kernel = 256;
    int vp_stride = 64;
    int vp_hidden = 64;    // recurrent hidden size per direction
    int probe_hidden = 32; // auxiliary detector width
    std::string cue_mode = "onset_offset";
    double cue_threshold = 0.5;

    bool has_detector() const;         // any onset* mode
    bool has_voiceprint_gate() const;  // any *voiceprint mode
    bool uses_reference() const;       // every mode except "none"
    std::string label_mode() const;    // "onset" or "onset_offset" ("" without a detector)
    int frames_for(int samples) const; // floor((T - enc_kernel)/enc_stride) + 1

    void validate() const;  // throws config_error
};

ModelConfig desk_config();
ModelConfig paper_config();
// Small enough (< 2k parameters) for end-to-end finite-difference checks.
ModelConfig tiny_config();

// Canonical JSON (sorted keys) for checkpoints and run configs. Parsing
// rejects unknown keys and re-validates.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
// Accepted JSON keys, for routing combined run configs.
const std::vector<std::string>& model_config_keys();

class WaseModel {
  public:
    explicit WaseModel(ModelConfig cfg, uint64_t init_seed = 2026);

    const ModelConfig& config() const { return cfg_; }

    // Stable registration order; names identify the module and role.
    const std::vector<std::pair<std::string, Tensor>>& named_params() const { return params_; }
    std::vector<Tensor> param_tensors() const;
    // mask aligned with named_params: true for voiceprint-encoder parameters
    std::vector<bool> voiceprint_param_mask() const;
    int64_t param_count() const;

    // 1 x T -> C x L, bias-free linear encoder
    Tensor encode(const Tensor& mixture) const;
    // C x L -> 1 x (L-1)*stride + kernel, bias-free
    Tensor decode(const Tensor& features) const;
    // 1 x T_r -> C x 1
    Tensor voiceprint(const Tensor& reference) const;
    // (C x L, C x 1) -> 1 x L in (0,1)
    Tensor detect_cue(const Tensor& u, const Tensor& v) const;

    struct Forward {
        Tensor target_est;      // 1 x T_out
        Tensor interferer_est;  // 1 x T_out, decoded from the residual mask
        Tensor cue;             // 1 x L, defined in detector modes only
        std::vector<Tensor> probes;  // groups+1 auxiliary detections, each 1 x L
    };

    // Routing per cue_mode: voiceprint gate first (when present), then the
    // predicted cue gate; the mask is applied to the gated features.
    Forward forward(const Tensor& mixture, const Tensor& reference) const;

    // Detector bypassed: the cue gate is the given 0/1 sequence (>= L values,
    // truncated to L). The voiceprint gate still applies in *voiceprint modes.
    Forward forward_with_cue(const Tensor& mixture, const Tensor& reference,
                             const std::vector<double>& cue) const;

  private:
    struct TcnBlock {
        Tensor pw_w, pw_b;          // H x W, H
        Tensor prelu1, prelu2;      // scalars
        Tensor gln1_g, gln1_s;      // H
        Tensor gln2_g, gln2_s;      // H
        Tensor dconv_w;             // H x K
        Tensor res_w, res_b;        // W x H, W  (zero-init: identity start)
        Tensor skip_w, skip_b;      // Sc x H, Sc (undefined for detector blocks)
        int dilation = 1;
    };
    struct Probe {
        Tensor w1, b1, slope, w2, b2;
    };

    Tensor apply_block(const TcnBlock& blk, const Tensor& x, Tensor* skip_accum) const;
    Tensor apply_probe(const Probe& p, const Tensor& feat) const;
    Forward run(const Tensor& mixture, const Tensor& reference,
                const std::vector<double>* oracle_cue) const;

    Tensor reg(const std::string& name, Tensor t);
    Tensor reg_uniform(const std::string& name, std::vector<int> shape, double bound,
                       std::mt19937_64& rng);
    TcnBlock make_block(const std::string& name, int width, int skip, int dilation,
                        std::mt19937_64& rng);
    Probe make_probe(const std::string& name, std::mt19937_64& rng);

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;

    Tensor enc_w_;            // C x 1 x K
    Tensor dec_w_;            // C x 1 x K (transpose-conv layout: in, out, k)
    Tensor vp_conv_w_, vp_conv_b_;
    Tensor vp_l1f_ih_, vp_l1f_hh_, vp_l1f_b_;
    Tensor vp_l1b_ih_, vp_l1b_hh_, vp_l1b_b_;
    Tensor vp_l2f_ih_, vp_l2f_hh_, vp_l2f_b_;
    Tensor vp_l2b_ih_, vp_l2b_hh_, vp_l2b_b_;
    Tensor vp_lin_w_, vp_lin_b_;
    Tensor det_in_w_, det_in_b_;
    std::vector<TcnBlock> det_blocks_;
    Tensor det_out_w_, det_out_b_;
    Tensor bott_w_, bott_b_;
    std::vector<TcnBlock> tcn_;
    Tensor mask_prelu_, mask_w_, mask_b_;
    std::vector<Probe> probes_;
    size_t vp_param_begin_ = 0, vp_param_end_ = 0;
};

}  // namespace wase
