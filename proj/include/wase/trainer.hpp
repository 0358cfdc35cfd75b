#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "wase/checkpoint.hpp"
#include "wase/corpus.hpp"
#include "wase/dataset.hpp"
#include "wase/model.hpp"
#include "wase/tensor.hpp"

namespace wase {

struct TrainConfig {
    double lr_init = 1e-3;
    int lr_halve_patience = 10;  // non-improving dev epochs before lr /= 2
    int stop_patience = 10;      // non-improving epochs once lr <= stop_lr
    double stop_lr = 2.5e-4;     // lr_init halved twice (exact in doubles)
    int vp_freeze_epoch = 15;    // voiceprint params frozen from this epoch on (paper-scale: 150)
    double loss_ratio = 1.0;     // weight of the detection CE term
    int batch_size = 2;
    int max_epochs = 30;
    uint64_t seed = 0;
    // Mixing metadata, recorded with the run (dataset building consumes them).
    double snr_min_db = -2.5;
    double snr_max_db = 2.5;
    double clip_seconds = 4.0;
    // Gate with oracle labels instead of detector output, in training and in
    // the dev evaluation (the table's "oracle" rows). CE terms are skipped.
    bool oracle_cues = false;

    void validate() const;  // throws config_error
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);
const std::vector<std::string>& train_config_keys();

// Bridges between signal-domain waveforms and 1 x T tensors.
Tensor waveform_tensor(const Waveform& w);
Waveform tensor_waveform(const Tensor& t, int sample_rate);

// Differentiable mean-centered SI-SNR in dB; both powers epsilon-capped at
// 1e-12, so perfect estimates floor near 10*log10(P/1e-12).
Tensor si_snr_loss(const Tensor& estimate, const std::vector<double>& reference);

struct LossBreakdown {
    double total = 0.0;
    double si_snr_target_db = 0.0;
    double si_snr_interferer_db = 0.0;
    double ce_detect = 0.0;  // mean CE over main + probe detectors, nats
};

// loss = -si_t - si_i + loss_ratio * ce; the CE term applies only when the
// forward carried a predicted cue (detector modes, non-oracle gating).
// The breakdown reproduces the total to 1e-12.
std::pair<Tensor, LossBreakdown> compute_loss(const WaseModel::Forward& out,
                                              const MixtureExample& ex, double loss_ratio,
                                              const ModelConfig& cfg);

struct EvalRow {
    int index = 0;
    double snr_db = 0.0;
    std::string target_speaker;
    double si_snr_mix_db = 0.0;
    double si_snr_est_db = 0.0;
    double sisnri_db = 0.0;
};

struct EvalReport {
    int n_examples = 0;
    bool oracle_cues = false;
    std::string cue_mode;
    double mean_sisnri_db = 0.0;
    // Per-probe frame metrics pooled over the set: bottleneck tap first,
    // then one entry per TCN group.
    std::vector<double> acc, f1;
    // Main detector metrics; negative when no predicted cue was produced.
    double cue_acc = -1.0, cue_f1 = -1.0;
    std::vector<EvalRow> rows;
};

// Doubled-target protocol is the caller's dataset contract; this scores
// whatever examples it is given. Throws config_error on an empty set.
EvalReport evaluate(const WaseModel& model, const std::vector<MixtureExample>& examples,
                    bool oracle_cues);
std::string eval_report_to_json(const EvalReport& report);
// JSON summary + per-example block, and a CSV with one row per example.
void write_eval_report(const EvalReport& report, const std::string& json_path,
                       const std::string& csv_path);

// Single-example extraction with the detector bypassed: the cue gate is the
// example's oracle label vector. Throws config_error when labels are absent.
Waveform run_oracle_cue_mode(const WaseModel& model, const MixtureExample& ex);

class Trainer {
  public:
    // The model must outlive the trainer. Training state starts at epoch 0
    // with lr_init; restore() overrides it after loading a checkpoint.
    Trainer(WaseModel& model, TrainConfig cfg);

    // One pass: shuffle by (seed, epoch), redraw same-speaker references
    // from the corpus (when given), one Adam step per batch. Returns
    // per-batch mean loss breakdowns. Throws numeric_error on non-finite
    // loss with the batch index and term breakdown in the message.
    std::vector<LossBreakdown> train_epoch(std::vector<MixtureExample>& data,
                                           const Corpus* corpus = nullptr);

    // Plateau schedule on the dev score (higher is better); returns true on
    // improvement. Sets state().stop when patience runs out at stop_lr.
    bool observe_dev_score(double dev_score);

    const TrainConfig& config() const { return cfg_; }
    const TrainSnapshot& state() const { return state_; }
    WaseModel& model() { return model_; }
    AdamOptimizer& optimizer() { return opt_; }
    void restore(const TrainSnapshot& snapshot);

  private:
    void sync_freeze();

    WaseModel& model_;
    TrainConfig cfg_;
    TrainSnapshot state_;
    AdamOptimizer opt_;
};

struct FitResult {
    int epochs_run = 0;
    double best_dev = 0.0;
    std::string last_ckpt, best_ckpt;
};

// Returns false to stop early (before the schedule does).
using EpochCallback =
    std::function<bool(int epoch, const EvalReport& dev_report, double train_loss)>;

// Full training loop: epochs until stop/max_epochs, dev evaluation per
// epoch, plateau schedule, last/best checkpoints and a JSON-lines epoch log
// under out_dir (no files when out_dir is empty).
FitResult fit(Trainer& trainer, std::vector<MixtureExample>& train_set,
              const std::vector<MixtureExample>& dev_set, const Corpus* corpus,
              const std::string& out_dir, const EpochCallback& on_epoch = nullptr);

}  // namespace wase
