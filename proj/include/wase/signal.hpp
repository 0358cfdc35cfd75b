#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace wase {

struct Waveform {
    std::vector<double> samples;  // dimensionless amplitudes, nominal range [-1, 1]
    int sample_rate = 8000;

    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

// Binary activity labels, sample- or frame-resolution depending on context.
using LabelVector = std::vector<uint8_t>;

// Number of 0->1 plus 1->0 transitions.
int count_transitions(const LabelVector& b);

// Elementwise sum, no renormalization. Lengths and rates must match.
Waveform mix_sources(const std::vector<Waveform>& sources);

// Returns the interferer scaled so that 10*log10(P_target/P_interferer) ==
// snr_db, powers measured over the overlap of the active (pre-padding)
// regions: the first target_active / interferer_active samples (0 = full
// length). Throws std::invalid_argument if either window is silent.
Waveform scale_to_snr(const Waveform& target, const Waveform& interferer, double snr_db,
                      size_t target_active = 0, size_t interferer_active = 0);

// Appends silence of length uniform in [min_ms, max_ms].
Waveform pad_random_silence(const Waveform& w, double min_ms, double max_ms,
                            std::mt19937_64& rng);

// Frame-energy activity detection with a threshold relative to the loudest
// frame. Returns a sample-resolution vector that is 0 before the first
// active frame, 1 through the end of the last active frame, 0 after
// (interior pauses are filled in). Throws on all-silent input.
LabelVector energy_vad(const Waveform& w, double frame_ms = 10.0,
                       double threshold_rel_db = -40.0);

// Keeps every stride-th entry: L = floor((T-1)/stride) + 1, frame i = b[i*stride].
LabelVector downsample_labels(const LabelVector& b, int stride);

// In-place: clears everything after the onset's 1-run end, i.e. keeps only
// the 0->1 transition and stays 1 to the end (onset-only label mode).
void drop_offset(LabelVector& b);

struct SeparationScore {
    double si_snr_db = 0.0;
    double s_target_power = 0.0;
    double e_noise_power = 0.0;  // includes the 1e-12 cap of the denominator
};

// Scale-invariant SNR. s_target = (<est,ref>/|ref|^2) ref, e = est - s_target,
// si_snr_db = 10 log10(|s_target|^2 / (|e|^2 + 1e-12)). Both signals are
// mean-centered first unless center is false.
SeparationScore si_snr(const Waveform& estimate, const Waveform& reference, bool center = true);

// si_snr(estimate, reference) - si_snr(mixture, reference), in dB.
double si_snr_improvement(const Waveform& estimate, const Waveform& reference,
                          const Waveform& mixture);

struct AccF1 {
    double acc = 0.0;
    double f1 = 0.0;
};

// Binarizes pred at the threshold (strictly greater = positive) and scores it
// against the labels. F1 is 0 when precision + recall is 0.
AccF1 frame_acc_f1(const std::vector<double>& pred, const LabelVector& labels,
                   double threshold = 0.5);

}  // namespace wase
