#include "wase/signal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace wase {

namespace {

constexpr double kSiSnrEps = 1e-12;
constexpr double kSilencePower = 1e-12;

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

int count_transitions(const LabelVector& b) {
    int n = 0;
    for (size_t i = 1; i < b.size(); ++i) n += b[i] != b[i - 1];
    return n;
}

Waveform mix_sources(const std::vector<Waveform>& sources) {
    if (sources.empty()) throw std::invalid_argument("mix_sources: no sources");
    Waveform out = sources[0];
    for (size_t i = 1; i < sources.size(); ++i) {
        if (sources[i].samples.size() != out.samples.size()) {
            throw std::invalid_argument("mix_sources: length mismatch, " +
                                        std::to_string(out.samples.size()) + " vs " +
                                        std::to_string(sources[i].samples.size()));
        }
        if (sources[i].sample_rate != out.sample_rate) {
            throw std::invalid_argument("mix_sources: sample-rate mismatch");
        }
        for (size_t j = 0; j < out.samples.size(); ++j) out.samples[j] += sources[i].samples[j];
    }
    return out;
}

Waveform scale_to_snr(const Waveform& target, const Waveform& interferer, double snr_db,
                      size_t target_active, size_t interferer_active) {
    if (target_active == 0) target_active = target.samples.size();
    if (interferer_active == 0) interferer_active = interferer.samples.size();
    const size_t overlap = std::min({target_active, interferer_active, target.samples.size(),
                                     interferer.samples.size()});
    if (overlap == 0) throw std::invalid_argument("scale_to_snr: empty overlap window");

    double pt = 0.0, pi = 0.0;
    for (size_t i = 0; i < overlap; ++i) {
        pt += target.samples[i] * target.samples[i];
        pi += interferer.samples[i] * interferer.samples[i];
    }
    if (pt <= kSilencePower) throw std::invalid_argument("scale_to_snr: silent target");
    if (pi <= kSilencePower) throw std::invalid_argument("scale_to_snr: silent interferer");

    // want 10*log10(pt / (scale^2 * pi)) == snr_db
    const double scale = std::sqrt(pt / (pi * std::pow(10.0, snr_db / 10.0)));
    Waveform out = interferer;
    for (double& x : out.samples) x *= scale;
    return out;
}

Waveform pad_random_silence(const Waveform& w, double min_ms, double max_ms,
                            std::mt19937_64& rng) {
    if (min_ms > max_ms) throw std::invalid_argument("pad_random_silence: min_ms > max_ms");
    double ms = min_ms;
    if (max_ms > min_ms) {
        std::uniform_real_distribution<double> d(min_ms, max_ms);
        ms = d(rng);
    }
    const auto pad = static_cast<size_t>(std::llround(ms * w.sample_rate / 1000.0));
    Waveform out = w;
    out.samples.insert(out.samples.end(), pad, 0.0);
    return out;
}

LabelVector energy_vad(const Waveform& w, double frame_ms, double threshold_rel_db) {
    if (w.samples.empty()) throw std::invalid_argument("energy_vad: empty waveform");
    const auto frame = static_cast<size_t>(std::llround(frame_ms * w.sample_rate / 1000.0));
    if (frame == 0) throw std::invalid_argument("energy_vad: frame shorter than one sample");
    const size_t t = w.samples.size();
    const size_t n_frames = (t + frame - 1) / frame;

    std::vector<double> rms(n_frames, 0.0);
    double peak = 0.0;
    for (size_t fi = 0; fi < n_frames; ++fi) {
        const size_t lo = fi * frame;
        const size_t hi = std::min(lo + frame, t);
        double acc = 0.0;
        for (size_t i = lo; i < hi; ++i) acc += w.samples[i] * w.samples[i];
        rms[fi] = std::sqrt(acc / static_cast<double>(hi - lo));
        peak = std::max(peak, rms[fi]);
    }
    const double thr = peak * std::pow(10.0, threshold_rel_db / 20.0);

    size_t first = n_frames, last = 0;
    bool any = false;
    for (size_t fi = 0; fi < n_frames; ++fi) {
        if (rms[fi] > thr) {
            if (!any) first = fi;
            last = fi;
            any = true;
        }
    }
    if (!any) throw std::invalid_argument("energy_vad: no voice activity");

    const size_t onset = first * frame;
    const size_t offset = std::min((last + 1) * frame, t);  // one past the last active sample
    LabelVector b(t, 0);
    std::fill(b.begin() + static_cast<long>(onset), b.begin() + static_cast<long>(offset), 1);
    return b;
}

LabelVector downsample_labels(const LabelVector& b, int stride) {
    if (stride < 1) throw std::invalid_argument("downsample_labels: stride must be >= 1");
    if (b.empty()) return {};
    const size_t l = (b.size() - 1) / static_cast<size_t>(stride) + 1;
    LabelVector out(l);
    for (size_t i = 0; i < l; ++i) out[i] = b[i * static_cast<size_t>(stride)];
    return out;
}

void drop_offset(LabelVector& b) {
    const auto it = std::find(b.begin(), b.end(), uint8_t{1});
    if (it == b.end()) return;
    std::fill(it, b.end(), uint8_t{1});
}

SeparationScore si_snr(const Waveform& estimate, const Waveform& reference, bool center) {
    if (estimate.samples.size() != reference.samples.size()) {
        throw std::invalid_argument("si_snr: length mismatch, " +
                                    std::to_string(estimate.samples.size()) + " vs " +
                                    std::to_string(reference.samples.size()));
    }
    std::vector<double> e = estimate.samples;
    std::vector<double> r = reference.samples;
    if (center) {
        const double me = mean_of(e);
        const double mr = mean_of(r);
        for (double& x : e) x -= me;
        for (double& x : r) x -= mr;
    }

    double dot = 0.0, rr = 0.0;
    for (size_t i = 0; i < e.size(); ++i) {
        dot += e[i] * r[i];
        rr += r[i] * r[i];
    }
    if (rr <= kSilencePower) throw std::invalid_argument("si_snr: reference power below 1e-12");

    const double alpha = dot / rr;
    double st = 0.0, en = 0.0;
    for (size_t i = 0; i < e.size(); ++i) {
        const double s = alpha * r[i];
        const double n = e[i] - s;
        st += s * s;
        en += n * n;
    }

    SeparationScore score;
    score.s_target_power = st;
    score.e_noise_power = en + kSiSnrEps;
    score.si_snr_db = 10.0 * std::log10(st / score.e_noise_power);
    return score;
}

double si_snr_improvement(const Waveform& estimate, const Waveform& reference,
                          const Waveform& mixture) {
    return si_snr(estimate, reference).si_snr_db - si_snr(mixture, reference).si_snr_db;
}

AccF1 frame_acc_f1(const std::vector<double>& pred, const LabelVector& labels, double threshold) {
    if (pred.size() != labels.size()) {
        throw std::invalid_argument("frame_acc_f1: length mismatch, " +
                                    std::to_string(pred.size()) + " vs " +
                                    std::to_string(labels.size()));
    }
    if (pred.empty()) throw std::invalid_argument("frame_acc_f1: empty inputs");
    size_t tp = 0, fp = 0, fn = 0, correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] > threshold;
        const bool t = labels[i] != 0;
        correct += p == t;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
    }
    AccF1 out;
    out.acc = static_cast<double>(correct) / static_cast<double>(pred.size());
    const double denom_p = static_cast<double>(tp + fp);
    const double denom_r = static_cast<double>(tp + fn);
    const double prec = denom_p > 0 ? tp / denom_p : 0.0;
    const double rec = denom_r > 0 ? tp / denom_r : 0.0;
    out.f1 = (prec + rec) > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    return out;
}

}  // namespace wase
