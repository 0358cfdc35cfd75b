#include "wase/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "wase/common.hpp"
#include "wase/wav.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace wase {

std::vector<int> Corpus::clips_of(const std::string& speaker_id) const {
    std::vector<int> out;
    for (size_t i = 0; i < clips.size(); ++i) {
        if (clips[i].speaker_id == speaker_id) out.push_back(static_cast<int>(i));
    }
    return out;
}

std::vector<std::string> Corpus::speakers() const {
    std::vector<std::string> out;
    for (const auto& c : clips) {
        if (std::find(out.begin(), out.end(), c.speaker_id) == out.end()) out.push_back(c.speaker_id);
    }
    return out;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct SpeakerParams {
    double f0;
    std::vector<double> harmonics;  // amplitude per harmonic, index 0 = fundamental
    double am_rate_hz;
    double am_depth;
};

SpeakerParams make_speaker(int idx, int num_speakers, int sample_rate, uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(idx), 0xC0));
    std::uniform_real_distribution<double> u(0.0, 1.0);

    SpeakerParams p;
    // stratified fundamentals: each speaker gets its own band of [90, 250] Hz
    const double band = (250.0 - 90.0) / num_speakers;
    p.f0 = 90.0 + band * (idx + 0.25 + 0.5 * u(rng));

    // Speaker-specific harmonic amplitude profile: energy concentrated around a
    // per-speaker center frequency (log-spaced across speakers) over a small
    // broadband floor, so different speakers are spectrally distinguishable.
    const double lo_hz = 400.0;
    const double hi_hz = std::min(3400.0, sample_rate / 2.0 - 600.0);
    const double frac = num_speakers > 1 ? static_cast<double>(idx) / (num_speakers - 1) : 0.5;
    const double center_hz = lo_hz * std::pow(hi_hz / lo_hz, frac) * (0.95 + 0.10 * u(rng));
    const double sigma_oct = 0.18 + 0.06 * u(rng);

    const int max_h = static_cast<int>((sample_rate / 2.0 - 400.0) / p.f0);
    p.harmonics.resize(std::clamp(max_h, 1, 40));
    for (size_t h = 0; h < p.harmonics.size(); ++h) {
        const double f = p.f0 * static_cast<double>(h + 1);
        const double d = std::log2(f / center_hz) / sigma_oct;
        p.harmonics[h] = std::exp(-0.5 * d * d) * (0.7 + 0.6 * u(rng)) + 0.01;
    }
    p.am_rate_hz = 2.0 + 4.0 * u(rng);
    p.am_depth = 0.25 + 0.25 * u(rng);
    return p;
}

// One clip: leading pause, then alternating voiced/pause segments to the end.
Waveform make_clip(const SpeakerParams& sp, double clip_seconds, int sample_rate,
                   std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto total = static_cast<size_t>(std::llround(clip_seconds * sample_rate));
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.assign(total, 0.0);

    const auto ramp = static_cast<size_t>(sample_rate / 100);  // 10 ms edge ramps
    // Leading pause: at least 200 ms of true silence, spread wide enough that
    // two clips in a mixture usually start at clearly different times (the
    // onset cue should carry information).
    size_t pos = static_cast<size_t>((0.20 + 0.40 * u(rng)) * sample_rate);

    // Phrase content ends at a random point inside the clip so utterance
    // lengths vary; the rest stays silent (offsets carry real information).
    size_t active_end =
        pos + static_cast<size_t>((0.55 + 0.45 * u(rng)) * static_cast<double>(total - pos));
    active_end = std::min(total, std::max(active_end, pos + static_cast<size_t>(0.25 * sample_rate)));

    bool voiced = true;
    while (pos < active_end) {
        const double seg_s = voiced ? 0.30 + 0.40 * u(rng) : 0.08 + 0.12 * u(rng);
        size_t seg = static_cast<size_t>(seg_s * sample_rate);
        if (pos + seg + static_cast<size_t>(0.15 * sample_rate) > active_end) {
            seg = active_end - pos;
        }
        if (voiced) {
            const double f0 = sp.f0 * (1.0 + 0.02 * (u(rng) - 0.5));
            const double phi_am = kTwoPi * u(rng);
            std::vector<double> phases(sp.harmonics.size());
            for (auto& ph : phases) ph = kTwoPi * u(rng);
            for (size_t i = 0; i < seg; ++i) {
                const double t = static_cast<double>(i) / sample_rate;
                double s = 0.0;
                for (size_t h = 0; h < sp.harmonics.size(); ++h) {
                    s += sp.harmonics[h] * std::sin(kTwoPi * f0 * (h + 1) * t + phases[h]);
                }
                const double am =
                    1.0 - sp.am_depth * (0.5 + 0.5 * std::sin(kTwoPi * sp.am_rate_hz * t + phi_am));
                double edge = 1.0;
                if (i < ramp) edge = 0.5 - 0.5 * std::cos(std::numbers::pi * i / ramp);
                const size_t from_end = seg - 1 - i;
                if (from_end < ramp) {
                    edge = std::min(edge, 0.5 - 0.5 * std::cos(std::numbers::pi * from_end / ramp));
                }
                w.samples[pos + i] = s * am * edge;
            }
        }
        pos += seg;
        voiced = !voiced;
    }

    double peak = 0.0;
    for (double s : w.samples) peak = std::max(peak, std::abs(s));
    if (peak > 0.0) {
        const double g = 0.5 / peak;
        for (double& s : w.samples) s *= g;
    }
    return w;
}

std::string speaker_name(int idx) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "spk%02d", idx);
    return buf;
}

}  // namespace

Corpus synth_corpus(int num_speakers, int clips_per_speaker, double clip_seconds,
                    int sample_rate, uint64_t seed) {
    if (num_speakers < 2) throw config_error("need >= 2 speakers");
    if (clips_per_speaker < 1) throw config_error("need >= 1 clip per speaker");
    if (clip_seconds <= 0.3) throw config_error("clips must be longer than the leading pause");

    Corpus corpus;
    for (int s = 0; s < num_speakers; ++s) {
        const SpeakerParams sp = make_speaker(s, num_speakers, sample_rate, seed);
        for (int c = 0; c < clips_per_speaker; ++c) {
            std::mt19937_64 rng(
                mix_seed(seed, static_cast<uint64_t>(s) * 10007 + static_cast<uint64_t>(c), 0xC1));
            corpus.clips.push_back({speaker_name(s), make_clip(sp, clip_seconds, sample_rate, rng)});
        }
    }
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream manifest(fs::path(dir) / "manifest.jsonl", std::ios::trunc);
    if (!manifest) throw io_error("cannot write corpus manifest in " + dir);

    std::vector<int> per_speaker_count;
    for (size_t i = 0; i < corpus.clips.size(); ++i) {
        const auto& clip = corpus.clips[i];
        // count previous clips of this speaker to number files per speaker
        int k = 0;
        for (size_t j = 0; j < i; ++j) k += corpus.clips[j].speaker_id == clip.speaker_id;
        char name[64];
        std::snprintf(name, sizeof name, "%s_clip%02d.wav", clip.speaker_id.c_str(), k);
        write_wav((fs::path(dir) / name).string(), clip.audio, WavFormat::pcm16);

        json line = {{"speaker_id", clip.speaker_id},
                     {"path", name},
                     {"duration_s", clip.audio.duration_s()},
                     {"sample_rate", clip.audio.sample_rate}};
        manifest << line.dump() << "\n";
    }
    if (!manifest) throw io_error("failed to write corpus manifest in " + dir);
}

Corpus load_corpus(const std::string& dir) {
    std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
    if (!manifest) throw io_error("cannot open corpus manifest in " + dir);
    Corpus corpus;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw io_error("bad corpus manifest line: " + std::string(e.what()));
        }
        CorpusClip clip;
        clip.speaker_id = j.at("speaker_id").get<std::string>();
        clip.audio = read_wav((fs::path(dir) / j.at("path").get<std::string>()).string());
        corpus.clips.push_back(std::move(clip));
    }
    if (corpus.clips.empty()) throw io_error("corpus manifest is empty in " + dir);
    return corpus;
}

}  // namespace wase
