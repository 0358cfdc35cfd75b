#include "wase/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "wase/common.hpp"
#include "wase/wav.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace wase {

namespace {

void fix_length(Waveform& w, size_t n) {
    w.samples.resize(n, 0.0);
}

// Pads (onset_offset), scales, and length-fixes one source pair; both returned
// waveforms have exactly clip_seconds * sample_rate samples.
std::pair<Waveform, Waveform> prepare_sources(const Waveform& target, const Waveform& interferer,
                                              double snr_db, std::mt19937_64& rng,
                                              const std::string& mode, double clip_seconds) {
    if (mode != "onset" && mode != "onset_offset") {
        throw std::invalid_argument("unknown dataset mode: " + mode);
    }
    const size_t t_active = target.samples.size();
    const size_t i_active = interferer.samples.size();

    Waveform tgt = target;
    Waveform intf = interferer;
    if (mode == "onset_offset") {
        tgt = pad_random_silence(tgt, 200.0, 800.0, rng);
        intf = pad_random_silence(intf, 200.0, 800.0, rng);
    }
    const size_t common = std::max(tgt.samples.size(), intf.samples.size());
    fix_length(tgt, common);
    fix_length(intf, common);

    Waveform scaled = scale_to_snr(tgt, intf, snr_db, t_active, i_active);

    const auto final_len = static_cast<size_t>(std::llround(clip_seconds * target.sample_rate));
    fix_length(tgt, final_len);
    fix_length(scaled, final_len);
    return {std::move(tgt), std::move(scaled)};
}

LabelVector make_labels(const Waveform& clean_target, const std::string& mode, int enc_stride) {
    LabelVector b = energy_vad(clean_target);
    if (mode == "onset") drop_offset(b);
    return downsample_labels(b, enc_stride);
}

MixtureExample assemble(Waveform target, Waveform interferer, const Waveform& reference,
                        double snr_db, const std::string& target_speaker,
                        const std::string& interferer_speaker, int target_clip_index,
                        const std::string& mode, int enc_stride) {
    MixtureExample ex;
    ex.mixture = mix_sources({target, interferer});
    ex.oracle_labels = make_labels(target, mode, enc_stride);
    ex.target = std::move(target);
    ex.interferer = std::move(interferer);
    ex.reference = reference;
    ex.snr_db = snr_db;
    ex.target_speaker_id = target_speaker;
    ex.interferer_speaker_id = interferer_speaker;
    ex.target_clip_index = target_clip_index;
    return ex;
}

}  // namespace

MixtureExample build_example(const CorpusClip& target, const CorpusClip& reference,
                             const CorpusClip& interferer, double snr_db, std::mt19937_64& rng,
                             const std::string& mode, int enc_stride, double clip_seconds) {
    if (target.speaker_id != reference.speaker_id) {
        throw std::invalid_argument("reference must come from the target speaker (" +
                                    target.speaker_id + " vs " + reference.speaker_id + ")");
    }
    if (interferer.speaker_id == target.speaker_id) {
        throw std::invalid_argument("interferer must come from another speaker, got " +
                                    interferer.speaker_id + " for both");
    }
    auto [tgt, intf] = prepare_sources(target.audio, interferer.audio, snr_db, rng, mode,
                                       clip_seconds);
    return assemble(std::move(tgt), std::move(intf), reference.audio, snr_db, target.speaker_id,
                    interferer.speaker_id, -1, mode, enc_stride);
}

std::pair<MixtureExample, MixtureExample> build_pair(
    const CorpusClip& a, const CorpusClip& ref_a, const CorpusClip& b, const CorpusClip& ref_b,
    double snr_db, std::mt19937_64& rng, const std::string& mode, int enc_stride,
    double clip_seconds) {
    if (a.speaker_id != ref_a.speaker_id || b.speaker_id != ref_b.speaker_id) {
        throw std::invalid_argument("references must match their source speakers");
    }
    if (a.speaker_id == b.speaker_id) {
        throw std::invalid_argument("mixture sources must come from different speakers");
    }
    auto [sig_a, sig_b] = prepare_sources(a.audio, b.audio, snr_db, rng, mode, clip_seconds);
    MixtureExample first = assemble(sig_a, sig_b, ref_a.audio, snr_db, a.speaker_id, b.speaker_id,
                                    -1, mode, enc_stride);
    MixtureExample second = assemble(sig_b, sig_a, ref_b.audio, -snr_db, b.speaker_id,
                                     a.speaker_id, -1, mode, enc_stride);
    return {std::move(first), std::move(second)};
}

namespace {

json rle_encode(const LabelVector& b) {
    json runs = json::array();
    size_t i = 0;
    while (i < b.size()) {
        size_t j = i;
        while (j < b.size() && b[j] == b[i]) ++j;
        runs.push_back({static_cast<int>(b[i]), j - i});
        i = j;
    }
    return {{"length", b.size()}, {"runs", runs}};
}

LabelVector rle_decode(const json& j) {
    LabelVector b;
    b.reserve(j.at("length").get<size_t>());
    for (const auto& run : j.at("runs")) {
        b.insert(b.end(), run.at(1).get<size_t>(), static_cast<uint8_t>(run.at(0).get<int>()));
    }
    if (b.size() != j.at("length").get<size_t>()) throw io_error("label RLE length mismatch");
    return b;
}

struct SpeakerPool {
    std::vector<std::string> ids;
    std::vector<std::vector<int>> clips;  // corpus indices per speaker
};

SpeakerPool make_pool(const Corpus& corpus) {
    SpeakerPool pool;
    pool.ids = corpus.speakers();
    if (pool.ids.size() < 2) throw config_error("dataset needs a corpus with >= 2 speakers");
    for (const auto& id : pool.ids) {
        pool.clips.push_back(corpus.clips_of(id));
        if (pool.clips.back().size() < 2) {
            throw config_error("insufficient clips: speaker " + id +
                               " needs >= 2 clips for target/reference pairing");
        }
    }
    return pool;
}

int pick(std::mt19937_64& rng, int n) {
    return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng));
}

// two distinct indices from [0, n)
std::pair<int, int> pick2(std::mt19937_64& rng, int n) {
    const int i = pick(rng, n);
    int j = pick(rng, n - 1);
    if (j >= i) ++j;
    return {i, j};
}

void write_example(const MixtureExample& ex, const std::string& out_dir, const std::string& stem,
                   const std::string& mode, std::ofstream& manifest) {
    const fs::path audio = fs::path(out_dir) / "audio";
    const fs::path labels = fs::path(out_dir) / "labels";
    write_wav((audio / (stem + "_mix.wav")).string(), ex.mixture, WavFormat::float32);
    write_wav((audio / (stem + "_target.wav")).string(), ex.target, WavFormat::float32);
    write_wav((audio / (stem + "_interferer.wav")).string(), ex.interferer, WavFormat::float32);
    write_wav((audio / (stem + "_reference.wav")).string(), ex.reference, WavFormat::float32);
    {
        std::ofstream lf(labels / (stem + ".json"), std::ios::trunc);
        if (!lf) throw io_error("cannot write labels for " + stem);
        lf << rle_encode(ex.oracle_labels).dump() << "\n";
    }
    json line = {{"id", stem},
                 {"mixture", "audio/" + stem + "_mix.wav"},
                 {"target", "audio/" + stem + "_target.wav"},
                 {"interferer", "audio/" + stem + "_interferer.wav"},
                 {"reference", "audio/" + stem + "_reference.wav"},
                 {"labels", "labels/" + stem + ".json"},
                 {"snr_db", ex.snr_db},
                 {"target_speaker", ex.target_speaker_id},
                 {"interferer_speaker", ex.interferer_speaker_id},
                 {"target_clip", ex.target_clip_index},
                 {"mode", mode}};
    manifest << line.dump() << "\n";
}

std::string stem_name(const char* split, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04d", split, i);
    return buf;
}

}  // namespace

void build_dataset(const Corpus& corpus, const DatasetSpec& spec, const std::string& out_dir) {
    if (spec.n_train < 0 || spec.n_eval < 0) throw config_error("negative dataset sizes");
    if (spec.n_eval % 2 != 0) {
        throw config_error("n_eval must be even: evaluation items come in role-swapped pairs");
    }
    const SpeakerPool pool = make_pool(corpus);
    const int n_speakers = static_cast<int>(pool.ids.size());

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "audio", ec);
    fs::create_directories(fs::path(out_dir) / "labels", ec);

    std::ofstream train_manifest(fs::path(out_dir) / "train.jsonl", std::ios::trunc);
    std::ofstream eval_manifest(fs::path(out_dir) / "eval.jsonl", std::ios::trunc);
    if (!train_manifest || !eval_manifest) throw io_error("cannot write manifests in " + out_dir);

    for (int i = 0; i < spec.n_train; ++i) {
        std::mt19937_64 rng(mix_seed(spec.seed, static_cast<uint64_t>(i), 0x7A));
        const int ts = pick(rng, n_speakers);
        const auto [c_t, c_r] = pick2(rng, static_cast<int>(pool.clips[ts].size()));
        int is = pick(rng, n_speakers - 1);
        if (is >= ts) ++is;
        const int c_i = pick(rng, static_cast<int>(pool.clips[is].size()));
        const double snr =
            std::uniform_real_distribution<double>(spec.snr_min_db, spec.snr_max_db)(rng);

        MixtureExample ex = build_example(corpus.clips[pool.clips[ts][c_t]],
                                          corpus.clips[pool.clips[ts][c_r]],
                                          corpus.clips[pool.clips[is][c_i]], snr, rng, spec.mode,
                                          spec.enc_stride, spec.clip_seconds);
        ex.target_clip_index = pool.clips[ts][c_t];
        write_example(ex, out_dir, stem_name("train", i), spec.mode, train_manifest);
    }

    for (int p = 0; p < spec.n_eval / 2; ++p) {
        std::mt19937_64 rng(mix_seed(spec.seed, static_cast<uint64_t>(p), 0xEB));
        const auto [sa, sb] = pick2(rng, n_speakers);
        const auto [a_t, a_r] = pick2(rng, static_cast<int>(pool.clips[sa].size()));
        const auto [b_t, b_r] = pick2(rng, static_cast<int>(pool.clips[sb].size()));
        const double snr =
            std::uniform_real_distribution<double>(spec.snr_min_db, spec.snr_max_db)(rng);

        auto [first, second] = build_pair(corpus.clips[pool.clips[sa][a_t]],
                                          corpus.clips[pool.clips[sa][a_r]],
                                          corpus.clips[pool.clips[sb][b_t]],
                                          corpus.clips[pool.clips[sb][b_r]], snr, rng, spec.mode,
                                          spec.enc_stride, spec.clip_seconds);
        first.target_clip_index = pool.clips[sa][a_t];
        second.target_clip_index = pool.clips[sb][b_t];
        write_example(first, out_dir, stem_name("eval", 2 * p), spec.mode, eval_manifest);
        write_example(second, out_dir, stem_name("eval", 2 * p + 1), spec.mode, eval_manifest);
    }

    if (!train_manifest || !eval_manifest) throw io_error("failed writing manifests in " + out_dir);
}

std::vector<MixtureExample> load_examples(const std::string& manifest_path) {
    std::ifstream manifest(manifest_path);
    if (!manifest) throw io_error("cannot open dataset manifest: " + manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();

    std::vector<MixtureExample> out;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw io_error("bad dataset manifest line: " + std::string(e.what()));
        }
        MixtureExample ex;
        ex.target = read_wav((base / j.at("target").get<std::string>()).string());
        ex.interferer = read_wav((base / j.at("interferer").get<std::string>()).string());
        ex.reference = read_wav((base / j.at("reference").get<std::string>()).string());
        // recomputed so mixture == target + interferer holds after float32 storage
        ex.mixture = mix_sources({ex.target, ex.interferer});
        std::ifstream lf(base / j.at("labels").get<std::string>());
        if (!lf) throw io_error("cannot open labels for " + j.at("id").get<std::string>());
        json lj;
        lf >> lj;
        ex.oracle_labels = rle_decode(lj);
        ex.snr_db = j.at("snr_db").get<double>();
        ex.target_speaker_id = j.at("target_speaker").get<std::string>();
        ex.interferer_speaker_id = j.at("interferer_speaker").get<std::string>();
        ex.target_clip_index = j.at("target_clip").get<int>();
        out.push_back(std::move(ex));
    }
    if (out.empty()) throw io_error("dataset manifest is empty: " + manifest_path);
    return out;
}

}  // namespace wase
