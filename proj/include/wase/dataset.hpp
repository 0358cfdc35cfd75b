#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "wase/corpus.hpp"
#include "wase/signal.hpp"

namespace wase {

struct MixtureExample {
    Waveform mixture, target, interferer, reference;
    LabelVector oracle_labels;  // frame resolution (stride-downsampled)
    double snr_db = 0.0;
    std::string target_speaker_id, interferer_speaker_id;
    int target_clip_index = -1;  // corpus index, for per-epoch reference redraw
};

// Pads (onset_offset mode), scales the interferer to the requested SNR over
// the overlap of pre-padding regions, mixes, fixes the length to
// clip_seconds, and derives oracle labels from the clean target. mode is
// "onset" (labels stay 1 to the end) or "onset_offset".
MixtureExample build_example(const CorpusClip& target, const CorpusClip& reference,
                             const CorpusClip& interferer, double snr_db, std::mt19937_64& rng,
                             const std::string& mode, int enc_stride, double clip_seconds);

// Doubled-target evaluation protocol: one mixture, both sources take the
// target role in turn. Both examples share the padded/scaled signals, so
// first.mixture == second.mixture exactly.
std::pair<MixtureExample, MixtureExample> build_pair(
    const CorpusClip& a, const CorpusClip& ref_a, const CorpusClip& b, const CorpusClip& ref_b,
    double snr_db, std::mt19937_64& rng, const std::string& mode, int enc_stride,
    double clip_seconds);

struct DatasetSpec {
    int n_train = 0;
    int n_eval = 0;  // must be even: eval items come in role-swapped pairs
    std::string mode = "onset_offset";
    int enc_stride = 8;
    double clip_seconds = 4.0;
    double snr_min_db = -2.5;
    double snr_max_db = 2.5;
    uint64_t seed = 0;
};

// Writes audio (float32 WAVs), run-length-encoded label JSON, and
// train.jsonl / eval.jsonl manifests under out_dir.
void build_dataset(const Corpus& corpus, const DatasetSpec& spec, const std::string& out_dir);

// Loads a manifest written by build_dataset. The stored mixture is ignored
// and recomputed as target + interferer so the sum invariant holds exactly
// after the float32 round trip.
std::vector<MixtureExample> load_examples(const std::string& manifest_path);

}  // namespace wase
