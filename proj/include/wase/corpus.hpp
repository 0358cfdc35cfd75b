#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wase/signal.hpp"

namespace wase {

struct CorpusClip {
    std::string speaker_id;
    Waveform audio;
};

struct Corpus {
    std::vector<CorpusClip> clips;

    std::vector<int> clips_of(const std::string& speaker_id) const;
    std::vector<std::string> speakers() const;  // unique ids in first-seen order
};

// Deterministic pseudo-speaker corpus. Each speaker has a fixed fundamental
// in [90, 250] Hz (stratified so speakers occupy distinct bands), a harmonic
// amplitude profile, and an amplitude-modulation envelope; clips share those
// generator parameters but differ in voiced/pause segmentation and phases.
// Every clip starts with >= 200 ms of true silence.
Corpus synth_corpus(int num_speakers, int clips_per_speaker, double clip_seconds,
                    int sample_rate, uint64_t seed);

// WAV files plus a JSON-lines manifest {speaker_id, path, duration_s, sample_rate}.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace wase
