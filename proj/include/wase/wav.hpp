#pragma once

#include <string>

#include "wase/signal.hpp"

namespace wase {

enum class WavFormat { pcm16, float32 };

// Mono RIFF/WAVE. pcm16 reads as sample/32768; write_wav in pcm16 mode is the
// exact inverse (round to nearest, clamp to [-1, 1 - 1/32768]).
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w, WavFormat fmt = WavFormat::pcm16);

}  // namespace wase
