#include "wase/wav.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "wase/common.hpp"

namespace wase {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(v & 0xff);
    out.push_back((v >> 8) & 0xff);
    out.push_back((v >> 16) & 0xff);
    out.push_back((v >> 24) & 0xff);
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back((v >> 8) & 0xff);
}

uint32_t get_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t get_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

Waveform read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open WAV file: " + path);
    std::vector<uint8_t> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (raw.size() < 12 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
        std::memcmp(raw.data() + 8, "WAVE", 4) != 0) {
        throw io_error("not a RIFF/WAVE file: " + path);
    }

    uint16_t audio_format = 0, channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    const uint8_t* data = nullptr;
    uint32_t data_size = 0;
    bool have_fmt = false;

    size_t pos = 12;
    while (pos + 8 <= raw.size()) {
        const char* id = reinterpret_cast<const char*>(raw.data() + pos);
        const uint32_t sz = get_u32(raw.data() + pos + 4);
        if (pos + 8 + sz > raw.size()) throw io_error("truncated WAV chunk in " + path);
        const uint8_t* body = raw.data() + pos + 8;
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (sz < 16) throw io_error("malformed fmt chunk in " + path);
            audio_format = get_u16(body);
            channels = get_u16(body + 2);
            sample_rate = get_u32(body + 4);
            bits = get_u16(body + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = body;
            data_size = sz;
        }
        pos += 8 + sz + (sz & 1);  // chunks are word-aligned
    }
    if (!have_fmt || !data) throw io_error("missing fmt or data chunk in " + path);
    if (channels != 1) {
        throw io_error("only mono WAV supported, got " + std::to_string(channels) +
                       " channels in " + path);
    }

    Waveform w;
    w.sample_rate = static_cast<int>(sample_rate);
    if (audio_format == 1 && bits == 16) {
        const size_t n = data_size / 2;
        w.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
            const int16_t s = static_cast<int16_t>(get_u16(data + 2 * i));
            w.samples[i] = static_cast<double>(s) / 32768.0;
        }
    } else if (audio_format == 3 && bits == 32) {
        const size_t n = data_size / 4;
        w.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
            float v;
            const uint32_t u = get_u32(data + 4 * i);
            std::memcpy(&v, &u, 4);
            w.samples[i] = static_cast<double>(v);
        }
    } else {
        throw io_error("unsupported WAV encoding (format " + std::to_string(audio_format) + ", " +
                       std::to_string(bits) + " bits) in " + path);
    }
    return w;
}

void write_wav(const std::string& path, const Waveform& w, WavFormat fmt) {
    const bool pcm = fmt == WavFormat::pcm16;
    const uint16_t bits = pcm ? 16 : 32;
    const uint16_t block = static_cast<uint16_t>(bits / 8);
    const uint32_t data_size = static_cast<uint32_t>(w.samples.size() * block);

    std::vector<uint8_t> out;
    out.reserve(44 + data_size);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + data_size);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, pcm ? 1 : 3);  // PCM or IEEE float
    put_u16(out, 1);
    put_u32(out, static_cast<uint32_t>(w.sample_rate));
    put_u32(out, static_cast<uint32_t>(w.sample_rate) * block);
    put_u16(out, block);
    put_u16(out, bits);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, data_size);

    if (pcm) {
        for (double x : w.samples) {
            long v = std::lround(x * 32768.0);
            if (v < -32768) v = -32768;
            if (v > 32767) v = 32767;
            put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(v)));
        }
    } else {
        for (double x : w.samples) {
            const float v = static_cast<float>(x);
            uint32_t u;
            std::memcpy(&u, &v, 4);
            put_u32(out, u);
        }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw io_error("failed to write " + path);
}

}  // namespace wase
