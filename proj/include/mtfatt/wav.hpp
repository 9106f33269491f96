#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

// Minimal RIFF/WAVE reader and writer: 16-bit PCM and 32-bit IEEE float,
// mono or stereo. Unknown chunks are skipped; malformed files raise
// WavError naming the offending chunk.
namespace mtfatt {

struct WavError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct WavData {
  std::vector<float> samples;  // interleaved, in [-1, 1] scale for PCM16
  int channels = 0;
  int sample_rate = 0;
  int64_t frames() const {
    return channels ? static_cast<int64_t>(samples.size()) / channels : 0;
  }
};

WavData read_wav(const std::string& path);
void write_wav_pcm16(const std::string& path, const float* interleaved, int64_t frames,
                     int channels, int sample_rate);
void write_wav_float32(const std::string& path, const float* interleaved, int64_t frames,
                       int channels, int sample_rate);

}  // namespace mtfatt
