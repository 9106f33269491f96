#include "mtfatt/wav.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mtfatt {

static_assert(std::endian::native == std::endian::little,
              "WAV and checkpoint I/O assume a little-endian host");

namespace {

uint32_t rd_u32(const unsigned char* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

uint16_t rd_u16(const unsigned char* p) {
  uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

void put_u32(std::string& s, uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::string& s, uint16_t v) { s.append(reinterpret_cast<const char*>(&v), 2); }

void write_wav(const std::string& path, const float* interleaved, int64_t frames, int channels,
               int sample_rate, bool as_float) {
  if (channels < 1 || channels > 2) throw WavError("wav write: channels must be 1 or 2");
  const uint16_t bytes_per = as_float ? 4 : 2;
  const uint64_t data_bytes = static_cast<uint64_t>(frames) * channels * bytes_per;
  std::string body;
  body.reserve(44 + data_bytes);
  body += "RIFF";
  put_u32(body, static_cast<uint32_t>(36 + data_bytes));
  body += "WAVE";
  body += "fmt ";
  put_u32(body, 16);
  put_u16(body, as_float ? 3 : 1);  // IEEE float / PCM
  put_u16(body, static_cast<uint16_t>(channels));
  put_u32(body, static_cast<uint32_t>(sample_rate));
  put_u32(body, static_cast<uint32_t>(sample_rate) * channels * bytes_per);
  put_u16(body, static_cast<uint16_t>(channels * bytes_per));
  put_u16(body, static_cast<uint16_t>(8 * bytes_per));
  body += "data";
  put_u32(body, static_cast<uint32_t>(data_bytes));
  const int64_t n = frames * channels;
  if (as_float) {
    body.append(reinterpret_cast<const char*>(interleaved), static_cast<size_t>(n) * 4);
  } else {
    for (int64_t i = 0; i < n; ++i) {
      float x = interleaved[i] * 32768.0f;
      if (x > 32767.0f) x = 32767.0f;
      if (x < -32768.0f) x = -32768.0f;
      auto v = static_cast<int16_t>(std::lrintf(x));
      body.append(reinterpret_cast<const char*>(&v), 2);
    }
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw WavError("wav write: cannot open " + path);
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!os) throw WavError("wav write: short write to " + path);
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WavError("wav read: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw WavError("wav read: " + path + " has no RIFF/WAVE header");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  size_t pos = 12;
  WavData out;
  while (pos + 8 <= buf.size()) {
    char id[5] = {0};
    std::memcpy(id, buf.data() + pos, 4);
    const uint32_t len = rd_u32(buf.data() + pos + 4);
    const size_t payload = pos + 8;
    if (payload + len > buf.size())
      throw WavError("wav read: chunk '" + std::string(id) + "' in " + path +
                     " runs past end of file");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw WavError("wav read: short 'fmt ' chunk in " + path);
      format = rd_u16(buf.data() + payload);
      channels = rd_u16(buf.data() + payload + 2);
      rate = rd_u32(buf.data() + payload + 4);
      bits = rd_u16(buf.data() + payload + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw WavError("wav read: 'data' chunk before 'fmt ' in " + path);
      if (channels < 1 || channels > 2)
        throw WavError("wav read: " + path + " has unsupported channel count " +
                       std::to_string(channels));
      if (format == 1 && bits == 16) {
        const size_t n = len / 2;
        out.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
          int16_t v;
          std::memcpy(&v, buf.data() + payload + 2 * i, 2);
          out.samples[i] = static_cast<float>(v) / 32768.0f;
        }
      } else if (format == 3 && bits == 32) {
        const size_t n = len / 4;
        out.samples.resize(n);
        std::memcpy(out.samples.data(), buf.data() + payload, n * 4);
      } else {
        throw WavError("wav read: " + path + " 'fmt ' declares unsupported format " +
                       std::to_string(format) + "/" + std::to_string(bits) + "-bit");
      }
      out.channels = channels;
      out.sample_rate = static_cast<int>(rate);
      return out;
    }
    pos = payload + len + (len & 1);  // chunks are word-aligned
  }
  throw WavError("wav read: " + path + " has no 'data' chunk");
}

void write_wav_pcm16(const std::string& path, const float* interleaved, int64_t frames,
                     int channels, int sample_rate) {
  write_wav(path, interleaved, frames, channels, sample_rate, false);
}

void write_wav_float32(const std::string& path, const float* interleaved, int64_t frames,
                       int channels, int sample_rate) {
  write_wav(path, interleaved, frames, channels, sample_rate, true);
}

}  // namespace mtfatt
