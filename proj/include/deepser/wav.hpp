#pragma once

// Minimal RIFF/WAVE reader and writer for mono or multi-channel 16-bit PCM.
// Multi-channel input is averaged down to mono.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "deepser/dsp.hpp"
#include "deepser/error.hpp"

namespace deepser {

namespace detail {

inline std::uint32_t read_le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
inline std::uint16_t read_le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put_le32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_le16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

inline AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open wav file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw Error("not a RIFF/WAVE file: " + path.string());

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = detail::read_le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw Error("truncated wav chunk in " + path.string());
    if (std::memcmp(chunk, "fmt ", 4) == 0 && len >= 16) {
      format = detail::read_le16(bytes.data() + body);
      channels = detail::read_le16(bytes.data() + body + 2);
      rate = detail::read_le32(bytes.data() + body + 4);
      bits = detail::read_le16(bytes.data() + body + 14);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1u);
  }
  if (format != 1 || bits != 16 || channels == 0 || rate == 0 || data == nullptr)
    throw Error("unsupported wav (need 16-bit PCM): " + path.string());

  AudioBuffer audio;
  audio.sample_rate = static_cast<int>(rate);
  const std::size_t frames = data_len / (2u * channels);
  audio.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const auto raw = static_cast<std::int16_t>(detail::read_le16(data + 2 * (i * channels + c)));
      acc += raw / 32768.0;
    }
    audio.samples[i] = acc / channels;
  }
  return audio;
}

inline void write_wav(const std::filesystem::path& path, const AudioBuffer& audio) {
  std::string out;
  const auto n = static_cast<std::uint32_t>(audio.samples.size());
  out.reserve(44 + 2 * n);
  out += "RIFF";
  detail::put_le32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  detail::put_le32(out, 16);
  detail::put_le16(out, 1);
  detail::put_le16(out, 1);
  detail::put_le32(out, static_cast<std::uint32_t>(audio.sample_rate));
  detail::put_le32(out, static_cast<std::uint32_t>(audio.sample_rate) * 2);
  detail::put_le16(out, 2);
  detail::put_le16(out, 16);
  out += "data";
  detail::put_le32(out, 2 * n);
  for (double x : audio.samples) {
    const long q = std::lround(std::clamp(x, -1.0, 1.0) * 32767.0);
    detail::put_le16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write wav file: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("failed writing wav file: " + path.string());
}

}  // namespace deepser
