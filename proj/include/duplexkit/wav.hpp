#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "duplexkit/common.hpp"

namespace duplexkit::wav {

struct Audio {
  std::vector<double> samples;  // mono, in [-1, 1]
  std::uint32_t sample_rate = 0;
};

/// Reads PCM 16-bit WAV; stereo is downmixed by averaging the channels.
inline Audio read_wav(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_wav: cannot open " + path);

  char riff[4];
  is.read(riff, 4);
  if (!is || std::string(riff, 4) != "RIFF") throw std::runtime_error("read_wav: not a RIFF file");
  io::read_u32(is);  // total size
  char wave[4];
  is.read(wave, 4);
  if (!is || std::string(wave, 4) != "WAVE") throw std::runtime_error("read_wav: not a WAVE file");

  Audio out;
  std::uint16_t channels = 0, bits = 0;
  bool have_fmt = false;
  while (is) {
    char id[4];
    is.read(id, 4);
    if (!is) break;
    std::uint32_t size = io::read_u32(is);
    std::string chunk(id, 4);
    if (chunk == "fmt ") {
      std::uint16_t fmt = io::read_u16(is);
      channels = io::read_u16(is);
      out.sample_rate = io::read_u32(is);
      io::read_u32(is);  // byte rate
      io::read_u16(is);  // block align
      bits = io::read_u16(is);
      if (size > 16) is.seekg(size - 16, std::ios::cur);
      if (fmt != 1 || bits != 16)
        throw std::runtime_error("read_wav: only PCM 16-bit supported");
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) throw std::runtime_error("read_wav: data before fmt chunk");
      std::uint32_t n_frames = size / (2u * channels);
      out.samples.resize(n_frames);
      for (std::uint32_t f = 0; f < n_frames; ++f) {
        double acc = 0;
        for (std::uint16_t c = 0; c < channels; ++c)
          acc += static_cast<std::int16_t>(io::read_u16(is)) / 32768.0;
        out.samples[f] = acc / channels;
      }
      return out;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw std::runtime_error("read_wav: no data chunk in " + path);
}

inline void write_wav(const std::string &path, const std::vector<double> &samples,
                      std::uint32_t sample_rate) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_wav: cannot open " + path);
  std::uint32_t data_size = static_cast<std::uint32_t>(samples.size()) * 2;
  os.write("RIFF", 4);
  io::write_u32(os, 36 + data_size);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  io::write_u32(os, 16);
  io::write_u16(os, 1);  // PCM
  io::write_u16(os, 1);  // mono
  io::write_u32(os, sample_rate);
  io::write_u32(os, sample_rate * 2);
  io::write_u16(os, 2);
  io::write_u16(os, 16);
  os.write("data", 4);
  io::write_u32(os, data_size);
  for (double s : samples) {
    double clamped = s < -1.0 ? -1.0 : (s > 1.0 ? 1.0 : s);
    io::write_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(clamped * 32767.0)));
  }
}

}  // namespace duplexkit::wav
