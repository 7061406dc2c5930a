// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/wav.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "casnet/errors.h"

namespace casnet {

namespace {

uint32_t U32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t U16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void Put32(std::vector<unsigned char>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void Put16(std::vector<unsigned char>& out, uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace

Waveform DecodeWav(const std::vector<unsigned char>& bytes, const std::string& name) {
  if (bytes.size() < 12) throw IoError(name + ": truncated header (" +
                                       std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0) throw IoError(name + ": not a RIFF file");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) throw IoError(name + ": RIFF type is not WAVE");
  size_t pos = 12;
  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  while (true) {
    if (pos + 8 > bytes.size()) {
      throw IoError(name + (have_fmt ? ": no data chunk" : ": truncated header (no fmt chunk)"));
    }
    const unsigned char* chunk = bytes.data() + pos;
    const uint32_t size = U32(chunk + 4);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || pos + 8 + 16 > bytes.size()) throw IoError(name + ": truncated fmt chunk");
      format = U16(chunk + 8);
      channels = U16(chunk + 10);
      rate = U32(chunk + 12);
      bits = U16(chunk + 22);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw IoError(name + ": data chunk before fmt chunk");
      if (format != 1) throw IoError(name + ": audio format " + std::to_string(format) +
                                     " is not PCM (1)");
      if (channels != 1) throw IoError(name + ": expected mono, file has " +
                                       std::to_string(channels) + " channels");
      if (bits != 16) throw IoError(name + ": expected 16 bits per sample, file has " +
                                    std::to_string(bits));
      if (rate == 0) throw IoError(name + ": sample rate is 0");
      const size_t avail = std::min<size_t>(size, bytes.size() - pos - 8);
      if (avail < size) throw IoError(name + ": data chunk truncated");
      Waveform wav;
      wav.sample_rate = static_cast<int>(rate);
      wav.samples.resize(size / 2);
      for (size_t i = 0; i < wav.samples.size(); ++i) {
        const auto v = static_cast<int16_t>(U16(chunk + 8 + 2 * i));
        wav.samples[i] = static_cast<double>(v) / 32768.0;
      }
      return wav;
    }
    pos += 8 + size + (size & 1);
  }
}

std::vector<unsigned char> EncodeWav(const Waveform& wav) {
  CASNET_CHECK(wav.sample_rate > 0, "SaveWav: sample rate must be positive");
  const uint32_t data_bytes = static_cast<uint32_t>(wav.samples.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  Put32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  Put32(out, 16);
  Put16(out, 1);
  Put16(out, 1);
  Put32(out, static_cast<uint32_t>(wav.sample_rate));
  Put32(out, static_cast<uint32_t>(wav.sample_rate) * 2);
  Put16(out, 2);
  Put16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  Put32(out, data_bytes);
  for (double s : wav.samples) {
    const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    Put16(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
  return out;
}

Waveform LoadWav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  return DecodeWav(bytes, path);
}

void SaveWav(const std::string& path, const Waveform& wav) {
  const auto bytes = EncodeWav(wav);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing '" + path + "'");
}

}  // namespace casnet
