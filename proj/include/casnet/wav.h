// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CASNET_WAV_H_
#define CASNET_WAV_H_

#include <string>
#include <vector>

namespace casnet {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 8000;

  size_t size() const { return samples.size(); }
};

// 16-bit PCM mono RIFF/WAVE only. Samples are scaled by 1/32768 on read and
// rounded after scaling by 32768 (clamped to the int16 range) on write.
Waveform LoadWav(const std::string& path);
void SaveWav(const std::string& path, const Waveform& wav);

// Same as above on in-memory byte buffers.
Waveform DecodeWav(const std::vector<unsigned char>& bytes, const std::string& name);
std::vector<unsigned char> EncodeWav(const Waveform& wav);

}  // namespace casnet

#endif  // CASNET_WAV_H_
