// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Synthetic parallel-channel two-speaker corpus: speech-like sources,
// parametric recording channels, mixing and JSON Lines manifests.

#ifndef CASNET_CORPUS_H_
#define CASNET_CORPUS_H_

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "casnet/wav.h"

namespace casnet {

inline constexpr int kManifestVersion = 1;

// SplitMix64-style mixing of a base seed with a list of tags.
uint64_t DeriveSeed(uint64_t base, std::initializer_list<uint64_t> tags);

struct SpeakerParams {
  int speaker_id = 0;
  double f0_low = 100.0;
  double f0_high = 140.0;
  std::array<double, 3> formants = {500.0, 1500.0, 2500.0};
  double syllable_rate = 4.0;  // syllables per second
};

// Deterministic voice for a speaker id.
SpeakerParams MakeSpeaker(int speaker_id, uint64_t corpus_seed);

// Harmonic stack with a wandering pitch inside the speaker's range, drifting
// formant envelope and syllabic amplitude bursts. RMS is -20 dBFS.
Waveform GenerateSource(uint64_t seed, double duration_s, const SpeakerParams& speaker,
                        int sample_rate = 8000);

double Rms(const std::vector<double>& x);

struct ChannelProfile {
  int channel_id = 0;
  std::string name = "identity";
  std::vector<double> fir_taps = {1.0};
  double gain_db = 0.0;
  // Additive white noise level relative to the filtered signal RMS.
  double noise_floor_db = -std::numeric_limits<double>::infinity();
  double clip_threshold = 1.0;
  uint64_t seed = 0;

  static ChannelProfile Identity(int channel_id);
  void Validate() const;
};

// Profile table for `n_channels` (3..6) channels: channel 0 is clean, the
// others are colored, noisy and/or clipped.
std::vector<ChannelProfile> DefaultChannelProfiles(int n_channels, uint64_t seed);

// FIR (same length, causal, tail dropped) -> gain -> seeded noise -> clip.
Waveform ApplyChannel(const Waveform& w, const ChannelProfile& p);
// FIR and gain only: how a clean target sounds through the channel.
Waveform ApplyChannelLinear(const Waveform& w, const ChannelProfile& p);

struct MixResult {
  Waveform mixture;
  Waveform target1;
  Waveform target2;
  double gain2 = 1.0;  // scale applied to s2 before summing
  double norm = 1.0;   // joint peak normalization scalar
};

inline constexpr double kMixturePeak = 0.9;

// s2 is scaled to sit `rel_level_db` (energy) relative to s1, the pair is
// summed and everything is scaled jointly so the mixture peak is 0.9.
MixResult MixPair(const Waveform& s1, const Waveform& s2, double rel_level_db);

struct SourceRef {
  int speaker_id = 0;
  uint64_t seed = 0;
  double gain_db = 0.0;
  int64_t offset = 0;
};

// One mixture rendered through one channel. (mixture_id, channel_id) is the
// record key; the same mixture_id on different channels is the same content.
struct MixtureRecord {
  std::string mixture_id;
  int channel_id = 0;
  std::array<SourceRef, 2> sources;
  double rel_level_db = 0.0;
  int64_t num_samples = 0;
};

struct Manifest {
  std::string split;
  int sample_rate = 8000;
  int holdout_channel = -1;
  std::vector<ChannelProfile> profiles;
  std::vector<MixtureRecord> records;

  const ChannelProfile* FindProfile(int channel_id) const;
  std::vector<int> ChannelIds() const;
  void Validate() const;
};

struct RenderedMixture {
  Waveform mixture;
  Waveform target1;
  Waveform target2;
};

struct CorpusSplit {
  Manifest manifest;
  std::vector<RenderedMixture> audio;  // parallel to manifest.records
};

struct CorpusConfig {
  int sample_rate = 8000;
  double duration_s = 3.0;
  int train_count = 200;
  int valid_count = 40;
  int test_count = 40;
  int n_channels = 4;
  int holdout_channel = 3;
  uint64_t seed = 0;
  double rel_level_low_db = -2.5;
  double rel_level_high_db = 2.5;
  // Speaker pools per split; default pools are disjoint id ranges.
  std::vector<int> train_speakers;
  std::vector<int> valid_speakers;
  std::vector<int> test_speakers;
  int threads = 1;

  void Validate() const;
  nlohmann::json ToJson() const;
  static CorpusConfig FromJson(const nlohmann::json& j);
};

struct Corpus {
  CorpusConfig config;
  std::vector<ChannelProfile> profiles;
  CorpusSplit train;
  CorpusSplit valid;
  CorpusSplit test;
};

// Every mixture is rendered through every channel; train and valid skip the
// hold-out channel, test keeps all channels.
Corpus BuildCorpus(const CorpusConfig& config);

nlohmann::json ProfileToJson(const ChannelProfile& p);
ChannelProfile ProfileFromJson(const nlohmann::json& j);

// Manifest as JSON Lines: one header object, then one object per record.
void WriteManifest(const std::string& path, const Manifest& manifest);
Manifest ReadManifest(const std::string& path);

// Layout under `dir`:
//   corpus.json                     generator config
//   <split>.jsonl                   manifest
//   <split>/<channel>/<id>.wav      mixtures
//   <split>/s1/<channel>/<id>.wav   first target, same for s2
void WriteCorpus(const Corpus& corpus, const std::string& dir);
CorpusSplit LoadSplit(const std::string& dir, const std::string& split);
// Same, from a manifest path; audio paths resolve against its directory.
CorpusSplit LoadSplitFromManifest(const std::string& manifest_path);
std::string MixturePath(const std::string& split, int channel_id, const std::string& id);
std::string TargetPath(const std::string& split, int which, int channel_id,
                       const std::string& id);

}  // namespace casnet

#endif  // CASNET_CORPUS_H_
