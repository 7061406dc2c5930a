// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/corpus.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <thread>

#include "casnet/errors.h"

namespace casnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kSourceRms = 0.1;  // -20 dBFS

uint64_t SplitMix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double DbToGain(double db) { return std::pow(10.0, db / 20.0); }

// Windowed-sinc lowpass, unit DC gain. `cutoff` is a fraction of the sample rate.
std::vector<double> Lowpass(int taps, double cutoff) {
  std::vector<double> h(taps);
  const double mid = (taps - 1) / 2.0;
  double sum = 0.0;
  for (int n = 0; n < taps; ++n) {
    const double x = n - mid;
    const double sinc = x == 0.0 ? 2.0 * cutoff
                                 : std::sin(kTwoPi * cutoff * x) / (std::numbers::pi * x);
    const double window = 0.54 - 0.46 * std::cos(kTwoPi * n / (taps - 1));
    h[n] = sinc * window;
    sum += h[n];
  }
  for (double& v : h) v /= sum;
  return h;
}

std::vector<double> Highpass(int taps, double cutoff) {
  std::vector<double> h = Lowpass(taps, cutoff);
  for (double& v : h) v = -v;
  h[(taps - 1) / 2] += 1.0;
  return h;
}

std::vector<double> Bandpass(int taps, double low, double high) {
  std::vector<double> a = Lowpass(taps, high), b = Lowpass(taps, low);
  for (int n = 0; n < taps; ++n) a[n] -= b[n];
  return a;
}

const char* SplitName(int which) {
  static const char* names[] = {"train", "valid", "test"};
  return names[which];
}

}  // namespace

uint64_t DeriveSeed(uint64_t base, std::initializer_list<uint64_t> tags) {
  uint64_t h = SplitMix(base);
  for (uint64_t t : tags) h = SplitMix(h ^ SplitMix(t + 0x632be59bd9b4e019ULL));
  return h;
}

double Rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

SpeakerParams MakeSpeaker(int speaker_id, uint64_t corpus_seed) {
  std::mt19937_64 rng(DeriveSeed(corpus_seed, {0x5be4, static_cast<uint64_t>(speaker_id)}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SpeakerParams p;
  p.speaker_id = speaker_id;
  // Alternate low and high voices so every pool has both.
  const bool high = speaker_id % 2 == 1;
  const double base = high ? 165.0 + 70.0 * u(rng) : 85.0 + 55.0 * u(rng);
  p.f0_low = base;
  p.f0_high = base * (1.25 + 0.2 * u(rng));
  const double scale = high ? 1.15 : 1.0;
  p.formants = {scale * (380.0 + 250.0 * u(rng)), scale * (1000.0 + 700.0 * u(rng)),
                std::min(3400.0, scale * (2300.0 + 600.0 * u(rng)))};
  p.syllable_rate = 3.0 + 2.5 * u(rng);
  return p;
}

Waveform GenerateSource(uint64_t seed, double duration_s, const SpeakerParams& speaker,
                        int sample_rate) {
  CASNET_CHECK(duration_s > 0.0, "GenerateSource: duration must be positive, got ",
               duration_s);
  CASNET_CHECK(sample_rate > 0, "GenerateSource: sample rate must be positive");
  const int64_t n = std::max<int64_t>(1, std::llround(duration_s * sample_rate));
  const double sr = sample_rate;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Syllabic envelope: raised-cosine bursts separated by short pauses.
  std::vector<double> env(static_cast<size_t>(n), 0.0);
  {
    const double mean_syl = 0.7 / speaker.syllable_rate;
    int64_t pos = static_cast<int64_t>(u(rng) * 0.05 * sr);
    while (pos < n) {
      const int64_t len = static_cast<int64_t>((0.6 + 0.8 * u(rng)) * mean_syl * sr);
      const double amp = 0.6 + 0.4 * u(rng);
      for (int64_t i = 0; i < len && pos + i < n; ++i) {
        env[pos + i] = amp * 0.5 * (1.0 - std::cos(kTwoPi * (i + 0.5) / len));
      }
      pos += len + static_cast<int64_t>((0.02 + 0.1 * u(rng)) * sr);
    }
  }

  const double f0_base = speaker.f0_low + (speaker.f0_high - speaker.f0_low) * u(rng);
  const double f0_rate1 = 0.4 + 0.8 * u(rng), f0_rate2 = 1.5 + 2.0 * u(rng);
  const double ph1 = kTwoPi * u(rng), ph2 = kTwoPi * u(rng);
  std::array<double, 3> fm_rate, fm_phase;
  for (int j = 0; j < 3; ++j) {
    fm_rate[j] = 1.5 + 2.5 * u(rng);
    fm_phase[j] = kTwoPi * u(rng);
  }
  static constexpr std::array<double, 3> kFormantWeight = {1.0, 0.6, 0.3};

  constexpr int kMaxHarmonics = 48;
  constexpr int64_t kBlock = 32;
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  std::array<double, kMaxHarmonics + 1> amp{};
  double phase = 0.0;
  double f0 = f0_base;
  for (int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    if (i % kBlock == 0) {
      f0 = f0_base * (1.0 + 0.08 * std::sin(kTwoPi * f0_rate1 * t + ph1) +
                      0.04 * std::sin(kTwoPi * f0_rate2 * t + ph2));
      f0 = std::clamp(f0, speaker.f0_low * 0.85, speaker.f0_high * 1.15);
      std::array<double, 3> fc;
      for (int j = 0; j < 3; ++j) {
        fc[j] = speaker.formants[j] * (1.0 + 0.12 * std::sin(kTwoPi * fm_rate[j] * t + fm_phase[j]));
      }
      for (int k = 1; k <= kMaxHarmonics; ++k) {
        const double fk = k * f0;
        if (fk >= 0.45 * sr) {
          amp[k] = 0.0;
          continue;
        }
        double a = 0.02;
        for (int j = 0; j < 3; ++j) {
          const double bw = 60.0 + 0.06 * fc[j];
          const double d = (fk - fc[j]) / bw;
          a += kFormantWeight[j] * std::exp(-0.5 * d * d);
        }
        amp[k] = a / std::sqrt(static_cast<double>(k));
      }
    }
    phase += kTwoPi * f0 / sr;
    if (phase > kTwoPi) phase -= kTwoPi;
    double v = 0.0;
    for (int k = 1; k <= kMaxHarmonics; ++k) {
      if (amp[k] != 0.0) v += amp[k] * std::sin(k * phase);
    }
    out[i] = env[i] * (v + 0.03 * gauss(rng));
  }

  const double rms = Rms(out);
  if (rms > 0.0) {
    for (double& v : out) v *= kSourceRms / rms;
  }
  for (double& v : out) v = std::clamp(v, -1.0, 1.0);
  return Waveform{std::move(out), sample_rate};
}

ChannelProfile ChannelProfile::Identity(int channel_id) {
  ChannelProfile p;
  p.channel_id = channel_id;
  return p;
}

void ChannelProfile::Validate() const {
  CASNET_CHECK(!fir_taps.empty() && fir_taps.size() <= 64, "channel ", channel_id,
               ": FIR must have 1..64 taps, has ", fir_taps.size());
  CASNET_CHECK(clip_threshold > 0.0 && clip_threshold <= 1.0, "channel ", channel_id,
               ": clip threshold must be in (0, 1], got ", clip_threshold);
  CASNET_CHECK(std::isfinite(gain_db), "channel ", channel_id, ": gain must be finite");
}

std::vector<ChannelProfile> DefaultChannelProfiles(int n_channels, uint64_t seed) {
  CASNET_CHECK(n_channels >= 3 && n_channels <= 6, "n_channels must be in [3, 6], got ",
               n_channels);
  std::vector<ChannelProfile> all(6);
  all[0] = ChannelProfile::Identity(0);
  all[0].name = "close-talk";

  all[1].name = "lavalier";
  all[1].fir_taps = Lowpass(15, 1800.0 / 8000.0);
  all[1].gain_db = -2.0;
  all[1].noise_floor_db = -35.0;

  all[2].name = "phone";
  all[2].fir_taps = Bandpass(21, 300.0 / 8000.0, 2800.0 / 8000.0);
  all[2].gain_db = -3.0;
  all[2].noise_floor_db = -28.0;
  all[2].clip_threshold = 0.7;

  all[3].name = "distant";
  {
    std::vector<double> taps(30, 0.0);
    taps[0] = 0.7;
    taps[12] = 0.35;
    taps[29] = 0.2;
    const std::vector<double> lp = Lowpass(7, 2500.0 / 8000.0);
    std::vector<double> conv(taps.size() + lp.size() - 1, 0.0);
    for (size_t i = 0; i < taps.size(); ++i)
      for (size_t j = 0; j < lp.size(); ++j) conv[i + j] += taps[i] * lp[j];
    all[3].fir_taps = conv;
  }
  all[3].gain_db = -4.0;
  all[3].noise_floor_db = -24.0;

  all[4].name = "android";
  all[4].fir_taps = Highpass(15, 500.0 / 8000.0);
  all[4].noise_floor_db = -30.0;
  all[4].clip_threshold = 0.4;

  all[5].name = "tinny";
  all[5].fir_taps = Bandpass(17, 1000.0 / 8000.0, 3500.0 / 8000.0);
  all[5].gain_db = -1.0;
  all[5].noise_floor_db = -20.0;
  all[5].clip_threshold = 0.8;

  all.resize(n_channels);
  for (int c = 0; c < n_channels; ++c) {
    all[c].channel_id = c;
    all[c].seed = DeriveSeed(seed, {0xC4A7, static_cast<uint64_t>(c)});
  }
  return all;
}

Waveform ApplyChannelLinear(const Waveform& w, const ChannelProfile& p) {
  p.Validate();
  const auto& x = w.samples;
  const auto& h = p.fir_taps;
  const double g = DbToGain(p.gain_db);
  std::vector<double> y(x.size(), 0.0);
  for (size_t n = 0; n < x.size(); ++n) {
    double acc = 0.0;
    const size_t kmax = std::min(h.size(), n + 1);
    for (size_t k = 0; k < kmax; ++k) acc += h[k] * x[n - k];
    y[n] = acc * g;
  }
  return Waveform{std::move(y), w.sample_rate};
}

Waveform ApplyChannel(const Waveform& w, const ChannelProfile& p) {
  Waveform out = ApplyChannelLinear(w, p);
  if (std::isfinite(p.noise_floor_db)) {
    const double sigma = Rms(out.samples) * DbToGain(p.noise_floor_db);
    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& v : out.samples) v += sigma * gauss(rng);
  }
  const double clip = std::min(p.clip_threshold, 1.0);
  for (double& v : out.samples) v = std::clamp(v, -clip, clip);
  return out;
}

MixResult MixPair(const Waveform& s1, const Waveform& s2, double rel_level_db) {
  CASNET_CHECK(s1.size() == s2.size(), "MixPair: source lengths differ (", s1.size(),
               " vs ", s2.size(), ")");
  CASNET_CHECK(s1.sample_rate == s2.sample_rate, "MixPair: sample rates differ (",
               s1.sample_rate, " vs ", s2.sample_rate, ")");
  CASNET_CHECK(std::isfinite(rel_level_db), "MixPair: relative level must be finite");
  const double r1 = Rms(s1.samples), r2 = Rms(s2.samples);
  CASNET_CHECK(r1 > 0.0, "MixPair: first source has zero energy");
  CASNET_CHECK(r2 > 0.0, "MixPair: second source has zero energy");
  MixResult r;
  r.gain2 = DbToGain(rel_level_db) * r1 / r2;
  std::vector<double> mix(s1.size());
  double peak = 0.0;
  for (size_t i = 0; i < mix.size(); ++i) {
    mix[i] = s1.samples[i] + r.gain2 * s2.samples[i];
    peak = std::max(peak, std::fabs(mix[i]));
  }
  r.norm = peak > 0.0 ? kMixturePeak / peak : 1.0;
  r.mixture = {std::vector<double>(mix.size()), s1.sample_rate};
  r.target1 = {std::vector<double>(mix.size()), s1.sample_rate};
  r.target2 = {std::vector<double>(mix.size()), s1.sample_rate};
  for (size_t i = 0; i < mix.size(); ++i) {
    r.target1.samples[i] = s1.samples[i] * r.norm;
    r.target2.samples[i] = r.gain2 * s2.samples[i] * r.norm;
    r.mixture.samples[i] = r.target1.samples[i] + r.target2.samples[i];
  }
  return r;
}

// ---------------------------------------------------------------------------
// Manifest

const ChannelProfile* Manifest::FindProfile(int channel_id) const {
  for (const auto& p : profiles)
    if (p.channel_id == channel_id) return &p;
  return nullptr;
}

std::vector<int> Manifest::ChannelIds() const {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.channel_id);
  return {ids.begin(), ids.end()};
}

void Manifest::Validate() const {
  CASNET_CHECK(sample_rate > 0, "manifest '", split, "': sample rate must be positive");
  std::set<std::pair<std::string, int>> keys;
  for (const auto& r : records) {
    CASNET_CHECK(FindProfile(r.channel_id) != nullptr, "manifest '", split, "': record ",
                 r.mixture_id, " references unknown channel ", r.channel_id);
    CASNET_CHECK(keys.insert({r.mixture_id, r.channel_id}).second, "manifest '", split,
                 "': duplicate record ", r.mixture_id, " on channel ", r.channel_id);
    CASNET_CHECK(r.num_samples > 0, "manifest '", split, "': record ", r.mixture_id,
                 " has no samples");
  }
}

json ProfileToJson(const ChannelProfile& p) {
  json j = {{"channel_id", p.channel_id},
            {"name", p.name},
            {"fir_taps", p.fir_taps},
            {"gain_db", p.gain_db},
            {"clip_threshold", p.clip_threshold},
            {"seed", p.seed}};
  // JSON has no -inf; a null noise floor means "no noise".
  j["noise_floor_db"] = std::isfinite(p.noise_floor_db) ? json(p.noise_floor_db) : json(nullptr);
  return j;
}

ChannelProfile ProfileFromJson(const json& j) {
  ChannelProfile p;
  p.channel_id = j.at("channel_id").get<int>();
  p.name = j.value("name", std::string("channel"));
  p.fir_taps = j.at("fir_taps").get<std::vector<double>>();
  p.gain_db = j.at("gain_db").get<double>();
  p.clip_threshold = j.at("clip_threshold").get<double>();
  p.seed = j.value("seed", uint64_t{0});
  const auto& nf = j.at("noise_floor_db");
  p.noise_floor_db = nf.is_null() ? -std::numeric_limits<double>::infinity() : nf.get<double>();
  p.Validate();
  return p;
}

void WriteManifest(const std::string& path, const Manifest& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open manifest '" + path + "' for writing");
  json header = {{"type", "header"},
                 {"version", kManifestVersion},
                 {"split", m.split},
                 {"sample_rate", m.sample_rate},
                 {"holdout_channel", m.holdout_channel},
                 {"profiles", json::array()}};
  for (const auto& p : m.profiles) header["profiles"].push_back(ProfileToJson(p));
  os << header.dump() << "\n";
  for (const auto& r : m.records) {
    json rec = {{"type", "mixture"},
                {"version", kManifestVersion},
                {"mixture_id", r.mixture_id},
                {"channel_id", r.channel_id},
                {"rel_level_db", r.rel_level_db},
                {"num_samples", r.num_samples},
                {"mixture_path", MixturePath(m.split, r.channel_id, r.mixture_id)},
                {"target_paths",
                 {TargetPath(m.split, 1, r.channel_id, r.mixture_id),
                  TargetPath(m.split, 2, r.channel_id, r.mixture_id)}},
                {"sources", json::array()}};
    for (const auto& s : r.sources) {
      rec["sources"].push_back({{"speaker_id", s.speaker_id},
                                {"seed", s.seed},
                                {"gain_db", s.gain_db},
                                {"offset", s.offset}});
    }
    os << rec.dump() << "\n";
  }
  if (!os) throw IoError("failed writing manifest '" + path + "'");
}

Manifest ReadManifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest '" + path + "'");
  Manifest m;
  std::string line;
  bool have_header = false;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (j.at("version").get<int>() != kManifestVersion) {
        throw IoError(path + ":" + std::to_string(line_no) + ": unsupported manifest version");
      }
      if (type == "header") {
        m.split = j.at("split").get<std::string>();
        m.sample_rate = j.at("sample_rate").get<int>();
        m.holdout_channel = j.value("holdout_channel", -1);
        for (const auto& p : j.at("profiles")) m.profiles.push_back(ProfileFromJson(p));
        have_header = true;
      } else if (type == "mixture") {
        if (!have_header) throw IoError(path + ": record before header");
        MixtureRecord r;
        r.mixture_id = j.at("mixture_id").get<std::string>();
        r.channel_id = j.at("channel_id").get<int>();
        r.rel_level_db = j.at("rel_level_db").get<double>();
        r.num_samples = j.at("num_samples").get<int64_t>();
        const auto& src = j.at("sources");
        if (src.size() != 2) throw IoError(path + ":" + std::to_string(line_no) +
                                           ": a mixture needs exactly 2 sources");
        for (size_t k = 0; k < 2; ++k) {
          r.sources[k].speaker_id = src[k].at("speaker_id").get<int>();
          r.sources[k].seed = src[k].at("seed").get<uint64_t>();
          r.sources[k].gain_db = src[k].at("gain_db").get<double>();
          r.sources[k].offset = src[k].at("offset").get<int64_t>();
        }
        m.records.push_back(std::move(r));
      } else {
        throw IoError(path + ":" + std::to_string(line_no) + ": unknown line type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw IoError(path + ": manifest has no header line");
  try {
    m.Validate();
  } catch (const ValidationError& e) {
    throw IoError(path + ": " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Corpus generation

void CorpusConfig::Validate() const {
  CASNET_CHECK(sample_rate > 0, "corpus: sample_rate must be positive");
  CASNET_CHECK(duration_s > 0.0, "corpus: duration_s must be positive");
  CASNET_CHECK(train_count >= 0 && valid_count >= 0 && test_count >= 0,
               "corpus: split counts must be non-negative");
  CASNET_CHECK(n_channels >= 3, "corpus: n_channels must be >= 3 so one channel can be "
               "held out and two remain for training, got ", n_channels);
  CASNET_CHECK(n_channels <= 6, "corpus: at most 6 channel profiles are available");
  CASNET_CHECK(holdout_channel >= 0 && holdout_channel < n_channels,
               "corpus: holdout_channel ", holdout_channel, " outside [0, ", n_channels, ")");
  CASNET_CHECK(rel_level_low_db <= rel_level_high_db, "corpus: empty relative level range");
  CASNET_CHECK(threads >= 1, "corpus: threads must be >= 1");
  const std::vector<const std::vector<int>*> pools = {&train_speakers, &valid_speakers,
                                                      &test_speakers};
  std::set<int> seen;
  for (size_t s = 0; s < pools.size(); ++s) {
    std::set<int> local(pools[s]->begin(), pools[s]->end());
    for (int id : local) {
      CASNET_CHECK(!seen.count(id), "corpus: speaker ", id,
                   " appears in more than one split");
    }
    seen.insert(local.begin(), local.end());
  }
}

json CorpusConfig::ToJson() const {
  return {{"sample_rate", sample_rate},
          {"duration_s", duration_s},
          {"train_count", train_count},
          {"valid_count", valid_count},
          {"test_count", test_count},
          {"n_channels", n_channels},
          {"holdout_channel", holdout_channel},
          {"seed", seed},
          {"rel_level_db", {rel_level_low_db, rel_level_high_db}},
          {"train_speakers", train_speakers},
          {"valid_speakers", valid_speakers},
          {"test_speakers", test_speakers},
          {"threads", threads}};
}

CorpusConfig CorpusConfig::FromJson(const json& j) {
  static const std::set<std::string> kKeys = {
      "sample_rate", "duration_s", "train_count", "valid_count", "test_count",
      "n_channels", "holdout_channel", "seed", "rel_level_db", "train_speakers",
      "valid_speakers", "test_speakers", "threads"};
  for (const auto& [key, _] : j.items()) {
    CASNET_CHECK(kKeys.count(key), "corpus config: unknown key '", key, "'");
  }
  CorpusConfig c;
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.duration_s = j.value("duration_s", c.duration_s);
  c.train_count = j.value("train_count", c.train_count);
  c.valid_count = j.value("valid_count", c.valid_count);
  c.test_count = j.value("test_count", c.test_count);
  c.n_channels = j.value("n_channels", c.n_channels);
  c.holdout_channel = j.value("holdout_channel", c.n_channels - 1);
  c.seed = j.value("seed", c.seed);
  if (j.contains("rel_level_db")) {
    const auto r = j.at("rel_level_db").get<std::vector<double>>();
    CASNET_CHECK(r.size() == 2, "corpus config: rel_level_db must be [low, high]");
    c.rel_level_low_db = r[0];
    c.rel_level_high_db = r[1];
  }
  c.train_speakers = j.value("train_speakers", c.train_speakers);
  c.valid_speakers = j.value("valid_speakers", c.valid_speakers);
  c.test_speakers = j.value("test_speakers", c.test_speakers);
  c.threads = j.value("threads", c.threads);
  return c;
}

namespace {

struct PendingMixture {
  std::string id;
  std::array<SourceRef, 2> sources;
  double rel_level_db = 0.0;
};

std::vector<int> DefaultPool(int first, int count) {
  std::vector<int> ids(count);
  for (int i = 0; i < count; ++i) ids[i] = first + i;
  return ids;
}

CorpusSplit BuildSplit(const CorpusConfig& cfg, const std::vector<ChannelProfile>& profiles,
                       int which, int count, const std::vector<int>& speakers) {
  CorpusSplit split;
  Manifest& m = split.manifest;
  m.split = SplitName(which);
  m.sample_rate = cfg.sample_rate;
  m.holdout_channel = cfg.holdout_channel;
  m.profiles = profiles;
  if (count == 0) return split;
  CASNET_CHECK(speakers.size() >= 2, "corpus: split '", m.split,
               "' needs at least two speakers");

  std::vector<int> channels;
  for (const auto& p : profiles) {
    if (which == 2 || p.channel_id != cfg.holdout_channel) channels.push_back(p.channel_id);
  }

  // Mixture-level draws come from one seeded stream so they do not depend on
  // the thread layout.
  std::vector<PendingMixture> pending(count);
  std::mt19937_64 rng(DeriveSeed(cfg.seed, {0x311C, static_cast<uint64_t>(which)}));
  std::uniform_real_distribution<double> level(cfg.rel_level_low_db, cfg.rel_level_high_db);
  for (int i = 0; i < count; ++i) {
    auto& pm = pending[i];
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s-%04d", m.split.c_str(), i);
    pm.id = buf;
    std::uniform_int_distribution<size_t> pick(0, speakers.size() - 1);
    const size_t a = pick(rng);
    size_t b = pick(rng);
    while (b == a) b = pick(rng);
    pm.sources[0].speaker_id = speakers[a];
    pm.sources[1].speaker_id = speakers[b];
    pm.sources[0].seed = DeriveSeed(cfg.seed, {0x50CE, static_cast<uint64_t>(which),
                                               static_cast<uint64_t>(i), 0});
    pm.sources[1].seed = DeriveSeed(cfg.seed, {0x50CE, static_cast<uint64_t>(which),
                                               static_cast<uint64_t>(i), 1});
    pm.rel_level_db = level(rng);
  }

  const size_t nch = channels.size();
  std::vector<MixtureRecord> records(count * nch);
  split.audio.resize(count * nch);
  auto render = [&](int i) {
    auto& pm = pending[i];
    const Waveform s1 = GenerateSource(pm.sources[0].seed, cfg.duration_s,
                                       MakeSpeaker(pm.sources[0].speaker_id, cfg.seed),
                                       cfg.sample_rate);
    const Waveform s2 = GenerateSource(pm.sources[1].seed, cfg.duration_s,
                                       MakeSpeaker(pm.sources[1].speaker_id, cfg.seed),
                                       cfg.sample_rate);
    const MixResult mix = MixPair(s1, s2, pm.rel_level_db);
    auto sources = pm.sources;
    sources[0].gain_db = 20.0 * std::log10(mix.norm);
    sources[1].gain_db = 20.0 * std::log10(mix.norm * mix.gain2);
    for (size_t k = 0; k < nch; ++k) {
      ChannelProfile p = profiles[channels[k]];
      p.seed = DeriveSeed(p.seed, {static_cast<uint64_t>(which), static_cast<uint64_t>(i)});
      const size_t slot = i * nch + k;
      auto& rec = records[slot];
      rec.mixture_id = pm.id;
      rec.channel_id = p.channel_id;
      rec.sources = sources;
      rec.rel_level_db = pm.rel_level_db;
      rec.num_samples = static_cast<int64_t>(mix.mixture.size());
      split.audio[slot].mixture = ApplyChannel(mix.mixture, p);
      split.audio[slot].target1 = ApplyChannelLinear(mix.target1, p);
      split.audio[slot].target2 = ApplyChannelLinear(mix.target2, p);
    }
  };
  const int workers = std::min(cfg.threads, count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) render(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int i = w; i < count; i += workers) render(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  m.records = std::move(records);
  m.Validate();
  return split;
}

}  // namespace

Corpus BuildCorpus(const CorpusConfig& config) {
  config.Validate();
  CorpusConfig cfg = config;
  // Default pools: 16 / 4 / 4 speakers with disjoint ids.
  if (cfg.train_speakers.empty()) cfg.train_speakers = DefaultPool(0, 16);
  if (cfg.valid_speakers.empty()) cfg.valid_speakers = DefaultPool(100, 4);
  if (cfg.test_speakers.empty()) cfg.test_speakers = DefaultPool(200, 4);
  cfg.Validate();

  Corpus corpus;
  corpus.config = cfg;
  corpus.profiles = DefaultChannelProfiles(cfg.n_channels, cfg.seed);
  corpus.train = BuildSplit(cfg, corpus.profiles, 0, cfg.train_count, cfg.train_speakers);
  corpus.valid = BuildSplit(cfg, corpus.profiles, 1, cfg.valid_count, cfg.valid_speakers);
  corpus.test = BuildSplit(cfg, corpus.profiles, 2, cfg.test_count, cfg.test_speakers);
  return corpus;
}

std::string MixturePath(const std::string& split, int channel_id, const std::string& id) {
  return split + "/" + std::to_string(channel_id) + "/" + id + ".wav";
}

std::string TargetPath(const std::string& split, int which, int channel_id,
                       const std::string& id) {
  return split + "/s" + std::to_string(which) + "/" + std::to_string(channel_id) + "/" + id +
         ".wav";
}

void WriteCorpus(const Corpus& corpus, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  {
    std::ofstream os(dir + "/corpus.json", std::ios::trunc);
    if (!os) throw IoError("cannot write '" + dir + "/corpus.json'");
    os << corpus.config.ToJson().dump(2) << "\n";
  }
  for (const CorpusSplit* split : {&corpus.train, &corpus.valid, &corpus.test}) {
    const Manifest& m = split->manifest;
    for (size_t i = 0; i < m.records.size(); ++i) {
      const auto& r = m.records[i];
      const std::string mix = dir + "/" + MixturePath(m.split, r.channel_id, r.mixture_id);
      const std::string t1 = dir + "/" + TargetPath(m.split, 1, r.channel_id, r.mixture_id);
      const std::string t2 = dir + "/" + TargetPath(m.split, 2, r.channel_id, r.mixture_id);
      for (const auto* p : {&mix, &t1, &t2}) {
        fs::create_directories(fs::path(*p).parent_path(), ec);
        if (ec) throw IoError("cannot create directory for '" + *p + "': " + ec.message());
      }
      SaveWav(mix, split->audio[i].mixture);
      SaveWav(t1, split->audio[i].target1);
      SaveWav(t2, split->audio[i].target2);
    }
    WriteManifest(dir + "/" + m.split + ".jsonl", m);
  }
}

CorpusSplit LoadSplit(const std::string& dir, const std::string& split) {
  return LoadSplitFromManifest(dir + "/" + split + ".jsonl");
}

CorpusSplit LoadSplitFromManifest(const std::string& manifest_path) {
  std::string dir = fs::path(manifest_path).parent_path().string();
  if (dir.empty()) dir = ".";
  CorpusSplit out;
  out.manifest = ReadManifest(manifest_path);
  const Manifest& m = out.manifest;
  out.audio.resize(m.records.size());
  for (size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    auto& a = out.audio[i];
    a.mixture = LoadWav(dir + "/" + MixturePath(m.split, r.channel_id, r.mixture_id));
    a.target1 = LoadWav(dir + "/" + TargetPath(m.split, 1, r.channel_id, r.mixture_id));
    a.target2 = LoadWav(dir + "/" + TargetPath(m.split, 2, r.channel_id, r.mixture_id));
    for (const Waveform* w : {&a.mixture, &a.target1, &a.target2}) {
      if (w->sample_rate != m.sample_rate) {
        throw IoError("'" + r.mixture_id + "' has sample rate " +
                      std::to_string(w->sample_rate) + ", manifest says " +
                      std::to_string(m.sample_rate));
      }
      if (static_cast<int64_t>(w->size()) != r.num_samples) {
        throw IoError("'" + r.mixture_id + "' on channel " + std::to_string(r.channel_id) +
                      " has " + std::to_string(w->size()) + " samples, manifest says " +
                      std::to_string(r.num_samples));
      }
    }
  }
  return out;
}

}  // namespace casnet
