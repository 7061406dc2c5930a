// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/evalkit.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

#include "casnet/errors.h"
#include "casnet/objectives.h"

namespace casnet {

namespace {

std::vector<double> Head(const std::vector<double>& x, int64_t n) {
  if (n <= 0 || n >= static_cast<int64_t>(x.size())) return x;
  return {x.begin(), x.begin() + n};
}

std::string Fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string JoinChannels(const std::vector<int>& ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += "+";
    out += std::to_string(ids[i]);
  }
  return out;
}

std::vector<std::string> SplitFields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<size_t> SelectRecords(const Manifest& m, const std::vector<int>& channels,
                                  int max_items) {
  std::vector<size_t> out;
  for (size_t i = 0; i < m.records.size(); ++i) {
    if (std::find(channels.begin(), channels.end(), m.records[i].channel_id) != channels.end())
      out.push_back(i);
  }
  if (max_items > 0 && static_cast<int>(out.size()) > max_items) out.resize(max_items);
  return out;
}

// Candidate auxiliary records for record `i` under `source`.
std::vector<size_t> AuxCandidates(const Manifest& m, size_t i, EmbeddingSource source) {
  std::vector<size_t> out;
  const auto& rec = m.records[i];
  for (size_t j = 0; j < m.records.size(); ++j) {
    const auto& other = m.records[j];
    if (other.mixture_id == rec.mixture_id) continue;
    const bool same_channel = other.channel_id == rec.channel_id;
    if (source == EmbeddingSource::kOtherMixtureSameChannel && same_channel) out.push_back(j);
    if (source == EmbeddingSource::kOtherChannel && !same_channel) out.push_back(j);
  }
  return out;
}

Tensor Row(const std::vector<double>& x) {
  return Tensor::FromData({1, static_cast<int64_t>(x.size())}, x);
}

// Crops (or zero-pads) an auxiliary waveform to the mixture length so the
// encoder sees comparable context.
std::vector<double> FitLength(const std::vector<double>& x, size_t n) {
  std::vector<double> out(n, 0.0);
  std::copy_n(x.begin(), std::min(n, x.size()), out.begin());
  return out;
}

}  // namespace

nlohmann::json EvalReport::ToJson() const {
  nlohmann::json j = {{"model_id", model_id},
                      {"emb_source", EmbeddingSourceName(source)},
                      {"gamma", gamma},
                      {"seed", seed},
                      {"channels", channels},
                      {"count", rows.size()},
                      {"mean_sisnr", mean_sisnr},
                      {"mean_sisnri", mean_sisnri},
                      {"mixtures", nlohmann::json::array()}};
  for (const auto& r : rows) {
    nlohmann::json row = {{"mixture_id", r.mixture_id}, {"channel_id", r.channel_id},
                          {"perm", r.perm},             {"sisnr", r.sisnr},
                          {"sisnr_mixture", r.sisnr_mixture}, {"sisnri", r.sisnri}};
    if (!r.aux_id.empty()) {
      row["aux_id"] = r.aux_id;
      row["aux_channel"] = r.aux_channel;
    }
    j["mixtures"].push_back(std::move(row));
  }
  return j;
}

MixtureScore ScoreSeparation(const std::vector<std::vector<double>>& estimates,
                             const std::vector<std::vector<double>>& targets,
                             const std::vector<double>& mixture) {
  const size_t n = targets.size();
  CASNET_CHECK(n >= 1 && estimates.size() == n, "ScoreSeparation: ", estimates.size(),
               " estimates for ", n, " targets");
  std::vector<std::vector<double>> pair(n, std::vector<double>(n));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) pair[i][j] = SiSnr(estimates[i], targets[j]);
  MixtureScore s;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& p : Permutations(static_cast<int>(n))) {
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) sum += pair[i][p[i]];
    if (sum / n > best) {
      best = sum / n;
      s.perm = p;
    }
  }
  s.sisnr = best;
  double mix = 0.0;
  for (const auto& t : targets) mix += SiSnr(mixture, t);
  s.sisnr_mixture = mix / n;
  s.sisnri = s.sisnr - s.sisnr_mixture;
  return s;
}

EvalReport Evaluate(CasNet& model, const CorpusSplit& split, const EvalOptions& options) {
  const Manifest& m = split.manifest;
  CASNET_CHECK(split.audio.size() == m.records.size(), "split audio and manifest disagree");
  CASNET_CHECK(options.threads >= 1, "threads must be >= 1");
  CASNET_CHECK(!model.baseline() || options.source == EmbeddingSource::kBypass,
               "baseline checkpoints can only be evaluated with --emb-source no-film");

  std::vector<int> channels = options.channels;
  if (channels.empty()) {
    channels = m.holdout_channel >= 0 ? std::vector<int>{m.holdout_channel} : m.ChannelIds();
  }
  const std::vector<size_t> selected = SelectRecords(m, channels, options.max_items);
  CASNET_CHECK(!selected.empty(), "no records on channel(s) ", JoinChannels(channels),
               " in split '", m.split, "'");
  const int64_t seg =
      options.segment_s > 0.0 ? static_cast<int64_t>(options.segment_s * m.sample_rate) : 0;

  // Resolve every auxiliary choice up front so errors surface before any
  // forward pass and the choice is independent of thread scheduling.
  std::vector<int64_t> aux_of(selected.size(), -1);
  const bool other = options.source == EmbeddingSource::kOtherMixtureSameChannel ||
                     options.source == EmbeddingSource::kOtherChannel;
  for (size_t k = 0; k < selected.size(); ++k) {
    const size_t i = selected[k];
    if (options.source == EmbeddingSource::kSameMixture) aux_of[k] = static_cast<int64_t>(i);
    if (!other) continue;
    const auto candidates = AuxCandidates(m, i, options.source);
    CASNET_CHECK(!candidates.empty(), "embedding source '",
                 EmbeddingSourceName(options.source), "' needs another mixture ",
                 options.source == EmbeddingSource::kOtherChannel ? "on another channel"
                                                                  : "on the same channel",
                 " for '", m.records[i].mixture_id, "' (channel ",
                 m.records[i].channel_id, ")");
    Rng rng(DeriveSeed(options.seed, {0xA0C5, i}));
    std::uniform_int_distribution<size_t> pick(0, candidates.size() - 1);
    aux_of[k] = static_cast<int64_t>(candidates[pick(rng)]);
  }

  model.SetTraining(false);
  EvalReport report;
  report.model_id = options.model_id;
  report.source = options.source;
  report.gamma = options.gamma;
  report.seed = options.seed;
  report.channels = channels;
  report.rows.resize(selected.size());

  const int n_sources = model.config().separator.n_sources;
  auto score = [&](size_t k) {
    NoGradGuard no_grad;
    const size_t i = selected[k];
    const auto& audio = split.audio[i];
    const std::vector<double> mix = Head(audio.mixture.samples, seg);
    const std::vector<std::vector<double>> targets = {Head(audio.target1.samples, seg),
                                                      Head(audio.target2.samples, seg)};
    CASNET_CHECK(static_cast<int>(targets.size()) == n_sources, "model separates ", n_sources,
                 " sources; the corpus has 2");
    Tensor aux;
    if (aux_of[k] >= 0) aux = Row(FitLength(Head(split.audio[aux_of[k]].mixture.samples, seg),
                                            mix.size()));
    Rng rng(DeriveSeed(options.seed, {0x6A55, i}));
    ForwardOutput out = model.Forward(Row(mix), options.source, aux, &rng);
    const auto est = out.estimates.data();
    const size_t len = mix.size();
    std::vector<std::vector<double>> estimates(n_sources);
    for (int s = 0; s < n_sources; ++s)
      estimates[s].assign(est.begin() + s * len, est.begin() + (s + 1) * len);
    MixtureScore row = ScoreSeparation(estimates, targets, mix);
    row.mixture_id = m.records[i].mixture_id;
    row.channel_id = m.records[i].channel_id;
    if (aux_of[k] >= 0) {
      row.aux_id = m.records[aux_of[k]].mixture_id;
      row.aux_channel = m.records[aux_of[k]].channel_id;
    }
    report.rows[k] = std::move(row);
  };

  const int workers = std::min<int>(options.threads, static_cast<int>(selected.size()));
  if (workers <= 1) {
    for (size_t k = 0; k < selected.size(); ++k) score(k);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (size_t k = w; k < selected.size(); k += workers) score(k);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  double sum = 0.0, sum_i = 0.0;
  for (const auto& r : report.rows) {
    sum += r.sisnr;
    sum_i += r.sisnri;
  }
  report.mean_sisnr = sum / report.rows.size();
  report.mean_sisnri = sum_i / report.rows.size();
  return report;
}

double ClassifierAccuracy(CasNet& model, const CorpusSplit& split, double segment_s,
                          int max_items) {
  CASNET_CHECK(!model.baseline(), "baseline models have no channel classifier");
  const Manifest& m = split.manifest;
  const int64_t seg = segment_s > 0.0 ? static_cast<int64_t>(segment_s * m.sample_rate) : 0;
  model.SetTraining(false);
  NoGradGuard no_grad;
  size_t total = m.records.size();
  if (max_items > 0) total = std::min<size_t>(total, max_items);
  CASNET_CHECK(total > 0, "ClassifierAccuracy: empty split");
  size_t correct = 0;
  auto& enc = model.channel_encoder();
  for (size_t i = 0; i < total; ++i) {
    Tensor c = enc.EncodeChannel(model.separator(), Row(Head(split.audio[i].mixture.samples, seg)));
    const Tensor logits_t = enc.Classify(c);
    const auto logits = logits_t.data();
    const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
    if (best == m.records[i].channel_id) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

ReportSummary Summarize(const EvalReport& report) {
  ReportSummary s;
  s.model_id = report.model_id;
  s.emb_source = EmbeddingSourceName(report.source);
  s.gamma = report.gamma;
  s.channels = JoinChannels(report.channels);
  s.count = static_cast<int>(report.rows.size());
  s.mean_sisnr = report.mean_sisnr;
  s.mean_sisnri = report.mean_sisnri;
  return s;
}

static const char kSummaryHeader[] = "model,emb_source,gamma,channels,count,mean_sisnr,mean_sisnri";

std::string SummaryCsv(const std::vector<ReportSummary>& rows) {
  std::string out = std::string(kSummaryHeader) + "\n";
  for (const auto& r : rows) {
    CASNET_CHECK(r.model_id.find_first_of(",\n\"") == std::string::npos,
                 "model id '", r.model_id, "' must not contain commas, quotes or newlines");
    out += r.model_id + "," + r.emb_source + "," + Fixed(r.gamma, 6) + "," + r.channels + "," +
           std::to_string(r.count) + "," + Fixed(r.mean_sisnr, 6) + "," +
           Fixed(r.mean_sisnri, 6) + "\n";
  }
  return out;
}

std::vector<ReportSummary> ParseSummaryCsv(const std::string& text, const std::string& name) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kSummaryHeader) {
    throw IoError(name + ": not a report CSV (expected header '" + kSummaryHeader + "')");
  }
  std::vector<ReportSummary> rows;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = SplitFields(line);
    if (f.size() != 7) {
      throw IoError(name + ":" + std::to_string(line_no) + ": expected 7 fields, found " +
                    std::to_string(f.size()));
    }
    ReportSummary r;
    try {
      r.model_id = f[0];
      r.emb_source = f[1];
      r.gamma = std::stod(f[2]);
      r.channels = f[3];
      r.count = std::stoi(f[4]);
      r.mean_sisnr = std::stod(f[5]);
      r.mean_sisnri = std::stod(f[6]);
    } catch (const std::logic_error&) {
      throw IoError(name + ":" + std::to_string(line_no) + ": malformed number");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void WriteSummaryCsv(const std::string& path, const std::vector<ReportSummary>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << SummaryCsv(rows);
  if (!os) throw IoError("failed writing '" + path + "'");
}

std::vector<ReportSummary> ReadSummaryCsv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ParseSummaryCsv(ss.str(), path);
}

std::string FormatReport(const EvalReport& report) {
  std::ostringstream os;
  os << "model " << report.model_id << "  emb_source " << EmbeddingSourceName(report.source)
     << "  gamma " << report.gamma << "  seed " << report.seed << "  channels "
     << JoinChannels(report.channels) << "\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-16s %4s %10s %10s %10s\n", "mixture", "ch", "si-snr",
                "mixture", "si-snri");
  os << buf;
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%-16s %4d %10.3f %10.3f %10.3f\n", r.mixture_id.c_str(),
                  r.channel_id, r.sisnr, r.sisnr_mixture, r.sisnri);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean over %zu mixtures: si-snr %.3f dB, si-snri %.3f dB\n",
                report.rows.size(), report.mean_sisnr, report.mean_sisnri);
  os << buf;
  return os.str();
}

namespace {

bool Informative(const std::string& source) {
  return source == "same" || source == "other-same-channel" || source == "other-channel";
}

std::vector<std::string> BeatsGaussian(const std::vector<ReportSummary>& rows) {
  // Rows are only compared on the same model, gamma and channel set.
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, double> gaussian;
  for (const auto& r : rows) {
    if (r.emb_source == "gaussian") gaussian[{r.model_id, Fixed(r.gamma, 6), r.channels}] = r.mean_sisnri;
  }
  std::vector<std::string> out;
  for (const auto& r : rows) {
    auto it = gaussian.find({r.model_id, Fixed(r.gamma, 6), r.channels});
    if (!Informative(r.emb_source) || it == gaussian.end()) {
      out.push_back("-");
    } else {
      out.push_back(r.mean_sisnri >= it->second ? "yes" : "no");
    }
  }
  return out;
}

}  // namespace

std::string CompareCsv(const std::vector<ReportSummary>& rows) {
  const auto flags = BeatsGaussian(rows);
  std::string csv = SummaryCsv(rows);
  std::istringstream is(csv);
  std::string line, out;
  std::getline(is, line);
  out = line + ",beats_gaussian\n";
  for (size_t i = 0; std::getline(is, line); ++i) out += line + "," + flags[i] + "\n";
  return out;
}

std::string CompareTable(const std::vector<ReportSummary>& rows) {
  const auto flags = BeatsGaussian(rows);
  std::vector<std::vector<std::string>> cells = {{"model", "emb_source", "gamma", "channels",
                                                  "count", "si-snr", "si-snri",
                                                  "beats_gaussian"}};
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    cells.push_back({r.model_id, r.emb_source, Fixed(r.gamma, 3), r.channels,
                     std::to_string(r.count), Fixed(r.mean_sisnr, 2), Fixed(r.mean_sisnri, 2),
                     flags[i]});
  }
  std::vector<size_t> width(cells[0].size(), 0);
  for (const auto& row : cells)
    for (size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (const auto& row : cells) {
    for (size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size()) out += std::string(width[c] - row[c].size() + 2, ' ');
    }
    out += "\n";
  }
  return out;
}

std::string ExportEmbeddings(CasNet& model, const CorpusSplit& split, double segment_s) {
  CASNET_CHECK(!model.baseline(), "baseline models have no channel encoder");
  const Manifest& m = split.manifest;
  const int64_t seg = segment_s > 0.0 ? static_cast<int64_t>(segment_s * m.sample_rate) : 0;
  model.SetTraining(false);
  NoGradGuard no_grad;
  std::string out;
  auto& enc = model.channel_encoder();
  for (size_t i = 0; i < m.records.size(); ++i) {
    Tensor c = enc.EncodeChannel(model.separator(), Row(Head(split.audio[i].mixture.samples, seg)));
    nlohmann::json j = {{"mixture_id", m.records[i].mixture_id},
                        {"channel_id", m.records[i].channel_id},
                        {"vector", std::vector<double>(c.data().begin(), c.data().end())}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace casnet
