// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Hold-out channel evaluation under every embedding source, SI-SNR/SI-SNRi
// reports and side-by-side comparison tables.

#ifndef CASNET_EVALKIT_H_
#define CASNET_EVALKIT_H_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "casnet/casnet.h"
#include "casnet/corpus.h"

namespace casnet {

struct EvalOptions {
  EmbeddingSource source = EmbeddingSource::kSameMixture;
  uint64_t seed = 0;
  int threads = 1;
  // Channels to score. Empty means the manifest's hold-out channel, or every
  // channel when the manifest has none.
  std::vector<int> channels;
  // Score only the first `max_items` selected records (0 = all).
  int max_items = 0;
  // Use only the first `segment_s` seconds of every waveform (0 = all).
  double segment_s = 0.0;
  std::string model_id = "model";
  double gamma = 0.0;  // carried into the report
};

struct MixtureScore {
  std::string mixture_id;
  int channel_id = 0;
  std::string aux_id;       // empty when no auxiliary mixture was used
  int aux_channel = -1;
  std::vector<int> perm;    // estimate i -> target perm[i]
  double sisnr = 0.0;       // mean over sources, PIT-optimal assignment
  double sisnr_mixture = 0.0;
  double sisnri = 0.0;
};

struct EvalReport {
  std::string model_id;
  EmbeddingSource source = EmbeddingSource::kSameMixture;
  double gamma = 0.0;
  uint64_t seed = 0;
  std::vector<int> channels;
  std::vector<MixtureScore> rows;  // manifest order
  double mean_sisnr = 0.0;
  double mean_sisnri = 0.0;

  nlohmann::json ToJson() const;
};

// PIT-optimal SI-SNR and SI-SNRi of estimates [n][L] against targets.
MixtureScore ScoreSeparation(const std::vector<std::vector<double>>& estimates,
                             const std::vector<std::vector<double>>& targets,
                             const std::vector<double>& mixture);

// Pure forward pass over the selected records of `split`. Per-record
// randomness (auxiliary choice, Gaussian draws) comes from seeds derived
// from (seed, record index), so any thread count gives the same report.
EvalReport Evaluate(CasNet& model, const CorpusSplit& split, const EvalOptions& options);

// Fraction of records whose channel the classifier predicts from the record's
// own mixture. `segment_s` = 0 uses the full waveform.
double ClassifierAccuracy(CasNet& model, const CorpusSplit& split, double segment_s = 0.0,
                          int max_items = 0);

// One summary row of a report; the unit of comparison tables.
struct ReportSummary {
  std::string model_id;
  std::string emb_source;
  double gamma = 0.0;
  std::string channels;  // channel ids joined with '+'
  int count = 0;
  double mean_sisnr = 0.0;
  double mean_sisnri = 0.0;
};

ReportSummary Summarize(const EvalReport& report);

// CSV with header model,emb_source,gamma,channels,count,mean_sisnr,mean_sisnri.
std::string SummaryCsv(const std::vector<ReportSummary>& rows);
std::vector<ReportSummary> ParseSummaryCsv(const std::string& text, const std::string& name);
void WriteSummaryCsv(const std::string& path, const std::vector<ReportSummary>& rows);
std::vector<ReportSummary> ReadSummaryCsv(const std::string& path);

// Human-readable report: header, per-mixture lines, means.
std::string FormatReport(const EvalReport& report);

// Comparison table. Adds beats_gaussian per row: "yes"/"no" for rows with an
// encoder-derived embedding whose (model, gamma, channels) group has a
// gaussian row, "-" otherwise.
std::string CompareCsv(const std::vector<ReportSummary>& rows);
std::string CompareTable(const std::vector<ReportSummary>& rows);

// Channel embedding of every record's own mixture, as JSON Lines
// {mixture_id, channel_id, vector}.
std::string ExportEmbeddings(CasNet& model, const CorpusSplit& split, double segment_s = 0.0);

}  // namespace casnet

#endif  // CASNET_EVALKIT_H_
