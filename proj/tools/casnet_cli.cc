// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// casnet: corpus generation, training, evaluation, embedding export,
// gradient self-checks and report comparison.
//
// Exit codes: 0 success, 1 invalid input or failed check, 2 I/O failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "casnet/casnet.h"
#include "casnet/corpus.h"
#include "casnet/errors.h"
#include "casnet/evalkit.h"
#include "casnet/gradsuite.h"
#include "casnet/trainer.h"

namespace {

using casnet::IoError;
using nlohmann::json;

json ReadJsonFile(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw IoError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw IoError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  std::string config;
  std::string out;
  uint64_t seed = 0;
  int train = -1, valid = -1, test = -1;
  int channels = -1, holdout = -1, threads = 1;
  double duration = -1.0;
};

int RunGenCorpus(const GenCorpusArgs& a, CLI::App& cmd) {
  casnet::CorpusConfig cfg;
  if (!a.config.empty()) cfg = casnet::CorpusConfig::FromJson(ReadJsonFile(a.config));
  if (cmd.count("--seed") || a.config.empty()) cfg.seed = a.seed;
  if (a.train >= 0) cfg.train_count = a.train;
  if (a.valid >= 0) cfg.valid_count = a.valid;
  if (a.test >= 0) cfg.test_count = a.test;
  if (a.channels >= 0) {
    cfg.n_channels = a.channels;
    if (a.holdout < 0) cfg.holdout_channel = a.channels - 1;
  }
  if (a.holdout >= 0) cfg.holdout_channel = a.holdout;
  if (a.duration > 0.0) cfg.duration_s = a.duration;
  cfg.threads = a.threads;
  cfg.Validate();
  std::cout << "seed " << cfg.seed << "\n";
  std::cout << "config " << cfg.ToJson().dump() << "\n";
  const casnet::Corpus corpus = casnet::BuildCorpus(cfg);
  casnet::WriteCorpus(corpus, a.out);
  std::cout << "wrote " << corpus.train.manifest.records.size() << " train, "
            << corpus.valid.manifest.records.size() << " valid, "
            << corpus.test.manifest.records.size() << " test records to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, corpus, out, metrics, steps_log;
  std::string strategy = "guide-same";
  double gamma = 0.0;
  bool baseline = false;
  int extra_blocks = 0;
  int epochs = 0, batch_size = 0, max_steps = -1, steps_per_epoch = -1, valid_items = -1;
  double segment = 0.0, lr = 0.0, valid_segment = -1.0;
  uint64_t seed = 0;
};

int RunTrain(const TrainArgs& a, CLI::App& cmd) {
  casnet::TrainConfig cfg;
  if (!a.config.empty()) cfg = casnet::TrainConfig::FromJson(ReadJsonFile(a.config));
  if (cmd.count("--strategy") || a.config.empty()) cfg.strategy = casnet::ParseStrategy(a.strategy);
  if (cmd.count("--gamma")) cfg.gamma = a.gamma;
  if (cmd.count("--seed") || a.config.empty()) cfg.seed = a.seed;
  if (a.baseline) cfg.baseline = true;
  if (cmd.count("--extra-blocks")) cfg.extra_blocks = a.extra_blocks;
  if (a.epochs > 0) cfg.epochs = a.epochs;
  if (a.batch_size > 0) cfg.batch_size = a.batch_size;
  if (a.segment > 0.0) cfg.segment_s = a.segment;
  if (a.lr > 0.0) cfg.lr_init = a.lr;
  if (a.max_steps >= 0) cfg.max_steps = a.max_steps;
  if (a.steps_per_epoch >= 0) cfg.steps_per_epoch = a.steps_per_epoch;
  if (a.valid_items >= 0) cfg.valid_items = a.valid_items;
  if (a.valid_segment >= 0.0) cfg.valid_segment_s = a.valid_segment;
  cfg.model.baseline = cfg.baseline;
  cfg.Validate();

  const casnet::CorpusSplit train = casnet::LoadSplit(a.corpus, "train");
  const casnet::CorpusSplit valid = casnet::LoadSplit(a.corpus, "valid");
  std::cout << "seed " << cfg.seed << "\n";
  std::cout << "config " << cfg.ToJson().dump() << "\n";

  casnet::FitCallbacks cb;
  cb.on_epoch = [](const casnet::EpochRecord& e) {
    std::printf("epoch %d  l_rc %.4f  l_ci %.4f  l_total %.4f  val_sisnri %.3f  lr %.3g\n",
                e.epoch, e.l_rc, e.l_ci, e.l_total, e.val_sisnri, e.lr);
    std::fflush(stdout);
  };
  casnet::FitResult fit = cfg.baseline ? casnet::TrainBaseline(cfg, train, valid, cb)
                                       : casnet::Fit(cfg, train, valid, cb);
  fit.model->Save(a.out, fit.Meta(cfg));
  const std::string metrics = a.metrics.empty() ? a.out + ".metrics.csv" : a.metrics;
  WriteText(metrics, casnet::MetricsCsv(fit.epochs));
  if (!a.steps_log.empty()) WriteText(a.steps_log, casnet::StepsCsv(fit.steps));
  std::printf("best epoch %d  val_sisnri %.3f  steps %d  params %lld\n", fit.best_epoch,
              fit.best_val_sisnri, fit.steps_run,
              static_cast<long long>(fit.model->params().CountTrainable()));
  std::cout << "wrote " << a.out << " and " << metrics << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, manifest, out, json_out, model_id;
  std::string source = "same";
  std::vector<int> channels;
  uint64_t seed = 0;
  int threads = 1, max_items = 0;
  double segment = 0.0;
};

int RunEval(const EvalArgs& a) {
  auto model = casnet::CasNet::Load(a.checkpoint);
  const casnet::CorpusSplit split = casnet::LoadSplitFromManifest(a.manifest);
  casnet::EvalOptions opts;
  opts.source = casnet::ParseEmbeddingSource(a.source);
  opts.seed = a.seed;
  opts.threads = a.threads;
  opts.channels = a.channels;
  opts.max_items = a.max_items;
  opts.segment_s = a.segment;
  opts.model_id = a.model_id.empty() ? a.checkpoint : a.model_id;
  const casnet::Checkpoint ckpt = casnet::LoadCheckpoint(a.checkpoint);
  if (ckpt.meta.contains("train")) opts.gamma = ckpt.meta["train"].value("gamma", 0.0);
  std::cout << "seed " << opts.seed << "\n";
  std::cout << "config "
            << json({{"checkpoint", a.checkpoint}, {"manifest", a.manifest},
                     {"emb_source", a.source}, {"threads", a.threads},
                     {"channels", a.channels}, {"max_items", a.max_items},
                     {"segment_s", a.segment}, {"model_id", opts.model_id}})
                   .dump()
            << "\n";
  const casnet::EvalReport report = casnet::Evaluate(*model, split, opts);
  const std::string csv = casnet::SummaryCsv({casnet::Summarize(report)});
  std::cout << casnet::FormatReport(report) << csv;
  if (!a.out.empty()) WriteText(a.out, csv);
  if (!a.json_out.empty()) WriteText(a.json_out, report.ToJson().dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------

struct EmbedArgs {
  std::string checkpoint, manifest, out;
  double segment = 0.0;
};

int RunEmbed(const EmbedArgs& a) {
  auto model = casnet::CasNet::Load(a.checkpoint);
  const casnet::CorpusSplit split = casnet::LoadSplitFromManifest(a.manifest);
  std::cout << "seed 0\n";
  std::cout << "config "
            << json({{"checkpoint", a.checkpoint}, {"manifest", a.manifest},
                     {"segment_s", a.segment}}).dump()
            << "\n";
  WriteText(a.out, casnet::ExportEmbeddings(*model, split, a.segment));
  std::cout << "wrote " << split.manifest.records.size() << " embeddings to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int RunGradCheck(uint64_t seed) {
  std::cout << "seed " << seed << "\n";
  int failures = 0;
  for (const auto& c : casnet::RunGradSuite(seed)) {
    std::printf("%-4s %-32s max_rel_err %.3e  tol %.0e  coords %d\n", c.passed() ? "ok" : "FAIL",
                c.name.c_str(), c.result.max_rel_error, c.tolerance,
                c.result.coordinates_checked);
    if (!c.passed()) {
      std::printf("     worst %s\n", c.result.worst.c_str());
      ++failures;
    }
  }
  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------

int RunCompare(const std::vector<std::string>& reports, const std::string& out) {
  std::vector<casnet::ReportSummary> rows;
  for (const auto& path : reports) {
    const auto part = casnet::ReadSummaryCsv(path);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (rows.empty()) throw casnet::ValidationError("compare: the reports contain no rows");
  std::cout << "seed 0\n";
  std::cout << casnet::CompareTable(rows);
  const std::string csv = casnet::CompareCsv(rows);
  std::cout << csv;
  if (!out.empty()) WriteText(out, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"casnet: channel-aware speech separation toolkit"};
  app.require_subcommand(1);

  GenCorpusArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-corpus", "Generate the synthetic multi-channel corpus");
  gen_cmd->add_option("--config", gen.config, "Generator config JSON (flags override it)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Corpus seed (default 0)");
  gen_cmd->add_option("--train", gen.train, "Train mixtures (default 200)");
  gen_cmd->add_option("--valid", gen.valid, "Validation mixtures (default 40)");
  gen_cmd->add_option("--test", gen.test, "Test mixtures (default 40)");
  gen_cmd->add_option("--channels", gen.channels, "Channel profiles, 3..6 (default 4)");
  gen_cmd->add_option("--holdout", gen.holdout, "Hold-out channel id (default: last)");
  gen_cmd->add_option("--duration", gen.duration, "Mixture length in seconds (default 3)");
  gen_cmd->add_option("--threads", gen.threads, "Worker threads (output is identical)");

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a CasNet or baseline model");
  train_cmd->add_option("--config", tr.config, "Train config JSON (flags override it)");
  train_cmd->add_option("--corpus", tr.corpus, "Corpus directory from gen-corpus")->required();
  train_cmd->add_option("--out", tr.out, "Output checkpoint path")->required();
  train_cmd->add_option("--metrics", tr.metrics, "Per-epoch CSV (default <out>.metrics.csv)");
  train_cmd->add_option("--steps-log", tr.steps_log, "Optional per-step CSV");
  train_cmd->add_option("--strategy", tr.strategy, "guide-same | guide-diff | perturb")
      ->check(CLI::IsMember({"guide-same", "guide-diff", "perturb"}));
  train_cmd->add_option("--gamma", tr.gamma, "Weight of the channel identification loss");
  train_cmd->add_flag("--baseline", tr.baseline, "Train the separator alone (no FiLM, no L_ci)");
  train_cmd->add_option("--extra-blocks", tr.extra_blocks, "Additional separation blocks");
  train_cmd->add_option("--epochs", tr.epochs, "Epochs (default 30)");
  train_cmd->add_option("--batch-size", tr.batch_size, "Mixtures per step (default 4)");
  train_cmd->add_option("--segment", tr.segment, "Training crop in seconds (default 3)");
  train_cmd->add_option("--lr", tr.lr, "Initial learning rate (default 1.5e-4)");
  train_cmd->add_option("--max-steps", tr.max_steps, "Stop after this many steps (0 = off)");
  train_cmd->add_option("--steps-per-epoch", tr.steps_per_epoch,
                        "Steps per epoch (0 = one pass over the train records)");
  train_cmd->add_option("--valid-items", tr.valid_items, "Validation records (0 = all)");
  train_cmd->add_option("--valid-segment", tr.valid_segment,
                        "Validation crop in seconds (0 = full length)");
  train_cmd->add_option("--seed", tr.seed, "Seed for init and sampling (default 0)");

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint path")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "Split manifest, e.g. corpus/test.jsonl")
      ->required();
  eval_cmd->add_option("--emb-source", ev.source,
                       "same | other-same-channel | other-channel | all-ones | gaussian | no-film")
      ->check(CLI::IsMember({"same", "other-same-channel", "other-channel", "all-ones",
                             "gaussian", "no-film"}));
  eval_cmd->add_option("--channels", ev.channels,
                       "Channels to score (default: the hold-out channel)");
  eval_cmd->add_option("--max-items", ev.max_items, "Score at most this many records");
  eval_cmd->add_option("--segment", ev.segment, "Score only the first N seconds (0 = all)");
  eval_cmd->add_option("--threads", ev.threads, "Worker threads (report is identical)");
  eval_cmd->add_option("--model-id", ev.model_id, "Row label (default: checkpoint path)");
  eval_cmd->add_option("--out", ev.out, "Write the summary CSV here");
  eval_cmd->add_option("--json", ev.json_out, "Write the per-mixture JSON report here");
  eval_cmd->add_option("--seed", ev.seed, "Seed for auxiliary choice and noise (default 0)");

  EmbedArgs em;
  CLI::App* embed_cmd = app.add_subcommand("embed", "Export channel embeddings as JSON Lines");
  embed_cmd->add_option("--checkpoint", em.checkpoint, "Checkpoint path")->required();
  embed_cmd->add_option("--manifest", em.manifest, "Split manifest")->required();
  embed_cmd->add_option("--out", em.out, "Output JSONL path")->required();
  embed_cmd->add_option("--segment", em.segment, "Use only the first N seconds (0 = all)");

  uint64_t grad_seed = 0;
  CLI::App* grad_cmd = app.add_subcommand("grad-check", "Run the finite-difference suite");
  grad_cmd->add_option("--seed", grad_seed, "Seed for probes and inputs (default 0)");

  std::vector<std::string> reports;
  std::string compare_out;
  CLI::App* cmp_cmd = app.add_subcommand("compare", "Merge report CSVs into one table");
  cmp_cmd->add_option("reports", reports, "Report CSVs written by eval --out")->required();
  cmp_cmd->add_option("--out", compare_out, "Write the merged CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen_cmd->parsed()) return RunGenCorpus(gen, *gen_cmd);
    if (train_cmd->parsed()) return RunTrain(tr, *train_cmd);
    if (eval_cmd->parsed()) return RunEval(ev);
    if (embed_cmd->parsed()) return RunEmbed(em);
    if (grad_cmd->parsed()) return RunGradCheck(grad_seed);
    if (cmp_cmd->parsed()) return RunCompare(reports, compare_out);
  } catch (const casnet::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const casnet::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const casnet::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
