// lmrank: command-line driver for the landmark ranking pipeline.
//
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 internal error.

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lmrank/lmrank.hpp"

namespace {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kValidation = 1, kIo = 2, kInternal = 3 };

// Flags shared by rank / rerank / pipeline. Values only override the config
// file when given explicitly on the command line.
struct RankFlags {
  std::optional<std::string> config_file;
  std::vector<std::string> models;
  std::optional<std::string> train_labels;
  std::optional<std::string> gt;
  std::optional<std::string> out;
  std::optional<std::string> report;
  std::optional<std::size_t> k_neighbors;
  std::optional<std::size_t> k_train_penalty;
  std::optional<std::size_t> k_test_penalty;
  bool no_c_penalty = false;
  std::optional<std::size_t> n_quantiles;
  std::optional<std::string> ensemble;
  std::optional<std::string> transform_mode;
  std::optional<std::string> pooled_penalty;
  bool filter_train = false;
  bool compare = false;
  std::optional<std::size_t> threads;
};

void add_rank_flags(CLI::App* cmd, RankFlags& f) {
  cmd->add_option("--config", f.config_file, "JSON pipeline config; explicit flags override it");
  cmd->add_option("--model", f.models, "Model directory (repeatable)");
  cmd->add_option("--train-labels", f.train_labels, "Train label CSV (default: <first model>/train_labels.csv)");
  cmd->add_option("--gt", f.gt, "Test ground truth CSV; enables GAP scoring");
  cmd->add_option("--out", f.out, "Predictions CSV to write");
  cmd->add_option("--report", f.report, "GAP report JSON to write (requires --gt)");
  cmd->add_option("--k-neighbors", f.k_neighbors, "Neighbors aggregated per test image (default 3)");
  cmd->add_option("--k-train-penalty", f.k_train_penalty, "Pool neighbors averaged for B (default 5)");
  cmd->add_option("--k-test-penalty", f.k_test_penalty, "Pool neighbors averaged for C (default 10)");
  cmd->add_flag("--no-c-penalty", f.no_c_penalty, "Do not subtract C from confidences");
  cmd->add_option("--n-quantiles", f.n_quantiles, "Quantiles of the test-fitted transform (default 1000)");
  cmd->add_option("--ensemble", f.ensemble, "Ensembling scheme")->check(CLI::IsMember({"concat", "topk-sum"}));
  cmd->add_option("--transform-mode", f.transform_mode, "Roles the transform is applied to")
      ->check(CLI::IsMember({"all_roles", "train_and_nonlandmark_only"}));
  cmd->add_option("--pooled-penalty", f.pooled_penalty, "C pooling for topk-sum")
      ->check(CLI::IsMember({"mean", "off"}));
  cmd->add_flag("--filter-train-to-gt", f.filter_train, "Drop train classes absent from --gt");
  cmd->add_flag("--compare", f.compare, "Also score the unpenalized baseline (requires --gt)");
  cmd->add_option("--threads", f.threads, "Worker threads (0 = all cores, default 1)");
}

lmrank::PipelineConfig build_config(const RankFlags& f, bool penalize) {
  lmrank::PipelineConfig c;
  if (f.config_file) c = lmrank::load_pipeline_config(*f.config_file);
  if (!f.models.empty()) c.model_dirs.assign(f.models.begin(), f.models.end());
  if (f.train_labels) c.train_labels = *f.train_labels;
  if (f.gt) c.ground_truth = *f.gt;
  if (f.out) c.predictions_out = *f.out;
  if (f.report) c.report_out = *f.report;
  if (f.k_neighbors) c.params.k_neighbors = *f.k_neighbors;
  if (f.k_train_penalty) c.params.k_train_penalty = *f.k_train_penalty;
  if (f.k_test_penalty) c.params.k_test_penalty = *f.k_test_penalty;
  if (f.no_c_penalty) c.params.apply_c = false;
  if (f.n_quantiles) c.n_quantiles = *f.n_quantiles;
  if (f.ensemble) c.ensemble_mode = *f.ensemble == "concat" ? lmrank::EnsembleMode::concat : lmrank::EnsembleMode::topk_sum;
  if (f.transform_mode) {
    c.transform_mode = *f.transform_mode == "all_roles" ? lmrank::TransformMode::all_roles
                                                        : lmrank::TransformMode::train_and_nonlandmark_only;
  }
  if (f.pooled_penalty) {
    c.pooled_penalty = *f.pooled_penalty == "mean" ? lmrank::PooledPenalty::mean : lmrank::PooledPenalty::off;
  }
  if (f.filter_train) c.filter_train_to_gt = true;
  if (f.compare) c.compare_baseline = true;
  if (f.threads) c.threads = *f.threads;
  c.penalize = penalize;
  return c;
}

int run_ranking(const RankFlags& f, bool penalize, bool require_gt) {
  auto config = build_config(f, penalize);
  if (require_gt && !config.ground_truth && !config.model_dirs.empty()) {
    const auto fallback = config.model_dirs.front() / lmrank::layout::kTestGroundTruth;
    if (fs::exists(fallback)) config.ground_truth = fallback;
  }
  if (!config.predictions_out && !config.ground_truth) {
    throw lmrank::ValidationError("nothing to do: pass --out and/or --gt");
  }
  const auto result = lmrank::run_pipeline(config);
  if (result.report) std::cout << result.report_json().dump(2) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Landmark recognition ranking with non-landmark re-ranking"};
  app.require_subcommand(1);

  // ingest
  std::string ingest_in, ingest_out, ingest_format = "auto";
  auto* ingest = app.add_subcommand("ingest", "Validate an embedding file and write it in the binary format");
  ingest->add_option("--in", ingest_in, "Input embeddings (.csv or binary)")->required();
  ingest->add_option("--out", ingest_out, "Binary output file")->required();
  ingest->add_option("--format", ingest_format, "Input format")->check(CLI::IsMember({"auto", "csv", "binary"}));

  // synth
  lmrank::SynthConfig synth_cfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic model directory");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_cfg.seed, "PRNG seed")->capture_default_str();
  synth->add_option("--dim", synth_cfg.dim, "Embedding dimension")->capture_default_str();
  synth->add_option("--classes", synth_cfg.n_classes, "Landmark classes")->capture_default_str();
  synth->add_option("--train-per-class", synth_cfg.train_per_class, "Train images per class")->capture_default_str();
  synth->add_option("--test-landmarks", synth_cfg.n_test_landmark, "Landmark test images")->capture_default_str();
  synth->add_option("--test-distractors", synth_cfg.n_test_distractor, "Distractor test images")->capture_default_str();
  synth->add_option("--pool", synth_cfg.n_nonlandmark_pool, "Non-landmark pool size")->capture_default_str();
  synth->add_option("--class-spread", synth_cfg.class_spread, "Noise scale")->capture_default_str();
  synth->add_option("--distractor-overlap", synth_cfg.distractor_overlap, "Distractor/landmark blend in [0,1]")
      ->capture_default_str();
  synth->add_option("--distractor-centroids", synth_cfg.n_distractor_centroids, "Distractor clusters")
      ->capture_default_str();

  RankFlags rank_flags, rerank_flags, pipeline_flags;
  auto* rank = app.add_subcommand("rank", "Baseline cosine kNN ranking without non-landmark penalties");
  add_rank_flags(rank, rank_flags);
  auto* rerank = app.add_subcommand("rerank", "Ranking with non-landmark penalization");
  add_rank_flags(rerank, rerank_flags);
  auto* pipeline = app.add_subcommand("pipeline", "Re-rank and score (ground truth defaults to <model>/test_gt.csv)");
  add_rank_flags(pipeline, pipeline_flags);

  // eval
  std::string eval_predictions, eval_gt;
  std::optional<std::string> eval_out;
  auto* eval = app.add_subcommand("eval", "Score a predictions CSV with GAP");
  eval->add_option("--predictions", eval_predictions, "Predictions CSV")->required();
  eval->add_option("--gt", eval_gt, "Ground truth label CSV")->required();
  eval->add_option("--out", eval_out, "Report JSON to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*ingest) {
      const auto format = ingest_format == "auto" ? lmrank::format_from_path(ingest_in)
                          : ingest_format == "csv" ? lmrank::EmbeddingFormat::csv
                                                   : lmrank::EmbeddingFormat::binary;
      const auto set = lmrank::load_embeddings(ingest_in, format);
      lmrank::save_embeddings(set, ingest_out);
      std::cout << "wrote " << set.size() << " x " << set.dim() << " embeddings to " << ingest_out << '\n';
      return kOk;
    }
    if (*synth) {
      lmrank::save_synth(lmrank::generate(synth_cfg), synth_out);
      std::cout << "wrote synthetic model directory " << synth_out << '\n';
      return kOk;
    }
    if (*rank) return run_ranking(rank_flags, false, false);
    if (*rerank) return run_ranking(rerank_flags, true, false);
    if (*pipeline) return run_ranking(pipeline_flags, true, true);
    if (*eval) {
      const auto predictions = lmrank::load_predictions(eval_predictions);
      const auto report = lmrank::global_average_precision(predictions, lmrank::load_labels(eval_gt));
      const auto text = lmrank::to_json(report).dump(2);
      if (eval_out) {
        lmrank::detail::write_atomically(*eval_out, [&](std::ostream& out) { out << text << '\n'; });
      }
      std::cout << text << '\n';
      return kOk;
    }
  } catch (const lmrank::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const lmrank::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}
