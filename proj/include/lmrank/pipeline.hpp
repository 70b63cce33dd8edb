#pragma once

// End-to-end flow over one or more model directories:
//   load -> l2-normalize per model -> fit quantile transform on test ->
//   apply per transform mode -> ensemble -> (re)rank -> score -> write.
// Every failure is reported with the name of the stage it happened in; the
// predictions file is only written once every stage has succeeded.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmrank/embedding_store.hpp"
#include "lmrank/ensemble.hpp"
#include "lmrank/error.hpp"
#include "lmrank/metrics.hpp"
#include "lmrank/normalize.hpp"
#include "lmrank/rerank.hpp"

namespace lmrank {

enum class EnsembleMode { concat, topk_sum };

struct PipelineConfig {
  std::vector<std::filesystem::path> model_dirs;
  std::optional<std::filesystem::path> train_labels;  // default: <first model>/train_labels.csv
  std::optional<std::filesystem::path> ground_truth;  // enables scoring
  std::optional<std::filesystem::path> predictions_out;
  std::optional<std::filesystem::path> report_out;

  RerankParams params;
  bool penalize = true;  // false: plain cosine kNN aggregation, no B and no C
  std::size_t n_quantiles = 1000;
  TransformMode transform_mode = TransformMode::all_roles;
  EnsembleMode ensemble_mode = EnsembleMode::concat;
  PooledPenalty pooled_penalty = PooledPenalty::mean;
  bool filter_train_to_gt = false;  // drop train classes absent from the ground truth
  bool compare_baseline = false;    // also score the unpenalized run
  std::size_t threads = 1;

  void validate() const {
    if (model_dirs.empty()) throw ValidationError("pipeline: at least one model directory is required");
    params.validate();
    if (n_quantiles < 2) throw ValidationError("pipeline: n_quantiles must be >= 2");
    if (filter_train_to_gt && !ground_truth) {
      throw ValidationError("pipeline: filtering train classes requires ground truth");
    }
    if (compare_baseline && !ground_truth) throw ValidationError("pipeline: comparison requires ground truth");
  }
};

struct PipelineResult {
  std::vector<RankedPrediction> predictions;
  std::optional<GapReport> report;
  std::optional<GapReport> baseline_report;

  nlohmann::json report_json() const {
    nlohmann::json j = nlohmann::json::object();
    if (report) j = to_json(*report);
    if (baseline_report) {
      j["baseline"] = to_json(*baseline_report);
      j["delta"] = report->gap - baseline_report->gap;
    }
    return j;
  }
};

namespace detail {

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("[") + stage + "] " + e.what());
  } catch (const IoError& e) {
    throw IoError(std::string("[") + stage + "] " + e.what());
  }
}

inline std::string enum_error(const std::string& key, const std::string& value) {
  return "config: unknown value '" + value + "' for '" + key + "'";
}

// Writes through a sibling temporary and renames, so readers never observe a
// half-written file.
inline void write_atomically(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    body(out);
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw IoError("write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
  }
}

}  // namespace detail

inline RoleSets load_model_dir(const std::filesystem::path& dir) {
  return RoleSets{load_embeddings(dir / layout::kTest, EmbeddingFormat::binary).with_role(Role::test),
                  load_embeddings(dir / layout::kTrain, EmbeddingFormat::binary).with_role(Role::train),
                  load_embeddings(dir / layout::kNonlandmark, EmbeddingFormat::binary).with_role(Role::nonlandmark)};
}

/// Computes predictions (and reports when ground truth is configured). Writes nothing.
inline PipelineResult compute_pipeline(const PipelineConfig& config) {
  config.validate();
  const SearchOptions search{256, config.threads};

  ModelBundle bundle;
  LabelTable train_labels;
  std::optional<LabelTable> ground_truth;
  detail::run_stage("load", [&] {
    for (const auto& dir : config.model_dirs) bundle.models.push_back(load_model_dir(dir));
    train_labels = load_labels(config.train_labels.value_or(config.model_dirs.front() / layout::kTrainLabels));
    if (config.ground_truth) ground_truth = load_labels(*config.ground_truth);
    bundle.validate();
  });

  if (config.filter_train_to_gt) {
    detail::run_stage("filter", [&] {
      LabelTable kept;
      for (auto& m : bundle.models) {
        auto [train, labels] = filter_train_to_test_classes(m.train, train_labels, *ground_truth);
        m.train = std::move(train);
        kept = std::move(labels);
      }
      train_labels = std::move(kept);
    });
  }

  auto predict = [&](bool penalize) {
    if (config.ensemble_mode == EnsembleMode::concat) {
      const auto sets = detail::run_stage("normalize", [&] {
        return concat_ensemble(bundle, config.n_quantiles, config.transform_mode, config.threads);
      });
      return detail::run_stage("rerank", [&] {
        return penalize ? rerank(sets.test, sets.train, train_labels, sets.nonlandmark, config.params, search)
                        : baseline_rank(sets.test, sets.train, train_labels, config.params.k_neighbors, search);
      });
    }
    auto prepared = detail::run_stage("normalize", [&] {
      return preprocess_models(bundle, config.n_quantiles, config.transform_mode, config.threads);
    });
    if (!penalize) {
      for (auto& m : prepared.models) m.nonlandmark = EmbeddingSet::make_empty(m.test.dim(), Role::nonlandmark);
    }
    return detail::run_stage("rerank", [&] {
      return topk_sum_ensemble(prepared, train_labels, config.params, config.pooled_penalty, search);
    });
  };

  PipelineResult result;
  result.predictions = predict(config.penalize);
  if (ground_truth) {
    detail::run_stage("score", [&] {
      result.report = global_average_precision(result.predictions, *ground_truth);
      if (config.compare_baseline) {
        result.baseline_report = global_average_precision(predict(false), *ground_truth);
      }
    });
  }
  return result;
}

/// compute_pipeline followed by writing the configured outputs.
inline PipelineResult run_pipeline(const PipelineConfig& config) {
  auto result = compute_pipeline(config);
  detail::run_stage("write", [&] {
    if (config.predictions_out) {
      detail::write_atomically(*config.predictions_out,
                               [&](std::ostream& out) { write_predictions(out, result.predictions); });
    }
    if (config.report_out && result.report) {
      detail::write_atomically(*config.report_out,
                               [&](std::ostream& out) { out << result.report_json().dump(2) << '\n'; });
    }
  });
  return result;
}

/// Reads a declarative JSON config. Relative paths resolve against base_dir.
///
///   {
///     "models": ["dir", ...],            // required
///     "train_labels": "file", "ground_truth": "file", "out": "file", "report": "file",
///     "k_neighbors": 3, "k_train_penalty": 5, "k_test_penalty": 10, "c_penalty": true,
///     "penalize": true, "n_quantiles": 1000,
///     "transform_mode": "all_roles" | "train_and_nonlandmark_only",
///     "ensemble": "concat" | "topk-sum", "pooled_penalty": "mean" | "off",
///     "filter_train_to_gt": false, "compare_baseline": false, "threads": 1
///   }
inline PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  static const std::vector<std::string> known = {
      "models", "train_labels", "ground_truth", "out", "report", "k_neighbors", "k_train_penalty",
      "k_test_penalty", "c_penalty", "penalize", "n_quantiles", "transform_mode", "ensemble",
      "pooled_penalty", "filter_train_to_gt", "compare_baseline", "threads"};
  if (!j.is_object()) throw ValidationError("config: top level must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ValidationError("config: unknown key '" + key + "'");
    }
  }
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  PipelineConfig c;
  try {
    if (j.contains("models")) {
      for (const auto& m : j.at("models")) c.model_dirs.push_back(resolve(m.get<std::string>()));
    }
    if (j.contains("train_labels")) c.train_labels = resolve(j.at("train_labels").get<std::string>());
    if (j.contains("ground_truth")) c.ground_truth = resolve(j.at("ground_truth").get<std::string>());
    if (j.contains("out")) c.predictions_out = resolve(j.at("out").get<std::string>());
    if (j.contains("report")) c.report_out = resolve(j.at("report").get<std::string>());
    c.params.k_neighbors = j.value("k_neighbors", c.params.k_neighbors);
    c.params.k_train_penalty = j.value("k_train_penalty", c.params.k_train_penalty);
    c.params.k_test_penalty = j.value("k_test_penalty", c.params.k_test_penalty);
    c.params.apply_c = j.value("c_penalty", c.params.apply_c);
    c.penalize = j.value("penalize", c.penalize);
    c.n_quantiles = j.value("n_quantiles", c.n_quantiles);
    c.filter_train_to_gt = j.value("filter_train_to_gt", c.filter_train_to_gt);
    c.compare_baseline = j.value("compare_baseline", c.compare_baseline);
    c.threads = j.value("threads", c.threads);
    if (j.contains("transform_mode")) {
      const auto v = j.at("transform_mode").get<std::string>();
      if (v == "all_roles") c.transform_mode = TransformMode::all_roles;
      else if (v == "train_and_nonlandmark_only") c.transform_mode = TransformMode::train_and_nonlandmark_only;
      else throw ValidationError(detail::enum_error("transform_mode", v));
    }
    if (j.contains("ensemble")) {
      const auto v = j.at("ensemble").get<std::string>();
      if (v == "concat") c.ensemble_mode = EnsembleMode::concat;
      else if (v == "topk-sum") c.ensemble_mode = EnsembleMode::topk_sum;
      else throw ValidationError(detail::enum_error("ensemble", v));
    }
    if (j.contains("pooled_penalty")) {
      const auto v = j.at("pooled_penalty").get<std::string>();
      if (v == "mean") c.pooled_penalty = PooledPenalty::mean;
      else if (v == "off") c.pooled_penalty = PooledPenalty::off;
      else throw ValidationError(detail::enum_error("pooled_penalty", v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  auto in = detail::open_input(path, false);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

}  // namespace lmrank
