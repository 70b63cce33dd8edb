#pragma once

// Global Average Precision (micro-AP) over one-prediction-per-image lists.
//
// All predictions are sorted by confidence (descending; ties by ascending
// image id) and
//     GAP = (1 / M) * sum_i P(i) * rel(i)
// where M is the number of test images that carry a ground-truth landmark,
// P(i) the precision over the first i predictions, and rel(i) = 1 iff the
// i-th prediction names its image's ground-truth landmark. Predictions for
// images without ground truth (non-landmarks) are always wrong. Landmark
// images with no prediction still count in M.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmrank/embedding_store.hpp"
#include "lmrank/error.hpp"
#include "lmrank/rerank.hpp"
#include "lmrank/similarity.hpp"

namespace lmrank {

struct GapReport {
  double gap = 0.0;
  std::size_t m_landmarks = 0;
  std::size_t n_predictions = 0;
  std::vector<bool> correct_at_rank;  // filled only on request
};

inline GapReport global_average_precision(std::span<const RankedPrediction> predictions, const LabelTable& ground_truth,
                                          bool keep_ranks = false) {
  if (ground_truth.empty()) throw ValidationError("GAP is undefined without landmark ground truth (M = 0)");
  {
    std::unordered_set<std::string_view> seen;
    seen.reserve(predictions.size());
    for (const auto& p : predictions) {
      if (!seen.insert(p.image_id).second) {
        throw ValidationError("more than one prediction for image '" + p.image_id + "'");
      }
    }
  }
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = predictions[a];
    const auto& pb = predictions[b];
    if (pa.confidence != pb.confidence) return pa.confidence > pb.confidence;
    return pa.image_id < pb.image_id;
  });

  GapReport report;
  report.m_landmarks = ground_truth.size();
  report.n_predictions = predictions.size();
  if (keep_ranks) report.correct_at_rank.reserve(order.size());
  double sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& p = predictions[order[rank]];
    const auto truth = ground_truth.find(p.image_id);
    const bool hit = truth && *truth == p.landmark_id;
    if (hit) {
      ++correct;
      sum += static_cast<double>(correct) / static_cast<double>(rank + 1);
    }
    if (keep_ranks) report.correct_at_rank.push_back(hit);
  }
  report.gap = sum / static_cast<double>(report.m_landmarks);
  return report;
}

inline nlohmann::json to_json(const GapReport& report) {
  return {{"gap", report.gap}, {"m_landmarks", report.m_landmarks}, {"n_predictions", report.n_predictions}};
}

struct PipelineComparison {
  GapReport baseline;  // cosine kNN aggregation, no penalties
  GapReport reranked;  // full non-landmark penalization
  double delta() const noexcept { return reranked.gap - baseline.gap; }
};

inline nlohmann::json to_json(const PipelineComparison& cmp) {
  return {{"baseline", to_json(cmp.baseline)}, {"rerank", to_json(cmp.reranked)}, {"delta", cmp.delta()}};
}

/// Scores the unpenalized baseline and the full re-ranker on identical inputs.
inline PipelineComparison compare_pipelines(const EmbeddingSet& test, const EmbeddingSet& train,
                                            const LabelTable& train_labels, const EmbeddingSet& nonlandmark,
                                            const LabelTable& ground_truth, const RerankParams& params,
                                            const SearchOptions& options = {}) {
  const auto base = baseline_rank(test, train, train_labels, params.k_neighbors, options);
  const auto full = rerank(test, train, train_labels, nonlandmark, params, options);
  return {global_average_precision(base, ground_truth), global_average_precision(full, ground_truth)};
}

}  // namespace lmrank
