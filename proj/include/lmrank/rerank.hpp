#pragma once

// Non-landmark penalized re-ranking.
//
// For every test image x_i:
//   B_j   = mean of the k_train_penalty best similarities of train row j to the non-landmark pool
//   A'_ij = cos(x_i, y_j) - B_j
//   take the k_neighbors best train rows of A'_i, sum their scores per landmark label,
//   predict the label with the largest sum and use that sum as confidence
//   C_i   = mean of the k_test_penalty best similarities of x_i to the pool
//   confidence -= C_i (when apply_c)
//
// Inputs are expected to be normalized/transformed already.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lmrank/embedding_store.hpp"
#include "lmrank/error.hpp"
#include "lmrank/similarity.hpp"

namespace lmrank {

struct RerankParams {
  std::size_t k_neighbors = 3;
  std::size_t k_train_penalty = 5;
  std::size_t k_test_penalty = 10;
  bool apply_c = true;

  void validate() const {
    if (k_neighbors < 1 || k_train_penalty < 1 || k_test_penalty < 1) {
      throw ValidationError("rerank parameters: every k must be >= 1");
    }
  }
};

struct RankedPrediction {
  std::string image_id;
  LandmarkId landmark_id = 0;
  double confidence = 0.0;

  friend bool operator==(const RankedPrediction&, const RankedPrediction&) = default;
};

struct LabelScore {
  LandmarkId landmark_id = 0;
  double score = 0.0;

  friend bool operator==(const LabelScore&, const LabelScore&) = default;
};

/// A neighbor's vote: its landmark and its (possibly penalized) score.
struct LabelVote {
  LandmarkId landmark_id = 0;
  float score = 0.0f;
};

/// Sums votes per landmark and returns the best label; equal sums go to the
/// smaller landmark id. Negative scores are summed like any other.
inline LabelScore argmax_label(std::span<const LabelVote> votes) {
  if (votes.empty()) throw ValidationError("cannot aggregate an empty neighbor list");
  std::vector<LabelScore> sums;
  for (const auto& v : votes) {
    auto it = std::find_if(sums.begin(), sums.end(), [&](const LabelScore& s) { return s.landmark_id == v.landmark_id; });
    if (it == sums.end()) {
      sums.push_back({v.landmark_id, static_cast<double>(v.score)});
    } else {
      it->score += v.score;
    }
  }
  LabelScore best = sums.front();
  for (const auto& s : sums) {
    if (s.score > best.score || (s.score == best.score && s.landmark_id < best.landmark_id)) best = s;
  }
  return best;
}

/// Landmark id of every train row, in row order.
inline std::vector<LandmarkId> resolve_labels(const std::vector<std::string>& train_ids, const LabelTable& labels) {
  std::vector<LandmarkId> out;
  out.reserve(train_ids.size());
  for (std::size_t j = 0; j < train_ids.size(); ++j) {
    auto l = labels.find(train_ids[j]);
    if (!l) throw ValidationError("train image '" + train_ids[j] + "' (row " + std::to_string(j) + ") has no label");
    out.push_back(*l);
  }
  return out;
}

inline std::vector<LabelVote> to_votes(std::span<const Neighbor> neighbors, std::span<const LandmarkId> row_labels) {
  std::vector<LabelVote> votes;
  votes.reserve(neighbors.size());
  for (const auto& n : neighbors) {
    if (n.index >= row_labels.size()) throw ValidationError("neighbor index out of range of train labels");
    votes.push_back({row_labels[n.index], n.score});
  }
  return votes;
}

inline LabelScore aggregate_label(std::span<const Neighbor> neighbors, const LabelTable& train_labels,
                                  const std::vector<std::string>& train_ids) {
  std::vector<LabelVote> votes;
  votes.reserve(neighbors.size());
  for (const auto& n : neighbors) {
    if (n.index >= train_ids.size()) throw ValidationError("neighbor index out of range of train ids");
    auto l = train_labels.find(train_ids[n.index]);
    if (!l) throw ValidationError("neighbor '" + train_ids[n.index] + "' has no label");
    votes.push_back({*l, n.score});
  }
  return argmax_label(votes);
}

/// B: per-train-row mean of the k best similarities to the non-landmark pool.
inline std::vector<float> train_penalty(const EmbeddingSet& train, const EmbeddingSet& nonlandmark, std::size_t k,
                                        const SearchOptions& options = {}) {
  return mean_topk_similarity(train, nonlandmark, k, options);
}

/// Top-k over A'_ij = cos(test_i, train_j) - penalty_j.
inline TopKResult penalized_topk(const EmbeddingSet& test, const EmbeddingSet& train, std::span<const float> penalty,
                                 std::size_t k, const SearchOptions& options = {}) {
  if (penalty.size() != train.size()) {
    throw ValidationError("penalty vector has length " + std::to_string(penalty.size()) + ", train has " +
                          std::to_string(train.size()) + " rows");
  }
  return detail::blocked_topk(test, train, k, penalty, options);
}

/// Intermediate products of one re-ranking pass, exposed for ensembling and
/// diagnostics.
struct RerankTrace {
  std::vector<float> train_penalty;  // B, zeros when the pool is empty
  TopKResult neighbors;              // top-k of A'
  std::vector<float> test_penalty;   // C, zeros when the pool is empty or apply_c is off
};

inline RerankTrace rerank_trace(const EmbeddingSet& test, const EmbeddingSet& train, const EmbeddingSet& nonlandmark,
                                const RerankParams& params, const SearchOptions& options = {}) {
  params.validate();
  if (train.empty()) throw ValidationError("rerank: train set is empty");
  if (test.dim() != train.dim() || nonlandmark.dim() != train.dim()) {
    throw ValidationError("rerank: test/train/non-landmark dims differ (" + std::to_string(test.dim()) + "/" +
                          std::to_string(train.dim()) + "/" + std::to_string(nonlandmark.dim()) + ")");
  }
  RerankTrace trace;
  trace.train_penalty = nonlandmark.empty() ? std::vector<float>(train.size(), 0.0f)
                                            : train_penalty(train, nonlandmark, params.k_train_penalty, options);
  trace.neighbors = penalized_topk(test, train, trace.train_penalty, params.k_neighbors, options);
  trace.test_penalty = (nonlandmark.empty() || !params.apply_c)
                           ? std::vector<float>(test.size(), 0.0f)
                           : mean_topk_similarity(test, nonlandmark, params.k_test_penalty, options);
  return trace;
}

/// One prediction per test row, in test row order.
inline std::vector<RankedPrediction> rerank(const EmbeddingSet& test, const EmbeddingSet& train,
                                            const LabelTable& train_labels, const EmbeddingSet& nonlandmark,
                                            const RerankParams& params, const SearchOptions& options = {}) {
  const auto trace = rerank_trace(test, train, nonlandmark, params, options);
  const auto labels = resolve_labels(train.ids(), train_labels);
  std::vector<RankedPrediction> out;
  out.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto best = argmax_label(to_votes(trace.neighbors[i], labels));
    out.push_back({test.id(i), best.landmark_id, best.score - static_cast<double>(trace.test_penalty[i])});
  }
  return out;
}

/// Plain cosine kNN label aggregation without any non-landmark penalty.
inline std::vector<RankedPrediction> baseline_rank(const EmbeddingSet& test, const EmbeddingSet& train,
                                                   const LabelTable& train_labels, std::size_t k_neighbors,
                                                   const SearchOptions& options = {}) {
  RerankParams params;
  params.k_neighbors = k_neighbors;
  return rerank(test, train, train_labels, EmbeddingSet::make_empty(train.dim()), params, options);
}

// Predictions CSV: `image_id,landmark_id,confidence`, confidence printed with
// 9 significant digits. No header.

inline std::string format_confidence(double confidence) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), confidence, std::chars_format::general, 9);
  return std::string(buf, ptr);
}

inline void write_predictions(std::ostream& out, std::span<const RankedPrediction> predictions) {
  for (const auto& p : predictions) {
    out << p.image_id << ',' << p.landmark_id << ',' << format_confidence(p.confidence) << '\n';
  }
}

inline void save_predictions(std::span<const RankedPrediction> predictions, const std::filesystem::path& path) {
  auto out = detail::open_output(path, false);
  write_predictions(out, predictions);
  detail::finish_output(out, path);
}

inline std::vector<RankedPrediction> load_predictions(const std::filesystem::path& path) {
  auto in = detail::open_input(path, false);
  std::vector<RankedPrediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    auto fields = detail::split_csv(line);
    if (fields.size() != 3) throw ValidationError(where + ": expected 'image_id,landmark_id,confidence'");
    RankedPrediction p;
    p.image_id = std::string(fields[0]);
    if (p.image_id.empty()) throw ValidationError(where + ": empty image id");
    auto [lp, lec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), p.landmark_id);
    if (lec != std::errc{} || lp != fields[1].data() + fields[1].size() || p.landmark_id < 0) {
      throw ValidationError(where + ": bad landmark id '" + std::string(fields[1]) + "'");
    }
    auto [cp, cec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), p.confidence);
    if (cec != std::errc{} || cp != fields[2].data() + fields[2].size() || !std::isfinite(p.confidence)) {
      throw ValidationError(where + ": bad confidence '" + std::string(fields[2]) + "'");
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace lmrank
