#pragma once

// Multi-model blending. Two schemes:
//  * concatenation: l2-normalize each model, concatenate features, then one
//    test-fitted quantile transform over the concatenated dimensions;
//  * top-k sum: run the penalized search per model, pool every model's top-k
//    votes per test image and sum them per landmark.

#include <cstddef>
#include <string>
#include <vector>

#include "lmrank/embedding_store.hpp"
#include "lmrank/error.hpp"
#include "lmrank/normalize.hpp"
#include "lmrank/rerank.hpp"
#include "lmrank/similarity.hpp"

namespace lmrank {

/// Same images embedded by several models. Dims may differ across models but
/// not across one model's roles.
struct ModelBundle {
  std::vector<RoleSets> models;

  void validate() const {
    if (models.empty()) throw ValidationError("model bundle is empty");
    const auto& ref = models.front();
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto& sets = models[m];
      const auto tag = "model " + std::to_string(m);
      if (sets.train.dim() != sets.test.dim() || sets.nonlandmark.dim() != sets.test.dim()) {
        throw ValidationError(tag + ": test/train/non-landmark dims differ");
      }
      if (sets.test.ids() != ref.test.ids()) throw ValidationError(tag + ": test ids differ from model 0");
      if (sets.train.ids() != ref.train.ids()) throw ValidationError(tag + ": train ids differ from model 0");
      if (sets.nonlandmark.ids() != ref.nonlandmark.ids()) {
        throw ValidationError(tag + ": non-landmark ids differ from model 0");
      }
    }
  }
};

namespace detail {

inline EmbeddingSet concat_features(const std::vector<EmbeddingSet>& parts) {
  const auto& first = parts.front();
  std::size_t dim = 0;
  for (const auto& p : parts) dim += p.dim();
  std::vector<float> values;
  values.reserve(first.size() * dim);
  for (std::size_t i = 0; i < first.size(); ++i) {
    for (const auto& p : parts) {
      auto row = p.row(i);
      values.insert(values.end(), row.begin(), row.end());
    }
  }
  return EmbeddingSet(first.ids(), dim, std::move(values), first.role());
}

}  // namespace detail

/// Concatenation ensemble. The concatenated rows are not re-normalized.
inline RoleSets concat_ensemble(const ModelBundle& bundle, std::size_t n_quantiles,
                                TransformMode mode = TransformMode::all_roles, std::size_t threads = 1) {
  bundle.validate();
  std::vector<EmbeddingSet> test, train, pool;
  for (const auto& m : bundle.models) {
    test.push_back(l2_normalize(m.test));
    train.push_back(l2_normalize(m.train));
    pool.push_back(l2_normalize(m.nonlandmark));
  }
  RoleSets joined{detail::concat_features(test), detail::concat_features(train), detail::concat_features(pool)};
  return quantile_normalize_roles(joined, n_quantiles, mode, threads);
}

/// Per-model l2 normalization and test-fitted quantile transform, without
/// concatenation. Input for topk_sum_ensemble.
inline ModelBundle preprocess_models(const ModelBundle& bundle, std::size_t n_quantiles,
                                     TransformMode mode = TransformMode::all_roles, std::size_t threads = 1) {
  bundle.validate();
  ModelBundle out;
  for (const auto& m : bundle.models) {
    RoleSets unit{l2_normalize(m.test), l2_normalize(m.train), l2_normalize(m.nonlandmark)};
    out.models.push_back(quantile_normalize_roles(unit, n_quantiles, mode, threads));
  }
  return out;
}

/// How per-model C penalties combine in the top-k sum scheme.
enum class PooledPenalty { off, mean };

struct PooledVotes {
  std::vector<std::vector<LabelVote>> votes;  // per test image, model-major
  std::vector<double> test_penalty;           // pooled C per test image
};

inline PooledVotes pool_topk_votes(const ModelBundle& bundle, const LabelTable& train_labels,
                                   const RerankParams& params, PooledPenalty pooled = PooledPenalty::mean,
                                   const SearchOptions& options = {}) {
  bundle.validate();
  const auto& ref = bundle.models.front();
  const auto labels = resolve_labels(ref.train.ids(), train_labels);
  const bool with_c = params.apply_c && pooled == PooledPenalty::mean;
  RerankParams per_model = params;
  per_model.apply_c = with_c;

  PooledVotes out{std::vector<std::vector<LabelVote>>(ref.test.size()), std::vector<double>(ref.test.size(), 0.0)};
  for (const auto& m : bundle.models) {
    const auto trace = rerank_trace(m.test, m.train, m.nonlandmark, per_model, options);
    for (std::size_t i = 0; i < ref.test.size(); ++i) {
      auto votes = to_votes(trace.neighbors[i], labels);
      out.votes[i].insert(out.votes[i].end(), votes.begin(), votes.end());
      out.test_penalty[i] += trace.test_penalty[i];
    }
  }
  for (auto& c : out.test_penalty) c /= static_cast<double>(bundle.models.size());
  return out;
}

/// Top-k sum ensemble over an already preprocessed bundle.
inline std::vector<RankedPrediction> topk_sum_ensemble(const ModelBundle& bundle, const LabelTable& train_labels,
                                                       const RerankParams& params,
                                                       PooledPenalty pooled = PooledPenalty::mean,
                                                       const SearchOptions& options = {}) {
  const auto pool = pool_topk_votes(bundle, train_labels, params, pooled, options);
  const auto& test = bundle.models.front().test;
  std::vector<RankedPrediction> out;
  out.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto best = argmax_label(pool.votes[i]);
    out.push_back({test.id(i), best.landmark_id, best.score - pool.test_penalty[i]});
  }
  return out;
}

}  // namespace lmrank
