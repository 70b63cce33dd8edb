#pragma once

// Exact brute-force cosine search. Queries and corpus are tiled into blocks;
// each query keeps a bounded heap of its best k candidates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lmrank/detail/parallel.hpp"
#include "lmrank/embedding_store.hpp"
#include "lmrank/error.hpp"

namespace lmrank {

struct Neighbor {
  std::size_t index = 0;  // corpus row
  float score = 0.0f;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Total order used everywhere: higher score first, then lower corpus index.
constexpr bool ranks_before(const Neighbor& a, const Neighbor& b) noexcept {
  return a.score > b.score || (a.score == b.score && a.index < b.index);
}

/// Per-query neighbor lists sorted by ranks_before. A list is shorter than k
/// only when the corpus has fewer than k rows.
struct TopKResult {
  std::size_t k = 0;
  std::vector<std::vector<Neighbor>> lists;

  std::size_t size() const noexcept { return lists.size(); }
  const std::vector<Neighbor>& operator[](std::size_t query) const { return lists[query]; }

  friend bool operator==(const TopKResult&, const TopKResult&) = default;
};

struct SearchOptions {
  std::size_t block_size = 256;  // rows per query tile and per corpus tile
  std::size_t threads = 1;       // 0 = hardware concurrency
};

namespace detail {

// Dot products accumulate in float over short runs of dimensions, and the
// runs are reduced in double.
inline constexpr std::size_t kDotRun = 32;

inline double dot_product(std::span<const float> a, std::span<const float> b) noexcept {
  double total = 0.0;
  const std::size_t d = a.size();
  for (std::size_t start = 0; start < d; start += kDotRun) {
    const std::size_t stop = std::min(d, start + kDotRun);
    float partial = 0.0f;
    for (std::size_t k = start; k < stop; ++k) partial += a[k] * b[k];
    total += partial;
  }
  return total;
}

inline std::vector<double> inverse_norms(const EmbeddingSet& set, const char* what) {
  std::vector<double> inv(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto row = set.row(i);
    double sq = 0.0;
    for (float v : row) sq += static_cast<double>(v) * v;
    if (sq == 0.0) {
      throw ValidationError(std::string(what) + " row " + std::to_string(i) + " ('" + set.id(i) +
                            "') has zero norm");
    }
    inv[i] = 1.0 / std::sqrt(sq);
  }
  return inv;
}

class BoundedHeap {
 public:
  explicit BoundedHeap(std::size_t k) : k_(k) { items_.reserve(k); }

  void offer(Neighbor n) {
    if (items_.size() < k_) {
      items_.push_back(n);
      std::push_heap(items_.begin(), items_.end(), ranks_before);
    } else if (ranks_before(n, items_.front())) {
      std::pop_heap(items_.begin(), items_.end(), ranks_before);
      items_.back() = n;
      std::push_heap(items_.begin(), items_.end(), ranks_before);
    }
  }

  std::vector<Neighbor> take_sorted() && {
    std::sort(items_.begin(), items_.end(), ranks_before);
    return std::move(items_);
  }

 private:
  std::size_t k_;
  std::vector<Neighbor> items_;  // heap whose front is the worst kept candidate
};

inline void check_search_inputs(const EmbeddingSet& queries, const EmbeddingSet& corpus, std::size_t k) {
  if (k < 1) throw ValidationError("top-k search needs k >= 1");
  if (queries.dim() != corpus.dim()) {
    throw ValidationError("dimension mismatch: queries have dim " + std::to_string(queries.dim()) +
                          ", corpus has dim " + std::to_string(corpus.dim()));
  }
}

/// Top-k of cos(q_i, c_j) - penalty[j] per query (penalty empty = zero).
inline TopKResult blocked_topk(const EmbeddingSet& queries, const EmbeddingSet& corpus, std::size_t k,
                               std::span<const float> penalty, const SearchOptions& options) {
  check_search_inputs(queries, corpus, k);
  if (!penalty.empty() && penalty.size() != corpus.size()) {
    throw ValidationError("penalty vector has length " + std::to_string(penalty.size()) + ", corpus has " +
                          std::to_string(corpus.size()) + " rows");
  }
  const auto q_inv = inverse_norms(queries, "query");
  const auto c_inv = inverse_norms(corpus, "corpus");
  const std::size_t block = std::max<std::size_t>(1, options.block_size);

  TopKResult result{k, std::vector<std::vector<Neighbor>>(queries.size())};
  const std::size_t n_blocks = (queries.size() + block - 1) / block;
  parallel_for(n_blocks, resolve_threads(options.threads), [&](std::size_t first, std::size_t last) {
    std::vector<float> tile;
    for (std::size_t qb = first; qb < last; ++qb) {
      const std::size_t q_begin = qb * block;
      const std::size_t q_end = std::min(queries.size(), q_begin + block);
      std::vector<BoundedHeap> heaps(q_end - q_begin, BoundedHeap(k));
      for (std::size_t c_begin = 0; c_begin < corpus.size(); c_begin += block) {
        const std::size_t c_end = std::min(corpus.size(), c_begin + block);
        const std::size_t width = c_end - c_begin;
        tile.resize((q_end - q_begin) * width);
        for (std::size_t qi = q_begin; qi < q_end; ++qi) {
          auto q = queries.row(qi);
          for (std::size_t cj = c_begin; cj < c_end; ++cj) {
            double s = dot_product(q, corpus.row(cj)) * q_inv[qi] * c_inv[cj];
            if (!penalty.empty()) s -= penalty[cj];
            tile[(qi - q_begin) * width + (cj - c_begin)] = static_cast<float>(s);
          }
        }
        for (std::size_t qi = q_begin; qi < q_end; ++qi) {
          auto& heap = heaps[qi - q_begin];
          const float* row = tile.data() + (qi - q_begin) * width;
          for (std::size_t j = 0; j < width; ++j) heap.offer({c_begin + j, row[j]});
        }
      }
      for (std::size_t qi = q_begin; qi < q_end; ++qi) {
        result.lists[qi] = std::move(heaps[qi - q_begin]).take_sorted();
      }
    }
  });
  return result;
}

}  // namespace detail

/// Exact top-k cosine neighbors of every query row within the corpus.
/// An empty corpus yields empty lists.
inline TopKResult cosine_topk(const EmbeddingSet& queries, const EmbeddingSet& corpus, std::size_t k,
                              const SearchOptions& options = {}) {
  return detail::blocked_topk(queries, corpus, k, {}, options);
}

/// Mean of each row's min(k, |pool|) highest cosine similarities to pool.
inline std::vector<float> mean_topk_similarity(const EmbeddingSet& set, const EmbeddingSet& pool, std::size_t k,
                                               const SearchOptions& options = {}) {
  detail::check_search_inputs(set, pool, k);
  if (pool.empty()) throw ValidationError("mean_topk_similarity: pool is empty");
  const auto top = cosine_topk(set, pool, k, options);
  std::vector<float> out(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    double sum = 0.0;
    for (const auto& n : top[i]) sum += n.score;
    out[i] = static_cast<float>(sum / static_cast<double>(top[i].size()));
  }
  return out;
}

}  // namespace lmrank
