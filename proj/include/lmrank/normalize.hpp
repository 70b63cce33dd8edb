#pragma once

// L2 row normalization and the per-dimension quantile-to-normal transform.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "lmrank/detail/binary_io.hpp"
#include "lmrank/detail/parallel.hpp"
#include "lmrank/embedding_store.hpp"
#include "lmrank/error.hpp"

namespace lmrank {

/// Scales every row to unit Euclidean norm. Zero rows are rejected.
inline EmbeddingSet l2_normalize(const EmbeddingSet& set) {
  std::vector<float> out(set.values().begin(), set.values().end());
  const std::size_t d = set.dim();
  for (std::size_t i = 0; i < set.size(); ++i) {
    double sq = 0.0;
    for (float v : set.row(i)) sq += static_cast<double>(v) * v;
    if (sq == 0.0) {
      throw ValidationError("cannot l2-normalize zero vector at row " + std::to_string(i) + " ('" +
                            set.id(i) + "')");
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t k = 0; k < d; ++k) {
      out[i * d + k] = static_cast<float>(set.row(i)[k] * inv);
    }
  }
  return EmbeddingSet(set.ids(), d, std::move(out), set.role());
}

/// Inverse of the standard normal CDF. Acklam's rational approximation
/// followed by one Halley step against erfc; absolute error well below 1e-8
/// on (0, 1).
inline double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw ValidationError("inverse_normal_cdf: probability must lie in (0, 1)");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x = 0.0;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley refinement. Work in the tail where erfc is accurate.
  const double cdf = x < 0 ? 0.5 * std::erfc(-x / std::numbers::sqrt2)
                           : 1.0 - 0.5 * std::erfc(x / std::numbers::sqrt2);
  const double e = cdf - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// Fitted per-dimension empirical quantiles. references(k) holds
/// n_quantiles ascending values for dimension k, taken at the evenly spaced
/// probability levels j / (n_quantiles - 1).
class QuantileTransform {
 public:
  /// CDF positions are clamped to [kClamp, 1 - kClamp] before the normal
  /// quantile is taken, bounding outputs to about +-5.2.
  static constexpr double kClamp = 1e-7;

  QuantileTransform(std::size_t dim, std::size_t n_quantiles, std::vector<float> references)
      : dim_(dim), n_quantiles_(n_quantiles), references_(std::move(references)) {
    if (dim_ < 1) throw ValidationError("quantile transform dim must be >= 1");
    if (n_quantiles_ < 2) throw ValidationError("quantile transform needs n_quantiles >= 2");
    if (references_.size() != dim_ * n_quantiles_) {
      throw ValidationError("quantile transform holds " + std::to_string(references_.size()) +
                            " references, expected " + std::to_string(dim_ * n_quantiles_));
    }
    for (std::size_t k = 0; k < dim_; ++k) {
      auto ref = this->references(k);
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (!std::isfinite(ref[j])) {
          throw ValidationError("non-finite quantile reference in dimension " + std::to_string(k));
        }
        if (j > 0 && ref[j] < ref[j - 1]) {
          throw ValidationError("quantile references decrease in dimension " + std::to_string(k));
        }
      }
    }
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t n_quantiles() const noexcept { return n_quantiles_; }
  std::span<const float> references() const noexcept { return references_; }
  std::span<const float> references(std::size_t k) const noexcept {
    return std::span<const float>(references_).subspan(k * n_quantiles_, n_quantiles_);
  }

  /// Empirical CDF position of value in dimension k, in [0, 1].
  double cdf(std::size_t k, float value) const {
    auto ref = references(k);
    value = std::clamp(value, ref.front(), ref.back());
    const auto lo = static_cast<std::size_t>(std::lower_bound(ref.begin(), ref.end(), value) - ref.begin());
    const auto hi_end = static_cast<std::size_t>(std::upper_bound(ref.begin(), ref.end(), value) - ref.begin());
    double pos = 0.0;
    if (hi_end > lo) {
      // Exact hits: centre of the tied run, so a constant column maps to 0.5.
      pos = 0.5 * static_cast<double>(lo + hi_end - 1);
    } else {
      const std::size_t below = lo - 1;
      const double span = static_cast<double>(ref[lo]) - ref[below];
      pos = static_cast<double>(below) + (static_cast<double>(value) - ref[below]) / span;
    }
    return pos / static_cast<double>(n_quantiles_ - 1);
  }

  double transform_value(std::size_t k, float value) const {
    const double u = std::clamp(cdf(k, value), kClamp, 1.0 - kClamp);
    return inverse_normal_cdf(u);
  }

  friend bool operator==(const QuantileTransform&, const QuantileTransform&) = default;

 private:
  std::size_t dim_;
  std::size_t n_quantiles_;
  std::vector<float> references_;
};

/// min(n_reference, 1000) when requested is 0, otherwise min(requested, n_reference).
inline std::size_t effective_quantiles(std::size_t requested, std::size_t n_reference) {
  const std::size_t want = requested == 0 ? 1000 : requested;
  return std::min(want, n_reference);
}

inline QuantileTransform fit_quantile_transform(const EmbeddingSet& reference, std::size_t n_quantiles) {
  const std::size_t n = reference.size();
  if (n < 2) throw ValidationError("quantile transform needs at least 2 reference rows, got " + std::to_string(n));
  if (n_quantiles < 2) throw ValidationError("n_quantiles must be >= 2");
  const std::size_t d = reference.dim();
  std::vector<float> refs(d * n_quantiles);
  std::vector<double> column(n);
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t i = 0; i < n; ++i) column[i] = reference.row(i)[k];
    std::sort(column.begin(), column.end());
    for (std::size_t j = 0; j < n_quantiles; ++j) {
      const double level = static_cast<double>(j) / static_cast<double>(n_quantiles - 1);
      const double pos = level * static_cast<double>(n - 1);
      const auto lo = std::min(static_cast<std::size_t>(pos), n - 1);
      const std::size_t hi = std::min(lo + 1, n - 1);
      const double frac = pos - static_cast<double>(lo);
      float value = static_cast<float>(column[lo] + frac * (column[hi] - column[lo]));
      // Rounding may nudge an interpolant one ulp below its predecessor.
      if (j > 0) value = std::max(value, refs[k * n_quantiles + j - 1]);
      refs[k * n_quantiles + j] = value;
    }
  }
  return QuantileTransform(d, n_quantiles, std::move(refs));
}

inline EmbeddingSet apply_quantile_transform(const QuantileTransform& qt, const EmbeddingSet& set,
                                             std::size_t threads = 1) {
  if (set.dim() != qt.dim()) {
    throw ValidationError("quantile transform fitted on dim " + std::to_string(qt.dim()) +
                          ", applied to dim " + std::to_string(set.dim()));
  }
  const std::size_t d = set.dim();
  std::vector<float> out(set.size() * d);
  detail::parallel_for(set.size(), detail::resolve_threads(threads), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto row = set.row(i);
      for (std::size_t k = 0; k < d; ++k) {
        out[i * d + k] = static_cast<float>(qt.transform_value(k, row[k]));
      }
    }
  });
  return EmbeddingSet(set.ids(), d, std::move(out), set.role());
}

/// Which roles the test-fitted transform is applied to.
enum class TransformMode { all_roles, train_and_nonlandmark_only };

/// Fits the transform on the test role and applies it per mode. Returns the
/// transformed sets; the fitted transform is written to *fitted if given.
inline RoleSets quantile_normalize_roles(const RoleSets& sets, std::size_t n_quantiles, TransformMode mode,
                                         std::size_t threads = 1, QuantileTransform* fitted = nullptr) {
  auto qt = fit_quantile_transform(sets.test, effective_quantiles(n_quantiles, sets.test.size()));
  RoleSets out{mode == TransformMode::all_roles ? apply_quantile_transform(qt, sets.test, threads) : sets.test,
               apply_quantile_transform(qt, sets.train, threads),
               apply_quantile_transform(qt, sets.nonlandmark, threads)};
  if (fitted) *fitted = std::move(qt);
  return out;
}

inline void save_quantile_transform(const QuantileTransform& qt, const std::filesystem::path& path) {
  auto out = detail::open_output(path, true);
  out.write("QTX1", 4);
  detail::write_le(out, static_cast<std::uint32_t>(qt.dim()));
  detail::write_le(out, static_cast<std::uint32_t>(qt.n_quantiles()));
  detail::write_floats_le(out, qt.references());
  detail::finish_output(out, path);
}

inline QuantileTransform load_quantile_transform(const std::filesystem::path& path) {
  auto in = detail::open_input(path, true);
  const auto name = path.string();
  detail::expect_magic(in, "QTX1", name);
  const auto d = detail::read_le<std::uint32_t>(in, "dimension");
  const auto q = detail::read_le<std::uint32_t>(in, "quantile count");
  if (d == 0 || q < 2) throw ValidationError(name + ": bad header, d=" + std::to_string(d) + " q=" + std::to_string(q));
  const auto here = in.tellg();
  in.seekg(0, std::ios::end);
  const auto remaining = static_cast<std::uint64_t>(in.tellg() - here);
  in.seekg(here);
  if (remaining != std::uint64_t{d} * q * sizeof(float)) {
    throw ValidationError(name + ": payload size does not match header");
  }
  std::vector<float> refs(std::size_t{d} * q);
  detail::read_floats_le(in, refs, "quantile references");
  try {
    return QuantileTransform(d, q, std::move(refs));
  } catch (const ValidationError& e) {
    throw ValidationError(name + ": " + e.what());
  }
}

}  // namespace lmrank
