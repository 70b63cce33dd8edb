#pragma once

// Seeded synthetic recognition benchmark.
//
// Geometry:
//  * n_classes landmark centroids, uniform on the unit sphere;
//  * n_distractor_centroids non-landmark centroids, each the normalized blend
//      distractor_overlap * (centroid of a random class) + (1 - distractor_overlap) * (random unit vector),
//    so that out-of-domain images partially resemble some landmarks;
//  * every image is its centroid plus isotropic Gaussian noise with
//    per-coordinate sd = 4 * class_spread / sqrt(dim) (expected noise norm
//    about 4 * class_spread, independent of dim);
//  * train and landmark-test images come from class centroids; distractor
//    test images and the non-landmark pool share the distractor centroids.
//
// Randomness: std::mt19937_64 (sequence fixed by the C++ standard), uniforms
// from the top 53 bits, normals by Box-Muller. No std:: distributions are
// used, so output is identical across standard libraries.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "lmrank/embedding_store.hpp"
#include "lmrank/error.hpp"

namespace lmrank {

struct SynthConfig {
  std::uint64_t seed = 42;
  std::size_t dim = 64;
  std::size_t n_classes = 50;
  std::size_t train_per_class = 20;
  std::size_t n_test_landmark = 100;
  std::size_t n_test_distractor = 900;
  std::size_t n_nonlandmark_pool = 500;
  double class_spread = 0.3;
  double distractor_overlap = 0.5;
  std::size_t n_distractor_centroids = 20;

  void validate() const {
    if (dim < 2) throw ValidationError("synth: dim must be >= 2");
    if (n_classes < 1) throw ValidationError("synth: n_classes must be >= 1");
    if (train_per_class < 1) throw ValidationError("synth: train_per_class must be >= 1");
    if (!(class_spread > 0.0) || !std::isfinite(class_spread)) {
      throw ValidationError("synth: class_spread must be a positive number");
    }
    if (!(distractor_overlap >= 0.0 && distractor_overlap <= 1.0)) {
      throw ValidationError("synth: distractor_overlap must lie in [0, 1]");
    }
    if (n_distractor_centroids < 1 && (n_test_distractor > 0 || n_nonlandmark_pool > 0)) {
      throw ValidationError("synth: distractors requested but n_distractor_centroids is 0");
    }
  }
};

struct SynthData {
  EmbeddingSet test;
  EmbeddingSet train;
  EmbeddingSet nonlandmark;
  LabelTable train_labels;
  LabelTable test_gt;  // landmark test images only
};

class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::size_t below(std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

namespace detail {

inline std::vector<double> random_unit(SynthRng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      sq += x * x;
    }
  } while (sq == 0.0);
  const double inv = 1.0 / std::sqrt(sq);
  for (auto& x : v) x *= inv;
  return v;
}

inline std::string synth_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%06zu", prefix, i);
  return buf;
}

}  // namespace detail

inline SynthData generate(const SynthConfig& config) {
  config.validate();
  SynthRng rng(config.seed);
  const std::size_t d = config.dim;
  const double sigma = 4.0 * config.class_spread / std::sqrt(static_cast<double>(d));

  std::vector<std::vector<double>> classes;
  for (std::size_t c = 0; c < config.n_classes; ++c) classes.push_back(detail::random_unit(rng, d));

  std::vector<std::vector<double>> distractors;
  for (std::size_t j = 0; j < config.n_distractor_centroids; ++j) {
    const auto& anchor = classes[rng.below(config.n_classes)];
    auto fresh = detail::random_unit(rng, d);
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      fresh[k] = config.distractor_overlap * anchor[k] + (1.0 - config.distractor_overlap) * fresh[k];
      sq += fresh[k] * fresh[k];
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& x : fresh) x *= inv;
    distractors.push_back(std::move(fresh));
  }

  auto sample = [&](const std::vector<double>& centre, std::vector<float>& out) {
    for (std::size_t k = 0; k < d; ++k) out.push_back(static_cast<float>(centre[k] + sigma * rng.normal()));
  };

  SynthData data;

  std::vector<std::string> train_ids;
  std::vector<float> train_values;
  for (std::size_t c = 0; c < config.n_classes; ++c) {
    for (std::size_t r = 0; r < config.train_per_class; ++r) {
      auto id = detail::synth_id("train", train_ids.size());
      data.train_labels.insert(id, static_cast<LandmarkId>(c));
      train_ids.push_back(std::move(id));
      sample(classes[c], train_values);
    }
  }

  // Test rows: landmark and distractor images interleaved by a seeded shuffle
  // so that row order carries no signal.
  const std::size_t n_test = config.n_test_landmark + config.n_test_distractor;
  std::vector<std::ptrdiff_t> kind(n_test);  // class index, or -1 for a distractor
  for (std::size_t i = 0; i < n_test; ++i) {
    kind[i] = i < config.n_test_landmark ? static_cast<std::ptrdiff_t>(rng.below(config.n_classes)) : -1;
  }
  for (std::size_t i = n_test; i > 1; --i) std::swap(kind[i - 1], kind[rng.below(i)]);

  std::vector<std::string> test_ids;
  std::vector<float> test_values;
  for (std::size_t i = 0; i < n_test; ++i) {
    auto id = detail::synth_id("test", i);
    if (kind[i] >= 0) {
      data.test_gt.insert(id, static_cast<LandmarkId>(kind[i]));
      sample(classes[static_cast<std::size_t>(kind[i])], test_values);
    } else {
      sample(distractors[rng.below(distractors.size())], test_values);
    }
    test_ids.push_back(std::move(id));
  }

  std::vector<std::string> pool_ids;
  std::vector<float> pool_values;
  for (std::size_t i = 0; i < config.n_nonlandmark_pool; ++i) {
    pool_ids.push_back(detail::synth_id("nonlandmark", i));
    sample(distractors[rng.below(distractors.size())], pool_values);
  }

  data.test = EmbeddingSet(std::move(test_ids), d, std::move(test_values), Role::test);
  data.train = EmbeddingSet(std::move(train_ids), d, std::move(train_values), Role::train);
  data.nonlandmark = EmbeddingSet(std::move(pool_ids), d, std::move(pool_values), Role::nonlandmark);
  return data;
}

/// Writes the five files of a model directory (see lmrank::layout).
inline void save_synth(const SynthData& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  save_embeddings(data.test, dir / layout::kTest);
  save_embeddings(data.train, dir / layout::kTrain);
  save_embeddings(data.nonlandmark, dir / layout::kNonlandmark);
  save_labels(data.train_labels, dir / layout::kTrainLabels);
  save_labels(data.test_gt, dir / layout::kTestGroundTruth);
}

}  // namespace lmrank
