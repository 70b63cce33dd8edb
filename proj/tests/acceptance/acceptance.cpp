// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Thresholds and tolerances are fixed here and must not be relaxed.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lmrank/lmrank.hpp"
#include "../test_util.hpp"

#ifndef LMRANK_CLI_PATH
#error "LMRANK_CLI_PATH must point at the lmrank executable"
#endif

namespace {

using namespace lmrank;
using Clock = std::chrono::steady_clock;

// Margin of GAP(rerank) over GAP(baseline) on the default synthetic config.
// Frozen at its initial value; the observed margin at seed 42 is ~0.127.
constexpr double kRerankMarginThreshold = 0.03;

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void criterion(const char* name, const std::function<Outcome()>& body) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::printf("[%s] %-28s %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

RoleSets prepare(const SynthData& d) {
  RoleSets unit{l2_normalize(d.test), l2_normalize(d.train), l2_normalize(d.nonlandmark)};
  return quantile_normalize_roles(unit, 1000, TransformMode::all_roles);
}

std::vector<LandmarkId> labels_of(const std::vector<RankedPrediction>& p) {
  std::vector<LandmarkId> out;
  for (const auto& r : p) out.push_back(r.landmark_id);
  return out;
}

Outcome leaderboard_note() {
  return {true,
          "published leaderboard GAP (0.6824 public / 0.6598 private) needs the hidden competition test set and "
          "trained CNN embeddings; not reproducible here, replaced by the property checks below"};
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(2024);
  const auto start = Clock::now();
  std::size_t rows = 0;
  for (int inst = 0; inst < 20; ++inst) {
    // Sizes grow to the 200 x 1000 x 128 ceiling on the last instance.
    const std::size_t nq = 10 + 190 * inst / 19;
    const std::size_t nc = 50 + 950 * inst / 19;
    const std::size_t d = 8 + 120 * inst / 19;
    const std::size_t k = 1 + inst % 10;
    auto q = testing::random_set(rng, nq, d, "q");
    auto c = testing::random_set(rng, nc, d, "c");
    if (inst % 4 == 3) {
      // Repeat corpus rows to force exact score ties.
      std::vector<float> values;
      for (std::size_t j = 0; j < nc; ++j) {
        const auto r = c.row(j % (nc / 3));
        values.insert(values.end(), r.begin(), r.end());
      }
      c = EmbeddingSet(c.ids(), d, std::move(values));
    }
    const auto got = cosine_topk(q, c, k, {.block_size = 64, .threads = 2});
    for (std::size_t i = 0; i < nq; ++i) {
      std::string why;
      if (!testing::topk_matches_oracle(got[i], testing::oracle_topk_row(q, i, c, k), 1e-6, &why)) {
        return {false, fmt("instance %d query %zu: %s", inst, i, why.c_str())};
      }
    }
    rows += nq;
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  return {secs < 10.0, fmt("20 instances, %zu queries, max 200x1000x128, tol 1e-6, %.2fs (limit 10s)", rows, secs)};
}

Outcome rerank_benefit() {
  const auto start = Clock::now();
  const auto data = generate(SynthConfig{});
  const auto sets = prepare(data);
  const auto cmp = compare_pipelines(sets.test, sets.train, data.train_labels, sets.nonlandmark, data.test_gt, {});
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  const bool ok = cmp.reranked.gap > cmp.baseline.gap && cmp.delta() >= kRerankMarginThreshold && secs < 30.0;
  return {ok, fmt("seed 42: baseline %.4f, rerank %.4f, delta %.4f (need >= %.2f), %.2fs (limit 30s)",
                  cmp.baseline.gap, cmp.reranked.gap, cmp.delta(), kRerankMarginThreshold, secs)};
}

Outcome reduction_identities() {
  SynthConfig c;
  c.seed = 7;
  const auto data = generate(c);
  const auto sets = prepare(data);
  const auto empty = EmbeddingSet::make_empty(sets.test.dim(), Role::nonlandmark);
  const auto reranked = rerank(sets.test, sets.train, data.train_labels, empty, RerankParams{});
  const auto base = baseline_rank(sets.test, sets.train, data.train_labels, 3);
  if (reranked != base) return {false, "empty pool: rerank differs from baseline"};

  const ModelBundle one{{RoleSets{data.test, data.train, data.nonlandmark}}};
  const auto single = labels_of(rerank(sets.test, sets.train, data.train_labels, sets.nonlandmark, {}));
  const auto cat = concat_ensemble(one, 1000);
  if (labels_of(rerank(cat.test, cat.train, data.train_labels, cat.nonlandmark, {})) != single) {
    return {false, "M=1 concat ensemble changed landmark ids"};
  }
  if (labels_of(topk_sum_ensemble(preprocess_models(one, 1000), data.train_labels, {})) != single) {
    return {false, "M=1 top-k sum ensemble changed landmark ids"};
  }
  return {true, fmt("empty pool == baseline on %zu rows; M=1 concat and top-k sum ids identical", base.size())};
}

Outcome c_shift() {
  const auto data = generate(SynthConfig{});
  const auto sets = prepare(data);
  RerankParams off;
  off.apply_c = false;
  const auto with_c = rerank(sets.test, sets.train, data.train_labels, sets.nonlandmark, {});
  const auto without = rerank(sets.test, sets.train, data.train_labels, sets.nonlandmark, off);
  const auto c = mean_topk_similarity(sets.test, sets.nonlandmark, 10);
  double worst = 0.0;
  for (std::size_t i = 0; i < with_c.size(); ++i) {
    if (with_c[i].landmark_id != without[i].landmark_id) return {false, fmt("row %zu changed landmark id", i)};
    worst = std::max(worst, std::abs((without[i].confidence - with_c[i].confidence) - c[i]));
  }
  return {worst <= 1e-6, fmt("%zu rows, max |shift - C_i| = %.2e (tol 1e-6), ids unchanged", with_c.size(), worst)};
}

Outcome quantile_statistics() {
  std::mt19937_64 rng(16);
  const auto fit = testing::random_set(rng, 1000, 16, "g");
  const auto qt = fit_quantile_transform(fit, 1000);
  const auto out = apply_quantile_transform(qt, fit);
  double worst_mean = 0.0, lo_std = 1e9, hi_std = 0.0;
  for (std::size_t k = 0; k < 16; ++k) {
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.row(i)[k];
    const double mean = s / 1000.0;
    for (std::size_t i = 0; i < out.size(); ++i) ss += (out.row(i)[k] - mean) * (out.row(i)[k] - mean);
    const double sd = std::sqrt(ss / 1000.0);
    worst_mean = std::max(worst_mean, std::abs(mean));
    lo_std = std::min(lo_std, sd);
    hi_std = std::max(hi_std, sd);
  }
  std::uniform_int_distribution<std::size_t> dim(0, 15);
  std::uniform_real_distribution<float> value(-6.0f, 6.0f);
  std::size_t violations = 0;
  for (int p = 0; p < 100000; ++p) {
    const auto k = dim(rng);
    float a = value(rng), b = value(rng);
    if (a > b) std::swap(a, b);
    if (qt.transform_value(k, a) > qt.transform_value(k, b)) ++violations;
  }
  const bool ok = worst_mean < 0.05 && lo_std >= 0.9 && hi_std <= 1.1 && violations == 0;
  return {ok, fmt("max|mean| %.4f (<0.05), std in [%.4f, %.4f] (within [0.9,1.1]), %zu/100000 violations",
                  worst_mean, lo_std, hi_std, violations)};
}

Outcome gap_cases() {
  LabelTable gt3;
  gt3.insert("a", 1);
  gt3.insert("b", 2);
  gt3.insert("c", 3);
  const std::vector<RankedPrediction> all{{"b", 2, 0.1}, {"c", 3, 5.0}, {"a", 1, -2.0}};
  const double perfect = global_average_precision(all, gt3).gap;
  if (perfect != 1.0) return {false, fmt("all-correct gave %.17g", perfect)};

  LabelTable gt2;
  gt2.insert("a", 1);
  gt2.insert("c", 3);
  const std::vector<RankedPrediction> cwc{{"a", 1, 0.9}, {"b", 5, 0.8}, {"c", 3, 0.7}};
  const double hand = (1.0 * 1.0 + (2.0 / 3.0) * 1.0) / 2.0;
  const double got = global_average_precision(cwc, gt2).gap;
  if (std::abs(got - hand) > 1e-12) return {false, fmt("[c,w,c] gave %.17g, hand %.17g", got, hand)};

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> conf(-2.0, 2.0);
  std::uniform_int_distribution<int> lab(0, 3);
  for (int t = 0; t < 10; ++t) {
    LabelTable gt;
    std::vector<RankedPrediction> p;
    for (int i = 0; i < 50; ++i) {
      const auto id = "i" + std::to_string(i);
      if (i % 3 != 0) gt.insert(id, lab(rng));
      p.push_back({id, lab(rng), conf(rng)});
    }
    auto warped = p;
    for (auto& r : warped) r.confidence = 10.0 * std::tanh(r.confidence) + 3.0;
    if (global_average_precision(p, gt).gap != global_average_precision(warped, gt).gap) {
      return {false, fmt("instance %d not invariant under a monotone transform", t)};
    }
  }
  return {true, "all-correct = 1 exactly; [c,w,c]/M=2 within 1e-12; invariance on 10 instances"};
}

Outcome serialization() {
  testing::TempDir dir;
  std::mt19937_64 rng(50);
  std::uniform_int_distribution<std::size_t> n_dist(0, 60), d_dist(1, 40), q_dist(2, 30), len(1, 12);
  std::uniform_int_distribution<int> ch(0, 61);
  const char* alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = n_dist(rng), d = d_dist(rng);
    std::vector<std::string> ids;
    std::vector<float> values;
    std::normal_distribution<float> g(0.0f, 100.0f);
    for (std::size_t i = 0; i < n; ++i) {
      std::string id = std::to_string(i) + (t % 2 ? "\xc3\xa9_" : "_");
      for (std::size_t c = len(rng); c > 0; --c) id += alphabet[ch(rng)];
      ids.push_back(id);
      for (std::size_t k = 0; k < d; ++k) values.push_back(t % 5 == 0 ? std::ldexp(g(rng), -130) : g(rng));
    }
    const EmbeddingSet set(ids, d, values);
    const auto path = dir / ("s" + std::to_string(t) + ".emb");
    save_embeddings(set, path);
    const auto back = load_embeddings(path);
    if (!bitwise_equal(set, back)) return {false, fmt("embedding set %d not bit-exact", t)};
    save_embeddings(back, dir / "again.emb");
    if (testing::read_bytes(path) != testing::read_bytes(dir / "again.emb")) {
      return {false, fmt("embedding set %d bytes differ on rewrite", t)};
    }

    const auto ref = testing::random_set(rng, std::max<std::size_t>(n, 2), d, "f");
    const auto qt = fit_quantile_transform(ref, q_dist(rng));
    const auto qpath = dir / ("t" + std::to_string(t) + ".qtx");
    save_quantile_transform(qt, qpath);
    const auto qback = load_quantile_transform(qpath);
    if (!(qt == qback)) return {false, fmt("transform %d not bit-exact", t)};
    save_quantile_transform(qback, dir / "again.qtx");
    if (testing::read_bytes(qpath) != testing::read_bytes(dir / "again.qtx")) {
      return {false, fmt("transform %d bytes differ on rewrite", t)};
    }
  }
  return {true, "50 embedding sets and 50 transforms round-trip bit-exactly"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LMRANK_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  testing::TempDir dir;
  const auto model = (dir / "model").string();
  if (run_cli("synth --out " + model) != 0) return {false, "synth failed"};
  const auto a = (dir / "t1.csv").string();
  const auto b = (dir / "t4.csv").string();
  if (run_cli("pipeline --model " + model + " --threads 1 --out " + a) != 0) return {false, "threads=1 run failed"};
  if (run_cli("pipeline --model " + model + " --threads 4 --out " + b) != 0) return {false, "threads=4 run failed"};
  const auto x = testing::read_bytes(a);
  const auto y = testing::read_bytes(b);
  return {!x.empty() && x == y, fmt("--threads 1 vs --threads 4: %zu vs %zu bytes, %s", x.size(), y.size(),
                                    x == y ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
  criterion("leaderboard-not-reproduced", leaderboard_note);
  criterion("oracle-equivalence", oracle_equivalence);
  criterion("rerank-benefit", rerank_benefit);
  criterion("reduction-identities", reduction_identities);
  criterion("c-shift", c_shift);
  criterion("quantile-statistics", quantile_statistics);
  criterion("gap-hand-cases", gap_cases);
  criterion("serialization-round-trip", serialization);
  criterion("determinism-threads", determinism);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
