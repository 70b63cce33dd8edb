#include <gtest/gtest.h>

#include <set>

#include "lmrank/synth.hpp"
#include "test_util.hpp"

namespace lmrank {
namespace {

TEST(Synth, DefaultShapes) {
  const auto d = generate(SynthConfig{});
  EXPECT_EQ(d.test.size(), 1000u);
  EXPECT_EQ(d.train.size(), 1000u);
  EXPECT_EQ(d.nonlandmark.size(), 500u);
  EXPECT_EQ(d.test.dim(), 64u);
  EXPECT_EQ(d.train_labels.size(), 1000u);
  EXPECT_EQ(d.test_gt.size(), 100u);
  EXPECT_EQ(d.train_labels.classes().size(), 50u);
}

TEST(Synth, SameSeedIsBitIdentical) {
  SynthConfig c;
  c.seed = 1234;
  const auto a = generate(c);
  const auto b = generate(c);
  EXPECT_TRUE(bitwise_equal(a.test, b.test));
  EXPECT_TRUE(bitwise_equal(a.train, b.train));
  EXPECT_TRUE(bitwise_equal(a.nonlandmark, b.nonlandmark));
  EXPECT_EQ(a.train_labels, b.train_labels);
  EXPECT_EQ(a.test_gt, b.test_gt);

  testing::TempDir dir;
  save_synth(a, dir / "one");
  save_synth(b, dir / "two");
  for (const char* f : {layout::kTest, layout::kTrain, layout::kNonlandmark, layout::kTrainLabels,
                        layout::kTestGroundTruth}) {
    EXPECT_EQ(testing::read_bytes(dir / "one" / f), testing::read_bytes(dir / "two" / f)) << f;
  }
  c.seed = 1235;
  EXPECT_FALSE(bitwise_equal(generate(c).test, a.test));
}

TEST(Synth, NoDistractorsMeansFullGroundTruth) {
  SynthConfig c;
  c.n_test_distractor = 0;
  c.distractor_overlap = 0.9;
  const auto d = generate(c);
  EXPECT_EQ(d.test_gt.size(), d.test.size());
  for (const auto& id : d.test.ids()) EXPECT_TRUE(d.test_gt.contains(id));
}

TEST(Synth, EveryGroundTruthClassHasTrainRows) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SynthConfig c;
    c.seed = seed;
    c.n_classes = 7;
    c.train_per_class = 1;
    const auto d = generate(c);
    const auto classes = d.train_labels.classes();
    const std::set<LandmarkId> have(classes.begin(), classes.end());
    for (const auto& [id, label] : d.test_gt.entries()) EXPECT_TRUE(have.count(label)) << id;
  }
}

TEST(Synth, RngIsPinned) {
  // mt19937_64 is fully specified; its 10000th output is fixed by the standard.
  std::mt19937_64 engine;
  engine.discard(9999);
  EXPECT_EQ(engine(), 9981545732273789042ull);
  SynthRng a(5), b(5);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_EQ(u, b.uniform());
  }
}

TEST(Synth, ValidationErrors) {
  auto bad = [](auto mutate) {
    SynthConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(generate(bad([](auto& c) { c.dim = 1; })), ValidationError);
  EXPECT_THROW(generate(bad([](auto& c) { c.n_classes = 0; })), ValidationError);
  EXPECT_THROW(generate(bad([](auto& c) { c.train_per_class = 0; })), ValidationError);
  EXPECT_THROW(generate(bad([](auto& c) { c.class_spread = 0.0; })), ValidationError);
  EXPECT_THROW(generate(bad([](auto& c) { c.distractor_overlap = 1.5; })), ValidationError);
  EXPECT_THROW(generate(bad([](auto& c) { c.n_distractor_centroids = 0; })), ValidationError);
  EXPECT_NO_THROW(generate(bad([](auto& c) {
    c.n_distractor_centroids = 0;
    c.n_test_distractor = 0;
    c.n_nonlandmark_pool = 0;
  })));
}

}  // namespace
}  // namespace lmrank
