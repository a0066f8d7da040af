#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "cimon/evalkit.hpp"
#include "cimon/hashnet.hpp"
#include "cimon/ingest.hpp"
#include "test_util.hpp"

using namespace cimon;
using cimon::testing::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& fn, std::optional<std::size_t>* index = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (index) *index = e.index();
    return e.code();
  }
  ADD_FAILURE() << "expected cimon::Error";
  return ErrorCode::Io;
}

FeatureViewPair small_pair() {
  FeatureMatrix v1(2, 3), v2(2, 3);
  v1 << 1, 2, 3, 4, 5, 6;
  v2 << -1, 0.5f, 0, 0, 0, 7;
  return make_view_pair(v1, v2, {10, 42});
}

}  // namespace

TEST(Ingest, RoundTripsTwoItemFile) {
  TempDir dir;
  const auto views = small_pair();
  save_feature_views(dir / "a.cimf", views);
  const auto loaded = load_feature_views(dir / "a.cimf");
  EXPECT_EQ(loaded.n(), 2u);
  EXPECT_EQ(loaded.d(), 3u);
  EXPECT_EQ(loaded.stored_views, 2u);
  EXPECT_EQ(loaded.view1, views.view1);
  EXPECT_EQ(loaded.view2, views.view2);
  EXPECT_EQ(loaded.ids, views.ids);
}

TEST(Ingest, WriterReaderIsBitwiseIdentityOnRandomData) {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(20));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(10));
    auto views = make_view_pair(cimon::testing::random_features(n, d, rng), cimon::testing::random_features(n, d, rng),
                                sequential_ids(static_cast<std::size_t>(n), rng.below(1000)));
    const auto bytes = encode_feature_views(views, 2);
    const auto back = decode_feature_views(bytes);
    EXPECT_EQ(encode_feature_views(back, 2), bytes);
  }
}

TEST(Ingest, SingleViewFileDuplicatesView) {
  TempDir dir;
  auto views = small_pair();
  views.stored_views = 1;
  save_feature_views(dir / "one.cimf", views);
  const auto loaded = load_feature_views(dir / "one.cimf");
  EXPECT_EQ(loaded.stored_views, 1u);
  EXPECT_EQ(loaded.view2, loaded.view1);
}

TEST(Ingest, MissingRowInSecondViewIsShapeMismatch) {
  auto bytes = encode_feature_views(small_pair(), 2);
  // Drop the last row of view 2 (3 floats) while keeping the ids.
  const std::size_t ids_at = bytes.size() - 2 * 8;
  bytes.erase(bytes.begin() + static_cast<std::ptrdiff_t>(ids_at - 12), bytes.begin() + static_cast<std::ptrdiff_t>(ids_at));
  std::optional<std::size_t> index;
  EXPECT_EQ(code_of([&] { decode_feature_views(bytes); }, &index), ErrorCode::ShapeMismatch);
  ASSERT_TRUE(index.has_value());
  EXPECT_EQ(*index, 1u);
}

TEST(Ingest, NanRowIsReportedByIndex) {
  Rng rng(3);
  FeatureMatrix v = cimon::testing::random_features(8, 4, rng);
  FeatureViewPair views{v, v, sequential_ids(8), 2};
  views.view1(5, 2) = std::numeric_limits<float>::quiet_NaN();
  std::optional<std::size_t> index;
  EXPECT_EQ(code_of([&] { decode_feature_views(encode_feature_views(views, 2)); }, &index),
            ErrorCode::NonFiniteValue);
  EXPECT_EQ(index, std::optional<std::size_t>(5));
}

TEST(Ingest, ZeroRowIsRejected) {
  FeatureMatrix v(3, 2);
  v << 1, 1, 0, 0, 2, 2;
  std::optional<std::size_t> index;
  EXPECT_EQ(code_of([&] { make_view_pair(v, v, sequential_ids(3)); }, &index), ErrorCode::ZeroRow);
  EXPECT_EQ(index, std::optional<std::size_t>(1));
}

TEST(Ingest, BadMagicIsMalformedHeader) {
  auto bytes = encode_feature_views(small_pair(), 2);
  bytes[0] = 'X';
  EXPECT_EQ(code_of([&] { decode_feature_views(bytes); }), ErrorCode::MalformedHeader);
  bytes = encode_feature_views(small_pair(), 2);
  bytes.resize(10);
  EXPECT_EQ(code_of([&] { decode_feature_views(bytes); }), ErrorCode::MalformedHeader);
}

TEST(Ingest, DuplicateIdsRejected) {
  FeatureMatrix v(2, 1);
  v << 1, 2;
  EXPECT_EQ(code_of([&] { make_view_pair(v, v, {3, 3}); }), ErrorCode::DuplicateId);
}

TEST(Ingest, LabelsRoundTrip) {
  TempDir dir;
  LabelVector labels{{{0}, {1, 3}, {2}}};
  save_labels(dir / "l.ciml", labels);
  const auto back = load_labels(dir / "l.ciml");
  EXPECT_EQ(back.labels, labels.labels);
  EXPECT_EQ(encode_labels(back), encode_labels(labels));
}

TEST(Ingest, EmptyLabelSetRejected) {
  LabelVector labels{{{0}, {}}};
  EXPECT_EQ(code_of([&] { decode_labels(encode_labels(labels)); }), ErrorCode::MalformedHeader);
}

TEST(Augment, ZeroNoiseZeroDropoutIsIdentity) {
  Rng rng(1);
  const FeatureMatrix base = cimon::testing::random_features(6, 5, rng);
  const auto views = augment_features(base, {0.0, 0.0, 99});
  EXPECT_EQ(views.view1, base);
  EXPECT_EQ(views.view2, base);
}

TEST(Augment, SameSeedIsBitwiseIdentical) {
  Rng rng(2);
  const FeatureMatrix base = cimon::testing::random_features(10, 7, rng);
  const AugmentConfig cfg{0.3, 0.2, 1234};
  const auto a = augment_features(base, cfg);
  const auto b = augment_features(base, cfg);
  EXPECT_EQ(encode_feature_views(a, 2), encode_feature_views(b, 2));
  EXPECT_NE(a.view1, a.view2);
}

TEST(Augment, MeanAbsolutePerturbationMatchesHalfNormal) {
  // E|N(0, 0.1)| = 0.1 * sqrt(2/pi) ~ 0.0798.
  const FeatureMatrix base = FeatureMatrix::Ones(4, 8);
  const auto views = augment_features(base, {0.1, 0.0, 5});
  const double mean_abs = (views.view1 - base).cwiseAbs().cast<double>().mean();
  EXPECT_NE(views.view1, base);
  EXPECT_NEAR(mean_abs, 0.1 * std::sqrt(2.0 / M_PI), 0.03);
}

TEST(Augment, InvalidConfigRejected) {
  const FeatureMatrix base = FeatureMatrix::Ones(2, 2);
  EXPECT_EQ(code_of([&] { augment_features(base, {-0.1, 0.0, 0}); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { augment_features(base, {0.0, 1.0, 0}); }), ErrorCode::InvalidArgument);
}

TEST(Augment, DegenerateRowFailsAfterRetries) {
  // One coordinate, no noise, near-certain dropout: every retry stays zero.
  FeatureMatrix base(2, 1);
  base << 1, 1;
  EXPECT_EQ(code_of([&] { augment_features(base, {0.0, 0.999999, 1}); }), ErrorCode::DegenerateAugmentation);
}

TEST(Synthetic, BalancedClustersAndValidViews) {
  const auto data = make_synthetic(4, 100, 32, 10.0, 1);
  EXPECT_EQ(data.base.n(), 400u);
  EXPECT_EQ(data.base.d(), 32u);
  std::vector<int> counts(4, 0);
  for (const auto& l : data.labels.labels) {
    ASSERT_EQ(l.size(), 1u);
    ++counts[l[0]];
  }
  EXPECT_EQ(counts, std::vector<int>(4, 100));
  EXPECT_NO_THROW(validate(data.base));
  EXPECT_NO_THROW(validate(data.labels, data.base.n()));
}

TEST(Synthetic, SameSeedIsIdentical) {
  const auto a = make_synthetic(3, 5, 4, 2.0, 77, 2);
  const auto b = make_synthetic(3, 5, 4, 2.0, 77, 2);
  EXPECT_EQ(a.base.view1, b.base.view1);
  EXPECT_EQ(a.labels.labels, b.labels.labels);
  ASSERT_TRUE(a.queries && b.queries);
  EXPECT_EQ(a.queries->view1, b.queries->view1);
  EXPECT_EQ(a.queries->ids.front(), 15u);
}

TEST(Synthetic, RejectsTooFewClustersOrPoints) {
  EXPECT_EQ(code_of([] { make_synthetic(1, 10, 4, 1.0, 0); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { make_synthetic(3, 1, 4, 1.0, 0); }), ErrorCode::InvalidArgument);
}

TEST(Synthetic, ZeroSeparationGivesChanceLevelRetrieval) {
  // Oracle: MAP of uniformly random codes on the same labels.
  const auto data = make_synthetic(4, 100, 32, 0.0, 11, 25);
  const auto model = init_model(32, {64}, 16, 3);
  const auto db = encode(model, data.base.view1);
  const auto q = encode(model, data.queries->view1);
  const double model_map = mean_average_precision(hamming_rank(q, db), data.query_labels, data.labels, db.n()).map;

  Rng rng(5);
  const auto rdb = cimon::testing::random_codes(db.n(), 16, rng);
  const auto rq = cimon::testing::random_codes(q.n(), 16, rng);
  const double random_map = mean_average_precision(hamming_rank(rq, rdb), data.query_labels, data.labels, db.n()).map;

  EXPECT_NEAR(random_map, 0.25, 0.05);
  EXPECT_NEAR(model_map, random_map, 0.05);
}
