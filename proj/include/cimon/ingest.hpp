#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <unordered_set>
#include <vector>

#include "cimon/binary_io.hpp"
#include "cimon/error.hpp"
#include "cimon/random.hpp"

namespace cimon {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Two augmented views of the same N items. `stored_views` records whether the
/// source carried a second view (2) or only a base matrix duplicated into
/// view2 (1); the trainer augments single-view inputs before mining.
struct FeatureViewPair {
  FeatureMatrix view1;
  FeatureMatrix view2;
  std::vector<std::uint64_t> ids;
  std::uint32_t stored_views = 2;

  std::size_t n() const { return static_cast<std::size_t>(view1.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(view1.cols()); }
};

/// Evaluation-only ground truth: a non-empty sorted label set per item.
struct LabelVector {
  std::vector<std::vector<std::uint32_t>> labels;

  std::size_t size() const { return labels.size(); }
};

struct AugmentConfig {
  double noise_sigma = 0.0;
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Validation

/// Checks the row invariants of a single matrix: finite entries, no zero rows.
inline void validate_rows(const FeatureMatrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    bool nonzero = false;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const float v = m(i, j);
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFiniteValue, "feature row", static_cast<std::size_t>(i));
      }
      nonzero = nonzero || v != 0.0f;
    }
    if (!nonzero) throw Error(ErrorCode::ZeroRow, "feature row", static_cast<std::size_t>(i));
  }
}

inline void validate(const FeatureViewPair& views) {
  if (views.view1.rows() < 2 || views.view1.cols() < 1) {
    throw Error(ErrorCode::ShapeMismatch, "need n >= 2 items and d >= 1 dims");
  }
  if (views.view2.rows() != views.view1.rows() || views.view2.cols() != views.view1.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "view2 shape differs from view1",
                static_cast<std::size_t>(std::min(views.view1.rows(), views.view2.rows())));
  }
  if (views.ids.size() != views.n()) {
    throw Error(ErrorCode::ShapeMismatch, "id count differs from row count",
                std::min(views.ids.size(), views.n()));
  }
  validate_rows(views.view1);
  validate_rows(views.view2);
  std::unordered_set<std::uint64_t> seen;
  for (std::size_t i = 0; i < views.ids.size(); ++i) {
    if (!seen.insert(views.ids[i]).second) throw Error(ErrorCode::DuplicateId, "item id", i);
  }
}

inline void validate(const LabelVector& labels, std::size_t n) {
  if (labels.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "label count differs from item count",
                std::min(labels.size(), n));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels.labels[i].empty()) throw Error(ErrorCode::InvalidArgument, "empty label set", i);
  }
}

inline std::vector<std::uint64_t> sequential_ids(std::size_t n, std::uint64_t first = 0) {
  std::vector<std::uint64_t> ids(n);
  std::iota(ids.begin(), ids.end(), first);
  return ids;
}

/// Builds and validates a pair from two explicit views.
inline FeatureViewPair make_view_pair(FeatureMatrix view1, FeatureMatrix view2,
                                      std::vector<std::uint64_t> ids) {
  FeatureViewPair views{std::move(view1), std::move(view2), std::move(ids), 2};
  validate(views);
  return views;
}

/// Wraps a base matrix as a single-view pair (view2 is a copy of view1).
inline FeatureViewPair make_single_view(FeatureMatrix base, std::vector<std::uint64_t> ids) {
  FeatureViewPair views{base, base, std::move(ids), 1};
  validate(views);
  return views;
}

// ---------------------------------------------------------------------------
// CIMF / CIML files

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

inline std::vector<std::uint8_t> encode_feature_views(const FeatureViewPair& views,
                                                      std::uint32_t view_count) {
  require(view_count == 1 || view_count == 2, "view count must be 1 or 2");
  std::vector<std::uint8_t> out;
  out.reserve(32 + view_count * views.n() * views.d() * 4 + views.n() * 8);
  io::put_magic(out, "CIMF");
  io::put<std::uint32_t>(out, kFeatureFormatVersion);
  io::put<std::uint64_t>(out, views.n());
  io::put<std::uint64_t>(out, views.d());
  io::put<std::uint32_t>(out, view_count);
  for (std::uint32_t v = 0; v < view_count; ++v) {
    const FeatureMatrix& m = v == 0 ? views.view1 : views.view2;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) io::put<float>(out, m(i, j));
  }
  for (std::uint64_t id : views.ids) io::put<std::uint64_t>(out, id);
  return out;
}

/// Writes `views` as CIMF. Single-view pairs are written with view-count 1
/// unless `view_count` overrides it.
inline void save_feature_views(const std::filesystem::path& path, const FeatureViewPair& views,
                               std::optional<std::uint32_t> view_count = std::nullopt) {
  io::write_file(path, encode_feature_views(views, view_count.value_or(views.stored_views)));
}

inline FeatureViewPair decode_feature_views(std::vector<std::uint8_t> bytes) {
  io::Reader in(std::move(bytes));
  in.expect_magic("CIMF");
  const auto version = in.get<std::uint32_t>();
  if (version != kFeatureFormatVersion) {
    throw Error(ErrorCode::MalformedHeader, "unsupported version " + std::to_string(version), 4);
  }
  const auto n = in.get<std::uint64_t>();
  const auto d = in.get<std::uint64_t>();
  const auto view_count = in.get<std::uint32_t>();
  if (view_count != 1 && view_count != 2) {
    throw Error(ErrorCode::MalformedHeader, "view count must be 1 or 2", 24);
  }
  if (n < 2 || d < 1 || n > (1ULL << 40) || d > (1ULL << 32)) {
    throw Error(ErrorCode::MalformedHeader, "implausible shape n=" + std::to_string(n) +
                                                " d=" + std::to_string(d), 8);
  }
  const std::uint64_t row_bytes = d * 4;
  const std::uint64_t expected = view_count * n * row_bytes + n * 8;
  if (in.remaining() != expected) {
    // Locate the first missing row when the payload holds whole rows plus ids.
    const std::uint64_t payload = in.remaining();
    if (payload >= n * 8 && (payload - n * 8) % row_bytes == 0) {
      const std::uint64_t rows = (payload - n * 8) / row_bytes;
      const std::uint64_t view = std::min<std::uint64_t>(rows / n, view_count - 1);
      throw Error(ErrorCode::ShapeMismatch,
                  "view " + std::to_string(view + 1) + " holds " +
                      std::to_string(rows - view * n) + " rows, header says " + std::to_string(n),
                  rows - view * n);
    }
    throw Error(ErrorCode::ShapeMismatch,
                "payload is " + std::to_string(payload) + " bytes, header implies " +
                    std::to_string(expected));
  }

  FeatureViewPair views;
  views.stored_views = view_count;
  for (std::uint32_t v = 0; v < view_count; ++v) {
    FeatureMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = in.get<float>();
    (v == 0 ? views.view1 : views.view2) = std::move(m);
  }
  if (view_count == 1) views.view2 = views.view1;
  views.ids.resize(n);
  for (auto& id : views.ids) id = in.get<std::uint64_t>();
  validate(views);
  return views;
}

inline FeatureViewPair load_feature_views(const std::filesystem::path& path) {
  return decode_feature_views(io::read_file(path));
}

inline std::vector<std::uint8_t> encode_labels(const LabelVector& labels) {
  std::vector<std::uint8_t> out;
  io::put_magic(out, "CIML");
  io::put<std::uint64_t>(out, labels.size());
  for (const auto& set : labels.labels) {
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(set.size()));
    for (std::uint32_t label : set) io::put<std::uint32_t>(out, label);
  }
  return out;
}

inline void save_labels(const std::filesystem::path& path, const LabelVector& labels) {
  io::write_file(path, encode_labels(labels));
}

inline LabelVector decode_labels(std::vector<std::uint8_t> bytes) {
  io::Reader in(std::move(bytes));
  in.expect_magic("CIML");
  const auto n = in.get<std::uint64_t>();
  if (n > in.remaining() / 4) throw Error(ErrorCode::MalformedHeader, "label count too large", 4);
  LabelVector labels;
  labels.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto count = in.get<std::uint32_t>();
    if (count == 0) throw Error(ErrorCode::MalformedHeader, "empty label set", i);
    if (count > in.remaining() / 4) throw Error(ErrorCode::MalformedHeader, "label set overruns file", i);
    auto& set = labels.labels[i];
    set.resize(count);
    for (auto& label : set) label = in.get<std::uint32_t>();
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
  }
  if (in.remaining() != 0) throw Error(ErrorCode::MalformedHeader, "trailing bytes", in.offset());
  return labels;
}

inline LabelVector load_labels(const std::filesystem::path& path) {
  return decode_labels(io::read_file(path));
}

// ---------------------------------------------------------------------------
// Augmentation and synthesis

inline constexpr int kAugmentRetries = 16;

namespace detail {

inline FeatureMatrix augment_view(const FeatureMatrix& base, const AugmentConfig& cfg, Rng& rng) {
  FeatureMatrix out(base.rows(), base.cols());
  for (Eigen::Index i = 0; i < base.rows(); ++i) {
    bool nonzero = false;
    for (int attempt = 0; attempt <= kAugmentRetries && !nonzero; ++attempt) {
      for (Eigen::Index j = 0; j < base.cols(); ++j) {
        float v = base(i, j);
        if (cfg.noise_sigma > 0.0) v += static_cast<float>(cfg.noise_sigma * rng.normal());
        if (cfg.dropout_rate > 0.0 && rng.uniform() < cfg.dropout_rate) v = 0.0f;
        out(i, j) = v;
        nonzero = nonzero || v != 0.0f;
      }
    }
    if (!nonzero) {
      throw Error(ErrorCode::DegenerateAugmentation,
                  "row stayed zero after " + std::to_string(kAugmentRetries) + " retries",
                  static_cast<std::size_t>(i));
    }
  }
  return out;
}

}  // namespace detail

/// Two independently perturbed copies of `base`: Gaussian noise, then
/// coordinate dropout. Deterministic in `cfg.seed`.
inline FeatureViewPair augment_features(const FeatureMatrix& base, const AugmentConfig& cfg,
                                        std::vector<std::uint64_t> ids = {}) {
  require(cfg.noise_sigma >= 0.0 && std::isfinite(cfg.noise_sigma), "noise_sigma must be >= 0");
  require(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0, "dropout_rate must be in [0,1)");
  validate_rows(base);
  if (ids.empty()) ids = sequential_ids(static_cast<std::size_t>(base.rows()));
  Rng rng(cfg.seed);
  Rng rng1 = rng.fork();
  Rng rng2 = rng.fork();
  FeatureViewPair views;
  views.view1 = detail::augment_view(base, cfg, rng1);
  views.view2 = detail::augment_view(base, cfg, rng2);
  views.ids = std::move(ids);
  views.stored_views = 2;
  validate(views);
  return views;
}

struct SyntheticDataset {
  FeatureViewPair base;  ///< single-view pair holding the clean points
  LabelVector labels;
  /// Held-out points drawn from the same cluster centers (may be empty).
  std::optional<FeatureViewPair> queries;
  LabelVector query_labels;
};

/// Gaussian blobs around `k_clusters` centers on a sphere of radius
/// `separation`. Items are cluster-major; queries follow with fresh ids.
inline SyntheticDataset make_synthetic(std::size_t k_clusters, std::size_t per_cluster,
                                       std::size_t d, double separation, std::uint64_t seed,
                                       std::size_t queries_per_cluster = 0) {
  require(k_clusters >= 2, "need at least 2 clusters");
  require(per_cluster >= 2, "need at least 2 points per cluster");
  require(d >= 1, "dimension must be >= 1");
  require(separation >= 0.0 && std::isfinite(separation), "separation must be >= 0");

  Rng rng(seed);
  Eigen::MatrixXd centers(static_cast<Eigen::Index>(k_clusters), static_cast<Eigen::Index>(d));
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    double norm = 0.0;
    do {
      for (Eigen::Index j = 0; j < centers.cols(); ++j) centers(c, j) = rng.normal();
      norm = centers.row(c).norm();
    } while (norm == 0.0);
    centers.row(c) *= separation / norm;
  }

  auto draw = [&](std::size_t per, LabelVector& labels) {
    FeatureMatrix points(static_cast<Eigen::Index>(k_clusters * per), static_cast<Eigen::Index>(d));
    labels.labels.clear();
    for (std::size_t c = 0; c < k_clusters; ++c) {
      for (std::size_t p = 0; p < per; ++p) {
        const auto row = static_cast<Eigen::Index>(c * per + p);
        do {
          for (Eigen::Index j = 0; j < points.cols(); ++j) {
            points(row, j) = static_cast<float>(centers(static_cast<Eigen::Index>(c), j) + rng.normal());
          }
        } while (points.row(row).isZero(0.0f));
        labels.labels.push_back({static_cast<std::uint32_t>(c)});
      }
    }
    return points;
  };

  SyntheticDataset out;
  FeatureMatrix base = draw(per_cluster, out.labels);
  out.base = make_single_view(std::move(base), sequential_ids(k_clusters * per_cluster));
  if (queries_per_cluster > 0) {
    FeatureMatrix q = draw(queries_per_cluster, out.query_labels);
    out.queries = make_single_view(std::move(q), sequential_ids(k_clusters * queries_per_cluster,
                                                                k_clusters * per_cluster));
  }
  return out;
}

}  // namespace cimon
