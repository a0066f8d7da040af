#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "cimon/binary_io.hpp"
#include "cimon/error.hpp"
#include "cimon/ingest.hpp"
#include "cimon/random.hpp"

namespace cimon {

using SignMatrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DistanceMatrix {
  Eigen::MatrixXd values;  ///< symmetric, zero diagonal, entries in [0, 2]

  std::size_t n() const { return static_cast<std::size_t>(values.rows()); }
  double operator()(std::size_t i, std::size_t j) const {
    return values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
};

struct PseudoGraph {
  SignMatrix signs;  ///< over {-1, +1}, +1 on the diagonal
  double threshold = 0.0;

  std::size_t n() const { return static_cast<std::size_t>(signs.rows()); }
};

struct ClusterAssignment {
  std::vector<std::uint32_t> labels;
  std::uint32_t k = 0;

  std::size_t n() const { return labels.size(); }
};

struct RefinedGraph {
  SignMatrix signs;  ///< over {-1, 0, +1}, +1 on the diagonal

  std::size_t n() const { return static_cast<std::size_t>(signs.rows()); }
};

/// Two half-Gaussians over cosine distance: N(m1, sigma1^2) models the
/// similar lobe near 0 and N(m2, sigma2^2) the dissimilar lobe.
struct HalfGaussianFit {
  double m1 = 0.0;
  double sigma1 = 1.0;
  double m2 = 0.0;
  double sigma2 = 1.0;
};

struct ConfidenceMatrix {
  Eigen::MatrixXf values;  ///< symmetric, entries in [0, 1]

  std::size_t n() const { return static_cast<std::size_t>(values.rows()); }
};

struct SemanticInfo {
  RefinedGraph refined;
  ConfidenceMatrix weights;
  HalfGaussianFit fit;
  ClusterAssignment clusters;
  double threshold = 0.0;

  std::size_t n() const { return refined.n(); }
};

inline constexpr double kMaxCosineDistance = 2.0;

// ---------------------------------------------------------------------------
// Cosine distances

inline DistanceMatrix cosine_distances(const FeatureMatrix& features) {
  const Eigen::Index n = features.rows();
  Eigen::MatrixXd unit = features.cast<double>();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = unit.row(i).norm();
    if (norm == 0.0) throw Error(ErrorCode::ZeroRow, "cosine distance of zero row", static_cast<std::size_t>(i));
    unit.row(i) /= norm;
  }
  DistanceMatrix out;
  out.values = Eigen::MatrixXd::Ones(n, n) - unit * unit.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = std::clamp(out.values(i, j), 0.0, kMaxCosineDistance);
      out.values(i, j) = d;
      out.values(j, i) = d;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo-graph and refinement

inline std::int8_t pseudo_sign(double distance, double threshold) {
  return distance <= threshold ? std::int8_t{1} : std::int8_t{-1};
}

inline PseudoGraph build_pseudo_graph(const DistanceMatrix& distances, double threshold) {
  require(threshold > 0.0 && threshold < kMaxCosineDistance, "threshold t must lie in (0, 2)");
  const auto n = static_cast<Eigen::Index>(distances.n());
  PseudoGraph g{SignMatrix(n, n), threshold};
  for (Eigen::Index i = 0; i < n; ++i) {
    g.signs(i, i) = 1;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto s = pseudo_sign(distances.values(i, j), threshold);
      g.signs(i, j) = s;
      g.signs(j, i) = s;
    }
  }
  return g;
}

inline std::int8_t refined_sign(std::int8_t local, bool same_cluster) {
  if (same_cluster && local == 1) return 1;
  if (!same_cluster && local == -1) return -1;
  return 0;
}

/// Keeps a local similarity signal only where cluster co-membership agrees.
inline RefinedGraph refine_graph(const PseudoGraph& graph, const ClusterAssignment& clusters) {
  require(graph.n() == clusters.n(), "pseudo-graph and cluster assignment disagree on n");
  const auto n = static_cast<Eigen::Index>(graph.n());
  RefinedGraph out{SignMatrix(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.signs(i, i) = 1;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const bool same = clusters.labels[static_cast<std::size_t>(i)] ==
                        clusters.labels[static_cast<std::size_t>(j)];
      const auto s = refined_sign(graph.signs(i, j), same);
      out.signs(i, j) = s;
      out.signs(j, i) = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectral clustering: Gaussian affinity on cosine distance (median
// bandwidth), symmetric-normalized Laplacian, k-means on row-normalized
// eigenvectors.

struct KMeansOptions {
  int max_iterations = 100;
  int restarts = 8;
};

namespace detail {

struct KMeansRun {
  std::vector<std::uint32_t> labels;
  double inertia = std::numeric_limits<double>::infinity();
};

inline double squared_distance(const Eigen::MatrixXd& points, Eigen::Index i,
                               const Eigen::MatrixXd& centers, Eigen::Index c) {
  return (points.row(i) - centers.row(c)).squaredNorm();
}

inline Eigen::MatrixXd kmeans_plus_plus(const Eigen::MatrixXd& points, Eigen::Index k, Rng& rng) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd centers(k, points.cols());
  centers.row(0) = points.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (Eigen::Index c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& d = nearest[static_cast<std::size_t>(i)];
      d = std::min(d, squared_distance(points, i, centers, c - 1));
      total += d;
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= nearest[static_cast<std::size_t>(i)];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centers.row(c) = points.row(pick);
  }
  return centers;
}

/// Moves the point of the largest cluster farthest from its centroid into
/// each empty cluster.
inline void fill_empty_clusters(const Eigen::MatrixXd& points, Eigen::MatrixXd& centers,
                                std::vector<std::uint32_t>& labels) {
  const Eigen::Index k = centers.rows();
  for (;;) {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
    for (auto l : labels) ++sizes[l];
    const auto empty = std::find(sizes.begin(), sizes.end(), 0u);
    if (empty == sizes.end()) return;
    const auto largest = static_cast<std::uint32_t>(
        std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    if (sizes[largest] < 2) return;
    Eigen::Index farthest = -1;
    double best = -1.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      if (labels[static_cast<std::size_t>(i)] != largest) continue;
      const double d = squared_distance(points, i, centers, largest);
      if (d > best) {
        best = d;
        farthest = i;
      }
    }
    const auto target = static_cast<std::uint32_t>(empty - sizes.begin());
    labels[static_cast<std::size_t>(farthest)] = target;
    centers.row(target) = points.row(farthest);
  }
}

inline KMeansRun kmeans_once(const Eigen::MatrixXd& points, Eigen::Index k,
                             const KMeansOptions& opts, Rng& rng) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd centers = kmeans_plus_plus(points, k, rng);
  KMeansRun run;
  run.labels.assign(static_cast<std::size_t>(n), 0);

  auto assign = [&] {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best_c = 0;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < k; ++c) {
        const double d = squared_distance(points, i, centers, c);
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      auto& l = run.labels[static_cast<std::size_t>(i)];
      changed = changed || l != static_cast<std::uint32_t>(best_c);
      l = static_cast<std::uint32_t>(best_c);
    }
    return changed;
  };

  assign();
  for (int it = 0; it < opts.max_iterations; ++it) {
    fill_empty_clusters(points, centers, run.labels);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto l = run.labels[static_cast<std::size_t>(i)];
      sums.row(l) += points.row(i);
      counts[l] += 1.0;
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0.0) centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
    }
    if (!assign()) break;
  }
  fill_empty_clusters(points, centers, run.labels);

  run.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    run.inertia += squared_distance(points, i, centers, run.labels[static_cast<std::size_t>(i)]);
  }
  return run;
}

inline double median_off_diagonal(const DistanceMatrix& distances) {
  const auto n = static_cast<Eigen::Index>(distances.n());
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) values.push_back(distances.values(i, j));
  if (values.empty()) return 0.0;
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

}  // namespace detail

/// k-means with k-means++ seeding; the restart with the lowest inertia wins.
inline ClusterAssignment kmeans(const Eigen::MatrixXd& points, std::uint32_t k, std::uint64_t seed,
                                const KMeansOptions& opts = {}) {
  require(k >= 1 && static_cast<Eigen::Index>(k) <= points.rows(), "k-means needs 1 <= k <= n");
  Rng rng(seed);
  detail::KMeansRun best;
  for (int r = 0; r < std::max(1, opts.restarts); ++r) {
    Rng restart_rng = rng.fork();
    auto run = detail::kmeans_once(points, k, opts, restart_rng);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return {std::move(best.labels), k};
}

inline constexpr double kDegreeRegularizer = 1e-12;

/// Row-normalized spectral embedding: the eigenvectors of the K smallest
/// eigenvalues of the symmetric-normalized Laplacian.
inline Eigen::MatrixXd spectral_embedding(const DistanceMatrix& distances, std::uint32_t k) {
  const auto n = static_cast<Eigen::Index>(distances.n());
  double sigma = detail::median_off_diagonal(distances);
  if (sigma <= 0.0) sigma = 1.0;  // every pair coincides; any bandwidth gives A = 1
  Eigen::MatrixXd affinity = (-distances.values.array().square() / (2.0 * sigma * sigma)).exp().matrix();
  affinity.diagonal().setZero();

  Eigen::VectorXd inv_sqrt_degree(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    inv_sqrt_degree(i) = 1.0 / std::sqrt(affinity.row(i).sum() + kDegreeRegularizer);
  }
  // L_sym = I - D^-1/2 A D^-1/2; its smallest eigenvalues are the largest of
  // the normalized affinity, but solving L_sym directly keeps the ordering plain.
  Eigen::MatrixXd laplacian = -(inv_sqrt_degree.asDiagonal() * affinity * inv_sqrt_degree.asDiagonal());
  laplacian.diagonal().array() += 1.0;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(laplacian);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::EigenFailure, "Laplacian eigendecomposition did not converge");
  }
  Eigen::MatrixXd embedding = solver.eigenvectors().leftCols(k);  // eigenvalues ascend
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = embedding.row(i).norm();
    if (norm > 0.0) embedding.row(i) /= norm;
  }
  return embedding;
}

inline ClusterAssignment spectral_cluster(const DistanceMatrix& distances, std::uint32_t k,
                                          std::uint64_t seed) {
  require(k >= 2, "spectral clustering needs K >= 2");
  require(distances.n() > k, "spectral clustering needs n > K");
  return kmeans(spectral_embedding(distances, k), k, seed);
}

inline ClusterAssignment spectral_cluster(const FeatureMatrix& features, std::uint32_t k,
                                          std::uint64_t seed) {
  return spectral_cluster(cosine_distances(features), k, seed);
}

// ---------------------------------------------------------------------------
// Half-Gaussian fit

inline constexpr int kHistogramBins = 64;
inline constexpr int kSmoothingWindow = 5;
inline constexpr double kSigmaFloor = 1e-4;
/// Local maxima below this fraction of the global peak are treated as noise.
inline constexpr double kModeFloor = 0.05;

namespace detail {

inline int histogram_bin(double d) {
  const int bin = static_cast<int>(d / kMaxCosineDistance * kHistogramBins);
  return std::clamp(bin, 0, kHistogramBins - 1);
}

}  // namespace detail

/// Fits the two lobes of a cosine-distance sample. Modes come from a
/// smoothed 64-bin histogram on [0, 2] (leftmost and rightmost local
/// maxima, each refined to the mean of the raw samples in its bin); the
/// deviations are mirrored half-sample estimates on the outer side of each
/// mode.
inline HalfGaussianFit fit_half_gaussians(std::span<const double> distances) {
  if (distances.size() < 6) {
    throw Error(ErrorCode::InsufficientPairs,
                "need at least 6 pairwise distances, got " + std::to_string(distances.size()));
  }
  std::vector<double> hist(kHistogramBins, 0.0);
  for (double d : distances) hist[static_cast<std::size_t>(detail::histogram_bin(d))] += 1.0;

  std::vector<double> smooth(kHistogramBins, 0.0);
  const int half = kSmoothingWindow / 2;
  for (int b = 0; b < kHistogramBins; ++b) {
    double sum = 0.0;
    for (int w = std::max(0, b - half); w <= std::min(kHistogramBins - 1, b + half); ++w)
      sum += hist[static_cast<std::size_t>(w)];
    smooth[static_cast<std::size_t>(b)] = sum / kSmoothingWindow;
  }

  // A plateau of equal bins counts as one maximum located at its middle bin.
  const double peak = *std::max_element(smooth.begin(), smooth.end());
  std::vector<int> modes;
  for (int b = 0; b < kHistogramBins;) {
    int e = b;
    while (e + 1 < kHistogramBins && smooth[static_cast<std::size_t>(e + 1)] == smooth[static_cast<std::size_t>(b)]) ++e;
    const double v = smooth[static_cast<std::size_t>(b)];
    const bool left_ok = b == 0 || smooth[static_cast<std::size_t>(b - 1)] < v;
    const bool right_ok = e == kHistogramBins - 1 || smooth[static_cast<std::size_t>(e + 1)] < v;
    if (left_ok && right_ok && v > 0.0 && v >= kModeFloor * peak) modes.push_back((b + e) / 2);
    b = e + 1;
  }

  auto refine = [&](int bin) {
    double sum = 0.0;
    std::size_t count = 0;
    for (double d : distances) {
      if (detail::histogram_bin(d) == bin) {
        sum += d;
        ++count;
      }
    }
    const double center = (bin + 0.5) * kMaxCosineDistance / kHistogramBins;
    return count > 0 ? sum / static_cast<double>(count) : center;
  };

  HalfGaussianFit fit;
  fit.m1 = std::clamp(refine(modes.front()), 0.0, kMaxCosineDistance);
  fit.m2 = modes.size() > 1 ? std::clamp(refine(modes.back()), 0.0, kMaxCosineDistance) : fit.m1;

  double lo_sum = 0.0, hi_sum = 0.0;
  std::size_t lo_count = 0, hi_count = 0;
  for (double d : distances) {
    if (d <= fit.m1) {
      lo_sum += (d - fit.m1) * (d - fit.m1);
      ++lo_count;
    }
    if (d >= fit.m2) {
      hi_sum += (d - fit.m2) * (d - fit.m2);
      ++hi_count;
    }
  }
  fit.sigma1 = std::max(kSigmaFloor, lo_count ? std::sqrt(lo_sum / static_cast<double>(lo_count)) : 0.0);
  fit.sigma2 = std::max(kSigmaFloor, hi_count ? std::sqrt(hi_sum / static_cast<double>(hi_count)) : 0.0);
  return fit;
}

inline std::vector<double> upper_triangle(const DistanceMatrix& distances) {
  const auto n = static_cast<Eigen::Index>(distances.n());
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) values.push_back(distances.values(i, j));
  return values;
}

inline HalfGaussianFit fit_half_gaussians(const DistanceMatrix& distances) {
  const auto values = upper_triangle(distances);
  return fit_half_gaussians(std::span<const double>(values));
}

// ---------------------------------------------------------------------------
// Confidence weights

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline constexpr double kDegenerateDenominator = 1e-12;

/// Weight of a single pair with a non-zero refined signal. Near-similar
/// pairs (d <= t) are scored against the left lobe, the rest against the
/// right lobe; both ends of [0, 2] get weight 1 and d = t gets 0.
inline double confidence_weight(double d, double threshold, const HalfGaussianFit& fit) {
  auto cdf = [](double x, double m, double s) { return standard_normal_cdf((x - m) / s); };
  double w = 0.0;
  if (d <= threshold) {
    const double den = cdf(threshold, fit.m1, fit.sigma1) - cdf(0.0, fit.m1, fit.sigma1);
    if (std::abs(den) < kDegenerateDenominator) return d <= 0.0 ? 1.0 : 0.0;
    w = (cdf(threshold, fit.m1, fit.sigma1) - cdf(d, fit.m1, fit.sigma1)) / den;
  } else {
    const double den = cdf(kMaxCosineDistance, fit.m2, fit.sigma2) - cdf(threshold, fit.m2, fit.sigma2);
    if (std::abs(den) < kDegenerateDenominator) return d >= kMaxCosineDistance ? 1.0 : 0.0;
    w = (cdf(d, fit.m2, fit.sigma2) - cdf(threshold, fit.m2, fit.sigma2)) / den;
  }
  return std::clamp(w, 0.0, 1.0);
}

/// `graph` may be any signal matrix over {-1, 0, +1}; zero entries get weight 0.
inline ConfidenceMatrix confidence_weights(const DistanceMatrix& distances, const SignMatrix& graph,
                                           double threshold, const HalfGaussianFit& fit) {
  require(threshold > 0.0 && threshold < kMaxCosineDistance, "threshold t must lie in (0, 2)");
  require(fit.sigma1 > 0.0 && fit.sigma2 > 0.0, "half-Gaussian deviations must be positive");
  require(static_cast<std::size_t>(graph.rows()) == distances.n(), "graph and distances disagree on n");
  const auto n = static_cast<Eigen::Index>(distances.n());
  ConfidenceMatrix out{Eigen::MatrixXf::Zero(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      if (graph(i, j) == 0) continue;
      const auto w = static_cast<float>(confidence_weight(distances.values(i, j), threshold, fit));
      out.values(i, j) = w;
      out.values(j, i) = w;
    }
  }
  return out;
}

inline ConfidenceMatrix confidence_weights(const DistanceMatrix& distances, const RefinedGraph& refined,
                                           double threshold, const HalfGaussianFit& fit) {
  return confidence_weights(distances, refined.signs, threshold, fit);
}

// ---------------------------------------------------------------------------
// Composition

inline SemanticInfo generate_semantic_info(const DistanceMatrix& distances, double threshold,
                                           std::uint32_t k, std::uint64_t seed) {
  const PseudoGraph graph = build_pseudo_graph(distances, threshold);
  SemanticInfo info;
  info.threshold = threshold;
  info.clusters = spectral_cluster(distances, k, seed);
  info.refined = refine_graph(graph, info.clusters);
  info.fit = fit_half_gaussians(distances);
  info.weights = confidence_weights(distances, info.refined, threshold, info.fit);
  return info;
}

inline SemanticInfo generate_semantic_info(const FeatureMatrix& features, double threshold,
                                           std::uint32_t k, std::uint64_t seed) {
  return generate_semantic_info(cosine_distances(features), threshold, k, seed);
}

// ---------------------------------------------------------------------------
// CIMS sidecar: magic | n u64 | t f64 | K u32 | m1 s1 m2 s2 f64 | labels n u32 |
// refined graph, 2 bits per entry, row-major, LSB-first (00 -> 0, 01 -> +1,
// 10 -> -1) | weights f32 upper triangle including the diagonal.

inline std::vector<std::uint8_t> encode_semantic_info(const SemanticInfo& info) {
  const auto n = static_cast<Eigen::Index>(info.n());
  std::vector<std::uint8_t> out;
  io::put_magic(out, "CIMS");
  io::put<std::uint64_t>(out, static_cast<std::uint64_t>(n));
  io::put<double>(out, info.threshold);
  io::put<std::uint32_t>(out, info.clusters.k);
  io::put<double>(out, info.fit.m1);
  io::put<double>(out, info.fit.sigma1);
  io::put<double>(out, info.fit.m2);
  io::put<double>(out, info.fit.sigma2);
  for (auto c : info.clusters.labels) io::put<std::uint32_t>(out, c);
  std::uint8_t acc = 0;
  int filled = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const std::int8_t s = info.refined.signs(i, j);
      const std::uint8_t code = s == 1 ? 0b01 : (s == -1 ? 0b10 : 0b00);
      acc |= static_cast<std::uint8_t>(code << (2 * filled));
      if (++filled == 4) {
        out.push_back(acc);
        acc = 0;
        filled = 0;
      }
    }
  }
  if (filled > 0) out.push_back(acc);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) io::put<float>(out, info.weights.values(i, j));
  return out;
}

inline SemanticInfo decode_semantic_info(std::vector<std::uint8_t> bytes) {
  io::Reader in(std::move(bytes));
  in.expect_magic("CIMS");
  SemanticInfo info;
  const auto n64 = in.get<std::uint64_t>();
  info.threshold = in.get<double>();
  info.clusters.k = in.get<std::uint32_t>();
  info.fit.m1 = in.get<double>();
  info.fit.sigma1 = in.get<double>();
  info.fit.m2 = in.get<double>();
  info.fit.sigma2 = in.get<double>();
  const std::uint64_t packed = (n64 * n64 + 3) / 4;
  const std::uint64_t expected = n64 * 4 + packed + n64 * (n64 + 1) / 2 * 4;
  if (n64 < 2 || n64 > (1ULL << 20) || in.remaining() != expected) {
    throw Error(ErrorCode::MalformedHeader, "sidecar size does not match n=" + std::to_string(n64), 4);
  }
  const auto n = static_cast<Eigen::Index>(n64);
  info.clusters.labels.resize(n64);
  for (auto& c : info.clusters.labels) {
    c = in.get<std::uint32_t>();
    if (c >= info.clusters.k) throw Error(ErrorCode::MalformedHeader, "cluster id out of range");
  }
  info.refined.signs.resize(n, n);
  std::uint8_t acc = 0;
  int left = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (left == 0) {
        acc = in.byte();
        left = 4;
      }
      const std::uint8_t code = acc & 0b11;
      acc = static_cast<std::uint8_t>(acc >> 2);
      --left;
      if (code == 0b11) throw Error(ErrorCode::MalformedHeader, "invalid graph code");
      info.refined.signs(i, j) = code == 0b01 ? 1 : (code == 0b10 ? -1 : 0);
    }
  }
  info.weights.values.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const float w = in.get<float>();
      info.weights.values(i, j) = w;
      info.weights.values(j, i) = w;
    }
  }
  return info;
}

inline void save_semantic_info(const std::filesystem::path& path, const SemanticInfo& info) {
  io::write_file(path, encode_semantic_info(info));
}

inline SemanticInfo load_semantic_info(const std::filesystem::path& path) {
  return decode_semantic_info(io::read_file(path));
}

}  // namespace cimon
