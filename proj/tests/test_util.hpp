#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "cimon/evalkit.hpp"
#include "cimon/ingest.hpp"
#include "cimon/random.hpp"

namespace cimon::testing {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    Rng rng(static_cast<std::uint64_t>(std::hash<std::string>{}(std::filesystem::current_path().string())) +
            static_cast<std::uint64_t>(++counter) * 7919u + static_cast<std::uint64_t>(::getpid()));
    path_ = std::filesystem::temp_directory_path() / ("cimon_test_" + std::to_string(rng.next_u64()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

inline FeatureMatrix random_features(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  return random_matrix(rows, cols, rng).cast<float>();
}

inline BinaryCodes random_codes(std::size_t n, std::size_t length, Rng& rng) {
  BinaryCodes codes{CodeMatrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(length))};
  for (Eigen::Index i = 0; i < codes.bits.rows(); ++i)
    for (Eigen::Index j = 0; j < codes.bits.cols(); ++j) codes.bits(i, j) = rng.below(2) ? 1 : -1;
  return codes;
}

/// Central finite differences of a scalar function of a matrix.
inline Eigen::MatrixXd numeric_gradient(const std::function<double(const Eigen::MatrixXd&)>& f,
                                        const Eigen::MatrixXd& x, double step = 1e-5) {
  Eigen::MatrixXd grad(x.rows(), x.cols());
  Eigen::MatrixXd probe = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double saved = probe(i, j);
      probe(i, j) = saved + step;
      const double up = f(probe);
      probe(i, j) = saved - step;
      const double down = f(probe);
      probe(i, j) = saved;
      grad(i, j) = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

/// Max over entries of |a - b| / max(|a|, |b|, floor). The floor keeps
/// entries that are zero up to finite-difference noise from dominating.
inline double max_relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.rows(); ++i) {
    for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
      const double a = analytic(i, j);
      const double b = numeric(i, j);
      worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}));
    }
  }
  return worst;
}

/// Brute-force MAP@R: explicit distances, stable sort, direct AP sum. Shares
/// no code with the evalkit ranking path.
inline double brute_force_map(const BinaryCodes& queries, const BinaryCodes& database, const LabelVector& qlabels,
                              const LabelVector& dblabels, std::size_t cutoff) {
  auto relevant = [](const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
    for (auto x : a)
      for (auto y : b)
        if (x == y) return true;
    return false;
  };
  double total = 0.0;
  for (Eigen::Index q = 0; q < queries.bits.rows(); ++q) {
    std::vector<std::pair<int, std::size_t>> order;
    for (Eigen::Index j = 0; j < database.bits.rows(); ++j) {
      int d = 0;
      for (Eigen::Index b = 0; b < queries.bits.cols(); ++b) d += queries.bits(q, b) != database.bits(j, b);
      order.emplace_back(d, static_cast<std::size_t>(j));
    }
    std::stable_sort(order.begin(), order.end(), [](auto& a, auto& b) { return a.first < b.first; });
    std::size_t total_relevant = 0;
    for (const auto& l : dblabels.labels) total_relevant += relevant(qlabels.labels[static_cast<std::size_t>(q)], l);
    if (total_relevant == 0) continue;
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < std::min(cutoff, order.size()); ++k) {
      if (relevant(qlabels.labels[static_cast<std::size_t>(q)], dblabels.labels[order[k].second])) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(k + 1);
      }
    }
    total += ap / static_cast<double>(std::min(cutoff, total_relevant));
  }
  return total / static_cast<double>(queries.bits.rows());
}

inline LabelVector single_labels(const std::vector<std::uint32_t>& ids) {
  LabelVector out;
  for (auto id : ids) out.labels.push_back({id});
  return out;
}

}  // namespace cimon::testing
