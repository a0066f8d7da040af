#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>

#include "cimon/error.hpp"
#include "cimon/simgraph.hpp"

namespace cimon {

/// Full-dataset similarity targets for one view: the signal matrix over
/// {-1, 0, +1} and per-pair weights, indexed by global item row.
struct SemanticTargets {
  SignMatrix graph;
  Eigen::MatrixXf weights;

  std::size_t n() const { return static_cast<std::size_t>(graph.rows()); }

  static SemanticTargets from(const SemanticInfo& info) { return {info.refined.signs, info.weights.values}; }
};

/// One loss value with its gradients with respect to both relaxed views.
struct LossTerm {
  double value = 0.0;
  Eigen::MatrixXd grad_v1;
  Eigen::MatrixXd grad_v2;
};

struct LossBreakdown {
  double psc = 0.0;
  double csc = 0.0;
  double cc = 0.0;
  double total = 0.0;
  double eta = 0.0;
  double tau = 0.5;
};

struct LossConfig {
  double eta = 0.3;
  double tau = 0.5;
  bool include_diagonal = true;
  /// Off: only view 1's parallel term is kept and the cross term is dropped.
  bool semantic_consistency = true;
  /// Off: eta is forced to 0 and the contrastive term is not evaluated.
  bool contrastive = true;
};

/// H = V V^T / L.
inline Eigen::MatrixXd code_similarity(const Eigen::MatrixXd& codes) {
  require(codes.cols() >= 1, "code length L must be >= 1");
  return codes * codes.transpose() / static_cast<double>(codes.cols());
}

struct BatchTargets {
  Eigen::MatrixXd graph;
  Eigen::MatrixXd weights;
};

inline BatchTargets gather(const SemanticTargets& targets, std::span<const std::size_t> batch,
                           bool include_diagonal = true) {
  const auto m = static_cast<Eigen::Index>(batch.size());
  BatchTargets out{Eigen::MatrixXd(m, m), Eigen::MatrixXd(m, m)};
  for (std::size_t a = 0; a < batch.size(); ++a) {
    if (batch[a] >= targets.n()) throw Error(ErrorCode::IndexOutOfRange, "batch item", batch[a]);
  }
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto i = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < m; ++b) {
      const auto j = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(b)]);
      out.graph(a, b) = targets.graph(i, j);
      out.weights(a, b) = targets.weights(i, j);
    }
  }
  if (!include_diagonal) out.weights.diagonal().setZero();
  return out;
}

namespace detail {

/// (1/M^2) sum_ij W_ij (H_ij - S_ij)^2 and its gradient with respect to the
/// codes that produced H.
inline double weighted_similarity_term(const Eigen::MatrixXd& codes, const BatchTargets& target,
                                       Eigen::MatrixXd& grad) {
  const double m2 = static_cast<double>(codes.rows()) * static_cast<double>(codes.rows());
  const Eigen::MatrixXd residual = code_similarity(codes) - target.graph;
  const double value = target.weights.cwiseProduct(residual.cwiseProduct(residual)).sum() / m2;
  const Eigen::MatrixXd dh = 2.0 / m2 * target.weights.cwiseProduct(residual);
  grad += (dh + dh.transpose()) * codes / static_cast<double>(codes.cols());
  return value;
}

inline void check_views(const Eigen::MatrixXd& v1, const Eigen::MatrixXd& v2, std::size_t batch) {
  if (v1.rows() != v2.rows() || v1.cols() != v2.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "view code matrices differ in shape");
  }
  if (static_cast<std::size_t>(v1.rows()) != batch) {
    throw Error(ErrorCode::ShapeMismatch, "code rows differ from batch size");
  }
}

}  // namespace detail

/// Matches each view's code similarity with its own view's targets.
inline LossTerm parallel_semantic_loss(const Eigen::MatrixXd& v1, const Eigen::MatrixXd& v2,
                                       const SemanticTargets& t1, const SemanticTargets& t2,
                                       std::span<const std::size_t> batch, bool include_diagonal = true) {
  detail::check_views(v1, v2, batch.size());
  LossTerm out{0.0, Eigen::MatrixXd::Zero(v1.rows(), v1.cols()), Eigen::MatrixXd::Zero(v2.rows(), v2.cols())};
  out.value += detail::weighted_similarity_term(v1, gather(t1, batch, include_diagonal), out.grad_v1);
  out.value += detail::weighted_similarity_term(v2, gather(t2, batch, include_diagonal), out.grad_v2);
  return out;
}

/// Matches each view's code similarity with the other view's targets.
inline LossTerm cross_semantic_loss(const Eigen::MatrixXd& v1, const Eigen::MatrixXd& v2,
                                    const SemanticTargets& t1, const SemanticTargets& t2,
                                    std::span<const std::size_t> batch, bool include_diagonal = true) {
  detail::check_views(v1, v2, batch.size());
  LossTerm out{0.0, Eigen::MatrixXd::Zero(v1.rows(), v1.cols()), Eigen::MatrixXd::Zero(v2.rows(), v2.cols())};
  out.value += detail::weighted_similarity_term(v2, gather(t1, batch, include_diagonal), out.grad_v2);
  out.value += detail::weighted_similarity_term(v1, gather(t2, batch, include_diagonal), out.grad_v1);
  return out;
}

/// Two-view contrastive loss over cosine similarity of relaxed codes. For
/// item i in view m the positive is i's other view; the normalizer Z sums
/// over every code (both views) of the other M-1 items, so the positive pair
/// is not part of it.
inline LossTerm contrastive_loss(const Eigen::MatrixXd& v1, const Eigen::MatrixXd& v2, double tau) {
  require(tau > 0.0, "temperature must be > 0");
  if (v1.rows() != v2.rows() || v1.cols() != v2.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "view code matrices differ in shape");
  }
  const Eigen::Index m = v1.rows();
  if (m < 2) throw Error(ErrorCode::BatchTooSmall, "contrastive loss needs M >= 2", static_cast<std::size_t>(m));

  // Rows 0..M-1 hold view 1, rows M..2M-1 view 2.
  Eigen::MatrixXd codes(2 * m, v1.cols());
  codes << v1, v2;
  Eigen::VectorXd norms(2 * m);
  Eigen::MatrixXd unit(2 * m, v1.cols());
  for (Eigen::Index a = 0; a < 2 * m; ++a) {
    norms(a) = codes.row(a).norm();
    if (norms(a) == 0.0) throw Error(ErrorCode::ZeroCodeRow, "zero code row", static_cast<std::size_t>(a % m));
    unit.row(a) = codes.row(a) / norms(a);
  }
  const Eigen::MatrixXd sim = unit * unit.transpose() / tau;

  // Softmax over each anchor's negatives (every row of a different item).
  Eigen::MatrixXd prob = Eigen::MatrixXd::Zero(2 * m, 2 * m);
  double value = 0.0;
  for (Eigen::Index a = 0; a < 2 * m; ++a) {
    const Eigen::Index item = a % m;
    double row_max = -std::numeric_limits<double>::infinity();
    for (Eigen::Index b = 0; b < 2 * m; ++b)
      if (b % m != item) row_max = std::max(row_max, sim(a, b));
    double z = 0.0;
    for (Eigen::Index b = 0; b < 2 * m; ++b) {
      if (b % m == item) continue;
      prob(a, b) = std::exp(sim(a, b) - row_max);
      z += prob(a, b);
    }
    prob.row(a) /= z;
    const double log_z = row_max + std::log(z);
    const double positive = sim(item, item + m);
    value += log_z - positive;
  }
  const double scale = 1.0 / (2.0 * static_cast<double>(m));
  value *= scale;

  // dL/dunit: log Z terms give (P + P^T) U / tau; each positive appears in
  // both anchors' terms, giving -2 u_partner / tau.
  Eigen::MatrixXd grad_unit = (prob + prob.transpose()) * unit / tau;
  for (Eigen::Index i = 0; i < m; ++i) {
    grad_unit.row(i) -= 2.0 * unit.row(i + m) / tau;
    grad_unit.row(i + m) -= 2.0 * unit.row(i) / tau;
  }
  grad_unit *= scale;

  // Through the normalization u = v / |v|: dv = (g - u (u.g)) / |v|.
  Eigen::MatrixXd grad(2 * m, v1.cols());
  for (Eigen::Index a = 0; a < 2 * m; ++a) {
    const double proj = unit.row(a).dot(grad_unit.row(a));
    grad.row(a) = (grad_unit.row(a) - proj * unit.row(a)) / norms(a);
  }
  return {value, grad.topRows(m), grad.bottomRows(m)};
}

struct TotalLoss {
  LossBreakdown breakdown;
  Eigen::MatrixXd grad_v1;
  Eigen::MatrixXd grad_v2;
};

/// psc + csc + eta * cc with the switches in `cfg` applied.
inline TotalLoss total_loss(const Eigen::MatrixXd& v1, const Eigen::MatrixXd& v2, const SemanticTargets& t1,
                            const SemanticTargets& t2, std::span<const std::size_t> batch,
                            const LossConfig& cfg) {
  require(cfg.eta >= 0.0, "eta must be >= 0");
  require(cfg.tau > 0.0, "tau must be > 0");
  detail::check_views(v1, v2, batch.size());
  TotalLoss out;
  out.grad_v1 = Eigen::MatrixXd::Zero(v1.rows(), v1.cols());
  out.grad_v2 = Eigen::MatrixXd::Zero(v2.rows(), v2.cols());
  auto& b = out.breakdown;
  b.tau = cfg.tau;
  b.eta = cfg.contrastive ? cfg.eta : 0.0;

  if (cfg.semantic_consistency) {
    const LossTerm psc = parallel_semantic_loss(v1, v2, t1, t2, batch, cfg.include_diagonal);
    const LossTerm csc = cross_semantic_loss(v1, v2, t1, t2, batch, cfg.include_diagonal);
    b.psc = psc.value;
    b.csc = csc.value;
    out.grad_v1 += psc.grad_v1 + csc.grad_v1;
    out.grad_v2 += psc.grad_v2 + csc.grad_v2;
  } else {
    b.psc = detail::weighted_similarity_term(v1, gather(t1, batch, cfg.include_diagonal), out.grad_v1);
  }
  if (cfg.contrastive) {
    const LossTerm cc = contrastive_loss(v1, v2, cfg.tau);
    b.cc = cc.value;
    out.grad_v1 += b.eta * cc.grad_v1;
    out.grad_v2 += b.eta * cc.grad_v2;
  }
  b.total = b.psc + b.csc + b.eta * b.cc;
  return out;
}

}  // namespace cimon
