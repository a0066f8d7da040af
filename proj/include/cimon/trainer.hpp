#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cimon/error.hpp"
#include "cimon/evalkit.hpp"
#include "cimon/hashnet.hpp"
#include "cimon/ingest.hpp"
#include "cimon/losses.hpp"
#include "cimon/random.hpp"
#include "cimon/simgraph.hpp"

namespace cimon {

struct AblationFlags {
  bool use_refinement = true;
  bool use_confidence = true;
  bool use_semantic_consistency = true;
  bool use_contrastive = true;

  bool operator==(const AblationFlags&) const = default;
};

/// Cumulative ablation ladder M1..M5: each variant switches on one more
/// component (refinement, confidence, two-view semantic consistency,
/// contrastive consistency).
inline AblationFlags ablation_variant(int m) {
  require(m >= 1 && m <= 5, "ablation variant must be 1..5");
  return {m >= 2, m >= 3, m >= 4, m >= 5};
}

struct TrainConfig {
  double t = 0.1;
  std::uint32_t K = 70;
  double eta = 0.3;
  double tau = 0.5;
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t batch_size = 24;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::size_t code_length = 64;
  std::vector<std::size_t> hidden{512};
  AblationFlags ablation;
  bool include_diagonal = true;
  /// Applied when the input carries a single view.
  AugmentConfig augment{0.5, 0.1, 0};
  /// Emit final codes from the un-augmented base of a single-view input.
  bool encode_base = false;
  bool early_stop = false;
};

struct TrainReport {
  std::vector<LossBreakdown> history;  ///< mean over batches, one per epoch
  double wall_seconds = 0.0;
  std::size_t semantic_info_builds = 0;
  std::size_t epochs_run = 0;
};

struct TrainResult {
  HashModel model;
  BinaryCodes codes;
  TrainReport report;
  FeatureViewPair views;  ///< the two views actually trained on
  SemanticTargets targets1;
  SemanticTargets targets2;
  /// Full semantic info per view; present when refinement is on and the
  /// targets were mined from features.
  std::optional<SemanticInfo> info1;
  std::optional<SemanticInfo> info2;
};

inline constexpr double kEarlyStopTolerance = 1e-5;
inline constexpr std::size_t kEarlyStopWindow = 10;

namespace detail {

inline void validate_config(const TrainConfig& cfg) {
  require(cfg.batch_size >= 2, "batch size M must be >= 2");
  require(cfg.code_length >= 1, "code length L must be >= 1");
  require(cfg.t > 0.0 && cfg.t < 2.0, "threshold t must lie in (0, 2)");
  require(cfg.K >= 2, "cluster count K must be >= 2");
  require(cfg.eta >= 0.0, "eta must be >= 0");
  require(cfg.tau > 0.0, "tau must be > 0");
  require(cfg.learning_rate > 0.0, "learning rate must be > 0");
  require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, "momentum must be in [0, 1)");
}

/// Targets for one view under the ablation switches: without refinement the
/// raw pseudo-graph is used; without confidence every non-zero signal gets
/// weight 1.
struct MinedView {
  SemanticTargets targets;
  std::optional<SemanticInfo> info;
};

inline Eigen::MatrixXf unit_weights(const SignMatrix& graph) {
  return (graph.array() != 0).cast<float>().matrix();
}

inline MinedView mine_view(const FeatureMatrix& features, const TrainConfig& cfg, std::uint64_t seed) {
  const DistanceMatrix distances = cosine_distances(features);
  const PseudoGraph graph = build_pseudo_graph(distances, cfg.t);
  MinedView out;
  if (cfg.ablation.use_refinement) {
    SemanticInfo info;
    info.threshold = cfg.t;
    info.clusters = spectral_cluster(distances, cfg.K, seed);
    info.refined = refine_graph(graph, info.clusters);
    info.fit = fit_half_gaussians(distances);
    info.weights = confidence_weights(distances, info.refined, cfg.t, info.fit);
    out.targets.graph = info.refined.signs;
    out.targets.weights = cfg.ablation.use_confidence ? info.weights.values : unit_weights(info.refined.signs);
    out.info = std::move(info);
  } else {
    out.targets.graph = graph.signs;
    out.targets.weights = cfg.ablation.use_confidence
                              ? confidence_weights(distances, graph.signs, cfg.t, fit_half_gaussians(distances)).values
                              : unit_weights(graph.signs);
  }
  return out;
}

inline Eigen::MatrixXd gather_rows(const FeatureMatrix& x, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r])).cast<double>();
  return out;
}

inline LossConfig loss_config(const TrainConfig& cfg) {
  return {cfg.eta, cfg.tau, cfg.include_diagonal, cfg.ablation.use_semantic_consistency, cfg.ablation.use_contrastive};
}

/// The epoch/minibatch loop shared by both entry points.
inline TrainResult run_training(FeatureViewPair views, const FeatureMatrix* base, SemanticTargets t1,
                                SemanticTargets t2, const TrainConfig& cfg, Rng& rng) {
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  result.model = init_model(views.d(), cfg.hidden, cfg.code_length, rng.next_u64());
  OptimState optim = make_optim_state(result.model, cfg.learning_rate, cfg.momentum);
  const LossConfig loss_cfg = loss_config(cfg);
  Rng shuffle_rng = rng.fork();

  const std::size_t n = views.n();
  const std::size_t m = cfg.batch_size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    LossBreakdown mean;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin + 2 <= n; begin += m) {
      const std::size_t end = std::min(begin + m, n);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      const auto rows = static_cast<Eigen::Index>(batch.size());

      // Both views go through the shared head as one stacked batch.
      Eigen::MatrixXd stacked(2 * rows, static_cast<Eigen::Index>(views.d()));
      stacked << gather_rows(views.view1, batch), gather_rows(views.view2, batch);
      auto [codes, cache] = forward_relaxed(result.model, stacked);
      const Eigen::MatrixXd v1 = codes.values.topRows(rows);
      const Eigen::MatrixXd v2 = codes.values.bottomRows(rows);

      const TotalLoss loss = total_loss(v1, v2, t1, t2, batch, loss_cfg);
      if (!std::isfinite(loss.breakdown.total)) {
        throw Error(ErrorCode::NonFiniteLoss,
                    "epoch " + std::to_string(epoch) + " batch " + std::to_string(batches), epoch);
      }
      Eigen::MatrixXd grad(2 * rows, codes.values.cols());
      grad << loss.grad_v1, loss.grad_v2;
      sgd_momentum_step(result.model, optim, backward(result.model, cache, grad));

      mean.psc += loss.breakdown.psc;
      mean.csc += loss.breakdown.csc;
      mean.cc += loss.breakdown.cc;
      mean.total += loss.breakdown.total;
      mean.eta = loss.breakdown.eta;
      mean.tau = loss.breakdown.tau;
      ++batches;
    }
    const double scale = batches ? 1.0 / static_cast<double>(batches) : 0.0;
    mean.psc *= scale;
    mean.csc *= scale;
    mean.cc *= scale;
    mean.total *= scale;
    result.report.history.push_back(mean);
    ++result.report.epochs_run;

    if (cfg.early_stop && result.report.history.size() > kEarlyStopWindow) {
      const auto& h = result.report.history;
      const double before = h[h.size() - 1 - kEarlyStopWindow].total;
      if (before - h.back().total < kEarlyStopTolerance) break;
    }
  }

  result.codes = encode(result.model, base != nullptr ? *base : views.view1);
  result.targets1 = std::move(t1);
  result.targets2 = std::move(t2);
  result.views = std::move(views);
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace detail

/// Full training run: (augment a single-view input,) mine semantic targets
/// once per view, then minibatch SGD on the consistency loss. Labels are
/// never an input.
inline TrainResult train(const FeatureViewPair& input, const TrainConfig& cfg) {
  detail::validate_config(cfg);
  validate(input);
  require(input.n() >= cfg.batch_size, "need at least M items");
  require(input.n() > cfg.K || !cfg.ablation.use_refinement, "need more items than clusters K");

  Rng rng(cfg.seed);
  FeatureViewPair views = input;
  if (input.stored_views == 1) {
    AugmentConfig aug = cfg.augment;
    aug.seed = cfg.augment.seed ^ cfg.seed;
    views = augment_features(input.view1, aug, input.ids);
  }
  const std::uint64_t mine_seed1 = rng.next_u64();
  const std::uint64_t mine_seed2 = rng.next_u64();
  detail::MinedView mined1 = detail::mine_view(views.view1, cfg, mine_seed1);
  detail::MinedView mined2 = detail::mine_view(views.view2, cfg, mine_seed2);

  const FeatureMatrix* base = cfg.encode_base && input.stored_views == 1 ? &input.view1 : nullptr;
  TrainResult result = detail::run_training(std::move(views), base, std::move(mined1.targets),
                                            std::move(mined2.targets), cfg, rng);
  result.report.semantic_info_builds = 2;
  result.info1 = std::move(mined1.info);
  result.info2 = std::move(mined2.info);
  return result;
}

/// Training from precomputed semantic info (e.g. CIMS sidecars). Refinement
/// is implied by the sidecar contents; `use_confidence = false` replaces the
/// stored weights with 0/1 indicators.
inline TrainResult train(const FeatureViewPair& views, const SemanticInfo& info1, const SemanticInfo& info2,
                         const TrainConfig& cfg) {
  detail::validate_config(cfg);
  validate(views);
  require(cfg.ablation.use_refinement, "precomputed semantic info already carries refinement");
  require(info1.n() == views.n() && info2.n() == views.n(), "semantic info and views disagree on n");
  require(views.n() >= cfg.batch_size, "need at least M items");
  Rng rng(cfg.seed);
  rng.next_u64();
  rng.next_u64();
  auto targets = [&](const SemanticInfo& info) {
    SemanticTargets t = SemanticTargets::from(info);
    if (!cfg.ablation.use_confidence) t.weights = detail::unit_weights(t.graph);
    return t;
  };
  TrainResult result = detail::run_training(views, nullptr, targets(info1), targets(info2), cfg, rng);
  result.info1 = info1;
  result.info2 = info2;
  return result;
}

// ---------------------------------------------------------------------------
// Flat key=value configuration

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string to_config_text(const TrainConfig& cfg) {
  std::ostringstream os;
  auto flag = [](bool b) { return b ? "true" : "false"; };
  std::string hidden;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(cfg.hidden[i]);
  os << "t=" << format_double(cfg.t) << "\n"
     << "K=" << cfg.K << "\n"
     << "eta=" << format_double(cfg.eta) << "\n"
     << "tau=" << format_double(cfg.tau) << "\n"
     << "learning_rate=" << format_double(cfg.learning_rate) << "\n"
     << "momentum=" << format_double(cfg.momentum) << "\n"
     << "batch_size=" << cfg.batch_size << "\n"
     << "epochs=" << cfg.epochs << "\n"
     << "seed=" << cfg.seed << "\n"
     << "code_length=" << cfg.code_length << "\n"
     << "hidden=" << hidden << "\n"
     << "use_refinement=" << flag(cfg.ablation.use_refinement) << "\n"
     << "use_confidence=" << flag(cfg.ablation.use_confidence) << "\n"
     << "use_semantic_consistency=" << flag(cfg.ablation.use_semantic_consistency) << "\n"
     << "use_contrastive=" << flag(cfg.ablation.use_contrastive) << "\n"
     << "include_diagonal=" << flag(cfg.include_diagonal) << "\n"
     << "noise_sigma=" << format_double(cfg.augment.noise_sigma) << "\n"
     << "dropout_rate=" << format_double(cfg.augment.dropout_rate) << "\n"
     << "augment_seed=" << cfg.augment.seed << "\n"
     << "encode_base=" << flag(cfg.encode_base) << "\n"
     << "early_stop=" << flag(cfg.early_stop) << "\n";
  return os.str();
}

namespace detail {

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  const auto last = s.find_last_not_of(" \t\r");
  return first == std::string::npos ? std::string() : s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  if constexpr (std::is_floating_point_v<T>) {
    std::size_t used = 0;
    try {
      out = static_cast<T>(std::stod(value, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size() || value.empty()) throw Error(ErrorCode::InvalidArgument, "bad number for " + key + ": " + value);
  } else {
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
      throw Error(ErrorCode::InvalidArgument, "bad integer for " + key + ": " + value);
    }
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw Error(ErrorCode::InvalidArgument, "bad boolean for " + key + ": " + value);
}

}  // namespace detail

/// Applies one `key=value` setting to `cfg`.
inline void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_number;
  if (key == "t") cfg.t = parse_number<double>(key, value);
  else if (key == "K") cfg.K = parse_number<std::uint32_t>(key, value);
  else if (key == "eta") cfg.eta = parse_number<double>(key, value);
  else if (key == "tau") cfg.tau = parse_number<double>(key, value);
  else if (key == "learning_rate") cfg.learning_rate = parse_number<double>(key, value);
  else if (key == "momentum") cfg.momentum = parse_number<double>(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_number<std::size_t>(key, value);
  else if (key == "epochs") cfg.epochs = parse_number<std::size_t>(key, value);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "code_length") cfg.code_length = parse_number<std::size_t>(key, value);
  else if (key == "hidden") {
    cfg.hidden.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) cfg.hidden.push_back(parse_number<std::size_t>(key, item));
    }
  } else if (key == "use_refinement") cfg.ablation.use_refinement = parse_bool(key, value);
  else if (key == "use_confidence") cfg.ablation.use_confidence = parse_bool(key, value);
  else if (key == "use_semantic_consistency") cfg.ablation.use_semantic_consistency = parse_bool(key, value);
  else if (key == "use_contrastive") cfg.ablation.use_contrastive = parse_bool(key, value);
  else if (key == "include_diagonal") cfg.include_diagonal = parse_bool(key, value);
  else if (key == "noise_sigma") cfg.augment.noise_sigma = parse_number<double>(key, value);
  else if (key == "dropout_rate") cfg.augment.dropout_rate = parse_number<double>(key, value);
  else if (key == "augment_seed") cfg.augment.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "encode_base") cfg.encode_base = parse_bool(key, value);
  else if (key == "early_stop") cfg.early_stop = parse_bool(key, value);
  else throw Error(ErrorCode::InvalidArgument, "unknown config key: " + key);
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
inline TrainConfig parse_config_text(const std::string& text, TrainConfig cfg = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "expected key=value", line_no);
    apply_setting(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline std::string format_train_log(const std::vector<LossBreakdown>& history) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,psc,csc,cc,total\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& h = history[e];
    os << e + 1 << "," << h.psc << "," << h.csc << "," << h.cc << "," << h.total << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Ablation ladder

struct RetrievalDataset {
  FeatureViewPair train;        ///< doubles as the retrieval database
  LabelVector train_labels;     ///< evaluation only
  FeatureMatrix queries;
  LabelVector query_labels;
};

struct AblationRow {
  int variant = 0;
  AblationFlags flags;
  std::size_t code_length = 0;
  std::uint64_t seed = 0;
  double map = 0.0;
};

/// Trains and evaluates one ablation variant; the database is the encoded
/// (un-augmented) training set.
inline AblationRow run_variant(const RetrievalDataset& data, const TrainConfig& base_cfg, int variant,
                               std::size_t code_length, const EvalConfig& eval = {}) {
  TrainConfig cfg = base_cfg;
  cfg.ablation = ablation_variant(variant);
  cfg.code_length = code_length;
  const TrainResult result = train(data.train, cfg);
  const BinaryCodes database = encode(result.model, data.train.view1);
  const BinaryCodes queries = encode(result.model, data.queries);
  const std::size_t cutoff = eval.R == 0 ? database.n() : eval.R;
  const double map =
      mean_average_precision(hamming_rank(queries, database), data.query_labels, data.train_labels, cutoff).map;
  return {variant, cfg.ablation, code_length, cfg.seed, map};
}

/// Runs M1..M5 for every requested code length. Variants fan out over up to
/// `workers` threads; each run owns its state, so results do not depend on
/// scheduling.
inline std::vector<AblationRow> ablation_suite(const RetrievalDataset& data, const TrainConfig& base_cfg,
                                               const std::vector<std::size_t>& code_lengths,
                                               std::size_t workers = 1, const EvalConfig& eval = {}) {
  validate(data.train_labels, data.train.n());
  validate(data.query_labels, static_cast<std::size_t>(data.queries.rows()));
  std::vector<std::pair<int, std::size_t>> jobs;
  for (auto length : code_lengths)
    for (int v = 1; v <= 5; ++v) jobs.emplace_back(v, length);
  std::vector<AblationRow> rows(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        rows[j] = run_variant(data, base_cfg, jobs[j].first, jobs[j].second, eval);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const std::size_t count = std::clamp<std::size_t>(workers, 1, jobs.size());
  std::vector<std::thread> threads;
  for (std::size_t w = 1; w < count; ++w) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

}  // namespace cimon
