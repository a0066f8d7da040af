// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Thresholds are fixed here.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <sys/wait.h>

#include "cimon/evalkit.hpp"
#include "cimon/hashnet.hpp"
#include "cimon/losses.hpp"
#include "cimon/simgraph.hpp"
#include "cimon/trainer.hpp"
#include "test_util.hpp"

using namespace cimon;
namespace fs = std::filesystem;
using cimon::testing::max_relative_error;
using cimon::testing::numeric_gradient;
using cimon::testing::random_matrix;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kFdStep = 1e-5;
constexpr double kWeightTolerance = 1e-9;
constexpr double kLadderFloor = 0.85;
constexpr double kBalanceLo = 0.2, kBalanceHi = 0.8;
constexpr double kRobustSigma = 0.05;
constexpr int kSeeds = 5;

int failures = 0;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Runs `fn` on every job index on up to `workers` threads.
void parallel_for(std::size_t jobs, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) fn(j);
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::clamp<std::size_t>(workers, 1, jobs); ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

std::size_t workers() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CIMON_THREADS")) {
    const long cap = std::atol(env);
    if (cap > 0) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return n;
}

SemanticTargets random_targets(std::size_t n, Rng& rng) {
  SemanticTargets t{SignMatrix(n, n), Eigen::MatrixXf(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const auto s = static_cast<std::int8_t>(static_cast<int>(rng.below(3)) - 1);
      const float w = s == 0 ? 0.0f : static_cast<float>(0.1 + 0.9 * rng.uniform());
      t.graph(i, j) = t.graph(j, i) = s;
      t.weights(i, j) = t.weights(j, i) = w;
    }
  }
  return t;
}

// ---------------------------------------------------------------------------

void gradient_oracle() {
  const auto start = Clock::now();
  constexpr std::size_t d = 6, h = 8, L = 4, M = 5;
  Rng rng(2024);
  const auto t1 = random_targets(M, rng), t2 = random_targets(M, rng);
  std::vector<std::size_t> batch(M);
  std::iota(batch.begin(), batch.end(), std::size_t{0});
  const Eigen::MatrixXd v1 = random_matrix(M, L, rng, 0.5), v2 = random_matrix(M, L, rng, 0.5);
  const LossConfig cfg;

  using Term = std::function<LossTerm(const Eigen::MatrixXd&, const Eigen::MatrixXd&)>;
  const std::vector<std::pair<std::string, Term>> terms = {
      {"parallel-semantic", [&](const auto& a, const auto& b) { return parallel_semantic_loss(a, b, t1, t2, batch); }},
      {"cross-semantic", [&](const auto& a, const auto& b) { return cross_semantic_loss(a, b, t1, t2, batch); }},
      {"contrastive", [&](const auto& a, const auto& b) { return contrastive_loss(a, b, cfg.tau); }},
      {"total", [&](const auto& a, const auto& b) {
         const auto r = total_loss(a, b, t1, t2, batch, cfg);
         return LossTerm{r.breakdown.total, r.grad_v1, r.grad_v2};
       }},
  };
  std::string detail;
  double worst = 0.0;
  for (const auto& [name, term] : terms) {
    const LossTerm at = term(v1, v2);
    const double e1 = max_relative_error(
        at.grad_v1, numeric_gradient([&](const Eigen::MatrixXd& x) { return term(x, v2).value; }, v1, kFdStep));
    const double e2 = max_relative_error(
        at.grad_v2, numeric_gradient([&](const Eigen::MatrixXd& x) { return term(v1, x).value; }, v2, kFdStep));
    worst = std::max({worst, e1, e2});
    detail += name + "=" + fmt(std::max(e1, e2), 3) + " ";
  }

  // Full composition: total loss through the shared network, all parameters.
  HashModel model = init_model(d, {h}, L, 7);
  for (auto& l : model.layers) l.bias = random_matrix(l.bias.size(), 1, rng, 0.1);
  const Eigen::MatrixXd x1 = random_matrix(M, d, rng), x2 = random_matrix(M, d, rng);
  auto loss_of = [&](const HashModel& m) {
    return total_loss(forward_relaxed(m, x1).first.values, forward_relaxed(m, x2).first.values, t1, t2, batch, cfg)
        .breakdown.total;
  };
  const auto [r1, c1] = forward_relaxed(model, x1);
  const auto [r2, c2] = forward_relaxed(model, x2);
  const auto tl = total_loss(r1.values, r2.values, t1, t2, batch, cfg);
  Gradients grads = backward(model, c1, tl.grad_v1);
  accumulate(grads, backward(model, c2, tl.grad_v2));
  double model_err = 0.0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto fw = [&](const Eigen::MatrixXd& w) {
      HashModel p = model;
      p.layers[l].weight = w;
      return loss_of(p);
    };
    auto fb = [&](const Eigen::MatrixXd& b) {
      HashModel p = model;
      p.layers[l].bias = b;
      return loss_of(p);
    };
    model_err = std::max(model_err, max_relative_error(grads.layers[l].weight, numeric_gradient(fw, model.layers[l].weight, kFdStep)));
    model_err = std::max(model_err, max_relative_error(grads.layers[l].bias, numeric_gradient(fb, model.layers[l].bias, kFdStep)));
  }
  worst = std::max(worst, model_err);
  detail += "model=" + fmt(model_err, 3);
  const double secs = seconds_since(start);
  report(worst < kGradTolerance && secs < 10.0, "gradient-oracle",
         detail + " (max " + fmt(worst, 3) + " < 1e-4, " + fmt(secs, 3) + " s < 10 s)");
}

void confidence_boundaries() {
  const auto start = Clock::now();
  const HalfGaussianFit fit{0.2, 0.06, 1.0, 0.2};
  const double t = 0.35;
  bool ok = true;
  const double w0 = confidence_weight(0.0, t, fit);
  const double wt_left = confidence_weight(t, t, fit);
  const double wt_right = confidence_weight(std::nextafter(t, 2.0), t, fit);
  const double w2 = confidence_weight(kMaxCosineDistance, t, fit);
  ok = ok && std::abs(w0 - 1.0) <= kWeightTolerance && std::abs(wt_left) <= kWeightTolerance &&
       std::abs(wt_right) <= kWeightTolerance && std::abs(w2 - 1.0) <= kWeightTolerance;

  bool monotone = true;
  constexpr int kSweep = 1000;
  double prev = confidence_weight(0.0, t, fit);
  for (int i = 1; i <= kSweep; ++i) {
    const double w = confidence_weight(t * i / kSweep, t, fit);
    monotone = monotone && w <= prev;
    prev = w;
  }
  prev = confidence_weight(std::nextafter(t, 2.0), t, fit);
  for (int i = 1; i <= kSweep; ++i) {
    const double w = confidence_weight(t + (kMaxCosineDistance - t) * i / kSweep, t, fit);
    monotone = monotone && w >= prev;
    prev = w;
  }
  const double secs = seconds_since(start);
  report(ok && monotone && secs < 1.0, "confidence-boundaries",
         "W(0)=" + fmt(w0, 12) + " W(t-)=" + fmt(wt_left, 12) + " W(t+)=" + fmt(wt_right, 12) + " W(2)=" +
             fmt(w2, 12) + " monotone=" + (monotone ? "yes" : "no") + " (" + fmt(secs, 3) + " s)");
}

void refinement_safety() {
  const auto start = Clock::now();
  Rng rng(99);
  bool ok = true;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 2 + rng.below(60);
    const std::uint32_t k = 1 + static_cast<std::uint32_t>(rng.below(6));
    PseudoGraph g{SignMatrix(n, n), 0.5};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) g.signs(i, j) = g.signs(j, i) = i == j || rng.below(2) ? 1 : -1;
    ClusterAssignment c{std::vector<std::uint32_t>(n), k};
    for (auto& l : c.labels) l = static_cast<std::uint32_t>(rng.below(k));
    const auto r = refine_graph(g, c);
    std::size_t pos_before = 0, neg_before = 0, pos_after = 0, neg_after = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const auto s = g.signs(i, j), h = r.signs(i, j);
        ok = ok && (h == s || h == 0);
        pos_before += s == 1;
        neg_before += s == -1;
        pos_after += h == 1;
        neg_after += h == -1;
      }
    }
    ok = ok && pos_after <= pos_before && neg_after <= neg_before;
  }
  const double secs = seconds_since(start);
  report(ok && secs < 1.0, "refinement-safety", "100 instances, refined in {S, 0}, counts non-increasing (" + fmt(secs, 3) + " s)");
}

void map_oracle() {
  const auto start = Clock::now();
  Rng rng(314);
  int exact = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 1 + rng.below(200), nq = 1 + rng.below(20), length = 1 + rng.below(64);
    const auto classes = static_cast<std::uint32_t>(1 + rng.below(8));
    const auto db = cimon::testing::random_codes(n, length, rng);
    const auto q = cimon::testing::random_codes(nq, length, rng);
    LabelVector dbl, ql;
    for (std::size_t i = 0; i < n; ++i) dbl.labels.push_back({static_cast<std::uint32_t>(rng.below(classes))});
    for (std::size_t i = 0; i < nq; ++i) ql.labels.push_back({static_cast<std::uint32_t>(rng.below(classes))});
    const std::size_t cutoff = 1 + rng.below(n);
    const double pipeline = mean_average_precision(hamming_rank(q, db), ql, dbl, cutoff).map;
    const double oracle = cimon::testing::brute_force_map(q, db, ql, dbl, cutoff);
    exact += pipeline == oracle;
  }
  const double hand = average_precision({0, 1, 2}, {0}, cimon::testing::single_labels({0, 1, 0}), 3);
  const bool hand_ok = std::abs(hand - 5.0 / 6.0) < 1e-12;
  const double secs = seconds_since(start);
  report(exact == 50 && hand_ok && secs < 5.0, "map-oracle",
         std::to_string(exact) + "/50 bitwise equal, hand AP=" + fmt(hand, 10) + " (" + fmt(secs, 3) + " s)");
}

void contrastive_closed_form() {
  Eigen::MatrixXd v(2, 4);
  v << 1, -1, 1, 1, 1, -1, 1, 1;
  const double loss = contrastive_loss(v, v, 0.5).value;
  report(std::abs(loss - std::log(2.0)) < 1e-9, "contrastive-closed-form",
         "loss=" + fmt(loss, 15) + " log2=" + fmt(std::log(2.0), 15));
}

// ---------------------------------------------------------------------------
// Desk-scale ladder, robustness and bit balance share the trained models.

struct LadderRun {
  int seed = 0;
  int variant = 0;
  double map = 0.0;
  double median_flips = 0.0;
  double mean_flips = 0.0;
  std::size_t zero_noise_flips = 0;
  std::vector<double> balance;
};

void desk_scale() {
  const auto start = Clock::now();
  const std::vector<int> variants{1, 3, 4, 5};
  std::vector<LadderRun> runs(kSeeds * variants.size());
  parallel_for(runs.size(), workers(), [&](std::size_t j) {
    const int seed = static_cast<int>(j / variants.size()) + 1;
    const int variant = variants[j % variants.size()];
    const auto data = make_synthetic(4, 100, 32, 10.0, static_cast<std::uint64_t>(seed), 25);
    TrainConfig cfg;
    cfg.code_length = 16;
    cfg.epochs = 100;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.ablation = ablation_variant(variant);
    const auto result = train(data.base, cfg);
    const BinaryCodes db = encode(result.model, data.base.view1);
    const BinaryCodes q = encode(result.model, data.queries->view1);
    LadderRun& r = runs[j];
    r.seed = seed;
    r.variant = variant;
    r.map = mean_average_precision(hamming_rank(q, db), data.query_labels, data.labels, db.n()).map;
    const auto noisy = robustness_eval(result.model, data.queries->view1, data.query_labels, db, data.labels,
                                       {kRobustSigma, 0.0, static_cast<std::uint64_t>(1000 + seed)}, EvalConfig{});
    r.median_flips = noisy.median_flips();
    r.mean_flips = noisy.mean_flips();
    r.balance = noisy.bit_balance;
    const auto clean = robustness_eval(result.model, data.queries->view1, data.query_labels, db, data.labels,
                                       {0.0, 0.0, 1}, EvalConfig{});
    r.zero_noise_flips = std::accumulate(clean.flips.begin(), clean.flips.end(), std::size_t{0});
  });
  const double secs = seconds_since(start);

  auto collect = [&](int variant, auto field) {
    std::vector<double> out;
    for (const auto& r : runs)
      if (r.variant == variant) out.push_back(field(r));
    return out;
  };
  auto map_of = [](const LadderRun& r) { return r.map; };
  auto flips_of = [](const LadderRun& r) { return r.median_flips; };
  auto mean_flips_of = [](const LadderRun& r) { return r.mean_flips; };
  const double m1 = median(collect(1, map_of)), m3 = median(collect(3, map_of)), m5 = median(collect(5, map_of));
  const double m4 = median(collect(4, map_of));
  std::string per_seed;
  for (int v : variants) {
    per_seed += " M" + std::to_string(v) + "=[";
    const auto maps = collect(v, map_of);
    for (std::size_t i = 0; i < maps.size(); ++i) per_seed += (i ? "," : "") + fmt(maps[i], 4);
    per_seed += "]";
  }
  report(m5 >= m3 && m3 >= m1 && m5 >= kLadderFloor && secs < 300.0, "ablation-ladder",
         "median MAP M1=" + fmt(m1, 4) + " M3=" + fmt(m3, 4) + " M4=" + fmt(m4, 4) + " M5=" + fmt(m5, 4) +
             " (M5>=M3>=M1, M5>=0.85, " + fmt(secs, 3) + " s < 300 s)" + per_seed);

  const double f4 = median(collect(4, flips_of)), f5 = median(collect(5, flips_of));
  std::size_t zero_total = 0;
  for (const auto& r : runs) zero_total += r.zero_noise_flips;
  report(f5 <= f4 && zero_total == 0, "robustness-direction",
         "median changed bits at sigma=0.05: M5=" + fmt(f5) + " M4=" + fmt(f4) +
             " (mean M5=" + fmt(median(collect(5, mean_flips_of)), 3) + " M4=" + fmt(median(collect(4, mean_flips_of)), 3) +
             "), zero-noise flips=" + std::to_string(zero_total));

  double lo = 1.0, hi = 0.0;
  for (const auto& r : runs) {
    if (r.variant != 5) continue;
    for (double p : r.balance) {
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
  }
  report(lo >= kBalanceLo && hi <= kBalanceHi, "bit-balance",
         "M5 16-bit per-bit P(+1) over 5 seeds in [" + fmt(lo, 4) + ", " + fmt(hi, 4) + "], required [0.2, 0.8]");
}

// ---------------------------------------------------------------------------
// CLI determinism

int cli(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" CIMON_CLI_PATH "' " + args + " > cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return out;
}

void cli_determinism() {
  cimon::testing::TempDir tmp;
  const fs::path root = tmp.path();
  const std::string train_flags = "--clusters 8 --threshold 0.1 --bits 16 --hidden 64 --epochs 10 --seed 3";
  // Prerequisites are produced once; each subcommand is then run twice.
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"synth", "synth --clusters 4 --per 30 --dim 16 --sep 10 --queries 5 --seed 1 -o data"},
      {"mine", "mine --features data/features.cimf " + train_flags + " -o mined"},
      {"train", "train --features data/features.cimf " + train_flags + " -o run"},
      {"encode", "encode --model run/model.cimm --features data/queries.cimf -o enc"},
      {"eval", "eval --queries enc/codes.cimb --database run/codes.cimb --query-labels data/query_labels.ciml "
               "--db-labels data/labels.ciml -o ev"},
      {"robustness", "robustness --model run/model.cimm --queries data/queries.cimf --query-labels "
                     "data/query_labels.ciml --database run/codes.cimb --db-labels data/labels.ciml --seed 2 -o rob"},
      {"ablate", "ablate --features data/features.cimf --labels data/labels.ciml --queries data/queries.cimf "
                 "--query-labels data/query_labels.ciml --lengths 16 " + train_flags + " -o abl"},
      {"plot", "plot --csv ev/pr.csv -o plots/pr.svg"},
  };
  const std::map<std::string, std::string> out_dir = {{"synth", "data"}, {"mine", "mined"}, {"train", "run"},
                                                      {"encode", "enc"}, {"eval", "ev"}, {"robustness", "rob"},
                                                      {"ablate", "abl"}, {"plot", "plots"}};
  std::vector<std::string> bad;
  std::size_t files = 0;
  for (const auto& [name, args] : steps) {
    const fs::path dir = root / out_dir.at(name);
    if (cli(root, args) != 0) {
      bad.push_back(name + "(exit)");
      continue;
    }
    const auto first = snapshot(dir);
    fs::rename(dir, root / (out_dir.at(name) + ".first"));
    const int second_status = cli(root, args);
    const auto second = snapshot(dir);
    if (second_status != 0 || first != second || first.empty()) bad.push_back(name);
    files += first.size();
    // Later steps read the first run's outputs, which are identical.
    fs::remove_all(dir);
    fs::rename(root / (out_dir.at(name) + ".first"), dir);
  }
  std::string detail = std::to_string(steps.size()) + " subcommands, " + std::to_string(files) + " files byte-identical";
  if (!bad.empty()) {
    detail = "differs:";
    for (const auto& b : bad) detail += " " + b;
  }
  report(bad.empty(), "cli-determinism", detail);
}

}  // namespace

int main() {
  const auto start = Clock::now();
  const std::vector<std::pair<const char*, std::function<void()>>> checks = {
      {"gradient-oracle", gradient_oracle},
      {"confidence-boundaries", confidence_boundaries},
      {"refinement-safety", refinement_safety},
      {"map-oracle", map_oracle},
      {"contrastive-closed-form", contrastive_closed_form},
      {"desk-scale", desk_scale},
      {"cli-determinism", cli_determinism},
  };
  for (const auto& [name, check] : checks) {
    try {
      check();
    } catch (const std::exception& e) {
      report(false, name, std::string("exception: ") + e.what());
    }
  }
  std::printf("%s: %d failing criteria (%.1f s)\n", failures ? "FAILED" : "ALL PASSED", failures, seconds_since(start));
  return failures ? 1 : 0;
}
