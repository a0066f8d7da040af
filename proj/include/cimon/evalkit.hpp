#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cimon/binary_io.hpp"
#include "cimon/error.hpp"
#include "cimon/hashnet.hpp"
#include "cimon/ingest.hpp"

namespace cimon {

// ---------------------------------------------------------------------------
// Packed codes: bit 1 encodes +1, LSB-first within 64-bit words.

struct PackedCodes {
  std::size_t n = 0;
  std::size_t length = 0;
  std::size_t words_per_row = 0;
  std::vector<std::uint64_t> words;

  const std::uint64_t* row(std::size_t i) const { return words.data() + i * words_per_row; }
};

inline PackedCodes pack(const BinaryCodes& codes) {
  PackedCodes out;
  out.n = codes.n();
  out.length = codes.length();
  out.words_per_row = (out.length + 63) / 64;
  out.words.assign(out.n * out.words_per_row, 0);
  for (std::size_t i = 0; i < out.n; ++i) {
    for (std::size_t j = 0; j < out.length; ++j) {
      if (codes.bits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0) {
        out.words[i * out.words_per_row + j / 64] |= std::uint64_t{1} << (j % 64);
      }
    }
  }
  return out;
}

inline BinaryCodes unpack(const PackedCodes& packed) {
  BinaryCodes out{CodeMatrix(static_cast<Eigen::Index>(packed.n), static_cast<Eigen::Index>(packed.length))};
  for (std::size_t i = 0; i < packed.n; ++i)
    for (std::size_t j = 0; j < packed.length; ++j)
      out.bits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (packed.row(i)[j / 64] >> (j % 64)) & 1 ? 1 : -1;
  return out;
}

inline std::uint32_t hamming_distance(const PackedCodes& a, std::size_t i, const PackedCodes& b, std::size_t j) {
  std::uint32_t d = 0;
  const auto* x = a.row(i);
  const auto* y = b.row(j);
  for (std::size_t w = 0; w < a.words_per_row; ++w) d += static_cast<std::uint32_t>(std::popcount(x[w] ^ y[w]));
  return d;
}

// CIMB codes file: magic | n u64 | L u32 | packed rows, ceil(L/64) u64 words each.

inline std::vector<std::uint8_t> encode_codes(const BinaryCodes& codes) {
  const PackedCodes packed = pack(codes);
  std::vector<std::uint8_t> out;
  io::put_magic(out, "CIMB");
  io::put<std::uint64_t>(out, packed.n);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(packed.length));
  for (auto w : packed.words) io::put<std::uint64_t>(out, w);
  return out;
}

inline BinaryCodes decode_codes(std::vector<std::uint8_t> bytes) {
  io::Reader in(std::move(bytes));
  in.expect_magic("CIMB");
  PackedCodes packed;
  packed.n = in.get<std::uint64_t>();
  packed.length = in.get<std::uint32_t>();
  packed.words_per_row = (packed.length + 63) / 64;
  if (packed.length == 0 || in.remaining() != packed.n * packed.words_per_row * 8) {
    throw Error(ErrorCode::MalformedHeader, "codes payload does not match header", 4);
  }
  packed.words.resize(packed.n * packed.words_per_row);
  for (auto& w : packed.words) w = in.get<std::uint64_t>();
  return unpack(packed);
}

inline void save_codes(const std::filesystem::path& path, const BinaryCodes& codes) {
  io::write_file(path, encode_codes(codes));
}

inline BinaryCodes load_codes(const std::filesystem::path& path) { return decode_codes(io::read_file(path)); }

// ---------------------------------------------------------------------------
// Ranking

using RankedLists = std::vector<std::vector<std::uint32_t>>;

/// Database indices per query by ascending Hamming distance, ties by index.
/// A counting sort over distances 0..L is stable, so ties come out in index order.
inline RankedLists hamming_rank(const BinaryCodes& queries, const BinaryCodes& database) {
  if (queries.length() != database.length()) {
    throw Error(ErrorCode::CodeLengthMismatch, "query codes have " + std::to_string(queries.length()) +
                                                   " bits, database " + std::to_string(database.length()));
  }
  if (database.n() == 0) throw Error(ErrorCode::EmptyDatabase, "database holds no codes");
  const PackedCodes q = pack(queries);
  const PackedCodes db = pack(database);
  const std::size_t length = queries.length();
  RankedLists ranked(q.n);
  std::vector<std::uint32_t> dist(db.n);
  std::vector<std::uint32_t> offsets(length + 2);
  for (std::size_t i = 0; i < q.n; ++i) {
    std::fill(offsets.begin(), offsets.end(), 0u);
    for (std::size_t j = 0; j < db.n; ++j) {
      dist[j] = hamming_distance(q, i, db, j);
      ++offsets[dist[j] + 1];
    }
    for (std::size_t k = 1; k < offsets.size(); ++k) offsets[k] += offsets[k - 1];
    auto& out = ranked[i];
    out.resize(db.n);
    for (std::size_t j = 0; j < db.n; ++j) out[offsets[dist[j]]++] = static_cast<std::uint32_t>(j);
  }
  return ranked;
}

/// Ground-truth relevance: the label sets intersect.
inline bool shares_label(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  for (auto x : a)
    if (std::find(b.begin(), b.end(), x) != b.end()) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Metrics

struct EvalConfig {
  std::size_t R = 0;  ///< MAP cutoff; 0 means the whole database
  std::vector<std::size_t> topn_grid{1, 10, 50, 100};
  std::uint64_t seed = 0;
};

struct PrPoint {
  double recall;
  double precision;
};

struct TopNPoint {
  std::size_t n;
  double precision;
};

struct EvalReport {
  double map = 0.0;
  std::vector<PrPoint> pr_points;
  std::vector<TopNPoint> topn_points;
  std::vector<double> per_query_ap;
};

namespace detail {

inline void check_labels(const RankedLists& ranked, const LabelVector& query_labels, const LabelVector& db_labels) {
  if (ranked.size() != query_labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "ranked list count differs from query label count");
  }
  for (const auto& list : ranked) {
    if (list.size() != db_labels.size()) {
      throw Error(ErrorCode::ShapeMismatch, "ranked list length differs from database label count");
    }
  }
}

inline std::size_t count_relevant(const std::vector<std::uint32_t>& query, const LabelVector& db_labels) {
  std::size_t total = 0;
  for (const auto& l : db_labels.labels) total += shares_label(query, l) ? 1 : 0;
  return total;
}

}  // namespace detail

/// AP@R normalized by min(R, relevant items in the database); queries with
/// nothing relevant score 0 and still count toward the mean.
inline double average_precision(const std::vector<std::uint32_t>& ranking, const std::vector<std::uint32_t>& query,
                                const LabelVector& db_labels, std::size_t cutoff) {
  const std::size_t total_relevant = detail::count_relevant(query, db_labels);
  if (total_relevant == 0) return 0.0;
  const std::size_t r = std::min(cutoff, ranking.size());
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < r; ++k) {
    if (shares_label(query, db_labels.labels[ranking[k]])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return sum / static_cast<double>(std::min(cutoff, total_relevant));
}

/// Fills `per_query_ap` and `map` of a report.
inline EvalReport mean_average_precision(const RankedLists& ranked, const LabelVector& query_labels,
                                         const LabelVector& db_labels, std::size_t cutoff) {
  if (db_labels.size() == 0) throw Error(ErrorCode::EmptyDatabase, "database holds no items");
  require(cutoff >= 1, "R must be >= 1");
  detail::check_labels(ranked, query_labels, db_labels);
  EvalReport report;
  report.per_query_ap.reserve(ranked.size());
  double sum = 0.0;
  for (std::size_t q = 0; q < ranked.size(); ++q) {
    report.per_query_ap.push_back(average_precision(ranked[q], query_labels.labels[q], db_labels, cutoff));
    sum += report.per_query_ap.back();
  }
  report.map = ranked.empty() ? 0.0 : sum / static_cast<double>(ranked.size());
  return report;
}

inline constexpr std::size_t kRecallLevels = 101;

/// Interpolated precision (max over recall >= r) at 101 recall levels in
/// [0, 1], averaged over queries.
inline std::vector<PrPoint> pr_curve(const RankedLists& ranked, const LabelVector& query_labels,
                                     const LabelVector& db_labels) {
  detail::check_labels(ranked, query_labels, db_labels);
  std::vector<double> mean(kRecallLevels, 0.0);
  for (std::size_t q = 0; q < ranked.size(); ++q) {
    const auto& query = query_labels.labels[q];
    const std::size_t total = detail::count_relevant(query, db_labels);
    if (total == 0) continue;
    std::vector<double> recall(ranked[q].size()), precision(ranked[q].size());
    std::size_t hits = 0;
    for (std::size_t k = 0; k < ranked[q].size(); ++k) {
      hits += shares_label(query, db_labels.labels[ranked[q][k]]) ? 1 : 0;
      recall[k] = static_cast<double>(hits) / static_cast<double>(total);
      precision[k] = static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    // Running max from the tail gives the interpolated precision envelope.
    for (std::size_t k = precision.size() - 1; k-- > 0;) precision[k] = std::max(precision[k], precision[k + 1]);
    std::size_t k = 0;
    for (std::size_t level = 0; level < kRecallLevels; ++level) {
      const double r = static_cast<double>(level) / static_cast<double>(kRecallLevels - 1);
      while (k < recall.size() && recall[k] < r - 1e-12) ++k;
      mean[level] += k < recall.size() ? precision[k] : 0.0;
    }
  }
  std::vector<PrPoint> out;
  out.reserve(kRecallLevels);
  for (std::size_t level = 0; level < kRecallLevels; ++level) {
    const double r = static_cast<double>(level) / static_cast<double>(kRecallLevels - 1);
    out.push_back({r, ranked.empty() ? 0.0 : mean[level] / static_cast<double>(ranked.size())});
  }
  return out;
}

inline std::vector<TopNPoint> topn_precision(const RankedLists& ranked, const LabelVector& query_labels,
                                             const LabelVector& db_labels, const std::vector<std::size_t>& grid) {
  detail::check_labels(ranked, query_labels, db_labels);
  std::vector<TopNPoint> out;
  for (std::size_t n : grid) {
    if (n == 0 || n > db_labels.size()) {
      throw Error(ErrorCode::GridOutOfRange, "Top-N value outside [1, database size]", n);
    }
    double sum = 0.0;
    for (std::size_t q = 0; q < ranked.size(); ++q) {
      std::size_t hits = 0;
      for (std::size_t k = 0; k < n; ++k) hits += shares_label(query_labels.labels[q], db_labels.labels[ranked[q][k]]) ? 1 : 0;
      sum += static_cast<double>(hits) / static_cast<double>(n);
    }
    out.push_back({n, ranked.empty() ? 0.0 : sum / static_cast<double>(ranked.size())});
  }
  return out;
}

inline EvalReport evaluate(const BinaryCodes& queries, const BinaryCodes& database, const LabelVector& query_labels,
                           const LabelVector& db_labels, const EvalConfig& cfg) {
  if (queries.n() != query_labels.size() || database.n() != db_labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "code and label counts differ");
  }
  const RankedLists ranked = hamming_rank(queries, database);
  EvalReport report = mean_average_precision(ranked, query_labels, db_labels, cfg.R == 0 ? database.n() : cfg.R);
  report.pr_points = pr_curve(ranked, query_labels, db_labels);
  std::vector<std::size_t> grid;
  for (auto n : cfg.topn_grid) {
    if (n <= database.n()) grid.push_back(n);
  }
  report.topn_points = topn_precision(ranked, query_labels, db_labels, grid);
  return report;
}

// ---------------------------------------------------------------------------
// Robustness and bit balance

/// Per bit, the fraction of items whose code is +1.
inline std::vector<double> bit_balance(const BinaryCodes& codes) {
  require(codes.n() >= 1, "bit balance needs at least one code");
  std::vector<double> out(codes.length(), 0.0);
  for (Eigen::Index i = 0; i < codes.bits.rows(); ++i)
    for (Eigen::Index j = 0; j < codes.bits.cols(); ++j)
      if (codes.bits(i, j) > 0) out[static_cast<std::size_t>(j)] += 1.0;
  for (auto& p : out) p /= static_cast<double>(codes.n());
  return out;
}

struct RobustnessReport {
  std::vector<std::size_t> changed_bits_histogram;  ///< index = flipped bits, 0..L
  std::vector<std::uint32_t> flips;                  ///< per query
  double map_before = 0.0;
  double map_after = 0.0;
  std::vector<double> bit_balance;

  double median_flips() const {
    if (flips.empty()) return 0.0;
    std::vector<std::uint32_t> sorted = flips;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    return sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  }
  double mean_flips() const {
    double sum = 0.0;
    for (auto f : flips) sum += f;
    return flips.empty() ? 0.0 : sum / static_cast<double>(flips.size());
  }
};

/// Encodes the queries clean and perturbed (view 1 of `augment_features`),
/// histograms per-query bit flips and reports MAP before and after.
/// `bit_balance` is computed over the database codes.
inline RobustnessReport robustness_eval(const HashModel& model, const FeatureMatrix& query_features,
                                        const LabelVector& query_labels, const BinaryCodes& db_codes,
                                        const LabelVector& db_labels, const AugmentConfig& noise,
                                        const EvalConfig& cfg) {
  const BinaryCodes clean = encode(model, query_features);
  const FeatureViewPair perturbed_views = augment_features(query_features, noise);
  const BinaryCodes perturbed = encode(model, perturbed_views.view1);

  RobustnessReport report;
  report.changed_bits_histogram.assign(clean.length() + 1, 0);
  for (Eigen::Index i = 0; i < clean.bits.rows(); ++i) {
    std::uint32_t f = 0;
    for (Eigen::Index j = 0; j < clean.bits.cols(); ++j) f += clean.bits(i, j) != perturbed.bits(i, j) ? 1 : 0;
    report.flips.push_back(f);
    ++report.changed_bits_histogram[f];
  }
  const std::size_t cutoff = cfg.R == 0 ? db_codes.n() : cfg.R;
  report.map_before = mean_average_precision(hamming_rank(clean, db_codes), query_labels, db_labels, cutoff).map;
  report.map_after = mean_average_precision(hamming_rank(perturbed, db_codes), query_labels, db_labels, cutoff).map;
  report.bit_balance = bit_balance(db_codes);
  return report;
}

}  // namespace cimon
