// cimon command-line driver: synth, mine, train, encode, eval, robustness,
// ablate, plot. Exit codes: 0 ok, 2 validation/usage error, 1 runtime error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cimon/evalkit.hpp"
#include "cimon/hashnet.hpp"
#include "cimon/ingest.hpp"
#include "cimon/simgraph.hpp"
#include "cimon/trainer.hpp"
#include "cimon/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Output helpers

std::string num(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  cimon::io::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

/// Accumulates the manifest of one run; outputs are recorded relative to
/// the output directory so the manifest does not depend on where it lives.
class Run {
 public:
  Run(std::string command, std::vector<std::string> argv) {
    manifest_["tool"] = "cimon";
    manifest_["version"] = cimon::kVersion;
    manifest_["command"] = std::move(command);
    manifest_["argv"] = std::move(argv);
    manifest_["inputs"] = json::object();
    manifest_["config"] = json::object();
    manifest_["outputs"] = json::array();
  }

  void input(const std::string& name, const std::string& path) { manifest_["inputs"][name] = path; }
  void seed(std::uint64_t s) { manifest_["seed"] = s; }
  json& config() { return manifest_["config"]; }

  void bytes(const fs::path& dir, const std::string& name, const std::vector<std::uint8_t>& data) {
    cimon::io::write_file(dir / name, data);
    manifest_["outputs"].push_back(name);
  }
  void text(const fs::path& dir, const std::string& name, const std::string& data) {
    write_text(dir / name, data);
    manifest_["outputs"].push_back(name);
  }
  void finish(const fs::path& dir, const std::string& name = "manifest.json") {
    manifest_["outputs"].push_back(name);
    write_text(dir / name, manifest_.dump(2) + "\n");
  }

 private:
  json manifest_;
};

json config_json(const cimon::TrainConfig& cfg) {
  json out = json::object();
  std::istringstream in(cimon::to_config_text(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training flags shared by train and ablate

struct TrainFlags {
  std::string config_file;
  std::map<std::string, std::string> values;  ///< config key -> raw flag value
  std::map<std::string, CLI::Option*> options;
  int variant = 0;
  bool no_diagonal = false;
  bool encode_base = false;
  bool early_stop = false;

  void add(CLI::App& app) {
    app.add_option("--config", config_file, "key=value run configuration file")->check(CLI::ExistingFile);
    const cimon::TrainConfig d;
    auto opt = [&](const std::string& flag, const std::string& key, const std::string& help, std::string def) {
      options[key] = app.add_option(flag, values[key], help + " (default " + def + ")")->type_name("VALUE");
    };
    opt("--threshold", "t", "pseudo-graph distance threshold t", num(d.t));
    opt("--clusters", "K", "spectral cluster count K", std::to_string(d.K));
    opt("--eta", "eta", "contrastive weight", num(d.eta));
    opt("--tau", "tau", "contrastive temperature", num(d.tau));
    opt("--lr", "learning_rate", "SGD learning rate", num(d.learning_rate));
    opt("--momentum", "momentum", "SGD momentum", num(d.momentum));
    opt("--batch", "batch_size", "minibatch size M", std::to_string(d.batch_size));
    opt("--epochs", "epochs", "training epochs", std::to_string(d.epochs));
    opt("--seed", "seed", "training seed", std::to_string(d.seed));
    opt("--bits", "code_length", "code length L", std::to_string(d.code_length));
    opt("--hidden", "hidden", "comma-separated hidden widths", "512");
    opt("--noise", "noise_sigma", "augmentation noise sigma for single-view input",
        num(d.augment.noise_sigma));
    opt("--dropout", "dropout_rate", "augmentation dropout rate", num(d.augment.dropout_rate));
    opt("--augment-seed", "augment_seed", "augmentation seed (xor training seed)", std::to_string(d.augment.seed));
    app.add_option("--variant", variant, "ablation variant 1..5 (M1..M5); 0 keeps config flags")
        ->check(CLI::Range(0, 5));
    app.add_flag("--no-diagonal", no_diagonal, "exclude self-pairs from the semantic losses");
    app.add_flag("--encode-base", encode_base, "encode the un-augmented features after training");
    app.add_flag("--early-stop", early_stop, "stop when the epoch loss plateaus");
  }

  /// Defaults, then the config file, then explicit flags.
  cimon::TrainConfig resolve() const {
    cimon::TrainConfig cfg;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      std::stringstream ss;
      ss << in.rdbuf();
      cfg = cimon::parse_config_text(ss.str(), cfg);
    }
    for (const auto& [key, option] : options)
      if (option->count() > 0) cimon::apply_setting(cfg, key, values.at(key));
    if (variant > 0) cfg.ablation = cimon::ablation_variant(variant);
    if (no_diagonal) cfg.include_diagonal = false;
    if (encode_base) cfg.encode_base = true;
    if (early_stop) cfg.early_stop = true;
    return cfg;
  }
};

std::size_t worker_count(std::size_t requested) {
  std::size_t n = requested > 0 ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CIMON_THREADS"); env != nullptr && *env != '\0') {
    std::size_t cap = 0;
    const std::string s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), cap);
    if (ec != std::errc() || ptr != s.data() + s.size() || cap == 0) {
      throw cimon::Error(cimon::ErrorCode::InvalidArgument, "CIMON_THREADS must be a positive integer");
    }
    n = std::min(n, cap);
  }
  return n;
}

// ---------------------------------------------------------------------------
// CSV and SVG

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw cimon::Error(cimon::ErrorCode::InvalidArgument, "no column named " + name);
  }
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cimon::detail::trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw cimon::Error(cimon::ErrorCode::Io, "cannot open " + path.string());
  Table t;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (t.header.empty()) {
      t.header = split_csv_line(line);
    } else {
      auto row = split_csv_line(line);
      if (row.size() != t.header.size()) {
        throw cimon::Error(cimon::ErrorCode::ShapeMismatch, "CSV row width differs from header", t.rows.size());
      }
      t.rows.push_back(std::move(row));
    }
  }
  if (t.header.empty()) throw cimon::Error(cimon::ErrorCode::MalformedHeader, "empty CSV " + path.string());
  return t;
}

double parse_cell(const std::string& s, std::size_t row) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw cimon::Error(cimon::ErrorCode::NonFiniteValue, "non-numeric cell " + s, row);
  return v;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << v;
  return os.str();
}

/// Line or bar chart of `ys` against `x`. Every plotted cell is also emitted
/// verbatim as a <text class="value"> label.
std::string render_svg(const Table& t, const std::string& kind, std::size_t x, const std::vector<std::size_t>& ys,
                       const std::string& title) {
  constexpr double width = 640, height = 400, left = 60, right = 20, top = 40, bottom = 50;
  constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const double pw = width - left - right, ph = height - top - bottom;

  std::vector<double> xv;
  double ymin = 0.0, ymax = 0.0;
  bool first = true;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    xv.push_back(kind == "bar" ? static_cast<double>(r) : parse_cell(t.rows[r][x], r));
    for (auto c : ys) {
      const double v = parse_cell(t.rows[r][c], r);
      ymin = first ? v : std::min(ymin, v);
      ymax = first ? v : std::max(ymax, v);
      first = false;
    }
  }
  ymin = std::min(ymin, 0.0);
  if (ymax <= ymin) ymax = ymin + 1.0;
  double xmin = xv.empty() ? 0.0 : *std::min_element(xv.begin(), xv.end());
  double xmax = xv.empty() ? 1.0 : *std::max_element(xv.begin(), xv.end());
  if (kind == "bar") {
    xmin = -0.5;
    xmax = static_cast<double>(t.rows.size()) - 0.5;
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  auto px = [&](double v) { return left + (v - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double v) { return top + ph - (v - ymin) / (ymax - ymin) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<style>text{font-family:sans-serif;font-size:11px}.value{font-size:7px;fill:#444}</style>\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\">" << escape_xml(title) << "</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">"
      << escape_xml(t.header[x]) << "</text>\n";
  svg << "<text x=\"" << left - 8 << "\" y=\"" << fixed(py(ymax)) << "\" text-anchor=\"end\">" << num(ymax)
      << "</text>\n";
  svg << "<text x=\"" << left - 8 << "\" y=\"" << fixed(py(ymin)) << "\" text-anchor=\"end\">" << num(ymin)
      << "</text>\n";

  if (kind == "bar") {
    const double slot = pw / static_cast<double>(std::max<std::size_t>(1, t.rows.size()));
    const double bw = slot * 0.8 / static_cast<double>(ys.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      for (std::size_t s = 0; s < ys.size(); ++s) {
        const double v = parse_cell(t.rows[r][ys[s]], r);
        const double bx = px(xv[r]) - slot * 0.4 + bw * static_cast<double>(s);
        const double y0 = py(std::max(v, 0.0)), y1 = py(std::min(v, 0.0));
        svg << "<rect x=\"" << fixed(bx) << "\" y=\"" << fixed(y0) << "\" width=\"" << fixed(bw) << "\" height=\""
            << fixed(y1 - y0) << "\" fill=\"" << palette[s % 6] << "\"/>\n";
        svg << "<text class=\"value\" x=\"" << fixed(bx + bw / 2) << "\" y=\"" << fixed(y0 - 2)
            << "\" text-anchor=\"middle\">" << escape_xml(t.rows[r][ys[s]]) << "</text>\n";
      }
      svg << "<text class=\"value\" x=\"" << fixed(px(xv[r])) << "\" y=\"" << fixed(top + ph + 12)
          << "\" text-anchor=\"middle\">" << escape_xml(t.rows[r][x]) << "</text>\n";
    }
  } else {
    for (std::size_t s = 0; s < ys.size(); ++s) {
      svg << "<polyline fill=\"none\" stroke=\"" << palette[s % 6] << "\" points=\"";
      for (std::size_t r = 0; r < t.rows.size(); ++r)
        svg << (r ? " " : "") << fixed(px(xv[r])) << "," << fixed(py(parse_cell(t.rows[r][ys[s]], r)));
      svg << "\"/>\n";
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const double cx = px(xv[r]), cy = py(parse_cell(t.rows[r][ys[s]], r));
        svg << "<circle cx=\"" << fixed(cx) << "\" cy=\"" << fixed(cy) << "\" r=\"1.5\" fill=\"" << palette[s % 6]
            << "\"/>\n";
        svg << "<text class=\"value\" x=\"" << fixed(cx) << "\" y=\"" << fixed(cy - 3) << "\">"
            << escape_xml(t.rows[r][ys[s]]) << "</text>\n";
      }
    }
  }
  for (std::size_t s = 0; s < ys.size(); ++s) {
    const double ly = top + 14.0 * static_cast<double>(s);
    svg << "<rect x=\"" << left + pw - 90 << "\" y=\"" << ly - 8 << "\" width=\"10\" height=\"10\" fill=\""
        << palette[s % 6] << "\"/>\n";
    svg << "<text x=\"" << left + pw - 75 << "\" y=\"" << ly << "\">" << escape_xml(t.header[ys[s]]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

// ---------------------------------------------------------------------------
// Report formatting

std::string pr_csv(const std::vector<cimon::PrPoint>& points) {
  std::string out = "recall,precision\n";
  for (const auto& p : points) out += num(p.recall) + "," + num(p.precision) + "\n";
  return out;
}

std::string topn_csv(const std::vector<cimon::TopNPoint>& points) {
  std::string out = "n,precision\n";
  for (const auto& p : points) out += std::to_string(p.n) + "," + num(p.precision) + "\n";
  return out;
}

std::string ap_csv(const std::vector<double>& ap) {
  std::string out = "query,ap\n";
  for (std::size_t q = 0; q < ap.size(); ++q) out += std::to_string(q) + "," + num(ap[q]) + "\n";
  return out;
}

std::string balance_csv(const std::vector<double>& p) {
  std::string out = "bit,p_plus\n";
  for (std::size_t b = 0; b < p.size(); ++b) out += std::to_string(b) + "," + num(p[b]) + "\n";
  return out;
}

cimon::LabelVector load_labels_for(const std::string& path, std::size_t n) {
  auto labels = cimon::load_labels(path);
  cimon::validate(labels, n);
  return labels;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cimon: unsupervised hashing by consistency and contrast"};
  app.set_version_flag("--version", std::string(cimon::kVersion));
  app.require_subcommand(1);
  std::vector<std::string> args(argv + 1, argv + argc);

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic clustered dataset");
  std::size_t s_clusters = 4, s_per = 100, s_dim = 32, s_queries = 25;
  double s_sep = 10.0;
  std::uint64_t s_seed = 0;
  std::string s_out;
  synth->add_option("--clusters", s_clusters, "number of clusters")->capture_default_str();
  synth->add_option("--per", s_per, "points per cluster")->capture_default_str();
  synth->add_option("--dim", s_dim, "feature dimension")->capture_default_str();
  synth->add_option("--sep", s_sep, "distance of cluster centers from the origin")->capture_default_str();
  synth->add_option("--queries", s_queries, "held-out queries per cluster")->capture_default_str();
  synth->add_option("--seed", s_seed, "random seed")->capture_default_str();
  synth->add_option("-o,--out", s_out, "output directory")->required();

  // mine
  auto* mine = app.add_subcommand("mine", "build semantic sidecars (.cims) for both views");
  std::string m_features, m_out;
  TrainFlags m_flags;
  mine->add_option("--features", m_features, "CIMF feature file")->required()->check(CLI::ExistingFile);
  mine->add_option("-o,--out", m_out, "output directory")->required();
  m_flags.add(*mine);

  // train
  auto* trn = app.add_subcommand("train", "train the hashing network");
  std::string t_features, t_out;
  std::vector<std::string> t_sidecars;
  TrainFlags t_flags;
  trn->add_option("--features", t_features, "CIMF feature file")->required()->check(CLI::ExistingFile);
  trn->add_option("--sidecars", t_sidecars, "two .cims files from `mine` (view 1, view 2)")
      ->expected(2)
      ->check(CLI::ExistingFile);
  trn->add_option("-o,--out", t_out, "output directory")->required();
  t_flags.add(*trn);

  // encode
  auto* enc = app.add_subcommand("encode", "encode features with a trained model");
  std::string e_model, e_features, e_out, e_name = "codes.cimb";
  enc->add_option("--model", e_model, "CIMM checkpoint")->required()->check(CLI::ExistingFile);
  enc->add_option("--features", e_features, "CIMF feature file (view 1 is encoded)")->required()->check(CLI::ExistingFile);
  enc->add_option("-o,--out", e_out, "output directory")->required();
  enc->add_option("--name", e_name, "output file name")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "MAP, PR and Top-N precision by Hamming ranking");
  std::string v_queries, v_database, v_qlabels, v_dblabels, v_out;
  std::size_t v_r = 0;
  std::vector<std::size_t> v_grid = cimon::EvalConfig{}.topn_grid;
  ev->add_option("--queries", v_queries, "query codes (CIMB)")->required()->check(CLI::ExistingFile);
  ev->add_option("--database", v_database, "database codes (CIMB)")->required()->check(CLI::ExistingFile);
  ev->add_option("--query-labels", v_qlabels, "query labels (CIML)")->required()->check(CLI::ExistingFile);
  ev->add_option("--db-labels", v_dblabels, "database labels (CIML)")->required()->check(CLI::ExistingFile);
  ev->add_option("--R", v_r, "MAP cutoff; 0 means the whole database")->capture_default_str();
  ev->add_option("--topn", v_grid, "Top-N grid")->capture_default_str();
  ev->add_option("-o,--out", v_out, "output directory")->required();

  // robustness
  auto* rob = app.add_subcommand("robustness", "bit flips under query feature noise, and bit balance");
  std::string r_model, r_queries, r_qlabels, r_database, r_dblabels, r_out;
  double r_sigma = 0.05, r_dropout = 0.0;
  std::uint64_t r_seed = 0;
  std::size_t r_r = 0;
  rob->add_option("--model", r_model, "CIMM checkpoint")->required()->check(CLI::ExistingFile);
  rob->add_option("--queries", r_queries, "query features (CIMF, view 1)")->required()->check(CLI::ExistingFile);
  rob->add_option("--query-labels", r_qlabels, "query labels (CIML)")->required()->check(CLI::ExistingFile);
  rob->add_option("--database", r_database, "database codes (CIMB)")->required()->check(CLI::ExistingFile);
  rob->add_option("--db-labels", r_dblabels, "database labels (CIML)")->required()->check(CLI::ExistingFile);
  rob->add_option("--sigma", r_sigma, "Gaussian noise sigma")->capture_default_str();
  rob->add_option("--dropout", r_dropout, "feature dropout rate")->capture_default_str();
  rob->add_option("--seed", r_seed, "noise seed")->capture_default_str();
  rob->add_option("--R", r_r, "MAP cutoff; 0 means the whole database")->capture_default_str();
  rob->add_option("-o,--out", r_out, "output directory")->required();

  // ablate
  auto* abl = app.add_subcommand("ablate", "train and evaluate variants M1..M5");
  std::string a_features, a_labels, a_queries, a_qlabels, a_out;
  std::vector<std::size_t> a_bits{16};
  std::size_t a_threads = 0, a_r = 0;
  TrainFlags a_flags;
  abl->add_option("--features", a_features, "training features (CIMF), also the database")->required()->check(CLI::ExistingFile);
  abl->add_option("--labels", a_labels, "training labels (CIML), evaluation only")->required()->check(CLI::ExistingFile);
  abl->add_option("--queries", a_queries, "query features (CIMF)")->required()->check(CLI::ExistingFile);
  abl->add_option("--query-labels", a_qlabels, "query labels (CIML)")->required()->check(CLI::ExistingFile);
  abl->add_option("--lengths", a_bits, "code lengths to run")->capture_default_str();
  abl->add_option("--threads", a_threads, "worker threads; 0 = hardware (capped by CIMON_THREADS)")->capture_default_str();
  abl->add_option("--R", a_r, "MAP cutoff; 0 means the whole database")->capture_default_str();
  abl->add_option("-o,--out", a_out, "output directory")->required();
  a_flags.add(*abl);

  // plot
  auto* plt = app.add_subcommand("plot", "render a CSV report as an SVG chart");
  std::string p_csv, p_out, p_kind = "line", p_x, p_title;
  std::vector<std::string> p_y;
  plt->add_option("--csv", p_csv, "input CSV")->required()->check(CLI::ExistingFile);
  plt->add_option("-o,--out", p_out, "output SVG path")->required();
  plt->add_option("--kind", p_kind, "line or bar")->check(CLI::IsMember({"line", "bar"}))->capture_default_str();
  plt->add_option("--x", p_x, "x column (default: first)");
  plt->add_option("--y", p_y, "y columns (default: all others)");
  plt->add_option("--title", p_title, "chart title (default: file name)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      const fs::path out(s_out);
      Run run("synth", args);
      run.seed(s_seed);
      run.config() = {{"clusters", s_clusters}, {"per", s_per}, {"dim", s_dim}, {"sep", s_sep}, {"queries", s_queries}};
      const auto data = cimon::make_synthetic(s_clusters, s_per, s_dim, s_sep, s_seed, s_queries);
      run.bytes(out, "features.cimf", cimon::encode_feature_views(data.base, 1));
      run.bytes(out, "labels.ciml", cimon::encode_labels(data.labels));
      if (data.queries) {
        run.bytes(out, "queries.cimf", cimon::encode_feature_views(*data.queries, 1));
        run.bytes(out, "query_labels.ciml", cimon::encode_labels(data.query_labels));
      }
      run.finish(out);
    } else if (*mine) {
      const fs::path out(m_out);
      const auto cfg = m_flags.resolve();
      cimon::detail::validate_config(cfg);
      Run run("mine", args);
      run.input("features", m_features);
      run.seed(cfg.seed);
      run.config() = config_json(cfg);
      const auto input = cimon::load_feature_views(m_features);
      cimon::require(input.n() > cfg.K, "need more items than clusters K");
      cimon::FeatureViewPair views = input;
      if (input.stored_views == 1) {
        cimon::AugmentConfig aug = cfg.augment;
        aug.seed = cfg.augment.seed ^ cfg.seed;
        views = cimon::augment_features(input.view1, aug, input.ids);
      }
      // Same seed stream as train(), so sidecar training replays a direct run.
      cimon::Rng rng(cfg.seed);
      const std::uint64_t seed1 = rng.next_u64();
      const std::uint64_t seed2 = rng.next_u64();
      run.bytes(out, "views.cimf", cimon::encode_feature_views(views, 2));
      run.bytes(out, "view1.cims", cimon::encode_semantic_info(cimon::generate_semantic_info(views.view1, cfg.t, cfg.K, seed1)));
      run.bytes(out, "view2.cims", cimon::encode_semantic_info(cimon::generate_semantic_info(views.view2, cfg.t, cfg.K, seed2)));
      run.finish(out);
    } else if (*trn) {
      const fs::path out(t_out);
      const auto cfg = t_flags.resolve();
      Run run("train", args);
      run.input("features", t_features);
      run.seed(cfg.seed);
      run.config() = config_json(cfg);
      const auto views = cimon::load_feature_views(t_features);
      cimon::TrainResult result;
      if (!t_sidecars.empty()) {
        run.input("sidecar1", t_sidecars[0]);
        run.input("sidecar2", t_sidecars[1]);
        result = cimon::train(views, cimon::load_semantic_info(t_sidecars[0]), cimon::load_semantic_info(t_sidecars[1]), cfg);
      } else {
        result = cimon::train(views, cfg);
      }
      run.bytes(out, "model.cimm", cimon::encode_model(result.model));
      run.bytes(out, "codes.cimb", cimon::encode_codes(result.codes));
      run.text(out, "train_log.csv", cimon::format_train_log(result.report.history));
      run.text(out, "config.txt", cimon::to_config_text(cfg));
      run.finish(out);
    } else if (*enc) {
      const fs::path out(e_out);
      Run run("encode", args);
      run.input("model", e_model);
      run.input("features", e_features);
      const auto model = cimon::load_model(e_model);
      const auto views = cimon::load_feature_views(e_features);
      run.bytes(out, e_name, cimon::encode_codes(cimon::encode(model, views.view1)));
      run.finish(out, "manifest_" + fs::path(e_name).stem().string() + ".json");
    } else if (*ev) {
      const fs::path out(v_out);
      Run run("eval", args);
      run.input("queries", v_queries);
      run.input("database", v_database);
      run.input("query_labels", v_qlabels);
      run.input("db_labels", v_dblabels);
      run.config() = {{"R", v_r}, {"topn", v_grid}};
      const auto q = cimon::load_codes(v_queries);
      const auto db = cimon::load_codes(v_database);
      cimon::EvalConfig cfg;
      cfg.R = v_r;
      cfg.topn_grid = v_grid;
      const auto report = cimon::evaluate(q, db, load_labels_for(v_qlabels, q.n()), load_labels_for(v_dblabels, db.n()), cfg);
      json summary;
      summary["map"] = report.map;
      summary["R"] = v_r == 0 ? db.n() : v_r;
      summary["queries"] = q.n();
      summary["database"] = db.n();
      summary["code_length"] = q.length();
      for (const auto& p : report.topn_points) summary["precision_at_" + std::to_string(p.n)] = p.precision;
      run.text(out, "eval_summary.json", summary.dump(2) + "\n");
      run.text(out, "pr.csv", pr_csv(report.pr_points));
      run.text(out, "topn.csv", topn_csv(report.topn_points));
      run.text(out, "ap.csv", ap_csv(report.per_query_ap));
      run.finish(out);
    } else if (*rob) {
      const fs::path out(r_out);
      Run run("robustness", args);
      run.input("model", r_model);
      run.input("queries", r_queries);
      run.input("query_labels", r_qlabels);
      run.input("database", r_database);
      run.input("db_labels", r_dblabels);
      run.seed(r_seed);
      run.config() = {{"sigma", r_sigma}, {"dropout", r_dropout}, {"R", r_r}};
      const auto model = cimon::load_model(r_model);
      const auto queries = cimon::load_feature_views(r_queries);
      const auto db = cimon::load_codes(r_database);
      cimon::EvalConfig cfg;
      cfg.R = r_r;
      const auto report = cimon::robustness_eval(model, queries.view1, load_labels_for(r_qlabels, queries.n()), db,
                                                 load_labels_for(r_dblabels, db.n()), {r_sigma, r_dropout, r_seed}, cfg);
      std::string hist = "changed_bits,count\n";
      for (std::size_t b = 0; b < report.changed_bits_histogram.size(); ++b)
        hist += std::to_string(b) + "," + std::to_string(report.changed_bits_histogram[b]) + "\n";
      json summary;
      summary["median_flips"] = report.median_flips();
      summary["mean_flips"] = report.mean_flips();
      summary["map_before"] = report.map_before;
      summary["map_after"] = report.map_after;
      summary["sigma"] = r_sigma;
      run.text(out, "flips.csv", hist);
      run.text(out, "bit_balance.csv", balance_csv(report.bit_balance));
      run.text(out, "robustness.json", summary.dump(2) + "\n");
      run.finish(out);
    } else if (*abl) {
      const fs::path out(a_out);
      const auto cfg = a_flags.resolve();
      Run run("ablate", args);
      run.input("features", a_features);
      run.input("labels", a_labels);
      run.input("queries", a_queries);
      run.input("query_labels", a_qlabels);
      run.seed(cfg.seed);
      run.config() = config_json(cfg);
      run.config()["lengths"] = a_bits;
      run.config()["R"] = a_r;
      const auto train_views = cimon::load_feature_views(a_features);
      const auto query_views = cimon::load_feature_views(a_queries);
      cimon::RetrievalDataset data{train_views, cimon::load_labels(a_labels), query_views.view1,
                                   cimon::load_labels(a_qlabels)};
      cimon::EvalConfig eval;
      eval.R = a_r;
      const auto rows = cimon::ablation_suite(data, cfg, a_bits, worker_count(a_threads), eval);
      std::string csv = "variant,use_refinement,use_confidence,use_semantic_consistency,use_contrastive,code_length,seed,map\n";
      for (const auto& r : rows) {
        csv += "M" + std::to_string(r.variant) + "," + std::to_string(r.flags.use_refinement) + "," +
               std::to_string(r.flags.use_confidence) + "," + std::to_string(r.flags.use_semantic_consistency) + "," +
               std::to_string(r.flags.use_contrastive) + "," + std::to_string(r.code_length) + "," +
               std::to_string(r.seed) + "," + num(r.map) + "\n";
      }
      run.text(out, "ablation.csv", csv);
      run.finish(out);
    } else if (*plt) {
      const fs::path out(p_out);
      const Table table = read_csv(p_csv);
      if (table.header.size() < 2) throw cimon::Error(cimon::ErrorCode::ShapeMismatch, "plot needs at least two columns");
      const std::size_t x = p_x.empty() ? 0 : table.column(p_x);
      std::vector<std::size_t> ys;
      if (p_y.empty()) {
        for (std::size_t c = 0; c < table.header.size(); ++c)
          if (c != x) ys.push_back(c);
      } else {
        for (const auto& name : p_y) ys.push_back(table.column(name));
      }
      Run run("plot", args);
      run.input("csv", p_csv);
      run.config() = {{"kind", p_kind}};
      const std::string title = p_title.empty() ? fs::path(p_csv).filename().string() : p_title;
      const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
      run.text(dir, out.filename().string(), render_svg(table, p_kind, x, ys, title));
      run.finish(dir, out.filename().string() + ".manifest.json");
    }
  } catch (const cimon::Error& e) {
    std::cerr << "cimon: " << e.what() << "\n";
    return cimon::is_validation_error(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "cimon: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
