#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbn/expr.hpp"
#include "tbn/rng.hpp"

namespace tbn {

enum class Task { Regression, Classification };

inline std::string to_string(Task t) {
  return t == Task::Regression ? "regression" : "classification";
}
inline Task task_from_string(const std::string& s) {
  if (s == "regression") return Task::Regression;
  if (s == "classification") return Task::Classification;
  throw std::invalid_argument("unknown task: " + s);
}

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
  bool defined() const { return !train.empty() || !val.empty() || !test.empty(); }
};

// Per-feature affine map onto [-1, 1], computed from the training split.
struct FeatureScaling {
  std::vector<double> lo, hi;
};

struct TargetScaling {
  double lo = 0.0, hi = 0.0;
};

struct Dataset {
  std::size_t n_rows = 0;
  std::size_t n_features = 0;
  std::vector<double> X;  // row-major n_rows x n_features
  std::vector<double> y;
  Task task = Task::Regression;
  std::vector<std::string> feature_names;
  std::vector<std::string> class_labels;  // classification: index -> label
  std::optional<FeatureScaling> feature_scaling;
  std::optional<TargetScaling> target_scaling;
  SplitIndices split;
  std::vector<double> y_clean;  // pre-noise targets for synthetic data

  std::span<const double> row(std::size_t i) const {
    return {X.data() + i * n_features, n_features};
  }
  std::span<double> row(std::size_t i) {
    return {X.data() + i * n_features, n_features};
  }

  std::size_t n_classes() const { return class_labels.size(); }
};

// ---------------------------------------------------------------------------
// Synthetic benchmarks
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  PolyTemplate poly;
  int d = 4;
  std::size_t n_points = 600;
  double sample_lo = -50.0;
  double sample_hi = 50.0;
  double noise_level = 0.0;
  std::uint64_t seed = 0;
};

// The ten ground-truth polynomials of the synthetic benchmark suite.
inline PolyTemplate synthetic_poly(int index) {
  switch (index) {
    case 1: return {{{2, 6}}, 10};
    case 2: return {{{4, 3}}, 10};
    case 3: return {{{2, 4}, {1, 5}}, 10};
    case 4: return {{{4, 2}, {1, 6}}, 10};
    case 5: return {{{4, 2}, {2, 3}, {1, 6}}, 10};
    case 6: return {{{4, 3}, {3, 4}, {2, 2}, {1, 3}}, 10};
    case 7: return {{{4, 4}, {2, 2}}, 10};
    case 8: return {{{4, 2}, {3, 3}}, 10};
    case 9: return {{{3, 2}, {1, 3}}, 10};
    case 10: return {{{5, 3}, {4, 4}, {1, 5}}, 10};
    default:
      throw std::invalid_argument("synthetic_poly: index must be 1..10");
  }
}

// Clean dataset: X uniform over [lo, hi]^d, y from the template.
inline Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.n_points < 1) throw std::invalid_argument("gen_synthetic: n_points < 1");
  if (!(spec.sample_lo < spec.sample_hi))
    throw std::invalid_argument("gen_synthetic: empty sample range");
  Dataset ds;
  ds.n_rows = spec.n_points;
  ds.n_features = static_cast<std::size_t>(spec.d);
  ds.X.resize(ds.n_rows * ds.n_features);
  ds.y.resize(ds.n_rows);
  Rng rng = make_rng(spec.seed);
  for (double& v : ds.X) v = uniform_real(rng, spec.sample_lo, spec.sample_hi);
  for (std::size_t i = 0; i < ds.n_rows; ++i) ds.y[i] = spec.poly.eval(ds.row(i));
  ds.feature_names.reserve(ds.n_features);
  for (std::size_t j = 0; j < ds.n_features; ++j)
    ds.feature_names.push_back("x" + std::to_string(j));
  return ds;
}

// Root-mean-square of the targets; the scale used by the noise model.
inline double signal_power(std::span<const double> y) {
  if (y.empty()) throw std::invalid_argument("signal_power: empty input");
  double s = 0.0;
  for (double v : y) s += v * v;
  return std::sqrt(s / static_cast<double>(y.size()));
}

// y_bar = y + eps * E(y) * n with n ~ N(0, 1) per element.
inline std::vector<double> add_noise(std::span<const double> y, double eps,
                                     Rng& rng) {
  if (eps < 0) throw std::invalid_argument("add_noise: negative noise level");
  std::vector<double> out(y.begin(), y.end());
  if (eps == 0.0) return out;
  double scale = eps * signal_power(y);
  for (double& v : out) v += scale * std_normal(rng);
  return out;
}

// gen + noise + stored clean targets, in one step.
inline Dataset make_synthetic(const SyntheticSpec& spec) {
  Dataset ds = gen_synthetic(spec);
  if (spec.noise_level > 0.0) {
    ds.y_clean = ds.y;
    Rng rng = make_rng(spec.seed + 0x9e3779b97f4a7c15ULL);
    ds.y = add_noise(ds.y_clean, spec.noise_level, rng);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Splitting and normalization
// ---------------------------------------------------------------------------

inline void split_dataset(Dataset& ds, const std::vector<double>& ratios,
                          std::uint64_t seed) {
  if (ratios.size() != 2 && ratios.size() != 3)
    throw std::invalid_argument("split: need 2 or 3 ratios");
  double sum = std::accumulate(ratios.begin(), ratios.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split: ratios must sum to 1");
  std::vector<std::size_t> perm(ds.n_rows);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<std::size_t> sizes(ratios.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    sizes[i] = static_cast<std::size_t>(ratios[i] * static_cast<double>(ds.n_rows));
    assigned += sizes[i];
  }
  // Leftover rows go to the splits with the largest fractional parts.
  std::vector<std::size_t> order(ratios.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    double fa = ratios[a] * ds.n_rows - std::floor(ratios[a] * ds.n_rows);
    double fb = ratios[b] * ds.n_rows - std::floor(ratios[b] * ds.n_rows);
    return fa > fb;
  });
  for (std::size_t i = 0; assigned < ds.n_rows; ++i, ++assigned)
    sizes[order[i % order.size()]]++;

  for (std::size_t s : sizes)
    if (s == 0) throw std::invalid_argument("split: a split would be empty");

  auto it = perm.begin();
  ds.split.train.assign(it, it + sizes[0]);
  it += sizes[0];
  if (ratios.size() == 3) {
    ds.split.val.assign(it, it + sizes[1]);
    it += sizes[1];
  } else {
    ds.split.val.clear();
  }
  ds.split.test.assign(it, perm.end());
}

namespace detail {
inline const std::vector<std::size_t>& train_rows(const Dataset& ds,
                                                  std::vector<std::size_t>& all) {
  if (ds.split.defined()) return ds.split.train;
  all.resize(ds.n_rows);
  std::iota(all.begin(), all.end(), 0);
  return all;
}
}  // namespace detail

// Maps every feature onto [-1, 1] using min/max computed on the training
// split only (all rows when no split is defined). Values outside the training
// range intentionally map outside [-1, 1].
inline void normalize_minmax(Dataset& ds) {
  std::vector<std::size_t> all;
  const auto& rows = detail::train_rows(ds, all);
  FeatureScaling sc;
  sc.lo.assign(ds.n_features, std::numeric_limits<double>::infinity());
  sc.hi.assign(ds.n_features, -std::numeric_limits<double>::infinity());
  for (std::size_t i : rows) {
    auto r = ds.row(i);
    for (std::size_t j = 0; j < ds.n_features; ++j) {
      sc.lo[j] = std::min(sc.lo[j], r[j]);
      sc.hi[j] = std::max(sc.hi[j], r[j]);
    }
  }
  for (std::size_t j = 0; j < ds.n_features; ++j) {
    if (!(sc.hi[j] > sc.lo[j])) {
      std::string name = j < ds.feature_names.size() ? ds.feature_names[j]
                                                     : std::to_string(j);
      throw std::invalid_argument("normalize_minmax: constant feature '" + name +
                                  "'");
    }
  }
  for (std::size_t i = 0; i < ds.n_rows; ++i) {
    auto r = ds.row(i);
    for (std::size_t j = 0; j < ds.n_features; ++j)
      r[j] = 2.0 * (r[j] - sc.lo[j]) / (sc.hi[j] - sc.lo[j]) - 1.0;
  }
  ds.feature_scaling = sc;
}

inline void denormalize_features(Dataset& ds) {
  if (!ds.feature_scaling) return;
  const auto& sc = *ds.feature_scaling;
  for (std::size_t i = 0; i < ds.n_rows; ++i) {
    auto r = ds.row(i);
    for (std::size_t j = 0; j < ds.n_features; ++j)
      r[j] = sc.lo[j] + (r[j] + 1.0) * 0.5 * (sc.hi[j] - sc.lo[j]);
  }
  ds.feature_scaling.reset();
}

// Same train-only min/max treatment for regression targets.
inline void normalize_target_minmax(Dataset& ds) {
  if (ds.task != Task::Regression)
    throw std::invalid_argument("normalize_target_minmax: regression only");
  std::vector<std::size_t> all;
  const auto& rows = detail::train_rows(ds, all);
  TargetScaling sc{std::numeric_limits<double>::infinity(),
                   -std::numeric_limits<double>::infinity()};
  for (std::size_t i : rows) {
    sc.lo = std::min(sc.lo, ds.y[i]);
    sc.hi = std::max(sc.hi, ds.y[i]);
  }
  if (!(sc.hi > sc.lo))
    throw std::invalid_argument("normalize_target_minmax: constant target");
  for (double& v : ds.y) v = 2.0 * (v - sc.lo) / (sc.hi - sc.lo) - 1.0;
  ds.target_scaling = sc;
}

// ---------------------------------------------------------------------------
// CSV ingestion (RFC-4180-style, header row required)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> parse_csv_record(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c == '\r' && i + 1 == line.size()) {
      // trailing CR from CRLF files
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline bool parse_double_strict(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
  if (begin == end) return false;
  auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc{} && res.ptr == end;
}

}  // namespace detail

// Numeric features only; classification targets may be arbitrary labels and
// are mapped to contiguous integers in sorted order (mapping recorded in
// class_labels). Missing values are an error listing the offending rows.
inline Dataset load_csv(const std::string& path, const std::string& target_column,
                        Task task) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("load_csv: empty file " + path);
  std::vector<std::string> header = detail::parse_csv_record(line);
  auto target_it = std::find(header.begin(), header.end(), target_column);
  if (target_it == header.end())
    throw std::invalid_argument("load_csv: target column '" + target_column +
                                "' not found");
  std::size_t target_idx = static_cast<std::size_t>(target_it - header.begin());

  Dataset ds;
  ds.task = task;
  ds.n_features = header.size() - 1;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (j != target_idx) ds.feature_names.push_back(header[j]);

  std::vector<std::string> raw_targets;
  std::vector<std::size_t> missing_rows;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    ++row_no;
    std::vector<std::string> fields = detail::parse_csv_record(line);
    if (fields.size() != header.size())
      throw std::invalid_argument("load_csv: row " + std::to_string(row_no) +
                                  " has " + std::to_string(fields.size()) +
                                  " fields, expected " +
                                  std::to_string(header.size()));
    bool missing = false;
    for (const auto& f : fields)
      if (f.empty()) missing = true;
    if (missing) {
      missing_rows.push_back(row_no);
      continue;
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      if (j == target_idx) {
        raw_targets.push_back(fields[j]);
        continue;
      }
      double v;
      if (!detail::parse_double_strict(fields[j], v))
        throw std::invalid_argument("load_csv: non-numeric value '" + fields[j] +
                                    "' in column '" + header[j] + "', row " +
                                    std::to_string(row_no));
      ds.X.push_back(v);
    }
    ++ds.n_rows;
  }
  if (!missing_rows.empty()) {
    std::string msg = "load_csv: missing values in rows";
    for (std::size_t r : missing_rows) msg += " " + std::to_string(r);
    throw std::invalid_argument(msg);
  }
  if (ds.n_rows == 0) throw std::invalid_argument("load_csv: no data rows");

  if (task == Task::Classification) {
    std::vector<std::string> labels = raw_targets;
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    ds.class_labels = labels;
    ds.y.reserve(raw_targets.size());
    for (const auto& t : raw_targets) {
      auto it = std::lower_bound(labels.begin(), labels.end(), t);
      ds.y.push_back(static_cast<double>(it - labels.begin()));
    }
  } else {
    ds.y.reserve(raw_targets.size());
    for (std::size_t i = 0; i < raw_targets.size(); ++i) {
      double v;
      if (!detail::parse_double_strict(raw_targets[i], v))
        throw std::invalid_argument("load_csv: non-numeric target '" +
                                    raw_targets[i] + "' in row " +
                                    std::to_string(i + 1));
      ds.y.push_back(v);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset directory serialization: meta.json + raw little-endian doubles
// ---------------------------------------------------------------------------

namespace detail {

inline void write_doubles(const std::filesystem::path& p,
                          std::span<const double> v) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(const std::filesystem::path& p,
                                        std::size_t count) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::vector<double> v(count);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("short read from " + p.string());
  return v;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["n_rows"] = ds.n_rows;
  meta["n_features"] = ds.n_features;
  meta["task"] = to_string(ds.task);
  meta["feature_names"] = ds.feature_names;
  if (!ds.class_labels.empty()) meta["class_labels"] = ds.class_labels;
  if (ds.feature_scaling)
    meta["feature_scaling"] = {{"lo", ds.feature_scaling->lo},
                               {"hi", ds.feature_scaling->hi}};
  if (ds.target_scaling)
    meta["target_scaling"] = {{"lo", ds.target_scaling->lo},
                              {"hi", ds.target_scaling->hi}};
  if (ds.split.defined()) {
    meta["split"] = {{"train", ds.split.train}, {"test", ds.split.test}};
    if (!ds.split.val.empty()) meta["split"]["val"] = ds.split.val;
  }
  meta["has_clean_targets"] = !ds.y_clean.empty();
  std::ofstream mf(dir / "meta.json");
  mf << meta.dump(2) << "\n";
  detail::write_doubles(dir / "X.bin", ds.X);
  detail::write_doubles(dir / "y.bin", ds.y);
  if (!ds.y_clean.empty()) detail::write_doubles(dir / "y_clean.bin", ds.y_clean);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw std::invalid_argument("load_dataset: missing meta.json in " +
                                       dir.string());
  nlohmann::json meta = nlohmann::json::parse(mf);
  Dataset ds;
  ds.n_rows = meta.at("n_rows").get<std::size_t>();
  ds.n_features = meta.at("n_features").get<std::size_t>();
  ds.task = task_from_string(meta.at("task").get<std::string>());
  ds.feature_names = meta.at("feature_names").get<std::vector<std::string>>();
  if (meta.contains("class_labels"))
    ds.class_labels = meta["class_labels"].get<std::vector<std::string>>();
  if (meta.contains("feature_scaling")) {
    FeatureScaling sc;
    sc.lo = meta["feature_scaling"]["lo"].get<std::vector<double>>();
    sc.hi = meta["feature_scaling"]["hi"].get<std::vector<double>>();
    ds.feature_scaling = sc;
  }
  if (meta.contains("target_scaling"))
    ds.target_scaling = TargetScaling{
        meta["target_scaling"]["lo"].get<double>(),
        meta["target_scaling"]["hi"].get<double>()};
  if (meta.contains("split")) {
    ds.split.train = meta["split"]["train"].get<std::vector<std::size_t>>();
    ds.split.test = meta["split"]["test"].get<std::vector<std::size_t>>();
    if (meta["split"].contains("val"))
      ds.split.val = meta["split"]["val"].get<std::vector<std::size_t>>();
  }
  ds.X = detail::read_doubles(dir / "X.bin", ds.n_rows * ds.n_features);
  ds.y = detail::read_doubles(dir / "y.bin", ds.n_rows);
  if (meta.value("has_clean_targets", false))
    ds.y_clean = detail::read_doubles(dir / "y_clean.bin", ds.n_rows);
  return ds;
}

}  // namespace tbn
