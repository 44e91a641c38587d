#ifndef CLUSTERSTABLE_DATA_HPP
#define CLUSTERSTABLE_DATA_HPP

#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "clusterstable/errors.hpp"

namespace clusterstable {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr std::string_view kInterceptName = "(Intercept)";

struct Cluster {
  std::string id;
  Matrix X;  // N_g x dim_theta
  Vector Y;  // N_g

  Index size() const { return Y.size(); }
};

/// Observations grouped by cluster. Immutable once built; share freely
/// across threads.
class ClusteredDataset {
 public:
  ClusteredDataset() = default;
  ClusteredDataset(std::vector<Cluster> clusters, std::vector<std::string> regressor_names = {})
      : clusters_(std::move(clusters)), names_(std::move(regressor_names)) {
    if (names_.empty() && !clusters_.empty()) {
      for (Index j = 0; j < clusters_.front().X.cols(); ++j) names_.push_back("x" + std::to_string(j + 1));
    }
  }

  std::size_t G() const { return clusters_.size(); }
  Index dim_theta() const { return clusters_.empty() ? 0 : clusters_.front().X.cols(); }
  Index N() const {
    Index n = 0;
    for (const auto& c : clusters_) n += c.size();
    return n;
  }

  const Cluster& operator[](std::size_t g) const { return clusters_[g]; }
  const std::vector<Cluster>& clusters() const { return clusters_; }
  const std::vector<std::string>& regressor_names() const { return names_; }

  /// Position of a named regressor; throws MissingColumn.
  Index column(std::string_view name) const {
    for (std::size_t j = 0; j < names_.size(); ++j)
      if (names_[j] == name) return static_cast<Index>(j);
    throw Error(ErrorKind::MissingColumn, "no regressor named '" + std::string(name) + "'");
  }

 private:
  std::vector<Cluster> clusters_;
  std::vector<std::string> names_;
};

struct Violation {
  std::optional<std::size_t> cluster;  // index, empty for dataset-level problems
  std::string cluster_id;
  std::string description;
};

/// Every invariant violation, dataset-level first, then clusters in order.
inline std::vector<Violation> validate(const ClusteredDataset& ds) {
  std::vector<Violation> out;
  if (ds.G() < 2)
    out.push_back({std::nullopt, {}, "need at least 2 clusters, have " + std::to_string(ds.G())});
  if (!ds.clusters().empty() && ds.dim_theta() < 1)
    out.push_back({std::nullopt, {}, "regressor dimension must be positive"});
  if (!ds.regressor_names().empty() && !ds.clusters().empty() &&
      static_cast<Index>(ds.regressor_names().size()) != ds.dim_theta())
    out.push_back({std::nullopt, {}, "regressor name count does not match dimension"});

  const Index dim = ds.dim_theta();
  std::unordered_set<std::string> seen;
  for (std::size_t g = 0; g < ds.G(); ++g) {
    const Cluster& c = ds[g];
    auto add = [&](std::string msg) { out.push_back({g, c.id, std::move(msg)}); };
    if (!seen.insert(c.id).second) add("duplicate cluster id");
    if (c.Y.size() == 0) add("empty cluster");
    if (c.X.rows() != c.Y.size())
      add("X has " + std::to_string(c.X.rows()) + " rows but Y has length " + std::to_string(c.Y.size()));
    if (c.X.cols() != dim)
      add("X has " + std::to_string(c.X.cols()) + " columns, expected " + std::to_string(dim));
    if (!c.X.allFinite()) add("non-finite entry in X");
    if (!c.Y.allFinite()) add("non-finite entry in Y");
  }
  return out;
}

/// Builds a dataset and throws InvalidDataset listing every violation.
inline ClusteredDataset make_dataset(std::vector<Cluster> clusters,
                                     std::vector<std::string> regressor_names = {}) {
  ClusteredDataset ds(std::move(clusters), std::move(regressor_names));
  const auto violations = validate(ds);
  if (!violations.empty()) {
    std::string msg;
    for (const auto& v : violations) {
      if (!msg.empty()) msg += "; ";
      msg += v.cluster ? "cluster '" + v.cluster_id + "': " + v.description : v.description;
    }
    Error e(ErrorKind::InvalidDataset, msg);
    e.cluster = violations.front().cluster;
    throw e;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvOptions {
  std::string cluster_col;
  std::string y_col;
  std::vector<std::string> x_cols;
  bool add_intercept = true;
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += "\"\"";
    else out.push_back(ch);
  }
  return out + "\"";
}

}  // namespace detail

/// Reads a header-first CSV and groups rows by the cluster column. Clusters
/// keep first-appearance order; rows keep file order within a cluster.
inline ClusteredDataset parse_csv(std::istream& in, const CsvOptions& opt) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty())
    throw Error(ErrorKind::EmptyFile, "no header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
    line.erase(0, 3);

  const auto header = detail::split_csv_line(line);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t j = 0; j < header.size(); ++j) pos.emplace(std::string(detail::trim(header[j])), j);
  auto locate = [&](const std::string& name) {
    const auto it = pos.find(name);
    if (it == pos.end()) throw Error(ErrorKind::MissingColumn, "column '" + name + "' not in header");
    return it->second;
  };
  const std::size_t cluster_pos = locate(opt.cluster_col);
  const std::size_t y_pos = locate(opt.y_col);
  std::vector<std::size_t> x_pos;
  for (const auto& name : opt.x_cols) x_pos.push_back(locate(name));

  struct Rows {
    std::string id;
    std::vector<double> x;  // row-major
    std::vector<double> y;
  };
  std::vector<Rows> groups;
  std::unordered_map<std::string, std::size_t> group_of;
  const std::size_t kx = x_pos.size();

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto fields = detail::split_csv_line(line);
    auto field = [&](std::size_t p, const std::string& name) -> const std::string& {
      if (p >= fields.size()) {
        Error e(ErrorKind::NonNumericCell,
                "row " + std::to_string(row) + ": missing value in column '" + name + "'");
        e.row = row;
        throw e;
      }
      return fields[p];
    };
    auto number = [&](std::size_t p, const std::string& name) {
      const auto v = detail::parse_double(field(p, name));
      if (!v) {
        Error e(ErrorKind::NonNumericCell, "row " + std::to_string(row) + ", column '" + name +
                                               "': cannot parse '" + fields[p] + "'");
        e.row = row;
        throw e;
      }
      return *v;
    };
    const std::string id(detail::trim(field(cluster_pos, opt.cluster_col)));
    auto [it, inserted] = group_of.emplace(id, groups.size());
    if (inserted) groups.push_back({id, {}, {}});
    Rows& grp = groups[it->second];
    grp.y.push_back(number(y_pos, opt.y_col));
    for (std::size_t j = 0; j < kx; ++j) grp.x.push_back(number(x_pos[j], opt.x_cols[j]));
  }
  if (row == 0) throw Error(ErrorKind::EmptyFile, "header present but no data rows");
  if (groups.size() < 2)
    throw Error(ErrorKind::SingleCluster, "column '" + opt.cluster_col + "' has a single distinct value");

  const Index dim = static_cast<Index>(kx) + (opt.add_intercept ? 1 : 0);
  std::vector<Cluster> clusters;
  clusters.reserve(groups.size());
  for (auto& grp : groups) {
    const Index n = static_cast<Index>(grp.y.size());
    Cluster c;
    c.id = std::move(grp.id);
    c.Y = Eigen::Map<const Vector>(grp.y.data(), n);
    c.X.resize(n, dim);
    const Index off = opt.add_intercept ? 1 : 0;
    if (opt.add_intercept) c.X.col(0).setOnes();
    for (Index i = 0; i < n; ++i)
      for (std::size_t j = 0; j < kx; ++j) c.X(i, off + static_cast<Index>(j)) = grp.x[i * kx + j];
    clusters.push_back(std::move(c));
  }
  std::vector<std::string> names;
  if (opt.add_intercept) names.emplace_back(kInterceptName);
  for (const auto& n : opt.x_cols) names.push_back(n);
  return make_dataset(std::move(clusters), std::move(names));
}

inline ClusteredDataset load_csv(const std::filesystem::path& path, const CsvOptions& opt) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  return parse_csv(in, opt);
}

/// Writes one row per observation: cluster, y, then every regressor except
/// the intercept column. Values use shortest round-trip formatting, so
/// reloading reproduces every finite double bit-exactly.
inline void write_csv(const ClusteredDataset& ds, std::ostream& out,
                      const std::string& cluster_col = "cluster", const std::string& y_col = "y") {
  const auto& names = ds.regressor_names();
  std::vector<Index> cols;
  out << detail::csv_escape(cluster_col) << ',' << detail::csv_escape(y_col);
  for (Index j = 0; j < ds.dim_theta(); ++j) {
    if (names[static_cast<std::size_t>(j)] == kInterceptName) continue;
    cols.push_back(j);
    out << ',' << detail::csv_escape(names[static_cast<std::size_t>(j)]);
  }
  out << '\n';
  for (const auto& c : ds.clusters()) {
    const std::string id = detail::csv_escape(c.id);
    for (Index i = 0; i < c.size(); ++i) {
      out << id << ',' << detail::format_double(c.Y(i));
      for (Index j : cols) out << ',' << detail::format_double(c.X(i, j));
      out << '\n';
    }
  }
}

}  // namespace clusterstable

#endif  // CLUSTERSTABLE_DATA_HPP
