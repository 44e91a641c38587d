// Command-line front end: fit, diagnose, subsample, limitdist, simulate,
// montecarlo. Exit codes: 0 success, 2 input/config error, 3 numerical or
// degeneracy failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clusterstable/clusterstable.hpp"

namespace cs = clusterstable;
using json = nlohmann::ordered_json;

namespace {

constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// shared helpers

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void check_output_path(const std::string& path) {
  if (path.empty() || path == "-") return;
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent))
    throw cs::Error(cs::ErrorKind::Io, "output directory '" + parent.string() + "' does not exist");
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cs::Error(cs::ErrorKind::Io, "cannot write '" + path + "'");
  return out;
}

void write_json(const json& j, const std::string& path) {
  if (path.empty()) return;
  if (path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

struct DataArgs {
  std::string path;
  std::string cluster;
  std::string y;
  std::vector<std::string> x;
  bool no_intercept = false;

  void add(CLI::App* app) {
    app->add_option("data", path, "CSV file with a header row")->required();
    app->add_option("--cluster", cluster, "cluster id column")->required();
    app->add_option("--y", y, "response column")->required();
    app->add_option("--x", x, "regressor column (repeatable)")->take_all();
    app->add_flag("--no-intercept", no_intercept, "do not prepend an intercept column");
  }

  cs::ClusteredDataset load() const {
    cs::CsvOptions opt{cluster, y, x, !no_intercept};
    if (x.empty() && no_intercept) throw cs::Error(cs::ErrorKind::InvalidArgument, "no regressors given");
    return cs::load_csv(path, opt);
  }

  json to_json() const {
    return {{"path", path}, {"cluster", cluster}, {"y", y}, {"x", x}, {"intercept", !no_intercept}};
  }
};

struct ContrastArgs {
  std::string coef;
  std::string r;
  double null_value = 0.0;

  void add(CLI::App* app) {
    app->add_option("--coef", coef, "coefficient tested (default: first non-intercept regressor)");
    app->add_option("--r", r, "explicit contrast vector, comma separated");
    app->add_option("--null", null_value, "hypothesised value of r'theta");
  }

  cs::LinearContrast make(const cs::ClusteredDataset& ds) const {
    const cs::Index dim = ds.dim_theta();
    if (!r.empty()) {
      if (!coef.empty()) throw cs::Error(cs::ErrorKind::InvalidArgument, "give --coef or --r, not both");
      std::vector<double> v;
      std::stringstream ss(r);
      std::string item;
      while (std::getline(ss, item, ',')) {
        const auto d = cs::detail::parse_double(cs::detail::trim(item));
        if (!d) throw cs::Error(cs::ErrorKind::InvalidArgument, "bad number '" + item + "' in --r");
        v.push_back(*d);
      }
      if (static_cast<cs::Index>(v.size()) != dim)
        throw cs::Error(cs::ErrorKind::InvalidArgument,
                        "--r has " + std::to_string(v.size()) + " entries, model has " + std::to_string(dim));
      return cs::LinearContrast(Eigen::Map<const cs::Vector>(v.data(), dim), null_value);
    }
    cs::Index j = 0;
    if (!coef.empty()) {
      j = ds.column(coef);
    } else if (dim > 1 && ds.regressor_names().front() == cs::kInterceptName) {
      j = 1;
    }
    return cs::LinearContrast::unit(dim, j, null_value);
  }
};

json contrast_json(const cs::LinearContrast& c) {
  std::vector<double> r(c.r().data(), c.r().data() + c.r().size());
  return {{"r", r}, {"delta_null", c.delta_null()}};
}

std::string contrast_label(const cs::ClusteredDataset& ds, const cs::LinearContrast& c) {
  for (cs::Index j = 0; j < c.r().size(); ++j)
    if (c.r()(j) == 1.0) return ds.regressor_names()[static_cast<std::size_t>(j)];
  return "r'theta";
}

struct SubsampleArgs {
  std::string b = "auto";
  std::size_t M = 1000;
  std::uint64_t seed = 1;
  double level = 0.05;
  std::size_t b_small = 0, b_big = 0, k = 0;  // 0: default grid

  void add(CLI::App* app, bool with_level = true) {
    app->add_option("--b", b, "subsample size or 'auto' (minimum volatility)");
    app->add_option("--M", M, "number of random subsamples per b")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "64-bit seed");
    if (with_level) app->add_option("--level", level, "significance level a");
    app->add_option("--b-small", b_small, "smallest b on the volatility grid");
    app->add_option("--b-big", b_big, "largest b on the volatility grid");
    app->add_option("--k", k, "half width of the volatility window");
  }
};

/// Score subsampling CI, optionally with the minimum-volatility b.
json run_subsampling(const cs::ScoreSubsampler& sub, const SubsampleArgs& a, unsigned threads,
                     std::vector<double>* draws_out, std::ostream& report) {
  if (!(a.level > 0.0 && a.level < 1.0)) throw cs::Error(cs::ErrorKind::InvalidArgument, "level must lie in (0, 1)");
  cs::SubsamplingOptions opt;
  opt.threads = threads;
  json j;
  std::size_t b = 0;
  if (a.b == "auto") {
    auto grid = cs::default_block_grid(sub.G());
    if (a.b_small) grid.b_small = a.b_small;
    if (a.b_big) grid.b_big = a.b_big;
    if (a.k) grid.k = a.k;
    const auto sel = cs::select_b_min_volatility(sub, a.level / 2.0, grid, a.M, a.seed, opt);
    b = sel.b_star;
    json vol = json::array();
    for (std::size_t i = 0; i < sel.volatility.size(); ++i)
      vol.push_back({{"b", sel.volatility[i].first}, {"vi", sel.volatility[i].second}});
    json crit = json::array();
    for (const auto& [bb, cv] : sel.critical_values) crit.push_back({{"b", bb}, {"critical_value", cv}});
    j["b_selection"] = {{"rule", "minimum_volatility"}, {"b_small", grid.b_small}, {"b_big", grid.b_big},
                        {"k", grid.k},  {"critical_values", crit},        {"volatility", vol}};
  } else {
    try {
      std::size_t pos = 0;
      const long v = std::stol(a.b, &pos);
      if (pos != a.b.size() || v < 2) throw std::invalid_argument("b");
      b = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw cs::Error(cs::ErrorKind::InvalidArgument, "--b must be 'auto' or an integer >= 2");
    }
    j["b_selection"] = {{"rule", "fixed"}};
  }
  const auto dist = cs::build_subsampling_distribution(sub, b, a.M, a.seed, opt);
  const auto ci = cs::confidence_interval(sub, dist, a.level / 2.0, a.level / 2.0);
  if (draws_out) *draws_out = dist.draws;
  j["b"] = b;
  j["M"] = dist.M;
  j["enumerated"] = dist.enumerated;
  j["degenerate"] = dist.degenerate;
  j["seed"] = a.seed;
  j["level"] = a.level;
  j["critical_lower"] = ci.critical.lower;
  j["critical_upper"] = ci.critical.upper;
  j["ci"] = {{"lo", ci.lo}, {"hi", ci.hi}};

  report << "score subsampling (OLS): b = " << b << (a.b == "auto" ? " (minimum volatility)" : "")
         << ", M = " << dist.M << (dist.enumerated ? " (all subsets)" : "") << ", seed = " << a.seed << '\n';
  report << "  critical values [" << fmt("%.4f", ci.critical.lower) << ", " << fmt("%.4f", ci.critical.upper)
         << "], degenerate draws " << dist.degenerate << '\n';
  report << "  " << fmt("%g", 100.0 * (1.0 - a.level)) << "% CI [" << fmt("%.6g", ci.lo) << ", "
         << fmt("%.6g", ci.hi) << "]\n";
  return j;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  DataArgs data;
  ContrastArgs contrast;
  SubsampleArgs sub;
  std::string method = "ols";
  std::string variance = "analytic";
  bool cr1 = false;
  bool subsample = false;
  std::string json_path;
};

int cmd_fit(const FitArgs& a, unsigned threads) {
  const auto ds = a.data.load();
  const auto c = a.contrast.make(ds);
  const cs::FitKind kind = a.method == "sacr" ? cs::FitKind::SACR : cs::FitKind::OLS;
  const auto m = cs::compute_moments(ds);
  const auto f = cs::fit(ds, m, kind);
  cs::VarianceEstimate v;
  if (a.variance == "jackknife") {
    if (a.cr1) throw cs::Error(cs::ErrorKind::InvalidArgument, "--cr1 applies to analytic variances only");
    v = cs::jackknife_variance(m, f.theta, kind);
  } else {
    v = cs::analytic_variance(f, a.cr1 ? cs::cr1_factor(ds.G(), ds.N(), ds.dim_theta()) : 1.0);
  }
  const double est = c.apply(f.theta);
  const double se = cs::standard_error(v, c);
  const double t = cs::t_statistic(f, v, c);
  const double level = a.sub.level;
  if (!(level > 0.0 && level < 1.0)) throw cs::Error(cs::ErrorKind::InvalidArgument, "level must lie in (0, 1)");
  const double z = cs::normal_quantile(1.0 - level / 2.0);

  std::ostringstream rep;
  rep << "clusters G = " << ds.G() << ", observations N = " << ds.N() << "\n";
  rep << "estimator " << cs::to_string(kind) << ", variance " << cs::to_string(v.method) << ", a_G = "
      << fmt("%.6g", v.a_G) << "\n\n";
  rep << "coefficient            estimate     std.error\n";
  json coefs = json::array();
  for (cs::Index j = 0; j < ds.dim_theta(); ++j) {
    const double sej = std::sqrt(std::max(0.0, v.matrix(j, j)));
    const auto& name = ds.regressor_names()[static_cast<std::size_t>(j)];
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %12.6g %12.6g\n", name.c_str(), f.theta(j), sej);
    rep << line;
    coefs.push_back({{"name", name}, {"estimate", f.theta(j)}, {"std_error", sej}});
  }
  rep << "\ncontrast " << contrast_label(ds, c) << " = " << fmt("%.6g", est) << ", H0 value "
      << fmt("%.6g", c.delta_null()) << ", se " << fmt("%.6g", se) << ", t = " << fmt("%.4f", t) << '\n';
  rep << "normal " << fmt("%g", 100.0 * (1.0 - level)) << "% CI [" << fmt("%.6g", est - z * se) << ", "
      << fmt("%.6g", est + z * se) << "]\n";

  json j = {{"schema_version", kSchemaVersion},
            {"command", "fit"},
            {"input", a.data.to_json()},
            {"G", ds.G()},
            {"N", ds.N()},
            {"estimator", cs::to_string(kind)},
            {"variance", cs::to_string(v.method)},
            {"a_G", v.a_G},
            {"coefficients", coefs},
            {"contrast", contrast_json(c)},
            {"estimate", est},
            {"std_error", se},
            {"t_statistic", t},
            {"level", level},
            {"normal_ci", {{"lo", est - z * se}, {"hi", est + z * se}}},
            {"subsampling", nullptr}};
  if (a.subsample) {
    const auto ols = kind == cs::FitKind::OLS ? f : cs::fit(ds, m, cs::FitKind::OLS);
    const cs::ScoreSubsampler sub(m, ols, c);
    j["subsampling"] = run_subsampling(sub, a.sub, threads, nullptr, rep);
  }
  if (a.json_path != "-") std::cout << rep.str();
  write_json(j, a.json_path);
  return 0;
}

// ---------------------------------------------------------------------------
// diagnose

struct DiagnoseArgs {
  DataArgs data;
  ContrastArgs contrast;
  double k_fraction = 0.1;
  double level = 0.05;
  std::string json_path;
};

int cmd_diagnose(const DiagnoseArgs& a) {
  const auto ds = a.data.load();
  const auto c = a.contrast.make(ds);
  const auto f = cs::fit_ols(ds);
  const auto d = cs::estimate_tail(cs::contrast_scores(f, c), a.k_fraction, a.level);
  std::ostringstream rep;
  rep << "tail diagnostic for the scores of " << contrast_label(ds, c) << " (G = " << ds.G() << ")\n";
  rep << "  alpha_hat = " << fmt("%.4f", d.alpha_hat) << ", p_hat = " << fmt("%.4f", d.p_hat)
      << ", k = " << d.k << " (k_fraction " << fmt("%g", d.k_fraction) << ")\n";
  rep << "  H0 alpha = 2 at level " << fmt("%g", d.level) << ": " << (d.reject_alpha2 ? "reject" : "do not reject")
      << '\n';
  rep << "  note: " << d.note << '\n';
  json j = {{"schema_version", kSchemaVersion},
            {"command", "diagnose"},
            {"input", a.data.to_json()},
            {"G", ds.G()},
            {"contrast", contrast_json(c)},
            {"alpha_hat", num(d.alpha_hat)},
            {"alpha_hat_infinite", std::isinf(d.alpha_hat)},
            {"p_hat", d.p_hat},
            {"k_fraction", d.k_fraction},
            {"k", d.k},
            {"level", d.level},
            {"reject_alpha2", d.reject_alpha2},
            {"note", d.note}};
  if (a.json_path != "-") std::cout << rep.str();
  write_json(j, a.json_path);
  return 0;
}

// ---------------------------------------------------------------------------
// subsample

struct SubsampleCmdArgs {
  DataArgs data;
  ContrastArgs contrast;
  SubsampleArgs sub;
  std::string out;
  std::string json_path;
};

int cmd_subsample(const SubsampleCmdArgs& a, unsigned threads) {
  check_output_path(a.out);
  const auto ds = a.data.load();
  const auto c = a.contrast.make(ds);
  const auto m = cs::compute_moments(ds);
  const auto f = cs::fit(ds, m, cs::FitKind::OLS);
  const cs::ScoreSubsampler sub(m, f, c);
  std::ostringstream rep;
  rep << "contrast " << contrast_label(ds, c) << ": delta_hat = " << fmt("%.6g", sub.delta_hat())
      << ", sigma_hat = " << fmt("%.6g", sub.sigma_hat()) << '\n';
  std::vector<double> draws;
  json s = run_subsampling(sub, a.sub, threads, &draws, rep);
  if (!a.out.empty()) {
    auto out = open_output(a.out);
    out << "statistic\n";
    for (double d : draws) out << cs::detail::format_double(d) << '\n';
  }
  json j = {{"schema_version", kSchemaVersion}, {"command", "subsample"}, {"input", a.data.to_json()},
            {"G", ds.G()},                      {"contrast", contrast_json(c)}, {"delta_hat", sub.delta_hat()},
            {"sigma_hat", sub.sigma_hat()},     {"subsampling", s}};
  if (a.json_path != "-") std::cout << rep.str();
  write_json(j, a.json_path);
  return 0;
}

// ---------------------------------------------------------------------------
// limitdist

struct LimitArgs {
  double alpha = 2.0;
  double p = 0.5;
  std::size_t n = 10000;
  std::uint64_t seed = 1;
  std::size_t K = cs::kDefaultTruncation;
  bool no_tail = false;
  std::string centering = "full";
  std::optional<double> size_at;
  std::string out;
  std::string json_path;
};

int cmd_limitdist(const LimitArgs& a, unsigned threads) {
  check_output_path(a.out);
  cs::StableLimitParams params;
  params.alpha = a.alpha;
  params.p = a.p;
  params.truncation_K = a.K;
  params.tail_correction = !a.no_tail;
  params.centering = a.centering == "truncated" ? cs::LePageCentering::Truncated : cs::LePageCentering::FullMean;
  params.validate();
  if (a.n < 1) throw cs::Error(cs::ErrorKind::InvalidArgument, "-n must be at least 1");

  // alpha = 2 sizes come from the exact normal tail; draws are only needed for files
  const bool exact_only = a.alpha == 2.0 && a.size_at && a.out.empty();
  std::vector<double> draws;
  if (!exact_only) draws = cs::lepage_sample(params, a.n, a.seed, threads);
  std::ostringstream rep;
  rep << "limit law alpha = " << fmt("%g", a.alpha) << ", p = " << fmt("%g", a.p) << ", K = " << a.K
      << ", seed = " << a.seed << '\n';
  json j = {{"schema_version", kSchemaVersion},
            {"command", "limitdist"},
            {"alpha", a.alpha},
            {"p", a.p},
            {"truncation_K", a.K},
            {"tail_correction", params.tail_correction},
            {"centering", a.centering},
            {"n", a.n},
            {"seed", a.seed},
            {"size_at", nullptr},
            {"size", nullptr}};
  if (a.size_at) {
    double size = 0.0;
    if (a.alpha == 2.0) {
      size = cs::normal_critical_size(params, *a.size_at, a.n, a.seed, threads);
    } else {
      std::size_t exceed = 0;
      for (double d : draws) exceed += std::abs(d) > *a.size_at ? 1 : 0;
      size = static_cast<double>(exceed) / static_cast<double>(draws.size());
    }
    rep << "size of the two-sided test with critical value " << fmt("%g", *a.size_at) << ": " << fmt("%.4f", size)
        << '\n';
    j["size_at"] = *a.size_at;
    j["size"] = size;
  }
  if (!draws.empty()) {
    auto sorted = draws;
    std::sort(sorted.begin(), sorted.end());
    rep << "quantiles 2.5% " << fmt("%.4f", cs::empirical_quantile(sorted, 0.025)) << ", 50% "
        << fmt("%.4f", cs::empirical_quantile(sorted, 0.5)) << ", 97.5% "
        << fmt("%.4f", cs::empirical_quantile(sorted, 0.975)) << '\n';
  }
  if (!a.out.empty()) {
    auto out = open_output(a.out);
    out << "draw\n";
    for (double d : draws) out << cs::detail::format_double(d) << '\n';
    rep << "wrote " << draws.size() << " draws to " << a.out << '\n';
  }
  if (a.json_path != "-") std::cout << rep.str();
  write_json(j, a.json_path);
  return 0;
}

// ---------------------------------------------------------------------------
// DGP and Monte Carlo configuration

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw cs::Error(cs::ErrorKind::InvalidArgument, where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw cs::Error(cs::ErrorKind::InvalidArgument, "unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw cs::Error(cs::ErrorKind::InvalidArgument, std::string("wrong type for '") + key + "'");
  }
}

cs::DgpConfig dgp_from_json(const json& j) {
  check_keys(j,
             {"G", "alpha", "size_scale", "K", "rho", "theta", "treat_fraction", "error_sd_control",
              "error_sd_treated", "size_cap"},
             "dgp");
  cs::DgpConfig c;
  read(j, "G", c.G);
  read(j, "alpha", c.alpha);
  read(j, "size_scale", c.size_scale);
  read(j, "K", c.K);
  read(j, "rho", c.rho);
  read(j, "theta", c.theta);
  read(j, "treat_fraction", c.treat_fraction);
  read(j, "error_sd_control", c.error_sd_control);
  read(j, "error_sd_treated", c.error_sd_treated);
  read(j, "size_cap", c.size_cap);
  c.validate();
  return c;
}

json dgp_to_json(const cs::DgpConfig& c) {
  return {{"G", c.G},
          {"alpha", c.alpha},
          {"size_scale", c.size_scale},
          {"K", c.K},
          {"rho", c.rho},
          {"theta", c.theta_vector()},
          {"treat_fraction", c.treat_fraction},
          {"error_sd_control", c.error_sd_control},
          {"error_sd_treated", c.error_sd_treated},
          {"size_cap", c.size_cap}};
}

json read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cs::Error(cs::ErrorKind::Io, "cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw cs::Error(cs::ErrorKind::InvalidArgument, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version"))
    throw cs::Error(cs::ErrorKind::InvalidArgument, "config needs a schema_version field");
  if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion)
    throw cs::Error(cs::ErrorKind::InvalidArgument,
                    "unsupported schema_version (this build reads " + std::to_string(kSchemaVersion) + ")");
  return j;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string config;
  cs::DgpConfig dgp;
  std::uint64_t seed = 1;
  std::uint64_t index = 0;
  std::string out;
  std::string json_path;
};

int cmd_simulate(SimulateArgs a, const CLI::App& app) {
  check_output_path(a.out);
  if (!a.config.empty()) {
    const json j = read_config(a.config);
    check_keys(j, {"schema_version", "dgp", "seed"}, "config");
    cs::DgpConfig base = j.contains("dgp") ? dgp_from_json(j["dgp"]) : cs::DgpConfig{};
    std::uint64_t seed = a.seed;
    read(j, "seed", seed);
    // command-line flags win over the file
    auto given = [&](const char* name) { return app.count(name) > 0; };
    if (given("--G")) base.G = a.dgp.G;
    if (given("--alpha")) base.alpha = a.dgp.alpha;
    if (given("--size-scale")) base.size_scale = a.dgp.size_scale;
    if (given("--covariates")) base.K = a.dgp.K;
    if (given("--rho")) base.rho = a.dgp.rho;
    if (given("--treat-fraction")) base.treat_fraction = a.dgp.treat_fraction;
    if (given("--sd-control")) base.error_sd_control = a.dgp.error_sd_control;
    if (given("--sd-treated")) base.error_sd_treated = a.dgp.error_sd_treated;
    if (!given("--seed")) a.seed = seed;
    a.dgp = base;
  }
  const auto ds = cs::draw_dataset(a.dgp, a.seed, a.index);
  std::ostringstream rep;
  rep << "simulated G = " << ds.G() << " clusters, N = " << ds.N() << " observations, seed = " << a.seed
      << ", index = " << a.index << '\n';
  if (!a.out.empty()) {
    auto out = open_output(a.out);
    cs::write_csv(ds, out);
    rep << "wrote " << a.out << " (columns cluster, y, T" << (a.dgp.K ? ", X1.." : "") << ")\n";
  }
  std::vector<cs::Index> sizes;
  for (const auto& c : ds.clusters()) sizes.push_back(c.size());
  json j = {{"schema_version", kSchemaVersion}, {"command", "simulate"}, {"dgp", dgp_to_json(a.dgp)},
            {"seed", a.seed},                   {"index", a.index},      {"G", ds.G()},
            {"N", ds.N()},                      {"cluster_sizes", sizes}};
  if (a.json_path != "-") std::cout << rep.str();
  write_json(j, a.json_path);
  return 0;
}

// ---------------------------------------------------------------------------
// montecarlo

struct MonteCarloArgs {
  std::string config;
  std::optional<std::size_t> replications;
  std::optional<std::uint64_t> seed;
  std::string csv, json_path, qq, qq_method;
  bool timing = false;
};

int cmd_montecarlo(const MonteCarloArgs& a, unsigned threads) {
  const json j = read_config(a.config);
  check_keys(j,
             {"schema_version", "dgp", "methods", "replications", "level", "seed", "subsample", "bootstrap", "cr1",
              "wild_denominator", "output"},
             "config");
  if (!j.contains("dgp")) throw cs::Error(cs::ErrorKind::InvalidArgument, "config needs a dgp object");
  const cs::DgpConfig dgp = dgp_from_json(j["dgp"]);

  std::vector<std::string> method_names{"CR", "JACK", "SACR", "SACR_JACK"};
  read(j, "methods", method_names);
  std::vector<cs::McMethod> methods;
  for (const auto& n : method_names) methods.push_back(cs::parse_mc_method(n));

  std::size_t reps = 100;
  double level = 0.05;
  std::uint64_t seed = 1;
  read(j, "replications", reps);
  read(j, "level", level);
  read(j, "seed", seed);
  if (a.replications) reps = *a.replications;
  if (a.seed) seed = *a.seed;

  cs::MonteCarloOptions opt;
  opt.threads = threads;
  if (j.contains("subsample")) {
    const auto& s = j["subsample"];
    check_keys(s, {"M", "b"}, "subsample");
    read(s, "M", opt.subsample_M);
    if (s.contains("b") && !(s["b"].is_string() && s["b"] == "auto")) {
      std::size_t b = 0;
      read(s, "b", b);
      opt.subsample_b = b;
    }
  }
  if (j.contains("bootstrap")) {
    check_keys(j["bootstrap"], {"B"}, "bootstrap");
    read(j["bootstrap"], "B", opt.bootstrap_B);
  }
  read(j, "cr1", opt.cr1);
  std::string wild = "refit";
  read(j, "wild_denominator", wild);
  if (wild == "signed_restricted") opt.wild_denominator = cs::WildDenominator::SignedRestricted;
  else if (wild != "refit") throw cs::Error(cs::ErrorKind::InvalidArgument, "wild_denominator must be refit or signed_restricted");

  std::string csv, json_out, qq, qq_method = "CR";
  if (j.contains("output")) {
    const auto& o = j["output"];
    check_keys(o, {"csv", "json", "qq", "qq_method"}, "output");
    read(o, "csv", csv);
    read(o, "json", json_out);
    read(o, "qq", qq);
    read(o, "qq_method", qq_method);
  }
  if (!a.csv.empty()) csv = a.csv;
  if (!a.json_path.empty()) json_out = a.json_path;
  if (!a.qq.empty()) qq = a.qq;
  if (!a.qq_method.empty()) qq_method = a.qq_method;
  for (const auto& p : {csv, json_out, qq}) check_output_path(p);
  std::optional<cs::McMethod> qm;
  if (!qq.empty()) {
    qm = cs::parse_mc_method(qq_method);
    if (!cs::is_t_method(*qm)) throw cs::Error(cs::ErrorKind::InvalidArgument, "qq_method must be a t-statistic method");
    if (std::find(methods.begin(), methods.end(), *qm) == methods.end())
      throw cs::Error(cs::ErrorKind::InvalidArgument, "qq_method must be one of the configured methods");
    if (reps < 100) throw cs::Error(cs::ErrorKind::InvalidArgument, "Q-Q output needs at least 100 replications");
    opt.keep_statistics = true;
  }

  std::size_t step = std::max<std::size_t>(1, reps / 10);
  opt.progress = [step](std::size_t done, std::size_t total) {
    if (done % step == 0 || done == total) std::cerr << "# replication " << done << "/" << total << '\n';
  };
  std::cerr << "# montecarlo seed " << seed << ", " << reps << " replications, " << cs::resolve_threads(threads)
            << " thread(s)\n";
  const auto r = cs::run_monte_carlo(dgp, methods, reps, level, seed, opt);

  std::ostringstream table;
  table << "seed " << seed << ", replications " << reps << ", failed " << r.failed_replications
            << ", giant clusters " << r.giant_cluster_events << '\n';
  table << "method     estimator  coverage  rejection       mse\n";
  json rows = json::array();
  for (const auto& s : r.rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%-10s %-9s %9.4f %10.4f %9.5f\n", cs::to_string(s.method).c_str(),
                  s.estimator.c_str(), s.coverage, s.rejection, s.mse);
    table << line;
    rows.push_back({{"method", cs::to_string(s.method)},
                    {"estimator", s.estimator},
                    {"ok", s.ok},
                    {"failed", s.failed},
                    {"coverage", num(s.coverage)},
                    {"rejection", num(s.rejection)},
                    {"mse", num(s.mse)},
                    {"mean_ci_length", num(s.mean_ci_length)},
                    {"mean_b", num(s.mean_b)}});
  }
  if (!csv.empty()) {
    auto out = open_output(csv);
    cs::write_report_csv(r, out);
  }
  if (qm) {
    const auto pairs = cs::qq_pairs(r.row(*qm).statistics);
    auto out = open_output(qq);
    cs::write_qq_csv(pairs, out);
  }
  json rep = {{"schema_version", kSchemaVersion},
              {"command", "montecarlo"},
              {"seed", seed},
              {"replications", reps},
              {"level", level},
              {"dgp", dgp_to_json(dgp)},
              {"methods", method_names},
              {"cr1", opt.cr1},
              {"wild_denominator", wild},
              {"subsample_M", opt.subsample_M},
              {"subsample_b", opt.subsample_b ? json(*opt.subsample_b) : json("auto")},
              {"bootstrap_B", opt.bootstrap_B},
              {"failed_replications", r.failed_replications},
              {"giant_cluster_events", r.giant_cluster_events},
              {"rows", rows}};
  if (a.timing) rep["wall_seconds"] = r.wall_seconds;
  if (json_out != "-") std::cout << table.str();
  write_json(rep, json_out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster-robust inference under heavy-tailed cluster sizes"};
  app.require_subcommand(1);
  app.fallthrough();  // global --threads may follow the subcommand
  unsigned threads = 0;
  app.add_option("--threads", threads, "worker threads (default: CLUSTERSTABLE_THREADS, then all cores)");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "OLS or SACR fit with cluster-robust inference");
  fit.data.add(fit_cmd);
  fit.contrast.add(fit_cmd);
  fit_cmd->add_option("--method", fit.method, "ols or sacr")->check(CLI::IsMember({"ols", "sacr"}));
  fit_cmd->add_option("--variance", fit.variance, "analytic or jackknife")
      ->check(CLI::IsMember({"analytic", "jackknife"}));
  fit_cmd->add_flag("--cr1", fit.cr1, "scale the analytic variance by G/(G-1)(N-1)/(N-k)");
  fit_cmd->add_flag("--subsample", fit.subsample, "add a score-subsampling confidence interval");
  fit.sub.add(fit_cmd);
  fit_cmd->add_option("--json", fit.json_path, "write JSON report to a file ('-' for stdout)");

  DiagnoseArgs diag;
  auto* diag_cmd = app.add_subcommand("diagnose", "Hill-estimator tail diagnostic of the contrast scores");
  diag.data.add(diag_cmd);
  diag.contrast.add(diag_cmd);
  diag_cmd->add_option("--k-fraction", diag.k_fraction, "share of top order statistics used");
  diag_cmd->add_option("--level", diag.level, "level of the test of alpha = 2");
  diag_cmd->add_option("--json", diag.json_path, "write JSON report to a file ('-' for stdout)");

  SubsampleCmdArgs subs;
  auto* sub_cmd = app.add_subcommand("subsample", "score-subsampling distribution and confidence interval");
  subs.data.add(sub_cmd);
  subs.contrast.add(sub_cmd);
  subs.sub.add(sub_cmd);
  sub_cmd->add_option("--out", subs.out, "write the sorted subsampled statistics to CSV");
  sub_cmd->add_option("--json", subs.json_path, "write JSON report to a file ('-' for stdout)");

  LimitArgs lim;
  auto* lim_cmd = app.add_subcommand("limitdist", "sample the self-normalized limit law");
  lim_cmd->add_option("--alpha", lim.alpha, "index of stability in (1, 2]");
  lim_cmd->add_option("--p", lim.p, "tail balance in [0, 1]");
  lim_cmd->add_option("-n", lim.n, "number of draws");
  lim_cmd->add_option("--seed", lim.seed, "64-bit seed");
  lim_cmd->add_option("--truncation", lim.K, "number of series terms kept");
  lim_cmd->add_flag("--no-tail-correction", lim.no_tail, "drop the Gaussian approximation of the series tail");
  lim_cmd->add_option("--centering", lim.centering, "full or truncated")
      ->check(CLI::IsMember({"full", "truncated"}));
  lim_cmd->add_option("--size-at", lim.size_at, "report P(|draw| > c)");
  lim_cmd->add_option("--out", lim.out, "write draws to CSV");
  lim_cmd->add_option("--json", lim.json_path, "write JSON report to a file ('-' for stdout)");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "draw one dataset from the cluster-treatment design");
  sim_cmd->add_option("--config", sim.config, "JSON file with a dgp object");
  sim_cmd->add_option("--G", sim.dgp.G, "number of clusters");
  sim_cmd->add_option("--alpha", sim.dgp.alpha, "Pareto exponent of cluster sizes");
  sim_cmd->add_option("--size-scale", sim.dgp.size_scale, "N_g = ceil(scale * Pareto(1, alpha))");
  sim_cmd->add_option("--covariates", sim.dgp.K, "number of covariates beyond the treatment");
  sim_cmd->add_option("--rho", sim.dgp.rho, "within-cluster correlation");
  sim_cmd->add_option("--treat-fraction", sim.dgp.treat_fraction, "share of treated clusters");
  sim_cmd->add_option("--sd-control", sim.dgp.error_sd_control, "error scale of control clusters");
  sim_cmd->add_option("--sd-treated", sim.dgp.error_sd_treated, "error scale of treated clusters");
  sim_cmd->add_option("--seed", sim.seed, "64-bit seed");
  sim_cmd->add_option("--index", sim.index, "dataset index within the seed's stream family");
  sim_cmd->add_option("--out", sim.out, "write the dataset to CSV");
  sim_cmd->add_option("--json", sim.json_path, "write JSON summary to a file ('-' for stdout)");

  MonteCarloArgs mc;
  auto* mc_cmd = app.add_subcommand("montecarlo", "run a Monte Carlo study from a JSON config");
  mc_cmd->add_option("config", mc.config, "study definition (JSON)")->required();
  mc_cmd->add_option("--replications", mc.replications, "override the replication count");
  mc_cmd->add_option("--seed", mc.seed, "override the seed");
  mc_cmd->add_option("--csv", mc.csv, "per-method CSV report");
  mc_cmd->add_option("--json", mc.json_path, "JSON report ('-' for stdout)");
  mc_cmd->add_option("--qq", mc.qq, "Q-Q CSV for one t-statistic method");
  mc_cmd->add_option("--qq-method", mc.qq_method, "method for --qq (CR, JACK, SACR, SACR_JACK)");
  mc_cmd->add_flag("--timing", mc.timing, "include wall time in the JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit, threads);
    if (*diag_cmd) return cmd_diagnose(diag);
    if (*sub_cmd) return cmd_subsample(subs, threads);
    if (*lim_cmd) return cmd_limitdist(lim, threads);
    if (*sim_cmd) return cmd_simulate(sim, *sim_cmd);
    if (*mc_cmd) return cmd_montecarlo(mc, threads);
  } catch (const cs::Error& e) {
    std::cerr << "error: " << e.what();
    if (e.row) std::cerr << " (row " << *e.row << ")";
    std::cerr << '\n';
    return cs::is_input_error(e.kind()) ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
