#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cubethin/chain_io.hpp"
#include "cubethin/control_variates.hpp"
#include "cubethin/cube.hpp"
#include "cubethin/errors.hpp"
#include "cubethin/metrics.hpp"
#include "cubethin/numerics.hpp"
#include "cubethin/rng.hpp"
#include "cubethin/samplers.hpp"
#include "cubethin/thinning.hpp"

namespace cubethin {

/// Shared configuration of the command-line entry points.
struct RunConfig {
  std::string input_path;
  std::vector<std::string> subsample_paths;  // metrics command
  std::string target_path;                   // mu/Sigma file for cube-gibbs
  std::string method = "cube-full";
  std::vector<std::string> methods;          // compare command
  Index M = 100;
  Index burn_in = 0;
  std::uint64_t seed = 0;
  Index replicates = 1;
  std::vector<std::string> metrics = {"ksd", "ed", "star"};
  std::string out_dir = ".";
  double bandwidth = 0.0;  // 0: median heuristic
  Index n_boxes = 4096;
  Index ref_cap = 4000;  // reference size cap for metric evaluation (0: none)
  int threads = 0;       // 0: hardware concurrency
  // experiment-truncnorm knobs
  Index dim = 10;
  Index chain_length = 100000;
  std::string export_chain_path;

  void validate() const {
    if (M < 1) throw InvalidRange("config: M must be >= 1");
    if (burn_in < 0) throw InvalidRange("config: burn-in must be >= 0");
    if (replicates < 1) throw InvalidRange("config: replicates must be >= 1");
  }
};

namespace detail {

inline void ensure_out_dir(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
}

inline std::string out_file(const RunConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  return out;
}

/// Runs body(0..count-1) on a small worker pool; results must be written to
/// per-index slots.  The first exception is rethrown after joining.
inline void run_parallel(Index count, int threads, const std::function<void(Index)>& body) {
  int n_threads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min<int>(n_threads, static_cast<int>(count)));
  if (n_threads == 1) {
    for (Index i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const Index i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline bool wants(const RunConfig& cfg, const std::string& metric) {
  return std::find(cfg.metrics.begin(), cfg.metrics.end(), metric) != cfg.metrics.end();
}

}  // namespace detail

/// Target parameter file: first row mu, next d rows Sigma (plain CSV).
inline void write_target(const std::string& path, const Vector& mu, const Matrix& sigma) {
  auto out = detail::open_out(path);
  for (Index j = 0; j < mu.size(); ++j) {
    if (j) out << ',';
    out << detail::format_double(mu(j));
  }
  out << "\n";
  for (Index i = 0; i < sigma.rows(); ++i) {
    for (Index j = 0; j < sigma.cols(); ++j) {
      if (j) out << ',';
      out << detail::format_double(sigma(i, j));
    }
    out << "\n";
  }
}

inline std::pair<Vector, Matrix> read_target(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open target file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    Index field_no = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string_view field(line.data() + start,
                                   (comma == std::string::npos ? line.size() : comma) - start);
      row.push_back(detail::parse_field(field, line_no, ++field_no));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("target file: empty");
  const Index d = static_cast<Index>(rows[0].size());
  if (static_cast<Index>(rows.size()) != d + 1)
    throw DimensionError("target file: expected 1 + d rows");
  Vector mu(d);
  Matrix sigma(d, d);
  for (Index j = 0; j < d; ++j) mu(j) = rows[0][static_cast<std::size_t>(j)];
  for (Index i = 0; i < d; ++i) {
    if (static_cast<Index>(rows[static_cast<std::size_t>(i + 1)].size()) != d)
      throw DimensionError("target file: Sigma row " + std::to_string(i + 1) + " has wrong width");
    for (Index j = 0; j < d; ++j)
      sigma(i, j) = rows[static_cast<std::size_t>(i + 1)][static_cast<std::size_t>(j)];
  }
  return {std::move(mu), std::move(sigma)};
}

/// Subsample file: header `index,sign,magnitude`, one row per selected copy.
inline void write_subsample(const std::string& path, const SignedSubsample& sub) {
  auto out = detail::open_out(path);
  out << "index,sign,magnitude\n";
  for (std::size_t i = 0; i < sub.indices.size(); ++i)
    out << sub.indices[i] << ',' << sub.signs[i] << ','
        << detail::format_double(sub.magnitude) << "\n";
}

inline SignedSubsample read_subsample(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open subsample file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("subsample file: empty");
  SignedSubsample sub;
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    long long index = 0;
    int sign = 0;
    double magnitude = 0.0;
    if (std::sscanf(line.c_str(), "%lld,%d,%lf", &index, &sign, &magnitude) != 3)
      throw ParseError("subsample file line " + std::to_string(line_no) + ": bad row");
    sub.indices.push_back(static_cast<Index>(index));
    sub.signs.push_back(sign);
    sub.magnitude = magnitude;
  }
  if (sub.indices.empty()) throw ParseError("subsample file: no rows");
  sub.M = static_cast<Index>(sub.indices.size());
  return sub;
}

namespace detail {

inline ControlVariateMatrix control_variates_for(const Chain& chain, const RunConfig& cfg,
                                                 const std::string& method) {
  if (method == "cube-full") return score_cv_full(chain);
  if (method == "cube-diagonal") return score_cv_diagonal(chain);
  if (method == "cube-gibbs") {
    if (cfg.target_path.empty())
      throw InvalidRange("method cube-gibbs requires --target (mu/Sigma file)");
    auto [mu, sigma] = read_target(cfg.target_path);
    return gibbs_cv_truncnorm(chain, mu, sigma);
  }
  throw InvalidRange("no control variates for method '" + method + "'");
}

/// Runs one thinning method on the (already burn-in-truncated) chain.
inline SignedSubsample run_method(const Chain& chain, const std::string& method,
                                  const RunConfig& cfg, Rng& rng) {
  SignedSubsample sub;
  if (method == "thin") {
    auto idx = standard_thin(chain, 0, cfg.M);
    sub.indices = idx;
    sub.signs.assign(idx.size(), 1);
    sub.magnitude = 1.0 / static_cast<double>(cfg.M);
    sub.M = cfg.M;
    return sub;
  }
  if (method == "stein-greedy") {
    double bw = cfg.bandwidth;
    if (!(bw > 0.0)) bw = median_bandwidth(chain.states);
    auto idx = stein_thin_greedy(chain, cfg.M, bw);
    sub.indices = idx;
    sub.signs.assign(idx.size(), 1);
    sub.magnitude = 1.0 / static_cast<double>(cfg.M);
    sub.M = cfg.M;
    return sub;
  }
  if (method == "cube-full" || method == "cube-diagonal" || method == "cube-gibbs") {
    ControlVariateMatrix cv = control_variates_for(chain, cfg, method);
    return cube_thin(chain, cv, cfg.M, rng);
  }
  throw InvalidRange("unknown method '" + method + "'");
}

/// Reference measure for metric evaluation: the post-burn-in chain, stride
/// thinned down to ref_cap support points when larger.
inline EmpiricalSignedMeasure reference_measure(const Chain& chain, const RunConfig& cfg) {
  if (cfg.ref_cap > 0 && chain.size() > cfg.ref_cap) {
    auto idx = standard_thin(chain, 0, cfg.ref_cap);
    return measure_from_indices(chain, idx);
  }
  return measure_from_chain(chain);
}

struct MetricValues {
  std::optional<double> ksd;
  std::optional<double> energy;
  std::optional<double> star;
};

/// Shared per-run context so the expensive reference self-distance sum is
/// computed once across replicates.
struct MetricContext {
  EmpiricalSignedMeasure ref;
  SteinKernelConfig kernel;
  std::optional<double> ref_self_term;  // (1/a2^2) sum |y - y'|

  static MetricContext make(const Chain& chain, const RunConfig& cfg) {
    MetricContext ctx;
    ctx.ref = reference_measure(chain, cfg);
    double bw = cfg.bandwidth;
    if (!(bw > 0.0) && wants(cfg, "ksd")) bw = median_bandwidth(chain.states);
    ctx.kernel.bandwidth = (bw > 0.0) ? bw : 1.0;
    if (wants(cfg, "ed")) {
      double self2 = 0.0;
      const Matrix& pts = ctx.ref.points;
      const Vector& w = ctx.ref.weights;
      for (Index i = 0; i < pts.rows(); ++i)
        for (Index j = i + 1; j < pts.rows(); ++j)
          self2 += 2.0 * w(i) * w(j) * (pts.row(i) - pts.row(j)).norm();
      const double a2 = ctx.ref.total_mass();
      ctx.ref_self_term = self2 / (a2 * a2);
    }
    return ctx;
  }
};

inline MetricValues evaluate_metrics(const Chain& chain, const SignedSubsample& sub,
                                     const MetricContext& ctx, const RunConfig& cfg,
                                     std::uint64_t star_seed) {
  MetricValues values;
  EmpiricalSignedMeasure nu = measure_from_subsample(chain, sub);
  if (wants(cfg, "ksd")) {
    if (!chain.has_scores()) throw MissingScores("ksd requested but chain has no scores");
    const Index m = sub.size();
    Matrix pts(m, chain.dim()), scr(m, chain.dim());
    for (Index i = 0; i < m; ++i) {
      pts.row(i) = chain.states.row(sub.indices[static_cast<std::size_t>(i)]);
      scr.row(i) = chain.scores->row(sub.indices[static_cast<std::size_t>(i)]);
    }
    values.ksd = ksd(pts, scr, ctx.kernel, sub.signs);
  }
  if (wants(cfg, "ed")) {
    const double partial = energy_distance(nu, ctx.ref, /*drop_ref_term=*/true);
    values.energy = partial - *ctx.ref_self_term;
  }
  if (wants(cfg, "star")) {
    Rng rng(star_seed);
    values.star = star_discrepancy(nu, ctx.ref, cfg.n_boxes, rng);
  }
  return values;
}

inline void write_metrics_header(std::ostream& out) {
  out << "method,replicate,ksd,energy_distance,star_discrepancy\n";
}

inline void write_metrics_row(std::ostream& out, const std::string& method, Index replicate,
                              const MetricValues& v) {
  out << method << ',' << replicate << ',';
  if (v.ksd) out << format_double(*v.ksd);
  out << ',';
  if (v.energy) out << format_double(*v.energy);
  out << ',';
  if (v.star) out << format_double(*v.star);
  out << "\n";
}

}  // namespace detail

/// `weights` command: control-variate weights of every state, one CSV row per
/// state (burn-in-dropped states are not listed when --burnin is set).
inline std::string cmd_weights(const RunConfig& cfg) {
  cfg.validate();
  Chain chain = ingest_chain(cfg.input_path);
  if (cfg.burn_in > 0) chain = chain.drop_burn_in(cfg.burn_in);
  ControlVariateMatrix cv = detail::control_variates_for(chain, cfg, cfg.method);
  WeightedSample ws = cv_weights(cv);

  detail::ensure_out_dir(cfg);
  const std::string path = detail::out_file(cfg, "weights.csv");
  auto out = detail::open_out(path);
  out << "index,w\n";
  for (Index n = 0; n < ws.size(); ++n)
    out << (n + cfg.burn_in) << ',' << detail::format_double(ws.weights(n)) << "\n";
  return path;
}

/// `thin` command: one subsample file plus a one-row summary with the seed,
/// Omega, vertex-vs-landing outcome, and worst constraint residual.
inline std::string cmd_thin(const RunConfig& cfg) {
  cfg.validate();
  Chain chain = ingest_chain(cfg.input_path);
  if (cfg.burn_in > 0) chain = chain.drop_burn_in(cfg.burn_in);

  Rng rng = Rng::substream(cfg.seed, 0);
  SignedSubsample sub = detail::run_method(chain, cfg.method, cfg, rng);
  // Report indices in the original file frame.
  for (auto& idx : sub.indices) idx += cfg.burn_in;

  detail::ensure_out_dir(cfg);
  const std::string sub_path = detail::out_file(cfg, "subsample.csv");
  write_subsample(sub_path, sub);

  auto summary = detail::open_out(detail::out_file(cfg, "summary.csv"));
  summary << "method,seed,M,omega,landing_used,max_abs_constraint_sum\n";
  summary << cfg.method << ',' << cfg.seed << ',' << sub.M << ',';
  const bool is_cube = cfg.method.rfind("cube", 0) == 0;
  if (is_cube) {
    summary << detail::format_double(sub.magnitude * static_cast<double>(sub.M)) << ','
            << (sub.landing_used ? 1 : 0) << ','
            << detail::format_double(sub.constraint_residuals.size()
                                         ? sub.constraint_residuals.cwiseAbs().maxCoeff()
                                         : 0.0);
  } else {
    summary << ",,";
  }
  summary << "\n";
  return sub_path;
}

/// `metrics` command: evaluates the requested metrics for each given
/// subsample file against the reference chain; one CSV row per file.
inline std::string cmd_metrics(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.subsample_paths.empty()) throw InvalidRange("metrics: no subsample files given");
  Chain chain = ingest_chain(cfg.input_path);
  if (cfg.burn_in > 0) chain = chain.drop_burn_in(cfg.burn_in);
  detail::MetricContext ctx = detail::MetricContext::make(chain, cfg);

  detail::ensure_out_dir(cfg);
  const std::string path = detail::out_file(cfg, "metrics.csv");
  auto out = detail::open_out(path);
  detail::write_metrics_header(out);
  for (std::size_t i = 0; i < cfg.subsample_paths.size(); ++i) {
    SignedSubsample sub = read_subsample(cfg.subsample_paths[i]);
    for (auto& idx : sub.indices) {
      idx -= cfg.burn_in;
      if (idx < 0 || idx >= chain.size())
        throw InvalidRange("metrics: subsample index outside the reference chain");
    }
    detail::MetricValues v = detail::evaluate_metrics(
        chain, sub, ctx, cfg, splitmix_of(cfg.seed, 0xABCD + static_cast<std::uint64_t>(i)));
    detail::write_metrics_row(out, std::filesystem::path(cfg.subsample_paths[i]).stem().string(),
                              static_cast<Index>(i), v);
  }
  return path;
}

/// `compare` command: runs each method for the requested number of seeded
/// replicates and emits one metrics row per (method, replicate).
inline std::string cmd_compare(const RunConfig& cfg) {
  cfg.validate();
  std::vector<std::string> methods = cfg.methods;
  if (methods.empty()) methods = {"cube-full", "thin"};
  Chain chain = ingest_chain(cfg.input_path);
  if (cfg.burn_in > 0) chain = chain.drop_burn_in(cfg.burn_in);
  detail::MetricContext ctx = detail::MetricContext::make(chain, cfg);

  const Index total = static_cast<Index>(methods.size()) * cfg.replicates;
  std::vector<detail::MetricValues> results(static_cast<std::size_t>(total));
  detail::run_parallel(total, cfg.threads, [&](Index slot) {
    const auto method = methods[static_cast<std::size_t>(slot / cfg.replicates)];
    const Index rep = slot % cfg.replicates;
    Rng rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(slot) + 1);
    SignedSubsample sub = detail::run_method(chain, method, cfg, rng);
    results[static_cast<std::size_t>(slot)] = detail::evaluate_metrics(
        chain, sub, ctx, cfg, splitmix_of(cfg.seed, 0x57A12 + static_cast<std::uint64_t>(slot)));
    (void)rep;
  });

  detail::ensure_out_dir(cfg);
  const std::string path = detail::out_file(cfg, "metrics.csv");
  auto out = detail::open_out(path);
  detail::write_metrics_header(out);
  for (Index slot = 0; slot < total; ++slot)
    detail::write_metrics_row(out, methods[static_cast<std::size_t>(slot / cfg.replicates)],
                              slot % cfg.replicates, results[static_cast<std::size_t>(slot)]);
  return path;
}

/// Estimator comparison of the truncated-normal Gibbs experiment: for each
/// replicate and component, the full-chain mean (usualEstim), the standard
/// thinning mean (thinEstim), the control-variate weighted estimate
/// (regressionEstim), and the cube-thinning estimate (cubeEstim).
struct TruncnormExperimentResult {
  Vector mu;
  Matrix sigma;
  Matrix usual, thin, regression, cube;  // replicates x d
};

inline TruncnormExperimentResult run_truncnorm_experiment(const RunConfig& cfg) {
  cfg.validate();
  const Index d = cfg.dim;
  const Index n = cfg.chain_length;
  const Index reps = cfg.replicates;

  Rng mu_rng = Rng::substream(cfg.seed, 1);
  Vector mu(d);
  for (Index i = 0; i < d; ++i) mu(i) = mu_rng.normal();
  Matrix sigma = random_spd(d, splitmix_of(cfg.seed, 2));
  TruncatedNormalTarget target(mu, sigma);

  TruncnormExperimentResult res;
  res.mu = mu;
  res.sigma = sigma;
  res.usual.resize(reps, d);
  res.thin.resize(reps, d);
  res.regression.resize(reps, d);
  res.cube.resize(reps, d);

  detail::run_parallel(reps, cfg.threads, [&](Index r) {
    GibbsChain gchain =
        truncnorm_gibbs(target, n, splitmix_of(cfg.seed, 100 + static_cast<std::uint64_t>(r)));
    Chain chain = gchain.to_chain();

    res.usual.row(r) = chain.states.colwise().mean();

    auto thin_idx = standard_thin(chain, 0, cfg.M);
    Vector thin_mean = Vector::Zero(d);
    for (Index i : thin_idx) thin_mean += chain.states.row(i).transpose();
    res.thin.row(r) = (thin_mean / static_cast<double>(thin_idx.size())).transpose();

    ControlVariateMatrix cv = gibbs_cv_truncnorm(chain, mu, sigma);
    WeightedSample ws = cv_weights(cv);
    res.regression.row(r) = (chain.states.transpose() * ws.weights).transpose();

    Rng cube_rng = Rng::substream(cfg.seed, 1000000 + static_cast<std::uint64_t>(r));
    SignedSubsample sub = cube_thin_weighted(cv, ws, cfg.M, cube_rng);
    for (Index c = 0; c < d; ++c)
      res.cube(r, c) = subsample_estimate(sub, chain.states.col(c));
  });
  return res;
}

inline std::string cmd_experiment_truncnorm(const RunConfig& cfg) {
  TruncnormExperimentResult res = run_truncnorm_experiment(cfg);

  detail::ensure_out_dir(cfg);
  write_target(detail::out_file(cfg, "target.csv"), res.mu, res.sigma);
  if (!cfg.export_chain_path.empty()) {
    GibbsChain gchain = truncnorm_gibbs(TruncatedNormalTarget(res.mu, res.sigma),
                                        cfg.chain_length, splitmix_of(cfg.seed, 100));
    write_chain_csv(cfg.export_chain_path, gchain.to_chain());
  }

  const std::string path = detail::out_file(cfg, "estimates.csv");
  auto out = detail::open_out(path);
  out << "replicate,component,estimator,value\n";
  auto emit = [&](const char* name, const Matrix& values) {
    for (Index r = 0; r < values.rows(); ++r)
      for (Index c = 0; c < values.cols(); ++c)
        out << r << ',' << c << ',' << name << ',' << detail::format_double(values(r, c))
            << "\n";
  };
  emit("usualEstim", res.usual);
  emit("thinEstim", res.thin);
  emit("regressionEstim", res.regression);
  emit("cubeEstim", res.cube);
  return path;
}

}  // namespace cubethin
