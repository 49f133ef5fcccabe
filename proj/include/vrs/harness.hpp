#pragma once

#include "vrs/estimators.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace vrs {

/// Evaluates a function at every row of a point matrix.
using BatchFn = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

/// splitmix64 of (base, stream): independent-looking seeds for the
/// sampler, folds and Monte Carlo points of one replicate.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

enum class TargetKind
{
  sin_density,
  ginzburg_landau,
  sin_regression,
  gaussmix_regression,
  constant_regression
};

/// Simulation targets on [-1, 1]^d.
///   sin density:       sin(pi/d sum x_j + pi/4) + 1
///   Ginzburg-Landau:   exp(-beta sum_{j=0}^{d} [lambda/2 ((x_j - x_{j+1})/h)^2
///                                          + (x_j^2 - 1/16)^2 / (4 lambda)]),
///                      x_0 = x_{d+1} = 0
///   sin regression:    sin(sum x_j), uniform design, N(0, 1) noise
///   gaussmix:          1/2 exp(-mean (3x^2+1)/4) + 1/2 exp(-mean (7x^2+1)/8),
///                      truncated N(0, 4 I) design, N(0, 1) noise
///   constant:          f = 1, uniform design, no noise
struct Target
{
  TargetKind kind = TargetKind::sin_density;
  int d = 2;
  double beta = 4.0;
  double lambda = 1.0 / 16;
  double h = 0.25;

  static Target sin_density(int d);
  static Target ginzburg_landau(int d, double beta = 4.0, double lambda = 1.0 / 16, double h = 0.25);
  static Target sin_regression(int d);
  static Target gaussmix_regression(int d);
  static Target constant_regression(int d);

  bool is_density() const noexcept;
  BoxDomain domain() const { return BoxDomain::cube(d, -1.0, 1.0); }
  std::string name() const;

  /// Log of the unnormalized density (density targets only).
  double log_unnormalized(std::span<const double> x) const;
  /// Regression function (regression targets only).
  double regression(std::span<const double> x) const;
};

/// Integral of sin(a sum x_j + b) + 1 over [-1, 1]^d with a = pi/d, b = pi/4:
/// 2^d + Im[e^{ib} (2 sin a / a)^d].
double sin_density_normalizer(int d);

/// Transfer-operator quadrature for the Ginzburg-Landau chain: per-site
/// Gauss-Legendre grids, forward and backward messages rescaled in log space.
struct GlOracle
{
  Target target;
  double log_z = 0.0;
  std::vector<double> nodes;
  std::vector<double> weights;
  /// Log-scaled forward (into site j from the left) and backward messages.
  std::vector<Eigen::VectorXd> forward;
  std::vector<Eigen::VectorXd> backward;
  std::vector<double> forward_log;
  std::vector<double> backward_log;

  /// Marginal density of site j (0-based) at x.
  double marginal(int site, double x) const;
  /// Marginal probability of [a, b] for site j, by Gauss quadrature.
  double marginal_mass(int site, double a, double b) const;
};

GlOracle gl_transfer_oracle(int d, double beta, double lambda, double h, int grid);
GlOracle gl_transfer_oracle(const Target& target, int grid);

/// Normalized truth for density targets; the GL normalizer comes from the
/// transfer oracle at `oracle_grid` nodes.
BatchFn density_truth(const Target& target, int oracle_grid = 128);
BatchFn regression_truth(const Target& target);

struct MhConfig
{
  double step = 0.4;
  int burn_in = 10000;
  int thinning = 5;
  std::uint64_t seed = 0;
};

struct MhResult
{
  Eigen::MatrixXd samples;
  double acceptance_rate = 0.0;
};

/// Random-walk Metropolis on [-1, 1]^d: every coordinate moves by
/// U(-step, step), reflected at the faces. Starts at the origin, drops
/// burn_in states, then keeps every thinning-th state.
MhResult mh_sample(const std::function<double(std::span<const double>)>& log_density,
                   int d,
                   long long n,
                   const MhConfig& cfg);
MhResult mh_sample(const Target& target, long long n, const MhConfig& cfg);

/// Regression design and responses for a regression target.
struct RegressionData
{
  Eigen::MatrixXd points;
  Eigen::VectorXd responses;
};

RegressionData sample_regression(const Target& target, long long n, std::uint64_t seed);

Eigen::MatrixXd uniform_box_points(const BoxDomain& box, long long n, std::uint64_t seed);

struct ErrorEstimate
{
  double value = 0.0;
  /// Delta-method standard error of the Monte Carlo ratio.
  double se = 0.0;
};

/// sqrt(mean (est - truth)^2) / sqrt(mean truth^2) on paired values.
ErrorEstimate relative_l2_error(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth);

/// Monte Carlo over n_mc uniform points of the box.
ErrorEstimate relative_l2_error_mc(const BatchFn& estimate,
                                   const BatchFn& truth,
                                   const BoxDomain& box,
                                   long long n_mc,
                                   std::uint64_t seed);

/// Tensor Gauss-Legendre with `nodes` points per axis (meant for d <= 3).
double relative_l2_error_quadrature(const BatchFn& estimate,
                                    const BatchFn& truth,
                                    const BoxDomain& box,
                                    int nodes = 64);

/// Product-Gaussian kernel density estimate with one bandwidth on every axis.
struct KdeEstimate
{
  Eigen::MatrixXd samples;
  double bandwidth = 1.0;

  Eigen::VectorXd evaluate(const Eigen::MatrixXd& points) const;
};

/// Nadaraya-Watson regression with a product-Gaussian kernel.
struct NwEstimate
{
  Eigen::MatrixXd points;
  Eigen::VectorXd responses;
  double bandwidth = 1.0;

  /// Weights are rescaled by the nearest sample, so the denominator never
  /// underflows.
  Eigen::VectorXd evaluate(const Eigen::MatrixXd& query) const;
};

struct BandwidthCv
{
  double bandwidth = 0.0;
  /// (bandwidth, mean CV score) on the subsample, in grid order.
  std::vector<std::pair<double, double>> table;
};

struct BaselineOptions
{
  std::vector<double> bandwidths; // empty: default_bandwidths of the CV subsample
  int folds = 5;
  std::uint64_t seed = 0;
  /// Bandwidth CV runs on at most this many samples; the winner is rescaled
  /// by (n_cv / N)^(1 / (d + 4)).
  long long cv_cap = 4000;
};

/// Scott's rule h0 = mean_sd * n^(-1/(d+4)) times 2^(k/2), k = -4..2.
std::vector<double> default_bandwidths(const Eigen::MatrixXd& samples);

/// KDE with the bandwidth chosen by K-fold CV of the ISE surrogate
/// int p^2 - (2/|val|) sum_val p.
KdeEstimate kde_baseline(const Eigen::MatrixXd& samples, const BaselineOptions& opt, BandwidthCv* cv = nullptr);

/// NW with the bandwidth chosen by K-fold CV of validation MSE.
NwEstimate nw_baseline(const Eigen::MatrixXd& points,
                       const Eigen::VectorXd& responses,
                       const BaselineOptions& opt,
                       BandwidthCv* cv = nullptr);

// ---------------------------------------------------------------------------
// Experiment pipelines shared by the command line and the acceptance suite.

struct ExperimentSpec
{
  Target target;
  long long n = 10000;
  int reps = 1;
  std::uint64_t seed = 0;
  /// density: "vrs", "kde"; regression: "vrs", "nw".
  std::vector<std::string> methods{ "vrs" };
  CvGrid grid;
  int max_rank = 10;
  long long n_mc = 10000;
  MhConfig mh;
  BaselineOptions baseline;
  /// When false fit_ms is written as 0, keeping output byte-reproducible.
  bool timing = true;
};

struct RunRecord
{
  std::string method;
  std::string model;
  int d = 0;
  long long n = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  double rel_l2_error = 0.0;
  long long fit_ms = 0;
  int m = 0;
  int l = 0;
  std::vector<int> ranks;
};

struct ExperimentResult
{
  std::vector<RunRecord> records;
  /// One diagnostic per failed replicate.
  std::vector<std::string> failures;
};

/// Replicate r uses seed (spec.seed XOR r); records come in replicate order,
/// methods in the order given.
ExperimentResult run_density_experiment(const ExperimentSpec& spec);
ExperimentResult run_regression_experiment(const ExperimentSpec& spec);

inline constexpr const char* kRunCsvHeader = "method,model,d,n,rep,seed,rel_l2_error,fit_ms,m,l,ranks";

/// One CSV row; reals at 17 significant digits, ranks joined by ';'.
std::string format_run_record(const RunRecord& r);
void write_run_csv(std::ostream& out, std::span<const RunRecord> records);
/// Parses a CSV written by write_run_csv; throws std::runtime_error on a
/// header or field mismatch.
std::vector<RunRecord> read_run_csv(std::istream& in);

} // namespace vrs
