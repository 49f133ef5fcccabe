#include "vrs/harness.hpp"

#include "vrs/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace vrs {

std::uint64_t
derive_seed(std::uint64_t base, std::uint64_t stream)
{
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Targets

namespace {

Target
make(TargetKind kind, int d)
{
  if (d < 1)
    throw std::invalid_argument("target dimension must be >= 1");
  Target t;
  t.kind = kind;
  t.d = d;
  return t;
}

double
gl_onsite(double x, double lambda)
{
  const double s = x * x - 1.0 / 16;
  return s * s / (4 * lambda);
}

double
gl_coupling(double a, double b, double lambda, double h)
{
  const double t = (a - b) / h;
  return 0.5 * lambda * t * t;
}

} // namespace

Target
Target::sin_density(int d)
{
  return make(TargetKind::sin_density, d);
}

Target
Target::ginzburg_landau(int d, double beta, double lambda, double h)
{
  Target t = make(TargetKind::ginzburg_landau, d);
  if (!(lambda > 0) || !(h > 0))
    throw std::invalid_argument("Ginzburg-Landau needs lambda > 0 and h > 0");
  t.beta = beta;
  t.lambda = lambda;
  t.h = h;
  return t;
}

Target
Target::sin_regression(int d)
{
  return make(TargetKind::sin_regression, d);
}

Target
Target::gaussmix_regression(int d)
{
  return make(TargetKind::gaussmix_regression, d);
}

Target
Target::constant_regression(int d)
{
  return make(TargetKind::constant_regression, d);
}

bool
Target::is_density() const noexcept
{
  return kind == TargetKind::sin_density || kind == TargetKind::ginzburg_landau;
}

std::string
Target::name() const
{
  switch (kind) {
    case TargetKind::sin_density:
    case TargetKind::sin_regression:
      return "sin";
    case TargetKind::ginzburg_landau:
      return "gl";
    case TargetKind::gaussmix_regression:
      return "gaussmix";
    case TargetKind::constant_regression:
      return "const";
  }
  return "";
}

double
Target::log_unnormalized(std::span<const double> x) const
{
  if (kind == TargetKind::sin_density) {
    double s = 0.0;
    for (double v : x)
      s += v;
    return std::log(std::sin(std::numbers::pi / d * s + std::numbers::pi / 4) + 1.0);
  }
  if (kind == TargetKind::ginzburg_landau) {
    double v = gl_onsite(0.0, lambda);
    double prev = 0.0;
    for (double xj : x) {
      v += gl_coupling(prev, xj, lambda, h) + gl_onsite(xj, lambda);
      prev = xj;
    }
    v += gl_coupling(prev, 0.0, lambda, h);
    return -beta * v;
  }
  throw std::logic_error("log_unnormalized called on a regression target");
}

double
Target::regression(std::span<const double> x) const
{
  switch (kind) {
    case TargetKind::sin_regression: {
      double s = 0.0;
      for (double v : x)
        s += v;
      return std::sin(s);
    }
    case TargetKind::gaussmix_regression: {
      double a = 0.0, b = 0.0;
      for (double v : x) {
        a += (3 * v * v + 1) / 4;
        b += (7 * v * v + 1) / 8;
      }
      return 0.5 * std::exp(-a / d) + 0.5 * std::exp(-b / d);
    }
    case TargetKind::constant_regression:
      return 1.0;
    default:
      throw std::logic_error("regression called on a density target");
  }
}

double
sin_density_normalizer(int d)
{
  if (d < 1)
    throw std::invalid_argument("dimension must be >= 1");
  // at d = 1, a = pi and the oscillatory part vanishes exactly
  if (d == 1)
    return 2.0;
  const double a = std::numbers::pi / d;
  return std::pow(2.0, d) + std::sin(std::numbers::pi / 4) * std::pow(2 * std::sin(a) / a, d);
}

// ---------------------------------------------------------------------------
// Ginzburg-Landau transfer oracle

namespace {

// Rescales v to max 1, returning the log of the factor removed.
double
normalize_log(Eigen::VectorXd& v)
{
  const double m = v.maxCoeff();
  if (!(m > 0))
    throw std::runtime_error("transfer oracle: message underflowed");
  v /= m;
  return std::log(m);
}

} // namespace

GlOracle
gl_transfer_oracle(const Target& t, int grid)
{
  if (t.kind != TargetKind::ginzburg_landau)
    throw std::invalid_argument("transfer oracle needs a Ginzburg-Landau target");
  if (grid < 32)
    throw std::invalid_argument("transfer oracle grid must be >= 32");
  const int d = t.d;
  const auto rule = gauss_legendre_rule(grid, Domain1D(-1.0, 1.0));

  GlOracle o;
  o.target = t;
  o.nodes = rule.nodes;
  o.weights = rule.weights;
  const int n = grid;

  Eigen::MatrixXd kernel(n, n);
  Eigen::VectorXd gw(n), edge(n);
  for (int a = 0; a < n; ++a) {
    gw[a] = std::exp(-t.beta * gl_onsite(o.nodes[a], t.lambda)) * o.weights[a];
    edge[a] = std::exp(-t.beta * gl_coupling(0.0, o.nodes[a], t.lambda, t.h));
    for (int b = 0; b < n; ++b)
      kernel(a, b) = std::exp(-t.beta * gl_coupling(o.nodes[a], o.nodes[b], t.lambda, t.h));
  }

  o.forward.assign(d, Eigen::VectorXd());
  o.backward.assign(d, Eigen::VectorXd());
  o.forward_log.assign(d, 0.0);
  o.backward_log.assign(d, 0.0);
  o.forward[0] = edge;
  for (int j = 1; j < d; ++j) {
    o.forward[j] = kernel.transpose() * o.forward[j - 1].cwiseProduct(gw);
    o.forward_log[j] = o.forward_log[j - 1] + normalize_log(o.forward[j]);
  }
  o.backward[d - 1] = edge;
  for (int j = d - 2; j >= 0; --j) {
    o.backward[j] = kernel * o.backward[j + 1].cwiseProduct(gw);
    o.backward_log[j] = o.backward_log[j + 1] + normalize_log(o.backward[j]);
  }
  const double s = o.forward[0].cwiseProduct(gw).dot(o.backward[0]);
  o.log_z = -t.beta * gl_onsite(0.0, t.lambda) + std::log(s) + o.forward_log[0] + o.backward_log[0];
  return o;
}

GlOracle
gl_transfer_oracle(int d, double beta, double lambda, double h, int grid)
{
  return gl_transfer_oracle(Target::ginzburg_landau(d, beta, lambda, h), grid);
}

double
GlOracle::marginal(int site, double x) const
{
  const int d = target.d;
  if (site < 0 || site >= d)
    throw std::out_of_range("marginal: site out of range");
  const auto& t = target;
  const std::size_t n = nodes.size();
  auto g = [&](double u) { return std::exp(-t.beta * gl_onsite(u, t.lambda)); };
  auto k = [&](double a, double b) { return std::exp(-t.beta * gl_coupling(a, b, t.lambda, t.h)); };

  double fx = 0.0, flog = 0.0;
  if (site == 0) {
    fx = k(0.0, x);
  } else {
    for (std::size_t u = 0; u < n; ++u)
      fx += forward[site - 1][u] * g(nodes[u]) * weights[u] * k(nodes[u], x);
    flog = forward_log[site - 1];
  }
  double bx = 0.0, blog = 0.0;
  if (site == d - 1) {
    bx = k(x, 0.0);
  } else {
    for (std::size_t v = 0; v < n; ++v)
      bx += k(x, nodes[v]) * g(nodes[v]) * weights[v] * backward[site + 1][v];
    blog = backward_log[site + 1];
  }
  return std::exp(-t.beta * gl_onsite(0.0, t.lambda) + flog + blog - log_z) * fx * g(x) * bx;
}

double
GlOracle::marginal_mass(int site, double a, double b) const
{
  const auto rule = gauss_legendre_rule(32, Domain1D(a, b));
  double s = 0.0;
  for (std::size_t i = 0; i < rule.size(); ++i)
    s += rule.weights[i] * marginal(site, rule.nodes[i]);
  return s;
}

BatchFn
density_truth(const Target& target, int oracle_grid)
{
  if (target.kind == TargetKind::sin_density) {
    const double z = sin_density_normalizer(target.d);
    return [target, z](const Eigen::MatrixXd& pts) {
      Eigen::VectorXd v(pts.rows());
      for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        const Eigen::RowVectorXd row = pts.row(i);
        v[i] = std::exp(target.log_unnormalized(std::span<const double>(row.data(), row.size()))) / z;
      }
      return v;
    };
  }
  if (target.kind == TargetKind::ginzburg_landau) {
    const double log_z = gl_transfer_oracle(target, oracle_grid).log_z;
    return [target, log_z](const Eigen::MatrixXd& pts) {
      Eigen::VectorXd v(pts.rows());
      for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        const Eigen::RowVectorXd row = pts.row(i);
        v[i] = std::exp(target.log_unnormalized(std::span<const double>(row.data(), row.size())) - log_z);
      }
      return v;
    };
  }
  throw std::invalid_argument("density_truth needs a density target");
}

BatchFn
regression_truth(const Target& target)
{
  if (target.is_density())
    throw std::invalid_argument("regression_truth needs a regression target");
  return [target](const Eigen::MatrixXd& pts) {
    Eigen::VectorXd v(pts.rows());
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const Eigen::RowVectorXd row = pts.row(i);
      v[i] = target.regression(std::span<const double>(row.data(), row.size()));
    }
    return v;
  };
}

// ---------------------------------------------------------------------------
// Sampling

MhResult
mh_sample(const std::function<double(std::span<const double>)>& log_density,
          int d,
          long long n,
          const MhConfig& cfg)
{
  if (n < 1)
    throw std::invalid_argument("mh_sample: n must be >= 1");
  if (!(cfg.step > 0) || cfg.thinning < 1 || cfg.burn_in < 0)
    throw std::invalid_argument("mh_sample: need step > 0, thinning >= 1, burn_in >= 0");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> x(d, 0.0), y(d);
  double lp = log_density(x);

  MhResult out;
  out.samples.resize(n, d);
  long long accepted = 0, proposed = 0;
  const long long total = cfg.burn_in + n * cfg.thinning;
  long long kept = 0;
  for (long long step = 0; step < total; ++step) {
    for (int j = 0; j < d; ++j) {
      double v = x[j] + cfg.step * (2 * unit(rng) - 1);
      while (v > 1.0 || v < -1.0)
        v = v > 1.0 ? 2.0 - v : -2.0 - v;
      y[j] = v;
    }
    const double lq = log_density(y);
    ++proposed;
    if (std::log(unit(rng)) < lq - lp) {
      x.swap(y);
      lp = lq;
      ++accepted;
    }
    if (step >= cfg.burn_in && (step - cfg.burn_in + 1) % cfg.thinning == 0) {
      for (int j = 0; j < d; ++j)
        out.samples(kept, j) = x[j];
      ++kept;
    }
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(proposed);
  return out;
}

MhResult
mh_sample(const Target& target, long long n, const MhConfig& cfg)
{
  if (!target.is_density())
    throw std::invalid_argument("mh_sample needs a density target");
  return mh_sample([&](std::span<const double> x) { return target.log_unnormalized(x); }, target.d, n, cfg);
}

Eigen::MatrixXd
uniform_box_points(const BoxDomain& box, long long n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd p(n, box.dim());
  for (long long i = 0; i < n; ++i)
    for (int j = 0; j < box.dim(); ++j)
      p(i, j) = box.axes()[j].from_unit(unit(rng));
  return p;
}

RegressionData
sample_regression(const Target& target, long long n, std::uint64_t seed)
{
  if (target.is_density())
    throw std::invalid_argument("sample_regression needs a regression target");
  if (n < 1)
    throw std::invalid_argument("sample_regression: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise;
  const int d = target.d;

  RegressionData out;
  out.points.resize(n, d);
  out.responses.resize(n);
  std::vector<double> x(d);
  for (long long i = 0; i < n; ++i) {
    for (;;) {
      double r2 = 0.0;
      for (int j = 0; j < d; ++j) {
        x[j] = 2 * unit(rng) - 1;
        r2 += x[j] * x[j];
      }
      // truncated N(0, 4 I): accept with the Gaussian density ratio
      if (target.kind != TargetKind::gaussmix_regression || unit(rng) < std::exp(-r2 / 8))
        break;
    }
    for (int j = 0; j < d; ++j)
      out.points(i, j) = x[j];
    out.responses[i] = target.regression(x);
    if (target.kind != TargetKind::constant_regression)
      out.responses[i] += noise(rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Error metrics

ErrorEstimate
relative_l2_error(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth)
{
  if (estimate.size() != truth.size() || truth.size() == 0)
    throw std::invalid_argument("relative_l2_error: need paired, nonempty values");
  const Eigen::ArrayXd a = (estimate - truth).array().square();
  const Eigen::ArrayXd b = truth.array().square();
  const double n = static_cast<double>(truth.size());
  const double ma = a.mean(), mb = b.mean();
  if (!(mb > 0))
    throw std::invalid_argument("relative_l2_error: truth is identically zero");
  ErrorEstimate e;
  const double q = ma / mb;
  e.value = std::sqrt(q);
  if (e.value > 0 && truth.size() > 1) {
    const double va = (a - ma).square().sum() / (n - 1);
    const double vb = (b - mb).square().sum() / (n - 1);
    const double cab = ((a - ma) * (b - mb)).sum() / (n - 1);
    const double vq = std::max(0.0, (va - 2 * q * cab + q * q * vb) / (mb * mb * n));
    e.se = std::sqrt(vq) / (2 * e.value);
  }
  return e;
}

ErrorEstimate
relative_l2_error_mc(const BatchFn& estimate,
                     const BatchFn& truth,
                     const BoxDomain& box,
                     long long n_mc,
                     std::uint64_t seed)
{
  const Eigen::MatrixXd pts = uniform_box_points(box, n_mc, seed);
  return relative_l2_error(estimate(pts), truth(pts));
}

double
relative_l2_error_quadrature(const BatchFn& estimate, const BatchFn& truth, const BoxDomain& box, int nodes)
{
  const int d = box.dim();
  std::vector<QuadratureRule> rules;
  for (const auto& a : box.axes())
    rules.push_back(gauss_legendre_rule(nodes, a));
  long long total = 1;
  for (int j = 0; j < d; ++j)
    total *= nodes;
  Eigen::MatrixXd pts(total, d);
  Eigen::VectorXd w(total);
  for (long long i = 0; i < total; ++i) {
    long long rem = i;
    double wi = 1.0;
    for (int j = d - 1; j >= 0; --j) {
      const auto k = static_cast<std::size_t>(rem % nodes);
      rem /= nodes;
      pts(i, j) = rules[j].nodes[k];
      wi *= rules[j].weights[k];
    }
    w[i] = wi;
  }
  const Eigen::VectorXd e = estimate(pts);
  const Eigen::VectorXd t = truth(pts);
  return std::sqrt(w.dot((e - t).cwiseAbs2()) / w.dot(t.cwiseAbs2()));
}

// ---------------------------------------------------------------------------
// Kernel baselines

namespace {

constexpr Eigen::Index kKernelBlock = 64;

// For each query row: sum_i exp(-|q - x_i|^2 / (2 h^2) + shift) and, when y
// is given, the same sum weighted by y_i. With `stabilize`, shift is the
// row's smallest squared distance over 2 h^2, else 0.
void
kernel_sums(const Eigen::MatrixXd& query,
            const Eigen::MatrixXd& x,
            double h,
            const Eigen::VectorXd* y,
            bool stabilize,
            Eigen::VectorXd& sums,
            Eigen::VectorXd* weighted)
{
  const Eigen::Index nq = query.rows();
  sums.resize(nq);
  if (weighted)
    weighted->resize(nq);
  const Eigen::RowVectorXd xn = x.rowwise().squaredNorm().transpose();
  const double scale = -1.0 / (2 * h * h);
  const auto blocks = static_cast<std::size_t>((nq + kKernelBlock - 1) / kKernelBlock);
  parallel_for(blocks, [&](std::size_t b) {
    const Eigen::Index begin = static_cast<Eigen::Index>(b) * kKernelBlock;
    const Eigen::Index len = std::min(kKernelBlock, nq - begin);
    const auto q = query.middleRows(begin, len);
    Eigen::MatrixXd dist = -2.0 * (q * x.transpose());
    dist.rowwise() += xn;
    dist.colwise() += q.rowwise().squaredNorm();
    dist = dist.cwiseMax(0.0);
    if (stabilize) {
      const Eigen::VectorXd lo = dist.rowwise().minCoeff();
      dist.colwise() -= lo;
    }
    const Eigen::MatrixXd k = (dist * scale).array().exp().matrix();
    sums.segment(begin, len) = k.rowwise().sum();
    if (weighted)
      weighted->segment(begin, len) = k * (*y);
  });
}

struct CvSubsample
{
  Eigen::MatrixXd points;
  Eigen::VectorXd responses;
  std::vector<int> fold;
};

CvSubsample
cv_subsample(const Eigen::MatrixXd& points, const Eigen::VectorXd* responses, const BaselineOptions& opt)
{
  const Eigen::Index n = points.rows();
  const Eigen::Index keep = std::min<Eigen::Index>(n, std::max<long long>(opt.cv_cap, opt.folds));
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{ 0 });
  std::mt19937_64 rng(derive_seed(opt.seed, 0));
  if (keep < n)
    std::shuffle(idx.begin(), idx.end(), rng);
  CvSubsample s;
  s.points.resize(keep, points.cols());
  if (responses)
    s.responses.resize(keep);
  for (Eigen::Index i = 0; i < keep; ++i) {
    s.points.row(i) = points.row(idx[static_cast<std::size_t>(i)]);
    if (responses)
      s.responses[i] = (*responses)[idx[static_cast<std::size_t>(i)]];
  }
  s.fold = fold_assignment(keep, opt.folds, derive_seed(opt.seed, 1));
  return s;
}

Eigen::MatrixXd
select_rows(const Eigen::MatrixXd& m, const std::vector<int>& fold, int k, bool in_fold)
{
  Eigen::Index count = 0;
  for (int f : fold)
    count += (f == k) == in_fold;
  Eigen::MatrixXd out(count, m.cols());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if ((fold[i] == k) == in_fold)
      out.row(r++) = m.row(static_cast<Eigen::Index>(i));
  return out;
}

Eigen::VectorXd
select_entries(const Eigen::VectorXd& v, const std::vector<int>& fold, int k, bool in_fold)
{
  std::vector<double> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if ((fold[i] == k) == in_fold)
      out.push_back(v[static_cast<Eigen::Index>(i)]);
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

std::vector<double>
bandwidth_grid(const BaselineOptions& opt, const Eigen::MatrixXd& cv_points)
{
  std::vector<double> grid = opt.bandwidths.empty() ? default_bandwidths(cv_points) : opt.bandwidths;
  if (grid.empty())
    throw std::invalid_argument("bandwidth grid is empty");
  for (double h : grid)
    if (!(h > 0))
      throw std::invalid_argument("bandwidths must be positive");
  std::sort(grid.begin(), grid.end());
  return grid;
}

double
pick_bandwidth(const std::vector<double>& grid,
               const std::function<double(double)>& score,
               Eigen::Index n_cv,
               Eigen::Index n,
               int d,
               BandwidthCv* cv)
{
  BandwidthCv res;
  std::size_t best = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    res.table.emplace_back(grid[g], score(grid[g]));
    if (res.table[g].second < res.table[best].second)
      best = g;
  }
  res.bandwidth =
    grid[best] * std::pow(static_cast<double>(n_cv) / static_cast<double>(n), 1.0 / (d + 4));
  if (cv)
    *cv = res;
  return res.bandwidth;
}

} // namespace

Eigen::VectorXd
KdeEstimate::evaluate(const Eigen::MatrixXd& points) const
{
  if (points.cols() != samples.cols())
    throw std::invalid_argument("KDE: wrong number of coordinates");
  Eigen::VectorXd sums;
  kernel_sums(points, samples, bandwidth, nullptr, false, sums, nullptr);
  const double norm =
    std::pow(2 * std::numbers::pi * bandwidth * bandwidth, -0.5 * static_cast<double>(samples.cols()));
  return sums * (norm / static_cast<double>(samples.rows()));
}

Eigen::VectorXd
NwEstimate::evaluate(const Eigen::MatrixXd& query) const
{
  if (query.cols() != points.cols())
    throw std::invalid_argument("NW: wrong number of coordinates");
  Eigen::VectorXd den, num;
  kernel_sums(query, points, bandwidth, &responses, true, den, &num);
  return num.cwiseQuotient(den);
}

std::vector<double>
default_bandwidths(const Eigen::MatrixXd& samples)
{
  if (samples.rows() < 2)
    throw std::invalid_argument("default bandwidths need at least two samples");
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const double sd =
    std::sqrt((samples.rowwise() - mean).array().square().colwise().sum().mean() / (samples.rows() - 1.0));
  const double h0 =
    std::max(sd, 1e-12) * std::pow(static_cast<double>(samples.rows()), -1.0 / (samples.cols() + 4));
  std::vector<double> grid;
  for (int k = -4; k <= 2; ++k)
    grid.push_back(h0 * std::pow(2.0, 0.5 * k));
  return grid;
}

KdeEstimate
kde_baseline(const Eigen::MatrixXd& samples, const BaselineOptions& opt, BandwidthCv* cv)
{
  if (samples.rows() == 0)
    throw std::invalid_argument("KDE: empty sample");
  const int d = static_cast<int>(samples.cols());
  const CvSubsample sub = cv_subsample(samples, nullptr, opt);
  const auto grid = bandwidth_grid(opt, sub.points);

  auto score = [&](double h) {
    double total = 0.0;
    for (int k = 0; k < opt.folds; ++k) {
      const KdeEstimate train{ select_rows(sub.points, sub.fold, k, false), h };
      const Eigen::MatrixXd val = select_rows(sub.points, sub.fold, k, true);
      // int p^2 = mean_i of the sqrt(2) h estimate at the training points
      const KdeEstimate wide{ train.samples, std::sqrt(2.0) * h };
      total += wide.evaluate(train.samples).mean() - 2 * train.evaluate(val).mean();
    }
    return total / opt.folds;
  };
  const double h = pick_bandwidth(grid, score, sub.points.rows(), samples.rows(), d, cv);
  return KdeEstimate{ samples, h };
}

NwEstimate
nw_baseline(const Eigen::MatrixXd& points,
            const Eigen::VectorXd& responses,
            const BaselineOptions& opt,
            BandwidthCv* cv)
{
  if (points.rows() == 0)
    throw std::invalid_argument("NW: empty sample");
  if (responses.size() != points.rows())
    throw std::invalid_argument("NW: one response per point required");
  const int d = static_cast<int>(points.cols());
  const CvSubsample sub = cv_subsample(points, &responses, opt);
  const auto grid = bandwidth_grid(opt, sub.points);

  auto score = [&](double h) {
    double total = 0.0;
    for (int k = 0; k < opt.folds; ++k) {
      const NwEstimate train{ select_rows(sub.points, sub.fold, k, false),
                              select_entries(sub.responses, sub.fold, k, false),
                              h };
      const Eigen::VectorXd val_y = select_entries(sub.responses, sub.fold, k, true);
      const Eigen::VectorXd pred = train.evaluate(select_rows(sub.points, sub.fold, k, true));
      total += (pred - val_y).squaredNorm() / static_cast<double>(val_y.size());
    }
    return total / opt.folds;
  };
  const double h = pick_bandwidth(grid, score, sub.points.rows(), points.rows(), d, cv);
  return NwEstimate{ points, responses, h };
}

// ---------------------------------------------------------------------------
// Experiment pipelines

namespace {

using Clock = std::chrono::steady_clock;

long long
elapsed_ms(Clock::time_point start)
{
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
}

VrsConfig
vrs_config(const ExperimentSpec& spec, std::uint64_t seed)
{
  VrsConfig cfg;
  cfg.cv = spec.grid;
  cfg.seed = seed;
  cfg.ranks = AdaptiveRanks{ spec.max_rank, 1e-12 };
  cfg.m = spec.grid.m_grid.empty() ? cfg.m : spec.grid.m_grid.front();
  cfg.l = spec.grid.l_grid.empty() ? cfg.l : spec.grid.l_grid.front();
  return cfg;
}

RunRecord
base_record(const ExperimentSpec& spec, const std::string& method, int rep, std::uint64_t seed)
{
  RunRecord r;
  r.method = method;
  r.model = spec.target.name();
  r.d = spec.target.d;
  r.n = spec.n;
  r.rep = rep;
  r.seed = seed;
  return r;
}

void
check_methods(const ExperimentSpec& spec, std::initializer_list<const char*> allowed)
{
  if (spec.methods.empty())
    throw std::invalid_argument("no methods requested");
  for (const auto& m : spec.methods)
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return m == a; }))
      throw std::invalid_argument("unknown method '" + m + "' for this experiment");
  if (spec.reps < 1)
    throw std::invalid_argument("reps must be >= 1");
  if (spec.n < 2)
    throw std::invalid_argument("n must be >= 2");
}

template<typename RepFn>
ExperimentResult
run_reps(const ExperimentSpec& spec, RepFn&& rep_fn)
{
  ExperimentResult out;
  for (int rep = 0; rep < spec.reps; ++rep) {
    const std::uint64_t seed = spec.seed ^ static_cast<std::uint64_t>(rep);
    try {
      auto rows = rep_fn(rep, seed);
      out.records.insert(out.records.end(), rows.begin(), rows.end());
    } catch (const std::exception& e) {
      out.failures.push_back("replicate " + std::to_string(rep) + " (seed " + std::to_string(seed) +
                             "): " + e.what());
    }
  }
  return out;
}

} // namespace

ExperimentResult
run_density_experiment(const ExperimentSpec& spec)
{
  if (!spec.target.is_density())
    throw std::invalid_argument("density experiment needs a density target");
  check_methods(spec, { "vrs", "kde" });
  const BatchFn truth = density_truth(spec.target);
  const BoxDomain box = spec.target.domain();

  return run_reps(spec, [&](int rep, std::uint64_t seed) {
    MhConfig mh = spec.mh;
    mh.seed = derive_seed(seed, 1);
    const Eigen::MatrixXd samples = mh_sample(spec.target, spec.n, mh).samples;
    const Eigen::MatrixXd mc = uniform_box_points(box, spec.n_mc, derive_seed(seed, 2));
    const Eigen::VectorXd truth_vals = truth(mc);

    std::vector<RunRecord> rows;
    for (const auto& method : spec.methods) {
      RunRecord r = base_record(spec, method, rep, seed);
      const auto start = Clock::now();
      if (method == "vrs") {
        const VrsEstimate est = fit_density(samples, box, vrs_config(spec, derive_seed(seed, 3)));
        r.fit_ms = elapsed_ms(start);
        r.rel_l2_error = relative_l2_error(est.evaluate(mc), truth_vals).value;
        r.m = est.info.m;
        r.l = est.info.l;
        r.ranks = est.ranks();
      } else {
        BaselineOptions opt = spec.baseline;
        opt.seed = derive_seed(seed, 4);
        const KdeEstimate est = kde_baseline(samples, opt);
        r.fit_ms = elapsed_ms(start);
        r.rel_l2_error = relative_l2_error(est.evaluate(mc), truth_vals).value;
      }
      if (!spec.timing)
        r.fit_ms = 0;
      rows.push_back(std::move(r));
    }
    return rows;
  });
}

ExperimentResult
run_regression_experiment(const ExperimentSpec& spec)
{
  if (spec.target.is_density())
    throw std::invalid_argument("regression experiment needs a regression target");
  check_methods(spec, { "vrs", "nw" });
  const BatchFn truth = regression_truth(spec.target);
  const BoxDomain box = spec.target.domain();

  return run_reps(spec, [&](int rep, std::uint64_t seed) {
    const RegressionData data = sample_regression(spec.target, spec.n, derive_seed(seed, 1));
    const Eigen::MatrixXd mc = uniform_box_points(box, spec.n_mc, derive_seed(seed, 2));
    const Eigen::VectorXd truth_vals = truth(mc);

    std::vector<RunRecord> rows;
    for (const auto& method : spec.methods) {
      RunRecord r = base_record(spec, method, rep, seed);
      const auto start = Clock::now();
      if (method == "vrs") {
        const VrsConfig cfg = vrs_config(spec, derive_seed(seed, 3));
        const RatioEstimate est = fit_regression(data.points, data.responses, box, cfg, cfg);
        r.fit_ms = elapsed_ms(start);
        r.rel_l2_error = relative_l2_error(est.evaluate(mc), truth_vals).value;
        r.m = est.numerator.info.m;
        r.l = est.numerator.info.l;
        r.ranks = est.numerator.ranks();
      } else {
        BaselineOptions opt = spec.baseline;
        opt.seed = derive_seed(seed, 4);
        const NwEstimate est = nw_baseline(data.points, data.responses, opt);
        r.fit_ms = elapsed_ms(start);
        r.rel_l2_error = relative_l2_error(est.evaluate(mc), truth_vals).value;
      }
      if (!spec.timing)
        r.fit_ms = 0;
      rows.push_back(std::move(r));
    }
    return rows;
  });
}

// ---------------------------------------------------------------------------
// CSV

std::string
format_run_record(const RunRecord& r)
{
  char err[40];
  std::snprintf(err, sizeof err, "%.17g", r.rel_l2_error);
  std::ostringstream os;
  os << r.method << ',' << r.model << ',' << r.d << ',' << r.n << ',' << r.rep << ',' << r.seed << ',' << err
     << ',' << r.fit_ms << ',' << r.m << ',' << r.l << ',';
  for (std::size_t k = 0; k < r.ranks.size(); ++k)
    os << (k ? ";" : "") << r.ranks[k];
  return os.str();
}

void
write_run_csv(std::ostream& out, std::span<const RunRecord> records)
{
  out << kRunCsvHeader << '\n';
  for (const auto& r : records)
    out << format_run_record(r) << '\n';
}

std::vector<RunRecord>
read_run_csv(std::istream& in)
{
  std::string line;
  if (!std::getline(in, line) || line != kRunCsvHeader)
    throw std::runtime_error("run CSV: unexpected header");
  std::vector<RunRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty())
      continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      f.push_back(cell);
    if (line.back() == ',')
      f.emplace_back();
    if (f.size() != 11)
      throw std::runtime_error("run CSV line " + std::to_string(lineno) + ": expected 11 fields");
    try {
      RunRecord r;
      r.method = f[0];
      r.model = f[1];
      r.d = std::stoi(f[2]);
      r.n = std::stoll(f[3]);
      r.rep = std::stoi(f[4]);
      r.seed = std::stoull(f[5]);
      r.rel_l2_error = std::stod(f[6]);
      r.fit_ms = std::stoll(f[7]);
      r.m = std::stoi(f[8]);
      r.l = std::stoi(f[9]);
      std::stringstream rs(f[10]);
      while (std::getline(rs, cell, ';'))
        r.ranks.push_back(std::stoi(cell));
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw std::runtime_error("run CSV line " + std::to_string(lineno) + ": malformed field");
    }
  }
  return out;
}

} // namespace vrs
