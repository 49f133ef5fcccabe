#include "vrs/estimators.hpp"

#include "vrs/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace vrs {

BoxDomain::BoxDomain(std::vector<Domain1D> axes)
  : axes_(std::move(axes))
{
  if (axes_.empty())
    throw EstimateError("BoxDomain needs at least one axis");
}

BoxDomain
BoxDomain::unit(int d)
{
  return cube(d, 0.0, 1.0);
}

BoxDomain
BoxDomain::cube(int d, double lo, double hi)
{
  return BoxDomain(std::vector<Domain1D>(static_cast<std::size_t>(d), Domain1D(lo, hi)));
}

double
BoxDomain::volume() const noexcept
{
  double v = 1.0;
  for (const auto& a : axes_)
    v *= a.length();
  return v;
}

bool
BoxDomain::contains(std::span<const double> z) const noexcept
{
  if (z.size() != axes_.size())
    return false;
  for (std::size_t j = 0; j < z.size(); ++j)
    if (!axes_[j].contains(z[j]))
      return false;
  return true;
}

Eigen::MatrixXd
BoxDomain::to_unit(const Eigen::MatrixXd& points) const
{
  if (points.cols() != dim())
    throw EstimateError("expected " + std::to_string(dim()) + " coordinates per point, got " +
                        std::to_string(points.cols()));
  Eigen::MatrixXd u(points.rows(), points.cols());
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    for (int j = 0; j < dim(); ++j) {
      const double z = points(i, j);
      if (!axes_[j].contains(z))
        throw EstimateError("point " + std::to_string(i) + " lies outside the domain on axis " +
                            std::to_string(j));
      u(i, j) = std::clamp(axes_[j].to_unit(z), 0.0, 1.0);
    }
  return u;
}

// ---------------------------------------------------------------------------

VrsEstimate::VrsEstimate(DenseTensor core,
                         std::vector<RangeBasis> factors,
                         BoxDomain domain,
                         double value_scale)
  : core_(std::move(core))
  , factors_(std::move(factors))
  , domain_(std::move(domain))
  , value_scale_(value_scale)
{
  if (factors_.empty() || core_.rank() != factors_.size() ||
      static_cast<int>(factors_.size()) != domain_.dim())
    throw EstimateError("VrsEstimate: core, factors and domain disagree on the dimension");
  for (std::size_t j = 0; j < factors_.size(); ++j)
    if (core_.shape[j] != factors_[j].rank())
      throw EstimateError("VrsEstimate: core extent differs from factor rank on mode " +
                          std::to_string(j));
}

std::vector<int>
VrsEstimate::ranks() const
{
  std::vector<int> r;
  for (const auto& f : factors_)
    r.push_back(f.rank());
  return r;
}

double
VrsEstimate::contract(const std::vector<Eigen::VectorXd>& phi) const
{
  // Contract the last axis first; `cur` holds the partially reduced core.
  std::vector<double> cur = core_.data;
  std::size_t outer = cur.size();
  for (int j = mode_count() - 1; j >= 0; --j) {
    const int r = core_.shape[j];
    outer /= static_cast<std::size_t>(r);
    for (std::size_t o = 0; o < outer; ++o) {
      double s = 0.0;
      for (int k = 0; k < r; ++k)
        s += cur[o * r + k] * phi[j][k];
      cur[o] = s;
    }
  }
  return cur[0];
}

double
VrsEstimate::operator()(std::span<const double> z) const
{
  if (!domain_.contains(z))
    throw EstimateError("evaluation point outside the estimate's domain");
  std::vector<Eigen::VectorXd> phi(mode_count());
  for (int j = 0; j < mode_count(); ++j) {
    const double u = std::clamp(domain_.axes()[j].to_unit(z[j]), 0.0, 1.0);
    phi[j] = factors_[j].eval(u);
  }
  return value_scale_ * contract(phi);
}

Eigen::VectorXd
VrsEstimate::evaluate_unit(const Eigen::MatrixXd& unit_points) const
{
  if (unit_points.cols() != mode_count())
    throw EstimateError("evaluate: wrong number of coordinates");
  const Eigen::Index n = unit_points.rows();
  Eigen::VectorXd out(n);
  if (n == 0)
    return out;

  int count = 0;
  for (const auto& f : factors_)
    count = std::max(count, f.m());
  const SampleFunctional pts(unit_points);
  const auto tables = pts.basis_table(family(), count);
  std::vector<Eigen::MatrixXd> phi(mode_count());
  for (int j = 0; j < mode_count(); ++j)
    phi[j] = (*tables)[j].leftCols(factors_[j].m()) * factors_[j].coeffs;

  std::vector<Eigen::VectorXd> row(mode_count());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < mode_count(); ++j)
      row[j] = phi[j].row(i).transpose();
    out[i] = contract(row);
  }
  return out;
}

Eigen::VectorXd
VrsEstimate::evaluate(const Eigen::MatrixXd& points) const
{
  return value_scale_ * evaluate_unit(domain_.to_unit(points));
}

double
VrsEstimate::l2_norm() const
{
  return std::abs(value_scale_) * std::sqrt(domain_.volume()) * core_.frobenius_norm();
}

double
VrsEstimate::integral() const
{
  std::vector<Eigen::VectorXd> phi(mode_count());
  for (int j = 0; j < mode_count(); ++j)
    phi[j] = factors_[j].coeffs.transpose() * family().integrals(factors_[j].m());
  return value_scale_ * domain_.volume() * contract(phi);
}

double
RatioEstimate::operator()(std::span<const double> z) const
{
  return numerator(z) / std::max(floor, density(z));
}

Eigen::VectorXd
RatioEstimate::evaluate(const Eigen::MatrixXd& points) const
{
  const Eigen::VectorXd num = numerator.evaluate(points);
  const Eigen::VectorXd den = density.evaluate(points).cwiseMax(floor);
  return num.cwiseQuotient(den);
}

double
density_floor(double n)
{
  if (!(n > 1.0))
    throw EstimateError("density floor needs N > 1");
  return 1.0 / std::sqrt(std::log(n));
}

// ---------------------------------------------------------------------------

int
select_rank(std::span<const double> sv, int max_rank, double floor)
{
  if (sv.size() < 2)
    throw EstimateError("select_rank needs at least two singular values");
  const int last = std::min<int>(std::max(max_rank, 1), static_cast<int>(sv.size()) - 1);

  int above = 0;
  while (above < static_cast<int>(sv.size()) && sv[above] > floor)
    ++above;
  if (above <= last)
    return std::max(above, 1);

  int best = 1;
  double best_ratio = sv[0] / sv[1];
  for (int k = 2; k <= last; ++k) {
    const double ratio = sv[k - 1] / sv[k];
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best = k;
    }
  }
  return best;
}

namespace {

std::size_t
column_count(int l, int d)
{
  std::size_t c = 1;
  for (int i = 1; i < d; ++i)
    c *= static_cast<std::size_t>(l);
  return c;
}

int
choose_rank(const VrsConfig& cfg, int mode, int d, const Eigen::VectorXd& sv)
{
  const int bound =
    static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.m), column_count(cfg.l, d)));
  if (const auto* fixed = std::get_if<FixedRanks>(&cfg.ranks)) {
    if (fixed->ranks.empty())
      throw EstimateError("fixed ranks list is empty");
    const int r = fixed->ranks.size() == 1 ? fixed->ranks[0] : fixed->ranks.at(mode);
    if (r < 1 || r > bound)
      throw EstimateError("fixed rank " + std::to_string(r) + " for mode " + std::to_string(mode) +
                          " exceeds min(m, l^(d-1)) = " + std::to_string(bound));
    return r;
  }
  const auto& adaptive = std::get<AdaptiveRanks>(cfg.ranks);
  if (bound == 1 || sv.size() < 2)
    return 1;
  return select_rank(std::span<const double>(sv.data(), static_cast<std::size_t>(sv.size())),
                     std::min(adaptive.max_rank, bound),
                     adaptive.relative_floor * sv[0]);
}

void
check_config(const VrsConfig& cfg, int d)
{
  if (d < 2)
    throw EstimateError("fit needs at least two modes, got " + std::to_string(d));
  if (cfg.m < 1 || cfg.l < 1)
    throw EstimateError("m and l must be >= 1");
  if (const auto* fixed = std::get_if<FixedRanks>(&cfg.ranks))
    if (fixed->ranks.size() != 1 && static_cast<int>(fixed->ranks.size()) != d)
      throw EstimateError("fixed ranks must list one rank per mode");
}

template<typename Functional, typename SketchFn>
VrsEstimate
fit_impl(const Functional& f, const VrsConfig& cfg, SketchFn&& sketch)
{
  const int d = f.mode_count();
  check_config(cfg, d);

  std::vector<RangeBasis> factors(d);
  std::vector<Eigen::VectorXd> spectra(d);
  for (int j = 0; j < d; ++j) {
    const SketchMatrix s = sketch(j);
    const int full = static_cast<int>(std::min(s.values.rows(), s.values.cols()));
    RangeEstimate est = range_estimate(s, full, cfg.family);
    const int r = choose_rank(cfg, j, d, est.singular_values);
    est.basis.coeffs.conservativeResize(Eigen::NoChange, r);
    factors[j] = std::move(est.basis);
    spectra[j] = std::move(est.singular_values);
  }

  DenseTensor core;
  if constexpr (std::is_same_v<Functional, SampleFunctional>)
    core = contract_core(f, factors, cfg.sketch);
  else
    core = contract_core(f, factors);

  VrsEstimate out(std::move(core), std::move(factors), BoxDomain::unit(d));
  out.info.m = cfg.m;
  out.info.l = cfg.l;
  out.info.spectra = std::move(spectra);
  return out;
}

} // namespace

VrsEstimate
fit(const SampleFunctional& f, const VrsConfig& cfg)
{
  return fit_impl(f, cfg, [&](int j) { return sketch_matrix(f, j, cfg.family, cfg.m, cfg.l, cfg.sketch); });
}

VrsEstimate
fit(const CoefficientFunctional& f, const VrsConfig& cfg)
{
  return fit_impl(f, cfg, [&](int j) { return sketch_matrix(f, j, cfg.m, cfg.l); });
}

DenseTensor
projection_coefficients(const SampleFunctional& f, const BasisFamily& family, int m)
{
  std::vector<RangeBasis> identity(f.mode_count());
  for (int j = 0; j < f.mode_count(); ++j)
    identity[j] = RangeBasis{ Eigen::MatrixXd::Identity(m, m), family, j };
  return contract_core(f, identity);
}

// ---------------------------------------------------------------------------

std::vector<int>
fold_assignment(Eigen::Index n, int folds, std::uint64_t seed)
{
  if (folds < 2)
    throw EstimateError("cross-validation needs at least two folds");
  if (n < folds)
    throw EstimateError("cross-validation: fewer samples than folds leaves a fold empty");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{ 0 });
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < perm.size(); ++i)
    fold[static_cast<std::size_t>(perm[i])] = static_cast<int>(i % static_cast<std::size_t>(folds));
  return fold;
}

namespace {

struct FoldSplit
{
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> val;
};

std::vector<FoldSplit>
make_splits(Eigen::Index n, int folds, std::uint64_t seed)
{
  const auto assign = fold_assignment(n, folds, seed);
  std::vector<FoldSplit> splits(folds);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int k = 0; k < folds; ++k)
      (assign[static_cast<std::size_t>(i)] == k ? splits[k].val : splits[k].train).push_back(i);
  return splits;
}

Eigen::MatrixXd
rows_of(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows)
{
  Eigen::MatrixXd out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
  return out;
}

std::vector<CvRow>
grid_cells(const CvGrid& grid, const BasisFamily& family)
{
  if (grid.m_grid.empty() || grid.l_grid.empty())
    throw EstimateError("cross-validation grid is empty");
  std::vector<CvRow> cells;
  for (int m : grid.m_grid)
    for (int l : grid.l_grid) {
      if (m < 1 || l < 1 || m > family.size() || l > family.size())
        throw EstimateError("grid cell (" + std::to_string(m) + ", " + std::to_string(l) +
                            ") outside the basis family");
      cells.push_back({ m, l, 0.0 });
    }
  std::sort(cells.begin(), cells.end(), [](const CvRow& a, const CvRow& b) {
    return a.m != b.m ? a.m < b.m : a.l < b.l;
  });
  cells.erase(std::unique(cells.begin(),
                          cells.end(),
                          [](const CvRow& a, const CvRow& b) { return a.m == b.m && a.l == b.l; }),
              cells.end());
  return cells;
}

int
grid_max(const CvGrid& grid)
{
  return std::max(*std::max_element(grid.m_grid.begin(), grid.m_grid.end()),
                  *std::max_element(grid.l_grid.begin(), grid.l_grid.end()));
}

CvResult
finish(std::vector<CvRow> cells)
{
  CvResult res;
  std::size_t best = 0;
  for (std::size_t c = 1; c < cells.size(); ++c)
    if (cells[c].score < cells[best].score)
      best = c;
  res.best_m = cells[best].m;
  res.best_l = cells[best].l;
  res.table = std::move(cells);
  return res;
}

VrsConfig
with_cell(const VrsConfig& cfg, int m, int l)
{
  VrsConfig c = cfg;
  c.m = m;
  c.l = l;
  c.cv.reset();
  return c;
}

} // namespace

CvResult
cross_validate_density(const Eigen::MatrixXd& unit_points, const VrsConfig& cfg)
{
  const CvGrid grid = cfg.cv.value_or(CvGrid{});
  auto cells = grid_cells(grid, cfg.family);
  const auto splits = make_splits(unit_points.rows(), grid.folds, cfg.seed);

  std::vector<double> total(cells.size(), 0.0);
  for (const auto& split : splits) {
    SampleFunctional train(rows_of(unit_points, split.train));
    train.cache_basis(cfg.family, grid_max(grid));
    const Eigen::MatrixXd val = rows_of(unit_points, split.val);

    std::vector<double> score(cells.size());
    parallel_for(cells.size(), [&](std::size_t c) {
      const VrsEstimate est = fit(train, with_cell(cfg, cells[c].m, cells[c].l));
      const double norm2 = std::pow(est.core().frobenius_norm(), 2);
      score[c] = norm2 - 2.0 * est.evaluate_unit(val).mean();
    });
    for (std::size_t c = 0; c < cells.size(); ++c)
      total[c] += score[c];
  }
  for (std::size_t c = 0; c < cells.size(); ++c)
    cells[c].score = total[c] / static_cast<double>(splits.size());
  return finish(std::move(cells));
}

CvResult
cross_validate_regression(const Eigen::MatrixXd& unit_points,
                          const Eigen::VectorXd& responses,
                          const VrsConfig& cfg,
                          const VrsConfig& density_cfg)
{
  if (responses.size() != unit_points.rows())
    throw EstimateError("one response per point required");
  const CvGrid grid = cfg.cv.value_or(CvGrid{});
  auto cells = grid_cells(grid, cfg.family);
  const auto splits = make_splits(unit_points.rows(), grid.folds, cfg.seed);
  VrsConfig dcfg = density_cfg;
  dcfg.cv.reset();

  std::vector<double> total(cells.size(), 0.0);
  for (const auto& split : splits) {
    const Eigen::MatrixXd train_pts = rows_of(unit_points, split.train);
    Eigen::VectorXd train_w(static_cast<Eigen::Index>(split.train.size()));
    for (std::size_t r = 0; r < split.train.size(); ++r)
      train_w[static_cast<Eigen::Index>(r)] = responses[split.train[r]];
    SampleFunctional weighted(train_pts, train_w);
    weighted.cache_basis(cfg.family, grid_max(grid));
    const Eigen::MatrixXd val = rows_of(unit_points, split.val);
    Eigen::VectorXd val_y(static_cast<Eigen::Index>(split.val.size()));
    for (std::size_t r = 0; r < split.val.size(); ++r)
      val_y[static_cast<Eigen::Index>(r)] = responses[split.val[r]];

    const VrsEstimate density = fit(SampleFunctional(train_pts), dcfg);
    const double floor = density_floor(static_cast<double>(split.train.size()));
    const Eigen::VectorXd den = density.evaluate_unit(val).cwiseMax(floor);

    std::vector<double> score(cells.size());
    parallel_for(cells.size(), [&](std::size_t c) {
      const VrsEstimate num = fit(weighted, with_cell(cfg, cells[c].m, cells[c].l));
      const Eigen::VectorXd pred = num.evaluate_unit(val).cwiseQuotient(den);
      score[c] = (pred - val_y).squaredNorm() / static_cast<double>(val_y.size());
    });
    for (std::size_t c = 0; c < cells.size(); ++c)
      total[c] += score[c];
  }
  for (std::size_t c = 0; c < cells.size(); ++c)
    cells[c].score = total[c] / static_cast<double>(splits.size());
  return finish(std::move(cells));
}

namespace {

VrsEstimate
rebox(VrsEstimate unit_est, const BoxDomain& box, double scale)
{
  VrsEstimate out(unit_est.core(), unit_est.factors(), box, scale);
  out.info = std::move(unit_est.info);
  return out;
}

} // namespace

VrsEstimate
fit_density(const Eigen::MatrixXd& points, const BoxDomain& box, const VrsConfig& cfg)
{
  const Eigen::MatrixXd unit = box.to_unit(points);
  VrsConfig c = cfg;
  if (cfg.cv) {
    const CvResult cv = cross_validate_density(unit, cfg);
    c = with_cell(cfg, cv.best_m, cv.best_l);
  }
  return rebox(fit(SampleFunctional(unit), c), box, 1.0 / box.volume());
}

RatioEstimate
fit_regression(const Eigen::MatrixXd& points,
               const Eigen::VectorXd& responses,
               const BoxDomain& box,
               const VrsConfig& cfg,
               const VrsConfig& density_cfg)
{
  const Eigen::Index n = points.rows();
  if (n <= 1)
    throw EstimateError("regression needs N > 1");
  if (responses.size() != n)
    throw EstimateError("one response per point required");
  if (!responses.allFinite())
    throw EstimateError("responses must be finite");

  const Eigen::MatrixXd unit = box.to_unit(points);
  VrsConfig dcfg = density_cfg;
  if (density_cfg.cv) {
    const CvResult cv = cross_validate_density(unit, density_cfg);
    dcfg = with_cell(density_cfg, cv.best_m, cv.best_l);
  }
  VrsConfig ncfg = cfg;
  if (cfg.cv) {
    const CvResult cv = cross_validate_regression(unit, responses, cfg, dcfg);
    ncfg = with_cell(cfg, cv.best_m, cv.best_l);
  }

  VrsEstimate density = fit(SampleFunctional(unit), dcfg);
  VrsEstimate numerator = fit(SampleFunctional(unit, responses), ncfg);
  return RatioEstimate{ rebox(std::move(numerator), box, 1.0),
                        rebox(std::move(density), box, 1.0),
                        density_floor(static_cast<double>(n)),
                        static_cast<long long>(n) };
}

} // namespace vrs
