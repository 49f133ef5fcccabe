#include "vrs/sketch.hpp"

#include "vrs/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace vrs {

DenseTensor::DenseTensor(std::vector<int> shape_)
  : shape(std::move(shape_))
{
  std::size_t n = 1;
  for (int s : shape) {
    if (s < 0)
      throw SketchError("DenseTensor: negative extent");
    n *= static_cast<std::size_t>(s);
  }
  data.assign(n, 0.0);
}

std::size_t
DenseTensor::flat(std::span<const int> index) const
{
  std::size_t f = 0;
  for (std::size_t a = 0; a < shape.size(); ++a)
    f = f * static_cast<std::size_t>(shape[a]) + static_cast<std::size_t>(index[a]);
  return f;
}

double
DenseTensor::frobenius_norm() const
{
  double s = 0.0;
  for (double v : data)
    s += v * v;
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------

SampleFunctional::SampleFunctional(Eigen::MatrixXd points, Eigen::VectorXd weights)
  : points_(std::move(points))
  , weights_(std::move(weights))
{
  if (weights_.size() != points_.rows())
    throw SketchError("SampleFunctional: weight count does not match point count");
  if (points_.rows() == 0 || points_.cols() == 0)
    throw SketchError("SampleFunctional: empty sample");
}

SampleFunctional::SampleFunctional(Eigen::MatrixXd points)
  : SampleFunctional(points, Eigen::VectorXd::Ones(points.rows()))
{
}

double
SampleFunctional::apply(std::span<const std::function<double(double)>> g) const
{
  if (static_cast<int>(g.size()) != mode_count())
    throw SketchError("SampleFunctional::apply: need one function per mode");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < size(); ++i) {
    double term = weights_[i];
    for (int j = 0; j < mode_count(); ++j)
      term *= g[j](points_(i, j));
    sum += term;
  }
  return sum / static_cast<double>(size());
}

SampleFunctional
SampleFunctional::subset(std::span<const Eigen::Index> rows) const
{
  Eigen::MatrixXd p(rows.size(), points_.cols());
  Eigen::VectorXd w(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    p.row(r) = points_.row(rows[r]);
    w[r] = weights_[rows[r]];
  }
  return SampleFunctional(std::move(p), std::move(w));
}

SampleFunctional
SampleFunctional::merge(const SampleFunctional& a,
                        double alpha,
                        const SampleFunctional& b,
                        double beta)
{
  if (a.mode_count() != b.mode_count())
    throw SketchError("SampleFunctional::merge: mode counts differ");
  Eigen::MatrixXd p(a.size() + b.size(), a.mode_count());
  p << a.points_, b.points_;
  Eigen::VectorXd w(a.size() + b.size());
  w << alpha * a.weights_, beta * b.weights_;
  return SampleFunctional(std::move(p), std::move(w));
}

namespace {

std::vector<Eigen::MatrixXd>
compute_tables(const Eigen::MatrixXd& points, const BasisFamily& family, int count)
{
  std::vector<Eigen::MatrixXd> tables(points.cols());
  std::vector<double> buf(count);
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    Eigen::MatrixXd t(points.rows(), count);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      family.eval_all(count, points(i, j), buf);
      for (int k = 0; k < count; ++k)
        t(i, k) = buf[k];
    }
    tables[j] = std::move(t);
  }
  return tables;
}

} // namespace

void
SampleFunctional::cache_basis(const BasisFamily& family, int count)
{
  auto tables =
    std::make_shared<const std::vector<Eigen::MatrixXd>>(compute_tables(points_, family, count));
  cache_ = std::make_shared<const Cache>(Cache{ family, count, std::move(tables) });
}

std::shared_ptr<const std::vector<Eigen::MatrixXd>>
SampleFunctional::basis_table(const BasisFamily& family, int count) const
{
  if (cache_ && cache_->family == family && cache_->count >= count)
    return cache_->tables;
  return std::make_shared<const std::vector<Eigen::MatrixXd>>(
    compute_tables(points_, family, count));
}

CoefficientFunctional::CoefficientFunctional(DenseTensor coeffs)
  : coeffs_(std::move(coeffs))
{
  if (coeffs_.rank() < 1)
    throw SketchError("CoefficientFunctional: empty coefficient tensor");
}

// ---------------------------------------------------------------------------

namespace {

std::size_t
int_pow(std::size_t base, int exp)
{
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i)
    r *= base;
  return r;
}

/// Rows [begin, begin + rows) of the Kronecker product over `modes`
/// (ascending, leftmost slowest) of the first `l` columns of each table.
Eigen::MatrixXd
kronecker_rows(const std::vector<Eigen::MatrixXd>& tables,
               std::span<const int> modes,
               int l,
               Eigen::Index begin,
               Eigen::Index rows)
{
  Eigen::MatrixXd k = Eigen::MatrixXd::Ones(rows, 1);
  for (int mode : modes) {
    const auto v = tables[mode].block(begin, 0, rows, l);
    Eigen::MatrixXd next(rows, k.cols() * l);
    for (Eigen::Index a = 0; a < k.cols(); ++a)
      for (int b = 0; b < l; ++b)
        next.col(a * l + b) = k.col(a).cwiseProduct(v.col(b));
    k = std::move(next);
  }
  return k;
}

/// Sums per-chunk partial results in chunk order. Chunks of a wave are
/// computed concurrently; the fixed wave width keeps the combine sequence
/// independent of the worker count.
template<typename ChunkFn>
Eigen::MatrixXd
chunked_sum(Eigen::Index n, int chunk_size, Eigen::Index rows, Eigen::Index cols, ChunkFn&& fn)
{
  constexpr std::size_t kWave = 8;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(rows, cols);
  const std::size_t chunks = static_cast<std::size_t>((n + chunk_size - 1) / chunk_size);
  std::vector<Eigen::MatrixXd> partial(kWave);
  for (std::size_t first = 0; first < chunks; first += kWave) {
    const std::size_t count = std::min(kWave, chunks - first);
    parallel_for(count, [&](std::size_t c) {
      const Eigen::Index begin = static_cast<Eigen::Index>(first + c) * chunk_size;
      const Eigen::Index len = std::min<Eigen::Index>(chunk_size, n - begin);
      partial[c] = fn(begin, len);
    });
    for (std::size_t c = 0; c < count; ++c)
      acc += partial[c];
  }
  return acc;
}

void
check_sketch_args(int d, int mode, int m, int l, int family_size)
{
  if (mode < 0 || mode >= d)
    throw SketchError("sketch mode " + std::to_string(mode) + " out of range for d=" +
                      std::to_string(d));
  if (m < 1 || l < 1 || m > family_size || l > family_size)
    throw SketchError("sketch dimensions m=" + std::to_string(m) + ", l=" + std::to_string(l) +
                      " must lie in [1, " + std::to_string(family_size) + "]");
}

} // namespace

SketchMatrix
sketch_matrix(const SampleFunctional& f,
              int mode,
              const BasisFamily& family,
              int m,
              int l,
              const SketchOptions& options)
{
  const int d = f.mode_count();
  check_sketch_args(d, mode, m, l, family.size());

  const std::size_t cols = int_pow(static_cast<std::size_t>(l), d - 1);
  const std::size_t chunk = static_cast<std::size_t>(std::min<Eigen::Index>(options.chunk_size, f.size()));
  // sketch + accumulator + a wave of partials + Kronecker rows of one chunk
  const long double required =
    8.0L * cols * (static_cast<long double>(m) * 10 + static_cast<long double>(chunk));
  if (required > static_cast<long double>(options.memory_budget_bytes))
    throw SketchError("sketch requires " + std::to_string(static_cast<unsigned long long>(required)) +
                      " bytes for " + std::to_string(cols) + " columns, budget is " +
                      std::to_string(options.memory_budget_bytes));

  const auto tables = f.basis_table(family, std::max(m, l));
  std::vector<int> others;
  for (int k = 0; k < d; ++k)
    if (k != mode)
      others.push_back(k);

  const auto& weights = f.weights();
  const auto& own = (*tables)[mode];
  Eigen::MatrixXd sum = chunked_sum(
    f.size(), options.chunk_size, m, static_cast<Eigen::Index>(cols), [&](Eigen::Index begin, Eigen::Index len) {
      const Eigen::MatrixXd kron = kronecker_rows(*tables, others, l, begin, len);
      const Eigen::MatrixXd weighted =
        own.block(begin, 0, len, m).array().colwise() * weights.segment(begin, len).array();
      Eigen::MatrixXd out = weighted.transpose() * kron;
      return out;
    });

  SketchMatrix s;
  s.values = sum / static_cast<double>(f.size());
  s.mode = mode;
  s.m = m;
  s.l = l;
  return s;
}

SketchMatrix
sketch_matrix(const CoefficientFunctional& f, int mode, int m, int l)
{
  const auto& c = f.coeffs();
  const int d = f.mode_count();
  int min_extent = c.shape[0];
  for (int s : c.shape)
    min_extent = std::min(min_extent, s);
  check_sketch_args(d, mode, m, l, min_extent);

  const std::size_t cols = int_pow(static_cast<std::size_t>(l), d - 1);
  SketchMatrix s;
  s.values = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(cols));
  s.mode = mode;
  s.m = m;
  s.l = l;

  std::vector<int> index(d, 0);
  for (std::size_t col = 0; col < cols; ++col) {
    // decode col into the other modes' indices, last other mode fastest
    std::size_t rem = col;
    for (int k = d - 1; k >= 0; --k) {
      if (k == mode)
        continue;
      index[k] = static_cast<int>(rem % l);
      rem /= l;
    }
    for (int mu = 0; mu < m; ++mu) {
      index[mode] = mu;
      s.values(mu, static_cast<Eigen::Index>(col)) = c(index);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd
RangeBasis::eval(double x) const
{
  return coeffs.transpose() * family.eval_all(m(), x);
}

namespace {

constexpr int kGramCrossover = 4;

struct LeftSvd
{
  Eigen::MatrixXd u;          // m x min(m, cols), columns by decreasing sigma
  Eigen::VectorXd sigma;
};

LeftSvd
unsigned_left_svd(const Eigen::MatrixXd& b)
{
  const Eigen::Index m = b.rows();
  const Eigen::Index n = b.cols();
  const Eigen::Index k = std::min(m, n);
  LeftSvd out;
  if (n > kGramCrossover * m) {
    const Eigen::MatrixXd gram = b * b.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    // eigenvalues ascending; reverse into descending order
    out.u = eig.eigenvectors().rowwise().reverse().leftCols(k);
    out.sigma = eig.eigenvalues().reverse().head(k).cwiseMax(0.0).cwiseSqrt();
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU);
    out.u = svd.matrixU().leftCols(k);
    out.sigma = svd.singularValues().head(k);
  }
  return out;
}

void
fix_signs(Eigen::MatrixXd& u)
{
  for (Eigen::Index c = 0; c < u.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < u.rows(); ++r)
      if (std::abs(u(r, c)) > std::abs(u(best, c)))
        best = r;
    if (u(best, c) < 0.0)
      u.col(c) = -u.col(c);
  }
}

} // namespace

LeftSingular
left_singular(const Eigen::MatrixXd& b)
{
  LeftSvd svd = unsigned_left_svd(b);
  fix_signs(svd.u);
  return { std::move(svd.u), std::move(svd.sigma) };
}

Eigen::VectorXd
sketch_singular_values(const Eigen::MatrixXd& sketch)
{
  return unsigned_left_svd(sketch).sigma;
}

RangeEstimate
range_estimate(const SketchMatrix& sketch, int r, const BasisFamily& family)
{
  const auto& b = sketch.values;
  const Eigen::Index bound = std::min(b.rows(), b.cols());
  if (r < 1 || r > bound)
    throw SketchError("range_estimate: rank " + std::to_string(r) + " outside [1, " +
                      std::to_string(bound) + "]");
  if (b.rows() > family.size())
    throw SketchError("range_estimate: sketch has more rows than the family has functions");

  LeftSingular svd = left_singular(b);
  RangeEstimate out;
  out.basis.coeffs = svd.vectors.leftCols(r);
  out.basis.family = family;
  out.basis.mode = sketch.mode;
  out.singular_values = std::move(svd.values);
  return out;
}

double
subspace_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b)
{
  if (a.rows() != b.rows())
    throw SketchError("subspace_distance: coefficient matrices have different row counts");
  const Eigen::MatrixXd diff = a * a.transpose() - b * b.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(diff, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

double
subspace_distance(const ProjectionPair& pair)
{
  if (!(pair.a.family == pair.b.family))
    throw SketchError("subspace_distance: bases use different families");
  if (pair.a.m() != pair.b.m())
    throw SketchError("subspace_distance: bases use different m");
  return subspace_distance(pair.a.coeffs, pair.b.coeffs);
}

FunctionalNorms
functional_svd_norms(const Eigen::MatrixXd& coeffs)
{
  FunctionalNorms n;
  if (coeffs.size() == 0)
    return n;
  n.frobenius = coeffs.norm();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(coeffs);
  n.op = svd.singularValues()(0);
  return n;
}

// ---------------------------------------------------------------------------

DenseTensor
contract_core(const SampleFunctional& f,
              std::span<const RangeBasis> factors,
              const SketchOptions& options)
{
  const int d = f.mode_count();
  if (static_cast<int>(factors.size()) != d)
    throw SketchError("contract_core: need one factor per mode");
  int count = 0;
  for (const auto& fac : factors)
    count = std::max(count, fac.m());
  const auto tables = f.basis_table(factors[0].family, count);

  // Phi values per mode, N x r_j
  std::vector<Eigen::MatrixXd> phi(d);
  std::vector<int> shape(d);
  for (int j = 0; j < d; ++j) {
    phi[j] = (*tables)[j].leftCols(factors[j].m()) * factors[j].coeffs;
    shape[j] = factors[j].rank();
  }

  // Reuse the Kronecker accumulation: the core flattened row-major equals
  // (w .* Phi_0)^T (Phi_1 (x) ... (x) Phi_{d-1}) reshaped.
  std::vector<int> rest;
  for (int j = 1; j < d; ++j)
    rest.push_back(j);
  std::vector<Eigen::MatrixXd> phi_tables = phi;
  const auto& weights = f.weights();
  Eigen::Index cols = 1;
  for (int j = 1; j < d; ++j)
    cols *= shape[j];

  // kronecker_rows uses a shared column count; handle heterogeneous ranks
  // by building the Kronecker product directly.
  auto kron = [&](Eigen::Index begin, Eigen::Index len) {
    Eigen::MatrixXd k = Eigen::MatrixXd::Ones(len, 1);
    for (int j : rest) {
      const auto v = phi_tables[j].block(begin, 0, len, shape[j]);
      Eigen::MatrixXd next(len, k.cols() * shape[j]);
      for (Eigen::Index a = 0; a < k.cols(); ++a)
        for (int b = 0; b < shape[j]; ++b)
          next.col(a * shape[j] + b) = k.col(a).cwiseProduct(v.col(b));
      k = std::move(next);
    }
    return k;
  };

  const Eigen::MatrixXd sum =
    chunked_sum(f.size(), options.chunk_size, shape[0], cols, [&](Eigen::Index begin, Eigen::Index len) {
      const Eigen::MatrixXd weighted =
        phi_tables[0].block(begin, 0, len, shape[0]).array().colwise() *
        weights.segment(begin, len).array();
      Eigen::MatrixXd out = weighted.transpose() * kron(begin, len);
      return out;
    });

  DenseTensor core(shape);
  for (Eigen::Index a = 0; a < sum.rows(); ++a)
    for (Eigen::Index b = 0; b < sum.cols(); ++b)
      core.data[static_cast<std::size_t>(a * cols + b)] = sum(a, b) / static_cast<double>(f.size());
  return core;
}

DenseTensor
contract_core(const CoefficientFunctional& f, std::span<const RangeBasis> factors)
{
  const int d = f.mode_count();
  if (static_cast<int>(factors.size()) != d)
    throw SketchError("contract_core: need one factor per mode");

  // Successive mode products C x_j U_j^T, truncating each axis to m_j.
  DenseTensor cur = f.coeffs();
  for (int j = 0; j < d; ++j) {
    const Eigen::MatrixXd& u = factors[j].coeffs;
    if (u.rows() > cur.shape[j])
      throw SketchError("contract_core: factor has more rows than coefficients");
    std::vector<int> next_shape = cur.shape;
    next_shape[j] = static_cast<int>(u.cols());
    DenseTensor next(next_shape);

    std::size_t outer = 1, inner = 1;
    for (int a = 0; a < j; ++a)
      outer *= cur.shape[a];
    for (int a = j + 1; a < d; ++a)
      inner *= cur.shape[a];
    const std::size_t n_in = cur.shape[j];
    const std::size_t n_out = next_shape[j];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t q = 0; q < n_out; ++q)
        for (std::size_t i = 0; i < inner; ++i) {
          double s = 0.0;
          for (Eigen::Index mu = 0; mu < u.rows(); ++mu)
            s += u(mu, static_cast<Eigen::Index>(q)) * cur.data[(o * n_in + mu) * inner + i];
          next.data[(o * n_out + q) * inner + i] = s;
        }
    cur = std::move(next);
  }
  return cur;
}

} // namespace vrs
