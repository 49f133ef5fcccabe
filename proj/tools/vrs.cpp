// vrs: command-line front end for the simulation harness, image PCA and
// model persistence. Data goes to files, diagnostics to stderr.

#include "vrs/harness.hpp"
#include "vrs/model_io.hpp"
#include "vrs/pca.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace vrs;

namespace {

struct UsageError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

std::string
fmt(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream
open_out(const std::string& path)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

bool
parse_double(const std::string& cell, double& v)
{
  const char* s = cell.c_str();
  char* end = nullptr;
  v = std::strtod(s, &end);
  if (end == s)
    return false;
  while (*end == ' ' || *end == '\t' || *end == '\r')
    ++end;
  return *end == '\0';
}

std::vector<std::string>
split(const std::string& line, char sep)
{
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep))
    out.push_back(cell);
  if (!line.empty() && line.back() == sep)
    out.emplace_back();
  return out;
}

// Numeric CSV with an optional header row. Every row must have the same
// column count and only finite values.
Eigen::MatrixXd
read_numeric_csv(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t cols = 0;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    const auto cells = split(line, ',');
    std::vector<double> row(cells.size());
    bool numeric = true;
    for (std::size_t j = 0; j < cells.size() && numeric; ++j)
      numeric = parse_double(cells[j], row[j]);
    if (!numeric) {
      if (rows.empty() && cols == 0) {
        cols = cells.size();
        continue;
      }
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    if (cols == 0)
      cols = cells.size();
    if (row.size() != cols)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                               " columns, found " + std::to_string(row.size()));
    for (double v : row)
      if (!std::isfinite(v))
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": non-finite value");
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw std::runtime_error(path + ": no data rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

std::vector<std::string>
split_methods(const std::string& s)
{
  std::vector<std::string> out;
  for (auto& m : split(s, ','))
    if (!m.empty())
      out.push_back(m);
  return out;
}

// ---------------------------------------------------------------------------
// simulate-density / simulate-regression

struct SimulateOptions
{
  std::string model = "sin";
  int d = 2;
  long long n = 10000;
  int reps = 1;
  std::uint64_t seed = 0;
  std::string methods;
  std::string out;
  std::vector<int> m_grid{ 4, 8, 16, 32 };
  std::vector<int> l_grid{ 2, 3, 4 };
  int folds = 5;
  int max_rank = 10;
  long long n_mc = 10000;
  bool timing = false;
  MhConfig mh;
};

void
add_simulate_flags(CLI::App* cmd, SimulateOptions& o, const std::string& models, const std::string& methods)
{
  cmd->add_option("--model", o.model, "Target model: " + models)->required();
  cmd->add_option("--d", o.d, "Dimension")->required()->check(CLI::PositiveNumber);
  cmd->add_option("--n", o.n, "Sample size per replicate")->required()->check(CLI::Range(2LL, 1LL << 40));
  cmd->add_option("--reps", o.reps, "Number of replicates")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "Base seed; replicate r uses seed XOR r")->capture_default_str();
  cmd->add_option("--methods", o.methods, "Comma-separated methods: " + methods)->capture_default_str();
  cmd->add_option("--out", o.out, "Output CSV")->required();
  cmd->add_option("--m-grid", o.m_grid, "CV grid of basis sizes m")->delimiter(',')->capture_default_str();
  cmd->add_option("--l-grid", o.l_grid, "CV grid of sketch sizes l")->delimiter(',')->capture_default_str();
  cmd->add_option("--folds", o.folds, "CV folds for VRS and the kernel baseline")
    ->capture_default_str()
    ->check(CLI::Range(2, 1000));
  cmd->add_option("--max-rank", o.max_rank, "Largest adaptive rank per mode")
    ->capture_default_str()
    ->check(CLI::PositiveNumber);
  cmd->add_option("--mc-points", o.n_mc, "Monte Carlo points for the relative L2 error")
    ->capture_default_str()
    ->check(CLI::PositiveNumber);
  cmd->add_flag("--timing", o.timing, "Record wall-clock fit time (otherwise fit_ms is 0 and output is reproducible)");
}

ExperimentSpec
make_spec(const SimulateOptions& o, Target target)
{
  ExperimentSpec spec;
  spec.target = target;
  spec.n = o.n;
  spec.reps = o.reps;
  spec.seed = o.seed;
  spec.methods = split_methods(o.methods);
  spec.grid.folds = o.folds;
  spec.grid.m_grid = o.m_grid;
  spec.grid.l_grid = o.l_grid;
  spec.max_rank = o.max_rank;
  spec.n_mc = o.n_mc;
  spec.mh = o.mh;
  spec.baseline.folds = o.folds;
  spec.timing = o.timing;
  return spec;
}

int
finish_experiment(const ExperimentResult& res, const std::string& out_path)
{
  auto out = open_out(out_path);
  write_run_csv(out, res.records);
  if (!out)
    throw std::runtime_error("write to '" + out_path + "' failed");
  for (const auto& f : res.failures)
    std::cerr << "vrs: " << f << '\n';
  return res.failures.empty() ? 0 : 1;
}

int
run_simulate_density(const SimulateOptions& o)
{
  Target t;
  if (o.model == "sin")
    t = Target::sin_density(o.d);
  else if (o.model == "gl")
    t = Target::ginzburg_landau(o.d);
  else
    throw UsageError("unknown density model '" + o.model + "' (expected sin or gl)");
  return finish_experiment(run_density_experiment(make_spec(o, t)), o.out);
}

int
run_simulate_regression(const SimulateOptions& o)
{
  Target t;
  if (o.model == "sin")
    t = Target::sin_regression(o.d);
  else if (o.model == "gaussmix")
    t = Target::gaussmix_regression(o.d);
  else if (o.model == "const")
    t = Target::constant_regression(o.d);
  else
    throw UsageError("unknown regression model '" + o.model + "' (expected sin, gaussmix or const)");
  return finish_experiment(run_regression_experiment(make_spec(o, t)), o.out);
}

// ---------------------------------------------------------------------------
// synth-images / pca-denoise

struct SynthOptions
{
  int kappa = 16;
  int rank = 3;
  int count = 2000;
  std::uint64_t seed = 0;
  std::string out;
};

int
run_synth(const SynthOptions& o)
{
  const PlantedImages p = planted_images(o.kappa, o.rank, o.count, o.seed);
  write_images(std::filesystem::path(o.out), p.images);
  return 0;
}

struct DenoiseOptions
{
  std::string in;
  double sigma = 0.0;
  double split = 0.9;
  int m = 8;
  int l = 8;
  std::string r = "auto";
  int max_rank = 10;
  std::uint64_t seed = 0;
  std::string out;
};

inline constexpr const char* kDenoiseCsvHeader =
  "kappa,count,n_train,n_test,m,l,r,noise_sigma,seed,rel_denoising_error,rel_noise_level,nominal_noise_level";

int
run_denoise(const DenoiseOptions& o)
{
  const std::vector<DiscreteImage> clean = read_images(std::filesystem::path(o.in));
  if (clean.empty())
    throw std::runtime_error(o.in + ": no images");
  const int kappa = clean.front().kappa();
  const int count = static_cast<int>(clean.size());
  const int n_train = static_cast<int>(std::lround(o.split * count));
  if (n_train < 2 || n_train >= count)
    throw UsageError("split leaves " + std::to_string(n_train) + " training and " + std::to_string(count - n_train) +
                     " test images; need at least 2 and 1");
  std::optional<int> rank;
  if (o.r != "auto") {
    double v = 0;
    if (!parse_double(o.r, v) || v < 1 || v != std::floor(v))
      throw UsageError("--r must be a positive integer or 'auto'");
    rank = static_cast<int>(v);
  }
  const int m = std::min(o.m, kappa), l = std::min(o.l, kappa);

  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(o.seed, 0));
  std::shuffle(order.begin(), order.end(), rng);

  const std::vector<DiscreteImage> noisy = add_noise(clean, o.sigma, derive_seed(o.seed, 1));
  std::vector<DiscreteImage> train, test_clean, test_noisy;
  for (int k = 0; k < count; ++k) {
    const auto i = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
    if (k < n_train) {
      train.push_back(noisy[i]);
    } else {
      test_clean.push_back(clean[i]);
      test_noisy.push_back(noisy[i]);
    }
  }

  const PcaModel model = fit_pca(train, m, l, rank, o.max_rank);
  std::vector<DiscreteImage> denoised;
  for (const auto& img : test_noisy)
    denoised.push_back(denoise(model, img));

  auto out = open_out(o.out);
  out << kDenoiseCsvHeader << '\n'
      << kappa << ',' << count << ',' << n_train << ',' << count - n_train << ',' << m << ',' << l << ','
      << model.rank() << ',' << fmt(o.sigma) << ',' << o.seed << ',' << fmt(relative_denoising_error(test_clean, denoised))
      << ',' << fmt(relative_noise_level(test_clean, test_noisy)) << ',' << fmt(nominal_noise_level(test_clean, o.sigma))
      << '\n';
  if (model.zero_energy)
    std::cerr << "vrs: warning: training images carry no variance; the model is the mean image\n";
  return 0;
}

// ---------------------------------------------------------------------------
// fit / eval

struct FitOptions
{
  std::string in;
  std::string out;
  bool response = false;
  std::vector<double> lo{ 0.0 };
  std::vector<double> hi{ 1.0 };
  std::string family = "legendre";
  int knots = 4;
  int degree = 3;
  int m = 8;
  int l = 3;
  std::string ranks = "auto";
  int max_rank = 10;
  bool cv = false;
  std::vector<int> m_grid{ 4, 8, 16, 32 };
  std::vector<int> l_grid{ 2, 3, 4 };
  int folds = 5;
  std::uint64_t seed = 0;
};

BoxDomain
make_box(const std::vector<double>& lo, const std::vector<double>& hi, int d)
{
  auto at = [d](const std::vector<double>& v, int j, const char* name) {
    if (v.size() == 1)
      return v[0];
    if (static_cast<int>(v.size()) != d)
      throw UsageError(std::string(name) + " needs 1 or " + std::to_string(d) + " values");
    return v[static_cast<std::size_t>(j)];
  };
  std::vector<Domain1D> axes;
  for (int j = 0; j < d; ++j)
    axes.emplace_back(at(lo, j, "--lo"), at(hi, j, "--hi"));
  return BoxDomain(std::move(axes));
}

VrsConfig
make_fit_config(const FitOptions& o, int d)
{
  VrsConfig cfg;
  cfg.m = o.m;
  cfg.l = o.l;
  cfg.seed = o.seed;
  if (o.family == "legendre")
    cfg.family = BasisFamily::legendre();
  else if (o.family == "spline")
    cfg.family = orthonormalize_spline(o.knots, o.degree);
  else
    throw UsageError("unknown family '" + o.family + "' (expected legendre or spline)");
  if (o.ranks == "auto") {
    cfg.ranks = AdaptiveRanks{ o.max_rank, 1e-12 };
  } else {
    FixedRanks fixed;
    for (const auto& cell : split(o.ranks, ',')) {
      double v = 0;
      if (!parse_double(cell, v) || v < 1 || v != std::floor(v))
        throw UsageError("--ranks must be 'auto' or a comma list of positive integers");
      fixed.ranks.push_back(static_cast<int>(v));
    }
    if (fixed.ranks.size() == 1)
      fixed.ranks.assign(static_cast<std::size_t>(d), fixed.ranks.front());
    cfg.ranks = fixed;
  }
  if (o.cv)
    cfg.cv = CvGrid{ o.folds, o.m_grid, o.l_grid };
  return cfg;
}

int
run_fit(const FitOptions& o)
{
  const Eigen::MatrixXd data = read_numeric_csv(o.in);
  const int d = static_cast<int>(data.cols()) - (o.response ? 1 : 0);
  if (d < 1)
    throw std::runtime_error(o.in + ": need at least one feature column" +
                             (o.response ? std::string(" besides the response") : std::string()));
  const BoxDomain box = make_box(o.lo, o.hi, d);
  const Eigen::MatrixXd points = data.leftCols(d);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::RowVectorXd row = points.row(i);
    if (!box.contains(std::span<const double>(row.data(), row.size())))
      throw std::runtime_error(o.in + ": data row " + std::to_string(i + 1) + " lies outside the domain");
  }
  const VrsConfig cfg = make_fit_config(o, d);
  Model model;
  if (o.response)
    model = Model::from_ratio(fit_regression(points, data.col(d), box, cfg, cfg));
  else
    model = Model::from_density(fit_density(points, box, cfg), points.rows());
  save_model(model, o.out);
  return 0;
}

struct EvalOptions
{
  std::string model;
  std::string in;
  std::string out;
};

int
run_eval(const EvalOptions& o)
{
  const Model model = load_model(o.model);
  const Eigen::MatrixXd pts = read_numeric_csv(o.in);
  const BoxDomain& box = model.domain();
  if (pts.cols() != box.dim())
    throw std::runtime_error(o.in + ": expected " + std::to_string(box.dim()) + " columns, found " +
                             std::to_string(pts.cols()));
  std::vector<Eigen::Index> inside;
  std::vector<std::string> reason(static_cast<std::size_t>(pts.rows()));
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    int bad = -1;
    for (int j = 0; j < box.dim() && bad < 0; ++j)
      if (!box.axes()[j].contains(pts(i, j)))
        bad = j;
    if (bad < 0)
      inside.push_back(i);
    else
      reason[static_cast<std::size_t>(i)] = "outside domain on axis " + std::to_string(bad);
  }
  Eigen::MatrixXd ok(static_cast<Eigen::Index>(inside.size()), pts.cols());
  for (std::size_t k = 0; k < inside.size(); ++k)
    ok.row(static_cast<Eigen::Index>(k)) = pts.row(inside[k]);
  const Eigen::VectorXd vals = model.evaluate(ok);

  auto out = open_out(o.out);
  out << "value,error\n";
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const auto& r = reason[static_cast<std::size_t>(i)];
    if (r.empty())
      out << fmt(vals[static_cast<Eigen::Index>(k++)]) << ",\n";
    else
      out << ',' << r << '\n';
  }
  const auto failed = static_cast<std::size_t>(pts.rows()) - inside.size();
  if (failed > 0) {
    std::cerr << "vrs: " << failed << " point(s) outside the model domain\n";
    return 1;
  }
  return 0;
}

} // namespace

int
main(int argc, char** argv)
{
  CLI::App app{ "Variance-reduced sketching: simulations, image PCA and model persistence" };
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  SimulateOptions dens;
  dens.methods = "vrs,kde";
  auto* sd = app.add_subcommand("simulate-density", "Density simulation: MH samples, VRS and KDE fits, relative L2 errors");
  add_simulate_flags(sd, dens, "sin, gl", "vrs, kde");
  sd->add_option("--mh-step", dens.mh.step, "Metropolis step half-width")->capture_default_str();
  sd->add_option("--mh-burn-in", dens.mh.burn_in, "Metropolis burn-in steps")->capture_default_str();
  sd->add_option("--mh-thinning", dens.mh.thinning, "Keep every k-th Metropolis state")->capture_default_str();

  SimulateOptions reg;
  reg.methods = "vrs,nw";
  auto* sr = app.add_subcommand("simulate-regression", "Regression simulation: VRS ratio and Nadaraya-Watson fits");
  add_simulate_flags(sr, reg, "sin, gaussmix, const", "vrs, nw");

  SynthOptions syn;
  auto* si = app.add_subcommand("synth-images", "Write planted low-rank images in the binary image format");
  si->add_option("--kappa", syn.kappa, "Image side, a power of two")->capture_default_str();
  si->add_option("--rank", syn.rank, "Number of planted patterns")->capture_default_str();
  si->add_option("--count", syn.count, "Number of images")->capture_default_str();
  si->add_option("--seed", syn.seed, "Seed")->capture_default_str();
  si->add_option("--out", syn.out, "Output image file")->required();

  DenoiseOptions den;
  auto* pd = app.add_subcommand("pca-denoise", "Sketched PCA denoising of held-out images");
  pd->add_option("--in", den.in, "Noise-free image file")->required();
  pd->add_option("--noise-sigma", den.sigma, "Pixel noise standard deviation")->required()->check(
    CLI::NonNegativeNumber);
  pd->add_option("--split", den.split, "Training fraction")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  pd->add_option("--m", den.m, "Haar functions per axis for the range")->capture_default_str()->check(
    CLI::PositiveNumber);
  pd->add_option("--l", den.l, "Haar functions per axis for the sketch")->capture_default_str()->check(
    CLI::PositiveNumber);
  pd->add_option("--r", den.r, "Number of components or 'auto'")->capture_default_str();
  pd->add_option("--max-rank", den.max_rank, "Largest adaptive rank")->capture_default_str();
  pd->add_option("--seed", den.seed, "Seed for the split and the noise")->capture_default_str();
  pd->add_option("--out", den.out, "Output CSV")->required();

  FitOptions fo;
  auto* fi = app.add_subcommand("fit", "Fit a density (or, with --response, a regression) from a CSV");
  fi->add_option("--in", fo.in, "CSV of d feature columns, plus a response column with --response")->required();
  fi->add_option("--out", fo.out, "Model JSON")->required();
  fi->add_flag("--response", fo.response, "Last column is the response");
  fi->add_option("--lo", fo.lo, "Lower domain bound, one value or one per axis")->delimiter(',')->capture_default_str();
  fi->add_option("--hi", fo.hi, "Upper domain bound, one value or one per axis")->delimiter(',')->capture_default_str();
  fi->add_option("--family", fo.family, "Basis family: legendre or spline")->capture_default_str();
  fi->add_option("--knots", fo.knots, "Interior knots of the spline family")->capture_default_str();
  fi->add_option("--degree", fo.degree, "Spline degree")->capture_default_str();
  fi->add_option("--m", fo.m, "Basis functions per axis")->capture_default_str()->check(CLI::PositiveNumber);
  fi->add_option("--l", fo.l, "Sketch functions per axis")->capture_default_str()->check(CLI::PositiveNumber);
  fi->add_option("--ranks", fo.ranks, "'auto' or ranks per mode (comma list or one value)")->capture_default_str();
  fi->add_option("--max-rank", fo.max_rank, "Largest adaptive rank")->capture_default_str();
  fi->add_flag("--cv", fo.cv, "Choose m and l by cross-validation");
  fi->add_option("--m-grid", fo.m_grid, "CV grid of m")->delimiter(',')->capture_default_str();
  fi->add_option("--l-grid", fo.l_grid, "CV grid of l")->delimiter(',')->capture_default_str();
  fi->add_option("--folds", fo.folds, "CV folds")->capture_default_str();
  fi->add_option("--seed", fo.seed, "Seed for CV folds")->capture_default_str();

  EvalOptions eo;
  auto* ev = app.add_subcommand("eval", "Evaluate a saved model at the points of a CSV");
  ev->add_option("--model", eo.model, "Model JSON")->required();
  ev->add_option("--in", eo.in, "CSV of points, one column per axis")->required();
  ev->add_option("--out", eo.out, "Output CSV: value,error per point")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*sd)
      return run_simulate_density(dens);
    if (*sr)
      return run_simulate_regression(reg);
    if (*si)
      return run_synth(syn);
    if (*pd)
      return run_denoise(den);
    if (*fi)
      return run_fit(fo);
    if (*ev)
      return run_eval(eo);
  } catch (const UsageError& e) {
    std::cerr << "vrs: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "vrs: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
