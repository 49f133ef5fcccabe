#include "vrs/pca.hpp"

#include "vrs/basis.hpp"
#include "vrs/estimators.hpp"
#include "vrs/parallel.hpp"
#include "vrs/sketch.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <string>

namespace vrs {

DiscreteImage::DiscreteImage(Eigen::MatrixXd p)
  : pixels(std::move(p))
{
  if (pixels.rows() != pixels.cols())
    throw PcaError("image must be square, got " + std::to_string(pixels.rows()) + " x " +
                   std::to_string(pixels.cols()));
  if (!is_power_of_two(static_cast<int>(pixels.rows())))
    throw PcaError("image side " + std::to_string(pixels.rows()) + " is not a power of two");
}

double
scaled_dot(const DiscreteImage& a, const DiscreteImage& b)
{
  if (a.kappa() != b.kappa())
    throw PcaError("image sizes differ");
  return a.pixels.cwiseProduct(b.pixels).sum() / (static_cast<double>(a.kappa()) * a.kappa());
}

double
scaled_norm(const DiscreteImage& a)
{
  return std::sqrt(scaled_dot(a, a));
}

Eigen::MatrixXd
haar_coeff_matrix(const DiscreteImage& img)
{
  const int k = img.kappa();
  Eigen::MatrixXd c = img.pixels;
  std::vector<double> row(static_cast<std::size_t>(k));
  for (int r = 0; r < k; ++r) {
    for (int x = 0; x < k; ++x)
      row[x] = c(r, x);
    haar_forward(row);
    for (int x = 0; x < k; ++x)
      c(r, x) = row[x];
  }
  for (int col = 0; col < k; ++col)
    haar_forward(std::span<double>(c.col(col).data(), static_cast<std::size_t>(k)));
  return c;
}

Eigen::VectorXd
haar_coeffs(const DiscreteImage& img, int m)
{
  if (m < 1 || m > img.kappa())
    throw PcaError("haar_coeffs: m = " + std::to_string(m) + " outside [1, " + std::to_string(img.kappa()) +
                   "]");
  const Eigen::MatrixXd c = haar_coeff_matrix(img);
  Eigen::VectorXd out(m * m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      out[a * m + b] = c(a, b);
  return out;
}

DiscreteImage
haar_image(const Eigen::VectorXd& coeffs, int m, int kappa)
{
  if (m < 1 || m > kappa || coeffs.size() != m * m)
    throw PcaError("haar_image: need m^2 coefficients with m <= kappa");
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(kappa, kappa);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      c(a, b) = coeffs[a * m + b];
  for (int col = 0; col < kappa; ++col)
    haar_inverse(std::span<double>(c.col(col).data(), static_cast<std::size_t>(kappa)));
  std::vector<double> row(static_cast<std::size_t>(kappa));
  for (int r = 0; r < kappa; ++r) {
    for (int x = 0; x < kappa; ++x)
      row[x] = c(r, x);
    haar_inverse(row);
    for (int x = 0; x < kappa; ++x)
      c(r, x) = row[x];
  }
  return DiscreteImage(std::move(c));
}

namespace {

int
common_kappa(std::span<const DiscreteImage> images)
{
  if (images.empty())
    throw PcaError("no images");
  const int k = images.front().kappa();
  for (const auto& img : images)
    if (img.kappa() != k)
      throw PcaError("images have different sizes");
  return k;
}

// Rows hold the first `keep` x `keep` coefficients of each image, mu1 slow.
Eigen::MatrixXd
coefficient_rows(std::span<const DiscreteImage> images, int keep)
{
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(images.size()), keep * keep);
  parallel_for(images.size(), [&](std::size_t i) {
    rows.row(static_cast<Eigen::Index>(i)) = haar_coeffs(images[i], keep).transpose();
  });
  return rows;
}

// Keeps the first `m` x `m` block of rows built with a larger truncation.
Eigen::MatrixXd
truncate_rows(const Eigen::MatrixXd& rows, int from, int m)
{
  Eigen::MatrixXd out(rows.rows(), m * m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      out.col(a * m + b) = rows.col(a * from + b);
  return out;
}

} // namespace

Eigen::MatrixXd
covariance_sketch(std::span<const DiscreteImage> images, int m, int l)
{
  const int k = common_kappa(images);
  if (images.size() < 2)
    throw PcaError("covariance needs at least two images");
  if (m < 1 || l < 1 || m > k || l > k)
    throw PcaError("m and l must lie in [1, kappa]");
  const int keep = std::max(m, l);
  Eigen::MatrixXd rows = coefficient_rows(images, keep);
  const Eigen::RowVectorXd mean = rows.colwise().sum() / static_cast<double>(rows.rows());
  rows.rowwise() -= mean;
  const Eigen::MatrixXd a = truncate_rows(rows, keep, m);
  const Eigen::MatrixXd c = truncate_rows(rows, keep, l);
  return a.transpose() * c / static_cast<double>(rows.rows() - 1);
}

DiscreteImage
PcaModel::component(int rho) const
{
  return haar_image(components.col(rho), m, kappa);
}

PcaModel
fit_pca(std::span<const DiscreteImage> images, int m, int l, std::optional<int> rank, int max_rank)
{
  const int k = common_kappa(images);
  const Eigen::MatrixXd b = covariance_sketch(images, m, l);
  const int bound = static_cast<int>(std::min(b.rows(), b.cols()));

  PcaModel model;
  model.kappa = k;
  model.m = m;
  model.l = l;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, k);
  for (const auto& img : images)
    sum += img.pixels;
  model.mean = DiscreteImage(sum / static_cast<double>(images.size()));

  LeftSingular svd = left_singular(b);
  model.singular_values = svd.values;
  // energy scale of the data, to judge whether the sketch is numerically zero
  double energy = 0.0;
  for (const auto& img : images)
    energy += std::pow(scaled_norm(img), 2);
  energy /= static_cast<double>(images.size());
  model.zero_energy = !(svd.values[0] > 1e-12 * std::max(energy, 1e-300));

  int r = 1;
  if (rank) {
    r = *rank;
    if (r < 1 || r > bound)
      throw PcaError("rank " + std::to_string(r) + " outside [1, " + std::to_string(bound) + "]");
  } else if (!model.zero_energy && bound >= 2) {
    r = select_rank(std::span<const double>(svd.values.data(), static_cast<std::size_t>(svd.values.size())),
                    std::min(max_rank, bound),
                    1e-12 * svd.values[0]);
  }
  model.components = svd.vectors.leftCols(r);
  return model;
}

DiscreteImage
denoise(const PcaModel& model, const DiscreteImage& img)
{
  if (img.kappa() != model.kappa)
    throw PcaError("image is " + std::to_string(img.kappa()) + " pixels wide, model expects " +
                   std::to_string(model.kappa));
  const Eigen::VectorXd a = haar_coeffs(DiscreteImage(img.pixels - model.mean.pixels), model.m);
  const Eigen::VectorXd proj = model.components * (model.components.transpose() * a);
  return DiscreteImage(model.mean.pixels + haar_image(proj, model.m, model.kappa).pixels);
}

namespace {

void
check_pairs(std::span<const DiscreteImage> a, std::span<const DiscreteImage> b)
{
  if (a.size() != b.size() || a.empty())
    throw PcaError("image lists must be nonempty and of equal length");
}

} // namespace

double
relative_denoising_error(std::span<const DiscreteImage> truth, std::span<const DiscreteImage> estimate)
{
  check_pairs(truth, estimate);
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    s += (estimate[i].pixels - truth[i].pixels).squaredNorm() / truth[i].pixels.squaredNorm();
  return std::sqrt(s / static_cast<double>(truth.size()));
}

double
relative_noise_level(std::span<const DiscreteImage> truth, std::span<const DiscreteImage> noisy)
{
  return relative_denoising_error(truth, noisy);
}

double
nominal_noise_level(std::span<const DiscreteImage> truth, double sigma)
{
  if (truth.empty())
    throw PcaError("no images");
  double s = 0.0;
  for (const auto& img : truth)
    s += 1.0 / img.pixels.squaredNorm();
  return sigma * truth.front().kappa() * std::sqrt(s / static_cast<double>(truth.size()));
}

Eigen::MatrixXd
PlantedImages::span_coeffs(int m) const
{
  Eigen::MatrixXd out(m * m, static_cast<Eigen::Index>(patterns.size()));
  for (std::size_t k = 0; k < patterns.size(); ++k)
    out.col(static_cast<Eigen::Index>(k)) = haar_coeffs(patterns[k], m);
  return out;
}

PlantedImages
planted_images(int kappa, int rank, int count, std::uint64_t seed)
{
  if (!is_power_of_two(kappa))
    throw PcaError("kappa must be a power of two");
  const int block = std::min(4, kappa);
  if (rank < 1 || rank > block * block)
    throw PcaError("rank must lie in [1, " + std::to_string(block * block) + "]");
  if (count < 1)
    throw PcaError("count must be positive");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd raw(block * block, rank);
  for (Eigen::Index i = 0; i < raw.size(); ++i)
    raw.data()[i] = g(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ() *
                            Eigen::MatrixXd::Identity(block * block, rank);

  PlantedImages out;
  out.mean = DiscreteImage(Eigen::MatrixXd::Ones(kappa, kappa));
  for (int k = 0; k < rank; ++k)
    out.patterns.push_back(haar_image(q.col(k), block, kappa));
  out.images.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Eigen::MatrixXd p = out.mean.pixels;
    double s = 3.0;
    for (int k = 0; k < rank; ++k, s *= 0.7)
      p += s * g(rng) * out.patterns[k].pixels;
    out.images.emplace_back(std::move(p));
  }
  return out;
}

std::vector<DiscreteImage>
add_noise(std::span<const DiscreteImage> images, double sigma, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<DiscreteImage> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    Eigen::MatrixXd p = img.pixels;
    for (int r = 0; r < p.rows(); ++r)
      for (int c = 0; c < p.cols(); ++c)
        p(r, c) += g(rng);
    out.emplace_back(std::move(p));
  }
  return out;
}

void
write_images(std::ostream& out, std::span<const DiscreteImage> images)
{
  const int k = images.empty() ? 1 : common_kappa(images);
  const nlohmann::json header = { { "count", images.size() }, { "kappa", k }, { "dtype", "f64le" } };
  out << header.dump() << '\n';
  char bytes[8];
  for (const auto& img : images)
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < k; ++c) {
        const auto bits = std::bit_cast<std::uint64_t>(img.pixels(r, c));
        for (int b = 0; b < 8; ++b)
          bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
        out.write(bytes, 8);
      }
  if (!out)
    throw PcaError("failed writing image batch");
}

std::vector<DiscreteImage>
read_images(std::istream& in)
{
  std::string line;
  if (!std::getline(in, line))
    throw PcaError("image batch: missing header line");
  nlohmann::json header;
  long long count = 0;
  int k = 0;
  try {
    header = nlohmann::json::parse(line);
    if (header.at("dtype") != "f64le")
      throw PcaError("image batch: unsupported dtype " + header.at("dtype").dump());
    count = header.at("count").get<long long>();
    k = header.at("kappa").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw PcaError(std::string("image batch: malformed header: ") + e.what());
  }
  if (count < 0)
    throw PcaError("image batch: negative count");
  if (!is_power_of_two(k))
    throw PcaError("image batch: kappa " + std::to_string(k) + " is not a power of two");

  std::vector<DiscreteImage> out;
  out.reserve(static_cast<std::size_t>(count));
  unsigned char bytes[8];
  for (long long i = 0; i < count; ++i) {
    Eigen::MatrixXd p(k, k);
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < k; ++c) {
        if (!in.read(reinterpret_cast<char*>(bytes), 8))
          throw PcaError("image batch: truncated at image " + std::to_string(i));
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b)
          bits = (bits << 8) | bytes[b];
        p(r, c) = std::bit_cast<double>(bits);
      }
    out.emplace_back(std::move(p));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw PcaError("image batch: trailing bytes after " + std::to_string(count) + " images");
  return out;
}

void
write_images(const std::filesystem::path& path, std::span<const DiscreteImage> images)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw PcaError("cannot open " + path.string() + " for writing");
  write_images(out, images);
}

std::vector<DiscreteImage>
read_images(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw PcaError("cannot open " + path.string());
  return read_images(in);
}

} // namespace vrs
