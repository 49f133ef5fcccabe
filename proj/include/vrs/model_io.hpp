#pragma once

#include "vrs/estimators.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vrs {

class ModelFormatError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

enum class ModelKind
{
  density,
  function,
  ratio
};

/// A fitted model as persisted: one estimate (density or plain function) or
/// a ratio pair for regression.
struct Model
{
  ModelKind kind = ModelKind::density;
  std::optional<VrsEstimate> estimate;
  std::optional<RatioEstimate> ratio;
  long long sample_count = 0;

  static Model from_density(VrsEstimate est, long long n);
  static Model from_function(VrsEstimate est, long long n);
  static Model from_ratio(RatioEstimate est);

  const BoxDomain& domain() const;
  Eigen::VectorXd evaluate(const Eigen::MatrixXd& points) const;
};

inline constexpr int kModelFormatVersion = 1;

std::string_view to_string(ModelKind kind);

/// JSON document: version, kind, domain lo/hi, family kind and parameters,
/// per-mode coefficient matrices (row-major), core shape and data,
/// value_scale, floor and N. Reals are written in shortest round-trip form,
/// so load(save(x)) is bit-identical.
std::string model_to_json(const Model& model);
Model model_from_json(std::string_view text);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

} // namespace vrs
