#include "vrs/model_io.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace vrs {

using nlohmann::json;

Model
Model::from_density(VrsEstimate est, long long n)
{
  Model m;
  m.kind = ModelKind::density;
  m.estimate = std::move(est);
  m.sample_count = n;
  return m;
}

Model
Model::from_function(VrsEstimate est, long long n)
{
  Model m = from_density(std::move(est), n);
  m.kind = ModelKind::function;
  return m;
}

Model
Model::from_ratio(RatioEstimate est)
{
  Model m;
  m.kind = ModelKind::ratio;
  m.sample_count = est.sample_count;
  m.ratio = std::move(est);
  return m;
}

const BoxDomain&
Model::domain() const
{
  return ratio ? ratio->numerator.domain() : estimate->domain();
}

Eigen::VectorXd
Model::evaluate(const Eigen::MatrixXd& points) const
{
  return ratio ? ratio->evaluate(points) : estimate->evaluate(points);
}

std::string_view
to_string(ModelKind kind)
{
  switch (kind) {
    case ModelKind::density:
      return "density";
    case ModelKind::function:
      return "function";
    case ModelKind::ratio:
      return "ratio";
  }
  return "";
}

namespace {

ModelKind
kind_from(const std::string& s)
{
  if (s == "density")
    return ModelKind::density;
  if (s == "function")
    return ModelKind::function;
  if (s == "ratio")
    return ModelKind::ratio;
  throw ModelFormatError("unknown model kind '" + s + "'");
}

json
family_json(const BasisFamily& f)
{
  json j;
  if (f.is_legendre()) {
    j["kind"] = "legendre";
  } else if (const auto* s = std::get_if<SplineKind>(&f.kind())) {
    j["kind"] = "spline";
    j["knot_count"] = s->knot_count;
    j["degree"] = s->degree;
  } else {
    j["kind"] = "haar";
    j["grid_size"] = std::get<HaarKind>(f.kind()).grid_size;
  }
  j["lo"] = f.domain().lo();
  j["hi"] = f.domain().hi();
  return j;
}

BasisFamily
family_from(const json& j)
{
  const std::string kind = j.at("kind");
  const Domain1D dom(j.at("lo").get<double>(), j.at("hi").get<double>());
  if (kind == "legendre")
    return BasisFamily::legendre(dom);
  if (kind == "spline")
    return orthonormalize_spline(j.at("knot_count").get<int>(), j.at("degree").get<int>(), dom);
  if (kind == "haar")
    return BasisFamily::haar(j.at("grid_size").get<int>());
  throw ModelFormatError("unknown basis family '" + kind + "'");
}

json
estimate_json(const VrsEstimate& est)
{
  json factors = json::array();
  for (const auto& f : est.factors()) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(f.coeffs.size()));
    for (Eigen::Index r = 0; r < f.coeffs.rows(); ++r)
      for (Eigen::Index c = 0; c < f.coeffs.cols(); ++c)
        flat.push_back(f.coeffs(r, c));
    factors.push_back({ { "rows", f.coeffs.rows() }, { "cols", f.coeffs.cols() }, { "coeffs", flat } });
  }
  return { { "value_scale", est.value_scale() },
           { "m", est.info.m },
           { "l", est.info.l },
           { "factors", factors },
           { "core", { { "shape", est.core().shape }, { "data", est.core().data } } } };
}

VrsEstimate
estimate_from(const json& j, const BasisFamily& family, const BoxDomain& box)
{
  std::vector<RangeBasis> factors;
  int mode = 0;
  for (const auto& f : j.at("factors")) {
    const auto rows = f.at("rows").get<Eigen::Index>();
    const auto cols = f.at("cols").get<Eigen::Index>();
    const auto flat = f.at("coeffs").get<std::vector<double>>();
    if (rows < 1 || cols < 1 || static_cast<Eigen::Index>(flat.size()) != rows * cols)
      throw ModelFormatError("factor " + std::to_string(mode) + ": coefficient count does not match its shape");
    if (rows > family.size())
      throw ModelFormatError("factor " + std::to_string(mode) + " uses more functions than the family has");
    Eigen::MatrixXd coeffs(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        coeffs(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
    factors.push_back(RangeBasis{ std::move(coeffs), family, mode++ });
  }
  DenseTensor core(j.at("core").at("shape").get<std::vector<int>>());
  auto data = j.at("core").at("data").get<std::vector<double>>();
  if (data.size() != core.data.size())
    throw ModelFormatError("core data length does not match its shape");
  core.data = std::move(data);
  try {
    VrsEstimate est(std::move(core), std::move(factors), box, j.at("value_scale").get<double>());
    est.info.m = j.value("m", 0);
    est.info.l = j.value("l", 0);
    return est;
  } catch (const EstimateError& e) {
    throw ModelFormatError(e.what());
  }
}

} // namespace

std::string
model_to_json(const Model& model)
{
  const BoxDomain& box = model.domain();
  std::vector<double> lo, hi;
  for (const auto& a : box.axes()) {
    lo.push_back(a.lo());
    hi.push_back(a.hi());
  }
  json j;
  j["version"] = kModelFormatVersion;
  j["kind"] = std::string(to_string(model.kind));
  j["n"] = model.sample_count;
  j["domain"] = { { "lo", lo }, { "hi", hi } };
  if (model.ratio) {
    j["family"] = family_json(model.ratio->numerator.family());
    j["floor"] = model.ratio->floor;
    j["numerator"] = estimate_json(model.ratio->numerator);
    j["density"] = estimate_json(model.ratio->density);
  } else {
    j["family"] = family_json(model.estimate->family());
    j["estimate"] = estimate_json(*model.estimate);
  }
  return j.dump(1) + "\n";
}

Model
model_from_json(std::string_view text)
{
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ModelFormatError(std::string("model is not valid JSON: ") + e.what());
  }
  try {
    const int version = j.at("version");
    if (version != kModelFormatVersion)
      throw ModelFormatError("unsupported model version " + std::to_string(version));
    const auto lo = j.at("domain").at("lo").get<std::vector<double>>();
    const auto hi = j.at("domain").at("hi").get<std::vector<double>>();
    if (lo.size() != hi.size() || lo.empty())
      throw ModelFormatError("domain lo and hi must be nonempty and of equal length");
    std::vector<Domain1D> axes;
    for (std::size_t k = 0; k < lo.size(); ++k)
      axes.emplace_back(lo[k], hi[k]);
    const BoxDomain box(std::move(axes));
    const BasisFamily family = family_from(j.at("family"));

    Model m;
    m.kind = kind_from(j.at("kind"));
    m.sample_count = j.at("n");
    if (m.kind == ModelKind::ratio) {
      m.ratio = RatioEstimate{ estimate_from(j.at("numerator"), family, box),
                               estimate_from(j.at("density"), family, box),
                               j.at("floor").get<double>(),
                               m.sample_count };
    } else {
      m.estimate = estimate_from(j.at("estimate"), family, box);
    }
    return m;
  } catch (const json::exception& e) {
    throw ModelFormatError(std::string("malformed model: ") + e.what());
  } catch (const BasisError& e) {
    throw ModelFormatError(std::string("malformed model: ") + e.what());
  }
}

void
save_model(const Model& model, const std::filesystem::path& path)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw ModelFormatError("cannot open " + path.string() + " for writing");
  out << model_to_json(model);
  if (!out)
    throw ModelFormatError("failed writing " + path.string());
}

Model
load_model(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ModelFormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

} // namespace vrs
