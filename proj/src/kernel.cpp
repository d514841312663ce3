#include "pinv/kernel.hpp"

#include "pinv/error.hpp"
#include "pinv/text_io.hpp"

namespace pinv {

void KernelSpec::validate() const {
  if (lengthscales.empty()) throw ValidationError("kernel needs at least one lengthscale");
  for (double t : lengthscales) {
    if (!(t > 0.0) || !std::isfinite(t)) throw ValidationError("lengthscales must be positive and finite");
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ValidationError("kernel scale must be positive");
  if (!(nugget >= 0.0) || !std::isfinite(nugget)) throw ValidationError("nugget must be >= 0");
}

std::vector<double> KernelSpec::inverse_lengthscales() const {
  std::vector<double> inv(lengthscales.size());
  for (std::size_t k = 0; k < inv.size(); ++k) inv[k] = 1.0 / lengthscales[k];
  return inv;
}

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y) {
  if (x.size() != spec.dim() || y.size() != spec.dim()) throw ValidationError("kernel input dimension mismatch");
  double value = spec.scale;
  for (std::size_t k = 0; k < x.size(); ++k) value *= matern52((x[k] - y[k]) / spec.lengthscales[k]);
  return value;
}

nlohmann::json to_json(const KernelSpec& spec) {
  return {{"theta", spec.lengthscales}, {"tau2", spec.scale}, {"nugget", spec.nugget}};
}

KernelSpec kernel_from_json(const nlohmann::json& j) {
  KernelSpec spec;
  try {
    spec.lengthscales = j.at("theta").get<std::vector<double>>();
    spec.scale = j.at("tau2").get<double>();
    spec.nugget = j.at("nugget").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("kernel spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

void save_kernel(const KernelSpec& spec, const std::filesystem::path& path) {
  write_text_file(path, to_json(spec).dump(2) + "\n");
}

KernelSpec load_kernel(const std::filesystem::path& path) {
  try {
    return kernel_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace pinv
