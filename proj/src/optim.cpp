#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "ttw/diffcore.hpp"

namespace ttw::diff {

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  for (const Param& p : store.params()) {
    if (!p.grad.all_finite()) throw NonFiniteGradient(p.name);
  }
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (Param& p : store.params()) {
    double lr = cfg.lr;
    for (const auto& [prefix, scale] : cfg.lr_scales) {
      if (p.name.rfind(prefix, 0) == 0) lr *= scale;
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
      p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = p.m[i] / c1;
      const double v_hat = p.v[i] / c2;
      p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
  store.zero_grad();
}

double grad_norm(const ParamStore& store, const std::string& prefix) {
  double s = 0.0;
  for (const Param& p : store.params()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    for (double g : p.grad.values()) s += g * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(ParamStore& store, double max_norm, const std::string& prefix) {
  const double norm = grad_norm(store, prefix);
  if (max_norm > 0.0 && norm > max_norm) {
    const double c = max_norm / norm;
    for (Param& p : store.params()) {
      if (p.name.rfind(prefix, 0) != 0) continue;
      for (double& g : p.grad.values()) g *= c;
    }
  }
  return norm;
}

GradCheckReport grad_check(ParamStore& store, const GraphBuilder& build,
                           const GradCheckOptions& options) {
  store.zero_grad();
  {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  for (const Param& p : store.params()) analytic.push_back(p.grad);
  store.zero_grad();

  auto evaluate = [&] {
    Tape tape;
    return build(tape).item();
  };

  GradCheckReport report;
  Rng rng(options.seed);
  for (std::size_t pi = 0; pi < store.params().size(); ++pi) {
    Param& p = store.params()[pi];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param > 0 &&
        coords.size() > static_cast<std::size_t>(options.max_coords_per_param)) {
      std::shuffle(coords.begin(), coords.end(), rng.engine());
      coords.resize(static_cast<std::size_t>(options.max_coords_per_param));
    }
    for (std::size_t i : coords) {
      const double orig = p.value[i];
      p.value[i] = orig + options.step;
      const double up = evaluate();
      p.value[i] = orig - options.step;
      const double down = evaluate();
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coords_checked;
      if (report.worst_param.empty() || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void write_tensor(std::ofstream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

void read_tensor(std::ifstream& in, Tensor& t, const std::string& path) {
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint " + path + " is truncated");
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store, const nlohmann::json& meta) {
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["precision"] = "float64";
  header["byte_order"] = "little";
  header["adam_step"] = store.step();
  header["meta"] = meta;
  nlohmann::json params = nlohmann::json::array();
  for (const Param& p : store.params()) params.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  header["params"] = params;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  for (const Param& p : store.params()) {
    write_tensor(out, p.value);
    write_tensor(out, p.m);
    write_tensor(out, p.v);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

ParamStore load_checkpoint(const std::string& path, nlohmann::json* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint " + path + " has no header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + path + " header is not JSON: " + e.what());
  }
  if (header.value("format_version", 0) != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint " + path + " has unsupported format_version");
  }
  if (header.value("precision", "") != "float64") {
    throw std::runtime_error("checkpoint " + path + " has unsupported precision");
  }
  ParamStore store;
  for (const auto& entry : header.at("params")) {
    Param& p = store.add(entry.at("name").get<std::string>(), Tensor(entry.at("shape").get<Shape>()));
    read_tensor(in, p.value, path);
    read_tensor(in, p.m, path);
    read_tensor(in, p.v, path);
  }
  store.set_step(header.at("adam_step").get<std::int64_t>());
  if (meta) *meta = header.value("meta", nlohmann::json::object());
  return store;
}

}  // namespace ttw::diff
