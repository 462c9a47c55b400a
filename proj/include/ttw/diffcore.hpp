#pragma once

// Minimal reverse-mode differentiation over small dense tensors.
//
// A Tape records operation nodes in creation order; since every node only refers to
// earlier nodes the recording is a topological order, and backward() walks it once in
// reverse. Parameters live in a ParamStore and are referenced (not copied) by the tape,
// so their gradients accumulate straight into the store.

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ttw/rng.hpp"

namespace ttw::diff {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major dense tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double item() const;

  void fill(double v);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> values_;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;  // Adam first moment
  Tensor v;  // Adam second moment
};

/// Named parameters with gradient slots and Adam state. References returned by at()
/// stay valid while parameters are added.
class ParamStore {
 public:
  Param& add(const std::string& name, Tensor init);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;

  std::deque<Param>& params() { return params_; }
  const std::deque<Param>& params() const { return params_; }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  void zero_grad();
  void copy_values_from(const ParamStore& other);

 private:
  std::deque<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  /// A tape with gradients disabled binds parameters as constants and records no
  /// backward closures; used for evaluation.
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Free-standing differentiable input; read its gradient with grad().
  Var leaf(Tensor value);
  /// Parameter leaf bound to the store; gradients are added to Param::grad on backward.
  Var param(ParamStore& store, const std::string& name);

  /// Reverse sweep from a scalar. `scale` multiplies the seed gradient.
  void backward(Var loss, double scale = 1.0);

  const Tensor& grad(Var v) const;
  const Tensor& value(int id) const;
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Used by operations: records a node whose parents are `parents`.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);
  /// Gradient accumulator of a node, zero-initialized on first access.
  Tensor& grad_ref(int id);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    BackwardFn backward;
    Tensor* grad_sink = nullptr;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // deque: Var::value() references survive later records
  std::unordered_map<const Param*, int> param_nodes_;
  bool backward_done_ = false;
  bool grad_enabled_ = true;
};

// ---- operations -------------------------------------------------------------

/// Row `index` of a [V x L] table.
Var embed_lookup(Var table, int index);
/// Row i of the result is the sum of table rows listed in bags[i] (duplicates counted).
Var embed_bag(Var table, const std::vector<std::vector<int>>& bags);
/// W [out x in] * x [in] + b [out].
Var linear(Var W, Var b, Var x);
Var sigmoid(Var x);
/// Softmax over a rank-1 tensor.
Var softmax(Var x);
Var hadamard(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var x, double c);
Var sum_list(const std::vector<Var>& xs);
Var dot(Var a, Var b);
Var sum(Var x);
Var concat(Var a, Var b);
/// Elements [begin, begin + length) of a rank-1 tensor.
Var slice(Var x, int begin, int length);
/// Row i of a rank-2 tensor as a rank-1 tensor.
Var row(Var x, int i);
/// Rows [begin, begin + count) of a rank-2 tensor.
Var rows(Var x, int begin, int count);
/// Column sums of a rank-2 tensor.
Var sum_rows(Var x);
Var reshape(Var x, Shape shape);
/// Copies the value into a new constant, cutting the gradient path.
Var detach(Var x);

/// Zero-padded 3x3 convolution over a [G1 x G2 x L] map with kernel [3 x 3 x L x L]
/// (in-feature, out-feature). Kernel cell (r, c) reads input at (x + 1 - c, y + r - 1), so
/// a one-hot kernel at (1, 0) moves every value one column toward smaller x, and one at
/// (0, 1) moves values toward larger y.
Var conv2d_3x3(Var U, Var K);
/// The 3x3 mask broadcast over both feature axes, multiplied into the kernel.
Var mask_kernel(Var Phi, Var K);
/// Fused conv2d_3x3(U, mask_kernel(Phi, K)).
Var masked_conv2d_3x3(Var U, Var Phi, Var K);
/// [G1 x G2 x L] map with each cell's feature vector multiplied by s [L].
Var scale_cells(Var U, Var s);
/// Per-cell dot product of a [G1 x G2 x L] map with e [L]; result [G1 * G2].
Var cell_dot(Var U, Var e);

inline constexpr double kProbabilityFloor = 1e-12;
/// -log p[target], with p clamped at kProbabilityFloor.
Var cross_entropy(Var p, int target);
Var mse(Var a, Var b);
/// sum_i bits_i log sigmoid(h_i) + (1 - bits_i) log(1 - sigmoid(h_i)).
Var bernoulli_log_prob(Var logits, const Tensor& bits);

// ---- optimization -------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Learning-rate multipliers for parameters whose name starts with the prefix.
  std::vector<std::pair<std::string, double>> lr_scales;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient in parameter " + param), param_(param) {}
  const std::string& param() const { return param_; }

 private:
  std::string param_;
};

/// Bias-corrected Adam update of every parameter; clears gradients afterwards. Throws
/// NonFiniteGradient before touching anything if a gradient holds NaN or inf.
void adam_step(ParamStore& store, const AdamConfig& cfg);

/// L2 norm over gradients of parameters whose name starts with `prefix`.
double grad_norm(const ParamStore& store, const std::string& prefix = "");
/// Rescales those gradients so their joint norm is at most max_norm. Returns the old norm.
double clip_grad_norm(ParamStore& store, double max_norm, const std::string& prefix = "");

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor for relative error; keeps near-zero gradients from dominating.
  double floor = 1e-6;
  /// Coordinates checked per parameter (0 = all). Larger tensors are sampled.
  int max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

using GraphBuilder = std::function<Var(Tape&)>;

/// Compares backward() gradients against central differences for every parameter used by
/// `build`. `build` must bind parameters through Tape::param so perturbations are seen.
GradCheckReport grad_check(ParamStore& store, const GraphBuilder& build,
                           const GradCheckOptions& options = {});

// ---- checkpoints -------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

/// Writes a one-line JSON header followed by raw little-endian float64 arrays
/// (value, m, v per parameter, in header order).
void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& meta);
ParamStore load_checkpoint(const std::string& path, nlohmann::json* meta = nullptr);

}  // namespace ttw::diff
