#include "ttw/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

namespace ttw::diff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require_rank(Var v, int rank, const char* op, const char* operand) {
  if (v.value().rank() != rank) {
    shape_fail(op, std::string(operand) + " must have rank " + std::to_string(rank) + ", got " +
                       shape_str(v.shape()));
  }
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    shape_fail(op, "lhs " + shape_str(a.shape()) + " vs rhs " + shape_str(b.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

struct MapDims {
  int g1;
  int g2;
  int features;
  int cells() const { return g1 * g2; }
};

MapDims check_map(Var U, const char* op) {
  require_rank(U, 3, op, "map U");
  return {U.value().dim(0), U.value().dim(1), U.value().dim(2)};
}

void check_kernel(Var K, int features, const char* op) {
  const Shape& s = K.shape();
  if (s.size() != 4 || s[0] != 3 || s[1] != 3) {
    shape_fail(op, "kernel must be [3 x 3 x L x L], got " + shape_str(s));
  }
  if (s[2] != features || s[3] != features) {
    shape_fail(op, "kernel " + shape_str(s) + " incompatible with map features " +
                       std::to_string(features));
  }
}

// Gathers the shifted copy of U read by kernel cell k (zero outside the map).
void shifted(const double* U, const MapDims& d, int k, double* out) {
  const int r = k / 3;
  const int c = k % 3;
  const int ox = 1 - c;
  const int oy = r - 1;
  const std::size_t L = static_cast<std::size_t>(d.features);
  std::fill(out, out + d.cells() * L, 0.0);
  for (int x = 0; x < d.g1; ++x) {
    const int sx = x + ox;
    if (sx < 0 || sx >= d.g1) continue;
    for (int y = 0; y < d.g2; ++y) {
      const int sy = y + oy;
      if (sy < 0 || sy >= d.g2) continue;
      std::copy_n(U + (sx * d.g2 + sy) * L, L, out + (x * d.g2 + y) * L);
    }
  }
}

// Adds the transpose of shifted(): scatter `in` back onto the source cells.
void unshift_add(const double* in, const MapDims& d, int k, double* U_grad) {
  const int r = k / 3;
  const int c = k % 3;
  const int ox = 1 - c;
  const int oy = r - 1;
  const std::size_t L = static_cast<std::size_t>(d.features);
  for (int x = 0; x < d.g1; ++x) {
    const int sx = x + ox;
    if (sx < 0 || sx >= d.g1) continue;
    for (int y = 0; y < d.g2; ++y) {
      const int sy = y + oy;
      if (sy < 0 || sy >= d.g2) continue;
      const double* src = in + (x * d.g2 + y) * L;
      double* dst = U_grad + (sx * d.g2 + sy) * L;
      for (std::size_t l = 0; l < L; ++l) dst[l] += src[l];
    }
  }
}

// out = sum_k weight_k * shift_k(U) K_k; weight == nullptr means all ones.
Tensor conv_forward(const Tensor& U, const MapDims& d, const Tensor& K, const Tensor* weight) {
  const int L = d.features;
  Tensor out({d.g1, d.g2, L});
  RowMat S(d.cells(), L);
  MatMap O(out.data(), d.cells(), L);
  for (int k = 0; k < 9; ++k) {
    const double w = weight ? (*weight)[static_cast<std::size_t>(k)] : 1.0;
    if (w == 0.0) continue;
    shifted(U.data(), d, k, S.data());
    ConstMatMap Kk(K.data() + static_cast<std::size_t>(k) * L * L, L, L);
    O.noalias() += w * (S * Kk);
  }
  return out;
}

struct ConvGrads {
  Tensor* dU = nullptr;
  Tensor* dK = nullptr;
  Tensor* dW = nullptr;  // mask gradient
};

void conv_backward(const Tensor& U, const MapDims& d, const Tensor& K, const Tensor* weight,
                   const Tensor& G, ConvGrads grads) {
  const int L = d.features;
  RowMat S(d.cells(), L);
  RowMat dS(d.cells(), L);
  RowMat P(L, L);
  ConstMatMap Gm(G.data(), d.cells(), L);
  for (int k = 0; k < 9; ++k) {
    const double w = weight ? (*weight)[static_cast<std::size_t>(k)] : 1.0;
    ConstMatMap Kk(K.data() + static_cast<std::size_t>(k) * L * L, L, L);
    if (grads.dK || grads.dW) {
      shifted(U.data(), d, k, S.data());
      P.noalias() = S.transpose() * Gm;
      if (grads.dK) {
        MatMap dKk(grads.dK->data() + static_cast<std::size_t>(k) * L * L, L, L);
        dKk += w * P;
      }
      if (grads.dW) (*grads.dW)[static_cast<std::size_t>(k)] += P.cwiseProduct(Kk).sum();
    }
    if (grads.dU && w != 0.0) {
      dS.noalias() = w * (Gm * Kk.transpose());
      unshift_add(dS.data(), d, k, grads.dU->data());
    }
  }
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? " x " : "") << shape[i];
  os << "]";
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("shape dimensions must be positive, got " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// ---- Tensor -----------------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_)) {
    throw ShapeError("tensor of shape " + shape_str(shape_) + " given " +
                     std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Tensor({n}, std::move(v));
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return values_[0];
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

// ---- ParamStore -------------------------------------------------------------------

Param& ParamStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name " + name);
  const Shape shape = init.shape();
  index_.emplace(name, params_.size());
  params_.push_back(Param{name, std::move(init), Tensor(shape), Tensor(shape), Tensor(shape)});
  return params_.back();
}

Param& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return params_[it->second];
}

void ParamStore::zero_grad() {
  for (Param& p : params_) p.grad.fill(0.0);
}

void ParamStore::copy_values_from(const ParamStore& other) {
  for (const Param& src : other.params_) {
    Param& dst = at(src.name);
    if (dst.value.shape() != src.value.shape()) {
      throw ShapeError("parameter " + src.name + " shape mismatch on copy");
    }
    dst.value = src.value;
  }
}

// ---- Var / Tape -------------------------------------------------------------------

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value(id_);
}

const Tensor& Tape::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.external ? *n.external : n.owned;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::param(ParamStore& store, const std::string& name) {
  Param& p = store.at(name);
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.external = &p.value;
  n.needs_grad = grad_enabled_;
  n.grad_sink = grad_enabled_ ? &p.grad : nullptr;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(parents), std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (const Var& p : parents) {
    if (p.tape() != this) throw std::invalid_argument("operand recorded on a different tape");
    n.needs_grad = n.needs_grad || needs_grad(p.id());
  }
  if (!n.owned.all_finite()) throw std::domain_error("operation produced a non-finite value");
  if (n.needs_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Tensor& Tape::grad_ref(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Tensor(value(id).shape());
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (!n.has_grad) throw std::logic_error("no gradient recorded for node " + std::to_string(v.id()));
  return n.grad;
}

void Tape::backward(Var loss, double scale) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  }
  if (backward_done_) throw std::logic_error("backward called twice on one tape");
  backward_done_ = true;
  grad_ref(loss.id())[0] = scale;
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.grad_sink) add_into(*n.grad_sink, n.grad);
  }
}

// ---- operations -------------------------------------------------------------------

Var embed_lookup(Var table, int index) {
  require_rank(table, 2, "embed_lookup", "table");
  const int V = table.value().dim(0);
  const int L = table.value().dim(1);
  if (index < 0 || index >= V) {
    throw std::out_of_range("embed_lookup: index " + std::to_string(index) + " outside table of " +
                            std::to_string(V) + " rows");
  }
  Tensor out({L});
  std::copy_n(table.value().data() + static_cast<std::size_t>(index) * L, L, out.data());
  const int tid = table.id();
  return table.tape()->record(std::move(out), {table}, [tid, index, L](Tape& t, const Tensor& g) {
    double* dst = t.grad_ref(tid).data() + static_cast<std::size_t>(index) * L;
    for (int l = 0; l < L; ++l) dst[l] += g[static_cast<std::size_t>(l)];
  });
}

Var embed_bag(Var table, const std::vector<std::vector<int>>& bags) {
  require_rank(table, 2, "embed_bag", "table");
  const int V = table.value().dim(0);
  const int L = table.value().dim(1);
  if (bags.empty()) shape_fail("embed_bag", "no bags given");
  const int n = static_cast<int>(bags.size());
  Tensor out({n, L});
  const double* src = table.value().data();
  for (int i = 0; i < n; ++i) {
    for (int idx : bags[static_cast<std::size_t>(i)]) {
      if (idx < 0 || idx >= V) {
        throw std::out_of_range("embed_bag: symbol " + std::to_string(idx) + " outside table of " +
                                std::to_string(V) + " rows");
      }
      double* dst = out.data() + static_cast<std::size_t>(i) * L;
      const double* row = src + static_cast<std::size_t>(idx) * L;
      for (int l = 0; l < L; ++l) dst[l] += row[l];
    }
  }
  const int tid = table.id();
  return table.tape()->record(std::move(out), {table}, [tid, bags, L](Tape& t, const Tensor& g) {
    double* dst = t.grad_ref(tid).data();
    for (std::size_t i = 0; i < bags.size(); ++i) {
      for (int idx : bags[i]) {
        for (int l = 0; l < L; ++l) {
          dst[static_cast<std::size_t>(idx) * L + l] += g[i * L + static_cast<std::size_t>(l)];
        }
      }
    }
  });
}

Var linear(Var W, Var b, Var x) {
  require_same_tape(W, x, "linear");
  require_same_tape(W, b, "linear");
  require_rank(W, 2, "linear", "W");
  require_rank(b, 1, "linear", "b");
  require_rank(x, 1, "linear", "x");
  const int out_dim = W.value().dim(0);
  const int in_dim = W.value().dim(1);
  if (x.value().dim(0) != in_dim) {
    shape_fail("linear", "W " + shape_str(W.shape()) + " incompatible with x " + shape_str(x.shape()));
  }
  if (b.value().dim(0) != out_dim) {
    shape_fail("linear", "W " + shape_str(W.shape()) + " incompatible with b " + shape_str(b.shape()));
  }
  Tensor out({out_dim});
  VecMap(out.data(), out_dim) =
      ConstMatMap(W.value().data(), out_dim, in_dim) * ConstVecMap(x.value().data(), in_dim) +
      ConstVecMap(b.value().data(), out_dim);
  const int wid = W.id(), bid = b.id(), xid = x.id();
  return W.tape()->record(std::move(out), {W, b, x},
                          [wid, bid, xid, out_dim, in_dim](Tape& t, const Tensor& g) {
                            ConstVecMap gv(g.data(), out_dim);
                            if (t.needs_grad(wid)) {
                              MatMap(t.grad_ref(wid).data(), out_dim, in_dim).noalias() +=
                                  gv * ConstVecMap(t.value(xid).data(), in_dim).transpose();
                            }
                            if (t.needs_grad(bid)) VecMap(t.grad_ref(bid).data(), out_dim) += gv;
                            if (t.needs_grad(xid)) {
                              VecMap(t.grad_ref(xid).data(), in_dim).noalias() +=
                                  ConstMatMap(t.value(wid).data(), out_dim, in_dim).transpose() * gv;
                            }
                          });
}

Var sigmoid(Var x) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(xv[i]);
  const int xid = x.id();
  Tape* tape = x.tape();
  const int self = static_cast<int>(tape->size());
  return tape->record(std::move(out), {x}, [xid, self](Tape& t, const Tensor& g) {
    const Tensor& s = t.value(self);
    Tensor& dx = t.grad_ref(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * s[i] * (1.0 - s[i]);
  });
}

Var softmax(Var x) {
  require_rank(x, 1, "softmax", "x");
  const Tensor& xv = x.value();
  Tensor out(x.shape());
  const double mx = *std::max_element(xv.values().begin(), xv.values().end());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(xv[i] - mx);
    total += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= total;
  const int xid = x.id();
  Tape* tape = x.tape();
  const int self = static_cast<int>(tape->size());
  return tape->record(std::move(out), {x}, [xid, self](Tape& t, const Tensor& g) {
    const Tensor& p = t.value(self);
    double inner = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) inner += g[i] * p[i];
    Tensor& dx = t.grad_ref(xid);
    for (std::size_t i = 0; i < p.size(); ++i) dx[i] += p[i] * (g[i] - inner);
  });
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b, "hadamard");
  require_same_shape(a, b, "hadamard");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const int aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(out), {a, b}, [aid, bid](Tape& t, const Tensor& g) {
    if (t.needs_grad(aid)) {
      Tensor& da = t.grad_ref(aid);
      const Tensor& bv = t.value(bid);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (t.needs_grad(bid)) {
      Tensor& db = t.grad_ref(bid);
      const Tensor& av = t.value(aid);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const int aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(out), {a, b}, [aid, bid](Tape& t, const Tensor& g) {
    if (t.needs_grad(aid)) add_into(t.grad_ref(aid), g);
    if (t.needs_grad(bid)) add_into(t.grad_ref(bid), g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const int aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(out), {a, b}, [aid, bid](Tape& t, const Tensor& g) {
    if (t.needs_grad(aid)) add_into(t.grad_ref(aid), g);
    if (t.needs_grad(bid)) {
      Tensor& db = t.grad_ref(bid);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g[i];
    }
  });
}

Var scale(Var x, double c) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x.value()[i];
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [xid, c](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_ref(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += c * g[i];
  });
}

Var sum_list(const std::vector<Var>& xs) {
  if (xs.empty()) shape_fail("sum_list", "empty list");
  Tensor out(xs.front().shape());
  std::vector<int> ids;
  for (const Var& x : xs) {
    require_same_tape(xs.front(), x, "sum_list");
    require_same_shape(xs.front(), x, "sum_list");
    add_into(out, x.value());
    ids.push_back(x.id());
  }
  return xs.front().tape()->record(std::move(out), xs, [ids](Tape& t, const Tensor& g) {
    for (int id : ids) {
      if (t.needs_grad(id)) add_into(t.grad_ref(id), g);
    }
  });
}

Var dot(Var a, Var b) {
  require_same_tape(a, b, "dot");
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
  const int aid = a.id(), bid = b.id();
  return a.tape()->record(Tensor::scalar(s), {a, b}, [aid, bid](Tape& t, const Tensor& g) {
    const double gs = g[0];
    if (t.needs_grad(aid)) {
      Tensor& da = t.grad_ref(aid);
      const Tensor& bv = t.value(bid);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += gs * bv[i];
    }
    if (t.needs_grad(bid)) {
      Tensor& db = t.grad_ref(bid);
      const Tensor& av = t.value(aid);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += gs * av[i];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const int xid = x.id();
  return x.tape()->record(Tensor::scalar(s), {x}, [xid](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_ref(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0];
  });
}

Var concat(Var a, Var b) {
  require_same_tape(a, b, "concat");
  require_rank(a, 1, "concat", "lhs");
  require_rank(b, 1, "concat", "rhs");
  const int na = a.value().dim(0), nb = b.value().dim(0);
  Tensor out({na + nb});
  std::copy_n(a.value().data(), na, out.data());
  std::copy_n(b.value().data(), nb, out.data() + na);
  const int aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(out), {a, b}, [aid, bid, na, nb](Tape& t, const Tensor& g) {
    if (t.needs_grad(aid)) {
      Tensor& da = t.grad_ref(aid);
      for (int i = 0; i < na; ++i) da[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
    }
    if (t.needs_grad(bid)) {
      Tensor& db = t.grad_ref(bid);
      for (int i = 0; i < nb; ++i) {
        db[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(na + i)];
      }
    }
  });
}

Var slice(Var x, int begin, int length) {
  require_rank(x, 1, "slice", "x");
  if (begin < 0 || length <= 0 || begin + length > x.value().dim(0)) {
    shape_fail("slice", "range [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                            ") outside " + shape_str(x.shape()));
  }
  Tensor out({length});
  std::copy_n(x.value().data() + begin, length, out.data());
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [xid, begin, length](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_ref(xid);
    for (int i = 0; i < length; ++i) {
      dx[static_cast<std::size_t>(begin + i)] += g[static_cast<std::size_t>(i)];
    }
  });
}

Var rows(Var x, int begin, int count) {
  require_rank(x, 2, "rows", "x");
  const int n = x.value().dim(0), cols = x.value().dim(1);
  if (begin < 0 || count <= 0 || begin + count > n) {
    shape_fail("rows", "rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                           ") outside " + shape_str(x.shape()));
  }
  Tensor out({count, cols});
  const std::size_t off = static_cast<std::size_t>(begin) * cols;
  std::copy_n(x.value().data() + off, out.size(), out.data());
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [xid, off](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_ref(xid);
    for (std::size_t i = 0; i < g.size(); ++i) dx[off + i] += g[i];
  });
}

Var row(Var x, int i) {
  require_rank(x, 2, "row", "x");
  return reshape(rows(x, i, 1), {x.value().dim(1)});
}

Var sum_rows(Var x) {
  require_rank(x, 2, "sum_rows", "x");
  const int n = x.value().dim(0), cols = x.value().dim(1);
  Tensor out({cols});
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < cols; ++c) {
      out[static_cast<std::size_t>(c)] += x.value()[static_cast<std::size_t>(i) * cols + c];
    }
  }
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [xid, n, cols](Tape& t, const Tensor& g) {
    Tensor& dx = t.grad_ref(xid);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < cols; ++c) {
        dx[static_cast<std::size_t>(i) * cols + c] += g[static_cast<std::size_t>(c)];
      }
    }
  });
}

Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.value().values().begin(), x.value().values().end()));
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x},
                          [xid](Tape& t, const Tensor& g) { add_into(t.grad_ref(xid), g); });
}

Var detach(Var x) { return x.tape()->constant(x.value()); }

Var conv2d_3x3(Var U, Var K) {
  require_same_tape(U, K, "conv2d_3x3");
  const MapDims d = check_map(U, "conv2d_3x3");
  check_kernel(K, d.features, "conv2d_3x3");
  Tensor out = conv_forward(U.value(), d, K.value(), nullptr);
  const int uid = U.id(), kid = K.id();
  return U.tape()->record(std::move(out), {U, K}, [uid, kid, d](Tape& t, const Tensor& g) {
    ConvGrads grads;
    if (t.needs_grad(uid)) grads.dU = &t.grad_ref(uid);
    if (t.needs_grad(kid)) grads.dK = &t.grad_ref(kid);
    conv_backward(t.value(uid), d, t.value(kid), nullptr, g, grads);
  });
}

Var mask_kernel(Var Phi, Var K) {
  require_same_tape(Phi, K, "mask_kernel");
  if (Phi.shape() != Shape{3, 3}) shape_fail("mask_kernel", "mask must be [3 x 3], got " + shape_str(Phi.shape()));
  if (K.value().rank() != 4) shape_fail("mask_kernel", "kernel must be rank 4, got " + shape_str(K.shape()));
  check_kernel(K, K.value().dim(2), "mask_kernel");
  const std::size_t block = K.value().size() / 9;
  Tensor out(K.shape());
  for (std::size_t k = 0; k < 9; ++k) {
    for (std::size_t i = 0; i < block; ++i) out[k * block + i] = Phi.value()[k] * K.value()[k * block + i];
  }
  const int pid = Phi.id(), kid = K.id();
  return Phi.tape()->record(std::move(out), {Phi, K}, [pid, kid, block](Tape& t, const Tensor& g) {
    const Tensor& phi = t.value(pid);
    const Tensor& kv = t.value(kid);
    for (std::size_t k = 0; k < 9; ++k) {
      if (t.needs_grad(kid)) {
        Tensor& dk = t.grad_ref(kid);
        for (std::size_t i = 0; i < block; ++i) dk[k * block + i] += phi[k] * g[k * block + i];
      }
      if (t.needs_grad(pid)) {
        double s = 0.0;
        for (std::size_t i = 0; i < block; ++i) s += g[k * block + i] * kv[k * block + i];
        t.grad_ref(pid)[k] += s;
      }
    }
  });
}

Var masked_conv2d_3x3(Var U, Var Phi, Var K) {
  require_same_tape(U, K, "masked_conv2d_3x3");
  require_same_tape(U, Phi, "masked_conv2d_3x3");
  const MapDims d = check_map(U, "masked_conv2d_3x3");
  check_kernel(K, d.features, "masked_conv2d_3x3");
  if (Phi.shape() != Shape{3, 3}) {
    shape_fail("masked_conv2d_3x3", "mask must be [3 x 3], got " + shape_str(Phi.shape()));
  }
  Tensor out = conv_forward(U.value(), d, K.value(), &Phi.value());
  const int uid = U.id(), pid = Phi.id(), kid = K.id();
  return U.tape()->record(std::move(out), {U, Phi, K}, [uid, pid, kid, d](Tape& t, const Tensor& g) {
    ConvGrads grads;
    if (t.needs_grad(uid)) grads.dU = &t.grad_ref(uid);
    if (t.needs_grad(kid)) grads.dK = &t.grad_ref(kid);
    if (t.needs_grad(pid)) grads.dW = &t.grad_ref(pid);
    conv_backward(t.value(uid), d, t.value(kid), &t.value(pid), g, grads);
  });
}

Var scale_cells(Var U, Var s) {
  require_same_tape(U, s, "scale_cells");
  const MapDims d = check_map(U, "scale_cells");
  require_rank(s, 1, "scale_cells", "s");
  if (s.value().dim(0) != d.features) {
    shape_fail("scale_cells", "map " + shape_str(U.shape()) + " incompatible with s " + shape_str(s.shape()));
  }
  const std::size_t L = static_cast<std::size_t>(d.features);
  Tensor out(U.shape());
  for (std::size_t c = 0; c < static_cast<std::size_t>(d.cells()); ++c) {
    for (std::size_t l = 0; l < L; ++l) out[c * L + l] = U.value()[c * L + l] * s.value()[l];
  }
  const int uid = U.id(), sid = s.id();
  return U.tape()->record(std::move(out), {U, s}, [uid, sid, d, L](Tape& t, const Tensor& g) {
    const std::size_t cells = static_cast<std::size_t>(d.cells());
    if (t.needs_grad(uid)) {
      Tensor& du = t.grad_ref(uid);
      const Tensor& sv = t.value(sid);
      for (std::size_t c = 0; c < cells; ++c) {
        for (std::size_t l = 0; l < L; ++l) du[c * L + l] += g[c * L + l] * sv[l];
      }
    }
    if (t.needs_grad(sid)) {
      Tensor& ds = t.grad_ref(sid);
      const Tensor& uv = t.value(uid);
      for (std::size_t c = 0; c < cells; ++c) {
        for (std::size_t l = 0; l < L; ++l) ds[l] += g[c * L + l] * uv[c * L + l];
      }
    }
  });
}

Var cell_dot(Var U, Var e) {
  require_same_tape(U, e, "cell_dot");
  const MapDims d = check_map(U, "cell_dot");
  require_rank(e, 1, "cell_dot", "e");
  if (e.value().dim(0) != d.features) {
    shape_fail("cell_dot", "map " + shape_str(U.shape()) + " incompatible with e " + shape_str(e.shape()));
  }
  Tensor out({d.cells()});
  VecMap(out.data(), d.cells()) = ConstMatMap(U.value().data(), d.cells(), d.features) *
                                  ConstVecMap(e.value().data(), d.features);
  const int uid = U.id(), eid = e.id();
  return U.tape()->record(std::move(out), {U, e}, [uid, eid, d](Tape& t, const Tensor& g) {
    ConstVecMap gv(g.data(), d.cells());
    if (t.needs_grad(uid)) {
      MatMap(t.grad_ref(uid).data(), d.cells(), d.features).noalias() +=
          gv * ConstVecMap(t.value(eid).data(), d.features).transpose();
    }
    if (t.needs_grad(eid)) {
      VecMap(t.grad_ref(eid).data(), d.features).noalias() +=
          ConstMatMap(t.value(uid).data(), d.cells(), d.features).transpose() * gv;
    }
  });
}

Var cross_entropy(Var p, int target) {
  require_rank(p, 1, "cross_entropy", "p");
  if (target < 0 || target >= p.value().dim(0)) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside " +
                            shape_str(p.shape()));
  }
  const double pt = p.value()[static_cast<std::size_t>(target)];
  const bool clamped = pt < kProbabilityFloor;
  const double loss = -std::log(clamped ? kProbabilityFloor : pt);
  const int pid = p.id();
  return p.tape()->record(Tensor::scalar(loss), {p}, [pid, target, pt, clamped](Tape& t, const Tensor& g) {
    if (clamped) return;
    t.grad_ref(pid)[static_cast<std::size_t>(target)] -= g[0] / pt;
  });
}

Var mse(Var a, Var b) {
  require_same_tape(a, b, "mse");
  require_same_shape(a, b, "mse");
  const std::size_t n = a.value().size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  const int aid = a.id(), bid = b.id();
  return a.tape()->record(Tensor::scalar(s / static_cast<double>(n)), {a, b},
                          [aid, bid, n](Tape& t, const Tensor& g) {
                            const Tensor& av = t.value(aid);
                            const Tensor& bv = t.value(bid);
                            const double c = 2.0 * g[0] / static_cast<double>(n);
                            if (t.needs_grad(aid)) {
                              Tensor& da = t.grad_ref(aid);
                              for (std::size_t i = 0; i < n; ++i) da[i] += c * (av[i] - bv[i]);
                            }
                            if (t.needs_grad(bid)) {
                              Tensor& db = t.grad_ref(bid);
                              for (std::size_t i = 0; i < n; ++i) db[i] -= c * (av[i] - bv[i]);
                            }
                          });
}

Var bernoulli_log_prob(Var logits, const Tensor& bits) {
  if (logits.shape() != bits.shape()) {
    shape_fail("bernoulli_log_prob", "logits " + shape_str(logits.shape()) + " vs bits " + shape_str(bits.shape()));
  }
  double lp = 0.0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const double m = bits[i];
    if (m != 0.0 && m != 1.0) throw std::invalid_argument("bernoulli_log_prob: bits must be 0 or 1");
    const double h = logits.value()[i];
    // log sigmoid(h) = -softplus(-h); log(1 - sigmoid(h)) = -softplus(h)
    lp += m > 0.5 ? -softplus(-h) : -softplus(h);
  }
  const int hid = logits.id();
  return logits.tape()->record(Tensor::scalar(lp), {logits}, [hid, bits](Tape& t, const Tensor& g) {
    const Tensor& h = t.value(hid);
    Tensor& dh = t.grad_ref(hid);
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += g[0] * (bits[i] - stable_sigmoid(h[i]));
  });
}

}  // namespace ttw::diff
