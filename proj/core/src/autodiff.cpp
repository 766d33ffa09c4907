#include "novoseq/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "novoseq/errors.hpp"

namespace novoseq::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != numel(shape_)) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return 1;
  return numel(shape_) / shape_.back();
}

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(const std::string& partition, const std::string& name,
                               Tensor value) {
  auto& part = parts_[partition];
  auto [it, inserted] = part.params.try_emplace(name);
  if (!inserted) throw DataError("duplicate parameter " + partition + "/" + name);
  it->second.value = std::move(value);
  return it->second;
}

Parameter& ParameterStore::get(const std::string& partition, const std::string& name) {
  auto pit = parts_.find(partition);
  if (pit == parts_.end()) throw DataError("unknown partition " + partition);
  auto it = pit->second.params.find(name);
  if (it == pit->second.params.end()) throw DataError("unknown parameter " + partition + "/" + name);
  return it->second;
}

const Parameter& ParameterStore::get(const std::string& partition, const std::string& name) const {
  return const_cast<ParameterStore*>(this)->get(partition, name);
}

bool ParameterStore::contains(const std::string& partition, const std::string& name) const {
  auto pit = parts_.find(partition);
  return pit != parts_.end() && pit->second.params.count(name) != 0;
}

void ParameterStore::set_frozen(const std::string& partition, bool frozen) {
  auto pit = parts_.find(partition);
  if (pit == parts_.end()) throw DataError("unknown partition " + partition);
  pit->second.frozen = frozen;
}

bool ParameterStore::frozen(const std::string& partition) const {
  auto pit = parts_.find(partition);
  if (pit == parts_.end()) throw DataError("unknown partition " + partition);
  return pit->second.frozen;
}

void ParameterStore::zero_grad() {
  for (auto& [pname, part] : parts_) {
    for (auto& [name, p] : part.params) {
      if (part.frozen) {
        p.grad.clear();
      } else {
        p.grad.assign(p.value.size(), 0.0);
      }
    }
  }
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [pname, part] : parts_)
    for (const auto& [name, p] : part.params) n += p.value.size();
  return n;
}

void ParameterStore::for_each(
    const std::function<void(const std::string&, const std::string&, Parameter&)>& fn) {
  for (auto& [pname, part] : parts_)
    for (auto& [name, p] : part.params) fn(pname, name, p);
}

void ParameterStore::for_each(
    const std::function<void(const std::string&, const std::string&, const Parameter&)>& fn)
    const {
  for (const auto& [pname, part] : parts_)
    for (const auto& [name, p] : part.params) fn(pname, name, p);
}

bool ParameterStore::operator==(const ParameterStore& other) const {
  if (parts_.size() != other.parts_.size()) return false;
  for (auto a = parts_.begin(), b = other.parts_.begin(); a != parts_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.params.size() != b->second.params.size()) return false;
    for (auto pa = a->second.params.begin(), pb = b->second.params.begin();
         pa != a->second.params.end(); ++pa, ++pb) {
      if (pa->first != pb->first || !(pa->second.value == pb->second.value)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Graph

const Tensor& Var::value() const { return graph_->value(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Graph::Node& Graph::push(Node node) {
  if (nodes_.size() >= std::numeric_limits<NodeId>::max()) throw Error("graph too large");
  nodes_.push_back(std::move(node));
  return nodes_.back();
}

Var Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  push(std::move(n));
  return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

Var Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  push(std::move(n));
  return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

Var Graph::parameter(Parameter& p, bool requires_grad) {
  Node n;
  n.external = &p.value;
  n.requires_grad = requires_grad;
  if (requires_grad) n.sink = &p;
  push(std::move(n));
  return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

Var Graph::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (const Var& v : inputs) {
    if (&v.graph() != this) throw Error("op mixes nodes from different graphs");
    if (requires_grad(v.id())) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  push(std::move(n));
  return {this, static_cast<NodeId>(nodes_.size() - 1)};
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

const Tensor& Graph::value(NodeId id) const { return nodes_[id].value(); }
bool Graph::requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

double* Graph::grad_sink(NodeId id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.value().size(), 0.0);
  return n.grad.data();
}

std::span<const double> Graph::grad(Var v) const { return nodes_[v.id()].grad; }

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw Error("backward on a node from another graph");
  if (backward_done_) throw Error("backward already ran on this graph");
  const Tensor& lv = loss.value();
  if (lv.size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(lv.shape()));
  if (!std::isfinite(lv[0])) throw NumericError("backward on non-finite loss");
  backward_done_ = true;
  if (!requires_grad(loss.id())) return;
  grad_sink(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.sink) {
      auto& g = n.sink->grad;
      if (g.empty()) g.assign(n.grad.size(), 0.0);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[j];
    }
  }
}

Mask Mask::causal(std::size_t n) {
  Mask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c <= r; ++c) m.allowed[r * n + c] = 1;
  return m;
}

// ---------------------------------------------------------------------------
// Ops

namespace {

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + " expects rank 2, got " + shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// out[m,n] (+)= a[m,k]·b[k,n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m,k] += g[m,n]·b[k,n]ᵀ
void gemm_nt(const double* g, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      out[i * k + p] += acc;
    }
  }
}

// out[k,n] += a[m,k]ᵀ·g[m,n]
void gemm_tn(const double* a, const double* g, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_2d(av, "matmul");
  require_2d(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  Tensor out({m, n});
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return a.graph().record(std::move(out), {a, b}, [a, b, m, k, n](Graph& g, auto dy) {
    if (double* ga = g.grad_sink(a.id())) gemm_nt(dy.data(), b.value().data().data(), ga, m, k, n);
    if (double* gb = g.grad_sink(b.id())) gemm_tn(a.value().data().data(), dy.data(), gb, m, k, n);
  });
}

Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  require_2d(wv, "linear");
  if (xv.rank() < 1 || xv.cols() != wv.rows())
    throw ShapeError("linear: input " + shape_str(xv.shape()) + " incompatible with weight " +
                     shape_str(wv.shape()));
  if (bv.size() != wv.cols())
    throw ShapeError("linear: bias " + shape_str(bv.shape()) + " incompatible with weight " +
                     shape_str(wv.shape()));
  const std::size_t m = xv.rows(), k = xv.cols(), n = wv.cols();
  Shape oshape = xv.shape();
  oshape.back() = n;
  Tensor out(oshape);
  double* o = out.data().data();
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.data().begin(), bv.data().end(), o + i * n);
  gemm_nn(xv.data().data(), wv.data().data(), o, m, k, n);
  return x.graph().record(std::move(out), {x, w, b}, [x, w, b, m, k, n](Graph& g, auto dy) {
    if (double* gx = g.grad_sink(x.id())) gemm_nt(dy.data(), w.value().data().data(), gx, m, k, n);
    if (double* gw = g.grad_sink(w.id())) gemm_tn(x.value().data().data(), dy.data(), gw, m, k, n);
    if (double* gb = g.grad_sink(b.id())) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
    }
  });
}

Var add(Var a, Var b) {
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, auto dy) {
    for (Var v : {a, b})
      if (double* gv = g.grad_sink(v.id()))
        for (std::size_t i = 0; i < dy.size(); ++i) gv[i] += dy[i];
  });
}

Var sub(Var a, Var b) {
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, auto dy) {
    if (double* ga = g.grad_sink(a.id()))
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
    if (double* gb = g.grad_sink(b.id()))
      for (std::size_t i = 0; i < dy.size(); ++i) gb[i] -= dy[i];
  });
}

Var mul(Var a, Var b) {
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, auto dy) {
    const auto ad = a.value().data();
    const auto bd = b.value().data();
    if (double* ga = g.grad_sink(a.id()))
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * bd[i];
    if (double* gb = g.grad_sink(b.id()))
      for (std::size_t i = 0; i < dy.size(); ++i) gb[i] += dy[i] * ad[i];
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& x : out.data()) x *= s;
  return a.graph().record(std::move(out), {a}, [a, s](Graph& g, auto dy) {
    if (double* ga = g.grad_sink(a.id()))
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += s * dy[i];
  });
}

Var add_row(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (bv.size() != n)
    throw ShapeError("add_row: " + shape_str(av.shape()) + " vs row " + shape_str(bv.shape()));
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return a.graph().record(std::move(out), {a, b}, [a, b, m, n](Graph& g, auto dy) {
    if (double* ga = g.grad_sink(a.id()))
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
    if (double* gb = g.grad_sink(b.id()))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
  return a.graph().record(std::move(out), {a}, [a](Graph& g, auto dy) {
    const auto ad = a.value().data();
    if (double* ga = g.grad_sink(a.id()))
      for (std::size_t i = 0; i < dy.size(); ++i)
        if (ad[i] > 0.0) ga[i] += dy[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.graph().record(Tensor::scalar(s), {a}, [a](Graph& g, auto dy) {
    if (double* ga = g.grad_sink(a.id())) {
      const std::size_t n = a.value().size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += dy[0];
    }
  });
}

Var softmax_logprob(Var logits) {
  const Tensor& x = logits.value();
  if (x.rank() < 1 || x.cols() < 1) throw ShapeError("softmax_logprob: empty last dimension");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw NumericError("softmax_logprob: NaN in logits");
      mx = std::max(mx, row[j]);
    }
    if (!std::isfinite(mx)) throw NumericError("softmax_logprob: non-finite row maximum");
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  std::vector<double> lp = out.storage();
  return logits.graph().record(std::move(out), {logits}, [logits, m, n, lp = std::move(lp)](
                                                              Graph& g, auto dy) {
    double* gx = g.grad_sink(logits.id());
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += dy[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += dy[i * n + j] - std::exp(lp[i * n + j]) * s;
    }
  });
}

Var scaled_dot_attention(Var q, Var k, Var v, const Mask* mask) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_2d(qv, "attention q");
  require_2d(kv, "attention k");
  require_2d(vv, "attention v");
  const std::size_t tq = qv.rows(), tk = kv.rows(), d = qv.cols(), dv = vv.cols();
  if (kv.cols() != d)
    throw ShapeError("attention: q " + shape_str(qv.shape()) + " vs k " + shape_str(kv.shape()));
  if (vv.rows() != tk)
    throw ShapeError("attention: k " + shape_str(kv.shape()) + " vs v " + shape_str(vv.shape()));
  if (mask && (mask->rows != tq || mask->cols != tk))
    throw ShapeError("attention: mask shape does not match scores");
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));

  // probs[tq, tk]
  std::vector<double> probs(tq * tk, 0.0);
  std::fill(probs.begin(), probs.end(), 0.0);
  gemm_nt(qv.data().data(), kv.data().data(), probs.data(), tq, tk, d);
  for (std::size_t i = 0; i < tq; ++i) {
    double* row = probs.data() + i * tk;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < tk; ++j) {
      if (mask && !(*mask)(i, j)) {
        row[j] = -std::numeric_limits<double>::infinity();
      } else {
        row[j] *= inv;
        mx = std::max(mx, row[j]);
      }
    }
    if (mx == -std::numeric_limits<double>::infinity())
      throw NumericError("attention: query row " + std::to_string(i) + " has no allowed key");
    if (std::isnan(mx)) throw NumericError("attention: NaN score");
    double s = 0.0;
    for (std::size_t j = 0; j < tk; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (std::size_t j = 0; j < tk; ++j) row[j] /= s;
  }
  Tensor out({tq, dv});
  gemm_nn(probs.data(), vv.data().data(), out.data().data(), tq, tk, dv);

  return q.graph().record(
      std::move(out), {q, k, v},
      [q, k, v, probs = std::move(probs), tq, tk, d, dv, inv](Graph& g, auto dy) {
        if (double* gv = g.grad_sink(v.id())) gemm_tn(probs.data(), dy.data(), gv, tq, tk, dv);
        double* gq = g.grad_sink(q.id());
        double* gk = g.grad_sink(k.id());
        if (!gq && !gk) return;
        // dS = P ∘ (dP − rowsum(P ∘ dP)), dP = dY·vᵀ
        std::vector<double> ds(tq * tk, 0.0);
        gemm_nt(dy.data(), v.value().data().data(), ds.data(), tq, tk, dv);
        for (std::size_t i = 0; i < tq; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < tk; ++j) dot += probs[i * tk + j] * ds[i * tk + j];
          for (std::size_t j = 0; j < tk; ++j)
            ds[i * tk + j] = probs[i * tk + j] * (ds[i * tk + j] - dot) * inv;
        }
        if (gq) gemm_nn(ds.data(), k.value().data().data(), gq, tq, tk, d);
        if (gk) gemm_tn(ds.data(), q.value().data().data(), gk, tq, tk, d);
      });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (n < 1) throw ShapeError("layer_norm: empty rows");
  if (gain.value().size() != n || bias.value().size() != n)
    throw ShapeError("layer_norm: affine parameters do not match " + shape_str(xv.shape()));
  const auto gv = gain.value().data();
  const auto bv = bias.value().data();
  Tensor out(xv.shape());
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mean) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  return x.graph().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](Graph& g,
                                                                                  auto dy) {
        if (double* gg = g.grad_sink(gain.id()))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += dy[i * n + j] * xhat[i * n + j];
        if (double* gb = g.grad_sink(bias.id()))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
        if (double* gx = g.grad_sink(x.id())) {
          const auto gv = gain.value().data();
          const double nn = static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = dy[i * n + j] * gv[j];
              mean_d += dxh;
              mean_dx += dxh * xhat[i * n + j];
            }
            mean_d /= nn;
            mean_dx /= nn;
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = dy[i * n + j] * gv[j];
              gx[i * n + j] += inv_std[i] * (dxh - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
      });
}

Var stop_gradient(Var x) { return x.graph().constant(x.value()); }

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != n)
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    rows += p.rows();
  }
  Tensor out({rows, n});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + off);
    off += p.value().size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].graph().record(std::move(out), parts, [inputs, offsets](Graph& g, auto dy) {
    for (std::size_t p = 0; p < inputs.size(); ++p) {
      if (double* gp = g.grad_sink(inputs[p].id())) {
        const std::size_t len = inputs[p].value().size();
        for (std::size_t i = 0; i < len; ++i) gp[i] += dy[offsets[p] + i];
      }
    }
  });
}

Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.rows() != m)
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    offsets.push_back(cols);
    cols += p.cols();
  }
  Tensor out({m, cols});
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    const std::size_t c = v.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * cols + offsets[p] + j] = v[i * c + j];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].graph().record(std::move(out), parts,
                                 [inputs, offsets, m, cols](Graph& g, auto dy) {
                                   for (std::size_t p = 0; p < inputs.size(); ++p) {
                                     double* gp = g.grad_sink(inputs[p].id());
                                     if (!gp) continue;
                                     const std::size_t c = inputs[p].cols();
                                     for (std::size_t i = 0; i < m; ++i)
                                       for (std::size_t j = 0; j < c; ++j)
                                         gp[i * c + j] += dy[i * cols + offsets[p] + j];
                                   }
                                 });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (begin > end || end > av.rows())
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + shape_str(av.shape()));
  const std::size_t n = av.cols();
  Tensor out({end - begin, n});
  std::copy(av.data().begin() + begin * n, av.data().begin() + end * n, out.data().begin());
  return a.graph().record(std::move(out), {a}, [a, begin, n](Graph& g, auto dy) {
    if (double* ga = g.grad_sink(a.id()))
      for (std::size_t i = 0; i < dy.size(); ++i) ga[begin * n + i] += dy[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (begin > end || end > av.cols())
    throw ShapeError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + shape_str(av.shape()));
  const std::size_t m = av.rows(), n = av.cols(), w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = av[i * n + begin + j];
  return a.graph().record(std::move(out), {a}, [a, begin, m, n, w](Graph& g, auto dy) {
    if (double* ga = g.grad_sink(a.id()))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += dy[i * w + j];
  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  const std::size_t vocab = tv.rows(), n = tv.cols();
  Tensor out({ids.size(), n});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab)
      throw DataError("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                      std::to_string(vocab) + " rows");
    std::copy(tv.data().begin() + ids[r] * n, tv.data().begin() + (ids[r] + 1) * n,
              out.data().begin() + r * n);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return table.graph().record(std::move(out), {table}, [table, idv, n](Graph& g, auto dy) {
    if (double* gt = g.grad_sink(table.id()))
      for (std::size_t r = 0; r < idv.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) gt[idv[r] * n + j] += dy[r * n + j];
  });
}

Var pick(Var a, std::span<const std::size_t> cols) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (cols.size() != m)
    throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for " + std::to_string(m) +
                     " rows");
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r) {
    if (cols[r] >= n) throw DataError("pick: column " + std::to_string(cols[r]) + " out of range");
    out[r] = av[r * n + cols[r]];
  }
  std::vector<std::size_t> cv(cols.begin(), cols.end());
  return a.graph().record(std::move(out), {a}, [a, cv, n](Graph& g, auto dy) {
    if (double* ga = g.grad_sink(a.id()))
      for (std::size_t r = 0; r < cv.size(); ++r) ga[r * n + cv[r]] += dy[r];
  });
}

// ---------------------------------------------------------------------------
// Optimizer

void adamw_step(ParameterStore& params, OptimizerState& state) {
  for (const auto& [pname, part] : params.partitions()) {
    if (part.frozen) continue;
    for (const auto& [name, p] : part.params) {
      if (p.grad.size() != p.value.size())
        throw Error("adamw_step: parameter " + pname + "/" + name + " has no gradient");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [pname, part] : params.partitions()) {
    if (part.frozen) continue;
    for (auto& [name, p] : part.params) {
      auto& mom = state.moments[pname + "/" + name];
      const std::size_t n = p.value.size();
      if (mom.m.size() != n) {
        mom.m.assign(n, 0.0);
        mom.v.assign(n, 0.0);
      }
      auto w = p.value.data();
      for (std::size_t i = 0; i < n; ++i) {
        const double g = p.grad[i];
        mom.m[i] = state.beta1 * mom.m[i] + (1.0 - state.beta1) * g;
        mom.v[i] = state.beta2 * mom.v[i] + (1.0 - state.beta2) * g * g;
        const double mhat = mom.m[i] / bc1;
        const double vhat = mom.v[i] / bc2;
        w[i] -= state.lr * state.weight_decay * w[i];
        w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
      }
      std::fill(p.grad.begin(), p.grad.end(), 0.0);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite differences

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

double finite_diff_check(const GraphFn& f, std::vector<Tensor>& inputs,
                         const FiniteDiffOptions& opts) {
  auto eval = [&](bool with_grad, std::vector<std::vector<double>>* grads) {
    Graph g;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.input(t, with_grad));
    Var loss = f(g, vars);
    if (loss.value().size() != 1) throw ShapeError("finite_diff_check: function is not scalar");
    const double v = loss.value()[0];
    if (with_grad) {
      g.backward(loss);
      for (const Var& x : vars) {
        auto gr = g.grad(x);
        grads->emplace_back(gr.begin(), gr.end());
        if (grads->back().empty()) grads->back().assign(x.value().size(), 0.0);
      }
    }
    return v;
  };

  std::vector<std::vector<double>> analytic;
  eval(true, &analytic);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (k < opts.check.size() && !opts.check[k]) continue;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + opts.eps;
      const double up = eval(false, nullptr);
      inputs[k][i] = orig - opts.eps;
      const double down = eval(false, nullptr);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * opts.eps);
      worst = std::max(worst, rel_err(analytic[k][i], numeric));
    }
  }
  return worst;
}

double finite_diff_check(const std::function<Var(Graph&)>& f, ParameterStore& params,
                         double eps) {
  params.zero_grad();
  {
    Graph g;
    Var loss = f(g);
    g.backward(loss);
  }
  double worst = 0.0;
  auto value_of = [&] {
    Graph g;
    return f(g).value()[0];
  };
  for (auto& [pname, part] : params.partitions()) {
    if (part.frozen) continue;
    for (auto& [name, p] : part.params) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double orig = p.value[i];
        p.value[i] = orig + eps;
        const double up = value_of();
        p.value[i] = orig - eps;
        const double down = value_of();
        p.value[i] = orig;
        worst = std::max(worst, rel_err(p.grad[i], (up - down) / (2.0 * eps)));
      }
    }
  }
  params.zero_grad();
  return worst;
}

}  // namespace novoseq::ad
