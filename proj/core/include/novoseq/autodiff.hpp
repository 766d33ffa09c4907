#pragma once

// Minimal define-by-run reverse-mode differentiation over float64 arrays.
//
// A Graph is built fresh for every forward pass. Nodes are appended in
// evaluation order, so the node list is already topologically sorted and
// backward() is a single reverse sweep. Parameters live outside the graph in
// a ParameterStore; parameter nodes reference them without copying and push
// their gradient into Parameter::grad on backward.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace novoseq::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Row-major dense float64 array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  // 2-D view. Rank-1 tensors read as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct Parameter {
  Tensor value;
  // Empty until gradients are first accumulated or zero_grad() runs.
  std::vector<double> grad;
};

// Named parameters grouped in partitions, each with a frozen flag. Parameter
// names are unique per partition; the full name is "partition/name".
class ParameterStore {
 public:
  struct Partition {
    bool frozen = false;
    std::map<std::string, Parameter> params;
  };

  Parameter& add(const std::string& partition, const std::string& name, Tensor value);
  Parameter& get(const std::string& partition, const std::string& name);
  const Parameter& get(const std::string& partition, const std::string& name) const;
  bool contains(const std::string& partition, const std::string& name) const;

  void set_frozen(const std::string& partition, bool frozen);
  bool frozen(const std::string& partition) const;

  // Unfrozen parameters get a zero-filled gradient, frozen ones none.
  void zero_grad();

  const std::map<std::string, Partition>& partitions() const { return parts_; }
  std::map<std::string, Partition>& partitions() { return parts_; }
  std::size_t parameter_count() const;

  // Visits every parameter in deterministic (partition, name) order.
  void for_each(const std::function<void(const std::string& partition, const std::string& name,
                                         Parameter&)>& fn);
  void for_each(const std::function<void(const std::string& partition, const std::string& name,
                                         const Parameter&)>& fn) const;

  bool operator==(const ParameterStore& other) const;

 private:
  std::map<std::string, Partition> parts_;
};

using NodeId = std::uint32_t;
class Graph;

// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  NodeId id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

class Graph {
 public:
  // Receives the output gradient; pushes contributions via grad_sink().
  using BackwardFn = std::function<void(Graph&, std::span<const double> out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad = true);
  // The node aliases p.value; p must outlive the graph.
  Var parameter(Parameter& p, bool requires_grad);

  // Appends an op node. It requires grad iff any input does; fn is dropped otherwise.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Tensor& value(NodeId id) const;
  bool requires_grad(NodeId id) const;

  // Gradient buffer for node id, allocated on first use. nullptr when the
  // node does not take gradients.
  double* grad_sink(NodeId id);

  // Gradient held by a node after backward(); empty if it received none.
  std::span<const double> grad(Var v) const;

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    bool requires_grad = false;
    std::vector<double> grad;
    BackwardFn backward;
    Parameter* sink = nullptr;

    const Tensor& value() const { return external ? *external : owned; }
  };

  Node& push(Node node);

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// Boolean attention mask, row-major [Tq, Tk]; nonzero = attend allowed.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  static Mask causal(std::size_t n);
  bool operator()(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

// y = x·w + b for x [m, in], w [in, out], b [out].
Var linear(Var x, Var w, Var b);
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// a [m, n] plus row vector b [n] broadcast over rows.
Var add_row(Var a, Var b);
Var relu(Var a);
Var sum(Var a);
// Log-softmax over the last dimension, max-subtracted.
Var softmax_logprob(Var logits);
// softmax(q·kᵀ/√d + mask bias)·v. A row with no allowed key throws NumericError.
Var scaled_dot_attention(Var q, Var k, Var v, const Mask* mask = nullptr);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Forward identity; no gradient reaches x.
Var stop_gradient(Var x);

Var concat_rows(std::span<const Var> parts);
Var concat_rows(std::initializer_list<Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
// Rows of table [V, d] selected by ids.
Var gather_rows(Var table, std::span<const std::size_t> ids);
// Elements a[r, cols[r]] for each row r, as a [rows] vector.
Var pick(Var a, std::span<const std::size_t> cols);

struct OptimizerState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t step = 0;

  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  // Keyed by "partition/name".
  std::map<std::string, Moments> moments;
};

// Decoupled-weight-decay Adam over every unfrozen parameter, then zeroes the
// gradients. Frozen partitions are untouched. Throws if an unfrozen parameter
// has no gradient buffer.
void adamw_step(ParameterStore& params, OptimizerState& state);

struct FiniteDiffOptions {
  double eps = 1e-6;
  // Per-input flag; false skips that input's coordinates.
  std::vector<bool> check;
};

using GraphFn = std::function<Var(Graph&, std::span<const Var>)>;

// Central-difference check of backward() on a scalar function of the given
// inputs. Returns the max relative error |a-b| / max(|a|, |b|, 1e-8).
double finite_diff_check(const GraphFn& f, std::vector<Tensor>& inputs,
                         const FiniteDiffOptions& opts = {});

// Same check over every unfrozen parameter of a store.
double finite_diff_check(const std::function<Var(Graph&)>& f, ParameterStore& params,
                         double eps);

}  // namespace novoseq::ad
