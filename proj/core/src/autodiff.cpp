#include "seqret/diff/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "seqret/errors.hpp"

namespace seqret::diff {

namespace {

thread_local bool g_recording = true;
// Nodes with a path to some gradient target while a backward pass runs.
thread_local const std::unordered_set<const Node*>* g_active = nullptr;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }
MutMap as_matrix(Tensor& t) { return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }

class RecordingScope {
 public:
  explicit RecordingScope(bool on) : previous_(g_recording) { g_recording = on; }
  ~RecordingScope() { g_recording = previous_; }
  RecordingScope(const RecordingScope&) = delete;
  RecordingScope& operator=(const RecordingScope&) = delete;

 private:
  bool previous_;
};

Var make(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by primitive '") + op + "'");
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_recording) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    node->requires_grad = true;
  }
  return Var(std::move(node));
}

const Var& input(const Var& self, std::size_t i) { return self.node()->inputs[i]; }
bool need(const Var& self, std::size_t i) {
  const Var& in = self.node()->inputs[i];
  return in.requires_grad() && (g_active == nullptr || g_active->count(in.node()) != 0);
}

class ActiveScope {
 public:
  explicit ActiveScope(const std::unordered_set<const Node*>* set) : previous_(g_active) { g_active = set; }
  ~ActiveScope() { g_active = previous_; }
  ActiveScope(const ActiveScope&) = delete;
  ActiveScope& operator=(const ActiveScope&) = delete;

 private:
  const std::unordered_set<const Node*>* previous_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string("shape mismatch in '") + op + "': " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

template <class F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor zip_values(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

double softplus_value(double x) {
  // log(1 + e^x) without overflow
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

bool recording() noexcept { return g_recording; }

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

Var Var::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("non-finite value in leaf tensor");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Var Var::constant(Tensor value) { return leaf(std::move(value), false); }

Var Var::scalar(double v) { return constant(Tensor::scalar(v)); }

const Tensor& Var::value() const { return node_->value; }

double Var::item() const {
  if (value().numel() != 1) throw DimensionError("item() on a non-scalar node");
  return value()[0];
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

const char* Var::op() const { return node_ ? node_->op : "undefined"; }

// --- gradient driver --------------------------------------------------------

std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph) {
  if (output.value().numel() != 1) throw DimensionError("grad() requires a scalar output");

  std::vector<Var> order;
  if (output.requires_grad()) {
    std::unordered_set<const Node*> visited;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
    stack.emplace_back(output.shared(), 0);
    visited.insert(output.node());
    while (!stack.empty()) {
      const std::size_t top = stack.size() - 1;
      Node* n = stack[top].first.get();
      if (stack[top].second < n->inputs.size()) {
        const Var child = n->inputs[stack[top].second++];
        if (child.requires_grad() && visited.insert(child.node()).second) {
          stack.emplace_back(child.shared(), 0);
        }
      } else {
        order.emplace_back(std::move(stack[top].first));
        stack.pop_back();
      }
    }
  }

  // Post-order visits inputs first, so one forward sweep finds every node
  // that leads to a target; the rest of the graph is skipped.
  std::unordered_set<const Node*> active;
  for (const Var& w : wrt) {
    if (w.defined()) active.insert(w.node());
  }
  for (const Var& v : order) {
    for (const Var& in : v.node()->inputs) {
      if (active.count(in.node())) {
        active.insert(v.node());
        break;
      }
    }
  }

  std::unordered_map<const Node*, Var> grads;
  {
    RecordingScope scope(create_graph);
    ActiveScope active_scope(&active);
    if (!order.empty()) grads.emplace(output.node(), Var::constant(Tensor::scalar(1.0)));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Node* n = it->node();
      if (!n->backward || !active.count(n)) continue;
      const auto found = grads.find(n);
      if (found == grads.end()) continue;
      const Var g = found->second;
      std::vector<Var> in_grads = n->backward(*it, g);
      for (std::size_t i = 0; i < in_grads.size(); ++i) {
        if (!in_grads[i].defined()) continue;
        const Var& in = n->inputs[i];
        if (!in.requires_grad() || !active.count(in.node())) continue;
        auto [slot, inserted] = grads.try_emplace(in.node(), in_grads[i]);
        if (!inserted) slot->second = add(slot->second, in_grads[i]);
      }
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    const auto found = grads.find(w.node());
    if (found != grads.end()) {
      result.push_back(found->second);
    } else {
      result.push_back(Var::constant(Tensor::matrix(w.rows(), w.cols())));
    }
  }
  return result;
}

// --- elementwise binary -----------------------------------------------------

Var add(const Var& a, const Var& b) {
  return make("add", zip_values(a.value(), b.value(), "add", [](double x, double y) { return x + y; }), {a, b},
              [](const Var& self, const Var& g) -> std::vector<Var> {
                return {need(self, 0) ? g : Var(), need(self, 1) ? g : Var()};
              });
}

Var sub(const Var& a, const Var& b) {
  return make("sub", zip_values(a.value(), b.value(), "sub", [](double x, double y) { return x - y; }), {a, b},
              [](const Var& self, const Var& g) -> std::vector<Var> {
                return {need(self, 0) ? g : Var(), need(self, 1) ? neg(g) : Var()};
              });
}

Var mul(const Var& a, const Var& b) {
  return make("mul", zip_values(a.value(), b.value(), "mul", [](double x, double y) { return x * y; }), {a, b},
              [](const Var& self, const Var& g) -> std::vector<Var> {
                return {need(self, 0) ? mul(g, input(self, 1)) : Var(), need(self, 1) ? mul(g, input(self, 0)) : Var()};
              });
}

Var div(const Var& a, const Var& b) {
  return make("div", zip_values(a.value(), b.value(), "div", [](double x, double y) { return x / y; }), {a, b},
              [](const Var& self, const Var& g) -> std::vector<Var> {
                const Var& b = input(self, 1);
                return {need(self, 0) ? div(g, b) : Var(), need(self, 1) ? neg(div(mul(g, self), b)) : Var()};
              });
}

Var neg(const Var& a) {
  return make("neg", map_values(a.value(), [](double x) { return -x; }), {a},
              [](const Var&, const Var& g) -> std::vector<Var> { return {neg(g)}; });
}

Var scale(const Var& a, double c) {
  return make("scale", map_values(a.value(), [c](double x) { return c * x; }), {a},
              [c](const Var&, const Var& g) -> std::vector<Var> { return {scale(g, c)}; });
}

Var add_scalar(const Var& a, double c) {
  return make("add_scalar", map_values(a.value(), [c](double x) { return x + c; }), {a},
              [](const Var&, const Var& g) -> std::vector<Var> { return {g}; });
}

// --- linear algebra ---------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) {
    throw DimensionError("matmul inner dimensions differ: " + std::to_string(x.cols()) + " vs " + std::to_string(y.rows()));
  }
  Tensor out = Tensor::matrix(x.rows(), y.cols());
  as_matrix(out).noalias() = as_matrix(x) * as_matrix(y);
  return make("matmul", std::move(out), {a, b}, [](const Var& self, const Var& g) -> std::vector<Var> {
    return {need(self, 0) ? matmul(g, transpose(input(self, 1))) : Var(),
            need(self, 1) ? matmul(transpose(input(self, 0)), g) : Var()};
  });
}

Var transpose(const Var& a) {
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(x.cols(), x.rows());
  as_matrix(out) = as_matrix(x).transpose();
  return make("transpose", std::move(out), {a},
              [](const Var&, const Var& g) -> std::vector<Var> { return {transpose(g)}; });
}

// --- elementwise unary --------------------------------------------------------

Var exp(const Var& a) {
  return make("exp", map_values(a.value(), [](double x) { return std::exp(x); }), {a},
              [](const Var& self, const Var& g) -> std::vector<Var> { return {mul(g, self)}; });
}

Var log(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw NumericError("non-finite value produced by primitive 'log' (argument <= 0)");
  }
  return make("log", map_values(a.value(), [](double x) { return std::log(x); }), {a},
              [](const Var& self, const Var& g) -> std::vector<Var> { return {div(g, input(self, 0))}; });
}

Var tanh(const Var& a) {
  return make("tanh", map_values(a.value(), [](double x) { return std::tanh(x); }), {a},
              [](const Var& self, const Var& g) -> std::vector<Var> {
                return {mul(g, add_scalar(neg(square(self)), 1.0))};
              });
}

Var sigmoid(const Var& a) {
  return make("sigmoid", map_values(a.value(), sigmoid_value), {a},
              [](const Var& self, const Var& g) -> std::vector<Var> {
                return {mul(g, mul(self, add_scalar(neg(self), 1.0)))};
              });
}

Var softplus(const Var& a) {
  return make("softplus", map_values(a.value(), softplus_value), {a},
              [](const Var& self, const Var& g) -> std::vector<Var> { return {mul(g, sigmoid(input(self, 0)))}; });
}

Var relu(const Var& a) {
  return make("relu", map_values(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), {a},
              [](const Var& self, const Var& g) -> std::vector<Var> {
                Tensor step = map_values(input(self, 0).value(), [](double x) { return x > 0.0 ? 1.0 : 0.0; });
                return {mul(g, Var::constant(std::move(step)))};
              });
}

Var abs(const Var& a) {
  return make("abs", map_values(a.value(), [](double x) { return std::abs(x); }), {a},
              [](const Var& self, const Var& g) -> std::vector<Var> {
                Tensor sign = map_values(input(self, 0).value(), [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
                return {mul(g, Var::constant(std::move(sign)))};
              });
}

Var sqrt(const Var& a) {
  return make("sqrt", map_values(a.value(), [](double x) { return std::sqrt(x); }), {a},
              [](const Var& self, const Var& g) -> std::vector<Var> { return {scale(div(g, self), 0.5)}; });
}

Var square(const Var& a) {
  return make("square", map_values(a.value(), [](double x) { return x * x; }), {a},
              [](const Var& self, const Var& g) -> std::vector<Var> { return {scale(mul(g, input(self, 0)), 2.0)}; });
}

Var pow(const Var& a, double p) {
  return make("pow", map_values(a.value(), [p](double x) { return std::pow(x, p); }), {a},
              [p](const Var& self, const Var& g) -> std::vector<Var> {
                return {mul(g, scale(pow(input(self, 0), p - 1.0), p))};
              });
}

// --- reductions and broadcasts ------------------------------------------------

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make("sum", Tensor::scalar(total), {a}, [](const Var& self, const Var& g) -> std::vector<Var> {
    const Var& x = input(self, 0);
    return {broadcast_scalar(g, x.rows(), x.cols())};
  });
}

Var row_sum(const Var& a) {
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(x.rows(), 1);
  as_matrix(out) = as_matrix(x).rowwise().sum();
  return make("row_sum", std::move(out), {a}, [](const Var& self, const Var& g) -> std::vector<Var> {
    return {broadcast_cols(g, input(self, 0).cols())};
  });
}

Var col_sum(const Var& a) {
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(1, x.cols());
  as_matrix(out) = as_matrix(x).colwise().sum();
  return make("col_sum", std::move(out), {a}, [](const Var& self, const Var& g) -> std::vector<Var> {
    return {broadcast_rows(g, input(self, 0).rows())};
  });
}

Var broadcast_rows(const Var& row, std::size_t n) {
  const Tensor& x = row.value();
  if (x.rows() != 1) throw DimensionError("broadcast_rows expects a 1 x m input");
  Tensor out = Tensor::matrix(n, x.cols());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x[j];
  }
  return make("broadcast_rows", std::move(out), {row},
              [](const Var&, const Var& g) -> std::vector<Var> { return {col_sum(g)}; });
}

Var broadcast_cols(const Var& col, std::size_t m) {
  const Tensor& x = col.value();
  if (x.cols() != 1) throw DimensionError("broadcast_cols expects an n x 1 input");
  Tensor out = Tensor::matrix(x.rows(), m);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < m; ++j) out(i, j) = x[i];
  }
  return make("broadcast_cols", std::move(out), {col},
              [](const Var&, const Var& g) -> std::vector<Var> { return {row_sum(g)}; });
}

Var broadcast_scalar(const Var& s, std::size_t n, std::size_t m) {
  if (s.value().numel() != 1) throw DimensionError("broadcast_scalar expects a 1 x 1 input");
  return make("broadcast_scalar", Tensor::matrix(n, m, s.value()[0]), {s},
              [](const Var&, const Var& g) -> std::vector<Var> { return {sum(g)}; });
}

// --- indexing ------------------------------------------------------------------

Var gather_rows(const Var& table, std::vector<std::size_t> index) {
  const Tensor& t = table.value();
  Tensor out = Tensor::matrix(index.size(), t.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= t.rows()) throw DimensionError("gather_rows index out of range");
    for (std::size_t j = 0; j < t.cols(); ++j) out(i, j) = t(index[i], j);
  }
  return make("gather_rows", std::move(out), {table},
              [index = std::move(index)](const Var& self, const Var& g) -> std::vector<Var> {
                return {scatter_rows(g, index, input(self, 0).rows())};
              });
}

Var scatter_rows(const Var& src, std::vector<std::size_t> index, std::size_t rows) {
  const Tensor& s = src.value();
  if (s.rows() != index.size()) throw DimensionError("scatter_rows index length mismatch");
  Tensor out = Tensor::matrix(rows, s.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) throw DimensionError("scatter_rows index out of range");
    for (std::size_t j = 0; j < s.cols(); ++j) out(index[i], j) += s(i, j);
  }
  return make("scatter_rows", std::move(out), {src},
              [index = std::move(index)](const Var&, const Var& g) -> std::vector<Var> { return {gather_rows(g, index)}; });
}

Var slice_rows(const Var& a, std::size_t start, std::size_t len) {
  const Tensor& x = a.value();
  if (start + len > x.rows()) throw DimensionError("slice_rows out of range");
  Tensor out = Tensor::matrix(len, x.cols());
  std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(start * x.cols()),
            x.data().begin() + static_cast<std::ptrdiff_t>((start + len) * x.cols()), out.data().begin());
  return make("slice_rows", std::move(out), {a}, [start](const Var& self, const Var& g) -> std::vector<Var> {
    return {pad_rows(g, start, input(self, 0).rows())};
  });
}

Var pad_rows(const Var& a, std::size_t start, std::size_t total) {
  const Tensor& x = a.value();
  if (start + x.rows() > total) throw DimensionError("pad_rows out of range");
  Tensor out = Tensor::matrix(total, x.cols());
  std::copy(x.data().begin(), x.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * x.cols()));
  return make("pad_rows", std::move(out), {a}, [start](const Var& self, const Var& g) -> std::vector<Var> {
    return {slice_rows(g, start, input(self, 0).rows())};
  });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t len) {
  const Tensor& x = a.value();
  if (start + len > x.cols()) throw DimensionError("slice_cols out of range");
  Tensor out = Tensor::matrix(x.rows(), len);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < len; ++j) out(i, j) = x(i, start + j);
  }
  return make("slice_cols", std::move(out), {a}, [start](const Var& self, const Var& g) -> std::vector<Var> {
    return {pad_cols(g, start, input(self, 0).cols())};
  });
}

Var pad_cols(const Var& a, std::size_t start, std::size_t total) {
  const Tensor& x = a.value();
  if (start + x.cols() > total) throw DimensionError("pad_cols out of range");
  Tensor out = Tensor::matrix(x.rows(), total);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, start + j) = x(i, j);
  }
  return make("pad_cols", std::move(out), {a}, [start](const Var& self, const Var& g) -> std::vector<Var> {
    return {slice_cols(g, start, input(self, 0).cols())};
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  widths.reserve(parts.size());
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols row mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out = Tensor::matrix(rows, total);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& x = p.value();
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, offset + j) = x(i, j);
    }
    offset += x.cols();
  }
  return make("concat_cols", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
              [widths = std::move(widths)](const Var& self, const Var& g) -> std::vector<Var> {
                std::vector<Var> out;
                out.reserve(widths.size());
                std::size_t off = 0;
                for (std::size_t i = 0; i < widths.size(); ++i) {
                  out.push_back(need(self, i) ? slice_cols(g, off, widths[i]) : Var());
                  off += widths[i];
                }
                return out;
              });
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  Tensor out = a.value().reshaped({rows, cols});
  return make("reshape", std::move(out), {a}, [](const Var& self, const Var& g) -> std::vector<Var> {
    const Var& x = input(self, 0);
    return {reshape(g, x.rows(), x.cols())};
  });
}

// --- softmax ---------------------------------------------------------------------

Var softmax_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= z;
  }
  return make("softmax_rows", std::move(out), {a}, [](const Var& self, const Var& g) -> std::vector<Var> {
    const Var inner = broadcast_cols(row_sum(mul(g, self)), self.cols());
    return {mul(self, sub(g, inner))};
  });
}

Var log_softmax_rows(const Var& a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) z += std::exp(x(i, j) - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - lz;
  }
  return make("log_softmax_rows", std::move(out), {a}, [](const Var& self, const Var& g) -> std::vector<Var> {
    const Var probs = exp(self);
    return {sub(g, mul(probs, broadcast_cols(row_sum(g), self.cols())))};
  });
}

// --- composites ------------------------------------------------------------------

Var dot(const Var& a, const Var& b) { return sum(mul(a, b)); }

Var add_row(const Var& m, const Var& row) { return add(m, broadcast_rows(row, m.rows())); }

Var mul_row(const Var& m, const Var& row) { return mul(m, broadcast_rows(row, m.rows())); }

Var flatten_concat(std::span<const Var> parts) {
  std::vector<Var> flat;
  flat.reserve(parts.size());
  for (const Var& p : parts) flat.push_back(reshape(p, 1, p.value().numel()));
  return concat_cols(flat);
}

Var dropout(const Var& a, double p, std::uint64_t seed) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw ConfigError("dropout rate must be < 1");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(a.value().shape());
  const double kept = 1.0 / (1.0 - p);
  for (double& m : mask.data()) m = keep(rng) ? kept : 0.0;
  return mul(a, Var::constant(std::move(mask)));
}

}  // namespace seqret::diff
