#include "advpicker/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "advpicker/error.hpp"
#include "advpicker/kernels.hpp"

namespace advpicker {

using detail::Node;

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad) {
  return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Matrix::Constant(1, 1, v), requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

std::string Tensor::shape_string() const {
  if (!node_) return "(undefined)";
  std::ostringstream os;
  os << '(' << rows() << ", " << cols() << ')';
  return os.str();
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on tensor of shape " + shape_string());
  return node_->value(0, 0);
}

Matrix Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return Matrix::Zero(rows(), cols());
}

namespace {

void accumulate(Node& target, const Matrix& g) {
  if (!target.requires_grad) return;
  if (target.grad.size() == 0) {
    target.grad = g;
  } else {
    target.grad += g;
  }
}

Tensor make_result(Matrix value, std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->leaf = false;
  node->requires_grad = std::any_of(parents.begin(), parents.end(),
                                    [](const auto& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return Tensor::from_node(std::move(node));
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

constexpr double kProbFloor = 1e-12;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows()) shape_mismatch("matmul", a, b);
  auto na = a.node();
  auto nb = b.node();
  return make_result(na->value * nb->value, {na, nb}, [na, nb](Node& self) {
    if (na->requires_grad) accumulate(*na, self.grad * nb->value.transpose());
    if (nb->requires_grad) accumulate(*nb, na->value.transpose() * self.grad);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_mismatch("add", a, b);
  auto na = a.node();
  auto nb = b.node();
  return make_result(na->value + nb->value, {na, nb}, [na, nb](Node& self) {
    accumulate(*na, self.grad);
    accumulate(*nb, self.grad);
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  if (bias.rows() != 1 || bias.cols() != x.cols()) shape_mismatch("add_bias", x, bias);
  auto nx = x.node();
  auto nb = bias.node();
  Matrix out = nx->value.rowwise() + nb->value.row(0);
  return make_result(std::move(out), {nx, nb}, [nx, nb](Node& self) {
    accumulate(*nx, self.grad);
    if (nb->requires_grad) accumulate(*nb, self.grad.colwise().sum());
  });
}

Tensor scale(const Tensor& x, double factor) {
  require_defined(x, "scale");
  auto nx = x.node();
  return make_result(nx->value * factor, {nx},
                     [nx, factor](Node& self) { accumulate(*nx, self.grad * factor); });
}

Tensor relu(const Tensor& x) {
  require_defined(x, "relu");
  auto nx = x.node();
  return make_result(kernels::relu(nx->value), {nx}, [nx](Node& self) {
    Matrix mask = (nx->value.array() > 0.0).cast<double>();
    accumulate(*nx, self.grad.cwiseProduct(mask));
  });
}

Tensor sigmoid(const Tensor& x) {
  require_defined(x, "sigmoid");
  auto nx = x.node();
  return make_result(kernels::sigmoid(nx->value), {nx}, [nx](Node& self) {
    const auto& y = self.value;
    accumulate(*nx, (self.grad.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Tensor softmax(const Tensor& x) {
  require_defined(x, "softmax");
  auto nx = x.node();
  return make_result(kernels::softmax_rows(nx->value), {nx}, [nx](Node& self) {
    const auto& y = self.value;
    Vector dot = (self.grad.cwiseProduct(y)).rowwise().sum();
    Matrix dx = y.cwiseProduct(self.grad.colwise() - dot);
    accumulate(*nx, dx);
  });
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  require_defined(top, "concat_rows");
  require_defined(bottom, "concat_rows");
  if (top.cols() != bottom.cols()) shape_mismatch("concat_rows", top, bottom);
  auto nt = top.node();
  auto nb = bottom.node();
  Matrix out(nt->value.rows() + nb->value.rows(), nt->value.cols());
  out << nt->value, nb->value;
  return make_result(std::move(out), {nt, nb}, [nt, nb](Node& self) {
    const auto split = nt->value.rows();
    accumulate(*nt, self.grad.topRows(split));
    accumulate(*nb, self.grad.bottomRows(self.grad.rows() - split));
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> indices) {
  require_defined(table, "gather_rows");
  auto nt = table.node();
  const auto n = static_cast<Eigen::Index>(indices.size());
  Matrix out(n, nt->value.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = indices[static_cast<std::size_t>(i)];
    if (idx < 0 || idx >= nt->value.rows()) {
      throw IndexError("gather_rows: index " + std::to_string(idx) + " out of range for " +
                       std::to_string(nt->value.rows()) + " rows");
    }
    out.row(i) = nt->value.row(idx);
  }
  std::vector<std::int32_t> idx(indices.begin(), indices.end());
  return make_result(std::move(out), {nt}, [nt, idx = std::move(idx)](Node& self) {
    if (!nt->requires_grad) return;
    if (nt->grad.size() == 0) nt->grad = Matrix::Zero(nt->value.rows(), nt->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      nt->grad.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

Tensor window_mean(const Tensor& x, std::span<const std::size_t> lengths, int from, int to) {
  require_defined(x, "window_mean");
  std::size_t total = 0;
  for (auto len : lengths) total += len;
  if (static_cast<Eigen::Index>(total) != x.rows()) {
    throw ShapeError("window_mean: segment lengths sum to " + std::to_string(total) +
                     " but input has shape " + x.shape_string());
  }
  // (row, lo, hi) with an inclusive window; lo > hi marks an empty window
  struct Window {
    Eigen::Index lo, hi;
  };
  std::vector<Window> windows(total);
  Eigen::Index start = 0;
  for (auto len : lengths) {
    const auto n = static_cast<Eigen::Index>(len);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index lo = std::max<Eigen::Index>(0, i + from);
      const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + to);
      windows[static_cast<std::size_t>(start + i)] = {start + lo, start + hi};
    }
    start += n;
  }
  auto nx = x.node();
  Matrix out = Matrix::Zero(nx->value.rows(), nx->value.cols());
  for (std::size_t r = 0; r < windows.size(); ++r) {
    const auto [lo, hi] = windows[r];
    if (lo > hi) continue;
    out.row(static_cast<Eigen::Index>(r)) =
        nx->value.middleRows(lo, hi - lo + 1).colwise().sum() / static_cast<double>(hi - lo + 1);
  }
  return make_result(std::move(out), {nx}, [nx, windows = std::move(windows)](Node& self) {
    Matrix dx = Matrix::Zero(nx->value.rows(), nx->value.cols());
    for (std::size_t r = 0; r < windows.size(); ++r) {
      const auto [lo, hi] = windows[r];
      if (lo > hi) continue;
      const double inv = 1.0 / static_cast<double>(hi - lo + 1);
      for (Eigen::Index j = lo; j <= hi; ++j) dx.row(j) += inv * self.grad.row(static_cast<Eigen::Index>(r));
    }
    accumulate(*nx, dx);
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_defined(a, "mse");
  require_defined(b, "mse");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_mismatch("mse", a, b);
  if (a.rows() == 0) throw ShapeError("mse: empty input");
  auto na = a.node();
  auto nb = b.node();
  const double inv_rows = 1.0 / static_cast<double>(a.rows());
  Matrix diff = na->value - nb->value;
  const double loss = diff.squaredNorm() * inv_rows;
  return make_result(Matrix::Constant(1, 1, loss), {na, nb},
                     [na, nb, diff = std::move(diff), inv_rows](Node& self) {
                       const Matrix g = (2.0 * inv_rows * self.grad(0, 0)) * diff;
                       accumulate(*na, g);
                       if (nb->requires_grad) accumulate(*nb, -g);
                     });
}

Tensor nll(const Tensor& probs, std::span<const int> targets) {
  require_defined(probs, "nll");
  if (static_cast<Eigen::Index>(targets.size()) != probs.rows() || probs.rows() == 0) {
    throw ShapeError("nll: " + std::to_string(targets.size()) + " targets for probabilities of shape " +
                     probs.shape_string());
  }
  auto np = probs.node();
  const double inv_n = 1.0 / static_cast<double>(targets.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int t = targets[i];
    if (t < 0 || t >= probs.cols()) throw ShapeError("nll: target index " + std::to_string(t) + " out of range");
    loss -= std::log(std::max(np->value(static_cast<Eigen::Index>(i), t), kProbFloor));
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result(Matrix::Constant(1, 1, loss * inv_n), {np},
                     [np, tgt = std::move(tgt), inv_n](Node& self) {
                       Matrix g = Matrix::Zero(np->value.rows(), np->value.cols());
                       for (std::size_t i = 0; i < tgt.size(); ++i) {
                         const auto r = static_cast<Eigen::Index>(i);
                         g(r, tgt[i]) = -inv_n * self.grad(0, 0) / std::max(np->value(r, tgt[i]), kProbFloor);
                       }
                       accumulate(*np, g);
                     });
}

Tensor bce(const Tensor& p, std::span<const double> targets) {
  require_defined(p, "bce");
  if (p.cols() != 1 || static_cast<Eigen::Index>(targets.size()) != p.rows() || p.rows() == 0) {
    throw ShapeError("bce: " + std::to_string(targets.size()) + " targets for probabilities of shape " +
                     p.shape_string());
  }
  auto np = p.node();
  const double inv_n = 1.0 / static_cast<double>(targets.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double q = std::clamp(np->value(static_cast<Eigen::Index>(i), 0), kProbFloor, 1.0 - kProbFloor);
    const double y = targets[i];
    loss -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  }
  std::vector<double> tgt(targets.begin(), targets.end());
  return make_result(Matrix::Constant(1, 1, loss * inv_n), {np},
                     [np, tgt = std::move(tgt), inv_n](Node& self) {
                       Matrix g(np->value.rows(), 1);
                       for (std::size_t i = 0; i < tgt.size(); ++i) {
                         const auto r = static_cast<Eigen::Index>(i);
                         const double q = std::clamp(np->value(r, 0), kProbFloor, 1.0 - kProbFloor);
                         g(r, 0) = -inv_n * self.grad(0, 0) * (tgt[i] / q - (1.0 - tgt[i]) / (1.0 - q));
                       }
                       accumulate(*np, g);
                     });
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw NonScalarLoss("backward: loss must be scalar, got shape " + loss.shape_string());
  }
  auto root = loss.node();
  if (!root->requires_grad) return;

  // iterative post-order DFS over nodes that carry gradient
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (Node* n : order) {
    if (!n->leaf) n->grad.resize(0, 0);
  }
  accumulate(*root, Matrix::Constant(1, 1, 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() > 0) n->backward(*n);
  }
}

// --- ParamStore ----------------------------------------------------------------

ParamStore::ParamStore(std::uint64_t seed) : seed_(seed), rng_(seed) {}

ParamStore::ParamStore(const ParamStore& other) : seed_(other.seed_), rng_(other.rng_) {
  for (const auto& [comp, params] : other.params_) {
    for (const auto& [name, t] : params) params_[comp][name] = Tensor(t.value(), t.requires_grad());
  }
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this != &other) {
    ParamStore copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Tensor& ParamStore::add(const std::string& component, const std::string& name, Matrix init) {
  auto& comp = params_[component];
  if (comp.contains(name)) throw ConfigError("parameter " + component + "/" + name + " already exists");
  return comp.emplace(name, Tensor(std::move(init), true)).first->second;
}

Tensor& ParamStore::add_uniform(const std::string& component, const std::string& name, Eigen::Index rows,
                                Eigen::Index cols, double limit) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  // fill row-major so the draw order does not depend on storage order
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng_);
  }
  return add(component, name, std::move(m));
}

Tensor& ParamStore::add_zeros(const std::string& component, const std::string& name, Eigen::Index rows,
                              Eigen::Index cols) {
  return add(component, name, Matrix::Zero(rows, cols));
}

bool ParamStore::contains(const std::string& component, const std::string& name) const {
  auto it = params_.find(component);
  return it != params_.end() && it->second.contains(name);
}

const Tensor& ParamStore::get(const std::string& component, const std::string& name) const {
  const auto& comp = this->component(component);
  auto it = comp.find(name);
  if (it == comp.end()) throw ConfigError("unknown parameter " + component + "/" + name);
  return it->second;
}

Tensor& ParamStore::get(const std::string& component, const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(component, name));
}

const ParamStore::Component& ParamStore::component(const std::string& component) const {
  auto it = params_.find(component);
  if (it == params_.end()) throw ConfigError("unknown parameter component " + component);
  return it->second;
}

ParamStore::Component& ParamStore::component(const std::string& component) {
  return const_cast<Component&>(std::as_const(*this).component(component));
}

std::vector<std::string> ParamStore::components() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [_, comp] : params_) {
    for (auto& [__, t] : comp) t.zero_grad();
  }
}

void ParamStore::zero_grad(const std::string& component) {
  for (auto& [_, t] : params_.at(component)) t.zero_grad();
}

void ParamStore::set_trainable(const std::string& component, bool on) {
  auto it = params_.find(component);
  if (it == params_.end()) throw ConfigError("unknown parameter component " + component);
  for (auto& [_, t] : it->second) t.set_requires_grad(on);
}

void ParamStore::assign_values(const ParamStore& other) {
  for (auto& [comp, params] : params_) {
    for (auto& [name, t] : params) {
      const auto& src = other.get(comp, name);
      if (src.rows() != t.rows() || src.cols() != t.cols()) {
        throw ShapeError("assign_values: shape mismatch for " + comp + "/" + name);
      }
      t.mutable_value() = src.value();
    }
  }
}

FreezeGuard::FreezeGuard(ParamStore& store, std::vector<std::string> components)
    : store_(store), components_(std::move(components)) {
  for (const auto& c : components_) store_.set_trainable(c, false);
}

FreezeGuard::~FreezeGuard() {
  for (const auto& c : components_) store_.set_trainable(c, true);
}

// --- AdamW -----------------------------------------------------------------------

AdamW::AdamW(std::vector<std::string> components, AdamWOptions options)
    : components_(std::move(components)), options_(options) {
  if (!(options_.lr >= 0.0)) throw ConfigError("AdamW: learning rate must be non-negative");
}

void AdamW::step(ParamStore& store) {
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const auto& comp : components_) {
    for (const auto& [name, param] : store.component(comp)) {
      if (!param.has_grad()) throw MissingGrad("AdamW: no gradient for " + comp + "/" + name);
    }
  }
  for (const auto& comp : components_) {
    for (auto& [name, param] : store.component(comp)) {
      const Matrix g = param.grad();
      auto [it, inserted] = state_.try_emplace(comp + "/" + name);
      auto& st = it->second;
      if (inserted) {
        st.m = Matrix::Zero(g.rows(), g.cols());
        st.v = Matrix::Zero(g.rows(), g.cols());
      }
      st.m = b1 * st.m + (1.0 - b1) * g;
      st.v = b2 * st.v + (1.0 - b2) * g.cwiseAbs2();
      Matrix& p = param.mutable_value();
      p *= 1.0 - options_.lr * options_.weight_decay;
      p.array() -= options_.lr * (st.m.array() / correction1) /
                   ((st.v.array() / correction2).sqrt() + options_.eps);
      param.zero_grad();
    }
  }
}

}  // namespace advpicker
