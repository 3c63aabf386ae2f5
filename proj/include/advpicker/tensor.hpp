#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace advpicker {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

}  // namespace detail

/// Dense 2-D tensor handle with reverse-mode gradient tracking. Copies share
/// storage; a 1-D tensor of length n is an n x 1 column.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  std::string shape_string() const;

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() > 0; }
  /// Gradient, or a zero matrix of the value's shape when none has accumulated.
  Matrix grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  /// Same value, cut from the graph.
  Tensor detach() const { return Tensor(node_->value, false); }

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// --- differentiable operations --------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
/// x (n x c) plus a 1 x c row broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x);
Tensor concat_rows(const Tensor& top, const Tensor& bottom);
/// Rows of `table` picked by index (embedding lookup).
Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> indices);
/// Row i becomes the mean of rows i+from .. i+to (inclusive) that fall inside
/// the same segment; segments are consecutive row blocks of the given lengths.
/// Rows with an empty window are zero.
Tensor window_mean(const Tensor& x, std::span<const std::size_t> lengths, int from, int to);

/// (1/rows) * sum of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);
/// -(1/n) sum_i log probs[i, targets[i]].
Tensor nll(const Tensor& probs, std::span<const int> targets);
/// -(1/n) sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)], p is n x 1.
Tensor bce(const Tensor& p, std::span<const double> targets);

/// Accumulates d(loss)/d(t) into every reachable tensor with requires_grad.
void backward(const Tensor& loss);

// --- parameters --------------------------------------------------------------

/// Named parameters grouped by component. Copying deep-copies values.
class ParamStore {
 public:
  using Component = std::map<std::string, Tensor>;

  explicit ParamStore(std::uint64_t seed = 0);
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Tensor& add(const std::string& component, const std::string& name, Matrix init);
  Tensor& add_uniform(const std::string& component, const std::string& name, Eigen::Index rows,
                      Eigen::Index cols, double limit = 0.1);
  Tensor& add_zeros(const std::string& component, const std::string& name, Eigen::Index rows,
                    Eigen::Index cols);

  bool contains(const std::string& component, const std::string& name) const;
  const Tensor& get(const std::string& component, const std::string& name) const;
  Tensor& get(const std::string& component, const std::string& name);
  const Component& component(const std::string& component) const;
  Component& component(const std::string& component);
  std::vector<std::string> components() const;
  const std::map<std::string, Component>& all() const { return params_; }

  void zero_grad();
  void zero_grad(const std::string& component);
  /// Toggles gradient tracking for every parameter of a component.
  void set_trainable(const std::string& component, bool on);

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& rng() { return rng_; }

  /// Copies parameter values from `other`; both stores must hold the same shapes.
  void assign_values(const ParamStore& other);

 private:
  std::map<std::string, Component> params_;
  std::uint64_t seed_;
  std::mt19937_64 rng_;
};

/// Disables gradient tracking for the given components for its lifetime.
class FreezeGuard {
 public:
  FreezeGuard(ParamStore& store, std::vector<std::string> components);
  ~FreezeGuard();
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParamStore& store_;
  std::vector<std::string> components_;
};

struct AdamWOptions {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// AdamW with decoupled weight decay over a fixed set of components. Holds its
/// own moment estimates and step count.
class AdamW {
 public:
  AdamW(std::vector<std::string> components, AdamWOptions options);

  /// Applies one update from the accumulated grads, then zeroes those grads.
  /// Throws MissingGrad if a filtered parameter has no gradient.
  void step(ParamStore& store);

  std::size_t steps() const { return t_; }
  const AdamWOptions& options() const { return options_; }
  const std::vector<std::string>& components() const { return components_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  std::vector<std::string> components_;
  AdamWOptions options_;
  std::map<std::string, Moments> state_;
  std::size_t t_ = 0;
};

// --- checkpoint container -----------------------------------------------------

struct Checkpoint {
  ParamStore params;
  std::map<std::string, std::string> metadata;
};

/// Versioned binary container: component/name -> shape + row-major doubles,
/// plus string metadata. Round-trips bit-exactly.
void save_checkpoint(const ParamStore& store, const std::map<std::string, std::string>& metadata,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace advpicker
