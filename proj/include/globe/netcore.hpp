#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace globe {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when a primitive produces NaN or Inf; what() names the primitive.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string_view op, std::string_view detail = {});
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

void require_finite(std::string_view op, std::span<const double> values);
void require_finite(std::string_view op, const RowMatrix& m);

/// How a freshly added parameter is initialized.
enum class InitKind { kWeight, kZero, kOne };

struct ParamEntry {
  std::string path;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  InitKind init = InitKind::kZero;
};

/// Flat storage for every learnable scalar, addressed by stable path strings.
/// Gradients live in a buffer with the same layout.
class ParameterStore {
 public:
  std::size_t add(std::string path, std::vector<std::size_t> shape, InitKind init);
  std::size_t find(std::string_view path) const;
  bool contains(std::string_view path) const;

  const ParamEntry& entry(std::size_t id) const { return entries_.at(id); }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values(std::size_t id);
  std::span<const double> values(std::size_t id) const;
  const double* data(std::size_t id) const { return values_.data() + entries_[id].offset; }

  std::span<double> grads() { return grads_; }
  std::span<const double> grads() const { return grads_; }
  std::span<double> grads(std::size_t id);
  void zero_grad();

  /// Draws every entry from its InitKind: weights ~ N(0, 1/fan_in) where
  /// fan_in is the trailing dimension, biases and offsets 0, scales 1. Each
  /// entry uses its own stream keyed by path, so layout order is irrelevant.
  void initialize(std::uint64_t seed);

  bool operator==(const ParameterStore& other) const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

// ---------------------------------------------------------------------------
// Dense MLP with SiLU hidden activations and a linear output layer.

double silu(double x);
double silu_derivative(double x);

struct MlpLayout {
  std::vector<int> sizes;
  std::vector<std::size_t> weights;  // shape (sizes[l+1], sizes[l])
  std::vector<std::size_t> biases;   // shape (sizes[l+1])

  int in() const { return sizes.front(); }
  int out() const { return sizes.back(); }
  int layers() const { return static_cast<int>(weights.size()); }
  std::size_t parameter_count() const;
};

MlpLayout add_mlp(ParameterStore& store, const std::string& prefix, std::vector<int> sizes);
std::size_t mlp_parameter_count(const std::vector<int>& sizes);

struct MlpCache {
  std::vector<RowMatrix> pre;   // pre-activation per layer
  std::vector<RowMatrix> post;  // post[0] is the input
};

/// Rows of x are independent samples. Throws std::invalid_argument on a
/// width mismatch.
void mlp_forward(const MlpLayout& mlp, const ParameterStore& store, const RowMatrix& x, RowMatrix& y,
                 MlpCache* cache = nullptr);

/// Accumulates parameter gradients into `grad` (store layout) and, when gx is
/// non-null, writes the input gradient.
void mlp_backward(const MlpLayout& mlp, const ParameterStore& store, const MlpCache& cache,
                  const RowMatrix& gy, RowMatrix* gx, std::span<double> grad);

// ---------------------------------------------------------------------------
// Padé-approximant MLP: sgn(n) |n|^N / (1 + |d|^D) with n, d independent MLPs.

struct PadeLayout {
  MlpLayout numerator;
  MlpLayout denominator;
  int order_n = 2;
  int order_d = 2;

  std::size_t parameter_count() const {
    return numerator.parameter_count() + denominator.parameter_count();
  }
};

PadeLayout add_pade(ParameterStore& store, const std::string& prefix, const std::vector<int>& sizes,
                    int order_n, int order_d);

/// Elementwise Padé combination and its partial derivatives.
double pade_combine(double num, double den, int order_n, int order_d);
void pade_combine_partials(double num, double den, int order_n, int order_d, double& d_num, double& d_den);

struct PadeCache {
  MlpCache num, den;
  RowMatrix yn, yd;
};

void pade_forward(const PadeLayout& pade, const ParameterStore& store, const RowMatrix& x, RowMatrix& y,
                  PadeCache* cache = nullptr);
void pade_backward(const PadeLayout& pade, const ParameterStore& store, const PadeCache& cache,
                   const RowMatrix& gy, RowMatrix* gx, std::span<double> grad);

// ---------------------------------------------------------------------------
// Differentiation contract.

/// A loss that returns its value and accumulates d(loss)/d(theta) into the
/// provided buffer (store layout) using registered primitive VJPs.
using LossFunction = std::function<double(const ParameterStore&, std::span<double>)>;

/// Zeroes the store's gradient buffer, evaluates loss_fn, checks every
/// gradient is finite and returns the loss value.
double grad(const LossFunction& loss_fn, ParameterStore& store);

/// Decoupled-weight-decay Adam. Weight decay applies to matrix-shaped
/// entries only.
class AdamW {
 public:
  struct Config {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  AdamW() = default;
  explicit AdamW(Config config) : config_(config) {}
  void step(ParameterStore& store, double lr);
  long steps() const { return t_; }

 private:
  Config config_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints.

/// Layout: "globe-ckpt v1\n", "config <bytes>\n" + config text,
/// "entries <count>\n", then per entry "<path> f64 <rank> <dims...>\n"
/// followed by the values as little-endian IEEE-754 doubles.
void write_checkpoint(std::ostream& out, const ParameterStore& store, const std::string& config_text);

struct Checkpoint {
  std::string config_text;
  ParameterStore store;
};

Checkpoint read_checkpoint(std::istream& in);

}  // namespace globe
