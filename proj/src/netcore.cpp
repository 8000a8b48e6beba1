#include "globe/netcore.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "globe/rng.hpp"

namespace globe {

NonFiniteError::NonFiniteError(std::string_view op, std::string_view detail)
    : std::runtime_error("non-finite value produced by '" + std::string(op) + "'" +
                         (detail.empty() ? std::string() : ": " + std::string(detail))),
      op_(op) {}

void require_finite(std::string_view op, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw NonFiniteError(op, "element " + std::to_string(i));
  }
}

void require_finite(std::string_view op, const RowMatrix& m) {
  if (!m.allFinite()) require_finite(op, std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
}

// ---------------------------------------------------------------------------

std::size_t ParameterStore::add(std::string path, std::vector<std::size_t> shape, InitKind init) {
  if (index_.contains(path)) throw std::invalid_argument("duplicate parameter path " + path);
  std::size_t size = 1;
  for (auto d : shape) size *= d;
  ParamEntry e{path, std::move(shape), values_.size(), size, init};
  values_.resize(values_.size() + size, init == InitKind::kOne ? 1.0 : 0.0);
  grads_.resize(values_.size(), 0.0);
  index_.emplace(std::move(path), entries_.size());
  entries_.push_back(std::move(e));
  return entries_.size() - 1;
}

std::size_t ParameterStore::find(std::string_view path) const {
  auto it = index_.find(std::string(path));
  if (it == index_.end()) throw std::out_of_range("unknown parameter path " + std::string(path));
  return it->second;
}

bool ParameterStore::contains(std::string_view path) const { return index_.contains(std::string(path)); }

std::span<double> ParameterStore::values(std::size_t id) {
  const auto& e = entries_.at(id);
  return std::span(values_).subspan(e.offset, e.size);
}

std::span<const double> ParameterStore::values(std::size_t id) const {
  const auto& e = entries_.at(id);
  return std::span(values_).subspan(e.offset, e.size);
}

std::span<double> ParameterStore::grads(std::size_t id) {
  const auto& e = entries_.at(id);
  return std::span(grads_).subspan(e.offset, e.size);
}

void ParameterStore::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

void ParameterStore::initialize(std::uint64_t seed) {
  const Rng root(seed);
  for (const auto& e : entries_) {
    auto v = std::span(values_).subspan(e.offset, e.size);
    switch (e.init) {
      case InitKind::kZero:
        std::fill(v.begin(), v.end(), 0.0);
        break;
      case InitKind::kOne:
        std::fill(v.begin(), v.end(), 1.0);
        break;
      case InitKind::kWeight: {
        Rng rng = root.split(e.path);
        const double fan_in = static_cast<double>(e.shape.empty() ? 1 : e.shape.back());
        const double std = 1.0 / std::sqrt(fan_in);
        for (double& x : v) x = std * rng.normal();
        break;
      }
    }
  }
}

bool ParameterStore::operator==(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].path != other.entries_[i].path || entries_[i].shape != other.entries_[i].shape) return false;
  }
  // Bitwise, so that -0.0 and NaN payloads are compared exactly.
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(values_[i]) != std::bit_cast<std::uint64_t>(other.values_[i])) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_derivative(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

std::size_t mlp_parameter_count(const std::vector<int>& sizes) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    n += static_cast<std::size_t>(sizes[l + 1]) * static_cast<std::size_t>(sizes[l] + 1);
  }
  return n;
}

std::size_t MlpLayout::parameter_count() const { return mlp_parameter_count(sizes); }

MlpLayout add_mlp(ParameterStore& store, const std::string& prefix, std::vector<int> sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("an MLP needs at least input and output widths");
  for (int s : sizes) {
    if (s <= 0) throw std::invalid_argument("MLP layer widths must be positive");
  }
  MlpLayout mlp;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto out = static_cast<std::size_t>(sizes[l + 1]);
    const auto in = static_cast<std::size_t>(sizes[l]);
    mlp.weights.push_back(store.add(prefix + "/w" + std::to_string(l), {out, in}, InitKind::kWeight));
    mlp.biases.push_back(store.add(prefix + "/b" + std::to_string(l), {out}, InitKind::kZero));
  }
  mlp.sizes = std::move(sizes);
  return mlp;
}

namespace {

using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;
using VecMap = Eigen::Map<Eigen::RowVectorXd>;

void apply_silu(const RowMatrix& z, RowMatrix& a) {
  a = (z.array() / (1.0 + (-z.array()).exp())).matrix();
}

void silu_backward(const RowMatrix& z, RowMatrix& g) {
  const auto s = (1.0 + (-z.array()).exp()).inverse();
  g.array() *= s * (1.0 + z.array() * (1.0 - s));
}

}  // namespace

void mlp_forward(const MlpLayout& mlp, const ParameterStore& store, const RowMatrix& x, RowMatrix& y,
                 MlpCache* cache) {
  if (x.cols() != mlp.in()) {
    throw std::invalid_argument("MLP input width " + std::to_string(x.cols()) + " does not match " +
                                std::to_string(mlp.in()));
  }
  const int L = mlp.layers();
  if (cache) {
    cache->pre.resize(static_cast<std::size_t>(L));
    cache->post.resize(static_cast<std::size_t>(L));
    cache->post[0] = x;
  }
  RowMatrix cur = x;
  RowMatrix z;
  for (int l = 0; l < L; ++l) {
    const int out = mlp.sizes[static_cast<std::size_t>(l) + 1];
    const int in = mlp.sizes[static_cast<std::size_t>(l)];
    ConstMatMap W(store.data(mlp.weights[static_cast<std::size_t>(l)]), out, in);
    ConstVecMap b(store.data(mlp.biases[static_cast<std::size_t>(l)]), out);
    z.noalias() = cur * W.transpose();
    z.rowwise() += b;
    if (l + 1 == L) {
      y = std::move(z);
    } else {
      apply_silu(z, cur);
      if (cache) {
        cache->pre[static_cast<std::size_t>(l)] = z;
        cache->post[static_cast<std::size_t>(l) + 1] = cur;
      }
    }
  }
  require_finite("mlp", y);
}

void mlp_backward(const MlpLayout& mlp, const ParameterStore& store, const MlpCache& cache, const RowMatrix& gy,
                  RowMatrix* gx, std::span<double> grad) {
  const int L = mlp.layers();
  RowMatrix g = gy;
  RowMatrix g_prev;
  for (int l = L - 1; l >= 0; --l) {
    const auto ul = static_cast<std::size_t>(l);
    const int out = mlp.sizes[ul + 1];
    const int in = mlp.sizes[ul];
    const auto& we = store.entry(mlp.weights[ul]);
    const auto& be = store.entry(mlp.biases[ul]);
    MatMap gW(grad.data() + we.offset, out, in);
    VecMap gb(grad.data() + be.offset, out);
    gW.noalias() += g.transpose() * cache.post[ul];
    gb += g.colwise().sum();
    if (l > 0 || gx) {
      ConstMatMap W(store.data(mlp.weights[ul]), out, in);
      g_prev.noalias() = g * W;
      if (l > 0) {
        silu_backward(cache.pre[ul - 1], g_prev);
        std::swap(g, g_prev);
      } else {
        *gx = std::move(g_prev);
      }
    }
  }
}

// ---------------------------------------------------------------------------

PadeLayout add_pade(ParameterStore& store, const std::string& prefix, const std::vector<int>& sizes, int order_n,
                    int order_d) {
  if (order_n < 1 || order_d < 1) throw std::invalid_argument("Pade orders must be >= 1");
  PadeLayout p;
  p.numerator = add_mlp(store, prefix + "/num", sizes);
  p.denominator = add_mlp(store, prefix + "/den", sizes);
  p.order_n = order_n;
  p.order_d = order_d;
  return p;
}

namespace {

inline double ipow(double x, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

}  // namespace

double pade_combine(double num, double den, int order_n, int order_d) {
  const double an = std::abs(num);
  const double sgn = num > 0.0 ? 1.0 : (num < 0.0 ? -1.0 : 0.0);
  return sgn * ipow(an, order_n) / (1.0 + ipow(std::abs(den), order_d));
}

void pade_combine_partials(double num, double den, int order_n, int order_d, double& d_num, double& d_den) {
  const double an = std::abs(num);
  const double ad = std::abs(den);
  const double sgn_n = num > 0.0 ? 1.0 : (num < 0.0 ? -1.0 : 0.0);
  const double sgn_d = den > 0.0 ? 1.0 : (den < 0.0 ? -1.0 : 0.0);
  const double q = 1.0 + ipow(ad, order_d);
  const double top = sgn_n * ipow(an, order_n);
  d_num = order_n * ipow(an, order_n - 1) / q;
  d_den = -top * order_d * ipow(ad, order_d - 1) * sgn_d / (q * q);
}

void pade_forward(const PadeLayout& pade, const ParameterStore& store, const RowMatrix& x, RowMatrix& y,
                  PadeCache* cache) {
  RowMatrix yn_local, yd_local;
  RowMatrix& yn = cache ? cache->yn : yn_local;
  RowMatrix& yd = cache ? cache->yd : yd_local;
  mlp_forward(pade.numerator, store, x, yn, cache ? &cache->num : nullptr);
  mlp_forward(pade.denominator, store, x, yd, cache ? &cache->den : nullptr);
  y.resize(yn.rows(), yn.cols());
  const Eigen::Index n = yn.size();
  const double* pn = yn.data();
  const double* pd = yd.data();
  double* py = y.data();
  if (pade.order_n == 2 && pade.order_d == 2) {
    for (Eigen::Index i = 0; i < n; ++i) py[i] = pn[i] * std::abs(pn[i]) / (1.0 + pd[i] * pd[i]);
  } else {
    for (Eigen::Index i = 0; i < n; ++i) py[i] = pade_combine(pn[i], pd[i], pade.order_n, pade.order_d);
  }
  require_finite("pade", y);
}

void pade_backward(const PadeLayout& pade, const ParameterStore& store, const PadeCache& cache, const RowMatrix& gy,
                   RowMatrix* gx, std::span<double> grad) {
  RowMatrix gn(gy.rows(), gy.cols()), gd(gy.rows(), gy.cols());
  const Eigen::Index n = gy.size();
  const double* pn = cache.yn.data();
  const double* pd = cache.yd.data();
  const double* pg = gy.data();
  double* pgn = gn.data();
  double* pgd = gd.data();
  if (pade.order_n == 2 && pade.order_d == 2) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double q = 1.0 / (1.0 + pd[i] * pd[i]);
      const double top = pn[i] * std::abs(pn[i]);
      pgn[i] = pg[i] * 2.0 * std::abs(pn[i]) * q;
      pgd[i] = -pg[i] * top * 2.0 * pd[i] * q * q;
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      double dn, dd;
      pade_combine_partials(pn[i], pd[i], pade.order_n, pade.order_d, dn, dd);
      pgn[i] = pg[i] * dn;
      pgd[i] = pg[i] * dd;
    }
  }
  if (gx) {
    RowMatrix gx_den;
    mlp_backward(pade.numerator, store, cache.num, gn, gx, grad);
    mlp_backward(pade.denominator, store, cache.den, gd, &gx_den, grad);
    *gx += gx_den;
  } else {
    mlp_backward(pade.numerator, store, cache.num, gn, nullptr, grad);
    mlp_backward(pade.denominator, store, cache.den, gd, nullptr, grad);
  }
}

// ---------------------------------------------------------------------------

double grad(const LossFunction& loss_fn, ParameterStore& store) {
  store.zero_grad();
  const double value = loss_fn(store, store.grads());
  if (!std::isfinite(value)) throw NonFiniteError("loss");
  require_finite("gradient", store.grads());
  return value;
}

void AdamW::step(ParameterStore& store, double lr) {
  auto values = store.values();
  auto grads = store.grads();
  if (m_.size() != values.size()) {
    m_.assign(values.size(), 0.0);
    v_.assign(values.size(), 0.0);
    t_ = 0;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& e : store.entries()) {
    const double decay = e.shape.size() == 2 ? config_.weight_decay : 0.0;
    for (std::size_t i = e.offset; i < e.offset + e.size; ++i) {
      const double g = grads[i];
      values[i] -= lr * decay * values[i];
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      values[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

void put_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

double get_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw std::runtime_error("checkpoint truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string read_line(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint truncated");
  return line;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParameterStore& store, const std::string& config_text) {
  out << "globe-ckpt v1\n";
  out << "config " << config_text.size() << '\n' << config_text;
  out << "entries " << store.entries().size() << '\n';
  const auto values = store.values();
  for (const auto& e : store.entries()) {
    out << e.path << " f64 " << e.shape.size();
    for (auto d : e.shape) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < e.size; ++i) put_le(out, values[e.offset + i]);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  if (read_line(in) != "globe-ckpt v1") throw std::runtime_error("not a globe-ckpt v1 file");
  Checkpoint ckpt;
  {
    std::istringstream ss(read_line(in));
    std::string tag;
    std::size_t n = 0;
    if (!(ss >> tag >> n) || tag != "config") throw std::runtime_error("checkpoint missing config block");
    ckpt.config_text.resize(n);
    in.read(ckpt.config_text.data(), static_cast<std::streamsize>(n));
    if (!in) throw std::runtime_error("checkpoint truncated");
  }
  std::size_t count = 0;
  {
    std::istringstream ss(read_line(in));
    std::string tag;
    if (!(ss >> tag >> count) || tag != "entries") throw std::runtime_error("checkpoint missing entries block");
  }
  for (std::size_t k = 0; k < count; ++k) {
    std::istringstream ss(read_line(in));
    std::string path, dtype;
    std::size_t rank = 0;
    if (!(ss >> path >> dtype >> rank) || dtype != "f64") throw std::runtime_error("bad checkpoint entry header");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) {
      if (!(ss >> d)) throw std::runtime_error("bad checkpoint entry shape");
    }
    const auto id = ckpt.store.add(path, shape, rank == 2 ? InitKind::kWeight : InitKind::kZero);
    for (double& v : ckpt.store.values(id)) v = get_le(in);
  }
  return ckpt;
}

}  // namespace globe
