#include "globe/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "globe/rng.hpp"

namespace globe {

double LossConfig::scale_for(const std::string& field) const {
  const auto it = scales.find(field);
  return it == scales.end() ? 1.0 : it->second;
}

double huber(double e, double delta) {
  if (!(delta > 0.0)) throw std::domain_error("huber delta must be positive");
  const double a = std::abs(e);
  return a <= delta ? 0.5 * e * e : delta * (a - 0.5 * delta);
}

double huber_derivative(double e, double delta) {
  if (!(delta > 0.0)) throw std::domain_error("huber delta must be positive");
  if (std::abs(e) <= delta) return e;
  return e > 0.0 ? delta : -delta;
}

LossResult field_loss(const FieldSet& pred, const FieldSet& target, const FieldMask& mask, const LossConfig& config,
                      FieldSet* g_pred) {
  if (pred.size() != target.size() || mask.size() != target.size() || mask.fields != target.n_fields()) {
    throw std::invalid_argument("field_loss: prediction, target and mask shapes differ");
  }
  std::vector<std::string> missing;
  for (const auto& n : pred.scalar_names) {
    if (target.scalar_index(n) < 0) missing.push_back(n);
  }
  for (const auto& n : pred.vector_names) {
    if (target.vector_index(n) < 0) missing.push_back(n);
  }
  if (!missing.empty()) {
    std::string msg = "targets are missing predicted fields:";
    for (const auto& m : missing) msg += " " + m;
    throw std::invalid_argument(msg);
  }
  if (g_pred) *g_pred = FieldSet(pred.scalar_names, pred.vector_names, pred.size());

  const double delta = config.huber_delta;
  const std::size_t n = pred.size();
  LossResult res;
  for (int f = 0; f < pred.n_scalars(); ++f) {
    const std::string& name = pred.scalar_names[static_cast<std::size_t>(f)];
    const int tf = target.scalar_index(name);
    const double scale = config.scale_for(name);
    std::size_t count = 0;
    for (std::size_t p = 0; p < n; ++p) count += mask.at(p, tf) ? 1 : 0;
    double sum = 0.0;
    if (count > 0) {
      for (std::size_t p = 0; p < n; ++p) {
        if (!mask.at(p, tf)) continue;
        const auto row = static_cast<Eigen::Index>(p);
        const double e = pred.scalars(row, f) - target.scalars(row, tf);
        sum += huber(e, delta);
        if (g_pred) g_pred->scalars(row, f) = scale * huber_derivative(e, delta) / static_cast<double>(count);
      }
    } else {
      res.fully_masked.push_back(name);
    }
    const double value = count > 0 ? scale * sum / static_cast<double>(count) : 0.0;
    res.per_field.emplace_back(name, value);
    res.total += value;
  }
  for (int f = 0; f < pred.n_vectors(); ++f) {
    const std::string& name = pred.vector_names[static_cast<std::size_t>(f)];
    const int tf = target.vector_index(name);
    const int mf = target.n_scalars() + tf;
    const double scale = config.scale_for(name);
    std::size_t count = 0;
    for (std::size_t p = 0; p < n; ++p) count += mask.at(p, mf) ? 1 : 0;
    double sum = 0.0;
    if (count > 0) {
      for (std::size_t p = 0; p < n; ++p) {
        if (!mask.at(p, mf)) continue;
        const Vec3 e = pred.vec(p, f) - target.vec(p, tf);
        const double en = e.norm();
        sum += huber(en, delta);
        if (g_pred && en > 0.0) {
          g_pred->vec(p, f) = scale * huber_derivative(en, delta) / (en * static_cast<double>(count)) * e;
        }
      }
    } else {
      res.fully_masked.push_back(name);
    }
    const double value = count > 0 ? scale * sum / static_cast<double>(count) : 0.0;
    res.per_field.emplace_back(name, value);
    res.total += value;
  }
  return res;
}

Sample subsample_queries(const Sample& sample, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("subsample size must be >= 1");
  if (n >= sample.queries.size()) return sample;
  Rng rng = Rng(seed).split("subsample");
  auto idx = rng.sample_indices(sample.queries.size(), n);
  std::sort(idx.begin(), idx.end());
  Sample out;
  out.dim = sample.dim;
  out.boundaries = sample.boundaries;
  out.global_scalars = sample.global_scalars;
  out.global_vectors = sample.global_vectors;
  out.reference_lengths = sample.reference_lengths;
  out.queries.reserve(n);
  for (auto i : idx) out.queries.push_back(sample.queries[i]);
  out.has_targets = sample.has_targets;
  if (sample.has_targets) {
    out.targets = sample.targets.select(idx);
    out.mask = sample.mask.select(idx);
  }
  if (!sample.surface.empty()) {
    for (auto i : idx) out.surface.push_back(sample.surface[i]);
  }
  return out;
}

LossResult sample_loss(const Model& model, const ParameterStore& store, const Sample& sample, const LossConfig& config,
                       const EvalOptions& opts, std::span<double> grad) {
  if (!sample.has_targets) throw std::invalid_argument("training sample has no targets");
  ForwardCache cache;
  const FieldSet pred = model_forward(model, store, sample, opts, &cache);
  FieldSet g_pred;
  LossResult res = field_loss(pred, sample.targets, sample.mask, config, grad.empty() ? nullptr : &g_pred);
  if (!std::isfinite(res.total)) throw NonFiniteError("loss");
  if (!grad.empty()) model_backward(model, store, sample, cache, g_pred, opts, grad);
  return res;
}

namespace {

void accumulate_fields(std::vector<std::pair<std::string, double>>& acc, const LossResult& r) {
  if (acc.empty()) {
    acc = r.per_field;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i].second += r.per_field[i].second;
}

}  // namespace

TrainResult train(const Model& model, ParameterStore& store, const std::vector<Sample>& dataset,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
  if (cfg.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  const Rng root = Rng(cfg.seed).split("train");
  AdamW opt(AdamW::Config{0.9, 0.999, 1e-8, cfg.weight_decay});
  double lr = cfg.lr;
  TrainResult result;
  const double n = static_cast<double>(dataset.size());

  auto subsample_seed = [&](int epoch, std::size_t i) {
    return root.split("subsample").split(static_cast<std::uint64_t>(epoch)).split(i).next_u64();
  };

  {
    EpochRecord rec;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const Sample s = subsample_queries(dataset[i], cfg.subsample, subsample_seed(0, i));
      LossResult r;
      try {
        r = sample_loss(model, store, s, cfg.loss, cfg.eval, {});
      } catch (const NonFiniteError& e) {
        throw std::runtime_error("non-finite value at epoch 0, sample " + std::to_string(i) + " (" + e.what() + ")");
      }
      rec.loss += r.total / n;
      accumulate_fields(rec.field_losses, r);
    }
    for (auto& f : rec.field_losses) f.second /= n;
    rec.lr = lr;
    rec.best_loss = rec.loss;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  double best = result.history.front().loss;
  int bad_epochs = 0;
  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = root.split("shuffle").split(static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    for (std::size_t i : order) {
      const Sample s = subsample_queries(dataset[i], cfg.subsample, subsample_seed(epoch, i));
      LossResult r;
      try {
        grad([&](const ParameterStore& st, std::span<double> g) {
               r = sample_loss(model, st, s, cfg.loss, cfg.eval, g);
               return r.total;
             },
             store);
      } catch (const NonFiniteError& e) {
        throw std::runtime_error("non-finite value at epoch " + std::to_string(epoch) + ", sample " +
                                 std::to_string(i) + " (" + e.what() + ")");
      }
      opt.step(store, lr);
      rec.loss += r.total / n;
      accumulate_fields(rec.field_losses, r);
    }
    for (auto& f : rec.field_losses) f.second /= n;

    if (rec.loss < best) {
      best = rec.loss;
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.patience) {
      lr = std::max(cfg.min_lr, lr * cfg.lr_factor);
      bad_epochs = 0;
    }
    rec.best_loss = best;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

void write_history_csv(std::ostream& out, const TrainResult& result) {
  out << "epoch,loss,lr,best_loss";
  if (!result.history.empty()) {
    for (const auto& [name, v] : result.history.front().field_losses) out << ",loss_" << name;
  }
  out << '\n';
  for (const auto& r : result.history) {
    out << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.lr) << ',' << format_double(r.best_loss);
    for (const auto& [name, v] : r.field_losses) out << ',' << format_double(v);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

const FieldMetric* MetricReport::find(const std::string& name) const {
  for (const auto& f : fields) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

std::vector<std::vector<double>> pooled_sigma(std::span<const FieldSet* const> targets,
                                              std::span<const FieldMask* const> masks, int dim) {
  if (targets.empty()) return {};
  if (targets.size() != masks.size()) throw std::invalid_argument("pooled_sigma: one mask per target set");
  const FieldSet& first = *targets.front();
  std::vector<std::vector<double>> sigma;
  auto stat = [&](auto&& value, int mask_field) {
    double count = 0.0, mean = 0.0, m2 = 0.0;  // Welford
    for (std::size_t k = 0; k < targets.size(); ++k) {
      for (std::size_t p = 0; p < targets[k]->size(); ++p) {
        if (!masks[k]->at(p, mask_field)) continue;
        const double x = value(*targets[k], p);
        count += 1.0;
        const double d = x - mean;
        mean += d / count;
        m2 += d * (x - mean);
      }
    }
    return count > 0.0 ? std::sqrt(m2 / count) : 0.0;
  };
  for (int f = 0; f < first.n_scalars(); ++f) {
    sigma.push_back({stat([f](const FieldSet& t, std::size_t p) { return t.scalars(static_cast<Eigen::Index>(p), f); }, f)});
  }
  for (int f = 0; f < first.n_vectors(); ++f) {
    std::vector<double> comps;
    for (int c = 0; c < dim; ++c) {
      comps.push_back(stat([f, c](const FieldSet& t, std::size_t p) { return t.vec(p, f)[c]; }, first.n_scalars() + f));
    }
    sigma.push_back(comps);
  }
  return sigma;
}

MetricReport metrics(const FieldSet& pred, const FieldSet& target, const FieldMask& mask,
                     std::span<const std::uint8_t> surface, const std::vector<std::vector<double>>& sigma, int dim) {
  if (pred.size() != target.size() || mask.size() != target.size()) throw std::invalid_argument("metrics: shape mismatch");
  if (!surface.empty() && surface.size() != target.size()) throw std::invalid_argument("metrics: surface flag count");
  if (sigma.size() != static_cast<std::size_t>(target.n_fields())) throw std::invalid_argument("metrics: sigma per field");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  MetricReport rep;
  auto run = [&](const std::string& name, bool is_vector, int mask_field, auto&& err, auto&& zerr,
                 const std::vector<double>& sig) {
    FieldMetric m;
    m.name = name;
    m.vector = is_vector;
    double sa = 0.0, ss = 0.0, sz = 0.0, surf_a = 0.0, surf_s = 0.0;
    std::size_t n_surf = 0;
    const bool z_defined = std::all_of(sig.begin(), sig.end(), [](double s) { return s > 0.0; });
    for (std::size_t p = 0; p < target.size(); ++p) {
      if (!mask.at(p, mask_field)) continue;
      const double e = err(p);
      ++m.count;
      sa += e;
      ss += e * e;
      if (z_defined) sz += zerr(p);
      if (!surface.empty() && surface[p]) {
        ++n_surf;
        surf_a += e;
        surf_s += e * e;
      }
    }
    const double c = static_cast<double>(m.count);
    m.mae = m.count ? sa / c : nan;
    m.mse = m.count ? ss / c : nan;
    m.z_mse = (m.count && z_defined) ? sz / c : nan;
    m.surface_mae = n_surf ? surf_a / static_cast<double>(n_surf) : nan;
    m.surface_mse = n_surf ? surf_s / static_cast<double>(n_surf) : nan;
    rep.fields.push_back(m);
  };
  for (int f = 0; f < pred.n_scalars(); ++f) {
    const std::string& name = pred.scalar_names[static_cast<std::size_t>(f)];
    const int tf = target.scalar_index(name);
    if (tf < 0) throw std::invalid_argument("metrics: target has no field " + name);
    const double s = sigma[static_cast<std::size_t>(tf)][0];
    auto err = [&, f, tf](std::size_t p) {
      return std::abs(pred.scalars(static_cast<Eigen::Index>(p), f) - target.scalars(static_cast<Eigen::Index>(p), tf));
    };
    run(name, false, tf, err, [&, s](std::size_t p) { const double z = err(p) / s; return z * z; },
        sigma[static_cast<std::size_t>(tf)]);
  }
  for (int f = 0; f < pred.n_vectors(); ++f) {
    const std::string& name = pred.vector_names[static_cast<std::size_t>(f)];
    const int tf = target.vector_index(name);
    if (tf < 0) throw std::invalid_argument("metrics: target has no field " + name);
    const auto& sig = sigma[static_cast<std::size_t>(target.n_scalars() + tf)];
    auto err = [&, f, tf](std::size_t p) { return (pred.vec(p, f) - target.vec(p, tf)).norm(); };
    auto zerr = [&, f, tf](std::size_t p) {
      double z = 0.0;
      const Vec3 e = pred.vec(p, f) - target.vec(p, tf);
      for (int c = 0; c < dim; ++c) z += (e[c] / sig[static_cast<std::size_t>(c)]) * (e[c] / sig[static_cast<std::size_t>(c)]);
      return z / dim;
    };
    run(name, true, target.n_scalars() + tf, err, zerr, sig);
  }
  return rep;
}

MetricReport average_reports(std::span<const MetricReport> reports) {
  MetricReport out;
  if (reports.empty()) return out;
  out = reports.front();
  for (std::size_t i = 1; i < reports.size(); ++i) {
    for (std::size_t f = 0; f < out.fields.size(); ++f) {
      auto& a = out.fields[f];
      const auto& b = reports[i].fields[f];
      a.count += b.count;
      a.mae += b.mae;
      a.mse += b.mse;
      a.z_mse += b.z_mse;
      a.surface_mae += b.surface_mae;
      a.surface_mse += b.surface_mse;
    }
  }
  const double n = static_cast<double>(reports.size());
  for (auto& a : out.fields) {
    a.mae /= n;
    a.mse /= n;
    a.z_mse /= n;
    a.surface_mae /= n;
    a.surface_mse /= n;
  }
  return out;
}

namespace {

std::string metric_value(double v) { return std::isnan(v) ? "nan-undefined" : format_double(v); }

}  // namespace

void write_metric_csv_header(std::ostream& out) {
  out << "sample,field,kind,count,mae,mse,zscore_mse,surface_mae,surface_mse\n";
}

void write_metric_csv_rows(std::ostream& out, const std::string& label, const MetricReport& report) {
  for (const auto& f : report.fields) {
    out << label << ',' << f.name << ',' << (f.vector ? "vector" : "scalar") << ',' << f.count << ','
        << metric_value(f.mae) << ',' << metric_value(f.mse) << ',' << metric_value(f.z_mse) << ','
        << metric_value(f.surface_mae) << ',' << metric_value(f.surface_mse) << '\n';
  }
}

}  // namespace globe
