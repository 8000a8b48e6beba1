#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "globe/hyperstack.hpp"

namespace globe {

struct LossConfig {
  std::map<std::string, double> scales{{"dU", 1.0}, {"Cp", 1.0}, {"Cpt", 1.0}, {"ln_nut", 5.0}, {"CF_shear", 1e-2}};
  double huber_delta = 1.0;

  /// Fields without an explicit scale use 1.
  double scale_for(const std::string& field) const;
};

/// 0.5 e^2 for |e| <= delta, delta (|e| - 0.5 delta) beyond.
double huber(double e, double delta);
double huber_derivative(double e, double delta);

struct LossResult {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> per_field;  // predicted fields, scalars then vectors
  std::vector<std::string> fully_masked;                  // fields that contributed 0 for lack of points
};

/// Mean over unmasked points of scale * huber(error) per field, summed over
/// fields. Vector fields use the error norm. Every predicted field must exist
/// in `target`. When g_pred is non-null it receives d(total)/d(pred).
LossResult field_loss(const FieldSet& pred, const FieldSet& target, const FieldMask& mask, const LossConfig& config,
                      FieldSet* g_pred = nullptr);

/// n points drawn uniformly without replacement (kept in input order);
/// the sample itself when n >= the query count.
Sample subsample_queries(const Sample& sample, std::size_t n, std::uint64_t seed);

struct TrainConfig {
  int epochs = 10;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double lr_factor = 0.5;
  double min_lr = 6.25e-5;
  int patience = 5;
  std::size_t subsample = 4096;
  std::uint64_t seed = 0;
  LossConfig loss;
  EvalOptions eval;
};

struct EpochRecord {
  int epoch = 0;  // 0 is the initial model before any update
  double loss = 0.0;
  double lr = 0.0;
  double best_loss = 0.0;
  std::vector<std::pair<std::string, double>> field_losses;
};

struct TrainResult {
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Per-sample AdamW steps over a shuffled dataset with a plateau schedule.
/// Throws std::runtime_error naming epoch and sample on a non-finite loss.
TrainResult train(const Model& model, ParameterStore& store, const std::vector<Sample>& dataset,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Loss and gradient of one sample (gradient accumulated into grad).
LossResult sample_loss(const Model& model, const ParameterStore& store, const Sample& sample, const LossConfig& config,
                       const EvalOptions& opts, std::span<double> grad);

void write_history_csv(std::ostream& out, const TrainResult& result);

// ---------------------------------------------------------------------------

struct FieldMetric {
  std::string name;
  bool vector = false;
  std::size_t count = 0;
  double mae = 0.0;
  double mse = 0.0;
  double z_mse = 0.0;        // NaN when the reference deviation is zero
  double surface_mae = 0.0;  // NaN without surface points
  double surface_mse = 0.0;
};

struct MetricReport {
  std::vector<FieldMetric> fields;
  const FieldMetric* find(const std::string& name) const;
};

/// Per-field (per-component for vectors) standard deviation of the true
/// values over unmasked points of all given samples.
std::vector<std::vector<double>> pooled_sigma(std::span<const FieldSet* const> targets,
                                              std::span<const FieldMask* const> masks, int dim);

/// Physical metrics on the nondimensional fields (vector errors use the
/// error norm) and z-score MSE using `sigma` from pooled_sigma.
MetricReport metrics(const FieldSet& pred, const FieldSet& target, const FieldMask& mask,
                     std::span<const std::uint8_t> surface, const std::vector<std::vector<double>>& sigma, int dim);

/// Mean of the per-sample values; NaN entries propagate.
MetricReport average_reports(std::span<const MetricReport> reports);

void write_metric_csv_header(std::ostream& out);
void write_metric_csv_rows(std::ostream& out, const std::string& label, const MetricReport& report);

}  // namespace globe
