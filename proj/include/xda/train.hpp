#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xda/data.hpp"
#include "xda/losses.hpp"
#include "xda/model.hpp"

namespace xda {

struct TrainConfig {
  double lr = 0.001;
  double lr_decay = 0.95;     // applied per epoch unless decay_per_step
  bool decay_per_step = false;
  double alpha = 0.25;
  double momentum = 0.0;      // plain SGD by default
  int epochs = 30;
  int batch_size = 32;        // pairs per staggered batch
  LossMask mask;
  DistanceMode distance = DistanceMode::Euclidean;
  double detach_margin = 0.0;  // 0 keeps the unhinged objective
  uint64_t seed = 0;

  void validate() const;
};

/// Owns one run's optimizer state. step() consumes a staggered batch and
/// applies one SGD update; the returned breakdown is the pre-update loss.
class Trainer {
 public:
  Trainer(SiameseModel& model, const TrainConfig& config);

  /// Full cross-domain step honoring the loss mask. With both cross-domain
  /// terms masked off this degenerates to exactly the plain classifier step.
  LossBreakdown step(const Batch& batch, double lr);

  /// Plain BCE classifier step on the batch's source half, bypassing the
  /// cross-domain machinery entirely.
  LossBreakdown classifier_step(const Batch& batch, double lr);

  double lr_for_epoch(int epoch) const;

 private:
  void apply_sgd(double lr);

  SiameseModel* model_;
  TrainConfig cfg_;
  std::vector<std::vector<double>> velocity_;
};

using EpochBatches = std::function<std::vector<Batch>(int epoch)>;

/// Runs `epochs` passes with the per-epoch learning rate lr * decay^epoch.
/// Returns the per-epoch mean loss breakdown. A non-finite loss aborts with
/// the epoch and step index.
std::vector<LossBreakdown> train(SiameseModel& model,
                                 const EpochBatches& batches_for_epoch,
                                 const TrainConfig& config);

/// Source-only baseline: the identical architecture trained with plain BCE
/// batches drawn from the source dataset; no target data is consumed.
std::vector<LossBreakdown> train_source_only(SiameseModel& model,
                                             const Dataset& source,
                                             const TrainConfig& config);

struct Metrics {
  double accuracy = 0.0;
  double f1 = 0.0;
};

/// Thresholded binary metrics on a target-domain test set. F1 is 0 when
/// precision + recall is 0.
Metrics evaluate(SiameseModel& model, const Dataset& test,
                 double threshold = 0.5);

struct MeanCi {
  double mean = 0.0;
  double half = 0.0;  // 95% confidence half-width
};

/// Two-sided 97.5% Student-t quantile from the standard 3-decimal table
/// (2.262 at 9 degrees of freedom); 1.960 beyond 30.
double t_quantile_975(int df);

/// mean +/- t_{0.975,k-1} * s / sqrt(k) over k values.
MeanCi mean_ci95(std::span<const double> values);

/// "0.8040±0.0356"
std::string format_mean_ci(double mean, double half);

struct FoldReport {
  std::vector<Metrics> per_fold;
  double mean_accuracy = 0.0;
  double mean_f1 = 0.0;
  double ci95_accuracy = 0.0;
  double ci95_f1 = 0.0;
};

FoldReport summarize_folds(const std::vector<Metrics>& per_fold);

enum class Method { Ours, SourceOnly };

struct ProtocolConfig {
  int k = 10;
  int n = 5;
  int source_group_size = 600;
  Method method = Method::Ours;
  uint64_t seed = 0;
  int jobs = 1;
};

struct FoldRun {
  Metrics metrics;
  std::vector<LossBreakdown> history;
  SiameseModel model;
};

/// The fold protocol: k independent re-samplings of the n-shot set, each
/// trained from a fresh seeded init and evaluated on the fixed test set.
/// Fold i derives its randomness as derive_seed(seed, "fold-<purpose>", i),
/// so runs differing only in the loss mask stay seed-paired. Fold failures
/// rethrow with the fold index attached. The model template's input size is
/// taken from the data; its seed is replaced per fold.
FoldReport k_fold_protocol(const DomainShiftData& data,
                           const ProtocolConfig& protocol,
                           const TrainConfig& config,
                           const ModelConfig& model_template,
                           std::vector<FoldRun>* runs = nullptr);

struct AblationRow {
  std::string name;
  LossMask mask;
  FoldReport report;
};

/// Three seed-paired protocol runs differing only in the loss mask:
/// both cross-domain terms, pairing only, detaching only.
std::vector<AblationRow> ablation_run(const DomainShiftData& data,
                                      const ProtocolConfig& protocol,
                                      const TrainConfig& config,
                                      const ModelConfig& model_template);

struct SweepRow {
  int n = 0;
  FoldReport report;
};

std::vector<SweepRow> n_shot_sweep(const DomainShiftData& data,
                                   std::span<const int> ns,
                                   const ProtocolConfig& protocol,
                                   const TrainConfig& config,
                                   const ModelConfig& model_template);

/// History record serialization: one metric per line,
/// "run_id<TAB>fold<TAB>epoch<TAB>metric<TAB>value".
void append_history(std::string* out, const std::string& run_id, int fold,
                    const std::vector<LossBreakdown>& history,
                    const Metrics& final_metrics, int epochs);

}  // namespace xda
