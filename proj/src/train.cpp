#include "xda/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include "xda/error.hpp"
#include "xda/seed.hpp"

namespace xda {

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("learning rate must be > 0");
  if (lr_decay <= 0.0 || lr_decay > 1.0)
    throw ConfigError("lr_decay must be in (0, 1]");
  if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("momentum must be in [0, 1)");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 4 || batch_size % 2 != 0)
    throw ConfigError("batch_size must be even and >= 4");
  if (detach_margin < 0.0) throw ConfigError("detach_margin must be >= 0");
}

Trainer::Trainer(SiameseModel& model, const TrainConfig& config)
    : model_(&model), cfg_(config) {
  cfg_.validate();
}

double Trainer::lr_for_epoch(int epoch) const {
  return cfg_.lr * std::pow(cfg_.lr_decay, epoch);
}

void Trainer::apply_sgd(double lr) {
  if (cfg_.momentum > 0.0 && velocity_.empty()) {
    velocity_.resize(model_->params.size());
    for (size_t i = 0; i < velocity_.size(); ++i)
      velocity_[i].assign(model_->params[i].data.size(), 0.0);
  }
  for (size_t i = 0; i < model_->params.size(); ++i) {
    Tensor& p = model_->params[i];
    if (p.grad.size() != p.data.size())
      throw ContractError("parameter " + model_->names[i] +
                          " has no gradient to apply");
    if (cfg_.momentum > 0.0) {
      auto& v = velocity_[i];
      for (size_t j = 0; j < p.data.size(); ++j) {
        v[j] = cfg_.momentum * v[j] + p.grad[j];
        p.data[j] -= lr * v[j];
      }
    } else {
      for (size_t j = 0; j < p.data.size(); ++j)
        p.data[j] -= lr * p.grad[j];
    }
  }
}

namespace {

std::vector<int64_t> label_rows(const Tensor& labels, int wanted) {
  std::vector<int64_t> rows;
  for (int64_t i = 0; i < labels.numel(); ++i)
    if (static_cast<int>(labels(i)) == wanted) rows.push_back(i);
  return rows;
}

void check_finite_breakdown(const LossBreakdown& b) {
  if (!std::isfinite(b.l_c) || !std::isfinite(b.l_cp) ||
      !std::isfinite(b.l_cd) || !std::isfinite(b.l_overall))
    throw ContractError(
        "non-finite loss: l_c=" + std::to_string(b.l_c) +
        " l_cp=" + std::to_string(b.l_cp) + " l_cd=" + std::to_string(b.l_cd) +
        " l_overall=" + std::to_string(b.l_overall));
}

}  // namespace

LossBreakdown Trainer::classifier_step(const Batch& batch, double lr) {
  Tape tape;
  ModelGraph graph(tape, *model_);
  Var probs = graph.predict(graph.embed(batch.source_x));
  Var loss = classification_loss(tape, probs, batch.source_y);

  LossBreakdown out;
  out.alpha = cfg_.alpha;
  out.l_c = tape.scalar_value(loss);
  out.l_overall = out.l_c;
  check_finite_breakdown(out);

  tape.backward(loss);
  apply_sgd(lr);
  return out;
}

LossBreakdown Trainer::step(const Batch& batch, double lr) {
  if (!cfg_.mask.any()) return classifier_step(batch, lr);
  if (!batch.has_target())
    throw ContractError("cross-domain step on a batch without target samples");

  Tape tape;
  ModelGraph graph(tape, *model_);

  Var fs = graph.embed(batch.source_x);
  Var ft = graph.embed(batch.target_x);
  Var probs = graph.predict(fs);

  const auto sp = label_rows(batch.source_y, 1);
  const auto sn = label_rows(batch.source_y, 0);
  const auto tp = label_rows(batch.target_y, 1);
  const auto tn = label_rows(batch.target_y, 0);
  const struct {
    const char* name;
    const std::vector<int64_t>* rows;
  } groups[] = {{"fs_pos", &sp}, {"fs_neg", &sn}, {"ft_pos", &tp},
                {"ft_neg", &tn}};
  for (const auto& g : groups)
    if (g.rows->empty())
      throw ContractError(std::string("staggered batch has an empty group: ") +
                          g.name);

  BatchSplit split;
  split.fs_pos = gather_rows(tape, fs, sp);
  split.fs_neg = gather_rows(tape, fs, sn);
  split.ft_pos = gather_rows(tape, ft, tp);
  split.ft_neg = gather_rows(tape, ft, tn);
  split.source_probs = probs;
  split.source_labels = batch.source_y;

  Var l_c = classification_loss(tape, probs, batch.source_y);

  LossBreakdown out;
  out.alpha = cfg_.alpha;
  out.l_c = tape.scalar_value(l_c);

  Var objective = l_c;
  if (cfg_.mask.use_cp && cfg_.mask.use_cd) {
    Var l_cp = pairing_loss(tape, split, cfg_.distance);
    out.l_cp = tape.scalar_value(l_cp);
    if (cfg_.detach_margin > 0.0) {
      Var hinge =
          hinged_detaching_loss(tape, split, cfg_.detach_margin, cfg_.distance);
      out.l_cd = tape.scalar_value(detaching_loss(tape, split, cfg_.distance));
      objective = add(tape, l_c,
                      scale(tape, add(tape, l_cp, hinge), cfg_.alpha));
    } else {
      Var l_cd = detaching_loss(tape, split, cfg_.distance);
      out.l_cd = tape.scalar_value(l_cd);
      objective = overall_loss(tape, l_c, l_cp, l_cd, cfg_.alpha);
    }
  } else if (cfg_.mask.use_cp) {
    Var l_cp = pairing_loss(tape, split, cfg_.distance);
    out.l_cp = tape.scalar_value(l_cp);
    objective = add(tape, l_c, scale(tape, l_cp, cfg_.alpha));
  } else {  // use_cd only
    if (cfg_.detach_margin > 0.0) {
      Var hinge =
          hinged_detaching_loss(tape, split, cfg_.detach_margin, cfg_.distance);
      out.l_cd = tape.scalar_value(detaching_loss(tape, split, cfg_.distance));
      objective = add(tape, l_c, scale(tape, hinge, cfg_.alpha));
    } else {
      Var l_cd = detaching_loss(tape, split, cfg_.distance);
      out.l_cd = tape.scalar_value(l_cd);
      objective = add(tape, l_c, scale(tape, l_cd, -cfg_.alpha));
    }
  }
  out.l_overall = tape.scalar_value(objective);
  check_finite_breakdown(out);

  tape.backward(objective);
  apply_sgd(lr);
  return out;
}

std::vector<LossBreakdown> train(SiameseModel& model,
                                 const EpochBatches& batches_for_epoch,
                                 const TrainConfig& config) {
  config.validate();
  Trainer trainer(model, config);
  std::vector<LossBreakdown> history;
  history.reserve(static_cast<size_t>(config.epochs));

  int64_t global_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<Batch> batches = batches_for_epoch(epoch);
    if (batches.empty())
      throw DataError("epoch " + std::to_string(epoch) + " has no batches");
    LossBreakdown mean;
    mean.alpha = config.alpha;
    for (size_t i = 0; i < batches.size(); ++i) {
      const double lr = config.decay_per_step
                            ? config.lr * std::pow(config.lr_decay,
                                                   static_cast<double>(
                                                       global_step))
                            : trainer.lr_for_epoch(epoch);
      LossBreakdown b;
      try {
        b = trainer.step(batches[i], lr);
      } catch (const ContractError& e) {
        throw ContractError("epoch " + std::to_string(epoch) + " step " +
                            std::to_string(i) + ": " + e.what());
      }
      ++global_step;
      mean.l_c += b.l_c;
      mean.l_cp += b.l_cp;
      mean.l_cd += b.l_cd;
      mean.l_overall += b.l_overall;
    }
    const double inv = 1.0 / static_cast<double>(batches.size());
    mean.l_c *= inv;
    mean.l_cp *= inv;
    mean.l_cd *= inv;
    mean.l_overall *= inv;
    history.push_back(mean);
  }
  return history;
}

std::vector<LossBreakdown> train_source_only(SiameseModel& model,
                                             const Dataset& source,
                                             const TrainConfig& config) {
  TrainConfig cfg = config;
  cfg.mask = LossMask{false, false};
  return train(
      model,
      [&source, &cfg](int epoch) {
        return plain_batches(source.samples, cfg.batch_size,
                             derive_seed(cfg.seed, "epoch-batches",
                                         static_cast<uint64_t>(epoch)));
      },
      cfg);
}

Metrics evaluate(SiameseModel& model, const Dataset& test, double threshold) {
  if (test.samples.empty())
    throw ContractError("evaluate: empty test set");
  for (const Sample& s : test.samples)
    if (s.domain != Domain::Target)
      throw ContractError("evaluate: sample " + s.id +
                          " is not target-domain");

  int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  constexpr size_t kChunk = 256;
  for (size_t lo = 0; lo < test.samples.size(); lo += kChunk) {
    const size_t hi = std::min(lo + kChunk, test.samples.size());
    std::vector<const Sample*> rows;
    rows.reserve(hi - lo);
    for (size_t i = lo; i < hi; ++i) rows.push_back(&test.samples[i]);
    Tensor x, y;
    stack_samples(rows, &x, &y);
    const Tensor probs = predict_values(model, x);
    for (int64_t i = 0; i < probs.numel(); ++i) {
      const bool predicted = probs.data[static_cast<size_t>(i)] >= threshold;
      const bool actual = y(i) == 1.0;
      if (predicted && actual)
        ++tp;
      else if (predicted && !actual)
        ++fp;
      else if (!predicted && actual)
        ++fn;
      else
        ++tn;
    }
  }

  Metrics m;
  m.accuracy = static_cast<double>(tp + tn) /
               static_cast<double>(tp + tn + fp + fn);
  const double prec =
      tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                  : 0.0;
  const double rec =
      tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                  : 0.0;
  m.f1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// fold statistics

double t_quantile_975(int df) {
  static constexpr double kTable[30] = {
      12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
      2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
      2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (df < 1) throw ContractError("t quantile needs df >= 1");
  if (df <= 30) return kTable[df - 1];
  return 1.960;
}

MeanCi mean_ci95(std::span<const double> values) {
  if (values.empty()) throw ContractError("mean_ci95 of an empty list");
  MeanCi out;
  const double k = static_cast<double>(values.size());
  for (double v : values) out.mean += v;
  out.mean /= k;
  if (values.size() == 1) return out;

  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  const double s = std::sqrt(ss / (k - 1.0));
  out.half = t_quantile_975(static_cast<int>(values.size()) - 1) * s /
             std::sqrt(k);
  return out;
}

std::string format_mean_ci(double mean, double half) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f±%.4f", mean, half);
  return buf;
}

FoldReport summarize_folds(const std::vector<Metrics>& per_fold) {
  FoldReport report;
  report.per_fold = per_fold;
  std::vector<double> acc, f1;
  acc.reserve(per_fold.size());
  f1.reserve(per_fold.size());
  for (const Metrics& m : per_fold) {
    acc.push_back(m.accuracy);
    f1.push_back(m.f1);
  }
  const MeanCi a = mean_ci95(acc);
  const MeanCi f = mean_ci95(f1);
  report.mean_accuracy = a.mean;
  report.ci95_accuracy = a.half;
  report.mean_f1 = f.mean;
  report.ci95_f1 = f.half;
  return report;
}

// ---------------------------------------------------------------------------
// protocols

namespace {

FoldRun run_single_fold(const DomainShiftData& data,
                        const ProtocolConfig& protocol,
                        const TrainConfig& config,
                        const ModelConfig& model_template, int fold) {
  const uint64_t root = protocol.seed;
  TrainConfig cfg = config;
  cfg.seed = derive_seed(root, "fold-stream", static_cast<uint64_t>(fold));

  ModelConfig mc = model_template;
  const Sample& probe = data.source.samples.front();
  mc.input_h = probe.pixels.dim(0);
  mc.input_w = probe.pixels.dim(1);
  mc.seed = derive_seed(root, "fold-init", static_cast<uint64_t>(fold));

  FoldRun run;
  run.model = init_params(mc);

  if (protocol.method == Method::SourceOnly) {
    run.history = train_source_only(run.model, data.source, cfg);
  } else {
    const std::vector<Sample> shots = select_n_shot(
        data.target_train, protocol.n,
        derive_seed(root, "fold-shots", static_cast<uint64_t>(fold)));
    const std::vector<Sample> group = sample_group(
        data.source, protocol.source_group_size,
        derive_seed(root, "fold-source-group", static_cast<uint64_t>(fold)));
    const uint64_t stream_seed = cfg.seed;
    run.history = train(
        run.model,
        [&group, &shots, &cfg, stream_seed](int epoch) {
          PairStream stream = build_pairs(
              group, shots,
              derive_seed(stream_seed, "epoch", static_cast<uint64_t>(epoch)));
          return staggered_batches(stream, cfg.batch_size);
        },
        cfg);
  }
  run.metrics = evaluate(run.model, data.target_test);
  return run;
}

}  // namespace

FoldReport k_fold_protocol(const DomainShiftData& data,
                           const ProtocolConfig& protocol,
                           const TrainConfig& config,
                           const ModelConfig& model_template,
                           std::vector<FoldRun>* runs) {
  if (protocol.k < 2) throw ConfigError("fold protocol needs k >= 2");
  if (data.source.samples.empty() || data.target_test.samples.empty())
    throw DataError("fold protocol needs source and target test data");
  data.target_test.check_ids_unique();

  std::vector<FoldRun> fold_runs(static_cast<size_t>(protocol.k));
  std::vector<std::string> errors(static_cast<size_t>(protocol.k));

  const int jobs = std::max(1, std::min(protocol.jobs, protocol.k));
  std::atomic<int> next_fold{0};
  auto worker = [&]() {
    while (true) {
      const int fold = next_fold.fetch_add(1);
      if (fold >= protocol.k) break;
      try {
        fold_runs[static_cast<size_t>(fold)] =
            run_single_fold(data, protocol, config, model_template, fold);
      } catch (const std::exception& e) {
        errors[static_cast<size_t>(fold)] = e.what();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(jobs));
    for (int i = 0; i < jobs; ++i) threads.emplace_back(worker);
    for (std::thread& th : threads) th.join();
  }

  for (int fold = 0; fold < protocol.k; ++fold)
    if (!errors[static_cast<size_t>(fold)].empty())
      throw DataError("fold " + std::to_string(fold) + " failed: " +
                      errors[static_cast<size_t>(fold)]);

  std::vector<Metrics> per_fold;
  per_fold.reserve(fold_runs.size());
  for (const FoldRun& r : fold_runs) per_fold.push_back(r.metrics);
  if (runs) *runs = std::move(fold_runs);
  return summarize_folds(per_fold);
}

std::vector<AblationRow> ablation_run(const DomainShiftData& data,
                                      const ProtocolConfig& protocol,
                                      const TrainConfig& config,
                                      const ModelConfig& model_template) {
  const AblationRow variants[] = {
      {"c+cp+cd", LossMask{true, true}, {}},
      {"c+cp", LossMask{true, false}, {}},
      {"c+cd", LossMask{false, true}, {}},
  };
  std::vector<AblationRow> rows;
  for (const AblationRow& v : variants) {
    TrainConfig cfg = config;
    cfg.mask = v.mask;
    AblationRow row = v;
    row.report = k_fold_protocol(data, protocol, cfg, model_template);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SweepRow> n_shot_sweep(const DomainShiftData& data,
                                   std::span<const int> ns,
                                   const ProtocolConfig& protocol,
                                   const TrainConfig& config,
                                   const ModelConfig& model_template) {
  if (ns.empty()) throw ConfigError("n-shot sweep needs at least one n");
  const int max_n = *std::max_element(ns.begin(), ns.end());
  const int pos = data.target_train.count_label(1);
  const int neg = data.target_train.count_label(0);
  if (pos < max_n || neg < max_n)
    throw DataError("target train pool supports at most " +
                    std::to_string(std::min(pos, neg)) +
                    "-shot, sweep asks for " + std::to_string(max_n));

  std::vector<SweepRow> rows;
  for (int n : ns) {
    ProtocolConfig p = protocol;
    p.n = n;
    SweepRow row;
    row.n = n;
    row.report = k_fold_protocol(data, p, config, model_template);
    rows.push_back(std::move(row));
  }
  return rows;
}

void append_history(std::string* out, const std::string& run_id, int fold,
                    const std::vector<LossBreakdown>& history,
                    const Metrics& final_metrics, int epochs) {
  char line[160];
  for (size_t e = 0; e < history.size(); ++e) {
    const LossBreakdown& b = history[e];
    const struct {
      const char* name;
      double value;
    } metrics[] = {{"l_c", b.l_c},
                   {"l_cp", b.l_cp},
                   {"l_cd", b.l_cd},
                   {"l_overall", b.l_overall}};
    for (const auto& m : metrics) {
      std::snprintf(line, sizeof(line), "%s\t%d\t%zu\t%s\t%.17g\n",
                    run_id.c_str(), fold, e, m.name, m.value);
      *out += line;
    }
  }
  std::snprintf(line, sizeof(line), "%s\t%d\t%d\taccuracy\t%.17g\n",
                run_id.c_str(), fold, epochs, final_metrics.accuracy);
  *out += line;
  std::snprintf(line, sizeof(line), "%s\t%d\t%d\tf1\t%.17g\n", run_id.c_str(),
                fold, epochs, final_metrics.f1);
  *out += line;
}

}  // namespace xda
