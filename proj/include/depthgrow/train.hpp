#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "depthgrow/bleu.hpp"
#include "depthgrow/data.hpp"
#include "depthgrow/model.hpp"
#include "depthgrow/optim.hpp"

namespace depthgrow {

// Teacher-forced held-out metrics: (mean NLL per non-pad token, accuracy).
// Plain NLL (no label smoothing), eval mode, over the requested view.
template <typename T>
std::pair<double, double> evaluate_loss_acc(const TransformerModel<T>& model,
                                            const std::vector<PaddedBatch>& batches,
                                            bool deep_view) {
  double loss_sum = 0.0;
  int64_t live_total = 0, correct_total = 0;
  for (const auto& b : batches) {
    Graph<T> g(false);
    auto logits = deep_view ? model.forward_net_d(g, b, RunMode::kEval)
                            : model.forward_net_s(g, b, RunMode::kEval);
    auto loss = g.cross_entropy(logits, b.tgt_out, T(0), kPadId);
    int64_t live = 0;
    int v = logits.dim(1);
    for (size_t i = 0; i < b.tgt_out.size(); ++i) {
      if (b.tgt_out[i] == kPadId) continue;
      ++live;
      const T* row = logits.data() + i * static_cast<size_t>(v);
      int best = 0;
      for (int j = 1; j < v; ++j)
        if (row[j] > row[best]) best = j;
      if (best == b.tgt_out[i]) ++correct_total;
    }
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(live);
    live_total += live;
  }
  if (live_total == 0) throw DataError("evaluate: no live target tokens");
  return {loss_sum / static_cast<double>(live_total),
          static_cast<double>(correct_total) / static_cast<double>(live_total)};
}

struct TrainOutcome {
  int64_t steps = 0;
  double train_loss = 0.0;   // mean over the last logging interval
  double valid_loss = 0.0;   // final held-out NLL
  double valid_acc = 0.0;
};

// Two-stage training driver. Stage 1 trains the whole (shallow) model on the
// net_S loss; stage 2 trains only the top module on the net_D loss with the
// frozen bottom running in eval mode. The freeze audit runs at every
// checkpoint in stage 2 and any violation aborts the run.
template <typename T>
class Trainer {
 public:
  using CheckpointFn = std::function<void(const TransformerModel<T>&, int64_t step)>;

  Trainer(TransformerModel<T>& model, TrainConfig cfg, std::vector<IdPair> train_pairs,
          std::vector<IdPair> valid_pairs)
      : model_(model), cfg_(std::move(cfg)), train_(std::move(train_pairs)), valid_(std::move(valid_pairs)) {
    cfg_.validate();
    if (train_.empty()) throw DataError("trainer: empty training set");
    if (cfg_.stage == 2) {
      if (!model_.has_top()) throw ConfigError("stage 2 requires a grown model");
      baseline_ = frozen_parameter_hashes(model_);
      if (baseline_.empty()) throw ConfigError("stage 2 requires frozen bottom parameters");
    }
    valid_batches_ = make_batches(valid_, cfg_.batch_tokens, /*seed=*/0, /*epoch=*/0);
  }

  TrainOutcome run(const std::string& log_path = "", CheckpointFn on_checkpoint = nullptr,
                   int64_t start_step = 0) {
    model_.set_dropout_override(cfg_.dropout);
    const RunMode mode = cfg_.stage == 2 ? RunMode::kTrainStage2 : RunMode::kTrainStage1;
    const bool deep = cfg_.stage == 2;
    AdamOptimizer<T> opt(model_.parameters(), cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps);

    std::ofstream log;
    if (!log_path.empty()) {
      log.open(log_path, std::ios::trunc);
      if (!log) throw DataError("trainer: cannot write log " + log_path);
      log << "step,stage,lr,train_loss,valid_loss,valid_acc\n";
    }

    TrainOutcome outcome;
    double interval_loss = 0.0;
    int interval_count = 0;
    int64_t step = 0;
    int64_t batch_index = 0;
    bool checkpointed_at_end = false;
    for (int64_t epoch = 0; step < cfg_.max_steps; ++epoch) {
      auto batches = make_batches(train_, cfg_.batch_tokens, cfg_.seed, epoch);
      for (const auto& b : batches) {
        if (step >= cfg_.max_steps) break;
        ++batch_index;
        if (batch_index <= start_step) continue;  // resumed runs replay the schedule
        step = batch_index;

        Graph<T> g;
        g.set_dropout_stream(cfg_.seed, step);
        auto logits = deep ? model_.forward_net_d(g, b, mode) : model_.forward_net_s(g, b, mode);
        auto loss = g.cross_entropy(logits, b.tgt_out, static_cast<T>(cfg_.label_smoothing), kPadId);
        double loss_value = static_cast<double>(loss.item());
        if (std::isnan(loss_value))
          throw NumericError("training diverged: NaN loss at step " + std::to_string(step));
        g.backward(loss);
        opt.step(lr_schedule(step, model_.cfg.d_model, cfg_.warmup_steps));
        model_.zero_grad();

        interval_loss += loss_value;
        ++interval_count;
        outcome.steps = step;

        if (step % cfg_.log_every == 0 || step == cfg_.max_steps) {
          auto [vl, va] = valid_metrics(deep);
          outcome.train_loss = interval_loss / interval_count;
          outcome.valid_loss = vl;
          outcome.valid_acc = va;
          if (log.is_open()) {
            char row[160];
            std::snprintf(row, sizeof(row), "%lld,%d,%.8g,%.6f,%.6f,%.6f\n",
                          static_cast<long long>(step), cfg_.stage,
                          lr_schedule(step, model_.cfg.d_model, cfg_.warmup_steps),
                          outcome.train_loss, vl, va);
            log << row;
          }
          interval_loss = 0.0;
          interval_count = 0;
        }
        if (step % cfg_.checkpoint_every == 0 || step == cfg_.max_steps) {
          checkpoint(on_checkpoint, step);
          checkpointed_at_end = step == cfg_.max_steps;
        }
      }
      if (batches.empty()) throw DataError("trainer: no batches produced");
    }
    if (!checkpointed_at_end) checkpoint(on_checkpoint, step);
    if (cfg_.max_steps == 0) {
      auto [vl, va] = valid_metrics(deep);
      outcome.valid_loss = vl;
      outcome.valid_acc = va;
    }
    return outcome;
  }

  const std::vector<PaddedBatch>& valid_batches() const { return valid_batches_; }

 private:
  std::pair<double, double> valid_metrics(bool deep) {
    if (valid_batches_.empty()) return {0.0, 0.0};
    return evaluate_loss_acc(model_, valid_batches_, deep);
  }

  void checkpoint(const CheckpointFn& fn, int64_t step) {
    if (cfg_.stage == 2) {
      auto report = freeze_audit(model_, baseline_);
      if (!report.clean())
        throw FreezeAuditError("freeze audit failed at step " + std::to_string(step) + ": " +
                               report.violations.front() + " changed");
    }
    if (fn) fn(model_, step);
  }

  TransformerModel<T>& model_;
  TrainConfig cfg_;
  std::vector<IdPair> train_, valid_;
  std::vector<PaddedBatch> valid_batches_;
  std::map<std::string, uint64_t> baseline_;
};

// Stage-1 driver: trains every parameter of a shallow model end to end.
template <typename T>
TrainOutcome train_stage1(TransformerModel<T>& model, const std::vector<IdPair>& train_pairs,
                          const std::vector<IdPair>& valid_pairs, TrainConfig cfg,
                          const std::string& log_path = "",
                          typename Trainer<T>::CheckpointFn on_checkpoint = nullptr) {
  cfg.stage = 1;
  Trainer<T> t(model, cfg, train_pairs, valid_pairs);
  return t.run(log_path, std::move(on_checkpoint));
}

// Stage-2 driver: optimizes only the top module against the net_D loss.
template <typename T>
TrainOutcome train_stage2(TransformerModel<T>& model, const std::vector<IdPair>& train_pairs,
                          const std::vector<IdPair>& valid_pairs, TrainConfig cfg,
                          const std::string& log_path = "",
                          typename Trainer<T>::CheckpointFn on_checkpoint = nullptr) {
  cfg.stage = 2;
  Trainer<T> t(model, cfg, train_pairs, valid_pairs);
  return t.run(log_path, std::move(on_checkpoint));
}

}  // namespace depthgrow
