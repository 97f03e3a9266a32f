#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "pseudolab/common.hpp"
#include "pseudolab/nn/module.hpp"

namespace pseudolab::nn {

enum class OptimizerKind { adam, rmsprop };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "rmsprop"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "rmsprop") return OptimizerKind::rmsprop;
  throw ConfigError("unknown optimizer '" + s + "'");
}

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) or RMSprop (decay 0.9, eps 1e-8
/// inside the square root). Weight decay is coupled: wd * p is added to the
/// gradient before the moment updates.
class Optimizer {
 public:
  double learning_rate;
  double weight_decay;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double rho = 0.9;
  double eps = 1e-8;

  Optimizer(OptimizerKind kind, ParameterSet params, double lr, double wd = 0.0)
      : learning_rate(lr), weight_decay(wd), kind_(kind), params_(std::move(params)) {
    for (const auto& [name, t] : params_.entries) {
      first_.emplace_back(t.numel(), 0.0);
      second_.emplace_back(t.numel(), 0.0);
    }
  }

  [[nodiscard]] OptimizerKind kind() const { return kind_; }
  [[nodiscard]] long steps() const { return t_; }

  void zero_grad() { params_.zero_grad(); }

  /// One update from the gradients currently stored on the parameters.
  void step() {
    for (const auto& [name, t] : params_.entries) {
      if (!t.has_grad()) continue;
      for (double g : t.grad()) {
        if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter '" + name + "'");
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_.entries[k].second;
      if (!p.has_grad() && weight_decay == 0.0) continue;
      auto w = p.data();
      auto g = p.grad();
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + weight_decay * w[i];
        if (kind_ == OptimizerKind::adam) {
          m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
          v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
          w[i] -= learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        } else {
          v[i] = rho * v[i] + (1.0 - rho) * gi * gi;
          w[i] -= learning_rate * gi / std::sqrt(v[i] + eps);
        }
      }
    }
  }

 private:
  OptimizerKind kind_;
  ParameterSet params_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  long t_ = 0;
};

enum class SchedulerKind { none, reduce_on_plateau, halve_each_epoch };

inline std::string to_string(SchedulerKind k) {
  switch (k) {
    case SchedulerKind::none: return "none";
    case SchedulerKind::reduce_on_plateau: return "reduce_on_plateau";
    case SchedulerKind::halve_each_epoch: return "halve_each_epoch";
  }
  return "none";
}

inline SchedulerKind parse_scheduler(const std::string& s) {
  for (auto k : {SchedulerKind::none, SchedulerKind::reduce_on_plateau, SchedulerKind::halve_each_epoch}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown scheduler '" + s + "'");
}

/// Epoch-end learning-rate policy.
///
/// reduce_on_plateau multiplies the rate by `factor` once `patience`
/// consecutive epochs fail to improve on the best validation loss, then
/// restarts the count. halve_each_epoch multiplies by 0.5 after every epoch.
class LrScheduler {
 public:
  explicit LrScheduler(SchedulerKind kind, double factor = 0.5, int patience = 5)
      : kind_(kind), factor_(factor), patience_(patience) {}

  /// Returns the learning rate for the next epoch.
  double on_epoch_end(Optimizer& opt, double val_loss) {
    switch (kind_) {
      case SchedulerKind::none:
        break;
      case SchedulerKind::halve_each_epoch:
        opt.learning_rate *= 0.5;
        break;
      case SchedulerKind::reduce_on_plateau:
        if (val_loss < best_) {
          best_ = val_loss;
          bad_epochs_ = 0;
        } else if (++bad_epochs_ >= patience_) {
          opt.learning_rate *= factor_;
          bad_epochs_ = 0;
        }
        break;
    }
    return opt.learning_rate;
  }

  [[nodiscard]] SchedulerKind kind() const { return kind_; }

 private:
  SchedulerKind kind_;
  double factor_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

enum class StopDecision { keep_going, stop };

/// Tracks the best validation loss and snapshots the parameters that produced
/// it. Signals stop once `patience` consecutive epochs (at least one) fail to
/// improve.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  StopDecision check(double val_loss, const ParameterSet& params) {
    if (val_loss < best_loss_) {
      best_loss_ = val_loss;
      epochs_since_best_ = 0;
      best_snapshot_ = params.snapshot();
      best_epoch_ = epoch_;
      ++epoch_;
      return StopDecision::keep_going;
    }
    ++epoch_;
    ++epochs_since_best_;
    return epochs_since_best_ >= std::max(patience_, 1) ? StopDecision::stop : StopDecision::keep_going;
  }

  /// Writes the best snapshot back into `params` (no-op before any check).
  void restore_best(ParameterSet& params) const {
    if (!best_snapshot_.empty()) params.restore(best_snapshot_);
  }

  [[nodiscard]] double best_loss() const { return best_loss_; }
  [[nodiscard]] int epochs_since_best() const { return epochs_since_best_; }
  /// Zero-based index of the epoch that produced the best loss, -1 if none.
  [[nodiscard]] int best_epoch() const { return best_epoch_; }

 private:
  int patience_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  int epochs_since_best_ = 0;
  int epoch_ = 0;
  int best_epoch_ = -1;
  std::vector<std::vector<double>> best_snapshot_;
};

/// One row of a training trace.
struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

inline void write_trace_csv(std::ostream& os, const std::vector<EpochRecord>& trace) {
  os << "epoch,train_loss,val_loss,lr\n";
  for (const auto& r : trace) {
    os << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
       << format_double(r.lr) << '\n';
  }
}

}  // namespace pseudolab::nn
