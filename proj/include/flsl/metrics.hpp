#pragma once

#include <cstdint>
#include <span>

#include "flsl/synth.hpp"

namespace flsl {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

struct Metrics {
  ConfusionCounts counts;
  double accuracy = 0.0;
  double f1 = 0.0;
  double error_rate = 0.0;
};

// F1 is 0 whenever tp == 0. Accuracy and error rate are both computed from
// the counts directly, so they sum to 1 up to rounding.
Metrics metrics_from_counts(const ConfusionCounts& counts);

ConfusionCounts count_confusion(std::span<const LampState> predictions, std::span<const LampState> labels,
                                LampState positive = LampState::On);

Metrics compute_metrics(std::span<const LampState> predictions, std::span<const LampState> labels,
                        LampState positive = LampState::On);

// A lamp whose observed state disagrees with its schedule is faulty.
constexpr bool fault_flag(LampState predicted, LampState expected) noexcept { return predicted != expected; }

}  // namespace flsl
