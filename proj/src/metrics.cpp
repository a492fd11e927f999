#include "flsl/metrics.hpp"

#include "flsl/error.hpp"

namespace flsl {

Metrics metrics_from_counts(const ConfusionCounts& c) {
  Metrics m;
  m.counts = c;
  const auto n = static_cast<double>(c.total());
  if (c.total() > 0) {
    m.accuracy = static_cast<double>(c.tp + c.tn) / n;
    m.error_rate = static_cast<double>(c.fp + c.fn) / n;
  }
  if (c.tp > 0) m.f1 = 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
  return m;
}

ConfusionCounts count_confusion(std::span<const LampState> predictions, std::span<const LampState> labels,
                                LampState positive) {
  if (predictions.size() != labels.size()) {
    throw InvalidArgument("predictions and labels differ in length");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred_pos = predictions[i] == positive;
    const bool true_pos = labels[i] == positive;
    if (pred_pos) {
      (true_pos ? c.tp : c.fp) += 1;
    } else {
      (true_pos ? c.fn : c.tn) += 1;
    }
  }
  return c;
}

Metrics compute_metrics(std::span<const LampState> predictions, std::span<const LampState> labels,
                        LampState positive) {
  if (labels.empty()) throw InvalidArgument("cannot compute metrics of an empty set");
  return metrics_from_counts(count_confusion(predictions, labels, positive));
}

}  // namespace flsl
