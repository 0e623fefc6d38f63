#include "cascade/segmetrics.hpp"

namespace cascade::segmetrics {

ConfusionCounts confusion_counts(const volcore::LabelVolume& pred, const volcore::LabelVolume& truth) {
  if (pred.dims() != truth.dims()) throw Error(Errc::DimsMismatch, "prediction and truth dims differ");
  ConfusionCounts c;
  const auto& p = pred.data();
  const auto& t = truth.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pi = p[i] != 0, ti = t[i] != 0;
    if (pi && ti) ++c.tp;
    else if (pi) ++c.fp;
    else if (ti) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double dice(const ConfusionCounts& c) {
  const auto denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

std::optional<double> sensitivity(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

std::optional<double> specificity(const ConfusionCounts& c) {
  if (c.tn + c.fp == 0) return std::nullopt;
  return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

std::optional<double> precision(const ConfusionCounts& c) {
  if (c.tp + c.fp == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

}  // namespace cascade::segmetrics
