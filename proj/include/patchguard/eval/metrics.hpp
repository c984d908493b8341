#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace patchguard::eval {

/// Pooled (score, label) counts for rank statistics. Equal scores are
/// merged, so masked maps (mostly exact zeros) stay small; accumulators
/// from different workers can be merged in any order.
class ScoreAccumulator {
 public:
  void add(std::span<const float> scores, std::span<const std::uint8_t> labels);
  void merge(const ScoreAccumulator& other);

  std::uint64_t positives() const;
  std::uint64_t negatives() const;

  struct Group {
    float score;
    std::uint64_t pos;
    std::uint64_t neg;
  };
  /// Distinct scores in ascending order.
  const std::vector<Group>& groups() const;

  /// Mann–Whitney AUROC with midrank ties; throws Undefined without both classes.
  double auroc() const;

 private:
  void compact() const;
  mutable std::vector<Group> groups_;
  mutable std::size_t sorted_ = 0;  // prefix of groups_ that is compacted
};

double pixel_auroc(std::span<const float> scores, std::span<const std::uint8_t> labels);

struct ThresholdResult {
  float threshold = 0.0f;
  double f1 = 0.0;
};

/// Distinct-score counts up to this size are swept exactly; larger pools use
/// the 256-quantile grid plus {0, max}.
inline constexpr std::size_t kExactSweepLimit = 65536;

/// Pixel-F1 maximizing threshold (prediction = score ≥ t); ties go to the
/// larger threshold. All-positive input yields (0, 1); no positives throws
/// Undefined.
ThresholdResult select_threshold(const ScoreAccumulator& pooled);
ThresholdResult select_threshold(std::span<const float> scores, std::span<const std::uint8_t> labels);

/// F1 of the prediction score ≥ t.
double f1_at(const ScoreAccumulator& pooled, float threshold);

}  // namespace patchguard::eval
