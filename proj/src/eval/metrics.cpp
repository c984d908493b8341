#include "patchguard/eval/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "patchguard/core/errors.hpp"

namespace patchguard::eval {

void ScoreAccumulator::add(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DimensionMismatch("scores and labels differ in length");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw FormatError("non-finite score");
    const bool pos = labels[i] != 0;
    groups_.push_back({scores[i], pos ? 1u : 0u, pos ? 0u : 1u});
  }
  // Keep memory bounded: fold the unsorted tail in once it dominates.
  if (groups_.size() > 2 * sorted_ + (1u << 20)) compact();
}

void ScoreAccumulator::merge(const ScoreAccumulator& other) {
  other.compact();
  groups_.insert(groups_.end(), other.groups_.begin(), other.groups_.end());
  compact();
}

void ScoreAccumulator::compact() const {
  if (sorted_ == groups_.size()) return;
  std::sort(groups_.begin(), groups_.end(), [](const Group& a, const Group& b) { return a.score < b.score; });
  std::size_t out = 0;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (out > 0 && groups_[out - 1].score == groups_[i].score) {
      groups_[out - 1].pos += groups_[i].pos;
      groups_[out - 1].neg += groups_[i].neg;
    } else {
      groups_[out++] = groups_[i];
    }
  }
  groups_.resize(out);
  sorted_ = out;
}

const std::vector<ScoreAccumulator::Group>& ScoreAccumulator::groups() const {
  compact();
  return groups_;
}

std::uint64_t ScoreAccumulator::positives() const {
  std::uint64_t n = 0;
  for (const auto& g : groups_) n += g.pos;
  return n;
}

std::uint64_t ScoreAccumulator::negatives() const {
  std::uint64_t n = 0;
  for (const auto& g : groups_) n += g.neg;
  return n;
}

double ScoreAccumulator::auroc() const {
  compact();
  const std::uint64_t p = positives(), n = negatives();
  if (p == 0 || n == 0) throw Undefined("AUROC needs both positive and negative pixels");
  // 2·U in integers: each (pos, neg) pair counts 2 when ordered, 1 when tied.
  unsigned __int128 twice_u = 0;
  std::uint64_t below = 0;
  for (const auto& g : groups_) {
    twice_u += static_cast<unsigned __int128>(g.pos) * (2 * below + g.neg);
    below += g.neg;
  }
  return static_cast<double>(static_cast<long double>(twice_u) / (2.0L * p * n));
}

double pixel_auroc(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  ScoreAccumulator acc;
  acc.add(scores, labels);
  return acc.auroc();
}

double f1_at(const ScoreAccumulator& pooled, float threshold) {
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (const auto& g : pooled.groups()) {
    if (g.score >= threshold) {
      tp += g.pos;
      fp += g.neg;
    } else {
      fn += g.pos;
    }
  }
  const std::uint64_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

ThresholdResult select_threshold(const ScoreAccumulator& pooled) {
  const auto& groups = pooled.groups();
  const std::uint64_t total_pos = pooled.positives(), total_neg = pooled.negatives();
  if (total_pos == 0) throw Undefined("threshold selection needs at least one defective pixel");
  if (total_neg == 0) return {0.0f, 1.0};

  std::vector<float> candidates;
  if (groups.size() <= kExactSweepLimit) {
    for (const auto& g : groups) candidates.push_back(g.score);
  } else {
    // Quantiles of the pooled pixel distribution (not of distinct values).
    const std::uint64_t total = total_pos + total_neg;
    std::size_t gi = 0;
    std::uint64_t seen = groups[0].pos + groups[0].neg;
    for (int q = 0; q < 256; ++q) {
      const auto rank = static_cast<std::uint64_t>(std::floor(static_cast<double>(q) / 255.0 * static_cast<double>(total - 1)));
      while (seen <= rank) {
        ++gi;
        seen += groups[gi].pos + groups[gi].neg;
      }
      candidates.push_back(groups[gi].score);
    }
    candidates.push_back(groups.back().score);
  }
  candidates.push_back(0.0f);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  // Sweep from the top: groups with score ≥ t are predicted positive.
  ThresholdResult best{0.0f, -1.0};
  std::uint64_t tp = 0, fp = 0;
  std::size_t gi = groups.size();
  for (std::size_t ci = candidates.size(); ci-- > 0;) {
    const float t = candidates[ci];
    while (gi > 0 && groups[gi - 1].score >= t) {
      --gi;
      tp += groups[gi].pos;
      fp += groups[gi].neg;
    }
    const std::uint64_t fn = total_pos - tp;
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    // Descending sweep: only a strictly better F1 moves to a lower threshold.
    if (f1 > best.f1) best = {t, f1};
  }
  return best;
}

ThresholdResult select_threshold(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  ScoreAccumulator acc;
  acc.add(scores, labels);
  return select_threshold(acc);
}

}  // namespace patchguard::eval
