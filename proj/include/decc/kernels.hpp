#pragma once

// Counting kernels behind the metric functions. Every kernel exists twice:
// `serial` is the straightforward reference used by the tests, `parallel` is
// the OpenMP version the library calls. Both produce identical integer counts,
// so derived metrics are bit-identical regardless of thread count.

#include <cstdint>
#include <span>

namespace decc::kernels {

enum class ThresholdDirection { reliable_if_leq, reliable_if_geq };

struct BinaryCounts {
  std::uint64_t n = 0;
  std::uint64_t correct = 0;          // Acc = 1
  std::uint64_t covered = 0;          // R = 1
  std::uint64_t covered_correct = 0;  // R = 1 and Acc = 1
  std::uint64_t disagree = 0;         // R != Acc

  bool operator==(const BinaryCounts&) const = default;
};

inline bool reliable_at(double score, double threshold, ThresholdDirection dir) {
  return dir == ThresholdDirection::reliable_if_leq ? score <= threshold : score >= threshold;
}

namespace serial {

/// verdicts/correct hold 0 or 1 and have equal length.
BinaryCounts count(std::span<const std::uint8_t> verdicts, std::span<const std::uint8_t> correct);

/// out[k] receives the counts obtained by thresholding `scores` at thresholds[k].
void sweep(std::span<const double> scores, std::span<const std::uint8_t> correct,
           std::span<const double> thresholds, ThresholdDirection dir, std::span<BinaryCounts> out);

}  // namespace serial

namespace parallel {

BinaryCounts count(std::span<const std::uint8_t> verdicts, std::span<const std::uint8_t> correct);

void sweep(std::span<const double> scores, std::span<const std::uint8_t> correct,
           std::span<const double> thresholds, ThresholdDirection dir, std::span<BinaryCounts> out);

}  // namespace parallel

}  // namespace decc::kernels
