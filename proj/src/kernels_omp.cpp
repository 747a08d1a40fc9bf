#include "decc/kernels.hpp"

#include <cstddef>
#include <cstdint>

#include <omp.h>

namespace decc::kernels::parallel {
namespace {

// Below this many elements the fork/join overhead dominates.
constexpr std::int64_t kMinParallel = 1 << 14;

}  // namespace

BinaryCounts count(std::span<const std::uint8_t> verdicts, std::span<const std::uint8_t> correct) {
  const auto n = static_cast<std::int64_t>(verdicts.size());
  const std::uint8_t* r = verdicts.data();
  const std::uint8_t* a = correct.data();
  std::uint64_t n_correct = 0, covered = 0, covered_correct = 0, disagree = 0;

#pragma omp parallel for schedule(static) if (n >= kMinParallel) \
    reduction(+ : n_correct, covered, covered_correct, disagree)
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint64_t ri = r[i] != 0;
    const std::uint64_t ai = a[i] != 0;
    n_correct += ai;
    covered += ri;
    covered_correct += ri & ai;
    disagree += ri ^ ai;
  }

  return BinaryCounts{static_cast<std::uint64_t>(n), n_correct, covered, covered_correct, disagree};
}

void sweep(std::span<const double> scores, std::span<const std::uint8_t> correct,
           std::span<const double> thresholds, ThresholdDirection dir, std::span<BinaryCounts> out) {
  const auto n = static_cast<std::int64_t>(scores.size());
  const auto t = static_cast<std::int64_t>(thresholds.size());
  const double* s = scores.data();
  const std::uint8_t* a = correct.data();

  std::uint64_t n_correct = 0;
#pragma omp parallel for schedule(static) if (n >= kMinParallel) reduction(+ : n_correct)
  for (std::int64_t i = 0; i < n; ++i) n_correct += a[i] != 0;

  // Thresholds are independent; each row is a reduction over all scores.
  // Parallelize over rows when there are enough of them, else over scores.
  const bool rows_parallel = t >= omp_get_max_threads() && n * t >= kMinParallel;

#pragma omp parallel for schedule(dynamic, 1) if (rows_parallel)
  for (std::int64_t k = 0; k < t; ++k) {
    const double th = thresholds[static_cast<std::size_t>(k)];
    std::uint64_t covered = 0, covered_correct = 0, disagree = 0;

#pragma omp parallel for schedule(static) if (!rows_parallel && n >= kMinParallel) \
    reduction(+ : covered, covered_correct, disagree)
    for (std::int64_t i = 0; i < n; ++i) {
      const std::uint64_t ri = reliable_at(s[i], th, dir);
      const std::uint64_t ai = a[i] != 0;
      covered += ri;
      covered_correct += ri & ai;
      disagree += ri ^ ai;
    }
    out[static_cast<std::size_t>(k)] =
        BinaryCounts{static_cast<std::uint64_t>(n), n_correct, covered, covered_correct, disagree};
  }
}

}  // namespace decc::kernels::parallel
