#include "decc/kernels.hpp"

#include <cstddef>

namespace decc::kernels::serial {

BinaryCounts count(std::span<const std::uint8_t> verdicts, std::span<const std::uint8_t> correct) {
  BinaryCounts c;
  c.n = verdicts.size();
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const bool r = verdicts[i] != 0;
    const bool acc = correct[i] != 0;
    c.correct += acc;
    c.covered += r;
    c.covered_correct += r && acc;
    c.disagree += r != acc;
  }
  return c;
}

void sweep(std::span<const double> scores, std::span<const std::uint8_t> correct,
           std::span<const double> thresholds, ThresholdDirection dir, std::span<BinaryCounts> out) {
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    BinaryCounts c;
    c.n = scores.size();
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool r = reliable_at(scores[i], thresholds[k], dir);
      const bool acc = correct[i] != 0;
      c.correct += acc;
      c.covered += r;
      c.covered_correct += r && acc;
      c.disagree += r != acc;
    }
    out[k] = c;
  }
}

}  // namespace decc::kernels::serial
