#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace pairforge {

// Philox4x32-10 counter-based generator. The full state is (seed, counter,
// lane), so a stream can be saved and resumed exactly on any platform.
class Philox {
 public:
  struct State {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;
    std::uint32_t lane = 4;
    friend bool operator==(const State&, const State&) = default;
  };

  explicit Philox(std::uint64_t seed = 0) { state_.seed = seed; }
  explicit Philox(const State& state) : state_(state) {
    if (state_.lane < 4) Refill(state_.counter - 1);
  }

  std::uint32_t NextU32();
  std::uint64_t NextU64();
  // Uniform in [0, 1).
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Unbiased uniform integer in [0, n); n must be positive.
  std::uint64_t UniformInt(std::uint64_t n);
  double Normal();

  // k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> SampleWithoutReplacement(std::size_t n,
                                                    std::size_t k);

  const State& state() const { return state_; }

  static std::array<std::uint32_t, 4> Block(std::uint64_t seed,
                                            std::uint64_t counter);

 private:
  void Refill(std::uint64_t counter);

  State state_;
  std::array<std::uint32_t, 4> block_{};
};

}  // namespace pairforge
