#pragma once

#include <cstdint>

namespace ivhazard {

// Philox4x32-10 counter-based generator.  Streams are indexed by
// (replication, entity) through the counter words, so any replication or
// entity can be regenerated in isolation and parallel schedules cannot
// change the draws.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint32_t replication,
             std::uint32_t entity);

  std::uint64_t next_u64();
  double uniform();  // strictly inside (0,1)
  double normal();   // standard normal via Box-Muller
  double gumbel();   // standard Gumbel (max), -log(-log(U))

 private:
  void refill();

  std::uint32_t key_[2];
  std::uint32_t ctr_[4];
  std::uint64_t buf_[2];
  int buf_pos_ = 2;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace ivhazard
