#include "ivhazard/rng.hpp"

#include <cmath>
#include <numbers>

namespace ivhazard {

namespace {

constexpr std::uint32_t kMult0 = 0xD2511F53u;
constexpr std::uint32_t kMult1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

CounterRng::CounterRng(std::uint64_t seed, std::uint32_t replication,
                       std::uint32_t entity) {
  key_[0] = static_cast<std::uint32_t>(seed);
  key_[1] = static_cast<std::uint32_t>(seed >> 32);
  ctr_[0] = 0;
  ctr_[1] = 0;
  ctr_[2] = entity;
  ctr_[3] = replication;
}

void CounterRng::refill() {
  std::uint32_t c0 = ctr_[0], c1 = ctr_[1], c2 = ctr_[2], c3 = ctr_[3];
  std::uint32_t k0 = key_[0], k1 = key_[1];
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMult0, c0, hi0, lo0);
    mulhilo(kMult1, c2, hi1, lo1);
    std::uint32_t n0 = hi1 ^ c1 ^ k0;
    std::uint32_t n1 = lo1;
    std::uint32_t n2 = hi0 ^ c3 ^ k1;
    std::uint32_t n3 = lo0;
    c0 = n0;
    c1 = n1;
    c2 = n2;
    c3 = n3;
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  buf_[0] = (static_cast<std::uint64_t>(c1) << 32) | c0;
  buf_[1] = (static_cast<std::uint64_t>(c3) << 32) | c2;
  buf_pos_ = 0;
  // Advance the block counter; c1 extends it so long streams cannot wrap.
  if (++ctr_[0] == 0) ++ctr_[1];
}

std::uint64_t CounterRng::next_u64() {
  if (buf_pos_ >= 2) refill();
  return buf_[buf_pos_++];
}

double CounterRng::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  double u1 = uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_normal_ = true;
  return r * std::cos(theta);
}

double CounterRng::gumbel() { return -std::log(-std::log(uniform())); }

}  // namespace ivhazard
