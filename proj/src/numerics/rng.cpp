#include "ec2lab/numerics/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace ec2lab::num {

namespace {

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

double Rng::normal() {
  double u1 = uniform_open();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

double Rng::gumbel() {
  double u = uniform_open();
  // u == 1 would give log(0); nudge inside the open interval.
  if (u >= 1.0) u = 1.0 - 1e-16;
  return -std::log(-std::log(u < 1e-300 ? 1e-300 : u));
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
  return static_cast<int>((static_cast<__uint128_t>(next_u64()) *
                           static_cast<__uint128_t>(n)) >>
                          64);
}

Rng Rng::split(std::string_view label) const {
  return Rng(mix(key_ ^ fnv1a(label)), 0);
}

Rng Rng::split(uint64_t index) const {
  return Rng(mix(key_ ^ (0xD1B54A32D192ED03ULL * (index + 1))), 0);
}

}  // namespace ec2lab::num
