#pragma once

#include <cstdint>
#include <string>

#include "vitinv/error.hpp"

namespace vitinv {

/// Exact rational number over checked 128-bit integers. Arithmetic never
/// wraps: overflow throws OverflowError. Always normalized (gcd 1, den > 0).
class Rational {
 public:
  Rational() : num_(0), den_(1) {}
  Rational(long long n) : num_(n), den_(1) {}  // NOLINT: implicit by design
  static Rational ratio(__int128 num, __int128 den);

  Rational operator+(const Rational& o) const;
  Rational operator-(const Rational& o) const;
  Rational operator*(const Rational& o) const;
  Rational operator/(const Rational& o) const;
  bool operator==(const Rational& o) const { return num_ == o.num_ && den_ == o.den_; }
  bool operator!=(const Rational& o) const { return !(*this == o); }
  bool operator<(const Rational& o) const;
  bool operator>(const Rational& o) const { return o < *this; }
  bool operator<=(const Rational& o) const { return !(o < *this); }
  bool operator>=(const Rational& o) const { return !(*this < o); }

  bool is_integer() const { return den_ == 1; }
  double to_double() const;
  std::string to_string() const;  // "p" or "p/q"

  __int128 numerator() const { return num_; }
  __int128 denominator() const { return den_; }

 private:
  Rational(__int128 n, __int128 d) : num_(n), den_(d) {}
  __int128 num_;
  __int128 den_;  // > 0
};

/// Parameters of the analytic inversion-cost formulas: patches N, embedding
/// dim d, layers L, images I, iterations T, division factor v.
struct CostParams {
  long long N = 16;
  long long d = 64;
  long long L = 4;
  long long I = 1;
  long long T = 1;
  long long v = 4;
};

/// Self-attention and feed-forward totals, in abstract complexity units
/// (one unit per multiply of 4Nd^2 + 2N^2d and 8Nd^2).
struct CostPair {
  Rational sa;
  Rational ffn;
};

/// Dense inversion: all N patches for all T iterations.
CostPair cost_dmi(const CostParams& p);

/// Idealized sparse inversion: starts directly from N/v patches.
/// v == 1 degenerates to the dense cost.
CostPair cost_smi_star(const CostParams& p);

/// Progressive detachment: v stages of T/v iterations with
/// N_k = N(1 - (k-1)/v) active patches, per-image cost scaled by 1/v.
/// Closed forms; requires v >= 2.
CostPair cost_pri(const CostParams& p);

/// Cost-ordering verdicts plus the exact self-attention regime bound.
struct OrderingReport {
  Rational sa_bound;            // 6v(v-1)/(2v^2-3v+1) * d
  bool n_below_bound = false;   // N < sa_bound
  bool sa_ordering_holds = false;   // PRI < SMI* < DMI on SA cost
  bool ffn_ordering_holds = false;  // PRI < SMI* < DMI on FFN cost
  Rational ffn_ratio_pri_smi;   // (v+1)/(2v)
  Rational ffn_ratio_dmi_smi;   // exactly v
  CostPair dmi, smi_star, pri;
};

OrderingReport verify_ordering(const CostParams& p);

/// Per-job instrumented counter for the forward pass. Counts the same terms
/// as the analytic formulas, with the token count taken as the number of
/// active patches (the CLS token's contribution is subtracted by counting
/// n instead of n+1). LayerNorm, residuals, softmax and the classifier head
/// are excluded. Backward, when reported, is taken as 2x forward.
struct FlopCounter {
  std::uint64_t sa = 0;
  std::uint64_t ffn = 0;

  void add_encoder_layer(std::uint64_t n_patches, std::uint64_t d) {
    sa += 4 * n_patches * d * d + 2 * n_patches * n_patches * d;
    ffn += 8 * n_patches * d * d;
  }
  void merge(const FlopCounter& o) {
    sa += o.sa;
    ffn += o.ffn;
  }
};

}  // namespace vitinv
