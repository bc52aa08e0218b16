#include "vitinv/cost.hpp"

namespace vitinv {

namespace {

__int128 checked_add(__int128 a, __int128 b) {
  __int128 r;
  if (__builtin_add_overflow(a, b, &r)) throw OverflowError("rational add overflow");
  return r;
}

__int128 checked_mul(__int128 a, __int128 b) {
  __int128 r;
  if (__builtin_mul_overflow(a, b, &r)) throw OverflowError("rational mul overflow");
  return r;
}

__int128 abs128(__int128 a) { return a < 0 ? -a : a; }

__int128 gcd128(__int128 a, __int128 b) {
  a = abs128(a);
  b = abs128(b);
  while (b != 0) {
    __int128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

void check_positive(const CostParams& p, long long min_v) {
  if (p.N <= 0 || p.d <= 0 || p.L <= 0 || p.I <= 0 || p.T <= 0)
    throw ContractError("cost params must be positive");
  if (p.v < min_v)
    throw ContractError("division factor v must be >= " + std::to_string(min_v));
}

}  // namespace

Rational Rational::ratio(__int128 num, __int128 den) {
  if (den == 0) throw ContractError("rational with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  __int128 g = gcd128(num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  return Rational(num, den);
}

Rational Rational::operator+(const Rational& o) const {
  __int128 g = gcd128(den_, o.den_);
  __int128 l = checked_mul(den_ / g, o.den_);
  __int128 n = checked_add(checked_mul(num_, o.den_ / g), checked_mul(o.num_, den_ / g));
  return ratio(n, l);
}

Rational Rational::operator-(const Rational& o) const {
  return *this + Rational(-1) * o;
}

Rational Rational::operator*(const Rational& o) const {
  // Cross-reduce before multiplying to keep magnitudes small.
  __int128 g1 = gcd128(num_, o.den_);
  __int128 g2 = gcd128(o.num_, den_);
  __int128 n = checked_mul(num_ / g1, o.num_ / g2);
  __int128 d = checked_mul(den_ / g2, o.den_ / g1);
  return ratio(n, d);
}

Rational Rational::operator/(const Rational& o) const {
  if (o.num_ == 0) throw ContractError("rational division by zero");
  return *this * ratio(o.den_, o.num_);
}

bool Rational::operator<(const Rational& o) const {
  // Denominators are positive, so cross-multiplication preserves order.
  return checked_mul(num_, o.den_) < checked_mul(o.num_, den_);
}

double Rational::to_double() const {
  return static_cast<double>(num_) / static_cast<double>(den_);
}

namespace {
std::string int128_to_string(__int128 v) {
  if (v == 0) return "0";
  bool neg = v < 0;
  unsigned __int128 u = neg ? static_cast<unsigned __int128>(-(v + 1)) + 1
                            : static_cast<unsigned __int128>(v);
  std::string s;
  while (u != 0) {
    s.insert(s.begin(), static_cast<char>('0' + static_cast<int>(u % 10)));
    u /= 10;
  }
  return neg ? "-" + s : s;
}
}  // namespace

std::string Rational::to_string() const {
  std::string s = int128_to_string(num_);
  if (den_ != 1) s += "/" + int128_to_string(den_);
  return s;
}

CostPair cost_dmi(const CostParams& p) {
  check_positive(p, 1);
  Rational n(p.N), d(p.d), scale = Rational(p.L) * Rational(p.I) * Rational(p.T);
  Rational sa = (Rational(4) * n * d * d + Rational(2) * n * n * d) * scale;
  Rational ffn = Rational(8) * n * d * d * scale;
  return {sa, ffn};
}

CostPair cost_smi_star(const CostParams& p) {
  check_positive(p, 1);
  Rational n(p.N), d(p.d), v(p.v);
  Rational scale = Rational(p.L) * Rational(p.I) * Rational(p.T);
  Rational sa = (Rational(4) * n * d * d / v + Rational(2) * n * n * d / (v * v)) * scale;
  Rational ffn = Rational(8) * n * d * d / v * scale;
  return {sa, ffn};
}

CostPair cost_pri(const CostParams& p) {
  check_positive(p, 2);
  Rational n(p.N), d(p.d), v(p.v);
  Rational scale = Rational(p.L) * Rational(p.I) * Rational(p.T);
  Rational vp1 = v + Rational(1);
  Rational ffn = Rational(8) * n * d * d * v * vp1 / (Rational(2) * v) / (v * v) * scale;
  Rational sa = (Rational(4) * n * d * d * v * vp1 / (Rational(2) * v) +
                 Rational(2) * n * n * d * v * vp1 * (Rational(2) * v + Rational(1)) /
                     (Rational(6) * v * v)) /
                (v * v) * scale;
  return {sa, ffn};
}

OrderingReport verify_ordering(const CostParams& p) {
  check_positive(p, 2);
  OrderingReport r;
  r.dmi = cost_dmi(p);
  r.smi_star = cost_smi_star(p);
  r.pri = cost_pri(p);
  Rational v(p.v), d(p.d);
  // 6v(v-1)/(2v^2 - 3v + 1) * d; the denominator factors as (2v-1)(v-1).
  r.sa_bound = Rational(6) * v * (v - Rational(1)) /
               (Rational(2) * v * v - Rational(3) * v + Rational(1)) * d;
  r.n_below_bound = Rational(p.N) < r.sa_bound;
  r.sa_ordering_holds = r.pri.sa < r.smi_star.sa && r.smi_star.sa < r.dmi.sa;
  r.ffn_ordering_holds = r.pri.ffn < r.smi_star.ffn && r.smi_star.ffn < r.dmi.ffn;
  r.ffn_ratio_pri_smi = r.pri.ffn / r.smi_star.ffn;
  r.ffn_ratio_dmi_smi = r.dmi.ffn / r.smi_star.ffn;
  return r;
}

}  // namespace vitinv
