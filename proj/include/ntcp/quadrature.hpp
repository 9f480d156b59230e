#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "ntcp/errors.hpp"

namespace ntcp::quadrature {

struct Options {
  double abs_tol = 1e-8;
  double rel_tol = 1e-6;
  int max_subdivisions = 400;
  bool throw_on_failure = true;
};

template <typename Scalar>
struct Result {
  Scalar value{};
  Scalar abs_error{};
  int evaluations = 0;
  int intervals = 0;
  bool converged = false;
};

namespace detail {

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
inline constexpr std::array<double, 11> kKronrodNodes = {
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.0};
inline constexpr std::array<double, 11> kKronrodWeights = {
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077208745229645, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821};
// Gauss weights for the odd-indexed Kronrod nodes.
inline constexpr std::array<double, 5> kGaussWeights = {
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338};

template <typename Scalar>
struct Panel {
  Scalar a, b, value, error;
  bool operator<(const Panel& o) const { return error < o.error; }
};

template <typename Scalar, typename F>
Panel<Scalar> gauss_kronrod21(F& f, Scalar a, Scalar b) {
  const Scalar center = Scalar(0.5) * (a + b);
  const Scalar half = Scalar(0.5) * (b - a);
  const Scalar fc = f(center);
  Scalar kronrod = fc * Scalar(kKronrodWeights[10]);
  Scalar gauss = Scalar(0);
  for (std::size_t i = 0; i < 10; ++i) {
    const Scalar dx = half * Scalar(kKronrodNodes[i]);
    const Scalar sum = f(center - dx) + f(center + dx);
    kronrod += Scalar(kKronrodWeights[i]) * sum;
    if (i % 2 == 1) gauss += Scalar(kGaussWeights[i / 2]) * sum;
  }
  kronrod *= half;
  gauss *= half;
  using std::abs;
  return {a, b, kronrod, abs(kronrod - gauss)};
}

}  // namespace detail

// Globally adaptive Gauss-Kronrod integration of f over [a, b]. Optional
// interior breakpoints seed the initial partition (kinks, singular points);
// panel endpoints are never evaluated.
template <typename Scalar, typename F>
Result<Scalar> integrate(F&& f, Scalar a, Scalar b, const Options& opts = {},
                         std::span<const Scalar> breakpoints = {}) {
  Result<Scalar> out;
  if (a == b) {
    out.converged = true;
    return out;
  }
  Scalar sign = Scalar(1);
  if (b < a) {
    std::swap(a, b);
    sign = Scalar(-1);
  }
  std::vector<Scalar> cuts{a};
  for (Scalar p : breakpoints)
    if (p > a && p < b) cuts.push_back(p);
  cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  std::priority_queue<detail::Panel<Scalar>> heap;
  Scalar total = Scalar(0);
  Scalar error = Scalar(0);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    auto p = detail::gauss_kronrod21<Scalar>(f, cuts[i], cuts[i + 1]);
    total += p.value;
    error += p.error;
    heap.push(p);
    out.evaluations += 21;
  }
  using std::abs;
  using std::max;
  auto tolerance = [&] { return max(Scalar(opts.abs_tol), Scalar(opts.rel_tol) * abs(total)); };
  int splits = 0;
  while (error > tolerance() && splits < opts.max_subdivisions) {
    auto worst = heap.top();
    heap.pop();
    const Scalar mid = Scalar(0.5) * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      heap.push(worst);
      break;
    }
    auto left = detail::gauss_kronrod21<Scalar>(f, worst.a, mid);
    auto right = detail::gauss_kronrod21<Scalar>(f, mid, worst.b);
    out.evaluations += 42;
    total += left.value + right.value - worst.value;
    error += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
    ++splits;
  }
  // Re-sum from panels to shed the running-update rounding.
  total = Scalar(0);
  error = Scalar(0);
  out.intervals = static_cast<int>(heap.size());
  while (!heap.empty()) {
    total += heap.top().value;
    error += heap.top().error;
    heap.pop();
  }
  out.value = sign * total;
  out.abs_error = error;
  out.converged = error <= tolerance();
  if (!out.converged && opts.throw_on_failure)
    throw IntegrationError("adaptive quadrature did not converge: achieved error " +
                               std::to_string(static_cast<double>(error)),
                           static_cast<double>(error));
  return out;
}

// Gauss-Hermite rule for the standard normal weight: nodes x_i and weights
// w_i with sum_i w_i f(x_i) ~= E[f(Z)], Z ~ N(0, 1).
struct HermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
HermiteRule gauss_hermite_normal(int order);

}  // namespace ntcp::quadrature
