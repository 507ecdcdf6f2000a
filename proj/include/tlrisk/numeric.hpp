#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>

#include <Eigen/Dense>

namespace tlrisk {

/// Probability clamp used before any log or logit.
inline constexpr double kProbEps = 1e-12;

template <std::floating_point Scalar>
Scalar sigmoid(Scalar t) {
  if (t >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-t));
  }
  const Scalar e = std::exp(t);
  return e / (Scalar(1) + e);
}

template <std::floating_point Scalar>
Scalar clamp_probability(Scalar p, Scalar eps = Scalar(kProbEps)) {
  if (p < eps) return eps;
  if (p > Scalar(1) - eps) return Scalar(1) - eps;
  return p;
}

template <std::floating_point Scalar>
Scalar logit(Scalar p) {
  const Scalar q = clamp_probability(p);
  return std::log(q) - std::log1p(-q);
}

/// log(1 + e^t) without overflow.
template <std::floating_point Scalar>
Scalar softplus(Scalar t) {
  if (t > Scalar(0)) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

/// Negative Bernoulli log-likelihood of label y at log-odds eta.
/// -[y log s(eta) + (1-y) log(1 - s(eta))] = softplus(eta) - y * eta
template <std::floating_point Scalar>
Scalar bernoulli_nll(Scalar y, Scalar eta) {
  return softplus(eta) - y * eta;
}

template <typename Derived>
Eigen::VectorXd sigmoid(const Eigen::MatrixBase<Derived>& eta) {
  return eta.unaryExpr([](double t) { return sigmoid(t); });
}

/// Mean negative log-likelihood over paired labels and log-odds.
template <typename DerivedY, typename DerivedEta>
double mean_bernoulli_nll(const Eigen::MatrixBase<DerivedY>& y,
                          const Eigen::MatrixBase<DerivedEta>& eta) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    total += bernoulli_nll<double>(y(i), eta(i));
  }
  return y.size() > 0 ? total / static_cast<double>(y.size()) : 0.0;
}

/// SplitMix64 mixing step. Deterministic on every platform.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive an independent stream seed from a base seed and a sequence of keys.
template <typename... Keys>
std::uint64_t derive_seed(std::uint64_t base, Keys... keys) {
  std::uint64_t s = splitmix64(base);
  ((s = splitmix64(s ^ splitmix64(static_cast<std::uint64_t>(keys) + 0x632be59bd9b4e019ULL))), ...);
  return s;
}

}  // namespace tlrisk
