#include "dtn/problems.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dtn {

namespace {
constexpr double kPi = std::numbers::pi;

std::function<double(double, double)> constant(double v) {
  return [v](double, double) { return v; };
}
}  // namespace

const std::vector<std::string>& catalog_names() {
  static const std::vector<std::string> names{
      "laplace",    "diffconv1",  "diffconv2",  "diffconv3",
      "diffconv4",  "helmholtz1", "helmholtz2", "helmholtz3",
      "helmholtz4", "random1",    "random2"};
  return names;
}

ProblemSpec catalog(const std::string& name, int n, std::uint64_t seed) {
  auto zero = constant(0.0);
  if (name == "laplace") {
    return ProblemSpec::continuum(name, n, zero, zero, zero);
  }
  if (name == "diffconv1") {
    return ProblemSpec::continuum(name, n, constant(100.0), zero, zero);
  }
  if (name == "diffconv2") {
    return ProblemSpec::continuum(name, n, constant(1000.0), zero, zero);
  }
  if (name == "diffconv3") {
    // divergence-free field
    return ProblemSpec::continuum(
        name, n, [](double, double y) { return 125.0 * std::cos(4.0 * kPi * y); },
        [](double x, double) { return 125.0 * std::sin(4.0 * kPi * x); }, zero);
  }
  if (name == "diffconv4") {
    // field with sources and sinks
    return ProblemSpec::continuum(
        name, n, [](double x, double) { return 125.0 * std::cos(4.0 * kPi * x); },
        [](double, double y) { return 125.0 * std::sin(4.0 * kPi * y); }, zero);
  }
  if (name == "helmholtz1") {
    return ProblemSpec::continuum(name, n, zero, zero, constant(-100.0));
  }
  if (name == "helmholtz2") {
    return ProblemSpec::continuum(name, n, zero, zero, constant(-4005.0));
  }
  if (name == "helmholtz3") {
    // near-resonant shift just above the tenth discrete eigenvalue
    const double lambda10 = discrete_eigenvalue_kth(10, n);
    return ProblemSpec::continuum(name, n, zero, zero,
                                  constant(-lambda10 + 1e-5));
  }
  if (name == "helmholtz4") {
    // fixed 40 points per wavelength as n grows
    const double k = 2.0 * kPi * n / 40.0;
    return ProblemSpec::continuum(name, n, zero, zero, constant(-k * k));
  }
  if (name == "random1") {
    return ProblemSpec::network(name, n, 1.0, 2.0, seed);
  }
  if (name == "random2") {
    return ProblemSpec::network(name, n, 1.0, 1000.0, seed);
  }
  throw std::invalid_argument("catalog: unknown problem '" + name + "'");
}

double discrete_eigenvalue(int p, int q, int n) {
  if (p < 1 || q < 1 || p > n - 2 || q > n - 2) {
    throw std::invalid_argument("discrete_eigenvalue: indices out of range");
  }
  const double h = 1.0 / (n - 1);
  // symmetrized so that lambda_{p,q} == lambda_{q,p} exactly
  return (4.0 - 2.0 * (std::cos(p * kPi / (n - 1)) +
                       std::cos(q * kPi / (n - 1)))) /
         (h * h);
}

double discrete_eigenvalue_kth(int k, int n) {
  if (k < 1) throw std::invalid_argument("discrete_eigenvalue_kth: k >= 1");
  // lambda is increasing in p and q, so the k smallest live in a small
  // leading block of index pairs.
  const int cap = std::min(n - 2, std::max(2 * k, 8));
  if (Index(cap) * cap < k) {
    throw std::invalid_argument("discrete_eigenvalue_kth: k exceeds spectrum");
  }
  struct Entry {
    double lambda;
    int p, q;
  };
  std::vector<Entry> entries;
  entries.reserve(std::size_t(cap) * cap);
  for (int p = 1; p <= cap; ++p) {
    for (int q = 1; q <= cap; ++q) {
      entries.push_back({discrete_eigenvalue(p, q, n), p, q});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.lambda != b.lambda) return a.lambda < b.lambda;
    return std::pair(a.p, a.q) < std::pair(b.p, b.q);
  });
  return entries[std::size_t(k) - 1].lambda;
}

}  // namespace dtn
