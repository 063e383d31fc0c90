#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "msf/errors.hpp"
#include "msf/solvers.hpp"

namespace msf {

namespace {

double evaluate_derivative(std::span<const double> coeffs, double x) {
  double d = 0.0;
  for (std::size_t i = coeffs.size(); i-- > 1;) d = d * x + static_cast<double>(i) * coeffs[i];
  return d;
}

// One Newton step, kept only if it lowers the residual.
double polish(std::span<const double> coeffs, double x) {
  const double fx = evaluate_polynomial(coeffs, x);
  const double dfx = evaluate_derivative(coeffs, x);
  if (dfx == 0.0 || !std::isfinite(fx)) return x;
  const double next = x - fx / dfx;
  return std::abs(evaluate_polynomial(coeffs, next)) < std::abs(fx) ? next : x;
}

void sort_unique(std::vector<double>& roots, double tol) {
  std::sort(roots.begin(), roots.end());
  std::vector<double> out;
  for (double r : roots) {
    if (out.empty() || std::abs(r - out.back()) > tol) out.push_back(r);
  }
  roots = std::move(out);
}

}  // namespace

double evaluate_polynomial(std::span<const double> coeffs, double x) {
  double v = 0.0;
  for (std::size_t i = coeffs.size(); i-- > 0;) v = v * x + coeffs[i];
  return v;
}

std::vector<double> solve_cubic(double a3, double a2, double a1, double a0) {
  if (a3 == 0.0 && a2 == 0.0 && a1 == 0.0) {
    throw DegenerateInput("constant polynomial has no isolated roots");
  }
  const std::array<double, 4> coeffs{a0, a1, a2, a3};
  std::vector<double> roots;

  if (a3 == 0.0) {
    if (a2 == 0.0) {
      roots.push_back(-a0 / a1);
    } else {
      const double disc = a1 * a1 - 4.0 * a2 * a0;
      if (disc >= 0.0) {
        const double q = -0.5 * (a1 + std::copysign(std::sqrt(disc), a1));
        roots.push_back(q / a2);
        if (q != 0.0) roots.push_back(a0 / q);
      }
    }
  } else {
    const double b = a2 / a3;
    const double c = a1 / a3;
    const double d = a0 / a3;
    const double p = c - b * b / 3.0;
    const double q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    const double shift = -b / 3.0;
    const double disc = 0.25 * q * q + p * p * p / 27.0;
    if (p == 0.0 && q == 0.0) {
      roots.push_back(shift);
    } else if (disc > 0.0) {
      const double u = std::cbrt(-0.5 * q - std::copysign(std::sqrt(disc), q));
      roots.push_back(shift + (u != 0.0 ? u - p / (3.0 * u) : 0.0));
    } else {
      const double m = 2.0 * std::sqrt(-p / 3.0);
      const double arg = std::clamp(3.0 * q / (p * m), -1.0, 1.0);
      const double theta = std::acos(arg) / 3.0;
      for (int k = 0; k < 3; ++k) {
        roots.push_back(shift + m * std::cos(theta - 2.0 * std::numbers::pi * k / 3.0));
      }
    }
  }

  for (double& r : roots) r = polish(coeffs, polish(coeffs, r));
  sort_unique(roots, 1e-10);
  return roots;
}

std::vector<double> real_polynomial_roots(std::span<const double> coeffs_in) {
  std::vector<double> coeffs(coeffs_in.begin(), coeffs_in.end());
  double max_coeff = 0.0;
  for (double c : coeffs) max_coeff = std::max(max_coeff, std::abs(c));
  if (max_coeff == 0.0) return {};
  while (!coeffs.empty() && std::abs(coeffs.back()) <= 1e-14 * max_coeff) coeffs.pop_back();

  std::vector<double> roots;
  // Factor out roots at zero.
  std::size_t lowest = 0;
  while (lowest < coeffs.size() && coeffs[lowest] == 0.0) ++lowest;
  if (lowest > 0) roots.push_back(0.0);
  std::vector<double> reduced(coeffs.begin() + static_cast<std::ptrdiff_t>(lowest), coeffs.end());
  const int degree = static_cast<int>(reduced.size()) - 1;

  if (degree == 1) {
    roots.push_back(-reduced[0] / reduced[1]);
  } else if (degree == 2 || degree == 3) {
    const auto r = degree == 2 ? solve_cubic(0.0, reduced[2], reduced[1], reduced[0])
                               : solve_cubic(reduced[3], reduced[2], reduced[1], reduced[0]);
    roots.insert(roots.end(), r.begin(), r.end());
  } else if (degree > 3) {
    std::vector<std::complex<double>> values = polynomial_roots_complex(reduced);
    std::sort(values.begin(), values.end(),
              [](const auto& a, const auto& b) { return a.real() < b.real(); });

    // Eigenvalues of a multiple root scatter around it; average clusters so
    // repeated real roots come back real and accurate.
    std::vector<bool> used(values.size(), false);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (used[i]) continue;
      std::complex<double> sum = values[i];
      int count = 1;
      used[i] = true;
      const double radius = 1e-5 * std::max(1.0, std::abs(values[i]));
      for (std::size_t j = i + 1; j < values.size(); ++j) {
        if (!used[j] && std::abs(values[j] - values[i]) < radius) {
          sum += values[j];
          ++count;
          used[j] = true;
        }
      }
      const std::complex<double> mean = sum / static_cast<double>(count);
      if (std::abs(mean.imag()) <= 1e-8 * std::max(1.0, std::abs(mean))) {
        roots.push_back(mean.real());
      }
    }
  }

  for (double& r : roots) r = polish(coeffs, r);
  sort_unique(roots, 1e-12);
  return roots;
}

std::vector<std::complex<double>> polynomial_roots_complex(std::span<const double> coeffs_in) {
  std::vector<double> coeffs(coeffs_in.begin(), coeffs_in.end());
  while (!coeffs.empty() && coeffs.back() == 0.0) coeffs.pop_back();
  const int degree = static_cast<int>(coeffs.size()) - 1;
  if (degree < 1) return {};
  std::size_t lowest = 0;
  while (coeffs[lowest] == 0.0) ++lowest;
  std::vector<std::complex<double>> out(lowest, 0.0);
  if (static_cast<int>(lowest) == degree) return out;

  // Substitute x = s y so that the leading and constant terms have equal
  // magnitude; this balances the companion matrix.
  const int reduced = degree - static_cast<int>(lowest);
  const double s = std::pow(std::abs(coeffs[lowest] / coeffs[degree]), 1.0 / reduced);
  std::vector<double> scaled(static_cast<std::size_t>(reduced) + 1);
  double sp = 1.0;
  for (int i = 0; i <= reduced; ++i) {
    scaled[i] = coeffs[lowest + static_cast<std::size_t>(i)] * sp;
    sp *= s;
  }
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(reduced, reduced);
  for (int i = 1; i < reduced; ++i) companion(i, i - 1) = 1.0;
  for (int i = 0; i < reduced; ++i) companion(i, reduced - 1) = -scaled[i] / scaled[reduced];
  Eigen::EigenSolver<Eigen::MatrixXd> eig(companion, false);
  if (eig.info() == Eigen::Success) {
    for (int i = 0; i < reduced; ++i) out.push_back(eig.eigenvalues()(i) * s);
    return out;
  }
  // The real QR iteration can stall on highly symmetric spectra; the complex
  // solver uses different shifts.
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> ceig(companion.cast<std::complex<double>>(), false);
  if (ceig.info() != Eigen::Success) {
    throw SolverFailure("companion matrix eigenvalues did not converge");
  }
  for (int i = 0; i < reduced; ++i) out.push_back(ceig.eigenvalues()(i) * s);
  return out;
}

std::vector<double> solve_poly_degree10(const std::array<double, 11>& coeffs) {
  return real_polynomial_roots(coeffs);
}

}  // namespace msf
