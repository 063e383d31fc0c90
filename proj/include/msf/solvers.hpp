#pragma once

#include <array>
#include <complex>
#include <optional>
#include <span>
#include <vector>

#include "msf/geometry.hpp"

namespace msf {

/// An epipolar hypothesis in pixel units. `essential` is set when the model
/// came from a calibrated solver.
struct EpipolarModel {
  FundamentalMatrix fundamental;
  std::optional<EssentialMatrix> essential;
};

// --- Polynomial root finding -------------------------------------------

/// Real roots of a3 x^3 + a2 x^2 + a1 x + a0, polished and deduplicated
/// within 1e-10. Lower-degree input is handled by degree reduction.
/// Throws DegenerateInput when no root can exist (a3 = a2 = a1 = 0).
std::vector<double> solve_cubic(double a3, double a2, double a1, double a0);

/// Real roots of a polynomial given by ascending coefficients
/// (coeffs[i] multiplies x^i), via companion-matrix eigenvalues followed by
/// one Newton step per root. Leading zeros are stripped.
std::vector<double> real_polynomial_roots(std::span<const double> coeffs);

/// All complex roots (companion-matrix eigenvalues, ascending coefficients).
std::vector<std::complex<double>> polynomial_roots_complex(std::span<const double> coeffs);

/// Degree-10 specialization used by the five-point solver; coefficients
/// ascending.
std::vector<double> solve_poly_degree10(const std::array<double, 11>& coeffs);

/// Evaluates an ascending-coefficient polynomial (Horner).
double evaluate_polynomial(std::span<const double> coeffs, double x);

// --- Minimal solvers ---------------------------------------------------

/// Seven-point fundamental matrix solver: 1-3 rank-2, unit-norm candidates
/// in pixel units. Throws DegenerateSample when the design matrix has rank
/// below 7.
std::vector<FundamentalMatrix> seven_point_fundamental(std::span<const Correspondence> sample);

/// Five-point essential matrix solver on calibrated coordinates: up to 10
/// candidates. Throws DegenerateSample (design rank < 5) or SolverFailure
/// (elimination failed or no real solution).
std::vector<EssentialMatrix> five_point_essential(std::span<const Correspondence> sample,
                                                  const CameraIntrinsics& k1,
                                                  const CameraIntrinsics& k2);

/// Least-squares model from >= 8 correspondences: a normalized algebraic fit
/// refined by three Sampson-reweighted passes, with rank-2 enforcement;
/// essential models are additionally projected to equal singular values.
/// Throws DegenerateSample when the design matrix has rank below 8.
EpipolarModel eight_point_least_squares(std::span<const Correspondence> points, Problem problem,
                                        const CameraIntrinsics& k1, const CameraIntrinsics& k2);

/// Runs the minimal solver for `problem` and wraps each candidate as an
/// EpipolarModel (converting E to F once).
std::vector<EpipolarModel> solve_minimal(Problem problem, std::span<const Correspondence> sample,
                                         const CameraIntrinsics& k1, const CameraIntrinsics& k2);

/// Relative pose implied by a model, resolved by cheirality on `points`.
/// Fundamental-only models are upgraded through the intrinsics first.
std::optional<Pose> pose_from_model(const EpipolarModel& model,
                                    std::span<const Correspondence> points,
                                    const CameraIntrinsics& k1, const CameraIntrinsics& k2);

}  // namespace msf
