// Five-point relative pose: null-space parameterization E = xX + yY + zZ + W,
// cubic constraints reduced by Gauss-Jordan elimination, then the solutions
// are read off the eigenvectors of the 10x10 multiplication-by-x matrix.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "msf/errors.hpp"
#include "msf/solvers.hpp"

namespace msf {

namespace {

// Monomials in (x, y, z) of total degree <= 3, ordered by degree so that a
// polynomial of degree d uses the first kTermCount[d] slots.
struct Monomial {
  int x, y, z;
};

constexpr std::array<Monomial, 20> kMonomials{{
    {0, 0, 0},                                                          // 1
    {1, 0, 0}, {0, 1, 0}, {0, 0, 1},                                    // deg 1
    {2, 0, 0}, {1, 1, 0}, {1, 0, 1}, {0, 2, 0}, {0, 1, 1}, {0, 0, 2},  // deg 2
    {3, 0, 0}, {2, 1, 0}, {2, 0, 1}, {1, 2, 0}, {1, 1, 1},             // deg 3
    {1, 0, 2}, {0, 3, 0}, {0, 2, 1}, {0, 1, 2}, {0, 0, 3},
}};
constexpr std::array<int, 4> kTermCount{1, 4, 10, 20};

constexpr int monomial_index(int x, int y, int z) {
  for (int i = 0; i < 20; ++i) {
    if (kMonomials[i].x == x && kMonomials[i].y == y && kMonomials[i].z == z) return i;
  }
  return -1;
}

struct ProductTable {
  std::array<std::array<int, 20>, 20> index{};
  constexpr ProductTable() {
    for (int a = 0; a < 20; ++a) {
      for (int b = 0; b < 20; ++b) {
        index[a][b] = monomial_index(kMonomials[a].x + kMonomials[b].x,
                                     kMonomials[a].y + kMonomials[b].y,
                                     kMonomials[a].z + kMonomials[b].z);
      }
    }
  }
};
constexpr ProductTable kProducts{};

struct Poly3 {
  std::array<double, 20> c{};
  int degree = 0;

  Poly3& operator+=(const Poly3& o) {
    for (int i = 0; i < kTermCount[o.degree]; ++i) c[i] += o.c[i];
    degree = std::max(degree, o.degree);
    return *this;
  }
  Poly3 operator*(double s) const {
    Poly3 r = *this;
    for (double& v : r.c) v *= s;
    return r;
  }
};

Poly3 operator-(Poly3 a, const Poly3& b) { return a += b * -1.0; }

Poly3 operator*(const Poly3& a, const Poly3& b) {
  Poly3 r;
  r.degree = a.degree + b.degree;
  for (int i = 0; i < kTermCount[a.degree]; ++i) {
    if (a.c[i] == 0.0) continue;
    for (int j = 0; j < kTermCount[b.degree]; ++j) {
      r.c[kProducts.index[i][j]] += a.c[i] * b.c[j];
    }
  }
  return r;
}

// Column order for elimination (graded reverse lexicographic). The first ten
// are eliminated; the trailing ten [x^2, xy, xz, y^2, yz, z^2, x, y, z, 1]
// form a basis of the quotient ring.
constexpr std::array<int, 20> kEliminationOrder{
    monomial_index(3, 0, 0), monomial_index(2, 1, 0), monomial_index(2, 0, 1),
    monomial_index(1, 2, 0), monomial_index(1, 1, 1), monomial_index(1, 0, 2),
    monomial_index(0, 3, 0), monomial_index(0, 2, 1), monomial_index(0, 1, 2),
    monomial_index(0, 0, 3), monomial_index(2, 0, 0), monomial_index(1, 1, 0),
    monomial_index(1, 0, 1), monomial_index(0, 2, 0), monomial_index(0, 1, 1),
    monomial_index(0, 0, 2), monomial_index(1, 0, 0), monomial_index(0, 1, 0),
    monomial_index(0, 0, 1), monomial_index(0, 0, 0)};

// powers[k][e] = v(k)^e for e <= 3.
using PowerTable = std::array<std::array<double, 4>, 3>;

PowerTable power_table(const Eigen::Vector3d& v) {
  PowerTable t;
  for (int k = 0; k < 3; ++k) {
    t[k][0] = 1.0;
    for (int e = 1; e < 4; ++e) t[k][e] = t[k][e - 1] * v(k);
  }
  return t;
}

double evaluate(const Poly3& p, const PowerTable& pw) {
  double sum = 0.0;
  for (int i = 0; i < kTermCount[p.degree]; ++i) {
    const Monomial& mono = kMonomials[i];
    sum += p.c[i] * pw[0][mono.x] * pw[1][mono.y] * pw[2][mono.z];
  }
  return sum;
}

double evaluate(const Poly3& p, const Eigen::Vector3d& v) { return evaluate(p, power_table(v)); }

Eigen::RowVector3d gradient(const Poly3& p, const PowerTable& pw) {
  Eigen::RowVector3d g = Eigen::RowVector3d::Zero();
  for (int i = 0; i < kTermCount[p.degree]; ++i) {
    const Monomial& mono = kMonomials[i];
    const double c = p.c[i];
    if (mono.x > 0) g(0) += c * mono.x * pw[0][mono.x - 1] * pw[1][mono.y] * pw[2][mono.z];
    if (mono.y > 0) g(1) += c * mono.y * pw[0][mono.x] * pw[1][mono.y - 1] * pw[2][mono.z];
    if (mono.z > 0) g(2) += c * mono.z * pw[0][mono.x] * pw[1][mono.y] * pw[2][mono.z - 1];
  }
  return g;
}

// Gauss-Newton on the unreduced cubic constraints; elimination loses a few
// digits on poorly conditioned samples and this recovers them.
Eigen::Vector3d refine(const std::array<Poly3, 10>& constraints, Eigen::Vector3d v,
                       int iterations) {
  auto residual = [&](const Eigen::Vector3d& p) {
    Eigen::Matrix<double, 10, 1> r;
    const PowerTable pw = power_table(p);
    for (int i = 0; i < 10; ++i) r(i) = evaluate(constraints[i], pw);
    return r;
  };
  Eigen::Matrix<double, 10, 1> r = residual(v);
  for (int iter = 0; iter < iterations; ++iter) {
    Eigen::Matrix<double, 10, 3> jac;
    const PowerTable pw = power_table(v);
    for (int i = 0; i < 10; ++i) jac.row(i) = gradient(constraints[i], pw);
    const Eigen::Vector3d step = jac.colPivHouseholderQr().solve(-r);
    if (!step.allFinite()) break;
    const Eigen::Vector3d next = v + step;
    const Eigen::Matrix<double, 10, 1> rn = residual(next);
    if (!(rn.norm() < r.norm())) break;
    v = next;
    r = rn;
  }
  return v;
}

}  // namespace

std::vector<EssentialMatrix> five_point_essential(std::span<const Correspondence> sample,
                                                  const CameraIntrinsics& k1,
                                                  const CameraIntrinsics& k2) {
  if (sample.size() != 5) throw ShapeMismatch("five-point solver needs exactly 5 correspondences");

  Eigen::Matrix<double, 9, 9> a = Eigen::Matrix<double, 9, 9>::Zero();
  for (int i = 0; i < 5; ++i) {
    const Eigen::Vector3d q1 = k1.normalize(sample[i].u1, sample[i].v1);
    const Eigen::Vector3d q2 = k2.normalize(sample[i].u2, sample[i].v2);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) a(i, 3 * r + c) = q2(r) * q1(c);
    }
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 9, 9>> svd(a, Eigen::ComputeFullV);
  if (!(svd.singularValues()(4) > 1e-10 * svd.singularValues()(0))) {
    throw DegenerateSample("five-point design matrix has rank below 5");
  }
  const Eigen::Matrix<double, 9, 9>& v = svd.matrixV();

  // E_ij as a linear polynomial in (x, y, z).
  std::array<Poly3, 9> e;
  for (int k = 0; k < 9; ++k) {
    e[k].degree = 1;
    e[k].c[0] = v(k, 8);
    e[k].c[1] = v(k, 5);
    e[k].c[2] = v(k, 6);
    e[k].c[3] = v(k, 7);
  }
  auto at = [&](int r, int c) -> const Poly3& { return e[3 * r + c]; };

  // det(E) = 0 and 2 E E^T E - tr(E E^T) E = 0.
  std::array<Poly3, 10> constraints;
  constraints[9] = at(0, 1) * at(1, 2) * at(2, 0) - at(0, 2) * at(1, 1) * at(2, 0);
  constraints[9] += at(0, 2) * at(1, 0) * at(2, 1) - at(0, 0) * at(1, 2) * at(2, 1);
  constraints[9] += at(0, 0) * at(1, 1) * at(2, 2) - at(0, 1) * at(1, 0) * at(2, 2);

  std::array<std::array<Poly3, 3>, 3> eet;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      Poly3 s = at(r, 0) * at(c, 0);
      s += at(r, 1) * at(c, 1);
      s += at(r, 2) * at(c, 2);
      eet[r][c] = s;
    }
  }
  Poly3 half_trace = eet[0][0];
  half_trace += eet[1][1];
  half_trace += eet[2][2];
  half_trace = half_trace * 0.5;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      Poly3 s;
      s.degree = 3;
      for (int k = 0; k < 3; ++k) {
        Poly3 lhs = eet[r][k];
        if (r == k) lhs = lhs - half_trace;
        s += lhs * at(k, c);
      }
      constraints[3 * r + c] = s;
    }
  }

  Eigen::Matrix<double, 10, 20> m;
  for (int row = 0; row < 10; ++row) {
    for (int col = 0; col < 20; ++col) m(row, col) = constraints[row].c[kEliminationOrder[col]];
  }
  const Eigen::Matrix<double, 10, 10> lead = m.leftCols<10>();
  Eigen::FullPivLU<Eigen::Matrix<double, 10, 10>> lu(lead);
  if (!lu.isInvertible()) throw SolverFailure("five-point elimination template is singular");
  const Eigen::Matrix<double, 10, 10> tail = lu.solve(m.rightCols<10>());
  if (!tail.allFinite()) throw SolverFailure("five-point elimination produced non-finite values");

  // x * basis expressed in the basis. Products landing on an eliminated
  // monomial (rows 0..5 of the reduced system) are rewritten through it.
  Eigen::Matrix<double, 10, 10> action = Eigen::Matrix<double, 10, 10>::Zero();
  for (int i = 0; i < 6; ++i) action.row(i) = -tail.row(i);
  action(6, 0) = 1.0;  // x * x  = x^2
  action(7, 1) = 1.0;  // x * y  = xy
  action(8, 2) = 1.0;  // x * z  = xz
  action(9, 6) = 1.0;  // x * 1  = x
  Eigen::EigenSolver<Eigen::Matrix<double, 10, 10>> eig(action);
  if (eig.info() != Eigen::Success) throw SolverFailure("five-point eigen-decomposition failed");

  // Round-off can push a pair of close real solutions off the real axis.
  // Near-real complex eigenvalues are kept as seeds and only accepted if
  // refinement drives the full constraint set to zero.
  struct Seed {
    Eigen::Vector3d xyz;
    bool verify;
  };
  std::vector<Seed> seeds;
  for (int i = 0; i < 10; ++i) {
    const std::complex<double> lambda = eig.eigenvalues()(i);
    const double scale = std::max(1.0, std::abs(lambda));
    const bool real = std::abs(lambda.imag()) <= 1e-8 * scale;
    if (!real && std::abs(lambda.imag()) > 1e-2 * scale) continue;
    const auto vec = eig.eigenvectors().col(i);
    if (std::abs(vec(9)) < 1e-12 * vec.norm()) continue;
    const std::complex<double> x = vec(6) / vec(9);
    const std::complex<double> y = vec(7) / vec(9);
    const std::complex<double> z = vec(8) / vec(9);
    seeds.push_back({Eigen::Vector3d(x.real(), y.real(), z.real()), !real});
  }

  std::vector<EssentialMatrix> out;
  for (const Seed& seed : seeds) {
    const Eigen::Vector3d xyz = refine(constraints, seed.xyz, seed.verify ? 10 : 3);
    if (seed.verify) {
      double r2 = 0.0;
      for (const auto& c : constraints) r2 += std::pow(evaluate(c, xyz), 2);
      // E has norm sqrt(1 + |xyz|^2) and the constraints are cubic in E.
      if (!(std::sqrt(r2) <= 1e-9 * std::pow(1.0 + xyz.squaredNorm(), 1.5))) continue;
    }
    const double x = xyz(0);
    const double y = xyz(1);

    Eigen::Matrix3d essential;
    for (int k = 0; k < 9; ++k) {
      essential(k / 3, k % 3) = x * v(k, 5) + y * v(k, 6) + xyz(2) * v(k, 7) + v(k, 8);
    }
    const double norm = essential.norm();
    if (!(norm > 0.0) || !essential.allFinite()) continue;
    essential /= norm;

    bool duplicate = false;
    for (const auto& existing : out) {
      if (std::min((existing.matrix - essential).norm(), (existing.matrix + essential).norm()) <
          1e-8) {
        duplicate = true;
      }
    }
    if (!duplicate) out.push_back({essential});
  }
  if (out.empty()) throw SolverFailure("five-point solver found no real solution");
  return out;
}

}  // namespace msf
