#pragma once

#include "inviv/common.hpp"

namespace inviv::numerics {

/// Lower-triangular factor of a symmetric positive-definite matrix, L L^T = A.
struct CholeskyFactor {
    Matrix lower;
    Index dim = 0;
};

/// Dense product a * b. Throws ShapeError on non-conforming operands.
Matrix matmul(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b);

/// Least-squares solve argmin_B ||X B - y||_F via Cholesky on the normal
/// equations. Requires n >= k and X^T X numerically nonsingular
/// (min eigenvalue > 1e-10 * max); otherwise throws SingularityError.
Matrix solve_ols(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& y);

/// Cholesky factorization of a symmetric positive-definite matrix.
/// Throws NotPositiveDefiniteError naming the failing pivot index.
CholeskyFactor cholesky(const Eigen::Ref<const Matrix>& a);

/// Solve (L L^T) x = rhs given a factor.
Matrix chol_solve(const CholeskyFactor& f, const Eigen::Ref<const Matrix>& rhs);

/// log det(A) = 2 * sum_i log L_ii from a factor.
double chol_log_det(const CholeskyFactor& f);

/// Smallest singular value, sigma_min over min(rows, cols) singular values,
/// via the symmetric eigenproblem on the smaller Gram matrix. Zero is a
/// valid return for rank-deficient input.
double min_singular_value(const Eigen::Ref<const Matrix>& a);

} // namespace inviv::numerics
