#include "inviv/numerics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace inviv::numerics {

Matrix matmul(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
    require_shape(a.cols() == b.rows(),
                  "matmul: " + shape_str(a) + " * " + shape_str(b) + " does not conform");
    return a * b;
}

CholeskyFactor cholesky(const Eigen::Ref<const Matrix>& a) {
    require_shape(a.rows() == a.cols(), "cholesky: matrix not square, " + shape_str(a));
    const Index n = a.rows();
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw ContractError("cholesky: matrix not symmetric within 1e-10");

    // Classic jk-form; kept explicit so the failing pivot can be reported.
    Matrix L = Matrix::Zero(n, n);
    for (Index j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (Index k = 0; k < j; ++k) diag -= L(j, k) * L(j, k);
        if (!(diag > 0.0))
            throw NotPositiveDefiniteError("cholesky: non-positive pivot " + std::to_string(diag)
                                           + " at index " + std::to_string(j));
        const double ljj = std::sqrt(diag);
        L(j, j) = ljj;
        for (Index i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (Index k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
            L(i, j) = s / ljj;
        }
    }
    return CholeskyFactor{std::move(L), n};
}

Matrix chol_solve(const CholeskyFactor& f, const Eigen::Ref<const Matrix>& rhs) {
    require_shape(rhs.rows() == f.dim, "chol_solve: rhs rows " + std::to_string(rhs.rows())
                                           + " != dim " + std::to_string(f.dim));
    Matrix x = f.lower.triangularView<Eigen::Lower>().solve(rhs);
    f.lower.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
    return x;
}

double chol_log_det(const CholeskyFactor& f) {
    return 2.0 * f.lower.diagonal().array().log().sum();
}

Matrix solve_ols(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& y) {
    require_shape(X.rows() == y.rows(), "solve_ols: X rows " + std::to_string(X.rows())
                                            + " != y rows " + std::to_string(y.rows()));
    if (X.rows() < X.cols())
        throw ContractError("solve_ols: underdetermined system, n=" + std::to_string(X.rows())
                            + " < k=" + std::to_string(X.cols()));
    const Matrix xtx = X.transpose() * X;
    Eigen::SelfAdjointEigenSolver<Matrix> es(xtx, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 1e-10 * hi))
        throw SingularityError("solve_ols: normal equations rank deficient, smallest pivot "
                               + std::to_string(lo) + " vs largest " + std::to_string(hi));
    return chol_solve(cholesky(xtx), X.transpose() * y);
}

double min_singular_value(const Eigen::Ref<const Matrix>& a) {
    require_finite(a, "min_singular_value");
    Matrix gram;
    if (a.rows() >= a.cols())
        gram = a.transpose() * a;
    else
        gram = a * a.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
    return std::sqrt(std::max(0.0, es.eigenvalues().minCoeff()));
}

} // namespace inviv::numerics
