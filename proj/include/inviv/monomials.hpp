#pragma once

#include <vector>

#include "inviv/common.hpp"

namespace inviv {

/// Exponent tuples of all monomials in `dim` variables of total degree <= `degree`,
/// ordered graded-lexicographically with the constant term first:
/// dim=2, degree=2 -> (0,0), (1,0), (0,1), (2,0), (1,1), (0,2).
std::vector<std::vector<int>> monomial_exponents(int dim, int degree);

/// C(dim + degree, degree), the number of such monomials.
Index monomial_count(int dim, int degree);

/// Row-wise monomial feature expansion: u (n x dim) -> (n x monomial_count).
Matrix monomial_features(const Eigen::Ref<const Matrix>& u, int degree);

} // namespace inviv
