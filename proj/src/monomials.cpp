#include "inviv/monomials.hpp"

namespace inviv {

namespace {

void enumerate_degree(int dim, int total, std::vector<int>& current, int pos,
                      std::vector<std::vector<int>>& out) {
    if (pos == dim - 1) {
        current[static_cast<size_t>(pos)] = total;
        out.push_back(current);
        return;
    }
    for (int e = total; e >= 0; --e) {
        current[static_cast<size_t>(pos)] = e;
        enumerate_degree(dim, total - e, current, pos + 1, out);
    }
}

} // namespace

std::vector<std::vector<int>> monomial_exponents(int dim, int degree) {
    if (dim < 1 || degree < 0) throw ContractError("monomial_exponents: dim >= 1, degree >= 0 required");
    std::vector<std::vector<int>> out;
    std::vector<int> current(static_cast<size_t>(dim), 0);
    for (int g = 0; g <= degree; ++g) enumerate_degree(dim, g, current, 0, out);
    return out;
}

Index monomial_count(int dim, int degree) {
    // C(dim + degree, degree) with overflow-safe incremental products
    long long c = 1;
    for (int i = 1; i <= degree; ++i) c = c * (dim + i) / i;
    return static_cast<Index>(c);
}

Matrix monomial_features(const Eigen::Ref<const Matrix>& u, int degree) {
    const int dim = static_cast<int>(u.cols());
    const auto exps = monomial_exponents(dim, degree);
    Matrix feat(u.rows(), static_cast<Index>(exps.size()));
    // power table per row: powers[j][k] = u_j^k
    std::vector<double> powers(static_cast<size_t>(dim) * static_cast<size_t>(degree + 1));
    for (Index r = 0; r < u.rows(); ++r) {
        for (int j = 0; j < dim; ++j) {
            double p = 1.0;
            for (int k = 0; k <= degree; ++k) {
                powers[static_cast<size_t>(j) * static_cast<size_t>(degree + 1) + static_cast<size_t>(k)] = p;
                p *= u(r, j);
            }
        }
        for (size_t f = 0; f < exps.size(); ++f) {
            double v = 1.0;
            for (int j = 0; j < dim; ++j) {
                const int e = exps[f][static_cast<size_t>(j)];
                if (e > 0) v *= powers[static_cast<size_t>(j) * static_cast<size_t>(degree + 1) + static_cast<size_t>(e)];
            }
            feat(r, static_cast<Index>(f)) = v;
        }
    }
    return feat;
}

} // namespace inviv
