#include "inviv/estimators.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "inviv/numerics.hpp"

namespace inviv::estimators {

namespace {

Matrix with_intercept(const Eigen::Ref<const Matrix>& X) {
    Matrix out(X.rows(), X.cols() + 1);
    out.col(0).setOnes();
    out.rightCols(X.cols()) = X;
    return out;
}

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

RankDiagnostic rank_condition_check(const Eigen::Ref<const Matrix>& inst,
                                    const Eigen::Ref<const Matrix>& D, double threshold) {
    require_shape(inst.rows() == D.rows(), "rank_condition_check: row counts differ");
    const Matrix cross = inst.transpose() * D / static_cast<double>(inst.rows()); // p x d
    // full column rank in D is what matters: d-th singular value of the p x d cross-moment
    const Matrix gram = cross.transpose() * cross; // d x d
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
    RankDiagnostic diag;
    diag.min_sv = std::sqrt(std::max(0.0, es.eigenvalues().minCoeff()));
    diag.threshold = threshold;
    diag.pass = diag.min_sv > threshold;
    return diag;
}

EstimateReport tsls(const Eigen::Ref<const Matrix>& W, const Eigen::Ref<const Matrix>& D,
                    const Eigen::Ref<const Matrix>& Y, const std::optional<Vector>& theta_true) {
    const Index n = W.rows();
    const Index p = W.cols();
    const Index d = D.cols();
    require_shape(D.rows() == n && Y.rows() == n, "tsls: row counts differ");
    require_shape(Y.cols() == 1, "tsls: Y must be a single column");
    if (!(n > p))
        throw ContractError("tsls: need n > p, got n=" + std::to_string(n) + ", p=" + std::to_string(p));
    if (p < d)
        throw WeakInstrumentError("tsls: under-identified, p=" + std::to_string(p)
                                  + " instruments < d=" + std::to_string(d) + " exposures");

    const RankDiagnostic rank = rank_condition_check(W, D, 1e-6);
    if (!rank.pass)
        throw WeakInstrumentError("tsls: rank condition failed, min singular value of (1/n) W^T D is "
                                  + std::to_string(rank.min_sv));

    // P_[1,W] D via an OLS solve; the projection matrix is never materialized.
    const Matrix waug = with_intercept(W);
    const Matrix d_hat = waug * numerics::solve_ols(waug, D);
    const Matrix y_in = Y;
    const Matrix theta = numerics::solve_ols(d_hat, y_in); // (Dhat^T Dhat)^{-1} Dhat^T Y

    const Matrix resid = Y - D * theta;
    const double dof = static_cast<double>(n - d);
    const double sigma2 = resid.squaredNorm() / dof;
    const Matrix cov = sigma2
                       * numerics::chol_solve(numerics::cholesky(d_hat.transpose() * d_hat),
                                              Matrix::Identity(d, d));

    EstimateReport rep;
    rep.method = "2sls";
    rep.theta_hat = theta.col(0);
    rep.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    rep.instrument_dim = static_cast<int>(p);
    rep.min_sv_first_stage = rank.min_sv;
    rep.n_used = n;
    if (theta_true) {
        require_shape(theta_true->size() == d, "tsls: theta_true length != d");
        rep.bias = rep.theta_hat - *theta_true;
    }
    return rep;
}

EstimateReport po_tsls(const Eigen::Ref<const Matrix>& W, const Eigen::Ref<const Matrix>& V,
                       const Eigen::Ref<const Matrix>& D, const Eigen::Ref<const Matrix>& Y,
                       const std::optional<Vector>& theta_true) {
    const Index n = W.rows();
    require_shape(V.rows() == n && D.rows() == n && Y.rows() == n, "po_tsls: row counts differ");
    const Matrix vaug = with_intercept(V);
    auto residualize = [&](const Eigen::Ref<const Matrix>& X) -> Matrix {
        return X - vaug * numerics::solve_ols(vaug, X);
    };
    const Matrix wt = residualize(W);
    const Matrix dt = residualize(D);
    const Matrix yt = residualize(Y);
    EstimateReport rep = tsls(wt, dt, yt, theta_true);
    rep.method = "po_2sls";
    return rep;
}

std::vector<Matrix> po_env_indicator(const std::vector<int>& labels,
                                     const std::vector<Matrix>& blocks) {
    const Index n = static_cast<Index>(labels.size());
    std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2)
        throw ConfigError("po_env_indicator: need >= 2 distinct environment labels");
    // one-hot with the first (smallest) level dropped, intercept kept
    std::vector<int> levels(distinct.begin(), distinct.end());
    Matrix design(n, static_cast<Index>(levels.size())); // [1, onehot(levels 1..)]
    design.col(0).setOnes();
    for (Index i = 0; i < n; ++i)
        for (size_t l = 1; l < levels.size(); ++l)
            design(i, static_cast<Index>(l)) = labels[static_cast<size_t>(i)] == levels[l] ? 1.0 : 0.0;

    std::vector<Matrix> out;
    out.reserve(blocks.size());
    for (const auto& X : blocks) {
        require_shape(X.rows() == n, "po_env_indicator: block row count != label count");
        out.push_back(X - design * numerics::solve_ols(design, X));
    }
    return out;
}

EstimateReport mr_egger(const Eigen::Ref<const Matrix>& Z, const Eigen::Ref<const Matrix>& D,
                        const Eigen::Ref<const Matrix>& Y, const std::optional<Vector>& theta_true) {
    const Index n = Z.rows();
    const Index dz = Z.cols();
    const Index d = D.cols();
    require_shape(D.rows() == n && Y.rows() == n, "mr_egger: row counts differ");
    require_shape(Y.cols() == 1, "mr_egger: Y must be a single column");
    if (!(dz > d + 1))
        throw ConfigError("mr_egger: need more instruments than d+1, got d_z=" + std::to_string(dz)
                          + ", d=" + std::to_string(d));

    // univariate per-instrument associations
    Matrix b_d(dz, d);
    Vector b_y(dz), se_y(dz);
    for (Index j = 0; j < dz; ++j) {
        Matrix x = with_intercept(Z.col(j));
        const Matrix coef_d = numerics::solve_ols(x, D); // 2 x d
        b_d.row(j) = coef_d.row(1);
        const Matrix coef_y = numerics::solve_ols(x, Y); // 2 x 1
        b_y(j) = coef_y(1, 0);
        const Matrix resid = Y - x * coef_y;
        const double s2 = resid.squaredNorm() / static_cast<double>(n - 2);
        const double sxx = (Z.col(j).array() - Z.col(j).mean()).square().sum();
        se_y(j) = std::sqrt(s2 / sxx);
    }

    // weighted Egger regression: b_y ~ [1, b_d], weights 1/SE^2
    Vector w = se_y.array().square().inverse();
    Vector sw = w.cwiseSqrt();
    Matrix design = with_intercept(b_d);
    Matrix xw = design.array().colwise() * sw.array();
    Matrix yw = b_y.array() * sw.array();
    const Matrix coef = numerics::solve_ols(xw, yw); // (d+1) x 1: [intercept; theta]

    const Matrix resid = yw - xw * coef;
    const double s2 = resid.squaredNorm() / static_cast<double>(dz - (d + 1));
    const Matrix cov =
        s2 * numerics::chol_solve(numerics::cholesky(xw.transpose() * xw), Matrix::Identity(d + 1, d + 1));

    EstimateReport rep;
    rep.method = "mr_egger";
    rep.theta_hat = coef.col(0).tail(d);
    rep.se = cov.diagonal().tail(d).cwiseMax(0.0).cwiseSqrt();
    rep.instrument_dim = static_cast<int>(dz);
    rep.min_sv_first_stage = rank_condition_check(Z, D, 1e-6).min_sv;
    rep.n_used = n;
    if (theta_true) {
        require_shape(theta_true->size() == d, "mr_egger: theta_true length != d");
        rep.bias = rep.theta_hat - *theta_true;
    }
    return rep;
}

std::string report_json(const EstimateReport& rep) {
    nlohmann::json j;
    j["method"] = rep.method;
    j["theta_hat"] = std::vector<double>(rep.theta_hat.data(), rep.theta_hat.data() + rep.theta_hat.size());
    j["se"] = std::vector<double>(rep.se.data(), rep.se.data() + rep.se.size());
    if (rep.bias)
        j["bias"] = std::vector<double>(rep.bias->data(), rep.bias->data() + rep.bias->size());
    j["instrument_dim"] = rep.instrument_dim;
    j["min_sv_first_stage"] = rep.min_sv_first_stage;
    j["n_used"] = rep.n_used;
    return j.dump(2);
}

std::string report_csv_header() {
    return "run,method,coord,theta_hat,se,bias,instrument_dim,min_sv_first_stage,n_used";
}

std::string report_csv_rows(const EstimateReport& rep, const std::string& run_tag) {
    std::string out;
    for (Index c = 0; c < rep.theta_hat.size(); ++c) {
        out += run_tag + "," + rep.method + "," + std::to_string(c) + "," + fmt17(rep.theta_hat(c))
               + "," + fmt17(rep.se(c)) + "," + (rep.bias ? fmt17((*rep.bias)(c)) : std::string(""))
               + "," + std::to_string(rep.instrument_dim) + "," + fmt17(rep.min_sv_first_stage) + ","
               + std::to_string(rep.n_used) + "\n";
    }
    return out;
}

} // namespace inviv::estimators
