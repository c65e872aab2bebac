#pragma once

#include <optional>
#include <string>
#include <vector>

#include "inviv/common.hpp"

namespace inviv::estimators {

struct EstimateReport {
    std::string method;
    Vector theta_hat;           // d
    Vector se;                  // classical homoskedastic asymptotic SEs
    std::optional<Vector> bias; // theta_hat - theta_true when supplied
    int instrument_dim = 0;
    double min_sv_first_stage = 0.0; // min singular value of (1/n) inst^T D
    Index n_used = 0;
};

struct RankDiagnostic {
    double min_sv = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

/// Min singular value of the sample cross-moment (1/n) inst^T D, compared to a
/// threshold (default 1e-3). Full column rank in D is required for the moment
/// restriction to pin down theta, so extra columns in D beyond inst's rank fail.
RankDiagnostic rank_condition_check(const Eigen::Ref<const Matrix>& inst,
                                    const Eigen::Ref<const Matrix>& D, double threshold = 1e-3);

/// Linear two-stage least squares with instrument block W. An intercept column
/// is appended to the instruments internally, so the estimate is exactly
/// invariant to invertible affine maps of W. Throws WeakInstrumentError when
/// the (1/n) W^T D cross-moment has min singular value <= 1e-6.
EstimateReport tsls(const Eigen::Ref<const Matrix>& W, const Eigen::Ref<const Matrix>& D,
                    const Eigen::Ref<const Matrix>& Y,
                    const std::optional<Vector>& theta_true = std::nullopt);

/// Partialling-out 2SLS: residualize W, D, Y on [1, V] by OLS, then tsls on
/// the residuals.
EstimateReport po_tsls(const Eigen::Ref<const Matrix>& W, const Eigen::Ref<const Matrix>& V,
                       const Eigen::Ref<const Matrix>& D, const Eigen::Ref<const Matrix>& Y,
                       const std::optional<Vector>& theta_true = std::nullopt);

/// Linearly partial the one-hot environment indicator (one level dropped,
/// intercept kept) out of each supplied block. Requires >= 2 distinct labels.
std::vector<Matrix> po_env_indicator(const std::vector<int>& labels,
                                     const std::vector<Matrix>& blocks);

/// Two-step summary-statistic Egger regression extended to multivariable
/// exposures: univariate per-instrument associations with each exposure column
/// and the outcome, then weighted least squares of the outcome associations on
/// [1, exposure associations] with weights 1/SE^2. The slope vector estimates
/// theta; the intercept absorbs directional pleiotropy. This is a baseline
/// approximation; individual-level Egger is not standardized for this setting.
EstimateReport mr_egger(const Eigen::Ref<const Matrix>& Z, const Eigen::Ref<const Matrix>& D,
                        const Eigen::Ref<const Matrix>& Y,
                        const std::optional<Vector>& theta_true = std::nullopt);

std::string report_json(const EstimateReport& report);

/// CSV aggregation: one row per method x parameter coordinate.
std::string report_csv_header();
std::string report_csv_rows(const EstimateReport& report, const std::string& run_tag);

} // namespace inviv::estimators
