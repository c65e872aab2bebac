#pragma once

#include <vector>

#include "inviv/autodiff.hpp"
#include "inviv/nn.hpp"

namespace inviv::losses {

using autodiff::Tape;
using autodiff::Var;

struct KernelSpec {
    int degree = 2;    // inhomogeneous polynomial kernel (x.y + offset)^degree
    double offset = 1.0;
};

enum class InvarianceKind { MmdPoly2, MmdPoly3, MeanVar };

KernelSpec invariance_kernel(InvarianceKind kind);
const char* invariance_name(InvarianceKind kind);
InvarianceKind invariance_from_name(const std::string& name);

/// Mean over all entries of the squared difference.
Var loss_recon(Tape& tape, Var z_hat, Var z);

/// Biased V-statistic MMD^2 = mean(Kxx) - 2 mean(Kxy) + mean(Kyy).
/// Requires at least 2 samples on each side.
Var loss_mmd(Tape& tape, Var x, Var y, const KernelSpec& k);

/// Biased estimator (1/m^2) trace(K H L H), H = I - (1/m) 11^T.
/// Requires equal sample counts, m >= 4.
Var loss_hsic(Tape& tape, Var a, Var b, const KernelSpec& k);

/// ||mean(X)-mean(Y)||_2 + ||var(X)-var(Y)||_2 with per-coordinate
/// population moments.
Var loss_meanvar(Tape& tape, Var x, Var y);

/// -log det(Cov(latent) + eps I) with the population (1/n) covariance.
/// Requires n >= cols + 1.
Var loss_logdet_penalty(Tape& tape, Var latent, double eps);

struct ObjectiveConfig {
    double lambda1 = 10.0;
    double lambda2 = 10.0;
    double delta = 0.01;
    InvarianceKind invariance = InvarianceKind::MmdPoly2;
    KernelSpec ind_kernel{2, 1.0};
    double logdet_eps = 1e-4;
};

struct ObjectiveParts {
    Var total, recon, inv, ind, penalty;
};

/// Eq-style weighted objective over per-environment batches:
/// sum_k recon_k + lambda1 * sum_{j<k} Inv(What_j, What_k)
///              + lambda2 * sum_k Ind(What_k, Vhat_k)
///              + delta * logdet penalty on the pooled latents.
/// Terms with zero weight are skipped entirely.
ObjectiveParts total_objective(Tape& tape, const std::vector<Var>& z_batches,
                               const nn::TapeModel& model, const ObjectiveConfig& cfg);

namespace detail {
/// MMD without the sample-count precondition (single-sample kernel algebra
/// is still well defined; exposed for tests).
Var mmd_unchecked(Tape& tape, Var x, Var y, const KernelSpec& k);
} // namespace detail

} // namespace inviv::losses
