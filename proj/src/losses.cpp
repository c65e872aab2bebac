#include "inviv/losses.hpp"

namespace inviv::losses {

KernelSpec invariance_kernel(InvarianceKind kind) {
    switch (kind) {
    case InvarianceKind::MmdPoly2: return KernelSpec{2, 1.0};
    case InvarianceKind::MmdPoly3: return KernelSpec{3, 1.0};
    case InvarianceKind::MeanVar: break;
    }
    throw ConfigError("invariance_kernel: Mean-Var invariance has no kernel");
}

const char* invariance_name(InvarianceKind kind) {
    switch (kind) {
    case InvarianceKind::MmdPoly2: return "mmd_poly2";
    case InvarianceKind::MmdPoly3: return "mmd_poly3";
    case InvarianceKind::MeanVar: return "mean_var";
    }
    return "?";
}

InvarianceKind invariance_from_name(const std::string& name) {
    if (name == "mmd_poly2") return InvarianceKind::MmdPoly2;
    if (name == "mmd_poly3") return InvarianceKind::MmdPoly3;
    if (name == "mean_var") return InvarianceKind::MeanVar;
    throw ConfigError("unknown invariance loss: " + name);
}

Var loss_recon(Tape& tape, Var z_hat, Var z) {
    require_shape(z_hat.rows() == z.rows() && z_hat.cols() == z.cols(),
                  "loss_recon: shapes differ, " + shape_str(z_hat.value()) + " vs " + shape_str(z.value()));
    return tape.mean(tape.square(tape.sub(z_hat, z)));
}

namespace detail {
Var mmd_unchecked(Tape& tape, Var x, Var y, const KernelSpec& k) {
    Var kxx = tape.mean(tape.gram_poly_kernel(x, x, k.degree, k.offset));
    Var kyy = tape.mean(tape.gram_poly_kernel(y, y, k.degree, k.offset));
    Var kxy = tape.mean(tape.gram_poly_kernel(x, y, k.degree, k.offset));
    return tape.sub(tape.add(kxx, kyy), tape.scalar_mul(2.0, kxy));
}
} // namespace detail

Var loss_mmd(Tape& tape, Var x, Var y, const KernelSpec& k) {
    require_shape(x.cols() == y.cols(),
                  "loss_mmd: feature widths " + std::to_string(x.cols()) + " vs " + std::to_string(y.cols()));
    if (x.rows() < 2 || y.rows() < 2)
        throw ContractError("loss_mmd: at least 2 samples per side required");
    return detail::mmd_unchecked(tape, x, y, k);
}

namespace {

/// Double centering H K H built from ones-vector products:
/// K - colmean - rowmean + grandmean, all O(m^2).
Var center_gram(Tape& tape, Var K) {
    const Index m = K.rows();
    Var u = tape.constant(Matrix::Ones(m, 1));
    const double inv_m = 1.0 / static_cast<double>(m);
    Var col = tape.matmul(u, K, /*trans_a=*/true); // 1 x m column sums
    Var row = tape.matmul(K, u);                   // m x 1 row sums
    Var tot = tape.matmul(col, u);                 // 1 x 1 grand sum
    Var centered = tape.sub(K, tape.scalar_mul(inv_m, tape.matmul(u, col)));
    centered = tape.sub(centered, tape.scalar_mul(inv_m, tape.matmul(row, u, false, true)));
    Var grand = tape.matmul(tape.matmul(u, tot), u, false, true); // grand-sum outer
    return tape.add(centered, tape.scalar_mul(inv_m * inv_m, grand));
}

/// Per-coordinate column means as 1 x p: (1/n) 1^T X.
Var col_mean(Tape& tape, Var x) {
    Var u = tape.constant(Matrix::Ones(x.rows(), 1));
    return tape.scalar_mul(1.0 / static_cast<double>(x.rows()), tape.matmul(u, x, true));
}

Var l2_norm(Tape& tape, Var row) { return tape.sqrt(tape.sum(tape.square(row))); }

} // namespace

Var loss_hsic(Tape& tape, Var a, Var b, const KernelSpec& k) {
    if (a.rows() != b.rows())
        throw ContractError("loss_hsic: sample counts " + std::to_string(a.rows()) + " vs "
                            + std::to_string(b.rows()));
    if (a.rows() < 4) throw ContractError("loss_hsic: at least 4 samples required");
    const double m = static_cast<double>(a.rows());
    Var K = tape.gram_poly_kernel(a, a, k.degree, k.offset);
    Var L = tape.gram_poly_kernel(b, b, k.degree, k.offset);
    Var kc = center_gram(tape, K);
    return tape.scalar_mul(1.0 / (m * m), tape.sum(tape.elem_mul(kc, L)));
}

Var loss_meanvar(Tape& tape, Var x, Var y) {
    require_shape(x.cols() == y.cols(), "loss_meanvar: feature widths " + std::to_string(x.cols())
                                            + " vs " + std::to_string(y.cols()));
    Var mx = col_mean(tape, x);
    Var my = col_mean(tape, y);
    Var ex2 = col_mean(tape, tape.square(x));
    Var ey2 = col_mean(tape, tape.square(y));
    Var vx = tape.sub(ex2, tape.square(mx)); // population variance
    Var vy = tape.sub(ey2, tape.square(my));
    return tape.add(l2_norm(tape, tape.sub(mx, my)), l2_norm(tape, tape.sub(vx, vy)));
}

Var loss_logdet_penalty(Tape& tape, Var latent, double eps) {
    const Index n = latent.rows();
    const Index m = latent.cols();
    if (n < m + 1)
        throw ContractError("loss_logdet_penalty: need n >= cols+1, got n=" + std::to_string(n)
                            + ", cols=" + std::to_string(m));
    Var mu = col_mean(tape, latent);
    Var u = tape.constant(Matrix::Ones(n, 1));
    Var centered = tape.sub(latent, tape.matmul(u, mu));
    Var cov = tape.scalar_mul(1.0 / static_cast<double>(n), tape.matmul(centered, centered, true));
    Var ridged = tape.add(cov, tape.constant(eps * Matrix::Identity(m, m)));
    return tape.scalar_mul(-1.0, tape.log_det(ridged));
}

ObjectiveParts total_objective(Tape& tape, const std::vector<Var>& z_batches,
                               const nn::TapeModel& model, const ObjectiveConfig& cfg) {
    const size_t K = z_batches.size();
    if (K == 0) throw ContractError("total_objective: no batches");
    if (cfg.lambda1 > 0.0 && K < 2)
        throw ConfigError("total_objective: invariance loss requires >= 2 environments");
    if (cfg.lambda2 > 0.0 && model.q_hat < 1)
        throw ConfigError("total_objective: independence loss requires q_hat >= 1");
    if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0 || cfg.delta < 0.0)
        throw ConfigError("total_objective: weights must be nonnegative");

    std::vector<nn::Encoded> enc(K);
    Var recon;
    for (size_t k = 0; k < K; ++k) {
        enc[k] = nn::encode(tape, model, z_batches[k]);
        Var z_hat = nn::decode(tape, model, enc[k].latent);
        Var r = loss_recon(tape, z_hat, z_batches[k]);
        recon = (k == 0) ? r : tape.add(recon, r);
    }

    ObjectiveParts parts;
    parts.recon = recon;
    Var total = recon;

    if (cfg.lambda1 > 0.0) {
        Var inv;
        bool first = true;
        for (size_t j = 0; j < K; ++j) {
            for (size_t k = j + 1; k < K; ++k) {
                Var term = cfg.invariance == InvarianceKind::MeanVar
                               ? loss_meanvar(tape, enc[j].what, enc[k].what)
                               : loss_mmd(tape, enc[j].what, enc[k].what, invariance_kernel(cfg.invariance));
                inv = first ? term : tape.add(inv, term);
                first = false;
            }
        }
        parts.inv = inv;
        total = tape.add(total, tape.scalar_mul(cfg.lambda1, inv));
    } else {
        parts.inv = tape.constant_scalar(0.0);
    }

    if (cfg.lambda2 > 0.0) {
        Var ind;
        for (size_t k = 0; k < K; ++k) {
            Var term = loss_hsic(tape, enc[k].what, enc[k].vhat, cfg.ind_kernel);
            ind = (k == 0) ? term : tape.add(ind, term);
        }
        parts.ind = ind;
        total = tape.add(total, tape.scalar_mul(cfg.lambda2, ind));
    } else {
        parts.ind = tape.constant_scalar(0.0);
    }

    if (cfg.delta > 0.0) {
        // pooled covariance across environments assembled from per-env pieces
        Index n_total = 0;
        for (const auto& e : enc) n_total += e.latent.rows();
        const Index m = enc[0].latent.cols();
        if (n_total < m + 1)
            throw ContractError("total_objective: log-det penalty needs pooled n >= latent width + 1");
        const double inv_n = 1.0 / static_cast<double>(n_total);
        Var second, mu_sum;
        for (size_t k = 0; k < K; ++k) {
            Var lat = enc[k].latent;
            Var piece = tape.matmul(lat, lat, true);
            Var u = tape.constant(Matrix::Ones(lat.rows(), 1));
            Var csum = tape.matmul(u, lat, true);
            second = (k == 0) ? piece : tape.add(second, piece);
            mu_sum = (k == 0) ? csum : tape.add(mu_sum, csum);
        }
        Var mu = tape.scalar_mul(inv_n, mu_sum);
        Var cov = tape.sub(tape.scalar_mul(inv_n, second), tape.matmul(mu, mu, true));
        Var ridged = tape.add(cov, tape.constant(cfg.logdet_eps * Matrix::Identity(m, m)));
        parts.penalty = tape.scalar_mul(-1.0, tape.log_det(ridged));
        total = tape.add(total, tape.scalar_mul(cfg.delta, parts.penalty));
    } else {
        parts.penalty = tape.constant_scalar(0.0);
    }

    parts.total = total;
    return parts;
}

} // namespace inviv::losses
