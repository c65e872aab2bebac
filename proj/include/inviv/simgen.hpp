#pragma once

#include <optional>
#include <string>
#include <vector>

#include "inviv/common.hpp"
#include "inviv/numerics.hpp"

namespace inviv::simgen {

/// Declarative description of the multi-environment partially linear SCM:
///   H = sd_h * eps_H;  V = H eta^T + eps_V;  W = eps_W;
///   D = V beta1 + W beta2 + H alpha1 + sd_d * eps_D;
///   Y = D theta + H alpha2 + sd_y * eps_Y;   Z = f(W, V).
/// Rows are samples; eps_V ~ N(0, Sigma_V), eps_W ~ N(0, Sigma_W).
/// W's law is identical across environments; eta varies with the environment.
struct ScmSpec {
    int p = 2; // dim W
    int q = 2; // dim V
    int h = 2; // dim H
    int d = 1; // dim D
    int K = 2; // environments

    Vector theta;             // d
    Matrix beta1;             // q x d
    Matrix beta2;             // p x d
    Matrix alpha1;            // h x d
    Vector alpha2;            // h
    std::vector<Matrix> eta;  // K matrices, q x h
    Matrix sigma_w;           // p x p, PD
    Matrix sigma_v;           // q x q, PD
    double sd_h = 1.0, sd_d = 1.0, sd_y = 1.0;

    void validate() const;
    static ScmSpec d2_default();
};

/// Appendix-style 3-population variant: eta = I, diag(2,1), diag(1,2).
ScmSpec three_env_spec();

enum class MixingKind { InjectivePolynomial, InvertibleMlp };

struct MixingSpec {
    MixingKind kind = MixingKind::InjectivePolynomial;
    int degree = 1;   // polynomial only
    int d_z = 5;
    uint64_t seed = 7;

    /// Polynomial mixing with d_z equal to the monomial count C(d_u+L, L).
    static MixingSpec poly(int degree, int d_u, uint64_t seed);
    static MixingSpec mlp(int d_u, uint64_t seed);
};

/// A mixing function with weights realized from MixingSpec.seed.
class Mixing {
  public:
    static Mixing create(const MixingSpec& spec, int d_u);

    Matrix apply(const Eigen::Ref<const Matrix>& u) const;
    /// Layer-wise inverse; invertible-MLP mixing only.
    Matrix invert(const Eigen::Ref<const Matrix>& z) const;

    const MixingSpec& spec() const { return spec_; }
    const Matrix& poly_coeff() const { return A_; } // d_z x C
    int d_u() const { return d_u_; }

  private:
    MixingSpec spec_;
    int d_u_ = 0;
    Matrix A_;        // polynomial coefficient matrix
    Matrix w1_, w2_;  // MLP square layers (applied as x * W)
    double leaky_ = 0.2;
};

/// Per-environment observables plus oracle latents kept for diagnostics.
struct EnvDataset {
    Matrix Z, D, Y;
    Matrix W, V, H; // zero-column when unavailable (external data)
    int env = 0;
    uint64_t seed = 0;
    std::string split = "train";

    Index n() const { return Z.rows(); }
    bool has_oracle() const { return W.cols() > 0; }
};

struct SimResult {
    std::vector<EnvDataset> train;
    std::vector<EnvDataset> val;
    Mixing mixing;
};

/// Draws the exact structural equations in topological order; pure function of
/// (spec, mixing, seed): identical inputs give bit-identical datasets.
SimResult simulate(const ScmSpec& spec, const MixingSpec& mixing, Index n_train, Index n_val,
                   uint64_t seed);

/// Convenience one-shot mixers over a latent block (sample weights + apply).
Matrix mix_polynomial(const Eigen::Ref<const Matrix>& u, const MixingSpec& spec);
Matrix mix_invertible_mlp(const Eigen::Ref<const Matrix>& u, const MixingSpec& spec);

enum class Counterexample { EfficiencyLossC4, ColliderC5, InsufficientC2, NonidentVC3 };

Counterexample counterexample_from_name(const std::string& name);
const char* counterexample_name(Counterexample c);

/// Single-environment fixture following the named example's SCM, with its
/// designated (What, Vhat) substitutions exposed alongside the oracle blocks.
struct CounterexampleData {
    EnvDataset data;
    Matrix what_sub;
    Matrix vhat_sub;
    double theta_true = 1.0;
};

CounterexampleData make_counterexample(Counterexample which, Index n, uint64_t seed);

/// Dataset files: one CSV per environment, header
/// z_0..z_{dz-1},d_0..d_{d-1},y,w_0..,v_0..,h_0.. at 17 significant digits,
/// plus a JSON sidecar recording spec, mixing, seed, split.
void write_dataset_csv(const EnvDataset& ds, const std::string& path);
EnvDataset read_dataset_csv(const std::string& path);

std::string sidecar_json(const ScmSpec& spec, const MixingSpec& mixing, uint64_t seed,
                         Index n_train, Index n_val);
struct SidecarInfo {
    ScmSpec spec;
    MixingSpec mixing;
    uint64_t seed = 0;
    Index n_train = 0, n_val = 0;
};
SidecarInfo parse_sidecar_json(const std::string& text);

} // namespace inviv::simgen
