#pragma once

#include <string>
#include <utility>
#include <vector>

#include "inviv/autodiff.hpp"
#include "inviv/common.hpp"

namespace inviv::nn {

struct Linear {
    Matrix w; // in x out, applied as x * w + b
    Matrix b; // 1 x out
};

struct LayerNormParams {
    Matrix gain; // 1 x m
    Matrix bias; // 1 x m
    double eps = 1e-5;
};

enum class DecoderKind { Polynomial, Mlp };

/// Encoder d_z -> hidden -> hidden -> p_hat+q_hat with LayerNorm+ReLU after the
/// first two linear layers. The first p_hat output coordinates are the What
/// slice, the remainder the Vhat slice. Decoder is either a monomial feature
/// map followed by one linear layer, or a plain ReLU MLP.
struct AutoencoderModel {
    int d_z = 0;
    int p_hat = 0;
    int q_hat = 0;
    int hidden = 100;
    DecoderKind decoder = DecoderKind::Polynomial;
    int poly_degree = 1;

    Linear enc1, enc2, enc3;
    LayerNormParams ln1, ln2;
    Linear dec_poly;
    Linear dec1, dec2, dec3;

    int latent_dim() const { return p_hat + q_hat; }
    std::vector<Matrix*> parameters();
    std::vector<const Matrix*> parameters() const;
    std::vector<std::pair<std::string, Matrix*>> named_parameters();
};

/// Fresh model with weights ~ Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)),
/// biases zero, LayerNorm gain 1 / bias 0; fully determined by seed.
AutoencoderModel make_autoencoder(int d_z, int p_hat, int q_hat, DecoderKind decoder,
                                  int poly_degree, uint64_t seed, int hidden = 100);

/// Model parameters bound onto a tape as leaves, in parameters() order.
struct TapeModel {
    autodiff::Var e1w, e1b, n1g, n1b, e2w, e2b, n2g, n2b, e3w, e3b;
    autodiff::Var dpw, dpb;
    autodiff::Var d1w, d1b, d2w, d2b, d3w, d3b;
    std::vector<autodiff::Var> all;
    DecoderKind decoder = DecoderKind::Polynomial;
    int poly_degree = 1;
    int p_hat = 0, q_hat = 0;
    double ln_eps = 1e-5;
};

TapeModel bind_model(autodiff::Tape& tape, const AutoencoderModel& model, bool requires_grad);

struct Encoded {
    autodiff::Var latent; // n x (p_hat+q_hat)
    autodiff::Var what;   // n x p_hat
    autodiff::Var vhat;   // n x q_hat (0 columns when q_hat == 0)
};

Encoded encode(autodiff::Tape& tape, const TapeModel& m, autodiff::Var z);
autodiff::Var decode(autodiff::Tape& tape, const TapeModel& m, autodiff::Var latent);

/// Pure evaluation wrappers (deterministic forward pass, no gradients kept).
std::pair<Matrix, Matrix> encode(const AutoencoderModel& model, const Eigen::Ref<const Matrix>& Z);
Matrix encode_latent(const AutoencoderModel& model, const Eigen::Ref<const Matrix>& Z);
Matrix decode(const AutoencoderModel& model, const Eigen::Ref<const Matrix>& latent);
Matrix reconstruct(const AutoencoderModel& model, const Eigen::Ref<const Matrix>& Z);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    double clip_norm = 1.0;
};

struct AdamState {
    AdamConfig cfg;
    long step = 0;
    std::vector<Matrix> m, v;

    static AdamState init(const std::vector<Matrix*>& params, AdamConfig cfg);
};

/// One optimizer step: global-norm clip of all gradients to cfg.clip_norm
/// first, then bias-corrected Adam moments with decoupled weight decay
/// (param -= lr * wd * param). grads are modified in place by the clip.
/// Returns the pre-clip global gradient norm. Throws DivergenceError on
/// non-finite gradients.
double adam_step(AdamState& state, const std::vector<Matrix*>& params, std::vector<Matrix>& grads);

/// Binary checkpoint: magic, JSON metadata header (architecture + tensor
/// shapes), then raw little-endian doubles per tensor in parameters() order.
/// Round trip is bit-exact.
void save_checkpoint(const AutoencoderModel& model, const std::string& path);
AutoencoderModel load_checkpoint(const std::string& path);

} // namespace inviv::nn
