#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "inviv/estimators.hpp"
#include "inviv/losses.hpp"
#include "inviv/nn.hpp"
#include "inviv/simgen.hpp"

namespace inviv::pipeline {

struct TrainConfig {
    double lambda1 = 10.0;
    double lambda2 = 10.0;
    double delta = 0.01;
    int p_hat = 2;
    int q_hat = 2;
    Index batch_size = 500;
    int epochs = 400;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double grad_clip = 1.0;
    losses::InvarianceKind invariance = losses::InvarianceKind::MmdPoly2;
    uint64_t seed = 0;
    int hidden = 100;
    double logdet_eps = 1e-4;
    nn::DecoderKind decoder = nn::DecoderKind::Polynomial;
    int decoder_degree = 1;

    void validate() const;
};

struct EpochLosses {
    int epoch = 0;
    double train_total = 0, train_recon = 0, train_inv = 0, train_ind = 0, train_penalty = 0;
    double val_total = 0, val_recon = 0, val_inv = 0, val_ind = 0, val_penalty = 0;
};

struct TrainResult {
    nn::AutoencoderModel model;
    std::vector<EpochLosses> curves;
    double final_val_total = 0;
};

struct LossValues {
    double total = 0, recon = 0, inv = 0, ind = 0, penalty = 0;
};

/// Full objective evaluated on the given per-environment matrices (no grads).
LossValues eval_objective(const nn::AutoencoderModel& model, const std::vector<Matrix>& z_per_env,
                          const losses::ObjectiveConfig& cfg);

losses::ObjectiveConfig objective_config(const TrainConfig& cfg);

/// Minibatch training of the invariance/independence-constrained autoencoder.
/// Each step draws one equal-size minibatch per environment (without
/// replacement within an epoch, reshuffled per epoch, all streams seeded),
/// evaluates the weighted objective and applies one Adam step. Deterministic
/// given (data, config). Throws DivergenceError (with the step index) on a
/// non-finite loss.
TrainResult train(const std::vector<simgen::EnvDataset>& train_envs,
                  const std::vector<simgen::EnvDataset>& val_envs, const TrainConfig& cfg);

std::string curves_csv(const std::vector<EpochLosses>& curves);

enum class GridSubset { All, Lambda2Zero, Lambda2Positive };

struct CvRun {
    double lambda1 = 0, lambda2 = 0;
    double val_total = 0;
    bool diverged = false;
    std::string error;
};

struct CvResult {
    TrainConfig best;
    std::vector<CvRun> runs;
};

/// Trains every (lambda1, lambda2) combination in the grid (restricted to the
/// requested subset) and selects the one with minimal validation total loss,
/// each candidate scored with its own lambda weights. Diverged runs are
/// recorded and skipped; throws if every run diverged.
CvResult cross_validate(const std::vector<simgen::EnvDataset>& train_envs,
                        const std::vector<simgen::EnvDataset>& val_envs, const TrainConfig& base,
                        const std::vector<double>& l1_grid, const std::vector<double>& l2_grid,
                        GridSubset subset, int jobs = 1);

struct IdentifiabilityReport {
    Vector r2_w;      // per What coordinate, clipped to [0, 1]
    Vector r2_w_raw;  // unclipped
    double min_sv_A = 0;
    double cross_env_mmd = 0; // mean pairwise MMD^2 of What (poly-2 kernel)
    double hsic_wv = 0;       // mean per-env HSIC(What, Vhat)
    bool v_fit_present = false;
    Vector r2_v;
    Vector r2_v_raw;
    double min_sv_B = 0;
};

/// Pooled-environment affine fit of the learned representations on the oracle
/// latents: What ~ [1, W] per coordinate (and Vhat ~ [1, V] when fit_v).
IdentifiabilityReport identifiability_report(const nn::AutoencoderModel& model,
                                             const std::vector<simgen::EnvDataset>& envs,
                                             bool fit_v);

std::string identifiability_json(const IdentifiabilityReport& rep);

enum class ExperimentName { MixingAblation, MisspecDims, IndependenceAblation, ThreeEnv, InvarianceLossAblation };

ExperimentName experiment_from_name(const std::string& name);
const char* experiment_name(ExperimentName name);
std::vector<std::string> experiment_names();

struct ExperimentConfig {
    std::vector<uint64_t> seeds;
    Index n_train = 4000;
    Index n_val = 1000;
    int cv_epochs = 50;
    int final_epochs = 100;
    Index batch_size = 500;
    int jobs = 1;
    std::vector<double> l1_grid{1, 5, 10};
    std::vector<double> l2_grid{0, 1, 5, 10};
    bool use_grid = true; // false: skip cross-validation, train at lambda1=lambda2=10
    uint64_t mixing_seed = 7;
    uint64_t init_seed = 1; // weight init / shuffle seed, fixed across data seeds

    static ExperimentConfig desk(std::vector<uint64_t> seeds, int jobs);
    static ExperimentConfig full(std::vector<uint64_t> seeds, int jobs);
};

struct ResultRow {
    std::string experiment;
    uint64_t seed = 0;
    std::string mixing;
    int p_hat = 0, q_hat = 0;
    double lambda1 = 0, lambda2 = 0;
    std::string method;
    int coord = 0;
    double theta_hat = 0, bias = 0, se = 0;
    double r2_w_min = 0;
    double min_sv_firststage = 0;
};

struct ExperimentResult {
    std::vector<ResultRow> rows; // sorted deterministically
    std::vector<std::string> errors;
    int tasks_total = 0;
    int tasks_failed = 0;
};

/// Per seed: simulate -> cross-validate -> train best -> estimate with
/// 2SLS(What), PO(Vhat)-2SLS(What), 2SLS(Z), Egger(Z), PO(K)-2SLS(Z),
/// PO(K)-Egger(Z). Per-task failures are recorded, not fatal; the experiment
/// fails only when more than 25% of the tasks error.
ExperimentResult run_experiment(ExperimentName name, const ExperimentConfig& cfg);

std::string results_csv(const std::vector<ResultRow>& rows);

struct MethodSummary {
    std::string experiment, mixing, method;
    int p_hat = 0, coord = 0;
    int count = 0;
    double mean_bias = 0, sd_bias = 0, q25 = 0, median = 0, q75 = 0, mean_abs_bias = 0;
};

std::vector<MethodSummary> summarize(const std::vector<ResultRow>& rows);
std::string summary_csv(const std::vector<MethodSummary>& summaries);

/// Runs fn(0..n-1) on up to `jobs` worker threads. Tasks must be independent.
void parallel_for(int jobs, int n_tasks, const std::function<void(int)>& fn);

} // namespace inviv::pipeline
