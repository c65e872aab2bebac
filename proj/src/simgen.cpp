#include "inviv/simgen.hpp"

#include <Eigen/SVD>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "inviv/monomials.hpp"
#include "inviv/rng.hpp"

namespace inviv::simgen {

void ScmSpec::validate() const {
    if (p < 1 || q < 1 || h < 1 || d < 1 || K < 1) throw ConfigError("ScmSpec: dims must be >= 1");
    auto check_dims = [](const Matrix& m, Index r, Index c, const char* name) {
        if (m.rows() != r || m.cols() != c)
            throw ConfigError(std::string("ScmSpec: ") + name + " must be " + std::to_string(r) + "x"
                              + std::to_string(c) + ", got " + std::to_string(m.rows()) + "x"
                              + std::to_string(m.cols()));
    };
    if (theta.size() != d) throw ConfigError("ScmSpec: theta must have length d");
    check_dims(beta1, q, d, "beta1");
    check_dims(beta2, p, d, "beta2");
    check_dims(alpha1, h, d, "alpha1");
    if (alpha2.size() != h) throw ConfigError("ScmSpec: alpha2 must have length h");
    if (static_cast<int>(eta.size()) != K) throw ConfigError("ScmSpec: need one eta per environment");
    for (const auto& e : eta) check_dims(e, q, h, "eta[k]");
    check_dims(sigma_w, p, p, "sigma_w");
    check_dims(sigma_v, q, q, "sigma_v");
    numerics::cholesky(sigma_w); // PD or throws
    numerics::cholesky(sigma_v);
    if (K >= 2) {
        bool differ = false;
        for (size_t k = 1; k < eta.size() && !differ; ++k)
            differ = (eta[k] - eta[0]).cwiseAbs().maxCoeff() > 0.0;
        if (!differ) throw ConfigError("ScmSpec: eta must differ across at least two environments");
    }
    if (!(sd_h > 0.0 && sd_d >= 0.0 && sd_y >= 0.0)) throw ConfigError("ScmSpec: bad noise scales");
}

ScmSpec d2_like(int K) {
    ScmSpec s;
    s.p = s.q = s.h = 2;
    s.d = 1;
    s.K = K;
    s.theta = Vector::Constant(1, 1.0);
    s.beta1 = Matrix::Ones(2, 1);
    s.beta2 = Matrix::Ones(2, 1);
    s.alpha1 = Matrix::Ones(2, 1);
    s.alpha2 = Vector::Ones(2);
    Matrix sigma(2, 2);
    sigma << 1.0, 0.5, 0.5, 1.0;
    s.sigma_w = sigma;
    s.sigma_v = sigma;
    return s;
}

ScmSpec ScmSpec::d2_default() {
    ScmSpec s = d2_like(2);
    s.eta = {Matrix::Identity(2, 2), 2.0 * Matrix::Identity(2, 2)};
    return s;
}

ScmSpec three_env_spec() {
    ScmSpec s = d2_like(3);
    Matrix e2(2, 2), e3(2, 2);
    e2 << 2.0, 0.0, 0.0, 1.0;
    e3 << 1.0, 0.0, 0.0, 2.0;
    s.eta = {Matrix::Identity(2, 2), e2, e3};
    return s;
}

MixingSpec MixingSpec::poly(int degree, int d_u, uint64_t seed) {
    MixingSpec m;
    m.kind = MixingKind::InjectivePolynomial;
    m.degree = degree;
    m.d_z = static_cast<int>(monomial_count(d_u, degree));
    m.seed = seed;
    return m;
}

MixingSpec MixingSpec::mlp(int d_u, uint64_t seed) {
    MixingSpec m;
    m.kind = MixingKind::InvertibleMlp;
    m.degree = 0;
    m.d_z = d_u;
    m.seed = seed;
    return m;
}

namespace {

/// Square matrix with singular values clamped to [0.5, 2.0].
Matrix clamped_square_weight(Rng& rng, int m) {
    Matrix g = rng.normal_matrix(m, m);
    Eigen::JacobiSVD<Matrix> svd(g, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vector s = svd.singularValues();
    for (Index i = 0; i < s.size(); ++i) s(i) = std::clamp(s(i), 0.5, 2.0);
    return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

} // namespace

Mixing Mixing::create(const MixingSpec& spec, int d_u) {
    Mixing mix;
    mix.spec_ = spec;
    mix.d_u_ = d_u;
    Rng rng(spec.seed);
    if (spec.kind == MixingKind::InjectivePolynomial) {
        if (spec.degree < 1) throw ConfigError("Mixing: polynomial degree >= 1 required");
        const Index C = monomial_count(d_u, spec.degree);
        if (spec.d_z < C)
            throw ConfigError("Mixing: d_z=" + std::to_string(spec.d_z)
                              + " < monomial count " + std::to_string(C));
        bool ok = false;
        for (int attempt = 0; attempt < 5 && !ok; ++attempt) {
            mix.A_ = rng.normal_matrix(spec.d_z, C);
            ok = numerics::min_singular_value(mix.A_) > 1e-6;
        }
        if (!ok)
            throw ConfigError("Mixing: coefficient matrix rank check failed for seed "
                              + std::to_string(spec.seed));
    } else {
        if (spec.d_z != d_u)
            throw ConfigError("Mixing: invertible MLP requires d_z == p+q, got d_z="
                              + std::to_string(spec.d_z) + ", p+q=" + std::to_string(d_u));
        mix.w1_ = clamped_square_weight(rng, d_u);
        mix.w2_ = clamped_square_weight(rng, d_u);
    }
    return mix;
}

namespace {
inline double leaky_relu(double x, double slope) { return x >= 0.0 ? x : slope * x; }
inline double leaky_relu_inv(double y, double slope) { return y >= 0.0 ? y : y / slope; }
} // namespace

Matrix Mixing::apply(const Eigen::Ref<const Matrix>& u) const {
    require_shape(u.cols() == d_u_, "Mixing::apply: input width " + std::to_string(u.cols())
                                        + " != " + std::to_string(d_u_));
    if (spec_.kind == MixingKind::InjectivePolynomial)
        return monomial_features(u, spec_.degree) * A_.transpose();
    Matrix a = u * w1_;
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j) a(i, j) = leaky_relu(a(i, j), leaky_);
    return a * w2_;
}

Matrix Mixing::invert(const Eigen::Ref<const Matrix>& z) const {
    if (spec_.kind != MixingKind::InvertibleMlp)
        throw ContractError("Mixing::invert: only the invertible MLP mixing has an inverse");
    Matrix h = w2_.transpose().fullPivLu().solve(z.transpose()).transpose();
    for (Index i = 0; i < h.rows(); ++i)
        for (Index j = 0; j < h.cols(); ++j) h(i, j) = leaky_relu_inv(h(i, j), leaky_);
    return w1_.transpose().fullPivLu().solve(h.transpose()).transpose();
}

Matrix mix_polynomial(const Eigen::Ref<const Matrix>& u, const MixingSpec& spec) {
    if (spec.kind != MixingKind::InjectivePolynomial)
        throw ContractError("mix_polynomial: spec kind mismatch");
    return Mixing::create(spec, static_cast<int>(u.cols())).apply(u);
}

Matrix mix_invertible_mlp(const Eigen::Ref<const Matrix>& u, const MixingSpec& spec) {
    if (spec.kind != MixingKind::InvertibleMlp)
        throw ContractError("mix_invertible_mlp: spec kind mismatch");
    return Mixing::create(spec, static_cast<int>(u.cols())).apply(u);
}

namespace {

EnvDataset draw_env(const ScmSpec& spec, const Mixing& mixing, int env, Index n, uint64_t stream,
                    const Matrix& chol_w, const Matrix& chol_v, const std::string& split) {
    Rng rng(stream);
    EnvDataset ds;
    ds.env = env;
    ds.seed = stream;
    ds.split = split;
    ds.H = spec.sd_h * rng.normal_matrix(n, spec.h);
    ds.V = ds.H * spec.eta[static_cast<size_t>(env)].transpose()
           + rng.normal_matrix(n, spec.q) * chol_v.transpose();
    ds.W = rng.normal_matrix(n, spec.p) * chol_w.transpose();
    ds.D = ds.V * spec.beta1 + ds.W * spec.beta2 + ds.H * spec.alpha1
           + spec.sd_d * rng.normal_matrix(n, spec.d);
    ds.Y = ds.D * spec.theta + ds.H * spec.alpha2 + spec.sd_y * rng.normal_matrix(n, 1);
    Matrix u(n, spec.p + spec.q);
    u << ds.W, ds.V;
    ds.Z = mixing.apply(u);
    require_finite(ds.Z, "simulate: Z");
    return ds;
}

} // namespace

SimResult simulate(const ScmSpec& spec, const MixingSpec& mixing_spec, Index n_train, Index n_val,
                   uint64_t seed) {
    spec.validate();
    if (n_train < 1 || n_val < 0) throw ConfigError("simulate: need n_train >= 1, n_val >= 0");
    Mixing mixing = Mixing::create(mixing_spec, spec.p + spec.q);
    const Matrix chol_w = numerics::cholesky(spec.sigma_w).lower;
    const Matrix chol_v = numerics::cholesky(spec.sigma_v).lower;

    SimResult out{.train = {}, .val = {}, .mixing = mixing};
    for (int k = 0; k < spec.K; ++k) {
        out.train.push_back(draw_env(spec, mixing, k, n_train,
                                     Rng::derive(seed, static_cast<uint64_t>(2 * k)), chol_w, chol_v,
                                     "train"));
        if (n_val > 0)
            out.val.push_back(draw_env(spec, mixing, k, n_val,
                                       Rng::derive(seed, static_cast<uint64_t>(2 * k + 1)), chol_w,
                                       chol_v, "val"));
    }
    return out;
}

Counterexample counterexample_from_name(const std::string& name) {
    if (name == "efficiency_loss_C4") return Counterexample::EfficiencyLossC4;
    if (name == "collider_C5") return Counterexample::ColliderC5;
    if (name == "insufficient_C2") return Counterexample::InsufficientC2;
    if (name == "nonident_V_C3") return Counterexample::NonidentVC3;
    throw ConfigError("unknown counterexample: " + name
                      + " (valid: efficiency_loss_C4, collider_C5, insufficient_C2, nonident_V_C3)");
}

const char* counterexample_name(Counterexample c) {
    switch (c) {
    case Counterexample::EfficiencyLossC4: return "efficiency_loss_C4";
    case Counterexample::ColliderC5: return "collider_C5";
    case Counterexample::InsufficientC2: return "insufficient_C2";
    case Counterexample::NonidentVC3: return "nonident_V_C3";
    }
    return "?";
}

CounterexampleData make_counterexample(Counterexample which, Index n, uint64_t seed) {
    if (n < 2) throw ContractError("make_counterexample: n >= 2 required");
    Rng rng(seed);
    const double theta = 1.0;
    CounterexampleData out;
    out.theta_true = theta;
    EnvDataset& ds = out.data;
    ds.env = 0;
    ds.seed = seed;
    ds.split = "train";

    if (which == Counterexample::EfficiencyLossC4) {
        // V = H + eV; W1 = eW1; W2 = W1 + eW2; D = V + W1 + W2 + H + eD; Y = theta D + H + eY
        Matrix H = rng.normal_matrix(n, 1);
        Matrix V = H + rng.normal_matrix(n, 1);
        Matrix W1 = rng.normal_matrix(n, 1);
        Matrix W2 = W1 + rng.normal_matrix(n, 1);
        Matrix D = V + W1 + W2 + H + rng.normal_matrix(n, 1);
        Matrix Y = theta * D + H + rng.normal_matrix(n, 1);
        ds.H = H;
        ds.V = V;
        ds.W = Matrix(n, 2);
        ds.W << W1, W2;
        ds.D = D;
        ds.Y = Y;
        ds.Z = Matrix(n, 3);
        ds.Z << ds.W, ds.V;
        out.what_sub = W2;
        out.vhat_sub = Matrix(n, 2);
        out.vhat_sub << V, W1;
        return out;
    }
    if (which == Counterexample::ColliderC5) {
        // V = H + eV; W = eW; D = V + W + H + eD; Y = theta D + H + eY; Vhat = V + W
        Matrix H = rng.normal_matrix(n, 1);
        Matrix V = H + rng.normal_matrix(n, 1);
        Matrix W = rng.normal_matrix(n, 1);
        Matrix D = V + W + H + rng.normal_matrix(n, 1);
        Matrix Y = theta * D + H + rng.normal_matrix(n, 1);
        ds.H = H;
        ds.V = V;
        ds.W = W;
        ds.D = D;
        ds.Y = Y;
        ds.Z = Matrix(n, 2);
        ds.Z << W, V;
        out.what_sub = W;
        out.vhat_sub = V + W;
        return out;
    }

    // C2 / C3 share the SCM: scalar V shifted by H, W in R^2 with independent
    // coordinates, Z a full-rank linear mix of (W, V).
    Matrix H = rng.normal_matrix(n, 1);
    Matrix V = H + rng.normal_matrix(n, 1);
    Matrix W = rng.normal_matrix(n, 2);
    Matrix D = V + W.col(0) + W.col(1) + H + rng.normal_matrix(n, 1);
    Matrix Y = theta * D + H + rng.normal_matrix(n, 1);
    Matrix A;
    for (int attempt = 0; attempt < 5; ++attempt) {
        A = rng.normal_matrix(3, 3);
        if (numerics::min_singular_value(A) > 1e-3) break;
    }
    ds.H = H;
    ds.V = V;
    ds.W = W;
    ds.D = D;
    ds.Y = Y;
    Matrix u(n, 3);
    u << W, V;
    ds.Z = u * A.transpose();

    if (which == Counterexample::InsufficientC2) {
        out.what_sub = W.col(0); // partial identification: first coordinate only
        out.vhat_sub = Matrix(n, 2);
        out.vhat_sub << W.col(1), V;
    } else {
        out.what_sub = W; // perfect What, entangled Vhat
        out.vhat_sub = V + W.col(0);
    }
    return out;
}

namespace {

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void append_block_header(std::string& h, const char* prefix, Index cols) {
    for (Index j = 0; j < cols; ++j) {
        if (!h.empty()) h += ',';
        h += prefix + std::to_string(j);
    }
}

} // namespace

void write_dataset_csv(const EnvDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_dataset_csv: cannot open " + path);
    std::string header;
    append_block_header(header, "z_", ds.Z.cols());
    append_block_header(header, "d_", ds.D.cols());
    header += ",y";
    append_block_header(header, "w_", ds.W.cols());
    append_block_header(header, "v_", ds.V.cols());
    append_block_header(header, "h_", ds.H.cols());
    out << header << '\n';
    const Index n = ds.n();
    for (Index i = 0; i < n; ++i) {
        std::string line;
        auto push = [&](double v) {
            if (!line.empty()) line += ',';
            line += fmt17(v);
        };
        for (Index j = 0; j < ds.Z.cols(); ++j) push(ds.Z(i, j));
        for (Index j = 0; j < ds.D.cols(); ++j) push(ds.D(i, j));
        push(ds.Y(i, 0));
        for (Index j = 0; j < ds.W.cols(); ++j) push(ds.W(i, j));
        for (Index j = 0; j < ds.V.cols(); ++j) push(ds.V(i, j));
        for (Index j = 0; j < ds.H.cols(); ++j) push(ds.H(i, j));
        out << line << '\n';
    }
    if (!out) throw IoError("write_dataset_csv: write failed for " + path);
}

EnvDataset read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_dataset_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("read_dataset_csv: empty file " + path);
    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) cols.push_back(tok);
    }
    auto count_prefix = [&](const std::string& p) {
        Index c = 0;
        for (const auto& name : cols)
            if (name.rfind(p, 0) == 0) ++c;
        return c;
    };
    const Index dz = count_prefix("z_"), dd = count_prefix("d_"), dw = count_prefix("w_"),
                dv = count_prefix("v_"), dh = count_prefix("h_");
    if (dz < 1 || dd < 1) throw IoError("read_dataset_csv: header missing z_/d_ blocks in " + path);

    std::vector<double> values;
    Index rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        Index c = 0;
        while (std::getline(ss, tok, ',')) {
            values.push_back(std::stod(tok));
            ++c;
        }
        if (c != static_cast<Index>(cols.size()))
            throw IoError("read_dataset_csv: row " + std::to_string(rows + 1) + " has " + std::to_string(c)
                          + " fields, expected " + std::to_string(cols.size()));
        ++rows;
    }
    EnvDataset ds;
    ds.Z = Matrix(rows, dz);
    ds.D = Matrix(rows, dd);
    ds.Y = Matrix(rows, 1);
    ds.W = Matrix(rows, dw);
    ds.V = Matrix(rows, dv);
    ds.H = Matrix(rows, dh);
    size_t idx = 0;
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < dz; ++j) ds.Z(i, j) = values[idx++];
        for (Index j = 0; j < dd; ++j) ds.D(i, j) = values[idx++];
        ds.Y(i, 0) = values[idx++];
        for (Index j = 0; j < dw; ++j) ds.W(i, j) = values[idx++];
        for (Index j = 0; j < dv; ++j) ds.V(i, j) = values[idx++];
        for (Index j = 0; j < dh; ++j) ds.H(i, j) = values[idx++];
    }
    return ds;
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
    const Index rows = static_cast<Index>(j.size());
    if (rows == 0) return Matrix(0, 0);
    const Index cols = static_cast<Index>(j[0].size());
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index jj = 0; jj < cols; ++jj) m(i, jj) = j[static_cast<size_t>(i)][static_cast<size_t>(jj)].get<double>();
    return m;
}

nlohmann::json spec_to_json(const ScmSpec& s) {
    nlohmann::json j;
    j["p"] = s.p;
    j["q"] = s.q;
    j["h"] = s.h;
    j["d"] = s.d;
    j["K"] = s.K;
    j["theta"] = std::vector<double>(s.theta.data(), s.theta.data() + s.theta.size());
    j["beta1"] = matrix_to_json(s.beta1);
    j["beta2"] = matrix_to_json(s.beta2);
    j["alpha1"] = matrix_to_json(s.alpha1);
    j["alpha2"] = std::vector<double>(s.alpha2.data(), s.alpha2.data() + s.alpha2.size());
    nlohmann::json etas = nlohmann::json::array();
    for (const auto& e : s.eta) etas.push_back(matrix_to_json(e));
    j["eta"] = etas;
    j["sigma_w"] = matrix_to_json(s.sigma_w);
    j["sigma_v"] = matrix_to_json(s.sigma_v);
    j["sd_h"] = s.sd_h;
    j["sd_d"] = s.sd_d;
    j["sd_y"] = s.sd_y;
    return j;
}

ScmSpec spec_from_json(const nlohmann::json& j) {
    ScmSpec s;
    s.p = j.at("p").get<int>();
    s.q = j.at("q").get<int>();
    s.h = j.at("h").get<int>();
    s.d = j.at("d").get<int>();
    s.K = j.at("K").get<int>();
    auto theta = j.at("theta").get<std::vector<double>>();
    s.theta = Eigen::Map<Vector>(theta.data(), static_cast<Index>(theta.size()));
    s.beta1 = matrix_from_json(j.at("beta1"));
    s.beta2 = matrix_from_json(j.at("beta2"));
    s.alpha1 = matrix_from_json(j.at("alpha1"));
    auto alpha2 = j.at("alpha2").get<std::vector<double>>();
    s.alpha2 = Eigen::Map<Vector>(alpha2.data(), static_cast<Index>(alpha2.size()));
    s.eta.clear();
    for (const auto& e : j.at("eta")) s.eta.push_back(matrix_from_json(e));
    s.sigma_w = matrix_from_json(j.at("sigma_w"));
    s.sigma_v = matrix_from_json(j.at("sigma_v"));
    s.sd_h = j.at("sd_h").get<double>();
    s.sd_d = j.at("sd_d").get<double>();
    s.sd_y = j.at("sd_y").get<double>();
    return s;
}

nlohmann::json mixing_to_json(const MixingSpec& m) {
    nlohmann::json j;
    j["kind"] = m.kind == MixingKind::InjectivePolynomial ? "injective_polynomial" : "invertible_mlp";
    j["degree"] = m.degree;
    j["d_z"] = m.d_z;
    j["seed"] = m.seed;
    return j;
}

MixingSpec mixing_from_json(const nlohmann::json& j) {
    MixingSpec m;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "injective_polynomial")
        m.kind = MixingKind::InjectivePolynomial;
    else if (kind == "invertible_mlp")
        m.kind = MixingKind::InvertibleMlp;
    else
        throw ConfigError("mixing kind must be injective_polynomial or invertible_mlp, got " + kind);
    m.degree = j.at("degree").get<int>();
    m.d_z = j.at("d_z").get<int>();
    m.seed = j.at("seed").get<uint64_t>();
    return m;
}

} // namespace

std::string sidecar_json(const ScmSpec& spec, const MixingSpec& mixing, uint64_t seed,
                         Index n_train, Index n_val) {
    nlohmann::json j;
    j["spec"] = spec_to_json(spec);
    j["mixing"] = mixing_to_json(mixing);
    j["seed"] = seed;
    j["n_train"] = n_train;
    j["n_val"] = n_val;
    return j.dump(2);
}

SidecarInfo parse_sidecar_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    SidecarInfo info;
    info.spec = spec_from_json(j.at("spec"));
    info.mixing = mixing_from_json(j.at("mixing"));
    info.seed = j.at("seed").get<uint64_t>();
    info.n_train = j.at("n_train").get<Index>();
    info.n_val = j.at("n_val").get<Index>();
    return info;
}

} // namespace inviv::simgen
