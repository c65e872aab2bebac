#include "inviv/nn.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "inviv/monomials.hpp"
#include "inviv/rng.hpp"

namespace inviv::nn {

using autodiff::Tape;
using autodiff::Var;

std::vector<Matrix*> AutoencoderModel::parameters() {
    std::vector<Matrix*> ps = {&enc1.w, &enc1.b, &ln1.gain, &ln1.bias, &enc2.w, &enc2.b,
                               &ln2.gain, &ln2.bias, &enc3.w, &enc3.b};
    if (decoder == DecoderKind::Polynomial) {
        ps.push_back(&dec_poly.w);
        ps.push_back(&dec_poly.b);
    } else {
        for (Matrix* m : {&dec1.w, &dec1.b, &dec2.w, &dec2.b, &dec3.w, &dec3.b}) ps.push_back(m);
    }
    return ps;
}

std::vector<const Matrix*> AutoencoderModel::parameters() const {
    auto ps = const_cast<AutoencoderModel*>(this)->parameters();
    return std::vector<const Matrix*>(ps.begin(), ps.end());
}

std::vector<std::pair<std::string, Matrix*>> AutoencoderModel::named_parameters() {
    std::vector<std::pair<std::string, Matrix*>> ps = {
        {"enc1.w", &enc1.w}, {"enc1.b", &enc1.b}, {"ln1.gain", &ln1.gain}, {"ln1.bias", &ln1.bias},
        {"enc2.w", &enc2.w}, {"enc2.b", &enc2.b}, {"ln2.gain", &ln2.gain}, {"ln2.bias", &ln2.bias},
        {"enc3.w", &enc3.w}, {"enc3.b", &enc3.b}};
    if (decoder == DecoderKind::Polynomial) {
        ps.emplace_back("dec_poly.w", &dec_poly.w);
        ps.emplace_back("dec_poly.b", &dec_poly.b);
    } else {
        ps.emplace_back("dec1.w", &dec1.w);
        ps.emplace_back("dec1.b", &dec1.b);
        ps.emplace_back("dec2.w", &dec2.w);
        ps.emplace_back("dec2.b", &dec2.b);
        ps.emplace_back("dec3.w", &dec3.w);
        ps.emplace_back("dec3.b", &dec3.b);
    }
    return ps;
}

namespace {

Linear init_linear(Rng& rng, Index in, Index out) {
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    Linear l;
    l.w = rng.uniform_matrix(in, out, -bound, bound);
    l.b = Matrix::Zero(1, out);
    return l;
}

LayerNormParams init_layernorm(Index m) {
    LayerNormParams ln;
    ln.gain = Matrix::Ones(1, m);
    ln.bias = Matrix::Zero(1, m);
    return ln;
}

} // namespace

AutoencoderModel make_autoencoder(int d_z, int p_hat, int q_hat, DecoderKind decoder,
                                  int poly_degree, uint64_t seed, int hidden) {
    if (d_z < 1 || p_hat < 1 || q_hat < 0 || hidden < 1)
        throw ConfigError("make_autoencoder: need d_z >= 1, p_hat >= 1, q_hat >= 0, hidden >= 1");
    if (decoder == DecoderKind::Polynomial && poly_degree < 1)
        throw ConfigError("make_autoencoder: polynomial decoder degree >= 1 required");
    AutoencoderModel m;
    m.d_z = d_z;
    m.p_hat = p_hat;
    m.q_hat = q_hat;
    m.hidden = hidden;
    m.decoder = decoder;
    m.poly_degree = poly_degree;

    Rng rng(seed);
    const int lat = p_hat + q_hat;
    m.enc1 = init_linear(rng, d_z, hidden);
    m.ln1 = init_layernorm(hidden);
    m.enc2 = init_linear(rng, hidden, hidden);
    m.ln2 = init_layernorm(hidden);
    m.enc3 = init_linear(rng, hidden, lat);
    if (decoder == DecoderKind::Polynomial) {
        m.dec_poly = init_linear(rng, monomial_count(lat, poly_degree), d_z);
    } else {
        m.dec1 = init_linear(rng, lat, hidden);
        m.dec2 = init_linear(rng, hidden, hidden);
        m.dec3 = init_linear(rng, hidden, d_z);
    }
    return m;
}

TapeModel bind_model(Tape& tape, const AutoencoderModel& model, bool requires_grad) {
    TapeModel t;
    t.decoder = model.decoder;
    t.poly_degree = model.poly_degree;
    t.p_hat = model.p_hat;
    t.q_hat = model.q_hat;
    t.ln_eps = model.ln1.eps;
    auto bind = [&](const Matrix& m) { return tape.leaf(m, requires_grad); };
    t.e1w = bind(model.enc1.w);
    t.e1b = bind(model.enc1.b);
    t.n1g = bind(model.ln1.gain);
    t.n1b = bind(model.ln1.bias);
    t.e2w = bind(model.enc2.w);
    t.e2b = bind(model.enc2.b);
    t.n2g = bind(model.ln2.gain);
    t.n2b = bind(model.ln2.bias);
    t.e3w = bind(model.enc3.w);
    t.e3b = bind(model.enc3.b);
    t.all = {t.e1w, t.e1b, t.n1g, t.n1b, t.e2w, t.e2b, t.n2g, t.n2b, t.e3w, t.e3b};
    if (model.decoder == DecoderKind::Polynomial) {
        t.dpw = bind(model.dec_poly.w);
        t.dpb = bind(model.dec_poly.b);
        t.all.push_back(t.dpw);
        t.all.push_back(t.dpb);
    } else {
        t.d1w = bind(model.dec1.w);
        t.d1b = bind(model.dec1.b);
        t.d2w = bind(model.dec2.w);
        t.d2b = bind(model.dec2.b);
        t.d3w = bind(model.dec3.w);
        t.d3b = bind(model.dec3.b);
        for (Var v : {t.d1w, t.d1b, t.d2w, t.d2b, t.d3w, t.d3b}) t.all.push_back(v);
    }
    return t;
}

Encoded encode(Tape& tape, const TapeModel& m, Var z) {
    require_shape(z.cols() == m.e1w.rows(),
                  "encode: input width " + std::to_string(z.cols()) + " != d_z "
                      + std::to_string(m.e1w.rows()));
    Var h1 = tape.relu(tape.layer_norm(tape.add(tape.matmul(z, m.e1w), m.e1b), m.n1g, m.n1b, m.ln_eps));
    Var h2 = tape.relu(tape.layer_norm(tape.add(tape.matmul(h1, m.e2w), m.e2b), m.n2g, m.n2b, m.ln_eps));
    Var latent = tape.add(tape.matmul(h2, m.e3w), m.e3b);

    const int lat = m.p_hat + m.q_hat;
    Matrix sel_w = Matrix::Zero(lat, m.p_hat);
    sel_w.topRows(m.p_hat) = Matrix::Identity(m.p_hat, m.p_hat);
    Matrix sel_v = Matrix::Zero(lat, m.q_hat);
    sel_v.bottomRows(m.q_hat) = Matrix::Identity(m.q_hat, m.q_hat);
    Encoded out;
    out.latent = latent;
    out.what = tape.matmul(latent, tape.constant(std::move(sel_w)));
    out.vhat = tape.matmul(latent, tape.constant(std::move(sel_v)));
    return out;
}

Var decode(Tape& tape, const TapeModel& m, Var latent) {
    require_shape(latent.cols() == m.p_hat + m.q_hat,
                  "decode: latent width " + std::to_string(latent.cols()) + " != p_hat+q_hat "
                      + std::to_string(m.p_hat + m.q_hat));
    if (m.decoder == DecoderKind::Polynomial) {
        Var feat = tape.monomial_map(latent, m.poly_degree);
        return tape.add(tape.matmul(feat, m.dpw), m.dpb);
    }
    Var h1 = tape.relu(tape.add(tape.matmul(latent, m.d1w), m.d1b));
    Var h2 = tape.relu(tape.add(tape.matmul(h1, m.d2w), m.d2b));
    return tape.add(tape.matmul(h2, m.d3w), m.d3b);
}

std::pair<Matrix, Matrix> encode(const AutoencoderModel& model, const Eigen::Ref<const Matrix>& Z) {
    Tape tape;
    TapeModel tm = bind_model(tape, model, false);
    Encoded e = encode(tape, tm, tape.constant(Z));
    return {e.what.value(), e.vhat.value()};
}

Matrix encode_latent(const AutoencoderModel& model, const Eigen::Ref<const Matrix>& Z) {
    Tape tape;
    TapeModel tm = bind_model(tape, model, false);
    return encode(tape, tm, tape.constant(Z)).latent.value();
}

Matrix decode(const AutoencoderModel& model, const Eigen::Ref<const Matrix>& latent) {
    Tape tape;
    TapeModel tm = bind_model(tape, model, false);
    return decode(tape, tm, tape.constant(latent)).value();
}

Matrix reconstruct(const AutoencoderModel& model, const Eigen::Ref<const Matrix>& Z) {
    Tape tape;
    TapeModel tm = bind_model(tape, model, false);
    Encoded e = encode(tape, tm, tape.constant(Z));
    return decode(tape, tm, e.latent).value();
}

AdamState AdamState::init(const std::vector<Matrix*>& params, AdamConfig cfg) {
    AdamState s;
    s.cfg = cfg;
    s.step = 0;
    for (const Matrix* p : params) {
        s.m.push_back(Matrix::Zero(p->rows(), p->cols()));
        s.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
    return s;
}

double adam_step(AdamState& state, const std::vector<Matrix*>& params, std::vector<Matrix>& grads) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ShapeError("adam_step: parameter/gradient/state count mismatch");
    double sq = 0.0;
    for (size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].allFinite())
            throw DivergenceError("adam_step: non-finite gradient in parameter " + std::to_string(i));
        require_shape(grads[i].rows() == params[i]->rows() && grads[i].cols() == params[i]->cols(),
                      "adam_step: gradient shape mismatch at parameter " + std::to_string(i));
        sq += grads[i].squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (state.cfg.clip_norm > 0.0 && norm > state.cfg.clip_norm) {
        const double scale = state.cfg.clip_norm / norm;
        for (auto& g : grads) g *= scale;
    }

    state.step += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i].cwiseProduct(grads[i]);
        Matrix mhat = state.m[i] / bc1;
        Matrix vhat = state.v[i] / bc2;
        *params[i] -= state.cfg.lr * (mhat.array() / (vhat.array().sqrt() + state.cfg.eps)).matrix();
        if (state.cfg.weight_decay > 0.0) *params[i] -= state.cfg.lr * state.cfg.weight_decay * *params[i];
    }
    return norm;
}

namespace {
constexpr char kMagic[8] = {'I', 'N', 'V', 'I', 'V', 'A', 'E', '1'};
}

void save_checkpoint(const AutoencoderModel& model, const std::string& path) {
    auto named = const_cast<AutoencoderModel&>(model).named_parameters();
    nlohmann::json header;
    header["p_hat"] = model.p_hat;
    header["q_hat"] = model.q_hat;
    header["d_z"] = model.d_z;
    header["hidden"] = model.hidden;
    header["decoder"] = model.decoder == DecoderKind::Polynomial ? "poly" : "mlp";
    header["degree"] = model.poly_degree;
    nlohmann::json tensors = nlohmann::json::array();
    for (auto& [name, mat] : named)
        tensors.push_back({{"name", name}, {"rows", mat->rows()}, {"cols", mat->cols()}});
    header["tensors"] = tensors;
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out.write(kMagic, 8);
    const uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (auto& [name, mat] : named) {
        for (Index i = 0; i < mat->rows(); ++i)
            for (Index j = 0; j < mat->cols(); ++j) {
                const double v = (*mat)(i, j);
                out.write(reinterpret_cast<const char*>(&v), sizeof(v));
            }
    }
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

AutoencoderModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("load_checkpoint: bad magic in " + path);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json header = nlohmann::json::parse(hs);

    AutoencoderModel m = make_autoencoder(
        header.at("d_z").get<int>(), header.at("p_hat").get<int>(), header.at("q_hat").get<int>(),
        header.at("decoder").get<std::string>() == "poly" ? DecoderKind::Polynomial : DecoderKind::Mlp,
        header.at("degree").get<int>(), /*seed=*/0, header.at("hidden").get<int>());

    auto named = m.named_parameters();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != named.size()) throw IoError("load_checkpoint: tensor count mismatch");
    for (size_t t = 0; t < named.size(); ++t) {
        auto& [name, mat] = named[t];
        const auto& meta = tensors[t];
        if (meta.at("name").get<std::string>() != name
            || meta.at("rows").get<Index>() != mat->rows()
            || meta.at("cols").get<Index>() != mat->cols())
            throw IoError("load_checkpoint: tensor layout mismatch at " + name);
        for (Index i = 0; i < mat->rows(); ++i)
            for (Index j = 0; j < mat->cols(); ++j) {
                double v = 0;
                in.read(reinterpret_cast<char*>(&v), sizeof(v));
                (*mat)(i, j) = v;
            }
    }
    if (!in) throw IoError("load_checkpoint: truncated file " + path);
    return m;
}

} // namespace inviv::nn
