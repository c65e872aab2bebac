#include "inviv/autodiff.hpp"

#include <cmath>

#include "inviv/monomials.hpp"
#include "inviv/numerics.hpp"

namespace inviv::autodiff {

const Matrix& Var::value() const {
    if (!tape || id < 0) throw ContractError("Var: unbound handle");
    return tape->value_of(id);
}

bool Var::requires_grad() const {
    if (!tape || id < 0) throw ContractError("Var: unbound handle");
    return tape->node_requires_grad(id);
}

const Matrix& GradTable::grad(Var v) const {
    if (!has(v)) throw ContractError("GradTable: no gradient recorded for node " + std::to_string(v.id));
    return grads_[static_cast<size_t>(v.id)];
}

Var Tape::push(Node n) {
    require_finite(n.value, "tape forward value");
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1, this};
}

Var Tape::leaf(Matrix value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::constant_scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
}

namespace {
bool rg(const Tape& t, Var a) { return t.node_requires_grad(a.id); }
} // namespace

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
    const Matrix& av = node(a.id).value;
    const Matrix& bv = node(b.id).value;
    const Index ak = trans_a ? av.rows() : av.cols();
    const Index bk = trans_b ? bv.cols() : bv.rows();
    require_shape(ak == bk, "matmul: inner dimensions " + std::to_string(ak) + " vs "
                                + std::to_string(bk) + " do not conform");
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.trans_a = trans_a;
    n.trans_b = trans_b;
    n.requires_grad = rg(*this, a) || rg(*this, b);
    if (!trans_a && !trans_b)
        n.value = av * bv;
    else if (trans_a && !trans_b)
        n.value = av.transpose() * bv;
    else if (!trans_a && trans_b)
        n.value = av * bv.transpose();
    else
        n.value = av.transpose() * bv.transpose();
    return push(std::move(n));
}

namespace {
void check_addlike(const Matrix& av, const Matrix& bv, const char* opname) {
    const bool same = av.rows() == bv.rows() && av.cols() == bv.cols();
    const bool bcast = bv.rows() == 1 && bv.cols() == av.cols();
    if (!same && !bcast)
        throw ShapeError(std::string(opname) + ": shapes " + std::to_string(av.rows()) + "x"
                         + std::to_string(av.cols()) + " and " + std::to_string(bv.rows()) + "x"
                         + std::to_string(bv.cols()) + " do not conform");
}
} // namespace

Var Tape::add(Var a, Var b) {
    const Matrix& av = node(a.id).value;
    const Matrix& bv = node(b.id).value;
    check_addlike(av, bv, "add");
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = rg(*this, a) || rg(*this, b);
    if (bv.rows() == av.rows())
        n.value = av + bv;
    else
        n.value = av.rowwise() + bv.row(0);
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    const Matrix& av = node(a.id).value;
    const Matrix& bv = node(b.id).value;
    check_addlike(av, bv, "sub");
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = rg(*this, a) || rg(*this, b);
    if (bv.rows() == av.rows())
        n.value = av - bv;
    else
        n.value = av.rowwise() - bv.row(0);
    return push(std::move(n));
}

Var Tape::scalar_mul(double c, Var a) {
    Node n;
    n.op = Op::ScalarMul;
    n.a = a.id;
    n.scalar = c;
    n.requires_grad = rg(*this, a);
    n.value = c * node(a.id).value;
    return push(std::move(n));
}

Var Tape::elem_mul(Var a, Var b) {
    const Matrix& av = node(a.id).value;
    const Matrix& bv = node(b.id).value;
    check_addlike(av, bv, "elem_mul");
    Node n;
    n.op = Op::ElemMul;
    n.a = a.id;
    n.b = b.id;
    n.requires_grad = rg(*this, a) || rg(*this, b);
    if (bv.rows() == av.rows())
        n.value = av.cwiseProduct(bv);
    else
        n.value = av.array().rowwise() * bv.row(0).array();
    return push(std::move(n));
}

Var Tape::relu(Var a) {
    Node n;
    n.op = Op::Relu;
    n.a = a.id;
    n.requires_grad = rg(*this, a);
    n.value = node(a.id).value.cwiseMax(0.0);
    return push(std::move(n));
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
    const Matrix& xv = node(x.id).value;
    const Matrix& gv = node(gain.id).value;
    const Matrix& bv = node(bias.id).value;
    require_shape(gv.rows() == 1 && gv.cols() == xv.cols(), "layer_norm: gain must be 1x" + std::to_string(xv.cols()));
    require_shape(bv.rows() == 1 && bv.cols() == xv.cols(), "layer_norm: bias must be 1x" + std::to_string(xv.cols()));
    Node n;
    n.op = Op::LayerNorm;
    n.a = x.id;
    n.b = gain.id;
    n.c = bias.id;
    n.scalar = eps;
    n.requires_grad = rg(*this, x) || rg(*this, gain) || rg(*this, bias);
    const Index m = xv.cols();
    Vector mu = xv.rowwise().mean();
    Matrix centered = xv.colwise() - mu;
    Vector var = centered.array().square().rowwise().mean();
    Vector inv = (var.array() + eps).sqrt().inverse();
    Matrix xhat = centered.array().colwise() * inv.array();
    n.value = (xhat.array().rowwise() * gv.row(0).array()).rowwise() + bv.row(0).array();
    n.aux = std::move(xhat);
    n.aux2 = std::move(inv);
    (void)m;
    return push(std::move(n));
}

Var Tape::monomial_map(Var u, int degree) {
    if (degree < 1) throw ContractError("monomial_map: degree >= 1 required");
    Node n;
    n.op = Op::MonomialMap;
    n.a = u.id;
    n.degree = degree;
    n.requires_grad = rg(*this, u);
    n.value = monomial_features(node(u.id).value, degree);
    return push(std::move(n));
}

Var Tape::gram_poly_kernel(Var x, Var y, int degree, double offset) {
    if (degree < 1) throw ContractError("gram_poly_kernel: degree >= 1 required");
    const Matrix& xv = node(x.id).value;
    const Matrix& yv = node(y.id).value;
    require_shape(xv.cols() == yv.cols(), "gram_poly_kernel: feature widths " + std::to_string(xv.cols())
                                              + " vs " + std::to_string(yv.cols()));
    Node n;
    n.op = Op::GramPolyKernel;
    n.a = x.id;
    n.b = y.id;
    n.degree = degree;
    n.scalar = offset;
    n.requires_grad = rg(*this, x) || rg(*this, y);
    const Index nx = xv.rows(), ny = yv.rows(), p = xv.cols();
    Matrix S(nx, ny);
    // explicit ascending-k accumulation so entries are reproducible exactly
    for (Index i = 0; i < nx; ++i) {
        for (Index j = 0; j < ny; ++j) {
            double s = 0.0;
            for (Index k = 0; k < p; ++k) s += xv(i, k) * yv(j, k);
            S(i, j) = s + offset;
        }
    }
    Matrix K = S;
    for (int d = 1; d < degree; ++d) K = K.cwiseProduct(S);
    n.aux = std::move(S);
    n.value = std::move(K);
    return push(std::move(n));
}

Var Tape::trace(Var a) {
    const Matrix& av = node(a.id).value;
    require_shape(av.rows() == av.cols(), "trace: matrix not square, " + shape_str(av));
    Node n;
    n.op = Op::Trace;
    n.a = a.id;
    n.requires_grad = rg(*this, a);
    n.value = Matrix::Constant(1, 1, av.trace());
    return push(std::move(n));
}

Var Tape::mean(Var a) {
    Node n;
    n.op = Op::Mean;
    n.a = a.id;
    n.requires_grad = rg(*this, a);
    n.value = Matrix::Constant(1, 1, node(a.id).value.mean());
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    Node n;
    n.op = Op::Sum;
    n.a = a.id;
    n.requires_grad = rg(*this, a);
    n.value = Matrix::Constant(1, 1, node(a.id).value.sum());
    return push(std::move(n));
}

Var Tape::square(Var a) {
    Node n;
    n.op = Op::Square;
    n.a = a.id;
    n.requires_grad = rg(*this, a);
    n.value = node(a.id).value.array().square();
    return push(std::move(n));
}

Var Tape::sqrt(Var a) {
    const Matrix& av = node(a.id).value;
    if ((av.array() < 0.0).any()) throw ContractError("sqrt: negative entries");
    Node n;
    n.op = Op::Sqrt;
    n.a = a.id;
    n.requires_grad = rg(*this, a);
    n.value = av.array().sqrt();
    return push(std::move(n));
}

Var Tape::log_det(Var a) {
    const Matrix& av = node(a.id).value;
    require_shape(av.rows() == av.cols(), "log_det: matrix not square, " + shape_str(av));
    Node n;
    n.op = Op::LogDet;
    n.a = a.id;
    n.requires_grad = rg(*this, a);
    const Matrix sym = 0.5 * (av + av.transpose());
    auto f = numerics::cholesky(sym);
    n.value = Matrix::Constant(1, 1, numerics::chol_log_det(f));
    n.aux = numerics::chol_solve(f, Matrix::Identity(av.rows(), av.cols()));
    return push(std::move(n));
}

GradTable Tape::backward(Var loss) const {
    if (loss.tape != this || loss.id < 0) throw ContractError("backward: loss not on this tape");
    const Matrix& lv = node(loss.id).value;
    if (lv.rows() != 1 || lv.cols() != 1)
        throw ContractError("backward: loss must be scalar (1x1), got " + shape_str(lv));

    GradTable table;
    table.grads_.resize(nodes_.size());
    table.present_.assign(nodes_.size(), 0);

    auto accumulate = [&](int id, const Matrix& g) {
        if (id < 0 || !nodes_[static_cast<size_t>(id)].requires_grad) return;
        auto& slot = table.grads_[static_cast<size_t>(id)];
        if (table.present_[static_cast<size_t>(id)])
            slot += g;
        else {
            slot = g;
            table.present_[static_cast<size_t>(id)] = 1;
        }
    };

    accumulate(loss.id, Matrix::Ones(1, 1));
    if (!nodes_[static_cast<size_t>(loss.id)].requires_grad) return table;

    for (int id = loss.id; id >= 0; --id) {
        if (!table.present_[static_cast<size_t>(id)]) continue;
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (n.op == Op::Leaf) continue;
        const Matrix& G = table.grads_[static_cast<size_t>(id)];
        switch (n.op) {
        case Op::MatMul: {
            const Matrix& A = node(n.a).value;
            const Matrix& B = node(n.b).value;
            if (!n.trans_a && !n.trans_b) {
                accumulate(n.a, G * B.transpose());
                accumulate(n.b, A.transpose() * G);
            } else if (n.trans_a && !n.trans_b) {
                accumulate(n.a, B * G.transpose());
                accumulate(n.b, A * G);
            } else if (!n.trans_a && n.trans_b) {
                accumulate(n.a, G * B);
                accumulate(n.b, G.transpose() * A);
            } else {
                accumulate(n.a, B.transpose() * G.transpose());
                accumulate(n.b, G.transpose() * A.transpose());
            }
            break;
        }
        case Op::Add: {
            accumulate(n.a, G);
            const Matrix& B = node(n.b).value;
            if (B.rows() == G.rows())
                accumulate(n.b, G);
            else
                accumulate(n.b, G.colwise().sum());
            break;
        }
        case Op::Sub: {
            accumulate(n.a, G);
            const Matrix& B = node(n.b).value;
            if (B.rows() == G.rows())
                accumulate(n.b, -G);
            else
                accumulate(n.b, -G.colwise().sum());
            break;
        }
        case Op::ScalarMul:
            accumulate(n.a, n.scalar * G);
            break;
        case Op::ElemMul: {
            const Matrix& A = node(n.a).value;
            const Matrix& B = node(n.b).value;
            if (B.rows() == A.rows()) {
                accumulate(n.a, G.cwiseProduct(B));
                accumulate(n.b, G.cwiseProduct(A));
            } else {
                accumulate(n.a, G.array().rowwise() * B.row(0).array());
                accumulate(n.b, G.cwiseProduct(A).colwise().sum());
            }
            break;
        }
        case Op::Relu: {
            const Matrix& A = node(n.a).value;
            accumulate(n.a, (A.array() > 0.0).cast<double>() * G.array());
            break;
        }
        case Op::LayerNorm: {
            const Matrix& xhat = n.aux;
            const Vector& inv = n.aux2;
            const Matrix& gain = node(n.b).value;
            accumulate(n.b, G.cwiseProduct(xhat).colwise().sum());
            accumulate(n.c, G.colwise().sum());
            if (node(n.a).requires_grad) {
                Matrix dxhat = G.array().rowwise() * gain.row(0).array();
                Vector m1 = dxhat.rowwise().mean();
                Vector m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
                Matrix dx = ((dxhat.colwise() - m1) - (xhat.array().colwise() * m2.array()).matrix())
                                .array()
                                .colwise()
                            * inv.array();
                accumulate(n.a, dx);
            }
            break;
        }
        case Op::MonomialMap: {
            const Matrix& U = node(n.a).value;
            if (node(n.a).requires_grad) {
                const int dim = static_cast<int>(U.cols());
                const int degree = n.degree;
                const auto exps = monomial_exponents(dim, degree);
                Matrix dU = Matrix::Zero(U.rows(), U.cols());
                std::vector<double> powers(static_cast<size_t>(dim) * static_cast<size_t>(degree + 1));
                for (Index r = 0; r < U.rows(); ++r) {
                    for (int j = 0; j < dim; ++j) {
                        double p = 1.0;
                        for (int k = 0; k <= degree; ++k) {
                            powers[static_cast<size_t>(j) * static_cast<size_t>(degree + 1)
                                   + static_cast<size_t>(k)] = p;
                            p *= U(r, j);
                        }
                    }
                    for (size_t f = 0; f < exps.size(); ++f) {
                        const double g = G(r, static_cast<Index>(f));
                        if (g == 0.0) continue;
                        for (int j = 0; j < dim; ++j) {
                            const int e = exps[f][static_cast<size_t>(j)];
                            if (e == 0) continue;
                            double d = static_cast<double>(e)
                                       * powers[static_cast<size_t>(j) * static_cast<size_t>(degree + 1)
                                                + static_cast<size_t>(e - 1)];
                            for (int l = 0; l < dim; ++l) {
                                if (l == j) continue;
                                const int el = exps[f][static_cast<size_t>(l)];
                                if (el > 0)
                                    d *= powers[static_cast<size_t>(l) * static_cast<size_t>(degree + 1)
                                                + static_cast<size_t>(el)];
                            }
                            dU(r, j) += g * d;
                        }
                    }
                }
                accumulate(n.a, dU);
            }
            break;
        }
        case Op::GramPolyKernel: {
            const Matrix& X = node(n.a).value;
            const Matrix& Y = node(n.b).value;
            const Matrix& S = n.aux;
            Matrix dS;
            if (n.degree == 1)
                dS = G;
            else {
                Matrix Spow = S;
                for (int d = 2; d < n.degree; ++d) Spow = Spow.cwiseProduct(S);
                dS = static_cast<double>(n.degree) * G.cwiseProduct(Spow);
            }
            accumulate(n.a, dS * Y);
            accumulate(n.b, dS.transpose() * X);
            break;
        }
        case Op::Trace: {
            const Index m = node(n.a).value.rows();
            accumulate(n.a, G(0, 0) * Matrix::Identity(m, m));
            break;
        }
        case Op::Mean: {
            const Matrix& A = node(n.a).value;
            const double c = G(0, 0) / static_cast<double>(A.rows() * A.cols());
            accumulate(n.a, Matrix::Constant(A.rows(), A.cols(), c));
            break;
        }
        case Op::Sum: {
            const Matrix& A = node(n.a).value;
            accumulate(n.a, Matrix::Constant(A.rows(), A.cols(), G(0, 0)));
            break;
        }
        case Op::Square: {
            const Matrix& A = node(n.a).value;
            accumulate(n.a, 2.0 * G.cwiseProduct(A));
            break;
        }
        case Op::Sqrt: {
            const Matrix& A = node(n.a).value;
            Matrix d = (A.array() > 0.0).select(0.5 * A.array().sqrt().inverse(), Matrix::Zero(A.rows(), A.cols()));
            accumulate(n.a, G.cwiseProduct(d));
            break;
        }
        case Op::LogDet:
            accumulate(n.a, G(0, 0) * n.aux);
            break;
        case Op::Leaf:
            break;
        }
    }
    return table;
}

GradCheckResult grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                           const std::vector<Matrix>& params, double h, double tol) {
    if (!(h >= 1e-7 && h <= 1e-3)) throw ContractError("grad_check: h must be in [1e-7, 1e-3]");

    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.leaf(p, true));
    Var loss = build(tape, vars);
    GradTable table = tape.backward(loss);

    auto eval = [&](const std::vector<Matrix>& ps) {
        Tape t;
        std::vector<Var> vs;
        vs.reserve(ps.size());
        for (const auto& p : ps) vs.push_back(t.leaf(p, false));
        return build(t, vs).value()(0, 0);
    };

    GradCheckResult res;
    res.per_param_err.assign(params.size(), 0.0);
    std::vector<Matrix> work = params;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const Matrix& p = params[pi];
        for (Index i = 0; i < p.rows(); ++i) {
            for (Index j = 0; j < p.cols(); ++j) {
                const double orig = work[pi](i, j);
                work[pi](i, j) = orig + h;
                const double fp = eval(work);
                work[pi](i, j) = orig - h;
                const double fm = eval(work);
                work[pi](i, j) = orig;
                const double fd = (fp - fm) / (2.0 * h);
                const double ad = table.has(vars[pi]) ? table.grad(vars[pi])(i, j) : 0.0;
                const double rel = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
                res.per_param_err[pi] = std::max(res.per_param_err[pi], rel);
                res.max_rel_err = std::max(res.max_rel_err, rel);
            }
        }
    }
    res.pass = res.max_rel_err < tol;
    return res;
}

} // namespace inviv::autodiff
