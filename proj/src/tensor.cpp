#include "eidos/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <new>
#include <sstream>

#include "eidos/errors.hpp"

namespace eidos {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const MatRM>;
using MapM = Eigen::Map<MatRM>;
using StridedC = Eigen::Map<const MatRM, 0, Eigen::OuterStride<>>;
using StridedM = Eigen::Map<MatRM, 0, Eigen::OuterStride<>>;

constexpr std::size_t kAttnBlock = 64;

struct Dims2 {
    std::size_t rows;
    std::size_t cols;
};

Dims2 dims2(const Shape& s, const char* op) {
    if (s.size() == 2) return {s[0], s[1]};
    if (s.size() == 1) return {1, s[0]};
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(s));
}

void require_same_shape(Var a, Var b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void accumulate(Tape& t, int id, std::span<const double> g) {
    if (!t.needs_grad(id)) return;
    auto& dst = t.grad_of(id);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template <typename F, typename DF>
Var unary(Var x, const char* tag, F f, DF df) {
    auto xs = x.data();
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
    const int xi = x.id();
    return x.tape()->record(x.shape(), std::move(out), {xi}, tag, [xi, df](Tape& t, int self) {
        if (!t.needs_grad(xi)) return;
        const auto& xin = t.node(xi).data;
        const auto& y = t.node(self).data;
        const auto& gy = t.node(self).grad;
        auto& gx = t.grad_of(xi);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(xin[i], y[i]);
    });
}

double sigmoid_scalar(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

// ---- Tensor ------------------------------------------------------------------

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    for (auto e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
    }
    if (data.size() != numel(shape)) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::zeros(Shape s) { return filled(std::move(s), 0.0); }

Tensor Tensor::filled(Shape s, double value) {
    const auto n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, value));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> d) {
    return Tensor({rows, cols}, std::move(d));
}

Tensor Tensor::column(std::span<const double> values) {
    return Tensor({values.size(), 1}, std::vector<double>(values.begin(), values.end()));
}

// ---- Var ---------------------------------------------------------------------

const Shape& Var::shape() const { return tape_->node(id_).shape; }
std::size_t Var::rows() const { return shape().at(0); }
std::size_t Var::cols() const { return shape().size() > 1 ? shape()[1] : 1; }
std::size_t Var::size() const { return tape_->node(id_).data.size(); }
std::span<const double> Var::data() const { return tape_->node(id_).data; }
std::span<const double> Var::grad() const { return tape_->node(id_).grad; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }
double Var::at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

double Var::item() const {
    if (size() != 1) throw ContractError("item() on non-scalar " + shape_str(shape()));
    return data()[0];
}

Tensor Var::value() const {
    const auto& n = tape_->node(id_);
    return Tensor(n.shape, n.data);
}

// ---- Tape --------------------------------------------------------------------

Var Tape::leaf(Tensor value, bool requires_grad, const char* tag) {
    Node n;
    n.shape = std::move(value.shape);
    n.data = std::move(value.data);
    n.requires_grad = requires_grad && grad_enabled_;
    n.op_tag = tag;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Shape shape, std::vector<double> data, std::vector<int> parents, const char* tag,
                 BackwardFn fn) {
    Node n;
    n.shape = std::move(shape);
    n.data = std::move(data);
    n.op_tag = tag;
    bool any = false;
    for (int p : parents) any = any || nodes_[static_cast<std::size_t>(p)].requires_grad;
    n.requires_grad = grad_enabled_ && any;
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward_fn = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

std::vector<double>& Tape::grad_of(int id) {
    auto& n = node(id);
    if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!node(loss.id()).requires_grad) return;
    grad_of(loss.id())[0] += 1.0;
    for (int id = loss.id(); id >= 0; --id) {
        auto& n = node(id);
        if (n.grad.empty() || !n.backward_fn) continue;
        n.backward_fn(*this, id);
    }
}

// ---- primitives ----------------------------------------------------------------

Var matmul(Var a, Var b) {
    const auto da = dims2(a.shape(), "matmul");
    const auto db = dims2(b.shape(), "matmul");
    if (da.cols != db.rows) {
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(da.rows * db.cols);
    MapM(out.data(), da.rows, db.cols).noalias() =
        MapC(a.data().data(), da.rows, da.cols) * MapC(b.data().data(), db.rows, db.cols);
    const int ai = a.id(), bi = b.id();
    return a.tape()->record({da.rows, db.cols}, std::move(out), {ai, bi}, "matmul",
                            [ai, bi, da, db](Tape& t, int self) {
                                MapC g(t.node(self).grad.data(), da.rows, db.cols);
                                if (t.needs_grad(ai)) {
                                    MapM ga(t.grad_of(ai).data(), da.rows, da.cols);
                                    ga.noalias() += g * MapC(t.node(bi).data.data(), db.rows, db.cols).transpose();
                                }
                                if (t.needs_grad(bi)) {
                                    MapM gb(t.grad_of(bi).data(), db.rows, db.cols);
                                    gb.noalias() += MapC(t.node(ai).data.data(), da.rows, da.cols).transpose() * g;
                                }
                            });
}

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    const int ai = a.id(), bi = b.id();
    return a.tape()->record(a.shape(), std::move(out), {ai, bi}, "add", [ai, bi](Tape& t, int self) {
        const auto& g = t.node(self).grad;
        accumulate(t, ai, g);
        accumulate(t, bi, g);
    });
}

Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    const int ai = a.id(), bi = b.id();
    return a.tape()->record(a.shape(), std::move(out), {ai, bi}, "sub", [ai, bi](Tape& t, int self) {
        const auto& g = t.node(self).grad;
        accumulate(t, ai, g);
        if (t.needs_grad(bi)) {
            auto& gb = t.grad_of(bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    const int ai = a.id(), bi = b.id();
    return a.tape()->record(a.shape(), std::move(out), {ai, bi}, "mul", [ai, bi](Tape& t, int self) {
        const auto& g = t.node(self).grad;
        if (t.needs_grad(ai)) {
            auto& ga = t.grad_of(ai);
            const auto& y = t.node(bi).data;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (t.needs_grad(bi)) {
            auto& gb = t.grad_of(bi);
            const auto& x = t.node(ai).data;
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
    });
}

Var scale(Var x, double c) {
    return unary(
        x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_row(Var x, Var row) {
    const auto d = dims2(x.shape(), "add_row");
    if (row.size() != d.cols) {
        throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not match " +
                             shape_str(x.shape()));
    }
    std::vector<double> out(x.size());
    auto xs = x.data(), rs = row.data();
    for (std::size_t r = 0; r < d.rows; ++r)
        for (std::size_t c = 0; c < d.cols; ++c) out[r * d.cols + c] = xs[r * d.cols + c] + rs[c];
    const int xi = x.id(), ri = row.id();
    return x.tape()->record(x.shape(), std::move(out), {xi, ri}, "add_row", [xi, ri, d](Tape& t, int self) {
        const auto& g = t.node(self).grad;
        accumulate(t, xi, g);
        if (t.needs_grad(ri)) {
            auto& gr = t.grad_of(ri);
            for (std::size_t r = 0; r < d.rows; ++r)
                for (std::size_t c = 0; c < d.cols; ++c) gr[c] += g[r * d.cols + c];
        }
    });
}

Var sin(Var x) {
    return unary(
        x, "sin", [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Var sigmoid(Var x) {
    return unary(x, "sigmoid", sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var silu(Var x) {
    return unary(
        x, "silu", [](double v) { return v * sigmoid_scalar(v); },
        [](double v, double) {
            const double s = sigmoid_scalar(v);
            return s + v * s * (1.0 - s);
        });
}

Var tanh(Var x) {
    return unary(
        x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var softmax_lastdim(Var x) {
    const std::size_t cols = x.shape().back();
    const std::size_t rows = x.size() / cols;
    auto xs = x.data();
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xs.data() + r * cols;
        double* o = out.data() + r * cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, in[c]);
        if (mx == -std::numeric_limits<double>::infinity()) {
            std::fill(o, o + cols, 0.0);
            continue;
        }
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            o[c] = std::exp(in[c] - mx);
            s += o[c];
        }
        for (std::size_t c = 0; c < cols; ++c) o[c] /= s;
    }
    const int xi = x.id();
    return x.tape()->record(x.shape(), std::move(out), {xi}, "softmax", [xi, rows, cols](Tape& t, int self) {
        if (!t.needs_grad(xi)) return;
        const auto& y = t.node(self).data;
        const auto& g = t.node(self).grad;
        auto& gx = t.grad_of(xi);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[o + c] * y[o + c];
            for (std::size_t c = 0; c < cols; ++c) gx[o + c] += y[o + c] * (g[o + c] - dot);
        }
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    const auto d = dims2(x.shape(), "layer_norm");
    if (gain.size() != d.cols || bias.size() != d.cols) {
        throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                             shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
    }
    if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
    auto xs = x.data(), gs = gain.data(), bs = bias.data();
    std::vector<double> out(x.size());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv = std::make_shared<std::vector<double>>(d.rows);
    const double n = static_cast<double>(d.cols);
    for (std::size_t r = 0; r < d.rows; ++r) {
        const double* row = xs.data() + r * d.cols;
        double mu = 0.0;
        for (std::size_t c = 0; c < d.cols; ++c) mu += row[c];
        mu /= n;
        double var = 0.0;
        for (std::size_t c = 0; c < d.cols; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv)[r] = is;
        for (std::size_t c = 0; c < d.cols; ++c) {
            const double h = (row[c] - mu) * is;
            (*xhat)[r * d.cols + c] = h;
            out[r * d.cols + c] = h * gs[c] + bs[c];
        }
    }
    const int xi = x.id(), gi = gain.id(), bi = bias.id();
    return x.tape()->record(
        x.shape(), std::move(out), {xi, gi, bi}, "layer_norm", [xi, gi, bi, d, xhat, inv](Tape& t, int self) {
            const auto& g = t.node(self).grad;
            const auto& gs = t.node(gi).data;
            const double n = static_cast<double>(d.cols);
            if (t.needs_grad(gi) || t.needs_grad(bi)) {
                std::vector<double> dg(d.cols, 0.0), db(d.cols, 0.0);
                for (std::size_t r = 0; r < d.rows; ++r)
                    for (std::size_t c = 0; c < d.cols; ++c) {
                        dg[c] += g[r * d.cols + c] * (*xhat)[r * d.cols + c];
                        db[c] += g[r * d.cols + c];
                    }
                accumulate(t, gi, dg);
                accumulate(t, bi, db);
            }
            if (!t.needs_grad(xi)) return;
            auto& gx = t.grad_of(xi);
            for (std::size_t r = 0; r < d.rows; ++r) {
                const std::size_t o = r * d.cols;
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t c = 0; c < d.cols; ++c) {
                    const double dh = g[o + c] * gs[c];
                    m1 += dh;
                    m2 += dh * (*xhat)[o + c];
                }
                m1 /= n;
                m2 /= n;
                for (std::size_t c = 0; c < d.cols; ++c) {
                    const double dh = g[o + c] * gs[c];
                    gx[o + c] += (*inv)[r] * (dh - m1 - (*xhat)[o + c] * m2);
                }
            }
        });
}

Var depthwise_conv1d(Var x, Var kernel) {
    const auto dx = dims2(x.shape(), "depthwise_conv1d");
    const auto dk = dims2(kernel.shape(), "depthwise_conv1d");
    if (dk.cols != dx.cols) {
        throw DimensionError("depthwise_conv1d: kernel " + shape_str(kernel.shape()) +
                             " channels differ from input " + shape_str(x.shape()));
    }
    if (dx.rows < dk.rows) {
        throw WindowError("depthwise_conv1d: sequence length " + std::to_string(dx.rows) +
                          " shorter than kernel length " + std::to_string(dk.rows));
    }
    const std::size_t T = dx.rows, L = dk.rows, C = dx.cols, out_rows = T - L + 1;
    auto xs = x.data(), ks = kernel.data();
    std::vector<double> out(out_rows * C, 0.0);
    for (std::size_t t = 0; t < out_rows; ++t)
        for (std::size_t j = 0; j < L; ++j) {
            const double* xr = xs.data() + (t + j) * C;
            const double* kr = ks.data() + j * C;
            double* o = out.data() + t * C;
            for (std::size_t c = 0; c < C; ++c) o[c] += kr[c] * xr[c];
        }
    const int xi = x.id(), ki = kernel.id();
    return x.tape()->record({out_rows, C}, std::move(out), {xi, ki}, "depthwise_conv1d",
                            [xi, ki, L, C, out_rows](Tape& t, int self) {
                                const auto& g = t.node(self).grad;
                                if (t.needs_grad(xi)) {
                                    auto& gx = t.grad_of(xi);
                                    const auto& k = t.node(ki).data;
                                    for (std::size_t r = 0; r < out_rows; ++r)
                                        for (std::size_t j = 0; j < L; ++j)
                                            for (std::size_t c = 0; c < C; ++c)
                                                gx[(r + j) * C + c] += k[j * C + c] * g[r * C + c];
                                }
                                if (t.needs_grad(ki)) {
                                    auto& gk = t.grad_of(ki);
                                    const auto& xv = t.node(xi).data;
                                    for (std::size_t r = 0; r < out_rows; ++r)
                                        for (std::size_t j = 0; j < L; ++j)
                                            for (std::size_t c = 0; c < C; ++c)
                                                gk[j * C + c] += xv[(r + j) * C + c] * g[r * C + c];
                                }
                            });
}

Var l2_normalize_rows(Var x, double eps) {
    const auto d = dims2(x.shape(), "l2_normalize_rows");
    auto xs = x.data();
    std::vector<double> out(x.size(), 0.0);
    auto norms = std::make_shared<std::vector<double>>(d.rows);
    for (std::size_t r = 0; r < d.rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d.cols; ++c) s += xs[r * d.cols + c] * xs[r * d.cols + c];
        const double n = std::sqrt(s);
        (*norms)[r] = n;
        // Rows below the floor are degenerate and map to the zero vector.
        if (n < eps) continue;
        for (std::size_t c = 0; c < d.cols; ++c) out[r * d.cols + c] = xs[r * d.cols + c] / n;
    }
    const int xi = x.id();
    return x.tape()->record(x.shape(), std::move(out), {xi}, "l2_normalize",
                            [xi, d, norms, eps](Tape& t, int self) {
                                if (!t.needs_grad(xi)) return;
                                const auto& y = t.node(self).data;
                                const auto& g = t.node(self).grad;
                                auto& gx = t.grad_of(xi);
                                for (std::size_t r = 0; r < d.rows; ++r) {
                                    const double n = (*norms)[r];
                                    if (n < eps) continue;
                                    const std::size_t o = r * d.cols;
                                    double dot = 0.0;
                                    for (std::size_t c = 0; c < d.cols; ++c) dot += y[o + c] * g[o + c];
                                    for (std::size_t c = 0; c < d.cols; ++c)
                                        gx[o + c] += (g[o + c] - y[o + c] * dot) / n;
                                }
                            });
}

Var row_dot(Var a, Var b) {
    require_same_shape(a, b, "row_dot");
    const auto d = dims2(a.shape(), "row_dot");
    auto x = a.data(), y = b.data();
    std::vector<double> out(d.rows, 0.0);
    for (std::size_t r = 0; r < d.rows; ++r)
        for (std::size_t c = 0; c < d.cols; ++c) out[r] += x[r * d.cols + c] * y[r * d.cols + c];
    const int ai = a.id(), bi = b.id();
    return a.tape()->record({d.rows, 1}, std::move(out), {ai, bi}, "row_dot", [ai, bi, d](Tape& t, int self) {
        const auto& g = t.node(self).grad;
        if (t.needs_grad(ai)) {
            auto& ga = t.grad_of(ai);
            const auto& y = t.node(bi).data;
            for (std::size_t r = 0; r < d.rows; ++r)
                for (std::size_t c = 0; c < d.cols; ++c) ga[r * d.cols + c] += g[r] * y[r * d.cols + c];
        }
        if (t.needs_grad(bi)) {
            auto& gb = t.grad_of(bi);
            const auto& x = t.node(ai).data;
            for (std::size_t r = 0; r < d.rows; ++r)
                for (std::size_t c = 0; c < d.cols; ++c) gb[r * d.cols + c] += g[r] * x[r * d.cols + c];
        }
    });
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    const int xi = x.id();
    return x.tape()->record({1}, {s}, {xi}, "sum", [xi](Tape& t, int self) {
        if (!t.needs_grad(xi)) return;
        const double g = t.node(self).grad[0];
        for (auto& v : t.grad_of(xi)) v += g;
    });
}

Var mean(Var x) {
    const double n = static_cast<double>(x.size());
    double s = 0.0;
    for (double v : x.data()) s += v;
    const int xi = x.id();
    return x.tape()->record({1}, {s / n}, {xi}, "mean", [xi, n](Tape& t, int self) {
        if (!t.needs_grad(xi)) return;
        const double g = t.node(self).grad[0] / n;
        for (auto& v : t.grad_of(xi)) v += g;
    });
}

Var slice_rows(Var x, std::size_t start, std::size_t count) {
    const auto d = dims2(x.shape(), "slice_rows");
    if (count == 0 || start + count > d.rows) {
        throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                             std::to_string(start + count) + ") out of " + shape_str(x.shape()));
    }
    auto xs = x.data();
    std::vector<double> out(xs.begin() + static_cast<std::ptrdiff_t>(start * d.cols),
                            xs.begin() + static_cast<std::ptrdiff_t>((start + count) * d.cols));
    const int xi = x.id();
    return x.tape()->record({count, d.cols}, std::move(out), {xi}, "slice_rows",
                            [xi, start, d](Tape& t, int self) {
                                if (!t.needs_grad(xi)) return;
                                const auto& g = t.node(self).grad;
                                auto& gx = t.grad_of(xi);
                                for (std::size_t i = 0; i < g.size(); ++i) gx[start * d.cols + i] += g[i];
                            });
}

Var concat_rows(Var a, Var b) {
    const auto da = dims2(a.shape(), "concat_rows");
    const auto db = dims2(b.shape(), "concat_rows");
    if (da.cols != db.cols) {
        throw DimensionError("concat_rows: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    const int ai = a.id(), bi = b.id();
    const std::size_t na = a.size();
    return a.tape()->record({da.rows + db.rows, da.cols}, std::move(out), {ai, bi}, "concat_rows",
                            [ai, bi, na](Tape& t, int self) {
                                const auto& g = t.node(self).grad;
                                accumulate(t, ai, std::span<const double>(g).subspan(0, na));
                                accumulate(t, bi, std::span<const double>(g).subspan(na));
                            });
}

Var stop_gradient(Var x) {
    Tape& t = *x.tape();
    Var out = t.record(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), {x.id()},
                       "stop_gradient", nullptr);
    t.node(out.id()).requires_grad = false;
    t.node(out.id()).backward_fn = nullptr;
    return out;
}

Var rope_rotate(Var x, std::span<const std::size_t> positions, std::size_t n_heads, double theta) {
    const auto d = dims2(x.shape(), "rope_rotate");
    if (n_heads == 0 || d.cols % n_heads != 0) {
        throw ConfigError("rope_rotate: width " + std::to_string(d.cols) + " not divisible by " +
                          std::to_string(n_heads) + " heads");
    }
    const std::size_t hd = d.cols / n_heads;
    if (hd % 2 != 0) throw ConfigError("rope_rotate: head_dim " + std::to_string(hd) + " is odd");
    if (positions.size() != d.rows) {
        throw DimensionError("rope_rotate: " + std::to_string(positions.size()) + " positions for " +
                             std::to_string(d.rows) + " rows");
    }
    const std::size_t half = hd / 2;
    auto cs = std::make_shared<std::vector<double>>(d.rows * half);
    auto sn = std::make_shared<std::vector<double>>(d.rows * half);
    for (std::size_t r = 0; r < d.rows; ++r)
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
            const double ang = static_cast<double>(positions[r]) * freq;
            (*cs)[r * half + i] = std::cos(ang);
            (*sn)[r * half + i] = std::sin(ang);
        }
    auto xs = x.data();
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < d.rows; ++r)
        for (std::size_t h = 0; h < n_heads; ++h)
            for (std::size_t i = 0; i < half; ++i) {
                const std::size_t o = r * d.cols + h * hd + 2 * i;
                const double c = (*cs)[r * half + i], s = (*sn)[r * half + i];
                out[o] = xs[o] * c - xs[o + 1] * s;
                out[o + 1] = xs[o] * s + xs[o + 1] * c;
            }
    const int xi = x.id();
    return x.tape()->record(x.shape(), std::move(out), {xi}, "rope",
                            [xi, d, n_heads, hd, half, cs, sn](Tape& t, int self) {
                                if (!t.needs_grad(xi)) return;
                                const auto& g = t.node(self).grad;
                                auto& gx = t.grad_of(xi);
                                for (std::size_t r = 0; r < d.rows; ++r)
                                    for (std::size_t h = 0; h < n_heads; ++h)
                                        for (std::size_t i = 0; i < half; ++i) {
                                            const std::size_t o = r * d.cols + h * hd + 2 * i;
                                            const double c = (*cs)[r * half + i], s = (*sn)[r * half + i];
                                            gx[o] += g[o] * c + g[o + 1] * s;
                                            gx[o + 1] += -g[o] * s + g[o + 1] * c;
                                        }
                            });
}

Var causal_attention(Var q, Var k, Var v, std::size_t n_heads) {
    const auto dq = dims2(q.shape(), "causal_attention");
    const auto dk = dims2(k.shape(), "causal_attention");
    if (k.shape() != v.shape() || dk.cols != dq.cols) {
        throw DimensionError("causal_attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                             ", v " + shape_str(v.shape()));
    }
    if (dk.rows < dq.rows) throw DimensionError("causal_attention: fewer keys than queries");
    if (n_heads == 0 || dq.cols % n_heads != 0) {
        throw ConfigError("causal_attention: width not divisible by head count");
    }
    const std::size_t T = dq.rows, S = dk.rows, D = dq.cols, hd = D / n_heads, offset = S - T;
    const double scl = 1.0 / std::sqrt(static_cast<double>(hd));

    // Probabilities are only written (and read back) left of each row block's causal edge.
    std::shared_ptr<double[]> probs(new (std::align_val_t(64)) double[n_heads * T * S],
                                    [](double* ptr) { ::operator delete[](ptr, std::align_val_t(64)); });
    std::vector<double> out(T * D, 0.0);
    const double* qp = q.data().data();
    const double* kp = k.data().data();
    const double* vp = v.data().data();
    MatRM qs(T, hd);
    for (std::size_t h = 0; h < n_heads; ++h) {
        qs = StridedC(qp + h * hd, T, hd, Eigen::OuterStride<>(D)) * scl;
        StridedC kh(kp + h * hd, S, hd, Eigen::OuterStride<>(D));
        StridedC vh(vp + h * hd, S, hd, Eigen::OuterStride<>(D));
        MapM p(probs.get() + h * T * S, T, S);
        StridedM oh(out.data() + h * hd, T, hd, Eigen::OuterStride<>(D));
        for (std::size_t i0 = 0; i0 < T; i0 += kAttnBlock) {
            const auto bs = static_cast<Eigen::Index>(std::min(kAttnBlock, T - i0));
            const auto r0 = static_cast<Eigen::Index>(i0);
            const auto cols = static_cast<Eigen::Index>(offset + i0) + bs;
            auto pb = p.block(r0, 0, bs, cols);
            pb.noalias() = qs.middleRows(r0, bs) * kh.topRows(cols).transpose();
            for (Eigen::Index i = 0; i < bs; ++i) {
                const Eigen::Index valid = static_cast<Eigen::Index>(offset + i0) + i + 1;
                auto row = pb.row(i).head(valid).array();
                row = (row - row.maxCoeff()).exp();
                row /= row.sum();
                pb.row(i).tail(cols - valid).setZero();
            }
            oh.middleRows(r0, bs).noalias() = pb * vh.topRows(cols);
        }
    }
    const int qi = q.id(), ki = k.id(), vi = v.id();
    return q.tape()->record(
        {T, D}, std::move(out), {qi, ki, vi}, "causal_attention",
        [qi, ki, vi, T, S, D, hd, n_heads, offset, scl, probs](Tape& t, int self) {
            const double* g = t.node(self).grad.data();
            const double* qp = t.node(qi).data.data();
            const double* kp = t.node(ki).data.data();
            const double* vp = t.node(vi).data.data();
            double* gq = t.needs_grad(qi) ? t.grad_of(qi).data() : nullptr;
            double* gk = t.needs_grad(ki) ? t.grad_of(ki).data() : nullptr;
            double* gv = t.needs_grad(vi) ? t.grad_of(vi).data() : nullptr;
            MatRM dp(std::min(kAttnBlock, T), S);
            for (std::size_t h = 0; h < n_heads; ++h) {
                StridedC gh(g + h * hd, T, hd, Eigen::OuterStride<>(D));
                StridedC qh(qp + h * hd, T, hd, Eigen::OuterStride<>(D));
                StridedC kh(kp + h * hd, S, hd, Eigen::OuterStride<>(D));
                StridedC vh(vp + h * hd, S, hd, Eigen::OuterStride<>(D));
                MapC p(probs.get() + h * T * S, T, S);
                for (std::size_t i0 = 0; i0 < T; i0 += kAttnBlock) {
                    const auto bs = static_cast<Eigen::Index>(std::min(kAttnBlock, T - i0));
                    const auto r0 = static_cast<Eigen::Index>(i0);
                    const auto cols = static_cast<Eigen::Index>(offset + i0) + bs;
                    auto pb = p.block(r0, 0, bs, cols);
                    auto gb = gh.middleRows(r0, bs);
                    if (gv) {
                        StridedM gvh(gv + h * hd, S, hd, Eigen::OuterStride<>(D));
                        gvh.topRows(cols).noalias() += pb.transpose() * gb;
                    }
                    if (!gq && !gk) continue;
                    auto db = dp.topLeftCorner(bs, cols);
                    db.noalias() = gb * vh.topRows(cols).transpose();
                    for (Eigen::Index i = 0; i < bs; ++i) {
                        const double dot = db.row(i).dot(pb.row(i));
                        db.row(i).array() = pb.row(i).array() * (db.row(i).array() - dot) * scl;
                    }
                    if (gq) {
                        StridedM gqh(gq + h * hd, T, hd, Eigen::OuterStride<>(D));
                        gqh.middleRows(r0, bs).noalias() += db * kh.topRows(cols);
                    }
                    if (gk) {
                        StridedM gkh(gk + h * hd, S, hd, Eigen::OuterStride<>(D));
                        gkh.topRows(cols).noalias() += db.transpose() * qh.middleRows(r0, bs);
                    }
                }
            }
        });
}

Var pinball_mean(Var pred, Var target, std::span<const double> levels) {
    const auto dp = dims2(pred.shape(), "pinball_mean");
    const auto dt = dims2(target.shape(), "pinball_mean");
    const std::size_t nq = levels.size();
    if (nq == 0 || dp.rows != dt.rows || dp.cols != dt.cols * nq) {
        throw DimensionError("pinball_mean: prediction " + shape_str(pred.shape()) + " vs target " +
                             shape_str(target.shape()) + " with " + std::to_string(nq) + " levels");
    }
    const std::size_t R = dt.rows, steps = dt.cols;
    const double denom = static_cast<double>(R * steps * nq);
    auto ps = pred.data(), ys = target.data();
    auto dpred = std::make_shared<std::vector<double>>(pred.size());
    double total = 0.0;
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t s = 0; s < steps; ++s) {
            const double y = ys[r * steps + s];
            for (std::size_t qi = 0; qi < nq; ++qi) {
                const std::size_t idx = r * dp.cols + s * nq + qi;
                const double q = levels[qi];
                const double e = y - ps[idx];
                total += std::max(q * e, (q - 1.0) * e);
                (*dpred)[idx] = e > 0 ? -q : (e < 0 ? 1.0 - q : 0.5 - q);
            }
        }
    const int pi = pred.id(), ti = target.id();
    return pred.tape()->record(
        {1}, {total / denom}, {pi, ti}, "pinball_mean", [pi, ti, dpred, denom, nq, steps, R](Tape& t, int self) {
            const double g = t.node(self).grad[0] / denom;
            if (t.needs_grad(pi)) {
                auto& gp = t.grad_of(pi);
                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * (*dpred)[i];
            }
            if (t.needs_grad(ti)) {
                auto& gt = t.grad_of(ti);
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t s = 0; s < steps; ++s)
                        for (std::size_t q = 0; q < nq; ++q)
                            gt[r * steps + s] -= g * (*dpred)[(r * steps + s) * nq + q];
            }
        });
}

}  // namespace eidos
