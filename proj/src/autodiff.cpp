#include "tsmixer/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "tsmixer/errors.hpp"

namespace tsmixer {

namespace {

std::array<std::size_t, 3> row_major_strides(const std::array<std::size_t, 3>& d) {
    return {d[1] * d[2], d[2], 1};
}

// Strides of `in` when read as a tensor of padded extents `out`; broadcast axes get stride 0.
std::array<std::size_t, 3> broadcast_strides(const Shape& in, const std::array<std::size_t, 3>& out) {
    const auto p = in.padded();
    auto s = row_major_strides(p);
    for (std::size_t i = 0; i < 3; ++i) {
        if (p[i] == 1 && out[i] != 1) s[i] = 0;
    }
    return s;
}

template <class F>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, F f) {
    if (a.shape() == b.shape()) {
        Tensor out(a.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
        return out;
    }
    const Shape shape = broadcast_shape(a.shape(), b.shape());
    const auto o = shape.padded();
    const auto sa = broadcast_strides(a.shape(), o);
    const auto sb = broadcast_strides(b.shape(), o);
    Tensor out(shape);
    std::size_t k = 0;
    for (std::size_t i = 0; i < o[0]; ++i) {
        for (std::size_t j = 0; j < o[1]; ++j) {
            for (std::size_t l = 0; l < o[2]; ++l) {
                out[k++] = f(a[i * sa[0] + j * sa[1] + l * sa[2]], b[i * sb[0] + j * sb[1] + l * sb[2]]);
            }
        }
    }
    return out;
}

Tensor broadcast_tensor(const Tensor& t, const Shape& shape) {
    if (t.shape() == shape) return t;
    const auto o = shape.padded();
    const auto s = broadcast_strides(t.shape(), o);
    Tensor out(shape);
    std::size_t k = 0;
    for (std::size_t i = 0; i < o[0]; ++i) {
        for (std::size_t j = 0; j < o[1]; ++j) {
            for (std::size_t l = 0; l < o[2]; ++l) out[k++] = t[i * s[0] + j * s[1] + l * s[2]];
        }
    }
    return out;
}

void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// C(m x n) += A(m x k) * B(k x n)
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = A[i * k + p];
            if (a == 0.0) continue;
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
        }
    }
}

// C(m x k) += G(m x n) * B(k x n)^T
void gemm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* g = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double* b = B + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[j] * b[j];
            C[i * k + p] += acc;
        }
    }
}

// C(k x n) += A(m x k)^T * G(m x n)
void gemm_tn(const double* A, const double* G, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* g = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = A[i * k + p];
            if (a == 0.0) continue;
            double* c = C + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += a * g[j];
        }
    }
}

template <class F, class D>
Var unary(const Var& a, std::string_view name, F f, D df) {
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return a.tape()->record(name, std::move(y), {a}, [a, df](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& x = a.value();
        Tensor& ga = *gi[0];
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i]);
    });
}

Tape& same_tape(const Var& a, const Var& b) {
    if (!a.valid() || a.tape() != b.tape()) throw Error(ErrorKind::contract, "operands live on different tapes");
    return *a.tape();
}

}  // namespace

const Tensor& Var::value() const {
    if (!tape_) throw Error(ErrorKind::contract, "use of an unbound Var");
    return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Tensor Gradients::of(const Var& v) const {
    if (reached(v)) return *grads_[v.id()];
    return Tensor::zeros(v.shape());
}

void Tape::check_owner(const Var& v) const {
    if (v.tape() != this) throw Error(ErrorKind::contract, "operand recorded on another tape");
}

Var Tape::leaf(Tensor value) {
    nodes_.push_back(Node{"leaf", std::move(value), {}, true, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{"constant", std::move(value), {}, false, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    Node node{std::string(op), std::move(value), {}, false, {}};
    node.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        check_owner(v);
        node.inputs.push_back(v.id());
        node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) const {
    check_owner(loss);
    if (loss.value().size() != 1) {
        throw Error(ErrorKind::contract, fmt::format("backward needs a scalar loss, got shape {}", loss.shape().str()));
    }
    Gradients out;
    out.grads_.resize(nodes_.size());
    if (!nodes_[loss.id()].requires_grad) return out;
    out.grads_[loss.id()] = Tensor(loss.shape(), 1.0);

    std::vector<Tensor*> input_grads;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (!node.backward || !out.grads_[id]) continue;
        input_grads.clear();
        for (std::size_t in : node.inputs) {
            if (!nodes_[in].requires_grad) {
                input_grads.push_back(nullptr);
                continue;
            }
            auto& slot = out.grads_[in];
            if (!slot) slot = Tensor::zeros(nodes_[in].value.shape());
            input_grads.push_back(&*slot);
        }
        node.backward(*out.grads_[id], input_grads);
    }
    return out;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.rank(), b.rank());
    const auto pa = a.padded();
    const auto pb = b.padded();
    std::array<std::size_t, 3> out{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (pa[i] == pb[i] || pb[i] == 1) {
            out[i] = pa[i];
        } else if (pa[i] == 1) {
            out[i] = pb[i];
        } else {
            throw Error(ErrorKind::dimension, fmt::format("shapes {} and {} do not broadcast", a.str(), b.str()));
        }
    }
    return Shape(std::span<const std::size_t>(out.data() + (3 - r), r));
}

Tensor reduce_to(const Tensor& grad, const Shape& shape) {
    if (grad.shape() == shape) return grad;
    const auto g = grad.shape().padded();
    const auto t = shape.padded();
    for (std::size_t i = 0; i < 3; ++i) {
        if (t[i] != g[i] && t[i] != 1) {
            throw Error(ErrorKind::dimension,
                        fmt::format("cannot reduce {} to {}", grad.shape().str(), shape.str()));
        }
    }
    const auto s = broadcast_strides(shape, g);
    Tensor out(shape);
    std::size_t k = 0;
    for (std::size_t i = 0; i < g[0]; ++i) {
        for (std::size_t j = 0; j < g[1]; ++j) {
            for (std::size_t l = 0; l < g[2]; ++l) out[i * s[0] + j * s[1] + l * s[2]] += grad[k++];
        }
    }
    return out;
}

Var matmul(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() < 2 || B.rank() < 2) {
        throw Error(ErrorKind::rank, fmt::format("matmul needs rank >= 2, got {} x {}", A.shape().str(), B.shape().str()));
    }
    const std::size_t m = A.dim(A.rank() - 2);
    const std::size_t k = A.dim(A.rank() - 1);
    const std::size_t n = B.dim(B.rank() - 1);
    const std::size_t ba = A.rank() == 3 ? A.dim(0) : 0;
    const std::size_t bb = B.rank() == 3 ? B.dim(0) : 0;
    if (B.dim(B.rank() - 2) != k || (ba && bb && ba != bb)) {
        throw Error(ErrorKind::dimension, fmt::format("matmul {} x {}", A.shape().str(), B.shape().str()));
    }
    const std::size_t batch = std::max(ba, bb);
    Tensor C = batch ? Tensor(Shape{batch, m, n}) : Tensor(Shape{m, n});
    const std::size_t sa = ba ? m * k : 0;
    const std::size_t sb = bb ? k * n : 0;
    for (std::size_t i = 0; i < std::max<std::size_t>(batch, 1); ++i) {
        gemm_nn(A.raw() + i * sa, B.raw() + i * sb, C.raw() + i * m * n, m, k, n);
    }
    return tape.record("matmul", std::move(C), {a, b},
                       [a, b, m, k, n, batch, sa, sb](const Tensor& g, std::span<Tensor* const> gi) {
                           const Tensor& A = a.value();
                           const Tensor& B = b.value();
                           for (std::size_t i = 0; i < std::max<std::size_t>(batch, 1); ++i) {
                               const double* gc = g.raw() + i * m * n;
                               if (gi[0]) gemm_nt(gc, B.raw() + i * sb, gi[0]->raw() + i * sa, m, k, n);
                               if (gi[1]) gemm_tn(A.raw() + i * sa, gc, gi[1]->raw() + i * sb, m, k, n);
                           }
                       });
}

Var add(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    Tensor y = binary_broadcast(a.value(), b.value(), [](double x, double z) { return x + z; });
    return tape.record("add", std::move(y), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) accumulate(*gi[0], reduce_to(g, a.shape()));
        if (gi[1]) accumulate(*gi[1], reduce_to(g, b.shape()));
    });
}

Var sub(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    Tensor y = binary_broadcast(a.value(), b.value(), [](double x, double z) { return x - z; });
    return tape.record("sub", std::move(y), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) accumulate(*gi[0], reduce_to(g, a.shape()));
        if (gi[1]) {
            Tensor r = reduce_to(g, b.shape());
            for (std::size_t i = 0; i < r.size(); ++i) (*gi[1])[i] -= r[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    Tensor y = binary_broadcast(a.value(), b.value(), [](double x, double z) { return x * z; });
    return tape.record("mul", std::move(y), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> gi) {
        auto times = [](double x, double z) { return x * z; };
        if (gi[0]) accumulate(*gi[0], reduce_to(binary_broadcast(g, b.value(), times), a.shape()));
        if (gi[1]) accumulate(*gi[1], reduce_to(binary_broadcast(g, a.value(), times), b.shape()));
    });
}

Var div(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    Tensor y = binary_broadcast(a.value(), b.value(), [](double x, double z) { return x / z; });
    Tape* t = &tape;
    const std::size_t out_id = tape.size();
    return tape.record("div", std::move(y), {a, b}, [a, b, t, out_id](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) {
            accumulate(*gi[0], reduce_to(binary_broadcast(g, b.value(), [](double x, double z) { return x / z; }),
                                         a.shape()));
        }
        if (gi[1]) {
            // d(a/b)/db = -(a/b)/b
            const Tensor& q = t->value(out_id);
            Tensor gq(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) gq[i] = -g[i] * q[i];
            accumulate(*gi[1], reduce_to(binary_broadcast(gq, b.value(), [](double x, double z) { return x / z; }),
                                         b.shape()));
        }
    });
}

Var scale(const Var& a, double factor) {
    return unary(a, "scale", [factor](double x) { return factor * x; }, [factor](double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
    return unary(a, "add_scalar", [offset](double x) { return x + offset; }, [](double) { return 1.0; });
}

Var transpose(const Var& a) {
    const Tensor& x = a.value();
    if (x.rank() < 2) {
        throw Error(ErrorKind::rank, fmt::format("transpose needs rank >= 2, got {}", x.shape().str()));
    }
    const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
    const std::size_t m = x.dim(x.rank() - 2);
    const std::size_t n = x.dim(x.rank() - 1);
    auto swap = [batch, m, n](const Tensor& in, Tensor& out, bool accumulate_into) {
        for (std::size_t b = 0; b < batch; ++b) {
            const double* src = in.raw() + b * m * n;
            double* dst = out.raw() + b * m * n;
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (accumulate_into) {
                        dst[j * m + i] += src[i * n + j];
                    } else {
                        dst[j * m + i] = src[i * n + j];
                    }
                }
            }
        }
    };
    Tensor y = x.rank() == 3 ? Tensor(Shape{batch, n, m}) : Tensor(Shape{n, m});
    swap(x, y, false);
    return a.tape()->record("transpose", std::move(y), {a}, [batch, m, n](const Tensor& g, std::span<Tensor* const> gi) {
        // g has trailing extents n x m; scatter back to m x n.
        for (std::size_t b = 0; b < batch; ++b) {
            const double* src = g.raw() + b * m * n;
            double* dst = gi[0]->raw() + b * m * n;
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t i = 0; i < m; ++i) dst[i * n + j] += src[j * m + i];
            }
        }
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor y = a.value().reshaped(shape);
    return a.tape()->record("reshape", std::move(y), {a}, [](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    });
}

Var broadcast_to(const Var& a, Shape shape) {
    if (!(broadcast_shape(a.shape(), shape) == shape)) {
        throw Error(ErrorKind::dimension, fmt::format("cannot broadcast {} to {}", a.shape().str(), shape.str()));
    }
    Tensor y = broadcast_tensor(a.value(), shape);
    return a.tape()->record("broadcast_to", std::move(y), {a}, [a](const Tensor& g, std::span<Tensor* const> gi) {
        accumulate(*gi[0], reduce_to(g, a.shape()));
    });
}

Var relu(const Var& a) {
    return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(const Var& a) {
    return unary(
        a, "softplus",
        [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        });
}

Var exp(const Var& a) {
    return unary(a, "exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(const Var& a) {
    for (double v : a.value().data()) {
        if (!(v > 0.0)) throw Error(ErrorKind::domain, fmt::format("log of non-positive value {}", v));
    }
    return unary(a, "log", [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
    for (double v : a.value().data()) {
        if (v < 0.0) throw Error(ErrorKind::domain, fmt::format("sqrt of negative value {}", v));
    }
    return unary(a, "sqrt", [](double x) { return std::sqrt(x); }, [](double x) { return 0.5 / std::sqrt(x); });
}

Var square(const Var& a) {
    return unary(a, "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var clamp_min(const Var& a, double floor) {
    return unary(
        a, "clamp_min", [floor](double x) { return x > floor ? x : floor; },
        [floor](double x) { return x > floor ? 1.0 : 0.0; });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.tape()->record("sum", Tensor::scalar(s), {a}, [](const Tensor& g, std::span<Tensor* const> gi) {
        const double gv = g[0];
        for (double& v : gi[0]->data()) v += gv;
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_axes(const Var& a, std::initializer_list<std::size_t> axes) {
    std::array<std::size_t, 3> dims{};
    const std::size_t r = a.value().rank();
    for (std::size_t i = 0; i < r; ++i) dims[i] = a.shape()[i];
    for (std::size_t ax : axes) {
        if (ax >= r) throw Error(ErrorKind::rank, fmt::format("axis {} out of range for {}", ax, a.shape().str()));
        dims[ax] = 1;
    }
    const Shape out_shape(std::span<const std::size_t>(dims.data(), r));
    Tensor y = reduce_to(a.value(), out_shape);
    return a.tape()->record("sum_axes", std::move(y), {a}, [a](const Tensor& g, std::span<Tensor* const> gi) {
        accumulate(*gi[0], broadcast_tensor(g, a.shape()));
    });
}

Var mean_axes(const Var& a, std::initializer_list<std::size_t> axes) {
    Var s = sum_axes(a, axes);
    return scale(s, static_cast<double>(s.value().size()) / static_cast<double>(a.value().size()));
}

Var concat_last(const Var& a, const Var& b) {
    Tape& tape = same_tape(a, b);
    Tensor y = concat_last(a.value(), b.value());
    const std::size_t ca = a.shape()[a.value().rank() - 1];
    const std::size_t cb = b.shape()[b.value().rank() - 1];
    return tape.record("concat", std::move(y), {a, b}, [ca, cb](const Tensor& g, std::span<Tensor* const> gi) {
        const std::size_t rows = g.size() / (ca + cb);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* src = g.raw() + r * (ca + cb);
            if (gi[0]) {
                for (std::size_t j = 0; j < ca; ++j) (*gi[0])[r * ca + j] += src[j];
            }
            if (gi[1]) {
                for (std::size_t j = 0; j < cb; ++j) (*gi[1])[r * cb + j] += src[ca + j];
            }
        }
    });
}

Var slice_last(const Var& a, std::size_t begin, std::size_t end) {
    Tensor y = slice_last(a.value(), begin, end);
    const std::size_t cols = a.shape()[a.value().rank() - 1];
    return a.tape()->record("slice", std::move(y), {a}, [begin, end, cols](const Tensor& g, std::span<Tensor* const> gi) {
        const std::size_t w = end - begin;
        const std::size_t rows = g.size() / w;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) (*gi[0])[r * cols + begin + j] += g[r * w + j];
        }
    });
}

Var dropout(const Var& a, double rate, Mode mode, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw Error(ErrorKind::parameter, fmt::format("dropout rate must lie in [0, 1), got {}", rate));
    }
    if (mode == Mode::eval || rate == 0.0) return a;
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor mask(a.shape());
    for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep_scale;
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
    return a.tape()->record("dropout", std::move(y), {a},
                            [mask = std::move(mask)](const Tensor& g, std::span<Tensor* const> gi) {
                                for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * mask[i];
                            });
}

double grad_check(const ScalarFn& f, std::vector<Tensor> params, double step) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.leaf(p));
    const Var loss = f(tape, vars);
    const Gradients grads = tape.backward(loss);

    auto evaluate = [&]() {
        Tape t;
        std::vector<Var> vs;
        vs.reserve(params.size());
        for (const Tensor& p : params) vs.push_back(t.constant(p));
        const double v = f(t, vs).value().item();
        if (!std::isfinite(v)) throw Error(ErrorKind::numeric, "non-finite function value during gradient check");
        return v;
    };

    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const Tensor analytic = grads.of(vars[p]);
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double orig = params[p][i];
            params[p][i] = orig + step;
            const double up = evaluate();
            params[p][i] = orig - step;
            const double down = evaluate();
            params[p][i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace tsmixer
