#include "slvm/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace slvm {
namespace numcore {

namespace {

std::string shape_str(const std::vector<long>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw numeric_error(std::string("non-finite output in op ") + op);
        }
    }
}

double d_tanh(double /*x*/, double y) { return 1.0 - y * y; }
double d_sigmoid(double /*x*/, double y) { return y * (1.0 - y); }
double d_softplus(double x, double /*y*/) { return 1.0 / (1.0 + std::exp(-x)); }
double d_relu(double x, double /*y*/) { return x > 0.0 ? 1.0 : 0.0; }
double d_exp(double /*x*/, double y) { return y; }
double d_log(double x, double /*y*/) { return 1.0 / x; }

double f_sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
double f_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double f_relu(double x) { return x > 0.0 ? x : 0.0; }
double f_tanh(double x) { return std::tanh(x); }
double f_exp(double x) { return std::exp(x); }
double f_log(double x) { return std::log(x); }

double f_log1mexp(double x) {
    // x < 0; log(1 - e^x)
    if (x > -0.6931471805599453) return std::log(-std::expm1(x));
    return std::log1p(-std::exp(x));
}
double d_log1mexp(double x, double /*y*/) {
    // d/dx log(1-e^x) = -e^x/(1-e^x) = -1/expm1(-x)
    return -1.0 / std::expm1(-x);
}

}  // namespace

long shape_numel(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) n *= d;
    return n;
}

Tensor make_tensor(std::vector<long> shape, std::vector<double> value, bool requires_grad) {
    require(shape_numel(shape) == static_cast<long>(value.size()),
            "tensor shape " + shape_str(shape) + " does not match data length");
    auto t = std::make_shared<TensorImpl>();
    t->shape = std::move(shape);
    t->value = std::move(value);
    t->requires_grad = requires_grad;
    return t;
}

Tensor make_scalar(double v, bool requires_grad) { return make_tensor({1}, {v}, requires_grad); }

Tensor zeros(std::vector<long> shape, bool requires_grad) {
    long n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), requires_grad);
}

Tensor full(std::vector<long> shape, double v, bool requires_grad) {
    long n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v), requires_grad);
}

Tensor param_uniform(const std::string& name, std::vector<long> shape, long fan_in, Rng rng) {
    long n = shape_numel(shape);
    double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 1.0;
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = (2.0 * rng.uniform() - 1.0) * bound;
    auto t = make_tensor(std::move(shape), std::move(v), true);
    t->name = name;
    return t;
}

Tensor Tape::emit(const char* op, std::vector<long> shape, std::vector<double> value,
                  std::vector<Tensor> inputs, std::function<void(Node&)> back) {
    check_finite(op, value);
    auto out = make_tensor(std::move(shape), std::move(value));
    bool rg = false;
    if (recording) {
        for (const auto& in : inputs) rg = rg || in->requires_grad;
    }
    out->requires_grad = rg;
    if (rg) {
        nodes_.push_back(Node{op, std::move(inputs), out, std::move(back)});
    }
    return out;
}

Tensor Tape::constant(std::vector<long> shape, std::vector<double> value) {
    return make_tensor(std::move(shape), std::move(value));
}

Tensor Tape::constant_scalar(double v) { return make_scalar(v); }

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    require(a->shape == b->shape, "add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    std::vector<double> v(a->value.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] + b->value[i];
    return emit("add", a->shape, std::move(v), {a, b}, [](Node& n) {
        const auto& g = n.output->grad;
        for (int k = 0; k < 2; ++k) {
            if (!n.inputs[static_cast<size_t>(k)]->requires_grad) continue;
            auto& gi = n.inputs[static_cast<size_t>(k)]->grad;
            for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
    });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    require(a->shape == b->shape, "sub: shape mismatch");
    std::vector<double> v(a->value.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] - b->value[i];
    return emit("sub", a->shape, std::move(v), {a, b}, [](Node& n) {
        const auto& g = n.output->grad;
        if (n.inputs[0]->requires_grad) {
            auto& ga = n.inputs[0]->grad;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (n.inputs[1]->requires_grad) {
            auto& gb = n.inputs[1]->grad;
            for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    require(a->shape == b->shape, "mul: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    std::vector<double> v(a->value.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] * b->value[i];
    return emit("mul", a->shape, std::move(v), {a, b}, [](Node& n) {
        const auto& g = n.output->grad;
        const auto& av = n.inputs[0]->value;
        const auto& bv = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
            auto& ga = n.inputs[0]->grad;
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (n.inputs[1]->requires_grad) {
            auto& gb = n.inputs[1]->grad;
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

Tensor Tape::neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor Tape::add_scalar(const Tensor& a, double c) {
    std::vector<double> v(a->value.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] + c;
    return emit("add_scalar", a->shape, std::move(v), {a}, [](Node& n) {
        const auto& g = n.output->grad;
        auto& ga = n.inputs[0]->grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Tensor Tape::mul_scalar(const Tensor& a, double c) {
    std::vector<double> v(a->value.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] * c;
    return emit("mul_scalar", a->shape, std::move(v), {a}, [c](Node& n) {
        const auto& g = n.output->grad;
        auto& ga = n.inputs[0]->grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
}

Tensor Tape::map_unary(const char* op, const Tensor& a, double (*f)(double),
                       double (*df_from_xy)(double, double)) {
    std::vector<double> v(a->value.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = f(a->value[i]);
    return emit(op, a->shape, std::move(v), {a}, [df_from_xy](Node& n) {
        const auto& g = n.output->grad;
        const auto& x = n.inputs[0]->value;
        const auto& y = n.output->value;
        auto& ga = n.inputs[0]->grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df_from_xy(x[i], y[i]);
    });
}

Tensor Tape::tanh(const Tensor& a) { return map_unary("tanh", a, f_tanh, d_tanh); }
Tensor Tape::sigmoid(const Tensor& a) { return map_unary("sigmoid", a, f_sigmoid, d_sigmoid); }
Tensor Tape::softplus(const Tensor& a) { return map_unary("softplus", a, f_softplus, d_softplus); }
Tensor Tape::relu(const Tensor& a) { return map_unary("relu", a, f_relu, d_relu); }
Tensor Tape::exp(const Tensor& a) { return map_unary("exp", a, f_exp, d_exp); }
Tensor Tape::log(const Tensor& a) { return map_unary("log", a, f_log, d_log); }
Tensor Tape::log1mexp(const Tensor& a) { return map_unary("log1mexp", a, f_log1mexp, d_log1mexp); }

Tensor Tape::clamp_min(const Tensor& a, double lo) {
    std::vector<double> v(a->value.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::max(a->value[i], lo);
    return emit("clamp_min", a->shape, std::move(v), {a}, [lo](Node& n) {
        const auto& g = n.output->grad;
        const auto& x = n.inputs[0]->value;
        auto& ga = n.inputs[0]->grad;
        for (size_t i = 0; i < g.size(); ++i) {
            if (x[i] > lo) ga[i] += g[i];
        }
    });
}

Tensor Tape::clamp_max(const Tensor& a, double hi) {
    std::vector<double> v(a->value.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::min(a->value[i], hi);
    return emit("clamp_max", a->shape, std::move(v), {a}, [hi](Node& n) {
        const auto& g = n.output->grad;
        const auto& x = n.inputs[0]->value;
        auto& ga = n.inputs[0]->grad;
        for (size_t i = 0; i < g.size(); ++i) {
            if (x[i] < hi) ga[i] += g[i];
        }
    });
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

Tensor Tape::transpose2d(const Tensor& a) {
    require(a->ndim() == 2, "transpose2d: operand must be 2-d");
    const long m = a->shape[0], n = a->shape[1];
    std::vector<double> v(static_cast<size_t>(m * n));
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) v[static_cast<size_t>(j * m + i)] = a->value[static_cast<size_t>(i * n + j)];
    return emit("transpose2d", {n, m}, std::move(v), {a}, [m, n](Node& nd) {
        const auto& g = nd.output->grad;
        auto& ga = nd.inputs[0]->grad;
        for (long i = 0; i < m; ++i)
            for (long j = 0; j < n; ++j) ga[static_cast<size_t>(i * n + j)] += g[static_cast<size_t>(j * m + i)];
    });
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    require(a->ndim() == 2 && b->ndim() == 2, "matmul: operands must be 2-d");
    require(a->shape[1] == b->shape[0],
            "matmul: inner dimensions differ, " + shape_str(a->shape) + " x " + shape_str(b->shape));
    const long m = a->shape[0], k = a->shape[1], n = b->shape[1];
    std::vector<double> v(static_cast<size_t>(m * n), 0.0);
    const double* pa = a->value.data();
    const double* pb = b->value.data();
    for (long i = 0; i < m; ++i) {
        double* vi = v.data() + i * n;
        const double* ai = pa + i * k;
        for (long p = 0; p < k; ++p) {
            const double aip = ai[p];
            if (aip == 0.0) continue;
            const double* bp = pb + p * n;
            for (long j = 0; j < n; ++j) vi[j] += aip * bp[j];
        }
    }
    return emit("matmul", {m, n}, std::move(v), {a, b}, [m, k, n](Node& nd) {
        const double* g = nd.output->grad.data();
        const double* av = nd.inputs[0]->value.data();
        const double* bv = nd.inputs[1]->value.data();
        if (nd.inputs[0]->requires_grad) {
            double* ga = nd.inputs[0]->grad.data();
            // dA = dC * B^T
            for (long i = 0; i < m; ++i)
                for (long j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    if (gij == 0.0) continue;
                    const double* bj = bv + j;
                    double* gai = ga + i * k;
                    for (long p = 0; p < k; ++p) gai[p] += gij * bj[p * n];
                }
        }
        if (nd.inputs[1]->requires_grad) {
            double* gb = nd.inputs[1]->grad.data();
            // dB = A^T * dC
            for (long i = 0; i < m; ++i) {
                const double* ai = av + i * k;
                const double* gi = g + i * n;
                for (long p = 0; p < k; ++p) {
                    const double aip = ai[p];
                    if (aip == 0.0) continue;
                    double* gbp = gb + p * n;
                    for (long j = 0; j < n; ++j) gbp[j] += aip * gi[j];
                }
            }
        }
    });
}

Tensor Tape::concat(const std::vector<Tensor>& parts, int axis) {
    require(!parts.empty(), "concat: empty input list");
    const auto& s0 = parts[0]->shape;
    require(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: bad axis");
    long cat_dim = 0;
    for (const auto& p : parts) {
        require(p->ndim() == static_cast<int>(s0.size()), "concat: rank mismatch");
        for (int i = 0; i < p->ndim(); ++i) {
            if (i != axis) require(p->shape[static_cast<size_t>(i)] == s0[static_cast<size_t>(i)], "concat: shape mismatch off-axis");
        }
        cat_dim += p->dim(axis);
    }
    std::vector<long> oshape = s0;
    oshape[static_cast<size_t>(axis)] = cat_dim;

    // outer = product of dims before axis, inner = product after
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(s0.size()); ++i) inner *= s0[static_cast<size_t>(i)];

    std::vector<double> v(static_cast<size_t>(outer * cat_dim * inner));
    long off = 0;
    for (const auto& p : parts) {
        const long pd = p->dim(axis);
        for (long o = 0; o < outer; ++o) {
            std::memcpy(v.data() + (o * cat_dim + off) * inner,
                        p->value.data() + o * pd * inner,
                        static_cast<size_t>(pd * inner) * sizeof(double));
        }
        off += pd;
    }
    return emit("concat", std::move(oshape), std::move(v), parts,
                [axis, outer, inner, cat_dim](Node& n) {
        const double* g = n.output->grad.data();
        long off2 = 0;
        for (auto& p : n.inputs) {
            const long pd = p->dim(axis);
            if (p->requires_grad) {
                double* gp = p->grad.data();
                for (long o = 0; o < outer; ++o) {
                    const double* src = g + (o * cat_dim + off2) * inner;
                    double* dst = gp + o * pd * inner;
                    for (long i = 0; i < pd * inner; ++i) dst[i] += src[i];
                }
            }
            off2 += pd;
        }
    });
}

Tensor Tape::slice(const Tensor& a, int axis, long start, long len) {
    require(axis >= 0 && axis < a->ndim(), "slice: bad axis");
    require(start >= 0 && len >= 0 && start + len <= a->dim(axis), "slice: out of range");
    long outer = 1, inner = 1;
    const long ad = a->dim(axis);
    for (int i = 0; i < axis; ++i) outer *= a->shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < a->ndim(); ++i) inner *= a->shape[static_cast<size_t>(i)];
    std::vector<long> oshape = a->shape;
    oshape[static_cast<size_t>(axis)] = len;
    std::vector<double> v(static_cast<size_t>(outer * len * inner));
    for (long o = 0; o < outer; ++o) {
        std::memcpy(v.data() + o * len * inner,
                    a->value.data() + (o * ad + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(double));
    }
    return emit("slice", std::move(oshape), std::move(v), {a},
                [outer, inner, ad, start, len](Node& n) {
        const double* g = n.output->grad.data();
        double* ga = n.inputs[0]->grad.data();
        for (long o = 0; o < outer; ++o) {
            const double* src = g + o * len * inner;
            double* dst = ga + (o * ad + start) * inner;
            for (long i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
}

Tensor Tape::reshape(const Tensor& a, std::vector<long> shape) {
    require(shape_numel(shape) == a->numel(), "reshape: element count mismatch");
    std::vector<double> v = a->value;
    return emit("reshape", std::move(shape), std::move(v), {a}, [](Node& n) {
        const auto& g = n.output->grad;
        auto& ga = n.inputs[0]->grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Tensor Tape::expand_last(const Tensor& a, long k) {
    require(k >= 1, "expand_last: k must be >= 1");
    std::vector<long> oshape = a->shape;
    oshape.push_back(k);
    std::vector<double> v(static_cast<size_t>(a->numel() * k));
    for (long i = 0; i < a->numel(); ++i) {
        for (long j = 0; j < k; ++j) v[static_cast<size_t>(i * k + j)] = a->value[static_cast<size_t>(i)];
    }
    return emit("expand_last", std::move(oshape), std::move(v), {a}, [k](Node& n) {
        const auto& g = n.output->grad;
        auto& ga = n.inputs[0]->grad;
        for (size_t i = 0; i < ga.size(); ++i) {
            double s = 0.0;
            for (long j = 0; j < k; ++j) s += g[i * static_cast<size_t>(k) + static_cast<size_t>(j)];
            ga[i] += s;
        }
    });
}

Tensor Tape::expand_rows(const Tensor& a, long n) {
    require(a->ndim() == 2 && a->shape[0] == 1, "expand_rows: expects a [1, w] tensor");
    const long w = a->shape[1];
    std::vector<double> v(static_cast<size_t>(n * w));
    for (long i = 0; i < n; ++i) std::memcpy(v.data() + i * w, a->value.data(), static_cast<size_t>(w) * sizeof(double));
    return emit("expand_rows", {n, w}, std::move(v), {a}, [n, w](Node& nd) {
        const auto& g = nd.output->grad;
        auto& ga = nd.inputs[0]->grad;
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < w; ++j) ga[static_cast<size_t>(j)] += g[static_cast<size_t>(i * w + j)];
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace {
void reduced_layout(const std::vector<long>& shape, int axis, long& outer, long& red, long& inner,
                    std::vector<long>& oshape) {
    outer = 1;
    inner = 1;
    red = shape[static_cast<size_t>(axis)];
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) inner *= shape[static_cast<size_t>(i)];
    oshape.clear();
    for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
        if (i != axis) oshape.push_back(shape[static_cast<size_t>(i)]);
    }
    if (oshape.empty()) oshape.push_back(1);
}
}  // namespace

Tensor Tape::logsumexp(const Tensor& a, int axis) {
    require(axis >= 0 && axis < a->ndim(), "logsumexp: bad axis");
    long outer, red, inner;
    std::vector<long> oshape;
    reduced_layout(a->shape, axis, outer, red, inner, oshape);
    std::vector<double> v(static_cast<size_t>(outer * inner));
    const double* x = a->value.data();
    for (long o = 0; o < outer; ++o) {
        for (long i = 0; i < inner; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (long r = 0; r < red; ++r) mx = std::max(mx, x[(o * red + r) * inner + i]);
            double s = 0.0;
            for (long r = 0; r < red; ++r) s += std::exp(x[(o * red + r) * inner + i] - mx);
            v[static_cast<size_t>(o * inner + i)] = mx + std::log(s);
        }
    }
    return emit("logsumexp", std::move(oshape), std::move(v), {a},
                [outer, red, inner](Node& n) {
        // uses the saved forward output: d/dx_r = exp(x_r - lse)
        const double* g = n.output->grad.data();
        const double* y = n.output->value.data();
        const double* x = n.inputs[0]->value.data();
        double* ga = n.inputs[0]->grad.data();
        for (long o = 0; o < outer; ++o)
            for (long i = 0; i < inner; ++i) {
                const double gi = g[o * inner + i];
                if (gi == 0.0) continue;
                const double yi = y[o * inner + i];
                for (long r = 0; r < red; ++r) {
                    const long idx = (o * red + r) * inner + i;
                    ga[idx] += gi * std::exp(x[idx] - yi);
                }
            }
    });
}

Tensor Tape::sum(const Tensor& a, int axis) {
    require(axis >= 0 && axis < a->ndim(), "sum: bad axis");
    long outer, red, inner;
    std::vector<long> oshape;
    reduced_layout(a->shape, axis, outer, red, inner, oshape);
    std::vector<double> v(static_cast<size_t>(outer * inner), 0.0);
    const double* x = a->value.data();
    for (long o = 0; o < outer; ++o)
        for (long r = 0; r < red; ++r)
            for (long i = 0; i < inner; ++i) v[static_cast<size_t>(o * inner + i)] += x[(o * red + r) * inner + i];
    return emit("sum", std::move(oshape), std::move(v), {a}, [outer, red, inner](Node& n) {
        const double* g = n.output->grad.data();
        double* ga = n.inputs[0]->grad.data();
        for (long o = 0; o < outer; ++o)
            for (long r = 0; r < red; ++r)
                for (long i = 0; i < inner; ++i) ga[(o * red + r) * inner + i] += g[o * inner + i];
    });
}

Tensor Tape::sum_all(const Tensor& a) {
    double s = 0.0;
    for (double x : a->value) s += x;
    return emit("sum_all", {1}, {s}, {a}, [](Node& n) {
        const double g = n.output->grad[0];
        auto& ga = n.inputs[0]->grad;
        for (auto& v : ga) v += g;
    });
}

Tensor Tape::mean_all(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a->numel());
    double s = 0.0;
    for (double x : a->value) s += x;
    return emit("mean_all", {1}, {s * inv}, {a}, [inv](Node& n) {
        const double g = n.output->grad[0] * inv;
        auto& ga = n.inputs[0]->grad;
        for (auto& v : ga) v += g;
    });
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

Tensor Tape::conv1d_causal(const Tensor& x, const Tensor& w, long dilation) {
    require(x->ndim() == 2, "conv1d_causal: input must be [channels, time]");
    require(w->ndim() == 3, "conv1d_causal: weight must be [out, in, k]");
    require(w->shape[1] == x->shape[0], "conv1d_causal: channel mismatch");
    require(dilation >= 1, "conv1d_causal: dilation must be >= 1");
    const long ci = x->shape[0], T = x->shape[1];
    const long co = w->shape[0], k = w->shape[2];
    std::vector<double> v(static_cast<size_t>(co * T), 0.0);
    const double* xp = x->value.data();
    const double* wp = w->value.data();
    for (long o = 0; o < co; ++o) {
        double* vo = v.data() + o * T;
        for (long c = 0; c < ci; ++c) {
            const double* xc = xp + c * T;
            const double* wc = wp + (o * ci + c) * k;
            for (long j = 0; j < k; ++j) {
                const double wj = wc[j];
                if (wj == 0.0) continue;
                const long lag = (k - 1 - j) * dilation;
                for (long t = lag; t < T; ++t) vo[t] += wj * xc[t - lag];
            }
        }
    }
    return emit("conv1d_causal", {co, T}, std::move(v), {x, w}, [ci, T, co, k, dilation](Node& n) {
        const double* g = n.output->grad.data();
        const double* xp = n.inputs[0]->value.data();
        const double* wp = n.inputs[1]->value.data();
        if (n.inputs[0]->requires_grad) {
            double* gx = n.inputs[0]->grad.data();
            for (long o = 0; o < co; ++o)
                for (long c = 0; c < ci; ++c) {
                    const double* wc = wp + (o * ci + c) * k;
                    const double* go = g + o * T;
                    double* gxc = gx + c * T;
                    for (long j = 0; j < k; ++j) {
                        const double wj = wc[j];
                        if (wj == 0.0) continue;
                        const long lag = (k - 1 - j) * dilation;
                        for (long t = lag; t < T; ++t) gxc[t - lag] += wj * go[t];
                    }
                }
        }
        if (n.inputs[1]->requires_grad) {
            double* gw = n.inputs[1]->grad.data();
            for (long o = 0; o < co; ++o)
                for (long c = 0; c < ci; ++c) {
                    const double* go = g + o * T;
                    const double* xc = xp + c * T;
                    double* gwc = gw + (o * ci + c) * k;
                    for (long j = 0; j < k; ++j) {
                        const long lag = (k - 1 - j) * dilation;
                        double s = 0.0;
                        for (long t = lag; t < T; ++t) s += go[t] * xc[t - lag];
                        gwc[j] += s;
                    }
                }
        }
    });
}

Tensor Tape::conv1d_strided(const Tensor& x, const Tensor& w, long stride) {
    require(x->ndim() == 2 && w->ndim() == 3, "conv1d_strided: bad ranks");
    require(w->shape[1] == x->shape[0], "conv1d_strided: channel mismatch");
    require(stride >= 1, "conv1d_strided: stride must be >= 1");
    const long ci = x->shape[0], T = x->shape[1];
    const long co = w->shape[0], k = w->shape[2];
    require(T >= k, "conv1d_strided: input shorter than kernel");
    const long To = (T - k) / stride + 1;
    std::vector<double> v(static_cast<size_t>(co * To), 0.0);
    const double* xp = x->value.data();
    const double* wp = w->value.data();
    for (long o = 0; o < co; ++o)
        for (long c = 0; c < ci; ++c) {
            const double* xc = xp + c * T;
            const double* wc = wp + (o * ci + c) * k;
            double* vo = v.data() + o * To;
            for (long u = 0; u < To; ++u) {
                const double* xu = xc + u * stride;
                double s = 0.0;
                for (long j = 0; j < k; ++j) s += wc[j] * xu[j];
                vo[u] += s;
            }
        }
    return emit("conv1d_strided", {co, To}, std::move(v), {x, w}, [ci, T, co, k, stride, To](Node& n) {
        const double* g = n.output->grad.data();
        const double* xp = n.inputs[0]->value.data();
        const double* wp = n.inputs[1]->value.data();
        if (n.inputs[0]->requires_grad) {
            double* gx = n.inputs[0]->grad.data();
            for (long o = 0; o < co; ++o)
                for (long c = 0; c < ci; ++c) {
                    const double* wc = wp + (o * ci + c) * k;
                    const double* go = g + o * To;
                    double* gxc = gx + c * T;
                    for (long u = 0; u < To; ++u) {
                        const double gu = go[u];
                        if (gu == 0.0) continue;
                        double* xu = gxc + u * stride;
                        for (long j = 0; j < k; ++j) xu[j] += gu * wc[j];
                    }
                }
        }
        if (n.inputs[1]->requires_grad) {
            double* gw = n.inputs[1]->grad.data();
            for (long o = 0; o < co; ++o)
                for (long c = 0; c < ci; ++c) {
                    const double* go = g + o * To;
                    const double* xc = xp + c * T;
                    double* gwc = gw + (o * ci + c) * k;
                    for (long u = 0; u < To; ++u) {
                        const double gu = go[u];
                        if (gu == 0.0) continue;
                        const double* xu = xc + u * stride;
                        for (long j = 0; j < k; ++j) gwc[j] += gu * xu[j];
                    }
                }
        }
    });
}

Tensor Tape::conv1d_depthwise(const Tensor& x, const Tensor& w, long stride) {
    require(x->ndim() == 2 && w->ndim() == 2, "conv1d_depthwise: bad ranks");
    require(w->shape[0] == x->shape[0], "conv1d_depthwise: channel mismatch");
    require(stride >= 1, "conv1d_depthwise: stride must be >= 1");
    const long C = x->shape[0], T = x->shape[1], k = w->shape[1];
    require(T >= k, "conv1d_depthwise: input shorter than kernel");
    const long To = (T - k) / stride + 1;
    std::vector<double> v(static_cast<size_t>(C * To), 0.0);
    const double* xp = x->value.data();
    const double* wp = w->value.data();
    for (long c = 0; c < C; ++c) {
        const double* xc = xp + c * T;
        const double* wc = wp + c * k;
        double* vc = v.data() + c * To;
        for (long u = 0; u < To; ++u) {
            const double* xu = xc + u * stride;
            double s = 0.0;
            for (long j = 0; j < k; ++j) s += wc[j] * xu[j];
            vc[u] = s;
        }
    }
    return emit("conv1d_depthwise", {C, To}, std::move(v), {x, w}, [C, T, k, stride, To](Node& n) {
        const double* g = n.output->grad.data();
        const double* xp = n.inputs[0]->value.data();
        const double* wp = n.inputs[1]->value.data();
        if (n.inputs[0]->requires_grad) {
            double* gx = n.inputs[0]->grad.data();
            for (long c = 0; c < C; ++c) {
                const double* wc = wp + c * k;
                const double* gc = g + c * To;
                double* gxc = gx + c * T;
                for (long u = 0; u < To; ++u) {
                    const double gu = gc[u];
                    if (gu == 0.0) continue;
                    double* xu = gxc + u * stride;
                    for (long j = 0; j < k; ++j) xu[j] += gu * wc[j];
                }
            }
        }
        if (n.inputs[1]->requires_grad) {
            double* gw = n.inputs[1]->grad.data();
            for (long c = 0; c < C; ++c) {
                const double* gc = g + c * To;
                const double* xc = xp + c * T;
                double* gwc = gw + c * k;
                for (long u = 0; u < To; ++u) {
                    const double gu = gc[u];
                    if (gu == 0.0) continue;
                    const double* xu = xc + u * stride;
                    for (long j = 0; j < k; ++j) gwc[j] += gu * xu[j];
                }
            }
        }
    });
}

Tensor Tape::conv1d_transposed(const Tensor& x, const Tensor& w, long stride) {
    require(x->ndim() == 2 && w->ndim() == 3, "conv1d_transposed: bad ranks");
    require(w->shape[0] == x->shape[0], "conv1d_transposed: channel mismatch (weight is [in, out, k])");
    require(stride >= 1, "conv1d_transposed: stride must be >= 1");
    const long ci = x->shape[0], T = x->shape[1];
    const long co = w->shape[1], k = w->shape[2];
    const long To = (T - 1) * stride + k;
    std::vector<double> v(static_cast<size_t>(co * To), 0.0);
    const double* xp = x->value.data();
    const double* wp = w->value.data();
    for (long c = 0; c < ci; ++c)
        for (long o = 0; o < co; ++o) {
            const double* xc = xp + c * T;
            const double* wc = wp + (c * co + o) * k;
            double* vo = v.data() + o * To;
            for (long t = 0; t < T; ++t) {
                const double xv = xc[t];
                if (xv == 0.0) continue;
                double* vt = vo + t * stride;
                for (long j = 0; j < k; ++j) vt[j] += xv * wc[j];
            }
        }
    return emit("conv1d_transposed", {co, To}, std::move(v), {x, w}, [ci, T, co, k, stride, To](Node& n) {
        const double* g = n.output->grad.data();
        const double* xp = n.inputs[0]->value.data();
        const double* wp = n.inputs[1]->value.data();
        if (n.inputs[0]->requires_grad) {
            double* gx = n.inputs[0]->grad.data();
            for (long c = 0; c < ci; ++c)
                for (long o = 0; o < co; ++o) {
                    const double* wc = wp + (c * co + o) * k;
                    const double* go = g + o * To;
                    double* gxc = gx + c * T;
                    for (long t = 0; t < T; ++t) {
                        const double* gt = go + t * stride;
                        double s = 0.0;
                        for (long j = 0; j < k; ++j) s += wc[j] * gt[j];
                        gxc[t] += s;
                    }
                }
        }
        if (n.inputs[1]->requires_grad) {
            double* gw = n.inputs[1]->grad.data();
            for (long c = 0; c < ci; ++c)
                for (long o = 0; o < co; ++o) {
                    const double* go = g + o * To;
                    const double* xc = xp + c * T;
                    double* gwc = gw + (c * co + o) * k;
                    for (long t = 0; t < T; ++t) {
                        const double xv = xc[t];
                        if (xv == 0.0) continue;
                        const double* gt = go + t * stride;
                        for (long j = 0; j < k; ++j) gwc[j] += xv * gt[j];
                    }
                }
        }
    });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void Tape::backward(const Tensor& root) {
    require(root->is_scalar(), "backward: root must be scalar");
    require(root->requires_grad, "backward: root is not connected to the tape");
    // Intermediate outputs start from zero each pass; leaves accumulate.
    for (auto& n : nodes_) {
        n.output->ensure_grad();
        n.output->zero_grad();
    }
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        for (auto& in : it->inputs) {
            if (in->requires_grad) in->ensure_grad();
        }
        it->back(*it);
    }
    for (auto& n : nodes_) check_finite(n.op, n.output->grad);
}

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x, double eps) {
    // analytic gradient
    auto xa = make_tensor(x->shape, x->value, true);
    Tape tape;
    Tensor y = f(tape, xa);
    require(y->is_scalar(), "grad_check: f must return a scalar");
    tape.backward(y);
    std::vector<double> analytic = xa->grad;

    double worst = 0.0;
    for (size_t i = 0; i < x->value.size(); ++i) {
        auto eval_at = [&](double v) {
            auto xp = make_tensor(x->shape, x->value, false);
            xp->value[i] = v;
            Tape t2;
            t2.recording = false;
            Tensor out = f(t2, xp);
            double r = out->scalar();
            if (!std::isfinite(r)) throw numeric_error("grad_check: non-finite function value");
            return r;
        };
        const double x0 = x->value[i];
        const double fp = eval_at(x0 + eps);
        const double fm = eval_at(x0 - eps);
        const double central = (fp - fm) / (2.0 * eps);
        const double err = std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-12);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace numcore
}  // namespace slvm
