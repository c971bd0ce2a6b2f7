#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "slvm/base.hpp"

namespace slvm {
namespace numcore {

// Dense row-major tensor of 64-bit reals with an optional gradient buffer.
class TensorImpl {
public:
    std::vector<long> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first needed; same size as value afterwards
    bool requires_grad = false;
    std::string name;  // set for named parameters, used in diagnostics

    long numel() const { return static_cast<long>(value.size()); }
    bool is_scalar() const { return value.size() == 1; }
    double scalar() const {
        require(is_scalar(), "scalar() on non-scalar tensor");
        return value[0];
    }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
    long dim(int axis) const { return shape[static_cast<size_t>(axis)]; }
    int ndim() const { return static_cast<int>(shape.size()); }
};

using Tensor = std::shared_ptr<TensorImpl>;

long shape_numel(const std::vector<long>& shape);
Tensor make_tensor(std::vector<long> shape, std::vector<double> value, bool requires_grad = false);
Tensor make_scalar(double v, bool requires_grad = false);
Tensor zeros(std::vector<long> shape, bool requires_grad = false);
Tensor full(std::vector<long> shape, double v, bool requires_grad = false);
// Parameter leaf initialized uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor param_uniform(const std::string& name, std::vector<long> shape, long fan_in, Rng rng);

// Reverse-mode tape. Ops append nodes in execution order (inputs always
// precede their consumers); backward() replays them once in reverse. A tape is
// single-threaded; independent tapes may run concurrently as long as they do
// not share mutable tensors.
class Tape {
public:
    // When false, ops compute values only and never record nodes; the
    // evaluation path uses this so const parameter tables can be shared.
    bool recording = true;

    // -- elementwise / scalar --
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor neg(const Tensor& a);
    Tensor add_scalar(const Tensor& a, double c);
    Tensor mul_scalar(const Tensor& a, double c);
    Tensor tanh(const Tensor& a);
    Tensor sigmoid(const Tensor& a);
    Tensor softplus(const Tensor& a);
    Tensor relu(const Tensor& a);
    Tensor exp(const Tensor& a);
    Tensor log(const Tensor& a);
    // log(1 - e^x) for x < 0, stable near both ends
    Tensor log1mexp(const Tensor& a);
    Tensor clamp_min(const Tensor& a, double lo);
    Tensor clamp_max(const Tensor& a, double hi);

    // -- structure --
    Tensor transpose2d(const Tensor& a);
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor concat(const std::vector<Tensor>& parts, int axis);
    Tensor slice(const Tensor& a, int axis, long start, long len);
    Tensor reshape(const Tensor& a, std::vector<long> shape);
    Tensor expand_last(const Tensor& a, long k);   // [..] -> [.., k], repeat
    Tensor expand_rows(const Tensor& a, long n);   // [1, w] -> [n, w]

    // -- reductions --
    Tensor logsumexp(const Tensor& a, int axis);   // max-shifted; drops axis
    Tensor sum(const Tensor& a, int axis);         // drops axis
    Tensor sum_all(const Tensor& a);               // -> [1]
    Tensor mean_all(const Tensor& a);              // -> [1]

    // -- convolutions, layout [channels, time] --
    // left-padded with zeros so output length equals input length;
    // out[o,t] = sum_{ci,j} w[o,ci,j] * x[ci, t - (k-1-j)*dilation]
    Tensor conv1d_causal(const Tensor& x, const Tensor& w, long dilation);
    // no padding; out length = (T - k)/stride + 1
    Tensor conv1d_strided(const Tensor& x, const Tensor& w, long stride);
    // per-channel (depthwise) strided conv; w layout [C, k], no padding
    Tensor conv1d_depthwise(const Tensor& x, const Tensor& w, long stride);
    // w layout [C_in, C_out, k]; out length = (T-1)*stride + k
    Tensor conv1d_transposed(const Tensor& x, const Tensor& w, long stride);

    // Non-recorded leaves.
    Tensor constant(std::vector<long> shape, std::vector<double> value);
    Tensor constant_scalar(double v);

    // Seeds d(root)/d(root) = 1 and sweeps all nodes once in reverse order.
    // Gradients of intermediate node outputs are reset per call; leaf
    // gradients accumulate across calls until zeroed by the caller.
    void backward(const Tensor& root);

    void clear() { nodes_.clear(); }
    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        const char* op;
        std::vector<Tensor> inputs;
        Tensor output;
        std::function<void(Node&)> back;
    };
    std::vector<Node> nodes_;

    Tensor emit(const char* op, std::vector<long> shape, std::vector<double> value,
                std::vector<Tensor> inputs, std::function<void(Node&)> back);
    Tensor map_unary(const char* op, const Tensor& a, double (*f)(double),
                     double (*df_from_xy)(double, double));
};

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |central| + 1e-12). f must build its graph on the given tape.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace numcore
}  // namespace slvm
