#pragma once

#include <string>
#include <utility>
#include <vector>

#include "slvm/numcore.hpp"
#include "slvm/optim.hpp"

namespace slvm {
namespace nn {

using numcore::Tape;
using numcore::Tensor;
using optim::ParamTable;

// Registers parameters into a table with hierarchical names. Initial values
// are keyed by parameter name so they do not depend on construction order.
class Builder {
public:
    Builder(ParamTable& table, uint64_t seed) : table_(table), rng_(seed) {}

    Tensor weight(const std::string& name, long in, long out);       // [in, out]
    Tensor bias(const std::string& name, long out, double fill = 0.0);  // [1, out]
    Tensor conv_weight(const std::string& name, long co, long ci, long k);   // [co, ci, k]
    Tensor tconv_weight(const std::string& name, long ci, long co, long k);  // [ci, co, k]
    Tensor dw_weight(const std::string& name, long ch, long k);              // [ch, k]
    Tensor conv_bias(const std::string& name, long ch, double fill = 0.0);   // [ch]

    Builder scoped(const std::string& prefix) const;

private:
    Tensor reg(const std::string& name, std::vector<long> shape, long fan_in);
    Tensor reg_const(const std::string& name, std::vector<long> shape, double fill);

    ParamTable& table_;
    Rng rng_;
    std::string prefix_;
};

struct Linear {
    Tensor W, b;
    Tensor apply(Tape& tp, const Tensor& x) const;  // [n, in] -> [n, out]
    long out_dim() const { return W->shape[1]; }
};
Linear make_linear(Builder& B, const std::string& prefix, long in, long out);

// two affine layers with tanh in between
struct Mlp {
    Linear l1, l2;
    Tensor apply(Tape& tp, const Tensor& x) const;
};
Mlp make_mlp(Builder& B, const std::string& prefix, long in, long hidden, long out);

struct GruCell {
    Linear zr;    // [in+H] -> 2H (update, reset)
    Linear cand;  // [in+H] -> H
    long hidden;
    Tensor step(Tape& tp, const Tensor& x, const Tensor& h) const;
};
GruCell make_gru(Builder& B, const std::string& prefix, long in, long hidden);

struct LstmCell {
    Linear gates;  // [in+H] -> 4H (i, f, g, o); forget bias starts at 1
    long hidden;
    std::pair<Tensor, Tensor> step(Tape& tp, const Tensor& x, const Tensor& h, const Tensor& c) const;
};
LstmCell make_lstm(Builder& B, const std::string& prefix, long in, long hidden);

// 2-layer tanh MLP emitting a diagonal Gaussian; log-variance clamped to
// [-8, 8] to keep exp() in a trainable range.
struct GaussianHead {
    Linear l1, l2;
    long dz;
    std::pair<Tensor, Tensor> apply(Tape& tp, const Tensor& x) const;  // (mean, logvar) [1, dz]
};
GaussianHead make_gaussian_head(Builder& B, const std::string& prefix, long in, long hidden, long dz);

// Gated residual stack with kernel-2 dilated causal convolutions,
// dilations 1..2^(per_block-1) repeated over blocks.
struct WaveNetLayer {
    Tensor wf, wg;  // [ch, ch, 2]
    Tensor bf, bg;  // [ch]
    Tensor wres;    // [ch, ch, 1]
    Tensor wskip;   // [skip, ch, 1]
    long dilation;
};
struct WaveNetStack {
    Tensor w_in;  // [ch, in, 1]
    Tensor b_in;  // [ch]
    std::vector<WaveNetLayer> layers;
    long blocks = 1, per_block = 1, ch = 1, skip_ch = 1;

    struct Out {
        Tensor skip_sum;                 // [skip, T]
        std::vector<Tensor> block_taps;  // residual stream after each block, [ch, T]
    };
    Out apply(Tape& tp, const Tensor& x) const;
    // steps of left context that fully determine an output column
    long receptive_field() const { return 1 + blocks * ((1L << per_block) - 1); }
};
WaveNetStack make_wavenet_stack(Builder& B, const std::string& prefix, long in, long ch, long skip_ch,
                                long blocks, long per_block);

long wavenet_receptive_field(long blocks, long per_block);

// Strided separable conv block: depthwise (kernel == stride) + tanh +
// pointwise, plus a linear strided conv residual. Kernel equal to stride
// keeps each output column a function of exactly its own input window.
struct StridedBlock {
    Tensor dw;    // [ci, f]
    Tensor pw;    // [co, ci, 1]
    Tensor bpw;   // [co]
    Tensor res;   // [co, ci, f]
    long stride;
    Tensor apply(Tape& tp, const Tensor& x) const;  // [ci, T] -> [co, T/f]
};
StridedBlock make_strided_block(Builder& B, const std::string& prefix, long ci, long co, long stride);

// Chain of StridedBlocks realizing an overall stride (factored into twos and
// one odd remainder).
struct StridedChain {
    std::vector<StridedBlock> blocks;
    long total_stride = 1;
    Tensor apply(Tape& tp, const Tensor& x) const;  // input length must be a multiple of total_stride
};
StridedChain make_strided_chain(Builder& B, const std::string& prefix, long in_ch, long ch, long stride);

// Mirror of StridedChain built from transposed convs with kernel == stride.
struct TransposedChain {
    struct Block {
        Tensor w;   // [ci, co, f]
        Tensor b;   // [co]
        long stride;
    };
    std::vector<Block> blocks;
    long total_stride = 1;
    Tensor apply(Tape& tp, const Tensor& x) const;  // [ci, K] -> [co, K*stride]
};
TransposedChain make_transposed_chain(Builder& B, const std::string& prefix, long in_ch, long ch,
                                      long out_ch, long stride);

std::vector<long> factor_stride(long stride);

}  // namespace nn
}  // namespace slvm
