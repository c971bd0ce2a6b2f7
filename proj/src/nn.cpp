#include "slvm/nn.hpp"

#include <cmath>

namespace slvm {
namespace nn {

namespace {
uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}
}  // namespace

Tensor Builder::reg(const std::string& name, std::vector<long> shape, long fan_in) {
    const std::string full = prefix_ + name;
    require(table_.find(full) == table_.end(), "duplicate parameter name " + full);
    Tensor t = numcore::param_uniform(full, std::move(shape), fan_in, rng_.derive(fnv1a(full)));
    table_[full] = t;
    return t;
}

Tensor Builder::reg_const(const std::string& name, std::vector<long> shape, double fill) {
    const std::string full = prefix_ + name;
    require(table_.find(full) == table_.end(), "duplicate parameter name " + full);
    Tensor t = numcore::full(std::move(shape), fill, true);
    t->name = full;
    table_[full] = t;
    return t;
}

Tensor Builder::weight(const std::string& name, long in, long out) { return reg(name, {in, out}, in); }
Tensor Builder::bias(const std::string& name, long out, double fill) { return reg_const(name, {1, out}, fill); }
Tensor Builder::conv_weight(const std::string& name, long co, long ci, long k) {
    return reg(name, {co, ci, k}, ci * k);
}
Tensor Builder::tconv_weight(const std::string& name, long ci, long co, long k) {
    return reg(name, {ci, co, k}, ci);
}
Tensor Builder::dw_weight(const std::string& name, long ch, long k) { return reg(name, {ch, k}, k); }
Tensor Builder::conv_bias(const std::string& name, long ch, double fill) { return reg_const(name, {ch}, fill); }

Builder Builder::scoped(const std::string& prefix) const {
    Builder b(table_, rng_.seed());
    b.prefix_ = prefix_ + prefix + ".";
    return b;
}

Tensor Linear::apply(Tape& tp, const Tensor& x) const {
    Tensor y = tp.matmul(x, W);
    return tp.add(y, x->shape[0] == 1 ? b : tp.expand_rows(b, x->shape[0]));
}

Linear make_linear(Builder& B, const std::string& prefix, long in, long out) {
    Builder s = B.scoped(prefix);
    return Linear{s.weight("W", in, out), s.bias("b", out)};
}

Tensor Mlp::apply(Tape& tp, const Tensor& x) const { return l2.apply(tp, tp.tanh(l1.apply(tp, x))); }

Mlp make_mlp(Builder& B, const std::string& prefix, long in, long hidden, long out) {
    Builder s = B.scoped(prefix);
    return Mlp{make_linear(s, "l1", in, hidden), make_linear(s, "l2", hidden, out)};
}

Tensor GruCell::step(Tape& tp, const Tensor& x, const Tensor& h) const {
    Tensor xh = tp.concat({x, h}, 1);
    Tensor g = tp.sigmoid(zr.apply(tp, xh));
    Tensor z = tp.slice(g, 1, 0, hidden);
    Tensor r = tp.slice(g, 1, hidden, hidden);
    Tensor c = tp.tanh(cand.apply(tp, tp.concat({x, tp.mul(r, h)}, 1)));
    // h' = z*h + (1-z)*c
    return tp.add(tp.mul(z, h), tp.mul(tp.add_scalar(tp.neg(z), 1.0), c));
}

GruCell make_gru(Builder& B, const std::string& prefix, long in, long hidden) {
    Builder s = B.scoped(prefix);
    return GruCell{make_linear(s, "zr", in + hidden, 2 * hidden),
                   make_linear(s, "cand", in + hidden, hidden), hidden};
}

std::pair<Tensor, Tensor> LstmCell::step(Tape& tp, const Tensor& x, const Tensor& h, const Tensor& c) const {
    Tensor pre = gates.apply(tp, tp.concat({x, h}, 1));
    Tensor i = tp.sigmoid(tp.slice(pre, 1, 0, hidden));
    Tensor f = tp.sigmoid(tp.slice(pre, 1, hidden, hidden));
    Tensor g = tp.tanh(tp.slice(pre, 1, 2 * hidden, hidden));
    Tensor o = tp.sigmoid(tp.slice(pre, 1, 3 * hidden, hidden));
    Tensor c1 = tp.add(tp.mul(f, c), tp.mul(i, g));
    Tensor h1 = tp.mul(o, tp.tanh(c1));
    return {h1, c1};
}

LstmCell make_lstm(Builder& B, const std::string& prefix, long in, long hidden) {
    Builder s = B.scoped(prefix);
    LstmCell cell{make_linear(s, "gates", in + hidden, 4 * hidden), hidden};
    // forget gate bias 1.0
    for (long j = hidden; j < 2 * hidden; ++j) cell.gates.b->value[static_cast<size_t>(j)] = 1.0;
    return cell;
}

std::pair<Tensor, Tensor> GaussianHead::apply(Tape& tp, const Tensor& x) const {
    Tensor h = tp.tanh(l1.apply(tp, x));
    Tensor out = l2.apply(tp, h);
    Tensor mean = tp.slice(out, 1, 0, dz);
    Tensor logvar = tp.clamp_min(tp.clamp_max(tp.slice(out, 1, dz, dz), 8.0), -8.0);
    return {mean, logvar};
}

GaussianHead make_gaussian_head(Builder& B, const std::string& prefix, long in, long hidden, long dz) {
    Builder s = B.scoped(prefix);
    return GaussianHead{make_linear(s, "l1", in, hidden), make_linear(s, "l2", hidden, 2 * dz), dz};
}

WaveNetStack::Out WaveNetStack::apply(Tape& tp, const Tensor& x) const {
    const long T = x->shape[1];
    Tensor h = tp.add(tp.conv1d_causal(x, w_in, 1), tp.expand_last(b_in, T));
    Tensor skip_sum;
    std::vector<Tensor> taps;
    for (size_t i = 0; i < layers.size(); ++i) {
        const auto& L = layers[i];
        Tensor f = tp.tanh(tp.add(tp.conv1d_causal(h, L.wf, L.dilation), tp.expand_last(L.bf, T)));
        Tensor g = tp.sigmoid(tp.add(tp.conv1d_causal(h, L.wg, L.dilation), tp.expand_last(L.bg, T)));
        Tensor z = tp.mul(f, g);
        h = tp.add(h, tp.conv1d_causal(z, L.wres, 1));
        Tensor s = tp.conv1d_causal(z, L.wskip, 1);
        skip_sum = skip_sum ? tp.add(skip_sum, s) : s;
        if ((i + 1) % static_cast<size_t>(per_block) == 0) taps.push_back(h);
    }
    return {skip_sum, std::move(taps)};
}

WaveNetStack make_wavenet_stack(Builder& B, const std::string& prefix, long in, long ch, long skip_ch,
                                long blocks, long per_block) {
    Builder s = B.scoped(prefix);
    WaveNetStack st;
    st.blocks = blocks;
    st.per_block = per_block;
    st.ch = ch;
    st.skip_ch = skip_ch;
    st.w_in = s.conv_weight("in.w", ch, in, 1);
    st.b_in = s.conv_bias("in.b", ch);
    for (long b = 0; b < blocks; ++b) {
        for (long l = 0; l < per_block; ++l) {
            Builder sl = s.scoped("b" + std::to_string(b) + ".l" + std::to_string(l));
            WaveNetLayer layer;
            layer.dilation = 1L << l;
            layer.wf = sl.conv_weight("wf", ch, ch, 2);
            layer.wg = sl.conv_weight("wg", ch, ch, 2);
            layer.bf = sl.conv_bias("bf", ch);
            layer.bg = sl.conv_bias("bg", ch);
            layer.wres = sl.conv_weight("wres", ch, ch, 1);
            layer.wskip = sl.conv_weight("wskip", skip_ch, ch, 1);
            st.layers.push_back(std::move(layer));
        }
    }
    return st;
}

long wavenet_receptive_field(long blocks, long per_block) {
    return 1 + blocks * ((1L << per_block) - 1);
}

Tensor StridedBlock::apply(Tape& tp, const Tensor& x) const {
    Tensor main = tp.conv1d_depthwise(x, dw, stride);
    const long To = main->shape[1];
    main = tp.add(tp.conv1d_causal(tp.tanh(main), pw, 1), tp.expand_last(bpw, To));
    Tensor r = tp.conv1d_strided(x, res, stride);
    return tp.add(main, r);
}

StridedBlock make_strided_block(Builder& B, const std::string& prefix, long ci, long co, long stride) {
    Builder s = B.scoped(prefix);
    StridedBlock blk;
    blk.stride = stride;
    blk.dw = s.dw_weight("dw", ci, stride);
    blk.pw = s.conv_weight("pw", co, ci, 1);
    blk.bpw = s.conv_bias("bpw", co);
    blk.res = s.conv_weight("res", co, ci, stride);
    return blk;
}

std::vector<long> factor_stride(long stride) {
    require(stride >= 1, "stride must be >= 1");
    std::vector<long> fs;
    while (stride % 2 == 0 && stride > 1) {
        fs.push_back(2);
        stride /= 2;
    }
    if (stride > 1) fs.push_back(stride);
    if (fs.empty()) fs.push_back(1);
    return fs;
}

Tensor StridedChain::apply(Tape& tp, const Tensor& x) const {
    require(x->shape[1] % total_stride == 0, "StridedChain: input length must be a multiple of the stride");
    Tensor h = x;
    for (const auto& b : blocks) h = b.apply(tp, h);
    return h;
}

StridedChain make_strided_chain(Builder& B, const std::string& prefix, long in_ch, long ch, long stride) {
    Builder s = B.scoped(prefix);
    StridedChain chain;
    chain.total_stride = stride;
    auto fs = factor_stride(stride);
    long ci = in_ch;
    for (size_t i = 0; i < fs.size(); ++i) {
        chain.blocks.push_back(make_strided_block(s, "s" + std::to_string(i), ci, ch, fs[i]));
        ci = ch;
    }
    return chain;
}

Tensor TransposedChain::apply(Tape& tp, const Tensor& x) const {
    Tensor h = x;
    for (size_t i = 0; i < blocks.size(); ++i) {
        if (i > 0) h = tp.tanh(h);
        const auto& b = blocks[i];
        Tensor y = tp.conv1d_transposed(h, b.w, b.stride);
        h = tp.add(y, tp.expand_last(b.b, y->shape[1]));
    }
    return h;
}

TransposedChain make_transposed_chain(Builder& B, const std::string& prefix, long in_ch, long ch,
                                      long out_ch, long stride) {
    Builder s = B.scoped(prefix);
    TransposedChain chain;
    chain.total_stride = stride;
    auto fs = factor_stride(stride);
    long ci = in_ch;
    for (size_t i = 0; i < fs.size(); ++i) {
        const bool last = i + 1 == fs.size();
        const long co = last ? out_ch : ch;
        TransposedChain::Block b;
        b.stride = fs[i];
        b.w = s.tconv_weight("t" + std::to_string(i) + ".w", ci, co, fs[i]);
        b.b = s.conv_bias("t" + std::to_string(i) + ".b", co);
        chain.blocks.push_back(std::move(b));
        ci = co;
    }
    return chain;
}

}  // namespace nn
}  // namespace slvm
