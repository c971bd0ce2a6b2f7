#include <algorithm>
#include <iostream>
#include <numeric>

#include "slvm/nn.hpp"
#include "slvm/probe.hpp"

namespace slvm {
namespace probe {

using numcore::Tape;
using numcore::Tensor;

std::vector<double> temporal_dropout_mask(long width, double prob, Rng& rng) {
    std::vector<double> mask(static_cast<size_t>(width), 1.0);
    if (prob <= 0.0) return mask;
    // inverted scaling keeps the evaluation-mode forward calibrated
    const double keep = 1.0 / (1.0 - prob);
    for (auto& m : mask) {
        m = rng.uniform() < prob ? 0.0 : keep;
    }
    return mask;
}

namespace {

struct BiLstmLayer {
    nn::LstmCell fwd, bwd;
};

struct AsrNet {
    optim::ParamTable params;
    std::vector<BiLstmLayer> layers;
    nn::Linear out;
    long width = 64;
    long in_dim = 0;
    int classes = 2;

    AsrNet(long in, const AsrConfig& cfg) : width(cfg.width), in_dim(in), classes(cfg.classes) {
        nn::Builder B(params, cfg.seed ^ 0xa5a5);
        long d = in;
        for (int l = 0; l < cfg.layers; ++l) {
            BiLstmLayer layer;
            layer.fwd = nn::make_lstm(B, "l" + std::to_string(l) + ".fwd", d, width);
            layer.bwd = nn::make_lstm(B, "l" + std::to_string(l) + ".bwd", d, width);
            layers.push_back(std::move(layer));
            d = 2 * width;
        }
        out = nn::make_linear(B, "out", d, classes + 1);
    }

    // rows [T, D] -> logits [T, C+1]; masks: one per layer plus one final,
    // empty for evaluation-mode forward
    Tensor forward(Tape& tp, const std::vector<std::vector<double>>& rep,
                   const std::vector<std::vector<double>>& masks) const {
        const long T = static_cast<long>(rep.size());
        std::vector<double> flat;
        flat.reserve(static_cast<size_t>(T * in_dim));
        for (const auto& row : rep) flat.insert(flat.end(), row.begin(), row.end());
        Tensor h = tp.constant({T, in_dim}, std::move(flat));
        for (size_t l = 0; l < layers.size(); ++l) {
            std::vector<Tensor> fw(static_cast<size_t>(T)), bw(static_cast<size_t>(T));
            Tensor hf = tp.constant({1, width}, std::vector<double>(static_cast<size_t>(width), 0.0));
            Tensor cf = hf, hb = hf, cb = hf;
            for (long t = 0; t < T; ++t) {
                auto s = layers[l].fwd.step(tp, tp.slice(h, 0, t, 1), hf, cf);
                hf = s.first;
                cf = s.second;
                fw[static_cast<size_t>(t)] = hf;
            }
            for (long t = T - 1; t >= 0; --t) {
                auto s = layers[l].bwd.step(tp, tp.slice(h, 0, t, 1), hb, cb);
                hb = s.first;
                cb = s.second;
                bw[static_cast<size_t>(t)] = hb;
            }
            std::vector<Tensor> rows(static_cast<size_t>(T));
            for (long t = 0; t < T; ++t) {
                rows[static_cast<size_t>(t)] = tp.concat({fw[static_cast<size_t>(t)], bw[static_cast<size_t>(t)]}, 1);
            }
            h = tp.concat(rows, 0);  // [T, 2w]
            // dropout between layers and after the final one
            h = apply_mask(tp, h, masks, l);
        }
        return out.apply(tp, h);
    }

    static Tensor apply_mask(Tape& tp, const Tensor& h, const std::vector<std::vector<double>>& masks,
                             size_t idx) {
        if (idx >= masks.size() || masks[idx].empty()) return h;
        const long T = h->shape[0], W = h->shape[1];
        require(static_cast<long>(masks[idx].size()) == W, "temporal dropout mask width mismatch");
        // every timestep shares the mask; the first is never masked
        std::vector<double> m(static_cast<size_t>(T * W), 1.0);
        for (long t = 1; t < T; ++t)
            for (long j = 0; j < W; ++j) m[static_cast<size_t>(t * W + j)] = masks[idx][static_cast<size_t>(j)];
        return tp.mul(h, tp.constant({T, W}, std::move(m)));
    }
};

std::vector<std::vector<double>> logits_values(const AsrNet& net, const ProbeUtterance& u) {
    Tape tp;
    tp.recording = false;
    Tensor logits = net.forward(tp, u.rep, {});
    const long T = logits->shape[0], C = logits->shape[1];
    std::vector<std::vector<double>> rows(static_cast<size_t>(T));
    for (long t = 0; t < T; ++t) {
        rows[static_cast<size_t>(t)].assign(logits->value.begin() + t * C, logits->value.begin() + (t + 1) * C);
    }
    return rows;
}

}  // namespace

AsrResult asr_probe_train(const EpochData& train_data, const std::vector<ProbeUtterance>& test_data,
                          const AsrConfig& cfg) {
    require(cfg.layers >= 1 && cfg.width >= 1 && cfg.classes >= 1, "asr_probe_train: bad configuration");
    auto first = train_data(0);
    require(!first.empty(), "asr_probe_train: empty training data");
    const long in_dim = static_cast<long>(first[0].rep[0].size());

    AsrNet net(in_dim, cfg);
    optim::AdamState state;
    optim::AdamConfig adam;
    adam.lr = cfg.lr;

    AsrResult result;
    Rng base(cfg.seed);
    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto data = epoch == 0 ? first : train_data(epoch);
        std::vector<size_t> order(data.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle = base.derive(0x0e, static_cast<uint64_t>(epoch));
        for (size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<size_t>(shuffle.uniform_int(static_cast<long>(i)))]);
        }
        for (size_t oi = 0; oi < order.size(); ++oi) {
            const auto& u = data[order[oi]];
            if (u.ref_labels.empty() || !ctc_feasible(static_cast<long>(u.rep.size()), u.ref_labels)) {
                if (epoch == 0) {
                    std::cerr << "warning: utterance " << u.id << " has an infeasible CTC target; skipped\n";
                    result.skipped_infeasible += 1;
                }
                continue;
            }
            std::vector<std::vector<double>> masks;
            Rng mrng = base.derive(0xd0, static_cast<uint64_t>(epoch), order[oi]);
            for (int l = 0; l < cfg.layers; ++l) {
                masks.push_back(temporal_dropout_mask(2 * net.width, cfg.dropout, mrng));
            }

            Tape tp;
            Tensor logits = net.forward(tp, u.rep, masks);
            Tensor loss = ctc_loss_graph(tp, logits, u.ref_labels);
            optim::zero_grads(net.params);
            tp.backward(loss);
            optim::clip_grad_norm(net.params, 100.0);
            optim::adam_step(net.params, state, adam);
            if (epoch == 0) result.trained_utterances += 1;
        }
    }

    // held-out PER: pooled edit distance over pooled reference length
    long errs = 0, total = 0;
    for (const auto& u : test_data) {
        if (u.ref_labels.empty()) continue;
        auto hyp = ctc_greedy_decode(logits_values(net, u));
        errs += edit_distance(u.ref_labels, hyp);
        total += static_cast<long>(u.ref_labels.size());
    }
    result.per = total > 0 ? static_cast<double>(errs) / static_cast<double>(total) : 1.0;
    return result;
}

}  // namespace probe
}  // namespace slvm
