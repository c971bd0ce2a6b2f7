#include <cmath>
#include <limits>

#include "slvm/probe.hpp"

namespace slvm {
namespace probe {

using numcore::Tape;
using numcore::Tensor;

namespace {
// effectively -inf in log space while keeping every op finite
constexpr double kNegBig = -1e30;
}

bool ctc_feasible(long T, const std::vector<int>& labels) {
    long need = static_cast<long>(labels.size());
    for (size_t i = 1; i < labels.size(); ++i) {
        if (labels[i] == labels[i - 1]) ++need;  // a separating blank
    }
    return T >= need && !labels.empty();
}

Tensor ctc_loss_graph(Tape& tp, const Tensor& logits, const std::vector<int>& labels) {
    require(logits->ndim() == 2, "ctc_loss_graph: logits must be [T, C+1]");
    const long T = logits->shape[0];
    const long classes = logits->shape[1];  // C + 1, blank last
    const int blank = static_cast<int>(classes) - 1;
    require(!labels.empty(), "ctc_loss_graph: empty target");
    for (int l : labels) require(l >= 0 && l < blank, "ctc_loss_graph: label out of range");
    require(ctc_feasible(T, labels), "ctc_loss_graph: target does not fit into the frame count");

    const long U = static_cast<long>(labels.size());
    const long S = 2 * U + 1;
    std::vector<int> ext(static_cast<size_t>(S), blank);
    for (long u = 0; u < U; ++u) ext[static_cast<size_t>(2 * u + 1)] = labels[static_cast<size_t>(u)];

    // log softmax over classes
    Tensor logp = tp.sub(logits, tp.expand_last(tp.logsumexp(logits, 1), classes));

    // gather per-frame scores of the extended sequence: [T, C+1] x [C+1, S]
    std::vector<double> sel(static_cast<size_t>(classes * S), 0.0);
    for (long j = 0; j < S; ++j) sel[static_cast<size_t>(ext[static_cast<size_t>(j)] * S + j)] = 1.0;
    Tensor scores = tp.matmul(logp, tp.constant({classes, S}, std::move(sel)));  // [T, S]

    // skip transition allowed into j when its label differs from j-2's
    std::vector<double> allow(static_cast<size_t>(S), 0.0);
    for (long j = 2; j < S; ++j) {
        if (ext[static_cast<size_t>(j)] != blank && ext[static_cast<size_t>(j)] != ext[static_cast<size_t>(j - 2)]) {
            allow[static_cast<size_t>(j)] = 1.0;
        }
    }
    Tensor allow_c = tp.constant({1, S}, allow);
    std::vector<double> allow_off(static_cast<size_t>(S));
    for (long j = 0; j < S; ++j) allow_off[static_cast<size_t>(j)] = (1.0 - allow[static_cast<size_t>(j)]) * kNegBig;
    Tensor allow_off_c = tp.constant({1, S}, std::move(allow_off));

    std::vector<double> init(static_cast<size_t>(S), kNegBig);
    init[0] = 0.0;
    if (S > 1) init[1] = 0.0;
    Tensor alpha = tp.add(tp.slice(scores, 0, 0, 1), tp.constant({1, S}, std::move(init)));

    Tensor negpad1 = tp.constant({1, 1}, {kNegBig});
    Tensor negpad2 = tp.constant({1, 2}, {kNegBig, kNegBig});
    for (long t = 1; t < T; ++t) {
        Tensor stay = alpha;
        Tensor step1 = tp.concat({negpad1, tp.slice(alpha, 1, 0, S - 1)}, 1);
        Tensor step2 = S > 2 ? tp.concat({negpad2, tp.slice(alpha, 1, 0, S - 2)}, 1)
                             : tp.constant({1, S}, std::vector<double>(static_cast<size_t>(S), kNegBig));
        step2 = tp.add(tp.mul(step2, allow_c), allow_off_c);
        Tensor stacked = tp.concat({stay, step1, step2}, 0);           // [3, S]
        Tensor merged = tp.reshape(tp.logsumexp(stacked, 0), {1, S});  // [1, S]
        alpha = tp.add(merged, tp.slice(scores, 0, t, 1));
    }
    Tensor tail = S > 1 ? tp.slice(alpha, 1, S - 2, 2) : alpha;
    return tp.neg(tp.logsumexp(tail, 1));
}

double ctc_loss(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels) {
    const long T = static_cast<long>(logits.size());
    require(T >= 1, "ctc_loss: need at least one frame");
    if (!ctc_feasible(T, labels)) return std::numeric_limits<double>::infinity();
    const long classes = static_cast<long>(logits[0].size());
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(T * classes));
    for (const auto& row : logits) {
        require(static_cast<long>(row.size()) == classes, "ctc_loss: ragged logits");
        flat.insert(flat.end(), row.begin(), row.end());
    }
    Tape tp;
    tp.recording = false;
    return ctc_loss_graph(tp, tp.constant({T, classes}, std::move(flat)), labels)->scalar();
}

std::vector<int> ctc_greedy_decode(const std::vector<std::vector<double>>& logits) {
    std::vector<int> out;
    int prev = -1;
    for (const auto& row : logits) {
        const int blank = static_cast<int>(row.size()) - 1;
        int best = 0;
        for (size_t c = 1; c < row.size(); ++c) {
            if (row[c] > row[static_cast<size_t>(best)]) best = static_cast<int>(c);
        }
        if (best != prev && best != blank) out.push_back(best);
        prev = best;
    }
    return out;
}

long edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp) {
    const size_t n = ref.size(), m = hyp.size();
    std::vector<long> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<long>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<long>(i);
        for (size_t j = 1; j <= m; ++j) {
            const long sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double phone_error_rate(const std::vector<int>& ref, const std::vector<int>& hyp) {
    require(!ref.empty(), "phone_error_rate: empty reference");
    return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

}  // namespace probe
}  // namespace slvm
