#include "slvm/dists.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "slvm/audio.hpp"
#include "slvm/optim.hpp"

namespace slvm {
namespace dists {

using numcore::Tape;
using numcore::Tensor;

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)
}

// ---------------------------------------------------------------------------
// DMoL
// ---------------------------------------------------------------------------

numcore::Tensor log_prob_graph(Tape& tp, const OutputSpec& spec, const Tensor& params,
                               const std::vector<double>& x, const std::vector<double>& mask,
                               long steps, long dim) {
    require(params->ndim() == 2 && params->shape[0] == steps &&
                params->shape[1] == dim * spec.params_per_dim(),
            "log_prob_graph: params shape mismatch");
    require(static_cast<long>(x.size()) == steps * dim && mask.size() == x.size(),
            "log_prob_graph: data length mismatch");

    if (spec.kind == OutputKind::gaussian) {
        const double lv_floor = std::log(spec.var_floor);
        Tensor mean = tp.slice(params, 1, 0, dim);
        Tensor lv = tp.clamp_min(tp.slice(params, 1, dim, dim), lv_floor);
        Tensor xc = tp.constant({steps, dim}, x);
        Tensor diff = tp.sub(xc, mean);
        Tensor quad = tp.mul(tp.mul(diff, diff), tp.exp(tp.neg(lv)));
        Tensor lp = tp.add_scalar(tp.mul_scalar(tp.add(lv, quad), -0.5), -kHalfLog2Pi);
        return tp.sum_all(tp.mul(lp, tp.constant({steps, dim}, mask)));
    }

    const long K = spec.mixture;
    const long DK = dim * K;
    const double h = std::ldexp(1.0, -spec.bit_depth);  // half the grid gap
    const long kmax = (1L << spec.bit_depth) - 1;

    Tensor logits = tp.reshape(tp.slice(params, 1, 0, DK), {steps, dim, K});
    Tensor means = tp.reshape(tp.slice(params, 1, DK, DK), {steps, dim, K});
    Tensor lscale = tp.clamp_min(tp.reshape(tp.slice(params, 1, 2 * DK, DK), {steps, dim, K}), kLogScaleMin);
    Tensor inv_s = tp.exp(tp.neg(lscale));

    std::vector<double> xk(static_cast<size_t>(steps * dim * K));
    for (long i = 0; i < steps * dim; ++i) {
        audio::grid_index(x[static_cast<size_t>(i)], spec.bit_depth);  // off-grid -> contract violation
        for (long k = 0; k < K; ++k) xk[static_cast<size_t>(i * K + k)] = x[static_cast<size_t>(i)];
    }
    Tensor xt = tp.constant({steps, dim, K}, std::move(xk));
    Tensor centered = tp.sub(xt, means);

    Tensor plus_in = tp.mul(tp.add_scalar(centered, h), inv_s);
    Tensor min_in = tp.mul(tp.add_scalar(centered, -h), inv_s);
    Tensor log_cdf_plus = tp.neg(tp.softplus(tp.neg(plus_in)));
    Tensor log_cdf_min = tp.neg(tp.softplus(tp.neg(min_in)));
    Tensor log_sf_plus = tp.neg(tp.softplus(plus_in));
    Tensor log_sf_min = tp.neg(tp.softplus(min_in));

    // log(cdf_plus - cdf_min) via whichever tail is numerically benign.
    Tensor int_left = tp.add(log_cdf_plus, tp.log1mexp(tp.clamp_max(tp.sub(log_cdf_min, log_cdf_plus), -1e-12)));
    Tensor int_right = tp.add(log_sf_min, tp.log1mexp(tp.clamp_max(tp.sub(log_sf_plus, log_sf_min), -1e-12)));

    const long n = steps * dim * K;
    std::vector<double> mlow(static_cast<size_t>(n), 0.0), mhigh(static_cast<size_t>(n), 0.0),
        mleft(static_cast<size_t>(n), 0.0), mright(static_cast<size_t>(n), 0.0);
    for (long i = 0; i < steps * dim; ++i) {
        const long gi = audio::grid_index(x[static_cast<size_t>(i)], spec.bit_depth);
        for (long k = 0; k < K; ++k) {
            const size_t idx = static_cast<size_t>(i * K + k);
            if (gi == 0) {
                mlow[idx] = 1.0;
            } else if (gi == kmax) {
                mhigh[idx] = 1.0;
            } else if (centered->value[idx] < 0.0) {
                mleft[idx] = 1.0;
            } else {
                mright[idx] = 1.0;
            }
        }
    }
    Tensor lp_comp = tp.add(
        tp.add(tp.mul(tp.constant({steps, dim, K}, std::move(mlow)), log_cdf_plus),
               tp.mul(tp.constant({steps, dim, K}, std::move(mhigh)), log_sf_min)),
        tp.add(tp.mul(tp.constant({steps, dim, K}, std::move(mleft)), int_left),
               tp.mul(tp.constant({steps, dim, K}, std::move(mright)), int_right)));

    Tensor logw = tp.sub(logits, tp.expand_last(tp.logsumexp(logits, 2), K));
    Tensor lp = tp.logsumexp(tp.add(logw, lp_comp), 2);  // [steps, dim]
    return tp.sum_all(tp.mul(lp, tp.constant({steps, dim}, mask)));
}

double dmol_log_prob(const DMoLParams& p, double x) {
    const size_t K = static_cast<size_t>(p.mixture);
    require(p.logit_weights.size() == K && p.means.size() == K && p.log_scales.size() == K,
            "dmol_log_prob: parameter vectors must have K entries");
    std::vector<double> row;
    row.insert(row.end(), p.logit_weights.begin(), p.logit_weights.end());
    row.insert(row.end(), p.means.begin(), p.means.end());
    row.insert(row.end(), p.log_scales.begin(), p.log_scales.end());
    Tape tp;
    tp.recording = false;
    OutputSpec spec{OutputKind::dmol, p.mixture, p.bit_depth, 1e-4};
    Tensor params = numcore::make_tensor({1, 3L * p.mixture}, std::move(row));
    return log_prob_graph(tp, spec, params, {x}, {1.0}, 1, 1)->scalar();
}

double dmol_sample(const DMoLParams& p, Rng& rng) {
    const size_t K = static_cast<size_t>(p.mixture);
    require(p.logit_weights.size() == K && p.means.size() == K && p.log_scales.size() == K,
            "dmol_sample: parameter vectors must have K entries");
    double mx = p.logit_weights[0];
    for (double w : p.logit_weights) mx = std::max(mx, w);
    double z = 0.0;
    for (double w : p.logit_weights) z += std::exp(w - mx);
    double u = rng.uniform() * z;
    size_t k = K - 1;
    double acc = 0.0;
    for (size_t i = 0; i < K; ++i) {
        acc += std::exp(p.logit_weights[i] - mx);
        if (u < acc) {
            k = i;
            break;
        }
    }
    const double s = std::exp(std::max(p.log_scales[k], kLogScaleMin));
    const double v = rng.uniform_pos();
    double sample = p.means[k] + s * std::log(v / (1.0 - v));
    sample = std::min(1.0, std::max(-1.0, sample));
    return audio::quantize(sample, p.bit_depth);
}

// ---------------------------------------------------------------------------
// Gaussian
// ---------------------------------------------------------------------------

double gaussian_log_prob(const GaussianParams& g, const std::vector<double>& x) {
    require(g.var_floor > 0.0, "gaussian_log_prob: variance floor must be positive");
    require(g.mean.size() == x.size() && g.log_var.size() == x.size(),
            "gaussian_log_prob: dimension mismatch");
    double lp = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double v = std::max(g.var_floor, std::exp(g.log_var[i]));
        const double d = x[i] - g.mean[i];
        lp += -kHalfLog2Pi - 0.5 * std::log(v) - 0.5 * d * d / v;
    }
    return lp;
}

double max_gaussian_ll(double sigma_min, long frames) {
    require(sigma_min > 0.0, "max_gaussian_ll: sigma_min must be positive");
    return static_cast<double>(frames) * (-kHalfLog2Pi - std::log(sigma_min));
}

double gaussian_kl(const GaussianParams& q, const GaussianParams& p) {
    require(q.mean.size() == p.mean.size() && q.log_var.size() == p.log_var.size() &&
                q.mean.size() == q.log_var.size(),
            "gaussian_kl: dimension mismatch");
    double kl = 0.0;
    for (size_t i = 0; i < q.mean.size(); ++i) {
        const double d = p.mean[i] - q.mean[i];
        kl += 0.5 * (std::exp(q.log_var[i] - p.log_var[i]) + d * d * std::exp(-p.log_var[i]) - 1.0 +
                     p.log_var[i] - q.log_var[i]);
    }
    return kl;
}

double baseline_uniform(int bit_depth) {
    require(bit_depth >= 1, "baseline_uniform: bit depth must be >= 1");
    return static_cast<double>(bit_depth);
}

FitResult baseline_fit_dmol(const std::vector<double>& frames, int bit_depth) {
    require(!frames.empty(), "baseline_fit_dmol: empty training data");
    const long N = static_cast<long>(frames.size());

    double mean = 0.0;
    for (double v : frames) mean += v;
    mean /= static_cast<double>(N);
    double var = 0.0;
    for (double v : frames) var += (v - mean) * (v - mean);
    var /= static_cast<double>(N);
    const double sd = std::sqrt(var) + 1e-4;

    auto par = [](std::vector<double> v) {
        const long n = static_cast<long>(v.size());
        return numcore::make_tensor({1, n}, std::move(v), true);
    };
    optim::ParamTable params;
    params["logits"] = par({0.0, 0.0});
    params["means"] = par({mean - 0.7 * sd, mean + 0.7 * sd});
    params["log_scales"] = par({std::log(sd), std::log(sd)});

    OutputSpec spec{OutputKind::dmol, 2, bit_depth, 1e-4};
    std::vector<double> mask(frames.size(), 1.0);
    optim::AdamState state;
    optim::AdamConfig cfg;
    cfg.lr = 0.05;

    double prev = -std::numeric_limits<double>::infinity();
    double ll = prev;
    long it = 0;
    for (; it < 20000; ++it) {
        Tape tp;
        Tensor row = tp.concat({params["logits"], params["means"], params["log_scales"]}, 1);
        Tensor full = tp.expand_rows(row, N);
        Tensor total = log_prob_graph(tp, spec, full, frames, mask, N, 1);
        ll = total->scalar() / static_cast<double>(N);
        Tensor loss = tp.mul_scalar(total, -1.0 / static_cast<double>(N));
        optim::zero_grads(params);
        tp.backward(loss);
        optim::adam_step(params, state, cfg);
        if (it > 10 && std::abs(ll - prev) < 1e-6 * std::abs(prev)) break;
        prev = ll;
    }

    FitResult r;
    r.params.mixture = 2;
    r.params.bit_depth = bit_depth;
    r.params.logit_weights = params["logits"]->value;
    r.params.means = params["means"]->value;
    for (double ls : params["log_scales"]->value) r.params.log_scales.push_back(std::max(ls, kLogScaleMin));
    r.nats_per_frame = -ll;
    r.bpf = -ll / std::log(2.0);
    r.iterations = it + 1;
    return r;
}

Tensor gaussian_kl_graph(Tape& tp, const Tensor& q_mean, const Tensor& q_logvar,
                         const Tensor& p_mean, const Tensor& p_logvar,
                         const std::vector<double>* row_mask) {
    require(q_mean->shape == p_mean->shape && q_logvar->shape == p_logvar->shape &&
                q_mean->shape == q_logvar->shape,
            "gaussian_kl_graph: dimension mismatch");
    Tensor ratio = tp.exp(tp.sub(q_logvar, p_logvar));
    Tensor diff = tp.sub(p_mean, q_mean);
    Tensor quad = tp.mul(tp.mul(diff, diff), tp.exp(tp.neg(p_logvar)));
    Tensor inner = tp.add(tp.add(ratio, quad), tp.add_scalar(tp.sub(p_logvar, q_logvar), -1.0));
    if (row_mask) {
        const long rows = q_mean->shape[0];
        require(static_cast<long>(row_mask->size()) == rows, "gaussian_kl_graph: row mask length mismatch");
        const long inner_n = q_mean->numel() / rows;
        std::vector<double> m(static_cast<size_t>(q_mean->numel()));
        for (long r = 0; r < rows; ++r)
            for (long i = 0; i < inner_n; ++i)
                m[static_cast<size_t>(r * inner_n + i)] = (*row_mask)[static_cast<size_t>(r)];
        inner = tp.mul(inner, tp.constant(q_mean->shape, std::move(m)));
    }
    return tp.mul_scalar(tp.sum_all(inner), 0.5);
}

Tensor reparam_sample_graph(Tape& tp, const Tensor& mean, const Tensor& log_var,
                            const std::vector<double>& noise) {
    require(mean->shape == log_var->shape, "reparam_sample_graph: shape mismatch");
    require(static_cast<long>(noise.size()) == mean->numel(), "reparam_sample_graph: noise length mismatch");
    Tensor eps = tp.constant(mean->shape, noise);
    Tensor sd = tp.exp(tp.mul_scalar(log_var, 0.5));
    return tp.add(mean, tp.mul(sd, eps));
}

double sample_output(const OutputSpec& spec, const std::vector<double>& step_params, long dim_count,
                     long d, Rng& rng) {
    require(static_cast<long>(step_params.size()) == dim_count * spec.params_per_dim(),
            "sample_output: step row length mismatch");
    if (spec.kind == OutputKind::gaussian) {
        const double mu = step_params[static_cast<size_t>(d)];
        const double lv = step_params[static_cast<size_t>(dim_count + d)];
        const double sd = std::sqrt(std::max(spec.var_floor, std::exp(lv)));
        double v = mu + sd * rng.normal();
        return std::min(1.0, std::max(-1.0, v));
    }
    const long K = spec.mixture;
    DMoLParams p;
    p.mixture = spec.mixture;
    p.bit_depth = spec.bit_depth;
    const long DK = dim_count * K;
    for (long k = 0; k < K; ++k) {
        p.logit_weights.push_back(step_params[static_cast<size_t>(d * K + k)]);
        p.means.push_back(step_params[static_cast<size_t>(DK + d * K + k)]);
        p.log_scales.push_back(step_params[static_cast<size_t>(2 * DK + d * K + k)]);
    }
    return dmol_sample(p, rng);
}

}  // namespace dists
}  // namespace slvm
