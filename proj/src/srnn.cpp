#include "models_impl.hpp"

namespace slvm {
namespace models {

SrnnModel::SrnnModel(Config cfg) : SequenceModel(std::move(cfg)) {
    nn::Builder B(params_, cfg_.init_seed);
    const long D = cfg_.step_dim();
    fwd_ = nn::make_gru(B, "fwd", D, cfg_.dd);
    bwd_ = nn::make_gru(B, "bwd", D + cfg_.dd, cfg_.dd);
    prior_ = nn::make_gaussian_head(B, "prior", cfg_.dz + cfg_.dd, cfg_.dz, cfg_.dz);
    post_ = nn::make_gaussian_head(B, "post", cfg_.dz + cfg_.dd, cfg_.dz, cfg_.dz);
    dec_ = nn::make_mlp(B, "dec", cfg_.dz + cfg_.dd, cfg_.mlp_hidden, D * cfg_.output.params_per_dim());
}

std::vector<Tensor> SrnnModel::forward_states(Tape& tp, const audio::StackedSequence& x, long begin,
                                              long end, Tensor& d, const std::vector<double>& first_prev_row) const {
    const long D = cfg_.step_dim();
    std::vector<Tensor> states;
    std::vector<double> prev = first_prev_row;
    for (long t = begin; t < end; ++t) {
        d = fwd_.step(tp, tp.constant({1, D}, prev), d);
        states.push_back(d);
        prev = step_row(x, t);
    }
    return states;
}

std::vector<Tensor> SrnnModel::backward_states(Tape& tp, const audio::StackedSequence& x, long begin,
                                               long end, const std::vector<Tensor>& d_states,
                                               Tensor& a) const {
    const long D = cfg_.step_dim();
    std::vector<Tensor> states(static_cast<size_t>(end - begin));
    for (long t = end - 1; t >= begin; --t) {
        Tensor xt = tp.constant({1, D}, step_row(x, t));
        a = bwd_.step(tp, tp.concat({xt, d_states[static_cast<size_t>(t - begin)]}, 1), a);
        states[static_cast<size_t>(t - begin)] = a;
    }
    return states;
}

ElboParts SrnnModel::assemble(Tape& tp, const audio::StackedSequence& x, long begin, long end,
                              const std::vector<Tensor>& d_states, const std::vector<Tensor>& a_states,
                              Tensor& prev_z, const ElboOptions& opt, LatentTrajectory* traj,
                              std::vector<std::vector<double>>* post_means,
                              std::vector<std::vector<double>>* prior_means_out) {
    const long D = cfg_.step_dim();
    std::vector<Tensor> rows;
    Tensor kl = tp.constant_scalar(0.0);
    for (long t = begin; t < end; ++t) {
        const size_t i = static_cast<size_t>(t - begin);
        auto [pm, plv] = prior_.apply(tp, tp.concat({prev_z, d_states[i]}, 1));
        Tensor qm = pm, qlv = plv;
        if (!opt.tie_posterior_to_prior) {
            auto q = post_.apply(tp, tp.concat({prev_z, a_states[i]}, 1));
            qm = q.first;
            qlv = q.second;
        }
        Tensor z = dists::reparam_sample_graph(tp, qm, qlv, latent_noise(opt, t, 0, cfg_.dz));
        rows.push_back(dec_.apply(tp, tp.concat({z, d_states[i]}, 1)));
        kl = tp.add(kl, tp.mul_scalar(dists::gaussian_kl_graph(tp, qm, qlv, pm, plv), step_alive(x, t)));
        prev_z = z;
        if (traj && step_alive(x, t) > 0.5) {
            traj->layers[0].times.push_back(t * cfg_.stack + 1);
            traj->layers[0].samples.push_back(z->value);
            traj->layers[0].means.push_back(qm->value);
        }
        if (post_means) post_means->push_back(qm->value);
        if (prior_means_out) prior_means_out->push_back(pm->value);
    }
    ElboParts parts;
    Tensor params = tp.concat(rows, 0);
    auto mask = mask_rows(x, begin, end);
    parts.recon =
        dists::log_prob_graph(tp, cfg_.output, params, value_rows(x, begin, end), mask, end - begin, D);
    parts.kls = {kl};
    parts.frames = count_mask(mask);
    parts.steps = end - begin;
    return parts;
}

ElboParts SrnnModel::elbo(Tape& tp, const audio::StackedSequence& x, const ElboOptions& opt) {
    Tensor d = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
    Tensor a = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
    Tensor prev_z = tp.constant({1, cfg_.dz}, std::vector<double>(static_cast<size_t>(cfg_.dz), 0.0));
    auto d_states = forward_states(tp, x, 0, x.steps, d, std::vector<double>(static_cast<size_t>(cfg_.step_dim()), 0.0));
    auto a_states = backward_states(tp, x, 0, x.steps, d_states, a);
    return assemble(tp, x, 0, x.steps, d_states, a_states, prev_z, opt, nullptr, nullptr, nullptr);
}

ElboValues SrnnModel::evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                         const ElboOptions& opt) {
    const long seg_steps = std::max(1L, segment_frames / cfg_.stack);
    const long D = cfg_.step_dim();
    std::vector<long> bounds;
    for (long b = 0; b < x.steps; b += seg_steps) bounds.push_back(b);
    bounds.push_back(x.steps);
    const size_t nseg = bounds.size() - 1;

    // forward sweep: deterministic state and previous row at each segment start
    std::vector<std::vector<double>> seg_d0(nseg), seg_prev_row(nseg);
    {
        Tape tp;
        tp.recording = false;
        Tensor d = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
        std::vector<double> prev(static_cast<size_t>(D), 0.0);
        for (size_t s = 0; s < nseg; ++s) {
            seg_d0[s] = d->value;
            seg_prev_row[s] = prev;
            for (long t = bounds[s]; t < bounds[s + 1]; ++t) {
                d = fwd_.step(tp, tp.constant({1, D}, prev), d);
                prev = step_row(x, t);
            }
        }
    }
    // backward sweep: smoothing state at each segment's right edge
    std::vector<std::vector<double>> seg_a_end(nseg);
    {
        std::vector<double> a_val(static_cast<size_t>(cfg_.dd), 0.0);
        for (size_t s = nseg; s-- > 0;) {
            seg_a_end[s] = a_val;
            Tape tp;
            tp.recording = false;
            Tensor d = tp.constant({1, cfg_.dd}, seg_d0[s]);
            auto d_states = forward_states(tp, x, bounds[s], bounds[s + 1], d, seg_prev_row[s]);
            Tensor a = tp.constant({1, cfg_.dd}, a_val);
            auto a_states = backward_states(tp, x, bounds[s], bounds[s + 1], d_states, a);
            a_val = a->value;
        }
    }
    // likelihood sweep with the carried latent sample
    ElboValues acc;
    acc.kls = {0.0};
    std::vector<double> z_val(static_cast<size_t>(cfg_.dz), 0.0);
    for (size_t s = 0; s < nseg; ++s) {
        Tape tp;
        tp.recording = false;
        Tensor d = tp.constant({1, cfg_.dd}, seg_d0[s]);
        auto d_states = forward_states(tp, x, bounds[s], bounds[s + 1], d, seg_prev_row[s]);
        Tensor a = tp.constant({1, cfg_.dd}, seg_a_end[s]);
        auto a_states = backward_states(tp, x, bounds[s], bounds[s + 1], d_states, a);
        Tensor prev_z = tp.constant({1, cfg_.dz}, z_val);
        auto parts = assemble(tp, x, bounds[s], bounds[s + 1], d_states, a_states, prev_z, opt, nullptr,
                              nullptr, nullptr);
        z_val = prev_z->value;
        acc.recon += parts.recon->scalar();
        acc.kls[0] += parts.kls[0]->scalar();
        acc.frames += parts.frames;
    }
    return acc;
}

std::vector<double> SrnnModel::sample(long frames, Rng& rng) {
    require(frames >= 1, "sample: frames must be >= 1");
    const long D = cfg_.step_dim();
    const long steps = (frames + D - 1) / D;
    Tape tp;
    tp.recording = false;
    Tensor d = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
    Tensor prev_z = tp.constant({1, cfg_.dz}, std::vector<double>(static_cast<size_t>(cfg_.dz), 0.0));
    std::vector<double> prev(static_cast<size_t>(D), 0.0);
    std::vector<double> out;
    for (long t = 0; t < steps; ++t) {
        d = fwd_.step(tp, tp.constant({1, D}, prev), d);
        auto [pm, plv] = prior_.apply(tp, tp.concat({prev_z, d}, 1));
        std::vector<double> eps(static_cast<size_t>(cfg_.dz));
        for (auto& e : eps) e = rng.normal();
        Tensor z = dists::reparam_sample_graph(tp, pm, plv, eps);
        Tensor params = dec_.apply(tp, tp.concat({z, d}, 1));
        auto row = sample_frame_row(cfg_.output, params->value, D, rng);
        prev_z = z;
        prev = row;
        out.insert(out.end(), row.begin(), row.end());
    }
    out.resize(static_cast<size_t>(frames));
    return out;
}

LatentTrajectory SrnnModel::infer(const audio::StackedSequence& x, const ElboOptions& opt) {
    Tape tp;
    tp.recording = false;
    LatentTrajectory traj;
    traj.total_frames = x.total_frames;
    traj.layers.resize(1);
    traj.layers[0].stride_frames = cfg_.stack;
    Tensor d = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
    Tensor a = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
    Tensor prev_z = tp.constant({1, cfg_.dz}, std::vector<double>(static_cast<size_t>(cfg_.dz), 0.0));
    auto d_states = forward_states(tp, x, 0, x.steps, d, std::vector<double>(static_cast<size_t>(cfg_.step_dim()), 0.0));
    auto a_states = backward_states(tp, x, 0, x.steps, d_states, a);
    assemble(tp, x, 0, x.steps, d_states, a_states, prev_z, opt, &traj, nullptr, nullptr);
    return traj;
}

std::vector<std::vector<double>> SrnnModel::posterior_means(const audio::StackedSequence& x,
                                                            const ElboOptions& opt) {
    Tape tp;
    tp.recording = false;
    Tensor d = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
    Tensor a = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
    Tensor prev_z = tp.constant({1, cfg_.dz}, std::vector<double>(static_cast<size_t>(cfg_.dz), 0.0));
    auto d_states = forward_states(tp, x, 0, x.steps, d, std::vector<double>(static_cast<size_t>(cfg_.step_dim()), 0.0));
    auto a_states = backward_states(tp, x, 0, x.steps, d_states, a);
    std::vector<std::vector<double>> out;
    assemble(tp, x, 0, x.steps, d_states, a_states, prev_z, opt, nullptr, &out, nullptr);
    return out;
}

std::vector<std::vector<double>> SrnnModel::prior_means(const audio::StackedSequence& x,
                                                        const ElboOptions& opt) {
    Tape tp;
    tp.recording = false;
    Tensor d = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
    Tensor a = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
    Tensor prev_z = tp.constant({1, cfg_.dz}, std::vector<double>(static_cast<size_t>(cfg_.dz), 0.0));
    auto d_states = forward_states(tp, x, 0, x.steps, d, std::vector<double>(static_cast<size_t>(cfg_.step_dim()), 0.0));
    auto a_states = backward_states(tp, x, 0, x.steps, d_states, a);
    std::vector<std::vector<double>> out;
    assemble(tp, x, 0, x.steps, d_states, a_states, prev_z, opt, nullptr, nullptr, &out);
    return out;
}

}  // namespace models
}  // namespace slvm
