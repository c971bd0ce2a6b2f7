#include "models_impl.hpp"

namespace slvm {
namespace models {

StcnModel::StcnModel(Config cfg) : SequenceModel(std::move(cfg)) {
    require(cfg_.wn_blocks >= cfg_.layers, "stcn: encoder must have at least one block per latent layer");
    nn::Builder B(params_, cfg_.init_seed);
    const long D = cfg_.step_dim();
    // config lists latent dims top-down; store bottom-up
    for (int i = cfg_.layers - 1; i >= 0; --i) dims_.push_back(cfg_.stcn_dims[static_cast<size_t>(i)]);

    enc_ = nn::make_wavenet_stack(B, "enc", D, cfg_.dc, cfg_.dc, cfg_.wn_blocks, cfg_.wn_layers);
    long zsum = 0;
    for (int i = 0; i < cfg_.layers; ++i) {
        const long dz = dims_[static_cast<size_t>(i)];
        const long above = i + 1 < cfg_.layers ? dims_[static_cast<size_t>(i + 1)] : 0;
        priors_.push_back(nn::make_gaussian_head(B, "prior" + std::to_string(i + 1), cfg_.dc + above, dz, dz));
        posts_.push_back(nn::make_gaussian_head(B, "post" + std::to_string(i + 1), cfg_.dc + above, dz, dz));
        zsum += dz;
    }
    dec_ = nn::make_wavenet_stack(B, "dec", zsum, cfg_.dc, cfg_.dc, cfg_.dec_blocks, cfg_.dec_layers);
    nn::Builder H = B.scoped("head");
    head1_ = H.conv_weight("w1", cfg_.dc, cfg_.dc, 1);
    head1b_ = H.conv_bias("b1", cfg_.dc);
    head2_ = H.conv_weight("w2", D * cfg_.output.params_per_dim(), cfg_.dc, 1);
    head2b_ = H.conv_bias("b2", D * cfg_.output.params_per_dim());
}

ElboParts StcnModel::run(Tape& tp, const audio::StackedSequence& x, long begin, long end,
                         LatentTrajectory* traj, std::vector<std::vector<double>>* top_prior,
                         std::vector<std::vector<double>>* top_post, const ElboOptions& opt) {
    const long D = cfg_.step_dim();
    const int L = cfg_.layers;
    const long w0 = std::max(0L, begin - context_steps());
    const long n = end - w0;

    std::vector<double> in(static_cast<size_t>(D * n), 0.0);
    for (long i = 0; i < n; ++i)
        for (long d = 0; d < D; ++d)
            in[static_cast<size_t>(d * n + i)] = x.data[static_cast<size_t>((w0 + i) * D + d)];
    auto enc_out = enc_.apply(tp, tp.constant({D, n}, std::move(in)));

    // KL rows count only fresh, alive steps
    std::vector<double> kl_mask(static_cast<size_t>(n), 0.0);
    for (long i = 0; i < n; ++i) {
        const long g = w0 + i;
        if (g >= begin && step_alive(x, g) > 0.5) kl_mask[static_cast<size_t>(i)] = 1.0;
    }

    ElboParts parts;
    parts.kls.assign(static_cast<size_t>(L), nullptr);
    std::vector<Tensor> zrows(static_cast<size_t>(L));
    Tensor parent;  // z of the layer above, same timestep
    for (int i = L - 1; i >= 0; --i) {
        const long dz = dims_[static_cast<size_t>(i)];
        Tensor tap = enc_out.block_taps[static_cast<size_t>(cfg_.wn_blocks - L + i)];
        Tensor rows = tp.transpose2d(tap);  // [n, dc]
        // prior conditions on the encoder one step behind
        Tensor zero_row = tp.constant({1, cfg_.dc}, std::vector<double>(static_cast<size_t>(cfg_.dc), 0.0));
        Tensor shifted = n > 1 ? tp.concat({zero_row, tp.slice(rows, 0, 0, n - 1)}, 0) : zero_row;
        Tensor post_in = parent ? tp.concat({rows, parent}, 1) : rows;
        Tensor prior_in = parent ? tp.concat({shifted, parent}, 1) : shifted;
        auto [pm, plv] = priors_[static_cast<size_t>(i)].apply(tp, prior_in);
        Tensor qm = pm, qlv = plv;
        if (!opt.tie_posterior_to_prior) {
            auto q = posts_[static_cast<size_t>(i)].apply(tp, post_in);
            qm = q.first;
            qlv = q.second;
        }
        std::vector<double> noise;
        noise.reserve(static_cast<size_t>(n * dz));
        for (long r = 0; r < n; ++r) {
            auto v = latent_noise(opt, w0 + r, i, dz);
            noise.insert(noise.end(), v.begin(), v.end());
        }
        Tensor z = dists::reparam_sample_graph(tp, qm, qlv, noise);
        parts.kls[static_cast<size_t>(i)] = dists::gaussian_kl_graph(tp, qm, qlv, pm, plv, &kl_mask);
        zrows[static_cast<size_t>(i)] = z;
        parent = z;
        if (traj) {
            auto& layer = traj->layers[static_cast<size_t>(i)];
            layer.stride_frames = cfg_.stack;
            for (long g = begin; g < end; ++g) {
                if (step_alive(x, g) < 0.5) continue;
                const long r = g - w0;
                layer.times.push_back(g * cfg_.stack + 1);
                layer.samples.emplace_back(z->value.begin() + r * dz, z->value.begin() + (r + 1) * dz);
                layer.means.emplace_back(qm->value.begin() + r * dz, qm->value.begin() + (r + 1) * dz);
            }
        }
        if (i == L - 1) {
            for (long g = begin; g < end; ++g) {
                const long r = g - w0;
                if (top_prior) top_prior->emplace_back(pm->value.begin() + r * dz, pm->value.begin() + (r + 1) * dz);
                if (top_post) top_post->emplace_back(qm->value.begin() + r * dz, qm->value.begin() + (r + 1) * dz);
            }
        }
    }

    Tensor zcat = tp.transpose2d(tp.concat(std::vector<Tensor>(zrows.begin(), zrows.end()), 1));
    auto dec_out = dec_.apply(tp, zcat);
    Tensor h = tp.tanh(dec_out.skip_sum);
    h = tp.tanh(tp.add(tp.conv1d_causal(h, head1_, 1), tp.expand_last(head1b_, n)));
    Tensor p = tp.add(tp.conv1d_causal(h, head2_, 1), tp.expand_last(head2b_, n));
    Tensor params = tp.slice(tp.transpose2d(p), 0, begin - w0, end - begin);

    auto mask = mask_rows(x, begin, end);
    parts.recon =
        dists::log_prob_graph(tp, cfg_.output, params, value_rows(x, begin, end), mask, end - begin, D);
    parts.frames = count_mask(mask);
    parts.steps = end - begin;
    return parts;
}

ElboParts StcnModel::elbo(Tape& tp, const audio::StackedSequence& x, const ElboOptions& opt) {
    return run(tp, x, 0, x.steps, nullptr, nullptr, nullptr, opt);
}

ElboValues StcnModel::evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                         const ElboOptions& opt) {
    const long seg_steps = std::max(1L, segment_frames / cfg_.stack);
    ElboValues acc;
    acc.kls.assign(static_cast<size_t>(cfg_.layers), 0.0);
    for (long b = 0; b < x.steps; b += seg_steps) {
        Tape tp;
        tp.recording = false;
        auto parts = run(tp, x, b, std::min(x.steps, b + seg_steps), nullptr, nullptr, nullptr, opt);
        acc.recon += parts.recon->scalar();
        for (int l = 0; l < cfg_.layers; ++l)
            acc.kls[static_cast<size_t>(l)] += parts.kls[static_cast<size_t>(l)]->scalar();
        acc.frames += parts.frames;
    }
    return acc;
}

std::vector<double> StcnModel::sample(long frames, Rng& rng) {
    require(frames >= 1, "sample: frames must be >= 1");
    const long D = cfg_.step_dim();
    const int L = cfg_.layers;
    const long steps = (frames + D - 1) / D;
    const long enc_ctx = enc_.receptive_field();
    const long dec_ctx = dec_.receptive_field();
    long zsum = 0;
    for (long d : dims_) zsum += d;

    std::vector<double> gen;                       // generated frames (step-major)
    std::vector<std::vector<double>> z_hist;       // concatenated z per step
    std::vector<double> out;
    for (long t = 0; t < steps; ++t) {
        Tape tp;
        tp.recording = false;
        // encoder over the trailing window of generated steps; column t-1 is last
        const long w0 = std::max(0L, t - enc_ctx);
        const long n = t - w0;  // may be 0 at t == 0
        std::vector<Tensor> taps;
        if (n > 0) {
            std::vector<double> in(static_cast<size_t>(D * n), 0.0);
            for (long i = 0; i < n; ++i)
                for (long d = 0; d < D; ++d)
                    in[static_cast<size_t>(d * n + i)] = gen[static_cast<size_t>((w0 + i) * D + d)];
            taps = enc_.apply(tp, tp.constant({D, n}, std::move(in))).block_taps;
        }
        // sample the ladder top-down from the priors
        std::vector<double> zcat_t;
        zcat_t.reserve(static_cast<size_t>(zsum));
        std::vector<std::vector<double>> zs(static_cast<size_t>(L));
        std::vector<double> parent;
        for (int i = L - 1; i >= 0; --i) {
            const long dz = dims_[static_cast<size_t>(i)];
            std::vector<double> dprev(static_cast<size_t>(cfg_.dc), 0.0);
            if (n > 0) {
                const Tensor& tap = taps[static_cast<size_t>(cfg_.wn_blocks - L + i)];
                for (long c = 0; c < cfg_.dc; ++c)
                    dprev[static_cast<size_t>(c)] = tap->value[static_cast<size_t>(c * n + (n - 1))];
            }
            std::vector<double> in_row = dprev;
            in_row.insert(in_row.end(), parent.begin(), parent.end());
            Tensor pin = tp.constant({1, static_cast<long>(in_row.size())}, in_row);
            auto [pm, plv] = priors_[static_cast<size_t>(i)].apply(tp, pin);
            std::vector<double> z(static_cast<size_t>(dz));
            for (long j = 0; j < dz; ++j)
                z[static_cast<size_t>(j)] =
                    pm->value[static_cast<size_t>(j)] +
                    std::exp(0.5 * plv->value[static_cast<size_t>(j)]) * rng.normal();
            zs[static_cast<size_t>(i)] = z;
            parent = std::move(z);
        }
        for (int i = 0; i < L; ++i) zcat_t.insert(zcat_t.end(), zs[static_cast<size_t>(i)].begin(), zs[static_cast<size_t>(i)].end());
        z_hist.push_back(std::move(zcat_t));

        // decode from the trailing z window; last column is step t
        const long zw0 = std::max(0L, t + 1 - dec_ctx);
        const long zn = t + 1 - zw0;
        std::vector<double> zin(static_cast<size_t>(zsum * zn));
        for (long i = 0; i < zn; ++i)
            for (long c = 0; c < zsum; ++c)
                zin[static_cast<size_t>(c * zn + i)] = z_hist[static_cast<size_t>(zw0 + i)][static_cast<size_t>(c)];
        auto dec_out = dec_.apply(tp, tp.constant({zsum, zn}, std::move(zin)));
        Tensor h = tp.tanh(dec_out.skip_sum);
        h = tp.tanh(tp.add(tp.conv1d_causal(h, head1_, 1), tp.expand_last(head1b_, zn)));
        Tensor p = tp.add(tp.conv1d_causal(h, head2_, 1), tp.expand_last(head2b_, zn));
        std::vector<double> row(static_cast<size_t>(D * cfg_.output.params_per_dim()));
        for (size_t c = 0; c < row.size(); ++c)
            row[c] = p->value[c * static_cast<size_t>(zn) + static_cast<size_t>(zn - 1)];
        auto frame = sample_frame_row(cfg_.output, row, D, rng);
        gen.insert(gen.end(), frame.begin(), frame.end());
        out.insert(out.end(), frame.begin(), frame.end());
    }
    out.resize(static_cast<size_t>(frames));
    return out;
}

LatentTrajectory StcnModel::infer(const audio::StackedSequence& x, const ElboOptions& opt) {
    LatentTrajectory traj;
    traj.total_frames = x.total_frames;
    traj.layers.resize(static_cast<size_t>(cfg_.layers));
    Tape tp;
    tp.recording = false;
    run(tp, x, 0, x.steps, &traj, nullptr, nullptr, opt);
    return traj;
}

std::vector<std::vector<double>> StcnModel::prior_means_top(const audio::StackedSequence& x,
                                                            const ElboOptions& opt) {
    Tape tp;
    tp.recording = false;
    std::vector<std::vector<double>> out;
    run(tp, x, 0, x.steps, nullptr, &out, nullptr, opt);
    return out;
}

std::vector<std::vector<double>> StcnModel::posterior_means_top(const audio::StackedSequence& x,
                                                                const ElboOptions& opt) {
    Tape tp;
    tp.recording = false;
    std::vector<std::vector<double>> out;
    run(tp, x, 0, x.steps, nullptr, nullptr, &out, opt);
    return out;
}

}  // namespace models
}  // namespace slvm
