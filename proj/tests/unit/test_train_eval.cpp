#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "models_impl.hpp"
#include "slvm/eval.hpp"
#include "slvm/train.hpp"

using namespace slvm;
using models::Config;
using models::ElboOptions;
using models::Kind;
using numcore::Tape;
using numcore::Tensor;

namespace {

Config small_config(Kind kind) {
    Config cfg;
    cfg.kind = kind;
    cfg.stack = 4;
    cfg.output.kind = dists::OutputKind::dmol;
    cfg.output.mixture = 2;
    cfg.output.bit_depth = 8;
    cfg.dz = 3;
    cfg.dd = 6;
    cfg.dc = 4;
    cfg.mlp_hidden = 6;
    cfg.wn_blocks = 2;
    cfg.wn_layers = 2;
    cfg.dec_blocks = 1;
    cfg.dec_layers = 2;
    cfg.init_seed = 21;
    if (kind == Kind::stcn) {
        cfg.layers = 5;
        cfg.stcn_dims = {2, 2, 3, 3, 4};
        cfg.wn_blocks = 5;
    }
    if (kind == Kind::cwvae) {
        cfg.stack = 1;
        cfg.layers = 2;
        cfg.stride_base = 4;
        cfg.stride_factor = 2;
    }
    return cfg;
}

std::vector<audio::EncodedSequence> small_corpus(int n, long lo, long hi, uint64_t seed) {
    audio::SynthSpec spec;
    spec.count = n;
    spec.min_frames = lo;
    spec.max_frames = hi;
    spec.bit_depth = 8;
    spec.seed = seed;
    spec.regimes = {{{440.0}, {0.5}}, {{900.0}, {0.4}}};
    spec.regime_frames = 64;
    spec.noise_amp = 0.01;
    return audio::synth_dataset(spec);
}

std::vector<double> flatten_params(const optim::ParamTable& params) {
    std::vector<double> out;
    for (const auto& [name, p] : params) {
        (void)name;
        out.insert(out.end(), p->value.begin(), p->value.end());
    }
    return out;
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters fixed while moments decay") {
    optim::ParamTable params;
    params["w"] = numcore::make_tensor({2}, {0.5, -0.25}, true);
    params["w"]->ensure_grad();
    optim::AdamState state;
    state.m["w"] = {1.0, 1.0};
    state.v["w"] = {1.0, 1.0};
    train::TrainConfig cfg;
    cfg.lr = 0.0;  // isolate the moment update
    train::adam_step(params, state, cfg);
    CHECK(params["w"]->value == std::vector<double>{0.5, -0.25});
    CHECK(state.m["w"][0] == doctest::Approx(0.9));
    CHECK(state.v["w"][0] == doctest::Approx(0.999));

    // with lr > 0 and zero grad the parameter still moves only through stale
    // moments; with zero moments it does not move at all
    optim::AdamState fresh;
    cfg.lr = 1e-3;
    train::adam_step(params, fresh, cfg);
    CHECK(params["w"]->value == std::vector<double>{0.5, -0.25});
}

TEST_CASE("adam: first step is a signed step of nearly lr") {
    optim::ParamTable params;
    params["w"] = numcore::make_tensor({3}, {0.0, 0.0, 0.0}, true);
    params["w"]->grad = {0.7, -1.3, 42.0};
    optim::AdamState state;
    train::TrainConfig cfg;
    cfg.lr = 3e-4;
    train::adam_step(params, state, cfg);
    for (size_t i = 0; i < 3; ++i) {
        const double update = std::abs(params["w"]->value[i]);
        CHECK(update <= cfg.lr);
        CHECK(update >= 0.999 * cfg.lr);
        CHECK(std::signbit(params["w"]->value[i]) == !std::signbit(params["w"]->grad[i]));
    }
}

TEST_CASE("adam aborts on non-finite gradients naming the parameter") {
    optim::ParamTable params;
    params["layer.W"] = numcore::make_tensor({1}, {0.0}, true);
    params["layer.W"]->grad = {std::nan("")};
    optim::AdamState state;
    train::TrainConfig cfg;
    try {
        train::adam_step(params, state, cfg);
        CHECK(false);
    } catch (const numeric_error& e) {
        CHECK(std::string(e.what()).find("layer.W") != std::string::npos);
    }
}

TEST_CASE("training is reproducible and resumes bit-identically from a checkpoint") {
    auto corpus = small_corpus(3, 40, 64, 5);
    train::TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.batch_size = 2;
    cfg.max_steps = 12;
    cfg.seed = 42;
    cfg.log_every = 1;

    auto model_a = models::make_model(small_config(Kind::vrnn));
    optim::AdamState st_a;
    auto res_a = train::fit(*model_a, corpus, {}, cfg, st_a);

    auto model_b = models::make_model(small_config(Kind::vrnn));
    optim::AdamState st_b;
    auto res_b = train::fit(*model_b, corpus, {}, cfg, st_b);

    CHECK(flatten_params(model_a->params()) == flatten_params(model_b->params()));
    REQUIRE(res_a.logs.size() == res_b.logs.size());
    for (size_t i = 0; i < res_a.logs.size(); ++i) CHECK(res_a.logs[i].nats == res_b.logs[i].nats);

    // interrupted at step 6, checkpointed, resumed: identical to the straight run
    auto model_c = models::make_model(small_config(Kind::vrnn));
    optim::AdamState st_c;
    train::TrainConfig half = cfg;
    half.max_steps = 6;
    train::fit(*model_c, corpus, {}, half, st_c);
    train::save_checkpoint("ck_mid.slvm", *model_c, st_c, 6, cfg.seed);

    auto loaded = train::load_checkpoint("ck_mid.slvm");
    CHECK(loaded.step == 6);
    auto res_d = train::fit(*loaded.model, corpus, {}, cfg, loaded.opt_state, loaded.step);
    (void)res_d;
    CHECK(flatten_params(loaded.model->params()) == flatten_params(model_a->params()));
    std::remove("ck_mid.slvm");
}

TEST_CASE("checkpoint reload reproduces forward results bit for bit") {
    auto corpus = small_corpus(2, 40, 48, 9);
    auto model = models::make_model(small_config(Kind::stcn));
    optim::AdamState st;
    train::TrainConfig cfg;
    cfg.max_steps = 4;
    cfg.seed = 7;
    train::fit(*model, corpus, {}, cfg, st);
    train::save_checkpoint("ck_fwd.slvm", *model, st, 4, 7);
    auto loaded = train::load_checkpoint("ck_fwd.slvm");

    auto x = audio::stack(corpus[0], model->config().stack);
    ElboOptions opt;
    opt.noise_seed = 3;
    Tape t1, t2;
    t1.recording = false;
    t2.recording = false;
    auto a = models::values_of(model->elbo(t1, x, opt));
    auto b = models::values_of(loaded.model->elbo(t2, x, opt));
    CHECK(a.recon == b.recon);
    CHECK(a.kls == b.kls);
    std::remove("ck_fwd.slvm");
}

TEST_CASE("appending masked padding changes no gradient") {
    for (Kind kind : {Kind::vrnn, Kind::cwvae}) {
        INFO("model " << models::to_string(kind));
        auto model = models::make_model(small_config(kind));
        auto corpus = small_corpus(1, 37, 37, 13);
        auto x = audio::stack(corpus[0], model->config().stack);

        audio::StackedSequence padded = x;
        padded.steps += 3;
        padded.data.resize(static_cast<size_t>(padded.steps * padded.stack), 0.0);

        ElboOptions opt;
        opt.noise_seed = 77;
        auto grads_of = [&](const audio::StackedSequence& input) {
            optim::zero_grads(model->params());
            Tape tp;
            auto parts = model->elbo(tp, input, opt);
            Tensor loss = tp.mul_scalar(parts.recon, -1.0);
            for (auto& k : parts.kls) loss = tp.add(loss, k);
            loss = tp.mul_scalar(loss, 1.0 / static_cast<double>(parts.frames));
            tp.backward(loss);
            std::vector<double> out;
            for (const auto& [name, p] : model->params()) {
                (void)name;
                out.insert(out.end(), p->grad.begin(), p->grad.end());
            }
            return out;
        };
        auto ga = grads_of(x);
        auto gb = grads_of(padded);
        REQUIRE(ga.size() == gb.size());
        for (size_t i = 0; i < ga.size(); ++i) CHECK(std::abs(ga[i] - gb[i]) <= 1e-12);
    }
}

TEST_CASE("kl warm-up scales only the KL term") {
    auto model = models::make_model(small_config(Kind::vrnn));
    auto corpus = small_corpus(1, 32, 32, 3);
    train::TrainConfig cfg;
    cfg.lr = 0.0;  // no learning: observe the objective only
    cfg.max_steps = 1;
    cfg.log_every = 1;
    cfg.kl_warmup_steps = 4;  // factor 1/4 at step 1
    optim::AdamState st;
    auto res = train::fit(*model, corpus, {}, cfg, st);
    // the logged metrics report the unwarmed decomposition
    REQUIRE(!res.logs.empty());
    CHECK(res.logs[0].bpf == doctest::Approx(res.logs[0].recon_bpf + res.logs[0].kl_bpf_total).epsilon(1e-12));
}

TEST_CASE("subsegment offsets are resampled across epochs") {
    // one long sequence, stateless model, lr = 0: the loss changes between
    // steps if and only if the sampled window moved
    audio::SynthSpec spec;
    spec.count = 1;
    spec.min_frames = 600;
    spec.max_frames = 600;
    spec.bit_depth = 8;
    spec.seed = 31;
    spec.regimes = {{{300.0}, {0.5}}, {{1700.0}, {0.5}}};
    spec.regime_frames = 50;
    spec.noise_amp = 0.05;
    auto corpus = audio::synth_dataset(spec);

    Config mcfg = small_config(Kind::wavenet);
    mcfg.stack = 1;
    auto model = models::make_model(mcfg);
    train::TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.max_steps = 3;
    cfg.log_every = 1;
    cfg.segment_length = 100;
    cfg.seed = 11;
    optim::AdamState st;
    auto res = train::fit(*model, corpus, {}, cfg, st);
    REQUIRE(res.logs.size() == 3);
    CHECK(res.logs[0].nats != res.logs[1].nats);
}

TEST_CASE("bpf conversion") {
    CHECK(eval::to_bpf(1.0, 1) == doctest::Approx(1.4426950408889634).epsilon(1e-12));
    CHECK(eval::to_bpf(16.0 * std::log(2.0) * 100, 100) == doctest::Approx(16.0).epsilon(1e-12));
    // frame-weighted: 100 frames at 2 bits + 300 frames at 4 bits = 3.5 bpf
    const double nats = (100 * 2 + 300 * 4) * std::log(2.0);
    CHECK(eval::to_bpf(nats, 400) == doctest::Approx(3.5).epsilon(1e-12));
    CHECK_THROWS_AS(eval::to_bpf(1.0, 0), contract_error);
}

TEST_CASE("segmented evaluation matches the unsegmented pass for every model kind") {
    auto corpus = small_corpus(2, 90, 100, 17);
    for (Kind kind : {Kind::lstm, Kind::wavenet, Kind::vrnn, Kind::srnn, Kind::stcn, Kind::cwvae}) {
        INFO("model " << models::to_string(kind));
        auto model = models::make_model(small_config(kind));
        eval::EvalConfig full;
        full.seed = 5;
        eval::EvalConfig segmented = full;
        segmented.segment_frames = 32;
        auto a = eval::evaluate(*model, corpus, full);
        auto b = eval::evaluate(*model, corpus, segmented);
        CHECK(std::abs(a.bpf() - b.bpf()) < 1e-9);
        CHECK(a.total_frames() == b.total_frames());
    }
}

TEST_CASE("per-example csv round trip reproduces the aggregate") {
    auto corpus = small_corpus(3, 40, 80, 23);
    auto model = models::make_model(small_config(Kind::vrnn));
    eval::EvalConfig cfg;
    cfg.seed = 9;
    auto record = eval::evaluate(*model, corpus, cfg);
    eval::write_per_example_csv("metrics_test.csv", record);
    auto loaded = eval::read_per_example_csv("metrics_test.csv");
    CHECK(loaded.examples.size() == record.examples.size());
    CHECK(loaded.bpf() == doctest::Approx(record.bpf()).epsilon(1e-12));
    CHECK(loaded.total_frames() == record.total_frames());
    std::remove("metrics_test.csv");
}
