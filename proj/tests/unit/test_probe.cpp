#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>

#include "slvm/probe.hpp"

using namespace slvm;
using namespace slvm::probe;

namespace {

// brute-force CTC: enumerate every path, collapse, and sum probabilities
double ctc_brute_force(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels) {
    const long T = static_cast<long>(logits.size());
    const int classes = static_cast<int>(logits[0].size());
    const int blank = classes - 1;
    std::vector<std::vector<double>> logp(logits.size());
    for (size_t t = 0; t < logits.size(); ++t) {
        double mx = logits[t][0];
        for (double v : logits[t]) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : logits[t]) z += std::exp(v - mx);
        for (double v : logits[t]) logp[t].push_back(v - mx - std::log(z));
    }
    double total = 0.0;
    std::vector<int> path(static_cast<size_t>(T), 0);
    long n_paths = 1;
    for (long t = 0; t < T; ++t) n_paths *= classes;
    for (long code = 0; code < n_paths; ++code) {
        long c = code;
        double lp = 0.0;
        for (long t = 0; t < T; ++t) {
            path[static_cast<size_t>(t)] = static_cast<int>(c % classes);
            c /= classes;
            lp += logp[static_cast<size_t>(t)][static_cast<size_t>(path[static_cast<size_t>(t)])];
        }
        // collapse: merge repeats, drop blanks
        std::vector<int> collapsed;
        int prev = -1;
        for (int s : path) {
            if (s != prev && s != blank) collapsed.push_back(s);
            prev = s;
        }
        if (collapsed == labels) total += std::exp(lp);
    }
    return -std::log(total);
}

}  // namespace

TEST_CASE("mel frontend: frame count, silence floor, tone localization") {
    MelConfig cfg;
    cfg.n_mels = 20;
    cfg.hop = 64;
    cfg.window = 128;
    cfg.sample_rate = 16000;

    // frame count = floor((T - window)/hop) + 1
    std::vector<double> zeros(1000, 0.0);
    auto frames = mel_frontend(zeros, cfg);
    CHECK(static_cast<long>(frames.size()) == (1000 - 128) / 64 + 1);
    for (const auto& f : frames)
        for (double v : f) CHECK(v == doctest::Approx(std::log(1e-10)).epsilon(1e-12));

    // pure tone at a mid band center peaks in that band
    auto centers = mel_band_centers_hz(cfg);
    const int band = 12;
    std::vector<double> tone(4096);
    for (size_t i = 0; i < tone.size(); ++i) {
        tone[i] = 0.5 * std::sin(2.0 * 3.141592653589793 * centers[band] * static_cast<double>(i) / 16000.0);
    }
    auto spec = mel_frontend(tone, cfg);
    for (const auto& f : spec) {
        int argmax = 0;
        for (int m = 1; m < cfg.n_mels; ++m) {
            if (f[static_cast<size_t>(m)] > f[static_cast<size_t>(argmax)]) argmax = m;
        }
        CHECK(argmax == band);
    }

    MelConfig bad = cfg;
    bad.window = 100;
    CHECK_THROWS_AS(mel_frontend(zeros, bad), contract_error);
}

TEST_CASE("segment averaging: constants, resampling convergence, conservation") {
    // constant representation: every span mean equals the constant
    const long T = 24;
    RepDraw const_draw = [&](int) {
        return std::vector<std::vector<double>>(T, std::vector<double>{1.5, -2.0});
    };
    std::vector<long> times(T);
    for (long t = 0; t < T; ++t) times[static_cast<size_t>(t)] = t * 4 + 1;
    std::vector<LabelSpan> spans = {{0, 40, 0}, {40, 96, 1}};
    auto avg = segment_average(const_draw, 3, spans, times, 4);
    REQUIRE(avg.vectors.size() == 2);
    for (const auto& v : avg.vectors) {
        CHECK(v[0] == doctest::Approx(1.5));
        CHECK(v[1] == doctest::Approx(-2.0));
    }

    // noisy draws around a fixed mean converge to it
    RepDraw noisy = [&](int k) {
        Rng rng(static_cast<uint64_t>(k) + 100);
        std::vector<std::vector<double>> rep(T, std::vector<double>(2));
        for (auto& row : rep) {
            row[0] = 0.7 + rng.normal();
            row[1] = -0.3 + rng.normal();
        }
        return rep;
    };
    auto est = segment_average(noisy, 1000, {{0, 96, 0}}, times, 4);
    CHECK(std::abs(est.vectors[0][0] - 0.7) < 1e-1 / std::sqrt(24.0) * 4);
    CHECK(std::abs(est.vectors[0][1] + 0.3) < 1e-1 / std::sqrt(24.0) * 4);

    // spans partitioning all frames reproduce the global mean by frame weight
    RepDraw ramp = [&](int) {
        std::vector<std::vector<double>> rep(T, std::vector<double>(1));
        for (long t = 0; t < T; ++t) rep[static_cast<size_t>(t)][0] = static_cast<double>(t);
        return rep;
    };
    auto parts = segment_average(ramp, 1, {{0, 40, 0}, {40, 96, 1}}, times, 4);
    const double w0 = 40, w1 = 56;
    double combined = (parts.vectors[0][0] * w0 + parts.vectors[1][0] * w1) / (w0 + w1);
    auto global = segment_average(ramp, 1, {{0, 96, 0}}, times, 4);
    CHECK(combined == doctest::Approx(global.vectors[0][0]).epsilon(1e-12));

    // empty span is skipped with a warning
    auto skipped = segment_average(ramp, 1, {{96, 99, 7}, {0, 96, 0}}, times, 4);
    CHECK(skipped.skipped == std::vector<size_t>{0});
    CHECK(skipped.vectors.size() == 1);
}

TEST_CASE("lda matches the two-class closed form and separates clusters") {
    Rng rng(404);
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    // anisotropic shared covariance via a fixed linear map
    const double A[3][3] = {{1.0, 0.3, 0.0}, {0.0, 0.6, 0.2}, {0.1, 0.0, 1.4}};
    const double mu0[3] = {0.0, 0.0, 0.0}, mu1[3] = {2.0, -1.0, 0.5};
    for (int i = 0; i < 300; ++i) {
        double e[3] = {rng.normal(), rng.normal(), rng.normal()};
        double v[3];
        const double* mu = (i % 2 == 0) ? mu0 : mu1;
        for (int r = 0; r < 3; ++r) {
            v[r] = mu[r];
            for (int c = 0; c < 3; ++c) v[r] += A[r][c] * e[c];
        }
        x.push_back({v[0], v[1], v[2]});
        y.push_back(i % 2);
    }
    auto proj = lda_fit(x, y, 1);

    // oracle: direction proportional to pooled-Sw^-1 (mu1 - mu0)
    double m0[3] = {0, 0, 0}, m1[3] = {0, 0, 0};
    long n0 = 0, n1 = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        double* m = y[i] == 0 ? m0 : m1;
        (y[i] == 0 ? n0 : n1)++;
        for (int d = 0; d < 3; ++d) m[d] += x[i][static_cast<size_t>(d)];
    }
    for (int d = 0; d < 3; ++d) {
        m0[d] /= static_cast<double>(n0);
        m1[d] /= static_cast<double>(n1);
    }
    double Sw[3][3] = {};
    for (size_t i = 0; i < x.size(); ++i) {
        const double* m = y[i] == 0 ? m0 : m1;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                Sw[r][c] += (x[i][static_cast<size_t>(r)] - m[r]) * (x[i][static_cast<size_t>(c)] - m[c]);
    }
    // 3x3 solve by Cramer's rule
    double d[3] = {m1[0] - m0[0], m1[1] - m0[1], m1[2] - m0[2]};
    auto det3 = [](const double M[3][3]) {
        return M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1]) -
               M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0]) +
               M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0]);
    };
    double w_oracle[3];
    const double det = det3(Sw);
    for (int k = 0; k < 3; ++k) {
        double Mk[3][3];
        std::memcpy(Mk, Sw, sizeof(Mk));
        for (int r = 0; r < 3; ++r) Mk[r][k] = d[r];
        w_oracle[k] = det3(Mk) / det;
    }
    double dot = 0, na = 0, nb = 0;
    for (int k = 0; k < 3; ++k) {
        dot += w_oracle[k] * proj.basis[0][static_cast<size_t>(k)];
        na += w_oracle[k] * w_oracle[k];
        nb += proj.basis[0][static_cast<size_t>(k)] * proj.basis[0][static_cast<size_t>(k)];
    }
    CHECK(std::abs(dot) / std::sqrt(na * nb) > 0.999);

    // two tight, distant clusters: perfect leave-one-out accuracy in 1 dim
    std::vector<std::vector<double>> sep;
    std::vector<int> sep_y;
    for (int i = 0; i < 60; ++i) {
        const double base = (i % 2 == 0) ? 0.0 : 10.0;
        sep.push_back({base + 0.1 * rng.normal(), 0.1 * rng.normal()});
        sep_y.push_back(i % 2);
    }
    auto p2 = lda_fit(sep, sep_y, 1);
    std::vector<std::vector<double>> projected;
    for (const auto& v : sep) projected.push_back(p2.project(v));
    CHECK(knn_loo(projected, sep_y, 1) == 1.0);

    CHECK_THROWS_AS(lda_fit(sep, sep_y, 2), contract_error);  // dims > classes-1
}

TEST_CASE("knn on shuffled labels sits at chance") {
    Rng rng(777);
    double acc_sum = 0.0;
    const int trials = 8;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<std::vector<double>> x;
        std::vector<int> y;
        for (int i = 0; i < 100; ++i) {
            x.push_back({rng.normal(), rng.normal(), rng.normal()});
            y.push_back(static_cast<int>(rng.uniform_int(2)));
        }
        acc_sum += knn_loo(x, y, 5);
    }
    CHECK(std::abs(acc_sum / trials - 0.5) < 0.1);
}

TEST_CASE("lda projection survives affine pre-whitening (knn unchanged)") {
    Rng rng(99);
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (int i = 0; i < 90; ++i) {
        const int cls = i % 3;
        x.push_back({cls * 2.0 + 0.4 * rng.normal(), (cls == 1 ? 1.5 : 0.0) + 0.4 * rng.normal(),
                     0.4 * rng.normal()});
        y.push_back(cls);
    }
    auto acc_of = [&](const std::vector<std::vector<double>>& data) {
        auto proj = lda_fit(data, y, 2);
        std::vector<std::vector<double>> p;
        for (const auto& v : data) p.push_back(proj.project(v));
        return knn_loo(p, y, 3);
    };
    const double base = acc_of(x);
    // invertible affine map
    std::vector<std::vector<double>> mapped;
    for (const auto& v : x) {
        mapped.push_back({2.0 * v[0] + 0.5 * v[1] + 1.0, -v[1] + 0.2 * v[2] - 3.0, 0.7 * v[2] + 0.1 * v[0]});
    }
    CHECK(acc_of(mapped) == base);
}

TEST_CASE("ctc: worked examples and the brute-force oracle") {
    // T=1, single label with p = 0.5: loss = ln 2
    std::vector<std::vector<double>> l1 = {{0.0, 0.0}};  // classes a, blank
    CHECK(ctc_loss(l1, {0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // T=2, uniform over {a, blank}: paths aa, a-, -a of 4 -> -ln(3/4)
    std::vector<std::vector<double>> l2 = {{0.0, 0.0}, {0.0, 0.0}};
    CHECK(ctc_loss(l2, {0}) == doctest::Approx(-std::log(0.75)).epsilon(1e-12));

    // infeasible: repeated label needs a blank between
    CHECK(std::isinf(ctc_loss(l2, {0, 0})));

    // oracle sweep: all T <= 6, U <= 3, C <= 3 with random scores
    Rng rng(31337);
    for (int C = 1; C <= 3; ++C) {
        for (long T = 1; T <= 6; ++T) {
            for (long U = 1; U <= 3; ++U) {
                for (int rep = 0; rep < 3; ++rep) {
                    std::vector<int> labels;
                    for (long u = 0; u < U; ++u) labels.push_back(static_cast<int>(rng.uniform_int(C)));
                    std::vector<std::vector<double>> logits(static_cast<size_t>(T),
                                                            std::vector<double>(static_cast<size_t>(C + 1)));
                    for (auto& row : logits)
                        for (auto& v : row) v = rng.normal();
                    const double fast = ctc_loss(logits, labels);
                    if (!ctc_feasible(T, labels)) {
                        CHECK(std::isinf(fast));
                        continue;
                    }
                    const double slow = ctc_brute_force(logits, labels);
                    CHECK(fast == doctest::Approx(slow).epsilon(1e-10));
                }
            }
        }
    }
}

TEST_CASE("ctc gradient against central differences") {
    Rng rng(55);
    const long T = 5;
    const int C = 3;
    const std::vector<int> labels = {0, 2, 1};
    auto f = [&](numcore::Tape& tp, const numcore::Tensor& x) {
        return ctc_loss_graph(tp, tp.reshape(x, {T, C + 1}), labels);
    };
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> v(static_cast<size_t>(T * (C + 1)));
        for (auto& e : v) e = rng.normal();
        CHECK(numcore::grad_check(f, numcore::make_tensor({T * (C + 1)}, v), 1e-5) < 1e-4);
    }
}

TEST_CASE("greedy decode collapses repeats and drops blanks") {
    // argmax sequence: a a - b b - -  => a b
    auto row = [](int best, int classes) {
        std::vector<double> r(static_cast<size_t>(classes), 0.0);
        r[static_cast<size_t>(best)] = 5.0;
        return r;
    };
    std::vector<std::vector<double>> logits = {row(0, 3), row(0, 3), row(2, 3), row(1, 3),
                                               row(1, 3), row(2, 3), row(2, 3)};
    CHECK(ctc_greedy_decode(logits) == std::vector<int>{0, 1});
}

TEST_CASE("per: empty hypothesis scores one hundred percent") {
    CHECK(phone_error_rate({1, 2, 3}, {}) == 1.0);
    CHECK(phone_error_rate({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK(phone_error_rate({1, 2}, {1, 7}) == 0.5);  // unseen label counts as a substitution
}

TEST_CASE("temporal dropout: empirical rate and first-step exemption") {
    Rng rng(2718);
    long zeroed = 0, total = 0;
    for (int trial = 0; trial < 10000 / 8; ++trial) {
        auto m = temporal_dropout_mask(8, 0.3, rng);
        for (double v : m) {
            zeroed += v == 0.0 ? 1 : 0;
            ++total;
        }
    }
    CHECK(std::abs(static_cast<double>(zeroed) / static_cast<double>(total) - 0.3) < 0.02);
}

TEST_CASE("representation dump round trip") {
    std::vector<ProbeUtterance> utts(2);
    Rng rng(1);
    for (int i = 0; i < 2; ++i) {
        auto& u = utts[static_cast<size_t>(i)];
        u.id = "utt" + std::to_string(i);
        u.stride_frames = 4;
        for (int t = 0; t < 6; ++t) {
            u.rep.push_back({rng.normal(), rng.normal(), rng.normal()});
            u.rep_times.push_back(t * 4 + 1);
        }
        u.spans = {{0, 12, 0}, {12, 24, 1}};
        u.ref_labels = {0, 1};
    }
    write_representations("reps_test.bin", "reps_test.tsv", utts);
    auto loaded = read_representations("reps_test.bin", "reps_test.tsv");
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].rep == utts[0].rep);
    CHECK(loaded[1].id == "utt1");
    CHECK(loaded[1].spans.size() == 2);
    CHECK(loaded[1].spans[1].label == 1);
    CHECK(loaded[0].ref_labels == std::vector<int>{0, 1});
    std::remove("reps_test.bin");
    std::remove("reps_test.tsv");
}

TEST_CASE("asr probe learns an oracle-separable corpus") {
    // representations literally color the class: rep = one-hot(class) + noise
    Rng rng(7);
    auto make_utt = [&](int idx, uint64_t noise_seed) {
        ProbeUtterance u;
        u.id = "u" + std::to_string(idx);
        u.stride_frames = 1;
        Rng r(noise_seed + static_cast<uint64_t>(idx));
        const int nspans = 3 + static_cast<int>(r.uniform_int(3));
        long t = 0;
        int prev = -1;
        for (int s = 0; s < nspans; ++s) {
            int cls = static_cast<int>(r.uniform_int(3));
            if (cls == prev) cls = (cls + 1) % 3;
            prev = cls;
            const long len = 6 + r.uniform_int(6);
            LabelSpan span{t, t + len, cls};
            u.spans.push_back(span);
            u.ref_labels.push_back(cls);
            for (long i = 0; i < len; ++i) {
                std::vector<double> row(3, 0.0);
                row[static_cast<size_t>(cls)] = 1.0;
                for (auto& v : row) v += 0.05 * r.normal();
                u.rep.push_back(row);
                u.rep_times.push_back(t + i + 1);
            }
            t += len;
        }
        return u;
    };
    std::vector<ProbeUtterance> train_set, test_set;
    for (int i = 0; i < 16; ++i) train_set.push_back(make_utt(i, 100));
    for (int i = 0; i < 8; ++i) test_set.push_back(make_utt(100 + i, 900));

    AsrConfig cfg;
    cfg.layers = 2;
    cfg.width = 24;
    cfg.classes = 3;
    cfg.dropout = 0.3;
    cfg.epochs = 80;
    cfg.lr = 1e-2;
    cfg.seed = 5;
    auto res = asr_probe_train([&](long) { return train_set; }, test_set, cfg);
    CHECK(res.per < 0.05);
    CHECK(res.trained_utterances == 16);

    // dropout 0: training forward equals evaluation forward, so two runs with
    // identical seeds produce identical PER
    AsrConfig det = cfg;
    det.dropout = 0.0;
    det.epochs = 2;
    auto r1 = asr_probe_train([&](long) { return train_set; }, test_set, det);
    auto r2 = asr_probe_train([&](long) { return train_set; }, test_set, det);
    CHECK(r1.per == r2.per);
}
