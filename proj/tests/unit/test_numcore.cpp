#include <doctest.h>

#include <cmath>

#include "slvm/numcore.hpp"

using namespace slvm;
using numcore::Tape;
using numcore::Tensor;

namespace {

Tensor rand_tensor(std::vector<long> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    long n = numcore::shape_numel(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
    return numcore::make_tensor(std::move(shape), std::move(v));
}

using GraphFn = std::function<Tensor(Tape&, const Tensor&)>;

double worst_over_random(const GraphFn& f, std::vector<long> shape, int trials, uint64_t seed,
                         double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    double worst = 0.0;
    for (int i = 0; i < trials; ++i) {
        Tensor x = rand_tensor(shape, rng, lo, hi);
        worst = std::max(worst, numcore::grad_check(f, x, 1e-5));
    }
    return worst;
}

}  // namespace

TEST_CASE("logsumexp of [0,0] is log 2") {
    Tape tp;
    Tensor x = tp.constant({2}, {0.0, 0.0});
    CHECK(tp.logsumexp(x, 0)->scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("dilated causal conv1d matches hand convolution") {
    Tape tp;
    Tensor x = tp.constant({1, 4}, {1, 2, 3, 4});
    Tensor w = tp.constant({1, 1, 2}, {1, 1});
    Tensor y = tp.conv1d_causal(x, w, 2);
    // zero left pad: y[t] = x[t-2] + x[t]
    CHECK(y->value == std::vector<double>{1, 2, 4, 6});
}

TEST_CASE("matmul identity") {
    Tape tp;
    Tensor I = tp.constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(3);
    Tensor A = rand_tensor({3, 3}, rng);
    Tensor y = tp.matmul(I, A);
    for (size_t i = 0; i < 9; ++i) CHECK(y->value[i] == doctest::Approx(A->value[i]).epsilon(1e-15));
}

TEST_CASE("backward: sum of squares") {
    Tape tp;
    Tensor x = numcore::make_tensor({2}, {1.0, 2.0}, true);
    Tensor y = tp.sum_all(tp.mul(x, x));
    tp.backward(y);
    CHECK(x->grad[0] == doctest::Approx(2.0));
    CHECK(x->grad[1] == doctest::Approx(4.0));
}

TEST_CASE("backward: logsumexp of zeros gives softmax gradient") {
    Tape tp;
    Tensor x = numcore::make_tensor({2}, {0.0, 0.0}, true);
    Tensor y = tp.logsumexp(x, 0);
    tp.backward(y);
    CHECK(x->grad[0] == doctest::Approx(0.5));
    CHECK(x->grad[1] == doctest::Approx(0.5));
}

TEST_CASE("backward: sigmoid(0) * w") {
    Tape tp;
    Tensor z = tp.constant({1}, {0.0});
    Tensor w = numcore::make_tensor({1}, {1.0}, true);
    Tensor y = tp.mul(tp.sigmoid(z), w);
    tp.backward(y);
    CHECK(w->grad[0] == doctest::Approx(0.5));
}

TEST_CASE("repeated backward accumulates leaf gradients") {
    Tape tp;
    Tensor x = numcore::make_tensor({2}, {1.0, 2.0}, true);
    Tensor y = tp.sum_all(tp.mul(x, x));
    tp.backward(y);
    tp.backward(y);
    CHECK(x->grad[0] == doctest::Approx(4.0));
    CHECK(x->grad[1] == doctest::Approx(8.0));
}

TEST_CASE("contract violations") {
    Tape tp;
    Tensor a = tp.constant({2}, {1, 2});
    Tensor b = tp.constant({3}, {1, 2, 3});
    CHECK_THROWS_AS((void)tp.add(a, b), contract_error);
    CHECK_THROWS_AS((void)tp.matmul(tp.constant({2, 2}, {1, 2, 3, 4}), tp.constant({3, 1}, {1, 2, 3})),
                    contract_error);
    Tensor x = numcore::make_tensor({2}, {1.0, 2.0}, true);
    Tensor y = tp.mul(x, x);
    CHECK_THROWS_AS(tp.backward(y), contract_error);  // non-scalar root
}

TEST_CASE("grad_check: sum of squares and constant") {
    GraphFn f = [](Tape& tp, const Tensor& x) { return tp.sum_all(tp.mul(x, x)); };
    CHECK(worst_over_random(f, {5}, 3, 11) < 1e-6);

    GraphFn c = [](Tape& tp, const Tensor& x) {
        return tp.mul(tp.constant_scalar(3.0), tp.mul_scalar(tp.sum_all(x), 0.0));
    };
    Rng rng(5);
    Tensor x = rand_tensor({4}, rng);
    CHECK(numcore::grad_check(c, x, 1e-5) == doctest::Approx(0.0));
}

TEST_CASE("grad_check over every primitive op") {
    const double tol = 1e-4;
    auto weighted_sum = [](Tape& tp, const Tensor& t) {
        // deterministic non-uniform weights keep reductions informative
        std::vector<double> w(static_cast<size_t>(t->numel()));
        for (size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
        return tp.sum_all(tp.mul(t, tp.constant(t->shape, w)));
    };

    std::vector<std::pair<const char*, GraphFn>> cases;
    cases.emplace_back("add", [&](Tape& tp, const Tensor& x) {
        return weighted_sum(tp, tp.add(x, tp.mul_scalar(x, 0.5)));
    });
    cases.emplace_back("sub", [&](Tape& tp, const Tensor& x) {
        return weighted_sum(tp, tp.sub(tp.mul_scalar(x, 2.0), x));
    });
    cases.emplace_back("mul", [&](Tape& tp, const Tensor& x) {
        return weighted_sum(tp, tp.mul(x, tp.add_scalar(x, 0.7)));
    });
    cases.emplace_back("neg", [&](Tape& tp, const Tensor& x) { return weighted_sum(tp, tp.neg(x)); });
    cases.emplace_back("add_scalar", [&](Tape& tp, const Tensor& x) {
        return weighted_sum(tp, tp.add_scalar(x, 1.3));
    });
    cases.emplace_back("mul_scalar", [&](Tape& tp, const Tensor& x) {
        return weighted_sum(tp, tp.mul_scalar(x, -2.1));
    });
    cases.emplace_back("tanh", [&](Tape& tp, const Tensor& x) { return weighted_sum(tp, tp.tanh(x)); });
    cases.emplace_back("sigmoid", [&](Tape& tp, const Tensor& x) { return weighted_sum(tp, tp.sigmoid(x)); });
    cases.emplace_back("softplus", [&](Tape& tp, const Tensor& x) { return weighted_sum(tp, tp.softplus(x)); });
    cases.emplace_back("exp", [&](Tape& tp, const Tensor& x) { return weighted_sum(tp, tp.exp(x)); });
    cases.emplace_back("logsumexp", [&](Tape& tp, const Tensor& x) {
        return weighted_sum(tp, tp.logsumexp(tp.reshape(x, {3, 4}), 1));
    });
    cases.emplace_back("sum_axis", [&](Tape& tp, const Tensor& x) {
        return weighted_sum(tp, tp.sum(tp.reshape(x, {3, 4}), 0));
    });
    cases.emplace_back("mean_all", [&](Tape& tp, const Tensor& x) { return tp.mean_all(tp.mul(x, x)); });
    cases.emplace_back("concat_slice", [&](Tape& tp, const Tensor& x) {
        Tensor a = tp.slice(x, 0, 0, 5);
        Tensor b = tp.slice(x, 0, 5, 7);
        Tensor c = tp.concat({tp.mul_scalar(b, 1.5), a}, 0);
        return weighted_sum(tp, c);
    });
    cases.emplace_back("reshape", [&](Tape& tp, const Tensor& x) {
        return weighted_sum(tp, tp.reshape(tp.mul(x, x), {4, 3}));
    });
    cases.emplace_back("expand_last", [&](Tape& tp, const Tensor& x) {
        return weighted_sum(tp, tp.expand_last(x, 3));
    });
    for (auto& [name, f] : cases) {
        INFO("op: " << name);
        CHECK(worst_over_random(f, {12}, 10, 101) < tol);
    }

    // kinked ops checked away from their corners
    GraphFn frelu = [&](Tape& tp, const Tensor& x) { return weighted_sum(tp, tp.relu(x)); };
    CHECK(worst_over_random(frelu, {12}, 10, 19, 0.2, 1.0) < tol);
    GraphFn fclamp = [&](Tape& tp, const Tensor& x) {
        return weighted_sum(tp, tp.clamp_min(tp.clamp_max(x, 5.0), -5.0));
    };
    CHECK(worst_over_random(fclamp, {12}, 10, 23) < tol);
    GraphFn flog = [&](Tape& tp, const Tensor& x) { return weighted_sum(tp, tp.log(x)); };
    CHECK(worst_over_random(flog, {12}, 10, 29, 0.5, 2.0) < tol);
    GraphFn fl1me = [&](Tape& tp, const Tensor& x) { return weighted_sum(tp, tp.log1mexp(x)); };
    CHECK(worst_over_random(fl1me, {12}, 10, 31, -3.0, -0.2) < tol);

    GraphFn fmatmul_a = [&](Tape& tp, const Tensor& x) {
        Rng r(7);
        Tensor b = rand_tensor({4, 3}, r);
        return weighted_sum(tp, tp.matmul(tp.reshape(x, {3, 4}), b));
    };
    CHECK(worst_over_random(fmatmul_a, {12}, 10, 37) < tol);
    GraphFn fmatmul_b = [&](Tape& tp, const Tensor& x) {
        Rng r(9);
        Tensor a = rand_tensor({3, 4}, r);
        return weighted_sum(tp, tp.matmul(a, tp.reshape(x, {4, 3})));
    };
    CHECK(worst_over_random(fmatmul_b, {12}, 10, 41) < tol);
    GraphFn fexpand_rows = [&](Tape& tp, const Tensor& x) {
        return weighted_sum(tp, tp.expand_rows(tp.reshape(x, {1, 12}), 4));
    };
    CHECK(worst_over_random(fexpand_rows, {12}, 10, 43) < tol);

    // convolutions, both through the signal and the kernel
    GraphFn fconv_x = [&](Tape& tp, const Tensor& x) {
        Rng r(13);
        Tensor w = rand_tensor({3, 2, 2}, r);
        return weighted_sum(tp, tp.conv1d_causal(tp.reshape(x, {2, 6}), w, 2));
    };
    CHECK(worst_over_random(fconv_x, {12}, 10, 47) < tol);
    GraphFn fconv_w = [&](Tape& tp, const Tensor& x) {
        Rng r(17);
        Tensor sig = rand_tensor({2, 9}, r);
        return weighted_sum(tp, tp.conv1d_causal(sig, tp.reshape(x, {3, 2, 2}), 3));
    };
    CHECK(worst_over_random(fconv_w, {12}, 10, 53) < tol);
    GraphFn fstride_x = [&](Tape& tp, const Tensor& x) {
        Rng r(19);
        Tensor w = rand_tensor({3, 2, 2}, r);
        return weighted_sum(tp, tp.conv1d_strided(tp.reshape(x, {2, 6}), w, 2));
    };
    CHECK(worst_over_random(fstride_x, {12}, 10, 59) < tol);
    GraphFn fstride_w = [&](Tape& tp, const Tensor& x) {
        Rng r(23);
        Tensor sig = rand_tensor({2, 8}, r);
        return weighted_sum(tp, tp.conv1d_strided(sig, tp.reshape(x, {3, 2, 2}), 2));
    };
    CHECK(worst_over_random(fstride_w, {12}, 10, 61) < tol);
    GraphFn ftrans_x = [&](Tape& tp, const Tensor& x) {
        Rng r(29);
        Tensor w = rand_tensor({2, 3, 2}, r);
        return weighted_sum(tp, tp.conv1d_transposed(tp.reshape(x, {2, 6}), w, 2));
    };
    CHECK(worst_over_random(ftrans_x, {12}, 10, 67) < tol);
    GraphFn ftrans_w = [&](Tape& tp, const Tensor& x) {
        Rng r(31);
        Tensor sig = rand_tensor({2, 5}, r);
        return weighted_sum(tp, tp.conv1d_transposed(sig, tp.reshape(x, {2, 3, 2}), 2));
    };
    CHECK(worst_over_random(ftrans_w, {12}, 10, 71) < tol);
    GraphFn fdw_x = [&](Tape& tp, const Tensor& x) {
        Rng r(37);
        Tensor w = rand_tensor({2, 2}, r);
        return weighted_sum(tp, tp.conv1d_depthwise(tp.reshape(x, {2, 6}), w, 2));
    };
    CHECK(worst_over_random(fdw_x, {12}, 10, 73) < tol);
    GraphFn fdw_w = [&](Tape& tp, const Tensor& x) {
        Rng r(41);
        Tensor sig = rand_tensor({4, 8}, r);
        return weighted_sum(tp, tp.conv1d_depthwise(sig, tp.reshape(x, {4, 3}), 2));
    };
    CHECK(worst_over_random(fdw_w, {12}, 10, 79) < tol);
    GraphFn ftr = [&](Tape& tp, const Tensor& x) {
        return weighted_sum(tp, tp.transpose2d(tp.mul(tp.reshape(x, {3, 4}), tp.reshape(x, {3, 4}))));
    };
    CHECK(worst_over_random(ftr, {12}, 10, 83) < tol);
}

TEST_CASE("logsumexp shift invariance") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        Tape tp;
        Tensor x = rand_tensor({8}, rng, -3.0, 3.0);
        const double c = -5.0 + 10.0 * rng.uniform();
        double lhs = tp.logsumexp(tp.add_scalar(x, c), 0)->scalar();
        double rhs = tp.logsumexp(x, 0)->scalar() + c;
        CHECK(std::abs(lhs - rhs) < 1e-12);
    }
}

TEST_CASE("dilated causal conv output at t ignores future inputs") {
    Rng rng(123);
    Tensor x = rand_tensor({2, 16}, rng);
    Tensor w = rand_tensor({3, 2, 2}, rng);
    Tape tp;
    Tensor base = tp.conv1d_causal(x, w, 4);
    for (long t = 0; t < 16; ++t) {
        Tensor xp = numcore::make_tensor(x->shape, x->value);
        for (long c = 0; c < 2; ++c)
            for (long u = t + 1; u < 16; ++u) xp->value[static_cast<size_t>(c * 16 + u)] += 10.0;
        Tensor pert = tp.conv1d_causal(xp, w, 4);
        for (long o = 0; o < 3; ++o)
            for (long u = 0; u <= t; ++u)
                CHECK(pert->value[static_cast<size_t>(o * 16 + u)] ==
                      base->value[static_cast<size_t>(o * 16 + u)]);
    }
}

TEST_CASE("non-finite output raises a numeric fault naming the op") {
    Tape tp;
    Tensor big = tp.constant({1}, {1e308});
    CHECK_THROWS_AS((void)tp.exp(big), numeric_error);
    try {
        (void)tp.exp(big);
    } catch (const numeric_error& e) {
        CHECK(std::string(e.what()).find("exp") != std::string::npos);
    }
}
