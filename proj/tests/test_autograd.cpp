#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "ddrb/autograd.hpp"

using namespace ddrb;
using namespace ddrb::ag;

namespace {

// Independent oracle: central finite differences on a scalar function of a
// flat input vector. The engine under test is only used inside `f` to build
// values, never to produce the reference derivative.
std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + h;
        double up = f(x);
        x[i] = keep - h;
        double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, den = 1e-12;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num / den);
}

std::vector<double> random_vec(size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

// Builds the graph value of `build` at x, used both for the engine gradient
// and (re-evaluated) for the FD oracle.
double eval_scalar(const std::function<Var(Tape&, Var)>& build, const std::vector<int>& shape,
                   const std::vector<double>& x) {
    Tape t;
    Var leaf = t.leaf(shape, x);
    return build(t, leaf).val()[0];
}

void check_grad(const std::function<Var(Tape&, Var)>& build, const std::vector<int>& shape,
                const std::vector<double>& x, double tol = 1e-6) {
    Tape t;
    Var leaf = t.leaf(shape, x);
    Var loss = build(t, leaf);
    std::vector<double> got = t.gradients(loss, {leaf})[0].val();
    auto want = fd_gradient([&](const std::vector<double>& v) { return eval_scalar(build, shape, v); }, x);
    CAPTURE(rel_err(got, want));
    CHECK(rel_err(got, want) < tol);
}

}  // namespace

TEST_CASE("elementwise and unary op gradients match finite differences") {
    std::mt19937_64 rng(7);
    auto x = random_vec(12, rng, 0.2, 1.5);  // positive so log/sqrt/div are safe
    std::vector<int> shape{3, 4};

    check_grad([](Tape& t, Var a) { return sum_all(mul(a, a)); }, shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(exp_(scale(a, 0.5))); }, shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(log_(a)); }, shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(sqrt_(a)); }, shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(recip(a)); }, shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(neg(add_scalar(a, 2.0))); }, shape, x);
    check_grad(
        [](Tape& t, Var a) {
            Var b = t.constant({3, 4}, std::vector<double>(12, 0.7));
            return sum_all(div_(a, add(b, mul(a, a))));
        },
        shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(mul(relu(add_scalar(a, -0.6)), a)); }, shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(abs_(add_scalar(a, -0.6))); }, shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(clamp_(a, 0.4, 1.1)); }, shape, x, 1e-4);
}

TEST_CASE("matrix op gradients match finite differences") {
    std::mt19937_64 rng(11);
    auto x = random_vec(12, rng);
    std::vector<int> shape{3, 4};

    check_grad(
        [](Tape& t, Var a) {
            Var w = t.constant({4, 2}, {0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.6, -0.1});
            return sum_all(mul(matmul(a, w), matmul(a, w)));
        },
        shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(mul(transpose(a), transpose(a))); }, shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(mul(row_sum(a), row_sum(a))); }, shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(mul(col_sum(a), col_sum(a))); }, shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(mul(row_max(a), row_max(a))); }, shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(mul(broadcast_cols(row_mean(a), 4), a)); }, shape, x);
    check_grad(
        [](Tape& t, Var a) {
            Var s = sum_all(a);
            return sum_all(mul(broadcast_all(s, {3, 4}), a));
        },
        shape, x);
    check_grad([](Tape& t, Var a) { return sum_all(mul(log_softmax_rows(a), log_softmax_rows(a))); },
               shape, x);
}

TEST_CASE("linear map forward, adjoint and gradients agree") {
    // A hand-built map: out0 = 2*in1 + 0.5*in3, out1 = in0, out2 = -in2 + in1.
    auto m = make_map(4, 3, {{0, 1, 2.0}, {0, 3, 0.5}, {1, 0, 1.0}, {2, 2, -1.0}, {2, 1, 1.0}});
    Tape t;
    Var x = t.leaf({4}, {1.0, 2.0, 3.0, 4.0});
    Var y = apply_map(x, m, {3});
    CHECK(y.val() == std::vector<double>{6.0, 1.0, -1.0});

    // Adjoint identity <Ax, y> == <x, A^T y> for random vectors.
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        auto xv = random_vec(4, rng);
        auto yv = random_vec(3, rng);
        Tape t2;
        Var xx = t2.leaf({4}, xv);
        Var yy = t2.leaf({3}, yv);
        double lhs = 0.0, rhs = 0.0;
        auto ax = apply_map(xx, m, {3}).val();
        auto aty = apply_map_adjoint(yy, m, {4}).val();
        for (int i = 0; i < 3; ++i) lhs += ax[static_cast<size_t>(i)] * yv[static_cast<size_t>(i)];
        for (int i = 0; i < 4; ++i) rhs += xv[static_cast<size_t>(i)] * aty[static_cast<size_t>(i)];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }

    std::vector<int> shape{4};
    auto x0 = random_vec(4, rng);
    check_grad([&](Tape& tt, Var a) { return sum_all(mul(apply_map(a, m, {3}), apply_map(a, m, {3}))); },
               shape, x0);
}

TEST_CASE("slice-lifted maps apply per slice") {
    auto m = make_map(2, 2, {{0, 1, 1.0}, {1, 0, 1.0}});  // swap within each slice
    Tape t;
    Var x = t.leaf({2, 2}, {1.0, 2.0, 3.0, 4.0});
    CHECK(apply_map(x, m, {2, 2}).val() == std::vector<double>{2.0, 1.0, 4.0, 3.0});
}

TEST_CASE("conv2d matches a direct convolution oracle") {
    std::mt19937_64 rng(17);
    int n = 2, c = 3, h = 5, w = 4, o = 2, k = 3, stride = 1, pad = 1;
    auto xv = random_vec(static_cast<size_t>(n) * c * h * w, rng);
    auto wv = random_vec(static_cast<size_t>(o) * c * k * k, rng);
    auto bv = random_vec(static_cast<size_t>(o), rng);

    Tape t;
    Var x = t.leaf({n, c, h, w}, xv);
    Var wt = t.leaf({o, c * k * k}, wv);
    Var b = t.leaf({o}, bv);
    ConvGeom g{c, h, w, k, stride, pad};
    auto got = conv2d(x, wt, b, g).val();

    int oh = g.out_h(), ow = g.out_w();
    for (int ni = 0; ni < n; ++ni) {
        for (int oi = 0; oi < o; ++oi) {
            for (int yi = 0; yi < oh; ++yi) {
                for (int xi = 0; xi < ow; ++xi) {
                    double acc = bv[static_cast<size_t>(oi)];
                    for (int ci = 0; ci < c; ++ci) {
                        for (int ky = 0; ky < k; ++ky) {
                            for (int kx = 0; kx < k; ++kx) {
                                int sy = yi * stride - pad + ky;
                                int sx = xi * stride - pad + kx;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                                acc += xv[((static_cast<size_t>(ni) * c + ci) * h + sy) * w + sx] *
                                       wv[((static_cast<size_t>(oi) * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    double gotv = got[((static_cast<size_t>(ni) * o + oi) * oh + yi) * ow + xi];
                    CHECK(gotv == doctest::Approx(acc).epsilon(1e-10));
                }
            }
        }
    }
}

TEST_CASE("composite layer gradients match finite differences") {
    std::mt19937_64 rng(23);

    SUBCASE("conv2d w.r.t. input and weights") {
        int n = 2, c = 2, h = 4, w = 4, o = 3, k = 3;
        auto wv = random_vec(static_cast<size_t>(o) * c * k * k, rng);
        auto bv = random_vec(static_cast<size_t>(o), rng);
        auto build = [&](Tape& t, Var a) {
            Var wt = t.constant({o, c * k * k}, wv);
            Var b = t.constant({o}, bv);
            Var y = conv2d(a, wt, b, ConvGeom{c, h, w, k, 2, 1});
            return sum_all(mul(y, y));
        };
        check_grad(build, {n, c, h, w}, random_vec(static_cast<size_t>(n) * c * h * w, rng));

        auto xv = random_vec(static_cast<size_t>(n) * c * h * w, rng);
        auto build_w = [&](Tape& t, Var wt) {
            Var x = t.constant({n, c, h, w}, xv);
            Var b = t.constant({o}, bv);
            Var y = conv2d(x, wt, b, ConvGeom{c, h, w, k, 2, 1});
            return sum_all(mul(y, y));
        };
        check_grad(build_w, {o, c * k * k}, wv);
    }

    SUBCASE("grouped conv (depthwise)") {
        int n = 2, c = 4, h = 4, w = 4, k = 3;
        auto wv = random_vec(static_cast<size_t>(c) * k * k, rng);
        auto build = [&](Tape& t, Var a) {
            Var wt = t.constant({c, 1 * k * k}, wv);
            Var y = conv2d(a, wt, Var{}, ConvGeom{c, h, w, k, 1, 1}, c);
            return sum_all(mul(y, y));
        };
        check_grad(build, {n, c, h, w}, random_vec(static_cast<size_t>(n) * c * h * w, rng));
    }

    SUBCASE("instance norm") {
        int n = 2, c = 3, h = 3, w = 3;
        auto build = [&](Tape& t, Var a) {
            Var gamma = t.constant({c}, {1.1, 0.9, 1.3});
            Var beta = t.constant({c}, {0.1, -0.2, 0.0});
            Var y = instance_norm(a, gamma, beta);
            return sum_all(mul(y, y));
        };
        check_grad(build, {n, c, h, w}, random_vec(static_cast<size_t>(n) * c * h * w, rng), 1e-5);
    }

    SUBCASE("pooling") {
        int n = 2, c = 2, h = 4, w = 4;
        auto x = random_vec(static_cast<size_t>(n) * c * h * w, rng);
        check_grad([](Tape& t, Var a) { return sum_all(mul(avg_pool2(a), avg_pool2(a))); },
                   {n, c, h, w}, x);
        check_grad([](Tape& t, Var a) { return sum_all(mul(max_pool2(a), max_pool2(a))); },
                   {n, c, h, w}, x);
    }
}

TEST_CASE("second-order gradients (gradient of a gradient) are exact") {
    // phi(x) = sum_i g_i(x)^2 where g = d/dx [ sum(relu(Wx)^2) ]. The FD oracle
    // differentiates phi numerically; the engine differentiates its own
    // backward pass. This is the mechanism the distillers rely on.
    std::mt19937_64 rng(31);
    std::vector<double> wv = random_vec(12, rng);

    auto inner_grad = [&](Tape& t, Var x) {
        Var w = t.constant({3, 4}, wv);
        Var y = matmul(w, x);  // {3,1}
        Var loss = sum_all(mul(relu(y), relu(y)));
        return t.gradients(loss, {x})[0];
    };
    auto phi = [&](Tape& t, Var x) {
        Var g = inner_grad(t, x);
        return sum_all(mul(g, g));
    };

    for (int trial = 0; trial < 5; ++trial) {
        auto xv = random_vec(4, rng);
        check_grad(phi, {4, 1}, xv, 1e-5);
    }
}

TEST_CASE("gradient through an unrolled sgd step") {
    // theta' = theta - lr * dL/dtheta; final loss is ||theta' - target||^2.
    // Differentiates w.r.t. the data x that produced the inner gradient.
    std::mt19937_64 rng(37);
    std::vector<double> theta0 = random_vec(4, rng);
    std::vector<double> target = random_vec(4, rng);

    auto build = [&](Tape& t, Var x) {
        Var theta = t.constant({4, 1}, theta0);
        Var tgt = t.constant({4, 1}, target);
        for (int step = 0; step < 3; ++step) {
            Var pred = matmul(transpose(x), theta);  // x {4,1} -> scalar-ish {1,1}
            Var inner = sum_all(mul(pred, pred));
            Var g = t.gradients(inner, {theta})[0];
            theta = sub(theta, scale(g, 0.05));
        }
        Var diff = sub(theta, tgt);
        return sum_all(mul(diff, diff));
    };
    check_grad(build, {4, 1}, random_vec(4, rng), 1e-5);
}

TEST_CASE("bilinear resize maps preserve patch means at factor 2") {
    std::mt19937_64 rng(41);
    auto m = bilinear_resize_map(8, 8, 16, 16);
    Tape t;
    auto xv = random_vec(64, rng, 0.0, 1.0);
    Var x = t.leaf({8, 8}, xv);
    auto up = apply_map(x, m, {16, 16}).val();
    double mean_in = 0.0, mean_out = 0.0;
    for (double v : xv) mean_in += v;
    for (double v : up) mean_out += v;
    CHECK(mean_in / 64.0 == doctest::Approx(mean_out / 256.0).epsilon(1e-9));
}
