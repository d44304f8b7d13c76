#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ddrb/attacks.hpp"

using namespace ddrb;
using namespace ddrb::attacks;
using models::Classifier;

namespace {

Tensor random_batch(int n, int c, int h, int w, uint64_t seed, double lo = 0.1, double hi = 0.9) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t;
    t.shape = {n, c, h, w};
    t.data.resize(static_cast<size_t>(n) * c * h * w);
    for (double& v : t.data) v = dist(rng);
    return t;
}

Classifier small_model(int classes = 4, uint64_t seed = 11) {
    models::ArchitectureSpec s;
    s.family = models::Family::convnet;
    s.depth = 3;
    s.width = 4;
    s.class_count = classes;
    s.in_channels = 3;
    s.in_h = 16;
    s.in_w = 16;
    return models::build_model(s, seed);
}

std::vector<uint16_t> fake_labels(int n, int k, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<uint16_t> y(static_cast<size_t>(n));
    for (auto& v : y) v = static_cast<uint16_t>(rng() % k);
    return y;
}

double linf(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

double robust_acc(const Classifier& m, const Tensor& images, const std::vector<uint16_t>& labels) {
    Tensor logits = models::forward(m, images);
    int k = logits.shape[1], hits = 0;
    for (int i = 0; i < logits.shape[0]; ++i) {
        const double* row = logits.data.data() + static_cast<size_t>(i) * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (row[j] > row[best]) best = j;
        if (best == labels[static_cast<size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / logits.shape[0];
}

}  // namespace

TEST_CASE("linf projection") {
    Tensor x({1, 1, 1, 3}, {0.9, 0.98, 0.5});
    SUBCASE("inside the ball is untouched") {
        Tensor adv({1, 1, 1, 3}, {0.92, 0.96, 0.5});
        Tensor out = project_linf(adv, x, 0.05);
        CHECK(out.data == adv.data);
    }
    SUBCASE("epsilon binds") {
        Tensor adv({1, 1, 1, 3}, {0.99, 0.98, 0.5});
        CHECK(project_linf(adv, x, 0.05).data[0] == doctest::Approx(0.95));
    }
    SUBCASE("pixel range binds before epsilon") {
        Tensor adv({1, 1, 1, 3}, {0.9, 1.2, 0.5});
        CHECK(project_linf(adv, x, 0.05).data[1] == 1.0);
    }
    SUBCASE("shape mismatch") {
        Tensor adv({1, 1, 1, 2}, {0.9, 0.9});
        CHECK_THROWS_AS(project_linf(adv, x, 0.05), ArgumentError);
    }
}

TEST_CASE("zero budget leaves every attack at the clean input, bitwise") {
    Classifier m = small_model();
    Tensor batch = random_batch(3, 3, 16, 16, 5);
    auto labels = fake_labels(3, 4, 6);
    AttackConfig cfg;
    cfg.epsilon = 0.0;
    cfg.iterations = 3;
    cfg.vm_samples = 2;
    cfg.square_queries = 10;
    cfg.seed = 9;

    cfg.random_start = true;
    CHECK(pgd(m, batch, labels, cfg).images.data == batch.data);
    cfg.random_start = false;
    CHECK(fgsm(m, batch, labels, cfg).images.data == batch.data);
    CHECK(cw_linf(m, batch, labels, cfg).images.data == batch.data);
    CHECK(vmifgsm(m, batch, labels, cfg).images.data == batch.data);
    CHECK(jitter(m, batch, labels, cfg).images.data == batch.data);
    CHECK(apgd(m, batch, labels, models::LossKind::ce, cfg).images.data == batch.data);
    CHECK(apgd_targeted_dlr(m, batch, labels, cfg).images.data == batch.data);
    CHECK(square_attack(m, batch, labels, cfg).images.data == batch.data);
    CHECK(autoattack_lite(m, batch, labels, cfg).images.data == batch.data);
}

TEST_CASE("every attack respects the budget and the pixel range") {
    Classifier m = small_model();
    Tensor batch = random_batch(4, 3, 16, 16, 15, 0.0, 1.0);
    auto labels = fake_labels(4, 4, 16);
    AttackConfig cfg;
    cfg.epsilon = 4.0 / 255.0;
    cfg.iterations = 4;
    cfg.vm_samples = 2;
    cfg.square_queries = 30;
    cfg.random_start = true;
    cfg.seed = 3;

    auto check = [&](const AdversarialBatch& out) {
        CHECK(linf(out.images, batch) <= cfg.epsilon + 1e-6);
        for (double v : out.images.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(out.base.data == batch.data);
    };
    check(fgsm(m, batch, labels, cfg));
    check(pgd(m, batch, labels, cfg));
    check(cw_linf(m, batch, labels, cfg));
    check(vmifgsm(m, batch, labels, cfg));
    check(jitter(m, batch, labels, cfg));
    check(apgd(m, batch, labels, models::LossKind::ce, cfg));
    check(apgd_targeted_dlr(m, batch, labels, cfg));
    check(square_attack(m, batch, labels, cfg));
    check(autoattack_lite(m, batch, labels, cfg));
}

TEST_CASE("fgsm equals single-step pgd without random start") {
    Classifier m = small_model();
    Tensor batch = random_batch(3, 3, 16, 16, 25);
    auto labels = fake_labels(3, 4, 26);
    AttackConfig f;
    f.kind = AttackKind::fgsm;
    f.epsilon = 8.0 / 255.0;
    AttackConfig p;
    p.kind = AttackKind::pgd;
    p.epsilon = f.epsilon;
    p.iterations = 1;
    p.step_size = f.epsilon;
    p.random_start = false;
    Tensor a = fgsm(m, batch, labels, f).images;
    Tensor b = pgd(m, batch, labels, p).images;
    CHECK(a.data == b.data);
}

TEST_CASE("fgsm closed form on a one-pixel linear model") {
    // logits = [w*x, 0], w = -3, label 0: dCE/dx = -(1 - sigma(w x)) w > 0,
    // so the attack moves the pixel up by exactly epsilon.
    double w = -3.0, x0 = 0.5, eps = 2.0 / 255.0;
    ag::Tape tape;
    ag::Var x = tape.leaf({1, 1}, {x0});
    ag::Var z0 = ag::scale(x, w);
    ag::Var z = ag::matmul(x, tape.constant({1, 2}, {w, 0.0}));  // [w*x, 0]
    (void)z0;
    ag::Var loss = models::loss_ce_graph(z, {0});
    double g = tape.gradients(loss, {x})[0].val()[0];

    double sigma = 1.0 / (1.0 + std::exp(-w * x0));
    CHECK(g == doctest::Approx(-(1.0 - sigma) * w).epsilon(1e-10));
    CHECK(g > 0.0);

    double x_adv = std::clamp(x0 + eps * (g > 0 ? 1.0 : -1.0), 0.0, 1.0);
    CHECK(x_adv == doctest::Approx(0.5 + 2.0 / 255.0));
}

TEST_CASE("attacks are deterministic in the seed") {
    Classifier m = small_model();
    Tensor batch = random_batch(3, 3, 16, 16, 35);
    auto labels = fake_labels(3, 4, 36);
    AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.iterations = 3;
    cfg.random_start = true;
    cfg.vm_samples = 2;
    cfg.square_queries = 25;
    cfg.seed = 77;

    CHECK(pgd(m, batch, labels, cfg).images.data == pgd(m, batch, labels, cfg).images.data);
    CHECK(vmifgsm(m, batch, labels, cfg).images.data ==
          vmifgsm(m, batch, labels, cfg).images.data);
    CHECK(square_attack(m, batch, labels, cfg).images.data ==
          square_attack(m, batch, labels, cfg).images.data);
    CHECK(jitter(m, batch, labels, cfg).images.data == jitter(m, batch, labels, cfg).images.data);

    AttackConfig other = cfg;
    other.seed = 78;
    CHECK(pgd(m, batch, labels, cfg).images.data != pgd(m, batch, labels, other).images.data);
}

TEST_CASE("per-sample streams make results independent of batch tail") {
    Classifier m = small_model();
    Tensor big = random_batch(4, 3, 16, 16, 45);
    auto labels_big = fake_labels(4, 4, 46);
    Tensor small;
    small.shape = {2, 3, 16, 16};
    small.data.assign(big.data.begin(), big.data.begin() + 2 * 3 * 16 * 16);
    std::vector<uint16_t> labels_small(labels_big.begin(), labels_big.begin() + 2);

    AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.iterations = 3;
    cfg.random_start = true;
    cfg.vm_samples = 2;
    cfg.square_queries = 25;
    cfg.seed = 5;

    auto prefix_equal = [&](const Tensor& a, const Tensor& b) {
        for (size_t i = 0; i < b.data.size(); ++i)
            if (a.data[i] != b.data[i]) return false;
        return true;
    };
    CHECK(prefix_equal(pgd(m, big, labels_big, cfg).images, pgd(m, small, labels_small, cfg).images));
    CHECK(prefix_equal(vmifgsm(m, big, labels_big, cfg).images,
                       vmifgsm(m, small, labels_small, cfg).images));
    CHECK(prefix_equal(square_attack(m, big, labels_big, cfg).images,
                       square_attack(m, small, labels_small, cfg).images));
    CHECK(prefix_equal(apgd(m, big, labels_big, models::LossKind::ce, cfg).images,
                       apgd(m, small, labels_small, models::LossKind::ce, cfg).images));
}

TEST_CASE("vmifgsm with one zero-radius neighbor is momentum ifgsm") {
    Classifier m = small_model();
    Tensor batch = random_batch(2, 3, 16, 16, 55);
    auto labels = fake_labels(2, 4, 56);
    AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.iterations = 4;
    cfg.vm_samples = 1;
    cfg.vm_beta = 0.0;
    cfg.vm_momentum = 1.0;
    Tensor got = vmifgsm(m, batch, labels, cfg).images;

    // hand-rolled momentum-IFGSM oracle
    cfg = normalized(cfg);
    int n = 2;
    int64_t per = batch.numel() / n;
    Tensor x = batch;
    std::vector<double> mom(batch.data.size(), 0.0);
    for (int t = 0; t < cfg.iterations; ++t) {
        Tensor g = models::input_gradient(m, x, labels, models::LossKind::ce, {});
        for (int i = 0; i < n; ++i) {
            size_t off = static_cast<size_t>(i) * per;
            double l1 = 0.0;
            for (int64_t j = 0; j < per; ++j) l1 += std::abs(g.data[off + j] + 0.0);
            l1 += 1e-12;
            for (int64_t j = 0; j < per; ++j)
                mom[off + j] = cfg.vm_momentum * mom[off + j] + (g.data[off + j] + 0.0) / l1;
        }
        for (size_t j = 0; j < x.data.size(); ++j)
            x.data[j] += cfg.step_size * (mom[j] > 0 ? 1.0 : (mom[j] < 0 ? -1.0 : 0.0));
        x = project_linf(x, batch, cfg.epsilon);
    }
    CHECK(got.data == x.data);
}

TEST_CASE("composite never beats its strongest component") {
    Classifier m = small_model(4, 99);
    Tensor batch = random_batch(12, 3, 16, 16, 65);
    auto labels = fake_labels(12, 4, 66);
    AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.iterations = 5;
    cfg.square_queries = 40;
    cfg.seed = 21;

    double ra_ce = robust_acc(m, apgd(m, batch, labels, models::LossKind::ce, cfg).images, labels);
    double ra_dlr = robust_acc(m, apgd_targeted_dlr(m, batch, labels, cfg).images, labels);
    double ra_sq = robust_acc(m, square_attack(m, batch, labels, cfg).images, labels);
    double ra_aa = robust_acc(m, autoattack_lite(m, batch, labels, cfg).images, labels);
    CHECK(ra_aa <= std::min({ra_ce, ra_dlr, ra_sq}) + 1e-12);
}

TEST_CASE("config validation") {
    Classifier m = small_model();
    Tensor batch = random_batch(1, 3, 16, 16, 75);
    std::vector<uint16_t> labels{0};

    AttackConfig cfg;
    cfg.epsilon = 1.5;
    CHECK_THROWS_AS(pgd(m, batch, labels, cfg), ArgumentError);
    cfg = {};
    cfg.iterations = 0;
    CHECK_THROWS_AS(pgd(m, batch, labels, cfg), ArgumentError);
    cfg = {};
    cfg.vm_samples = 0;
    CHECK_THROWS_AS(vmifgsm(m, batch, labels, cfg), ArgumentError);
    cfg = {};
    cfg.square_queries = 0;
    CHECK_THROWS_AS(autoattack_lite(m, batch, labels, cfg), ArgumentError);

    std::vector<uint16_t> bad{9};
    cfg = {};
    CHECK_THROWS_AS(pgd(m, batch, bad, cfg), ArgumentError);

    CHECK(kind_from_name("vmifgsm") == AttackKind::vmifgsm);
    CHECK(kind_name(AttackKind::autoattack) == "autoattack");
    CHECK_THROWS_AS(kind_from_name("deepfool"), ArgumentError);

    // dispatcher reaches each kind
    cfg = {};
    cfg.epsilon = 0.0;
    cfg.kind = AttackKind::jitter;
    CHECK(run_attack(m, batch, labels, cfg).images.data == batch.data);
    cfg.kind = AttackKind::autoattack;
    CHECK(run_attack(m, batch, labels, cfg).images.data == batch.data);
}
