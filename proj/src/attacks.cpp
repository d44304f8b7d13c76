#include "ddrb/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ddrb::attacks {

namespace {

using models::Classifier;
namespace mo = models;

const char* names[] = {"fgsm", "pgd", "cw", "vmifgsm", "jitter", "autoattack"};

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::vector<ag::Var> param_constants(ag::Tape& tape, const Classifier& model) {
    std::vector<ag::Var> vars;
    vars.reserve(model.params.size());
    for (const auto& p : model.params) vars.push_back(tape.constant(p.value.shape, p.value.data));
    return vars;
}

// ---- per-sample loss surfaces ----
// Each attack maximizes a loss; `rows` gives the per-sample value (for best
// tracking) and the graph builder gives d(mean)/dx in the same geometry.

enum class Surface { ce, cw, dlr, dlr_targeted, jitter };

struct Extra {
    double kappa = 0.0;
    const std::vector<int>* targets = nullptr;       // dlr_targeted
    double jitter_scale = 10.0;
    const std::vector<double>* noise = nullptr;      // jitter, n*k row-major
};

std::vector<double> onehot_rows(int n, int k, const std::vector<uint16_t>& labels, double on) {
    std::vector<double> v(static_cast<size_t>(n) * k, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * k + labels[static_cast<size_t>(i)]] = on;
    return v;
}

// top-k logit indices per row, excluding nothing
void top_indices(const double* row, int k, int& i1, int& i3, int& i4) {
    i1 = 0;
    for (int j = 1; j < k; ++j)
        if (row[j] > row[i1]) i1 = j;
    int i2 = -1;
    for (int j = 0; j < k; ++j)
        if (j != i1 && (i2 < 0 || row[j] > row[i2])) i2 = j;
    i3 = -1;
    for (int j = 0; j < k; ++j)
        if (j != i1 && j != i2 && (i3 < 0 || row[j] > row[i3])) i3 = j;
    i4 = -1;
    for (int j = 0; j < k; ++j)
        if (j != i1 && j != i2 && j != i3 && (i4 < 0 || row[j] > row[i4])) i4 = j;
}

double row_margin(const double* row, int k, int y) {
    double other = -1e300;
    for (int j = 0; j < k; ++j)
        if (j != y) other = std::max(other, row[j]);
    return row[y] - other;
}

std::vector<double> surface_rows(const std::vector<double>& logits, int n, int k,
                                 const std::vector<uint16_t>& labels, Surface which,
                                 const Extra& e) {
    std::vector<double> rows(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<size_t>(i) * k;
        int y = labels[static_cast<size_t>(i)];
        switch (which) {
            case Surface::ce: {
                double mx = *std::max_element(row, row + k), s = 0.0;
                for (int j = 0; j < k; ++j) s += std::exp(row[j] - mx);
                rows[i] = -(row[y] - mx - std::log(s));
                break;
            }
            case Surface::cw:
                rows[i] = -std::max(row_margin(row, k, y), -e.kappa);
                break;
            case Surface::dlr: {
                int i1, i3, i4;
                top_indices(row, k, i1, i3, i4);
                double other = -1e300;
                for (int j = 0; j < k; ++j)
                    if (j != y) other = std::max(other, row[j]);
                rows[i] = -(row[y] - other) / (row[i1] - row[i3] + 1e-12);
                break;
            }
            case Surface::dlr_targeted: {
                int i1, i3, i4;
                top_indices(row, k, i1, i3, i4);
                int t = (*e.targets)[static_cast<size_t>(i)];
                double den = (i4 >= 0) ? row[i1] - 0.5 * (row[i3] + row[i4])
                                       : row[i1] - row[i3];
                rows[i] = -(row[y] - row[t]) / (den + 1e-12);
                break;
            }
            case Surface::jitter: {
                double linf = 0.0;
                for (int j = 0; j < k; ++j) linf = std::max(linf, std::abs(row[j]));
                linf += 1e-12;
                double mx = -1e300;
                for (int j = 0; j < k; ++j) mx = std::max(mx, e.jitter_scale * row[j] / linf);
                double s = 0.0;
                for (int j = 0; j < k; ++j) s += std::exp(e.jitter_scale * row[j] / linf - mx);
                double acc = 0.0;
                for (int j = 0; j < k; ++j) {
                    double p = std::exp(e.jitter_scale * row[j] / linf - mx) / s;
                    double d = p - (j == y ? 1.0 : 0.0);
                    if (e.noise) d -= (*e.noise)[static_cast<size_t>(i) * k + j];
                    acc += d * d;
                }
                rows[i] = acc / k;
                break;
            }
        }
    }
    return rows;
}

ag::Var surface_graph(ag::Var logits, const std::vector<uint16_t>& labels, Surface which,
                      const Extra& e) {
    int n = logits.shape()[0], k = logits.shape()[1];
    ag::Tape& t = *logits.tape;
    switch (which) {
        case Surface::ce: return mo::loss_ce_graph(logits, labels);
        case Surface::cw: return ag::scale(mo::cw_margin_graph(logits, labels, e.kappa), -1.0);
        case Surface::dlr: return mo::dlr_graph(logits, labels);
        case Surface::dlr_targeted: {
            const auto& z = logits.val();
            std::vector<double> top1(static_cast<size_t>(n) * k, 0.0), den3(top1), tgt(top1);
            for (int i = 0; i < n; ++i) {
                const double* row = z.data() + static_cast<size_t>(i) * k;
                int i1, i3, i4;
                top_indices(row, k, i1, i3, i4);
                top1[static_cast<size_t>(i) * k + i1] = 1.0;
                if (i4 >= 0) {
                    den3[static_cast<size_t>(i) * k + i3] = 0.5;
                    den3[static_cast<size_t>(i) * k + i4] = 0.5;
                } else {
                    den3[static_cast<size_t>(i) * k + i3] = 1.0;
                }
                tgt[static_cast<size_t>(i) * k + (*e.targets)[static_cast<size_t>(i)]] = 1.0;
            }
            ag::Var zy = ag::row_sum(ag::mul(logits, t.constant({n, k}, onehot_rows(n, k, labels, 1.0))));
            ag::Var zt = ag::row_sum(ag::mul(logits, t.constant({n, k}, std::move(tgt))));
            ag::Var z1 = ag::row_sum(ag::mul(logits, t.constant({n, k}, std::move(top1))));
            ag::Var zd = ag::row_sum(ag::mul(logits, t.constant({n, k}, std::move(den3))));
            ag::Var den = ag::add_scalar(ag::sub(z1, zd), 1e-12);
            ag::Var per = ag::neg(ag::div_(ag::sub(zy, zt), den));
            return ag::scale(ag::sum_all(per), 1.0 / n);
        }
        case Surface::jitter: {
            ag::Var linf = ag::add_scalar(ag::row_max(ag::abs_(logits)), 1e-12);
            ag::Var zn = ag::div_(logits, ag::broadcast_cols(linf, k));
            ag::Var p = ag::softmax_rows(ag::scale(zn, e.jitter_scale));
            ag::Var diff = ag::sub(p, t.constant({n, k}, onehot_rows(n, k, labels, 1.0)));
            if (e.noise) diff = ag::sub(diff, t.constant({n, k}, *e.noise));
            return ag::scale(ag::sum_all(ag::mul(diff, diff)), 1.0 / (static_cast<double>(n) * k));
        }
    }
    throw ArgumentError("bad attack surface");
}

struct EvalOut {
    Tensor grad;                 // d(mean loss)/dx
    std::vector<double> rows;    // per-sample loss
    std::vector<double> logits;  // n*k
};

EvalOut eval_surface(const Classifier& model, const Tensor& x, const std::vector<uint16_t>& labels,
                     Surface which, const Extra& e, bool need_grad = true) {
    ag::Tape tape;
    ag::Var xv = need_grad ? tape.leaf(x.shape, x.data) : tape.constant(x.shape, x.data);
    auto out = mo::forward_graph(tape, model.spec, xv, param_constants(tape, model));
    EvalOut r;
    r.logits = out.logits.val();
    int n = x.shape[0], k = out.logits.shape()[1];
    r.rows = surface_rows(r.logits, n, k, labels, which, e);
    if (need_grad) {
        ag::Var loss = surface_graph(out.logits, labels, which, e);
        ag::Var g = tape.gradients(loss, {xv})[0];
        r.grad = Tensor{g.shape(), g.val()};
    }
    return r;
}

// ---- shared plumbing ----

void check_inputs(const Classifier& model, const Tensor& batch,
                  const std::vector<uint16_t>& labels) {
    if (batch.shape.size() != 4) throw ArgumentError("attack: batch must be {n,c,h,w}");
    if (static_cast<int>(labels.size()) != batch.shape[0])
        throw ArgumentError("attack: label count does not match batch");
    for (uint16_t y : labels)
        if (y >= model.spec.class_count) throw ArgumentError("attack: label out of range");
}

AdversarialBatch finalize(Tensor images, const Tensor& base, const AttackConfig& cfg) {
    for (size_t i = 0; i < images.data.size(); ++i) {
        double d = std::abs(images.data[i] - base.data[i]);
        if (d > cfg.epsilon + 1e-6 || images.data[i] < 0.0 || images.data[i] > 1.0)
            throw TrainingError("attack produced an out-of-budget image");
    }
    return AdversarialBatch{std::move(images), base, cfg};
}

std::vector<int> iota_ids(int n) {
    std::vector<int> ids(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = i;
    return ids;
}

Tensor random_start_point(const Tensor& batch, const AttackConfig& cfg,
                          const std::vector<int>& ids) {
    Tensor x = batch;
    int n = batch.shape[0];
    int64_t per = batch.numel() / n;
    for (int i = 0; i < n; ++i) {
        std::mt19937_64 rng(mix_seed(mix_seed(cfg.seed, "random-start"),
                                     static_cast<uint64_t>(ids[static_cast<size_t>(i)])));
        std::uniform_real_distribution<double> dist(-cfg.epsilon, cfg.epsilon);
        double* row = x.data.data() + static_cast<size_t>(i) * per;
        for (int64_t j = 0; j < per; ++j) row[j] += dist(rng);
    }
    return project_linf(x, batch, cfg.epsilon);
}

// plain projected sign ascent on one surface; fgsm/pgd/cw/jitter all live here
Tensor sign_ascent(const Classifier& model, const Tensor& batch,
                   const std::vector<uint16_t>& labels, const AttackConfig& cfg, Surface which,
                   Extra extra, const std::vector<int>& ids) {
    int n = batch.shape[0], k = model.spec.class_count;
    Tensor x = cfg.random_start ? random_start_point(batch, cfg, ids) : batch;
    std::vector<double> noise;
    for (int t = 0; t < cfg.iterations; ++t) {
        if (which == Surface::jitter && cfg.jitter_noise_std > 0.0) {
            noise.resize(static_cast<size_t>(n) * k);
            for (int i = 0; i < n; ++i) {
                std::mt19937_64 rng(mix_seed(mix_seed(cfg.seed, "jitter-noise"),
                                             static_cast<uint64_t>(ids[static_cast<size_t>(i)]),
                                             static_cast<uint64_t>(t)));
                std::normal_distribution<double> dist(0.0, cfg.jitter_noise_std);
                for (int j = 0; j < k; ++j) noise[static_cast<size_t>(i) * k + j] = dist(rng);
            }
            extra.noise = &noise;
        }
        EvalOut ev = eval_surface(model, x, labels, which, extra);
        for (size_t j = 0; j < x.data.size(); ++j)
            x.data[j] += cfg.step_size * sgn(ev.grad.data[j]);
        x = project_linf(x, batch, cfg.epsilon);
    }
    return x;
}

int arg_max(const double* row, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

// APGD checkpoint schedule (fractions of the iteration budget)
std::vector<int> apgd_checkpoints(int T) {
    std::vector<double> p{0.0, 0.22};
    while (p.back() < 1.0) {
        double step = std::max(p[p.size() - 1] - p[p.size() - 2] - 0.03, 0.06);
        p.push_back(p.back() + step);
    }
    std::vector<int> w;
    for (double v : p) w.push_back(static_cast<int>(std::ceil(std::min(v, 1.0) * T)));
    w.erase(std::unique(w.begin(), w.end()), w.end());
    return w;
}

Tensor apgd_core(const Classifier& model, const Tensor& batch,
                 const std::vector<uint16_t>& labels, Surface which, const Extra& extra,
                 const AttackConfig& cfg, const std::vector<int>& ids) {
    (void)ids;
    int n = batch.shape[0], k = model.spec.class_count;
    int64_t per = batch.numel() / n;
    int T = cfg.iterations;
    const double rho = 0.75, beta = 0.75;

    Tensor x_prev = batch;
    EvalOut e0 = eval_surface(model, batch, labels, which, extra);
    std::vector<double> eta(static_cast<size_t>(n), 2.0 * cfg.epsilon);

    Tensor x_cur = batch;
    for (int i = 0; i < n; ++i) {
        double* row = x_cur.data.data() + static_cast<size_t>(i) * per;
        const double* g = e0.grad.data.data() + static_cast<size_t>(i) * per;
        for (int64_t j = 0; j < per; ++j) row[j] += eta[static_cast<size_t>(i)] * sgn(g[j]);
    }
    x_cur = project_linf(x_cur, batch, cfg.epsilon);

    Tensor best_x = batch;
    std::vector<double> best_f = e0.rows;
    Tensor success_x = batch;
    std::vector<char> succeeded(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i)
        if (arg_max(e0.logits.data() + static_cast<size_t>(i) * k, k) !=
            labels[static_cast<size_t>(i)]) {
            succeeded[static_cast<size_t>(i)] = 1;  // clean point already wrong
        }

    std::vector<double> prev_rows = e0.rows;
    std::vector<int> improved(static_cast<size_t>(n), 0);
    std::vector<double> ckpt_best = best_f, ckpt_eta = eta;
    std::vector<int> ckpts = apgd_checkpoints(T);
    size_t next_ckpt = 1;  // ckpts[0] == 0

    for (int t = 1; t <= T; ++t) {
        EvalOut ev = eval_surface(model, x_cur, labels, which, extra, t < T);
        for (int i = 0; i < n; ++i) {
            size_t si = static_cast<size_t>(i);
            if (ev.rows[si] > prev_rows[si]) ++improved[si];
            if (ev.rows[si] > best_f[si]) {
                best_f[si] = ev.rows[si];
                std::copy_n(x_cur.data.begin() + static_cast<int64_t>(si) * per, per,
                            best_x.data.begin() + static_cast<int64_t>(si) * per);
            }
            if (!succeeded[si] &&
                arg_max(ev.logits.data() + si * k, k) != labels[si]) {
                succeeded[si] = 1;
                std::copy_n(x_cur.data.begin() + static_cast<int64_t>(si) * per, per,
                            success_x.data.begin() + static_cast<int64_t>(si) * per);
            }
        }
        prev_rows = ev.rows;
        if (t == T) break;

        if (next_ckpt < ckpts.size() && t == ckpts[next_ckpt]) {
            int span = ckpts[next_ckpt] - ckpts[next_ckpt - 1];
            for (int i = 0; i < n; ++i) {
                size_t si = static_cast<size_t>(i);
                bool cond1 = improved[si] < rho * span;
                bool cond2 = ckpt_eta[si] == eta[si] && ckpt_best[si] == best_f[si];
                if (cond1 || cond2) {
                    eta[si] /= 2.0;
                    std::copy_n(best_x.data.begin() + static_cast<int64_t>(si) * per, per,
                                x_cur.data.begin() + static_cast<int64_t>(si) * per);
                    std::copy_n(best_x.data.begin() + static_cast<int64_t>(si) * per, per,
                                x_prev.data.begin() + static_cast<int64_t>(si) * per);
                }
                improved[si] = 0;
                ckpt_eta[si] = eta[si];
                ckpt_best[si] = best_f[si];
            }
            ++next_ckpt;
            // restarting from best invalidates the gradient at x_cur; re-evaluate
            ev = eval_surface(model, x_cur, labels, which, extra);
            prev_rows = ev.rows;
        }

        Tensor z = x_cur;
        for (int i = 0; i < n; ++i) {
            double* row = z.data.data() + static_cast<size_t>(i) * per;
            const double* g = ev.grad.data.data() + static_cast<size_t>(i) * per;
            for (int64_t j = 0; j < per; ++j) row[j] += eta[static_cast<size_t>(i)] * sgn(g[j]);
        }
        z = project_linf(z, batch, cfg.epsilon);
        Tensor xn = x_cur;
        for (size_t j = 0; j < xn.data.size(); ++j)
            xn.data[j] = x_cur.data[j] + beta * (z.data[j] - x_cur.data[j]) +
                         (1.0 - beta) * (x_cur.data[j] - x_prev.data[j]);
        xn = project_linf(xn, batch, cfg.epsilon);
        x_prev = x_cur;
        x_cur = xn;
    }

    Tensor out = best_x;
    for (int i = 0; i < n; ++i)
        if (succeeded[static_cast<size_t>(i)])
            std::copy_n(success_x.data.begin() + static_cast<int64_t>(i) * per, per,
                        out.data.begin() + static_cast<int64_t>(i) * per);
    return out;
}

std::vector<int> second_best_targets(const std::vector<double>& logits, int n, int k,
                                     const std::vector<uint16_t>& labels) {
    std::vector<int> t(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<size_t>(i) * k;
        int y = labels[static_cast<size_t>(i)], best = -1;
        for (int j = 0; j < k; ++j)
            if (j != y && (best < 0 || row[j] > row[best])) best = j;
        t[static_cast<size_t>(i)] = best;
    }
    return t;
}

Tensor square_core(const Classifier& model, const Tensor& batch,
                   const std::vector<uint16_t>& labels, const AttackConfig& cfg,
                   const std::vector<int>& ids) {
    int n = batch.shape[0], c = batch.shape[1], h = batch.shape[2], w = batch.shape[3];
    int k = model.spec.class_count;
    int64_t per = static_cast<int64_t>(c) * h * w;

    std::vector<std::mt19937_64> rngs;
    rngs.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        rngs.emplace_back(mix_seed(mix_seed(cfg.seed, "square-attack"),
                                   static_cast<uint64_t>(ids[static_cast<size_t>(i)])));

    // vertical +-eps stripes as the starting point
    Tensor cur = batch;
    for (int i = 0; i < n; ++i) {
        std::uniform_int_distribution<int> coin(0, 1);
        for (int ch = 0; ch < c; ++ch)
            for (int j = 0; j < w; ++j) {
                double d = coin(rngs[static_cast<size_t>(i)]) ? cfg.epsilon : -cfg.epsilon;
                for (int row = 0; row < h; ++row) {
                    size_t idx = ((static_cast<size_t>(i) * c + ch) * h + row) * w + j;
                    cur.data[idx] += d;
                }
            }
    }
    cur = project_linf(cur, batch, cfg.epsilon);

    auto margins_of = [&](const Tensor& imgs) {
        Tensor logits = mo::forward(model, imgs);
        std::vector<double> m(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
            m[static_cast<size_t>(i)] = row_margin(
                logits.data.data() + static_cast<size_t>(i) * k, k, labels[static_cast<size_t>(i)]);
        return m;
    };

    std::vector<double> cur_margin = margins_of(cur);
    auto active = [&](int i) { return cur_margin[static_cast<size_t>(i)] >= 0.0; };

    double p = 0.25;
    for (int q = 1; q <= cfg.square_queries; ++q) {
        double frac = static_cast<double>(q) / cfg.square_queries;
        double pq = p;
        if (frac > 0.25) pq /= 2.0;
        if (frac > 0.5) pq /= 2.0;
        if (frac > 0.75) pq /= 2.0;
        int side = std::max(1, static_cast<int>(std::lround(std::sqrt(pq * h * w))));
        side = std::min({side, h, w});

        bool any = false;
        Tensor cand = cur;
        for (int i = 0; i < n; ++i) {
            if (!active(i)) continue;
            any = true;
            auto& rng = rngs[static_cast<size_t>(i)];
            int top = std::uniform_int_distribution<int>(0, h - side)(rng);
            int left = std::uniform_int_distribution<int>(0, w - side)(rng);
            for (int ch = 0; ch < c; ++ch) {
                double d = std::uniform_int_distribution<int>(0, 1)(rng) ? cfg.epsilon
                                                                         : -cfg.epsilon;
                for (int yy = top; yy < top + side; ++yy)
                    for (int xx = left; xx < left + side; ++xx) {
                        size_t idx = ((static_cast<size_t>(i) * c + ch) * h + yy) * w + xx;
                        cand.data[idx] =
                            std::clamp(batch.data[idx] + d, 0.0, 1.0);
                    }
            }
        }
        if (!any) break;
        std::vector<double> cand_margin = margins_of(cand);
        for (int i = 0; i < n; ++i) {
            size_t si = static_cast<size_t>(i);
            if (!active(i)) continue;
            if (cand_margin[si] < cur_margin[si]) {
                std::copy_n(cand.data.begin() + static_cast<int64_t>(si) * per, per,
                            cur.data.begin() + static_cast<int64_t>(si) * per);
                cur_margin[si] = cand_margin[si];
            }
        }
    }
    return cur;
}

Tensor gather_rows(const Tensor& t, const std::vector<int>& rows) {
    int64_t per = t.numel() / t.shape[0];
    Tensor out;
    out.shape = t.shape;
    out.shape[0] = static_cast<int>(rows.size());
    out.data.reserve(static_cast<size_t>(per) * rows.size());
    for (int r : rows)
        out.data.insert(out.data.end(), t.data.begin() + r * per, t.data.begin() + (r + 1) * per);
    return out;
}

}  // namespace

std::string kind_name(AttackKind k) { return names[static_cast<int>(k)]; }

AttackKind kind_from_name(const std::string& name) {
    for (int i = 0; i < 6; ++i)
        if (name == names[i]) return static_cast<AttackKind>(i);
    throw ArgumentError("unknown attack '" + name +
                        "' (expected fgsm|pgd|cw|vmifgsm|jitter|autoattack)");
}

AttackConfig normalized(const AttackConfig& cfg) {
    AttackConfig c = cfg;
    if (c.epsilon < 0.0 || c.epsilon > 1.0) throw ArgumentError("epsilon must lie in [0,1]");
    if (c.kind == AttackKind::fgsm) {
        c.iterations = 1;
        c.random_start = false;
        if (c.step_size <= 0.0) c.step_size = c.epsilon;
    } else if (c.step_size <= 0.0) {
        c.step_size = c.epsilon / 4.0;
    }
    if (c.iterations < 1) throw ArgumentError("iterations must be at least 1");
    if (c.epsilon > 0.0 && c.step_size <= 0.0)
        throw ArgumentError("step size must be positive");
    if (c.kind == AttackKind::vmifgsm && c.vm_samples < 1)
        throw ArgumentError("vmifgsm needs vm_samples >= 1");
    if (c.kind == AttackKind::autoattack && c.square_queries <= 0)
        throw ArgumentError("square stage needs a positive query budget");
    return c;
}

Tensor project_linf(const Tensor& x_adv, const Tensor& x, double epsilon) {
    if (x_adv.shape != x.shape) throw ArgumentError("project_linf: shape mismatch");
    if (epsilon < 0.0) throw ArgumentError("project_linf: negative epsilon");
    Tensor out = x_adv;
    for (size_t i = 0; i < out.data.size(); ++i) {
        double lo = std::max(x.data[i] - epsilon, 0.0);
        double hi = std::min(x.data[i] + epsilon, 1.0);
        out.data[i] = std::clamp(out.data[i], lo, hi);
    }
    return out;
}

AdversarialBatch fgsm(const Classifier& model, const Tensor& batch,
                      const std::vector<uint16_t>& labels, const AttackConfig& cfg) {
    check_inputs(model, batch, labels);
    AttackConfig c = cfg;
    c.kind = AttackKind::fgsm;
    c = normalized(c);
    return finalize(sign_ascent(model, batch, labels, c, Surface::ce, {}, iota_ids(batch.shape[0])),
                    batch, c);
}

AdversarialBatch pgd(const Classifier& model, const Tensor& batch,
                     const std::vector<uint16_t>& labels, const AttackConfig& cfg) {
    check_inputs(model, batch, labels);
    AttackConfig c = cfg;
    c.kind = AttackKind::pgd;
    c = normalized(c);
    return finalize(sign_ascent(model, batch, labels, c, Surface::ce, {}, iota_ids(batch.shape[0])),
                    batch, c);
}

AdversarialBatch cw_linf(const Classifier& model, const Tensor& batch,
                         const std::vector<uint16_t>& labels, const AttackConfig& cfg) {
    check_inputs(model, batch, labels);
    AttackConfig c = cfg;
    c.kind = AttackKind::cw;
    c = normalized(c);
    Extra e;
    e.kappa = c.kappa;
    return finalize(sign_ascent(model, batch, labels, c, Surface::cw, e, iota_ids(batch.shape[0])),
                    batch, c);
}

AdversarialBatch jitter(const Classifier& model, const Tensor& batch,
                        const std::vector<uint16_t>& labels, const AttackConfig& cfg) {
    check_inputs(model, batch, labels);
    AttackConfig c = cfg;
    c.kind = AttackKind::jitter;
    c = normalized(c);
    Extra e;
    e.jitter_scale = c.jitter_scale;
    return finalize(
        sign_ascent(model, batch, labels, c, Surface::jitter, e, iota_ids(batch.shape[0])), batch,
        c);
}

AdversarialBatch vmifgsm(const Classifier& model, const Tensor& batch,
                         const std::vector<uint16_t>& labels, const AttackConfig& cfg) {
    check_inputs(model, batch, labels);
    AttackConfig c = cfg;
    c.kind = AttackKind::vmifgsm;
    c = normalized(c);
    std::vector<int> ids = iota_ids(batch.shape[0]);

    int n = batch.shape[0];
    int64_t per = batch.numel() / n;
    Tensor x = c.random_start ? random_start_point(batch, c, ids) : batch;
    std::vector<double> momentum(batch.data.size(), 0.0), variance(batch.data.size(), 0.0);

    for (int t = 0; t < c.iterations; ++t) {
        EvalOut ev = eval_surface(model, x, labels, Surface::ce, {});
        // momentum on the variance-corrected, per-sample L1-normalized gradient
        for (int i = 0; i < n; ++i) {
            size_t off = static_cast<size_t>(i) * per;
            double l1 = 0.0;
            for (int64_t j = 0; j < per; ++j)
                l1 += std::abs(ev.grad.data[off + j] + variance[off + j]);
            l1 += 1e-12;
            for (int64_t j = 0; j < per; ++j)
                momentum[off + j] = c.vm_momentum * momentum[off + j] +
                                    (ev.grad.data[off + j] + variance[off + j]) / l1;
        }
        // variance for the next step: neighbor-averaged gradient minus this one
        std::vector<double> acc(batch.data.size(), 0.0);
        for (int s = 0; s < c.vm_samples; ++s) {
            Tensor xs = x;
            if (c.vm_beta > 0.0) {
                for (int i = 0; i < n; ++i) {
                    std::mt19937_64 rng(mix_seed(
                        mix_seed(mix_seed(c.seed, "vm-noise"),
                                 static_cast<uint64_t>(ids[static_cast<size_t>(i)]),
                                 static_cast<uint64_t>(t)),
                        static_cast<uint64_t>(s)));
                    std::uniform_real_distribution<double> dist(-c.vm_beta * c.epsilon,
                                                                c.vm_beta * c.epsilon);
                    double* row = xs.data.data() + static_cast<size_t>(i) * per;
                    for (int64_t j = 0; j < per; ++j) row[j] += dist(rng);
                }
            }
            EvalOut evn = eval_surface(model, xs, labels, Surface::ce, {});
            for (size_t j = 0; j < acc.size(); ++j) acc[j] += evn.grad.data[j];
        }
        for (size_t j = 0; j < acc.size(); ++j)
            variance[j] = acc[j] / c.vm_samples - ev.grad.data[j];

        for (size_t j = 0; j < x.data.size(); ++j) x.data[j] += c.step_size * sgn(momentum[j]);
        x = project_linf(x, batch, c.epsilon);
    }
    return finalize(std::move(x), batch, c);
}

AdversarialBatch apgd(const Classifier& model, const Tensor& batch,
                      const std::vector<uint16_t>& labels, models::LossKind loss_kind,
                      const AttackConfig& cfg) {
    check_inputs(model, batch, labels);
    AttackConfig c = normalized(cfg);
    Surface s;
    Extra e;
    switch (loss_kind) {
        case mo::LossKind::ce: s = Surface::ce; break;
        case mo::LossKind::dlr: s = Surface::dlr; break;
        case mo::LossKind::cw_margin:
            s = Surface::cw;
            e.kappa = c.kappa;
            break;
        default: throw ArgumentError("apgd supports ce, dlr or cw_margin losses");
    }
    return finalize(apgd_core(model, batch, labels, s, e, c, iota_ids(batch.shape[0])), batch, c);
}

AdversarialBatch apgd_targeted_dlr(const Classifier& model, const Tensor& batch,
                                   const std::vector<uint16_t>& labels, const AttackConfig& cfg) {
    check_inputs(model, batch, labels);
    if (model.spec.class_count < 3) throw ArgumentError("dlr needs at least 3 classes");
    AttackConfig c = normalized(cfg);
    Tensor logits = mo::forward(model, batch);
    std::vector<int> targets =
        second_best_targets(logits.data, batch.shape[0], model.spec.class_count, labels);
    Extra e;
    e.targets = &targets;
    return finalize(
        apgd_core(model, batch, labels, Surface::dlr_targeted, e, c, iota_ids(batch.shape[0])),
        batch, c);
}

AdversarialBatch square_attack(const Classifier& model, const Tensor& batch,
                               const std::vector<uint16_t>& labels, const AttackConfig& cfg) {
    check_inputs(model, batch, labels);
    AttackConfig c = cfg;
    c.kind = AttackKind::autoattack;
    c = normalized(c);
    return finalize(square_core(model, batch, labels, c, iota_ids(batch.shape[0])), batch, c);
}

AdversarialBatch autoattack_lite(const Classifier& model, const Tensor& batch,
                                 const std::vector<uint16_t>& labels, const AttackConfig& cfg) {
    check_inputs(model, batch, labels);
    AttackConfig c = cfg;
    c.kind = AttackKind::autoattack;
    c = normalized(c);
    int n = batch.shape[0], k = model.spec.class_count;
    int64_t per = batch.numel() / n;

    Tensor final_images = batch;
    Tensor logits = mo::forward(model, batch);
    std::vector<int> active;
    for (int i = 0; i < n; ++i)
        if (arg_max(logits.data.data() + static_cast<size_t>(i) * k, k) ==
            labels[static_cast<size_t>(i)])
            active.push_back(i);

    auto run_stage = [&](int stage) {
        if (active.empty()) return;
        Tensor sub = gather_rows(batch, active);
        std::vector<uint16_t> sub_labels;
        for (int i : active) sub_labels.push_back(labels[static_cast<size_t>(i)]);
        Tensor out;
        if (stage == 0) {
            out = apgd_core(model, sub, sub_labels, Surface::ce, {}, c, active);
        } else if (stage == 1) {
            if (k < 3) return;
            Tensor sub_logits = mo::forward(model, sub);
            std::vector<int> targets =
                second_best_targets(sub_logits.data, sub.shape[0], k, sub_labels);
            Extra e;
            e.targets = &targets;
            out = apgd_core(model, sub, sub_labels, Surface::dlr_targeted, e, c, active);
        } else {
            out = square_core(model, sub, sub_labels, c, active);
        }
        Tensor out_logits = mo::forward(model, out);
        std::vector<int> still;
        for (size_t r = 0; r < active.size(); ++r) {
            int i = active[r];
            if (arg_max(out_logits.data.data() + r * k, k) != labels[static_cast<size_t>(i)]) {
                std::copy_n(out.data.begin() + static_cast<int64_t>(r) * per, per,
                            final_images.data.begin() + static_cast<int64_t>(i) * per);
            } else {
                still.push_back(i);
            }
        }
        active = still;
    };
    for (int stage = 0; stage < 3; ++stage) run_stage(stage);
    return finalize(std::move(final_images), batch, c);
}

AdversarialBatch run_attack(const Classifier& model, const Tensor& batch,
                            const std::vector<uint16_t>& labels, const AttackConfig& cfg) {
    switch (cfg.kind) {
        case AttackKind::fgsm: return fgsm(model, batch, labels, cfg);
        case AttackKind::pgd: return pgd(model, batch, labels, cfg);
        case AttackKind::cw: return cw_linf(model, batch, labels, cfg);
        case AttackKind::vmifgsm: return vmifgsm(model, batch, labels, cfg);
        case AttackKind::jitter: return jitter(model, batch, labels, cfg);
        case AttackKind::autoattack: return autoattack_lite(model, batch, labels, cfg);
    }
    throw ArgumentError("bad attack kind");
}

}  // namespace ddrb::attacks
