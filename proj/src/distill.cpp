#include "ddrb/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <tuple>

#include "ddrb/serialize.hpp"

namespace ddrb::distill {

namespace {

constexpr double kInnerModelLr = 0.01;
constexpr double kExpertLr = 0.01;
constexpr int kExpertBatch = 64;
constexpr double kSgdMomentum = 0.5;
constexpr double kCosEps = 1e-6;
constexpr int kKmeansRestarts = 10;

struct Momentum {
    double lr = 0.0;
    std::vector<double> vel;

    Momentum(double lr_, size_t n) : lr(lr_), vel(n, 0.0) {}
    void step(std::vector<double>& x, const std::vector<double>& g) {
        for (size_t i = 0; i < x.size(); ++i) {
            vel[i] = kSgdMomentum * vel[i] + g[i];
            x[i] -= lr * vel[i];
        }
    }
};

void clamp01(std::vector<double>& x) {
    for (double& v : x) v = std::min(1.0, std::max(0.0, v));
}

void sgd_params(models::Classifier& model, const std::vector<NamedTensor>& grads,
                std::vector<std::vector<double>>& vel, double lr) {
    if (vel.size() != model.params.size()) vel.assign(model.params.size(), {});
    for (size_t i = 0; i < model.params.size(); ++i) {
        auto& p = model.params[i].value.data;
        const auto& g = grads[i].value.data;
        auto& v = vel[i];
        v.resize(p.size(), 0.0);
        for (size_t j = 0; j < p.size(); ++j) {
            v[j] = kSgdMomentum * v[j] + g[j];
            p[j] -= lr * v[j];
        }
    }
}

void apply_map_host(const ag::LinearMap& m, const double* in, double* out) {
    for (int64_t o = 0; o < m.out_size; ++o) {
        double acc = 0.0;
        for (int64_t t = m.offsets[static_cast<size_t>(o)]; t < m.offsets[static_cast<size_t>(o) + 1];
             ++t)
            acc += m.weight[static_cast<size_t>(t)] * in[m.index[static_cast<size_t>(t)]];
        out[o] = acc;
    }
}

// One map per stored image: channel c of an h x w image expands into factor^2
// upsampled patches, patch-major. Built from the shared bilinear taps so the
// decode convention matches bilinear_resize_map exactly.
ag::MapPtr decode_map(int c, int h, int w, int f) {
    static std::mutex mu;
    static std::map<std::tuple<int, int, int, int>, ag::MapPtr> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_tuple(c, h, w, f);
    auto hit = cache.find(key);
    if (hit != cache.end()) return hit->second;

    const int ph = h / f, pw = w / f;
    ag::MapPtr rs = ag::bilinear_resize_map(ph, pw, h, w);
    std::vector<std::tuple<int64_t, int64_t, double>> trips;
    trips.reserve(static_cast<size_t>(f) * f * c * rs->index.size());
    for (int p = 0; p < f * f; ++p) {
        const int py = p / f, px = p % f;
        for (int ch = 0; ch < c; ++ch) {
            const int64_t out_base = (static_cast<int64_t>(p) * c + ch) * h * w;
            const int64_t in_base = static_cast<int64_t>(ch) * h * w;
            for (int64_t o = 0; o < rs->out_size; ++o) {
                for (int64_t t = rs->offsets[static_cast<size_t>(o)];
                     t < rs->offsets[static_cast<size_t>(o) + 1]; ++t) {
                    const int64_t in_pix = rs->index[static_cast<size_t>(t)];
                    const int64_t u = in_pix / pw, v = in_pix % pw;
                    trips.emplace_back(out_base + o,
                                       in_base + (py * ph + u) * static_cast<int64_t>(w) +
                                           (px * pw + v),
                                       rs->weight[static_cast<size_t>(t)]);
                }
            }
        }
    }
    ag::MapPtr m = ag::make_map(static_cast<int64_t>(c) * h * w,
                                static_cast<int64_t>(f) * f * c * h * w, trips);
    cache.emplace(key, m);
    return m;
}

void check_factor(int factor, int h, int w) {
    if (factor < 1) throw ArgumentError("factor must be >= 1");
    if (factor > 1 && (h % factor != 0 || w % factor != 0))
        throw ArgumentError("resolution " + std::to_string(h) + "x" + std::to_string(w) +
                            " is not divisible by factor " + std::to_string(factor));
}

Tensor decode_host(const std::vector<double>& pix, int count, int c, int h, int w, int f) {
    if (f == 1) {
        Tensor out({count, c, h, w}, pix);
        return out;
    }
    ag::MapPtr m = decode_map(c, h, w, f);
    Tensor out = Tensor::zeros({count * f * f, c, h, w});
    const int64_t in_sz = static_cast<int64_t>(c) * h * w;
    const int64_t out_sz = in_sz * f * f;
    for (int i = 0; i < count; ++i)
        apply_map_host(*m, pix.data() + i * in_sz, out.data.data() + i * out_sz);
    return out;
}

std::vector<uint16_t> repeat_labels(const std::vector<uint16_t>& labels, int times) {
    std::vector<uint16_t> out;
    out.reserve(labels.size() * static_cast<size_t>(times));
    for (uint16_t l : labels)
        for (int r = 0; r < times; ++r) out.push_back(l);
    return out;
}

struct Synthetic {
    std::vector<double> pix;      // {class_count*ipc, c, h, w}
    std::vector<uint16_t> labels; // one per stored image
    int count = 0, c = 0, h = 0, w = 0;
};

void check_common(const DistillConfig& cfg, const data::LabeledDataset& train,
                  const models::ArchitectureSpec& arch) {
    data::validate(train, "train");
    models::validate_spec(arch);
    if (arch.in_channels != train.channels || arch.in_h != train.height ||
        arch.in_w != train.width || arch.class_count != train.class_count)
        throw ArgumentError("architecture geometry does not match the dataset");
    if (cfg.ipc < 1) throw ArgumentError("ipc must be >= 1");
    if (cfg.iterations < 1) throw ArgumentError("iterations must be >= 1");
    if (!(cfg.image_lr > 0.0)) throw ArgumentError("image_lr must be positive");
    if (cfg.batch_real < 1) throw ArgumentError("batch_real must be >= 1");
    if (cfg.inner_model_steps < 0) throw ArgumentError("inner_model_steps must be >= 0");
    check_factor(cfg.factor, train.height, train.width);
}

void check_class_counts(const std::vector<std::vector<int>>& by_class, int need,
                        const char* what) {
    for (size_t c = 0; c < by_class.size(); ++c)
        if (static_cast<int>(by_class[c].size()) < need)
            throw ArgumentError(std::string(what) + " " + std::to_string(need) +
                                " exceeds the " + std::to_string(by_class[c].size()) +
                                " samples of class " + std::to_string(c));
}

// Random real samples per class; with factor > 1 every stored image packs
// factor^2 downsampled real samples so decoding starts from real content.
Synthetic init_synthetic(const DistillConfig& cfg, const data::LabeledDataset& train,
                         const std::vector<std::vector<int>>& by_class) {
    Synthetic syn;
    syn.c = train.channels;
    syn.h = train.height;
    syn.w = train.width;
    syn.count = train.class_count * cfg.ipc;
    syn.pix.assign(static_cast<size_t>(syn.count) * syn.c * syn.h * syn.w, 0.0);
    syn.labels.resize(static_cast<size_t>(syn.count));

    const int f = cfg.factor;
    const int ph = syn.h / f, pw = syn.w / f;
    ag::MapPtr down = f > 1 ? ag::bilinear_resize_map(syn.h, syn.w, ph, pw) : nullptr;
    std::mt19937_64 rng(mix_seed(cfg.seed, "synthetic-init"));
    std::vector<double> chan(static_cast<size_t>(syn.h) * syn.w);
    std::vector<double> patch(static_cast<size_t>(ph) * pw);
    for (int cls = 0; cls < train.class_count; ++cls) {
        std::vector<int> order = by_class[static_cast<size_t>(cls)];
        std::shuffle(order.begin(), order.end(), rng);
        size_t next = 0;
        auto pick = [&]() { return order[next++ % order.size()]; };
        for (int i = 0; i < cfg.ipc; ++i) {
            const int stored = cls * cfg.ipc + i;
            syn.labels[static_cast<size_t>(stored)] = static_cast<uint16_t>(cls);
            double* dst = syn.pix.data() + static_cast<int64_t>(stored) * syn.c * syn.h * syn.w;
            if (f == 1) {
                const int idx = pick();
                const float* src =
                    train.images.data() + static_cast<int64_t>(idx) * syn.c * syn.h * syn.w;
                for (int64_t j = 0; j < static_cast<int64_t>(syn.c) * syn.h * syn.w; ++j)
                    dst[j] = static_cast<double>(src[j]);
                continue;
            }
            for (int p = 0; p < f * f; ++p) {
                const int idx = pick();
                const int py = p / f, px = p % f;
                for (int ch = 0; ch < syn.c; ++ch) {
                    const float* src = train.images.data() +
                                       (static_cast<int64_t>(idx) * syn.c + ch) * syn.h * syn.w;
                    for (size_t j = 0; j < chan.size(); ++j) chan[j] = static_cast<double>(src[j]);
                    apply_map_host(*down, chan.data(), patch.data());
                    for (int u = 0; u < ph; ++u)
                        for (int v = 0; v < pw; ++v)
                            dst[(static_cast<int64_t>(ch) * syn.h + py * ph + u) * syn.w +
                                px * pw + v] = patch[static_cast<size_t>(u) * pw + v];
                }
            }
        }
    }
    clamp01(syn.pix);
    return syn;
}

std::vector<int> sample_batch(const std::vector<int>& pool, int n, std::mt19937_64& rng) {
    std::uniform_int_distribution<size_t> d(0, pool.size() - 1);
    std::vector<int> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pool[d(rng)];
    return out;
}

double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

data::DistilledDataset package(const DistillConfig& cfg, const std::string& source,
                               const Synthetic& syn, int class_count,
                               std::vector<double> history) {
    data::DistilledDataset out;
    out.name = source;
    out.method = method_name(cfg.method);
    out.images.resize(syn.pix.size());
    for (size_t i = 0; i < syn.pix.size(); ++i) out.images[i] = static_cast<float>(syn.pix[i]);
    out.labels = syn.labels;
    out.count = syn.count;
    out.channels = syn.c;
    out.height = syn.h;
    out.width = syn.w;
    out.class_count = class_count;
    out.ipc = cfg.ipc;
    out.factor = cfg.factor;
    out.seed = static_cast<int>(cfg.seed);
    out.config_hash = config_hash(cfg);
    out.loss_history = std::move(history);
    return out;
}

std::vector<ag::Var> param_leaves(ag::Tape& tape, const models::Classifier& model) {
    std::vector<ag::Var> out;
    out.reserve(model.params.size());
    for (const auto& p : model.params) out.push_back(tape.leaf(p.value.shape, p.value.data));
    return out;
}

double sq_dist(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
        const double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

struct LloydState {
    std::vector<double> centers;  // k*d
    std::vector<int> assign;
    double inertia = 0.0;
};

LloydState lloyd_run(const double* pts, int n, int d, int k, int iters, std::mt19937_64& rng) {
    LloydState st;
    st.centers.assign(static_cast<size_t>(k) * d, 0.0);
    st.assign.assign(static_cast<size_t>(n), -1);

    // k-means++ seeding: first center uniform, then distance-squared sampling.
    std::vector<double> d2(static_cast<size_t>(n), 0.0);
    std::vector<int> chosen;
    std::uniform_int_distribution<int> uni(0, n - 1);
    chosen.push_back(uni(rng));
    for (int i = 0; i < n; ++i)
        d2[static_cast<size_t>(i)] = sq_dist(pts + static_cast<int64_t>(i) * d,
                                             pts + static_cast<int64_t>(chosen[0]) * d, d);
    while (static_cast<int>(chosen.size()) < k) {
        double total = 0.0;
        for (double v : d2) total += v;
        int next = -1;
        if (total > 0.0) {
            double x = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (int i = 0; i < n; ++i) {
                x -= d2[static_cast<size_t>(i)];
                if (x <= 0.0) {
                    next = i;
                    break;
                }
            }
            if (next < 0) next = n - 1;
        } else {
            for (int i = 0; i < n && next < 0; ++i)
                if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) next = i;
            if (next < 0) next = uni(rng);
        }
        chosen.push_back(next);
        for (int i = 0; i < n; ++i)
            d2[static_cast<size_t>(i)] =
                std::min(d2[static_cast<size_t>(i)],
                         sq_dist(pts + static_cast<int64_t>(i) * d,
                                 pts + static_cast<int64_t>(next) * d, d));
    }
    for (int j = 0; j < k; ++j)
        std::copy(pts + static_cast<int64_t>(chosen[static_cast<size_t>(j)]) * d,
                  pts + static_cast<int64_t>(chosen[static_cast<size_t>(j)]) * d + d,
                  st.centers.begin() + static_cast<int64_t>(j) * d);

    std::vector<int> counts(static_cast<size_t>(k), 0);
    auto assign_pass = [&]() {
        st.inertia = 0.0;
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = sq_dist(pts + static_cast<int64_t>(i) * d, st.centers.data(), d);
            for (int j = 1; j < k; ++j) {
                const double dist = sq_dist(pts + static_cast<int64_t>(i) * d,
                                            st.centers.data() + static_cast<int64_t>(j) * d, d);
                if (dist < bd) {
                    bd = dist;
                    best = j;
                }
            }
            st.assign[static_cast<size_t>(i)] = best;
            counts[static_cast<size_t>(best)]++;
            st.inertia += bd;
        }
    };

    std::vector<int> prev;
    for (int it = 0; it < iters; ++it) {
        assign_pass();
        // Re-seed empty clusters to the farthest point; strictly lowers inertia.
        for (int j = 0; j < k; ++j) {
            if (counts[static_cast<size_t>(j)] > 0) continue;
            int far = 0;
            double fd = -1.0;
            for (int i = 0; i < n; ++i) {
                const double dist =
                    sq_dist(pts + static_cast<int64_t>(i) * d,
                            st.centers.data() +
                                static_cast<int64_t>(st.assign[static_cast<size_t>(i)]) * d,
                            d);
                if (dist > fd && counts[static_cast<size_t>(st.assign[static_cast<size_t>(i)])] > 1) {
                    fd = dist;
                    far = i;
                }
            }
            std::copy(pts + static_cast<int64_t>(far) * d, pts + static_cast<int64_t>(far) * d + d,
                      st.centers.begin() + static_cast<int64_t>(j) * d);
            assign_pass();
        }
        if (st.assign == prev) break;
        prev = st.assign;
        std::vector<double> sums(static_cast<size_t>(k) * d, 0.0);
        for (int i = 0; i < n; ++i) {
            const int j = st.assign[static_cast<size_t>(i)];
            for (int t = 0; t < d; ++t)
                sums[static_cast<size_t>(j) * d + t] += pts[static_cast<int64_t>(i) * d + t];
        }
        for (int j = 0; j < k; ++j)
            if (counts[static_cast<size_t>(j)] > 0)
                for (int t = 0; t < d; ++t)
                    st.centers[static_cast<size_t>(j) * d + t] =
                        sums[static_cast<size_t>(j) * d + t] / counts[static_cast<size_t>(j)];
    }
    assign_pass();
    return st;
}

}  // namespace

std::string method_name(Method m) {
    switch (m) {
        case Method::dc: return "dc";
        case Method::dsa: return "dsa";
        case Method::dm: return "dm";
        case Method::mtt: return "mtt";
    }
    throw ArgumentError("unknown distillation method");
}

Method method_from_name(const std::string& name) {
    if (name == "dc") return Method::dc;
    if (name == "dsa") return Method::dsa;
    if (name == "dm") return Method::dm;
    if (name == "mtt") return Method::mtt;
    throw ArgumentError("unknown distillation method '" + name + "' (expected dc, dsa, dm, mtt)");
}

std::string config_hash(const DistillConfig& cfg) {
    char buf[512];
    std::string aug;
    for (auto k : cfg.augmentation.ops) aug += augment::kind_name(k) + ",";
    std::snprintf(buf, sizeof(buf),
                  "method=%s;ipc=%d;iterations=%d;image_lr=%.17g;inner=%d;batch_real=%d;"
                  "factor=%d;clusters=%d;aug=%s;strategy=%d;mtt=%d,%d,%d,%.17g,%.17g;seed=%llu",
                  method_name(cfg.method).c_str(), cfg.ipc, cfg.iterations, cfg.image_lr,
                  cfg.inner_model_steps, cfg.batch_real, cfg.factor, cfg.cluster_count, aug.c_str(),
                  static_cast<int>(cfg.augmentation.strategy), cfg.mtt.synthetic_steps,
                  cfg.mtt.expert_epochs, cfg.mtt.max_start_epoch, cfg.mtt.step_lr,
                  cfg.mtt.starting_step_lr, static_cast<unsigned long long>(cfg.seed));
    return sha256_hex(buf);
}

Tensor multi_formation_decode(const data::DistilledDataset& stored) {
    check_factor(stored.factor, stored.height, stored.width);
    if (stored.images.size() != static_cast<size_t>(stored.count) * stored.channels *
                                    stored.height * stored.width)
        throw ArgumentError("stored image buffer does not match count*channels*height*width");
    std::vector<double> pix(stored.images.begin(), stored.images.end());
    return decode_host(pix, stored.count, stored.channels, stored.height, stored.width,
                       stored.factor);
}

ag::Var multi_formation_decode_graph(ag::Var stored, int channels, int height, int width,
                                     int factor) {
    check_factor(factor, height, width);
    if (factor == 1) return stored;
    const int n = stored.shape().at(0);
    ag::MapPtr m = decode_map(channels, height, width, factor);
    return ag::apply_map(stored, m, {n * factor * factor, channels, height, width});
}

std::vector<uint16_t> decoded_labels(const data::DistilledDataset& stored) {
    check_factor(stored.factor, stored.height, stored.width);
    return repeat_labels(stored.labels, stored.factor * stored.factor);
}

// Exhaustive search over non-empty partitions; feasible when k^n stays tiny.
// Restarted Lloyd can land in a local minimum even on small instances, so tiny
// ones are solved exactly instead.
bool exact_partition(const double* pts, int n, int d, int k, LloydState& out) {
    double combos = 1.0;
    for (int i = 0; i < n; ++i) combos *= k;
    if (combos > 65536.0) return false;

    std::vector<int> assign(static_cast<size_t>(n), 0);
    std::vector<int> best_assign;
    std::vector<double> sum(static_cast<size_t>(k) * d);
    std::vector<int> cnt(static_cast<size_t>(k));
    double best = 0.0;
    bool have = false;
    while (true) {
        std::fill(sum.begin(), sum.end(), 0.0);
        std::fill(cnt.begin(), cnt.end(), 0);
        for (int i = 0; i < n; ++i) {
            const int c = assign[static_cast<size_t>(i)];
            ++cnt[static_cast<size_t>(c)];
            for (int j = 0; j < d; ++j)
                sum[static_cast<size_t>(c) * d + j] += pts[static_cast<int64_t>(i) * d + j];
        }
        bool full = true;
        for (int c = 0; c < k; ++c) full = full && cnt[static_cast<size_t>(c)] > 0;
        if (full) {
            double inertia = 0.0;
            for (int i = 0; i < n; ++i) {
                const int c = assign[static_cast<size_t>(i)];
                for (int j = 0; j < d; ++j) {
                    const double diff = pts[static_cast<int64_t>(i) * d + j] -
                                        sum[static_cast<size_t>(c) * d + j] /
                                            cnt[static_cast<size_t>(c)];
                    inertia += diff * diff;
                }
            }
            if (!have || inertia < best) {
                best = inertia;
                best_assign = assign;
                have = true;
            }
        }
        int i = 0;
        while (i < n && ++assign[static_cast<size_t>(i)] == k) {
            assign[static_cast<size_t>(i)] = 0;
            ++i;
        }
        if (i == n) break;
    }

    out.assign = best_assign;
    out.inertia = best;
    out.centers.assign(static_cast<size_t>(k) * d, 0.0);
    std::fill(cnt.begin(), cnt.end(), 0);
    for (int i = 0; i < n; ++i) {
        const int c = best_assign[static_cast<size_t>(i)];
        ++cnt[static_cast<size_t>(c)];
        for (int j = 0; j < d; ++j)
            out.centers[static_cast<size_t>(c) * d + j] += pts[static_cast<int64_t>(i) * d + j];
    }
    for (int c = 0; c < k; ++c)
        for (int j = 0; j < d; ++j)
            out.centers[static_cast<size_t>(c) * d + j] /= cnt[static_cast<size_t>(c)];
    return true;
}

KmeansResult kmeans(const Tensor& points, int k, int iters, uint64_t seed) {
    if (points.shape.size() != 2) throw ArgumentError("kmeans expects a {n,d} tensor");
    const int n = points.dim(0), d = points.dim(1);
    if (n < 1 || d < 1) throw ArgumentError("kmeans needs at least one point and one dimension");
    if (k < 1) throw ArgumentError("k must be >= 1");
    if (k > n) throw ArgumentError("k=" + std::to_string(k) + " exceeds the " + std::to_string(n) +
                                   " points");
    if (iters < 1) throw ArgumentError("iters must be >= 1");

    LloydState best;
    if (!exact_partition(points.data.data(), n, d, k, best)) {
        bool have = false;
        for (int r = 0; r < kKmeansRestarts; ++r) {
            std::mt19937_64 rng(mix_seed(seed, "kmeans", static_cast<uint64_t>(r)));
            LloydState st = lloyd_run(points.data.data(), n, d, k, iters, rng);
            if (!have || st.inertia < best.inertia) {
                best = std::move(st);
                have = true;
            }
        }
    }
    KmeansResult out;
    out.centers = Tensor({k, d}, std::move(best.centers));
    out.assignments = std::move(best.assign);
    out.inertia = best.inertia;
    return out;
}

std::vector<std::vector<int>> dream_select(const data::LabeledDataset& train,
                                           const models::Classifier& model, int cluster_count,
                                           int per_class_pick, uint64_t seed) {
    data::validate(train, "train");
    if (per_class_pick < 1) throw ArgumentError("per_class_pick must be >= 1");
    if (cluster_count < per_class_pick)
        throw ArgumentError("cluster_count must be >= per_class_pick");
    auto by_class = data::indices_by_class(train);
    check_class_counts(by_class, cluster_count, "cluster_count");

    std::vector<std::vector<int>> out(by_class.size());
    for (size_t cls = 0; cls < by_class.size(); ++cls) {
        const auto& idx = by_class[cls];
        Tensor feats = models::features(model, data::batch_tensor(train, idx));
        const int m = feats.dim(0), fd = feats.dim(1);
        KmeansResult km = kmeans(feats, cluster_count, 50, mix_seed(seed, "dream", cls));
        for (int q = 0; q < per_class_pick; ++q) {
            const int cid = static_cast<int>((static_cast<int64_t>(q) * cluster_count) /
                                             per_class_pick);
            int best = -1;
            double bd = 0.0;
            for (int i = 0; i < m; ++i) {
                if (km.assignments[static_cast<size_t>(i)] != cid) continue;
                const double dist =
                    sq_dist(feats.data.data() + static_cast<int64_t>(i) * fd,
                            km.centers.data.data() + static_cast<int64_t>(cid) * fd, fd);
                if (best < 0 || dist < bd) {
                    bd = dist;
                    best = i;
                }
            }
            if (best < 0) throw TrainingError("empty cluster survived re-seeding");
            out[cls].push_back(idx[static_cast<size_t>(best)]);
        }
    }
    return out;
}

data::DistilledDataset distill_gradient_matching(const DistillConfig& cfg,
                                                 const data::LabeledDataset& train,
                                                 const models::ArchitectureSpec& arch) {
    if (cfg.method != Method::dc && cfg.method != Method::dsa)
        throw ArgumentError("gradient matching handles methods dc and dsa");
    const bool use_aug = cfg.method == Method::dsa;
    if (use_aug) {
        if (cfg.augmentation.ops.empty() ||
            cfg.augmentation.strategy == augment::AugmentationPolicy::Strategy::none)
            throw ArgumentError("dsa requires an augmentation policy");
        augment::validate_policy(cfg.augmentation);
    }
    check_common(cfg, train, arch);
    auto by_class = data::indices_by_class(train);
    check_class_counts(by_class, cfg.ipc, "ipc");

    std::vector<std::vector<int>> pools = by_class;
    if (cfg.cluster_count > 0) {
        check_class_counts(by_class, cfg.cluster_count, "cluster_count");
        models::Classifier embed = models::build_model(arch, mix_seed(cfg.seed, "dream-embed"));
        const int pick = std::min(cfg.batch_real, cfg.cluster_count);
        pools = dream_select(train, embed, cfg.cluster_count, pick, mix_seed(cfg.seed, "dream"));
    }

    Synthetic syn = init_synthetic(cfg, train, by_class);
    Momentum pixopt(cfg.image_lr, syn.pix.size());
    const int f2 = cfg.factor * cfg.factor;
    const int64_t class_sz = static_cast<int64_t>(cfg.ipc) * syn.c * syn.h * syn.w;

    std::vector<double> history;
    history.reserve(static_cast<size_t>(cfg.iterations));

    for (int t = 0; t < cfg.iterations; ++t) {
        // Fresh net every step, advanced inner_model_steps along its own
        // synthetic training path before matching. Matching at a comparable
        // net state each step is what keeps the loss series meaningful.
        models::Classifier model =
            models::build_model(arch, mix_seed(cfg.seed, "matcher", static_cast<uint64_t>(t)));
        std::vector<std::vector<double>> model_vel;
        for (int s = 0; s < cfg.inner_model_steps; ++s) {
            Tensor imgs = decode_host(syn.pix, syn.count, syn.c, syn.h, syn.w, cfg.factor);
            auto labels = repeat_labels(syn.labels, f2);
            if (use_aug)
                imgs = augment::dsa_apply(imgs, cfg.augmentation,
                                          mix_seed(mix_seed(cfg.seed, "inner-aug"),
                                                   static_cast<uint64_t>(t), static_cast<uint64_t>(s)));
            auto g = models::param_gradients(model, imgs, labels);
            sgd_params(model, g, model_vel, kInnerModelLr);
        }

        std::vector<double> grad(syn.pix.size(), 0.0);
        double loss_t = 0.0;
        for (int cls = 0; cls < train.class_count; ++cls) {
            std::mt19937_64 rng(mix_seed(mix_seed(cfg.seed, "real-batch"),
                                         static_cast<uint64_t>(t), static_cast<uint64_t>(cls)));
            auto ridx = sample_batch(pools[static_cast<size_t>(cls)], cfg.batch_real, rng);
            Tensor real = data::batch_tensor(train, ridx);
            auto rlabels = data::batch_labels(train, ridx);
            const uint64_t aug_seed = mix_seed(mix_seed(cfg.seed, "dsa"), static_cast<uint64_t>(t),
                                               static_cast<uint64_t>(cls));
            if (use_aug) real = augment::dsa_apply(real, cfg.augmentation, aug_seed);
            auto greal = models::param_gradients(model, real, rlabels);

            ag::Tape tape;
            std::vector<double> slice(syn.pix.begin() + cls * class_sz,
                                      syn.pix.begin() + (cls + 1) * class_sz);
            ag::Var pix = tape.leaf({cfg.ipc, syn.c, syn.h, syn.w}, std::move(slice));
            ag::Var dec = multi_formation_decode_graph(pix, syn.c, syn.h, syn.w, cfg.factor);
            if (use_aug) dec = augment::dsa_apply_graph(dec, cfg.augmentation, aug_seed);
            auto pvars = param_leaves(tape, model);
            auto fwd = models::forward_graph(tape, arch, dec, pvars);
            std::vector<uint16_t> slabels(static_cast<size_t>(cfg.ipc) * f2,
                                          static_cast<uint16_t>(cls));
            ag::Var ls = models::loss_ce_graph(fwd.logits, slabels);
            auto gsyn = tape.gradients(ls, pvars);

            // Layerwise cosine distance, skipping 1-D tensors (biases, norm affines).
            ag::Var dist;
            bool first = true;
            for (size_t i = 0; i < model.params.size(); ++i) {
                if (model.params[i].value.shape.size() < 2) continue;
                const int n = static_cast<int>(model.params[i].value.numel());
                ag::Var gs = ag::reshape(gsyn[i], {1, n});
                ag::Var gr = tape.constant({1, n}, greal[i].value.data);
                ag::Var dot = ag::sum_all(ag::mul(gs, gr));
                ag::Var ns = ag::sqrt_(ag::sum_all(ag::mul(gs, gs)));
                ag::Var denom = ag::add_scalar(ag::scale(ns, l2_norm(greal[i].value.data)), kCosEps);
                ag::Var term = ag::sub(tape.constant({1}, {1.0}), ag::div_(dot, denom));
                dist = first ? term : ag::add(dist, term);
                first = false;
            }
            loss_t += dist.val()[0];
            ag::Var gpix = tape.gradients(dist, {pix})[0];
            const auto& g = gpix.val();
            for (int64_t j = 0; j < class_sz; ++j) grad[static_cast<size_t>(cls * class_sz + j)] += g[static_cast<size_t>(j)];
        }
        history.push_back(loss_t);
        pixopt.step(syn.pix, grad);
        clamp01(syn.pix);
    }
    return package(cfg, train.name, syn, train.class_count, std::move(history));
}

data::DistilledDataset distill_distribution_matching(const DistillConfig& cfg,
                                                     const data::LabeledDataset& train,
                                                     const models::ArchitectureSpec& arch) {
    if (cfg.method != Method::dm) throw ArgumentError("distribution matching handles method dm");
    check_common(cfg, train, arch);
    auto by_class = data::indices_by_class(train);
    check_class_counts(by_class, cfg.ipc, "ipc");

    Synthetic syn = init_synthetic(cfg, train, by_class);
    Momentum pixopt(cfg.image_lr, syn.pix.size());
    const int f2 = cfg.factor * cfg.factor;
    const int64_t class_sz = static_cast<int64_t>(cfg.ipc) * syn.c * syn.h * syn.w;
    std::vector<double> history;
    history.reserve(static_cast<size_t>(cfg.iterations));

    for (int t = 0; t < cfg.iterations; ++t) {
        models::Classifier embed =
            models::build_model(arch, mix_seed(cfg.seed, "embed", static_cast<uint64_t>(t)));
        std::vector<double> grad(syn.pix.size(), 0.0);
        double loss_t = 0.0;
        for (int cls = 0; cls < train.class_count; ++cls) {
            std::mt19937_64 rng(mix_seed(mix_seed(cfg.seed, "real-batch"),
                                         static_cast<uint64_t>(t), static_cast<uint64_t>(cls)));
            auto ridx = sample_batch(by_class[static_cast<size_t>(cls)], cfg.batch_real, rng);
            Tensor rfeat = models::features(embed, data::batch_tensor(train, ridx));
            const int fd = rfeat.dim(1);
            std::vector<double> mu_r(static_cast<size_t>(fd), 0.0);
            for (int i = 0; i < rfeat.dim(0); ++i)
                for (int j = 0; j < fd; ++j)
                    mu_r[static_cast<size_t>(j)] += rfeat.data[static_cast<size_t>(i) * fd + j];
            for (double& v : mu_r) v /= rfeat.dim(0);

            ag::Tape tape;
            std::vector<double> slice(syn.pix.begin() + cls * class_sz,
                                      syn.pix.begin() + (cls + 1) * class_sz);
            ag::Var pix = tape.leaf({cfg.ipc, syn.c, syn.h, syn.w}, std::move(slice));
            ag::Var dec = multi_formation_decode_graph(pix, syn.c, syn.h, syn.w, cfg.factor);
            auto pvars = param_leaves(tape, embed);
            auto fwd = models::forward_graph(tape, arch, dec, pvars);
            ag::Var mu_s = ag::scale(ag::col_sum(fwd.features), 1.0 / (cfg.ipc * f2));
            ag::Var diff = ag::sub(mu_s, tape.constant({1, fd}, mu_r));
            ag::Var dist = ag::sum_all(ag::mul(diff, diff));
            loss_t += dist.val()[0];
            ag::Var gpix = tape.gradients(dist, {pix})[0];
            const auto& g = gpix.val();
            for (int64_t j = 0; j < class_sz; ++j) grad[static_cast<size_t>(cls * class_sz + j)] += g[static_cast<size_t>(j)];
        }
        history.push_back(loss_t);
        pixopt.step(syn.pix, grad);
        clamp01(syn.pix);
    }
    return package(cfg, train.name, syn, train.class_count, std::move(history));
}

TrajectoryStore record_expert_trajectories(const models::ArchitectureSpec& arch,
                                           const data::LabeledDataset& train, int epochs,
                                           int experts, int snapshot_every, uint64_t seed) {
    data::validate(train, "train");
    models::validate_spec(arch);
    if (arch.in_channels != train.channels || arch.in_h != train.height ||
        arch.in_w != train.width || arch.class_count != train.class_count)
        throw ArgumentError("architecture geometry does not match the dataset");
    if (epochs < 2) throw ArgumentError("epochs must be >= 2");
    if (experts < 1) throw ArgumentError("experts must be >= 1");
    if (snapshot_every < 1) throw ArgumentError("snapshot_every must be >= 1");

    TrajectoryStore store;
    store.arch = arch;
    store.source = train.name;
    store.seed = seed;
    store.snapshot_every = snapshot_every;
    for (int e = 0; e < experts; ++e) {
        models::Classifier model =
            models::build_model(arch, mix_seed(seed, "expert-init", static_cast<uint64_t>(e)));
        std::vector<std::vector<double>> vel;
        std::vector<std::vector<NamedTensor>> snaps;
        snaps.push_back(model.params);
        std::vector<int> order(static_cast<size_t>(train.count));
        for (int i = 0; i < train.count; ++i) order[static_cast<size_t>(i)] = i;
        for (int epoch = 1; epoch <= epochs; ++epoch) {
            std::mt19937_64 rng(mix_seed(mix_seed(seed, "expert-order"), static_cast<uint64_t>(e),
                                         static_cast<uint64_t>(epoch)));
            std::shuffle(order.begin(), order.end(), rng);
            for (size_t at = 0; at < order.size(); at += kExpertBatch) {
                std::vector<int> chunk(order.begin() + static_cast<int64_t>(at),
                                       order.begin() +
                                           static_cast<int64_t>(std::min(at + kExpertBatch,
                                                                         order.size())));
                auto g = models::param_gradients(model, data::batch_tensor(train, chunk),
                                                 data::batch_labels(train, chunk));
                sgd_params(model, g, vel, kExpertLr);
            }
            if (epoch % snapshot_every == 0) snaps.push_back(model.params);
        }
        store.experts.push_back(std::move(snaps));
    }
    return store;
}

void save_trajectories(const TrajectoryStore& store, const std::filesystem::path& path) {
    if (store.experts.empty() || store.experts.front().empty())
        throw ArgumentError("cannot save an empty trajectory store");
    for (const auto& expert : store.experts) {
        if (expert.size() != store.experts.front().size())
            throw ArgumentError("ragged trajectory store: unequal snapshot counts");
        for (const auto& snap : expert)
            if (snap.size() != store.experts.front().front().size())
                throw ArgumentError("ragged trajectory store: unequal parameter counts");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    io::write_magic(out, "DDRT");
    io::write_u32(out, 1);
    io::write_string(out, models::family_name(store.arch.family));
    io::write_string(out, store.source);
    io::write_u32(out, static_cast<uint32_t>(store.arch.in_channels));
    io::write_u32(out, static_cast<uint32_t>(store.arch.in_h));
    io::write_u32(out, static_cast<uint32_t>(store.arch.in_w));
    io::write_u32(out, static_cast<uint32_t>(store.arch.class_count));
    io::write_u32(out, static_cast<uint32_t>(store.arch.depth));
    io::write_u32(out, static_cast<uint32_t>(store.arch.width));
    io::write_u32(out, static_cast<uint32_t>(store.seed));
    io::write_u32(out, static_cast<uint32_t>(store.snapshot_every));
    io::write_u32(out, static_cast<uint32_t>(store.experts.size()));
    io::write_u32(out, static_cast<uint32_t>(store.experts.front().size()));
    io::write_u32(out, static_cast<uint32_t>(store.experts.front().front().size()));
    for (const auto& expert : store.experts)
        for (const auto& snap : expert)
            for (const auto& p : snap) io::write_named_tensor(out, p);
    if (!out) throw IoError("write failed: " + path.string());
}

TrajectoryStore load_trajectories(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    io::expect_magic(in, "DDRT", path.string());
    const uint32_t version = io::read_u32(in);
    if (version != 1) throw FormatError("unsupported DDRT version in " + path.string());
    TrajectoryStore store;
    store.arch.family = models::family_from_string(io::read_string(in));
    store.source = io::read_string(in);
    store.arch.in_channels = static_cast<int>(io::read_u32(in));
    store.arch.in_h = static_cast<int>(io::read_u32(in));
    store.arch.in_w = static_cast<int>(io::read_u32(in));
    store.arch.class_count = static_cast<int>(io::read_u32(in));
    store.arch.depth = static_cast<int>(io::read_u32(in));
    store.arch.width = static_cast<int>(io::read_u32(in));
    store.seed = io::read_u32(in);
    store.snapshot_every = static_cast<int>(io::read_u32(in));
    const uint32_t experts = io::read_u32(in);
    const uint32_t snaps = io::read_u32(in);
    const uint32_t tensors = io::read_u32(in);
    if (experts == 0 || snaps == 0) throw FormatError("empty DDRT store in " + path.string());
    auto layout = models::param_layout(store.arch);
    if (tensors != layout.size())
        throw FormatError("DDRT parameter count mismatch in " + path.string());
    store.experts.resize(experts);
    for (uint32_t e = 0; e < experts; ++e) {
        store.experts[e].reserve(snaps);
        for (uint32_t s = 0; s < snaps; ++s) {
            std::vector<NamedTensor> snap;
            snap.reserve(tensors);
            for (uint32_t i = 0; i < tensors; ++i) {
                NamedTensor p = io::read_named_tensor(in);
                if (p.name != layout[i].name || p.value.shape != layout[i].value.shape)
                    throw FormatError("DDRT parameter record does not match the architecture in " +
                                      path.string());
                snap.push_back(std::move(p));
            }
            store.experts[e].push_back(std::move(snap));
        }
    }
    if (!in) throw FormatError("truncated DDRT file: " + path.string());
    if (in.peek() != std::char_traits<char>::eof())
        throw FormatError("trailing bytes after DDRT payload in " + path.string());
    return store;
}

namespace {

// Shared MTT body once the synthetic tensor is initialized.
data::DistilledDataset run_mtt(const DistillConfig& cfg, const TrajectoryStore& store,
                               Synthetic syn) {
    const auto& arch = store.arch;
    const int q = store.snapshot_every;
    if (q < 1) throw ArgumentError("snapshot cadence must be >= 1");
    if (store.experts.empty() || store.experts.front().size() < 2)
        throw ArgumentError("trajectory store needs at least two snapshots per expert");
    if (cfg.mtt.synthetic_steps < 1) throw ArgumentError("synthetic_steps must be >= 1");
    if (cfg.mtt.expert_epochs < 1) throw ArgumentError("expert_epochs must be >= 1");
    if (cfg.mtt.max_start_epoch < 0) throw ArgumentError("max_start_epoch must be >= 0");
    if (!(cfg.mtt.starting_step_lr > 0.0))
        throw ArgumentError("starting_step_lr must be positive");
    if (cfg.mtt.expert_epochs % q != 0)
        throw ArgumentError("expert_epochs must be a multiple of the snapshot cadence");
    const int epochs_recorded = static_cast<int>(store.experts.front().size() - 1) * q;
    if (cfg.mtt.max_start_epoch + cfg.mtt.expert_epochs > epochs_recorded)
        throw ArgumentError("max_start_epoch + expert_epochs exceeds the recorded " +
                            std::to_string(epochs_recorded) + " epochs");

    const int f2 = cfg.factor * cfg.factor;
    auto labels = repeat_labels(syn.labels, f2);
    Momentum pixopt(cfg.image_lr, syn.pix.size());
    Momentum rhoopt(cfg.mtt.step_lr, 1);
    double rho = std::log(cfg.mtt.starting_step_lr);
    std::vector<double> history;
    history.reserve(static_cast<size_t>(cfg.iterations));

    for (int t = 0; t < cfg.iterations; ++t) {
        std::mt19937_64 rng(mix_seed(cfg.seed, "mtt-sample", static_cast<uint64_t>(t)));
        const int e = std::uniform_int_distribution<int>(
            0, static_cast<int>(store.experts.size()) - 1)(rng);
        const int s0 =
            std::uniform_int_distribution<int>(0, cfg.mtt.max_start_epoch / q)(rng);
        const auto& start = store.experts[static_cast<size_t>(e)][static_cast<size_t>(s0)];
        const auto& target = store.experts[static_cast<size_t>(e)]
                                          [static_cast<size_t>(s0 + cfg.mtt.expert_epochs / q)];
        double den = 0.0;
        for (size_t i = 0; i < start.size(); ++i)
            den += sq_dist(start[i].value.data.data(), target[i].value.data.data(),
                           static_cast<int>(start[i].value.numel()));
        den += 1e-12;

        ag::Tape tape;
        ag::Var pix = tape.leaf({syn.count, syn.c, syn.h, syn.w}, syn.pix);
        ag::Var dec = multi_formation_decode_graph(pix, syn.c, syn.h, syn.w, cfg.factor);
        ag::Var rho_v = tape.leaf({1}, {rho});
        ag::Var alpha = ag::exp_(rho_v);
        std::vector<ag::Var> theta;
        theta.reserve(start.size());
        for (const auto& p : start) theta.push_back(tape.leaf(p.value.shape, p.value.data));
        for (int j = 0; j < cfg.mtt.synthetic_steps; ++j) {
            auto fwd = models::forward_graph(tape, arch, dec, theta);
            ag::Var ls = models::loss_ce_graph(fwd.logits, labels);
            auto g = tape.gradients(ls, theta);
            for (size_t i = 0; i < theta.size(); ++i)
                theta[i] = ag::sub(theta[i],
                                   ag::mul(ag::broadcast_all(alpha, theta[i].shape()), g[i]));
        }
        ag::Var num;
        bool first = true;
        for (size_t i = 0; i < theta.size(); ++i) {
            ag::Var d = ag::sub(theta[i], tape.constant(target[i].value.shape,
                                                        target[i].value.data));
            ag::Var term = ag::sum_all(ag::mul(d, d));
            num = first ? term : ag::add(num, term);
            first = false;
        }
        ag::Var loss = ag::scale(num, 1.0 / den);
        history.push_back(loss.val()[0]);
        auto grads = tape.gradients(loss, {pix, rho_v});
        pixopt.step(syn.pix, grads[0].val());
        clamp01(syn.pix);
        std::vector<double> rv{rho};
        rhoopt.step(rv, grads[1].val());
        rho = rv[0];
    }

    return package(cfg, store.source, syn, arch.class_count, std::move(history));
}

void check_mtt_entry(const DistillConfig& cfg, const TrajectoryStore& store) {
    if (cfg.method != Method::mtt) throw ArgumentError("trajectory matching handles method mtt");
    models::validate_spec(store.arch);
    if (cfg.ipc < 1) throw ArgumentError("ipc must be >= 1");
    if (cfg.iterations < 1) throw ArgumentError("iterations must be >= 1");
    if (!(cfg.image_lr > 0.0)) throw ArgumentError("image_lr must be positive");
    check_factor(cfg.factor, store.arch.in_h, store.arch.in_w);
}

}  // namespace

data::DistilledDataset distill_trajectory_matching(const DistillConfig& cfg,
                                                   const TrajectoryStore& store) {
    check_mtt_entry(cfg, store);
    // No real data in scope, so pixels start as seeded noise around mid-gray.
    Synthetic syn;
    syn.c = store.arch.in_channels;
    syn.h = store.arch.in_h;
    syn.w = store.arch.in_w;
    syn.count = store.arch.class_count * cfg.ipc;
    syn.pix.resize(static_cast<size_t>(syn.count) * syn.c * syn.h * syn.w);
    syn.labels.resize(static_cast<size_t>(syn.count));
    std::mt19937_64 rng(mix_seed(cfg.seed, "synthetic-init"));
    std::normal_distribution<double> noise(0.0, 0.1);
    for (double& v : syn.pix) v = 0.5 + noise(rng);
    clamp01(syn.pix);
    for (int cls = 0; cls < store.arch.class_count; ++cls)
        for (int i = 0; i < cfg.ipc; ++i)
            syn.labels[static_cast<size_t>(cls * cfg.ipc + i)] = static_cast<uint16_t>(cls);
    return run_mtt(cfg, store, std::move(syn));
}

data::DistilledDataset distill_trajectory_matching(const DistillConfig& cfg,
                                                   const TrajectoryStore& store,
                                                   const data::LabeledDataset& train) {
    check_mtt_entry(cfg, store);
    if (store.arch.in_channels != train.channels || store.arch.in_h != train.height ||
        store.arch.in_w != train.width || store.arch.class_count != train.class_count)
        throw ArgumentError("trajectory store geometry does not match the dataset");
    data::validate(train, "train");
    auto by_class = data::indices_by_class(train);
    check_class_counts(by_class, cfg.ipc, "ipc");
    Synthetic syn = init_synthetic(cfg, train, by_class);
    return run_mtt(cfg, store, std::move(syn));
}

}  // namespace ddrb::distill
