#include "ddrb/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "ddrb/serialize.hpp"

namespace ddrb::models {

using ag::Tape;
using ag::Var;

Family family_from_string(const std::string& s) {
    if (s == "convnet") return Family::convnet;
    if (s == "resnet18_mod") return Family::resnet18_mod;
    if (s == "vgg11") return Family::vgg11;
    if (s == "mobilenet") return Family::mobilenet;
    throw ArgumentError("unknown model family: " + s);
}

std::string family_name(Family f) {
    switch (f) {
        case Family::convnet: return "convnet";
        case Family::resnet18_mod: return "resnet18_mod";
        case Family::vgg11: return "vgg11";
        case Family::mobilenet: return "mobilenet";
    }
    throw ArgumentError("bad family enum");
}

void validate_spec(const ArchitectureSpec& spec) {
    if (spec.class_count < 2) throw ArgumentError("model spec: class_count must be >= 2");
    if (spec.in_channels < 1 || spec.in_h < 1 || spec.in_w < 1)
        throw ArgumentError("model spec: bad input shape");
    if (spec.family == Family::convnet) {
        if (spec.depth < 3 || spec.depth > 5) throw ArgumentError("convnet depth must be 3, 4 or 5");
        if (spec.width < 1) throw ArgumentError("convnet width must be positive");
        int div = 1 << spec.depth;
        if (spec.in_h % div != 0 || spec.in_w % div != 0)
            throw ArgumentError("convnet input size must be divisible by 2^depth");
    }
}

namespace {

// One net description drives both the parameter layout and the forward graph,
// so the two cannot drift apart. Layout mode records shapes; graph mode
// consumes params in the same order and builds ops.
class NetOps {
  public:
    virtual ~NetOps() = default;
    virtual Var conv(const std::string& name, Var x, int in_c, int out_c, int k, int stride, int pad,
                     int groups) = 0;
    virtual Var norm(const std::string& name, Var x, int c) = 0;
    virtual Var fc(const std::string& name, Var x, int in_f, int out_f) = 0;
    virtual Var relu(Var x) = 0;
    virtual Var avg_pool2(Var x) = 0;
    virtual Var max_pool2(Var x) = 0;
    virtual Var global_avg(Var x) = 0;  // {n,c,h,w} -> {n,c}
    virtual Var flatten(Var x) = 0;     // {n,c,h,w} -> {n,c*h*w}
    virtual Var add(Var a, Var b) = 0;
    virtual void features(Var x) = 0;  // marks the penultimate representation
};

struct SpatialState {
    int h = 0, w = 0;
};

Var run_convnet(const ArchitectureSpec& spec, NetOps& ops, Var x) {
    int c = spec.in_channels;
    for (int i = 0; i < spec.depth; ++i) {
        std::string tag = "block" + std::to_string(i);
        x = ops.conv(tag + ".conv", x, c, spec.width, 3, 1, 1, 1);
        x = ops.norm(tag + ".norm", x, spec.width);
        x = ops.relu(x);
        x = ops.avg_pool2(x);
        c = spec.width;
    }
    Var flat = ops.flatten(x);
    ops.features(flat);
    int feat = spec.width * (spec.in_h >> spec.depth) * (spec.in_w >> spec.depth);
    return ops.fc("fc", flat, feat, spec.class_count);
}

Var run_vgg11(const ArchitectureSpec& spec, NetOps& ops, Var x) {
    // Standard configuration A; pools saturate at 1x1 so small desk inputs work.
    static const int plan[] = {64, -1, 128, -1, 256, 256, -1, 512, 512, -1, 512, 512, -1};
    int c = spec.in_channels;
    int h = spec.in_h, w = spec.in_w;
    int conv_idx = 0;
    for (int entry : plan) {
        if (entry == -1) {
            if (h >= 2 && w >= 2) {
                x = ops.max_pool2(x);
                h /= 2;
                w /= 2;
            }
            continue;
        }
        x = ops.conv("conv" + std::to_string(conv_idx), x, c, entry, 3, 1, 1, 1);
        x = ops.relu(x);
        c = entry;
        ++conv_idx;
    }
    Var flat = ops.flatten(x);
    ops.features(flat);
    return ops.fc("fc", flat, c * h * w, spec.class_count);
}

Var run_resnet18(const ArchitectureSpec& spec, NetOps& ops, Var x) {
    // ResNet18 with the small-image stem: 3x3 stride-1 conv, no stem max-pool.
    x = ops.conv("stem.conv", x, spec.in_channels, 64, 3, 1, 1, 1);
    x = ops.norm("stem.norm", x, 64);
    x = ops.relu(x);
    int in_c = 64;
    static const int stage_c[] = {64, 128, 256, 512};
    for (int stage = 0; stage < 4; ++stage) {
        int out_c = stage_c[stage];
        for (int block = 0; block < 2; ++block) {
            int stride = (stage > 0 && block == 0) ? 2 : 1;
            std::string tag = "layer" + std::to_string(stage) + ".block" + std::to_string(block);
            Var skip = x;
            Var y = ops.conv(tag + ".conv1", x, in_c, out_c, 3, stride, 1, 1);
            y = ops.norm(tag + ".norm1", y, out_c);
            y = ops.relu(y);
            y = ops.conv(tag + ".conv2", y, out_c, out_c, 3, 1, 1, 1);
            y = ops.norm(tag + ".norm2", y, out_c);
            if (stride != 1 || in_c != out_c) {
                skip = ops.conv(tag + ".down.conv", skip, in_c, out_c, 1, stride, 0, 1);
                skip = ops.norm(tag + ".down.norm", skip, out_c);
            }
            x = ops.relu(ops.add(y, skip));
            in_c = out_c;
        }
    }
    Var pooled = ops.global_avg(x);
    ops.features(pooled);
    return ops.fc("fc", pooled, 512, spec.class_count);
}

Var run_mobilenet(const ArchitectureSpec& spec, NetOps& ops, Var x) {
    // MobileNet v1 depthwise-separable stack with the stride-1 stem used on
    // small images.
    x = ops.conv("stem.conv", x, spec.in_channels, 32, 3, 1, 1, 1);
    x = ops.norm("stem.norm", x, 32);
    x = ops.relu(x);
    static const int plan[][2] = {{64, 1},  {128, 2}, {128, 1}, {256, 2},  {256, 1},
                                  {512, 2}, {512, 1}, {512, 1}, {512, 1},  {512, 1},
                                  {512, 1}, {1024, 2}, {1024, 1}};
    int c = 32;
    int idx = 0;
    for (const auto& p : plan) {
        int out_c = p[0], stride = p[1];
        std::string tag = "sep" + std::to_string(idx++);
        x = ops.conv(tag + ".dw", x, c, c, 3, stride, 1, c);
        x = ops.norm(tag + ".dwnorm", x, c);
        x = ops.relu(x);
        x = ops.conv(tag + ".pw", x, c, out_c, 1, 1, 0, 1);
        x = ops.norm(tag + ".pwnorm", x, out_c);
        x = ops.relu(x);
        c = out_c;
    }
    Var pooled = ops.global_avg(x);
    ops.features(pooled);
    return ops.fc("fc", pooled, 1024, spec.class_count);
}

Var run_net(const ArchitectureSpec& spec, NetOps& ops, Var x) {
    switch (spec.family) {
        case Family::convnet: return run_convnet(spec, ops, x);
        case Family::vgg11: return run_vgg11(spec, ops, x);
        case Family::resnet18_mod: return run_resnet18(spec, ops, x);
        case Family::mobilenet: return run_mobilenet(spec, ops, x);
    }
    throw ArgumentError("bad family enum");
}

class LayoutOps final : public NetOps {
  public:
    std::vector<NamedTensor> layout;

    Var conv(const std::string& name, Var, int in_c, int out_c, int k, int, int, int groups) override {
        push(name + ".weight", {out_c, in_c / groups, k, k});
        push(name + ".bias", {out_c});
        return Var{};
    }
    Var norm(const std::string& name, Var, int c) override {
        push(name + ".gamma", {c});
        push(name + ".beta", {c});
        return Var{};
    }
    Var fc(const std::string& name, Var, int in_f, int out_f) override {
        push(name + ".weight", {out_f, in_f});
        push(name + ".bias", {out_f});
        return Var{};
    }
    Var relu(Var) override { return Var{}; }
    Var avg_pool2(Var) override { return Var{}; }
    Var max_pool2(Var) override { return Var{}; }
    Var global_avg(Var) override { return Var{}; }
    Var flatten(Var) override { return Var{}; }
    Var add(Var, Var) override { return Var{}; }
    void features(Var) override {}

  private:
    void push(const std::string& name, std::vector<int> shape) {
        layout.push_back(NamedTensor{name, Tensor::zeros(std::move(shape))});
    }
};

class GraphOps final : public NetOps {
  public:
    GraphOps(const std::vector<Var>& params) : params_(params) {}
    Var feature_var;

    Var conv(const std::string&, Var x, int in_c, int out_c, int k, int stride, int pad,
             int groups) override {
        Var w = next();
        Var b = next();
        const auto& xs = x.shape();
        ag::ConvGeom g{in_c, xs[2], xs[3], k, stride, pad};
        Var w2 = ag::reshape(w, {out_c, (in_c / groups) * k * k});
        return ag::conv2d(x, w2, b, g, groups);
    }
    Var norm(const std::string&, Var x, int) override {
        Var gamma = next();
        Var beta = next();
        return ag::instance_norm(x, gamma, beta);
    }
    Var fc(const std::string&, Var x, int, int) override {
        Var w = next();
        Var b = next();
        return ag::linear(x, w, b);
    }
    Var relu(Var x) override { return ag::relu(x); }
    Var avg_pool2(Var x) override { return ag::avg_pool2(x); }
    Var max_pool2(Var x) override { return ag::max_pool2(x); }
    Var global_avg(Var x) override {
        std::vector<int> s = x.shape();
        Var flat2 = ag::reshape(x, {s[0] * s[1], s[2] * s[3]});
        return ag::reshape(ag::row_mean(flat2), {s[0], s[1]});
    }
    Var flatten(Var x) override {
        const auto& s = x.shape();
        return ag::reshape(x, {s[0], s[1] * s[2] * s[3]});
    }
    Var add(Var a, Var b) override { return ag::add(a, b); }
    void features(Var x) override { feature_var = x; }

  private:
    Var next() {
        if (cursor_ >= params_.size()) throw ArgumentError("forward_graph: not enough parameters");
        return params_[cursor_++];
    }
    const std::vector<Var>& params_;
    size_t cursor_ = 0;
};

std::vector<double> onehot_rows(int n, int k, const std::vector<uint16_t>& labels, double on = 1.0) {
    std::vector<double> v(static_cast<size_t>(n) * k, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * k + labels[static_cast<size_t>(i)]] = on;
    return v;
}

void check_labels(const std::vector<int>& logits_shape, const std::vector<uint16_t>& labels) {
    if (logits_shape.size() != 2) throw ArgumentError("loss: logits must be {n,k}");
    if (static_cast<int>(labels.size()) != logits_shape[0])
        throw ArgumentError("loss: label count does not match batch");
    for (uint16_t y : labels)
        if (y >= logits_shape[1]) throw ArgumentError("loss: label out of range");
}

}  // namespace

std::vector<NamedTensor> param_layout(const ArchitectureSpec& spec) {
    validate_spec(spec);
    LayoutOps ops;
    run_net(spec, ops, Var{});
    return std::move(ops.layout);
}

int feature_dim(const ArchitectureSpec& spec) {
    validate_spec(spec);
    switch (spec.family) {
        case Family::convnet:
            return spec.width * (spec.in_h >> spec.depth) * (spec.in_w >> spec.depth);
        case Family::resnet18_mod: return 512;
        case Family::mobilenet: return 1024;
        case Family::vgg11: {
            int h = spec.in_h, w = spec.in_w;
            for (int pool = 0; pool < 5; ++pool) {
                if (h >= 2 && w >= 2) {
                    h /= 2;
                    w /= 2;
                }
            }
            return 512 * h * w;
        }
    }
    throw ArgumentError("bad family enum");
}

Classifier build_model(const ArchitectureSpec& spec, uint64_t seed) {
    Classifier model;
    model.spec = spec;
    model.rng_seed = seed;
    model.params = param_layout(spec);
    std::mt19937_64 rng(mix_seed(seed, "model-init"));
    auto ends_with = [](const std::string& s, const std::string& suf) {
        return s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
    };
    // Kaiming-uniform with the torch default slope. The layout always emits a
    // weight immediately followed by its bias, so the bias bound reuses the
    // weight's fan-in.
    int64_t last_fan_in = 1;
    for (NamedTensor& p : model.params) {
        const auto& shape = p.value.shape;
        if (ends_with(p.name, ".weight")) {
            int64_t fan_in = 1;
            for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
            last_fan_in = std::max<int64_t>(fan_in, 1);
            double bound = std::sqrt(1.0 / static_cast<double>(last_fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (double& v : p.value.data) v = dist(rng);
        } else if (ends_with(p.name, ".bias")) {
            double bound = 1.0 / std::sqrt(static_cast<double>(last_fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (double& v : p.value.data) v = dist(rng);
        } else if (ends_with(p.name, ".gamma")) {
            std::fill(p.value.data.begin(), p.value.data.end(), 1.0);
        } else {
            std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
        }
    }
    return model;
}

GraphOutputs forward_graph(Tape& tape, const ArchitectureSpec& spec, Var batch,
                           const std::vector<Var>& params) {
    (void)tape;
    validate_spec(spec);
    const auto& bs = batch.shape();
    if (bs.size() != 4 || bs[1] != spec.in_channels || bs[2] != spec.in_h || bs[3] != spec.in_w)
        throw ArgumentError("forward: batch shape does not match model input");
    GraphOps ops(params);
    Var logits = run_net(spec, ops, batch);
    return GraphOutputs{logits, ops.feature_var};
}

namespace {

std::vector<Var> params_as_constants(Tape& tape, const Classifier& model) {
    std::vector<Var> vars;
    vars.reserve(model.params.size());
    for (const auto& p : model.params) vars.push_back(tape.constant(p.value.shape, p.value.data));
    return vars;
}

Tensor to_tensor(Var v) { return Tensor{v.shape(), v.val()}; }

Var batch_constant(Tape& tape, const Tensor& batch) { return tape.constant(batch.shape, batch.data); }

}  // namespace

Tensor forward(const Classifier& model, const Tensor& batch) {
    Tape tape;
    auto out = forward_graph(tape, model.spec, batch_constant(tape, batch), params_as_constants(tape, model));
    return to_tensor(out.logits);
}

Tensor features(const Classifier& model, const Tensor& batch) {
    Tape tape;
    auto out = forward_graph(tape, model.spec, batch_constant(tape, batch), params_as_constants(tape, model));
    return to_tensor(out.features);
}

Var loss_ce_graph(Var logits, const std::vector<uint16_t>& labels) {
    check_labels(logits.shape(), labels);
    int n = logits.shape()[0], k = logits.shape()[1];
    Var ls = ag::log_softmax_rows(logits);
    Var onehot = logits.tape->constant({n, k}, onehot_rows(n, k, labels));
    return ag::scale(ag::sum_all(ag::mul(ls, onehot)), -1.0 / n);
}

Var cw_margin_graph(Var logits, const std::vector<uint16_t>& labels, double kappa) {
    check_labels(logits.shape(), labels);
    int n = logits.shape()[0], k = logits.shape()[1];
    Tape& t = *logits.tape;
    Var onehot = t.constant({n, k}, onehot_rows(n, k, labels));
    Var suppress = t.constant({n, k}, onehot_rows(n, k, labels, -1e9));
    Var zy = ag::row_sum(ag::mul(logits, onehot));
    Var zother = ag::row_max(ag::add(logits, suppress));
    Var margin = ag::sub(zy, zother);
    Var clamped = ag::clamp_(margin, -kappa, std::numeric_limits<double>::infinity());
    return ag::scale(ag::sum_all(clamped), 1.0 / n);
}

Var dlr_graph(Var logits, const std::vector<uint16_t>& labels) {
    check_labels(logits.shape(), labels);
    int n = logits.shape()[0], k = logits.shape()[1];
    if (k < 3) throw ArgumentError("dlr loss needs at least 3 classes");
    Tape& t = *logits.tape;
    const auto& z = logits.val();
    // Selection masks for the top-1 and top-3 logits are data-dependent
    // constants (the gradient routes through the selected entries).
    std::vector<double> top1(static_cast<size_t>(n) * k, 0.0), top3(top1), other(top1);
    for (int i = 0; i < n; ++i) {
        const double* row = z.data() + static_cast<size_t>(i) * k;
        int i1 = 0, i2 = -1, i3 = -1;
        for (int j = 1; j < k; ++j)
            if (row[j] > row[i1]) i1 = j;
        for (int j = 0; j < k; ++j)
            if (j != i1 && (i2 < 0 || row[j] > row[i2])) i2 = j;
        for (int j = 0; j < k; ++j)
            if (j != i1 && j != i2 && (i3 < 0 || row[j] > row[i3])) i3 = j;
        int y = labels[static_cast<size_t>(i)];
        int om = -1;
        for (int j = 0; j < k; ++j)
            if (j != y && (om < 0 || row[j] > row[om])) om = j;
        top1[static_cast<size_t>(i) * k + i1] = 1.0;
        top3[static_cast<size_t>(i) * k + i3] = 1.0;
        other[static_cast<size_t>(i) * k + om] = 1.0;
    }
    Var onehot_y = t.constant({n, k}, onehot_rows(n, k, labels));
    Var zy = ag::row_sum(ag::mul(logits, onehot_y));
    Var zo = ag::row_sum(ag::mul(logits, t.constant({n, k}, std::move(other))));
    Var z1 = ag::row_sum(ag::mul(logits, t.constant({n, k}, std::move(top1))));
    Var z3 = ag::row_sum(ag::mul(logits, t.constant({n, k}, std::move(top3))));
    Var den = ag::add_scalar(ag::sub(z1, z3), 1e-12);
    Var per = ag::neg(ag::div_(ag::sub(zy, zo), den));
    return ag::scale(ag::sum_all(per), 1.0 / n);
}

Var jitter_graph(Var logits, const std::vector<uint16_t>& labels, const LossOptions& opt) {
    check_labels(logits.shape(), labels);
    int n = logits.shape()[0], k = logits.shape()[1];
    Tape& t = *logits.tape;
    Var linf = ag::add_scalar(ag::row_max(ag::abs_(logits)), 1e-12);
    Var zn = ag::div_(logits, ag::broadcast_cols(linf, k));
    Var p = ag::softmax_rows(ag::scale(zn, opt.jitter_scale));
    Var diff = ag::sub(p, t.constant({n, k}, onehot_rows(n, k, labels)));
    if (opt.jitter_use_noise && opt.jitter_noise_std > 0.0) {
        std::mt19937_64 rng(mix_seed(opt.jitter_seed, "jitter-noise"));
        std::normal_distribution<double> dist(0.0, opt.jitter_noise_std);
        std::vector<double> noise(static_cast<size_t>(n) * k);
        for (double& v : noise) v = dist(rng);
        diff = ag::add(diff, t.constant({n, k}, std::move(noise)));
    }
    return ag::scale(ag::sum_all(ag::mul(diff, diff)), 1.0 / (static_cast<double>(n) * k));
}

Var loss_graph(Var logits, const std::vector<uint16_t>& labels, LossKind kind, const LossOptions& opt) {
    switch (kind) {
        case LossKind::ce: return loss_ce_graph(logits, labels);
        case LossKind::cw_margin: return cw_margin_graph(logits, labels, opt.kappa);
        case LossKind::dlr: return dlr_graph(logits, labels);
        case LossKind::jitter: return jitter_graph(logits, labels, opt);
    }
    throw ArgumentError("bad loss kind");
}

namespace {

double eval_loss(const Tensor& logits, const std::vector<uint16_t>& labels, LossKind kind,
                 const LossOptions& opt = {}) {
    Tape tape;
    Var z = tape.leaf(logits.shape, logits.data);
    return loss_graph(z, labels, kind, opt).val()[0];
}

}  // namespace

double loss_ce(const Tensor& logits, const std::vector<uint16_t>& labels) {
    return eval_loss(logits, labels, LossKind::ce);
}

double cw_margin_loss(const Tensor& logits, const std::vector<uint16_t>& labels, double kappa) {
    LossOptions opt;
    opt.kappa = kappa;
    return eval_loss(logits, labels, LossKind::cw_margin, opt);
}

double dlr_loss(const Tensor& logits, const std::vector<uint16_t>& labels) {
    return eval_loss(logits, labels, LossKind::dlr);
}

Tensor input_gradient(const Classifier& model, const Tensor& batch, const std::vector<uint16_t>& labels,
                      LossKind kind, const LossOptions& opt) {
    Tape tape;
    Var x = tape.leaf(batch.shape, batch.data);
    auto out = forward_graph(tape, model.spec, x, params_as_constants(tape, model));
    Var loss = loss_graph(out.logits, labels, kind, opt);
    Var g = tape.gradients(loss, {x})[0];
    return to_tensor(g);
}

std::vector<NamedTensor> param_gradients(const Classifier& model, const Tensor& batch,
                                         const std::vector<uint16_t>& labels) {
    Tape tape;
    std::vector<Var> params;
    params.reserve(model.params.size());
    for (const auto& p : model.params) params.push_back(tape.leaf(p.value.shape, p.value.data));
    auto out = forward_graph(tape, model.spec, batch_constant(tape, batch), params);
    Var loss = loss_ce_graph(out.logits, labels);
    std::vector<Var> grads = tape.gradients(loss, params);
    std::vector<NamedTensor> result;
    result.reserve(grads.size());
    for (size_t i = 0; i < grads.size(); ++i)
        result.push_back(NamedTensor{model.params[i].name, to_tensor(grads[i])});
    return result;
}

void save_model(const Classifier& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    io::write_magic(out, "DDRW");
    io::write_u32(out, 1);
    io::write_string(out, family_name(model.spec.family));
    io::write_string(out, "params");
    io::write_u32(out, static_cast<uint32_t>(model.spec.in_channels));
    io::write_u32(out, static_cast<uint32_t>(model.spec.in_h));
    io::write_u32(out, static_cast<uint32_t>(model.spec.in_w));
    io::write_u32(out, static_cast<uint32_t>(model.spec.class_count));
    io::write_u32(out, static_cast<uint32_t>(model.spec.depth));
    io::write_u32(out, static_cast<uint32_t>(model.spec.width));
    io::write_u32(out, static_cast<uint32_t>(model.rng_seed));
    io::write_u32(out, static_cast<uint32_t>(model.params.size()));
    for (const auto& p : model.params) io::write_named_tensor(out, p);
    if (!out) throw IoError("write failed: " + path.string());
}

Classifier load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    io::expect_magic(in, "DDRW", path.string());
    uint32_t version = io::read_u32(in);
    if (version != 1) throw FormatError("unsupported DDRW version in " + path.string());
    Classifier model;
    model.spec.family = family_from_string(io::read_string(in));
    io::read_string(in);  // record tag, unused
    model.spec.in_channels = static_cast<int>(io::read_u32(in));
    model.spec.in_h = static_cast<int>(io::read_u32(in));
    model.spec.in_w = static_cast<int>(io::read_u32(in));
    model.spec.class_count = static_cast<int>(io::read_u32(in));
    model.spec.depth = static_cast<int>(io::read_u32(in));
    model.spec.width = static_cast<int>(io::read_u32(in));
    model.rng_seed = io::read_u32(in);
    uint32_t count = io::read_u32(in);
    auto layout = param_layout(model.spec);
    if (count != layout.size()) throw FormatError("DDRW parameter count mismatch in " + path.string());
    model.params.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        NamedTensor p = io::read_named_tensor(in);
        if (p.name != layout[i].name || p.value.shape != layout[i].value.shape)
            throw FormatError("DDRW parameter record " + std::to_string(i) + " does not match the " +
                              family_name(model.spec.family) + " layout in " + path.string());
        model.params.push_back(std::move(p));
    }
    if (!in) throw FormatError("truncated DDRW file: " + path.string());
    return model;
}

}  // namespace ddrb::models
