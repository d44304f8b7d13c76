#include "ddrb/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <tuple>

namespace ddrb::ag {

void LinearMap::finalize() {
    // Build the transposed CSR so the adjoint is also a deterministic gather.
    std::vector<int64_t> count(static_cast<size_t>(in_size) + 1, 0);
    for (int64_t j : index) count[static_cast<size_t>(j) + 1]++;
    for (size_t i = 1; i < count.size(); ++i) count[i] += count[i - 1];
    t_offsets = count;
    t_index.resize(index.size());
    t_weight.resize(weight.size());
    std::vector<int64_t> cursor(t_offsets.begin(), t_offsets.end() - 1);
    for (int64_t out = 0; out < out_size; ++out) {
        for (int64_t e = offsets[static_cast<size_t>(out)]; e < offsets[static_cast<size_t>(out) + 1]; ++e) {
            int64_t in = index[static_cast<size_t>(e)];
            int64_t slot = cursor[static_cast<size_t>(in)]++;
            t_index[static_cast<size_t>(slot)] = out;
            t_weight[static_cast<size_t>(slot)] = weight[static_cast<size_t>(e)];
        }
    }
}

MapPtr make_map(int64_t in_size, int64_t out_size,
                const std::vector<std::tuple<int64_t, int64_t, double>>& triplets) {
    auto m = std::make_shared<LinearMap>();
    m->in_size = in_size;
    m->out_size = out_size;
    std::vector<int64_t> count(static_cast<size_t>(out_size) + 1, 0);
    for (const auto& t : triplets) count[static_cast<size_t>(std::get<0>(t)) + 1]++;
    for (size_t i = 1; i < count.size(); ++i) count[i] += count[i - 1];
    m->offsets = count;
    m->index.resize(triplets.size());
    m->weight.resize(triplets.size());
    std::vector<int64_t> cursor(m->offsets.begin(), m->offsets.end() - 1);
    for (const auto& t : triplets) {
        int64_t slot = cursor[static_cast<size_t>(std::get<0>(t))]++;
        m->index[static_cast<size_t>(slot)] = std::get<1>(t);
        m->weight[static_cast<size_t>(slot)] = std::get<2>(t);
    }
    m->finalize();
    return m;
}

const std::vector<int>& Var::shape() const { return tape->node(id).shape; }
const std::vector<double>& Var::val() const { return tape->node(id).val; }
int64_t Var::numel() const { return ddrb::numel(shape()); }

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::leaf(std::vector<int> shape, std::vector<double> data) {
    if (ddrb::numel(shape) != static_cast<int64_t>(data.size()))
        throw ArgumentError("tape leaf: shape does not match data size");
    Node n;
    n.op = Op::leaf;
    n.shape = std::move(shape);
    n.val = std::move(data);
    return Var{this, push(std::move(n))};
}

Var Tape::constant(std::vector<int> shape, std::vector<double> data) {
    Var v = leaf(std::move(shape), std::move(data));
    nodes_[static_cast<size_t>(v.id)].no_grad = true;
    return v;
}

Var Tape::fill(std::vector<int> shape, double value) {
    std::vector<double> d(static_cast<size_t>(ddrb::numel(shape)), value);
    return constant(std::move(shape), std::move(d));
}

namespace {

Tape& same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw ArgumentError("autograd: operands live on different tapes");
    return *a.tape;
}

void check_same_shape(Var a, Var b, const char* what) {
    if (a.shape() != b.shape()) throw ArgumentError(std::string(what) + ": shape mismatch");
}

Var elementwise(Op op, Var a, Var b) {
    Tape& t = same_tape(a, b);
    check_same_shape(a, b, "elementwise");
    Node n;
    n.op = op;
    n.shape = a.shape();
    n.a = a.id;
    n.b = b.id;
    const auto& x = a.val();
    const auto& y = b.val();
    n.val.resize(x.size());
    switch (op) {
        case Op::add:
            for (size_t i = 0; i < x.size(); ++i) n.val[i] = x[i] + y[i];
            break;
        case Op::sub:
            for (size_t i = 0; i < x.size(); ++i) n.val[i] = x[i] - y[i];
            break;
        case Op::mul:
            for (size_t i = 0; i < x.size(); ++i) n.val[i] = x[i] * y[i];
            break;
        case Op::div_:
            for (size_t i = 0; i < x.size(); ++i) n.val[i] = x[i] / y[i];
            break;
        default:
            throw ArgumentError("elementwise: bad op");
    }
    return Var{&t, t.push(std::move(n))};
}

Var unary(Op op, Var a, double c0 = 0.0) {
    Tape& t = *a.tape;
    Node n;
    n.op = op;
    n.shape = a.shape();
    n.a = a.id;
    n.c0 = c0;
    const auto& x = a.val();
    n.val.resize(x.size());
    switch (op) {
        case Op::neg:
            for (size_t i = 0; i < x.size(); ++i) n.val[i] = -x[i];
            break;
        case Op::scale:
            for (size_t i = 0; i < x.size(); ++i) n.val[i] = c0 * x[i];
            break;
        case Op::add_scalar:
            for (size_t i = 0; i < x.size(); ++i) n.val[i] = x[i] + c0;
            break;
        case Op::exp_:
            for (size_t i = 0; i < x.size(); ++i) n.val[i] = std::exp(x[i]);
            break;
        case Op::log_:
            for (size_t i = 0; i < x.size(); ++i) n.val[i] = std::log(x[i]);
            break;
        case Op::sqrt_:
            for (size_t i = 0; i < x.size(); ++i) n.val[i] = std::sqrt(x[i]);
            break;
        case Op::recip:
            for (size_t i = 0; i < x.size(); ++i) n.val[i] = 1.0 / x[i];
            break;
        default:
            throw ArgumentError("unary: bad op");
    }
    return Var{&t, t.push(std::move(n))};
}

void matmul_impl(const double* a, const double* b, double* out, int m, int k, int n) {
    std::memset(out, 0, sizeof(double) * static_cast<size_t>(m) * static_cast<size_t>(n));
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        double* orow = out + static_cast<int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void apply_map_impl(const LinearMap& m, bool transposed, int slices, const double* in, double* out) {
    const auto& offsets = transposed ? m.t_offsets : m.offsets;
    const auto& index = transposed ? m.t_index : m.index;
    const auto& weight = transposed ? m.t_weight : m.weight;
    int64_t in_size = transposed ? m.out_size : m.in_size;
    int64_t out_size = transposed ? m.in_size : m.out_size;
    for (int s = 0; s < slices; ++s) {
        const double* src = in + static_cast<int64_t>(s) * in_size;
        double* dst = out + static_cast<int64_t>(s) * out_size;
        for (int64_t i = 0; i < out_size; ++i) {
            double acc = 0.0;
            for (int64_t e = offsets[static_cast<size_t>(i)]; e < offsets[static_cast<size_t>(i) + 1]; ++e)
                acc += weight[static_cast<size_t>(e)] * src[index[static_cast<size_t>(e)]];
            dst[i] = acc;
        }
    }
}

}  // namespace

Var add(Var a, Var b) { return elementwise(Op::add, a, b); }
Var sub(Var a, Var b) { return elementwise(Op::sub, a, b); }
Var mul(Var a, Var b) { return elementwise(Op::mul, a, b); }
Var div_(Var a, Var b) { return elementwise(Op::div_, a, b); }
Var neg(Var a) { return unary(Op::neg, a); }
Var scale(Var a, double c) { return unary(Op::scale, a, c); }
Var add_scalar(Var a, double c) { return unary(Op::add_scalar, a, c); }
Var exp_(Var a) { return unary(Op::exp_, a); }
Var log_(Var a) { return unary(Op::log_, a); }
Var sqrt_(Var a) { return unary(Op::sqrt_, a); }
Var recip(Var a) { return unary(Op::recip, a); }

Var maskmul(Var a, std::shared_ptr<const std::vector<double>> mask) {
    Tape& t = *a.tape;
    if (mask->size() != a.val().size()) throw ArgumentError("maskmul: mask size mismatch");
    Node n;
    n.op = Op::maskmul;
    n.shape = a.shape();
    n.a = a.id;
    n.mask = mask;
    const auto& x = a.val();
    n.val.resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) n.val[i] = x[i] * (*mask)[i];
    return Var{&t, t.push(std::move(n))};
}

Var relu(Var a) {
    const auto& x = a.val();
    auto mask = std::make_shared<std::vector<double>>(x.size());
    for (size_t i = 0; i < x.size(); ++i) (*mask)[i] = x[i] > 0.0 ? 1.0 : 0.0;
    return maskmul(a, mask);
}

Var abs_(Var a) {
    const auto& x = a.val();
    auto mask = std::make_shared<std::vector<double>>(x.size());
    for (size_t i = 0; i < x.size(); ++i) (*mask)[i] = x[i] < 0.0 ? -1.0 : 1.0;
    return maskmul(a, mask);
}

Var sign_(Var a) {
    const auto& x = a.val();
    std::vector<double> s(x.size());
    for (size_t i = 0; i < x.size(); ++i) s[i] = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
    return a.tape->constant(a.shape(), std::move(s));
}

Var clamp_(Var a, double lo, double hi) {
    // Copy out of the tape first: pushing nodes may reallocate node storage.
    std::vector<double> x = a.val();
    std::vector<int> shape = a.shape();
    auto mask = std::make_shared<std::vector<double>>(x.size());
    std::vector<double> corr(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        bool inside = x[i] >= lo && x[i] <= hi;
        (*mask)[i] = inside ? 1.0 : 0.0;
        double clipped = std::min(hi, std::max(lo, x[i]));
        corr[i] = clipped - x[i] * (*mask)[i];
    }
    // clamp = maskmul(a) + constant boundary correction, so the gradient is the
    // in-range mask and the value is exact.
    Var inner = maskmul(a, mask);
    Var c = a.tape->constant(std::move(shape), std::move(corr));
    return add(inner, c);
}

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) throw ArgumentError("matmul: bad shapes");
    Node n;
    n.op = Op::matmul;
    n.shape = {sa[0], sb[1]};
    n.a = a.id;
    n.b = b.id;
    n.val.resize(static_cast<size_t>(sa[0]) * static_cast<size_t>(sb[1]));
    matmul_impl(a.val().data(), b.val().data(), n.val.data(), sa[0], sa[1], sb[1]);
    return Var{&t, t.push(std::move(n))};
}

Var transpose(Var a) {
    Tape& t = *a.tape;
    const auto& s = a.shape();
    if (s.size() != 2) throw ArgumentError("transpose: need 2-D");
    Node n;
    n.op = Op::transpose;
    n.shape = {s[1], s[0]};
    n.a = a.id;
    const auto& x = a.val();
    n.val.resize(x.size());
    for (int i = 0; i < s[0]; ++i)
        for (int j = 0; j < s[1]; ++j)
            n.val[static_cast<size_t>(j) * s[0] + i] = x[static_cast<size_t>(i) * s[1] + j];
    return Var{&t, t.push(std::move(n))};
}

Var reshape(Var a, std::vector<int> shape) {
    Tape& t = *a.tape;
    if (ddrb::numel(shape) != a.numel()) throw ArgumentError("reshape: element count mismatch");
    Node n;
    n.op = Op::reshape;
    n.shape = std::move(shape);
    n.a = a.id;
    n.val = a.val();
    return Var{&t, t.push(std::move(n))};
}

Var sum_all(Var a) {
    Tape& t = *a.tape;
    Node n;
    n.op = Op::sum_all;
    n.shape = {1};
    n.a = a.id;
    double acc = 0.0;
    for (double v : a.val()) acc += v;
    n.val = {acc};
    return Var{&t, t.push(std::move(n))};
}

Var row_sum(Var a) {
    Tape& t = *a.tape;
    const auto& s = a.shape();
    if (s.size() != 2) throw ArgumentError("row_sum: need 2-D");
    Node n;
    n.op = Op::row_sum;
    n.shape = {s[0], 1};
    n.a = a.id;
    n.val.assign(static_cast<size_t>(s[0]), 0.0);
    const auto& x = a.val();
    for (int i = 0; i < s[0]; ++i) {
        double acc = 0.0;
        for (int j = 0; j < s[1]; ++j) acc += x[static_cast<size_t>(i) * s[1] + j];
        n.val[static_cast<size_t>(i)] = acc;
    }
    return Var{&t, t.push(std::move(n))};
}

Var col_sum(Var a) {
    Tape& t = *a.tape;
    const auto& s = a.shape();
    if (s.size() != 2) throw ArgumentError("col_sum: need 2-D");
    Node n;
    n.op = Op::col_sum;
    n.shape = {1, s[1]};
    n.a = a.id;
    n.val.assign(static_cast<size_t>(s[1]), 0.0);
    const auto& x = a.val();
    for (int i = 0; i < s[0]; ++i)
        for (int j = 0; j < s[1]; ++j) n.val[static_cast<size_t>(j)] += x[static_cast<size_t>(i) * s[1] + j];
    return Var{&t, t.push(std::move(n))};
}

Var row_max(Var a) {
    Tape& t = *a.tape;
    const auto& s = a.shape();
    if (s.size() != 2) throw ArgumentError("row_max: need 2-D");
    Node n;
    n.op = Op::row_max;
    n.shape = {s[0], 1};
    n.a = a.id;
    n.val.resize(static_cast<size_t>(s[0]));
    auto mask = std::make_shared<std::vector<double>>(a.val().size(), 0.0);
    const auto& x = a.val();
    for (int i = 0; i < s[0]; ++i) {
        int arg = 0;
        double best = x[static_cast<size_t>(i) * s[1]];
        for (int j = 1; j < s[1]; ++j) {
            double v = x[static_cast<size_t>(i) * s[1] + j];
            if (v > best) {
                best = v;
                arg = j;
            }
        }
        n.val[static_cast<size_t>(i)] = best;
        (*mask)[static_cast<size_t>(i) * s[1] + arg] = 1.0;
    }
    n.mask = mask;
    return Var{&t, t.push(std::move(n))};
}

Var row_mean(Var a) {
    const auto& s = a.shape();
    return scale(row_sum(a), 1.0 / s[1]);
}

Var broadcast_cols(Var a, int cols) {
    Tape& t = *a.tape;
    const auto& s = a.shape();
    if (s.size() != 2 || s[1] != 1) throw ArgumentError("broadcast_cols: need {m,1}");
    Node n;
    n.op = Op::broadcast_cols;
    n.shape = {s[0], cols};
    n.a = a.id;
    n.val.resize(static_cast<size_t>(s[0]) * static_cast<size_t>(cols));
    const auto& x = a.val();
    for (int i = 0; i < s[0]; ++i)
        for (int j = 0; j < cols; ++j) n.val[static_cast<size_t>(i) * cols + j] = x[static_cast<size_t>(i)];
    return Var{&t, t.push(std::move(n))};
}

Var broadcast_rows(Var a, int rows) {
    Tape& t = *a.tape;
    const auto& s = a.shape();
    if (s.size() != 2 || s[0] != 1) throw ArgumentError("broadcast_rows: need {1,n}");
    Node n;
    n.op = Op::broadcast_rows;
    n.shape = {rows, s[1]};
    n.a = a.id;
    n.val.resize(static_cast<size_t>(rows) * static_cast<size_t>(s[1]));
    const auto& x = a.val();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < s[1]; ++j) n.val[static_cast<size_t>(i) * s[1] + j] = x[static_cast<size_t>(j)];
    return Var{&t, t.push(std::move(n))};
}

Var broadcast_all(Var a, std::vector<int> shape) {
    Tape& t = *a.tape;
    if (a.numel() != 1) throw ArgumentError("broadcast_all: need scalar");
    Node n;
    n.op = Op::broadcast_all;
    n.a = a.id;
    n.val.assign(static_cast<size_t>(ddrb::numel(shape)), a.val()[0]);
    n.shape = std::move(shape);
    return Var{&t, t.push(std::move(n))};
}

Var apply_map(Var a, MapPtr map, std::vector<int> out_shape) {
    Tape& t = *a.tape;
    int64_t n_in = a.numel();
    if (n_in % map->in_size != 0) throw ArgumentError("apply_map: operand not sliceable by map input");
    int slices = static_cast<int>(n_in / map->in_size);
    if (ddrb::numel(out_shape) != slices * map->out_size)
        throw ArgumentError("apply_map: bad output shape");
    Node n;
    n.op = Op::map_fwd;
    n.a = a.id;
    n.map = std::move(map);
    n.slices = slices;
    n.val.resize(static_cast<size_t>(ddrb::numel(out_shape)));
    n.shape = std::move(out_shape);
    apply_map_impl(*n.map, false, slices, a.val().data(), n.val.data());
    return Var{&t, t.push(std::move(n))};
}

Var apply_map_adjoint(Var a, MapPtr map, std::vector<int> out_shape) {
    Tape& t = *a.tape;
    int64_t n_in = a.numel();
    if (n_in % map->out_size != 0) throw ArgumentError("apply_map_adjoint: operand not sliceable");
    int slices = static_cast<int>(n_in / map->out_size);
    if (ddrb::numel(out_shape) != slices * map->in_size)
        throw ArgumentError("apply_map_adjoint: bad output shape");
    Node n;
    n.op = Op::map_adj;
    n.a = a.id;
    n.map = std::move(map);
    n.slices = slices;
    n.val.resize(static_cast<size_t>(ddrb::numel(out_shape)));
    n.shape = std::move(out_shape);
    apply_map_impl(*n.map, true, slices, a.val().data(), n.val.data());
    return Var{&t, t.push(std::move(n))};
}

std::vector<Var> Tape::gradients(Var loss, const std::vector<Var>& wrt) {
    if (loss.tape != this) throw ArgumentError("gradients: loss not on this tape");
    if (loss.numel() != 1) throw ArgumentError("gradients: loss must be scalar");
    int top = loss.id;

    // depends[i]: node i transitively reads at least one wrt leaf.
    std::vector<char> depends(static_cast<size_t>(top) + 1, 0);
    for (const Var& w : wrt) {
        if (w.tape != this) throw ArgumentError("gradients: wrt not on this tape");
        if (w.id <= top) depends[static_cast<size_t>(w.id)] = 1;
    }
    for (int i = 0; i <= top; ++i) {
        if (depends[static_cast<size_t>(i)]) continue;
        const Node& n = nodes_[static_cast<size_t>(i)];
        if ((n.a >= 0 && depends[static_cast<size_t>(n.a)]) || (n.b >= 0 && depends[static_cast<size_t>(n.b)]))
            depends[static_cast<size_t>(i)] = 1;
    }

    std::vector<int> grad(static_cast<size_t>(top) + 1, -1);
    grad[static_cast<size_t>(top)] = constant({1}, {1.0}).id;

    auto accumulate = [&](int target, Var g) {
        if (target < 0 || target > top) return;
        if (!depends[static_cast<size_t>(target)]) return;
        if (nodes_[static_cast<size_t>(target)].no_grad) return;
        int cur = grad[static_cast<size_t>(target)];
        grad[static_cast<size_t>(target)] = cur < 0 ? g.id : add(Var{this, cur}, g).id;
    };

    for (int i = top; i >= 0; --i) {
        if (grad[static_cast<size_t>(i)] < 0 || !depends[static_cast<size_t>(i)]) continue;
        // Copy the POD pieces we need: accumulate() may reallocate nodes_.
        Op op = nodes_[static_cast<size_t>(i)].op;
        int ia = nodes_[static_cast<size_t>(i)].a;
        int ib = nodes_[static_cast<size_t>(i)].b;
        double c0 = nodes_[static_cast<size_t>(i)].c0;
        auto mask = nodes_[static_cast<size_t>(i)].mask;
        MapPtr map = nodes_[static_cast<size_t>(i)].map;
        Var g{this, grad[static_cast<size_t>(i)]};
        Var out{this, i};
        Var a{this, ia};
        Var b{this, ib};
        switch (op) {
            case Op::leaf:
                break;
            case Op::add:
                accumulate(ia, g);
                accumulate(ib, g);
                break;
            case Op::sub:
                accumulate(ia, g);
                accumulate(ib, neg(g));
                break;
            case Op::mul:
                accumulate(ia, mul(g, b));
                accumulate(ib, mul(g, a));
                break;
            case Op::div_:
                accumulate(ia, div_(g, b));
                accumulate(ib, neg(div_(mul(g, out), b)));
                break;
            case Op::neg:
                accumulate(ia, neg(g));
                break;
            case Op::scale:
                accumulate(ia, scale(g, c0));
                break;
            case Op::add_scalar:
            case Op::reshape:
                if (op == Op::reshape)
                    accumulate(ia, reshape(g, a.shape()));
                else
                    accumulate(ia, g);
                break;
            case Op::exp_:
                accumulate(ia, mul(g, out));
                break;
            case Op::log_:
                accumulate(ia, div_(g, a));
                break;
            case Op::sqrt_:
                accumulate(ia, scale(div_(g, out), 0.5));
                break;
            case Op::recip:
                accumulate(ia, neg(mul(g, mul(out, out))));
                break;
            case Op::maskmul:
                accumulate(ia, maskmul(g, mask));
                break;
            case Op::matmul:
                accumulate(ia, matmul(g, transpose(b)));
                accumulate(ib, matmul(transpose(a), g));
                break;
            case Op::transpose:
                accumulate(ia, transpose(g));
                break;
            case Op::sum_all:
                accumulate(ia, broadcast_all(g, a.shape()));
                break;
            case Op::row_sum:
                accumulate(ia, broadcast_cols(g, a.shape()[1]));
                break;
            case Op::col_sum:
                accumulate(ia, broadcast_rows(g, a.shape()[0]));
                break;
            case Op::row_max:
                accumulate(ia, maskmul(broadcast_cols(g, a.shape()[1]), mask));
                break;
            case Op::broadcast_cols:
                accumulate(ia, row_sum(g));
                break;
            case Op::broadcast_rows:
                accumulate(ia, col_sum(g));
                break;
            case Op::broadcast_all:
                accumulate(ia, sum_all(g));
                break;
            case Op::map_fwd:
                accumulate(ia, apply_map_adjoint(g, map, a.shape()));
                break;
            case Op::map_adj:
                accumulate(ia, apply_map(g, map, a.shape()));
                break;
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const Var& w : wrt) {
        int gid = w.id <= top ? grad[static_cast<size_t>(w.id)] : -1;
        if (gid < 0)
            out.push_back(fill(w.shape(), 0.0));
        else
            out.push_back(Var{this, gid});
    }
    return out;
}

// --- map builders ---

namespace {

// Geometry-keyed cache. Maps are immutable once built, so sharing is safe;
// the mutex only guards the table itself.
std::mutex g_map_mutex;
std::map<std::string, MapPtr> g_map_cache;

MapPtr cache_lookup(const std::string& key) {
    std::lock_guard<std::mutex> lock(g_map_mutex);
    auto it = g_map_cache.find(key);
    return it == g_map_cache.end() ? nullptr : it->second;
}

void cache_store(const std::string& key, MapPtr m) {
    std::lock_guard<std::mutex> lock(g_map_mutex);
    g_map_cache.emplace(key, std::move(m));
}

}  // namespace

MapPtr im2col_map(const ConvGeom& g) {
    std::string key = "im2col:" + std::to_string(g.in_c) + "," + std::to_string(g.in_h) + "," +
                      std::to_string(g.in_w) + "," + std::to_string(g.k) + "," + std::to_string(g.stride) +
                      "," + std::to_string(g.pad);
    if (auto m = cache_lookup(key)) return m;
    int oh = g.out_h(), ow = g.out_w();
    int ckk = g.in_c * g.k * g.k;
    std::vector<std::tuple<int64_t, int64_t, double>> trip;
    trip.reserve(static_cast<size_t>(oh) * ow * ckk);
    for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
            int64_t row = static_cast<int64_t>(i) * ow + j;
            for (int c = 0; c < g.in_c; ++c) {
                for (int ky = 0; ky < g.k; ++ky) {
                    for (int kx = 0; kx < g.k; ++kx) {
                        int y = i * g.stride - g.pad + ky;
                        int x = j * g.stride - g.pad + kx;
                        if (y < 0 || y >= g.in_h || x < 0 || x >= g.in_w) continue;
                        int64_t col = (static_cast<int64_t>(c) * g.k + ky) * g.k + kx;
                        trip.emplace_back(row * ckk + col,
                                          (static_cast<int64_t>(c) * g.in_h + y) * g.in_w + x, 1.0);
                    }
                }
            }
        }
    }
    auto m = make_map(static_cast<int64_t>(g.in_c) * g.in_h * g.in_w,
                      static_cast<int64_t>(oh) * ow * ckk, trip);
    cache_store(key, m);
    return m;
}

MapPtr conv_output_permute_map(int out_c, int out_h, int out_w) {
    std::string key = "convperm:" + std::to_string(out_c) + "," + std::to_string(out_h) + "," +
                      std::to_string(out_w);
    if (auto m = cache_lookup(key)) return m;
    int64_t hw = static_cast<int64_t>(out_h) * out_w;
    std::vector<std::tuple<int64_t, int64_t, double>> trip;
    trip.reserve(static_cast<size_t>(hw) * out_c);
    for (int o = 0; o < out_c; ++o)
        for (int64_t p = 0; p < hw; ++p) trip.emplace_back(o * hw + p, p * out_c + o, 1.0);
    auto m = make_map(hw * out_c, hw * out_c, trip);
    cache_store(key, m);
    return m;
}

MapPtr channel_broadcast_map(int c, int hw) {
    std::string key = "chanbc:" + std::to_string(c) + "," + std::to_string(hw);
    if (auto m = cache_lookup(key)) return m;
    std::vector<std::tuple<int64_t, int64_t, double>> trip;
    trip.reserve(static_cast<size_t>(c) * hw);
    for (int i = 0; i < c; ++i)
        for (int p = 0; p < hw; ++p) trip.emplace_back(static_cast<int64_t>(i) * hw + p, i, 1.0);
    auto m = make_map(c, static_cast<int64_t>(c) * hw, trip);
    cache_store(key, m);
    return m;
}

MapPtr channel_mean_map(int c, int hw) {
    std::string key = "chanmean:" + std::to_string(c) + "," + std::to_string(hw);
    if (auto m = cache_lookup(key)) return m;
    std::vector<std::tuple<int64_t, int64_t, double>> trip;
    trip.reserve(static_cast<size_t>(c) * c * hw);
    double wgt = 1.0 / c;
    for (int i = 0; i < c; ++i)
        for (int p = 0; p < hw; ++p)
            for (int j = 0; j < c; ++j)
                trip.emplace_back(static_cast<int64_t>(i) * hw + p,
                                  static_cast<int64_t>(j) * hw + p, wgt);
    auto m = make_map(static_cast<int64_t>(c) * hw, static_cast<int64_t>(c) * hw, trip);
    cache_store(key, m);
    return m;
}

MapPtr avgpool2_map(int h, int w) {
    std::string key = "avgpool2:" + std::to_string(h) + "," + std::to_string(w);
    if (auto m = cache_lookup(key)) return m;
    int oh = h / 2, ow = w / 2;
    std::vector<std::tuple<int64_t, int64_t, double>> trip;
    trip.reserve(static_cast<size_t>(oh) * ow * 4);
    for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    trip.emplace_back(static_cast<int64_t>(i) * ow + j,
                                      static_cast<int64_t>(2 * i + dy) * w + (2 * j + dx), 0.25);
    auto m = make_map(static_cast<int64_t>(h) * w, static_cast<int64_t>(oh) * ow, trip);
    cache_store(key, m);
    return m;
}

MapPtr flip_horizontal_map(int h, int w) {
    std::string key = "fliph:" + std::to_string(h) + "," + std::to_string(w);
    if (auto m = cache_lookup(key)) return m;
    std::vector<std::tuple<int64_t, int64_t, double>> trip;
    trip.reserve(static_cast<size_t>(h) * w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            trip.emplace_back(static_cast<int64_t>(i) * w + j, static_cast<int64_t>(i) * w + (w - 1 - j), 1.0);
    auto m = make_map(static_cast<int64_t>(h) * w, static_cast<int64_t>(h) * w, trip);
    cache_store(key, m);
    return m;
}

MapPtr translate_map(int h, int w, int dy, int dx) {
    // Output pixel (i,j) reads input (i-dy, j-dx); zero when out of range.
    std::vector<std::tuple<int64_t, int64_t, double>> trip;
    trip.reserve(static_cast<size_t>(h) * w);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            int si = i - dy, sj = j - dx;
            if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
            trip.emplace_back(static_cast<int64_t>(i) * w + j, static_cast<int64_t>(si) * w + sj, 1.0);
        }
    }
    return make_map(static_cast<int64_t>(h) * w, static_cast<int64_t>(h) * w, trip);
}

MapPtr bilinear_resize_map(int in_h, int in_w, int out_h, int out_w) {
    std::string key = "bilin:" + std::to_string(in_h) + "," + std::to_string(in_w) + "," +
                      std::to_string(out_h) + "," + std::to_string(out_w);
    if (auto m = cache_lookup(key)) return m;
    std::vector<std::tuple<int64_t, int64_t, double>> trip;
    trip.reserve(static_cast<size_t>(out_h) * out_w * 4);
    double sy = static_cast<double>(in_h) / out_h;
    double sx = static_cast<double>(in_w) / out_w;
    for (int i = 0; i < out_h; ++i) {
        double fy = (i + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        for (int j = 0; j < out_w; ++j) {
            double fx = (j + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int64_t out = static_cast<int64_t>(i) * out_w + j;
            for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                    double wgt = (dy ? wy : 1.0 - wy) * (dx ? wx : 1.0 - wx);
                    if (wgt == 0.0) continue;
                    int y = std::clamp(y0 + dy, 0, in_h - 1);
                    int x = std::clamp(x0 + dx, 0, in_w - 1);
                    trip.emplace_back(out, static_cast<int64_t>(y) * in_w + x, wgt);
                }
            }
        }
    }
    auto m = make_map(static_cast<int64_t>(in_h) * in_w, static_cast<int64_t>(out_h) * out_w, trip);
    cache_store(key, m);
    return m;
}

MapPtr affine_sample_map(int h, int w, double inv00, double inv01, double inv10, double inv11) {
    std::vector<std::tuple<int64_t, int64_t, double>> trip;
    trip.reserve(static_cast<size_t>(h) * w * 4);
    double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            double dy = i - cy, dx = j - cx;
            double sy = inv00 * dy + inv01 * dx + cy;
            double sx = inv10 * dy + inv11 * dx + cx;
            int y0 = static_cast<int>(std::floor(sy));
            int x0 = static_cast<int>(std::floor(sx));
            double wy = sy - y0, wx = sx - x0;
            int64_t out = static_cast<int64_t>(i) * w + j;
            for (int ey = 0; ey < 2; ++ey) {
                for (int ex = 0; ex < 2; ++ex) {
                    int y = y0 + ey, x = x0 + ex;
                    if (y < 0 || y >= h || x < 0 || x >= w) continue;  // zero outside
                    double wgt = (ey ? wy : 1.0 - wy) * (ex ? wx : 1.0 - wx);
                    if (wgt == 0.0) continue;
                    trip.emplace_back(out, static_cast<int64_t>(y) * w + x, wgt);
                }
            }
        }
    }
    return make_map(static_cast<int64_t>(h) * w, static_cast<int64_t>(h) * w, trip);
}

MapPtr crop_patch_map(int h, int w, int top, int left, int side) {
    std::vector<std::tuple<int64_t, int64_t, double>> trip;
    trip.reserve(static_cast<size_t>(side) * side);
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j)
            trip.emplace_back(static_cast<int64_t>(i) * side + j,
                              static_cast<int64_t>(top + i) * w + (left + j), 1.0);
    return make_map(static_cast<int64_t>(h) * w, static_cast<int64_t>(side) * side, trip);
}

MapPtr channel_slice_map(int c, int hw, int c0, int c1) {
    std::vector<std::tuple<int64_t, int64_t, double>> trip;
    trip.reserve(static_cast<size_t>(c1 - c0) * hw);
    for (int i = c0; i < c1; ++i)
        for (int p = 0; p < hw; ++p)
            trip.emplace_back(static_cast<int64_t>(i - c0) * hw + p, static_cast<int64_t>(i) * hw + p, 1.0);
    return make_map(static_cast<int64_t>(c) * hw, static_cast<int64_t>(c1 - c0) * hw, trip);
}

// --- composites ---

Var linear(Var x, Var w, Var b) {
    Var y = matmul(x, transpose(w));
    if (b.ok()) {
        Var brow = reshape(b, {1, b.shape()[0]});
        y = add(y, broadcast_rows(brow, y.shape()[0]));
    }
    return y;
}

Var conv2d(Var x, Var w, Var b, const ConvGeom& g, int groups) {
    const auto& xs = x.shape();
    if (xs.size() != 4 || xs[1] != g.in_c) throw ArgumentError("conv2d: input shape mismatch");
    int n = xs[0], oh = g.out_h(), ow = g.out_w();
    int out_c = w.shape()[0];
    if (groups == 1) {
        Var cols = apply_map(x, im2col_map(g), {n * oh * ow, g.in_c * g.k * g.k});
        Var y = matmul(cols, transpose(w));  // {n*oh*ow, out_c}
        Var y4 = apply_map(y, conv_output_permute_map(out_c, oh, ow), {n, out_c, oh, ow});
        if (b.ok()) {
            Var brow = apply_map(b, channel_broadcast_map(out_c, oh * ow), {1, out_c * oh * ow});
            y4 = add(y4, reshape(broadcast_rows(brow, n), {n, out_c, oh, ow}));
        }
        return y4;
    }
    if (g.in_c % groups != 0 || out_c % groups != 0) throw ArgumentError("conv2d: groups must divide channels");
    int cg = g.in_c / groups, og = out_c / groups;
    ConvGeom gg = g;
    gg.in_c = cg;
    // Run each group and stitch the channel blocks back together.
    std::vector<Var> parts;
    parts.reserve(static_cast<size_t>(groups));
    for (int gi = 0; gi < groups; ++gi) {
        Var xg = apply_map(x, channel_slice_map(g.in_c, g.in_h * g.in_w, gi * cg, (gi + 1) * cg),
                           {n, cg, g.in_h, g.in_w});
        Var wg = apply_map(w, channel_slice_map(out_c, cg * g.k * g.k, gi * og, (gi + 1) * og),
                           {og, cg * g.k * g.k});
        Var part = conv2d(xg, wg, Var{}, gg, 1);
        parts.push_back(part);
    }
    // Concatenate along channels via adjoint slices (scatter back into place).
    Var out = parts[0].tape->fill({n, out_c, oh, ow}, 0.0);
    for (int gi = 0; gi < groups; ++gi) {
        Var scattered = apply_map_adjoint(parts[static_cast<size_t>(gi)],
                                          channel_slice_map(out_c, oh * ow, gi * og, (gi + 1) * og),
                                          {n, out_c, oh, ow});
        out = add(out, scattered);
    }
    if (b.ok()) {
        Var brow = apply_map(b, channel_broadcast_map(out_c, oh * ow), {1, out_c * oh * ow});
        out = add(out, reshape(broadcast_rows(brow, n), {n, out_c, oh, ow}));
    }
    return out;
}

Var instance_norm(Var x, Var gamma, Var beta, double eps) {
    std::vector<int> s = x.shape();  // copy: later pushes may move node storage
    if (s.size() != 4) throw ArgumentError("instance_norm: need {n,c,h,w}");
    int n = s[0], c = s[1], hw = s[2] * s[3];
    Var x2 = reshape(x, {n * c, hw});
    Var m = row_mean(x2);
    Var xc = sub(x2, broadcast_cols(m, hw));
    Var v = row_mean(mul(xc, xc));
    Var inv = recip(sqrt_(add_scalar(v, eps)));
    Var y = mul(xc, broadcast_cols(inv, hw));
    if (gamma.ok()) {
        Var grow = apply_map(gamma, channel_broadcast_map(c, hw), {1, c * hw});
        Var brow = apply_map(beta, channel_broadcast_map(c, hw), {1, c * hw});
        Var g2 = reshape(broadcast_rows(grow, n), {n * c, hw});
        Var b2 = reshape(broadcast_rows(brow, n), {n * c, hw});
        y = add(mul(y, g2), b2);
    }
    return reshape(y, s);
}

Var avg_pool2(Var x) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ArgumentError("avg_pool2: need {n,c,h,w}");
    return apply_map(x, avgpool2_map(s[2], s[3]), {s[0], s[1], s[2] / 2, s[3] / 2});
}

Var max_pool2(Var x) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ArgumentError("max_pool2: need {n,c,h,w}");
    int n = s[0], c = s[1], h = s[2], w = s[3];
    int oh = h / 2, ow = w / 2;
    // Window argmax depends on the data, so the routing map is built per call.
    const auto& xv = x.val();
    std::vector<std::tuple<int64_t, int64_t, double>> trip;
    trip.reserve(static_cast<size_t>(n) * c * oh * ow);
    int64_t hw = static_cast<int64_t>(h) * w;
    int64_t ohw = static_cast<int64_t>(oh) * ow;
    for (int64_t sl = 0; sl < static_cast<int64_t>(n) * c; ++sl) {
        const double* src = xv.data() + sl * hw;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                int64_t best_idx = static_cast<int64_t>(2 * i) * w + 2 * j;
                double best = src[best_idx];
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        int64_t idx = static_cast<int64_t>(2 * i + dy) * w + (2 * j + dx);
                        if (src[idx] > best) {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                trip.emplace_back(sl * ohw + static_cast<int64_t>(i) * ow + j, sl * hw + best_idx, 1.0);
            }
        }
    }
    auto m = make_map(static_cast<int64_t>(n) * c * hw, static_cast<int64_t>(n) * c * ohw, trip);
    return apply_map(x, m, {n, c, oh, ow});
}

Var log_softmax_rows(Var z) {
    int cols = z.shape()[1];
    Var m = row_max(z);
    Var shifted = sub(z, broadcast_cols(m, cols));
    Var lse = log_(row_sum(exp_(shifted)));
    return sub(shifted, broadcast_cols(lse, cols));
}

Var softmax_rows(Var z) { return exp_(log_softmax_rows(z)); }

}  // namespace ddrb::ag
