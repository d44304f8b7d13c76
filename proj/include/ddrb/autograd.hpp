#pragma once

// Reverse-mode autodiff over dense double tensors, eager evaluation.
//
// Backward rules are themselves expressed through the public op set, so
// gradients are ordinary graph nodes and can be differentiated again. That is
// what lets gradient-matching and trajectory-matching distillation take
// derivatives through an inner gradient computation without any special
// casing.
//
// Structured data movement (im2col, pooling windows, bilinear sampling, axis
// permutes, padding, flips) is expressed as one primitive: a sparse linear map
// applied independently to each leading slice of the operand. The adjoint of a
// map is the transposed map, which is materialized once, so backward passes
// are gathers too and stay deterministic.

#include <cstdint>
#include <memory>
#include <vector>

#include "ddrb/util.hpp"

namespace ddrb::ag {

struct LinearMap {
    int64_t in_size = 0;
    int64_t out_size = 0;
    std::vector<int64_t> offsets;  // out_size + 1 entries into index/weight
    std::vector<int64_t> index;
    std::vector<double> weight;
    // Transposed direction, filled by finalize().
    std::vector<int64_t> t_offsets;
    std::vector<int64_t> t_index;
    std::vector<double> t_weight;

    void finalize();
};
using MapPtr = std::shared_ptr<const LinearMap>;

// Builds a map from (out_index, in_index, weight) triplets.
MapPtr make_map(int64_t in_size, int64_t out_size,
                const std::vector<std::tuple<int64_t, int64_t, double>>& triplets);

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool ok() const { return tape != nullptr && id >= 0; }
    const std::vector<int>& shape() const;
    const std::vector<double>& val() const;
    int64_t numel() const;
};

enum class Op : uint8_t {
    leaf,
    add,
    sub,
    mul,
    div_,
    neg,
    scale,       // c0 * a
    add_scalar,  // a + c0
    exp_,
    log_,
    sqrt_,
    recip,
    maskmul,  // a * mask (mask constant; relu/clamp/abs backward live here)
    matmul,
    transpose,
    reshape,
    sum_all,
    row_sum,
    col_sum,
    row_max,
    broadcast_cols,
    broadcast_rows,
    broadcast_all,
    map_fwd,
    map_adj,
};

struct Node {
    Op op = Op::leaf;
    std::vector<int> shape;
    std::vector<double> val;
    int a = -1;
    int b = -1;
    double c0 = 0.0;
    std::shared_ptr<const std::vector<double>> mask;
    MapPtr map;
    int slices = 1;
    bool no_grad = false;  // constants: backward never propagates into them
};

class Tape {
  public:
    Var leaf(std::vector<int> shape, std::vector<double> data);
    Var constant(std::vector<int> shape, std::vector<double> data);
    Var fill(std::vector<int> shape, double value);

    // d(loss)/d(each wrt), as new nodes on this tape. loss must be scalar.
    std::vector<Var> gradients(Var loss, const std::vector<Var>& wrt);

    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }
    void reserve(size_t n) { nodes_.reserve(n); }

    int push(Node n);

  private:
    std::vector<Node> nodes_;
};

// Elementwise (shapes must match exactly).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div_(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var exp_(Var a);
Var log_(Var a);
Var sqrt_(Var a);
Var recip(Var a);
Var relu(Var a);
Var abs_(Var a);
Var sign_(Var a);  // derivative treated as 0
Var clamp_(Var a, double lo, double hi);
Var maskmul(Var a, std::shared_ptr<const std::vector<double>> mask);

// 2-D matrix ops.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, std::vector<int> shape);
Var sum_all(Var a);                    // -> {1}
Var row_sum(Var a);                    // {m,n} -> {m,1}
Var col_sum(Var a);                    // {m,n} -> {1,n}
Var row_max(Var a);                    // {m,n} -> {m,1}, gradient routed to (first) argmax
Var row_mean(Var a);
Var broadcast_cols(Var a, int n);      // {m,1} -> {m,n}
Var broadcast_rows(Var a, int m);      // {1,n} -> {m,n}
Var broadcast_all(Var a, std::vector<int> shape);  // {1} -> shape

// Applies `map` to each leading slice of size map->in_size; output shape given
// by caller (its numel must be slices * map->out_size).
Var apply_map(Var a, MapPtr map, std::vector<int> out_shape);
Var apply_map_adjoint(Var a, MapPtr map, std::vector<int> out_shape);

// --- structured map builders (cached by geometry where it pays off) ---

struct ConvGeom {
    int in_c = 0, in_h = 0, in_w = 0;
    int k = 3, stride = 1, pad = 1;
    int out_h() const { return (in_h + 2 * pad - k) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad - k) / stride + 1; }
};

// Per-image im2col: slice C*H*W -> (OH*OW) x (C*k*k) rows.
MapPtr im2col_map(const ConvGeom& g);
// Per-image permute of matmul output rows (OH*OW, O) -> (O, OH, OW).
MapPtr conv_output_permute_map(int out_c, int out_h, int out_w);
// Per-image broadcast of a length-C vector across C x HW.
MapPtr channel_broadcast_map(int c, int hw);
// Per-image mean over channels, broadcast back to every channel (C x HW -> C x HW).
MapPtr channel_mean_map(int c, int hw);
// Per-slice spatial ops on H x W.
MapPtr avgpool2_map(int h, int w);
MapPtr flip_horizontal_map(int h, int w);
MapPtr translate_map(int h, int w, int dy, int dx);           // zero fill
MapPtr bilinear_resize_map(int in_h, int in_w, int out_h, int out_w);  // edge clamp
// Inverse-affine bilinear sampling about the image center, zero outside.
// Maps output pixel p to input coordinate A_inv * (p - center) + center.
MapPtr affine_sample_map(int h, int w, double inv00, double inv01, double inv10, double inv11);
MapPtr crop_patch_map(int h, int w, int top, int left, int side);
// Per-image channel-range slice [c0, c1) out of C channels of HW pixels.
MapPtr channel_slice_map(int c, int hw, int c0, int c1);

// --- composites ---

// x {n,f}, w {o,f}, b {o} (pass invalid Var to skip bias) -> {n,o}
Var linear(Var x, Var w, Var b);
// x {n,c,h,w}, w {o, c/groups*k*k}, b {o}; returns {n,o,oh,ow}
Var conv2d(Var x, Var w, Var b, const ConvGeom& g, int groups = 1);
// Per-sample, per-channel normalization over spatial dims; gamma/beta {c}.
Var instance_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var avg_pool2(Var x);
Var max_pool2(Var x);  // gradient routed to (first) window argmax
Var log_softmax_rows(Var z);
Var softmax_rows(Var z);

}  // namespace ddrb::ag
