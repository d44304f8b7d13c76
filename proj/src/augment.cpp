#include "ddrb/augment.hpp"

#include <cmath>

namespace ddrb::augment {

namespace {

const char* names[] = {"color", "crop", "cutout", "flip", "rotate", "scale"};

void check_batch(const std::vector<int>& shape) {
    if (shape.size() != 4) throw ArgumentError("augment: batch must be {n,c,h,w}");
}

int round_int(double v) { return static_cast<int>(std::lround(v)); }

}  // namespace

std::string kind_name(AugKind k) { return names[static_cast<int>(k)]; }

AugKind kind_from_name(const std::string& name) {
    for (int i = 0; i < 6; ++i)
        if (name == names[i]) return static_cast<AugKind>(i);
    throw ArgumentError("unknown augmentation '" + name +
                        "' (expected color|crop|cutout|flip|rotate|scale)");
}

AugmentationPolicy policy_from_names(const std::vector<std::string>& names_in) {
    AugmentationPolicy p;
    if (names_in.empty() || (names_in.size() == 1 && names_in[0] == "none")) {
        p.strategy = AugmentationPolicy::Strategy::none;
        return p;
    }
    for (const auto& n : names_in) p.ops.push_back(kind_from_name(n));
    return p;
}

void validate_policy(const AugmentationPolicy& policy) {
    if (policy.strategy == AugmentationPolicy::Strategy::pick_one_random && policy.ops.empty())
        throw ArgumentError("augmentation policy has no ops to pick from");
    const ParamRanges& r = policy.ranges;
    if (r.crop_ratio < 0.0 || r.crop_ratio > 0.25)
        throw ArgumentError("crop ratio must lie in [0, 0.25]");
    if (r.cutout_ratio < 0.0 || r.cutout_ratio > 1.0)
        throw ArgumentError("cutout ratio must lie in [0, 1]");
    if (r.rotate_degrees < 0.0 || r.rotate_degrees > 15.0)
        throw ArgumentError("rotation range must lie in [0, 15] degrees");
    if (r.scale_lo < 0.8 || r.scale_hi > 1.2 || r.scale_lo > r.scale_hi)
        throw ArgumentError("scale range must lie within [0.8, 1.2]");
    if (r.flip_prob < 0.0 || r.flip_prob > 1.0)
        throw ArgumentError("flip probability must lie in [0, 1]");
    if (r.brightness < 0.0 || r.saturation < 0.0 || r.contrast < 0.0)
        throw ArgumentError("color ranges must be nonnegative");
}

TransformParams sample_params(AugKind kind, const ParamRanges& ranges, int height, int width,
                              std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    TransformParams p;
    switch (kind) {
        case AugKind::color:
            p.brightness_shift = (unit(rng) - 0.5) * ranges.brightness;
            p.saturation_mult = unit(rng) * ranges.saturation;
            p.contrast_mult = unit(rng) + ranges.contrast;
            break;
        case AugKind::crop: {
            int pad_y = round_int(ranges.crop_ratio * height);
            int pad_x = round_int(ranges.crop_ratio * width);
            p.shift_y = std::uniform_int_distribution<int>(-pad_y, pad_y)(rng);
            p.shift_x = std::uniform_int_distribution<int>(-pad_x, pad_x)(rng);
            break;
        }
        case AugKind::cutout: {
            double side = std::sqrt(ranges.cutout_ratio);
            p.cut_h = round_int(side * height);
            p.cut_w = round_int(side * width);
            if (p.cut_h > 0 && p.cut_w > 0) {
                p.cut_top = std::uniform_int_distribution<int>(0, height - p.cut_h)(rng);
                p.cut_left = std::uniform_int_distribution<int>(0, width - p.cut_w)(rng);
            }
            break;
        }
        case AugKind::flip: p.do_flip = unit(rng) < ranges.flip_prob; break;
        case AugKind::rotate:
            p.angle_deg = (unit(rng) * 2.0 - 1.0) * ranges.rotate_degrees;
            break;
        case AugKind::scale:
            p.scale_factor = ranges.scale_lo + unit(rng) * (ranges.scale_hi - ranges.scale_lo);
            break;
    }
    return p;
}

ag::Var dsa_transform_graph(ag::Var batch, AugKind kind, const TransformParams& params) {
    check_batch(batch.shape());
    std::vector<int> shape = batch.shape();
    int n = shape[0], c = shape[1], h = shape[2], w = shape[3];
    ag::Var y = batch;
    switch (kind) {
        case AugKind::color: {
            if (std::abs(params.brightness_shift) > 0.5 || params.saturation_mult < 0.0 ||
                params.saturation_mult > 3.0 || params.contrast_mult < 0.0 ||
                params.contrast_mult > 3.0)
                throw ArgumentError("color parameters out of range");
            // brightness, then per-pixel saturation, then per-image contrast
            y = ag::add_scalar(y, params.brightness_shift);
            ag::Var chan_mean = ag::apply_map(y, ag::channel_mean_map(c, h * w), shape);
            y = ag::add(ag::scale(ag::sub(y, chan_mean), params.saturation_mult), chan_mean);
            ag::Var flat = ag::reshape(y, {n, c * h * w});
            ag::Var img_mean =
                ag::reshape(ag::broadcast_cols(ag::row_mean(flat), c * h * w), shape);
            y = ag::add(ag::scale(ag::sub(y, img_mean), params.contrast_mult), img_mean);
            break;
        }
        case AugKind::crop: {
            if (std::abs(params.shift_y) * 4 > h || std::abs(params.shift_x) * 4 > w)
                throw ArgumentError("crop shift exceeds a quarter of the image side");
            if (params.shift_y != 0 || params.shift_x != 0)
                y = ag::apply_map(y, ag::translate_map(h, w, params.shift_y, params.shift_x),
                                  shape);
            break;
        }
        case AugKind::cutout: {
            if (params.cut_h < 0 || params.cut_w < 0 || params.cut_top < 0 ||
                params.cut_left < 0 || params.cut_top + params.cut_h > h ||
                params.cut_left + params.cut_w > w)
                throw ArgumentError("cutout window does not fit inside the image");
            if (params.cut_h > 0 && params.cut_w > 0) {
                auto mask = std::make_shared<std::vector<double>>(batch.numel(), 1.0);
                for (int img = 0; img < n * c; ++img)
                    for (int i = params.cut_top; i < params.cut_top + params.cut_h; ++i)
                        for (int j = params.cut_left; j < params.cut_left + params.cut_w; ++j)
                            (*mask)[(static_cast<size_t>(img) * h + i) * w + j] = 0.0;
                y = ag::maskmul(y, mask);
            }
            break;
        }
        case AugKind::flip:
            if (params.do_flip) y = ag::apply_map(y, ag::flip_horizontal_map(h, w), shape);
            break;
        case AugKind::rotate: {
            if (std::abs(params.angle_deg) > 15.0)
                throw ArgumentError("rotation angle must lie in [-15, 15] degrees");
            if (params.angle_deg != 0.0) {
                double t = params.angle_deg * std::acos(-1.0) / 180.0;
                // inverse rotation in (dy, dx) about the center
                y = ag::apply_map(
                    y, ag::affine_sample_map(h, w, std::cos(t), std::sin(t), -std::sin(t),
                                             std::cos(t)),
                    shape);
            }
            break;
        }
        case AugKind::scale: {
            double s = params.scale_factor;
            if (s < 0.8 || s > 1.2) throw ArgumentError("scale factor must lie in [0.8, 1.2]");
            if (s != 1.0)
                y = ag::apply_map(y, ag::affine_sample_map(h, w, 1.0 / s, 0.0, 0.0, 1.0 / s),
                                  shape);
            break;
        }
    }
    return ag::clamp_(y, 0.0, 1.0);
}

Tensor dsa_transform(const Tensor& batch, AugKind kind, const TransformParams& params) {
    ag::Tape tape;
    ag::Var x = tape.constant(batch.shape, batch.data);
    ag::Var y = dsa_transform_graph(x, kind, params);
    return Tensor{y.shape(), y.val()};
}

ag::Var dsa_apply_graph(ag::Var batch, const AugmentationPolicy& policy, uint64_t seed) {
    validate_policy(policy);
    if (policy.strategy == AugmentationPolicy::Strategy::none)
        return ag::clamp_(batch, 0.0, 1.0);
    check_batch(batch.shape());
    std::mt19937_64 rng(mix_seed(seed, "dsa-apply"));
    size_t pick = std::uniform_int_distribution<size_t>(0, policy.ops.size() - 1)(rng);
    AugKind kind = policy.ops[pick];
    TransformParams params =
        sample_params(kind, policy.ranges, batch.shape()[2], batch.shape()[3], rng);
    return dsa_transform_graph(batch, kind, params);
}

Tensor dsa_apply(const Tensor& batch, const AugmentationPolicy& policy, uint64_t seed) {
    ag::Tape tape;
    ag::Var x = tape.constant(batch.shape, batch.data);
    ag::Var y = dsa_apply_graph(x, policy, seed);
    return Tensor{y.shape(), y.val()};
}

}  // namespace ddrb::augment
