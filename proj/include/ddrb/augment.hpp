#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ddrb/autograd.hpp"
#include "ddrb/util.hpp"

namespace ddrb::augment {

enum class AugKind { color, crop, cutout, flip, rotate, scale };

std::string kind_name(AugKind k);
AugKind kind_from_name(const std::string& name);

// Sampling ranges. The documented bounds double as validation limits: crop
// shifts stay within a quarter of the side, scale within [0.8, 1.2], rotation
// within +-15 degrees.
struct ParamRanges {
    double brightness = 1.0;     // additive shift drawn from (u-0.5)*brightness
    double saturation = 2.0;     // per-pixel channel spread scaled by u*saturation
    double contrast = 0.5;       // per-image spread scaled by u+contrast, so [0.5, 1.5)
    double crop_ratio = 0.125;   // max shift as a fraction of the side
    double cutout_ratio = 0.25;  // zeroed area fraction; side = round(sqrt(ratio)*dim)
    double rotate_degrees = 15.0;
    double scale_lo = 0.8;
    double scale_hi = 1.2;
    double flip_prob = 0.5;
};

struct AugmentationPolicy {
    enum class Strategy { pick_one_random, none };
    std::vector<AugKind> ops;
    ParamRanges ranges;
    Strategy strategy = Strategy::pick_one_random;
};

AugmentationPolicy policy_from_names(const std::vector<std::string>& names);
void validate_policy(const AugmentationPolicy& policy);

// One concrete draw; only the fields for the chosen kind are meaningful.
struct TransformParams {
    double brightness_shift = 0.0;
    double saturation_mult = 1.0;
    double contrast_mult = 1.0;
    int shift_y = 0, shift_x = 0;      // crop
    int cut_top = 0, cut_left = 0;     // cutout window position
    int cut_h = 0, cut_w = 0;          // cutout window size (0 = none)
    bool do_flip = true;               // flip
    double angle_deg = 0.0;            // rotate
    double scale_factor = 1.0;         // scale
};

// Batch-shared draw for one op. Deterministic in rng state; independent of n.
TransformParams sample_params(AugKind kind, const ParamRanges& ranges, int height, int width,
                              std::mt19937_64& rng);

// Pure deterministic transform of a {n,c,h,w} graph value, clipped to [0,1].
ag::Var dsa_transform_graph(ag::Var batch, AugKind kind, const TransformParams& params);
Tensor dsa_transform(const Tensor& batch, AugKind kind, const TransformParams& params);

// Draws one op from the policy (uniformly via seed), samples its parameters
// once, and applies them to the whole batch. Two calls with the same seed pick
// the same transform even for different batches, which is what lets the
// distiller augment real and synthetic data identically.
ag::Var dsa_apply_graph(ag::Var batch, const AugmentationPolicy& policy, uint64_t seed);
Tensor dsa_apply(const Tensor& batch, const AugmentationPolicy& policy, uint64_t seed);

}  // namespace ddrb::augment
