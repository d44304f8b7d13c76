#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddrb/autograd.hpp"
#include "ddrb/util.hpp"

namespace ddrb::models {

enum class Family { convnet, resnet18_mod, vgg11, mobilenet };

Family family_from_string(const std::string& s);
std::string family_name(Family f);

struct ArchitectureSpec {
    Family family = Family::convnet;
    int depth = 3;    // convnet block count, must be 3..5
    int width = 128;  // convnet channel width
    int class_count = 10;
    int in_channels = 3;
    int in_h = 32;
    int in_w = 32;
};

// Throws ArgumentError when the spec cannot be built (bad depth, input size
// not divisible by 2^depth for convnet, class_count < 2, ...).
void validate_spec(const ArchitectureSpec& spec);
int feature_dim(const ArchitectureSpec& spec);

struct Classifier {
    ArchitectureSpec spec;
    std::vector<NamedTensor> params;
    uint64_t rng_seed = 0;
};

// Deterministic seeded init (Kaiming-uniform for conv/linear, unit affine for
// the norm layers). Same (spec, seed) always gives identical parameters.
Classifier build_model(const ArchitectureSpec& spec, uint64_t seed);

// Parameter layout for a spec without materializing values (names + shapes).
std::vector<NamedTensor> param_layout(const ArchitectureSpec& spec);

// Graph-level forward. `params` must follow param_layout order. Norm layers
// have no train/eval split (no running statistics), so forward is the same
// function everywhere and per-sample outputs do not depend on batch
// composition.
struct GraphOutputs {
    ag::Var logits;
    ag::Var features;  // penultimate pooled representation
};
GraphOutputs forward_graph(ag::Tape& tape, const ArchitectureSpec& spec, ag::Var batch,
                           const std::vector<ag::Var>& params);

// Convenience eager wrappers.
Tensor forward(const Classifier& model, const Tensor& batch);
Tensor features(const Classifier& model, const Tensor& batch);

enum class LossKind { ce, cw_margin, dlr, jitter };

struct LossOptions {
    double kappa = 0.0;          // cw_margin clamp
    double jitter_scale = 10.0;  // softmax temperature on L-inf normalized logits
    double jitter_noise_std = 0.1;
    uint64_t jitter_seed = 0;
    bool jitter_use_noise = false;  // off by default so the loss is a fixed surrogate
};

// Loss graphs over logits {n,k}. All reduce to the batch mean.
ag::Var loss_ce_graph(ag::Var logits, const std::vector<uint16_t>& labels);
ag::Var cw_margin_graph(ag::Var logits, const std::vector<uint16_t>& labels, double kappa);
ag::Var dlr_graph(ag::Var logits, const std::vector<uint16_t>& labels);
ag::Var jitter_graph(ag::Var logits, const std::vector<uint16_t>& labels, const LossOptions& opt);
ag::Var loss_graph(ag::Var logits, const std::vector<uint16_t>& labels, LossKind kind,
                   const LossOptions& opt = {});

double loss_ce(const Tensor& logits, const std::vector<uint16_t>& labels);
double cw_margin_loss(const Tensor& logits, const std::vector<uint16_t>& labels, double kappa = 0.0);
double dlr_loss(const Tensor& logits, const std::vector<uint16_t>& labels);

// d(loss)/d(batch), exact reverse-mode. batch {n,c,h,w}.
Tensor input_gradient(const Classifier& model, const Tensor& batch,
                      const std::vector<uint16_t>& labels, LossKind kind, const LossOptions& opt = {});

// d(ce loss)/d(params), same order/names as model.params.
std::vector<NamedTensor> param_gradients(const Classifier& model, const Tensor& batch,
                                         const std::vector<uint16_t>& labels);

// DDRW checkpoint round trip (float32 payloads on disk).
void save_model(const Classifier& model, const std::filesystem::path& path);
Classifier load_model(const std::filesystem::path& path);

}  // namespace ddrb::models
