#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ddrb/models.hpp"
#include "ddrb/util.hpp"

namespace ddrb::attacks {

enum class AttackKind { fgsm, pgd, cw, vmifgsm, jitter, autoattack };

std::string kind_name(AttackKind k);
AttackKind kind_from_name(const std::string& name);

struct AttackConfig {
    AttackKind kind = AttackKind::pgd;
    double epsilon = 8.0 / 255.0;
    double step_size = 0.0;  // 0 -> epsilon/4 for iterative kinds, epsilon for fgsm
    int iterations = 10;     // fgsm is forced to 1
    bool random_start = false;
    // vmifgsm
    int vm_samples = 5;
    double vm_beta = 1.5;
    double vm_momentum = 1.0;
    // cw
    double kappa = 0.0;
    // jitter
    double jitter_scale = 10.0;
    double jitter_noise_std = 0.1;
    // autoattack (square stage)
    int square_queries = 300;
    uint64_t seed = 0;
};

// Fills defaults and checks the documented invariants. Throws ArgumentError.
AttackConfig normalized(const AttackConfig& cfg);

struct AdversarialBatch {
    Tensor images;  // perturbed, within the epsilon ball and [0,1]
    Tensor base;    // the clean batch the budget is measured against
    AttackConfig config;
};

// Elementwise clamp of x_adv into [x - eps, x + eps] intersected with [0,1].
Tensor project_linf(const Tensor& x_adv, const Tensor& x, double epsilon);

// All attacks are deterministic in (model, batch, labels, cfg). Randomness is
// drawn from per-sample streams keyed by (cfg.seed, position in the batch), so
// a sample's result does not depend on which other samples share the call.
AdversarialBatch fgsm(const models::Classifier& model, const Tensor& batch,
                      const std::vector<uint16_t>& labels, const AttackConfig& cfg);
AdversarialBatch pgd(const models::Classifier& model, const Tensor& batch,
                     const std::vector<uint16_t>& labels, const AttackConfig& cfg);
AdversarialBatch cw_linf(const models::Classifier& model, const Tensor& batch,
                         const std::vector<uint16_t>& labels, const AttackConfig& cfg);
AdversarialBatch vmifgsm(const models::Classifier& model, const Tensor& batch,
                         const std::vector<uint16_t>& labels, const AttackConfig& cfg);
AdversarialBatch jitter(const models::Classifier& model, const Tensor& batch,
                        const std::vector<uint16_t>& labels, const AttackConfig& cfg);

// Budget-aware PGD with momentum, per-sample step halving and best-point
// restarts. loss_kind ce or dlr.
AdversarialBatch apgd(const models::Classifier& model, const Tensor& batch,
                      const std::vector<uint16_t>& labels, models::LossKind loss_kind,
                      const AttackConfig& cfg);
// Targeted variant used by the composite: drives each sample toward its
// strongest wrong class under the targeted margin ratio loss.
AdversarialBatch apgd_targeted_dlr(const models::Classifier& model, const Tensor& batch,
                                   const std::vector<uint16_t>& labels, const AttackConfig& cfg);
// Gradient-free random search over square patches.
AdversarialBatch square_attack(const models::Classifier& model, const Tensor& batch,
                               const std::vector<uint16_t>& labels, const AttackConfig& cfg);
// apgd(ce) -> targeted apgd(dlr) -> square, each stage attacking only samples
// still classified correctly; keeps the union of successes.
AdversarialBatch autoattack_lite(const models::Classifier& model, const Tensor& batch,
                                 const std::vector<uint16_t>& labels, const AttackConfig& cfg);

// Dispatch on cfg.kind.
AdversarialBatch run_attack(const models::Classifier& model, const Tensor& batch,
                            const std::vector<uint16_t>& labels, const AttackConfig& cfg);

}  // namespace ddrb::attacks
