#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddrb/augment.hpp"
#include "ddrb/data.hpp"
#include "ddrb/models.hpp"
#include "ddrb/util.hpp"

namespace ddrb::distill {

enum class Method { dc, dsa, dm, mtt };
std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct MttConfig {
    int synthetic_steps = 10;     // student updates unrolled per outer step
    int expert_epochs = 2;        // snapshots ahead the target sits
    int max_start_epoch = 5;
    double step_lr = 1e-5;        // meta learning rate on the log step size
    double starting_step_lr = 1e-2;
};

struct DistillConfig {
    Method method = Method::dc;
    int ipc = 1;
    int iterations = 100;
    double image_lr = 0.1;        // pixel learning rate (SGD, momentum 0.5)
    int inner_model_steps = 1;    // model updates on synthetic data per outer step
    int batch_real = 64;
    int factor = 1;               // multi-formation factor f
    int cluster_count = 0;        // DREAM cluster count N, 0 disables selection
    augment::AugmentationPolicy augmentation{{}, {}, augment::AugmentationPolicy::Strategy::none};
    MttConfig mtt;
    uint64_t seed = 0;
};

std::string config_hash(const DistillConfig& cfg);

struct TrajectoryStore {
    models::ArchitectureSpec arch;
    std::string source;
    uint64_t seed = 0;
    int snapshot_every = 1;
    // experts[e][s] holds the parameters after s*snapshot_every epochs; s=0 is init
    std::vector<std::vector<std::vector<NamedTensor>>> experts;
};

// DC / DSA. The matching loss history lands in the result's loss_history.
data::DistilledDataset distill_gradient_matching(const DistillConfig& cfg,
                                                 const data::LabeledDataset& train,
                                                 const models::ArchitectureSpec& arch);

// DM: matches per-class mean features under freshly re-initialized embedders.
data::DistilledDataset distill_distribution_matching(const DistillConfig& cfg,
                                                     const data::LabeledDataset& train,
                                                     const models::ArchitectureSpec& arch);

TrajectoryStore record_expert_trajectories(const models::ArchitectureSpec& arch,
                                           const data::LabeledDataset& train, int epochs,
                                           int experts, int snapshot_every, uint64_t seed);

void save_trajectories(const TrajectoryStore& store, const std::filesystem::path& path);
TrajectoryStore load_trajectories(const std::filesystem::path& path);

// MTT. The two-argument form initializes synthetic pixels from seeded noise
// around mid-gray since no real data is in scope; the three-argument overload
// initializes from random real samples like the other distillers and is what
// the pipeline uses.
data::DistilledDataset distill_trajectory_matching(const DistillConfig& cfg,
                                                   const TrajectoryStore& store);
data::DistilledDataset distill_trajectory_matching(const DistillConfig& cfg,
                                                   const TrajectoryStore& store,
                                                   const data::LabeledDataset& train);

// Splits every stored image into factor^2 patches, each bilinearly upsampled
// back to full resolution. factor 1 is the identity. Labels repeat patchwise.
Tensor multi_formation_decode(const data::DistilledDataset& stored);
ag::Var multi_formation_decode_graph(ag::Var stored, int channels, int height, int width,
                                     int factor);
std::vector<uint16_t> decoded_labels(const data::DistilledDataset& stored);

struct KmeansResult {
    Tensor centers;                // {k, d}
    std::vector<int> assignments;  // size n
    double inertia = 0.0;
};
// Lloyd's algorithm, seeded k-means++ init, best of a few seeded restarts.
KmeansResult kmeans(const Tensor& points, int k, int iters, uint64_t seed);

// Per class: cluster the feature embeddings into N groups and pick the sample
// nearest each of per_class_pick evenly strided cluster centers.
std::vector<std::vector<int>> dream_select(const data::LabeledDataset& train,
                                           const models::Classifier& model, int cluster_count,
                                           int per_class_pick, uint64_t seed);

}  // namespace ddrb::distill
