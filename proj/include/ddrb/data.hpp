#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddrb/util.hpp"

namespace ddrb::data {

// Images are float32 in [0,1], row-major {count, channels, height, width}.
struct LabeledDataset {
    std::string name;
    std::vector<float> images;
    std::vector<uint16_t> labels;
    int count = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    int class_count = 0;
};

struct DatasetSplit {
    LabeledDataset train;
    LabeledDataset test;
};

// A distilled set stores ipc images per class at full resolution; with
// factor > 1 each stored image packs factor^2 sub-images that are recovered by
// multi_formation_decode before training.
struct DistilledDataset {
    std::string name;    // source dataset
    std::string method;  // dc | dsa | dm | mtt | ...
    std::vector<float> images;
    std::vector<uint16_t> labels;
    int count = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    int class_count = 0;
    int ipc = 1;
    int factor = 1;
    int seed = 0;
    // In-memory provenance, not part of the on-disk format.
    std::string config_hash;
    std::vector<double> loss_history;
};

struct BlobConfig {
    int class_count = 10;
    int per_class = 128;
    int test_per_class = 0;  // 0 -> same as per_class
    int resolution = 16;
    int channels = 3;
    double sigma = 0.1;
    double amplitude = 0.35;  // pattern contrast around mid-gray
    uint64_t seed = 0;
};

// Deterministic synthetic dataset: per-class smooth seeded patterns plus
// Gaussian pixel noise, clipped to [0,1]. The test split draws fresh noise on
// the same patterns, so the splits are disjoint by construction.
DatasetSplit make_blob_dataset(const BlobConfig& cfg);
DatasetSplit make_blob_dataset(int class_count, int per_class, int resolution, double sigma,
                               uint64_t seed);

struct LoadOptions {
    uint64_t seed = 0;
    std::filesystem::path data_root = ".";
    BlobConfig blobs;  // knobs for the synthetic loader
};

std::vector<std::string> registered_loaders();
// "blobs" is generated; "cifar10" reads the standard binary batch files under
// data_root. Unknown names raise ArgumentError listing what is registered.
DatasetSplit load_builtin(const std::string& name, const LoadOptions& opt = {});

void validate(const LabeledDataset& d, const char* what);

// DDRB container round trip (bit-exact: float32 images, u16 labels).
void write_distilled(const DistilledDataset& d, const std::filesystem::path& path);
DistilledDataset read_distilled(const std::filesystem::path& path);

LabeledDataset to_labeled(const DistilledDataset& d);

// Gathers rows into a double batch tensor {n,c,h,w} for the compute engine.
Tensor batch_tensor(const LabeledDataset& d, const std::vector<int>& indices);
std::vector<uint16_t> batch_labels(const LabeledDataset& d, const std::vector<int>& indices);
std::vector<std::vector<int>> indices_by_class(const LabeledDataset& d);

}  // namespace ddrb::data
