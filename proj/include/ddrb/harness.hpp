#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ddrb/attacks.hpp"
#include "ddrb/augment.hpp"
#include "ddrb/data.hpp"
#include "ddrb/distill.hpp"
#include "ddrb/models.hpp"

namespace ddrb::harness {

enum class Optimizer { sgd };
enum class Selection { best_val, average };
std::string selection_name(Selection s);
Selection selection_from_name(const std::string& name);

struct TrainConfig {
    Optimizer optimizer = Optimizer::sgd;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int epochs = 1000;
    int batch_size = 256;
    int repeats = 5;
    double val_fraction = 0.1;
    augment::AugmentationPolicy augmentation{{}, {}, augment::AugmentationPolicy::Strategy::none};
    uint64_t seed = 0;
    Selection selection = Selection::best_val;
};

// The CI-sized preset: same pipeline, repeats 3 and epochs 60.
TrainConfig desk_scale(TrainConfig cfg = {});

struct TrainHistory {
    std::vector<double> train_loss;  // per epoch, mean batch CE
    std::vector<double> val_acc;     // per epoch, percent
};

struct TrainedModel {
    models::Classifier model;
    TrainHistory history;
    uint64_t seed = 0;
};

// SGD with cosine-decay learning rate, deterministic given seed. The val split
// is a seeded holdout of val_fraction; when it rounds to zero samples the full
// training set doubles as the validation set. Non-finite loss raises
// TrainingError naming the epoch.
TrainedModel train_model(const models::ArchitectureSpec& arch, const data::LabeledDataset& train,
                         const TrainConfig& cfg, uint64_t seed);
// Distilled sets are decoded (multi-formation) before training.
TrainedModel train_model(const models::ArchitectureSpec& arch, const data::DistilledDataset& d,
                         const TrainConfig& cfg, uint64_t seed);

struct RepeatedResult {
    std::vector<TrainedModel> models;  // repeats entries, seeds cfg.seed + i
    int selected = 0;                  // argmax final val acc (ties: lowest seed)
    Selection selection = Selection::best_val;
};
RepeatedResult train_repeated(const models::ArchitectureSpec& arch,
                              const data::LabeledDataset& train, const TrainConfig& cfg);
RepeatedResult train_repeated(const models::ArchitectureSpec& arch,
                              const data::DistilledDataset& d, const TrainConfig& cfg);

double evaluate_clean(const models::Classifier& model, const data::LabeledDataset& test,
                      int batch_size = 256);
double evaluate_robust(const models::Classifier& model, const data::LabeledDataset& test,
                       const attacks::AttackConfig& attack, int batch_size = 256);

// (acc_original - acc_robust) / acc_original * 100. Zero original accuracy has
// no defined drop rate and raises ArgumentError rather than reporting 0.
double drop_rate(double acc_original, double acc_robust);

struct EvalReport {
    std::string dataset_id;
    std::string method;
    std::string model_id;
    std::string selection;
    std::string ablation;  // "component=value" when produced by run_ablation
    int ipc = 1;
    double epsilon = 0.0;
    uint64_t seed = 0;
    double clean_acc = 0.0;
    std::vector<std::pair<std::string, double>> robust;  // attack -> percent
    std::vector<std::pair<std::string, double>> drop;    // attack -> percent
    std::string cell_hash;
    std::string group_hash;  // cell identity minus the ablated component
    std::string error;       // nonempty when the cell failed; other fields best-effort
};

struct ExperimentConfig {
    std::vector<std::string> datasets = {"blobs"};
    std::vector<std::string> methods = {"dc"};  // dc | dsa | dm | mtt | whole
    std::vector<int> ipc_list = {1};
    std::vector<attacks::AttackKind> attack_kinds = {attacks::AttackKind::fgsm,
                                                     attacks::AttackKind::pgd};
    std::vector<double> epsilons = {2.0 / 255.0, 4.0 / 255.0, 8.0 / 255.0};
    int attack_iterations = 10;
    models::ArchitectureSpec arch;  // geometry fields are filled per dataset
    TrainConfig train;
    distill::DistillConfig distill_template;
    data::LoadOptions data;
    std::filesystem::path output_dir;
    uint64_t seed = 0;
};

// Full Cartesian grid, one report per (dataset, method, ipc, epsilon). Each
// cell is content-addressed under output_dir/<cell-hash>/ with its distilled
// set, model checkpoints and report.json; existing reports are loaded instead
// of recomputed. Cell failures land in EvalReport::error and the grid goes on.
std::vector<EvalReport> run_benchmark(const ExperimentConfig& cfg);

enum class AblationKind { augmentation, factor, cluster };
AblationKind ablation_from_name(const std::string& name);

// Varies exactly one component over the grid values (augmentation op names,
// factor ints, cluster-count ints), holding everything else at `base`.
std::vector<EvalReport> run_ablation(AblationKind kind, const std::vector<std::string>& grid,
                                     const ExperimentConfig& base);

enum class ReportFormat { jsonl, csv, markdown };
ReportFormat format_from_name(const std::string& name);

void emit_report(const std::vector<EvalReport>& reports, ReportFormat format,
                 const std::filesystem::path& path);
// jsonl and csv round back; markdown is render-only.
std::vector<EvalReport> read_reports(const std::filesystem::path& path, ReportFormat format);

}  // namespace ddrb::harness
