#include "ddrb/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "ddrb/autograd.hpp"

namespace ddrb::harness {

namespace {

using json = nlohmann::ordered_json;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void check_train_cfg(const TrainConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw ArgumentError("lr must be positive");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
        throw ArgumentError("momentum must lie in [0,1)");
    if (cfg.weight_decay < 0.0) throw ArgumentError("weight_decay must be >= 0");
    if (cfg.epochs < 1) throw ArgumentError("epochs must be >= 1");
    if (cfg.batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (cfg.repeats < 1) throw ArgumentError("repeats must be >= 1");
    if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0)
        throw ArgumentError("val_fraction must lie in [0,1)");
    if (cfg.augmentation.strategy != augment::AugmentationPolicy::Strategy::none)
        augment::validate_policy(cfg.augmentation);
}

// One SGD step's loss and parameter gradients in a single graph pass.
double batch_gradients(const models::Classifier& model, const Tensor& batch,
                       const std::vector<uint16_t>& labels, std::vector<Tensor>& grads) {
    ag::Tape tape;
    ag::Var x = tape.constant(batch.shape, batch.data);
    std::vector<ag::Var> pvars;
    pvars.reserve(model.params.size());
    for (const auto& p : model.params) pvars.push_back(tape.leaf(p.value.shape, p.value.data));
    auto fwd = models::forward_graph(tape, model.spec, x, pvars);
    ag::Var loss = models::loss_ce_graph(fwd.logits, labels);
    auto gs = tape.gradients(loss, pvars);
    grads.clear();
    grads.reserve(gs.size());
    for (auto& g : gs) grads.emplace_back(g.shape(), g.val());
    return loss.val()[0];
}

double accuracy_on(const models::Classifier& model, const data::LabeledDataset& ds,
                   const std::vector<int>& indices, int batch_size) {
    int hits = 0;
    for (size_t at = 0; at < indices.size(); at += static_cast<size_t>(batch_size)) {
        std::vector<int> chunk(indices.begin() + static_cast<int64_t>(at),
                               indices.begin() +
                                   static_cast<int64_t>(std::min(at + static_cast<size_t>(batch_size),
                                                                 indices.size())));
        Tensor logits = models::forward(model, data::batch_tensor(ds, chunk));
        const int k = logits.dim(1);
        for (int r = 0; r < logits.dim(0); ++r) {
            int arg = 0;
            for (int j = 1; j < k; ++j)
                if (logits.data[static_cast<size_t>(r) * k + j] >
                    logits.data[static_cast<size_t>(r) * k + arg])
                    arg = j;
            if (arg == ds.labels[static_cast<size_t>(chunk[static_cast<size_t>(r)])]) ++hits;
        }
    }
    return indices.empty() ? 0.0 : 100.0 * hits / static_cast<double>(indices.size());
}

std::vector<int> all_indices(int n) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    return idx;
}

data::LabeledDataset decode_distilled(const data::DistilledDataset& d) {
    Tensor dec = distill::multi_formation_decode(d);
    data::LabeledDataset ds;
    ds.name = d.name + "/" + d.method;
    ds.count = dec.dim(0);
    ds.channels = d.channels;
    ds.height = d.height;
    ds.width = d.width;
    ds.class_count = d.class_count;
    ds.images.resize(dec.data.size());
    for (size_t i = 0; i < dec.data.size(); ++i) ds.images[i] = static_cast<float>(dec.data[i]);
    ds.labels = distill::decoded_labels(d);
    return ds;
}

std::string model_id_of(const models::ArchitectureSpec& arch) {
    return models::family_name(arch.family) + "-d" + std::to_string(arch.depth) + "-w" +
           std::to_string(arch.width);
}

// --- experiment grid plumbing ---

std::string train_cfg_string(const TrainConfig& cfg) {
    std::string aug;
    for (auto k : cfg.augmentation.ops) aug += augment::kind_name(k) + ",";
    return "sgd;lr=" + fmt17(cfg.lr) + ";mom=" + fmt17(cfg.momentum) + ";wd=" +
           fmt17(cfg.weight_decay) + ";epochs=" + std::to_string(cfg.epochs) + ";batch=" +
           std::to_string(cfg.batch_size) + ";repeats=" + std::to_string(cfg.repeats) + ";val=" +
           fmt17(cfg.val_fraction) + ";aug=" + aug + ";strategy=" +
           std::to_string(static_cast<int>(cfg.augmentation.strategy)) + ";sel=" +
           selection_name(cfg.selection);
}

distill::DistillConfig cell_distill_config(const ExperimentConfig& cfg, const std::string& dataset,
                                           const std::string& method, int ipc) {
    distill::DistillConfig d = cfg.distill_template;
    if (method != "whole") d.method = distill::method_from_name(method);
    d.ipc = ipc;
    d.seed = mix_seed(cfg.seed, "distill-" + dataset + "-" + method + "-" + std::to_string(ipc));
    return d;
}

std::string cell_string(const ExperimentConfig& cfg, const std::string& dataset,
                        const std::string& method, int ipc, double eps) {
    std::string attacks_s;
    for (auto k : cfg.attack_kinds) attacks_s += attacks::kind_name(k) + ",";
    const auto& b = cfg.data.blobs;
    std::string data_s = "root=" + cfg.data.data_root.string() + ";blobs=" +
                         std::to_string(b.class_count) + "," + std::to_string(b.per_class) + "," +
                         std::to_string(b.test_per_class) + "," + std::to_string(b.resolution) +
                         "," + std::to_string(b.channels) + "," + fmt17(b.sigma) + "," +
                         fmt17(b.amplitude) + "," + std::to_string(b.seed) + ";dseed=" +
                         std::to_string(cfg.data.seed);
    return "dataset=" + dataset + ";method=" + method + ";ipc=" + std::to_string(ipc) + ";eps=" +
           fmt17(eps) + ";attacks=" + attacks_s + ";iters=" +
           std::to_string(cfg.attack_iterations) + ";arch=" + model_id_of(cfg.arch) + ";train=" +
           train_cfg_string(cfg.train) + ";distill=" +
           distill::config_hash(cell_distill_config(cfg, dataset, method, ipc)) + ";data=" +
           data_s + ";seed=" + std::to_string(cfg.seed);
}

json report_to_json(const EvalReport& r) {
    json j;
    j["schema"] = 1;
    j["dataset"] = r.dataset_id;
    j["method"] = r.method;
    j["ipc"] = r.ipc;
    j["epsilon"] = r.epsilon;
    j["clean"] = r.clean_acc;
    json robust = json::object(), drop = json::object();
    for (const auto& [k, v] : r.robust) robust[k] = v;
    for (const auto& [k, v] : r.drop) drop[k] = v;
    j["robust"] = robust;
    j["drop"] = drop;
    j["seed"] = r.seed;
    j["selection"] = r.selection;
    j["model"] = r.model_id;
    j["ablation"] = r.ablation;
    j["cell"] = r.cell_hash;
    j["group"] = r.group_hash;
    j["error"] = r.error;
    return j;
}

EvalReport report_from_json(const json& j) {
    EvalReport r;
    if (!j.contains("schema") || j["schema"].get<int>() != 1)
        throw FormatError("unsupported report schema");
    r.dataset_id = j["dataset"].get<std::string>();
    r.method = j["method"].get<std::string>();
    r.ipc = j["ipc"].get<int>();
    r.epsilon = j["epsilon"].get<double>();
    r.clean_acc = j["clean"].get<double>();
    for (auto it = j["robust"].begin(); it != j["robust"].end(); ++it)
        r.robust.emplace_back(it.key(), it.value().get<double>());
    for (auto it = j["drop"].begin(); it != j["drop"].end(); ++it)
        r.drop.emplace_back(it.key(), it.value().get<double>());
    r.seed = j["seed"].get<uint64_t>();
    r.selection = j["selection"].get<std::string>();
    r.model_id = j["model"].get<std::string>();
    r.ablation = j["ablation"].get<std::string>();
    r.cell_hash = j["cell"].get<std::string>();
    r.group_hash = j["group"].get<std::string>();
    r.error = j["error"].get<std::string>();
    return r;
}

void write_report_file(const EvalReport& r, const std::filesystem::path& dir) {
    const auto tmp = dir / "report.json.tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out << report_to_json(r).dump(2) << "\n";
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, dir / "report.json");
}

// Expert trajectories are reusable across cells, cached beside the cell dirs.
distill::TrajectoryStore expert_store(const ExperimentConfig& cfg,
                                      const models::ArchitectureSpec& arch,
                                      const data::LabeledDataset& train,
                                      const distill::DistillConfig& dcfg) {
    const int epochs = dcfg.mtt.max_start_epoch + dcfg.mtt.expert_epochs;
    const uint64_t seed = mix_seed(cfg.seed, "experts-" + train.name);
    const std::string key = sha256_hex("experts;dataset=" + train.name + ";arch=" +
                                       model_id_of(arch) + ";epochs=" + std::to_string(epochs) +
                                       ";seed=" + std::to_string(seed));
    const auto path = cfg.output_dir / ("experts-" + key.substr(0, 16) + ".ddrt");
    if (std::filesystem::exists(path)) return distill::load_trajectories(path);
    distill::TrajectoryStore store =
        distill::record_expert_trajectories(arch, train, epochs, 2, 1, seed);
    distill::save_trajectories(store, path);
    return store;
}

struct CellOutcome {
    double clean = 0.0;
    std::vector<std::pair<std::string, double>> robust;
};

EvalReport compute_cell(const ExperimentConfig& cfg, const data::DatasetSplit& split,
                        const std::string& dataset, const std::string& method, int ipc, double eps,
                        const std::string& hash, const std::filesystem::path& dir) {
    EvalReport r;
    r.dataset_id = dataset;
    r.method = method;
    r.ipc = ipc;
    r.epsilon = eps;
    r.seed = cfg.seed;
    r.selection = selection_name(cfg.train.selection);
    r.cell_hash = hash;

    models::ArchitectureSpec arch = cfg.arch;
    arch.in_channels = split.train.channels;
    arch.in_h = split.train.height;
    arch.in_w = split.train.width;
    arch.class_count = split.train.class_count;
    r.model_id = model_id_of(arch);

    TrainConfig tcfg = cfg.train;
    tcfg.seed = mix_seed(cfg.seed, "train-" + dataset + "-" + method + "-" + std::to_string(ipc));

    std::filesystem::create_directories(dir);
    RepeatedResult trained;
    if (method == "whole") {
        trained = train_repeated(arch, split.train, tcfg);
    } else {
        distill::DistillConfig dcfg = cell_distill_config(cfg, dataset, method, ipc);
        data::DistilledDataset d;
        switch (dcfg.method) {
            case distill::Method::dc:
            case distill::Method::dsa:
                d = distill::distill_gradient_matching(dcfg, split.train, arch);
                break;
            case distill::Method::dm:
                d = distill::distill_distribution_matching(dcfg, split.train, arch);
                break;
            case distill::Method::mtt: {
                auto store = expert_store(cfg, arch, split.train, dcfg);
                d = distill::distill_trajectory_matching(dcfg, store, split.train);
                break;
            }
        }
        data::write_distilled(d, dir / "distilled.ddrb");
        trained = train_repeated(arch, d, tcfg);
    }
    for (size_t i = 0; i < trained.models.size(); ++i)
        models::save_model(trained.models[i].model,
                           dir / ("model-" + std::to_string(i) + ".ddrw"));

    const int bs = cfg.train.batch_size;
    auto eval_all = [&](const attacks::AttackConfig* atk) {
        if (cfg.train.selection == Selection::best_val) {
            const auto& m = trained.models[static_cast<size_t>(trained.selected)].model;
            return atk ? evaluate_robust(m, split.test, *atk, bs)
                       : evaluate_clean(m, split.test, bs);
        }
        double sum = 0.0;
        for (const auto& tm : trained.models)
            sum += atk ? evaluate_robust(tm.model, split.test, *atk, bs)
                       : evaluate_clean(tm.model, split.test, bs);
        return sum / static_cast<double>(trained.models.size());
    };

    r.clean_acc = eval_all(nullptr);
    for (auto kind : cfg.attack_kinds) {
        attacks::AttackConfig acfg;
        acfg.kind = kind;
        acfg.epsilon = eps;
        acfg.iterations = cfg.attack_iterations;
        acfg.seed = mix_seed(cfg.seed, "attack-" + attacks::kind_name(kind) + "-" + dataset + "-" +
                                           method + "-" + std::to_string(ipc));
        r.robust.emplace_back(attacks::kind_name(kind), eval_all(&acfg));
    }
    for (const auto& [name, acc] : r.robust) r.drop.emplace_back(name, drop_rate(r.clean_acc, acc));
    return r;
}

void check_experiment(const ExperimentConfig& cfg) {
    if (cfg.datasets.empty()) throw ArgumentError("datasets grid is empty");
    if (cfg.methods.empty()) throw ArgumentError("methods grid is empty");
    if (cfg.ipc_list.empty()) throw ArgumentError("ipc grid is empty");
    if (cfg.attack_kinds.empty()) throw ArgumentError("attacks grid is empty");
    if (cfg.epsilons.empty()) throw ArgumentError("epsilon grid is empty");
    if (cfg.attack_iterations < 1) throw ArgumentError("attack_iterations must be >= 1");
    if (cfg.output_dir.empty()) throw ArgumentError("output_dir is required");
    const auto known = data::registered_loaders();
    for (const auto& ds : cfg.datasets)
        if (std::find(known.begin(), known.end(), ds) == known.end())
            throw ArgumentError("unknown dataset '" + ds + "'");
    for (const auto& m : cfg.methods)
        if (m != "whole") distill::method_from_name(m);
    for (int ipc : cfg.ipc_list)
        if (ipc < 1) throw ArgumentError("ipc must be >= 1");
    for (double eps : cfg.epsilons)
        if (eps < 0.0 || eps > 1.0) throw ArgumentError("epsilon must lie in [0,1]");
    check_train_cfg(cfg.train);
}

std::vector<EvalReport> run_grid(const ExperimentConfig& cfg, const std::string& ablation_tag,
                                 const ExperimentConfig* group_base) {
    check_experiment(cfg);
    std::filesystem::create_directories(cfg.output_dir);
    std::map<std::string, data::DatasetSplit> loaded;
    std::vector<EvalReport> out;
    for (const auto& dataset : cfg.datasets) {
        for (const auto& method : cfg.methods) {
            for (int ipc : cfg.ipc_list) {
                for (double eps : cfg.epsilons) {
                    const std::string hash = sha256_hex(cell_string(cfg, dataset, method, ipc, eps));
                    const std::string group =
                        group_base ? sha256_hex(cell_string(*group_base, dataset, method, ipc, eps))
                                   : hash;
                    const auto dir = cfg.output_dir / hash.substr(0, 16);
                    EvalReport r;
                    try {
                        if (std::filesystem::exists(dir / "report.json")) {
                            std::ifstream in(dir / "report.json");
                            json j = json::parse(in);
                            r = report_from_json(j);
                        } else {
                            auto found = loaded.find(dataset);
                            if (found == loaded.end())
                                found = loaded.emplace(dataset,
                                                       data::load_builtin(dataset, cfg.data)).first;
                            r = compute_cell(cfg, found->second, dataset, method, ipc, eps, hash,
                                             dir);
                            r.ablation = ablation_tag;
                            r.group_hash = group;
                            write_report_file(r, dir);
                        }
                    } catch (const std::exception& e) {
                        r.dataset_id = dataset;
                        r.method = method;
                        r.ipc = ipc;
                        r.epsilon = eps;
                        r.seed = cfg.seed;
                        r.selection = selection_name(cfg.train.selection);
                        r.cell_hash = hash;
                        r.group_hash = group;
                        r.ablation = ablation_tag;
                        r.error = e.what();
                    }
                    out.push_back(std::move(r));
                }
            }
        }
    }
    return out;
}

// --- csv helpers ---

bool needs_quotes(const std::string& s) {
    return s.find_first_of(",\"\n") != std::string::npos;
}

std::string csv_escape(const std::string& s) {
    if (!needs_quotes(s)) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

// A record may span physical lines when a quoted field embeds newlines.
bool read_csv_record(std::istream& in, std::string& record) {
    if (!std::getline(in, record)) return false;
    auto quotes = [](const std::string& s) { return std::count(s.begin(), s.end(), '"'); };
    auto parity = quotes(record);
    std::string more;
    while (parity % 2 == 1 && std::getline(in, more)) {
        record += '\n' + more;
        parity += quotes(more);
    }
    return true;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::vector<std::string> attack_columns(const std::vector<EvalReport>& reports) {
    std::vector<std::string> names;
    for (const auto& r : reports)
        for (const auto& [k, v] : r.robust)
            if (std::find(names.begin(), names.end(), k) == names.end()) names.push_back(k);
    return names;
}

double lookup(const std::vector<std::pair<std::string, double>>& kv, const std::string& key,
              bool* found = nullptr) {
    for (const auto& [k, v] : kv)
        if (k == key) {
            if (found) *found = true;
            return v;
        }
    if (found) *found = false;
    return 0.0;
}

}  // namespace

std::string selection_name(Selection s) {
    return s == Selection::best_val ? "best_val" : "average";
}

Selection selection_from_name(const std::string& name) {
    if (name == "best_val") return Selection::best_val;
    if (name == "average") return Selection::average;
    throw ArgumentError("unknown selection '" + name + "' (expected best_val or average)");
}

TrainConfig desk_scale(TrainConfig cfg) {
    cfg.repeats = 3;
    cfg.epochs = 60;
    return cfg;
}

TrainedModel train_model(const models::ArchitectureSpec& arch, const data::LabeledDataset& train,
                         const TrainConfig& cfg, uint64_t seed) {
    check_train_cfg(cfg);
    data::validate(train, "train");
    models::validate_spec(arch);
    if (arch.in_channels != train.channels || arch.in_h != train.height ||
        arch.in_w != train.width || arch.class_count != train.class_count)
        throw ArgumentError("architecture geometry does not match the dataset");

    // Seeded holdout; an empty holdout falls back to validating on the train set.
    std::vector<int> order = all_indices(train.count);
    std::mt19937_64 split_rng(mix_seed(seed, "val-split"));
    std::shuffle(order.begin(), order.end(), split_rng);
    const int val_count = static_cast<int>(std::floor(train.count * cfg.val_fraction));
    std::vector<int> val_idx(order.begin(), order.begin() + val_count);
    std::vector<int> train_idx(order.begin() + val_count, order.end());
    if (val_idx.empty()) val_idx = train_idx;

    TrainedModel out;
    out.seed = seed;
    out.model = models::build_model(arch, mix_seed(seed, "init"));
    std::vector<std::vector<double>> vel(out.model.params.size());
    const bool use_aug =
        cfg.augmentation.strategy != augment::AugmentationPolicy::Strategy::none &&
        !cfg.augmentation.ops.empty();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr_t =
            cfg.lr * 0.5 * (1.0 + std::cos(M_PI * epoch / static_cast<double>(cfg.epochs)));
        std::mt19937_64 rng(mix_seed(mix_seed(seed, "order"), static_cast<uint64_t>(epoch)));
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double loss_sum = 0.0;
        int batches = 0;
        for (size_t at = 0; at < train_idx.size(); at += static_cast<size_t>(cfg.batch_size)) {
            std::vector<int> chunk(
                train_idx.begin() + static_cast<int64_t>(at),
                train_idx.begin() + static_cast<int64_t>(std::min(
                                        at + static_cast<size_t>(cfg.batch_size), train_idx.size())));
            Tensor batch = data::batch_tensor(train, chunk);
            if (use_aug)
                batch = augment::dsa_apply(batch, cfg.augmentation,
                                           mix_seed(mix_seed(seed, "train-aug"),
                                                    static_cast<uint64_t>(epoch),
                                                    static_cast<uint64_t>(batches)));
            std::vector<Tensor> grads;
            const double loss =
                batch_gradients(out.model, batch, data::batch_labels(train, chunk), grads);
            if (!std::isfinite(loss))
                throw TrainingError("training diverged at epoch " + std::to_string(epoch));
            loss_sum += loss;
            ++batches;
            for (size_t i = 0; i < out.model.params.size(); ++i) {
                auto& p = out.model.params[i].value.data;
                auto& v = vel[i];
                v.resize(p.size(), 0.0);
                for (size_t j = 0; j < p.size(); ++j) {
                    const double g = grads[i].data[j] + cfg.weight_decay * p[j];
                    v[j] = cfg.momentum * v[j] + g;
                    p[j] -= lr_t * v[j];
                }
            }
        }
        out.history.train_loss.push_back(loss_sum / std::max(1, batches));
        out.history.val_acc.push_back(accuracy_on(out.model, train, val_idx, cfg.batch_size));
    }
    return out;
}

TrainedModel train_model(const models::ArchitectureSpec& arch, const data::DistilledDataset& d,
                         const TrainConfig& cfg, uint64_t seed) {
    return train_model(arch, decode_distilled(d), cfg, seed);
}

namespace {

template <typename Dataset>
RepeatedResult train_repeated_impl(const models::ArchitectureSpec& arch, const Dataset& ds,
                                   const TrainConfig& cfg) {
    check_train_cfg(cfg);
    RepeatedResult out;
    out.selection = cfg.selection;
    for (int i = 0; i < cfg.repeats; ++i) out.models.push_back(train_model(arch, ds, cfg, cfg.seed + static_cast<uint64_t>(i)));
    out.selected = 0;
    for (int i = 1; i < cfg.repeats; ++i)
        if (out.models[static_cast<size_t>(i)].history.val_acc.back() >
            out.models[static_cast<size_t>(out.selected)].history.val_acc.back())
            out.selected = i;
    return out;
}

}  // namespace

RepeatedResult train_repeated(const models::ArchitectureSpec& arch,
                              const data::LabeledDataset& train, const TrainConfig& cfg) {
    return train_repeated_impl(arch, train, cfg);
}

RepeatedResult train_repeated(const models::ArchitectureSpec& arch,
                              const data::DistilledDataset& d, const TrainConfig& cfg) {
    return train_repeated_impl(arch, d, cfg);
}

double evaluate_clean(const models::Classifier& model, const data::LabeledDataset& test,
                      int batch_size) {
    data::validate(test, "test");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    return accuracy_on(model, test, all_indices(test.count), batch_size);
}

double evaluate_robust(const models::Classifier& model, const data::LabeledDataset& test,
                       const attacks::AttackConfig& attack, int batch_size) {
    data::validate(test, "test");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    int hits = 0;
    for (int at = 0; at < test.count; at += batch_size) {
        std::vector<int> chunk;
        for (int i = at; i < std::min(at + batch_size, test.count); ++i) chunk.push_back(i);
        auto labels = data::batch_labels(test, chunk);
        auto adv = attacks::run_attack(model, data::batch_tensor(test, chunk), labels, attack);
        Tensor logits = models::forward(model, adv.images);
        const int k = logits.dim(1);
        for (int r = 0; r < logits.dim(0); ++r) {
            int arg = 0;
            for (int j = 1; j < k; ++j)
                if (logits.data[static_cast<size_t>(r) * k + j] >
                    logits.data[static_cast<size_t>(r) * k + arg])
                    arg = j;
            if (arg == labels[static_cast<size_t>(r)]) ++hits;
        }
    }
    return 100.0 * hits / static_cast<double>(test.count);
}

double drop_rate(double acc_original, double acc_robust) {
    if (!(acc_original > 0.0))
        throw ArgumentError("drop rate is undefined when the original accuracy is zero");
    return (acc_original - acc_robust) / acc_original * 100.0;
}

std::vector<EvalReport> run_benchmark(const ExperimentConfig& cfg) {
    return run_grid(cfg, "", nullptr);
}

AblationKind ablation_from_name(const std::string& name) {
    if (name == "augmentation") return AblationKind::augmentation;
    if (name == "factor") return AblationKind::factor;
    if (name == "cluster") return AblationKind::cluster;
    throw ArgumentError("unknown ablation '" + name +
                        "' (expected augmentation, factor, cluster)");
}

std::vector<EvalReport> run_ablation(AblationKind kind, const std::vector<std::string>& grid,
                                     const ExperimentConfig& base) {
    if (grid.empty()) throw ArgumentError("ablation grid is empty");
    auto parse_int = [](const std::string& v, const char* what) {
        try {
            size_t pos = 0;
            const int n = std::stoi(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return n;
        } catch (const std::exception&) {
            throw ArgumentError(std::string("invalid ") + what + " value '" + v + "'");
        }
    };
    std::vector<EvalReport> out;
    for (const auto& value : grid) {
        ExperimentConfig cfg = base;
        std::string tag;
        switch (kind) {
            case AblationKind::augmentation: {
                augment::kind_from_name(value);
                cfg.distill_template.augmentation = augment::policy_from_names({value});
                tag = "augmentation=" + value;
                break;
            }
            case AblationKind::factor: {
                const int f = parse_int(value, "factor");
                if (f < 1) throw ArgumentError("factor must be >= 1");
                cfg.distill_template.factor = f;
                tag = "factor=" + value;
                break;
            }
            case AblationKind::cluster: {
                const int n = parse_int(value, "cluster");
                if (n < 1) throw ArgumentError("cluster count must be >= 1");
                cfg.distill_template.cluster_count = n;
                tag = "cluster=" + value;
                break;
            }
        }
        auto rows = run_grid(cfg, tag, &base);
        out.insert(out.end(), rows.begin(), rows.end());
    }
    return out;
}

ReportFormat format_from_name(const std::string& name) {
    if (name == "jsonl") return ReportFormat::jsonl;
    if (name == "csv") return ReportFormat::csv;
    if (name == "markdown") return ReportFormat::markdown;
    throw ArgumentError("unknown report format '" + name +
                        "' (expected jsonl, csv, markdown)");
}

void emit_report(const std::vector<EvalReport>& reports, ReportFormat format,
                 const std::filesystem::path& path) {
    if (reports.empty()) throw ArgumentError("no reports to emit");
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());

    if (format == ReportFormat::jsonl) {
        for (const auto& r : reports) out << report_to_json(r).dump() << "\n";
    } else if (format == ReportFormat::csv) {
        const auto attacks_s = attack_columns(reports);
        out << "dataset,method,ipc,epsilon,clean";
        for (const auto& a : attacks_s) out << ",robust_" << a;
        for (const auto& a : attacks_s) out << ",dr_" << a;
        out << ",seed,selection,model,ablation,cell,group,error\n";
        for (const auto& r : reports) {
            out << csv_escape(r.dataset_id) << "," << csv_escape(r.method) << "," << r.ipc << ","
                << fmt17(r.epsilon) << "," << fmt17(r.clean_acc);
            for (const auto& a : attacks_s) {
                bool found = false;
                const double v = lookup(r.robust, a, &found);
                out << "," << (found ? fmt17(v) : "");
            }
            for (const auto& a : attacks_s) {
                bool found = false;
                const double v = lookup(r.drop, a, &found);
                out << "," << (found ? fmt17(v) : "");
            }
            out << "," << r.seed << "," << csv_escape(r.selection) << ","
                << csv_escape(r.model_id) << "," << csv_escape(r.ablation) << ","
                << csv_escape(r.cell_hash) << "," << csv_escape(r.group_hash) << ","
                << csv_escape(r.error) << "\n";
        }
    } else {
        // One table per dataset, rows grouped by method, Table-I-like shape.
        std::vector<std::string> datasets;
        for (const auto& r : reports)
            if (std::find(datasets.begin(), datasets.end(), r.dataset_id) == datasets.end())
                datasets.push_back(r.dataset_id);
        const auto attacks_s = attack_columns(reports);
        char buf[32];
        auto f2 = [&](double v) {
            std::snprintf(buf, sizeof(buf), "%.2f", v);
            return std::string(buf);
        };
        for (const auto& ds : datasets) {
            out << "## " << ds << "\n\n";
            out << "| method | ipc | epsilon | clean |";
            for (const auto& a : attacks_s) out << " " << a << " |";
            for (const auto& a : attacks_s) out << " DR(" << a << ") |";
            out << "\n|";
            for (size_t i = 0; i < 4 + 2 * attacks_s.size(); ++i) out << " --- |";
            out << "\n";
            std::vector<const EvalReport*> rows;
            for (const auto& r : reports)
                if (r.dataset_id == ds) rows.push_back(&r);
            std::stable_sort(rows.begin(), rows.end(), [](const EvalReport* a, const EvalReport* b) {
                if (a->method != b->method) return a->method < b->method;
                if (a->ipc != b->ipc) return a->ipc < b->ipc;
                return a->epsilon < b->epsilon;
            });
            for (const EvalReport* r : rows) {
                out << "| " << r->method << " | " << r->ipc << " | " << f2(r->epsilon) << " | "
                    << f2(r->clean_acc) << " |";
                for (const auto& a : attacks_s) {
                    bool found = false;
                    const double v = lookup(r->robust, a, &found);
                    out << " " << (found ? f2(v) : std::string("-")) << " |";
                }
                for (const auto& a : attacks_s) {
                    bool found = false;
                    const double v = lookup(r->drop, a, &found);
                    out << " " << (found ? f2(v) : std::string("-")) << " |";
                }
                out << "\n";
            }
            out << "\n";
        }
    }
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<EvalReport> read_reports(const std::filesystem::path& path, ReportFormat format) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    std::vector<EvalReport> out;
    if (format == ReportFormat::jsonl) {
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            out.push_back(report_from_json(json::parse(line)));
        }
        return out;
    }
    if (format != ReportFormat::csv)
        throw ArgumentError("only jsonl and csv reports can be read back");
    std::string line;
    if (!read_csv_record(in, line)) throw FormatError("empty csv report: " + path.string());
    const auto header = split_csv_line(line);
    std::vector<std::string> attacks_s;
    for (const auto& col : header)
        if (col.rfind("robust_", 0) == 0) attacks_s.push_back(col.substr(7));
    auto col_of = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw FormatError("missing csv column " + name);
        return static_cast<size_t>(it - header.begin());
    };
    while (read_csv_record(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size()) throw FormatError("ragged csv row in " + path.string());
        EvalReport r;
        r.dataset_id = f[col_of("dataset")];
        r.method = f[col_of("method")];
        r.ipc = std::stoi(f[col_of("ipc")]);
        r.epsilon = std::stod(f[col_of("epsilon")]);
        r.clean_acc = std::stod(f[col_of("clean")]);
        for (const auto& a : attacks_s) {
            const auto& rv = f[col_of("robust_" + a)];
            const auto& dv = f[col_of("dr_" + a)];
            if (!rv.empty()) r.robust.emplace_back(a, std::stod(rv));
            if (!dv.empty()) r.drop.emplace_back(a, std::stod(dv));
        }
        r.seed = std::stoull(f[col_of("seed")]);
        r.selection = f[col_of("selection")];
        r.model_id = f[col_of("model")];
        r.ablation = f[col_of("ablation")];
        r.cell_hash = f[col_of("cell")];
        r.group_hash = f[col_of("group")];
        r.error = f[col_of("error")];
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace ddrb::harness
