#include "ddrb/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ddrb/harness.hpp"

namespace ddrb::cli {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string fmt_pct(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f%%", v);
    return buf;
}

models::Family family_from_name(const std::string& name) {
    const std::string n = lower(name);
    if (n == "convnet" || n == "conv") return models::Family::convnet;
    if (n == "resnet18" || n == "resnet") return models::Family::resnet18_mod;
    if (n == "vgg11" || n == "vgg") return models::Family::vgg11;
    if (n == "mobilenet") return models::Family::mobilenet;
    throw ArgumentError("unknown model '" + name + "'");
}

json load_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open: " + p.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError("malformed json in " + p.string() + ": " + e.what());
    }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    if (!j.is_object()) throw ArgumentError(std::string(where) + " must be a json object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) ok = ok || it.key() == k;
        if (!ok) throw ArgumentError("unknown key '" + it.key() + "' in " + where);
    }
}

// --- the flat yaml subset used by weights/params files ---
// "key: value" and "- item" lines, # comments; json files are accepted too.

struct YamlEntry {
    std::string key;  // empty for list items
    std::string value;
};

std::vector<YamlEntry> parse_flat_yaml(std::istream& in, const std::string& what) {
    std::vector<YamlEntry> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line[0] == '-') {
            out.push_back({"", trim(line.substr(1))});
            continue;
        }
        const auto colon = line.find(':');
        if (colon == std::string::npos)
            throw FormatError(what + ": expected 'key: value' or '- item', got '" + line + "'");
        out.push_back({trim(line.substr(0, colon)), trim(line.substr(colon + 1))});
    }
    return out;
}

bool looks_like_json(const fs::path& p) {
    std::ifstream in(p);
    char c = 0;
    while (in.get(c))
        if (!std::isspace(static_cast<unsigned char>(c))) return c == '{' || c == '[';
    return false;
}

std::vector<double> parse_number_list(const std::string& s, const std::string& what) {
    const std::string body = trim(s);
    if (body.size() < 2 || body.front() != '[' || body.back() != ']')
        throw FormatError(what + ": expected a [a, b, c] list, got '" + s + "'");
    std::vector<double> out;
    std::stringstream ss(body.substr(1, body.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            size_t pos = 0;
            out.push_back(std::stod(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw FormatError(what + ": '" + item + "' is not a number");
        }
    }
    return out;
}

// weights files list model checkpoints, either "- path" items or "name: path"
std::vector<std::pair<std::string, fs::path>> load_weights_entries(const fs::path& p) {
    const std::string ext = lower(p.extension().string());
    std::vector<std::pair<std::string, fs::path>> entries;
    if (ext != ".yaml" && ext != ".yml" && ext != ".json") {
        entries.emplace_back(p.filename().string(), p);
        return entries;
    }
    if (looks_like_json(p)) {
        const json j = load_json_file(p);
        if (j.is_array())
            for (const auto& item : j) {
                const fs::path path = item.get<std::string>();
                entries.emplace_back(path.filename().string(), path);
            }
        else if (j.is_object())
            for (auto it = j.begin(); it != j.end(); ++it)
                entries.emplace_back(it.key(), fs::path(it.value().get<std::string>()));
        else
            throw FormatError("weights file must hold a list or a name->path map");
    } else {
        std::ifstream in(p);
        if (!in) throw IoError("cannot open: " + p.string());
        for (const auto& [key, value] : parse_flat_yaml(in, "weights file")) {
            if (value.empty()) throw FormatError("weights file: empty path entry");
            entries.emplace_back(key.empty() ? fs::path(value).filename().string() : key, value);
        }
    }
    if (entries.empty()) throw FormatError("weights file lists no checkpoints: " + p.string());
    for (auto& [name, path] : entries)  // relative entries live next to the list file
        if (path.is_relative()) path = p.parent_path() / path;
    return entries;
}

// params files map an attacker to its [epsilon, alpha, iterations] triple
std::vector<double> load_params_triple(const fs::path& p, const std::string& attacker) {
    std::string raw;
    if (looks_like_json(p)) {
        const json j = load_json_file(p);
        if (!j.is_object()) throw FormatError("params file must map attacker -> [eps, alpha, iters]");
        for (auto it = j.begin(); it != j.end(); ++it)
            if (lower(it.key()) == attacker) {
                if (!it.value().is_array())
                    throw FormatError("params entry for '" + attacker + "' must be a list");
                std::vector<double> t;
                for (const auto& v : it.value()) t.push_back(v.get<double>());
                if (t.size() != 3)
                    throw FormatError("params entry for '" + attacker + "' needs 3 numbers");
                return t;
            }
    } else {
        std::ifstream in(p);
        if (!in) throw IoError("cannot open: " + p.string());
        for (const auto& [key, value] : parse_flat_yaml(in, "params file"))
            if (lower(key) == attacker) raw = value;
        if (!raw.empty()) {
            auto t = parse_number_list(raw, "params entry for '" + attacker + "'");
            if (t.size() != 3) throw FormatError("params entry for '" + attacker + "' needs 3 numbers");
            return t;
        }
    }
    throw ArgumentError("params file has no entry for '" + attacker + "'");
}

// --- config file sections (strict schemas, flags win over file values) ---

void apply_blobs_json(const json& j, data::BlobConfig& b) {
    check_keys(j, {"class_count", "per_class", "test_per_class", "resolution", "channels", "sigma",
                   "amplitude", "seed"},
               "data.blobs");
    if (j.contains("class_count")) b.class_count = j["class_count"].get<int>();
    if (j.contains("per_class")) b.per_class = j["per_class"].get<int>();
    if (j.contains("test_per_class")) b.test_per_class = j["test_per_class"].get<int>();
    if (j.contains("resolution")) b.resolution = j["resolution"].get<int>();
    if (j.contains("channels")) b.channels = j["channels"].get<int>();
    if (j.contains("sigma")) b.sigma = j["sigma"].get<double>();
    if (j.contains("amplitude")) b.amplitude = j["amplitude"].get<double>();
    if (j.contains("seed")) b.seed = j["seed"].get<uint64_t>();
}

void apply_data_json(const json& j, data::LoadOptions& opt) {
    check_keys(j, {"root", "seed", "blobs"}, "data");
    if (j.contains("root")) opt.data_root = j["root"].get<std::string>();
    if (j.contains("seed")) opt.seed = j["seed"].get<uint64_t>();
    if (j.contains("blobs")) apply_blobs_json(j["blobs"], opt.blobs);
}

void apply_arch_json(const json& j, models::ArchitectureSpec& a) {
    check_keys(j, {"family", "depth", "width"}, "model");
    if (j.contains("family")) a.family = family_from_name(j["family"].get<std::string>());
    if (j.contains("depth")) a.depth = j["depth"].get<int>();
    if (j.contains("width")) a.width = j["width"].get<int>();
}

augment::AugmentationPolicy policy_from_json(const json& j) {
    std::vector<std::string> names;
    for (const auto& v : j) names.push_back(v.get<std::string>());
    return augment::policy_from_names(names);
}

void apply_train_json(const json& j, harness::TrainConfig& cfg) {
    check_keys(j, {"optimizer", "lr", "momentum", "weight_decay", "epochs", "batch_size",
                   "repeats", "val_fraction", "selection", "augmentation", "seed"},
               "train");
    if (j.contains("optimizer") && lower(j["optimizer"].get<std::string>()) != "sgd")
        throw ArgumentError("only the sgd optimizer is supported");
    if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
    if (j.contains("momentum")) cfg.momentum = j["momentum"].get<double>();
    if (j.contains("weight_decay")) cfg.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("repeats")) cfg.repeats = j["repeats"].get<int>();
    if (j.contains("val_fraction")) cfg.val_fraction = j["val_fraction"].get<double>();
    if (j.contains("selection"))
        cfg.selection = harness::selection_from_name(j["selection"].get<std::string>());
    if (j.contains("augmentation")) cfg.augmentation = policy_from_json(j["augmentation"]);
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
}

void apply_distill_json(const json& j, distill::DistillConfig& cfg) {
    check_keys(j, {"method", "ipc", "iterations", "image_lr", "inner_model_steps", "batch_real",
                   "factor", "cluster_n", "augmentation", "mtt", "seed"},
               "distill");
    if (j.contains("method")) cfg.method = distill::method_from_name(j["method"].get<std::string>());
    if (j.contains("ipc")) cfg.ipc = j["ipc"].get<int>();
    if (j.contains("iterations")) cfg.iterations = j["iterations"].get<int>();
    if (j.contains("image_lr")) cfg.image_lr = j["image_lr"].get<double>();
    if (j.contains("inner_model_steps")) cfg.inner_model_steps = j["inner_model_steps"].get<int>();
    if (j.contains("batch_real")) cfg.batch_real = j["batch_real"].get<int>();
    if (j.contains("factor")) cfg.factor = j["factor"].get<int>();
    if (j.contains("cluster_n")) cfg.cluster_count = j["cluster_n"].get<int>();
    if (j.contains("augmentation")) cfg.augmentation = policy_from_json(j["augmentation"]);
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("mtt")) {
        const json& m = j["mtt"];
        check_keys(m, {"synthetic_steps", "expert_epochs", "max_start_epoch", "step_lr",
                       "starting_step_lr"},
                   "distill.mtt");
        if (m.contains("synthetic_steps")) cfg.mtt.synthetic_steps = m["synthetic_steps"].get<int>();
        if (m.contains("expert_epochs")) cfg.mtt.expert_epochs = m["expert_epochs"].get<int>();
        if (m.contains("max_start_epoch")) cfg.mtt.max_start_epoch = m["max_start_epoch"].get<int>();
        if (m.contains("step_lr")) cfg.mtt.step_lr = m["step_lr"].get<double>();
        if (m.contains("starting_step_lr"))
            cfg.mtt.starting_step_lr = m["starting_step_lr"].get<double>();
    }
}

harness::ExperimentConfig experiment_from_json(const json& j) {
    check_keys(j, {"datasets", "methods", "ipc", "attacks", "epsilons", "attack_iterations",
                   "seed", "output_dir", "train", "distill", "model", "data"},
               "experiment config");
    harness::ExperimentConfig cfg;
    if (j.contains("datasets")) cfg.datasets = j["datasets"].get<std::vector<std::string>>();
    if (j.contains("methods")) cfg.methods = j["methods"].get<std::vector<std::string>>();
    if (j.contains("ipc")) cfg.ipc_list = j["ipc"].get<std::vector<int>>();
    if (j.contains("attacks")) {
        cfg.attack_kinds.clear();
        for (const auto& v : j["attacks"])
            cfg.attack_kinds.push_back(attacks::kind_from_name(lower(v.get<std::string>())));
    }
    if (j.contains("epsilons")) cfg.epsilons = j["epsilons"].get<std::vector<double>>();
    if (j.contains("attack_iterations")) cfg.attack_iterations = j["attack_iterations"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("train")) apply_train_json(j["train"], cfg.train);
    if (j.contains("distill")) apply_distill_json(j["distill"], cfg.distill_template);
    if (j.contains("model")) apply_arch_json(j["model"], cfg.arch);
    if (j.contains("data")) apply_data_json(j["data"], cfg.data);
    return cfg;
}

// --- echo helpers: every run directory records its effective configuration ---

json aug_echo(const augment::AugmentationPolicy& p) {
    json names = json::array();
    for (auto k : p.ops) names.push_back(augment::kind_name(k));
    return names;
}

json distill_echo(const distill::DistillConfig& d) {
    json j;
    j["method"] = distill::method_name(d.method);
    j["ipc"] = d.ipc;
    j["iterations"] = d.iterations;
    j["image_lr"] = d.image_lr;
    j["inner_model_steps"] = d.inner_model_steps;
    j["batch_real"] = d.batch_real;
    j["factor"] = d.factor;
    j["cluster_n"] = d.cluster_count;
    j["augmentation"] = aug_echo(d.augmentation);
    j["mtt"] = {{"synthetic_steps", d.mtt.synthetic_steps},
                {"expert_epochs", d.mtt.expert_epochs},
                {"max_start_epoch", d.mtt.max_start_epoch},
                {"step_lr", d.mtt.step_lr},
                {"starting_step_lr", d.mtt.starting_step_lr}};
    j["seed"] = d.seed;
    return j;
}

json train_echo(const harness::TrainConfig& t) {
    json j;
    j["optimizer"] = "sgd";
    j["lr"] = t.lr;
    j["momentum"] = t.momentum;
    j["weight_decay"] = t.weight_decay;
    j["epochs"] = t.epochs;
    j["batch_size"] = t.batch_size;
    j["repeats"] = t.repeats;
    j["val_fraction"] = t.val_fraction;
    j["selection"] = harness::selection_name(t.selection);
    j["augmentation"] = aug_echo(t.augmentation);
    j["seed"] = t.seed;
    return j;
}

json arch_echo(const models::ArchitectureSpec& a) {
    return {{"family", models::family_name(a.family)}, {"depth", a.depth}, {"width", a.width}};
}

json data_echo(const data::LoadOptions& o) {
    json b;
    b["class_count"] = o.blobs.class_count;
    b["per_class"] = o.blobs.per_class;
    b["test_per_class"] = o.blobs.test_per_class;
    b["resolution"] = o.blobs.resolution;
    b["channels"] = o.blobs.channels;
    b["sigma"] = o.blobs.sigma;
    b["amplitude"] = o.blobs.amplitude;
    b["seed"] = o.blobs.seed;
    return {{"root", o.data_root.string()}, {"seed", o.seed}, {"blobs", b}};
}

void write_run_config(const fs::path& dir, const json& j) {
    fs::create_directories(dir);
    std::ofstream out(dir / "run_config.json");
    if (!out) throw IoError("cannot write " + (dir / "run_config.json").string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + (dir / "run_config.json").string());
}

// --- subcommand state ---

struct DistillArgs {
    std::string method = "dc", dataset = "blobs", model = "convnet";
    int ipc = 1, factor = 1, cluster_n = 0, iterations = 100;
    uint64_t seed = 0;
    std::string config, out;
    CLI::Option *method_o = nullptr, *ipc_o = nullptr, *factor_o = nullptr, *cluster_o = nullptr,
                *iters_o = nullptr, *seed_o = nullptr, *model_o = nullptr;
};

struct TrainArgs {
    std::string dataset, distilled_path, model = "convnet", optimizer = "sgd", save_path;
    int epochs = 1000, batch = 256, model_num = 5;
    bool dsa = false;
    uint64_t seed = 0;
    std::string config;
    CLI::Option *epochs_o = nullptr, *batch_o = nullptr, *num_o = nullptr, *seed_o = nullptr,
                *model_o = nullptr, *dataset_o = nullptr, *distilled_o = nullptr;
};

struct EvalArgs {
    std::string weights, dataset = "blobs", config;
    uint64_t seed = 0;
};

struct RobustArgs {
    std::string attacker = "fgsm", weights, params, log_path, dataset = "blobs", config, output;
    double eps = 8.0 / 255.0, alpha = 0.0;
    int iters = 10, repeat = 5;
    uint64_t seed = 0;
    CLI::Option *eps_o = nullptr, *alpha_o = nullptr, *iters_o = nullptr;
};

struct AblateArgs {
    std::string kind, grid, base_config, output;
    int jobs = 1;
    uint64_t seed = 0;
    CLI::Option* seed_o = nullptr;
};

struct ReportArgs {
    std::string input, format = "markdown", output;
};

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

data::DatasetSplit load_split(const std::string& dataset, const std::string& config_path) {
    data::LoadOptions opt;
    if (!config_path.empty()) {
        const json j = load_json_file(config_path);
        if (j.contains("data")) apply_data_json(j["data"], opt);
    }
    return data::load_builtin(dataset, opt);
}

int do_distill(const DistillArgs& a) {
    distill::DistillConfig dcfg;
    models::ArchitectureSpec arch;
    data::LoadOptions dopt;
    json cfg_json;
    if (!a.config.empty()) {
        cfg_json = load_json_file(a.config);
        // one config file can drive the whole pipeline, so every section is legal here
        check_keys(cfg_json, {"distill", "train", "model", "data"}, "distill config");
        if (cfg_json.contains("distill")) apply_distill_json(cfg_json["distill"], dcfg);
        if (cfg_json.contains("model")) apply_arch_json(cfg_json["model"], arch);
        if (cfg_json.contains("data")) apply_data_json(cfg_json["data"], dopt);
    }
    if (a.method_o->count()) dcfg.method = distill::method_from_name(a.method);
    if (a.ipc_o->count()) dcfg.ipc = a.ipc;
    if (a.factor_o->count()) dcfg.factor = a.factor;
    if (a.cluster_o->count()) dcfg.cluster_count = a.cluster_n;
    if (a.iters_o->count()) dcfg.iterations = a.iterations;
    if (a.seed_o->count()) dcfg.seed = a.seed;
    if (a.model_o->count()) arch.family = family_from_name(a.model);

    const auto split = data::load_builtin(a.dataset, dopt);
    arch.in_channels = split.train.channels;
    arch.in_h = split.train.height;
    arch.in_w = split.train.width;
    arch.class_count = split.train.class_count;

    const fs::path out_dir = a.out;
    fs::create_directories(out_dir);
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
            const int epochs = dcfg.mtt.max_start_epoch + dcfg.mtt.expert_epochs;
            auto store = distill::record_expert_trajectories(arch, split.train, epochs, 2, 1,
                                                             mix_seed(dcfg.seed, "experts"));
            distill::save_trajectories(store, out_dir / "experts.ddrt");
            d = distill::distill_trajectory_matching(dcfg, store, split.train);
            break;
        }
    }
    data::write_distilled(d, out_dir / "distilled.ddrb");

    json echo;
    echo["command"] = "distill";
    echo["flags"] = {{"method", distill::method_name(dcfg.method)}, {"dataset", a.dataset},
                     {"ipc", dcfg.ipc},     {"factor", dcfg.factor},
                     {"cluster_n", dcfg.cluster_count}, {"iterations", dcfg.iterations},
                     {"seed", dcfg.seed},   {"out", out_dir.string()}};
    echo["distill"] = distill_echo(dcfg);
    echo["model"] = arch_echo(arch);
    echo["data"] = data_echo(dopt);
    write_run_config(out_dir, echo);

    std::cout << "Distilled " << a.dataset << " with " << distill::method_name(dcfg.method) << ": "
              << d.count << " images -> " << (out_dir / "distilled.ddrb").string() << "\n";
    if (!d.loss_history.empty())
        std::cout << "Final matching loss: " << fmt_g(d.loss_history.back()) << "\n";
    return 0;
}

int do_train(const TrainArgs& a) {
    if ((a.dataset_o->count() > 0) == (a.distilled_o->count() > 0))
        throw ArgumentError("pass exactly one of --dataset or --distilled-path");
    if (lower(a.optimizer) != "sgd") throw ArgumentError("only the sgd optimizer is supported");

    harness::TrainConfig tcfg;
    models::ArchitectureSpec arch;
    data::LoadOptions dopt;
    if (!a.config.empty()) {
        const json j = load_json_file(a.config);
        check_keys(j, {"train", "distill", "model", "data"}, "train config");
        if (j.contains("train")) apply_train_json(j["train"], tcfg);
        if (j.contains("model")) apply_arch_json(j["model"], arch);
        if (j.contains("data")) apply_data_json(j["data"], dopt);
    }
    if (a.epochs_o->count()) tcfg.epochs = a.epochs;
    if (a.batch_o->count()) tcfg.batch_size = a.batch;
    if (a.num_o->count()) tcfg.repeats = a.model_num;
    if (a.seed_o->count()) tcfg.seed = a.seed;
    if (a.model_o->count()) arch.family = family_from_name(a.model);
    if (a.dsa)
        tcfg.augmentation = augment::policy_from_names(
            {"color", "crop", "cutout", "flip", "scale", "rotate"});

    harness::RepeatedResult rep;
    json source;
    if (a.dataset_o->count()) {
        const auto split = data::load_builtin(a.dataset, dopt);
        arch.in_channels = split.train.channels;
        arch.in_h = split.train.height;
        arch.in_w = split.train.width;
        arch.class_count = split.train.class_count;
        rep = harness::train_repeated(arch, split.train, tcfg);
        source = {{"dataset", a.dataset}};
    } else {
        const auto d = data::read_distilled(a.distilled_path);
        arch.in_channels = d.channels;
        arch.in_h = d.height;
        arch.in_w = d.width;
        arch.class_count = d.class_count;
        rep = harness::train_repeated(arch, d, tcfg);
        source = {{"distilled_path", a.distilled_path}};
    }

    const fs::path out_dir = a.save_path;
    fs::create_directories(out_dir);
    json results;
    results["selected"] = rep.selected;
    json vals = json::array();
    for (size_t i = 0; i < rep.models.size(); ++i) {
        models::save_model(rep.models[i].model, out_dir / ("model-" + std::to_string(i) + ".ddrw"));
        vals.push_back(rep.models[i].history.val_acc.back());
        std::cout << "model " << i << ": final val acc " << fmt_pct(rep.models[i].history.val_acc.back())
                  << "\n";
    }
    results["final_val_acc"] = vals;
    std::cout << "selected model " << rep.selected << " -> "
              << (out_dir / ("model-" + std::to_string(rep.selected) + ".ddrw")).string() << "\n";

    json echo;
    echo["command"] = "train";
    echo["flags"] = {{"source", source},
                     {"model", models::family_name(arch.family)},
                     {"optimizer", "sgd"},
                     {"train_epoch", tcfg.epochs},
                     {"train_batch", tcfg.batch_size},
                     {"model_num", tcfg.repeats},
                     {"dsa", a.dsa},
                     {"seed", tcfg.seed},
                     {"save_path", out_dir.string()}};
    echo["train"] = train_echo(tcfg);
    echo["model"] = arch_echo(arch);
    echo["data"] = data_echo(dopt);
    echo["results"] = results;
    write_run_config(out_dir, echo);
    return 0;
}

int do_eval(const EvalArgs& a) {
    const auto split = load_split(a.dataset, a.config);
    for (const auto& [name, path] : load_weights_entries(a.weights)) {
        const auto model = models::load_model(path);
        std::cout << "Testing weights: " << name << "\n";
        std::cout << "Clean accuracy: " << fmt_pct(harness::evaluate_clean(model, split.test))
                  << "\n";
    }
    return 0;
}

int do_robust(const RobustArgs& a) {
    if (a.repeat < 1) throw ArgumentError("--repeat must be >= 1");
    const auto kind = attacks::kind_from_name(lower(a.attacker));
    const std::string canon = attacks::kind_name(kind);

    attacks::AttackConfig acfg;
    acfg.kind = kind;
    if (!a.params.empty()) {
        const auto t = load_params_triple(a.params, canon);
        acfg.epsilon = t[0];
        acfg.step_size = t[1];
        acfg.iterations = static_cast<int>(t[2]);
    }
    if (a.eps_o->count()) acfg.epsilon = a.eps;
    if (a.alpha_o->count()) acfg.step_size = a.alpha;
    if (a.iters_o->count()) acfg.iterations = a.iters;

    const auto split = load_split(a.dataset, a.config);
    const auto entries = load_weights_entries(a.weights);

    std::ostringstream log;
    auto emit = [&](const std::string& line) {
        std::cout << line << "\n";
        log << line << "\n";
    };
    std::string display = canon;
    for (auto& c : display) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    emit("Using " + display + " for perturbation.");
    emit("Repeat each experiment for " + std::to_string(a.repeat) + " times.");
    emit("Test parameters: [" + fmt_g(acfg.epsilon) + ", " + fmt_g(acfg.step_size) + ", " +
         std::to_string(acfg.iterations) + "]");

    std::vector<harness::EvalReport> reports;
    for (const auto& [name, path] : entries) {
        const auto model = models::load_model(path);
        double sum = 0.0;
        for (int r = 0; r < a.repeat; ++r) {
            auto run_cfg = acfg;
            run_cfg.seed = mix_seed(a.seed, "robust", static_cast<uint64_t>(r));
            sum += harness::evaluate_robust(model, split.test, run_cfg);
        }
        emit("Testing weights: " + name);
        emit("Average robust accuracy: " + fmt_pct(sum / a.repeat));

        harness::EvalReport rep;
        rep.dataset_id = a.dataset;
        rep.method = name;  // one row per weights entry
        rep.model_id = models::family_name(model.spec.family) + "-d" +
                       std::to_string(model.spec.depth) + "-w" + std::to_string(model.spec.width);
        rep.selection = "average";
        rep.ipc = 0;
        rep.epsilon = acfg.epsilon;
        rep.seed = a.seed;
        rep.clean_acc = harness::evaluate_clean(model, split.test);
        rep.robust.emplace_back(canon, sum / a.repeat);
        if (rep.clean_acc > 0.0)  // the drop rate is undefined at zero clean accuracy
            rep.drop.emplace_back(canon, harness::drop_rate(rep.clean_acc, sum / a.repeat));
        reports.push_back(std::move(rep));
    }

    if (!a.log_path.empty()) {
        const fs::path lp = a.log_path;
        if (lp.has_parent_path()) fs::create_directories(lp.parent_path());
        std::ofstream out(lp);
        if (!out) throw IoError("cannot write " + lp.string());
        out << log.str();
    }
    if (!a.output.empty()) {
        fs::create_directories(a.output);
        harness::emit_report(reports, harness::ReportFormat::jsonl,
                             fs::path(a.output) / "robust.jsonl");
        json echo;
        echo["command"] = "robust";
        echo["flags"] = {{"attacker", canon},
                         {"eps", acfg.epsilon},
                         {"alpha", acfg.step_size},
                         {"iters", acfg.iterations},
                         {"weights", a.weights},
                         {"params", a.params},
                         {"repeat", a.repeat},
                         {"log_path", a.log_path},
                         {"dataset", a.dataset},
                         {"seed", a.seed}};
        write_run_config(a.output, echo);
    }
    return 0;
}

int do_ablate(const AblateArgs& a) {
    if (a.jobs < 1) throw ArgumentError("--jobs must be >= 1");
    auto base = experiment_from_json(load_json_file(a.base_config));
    if (a.seed_o->count()) base.seed = a.seed;
    const fs::path out_dir = a.output;
    if (base.output_dir.empty()) base.output_dir = out_dir / "cells";

    const auto rows = harness::run_ablation(harness::ablation_from_name(a.kind),
                                            split_commas(a.grid), base);
    fs::create_directories(out_dir);
    harness::emit_report(rows, harness::ReportFormat::jsonl, out_dir / "ablation.jsonl");

    json echo;
    echo["command"] = "ablate";
    echo["flags"] = {{"kind", a.kind},
                     {"grid", a.grid},
                     {"base_config", a.base_config},
                     {"output", out_dir.string()},
                     {"jobs", a.jobs},
                     {"seed", base.seed}};
    write_run_config(out_dir, echo);

    int failed = 0;
    for (const auto& r : rows) failed += !r.error.empty();
    std::cout << rows.size() << " rows -> " << (out_dir / "ablation.jsonl").string();
    if (failed) std::cout << " (" << failed << " failed cells)";
    std::cout << "\n";
    return 0;
}

int do_report(const ReportArgs& a) {
    const std::string ext = lower(fs::path(a.input).extension().string());
    harness::ReportFormat in_format;
    if (ext == ".jsonl") in_format = harness::ReportFormat::jsonl;
    else if (ext == ".csv") in_format = harness::ReportFormat::csv;
    else throw ArgumentError("cannot infer input format from '" + a.input + "' (need .jsonl or .csv)");
    const auto rows = harness::read_reports(a.input, in_format);
    harness::emit_report(rows, harness::format_from_name(a.format), a.output);
    std::cout << "wrote " << a.output << " (" << rows.size() << " rows)\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    std::vector<std::string> full = {"ddrb"};
    full.insert(full.end(), args.begin(), args.end());
    std::vector<char*> argv;
    argv.reserve(full.size());
    for (auto& s : full) argv.push_back(s.data());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

int cli_main(int argc, char** argv) {
    CLI::App app{"dataset distillation robustness benchmark"};
    app.require_subcommand(1);

    DistillArgs da;
    auto* dist = app.add_subcommand("distill", "distill a dataset into a tiny synthetic set");
    da.method_o = dist->add_option("--method", da.method, "dc | dsa | dm | mtt")
                      ->capture_default_str();
    dist->add_option("--dataset", da.dataset, "source dataset")->capture_default_str();
    da.model_o = dist->add_option("--model", da.model, "matcher network family")
                     ->capture_default_str();
    da.ipc_o = dist->add_option("--ipc", da.ipc, "images per class")->capture_default_str();
    da.factor_o = dist->add_option("--factor", da.factor, "multi-formation factor")
                      ->capture_default_str();
    da.cluster_o = dist->add_option("--cluster-n,--cluster_n", da.cluster_n,
                                    "cluster count for real-batch selection, 0 disables")
                       ->capture_default_str();
    da.iters_o = dist->add_option("--iterations", da.iterations, "outer optimization steps")
                     ->capture_default_str();
    da.seed_o = dist->add_option("--seed", da.seed, "random seed")->capture_default_str();
    dist->add_option("--config", da.config, "json config file (flags win)");
    dist->add_option("--out,--output", da.out, "output directory")->required();

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train classifiers from a dataset or distilled set");
    ta.dataset_o = train->add_option("--dataset", ta.dataset, "train on this full dataset");
    ta.distilled_o = train->add_option("--distilled-path,--distilled_path,--pt-path,--pt_path",
                                       ta.distilled_path, "train on this distilled set");
    ta.model_o = train->add_option("--model", ta.model, "network family")->capture_default_str();
    ta.epochs_o = train->add_option("--train-epoch,--train_epoch,--epochs", ta.epochs,
                                    "training epochs")
                      ->capture_default_str();
    ta.batch_o = train->add_option("--train-batch,--train_batch", ta.batch, "minibatch size")
                     ->capture_default_str();
    ta.num_o = train->add_option("--model-num,--model_num", ta.model_num,
                                 "independently trained repeats")
                   ->capture_default_str();
    train->add_option("--optimizer", ta.optimizer, "sgd")->capture_default_str();
    train->add_flag("--dsa", ta.dsa, "apply the siamese augmentation suite while training");
    ta.seed_o = train->add_option("--seed", ta.seed, "random seed")->capture_default_str();
    train->add_option("--config", ta.config, "json config file (flags win)");
    train->add_option("--save-path,--save_path,--output", ta.save_path, "output directory")
        ->required();

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "clean test accuracy of trained checkpoints");
    eval->add_option("--weights", ea.weights, "checkpoint or weights list file")->required();
    eval->add_option("--dataset", ea.dataset, "evaluation dataset")->capture_default_str();
    eval->add_option("--config", ea.config, "json config file");
    eval->add_option("--seed", ea.seed, "unused, accepted for symmetry")->capture_default_str();

    RobustArgs ra;
    auto* robust = app.add_subcommand("robust", "adversarial robust accuracy of checkpoints");
    robust->add_option("--attacker", ra.attacker, "fgsm | pgd | cw | vmifgsm | jitter | autoattack")
        ->capture_default_str();
    ra.eps_o = robust->add_option("--eps", ra.eps, "L-inf budget")->capture_default_str();
    ra.alpha_o = robust->add_option("--alpha", ra.alpha, "step size, 0 picks the default")
                     ->capture_default_str();
    ra.iters_o = robust->add_option("--iters", ra.iters, "attack iterations")->capture_default_str();
    robust->add_option("--weights", ra.weights, "checkpoint or weights list file")->required();
    robust->add_option("--params", ra.params, "attacker -> [eps, alpha, iters] file");
    robust->add_option("--repeat", ra.repeat, "attack-seed repeats to average")
        ->capture_default_str();
    robust->add_option("--log-path,--log_path", ra.log_path, "write the printed lines here too");
    robust->add_option("--dataset", ra.dataset, "evaluation dataset")->capture_default_str();
    robust->add_option("--config", ra.config, "json config file");
    robust->add_option("--seed", ra.seed, "random seed")->capture_default_str();
    robust->add_option("--output", ra.output,
                       "directory for robust.jsonl and the echoed run config");

    AblateArgs aa;
    auto* ablate = app.add_subcommand("ablate", "vary one distillation component over a grid");
    ablate->add_option("--kind", aa.kind, "augmentation | factor | cluster")->required();
    ablate->add_option("--grid", aa.grid, "comma-separated component values")->required();
    ablate->add_option("--base-config,--base_config,--config", aa.base_config,
                       "experiment json config")
        ->required();
    ablate->add_option("--jobs", aa.jobs, "worker budget")->capture_default_str();
    aa.seed_o = ablate->add_option("--seed", aa.seed, "override the experiment seed");
    ablate->add_option("--output", aa.output, "output directory")->required();

    ReportArgs pa;
    auto* report = app.add_subcommand("report", "convert jsonl/csv reports between formats");
    report->add_option("--input", pa.input, "report file (.jsonl or .csv)")->required();
    report->add_option("--format", pa.format, "jsonl | csv | markdown")->capture_default_str();
    report->add_option("--output", pa.output, "destination file")->required();

    try {
        app.parse(argc, argv);
        if (*dist) return do_distill(da);
        if (*train) return do_train(ta);
        if (*eval) return do_eval(ea);
        if (*robust) return do_robust(ra);
        if (*ablate) return do_ablate(aa);
        if (*report) return do_report(pa);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: invalid config value: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace ddrb::cli
