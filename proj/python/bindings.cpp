// Python surface: dataset synthesis, the four distillers, training,
// clean/robust evaluation, and the CLI entry point for full pipelines.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ddrb/cli.hpp"
#include "ddrb/harness.hpp"

namespace py = pybind11;
using namespace ddrb;

namespace {

models::ArchitectureSpec arch_for(int class_count, int channels, int height, int width,
                                  const std::string& family, int net_width, int depth) {
    models::ArchitectureSpec arch;
    arch.family = models::family_from_string(family);
    arch.depth = depth;
    arch.width = net_width;
    arch.class_count = class_count;
    arch.in_channels = channels;
    arch.in_h = height;
    arch.in_w = width;
    return arch;
}

data::DistilledDataset distill_impl(const data::LabeledDataset& train, const std::string& method,
                                    int ipc, int iterations, double image_lr, int batch_real,
                                    int inner_model_steps, int factor, int cluster_count,
                                    const std::vector<std::string>& augmentation, int width,
                                    int depth, int synthetic_steps, int expert_epochs,
                                    int max_start_epoch, uint64_t seed) {
    distill::DistillConfig cfg;
    cfg.method = distill::method_from_name(method);
    cfg.ipc = ipc;
    cfg.iterations = iterations;
    cfg.image_lr = image_lr;
    cfg.batch_real = batch_real;
    cfg.inner_model_steps = inner_model_steps;
    cfg.factor = factor;
    cfg.cluster_count = cluster_count;
    cfg.augmentation = augment::policy_from_names(augmentation);
    cfg.mtt.synthetic_steps = synthetic_steps;
    cfg.mtt.expert_epochs = expert_epochs;
    cfg.mtt.max_start_epoch = max_start_epoch;
    cfg.seed = seed;
    const auto arch =
        arch_for(train.class_count, train.channels, train.height, train.width, "convnet", width,
                 depth);
    if (cfg.method == distill::Method::dm)
        return distill::distill_distribution_matching(cfg, train, arch);
    if (cfg.method == distill::Method::mtt) {
        const int epochs = cfg.mtt.max_start_epoch + cfg.mtt.expert_epochs;
        const auto store = distill::record_expert_trajectories(arch, train, epochs, 2, 1,
                                                               mix_seed(seed, "experts"));
        return distill::distill_trajectory_matching(cfg, store, train);
    }
    return distill::distill_gradient_matching(cfg, train, arch);
}

harness::TrainConfig train_config(double lr, double momentum, double weight_decay, int epochs,
                                  int batch_size, int repeats, double val_fraction,
                                  const std::vector<std::string>& augmentation, uint64_t seed,
                                  const std::string& selection) {
    harness::TrainConfig cfg;
    cfg.lr = lr;
    cfg.momentum = momentum;
    cfg.weight_decay = weight_decay;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.repeats = repeats;
    cfg.val_fraction = val_fraction;
    cfg.augmentation = augment::policy_from_names(augmentation);
    cfg.seed = seed;
    if (selection == "best_val") cfg.selection = harness::Selection::best_val;
    else if (selection == "average") cfg.selection = harness::Selection::average;
    else throw ArgumentError("unknown selection '" + selection + "', expected best_val|average");
    return cfg;
}

attacks::AttackConfig attack_config(const std::string& attack, double epsilon, double step_size,
                                    int iterations, bool random_start, int square_queries,
                                    uint64_t seed) {
    attacks::AttackConfig cfg;
    cfg.kind = attacks::kind_from_name(attack);
    cfg.epsilon = epsilon;
    cfg.step_size = step_size;
    cfg.iterations = iterations;
    cfg.random_start = random_start;
    cfg.square_queries = square_queries;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "dataset distillation robustness benchmark core";
    m.attr("__version__") = "0.1.0";

    py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_IOError);
    py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

    py::class_<data::LabeledDataset>(m, "Dataset")
        .def_readonly("name", &data::LabeledDataset::name)
        .def_readonly("count", &data::LabeledDataset::count)
        .def_readonly("channels", &data::LabeledDataset::channels)
        .def_readonly("height", &data::LabeledDataset::height)
        .def_readonly("width", &data::LabeledDataset::width)
        .def_readonly("class_count", &data::LabeledDataset::class_count)
        .def_readonly("labels", &data::LabeledDataset::labels)
        .def("image", [](const data::LabeledDataset& d, int i) {
            if (i < 0 || i >= d.count) throw ArgumentError("image index out of range");
            const size_t pixels = static_cast<size_t>(d.channels) * d.height * d.width;
            const auto* base = d.images.data() + static_cast<size_t>(i) * pixels;
            return std::vector<float>(base, base + pixels);
        }, py::arg("index"), "flat pixel values of one image, channel-major")
        .def("__len__", [](const data::LabeledDataset& d) { return d.count; })
        .def("__repr__", [](const data::LabeledDataset& d) {
            return "<Dataset " + d.name + " n=" + std::to_string(d.count) + " " +
                   std::to_string(d.channels) + "x" + std::to_string(d.height) + "x" +
                   std::to_string(d.width) + " classes=" + std::to_string(d.class_count) + ">";
        });

    py::class_<data::DatasetSplit>(m, "DatasetSplit")
        .def_readonly("train", &data::DatasetSplit::train)
        .def_readonly("test", &data::DatasetSplit::test);

    py::class_<data::DistilledDataset>(m, "Distilled")
        .def_readonly("name", &data::DistilledDataset::name)
        .def_readonly("method", &data::DistilledDataset::method)
        .def_readonly("count", &data::DistilledDataset::count)
        .def_readonly("channels", &data::DistilledDataset::channels)
        .def_readonly("height", &data::DistilledDataset::height)
        .def_readonly("width", &data::DistilledDataset::width)
        .def_readonly("class_count", &data::DistilledDataset::class_count)
        .def_readonly("ipc", &data::DistilledDataset::ipc)
        .def_readonly("factor", &data::DistilledDataset::factor)
        .def_readonly("labels", &data::DistilledDataset::labels)
        .def_readonly("loss_history", &data::DistilledDataset::loss_history)
        .def_readonly("config_hash", &data::DistilledDataset::config_hash)
        .def("__len__", [](const data::DistilledDataset& d) { return d.count; })
        .def("__repr__", [](const data::DistilledDataset& d) {
            return "<Distilled " + d.method + " ipc=" + std::to_string(d.ipc) + " n=" +
                   std::to_string(d.count) + ">";
        });

    py::class_<models::Classifier>(m, "Model")
        .def_property_readonly("family", [](const models::Classifier& c) {
            return models::family_name(c.spec.family);
        })
        .def_property_readonly("width", [](const models::Classifier& c) { return c.spec.width; })
        .def_property_readonly("depth", [](const models::Classifier& c) { return c.spec.depth; })
        .def_property_readonly("class_count", [](const models::Classifier& c) {
            return c.spec.class_count;
        })
        .def_property_readonly("parameter_count", [](const models::Classifier& c) {
            size_t n = 0;
            for (const auto& p : c.params) n += p.value.data.size();
            return n;
        })
        .def("__repr__", [](const models::Classifier& c) {
            return "<Model " + models::family_name(c.spec.family) + " width=" +
                   std::to_string(c.spec.width) + " classes=" +
                   std::to_string(c.spec.class_count) + ">";
        });

    m.def("make_blobs", [](int class_count, int per_class, int test_per_class, int resolution,
                           int channels, double sigma, double amplitude, uint64_t seed) {
        data::BlobConfig cfg;
        cfg.class_count = class_count;
        cfg.per_class = per_class;
        cfg.test_per_class = test_per_class;
        cfg.resolution = resolution;
        cfg.channels = channels;
        cfg.sigma = sigma;
        cfg.amplitude = amplitude;
        cfg.seed = seed;
        return data::make_blob_dataset(cfg);
    }, py::arg("class_count") = 10, py::arg("per_class") = 128, py::arg("test_per_class") = 0,
       py::arg("resolution") = 16, py::arg("channels") = 3, py::arg("sigma") = 0.1,
       py::arg("amplitude") = 0.35, py::arg("seed") = 0,
       "seeded synthetic image classification dataset");

    m.def("load_builtin", [](const std::string& name, const std::filesystem::path& data_root,
                             uint64_t seed) {
        data::LoadOptions opt;
        opt.data_root = data_root;
        opt.seed = seed;
        return data::load_builtin(name, opt);
    }, py::arg("name"), py::arg("data_root") = ".", py::arg("seed") = 0,
       py::call_guard<py::gil_scoped_release>());

    m.def("registered_loaders", &data::registered_loaders);

    m.def("distill", [](const data::LabeledDataset& train, const std::string& method, int ipc,
                        int iterations, double image_lr, int batch_real, int inner_model_steps,
                        int factor, int cluster_count, const std::vector<std::string>& augmentation,
                        int width, int depth, int synthetic_steps, int expert_epochs,
                        int max_start_epoch, uint64_t seed) {
        return distill_impl(train, method, ipc, iterations, image_lr, batch_real,
                            inner_model_steps, factor, cluster_count, augmentation, width, depth,
                            synthetic_steps, expert_epochs, max_start_epoch, seed);
    }, py::arg("train"), py::arg("method") = "dc", py::arg("ipc") = 1,
       py::arg("iterations") = 100, py::arg("image_lr") = 0.1, py::arg("batch_real") = 64,
       py::arg("inner_model_steps") = 1, py::arg("factor") = 1, py::arg("cluster_count") = 0,
       py::arg("augmentation") = std::vector<std::string>{}, py::arg("width") = 128,
       py::arg("depth") = 3, py::arg("synthetic_steps") = 10, py::arg("expert_epochs") = 2,
       py::arg("max_start_epoch") = 5, py::arg("seed") = 0,
       py::call_guard<py::gil_scoped_release>(),
       "condense a training set into ipc synthetic images per class");

    m.def("write_distilled", &data::write_distilled, py::arg("distilled"), py::arg("path"));
    m.def("read_distilled", &data::read_distilled, py::arg("path"));

    m.def("train", [](const data::LabeledDataset& train, int width, int depth,
                      const std::string& family, double lr, double momentum, double weight_decay,
                      int epochs, int batch_size, int repeats, double val_fraction,
                      const std::vector<std::string>& augmentation, uint64_t seed,
                      const std::string& selection) {
        const auto cfg = train_config(lr, momentum, weight_decay, epochs, batch_size, repeats,
                                      val_fraction, augmentation, seed, selection);
        const auto arch = arch_for(train.class_count, train.channels, train.height, train.width,
                                   family, width, depth);
        const auto res = harness::train_repeated(arch, train, cfg);
        return res.models[static_cast<size_t>(res.selected)].model;
    }, py::arg("train"), py::arg("width") = 128, py::arg("depth") = 3,
       py::arg("family") = "convnet", py::arg("lr") = 0.01, py::arg("momentum") = 0.9,
       py::arg("weight_decay") = 5e-4, py::arg("epochs") = 100, py::arg("batch_size") = 256,
       py::arg("repeats") = 1, py::arg("val_fraction") = 0.1,
       py::arg("augmentation") = std::vector<std::string>{}, py::arg("seed") = 0,
       py::arg("selection") = "best_val", py::call_guard<py::gil_scoped_release>(),
       "train a classifier from scratch, returning the selected repeat");
    m.def("train", [](const data::DistilledDataset& d, int width, int depth,
                      const std::string& family, double lr, double momentum, double weight_decay,
                      int epochs, int batch_size, int repeats, double val_fraction,
                      const std::vector<std::string>& augmentation, uint64_t seed,
                      const std::string& selection) {
        const auto cfg = train_config(lr, momentum, weight_decay, epochs, batch_size, repeats,
                                      val_fraction, augmentation, seed, selection);
        const auto arch =
            arch_for(d.class_count, d.channels, d.height, d.width, family, width, depth);
        const auto res = harness::train_repeated(arch, d, cfg);
        return res.models[static_cast<size_t>(res.selected)].model;
    }, py::arg("train"), py::arg("width") = 128, py::arg("depth") = 3,
       py::arg("family") = "convnet", py::arg("lr") = 0.01, py::arg("momentum") = 0.9,
       py::arg("weight_decay") = 5e-4, py::arg("epochs") = 100, py::arg("batch_size") = 256,
       py::arg("repeats") = 1, py::arg("val_fraction") = 0.1,
       py::arg("augmentation") = std::vector<std::string>{}, py::arg("seed") = 0,
       py::arg("selection") = "best_val", py::call_guard<py::gil_scoped_release>());

    m.def("clean_accuracy", [](const models::Classifier& model, const data::LabeledDataset& test,
                               int batch_size) {
        return harness::evaluate_clean(model, test, batch_size);
    }, py::arg("model"), py::arg("test"), py::arg("batch_size") = 256,
       py::call_guard<py::gil_scoped_release>());

    m.def("robust_accuracy", [](const models::Classifier& model, const data::LabeledDataset& test,
                                const std::string& attack, double epsilon, double step_size,
                                int iterations, bool random_start, int square_queries,
                                uint64_t seed, int batch_size) {
        const auto cfg = attack_config(attack, epsilon, step_size, iterations, random_start,
                                       square_queries, seed);
        return harness::evaluate_robust(model, test, cfg, batch_size);
    }, py::arg("model"), py::arg("test"), py::arg("attack") = "pgd",
       py::arg("epsilon") = 8.0 / 255.0, py::arg("step_size") = 0.0, py::arg("iterations") = 10,
       py::arg("random_start") = false, py::arg("square_queries") = 300, py::arg("seed") = 0,
       py::arg("batch_size") = 256, py::call_guard<py::gil_scoped_release>(),
       "accuracy under one of fgsm|pgd|cw|vmifgsm|jitter|autoattack");

    m.def("drop_rate", &harness::drop_rate, py::arg("clean"), py::arg("robust"),
          "(clean - robust) / clean * 100");

    m.def("save_model", &models::save_model, py::arg("model"), py::arg("path"));
    m.def("load_model", &models::load_model, py::arg("path"));

    m.def("run_cli", [](const std::vector<std::string>& args) { return cli::run(args); },
          py::arg("args"), py::call_guard<py::gil_scoped_release>(),
          "invoke the command line surface (distill|train|eval|robust|ablate|report)");
}
