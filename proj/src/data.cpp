#include "ddrb/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "ddrb/serialize.hpp"

namespace ddrb::io {

namespace {
template <typename T>
void write_raw(std::ostream& out, T v) {
    // The build targets little-endian hosts; serialize native bytes.
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("unexpected end of file");
    return v;
}
}  // namespace

void write_u16(std::ostream& out, uint16_t v) { write_raw(out, v); }
void write_u32(std::ostream& out, uint32_t v) { write_raw(out, v); }
void write_f32(std::ostream& out, float v) { write_raw(out, v); }

void write_magic(std::ostream& out, const char magic[5]) { out.write(magic, 4); }

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_f32_array(std::ostream& out, const std::vector<double>& v) {
    for (double x : v) write_f32(out, static_cast<float>(x));
}

void write_f32_array(std::ostream& out, const std::vector<float>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
}

void write_u16_array(std::ostream& out, const std::vector<uint16_t>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 2));
}

void write_named_tensor(std::ostream& out, const NamedTensor& t) {
    write_string(out, t.name);
    write_u32(out, static_cast<uint32_t>(t.value.shape.size()));
    for (int d : t.value.shape) write_u32(out, static_cast<uint32_t>(d));
    write_f32_array(out, t.value.data);
}

uint16_t read_u16(std::istream& in) { return read_raw<uint16_t>(in); }
uint32_t read_u32(std::istream& in) { return read_raw<uint32_t>(in); }
float read_f32(std::istream& in) { return read_raw<float>(in); }

void expect_magic(std::istream& in, const char magic[5], const std::string& where) {
    char buf[4];
    in.read(buf, 4);
    if (!in || std::memcmp(buf, magic, 4) != 0)
        throw FormatError("bad magic in " + where + " (expected " + std::string(magic, 4) + ")");
}

std::string read_string(std::istream& in) {
    uint32_t len = read_u32(in);
    if (len > (1u << 20)) throw FormatError("string length is implausibly large");
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw FormatError("unexpected end of file in string");
    return s;
}

std::vector<float> read_f32_array(std::istream& in, size_t count) {
    std::vector<float> v(count);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * 4));
    if (!in) throw FormatError("unexpected end of file in float payload");
    return v;
}

std::vector<uint16_t> read_u16_array(std::istream& in, size_t count) {
    std::vector<uint16_t> v(count);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * 2));
    if (!in) throw FormatError("unexpected end of file in label payload");
    return v;
}

NamedTensor read_named_tensor(std::istream& in) {
    NamedTensor t;
    t.name = read_string(in);
    uint32_t ndim = read_u32(in);
    if (ndim > 8) throw FormatError("tensor rank is implausibly large");
    t.value.shape.resize(ndim);
    int64_t n = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
        t.value.shape[i] = static_cast<int>(read_u32(in));
        n *= t.value.shape[i];
    }
    auto raw = read_f32_array(in, static_cast<size_t>(n));
    t.value.data.assign(raw.begin(), raw.end());
    return t;
}

}  // namespace ddrb::io

namespace ddrb::data {

void validate(const LabeledDataset& d, const char* what) {
    int64_t expect = static_cast<int64_t>(d.count) * d.channels * d.height * d.width;
    if (static_cast<int64_t>(d.images.size()) != expect)
        throw ArgumentError(std::string(what) + ": image buffer size mismatch");
    if (static_cast<int>(d.labels.size()) != d.count)
        throw ArgumentError(std::string(what) + ": label count mismatch");
    for (uint16_t y : d.labels)
        if (y >= d.class_count) throw ArgumentError(std::string(what) + ": label out of range");
}

namespace {

// Per-class blob pattern: a coarse seeded grid upsampled bilinearly, so the
// patterns are smooth, asymmetric, and distinct. `amplitude` controls
// separation from the 0.5 gray midpoint.
std::vector<float> class_pattern(int channels, int resolution, double amplitude, uint64_t seed,
                                 int klass) {
    std::mt19937_64 rng(mix_seed(seed, "blob-pattern", static_cast<uint64_t>(klass)));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    int coarse = std::max(2, resolution / 4);
    std::vector<double> grid(static_cast<size_t>(channels) * coarse * coarse);
    for (double& g : grid) g = unit(rng);
    std::vector<float> pattern(static_cast<size_t>(channels) * resolution * resolution);
    for (int c = 0; c < channels; ++c) {
        for (int i = 0; i < resolution; ++i) {
            double fy = (i + 0.5) * coarse / resolution - 0.5;
            int y0 = static_cast<int>(std::floor(fy));
            double wy = fy - y0;
            for (int j = 0; j < resolution; ++j) {
                double fx = (j + 0.5) * coarse / resolution - 0.5;
                int x0 = static_cast<int>(std::floor(fx));
                double wx = fx - x0;
                double acc = 0.0;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        int y = std::clamp(y0 + dy, 0, coarse - 1);
                        int x = std::clamp(x0 + dx, 0, coarse - 1);
                        double w = (dy ? wy : 1.0 - wy) * (dx ? wx : 1.0 - wx);
                        acc += w * grid[(static_cast<size_t>(c) * coarse + y) * coarse + x];
                    }
                }
                pattern[(static_cast<size_t>(c) * resolution + i) * resolution + j] =
                    static_cast<float>(0.5 + amplitude * acc);
            }
        }
    }
    return pattern;
}

LabeledDataset blob_split(int class_count, int per_class, int channels, int resolution, double sigma,
                          double amplitude, uint64_t seed, const char* split) {
    LabeledDataset d;
    d.name = "blobs";
    d.count = class_count * per_class;
    d.channels = channels;
    d.height = resolution;
    d.width = resolution;
    d.class_count = class_count;
    d.images.resize(static_cast<size_t>(d.count) * channels * resolution * resolution);
    d.labels.resize(static_cast<size_t>(d.count));
    size_t image_px = static_cast<size_t>(channels) * resolution * resolution;
    for (int klass = 0; klass < class_count; ++klass) {
        auto pattern = class_pattern(channels, resolution, amplitude, seed, klass);
        // Test-split noise comes from a distinct stream on the same patterns,
        // so the splits never share a sample.
        std::mt19937_64 rng(mix_seed(mix_seed(seed, split), "blob-noise", static_cast<uint64_t>(klass)));
        std::normal_distribution<double> noise(0.0, sigma);
        for (int s = 0; s < per_class; ++s) {
            int idx = klass * per_class + s;
            d.labels[static_cast<size_t>(idx)] = static_cast<uint16_t>(klass);
            float* dst = d.images.data() + static_cast<size_t>(idx) * image_px;
            for (size_t p = 0; p < image_px; ++p) {
                double v = pattern[p] + (sigma > 0.0 ? noise(rng) : 0.0);
                dst[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return d;
}

}  // namespace

DatasetSplit make_blob_dataset(const BlobConfig& cfg) {
    if (cfg.class_count < 2) throw ArgumentError("blobs: class_count must be >= 2");
    if (cfg.per_class < 1) throw ArgumentError("blobs: per_class must be >= 1");
    if (cfg.resolution < 4) throw ArgumentError("blobs: resolution must be >= 4");
    if (cfg.channels < 1) throw ArgumentError("blobs: channels must be >= 1");
    if (cfg.sigma < 0.0) throw ArgumentError("blobs: sigma must be non-negative");
    DatasetSplit split;
    split.train = blob_split(cfg.class_count, cfg.per_class, cfg.channels, cfg.resolution, cfg.sigma,
                             cfg.amplitude, cfg.seed, "train");
    split.test = blob_split(cfg.class_count, cfg.test_per_class > 0 ? cfg.test_per_class : cfg.per_class,
                            cfg.channels, cfg.resolution, cfg.sigma, cfg.amplitude, cfg.seed, "test");
    return split;
}

DatasetSplit make_blob_dataset(int class_count, int per_class, int resolution, double sigma,
                               uint64_t seed) {
    BlobConfig cfg;
    cfg.class_count = class_count;
    cfg.per_class = per_class;
    cfg.resolution = resolution;
    cfg.sigma = sigma;
    cfg.seed = seed;
    return make_blob_dataset(cfg);
}

namespace {

// CIFAR-10 binary batches: 10000 records of [label u8][3072 bytes RGB planes].
LabeledDataset read_cifar10_files(const std::vector<std::filesystem::path>& files, const char* name) {
    LabeledDataset d;
    d.name = name;
    d.channels = 3;
    d.height = 32;
    d.width = 32;
    d.class_count = 10;
    for (const auto& file : files) {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw IoError("cifar10: cannot open " + file.string());
        const size_t rec = 3073;
        std::vector<unsigned char> buf(rec);
        while (in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(rec))) {
            if (buf[0] > 9) throw FormatError("cifar10: label out of range in " + file.string());
            d.labels.push_back(buf[0]);
            for (size_t p = 1; p < rec; ++p) d.images.push_back(static_cast<float>(buf[p]) / 255.0f);
        }
        if (in.gcount() != 0) throw FormatError("cifar10: trailing partial record in " + file.string());
    }
    d.count = static_cast<int>(d.labels.size());
    if (d.count == 0) throw FormatError("cifar10: no records found");
    return d;
}

DatasetSplit load_cifar10(const std::filesystem::path& root) {
    auto dir = root / "cifar-10-batches-bin";
    if (!std::filesystem::exists(dir)) dir = root;
    std::vector<std::filesystem::path> train_files;
    for (int i = 1; i <= 5; ++i) {
        auto f = dir / ("data_batch_" + std::to_string(i) + ".bin");
        if (!std::filesystem::exists(f))
            throw IoError("cifar10: missing " + f.string() +
                          " (expected the standard binary batch layout)");
        train_files.push_back(f);
    }
    auto test_file = dir / "test_batch.bin";
    if (!std::filesystem::exists(test_file)) throw IoError("cifar10: missing " + test_file.string());
    DatasetSplit split;
    split.train = read_cifar10_files(train_files, "cifar10");
    split.test = read_cifar10_files({test_file}, "cifar10");
    return split;
}

}  // namespace

std::vector<std::string> registered_loaders() { return {"blobs", "cifar10"}; }

DatasetSplit load_builtin(const std::string& name, const LoadOptions& opt) {
    if (name == "blobs") {
        BlobConfig cfg = opt.blobs;
        cfg.seed = opt.seed;
        return make_blob_dataset(cfg);
    }
    if (name == "cifar10") return load_cifar10(opt.data_root);
    std::string known;
    for (const auto& n : registered_loaders()) known += (known.empty() ? "" : ", ") + n;
    throw ArgumentError("unknown dataset '" + name + "' (registered: " + known + ")");
}

void write_distilled(const DistilledDataset& d, const std::filesystem::path& path) {
    int64_t expect = static_cast<int64_t>(d.count) * d.channels * d.height * d.width;
    if (static_cast<int64_t>(d.images.size()) != expect)
        throw ArgumentError("write_distilled: image buffer size mismatch");
    if (static_cast<int>(d.labels.size()) != d.count)
        throw ArgumentError("write_distilled: label count mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    io::write_magic(out, "DDRB");
    io::write_u32(out, 1);
    io::write_string(out, d.name);
    io::write_string(out, d.method);
    io::write_u32(out, static_cast<uint32_t>(d.channels));
    io::write_u32(out, static_cast<uint32_t>(d.height));
    io::write_u32(out, static_cast<uint32_t>(d.width));
    io::write_u32(out, static_cast<uint32_t>(d.class_count));
    io::write_u32(out, static_cast<uint32_t>(d.ipc));
    io::write_u32(out, static_cast<uint32_t>(d.factor));
    io::write_u32(out, static_cast<uint32_t>(d.seed));
    io::write_f32_array(out, d.images);
    io::write_u16_array(out, d.labels);
    if (!out) throw IoError("write failed: " + path.string());
}

DistilledDataset read_distilled(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    io::expect_magic(in, "DDRB", path.string());
    uint32_t version = io::read_u32(in);
    if (version != 1) throw FormatError("unsupported DDRB version in " + path.string());
    DistilledDataset d;
    d.name = io::read_string(in);
    d.method = io::read_string(in);
    d.channels = static_cast<int>(io::read_u32(in));
    d.height = static_cast<int>(io::read_u32(in));
    d.width = static_cast<int>(io::read_u32(in));
    d.class_count = static_cast<int>(io::read_u32(in));
    d.ipc = static_cast<int>(io::read_u32(in));
    d.factor = static_cast<int>(io::read_u32(in));
    d.seed = static_cast<int>(io::read_u32(in));
    if (d.channels < 1 || d.height < 1 || d.width < 1 || d.class_count < 1 || d.ipc < 1 || d.factor < 1)
        throw FormatError("DDRB header fields out of range in " + path.string());
    d.count = d.class_count * d.ipc;
    d.images = io::read_f32_array(
        in, static_cast<size_t>(d.count) * d.channels * d.height * d.width);
    d.labels = io::read_u16_array(in, static_cast<size_t>(d.count));
    for (uint16_t y : d.labels)
        if (y >= d.class_count) throw FormatError("DDRB label out of range in " + path.string());
    // Must now be exactly at end of file.
    char extra;
    if (in.read(&extra, 1)) throw FormatError("trailing bytes after DDRB payload in " + path.string());
    return d;
}

LabeledDataset to_labeled(const DistilledDataset& d) {
    LabeledDataset out;
    out.name = d.name + "/" + d.method;
    out.count = d.count;
    out.channels = d.channels;
    out.height = d.height;
    out.width = d.width;
    out.class_count = d.class_count;
    out.images = d.images;
    out.labels = d.labels;
    return out;
}

Tensor batch_tensor(const LabeledDataset& d, const std::vector<int>& indices) {
    size_t px = static_cast<size_t>(d.channels) * d.height * d.width;
    Tensor t;
    t.shape = {static_cast<int>(indices.size()), d.channels, d.height, d.width};
    t.data.resize(indices.size() * px);
    for (size_t i = 0; i < indices.size(); ++i) {
        int idx = indices[i];
        if (idx < 0 || idx >= d.count) throw ArgumentError("batch_tensor: index out of range");
        const float* src = d.images.data() + static_cast<size_t>(idx) * px;
        double* dst = t.data.data() + i * px;
        for (size_t p = 0; p < px; ++p) dst[p] = static_cast<double>(src[p]);
    }
    return t;
}

std::vector<uint16_t> batch_labels(const LabeledDataset& d, const std::vector<int>& indices) {
    std::vector<uint16_t> out(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) out[i] = d.labels[static_cast<size_t>(indices[i])];
    return out;
}

std::vector<std::vector<int>> indices_by_class(const LabeledDataset& d) {
    std::vector<std::vector<int>> by_class(static_cast<size_t>(d.class_count));
    for (int i = 0; i < d.count; ++i) by_class[d.labels[static_cast<size_t>(i)]].push_back(i);
    return by_class;
}

}  // namespace ddrb::data
