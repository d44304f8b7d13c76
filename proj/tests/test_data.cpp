#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "ddrb/data.hpp"

using namespace ddrb;
using namespace ddrb::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
    auto dir = fs::temp_directory_path() / "ddrb-data-test";
    fs::create_directories(dir);
    return dir;
}

DistilledDataset random_distilled(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> small(1, 4);
    DistilledDataset d;
    d.name = "blobs";
    d.method = (rng() & 1) ? "dc" : "mtt";
    d.class_count = small(rng) + 1;
    d.ipc = small(rng);
    d.channels = (rng() & 1) ? 3 : 1;
    d.height = 8;
    d.width = 8;
    d.factor = small(rng) > 3 ? 2 : 1;
    d.seed = static_cast<int>(rng() % 1000);
    d.count = d.class_count * d.ipc;
    std::uniform_real_distribution<float> pix(0.f, 1.f);
    d.images.resize(static_cast<size_t>(d.count) * d.channels * d.height * d.width);
    for (float& v : d.images) v = pix(rng);
    d.labels.resize(d.count);
    for (int i = 0; i < d.count; ++i) d.labels[i] = static_cast<uint16_t>(i % d.class_count);
    return d;
}

// First train image of each class under zero noise is the pure class pattern.
std::vector<std::vector<float>> class_patterns(const BlobConfig& cfg) {
    BlobConfig quiet = cfg;
    quiet.sigma = 0.0;
    quiet.per_class = 1;
    quiet.test_per_class = 1;
    DatasetSplit clean = make_blob_dataset(quiet);
    size_t stride = static_cast<size_t>(cfg.channels) * cfg.resolution * cfg.resolution;
    std::vector<std::vector<float>> out(cfg.class_count);
    for (int i = 0; i < clean.train.count; ++i) {
        int y = clean.train.labels[static_cast<size_t>(i)];
        if (out[y].empty())
            out[y].assign(clean.train.images.begin() + i * stride,
                          clean.train.images.begin() + (i + 1) * stride);
    }
    return out;
}

}  // namespace

TEST_CASE("blob generation is deterministic in the seed") {
    BlobConfig cfg;
    cfg.per_class = 4;
    cfg.seed = 123;
    DatasetSplit a = make_blob_dataset(cfg);
    DatasetSplit b = make_blob_dataset(cfg);
    CHECK(a.train.images == b.train.images);
    CHECK(a.test.images == b.test.images);
    CHECK(a.train.labels == b.train.labels);

    cfg.seed = 124;
    DatasetSplit c = make_blob_dataset(cfg);
    CHECK(a.train.images != c.train.images);

    // train and test noise streams differ
    CHECK(a.train.images != a.test.images);
}

TEST_CASE("blob pixels stay in [0,1] and shapes line up") {
    BlobConfig cfg;
    cfg.class_count = 6;
    cfg.per_class = 5;
    cfg.test_per_class = 3;
    cfg.sigma = 0.8;  // heavy noise exercises the clip
    cfg.seed = 7;
    DatasetSplit s = make_blob_dataset(cfg);
    CHECK(s.train.count == 30);
    CHECK(s.test.count == 18);
    CHECK(s.train.channels == 3);
    CHECK(s.train.height == 16);
    for (float v : s.train.images) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
    validate(s.train, "train");
    validate(s.test, "test");
}

TEST_CASE("zero sigma reproduces the pure class patterns") {
    BlobConfig cfg;
    cfg.class_count = 4;
    cfg.per_class = 3;
    cfg.sigma = 0.0;
    cfg.seed = 99;
    DatasetSplit s = make_blob_dataset(cfg);
    size_t stride = static_cast<size_t>(cfg.channels) * cfg.resolution * cfg.resolution;
    // every image of a class is identical to the first one of that class
    std::vector<int> first(cfg.class_count, -1);
    for (int i = 0; i < s.train.count; ++i) {
        int y = s.train.labels[static_cast<size_t>(i)];
        if (first[y] < 0) {
            first[y] = i;
            continue;
        }
        for (size_t k = 0; k < stride; ++k)
            CHECK(s.train.images[i * stride + k] == s.train.images[first[y] * stride + k]);
    }
}

TEST_CASE("nearest-pattern oracle classifies low-noise blobs almost perfectly") {
    BlobConfig cfg;
    cfg.class_count = 10;
    cfg.per_class = 20;
    cfg.test_per_class = 20;
    cfg.sigma = 0.05;
    cfg.seed = 2024;
    DatasetSplit s = make_blob_dataset(cfg);
    auto patterns = class_patterns(cfg);
    size_t stride = static_cast<size_t>(cfg.channels) * cfg.resolution * cfg.resolution;

    int hits = 0;
    for (int i = 0; i < s.test.count; ++i) {
        int best = -1;
        double best_d = 1e300;
        for (int c = 0; c < cfg.class_count; ++c) {
            double d = 0;
            for (size_t k = 0; k < stride; ++k) {
                double diff = s.test.images[i * stride + k] - patterns[c][k];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        if (best == s.test.labels[static_cast<size_t>(i)]) ++hits;
    }
    CHECK(static_cast<double>(hits) / s.test.count >= 0.99);
}

TEST_CASE("distilled container round trips bit-exactly") {
    std::mt19937_64 rng(555);
    auto dir = scratch();
    for (int trial = 0; trial < 100; ++trial) {
        DistilledDataset d = random_distilled(rng);
        auto path = dir / ("rt" + std::to_string(trial) + ".ddrb");
        write_distilled(d, path);
        DistilledDataset r = read_distilled(path);
        CHECK(r.name == d.name);
        CHECK(r.method == d.method);
        CHECK(r.count == d.count);
        CHECK(r.channels == d.channels);
        CHECK(r.height == d.height);
        CHECK(r.width == d.width);
        CHECK(r.class_count == d.class_count);
        CHECK(r.ipc == d.ipc);
        CHECK(r.factor == d.factor);
        CHECK(r.seed == d.seed);
        CHECK(r.images == d.images);
        CHECK(r.labels == d.labels);
    }
}

TEST_CASE("distilled file size is exactly header plus payload") {
    std::mt19937_64 rng(556);
    DistilledDataset d = random_distilled(rng);
    auto path = scratch() / "size.ddrb";
    write_distilled(d, path);
    size_t header = 4 + 4 + (4 + d.name.size()) + (4 + d.method.size()) + 7 * 4;
    size_t payload = d.images.size() * 4 + d.labels.size() * 2;
    CHECK(fs::file_size(path) == header + payload);
}

TEST_CASE("distilled reader rejects malformed files") {
    auto dir = scratch();
    std::mt19937_64 rng(557);
    DistilledDataset d = random_distilled(rng);
    auto good = dir / "good.ddrb";
    write_distilled(d, good);

    SUBCASE("bad magic") {
        auto p = dir / "magic.ddrb";
        std::ofstream out(p, std::ios::binary);
        out.write("DDRX\x01\x00\x00\x00", 8);
        out.close();
        CHECK_THROWS_AS(read_distilled(p), FormatError);
    }
    SUBCASE("truncation") {
        std::ifstream in(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        auto p = dir / "trunc.ddrb";
        std::ofstream out(p, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
        out.close();
        CHECK_THROWS_AS(read_distilled(p), FormatError);
    }
    SUBCASE("trailing bytes") {
        std::ifstream in(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        auto p = dir / "trail.ddrb";
        std::ofstream out(p, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.write("xx", 2);
        out.close();
        CHECK_THROWS_AS(read_distilled(p), FormatError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(read_distilled(dir / "nope.ddrb"), IoError); }
}

TEST_CASE("loader registry") {
    auto names = registered_loaders();
    CHECK(std::find(names.begin(), names.end(), "blobs") != names.end());
    CHECK(std::find(names.begin(), names.end(), "cifar10") != names.end());
    CHECK_THROWS_AS(load_builtin("imagenet", {}), ArgumentError);

    LoadOptions opt;
    opt.blobs.per_class = 2;
    opt.blobs.test_per_class = 2;
    DatasetSplit s = load_builtin("blobs", opt);
    CHECK(s.train.count == 20);
    CHECK(s.train.name == "blobs");
}

TEST_CASE("cifar10 binary batches parse") {
    auto root = scratch() / "cifar-root";
    auto dir = root / "cifar-10-batches-bin";
    fs::create_directories(dir);
    // two train batches of 3 records, one test batch of 2
    auto write_batch = [&](const fs::path& p, int n, uint8_t base) {
        std::ofstream out(p, std::ios::binary);
        for (int i = 0; i < n; ++i) {
            uint8_t label = static_cast<uint8_t>((base + i) % 10);
            out.put(static_cast<char>(label));
            for (int k = 0; k < 3072; ++k)
                out.put(static_cast<char>((base + i + k) % 256));
        }
    };
    write_batch(dir / "data_batch_1.bin", 3, 0);
    write_batch(dir / "data_batch_2.bin", 3, 5);
    write_batch(dir / "data_batch_3.bin", 3, 1);
    write_batch(dir / "data_batch_4.bin", 3, 2);
    write_batch(dir / "data_batch_5.bin", 3, 3);
    write_batch(dir / "test_batch.bin", 2, 7);

    LoadOptions opt;
    opt.data_root = root;
    DatasetSplit s = load_builtin("cifar10", opt);
    CHECK(s.train.count == 15);
    CHECK(s.test.count == 2);
    CHECK(s.train.channels == 3);
    CHECK(s.train.height == 32);
    CHECK(s.train.class_count == 10);
    CHECK(s.train.labels[0] == 0);
    CHECK(s.test.labels[0] == 7);
    // pixel 0 of record 0 is byte value 0 -> 0.0; record 1 starts at value 1
    CHECK(s.train.images[0] == 0.f);
    CHECK(s.train.images[3072] == doctest::Approx(1.f / 255.f));
    for (float v : s.train.images) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }

    SUBCASE("missing files raise io errors") {
        LoadOptions bad;
        bad.data_root = scratch() / "empty-root";
        CHECK_THROWS_AS(load_builtin("cifar10", bad), IoError);
    }
}

TEST_CASE("batch gathering utilities") {
    BlobConfig cfg;
    cfg.class_count = 3;
    cfg.per_class = 4;
    cfg.seed = 5;
    DatasetSplit s = make_blob_dataset(cfg);

    auto by_class = indices_by_class(s.train);
    REQUIRE(by_class.size() == 3);
    for (int c = 0; c < 3; ++c) {
        CHECK(static_cast<int>(by_class[c].size()) == 4);
        for (int i : by_class[c]) CHECK(s.train.labels[static_cast<size_t>(i)] == c);
    }

    std::vector<int> pick{1, 7, 3};
    Tensor b = batch_tensor(s.train, pick);
    CHECK(b.shape == std::vector<int>{3, 3, 16, 16});
    size_t stride = 3 * 16 * 16;
    for (size_t k = 0; k < stride; ++k)
        CHECK(b.data[k] == static_cast<double>(s.train.images[stride + k]));
    auto labels = batch_labels(s.train, pick);
    CHECK(labels.size() == 3);
    CHECK(labels[1] == s.train.labels[7]);

    CHECK_THROWS_AS(batch_tensor(s.train, std::vector<int>{99}), ArgumentError);
}

TEST_CASE("distilled to labeled view") {
    std::mt19937_64 rng(558);
    DistilledDataset d = random_distilled(rng);
    LabeledDataset l = to_labeled(d);
    CHECK(l.count == d.count);
    CHECK(l.images == d.images);
    CHECK(l.labels == d.labels);
    CHECK(l.class_count == d.class_count);
}
