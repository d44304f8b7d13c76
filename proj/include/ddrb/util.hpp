#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddrb {

// Error taxonomy. Callers distinguish "you passed garbage" from "the run broke"
// (the CLI maps these to exit codes 1 and 2).
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Plain dense tensor used at module boundaries. Row-major, shape is free-form
// (batches are {n, c, h, w}, logits {n, k}, flat vectors {n}).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}
    static Tensor zeros(std::vector<int> s);

    int64_t numel() const;
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
};

int64_t numel(const std::vector<int>& shape);

struct NamedTensor {
    std::string name;
    Tensor value;
};

// Deterministic seed derivation (splitmix64 over the running hash). Every
// consumer of randomness derives its own stream from (base, salt...) so that
// adding a consumer never perturbs another's draws.
uint64_t mix_seed(uint64_t base, uint64_t salt);
uint64_t mix_seed(uint64_t base, uint64_t salt1, uint64_t salt2);
uint64_t mix_seed(uint64_t base, const std::string& salt);
uint64_t mix_seed(uint64_t base, const std::string& salt1, uint64_t salt2);

// SHA-256 of a byte string, lowercase hex. Used for experiment cell keys.
std::string sha256_hex(const std::string& bytes);

}  // namespace ddrb
