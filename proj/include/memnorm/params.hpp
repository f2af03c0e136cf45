#pragma once

// Named parameter store with Adam slots and the binary model container.

#include "memnorm/tensor.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>

namespace memnorm {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 10.0;  // global gradient-norm cap, <=0 disables
};

struct ParamSlot {
    Tensor tensor;
    Array m;  // first moment
    Array v;  // second moment
    std::int64_t step = 0;
};

class Parameters {
public:
    // Creates (or returns the existing) parameter at `path`.
    Tensor create(const std::string& path, Shape shape, Array init);
    Tensor zeros(const std::string& path, Shape shape);
    // Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
    Tensor glorot(const std::string& path, Shape shape, std::mt19937_64& rng);

    Tensor get(const std::string& path) const;
    bool contains(const std::string& path) const { return slots_.count(path) != 0; }

    void zero_grads();
    // One Adam update over every parameter; requires every grad populated.
    // Clears grads and advances step counters.
    void adam_step(const AdamConfig& cfg);

    double grad_norm() const;
    size_t count() const { return slots_.size(); }

    const std::map<std::string, ParamSlot>& slots() const { return slots_; }

    // Model container: magic "MNRM", version, then per-parameter records
    // (path length, path, rank, dims, float64 payload), little-endian.
    // Writers emit sorted paths; the reader accepts any order.
    void save(const std::string& file) const;
    void load(const std::string& file);

private:
    std::map<std::string, ParamSlot> slots_;
};

}  // namespace memnorm
