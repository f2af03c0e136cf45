#pragma once

// Differentiable Neural Computer cell: LSTM controller plus an external
// N x W memory with content, allocation, and temporal-link addressing.
// One dnc_step builds the full differentiable graph for a single time step.

#include "memnorm/params.hpp"
#include "memnorm/tensor.hpp"

#include <string>
#include <vector>

namespace memnorm {

struct DncConfig {
    Eigen::Index memory_locations = 32;  // N
    Eigen::Index word_size = 16;         // W
    Eigen::Index read_heads = 2;         // R
    Eigen::Index hidden = 128;           // LSTM units
    Eigen::Index input_size = 16;        // X
    Eigen::Index output_size = 16;       // Y

    Eigen::Index interface_size() const {
        return word_size * read_heads + 3 * word_size + 5 * read_heads + 3;
    }
    void validate() const;
};

struct DncState {
    Tensor memory;          // [N, W]
    Tensor usage;           // [N]
    Tensor precedence;      // [N]
    Tensor link;            // [N, N], zero diagonal
    Tensor write_weighting; // [N]
    Tensor read_weightings; // [R, N]
    Tensor read_vectors;    // [R, W]
    Tensor hidden;          // [H]
    Tensor cell;            // [H]
};

struct InterfaceVector {
    Tensor read_keys;       // [R, W]
    Tensor read_strengths;  // [R], >= 1
    Tensor write_key;       // [W]
    Tensor write_strength;  // [1], >= 1
    Tensor erase;           // [W], in [0,1]
    Tensor write_vector;    // [W]
    Tensor free_gates;      // [R], in [0,1]
    Tensor allocation_gate; // [1], in [0,1]
    Tensor write_gate;      // [1], in [0,1]
    Tensor read_modes;      // [R, 3], rows sum to 1
    // Pre-activation slices in interface order, for boundary round-trips.
    std::vector<Tensor> raw_slices;
};

struct DncStepOptions {
    bool zero_read_inputs = false;      // ablation: zero r_{t-1} in the controller input
    bool force_write_gate_zero = false; // test hook: bypass the write entirely
};

DncState dnc_zero_state(const DncConfig& cfg);

// Slices the raw interface emission into its fields, in the fixed order:
// read keys, read strengths, write key, write strength, erase vector,
// write vector, free gates, allocation gate, write gate, read modes.
InterfaceVector parse_interface(const Tensor& raw, const DncConfig& cfg);

// C(M, k, beta) = softmax_i(beta * cosine(M[i,.], k))
Tensor content_weighting(const Tensor& memory, const Tensor& key, const Tensor& strength);

// L' = ((1 - w_i - w_j) L_ij + w_i p_j) with zero diagonal; p' = (1 - sum w) p + w.
std::pair<Tensor, Tensor> update_temporal_links(const Tensor& link, const Tensor& precedence,
                                                const Tensor& write_weighting);

// M' = M o (E - w e^T) + w v^T
Tensor write_memory(const Tensor& memory, const Tensor& write_weighting, const Tensor& erase,
                    const Tensor& write_vector);

// r = M^T w  (per head when w is [R, N])
Tensor read_memory(const Tensor& memory, const Tensor& read_weightings);

// Parameter paths are prefixed "dnc/". Creates them on first use.
void dnc_init_params(Parameters& params, const DncConfig& cfg, std::mt19937_64& rng,
                     const std::string& prefix = "dnc/");

struct DncStepResult {
    Tensor output;  // [Y]
    DncState state;
};

DncStepResult dnc_step(const DncState& state, const Tensor& input, Parameters& params,
                       const DncConfig& cfg, const DncStepOptions& opts = {},
                       const std::string& prefix = "dnc/");

}  // namespace memnorm
