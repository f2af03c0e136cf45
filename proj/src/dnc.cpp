#include "memnorm/dnc.hpp"

#include <stdexcept>

namespace memnorm {

namespace {

// Row r of a [R, k] tensor as a flat [k] vector.
Tensor row_of(const Tensor& t, Eigen::Index r) {
    return reshape(slice(t, 0, r, 1), {t->shape[1]});
}

Tensor scalar_at(const Tensor& t, Eigen::Index i) { return slice(t, 0, i, 1); }

}  // namespace

void DncConfig::validate() const {
    if (memory_locations < 1 || word_size < 1 || read_heads < 1 || hidden < 1 ||
        input_size < 1 || output_size < 1)
        throw std::invalid_argument("DncConfig: all sizes must be >= 1");
}

DncState dnc_zero_state(const DncConfig& cfg) {
    const auto n = cfg.memory_locations, w = cfg.word_size, r = cfg.read_heads, h = cfg.hidden;
    DncState s;
    s.memory = constant({n, w});
    s.usage = constant({n});
    s.precedence = constant({n});
    s.link = constant({n, n});
    s.write_weighting = constant({n});
    s.read_weightings = constant({r, n});
    s.read_vectors = constant({r, w});
    s.hidden = constant({h});
    s.cell = constant({h});
    return s;
}

InterfaceVector parse_interface(const Tensor& raw, const DncConfig& cfg) {
    const auto w = cfg.word_size, r = cfg.read_heads;
    const Eigen::Index expected = cfg.interface_size();
    if (raw->shape.size() != 1 || raw->shape[0] != expected)
        throw std::invalid_argument("parse_interface: expected length " +
                                    std::to_string(expected) + ", got " + shape_str(raw->shape));
    InterfaceVector iv;
    Eigen::Index at = 0;
    auto take = [&](Eigen::Index len) {
        Tensor s = slice(raw, 0, at, len);
        at += len;
        iv.raw_slices.push_back(s);
        return s;
    };
    iv.read_keys = reshape(take(r * w), {r, w});
    iv.read_strengths = oneplus(take(r));
    iv.write_key = take(w);
    iv.write_strength = oneplus(take(1));
    iv.erase = sigmoid(take(w));
    iv.write_vector = take(w);
    iv.free_gates = sigmoid(take(r));
    iv.allocation_gate = sigmoid(take(1));
    iv.write_gate = sigmoid(take(1));
    iv.read_modes = softmax(reshape(take(r * 3), {r, 3}));
    return iv;
}

Tensor content_weighting(const Tensor& memory, const Tensor& key, const Tensor& strength) {
    return softmax(mul(cosine_rows(memory, key), strength));
}

std::pair<Tensor, Tensor> update_temporal_links(const Tensor& link, const Tensor& precedence,
                                                const Tensor& write_weighting) {
    const Eigen::Index n = link->shape[0];
    Tensor ones_vec = constant({n}, 1.0);
    Tensor w_rows = outer(write_weighting, ones_vec);  // w_i at [i, j]
    Tensor w_cols = outer(ones_vec, write_weighting);  // w_j at [i, j]
    Tensor keep = sub(sub(constant({n, n}, 1.0), w_rows), w_cols);
    Tensor updated = add(mul(keep, link), outer(write_weighting, precedence));
    // Constant off-diagonal mask zeroes the diagonal.
    Array mask_v = Array::Constant(n * n, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) mask_v[i * n + i] = 0.0;
    Tensor link_next = mul(updated, make_tensor({n, n}, std::move(mask_v)));

    Tensor retain = add_const(neg(sum_all(write_weighting)), 1.0);
    Tensor precedence_next = add(mul(precedence, retain), write_weighting);
    return {link_next, precedence_next};
}

Tensor write_memory(const Tensor& memory, const Tensor& write_weighting, const Tensor& erase,
                    const Tensor& write_vector) {
    const Eigen::Index n = memory->shape[0], w = memory->shape[1];
    Tensor keep = sub(constant({n, w}, 1.0), outer(write_weighting, erase));
    return add(mul(memory, keep), outer(write_weighting, write_vector));
}

Tensor read_memory(const Tensor& memory, const Tensor& read_weightings) {
    return matmul(read_weightings, memory);
}

void dnc_init_params(Parameters& params, const DncConfig& cfg, std::mt19937_64& rng,
                     const std::string& prefix) {
    cfg.validate();
    const auto h = cfg.hidden, y = cfg.output_size, iface = cfg.interface_size();
    const Eigen::Index chi = cfg.input_size + cfg.read_heads * cfg.word_size;
    params.glorot(prefix + "lstm/w_x", {4 * h, chi}, rng);
    params.glorot(prefix + "lstm/w_h", {4 * h, h}, rng);
    if (!params.contains(prefix + "lstm/b")) {
        Array b = Array::Zero(4 * h);
        b.segment(h, h) = 1.0;  // forget-gate bias
        params.create(prefix + "lstm/b", {4 * h}, std::move(b));
    }
    params.glorot(prefix + "out/w_v", {y, h}, rng);
    params.zeros(prefix + "out/b_v", {y});
    params.glorot(prefix + "out/w_e", {iface, h}, rng);
    params.zeros(prefix + "out/b_e", {iface});
    params.glorot(prefix + "readout/w_r", {y, cfg.read_heads * cfg.word_size}, rng);
}

DncStepResult dnc_step(const DncState& state, const Tensor& input, Parameters& params,
                       const DncConfig& cfg, const DncStepOptions& opts,
                       const std::string& prefix) {
    const auto n = cfg.memory_locations, w = cfg.word_size, r = cfg.read_heads, h = cfg.hidden;
    if (input->shape.size() != 1 || input->shape[0] != cfg.input_size)
        throw std::invalid_argument("dnc_step: input shape " + shape_str(input->shape) +
                                    " vs configured X=" + std::to_string(cfg.input_size));

    // Controller input: [x_t ; r_{t-1}^1 ... r_{t-1}^R]
    Tensor read_flat = opts.zero_read_inputs ? constant({r * w})
                                             : reshape(state.read_vectors, {r * w});
    Tensor chi = concat({input, read_flat}, 0);

    // Single-layer LSTM.
    Tensor gates = add(add(matmul(params.get(prefix + "lstm/w_x"), chi),
                           matmul(params.get(prefix + "lstm/w_h"), state.hidden)),
                       params.get(prefix + "lstm/b"));
    Tensor gi = sigmoid(slice(gates, 0, 0, h));
    Tensor gf = sigmoid(slice(gates, 0, h, h));
    Tensor gg = tanh_t(slice(gates, 0, 2 * h, h));
    Tensor go = sigmoid(slice(gates, 0, 3 * h, h));
    Tensor cell = add(mul(gf, state.cell), mul(gi, gg));
    Tensor hidden = mul(go, tanh_t(cell));

    // Separate linear heads for the output vector and the interface vector.
    Tensor v = add(matmul(params.get(prefix + "out/w_v"), hidden), params.get(prefix + "out/b_v"));
    Tensor raw_iface =
        add(matmul(params.get(prefix + "out/w_e"), hidden), params.get(prefix + "out/b_e"));
    InterfaceVector iv = parse_interface(raw_iface, cfg);

    // Usage: retention from free gates over last step's reads, then the
    // previous write commits its locations.
    Tensor psi = constant({n}, 1.0);
    for (Eigen::Index i = 0; i < r; ++i) {
        Tensor fw = mul(row_of(state.read_weightings, i), scalar_at(iv.free_gates, i));
        psi = mul(psi, sub(constant({n}, 1.0), fw));
    }
    Tensor usage = mul(sub(add(state.usage, state.write_weighting),
                           mul(state.usage, state.write_weighting)),
                       psi);

    DncState next;
    next.usage = usage;
    next.hidden = hidden;
    next.cell = cell;

    if (opts.force_write_gate_zero) {
        next.memory = state.memory;
        next.link = state.link;
        next.precedence = state.precedence;
        next.write_weighting = constant({n});
    } else {
        Tensor alloc = allocation_weighting(usage);
        Tensor write_content = content_weighting(state.memory, iv.write_key, iv.write_strength);
        Tensor mix = add(mul(alloc, iv.allocation_gate),
                         mul(write_content, add_const(neg(iv.allocation_gate), 1.0)));
        Tensor ww = mul(mix, iv.write_gate);
        next.write_weighting = ww;
        next.memory = write_memory(state.memory, ww, iv.erase, iv.write_vector);
        auto [link, precedence] = update_temporal_links(state.link, state.precedence, ww);
        next.link = link;
        next.precedence = precedence;
    }

    // Read weightings: per head, a read-mode mix of backward link, content,
    // and forward link addressing.
    std::vector<Tensor> head_rows;
    head_rows.reserve(static_cast<size_t>(r));
    for (Eigen::Index i = 0; i < r; ++i) {
        Tensor wr_prev = row_of(state.read_weightings, i);
        Tensor bwd = reshape(matmul(reshape(wr_prev, {1, n}), next.link), {n});
        Tensor fwd = matmul(next.link, wr_prev);
        Tensor content =
            content_weighting(next.memory, row_of(iv.read_keys, i), scalar_at(iv.read_strengths, i));
        Tensor modes = row_of(iv.read_modes, i);
        Tensor mixed = add(add(mul(bwd, scalar_at(modes, 0)), mul(content, scalar_at(modes, 1))),
                           mul(fwd, scalar_at(modes, 2)));
        head_rows.push_back(reshape(mixed, {1, n}));
    }
    next.read_weightings = concat(head_rows, 0);
    next.read_vectors = read_memory(next.memory, next.read_weightings);

    // y_t = v_t + W_r [r_t^1; ...; r_t^R]
    Tensor output = add(v, matmul(params.get(prefix + "readout/w_r"),
                                  reshape(next.read_vectors, {r * w})));
    return {output, next};
}

}  // namespace memnorm
