#include "memnorm/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace memnorm {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

constexpr char kMagic[4] = {'M', 'N', 'R', 'M'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

Tensor Parameters::create(const std::string& path, Shape shape, Array init) {
    auto it = slots_.find(path);
    if (it != slots_.end()) return it->second.tensor;
    if (init.size() != shape_size(shape))
        throw std::invalid_argument("parameter " + path + ": init size mismatch");
    ParamSlot slot;
    slot.tensor = make_tensor(std::move(shape), std::move(init), /*requires_grad=*/true);
    slot.m = Array::Zero(slot.tensor->value.size());
    slot.v = Array::Zero(slot.tensor->value.size());
    auto [pos, _] = slots_.emplace(path, std::move(slot));
    return pos->second.tensor;
}

Tensor Parameters::zeros(const std::string& path, Shape shape) {
    Eigen::Index n = shape_size(shape);
    return create(path, std::move(shape), Array::Zero(n));
}

Tensor Parameters::glorot(const std::string& path, Shape shape, std::mt19937_64& rng) {
    if (contains(path)) return get(path);
    Eigen::Index fan_out = shape.size() >= 1 ? shape[0] : 1;
    Eigen::Index fan_in = shape.size() >= 2 ? shape[1] : 1;
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Array init(shape_size(shape));
    for (Eigen::Index i = 0; i < init.size(); ++i) init[i] = dist(rng);
    return create(path, std::move(shape), std::move(init));
}

Tensor Parameters::get(const std::string& path) const {
    auto it = slots_.find(path);
    if (it == slots_.end()) throw std::out_of_range("unknown parameter: " + path);
    return it->second.tensor;
}

void Parameters::zero_grads() {
    for (auto& [_, slot] : slots_) slot.tensor->zero_grad();
}

double Parameters::grad_norm() const {
    double sq = 0.0;
    for (const auto& [_, slot] : slots_)
        if (slot.tensor->grad.size() != 0) sq += slot.tensor->grad.square().sum();
    return std::sqrt(sq);
}

void Parameters::adam_step(const AdamConfig& cfg) {
    for (const auto& [path, slot] : slots_)
        if (slot.tensor->grad.size() == 0)
            throw std::runtime_error("adam_step: parameter " + path + " has no gradient");
    double norm = grad_norm();
    double scale = (cfg.clip_norm > 0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;
    for (auto& [_, slot] : slots_) {
        slot.step += 1;
        Array g = slot.tensor->grad * scale;
        slot.m = cfg.beta1 * slot.m + (1.0 - cfg.beta1) * g;
        slot.v = cfg.beta2 * slot.v + (1.0 - cfg.beta2) * g.square();
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.step));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.step));
        Array mhat = slot.m / bc1;
        Array vhat = slot.v / bc2;
        slot.tensor->value -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        slot.tensor->zero_grad();
    }
}

void Parameters::save(const std::string& file) const {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + file);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    for (const auto& [path, slot] : slots_) {  // std::map iterates in sorted path order
        write_u32(os, static_cast<std::uint32_t>(path.size()));
        os.write(path.data(), static_cast<std::streamsize>(path.size()));
        const Shape& shape = slot.tensor->shape;
        write_u32(os, static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) write_u64(os, static_cast<std::uint64_t>(d));
        for (Eigen::Index i = 0; i < slot.tensor->value.size(); ++i) {
            double x = slot.tensor->value[i];
            std::uint64_t bits;
            std::memcpy(&bits, &x, 8);
            write_u64(os, bits);
        }
    }
    if (!os) throw std::runtime_error("write failed: " + file);
}

void Parameters::load(const std::string& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open model container: " + file);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("bad model container magic in " + file);
    std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("unsupported model container version " + std::to_string(version));
    while (true) {
        std::uint32_t plen = read_u32(is);
        if (is.eof()) break;
        if (!is) throw std::runtime_error("truncated model container: " + file);
        std::string path(plen, '\0');
        is.read(path.data(), plen);
        std::uint32_t rank = read_u32(is);
        Shape shape;
        Eigen::Index n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            auto d = static_cast<Eigen::Index>(read_u64(is));
            shape.push_back(d);
            n *= d;
        }
        Array value(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            std::uint64_t bits = read_u64(is);
            double x;
            std::memcpy(&x, &bits, 8);
            value[i] = x;
        }
        if (!is) throw std::runtime_error("truncated model container: " + file);
        if (contains(path)) {
            Tensor t = get(path);
            if (t->shape != shape)
                throw std::runtime_error("shape mismatch loading " + path);
            t->value = std::move(value);
        } else {
            create(path, std::move(shape), std::move(value));
        }
    }
}

}  // namespace memnorm
