#include "memnorm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace memnorm {

namespace {

constexpr double kCosineEps = 1e-8;

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
    throw std::invalid_argument("shape error in " + op + ": " + detail);
}

Tensor make_op(Shape shape, Array value, std::vector<Tensor> parents,
               std::string op, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->op = std::move(op);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_fn = std::move(fn);
    return n;
}

double softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Resolves the broadcast layout for add/mul: b's shape must equal a's shape
// or be a suffix of it. Returns the number of leading repeats.
Eigen::Index broadcast_outer(const std::string& op, const Node& a, const Node& b) {
    if (shape_size(b.shape) == 1) return a.value.size();  // scalar broadcast
    if (b.shape.size() > a.shape.size())
        shape_error(op, shape_str(b.shape) + " does not broadcast into " + shape_str(a.shape));
    size_t off = a.shape.size() - b.shape.size();
    for (size_t i = 0; i < b.shape.size(); ++i)
        if (a.shape[off + i] != b.shape[i])
            shape_error(op, shape_str(b.shape) + " does not broadcast into " + shape_str(a.shape));
    return b.value.size() == 0 ? 1 : a.value.size() / b.value.size();
}

// (outer, axis_dim, inner) decomposition around one axis.
struct AxisSplit {
    Eigen::Index outer, n, inner;
};

AxisSplit split_axis(const std::string& op, const Shape& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        shape_error(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    AxisSplit s{1, shape[axis], 1};
    for (int i = 0; i < axis; ++i) s.outer *= shape[i];
    for (size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

Eigen::Index shape_size(const Shape& s) {
    Eigen::Index n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

void Node::accumulate(const Array& g) {
    if (grad.size() == 0) grad = Array::Zero(value.size());
    grad += g;
}

ConstMatMap Node::mat() const { return ConstMatMap(value.data(), rows(), cols()); }
MatMap Node::grad_mat() { return MatMap(grad.data(), rows(), cols()); }

Tensor make_tensor(Shape shape, Array value, bool requires_grad) {
    if (value.size() != shape_size(shape))
        shape_error("make_tensor", "value size " + std::to_string(value.size()) +
                                       " vs shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

Tensor constant(Shape shape, double fill) {
    return make_tensor(std::move(shape), Array::Constant(shape_size(shape), fill));
}

Tensor scalar(double v) { return make_tensor({1}, Array::Constant(1, v)); }

Tensor from_vector(const std::vector<double>& v, bool requires_grad) {
    Array a(static_cast<Eigen::Index>(v.size()));
    for (size_t i = 0; i < v.size(); ++i) a[static_cast<Eigen::Index>(i)] = v[i];
    return make_tensor({static_cast<Eigen::Index>(v.size())}, std::move(a), requires_grad);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a->shape.empty() || b->shape.empty() || a->shape.size() > 2 || b->shape.size() > 2)
        shape_error("matmul", shape_str(a->shape) + " x " + shape_str(b->shape));
    Eigen::Index m = a->shape.size() == 2 ? a->shape[0] : 1;
    Eigen::Index k = a->shape.back();
    Eigen::Index k2 = b->shape.size() == 2 ? b->shape[0] : b->shape[0];
    Eigen::Index n = b->shape.size() == 2 ? b->shape[1] : 1;
    if (b->shape.size() == 1) k2 = b->shape[0];
    if (k != k2)
        shape_error("matmul", shape_str(a->shape) + " x " + shape_str(b->shape));
    ConstMatMap am(a->value.data(), m, k);
    ConstMatMap bm(b->value.data(), k, n);
    Array out(m * n);
    MatMap(out.data(), m, n) = am * bm;

    Shape oshape;
    if (a->shape.size() == 2 && b->shape.size() == 2) oshape = {m, n};
    else if (a->shape.size() == 1 && b->shape.size() == 1) oshape = {1};
    else if (a->shape.size() == 1) oshape = {n};
    else oshape = {m};

    return make_op(std::move(oshape), std::move(out), {a, b}, "matmul",
                   [a, b, m, k, n](Node& self) {
                       ConstMatMap g(self.grad.data(), m, n);
                       ConstMatMap am2(a->value.data(), m, k);
                       ConstMatMap bm2(b->value.data(), k, n);
                       if (a->requires_grad) {
                           Array ga(m * k);
                           MatMap(ga.data(), m, k) = g * bm2.transpose();
                           a->accumulate(ga);
                       }
                       if (b->requires_grad) {
                           Array gb(k * n);
                           MatMap(gb.data(), k, n) = am2.transpose() * g;
                           b->accumulate(gb);
                       }
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
    Eigen::Index rep = broadcast_outer("add", *a, *b);
    Eigen::Index bs = b->value.size();
    Array out = a->value;
    for (Eigen::Index r = 0; r < rep; ++r) out.segment(r * bs, bs) += b->value;
    return make_op(a->shape, std::move(out), {a, b}, "add", [a, b, rep, bs](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad);
        if (b->requires_grad) {
            Array gb = Array::Zero(bs);
            for (Eigen::Index r = 0; r < rep; ++r) gb += self.grad.segment(r * bs, bs);
            b->accumulate(gb);
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    Eigen::Index rep = broadcast_outer("mul", *a, *b);
    Eigen::Index bs = b->value.size();
    Array out = a->value;
    for (Eigen::Index r = 0; r < rep; ++r) out.segment(r * bs, bs) *= b->value;
    return make_op(a->shape, std::move(out), {a, b}, "mul", [a, b, rep, bs](Node& self) {
        if (a->requires_grad) {
            Array ga = self.grad;
            for (Eigen::Index r = 0; r < rep; ++r) ga.segment(r * bs, bs) *= b->value;
            a->accumulate(ga);
        }
        if (b->requires_grad) {
            Array gb = Array::Zero(bs);
            for (Eigen::Index r = 0; r < rep; ++r)
                gb += self.grad.segment(r * bs, bs) * a->value.segment(r * bs, bs);
            b->accumulate(gb);
        }
    });
}

Tensor scale(const Tensor& a, double k) {
    return make_op(a->shape, a->value * k, {a}, "scale", [a, k](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad * k);
    });
}

Tensor add_const(const Tensor& a, double k) {
    return make_op(a->shape, a->value + k, {a}, "add_const", [a](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad);
    });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor sigmoid(const Tensor& a) {
    Array v = a->value.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    Tensor out = make_op(a->shape, std::move(v), {a}, "sigmoid", nullptr);
    if (out->requires_grad)
        out->backward_fn = [a, val = out->value](Node& self) {
            a->accumulate(self.grad * val * (1.0 - val));
        };
    return out;
}

Tensor tanh_t(const Tensor& a) {
    Array v = a->value.tanh();
    Tensor out = make_op(a->shape, std::move(v), {a}, "tanh", nullptr);
    if (out->requires_grad)
        out->backward_fn = [a, val = out->value](Node& self) {
            a->accumulate(self.grad * (1.0 - val.square()));
        };
    return out;
}

Tensor relu(const Tensor& a) {
    return make_op(a->shape, a->value.max(0.0), {a}, "relu", [a](Node& self) {
        if (a->requires_grad)
            a->accumulate(self.grad * (a->value > 0.0).cast<double>());
    });
}

Tensor oneplus(const Tensor& a) {
    Array v = a->value.unaryExpr([](double x) { return 1.0 + softplus(x); });
    return make_op(a->shape, std::move(v), {a}, "oneplus", [a](Node& self) {
        if (a->requires_grad)
            a->accumulate(self.grad *
                          a->value.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); }));
    });
}

Tensor softmax(const Tensor& a) {
    Eigen::Index k = a->shape.back();
    Eigen::Index rows = a->value.size() / k;
    Array v(a->value.size());
    for (Eigen::Index r = 0; r < rows; ++r) {
        auto seg = a->value.segment(r * k, k);
        Array e = (seg - seg.maxCoeff()).exp();
        v.segment(r * k, k) = e / e.sum();
    }
    Tensor out = make_op(a->shape, std::move(v), {a}, "softmax", nullptr);
    if (out->requires_grad)
        out->backward_fn = [a, k, rows, val = out->value](Node& self) {
            Array ga(val.size());
            for (Eigen::Index r = 0; r < rows; ++r) {
                auto p = val.segment(r * k, k);
                auto g = self.grad.segment(r * k, k);
                double dot = (p * g).sum();
                ga.segment(r * k, k) = p * (g - dot);
            }
            a->accumulate(ga);
        };
    return out;
}

Tensor cosine_rows(const Tensor& m, const Tensor& k) {
    if (m->shape.size() != 2 || k->shape.size() != 1 || m->shape[1] != k->shape[0])
        shape_error("cosine_rows", shape_str(m->shape) + " vs " + shape_str(k->shape));
    Eigen::Index n = m->shape[0], w = m->shape[1];
    double q = std::sqrt(k->value.square().sum());
    Array dots(n), norms(n), out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        auto row = m->value.segment(i * w, w);
        dots[i] = (row * k->value).sum();
        norms[i] = std::sqrt(row.square().sum());
        out[i] = dots[i] / (norms[i] * q + kCosineEps);
    }
    return make_op({n}, std::move(out), {m, k}, "cosine_rows",
                   [m, k, n, w, q, dots, norms](Node& self) {
                       constexpr double tiny = 1e-300;
                       Array gk = Array::Zero(w);
                       Array gm(n * w);
                       for (Eigen::Index i = 0; i < n; ++i) {
                           auto row = m->value.segment(i * w, w);
                           double denom = norms[i] * q + kCosineEps;
                           double g = self.grad[i];
                           gm.segment(i * w, w) =
                               g * (k->value / denom -
                                    dots[i] * q / (norms[i] + tiny) / (denom * denom) * row);
                           gk += g * (row / denom -
                                      dots[i] * norms[i] / (q + tiny) / (denom * denom) * k->value);
                       }
                       if (m->requires_grad) m->accumulate(gm);
                       if (k->requires_grad) k->accumulate(gk);
                   });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) shape_error("concat", "no inputs");
    const Shape& base = parts[0]->shape;
    AxisSplit s0 = split_axis("concat", base, axis);
    Eigen::Index total_axis = 0;
    for (const auto& p : parts) {
        if (p->shape.size() != base.size())
            shape_error("concat", "rank mismatch " + shape_str(p->shape) + " vs " + shape_str(base));
        for (size_t i = 0; i < base.size(); ++i)
            if (static_cast<int>(i) != axis && p->shape[i] != base[i])
                shape_error("concat", shape_str(p->shape) + " vs " + shape_str(base));
        total_axis += p->shape[axis];
    }
    Shape oshape = base;
    oshape[axis] = total_axis;
    Array out(s0.outer * total_axis * s0.inner);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        Eigen::Index block = p->shape[axis] * s0.inner;
        for (Eigen::Index o = 0; o < s0.outer; ++o)
            out.segment(o * total_axis * s0.inner + at, block) = p->value.segment(o * block, block);
        at += block;
    }
    return make_op(std::move(oshape), std::move(out), parts, "concat",
                   [parts, s0, total_axis](Node& self) {
                       Eigen::Index at = 0;
                       for (const auto& p : parts) {
                           Eigen::Index block = p->value.size() / s0.outer;
                           if (p->requires_grad) {
                               Array gp(p->value.size());
                               for (Eigen::Index o = 0; o < s0.outer; ++o)
                                   gp.segment(o * block, block) =
                                       self.grad.segment(o * total_axis * s0.inner + at, block);
                               p->accumulate(gp);
                           }
                           at += block;
                       }
                   });
}

Tensor slice(const Tensor& a, int axis, Eigen::Index start, Eigen::Index len) {
    AxisSplit s = split_axis("slice", a->shape, axis);
    if (start < 0 || len < 0 || start + len > s.n)
        shape_error("slice", "range [" + std::to_string(start) + "," +
                                 std::to_string(start + len) + ") out of axis size " +
                                 std::to_string(s.n));
    Shape oshape = a->shape;
    oshape[axis] = len;
    Array out(s.outer * len * s.inner);
    for (Eigen::Index o = 0; o < s.outer; ++o)
        out.segment(o * len * s.inner, len * s.inner) =
            a->value.segment(o * s.n * s.inner + start * s.inner, len * s.inner);
    return make_op(std::move(oshape), std::move(out), {a}, "slice",
                   [a, s, start, len](Node& self) {
                       if (!a->requires_grad) return;
                       Array ga = Array::Zero(a->value.size());
                       for (Eigen::Index o = 0; o < s.outer; ++o)
                           ga.segment(o * s.n * s.inner + start * s.inner, len * s.inner) =
                               self.grad.segment(o * len * s.inner, len * s.inner);
                       a->accumulate(ga);
                   });
}

Tensor sum_axis(const Tensor& a, int axis) {
    AxisSplit s = split_axis("sum_axis", a->shape, axis);
    Shape oshape;
    for (size_t i = 0; i < a->shape.size(); ++i)
        if (static_cast<int>(i) != axis) oshape.push_back(a->shape[i]);
    if (oshape.empty()) oshape = {1};
    Array out = Array::Zero(s.outer * s.inner);
    for (Eigen::Index o = 0; o < s.outer; ++o)
        for (Eigen::Index j = 0; j < s.n; ++j)
            out.segment(o * s.inner, s.inner) +=
                a->value.segment((o * s.n + j) * s.inner, s.inner);
    return make_op(std::move(oshape), std::move(out), {a}, "sum_axis", [a, s](Node& self) {
        if (!a->requires_grad) return;
        Array ga(a->value.size());
        for (Eigen::Index o = 0; o < s.outer; ++o)
            for (Eigen::Index j = 0; j < s.n; ++j)
                ga.segment((o * s.n + j) * s.inner, s.inner) = self.grad.segment(o * s.inner, s.inner);
        a->accumulate(ga);
    });
}

Tensor mean_axis(const Tensor& a, int axis) {
    AxisSplit s = split_axis("mean_axis", a->shape, axis);
    return scale(sum_axis(a, axis), 1.0 / static_cast<double>(s.n));
}

Tensor sum_all(const Tensor& a) {
    Array out = Array::Constant(1, a->value.sum());
    return make_op({1}, std::move(out), {a}, "sum_all", [a](Node& self) {
        if (a->requires_grad)
            a->accumulate(Array::Constant(a->value.size(), self.grad[0]));
    });
}

Tensor mean_all(const Tensor& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a->value.size()));
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a->value.size())
        shape_error("reshape", shape_str(a->shape) + " -> " + shape_str(shape));
    return make_op(std::move(shape), a->value, {a}, "reshape", [a](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad);
    });
}

Tensor outer(const Tensor& a, const Tensor& b) {
    if (a->shape.size() != 1 || b->shape.size() != 1)
        shape_error("outer", shape_str(a->shape) + " x " + shape_str(b->shape));
    Eigen::Index n = a->shape[0], w = b->shape[0];
    Array out(n * w);
    for (Eigen::Index i = 0; i < n; ++i) out.segment(i * w, w) = a->value[i] * b->value;
    return make_op({n, w}, std::move(out), {a, b}, "outer", [a, b, n, w](Node& self) {
        if (a->requires_grad) {
            Array ga(n);
            for (Eigen::Index i = 0; i < n; ++i)
                ga[i] = (self.grad.segment(i * w, w) * b->value).sum();
            a->accumulate(ga);
        }
        if (b->requires_grad) {
            Array gb = Array::Zero(w);
            for (Eigen::Index i = 0; i < n; ++i) gb += a->value[i] * self.grad.segment(i * w, w);
            b->accumulate(gb);
        }
    });
}

Tensor cross_entropy_with_softmax(const Tensor& logits, const std::vector<int>& targets) {
    Eigen::Index k = logits->shape.back();
    Eigen::Index t = logits->value.size() / k;
    if (static_cast<Eigen::Index>(targets.size()) != t)
        shape_error("cross_entropy_with_softmax",
                    "targets " + std::to_string(targets.size()) + " vs rows " + std::to_string(t));
    Array probs(logits->value.size());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < t; ++r) {
        int y = targets[static_cast<size_t>(r)];
        if (y < 0 || y >= k)
            shape_error("cross_entropy_with_softmax", "target id " + std::to_string(y) +
                                                          " out of range " + std::to_string(k));
        auto seg = logits->value.segment(r * k, k);
        double mx = seg.maxCoeff();
        Array e = (seg - mx).exp();
        double z = e.sum();
        probs.segment(r * k, k) = e / z;
        loss -= (seg[y] - mx) - std::log(z);
    }
    loss /= static_cast<double>(t);
    return make_op({1}, Array::Constant(1, loss), {logits}, "cross_entropy_with_softmax",
                   [logits, targets, probs, k, t](Node& self) {
                       if (!logits->requires_grad) return;
                       Array g = probs;
                       for (Eigen::Index r = 0; r < t; ++r)
                           g[r * k + targets[static_cast<size_t>(r)]] -= 1.0;
                       logits->accumulate(g * (self.grad[0] / static_cast<double>(t)));
                   });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table->shape.size() != 2) shape_error("embedding_lookup", shape_str(table->shape));
    Eigen::Index v = table->shape[0], e = table->shape[1];
    Eigen::Index t = static_cast<Eigen::Index>(ids.size());
    Array out(t * e);
    for (Eigen::Index i = 0; i < t; ++i) {
        int id = ids[static_cast<size_t>(i)];
        if (id < 0 || id >= v)
            shape_error("embedding_lookup",
                        "id " + std::to_string(id) + " out of vocabulary " + std::to_string(v));
        out.segment(i * e, e) = table->value.segment(id * e, e);
    }
    return make_op({t, e}, std::move(out), {table}, "embedding_lookup",
                   [table, ids, e](Node& self) {
                       if (!table->requires_grad) return;
                       Array g = Array::Zero(table->value.size());
                       for (size_t i = 0; i < ids.size(); ++i)
                           g.segment(ids[i] * e, e) +=
                               self.grad.segment(static_cast<Eigen::Index>(i) * e, e);
                       table->accumulate(g);
                   });
}

Tensor allocation_weighting(const Tensor& usage) {
    if (usage->shape.size() != 1) shape_error("allocation_weighting", shape_str(usage->shape));
    Eigen::Index n = usage->shape[0];
    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return usage->value[a] < usage->value[b];
    });
    Array out(n);
    double prod = 1.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        double u = usage->value[order[static_cast<size_t>(j)]];
        out[order[static_cast<size_t>(j)]] = (1.0 - u) * prod;
        prod *= u;
    }
    return make_op({n}, std::move(out), {usage}, "allocation_weighting",
                   [usage, order, n](Node& self) {
                       if (!usage->requires_grad) return;
                       // Work in sorted coordinates; the permutation is constant.
                       Array v(n), go(n), prefix(n);
                       for (Eigen::Index j = 0; j < n; ++j) {
                           v[j] = usage->value[order[static_cast<size_t>(j)]];
                           go[j] = self.grad[order[static_cast<size_t>(j)]];
                       }
                       double prod = 1.0;
                       for (Eigen::Index j = 0; j < n; ++j) {
                           prefix[j] = prod;
                           prod *= v[j];
                       }
                       Array gv(n);
                       for (Eigen::Index m = 0; m < n; ++m) {
                           double g = -go[m] * prefix[m];
                           double q = prefix[m];  // product of i<j, i != m, built incrementally
                           for (Eigen::Index j = m + 1; j < n; ++j) {
                               g += go[j] * (1.0 - v[j]) * q;
                               q *= v[j];
                           }
                           gv[m] = g;
                       }
                       Array gu = Array::Zero(n);
                       for (Eigen::Index j = 0; j < n; ++j)
                           gu[order[static_cast<size_t>(j)]] = gv[j];
                       usage->accumulate(gu);
                   });
}

void backward(const Tensor& loss) {
    if (loss->value.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(loss->shape));
    // Iterative post-order DFS for a reverse-topological node order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->accumulate(Array::Constant(1, 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
    }
}

}  // namespace memnorm
