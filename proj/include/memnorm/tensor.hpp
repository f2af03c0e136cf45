#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
// Values are flat row-major Eigen arrays; the graph is built eagerly by
// the free functions below and walked backwards by backward().

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace memnorm {

using Shape = std::vector<Eigen::Index>;

using Array = Eigen::ArrayXd;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

Eigen::Index shape_size(const Shape& s);
std::string shape_str(const Shape& s);

class Node;
using Tensor = std::shared_ptr<Node>;

class Node {
public:
    Shape shape;
    Array value;          // flat, row-major
    Array grad;           // empty until backward touches this node
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(Node&)> backward_fn;  // pulls node.grad into parents
    std::string op = "leaf";

    Eigen::Index size() const { return value.size(); }
    Eigen::Index rows() const { return shape.size() == 2 ? shape[0] : 1; }
    Eigen::Index cols() const { return shape.empty() ? 1 : shape.back(); }

    // Grad accumulation: allocate lazily, always add.
    void accumulate(const Array& g);
    void zero_grad() { grad.resize(0); }

    ConstMatMap mat() const;
    MatMap grad_mat();
};

// ---- construction -------------------------------------------------------

Tensor make_tensor(Shape shape, Array value, bool requires_grad = false);
Tensor constant(Shape shape, double fill = 0.0);
Tensor scalar(double v);
Tensor from_vector(const std::vector<double>& v, bool requires_grad = false);

// ---- primitives ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);        // same shape, or b broadcast over leading axes
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise, same broadcast rule as add
Tensor scale(const Tensor& a, double k);
Tensor add_const(const Tensor& a, double k);
Tensor neg(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor oneplus(const Tensor& a);                     // 1 + log(1 + e^x)
Tensor softmax(const Tensor& a);                     // along last axis
Tensor cosine_rows(const Tensor& m, const Tensor& k);  // rows of m vs vector k, eps-stabilized
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, Eigen::Index start, Eigen::Index len);
Tensor sum_axis(const Tensor& a, int axis);
Tensor mean_axis(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor outer(const Tensor& a, const Tensor& b);      // column a times row b
Tensor cross_entropy_with_softmax(const Tensor& logits, const std::vector<int>& targets);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

// Write-allocation weighting over a usage vector: least-used slots first,
// ties broken by ascending index. Gradients flow through the usage factors
// with the sort order held fixed.
Tensor allocation_weighting(const Tensor& usage);

// ---- backward -----------------------------------------------------------

// Reverse topological traversal from a scalar loss. Grads accumulate
// additively, including across repeated backward() calls; callers clear
// them via Parameters::zero_grads or adam_step.
void backward(const Tensor& loss);

}  // namespace memnorm
