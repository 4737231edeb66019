#pragma once
//
// Dense row-major tensors of doubles with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Operations create new
// nodes that remember their parents and a closure propagating the output
// gradient back to them; backward() walks the graph in reverse topological
// order. Leaves created with requires_grad accumulate gradients across calls
// until zero_grad() is invoked.
//

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace invjoint {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty when no gradient has been populated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // null for leaves
    const char* op = "leaf";
};
}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                         bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    // Direct write access; only for parameters and initialisation, never for
    // values already consumed by a recorded graph.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t i) const;
    double at(std::size_t i, std::size_t j) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Same values, cut from the graph.
    Tensor detach() const;
    Tensor clone() const;

    const char* op_name() const;
    const void* id() const { return node_.get(); }

    // Internal: used by the op implementations.
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

// Strict numerics: when on (the default), every op checks its output for
// non-finite values and log/exp domain violations, throwing NumericError.
void set_strict_numerics(bool on);
bool strict_numerics();

class StrictNumericsGuard {
public:
    explicit StrictNumericsGuard(bool on) : prev_(strict_numerics()) { set_strict_numerics(on); }
    ~StrictNumericsGuard() { set_strict_numerics(prev_); }
    StrictNumericsGuard(const StrictNumericsGuard&) = delete;
    StrictNumericsGuard& operator=(const StrictNumericsGuard&) = delete;

private:
    bool prev_;
};

// Populates grad of every requires_grad leaf reachable from `loss`.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops accept equal shapes, a right operand
// whose shape equals the left shape minus its leading axis (broadcast over
// the batch), or a single-element operand on either side.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor square(const Tensor& a);
Tensor softplus(const Tensor& a);

// [n,k] x [k,m] -> [n,m]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Element of maximal value (first on ties); subgradient routes to it.
Tensor max(const Tensor& a);
// Reductions over the last axis: [.., d] -> [..]
Tensor sum_last(const Tensor& a);
Tensor mean_last(const Tensor& a);
Tensor logsumexp_last(const Tensor& a);
Tensor softmax(const Tensor& a);      // over last axis
Tensor log_softmax(const Tensor& a);  // over last axis
Tensor l2_norm(const Tensor& a);      // over last axis
Tensor normalize(const Tensor& a);    // rows scaled to unit L2 norm

// Row-wise cosine similarity of equal-shape [n,d] (or [d]) inputs -> [n] (or scalar)
Tensor cosine_similarity(const Tensor& a, const Tensor& b);
// Pairwise cosine similarities [n,d] x [m,d] -> [n,m]
Tensor cosine_matrix(const Tensor& a, const Tensor& b);

// Concatenate along `axis` (0 or last).
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Elements at flat row-major positions -> 1-D tensor.
Tensor take(const Tensor& a, std::span<const std::size_t> flat_indices);
// Rows of a rank-2 tensor (or elements of a rank-1 tensor).
Tensor rows(const Tensor& a, std::span<const std::size_t> indices);
// a[i, labels[i]] for rank-2 a -> [n]
Tensor pick(const Tensor& a, std::span<const std::size_t> labels);
// Scales row i of [n,d] by s[i].
Tensor scale_rows(const Tensor& a, const Tensor& s);
// Column j of [n,d] -> [n]
Tensor column(const Tensor& a, std::size_t j);
// Mean of equally-shaped tensors.
Tensor mean_of(const std::vector<Tensor>& parts);

}  // namespace invjoint
