#include "invjoint/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "invjoint/errors.hpp"

namespace invjoint {

namespace {

thread_local bool g_strict = true;

using NodePtr = std::shared_ptr<detail::Node>;

void ensure_grad(detail::Node& n) {
    if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
}

void check_finite(const std::vector<double>& values, const char* op) {
    if (!g_strict) return;
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + op);
        }
    }
}

// Builds a result node; the graph edge is kept only when some input needs a
// gradient.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                   std::function<void(detail::Node&)> bw, const char* op) {
    check_finite(data, op);
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
    if (any) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(bw);
    }
    return Tensor(std::move(node));
}

const detail::Node& N(const Tensor& t) {
    if (!t.defined()) throw ContractError("operation on undefined tensor");
    return *t.node();
}

// Binary broadcast: the smaller operand is indexed modulo its size. Valid for
// equal shapes, single-element operands, and trailing-shape (batch) broadcast.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return a;
    const std::size_t na = shape_numel(a), nb = shape_numel(b);
    if (nb == 1) return a;
    if (na == 1) return b;
    if (a.size() == b.size() + 1 && std::equal(b.begin(), b.end(), a.begin() + 1)) return a;
    if (b.size() == a.size() + 1 && std::equal(a.begin(), a.end(), b.begin() + 1)) return b;
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                         shape_str(b));
}

template <class F, class DA, class DB>
Tensor binary(const Tensor& ta, const Tensor& tb, const char* op, F f, DA da, DB db) {
    const auto& a = N(ta);
    const auto& b = N(tb);
    Shape out_shape = broadcast_shape(a.shape, b.shape, op);
    const std::size_t n = shape_numel(out_shape);
    const std::size_t na = a.data.size(), nb = b.data.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(a.data[i % na], b.data[i % nb]);
    return make_result(
        std::move(out_shape), std::move(out), {ta.node(), tb.node()},
        [da, db](detail::Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const std::size_t n = self.data.size();
            const std::size_t na = pa.data.size(), nb = pb.data.size();
            if (pa.requires_grad) {
                ensure_grad(pa);
                for (std::size_t i = 0; i < n; ++i)
                    pa.grad[i % na] += self.grad[i] * da(pa.data[i % na], pb.data[i % nb]);
            }
            if (pb.requires_grad) {
                ensure_grad(pb);
                for (std::size_t i = 0; i < n; ++i)
                    pb.grad[i % nb] += self.grad[i] * db(pa.data[i % na], pb.data[i % nb]);
            }
        },
        op);
}

// Elementwise unary op whose derivative is expressed through input x and output y.
template <class F, class D>
Tensor unary(const Tensor& ta, const char* op, F f, D d) {
    const auto& a = N(ta);
    std::vector<double> out(a.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.data[i]);
    return make_result(
        a.shape, std::move(out), {ta.node()},
        [d](detail::Node& self) {
            auto& p = *self.parents[0];
            ensure_grad(p);
            for (std::size_t i = 0; i < self.data.size(); ++i)
                p.grad[i] += self.grad[i] * d(p.data[i], self.data[i]);
        },
        op);
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

Shape drop_last(const Shape& s) {
    if (s.empty()) return {};
    return Shape(s.begin(), s.end() - 1);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

void set_strict_numerics(bool on) { g_strict = on; }
bool strict_numerics() { return g_strict; }

// ---------------------------------------------------------------------------
// Tensor handle
// ---------------------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    for (auto d : shape)
        if (d == 0) throw DimensionError("tensor shape must be positive: " + shape_str(shape));
    if (shape_numel(shape) != data.size())
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const auto n = values.size();
    return from({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                      bool requires_grad) {
    return from({rows, cols}, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const { return N(*this).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw DimensionError("axis out of range for shape " + shape_str(s));
    return s[axis];
}

std::size_t Tensor::numel() const { return N(*this).data.size(); }

std::span<const double> Tensor::data() const { return N(*this).data; }

std::span<double> Tensor::mutable_data() {
    N(*this);
    return node_->data;
}

double Tensor::item() const {
    const auto& n = N(*this);
    if (n.data.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(n.shape));
    return n.data[0];
}

double Tensor::at(std::size_t i) const {
    const auto& n = N(*this);
    if (i >= n.data.size()) throw DimensionError("index out of range");
    return n.data[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    const auto& n = N(*this);
    if (n.shape.size() != 2 || i >= n.shape[0] || j >= n.shape[1])
        throw DimensionError("index out of range for shape " + shape_str(n.shape));
    return n.data[i * n.shape[1] + j];
}

bool Tensor::requires_grad() const { return N(*this).requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (!is_leaf()) throw ContractError("requires_grad can only be set on leaves");
    node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return !N(*this).backward; }

bool Tensor::has_grad() const { return !N(*this).grad.empty(); }

std::span<const double> Tensor::grad() const {
    const auto& n = N(*this);
    if (n.grad.empty()) throw ContractError("tensor has no gradient");
    return n.grad;
}

std::span<double> Tensor::mutable_grad() {
    N(*this);
    ensure_grad(*node_);
    return node_->grad;
}

void Tensor::zero_grad() {
    N(*this);
    node_->grad.clear();
}

Tensor Tensor::detach() const {
    const auto& n = N(*this);
    return from(n.shape, n.data, false);
}

Tensor Tensor::clone() const {
    const auto& n = N(*this);
    return from(n.shape, n.data, n.requires_grad);
}

const char* Tensor::op_name() const { return N(*this).op; }

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    const auto& root = N(loss);
    if (root.data.size() != 1)
        throw ContractError("backward requires a scalar loss, got shape " + shape_str(root.shape));
    if (!root.requires_grad) throw ContractError("backward on a tensor outside any recorded graph");

    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (auto* n : order) {
        if (n->backward) n->grad.assign(n->data.size(), 0.0);
        else ensure_grad(*n);
    }
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        a, "scale", [factor](double x) { return x * factor; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(
        a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
    return unary(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    if (g_strict) {
        for (double v : a.data())
            if (!(v > 0.0)) throw NumericError("log of non-positive value");
    }
    return unary(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a, "sigmoid",
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary(
        a, "relu", [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
    return unary(
        a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor square(const Tensor& a) {
    return unary(
        a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor softplus(const Tensor& a) {
    return unary(
        a, "softplus",
        [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
        [](double x, double) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        });
}

// ---------------------------------------------------------------------------
// Linear algebra and shape
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& ta, const Tensor& tb) {
    const auto& a = N(ta);
    const auto& b = N(tb);
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                             shape_str(b.shape));
    const std::size_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
    std::vector<double> out(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.data[i * k + p];
            for (std::size_t j = 0; j < m; ++j) out[i * m + j] += av * b.data[p * m + j];
        }
    return make_result(
        {n, m}, std::move(out), {ta.node(), tb.node()},
        [n, k, m](detail::Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const auto& g = self.grad;
            if (pa.requires_grad) {
                ensure_grad(pa);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * pb.data[p * m + j];
                        pa.grad[i * k + p] += s;
                    }
            }
            if (pb.requires_grad) {
                ensure_grad(pb);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = pa.data[i * k + p];
                        for (std::size_t j = 0; j < m; ++j) pb.grad[p * m + j] += av * g[i * m + j];
                    }
            }
        },
        "matmul");
}

Tensor transpose(const Tensor& ta) {
    const auto& a = N(ta);
    if (a.shape.size() != 2) throw DimensionError("transpose expects rank 2, got " + shape_str(a.shape));
    const std::size_t r = a.shape[0], c = a.shape[1];
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data[i * c + j];
    return make_result(
        {c, r}, std::move(out), {ta.node()},
        [r, c](detail::Node& self) {
            auto& p = *self.parents[0];
            ensure_grad(p);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j * r + i];
        },
        "transpose");
}

Tensor reshape(const Tensor& ta, Shape shape) {
    const auto& a = N(ta);
    if (shape_numel(shape) != a.data.size())
        throw DimensionError("reshape " + shape_str(a.shape) + " -> " + shape_str(shape));
    return make_result(
        std::move(shape), a.data, {ta.node()},
        [](detail::Node& self) {
            auto& p = *self.parents[0];
            ensure_grad(p);
            for (std::size_t i = 0; i < self.data.size(); ++i) p.grad[i] += self.grad[i];
        },
        "reshape");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& ta) {
    const auto& a = N(ta);
    const double s = std::accumulate(a.data.begin(), a.data.end(), 0.0);
    return make_result(
        {}, {s}, {ta.node()},
        [](detail::Node& self) {
            auto& p = *self.parents[0];
            ensure_grad(p);
            for (auto& g : p.grad) g += self.grad[0];
        },
        "sum");
}

Tensor mean(const Tensor& ta) { return scale(sum(ta), 1.0 / static_cast<double>(ta.numel())); }

Tensor max(const Tensor& ta) {
    const auto& a = N(ta);
    const auto it = std::max_element(a.data.begin(), a.data.end());
    const auto idx = static_cast<std::size_t>(it - a.data.begin());
    return make_result(
        {}, {*it}, {ta.node()},
        [idx](detail::Node& self) {
            auto& p = *self.parents[0];
            ensure_grad(p);
            p.grad[idx] += self.grad[0];
        },
        "max");
}

Tensor sum_last(const Tensor& ta) {
    const auto& a = N(ta);
    const std::size_t d = last_dim(a.shape), rows = a.data.size() / d;
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r] += a.data[r * d + j];
    return make_result(
        drop_last(a.shape), std::move(out), {ta.node()},
        [d, rows](detail::Node& self) {
            auto& p = *self.parents[0];
            ensure_grad(p);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) p.grad[r * d + j] += self.grad[r];
        },
        "sum_last");
}

Tensor mean_last(const Tensor& ta) {
    return scale(sum_last(ta), 1.0 / static_cast<double>(last_dim(ta.shape())));
}

Tensor logsumexp_last(const Tensor& ta) {
    const auto& a = N(ta);
    const std::size_t d = last_dim(a.shape), rows = a.data.size() / d;
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = &a.data[r * d];
        const double m = *std::max_element(x, x + d);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += std::exp(x[j] - m);
        out[r] = m + std::log(s);
    }
    return make_result(
        drop_last(a.shape), std::move(out), {ta.node()},
        [d, rows](detail::Node& self) {
            auto& p = *self.parents[0];
            ensure_grad(p);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j)
                    p.grad[r * d + j] += self.grad[r] * std::exp(p.data[r * d + j] - self.data[r]);
        },
        "logsumexp");
}

Tensor softmax(const Tensor& ta) {
    const auto& a = N(ta);
    const std::size_t d = last_dim(a.shape), rows = a.data.size() / d;
    std::vector<double> out(a.data.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = &a.data[r * d];
        const double m = *std::max_element(x, x + d);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (out[r * d + j] = std::exp(x[j] - m));
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= s;
    }
    return make_result(
        a.shape, std::move(out), {ta.node()},
        [d, rows](detail::Node& self) {
            auto& p = *self.parents[0];
            ensure_grad(p);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = &self.data[r * d];
                const double* g = &self.grad[r * d];
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < d; ++j) p.grad[r * d + j] += y[j] * (g[j] - dot);
            }
        },
        "softmax");
}

Tensor log_softmax(const Tensor& ta) {
    const auto& a = N(ta);
    const std::size_t d = last_dim(a.shape), rows = a.data.size() / d;
    std::vector<double> out(a.data.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = &a.data[r * d];
        const double m = *std::max_element(x, x + d);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += std::exp(x[j] - m);
        const double lse = m + std::log(s);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[j] - lse;
    }
    return make_result(
        a.shape, std::move(out), {ta.node()},
        [d, rows](detail::Node& self) {
            auto& p = *self.parents[0];
            ensure_grad(p);
            for (std::size_t r = 0; r < rows; ++r) {
                double gs = 0.0;
                for (std::size_t j = 0; j < d; ++j) gs += self.grad[r * d + j];
                for (std::size_t j = 0; j < d; ++j)
                    p.grad[r * d + j] += self.grad[r * d + j] - std::exp(self.data[r * d + j]) * gs;
            }
        },
        "log_softmax");
}

Tensor l2_norm(const Tensor& ta) {
    const auto& a = N(ta);
    const std::size_t d = last_dim(a.shape), rows = a.data.size() / d;
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += a.data[r * d + j] * a.data[r * d + j];
        out[r] = std::sqrt(s);
    }
    return make_result(
        drop_last(a.shape), std::move(out), {ta.node()},
        [d, rows](detail::Node& self) {
            auto& p = *self.parents[0];
            ensure_grad(p);
            for (std::size_t r = 0; r < rows; ++r) {
                if (self.data[r] == 0.0) {
                    if (self.grad[r] != 0.0) throw NumericError("gradient of L2 norm at zero vector");
                    continue;
                }
                for (std::size_t j = 0; j < d; ++j)
                    p.grad[r * d + j] += self.grad[r] * p.data[r * d + j] / self.data[r];
            }
        },
        "l2_norm");
}

Tensor normalize(const Tensor& ta) {
    const auto& a = N(ta);
    const std::size_t d = last_dim(a.shape), rows = a.data.size() / d;
    std::vector<double> norms(rows), out(a.data.size());
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += a.data[r * d + j] * a.data[r * d + j];
        norms[r] = std::sqrt(s);
        if (norms[r] == 0.0) throw NumericError("cannot normalize a zero-norm vector");
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = a.data[r * d + j] / norms[r];
    }
    return make_result(
        a.shape, std::move(out), {ta.node()},
        [d, rows, norms = std::move(norms)](detail::Node& self) {
            auto& p = *self.parents[0];
            ensure_grad(p);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = &self.data[r * d];
                const double* g = &self.grad[r * d];
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
                for (std::size_t j = 0; j < d; ++j) p.grad[r * d + j] += (g[j] - y[j] * dot) / norms[r];
            }
        },
        "normalize");
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("cosine_similarity: shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    return sum_last(mul(normalize(a), normalize(b)));
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw DimensionError("cosine_matrix: shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    return matmul(normalize(a), transpose(normalize(b)));
}

// ---------------------------------------------------------------------------
// Gather / concat
// ---------------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const Shape& s0 = N(parts[0]).shape;
    const std::size_t rank = s0.size();
    if (rank == 0) {
        // Scalars stack into a vector.
        std::vector<double> out;
        std::vector<NodePtr> nodes;
        for (const auto& p : parts) {
            if (p.numel() != 1 || p.rank() != 0) throw DimensionError("concat: mixed scalar/tensor parts");
            out.push_back(p.item());
            nodes.push_back(p.node());
        }
        const std::size_t n = out.size();
        return make_result(
            {n}, std::move(out), std::move(nodes),
            [](detail::Node& self) {
                for (std::size_t i = 0; i < self.parents.size(); ++i) {
                    auto& p = *self.parents[i];
                    if (!p.requires_grad) continue;
                    ensure_grad(p);
                    p.grad[0] += self.grad[i];
                }
            },
            "concat");
    }
    if (axis != 0 && axis != rank - 1) throw ContractError("concat supports the first or last axis only");

    // View every part as [outer, inner_i]; concatenation runs along inner.
    std::size_t outer = 1;
    if (axis == rank - 1)
        for (std::size_t i = 0; i + 1 < rank; ++i) outer = outer * s0[i];
    std::vector<std::size_t> inner;
    Shape out_shape = s0;
    out_shape[axis] = 0;
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        const Shape& s = N(p).shape;
        if (s.size() != rank) throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < rank; ++i)
            if (i != axis && s[i] != s0[i])
                throw DimensionError("concat: shapes " + shape_str(s0) + " and " + shape_str(s));
        out_shape[axis] += s[axis];
        inner.push_back(p.numel() / outer);
        nodes.push_back(p.node());
    }
    const std::size_t total_inner = std::accumulate(inner.begin(), inner.end(), std::size_t{0});
    std::vector<double> out(outer * total_inner);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& d = N(parts[k]).data;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * inner[k]), inner[k],
                        out.begin() + static_cast<std::ptrdiff_t>(o * total_inner + offset));
        offset += inner[k];
    }
    return make_result(
        std::move(out_shape), std::move(out), std::move(nodes),
        [outer, inner, total_inner](detail::Node& self) {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < self.parents.size(); ++k) {
                auto& p = *self.parents[k];
                if (p.requires_grad) {
                    ensure_grad(p);
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t j = 0; j < inner[k]; ++j)
                            p.grad[o * inner[k] + j] += self.grad[o * total_inner + offset + j];
                }
                offset += inner[k];
            }
        },
        "concat");
}

Tensor take(const Tensor& ta, std::span<const std::size_t> flat_indices) {
    const auto& a = N(ta);
    if (flat_indices.empty()) throw ContractError("take with no indices");
    std::vector<double> out(flat_indices.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (flat_indices[i] >= a.data.size()) throw DimensionError("take: index out of range");
        out[i] = a.data[flat_indices[i]];
    }
    std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
    Shape shape{idx.size()};
    return make_result(
        std::move(shape), std::move(out), {ta.node()},
        [idx = std::move(idx)](detail::Node& self) {
            auto& p = *self.parents[0];
            ensure_grad(p);
            for (std::size_t i = 0; i < idx.size(); ++i) p.grad[idx[i]] += self.grad[i];
        },
        "take");
}

Tensor rows(const Tensor& a, std::span<const std::size_t> indices) {
    if (a.rank() == 1) return take(a, indices);
    if (a.rank() != 2) throw DimensionError("rows expects rank 1 or 2, got " + shape_str(a.shape()));
    const std::size_t n = a.dim(0), d = a.dim(1);
    std::vector<std::size_t> flat;
    flat.reserve(indices.size() * d);
    for (auto r : indices) {
        if (r >= n) throw DimensionError("rows: row index out of range");
        for (std::size_t j = 0; j < d; ++j) flat.push_back(r * d + j);
    }
    return reshape(take(a, flat), {indices.size(), d});
}

Tensor pick(const Tensor& a, std::span<const std::size_t> labels) {
    if (a.rank() != 2 || labels.size() != a.dim(0))
        throw DimensionError("pick: expected [n,C] with n labels, got " + shape_str(a.shape()));
    const std::size_t c = a.dim(1);
    std::vector<std::size_t> flat(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= c) throw ContractError("label " + std::to_string(labels[i]) + " out of range");
        flat[i] = i * c + labels[i];
    }
    return take(a, flat);
}

Tensor scale_rows(const Tensor& ta, const Tensor& ts) {
    if (ta.rank() != 2 || ts.rank() != 1 || ts.dim(0) != ta.dim(0))
        throw DimensionError("scale_rows: shapes " + shape_str(ta.shape()) + " and " +
                             shape_str(ts.shape()));
    const std::size_t n = ta.dim(0), d = ta.dim(1);
    const auto& a = N(ta);
    const auto& s = N(ts);
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = a.data[i * d + j] * s.data[i];
    return make_result(
        {n, d}, std::move(out), {ta.node(), ts.node()},
        [n, d](detail::Node& self) {
            auto& pa = *self.parents[0];
            auto& ps = *self.parents[1];
            if (pa.requires_grad) {
                ensure_grad(pa);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) pa.grad[i * d + j] += self.grad[i * d + j] * ps.data[i];
            }
            if (ps.requires_grad) {
                ensure_grad(ps);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) ps.grad[i] += self.grad[i * d + j] * pa.data[i * d + j];
            }
        },
        "scale_rows");
}

Tensor column(const Tensor& a, std::size_t j) {
    if (a.rank() != 2 || j >= a.dim(1)) throw DimensionError("column: index out of range");
    std::vector<std::size_t> flat(a.dim(0));
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = i * a.dim(1) + j;
    return take(a, flat);
}

Tensor mean_of(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("mean_of zero tensors");
    Tensor acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) {
        if (parts[i].shape() != acc.shape()) throw DimensionError("mean_of: shape mismatch");
        acc = add(acc, parts[i]);
    }
    return parts.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(parts.size()));
}

}  // namespace invjoint
