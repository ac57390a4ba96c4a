#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "sdtag/errors.hpp"
#include "sdtag/rng.hpp"

namespace sdtag {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Dense 64-bit tensor handle. Copies share the underlying node, so a Tensor
// behaves like a reference into the computation graph.
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::Node>()) {}

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (shape_numel(shape) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        std::vector<double> data(shape_numel(shape), v);
        return Tensor(std::move(shape), std::move(data), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        std::size_t n = shape_numel(shape);
        std::vector<double> d(n);
        for (auto& x : d) x = rng.normal() * stddev;
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }

    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() const { node_->grad.assign(node_->value.size(), 0.0); }

    double item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    double at(std::size_t i) const { return node_->value.at(i); }
    double at(std::size_t r, std::size_t c) const {
        if (rank() != 2) throw ShapeError("2-d access on tensor " + shape_str(shape()));
        return node_->value.at(r * dim(1) + c);
    }

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op(Shape shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backprop);
};

// Installs a graph node; the backprop closure is dropped when no parent needs
// gradients, so inference builds no graph.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backprop) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor(n);
}

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

inline void check_matrix(const Tensor& a, const char* op) {
    if (a.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected matrix, got " + shape_str(a.shape()));
    }
}

// Rowwise view: leading dims flattened, last dim is the row width.
inline std::pair<std::size_t, std::size_t> rows_cols(const Tensor& a) {
    if (a.rank() == 0 || a.numel() == 0) throw ShapeError("empty tensor");
    std::size_t m = a.shape().back();
    return {a.numel() / m, m};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and scalar ops

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    return make_op(a.shape(), std::move(v), {a, b}, [](detail::Node& n) {
        for (int pi = 0; pi < 2; ++pi) {
            auto& p = *n.parents[pi];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    return make_op(a.shape(), std::move(v), {a, b}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    return make_op(a.shape(), std::move(v), {a, b}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
    return make_op(a.shape(), std::move(v), {a}, [c](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * c;
    });
}

inline Tensor abs_val(const Tensor& a) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::fabs(a.data()[i]);
    // Subgradient 0 at exactly 0.
    return make_op(a.shape(), std::move(v), {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double x = p.value[i];
            p.grad[i] += n.grad[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
        }
    });
}

// tanh-approximation GELU, the BERT convention.
inline Tensor gelu(const Tensor& a) {
    static constexpr double kC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
    static constexpr double kA = 0.044715;
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = a.data()[i];
        v[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
    }
    return make_op(a.shape(), std::move(v), {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double x = p.value[i];
            const double u = kC * (x + kA * x * x * x);
            const double t = std::tanh(u);
            const double du = kC * (1.0 + 3.0 * kA * x * x);
            p.grad[i] += n.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
        }
    });
}

// Dropout with a caller-supplied mask (entries 0 or 1/(1-p)); no hidden state.
inline Tensor dropout(const Tensor& a, const Tensor& mask) {
    detail::check_same_shape(a, mask, "dropout");
    return mul(a, mask);
}

// ---------------------------------------------------------------------------
// matrix ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_matrix(a, "matmul");
    detail::check_matrix(b, "matmul");
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dims differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<double> v(n * m, 0.0);
    {
        const double* A = a.data().data();
        const double* B = b.data().data();
        double* C = v.data();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double aik = A[i * k + kk];
                const double* Bk = B + kk * m;
                double* Ci = C + i * m;
                for (std::size_t j = 0; j < m; ++j) Ci[j] += aik * Bk[j];
            }
        }
    }
    return make_op({n, m}, std::move(v), {a, b}, [n, k, m](detail::Node& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        const double* G = nd.grad.data();
        if (pa.requires_grad) {
            pa.ensure_grad();
            const double* B = pb.value.data();
            double* GA = pa.grad.data();
            // dA = G * B^T
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double g = G[i * m + j];
                    const double* Bj = B;  // column j strided
                    for (std::size_t kk = 0; kk < k; ++kk) GA[i * k + kk] += g * Bj[kk * m + j];
                }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            const double* A = pa.value.data();
            double* GB = pb.grad.data();
            // dB = A^T * G
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double aik = A[i * k + kk];
                    for (std::size_t j = 0; j < m; ++j) GB[kk * m + j] += aik * G[i * m + j];
                }
        }
    });
}

// a [n x k] times b^T where b is [m x k]; avoids explicit transposes in
// attention scores and similarity matrices.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::check_matrix(a, "matmul_nt");
    detail::check_matrix(b, "matmul_nt");
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
    if (b.dim(1) != k) {
        throw ShapeError("matmul_nt: inner dims differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<double> v(n * m, 0.0);
    {
        const double* A = a.data().data();
        const double* B = b.data().data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                double s = 0.0;
                const double* Ai = A + i * k;
                const double* Bj = B + j * k;
                for (std::size_t kk = 0; kk < k; ++kk) s += Ai[kk] * Bj[kk];
                v[i * m + j] = s;
            }
    }
    return make_op({n, m}, std::move(v), {a, b}, [n, k, m](detail::Node& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        const double* G = nd.grad.data();
        if (pa.requires_grad) {
            pa.ensure_grad();
            const double* B = pb.value.data();
            double* GA = pa.grad.data();
            // dA = G * B
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double g = G[i * m + j];
                    for (std::size_t kk = 0; kk < k; ++kk) GA[i * k + kk] += g * B[j * k + kk];
                }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            const double* A = pa.value.data();
            double* GB = pb.grad.data();
            // dB = G^T * A
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double g = G[i * m + j];
                    for (std::size_t kk = 0; kk < k; ++kk) GB[j * k + kk] += g * A[i * k + kk];
                }
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::check_matrix(a, "transpose");
    const std::size_t n = a.dim(0), m = a.dim(1);
    std::vector<double> v(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) v[j * n + i] = a.data()[i * m + j];
    return make_op({m, n}, std::move(v), {a}, [n, m](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) p.grad[i * m + j] += nd.grad[j * n + i];
    });
}

// Adds a length-m bias vector to every row of a [n x m] matrix.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
    detail::check_matrix(a, "add_bias");
    const std::size_t n = a.dim(0), m = a.dim(1);
    if (bias.numel() != m) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " vs matrix " +
                         shape_str(a.shape()));
    }
    std::vector<double> v(a.data());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) v[i * m + j] += bias.data()[j];
    return make_op(a.shape(), std::move(v), {a, bias}, [n, m](detail::Node& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i) pa.grad[i] += nd.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) pb.grad[j] += nd.grad[i * m + j];
        }
    });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    return make_op(std::move(shape), a.data(), {a}, [](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) p.grad[i] += nd.grad[i];
    });
}

inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    detail::check_matrix(a, "slice_rows");
    const std::size_t m = a.dim(1);
    if (r0 > r1 || r1 > a.dim(0)) throw ShapeError("slice_rows: bad range on " + shape_str(a.shape()));
    std::vector<double> v(a.data().begin() + r0 * m, a.data().begin() + r1 * m);
    return make_op({r1 - r0, m}, std::move(v), {a}, [r0, m](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) p.grad[r0 * m + i] += nd.grad[i];
    });
}

inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    detail::check_matrix(a, "slice_cols");
    const std::size_t n = a.dim(0), m = a.dim(1);
    if (c0 > c1 || c1 > m) throw ShapeError("slice_cols: bad range on " + shape_str(a.shape()));
    const std::size_t w = c1 - c0;
    std::vector<double> v(n * w);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) v[i * w + j] = a.data()[i * m + c0 + j];
    return make_op({n, w}, std::move(v), {a}, [n, m, c0, w](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) p.grad[i * m + c0 + j] += nd.grad[i * w + j];
    });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::size_t m = parts[0].rank() == 2 ? parts[0].dim(1) : parts[0].numel();
    std::size_t n = 0;
    for (const auto& p : parts) {
        detail::check_matrix(p, "concat_rows");
        if (p.dim(1) != m) {
            throw ShapeError("concat_rows: width mismatch " + shape_str(p.shape()) +
                             " expected cols " + std::to_string(m));
        }
        n += p.dim(0);
    }
    std::vector<double> v;
    v.reserve(n * m);
    for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
    std::vector<std::size_t> row_of(parts.size());
    {
        std::size_t acc = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            row_of[i] = acc;
            acc += parts[i].dim(0);
        }
    }
    return make_op({n, m}, std::move(v), parts, [row_of, m](detail::Node& nd) {
        for (std::size_t pi = 0; pi < nd.parents.size(); ++pi) {
            auto& p = *nd.parents[pi];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            const std::size_t base = row_of[pi] * m;
            for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += nd.grad[base + i];
        }
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t n = parts[0].dim(0);
    std::size_t m = 0;
    for (const auto& p : parts) {
        detail::check_matrix(p, "concat_cols");
        if (p.dim(0) != n) {
            throw ShapeError("concat_cols: height mismatch " + shape_str(p.shape()) +
                             " expected rows " + std::to_string(n));
        }
        m += p.dim(1);
    }
    std::vector<double> v(n * m);
    std::vector<std::size_t> col_of(parts.size());
    {
        std::size_t acc = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            col_of[pi] = acc;
            const std::size_t w = parts[pi].dim(1);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    v[i * m + acc + j] = parts[pi].data()[i * w + j];
            acc += w;
        }
    }
    return make_op({n, m}, std::move(v), parts, [col_of, n, m](detail::Node& nd) {
        for (std::size_t pi = 0; pi < nd.parents.size(); ++pi) {
            auto& p = *nd.parents[pi];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            const std::size_t w = p.shape[1];
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    p.grad[i * w + j] += nd.grad[i * m + col_of[pi] + j];
        }
    });
}

// Row gather; doubles as embedding lookup (table [V x d], ids -> [len x d]).
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
    detail::check_matrix(a, "gather_rows");
    const std::size_t m = a.dim(1);
    for (std::size_t r : idx) {
        if (r >= a.dim(0)) {
            throw ShapeError("gather_rows: index " + std::to_string(r) + " out of " +
                             shape_str(a.shape()));
        }
    }
    std::vector<double> v(idx.size() * m);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(a.data().begin() + idx[i] * m, m, v.begin() + i * m);
    return make_op({idx.size(), m}, std::move(v), {a}, [idx, m](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < m; ++j) p.grad[idx[i] * m + j] += nd.grad[i * m + j];
    });
}

inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
    return gather_rows(table, ids);
}

// ---------------------------------------------------------------------------
// rowwise nonlinearities (last dim; leading dims flattened)

inline Tensor softmax(const Tensor& a) {
    auto [rows, cols] = detail::rows_cols(a);
    std::vector<double> v(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * cols;
        double mx = x[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            v[r * cols + j] = std::exp(x[j] - mx);
            z += v[r * cols + j];
        }
        for (std::size_t j = 0; j < cols; ++j) v[r * cols + j] /= z;
    }
    return make_op(a.shape(), std::move(v), {a}, [rows = rows, cols = cols](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = nd.value.data() + r * cols;
            const double* g = nd.grad.data() + r * cols;
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += y[j] * g[j];
            double* pg = p.grad.data() + r * cols;
            for (std::size_t j = 0; j < cols; ++j) pg[j] += y[j] * (g[j] - dot);
        }
    });
}

inline Tensor log_softmax(const Tensor& a) {
    auto [rows, cols] = detail::rows_cols(a);
    std::vector<double> v(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * cols;
        double mx = x[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
        const double lz = mx + std::log(z);
        for (std::size_t j = 0; j < cols; ++j) v[r * cols + j] = x[j] - lz;
    }
    return make_op(a.shape(), std::move(v), {a}, [rows = rows, cols = cols](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = nd.value.data() + r * cols;
            const double* g = nd.grad.data() + r * cols;
            double gsum = 0.0;
            for (std::size_t j = 0; j < cols; ++j) gsum += g[j];
            double* pg = p.grad.data() + r * cols;
            for (std::size_t j = 0; j < cols; ++j) pg[j] += g[j] - std::exp(y[j]) * gsum;
        }
    });
}

// Rowwise layer norm with affine parameters; eps = 1e-5 per BERT convention.
inline Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    auto [rows, cols] = detail::rows_cols(a);
    if (gamma.numel() != cols || beta.numel() != cols) {
        throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " vs row width " + std::to_string(cols));
    }
    std::vector<double> v(a.numel());
    std::vector<double> inv_std(rows), mean(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * cols;
        double mu = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mu += x[j];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = is;
        for (std::size_t j = 0; j < cols; ++j)
            v[r * cols + j] = (x[j] - mu) * is * gamma.data()[j] + beta.data()[j];
    }
    return make_op(a.shape(), std::move(v), {a, gamma, beta},
                   [rows = rows, cols = cols, mean, inv_std](detail::Node& nd) {
                       auto& px = *nd.parents[0];
                       auto& pg = *nd.parents[1];
                       auto& pb = *nd.parents[2];
                       const double m = static_cast<double>(cols);
                       for (std::size_t r = 0; r < rows; ++r) {
                           const double* x = px.value.data() + r * cols;
                           const double* g = nd.grad.data() + r * cols;
                           const double is = inv_std[r];
                           const double mu = mean[r];
                           if (pg.requires_grad) {
                               pg.ensure_grad();
                               for (std::size_t j = 0; j < cols; ++j)
                                   pg.grad[j] += g[j] * (x[j] - mu) * is;
                           }
                           if (pb.requires_grad) {
                               pb.ensure_grad();
                               for (std::size_t j = 0; j < cols; ++j) pb.grad[j] += g[j];
                           }
                           if (px.requires_grad) {
                               px.ensure_grad();
                               double sum_gy = 0.0, sum_gyx = 0.0;
                               for (std::size_t j = 0; j < cols; ++j) {
                                   const double gy = g[j] * pg.value[j];
                                   sum_gy += gy;
                                   sum_gyx += gy * (x[j] - mu) * is;
                               }
                               double* out = px.grad.data() + r * cols;
                               for (std::size_t j = 0; j < cols; ++j) {
                                   const double xhat = (x[j] - mu) * is;
                                   const double gy = g[j] * pg.value[j];
                                   out[j] += is * (gy - sum_gy / m - xhat * sum_gyx / m);
                               }
                           }
                       }
                   });
}

// Rowwise L2 normalization; zero rows stay zero via the norm floor.
inline Tensor l2_normalize(const Tensor& a, double floor = 1e-12) {
    auto [rows, cols] = detail::rows_cols(a);
    std::vector<double> v(a.numel());
    std::vector<double> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * cols;
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += x[j] * x[j];
        const double nrm = std::max(std::sqrt(s), floor);
        norms[r] = nrm;
        for (std::size_t j = 0; j < cols; ++j) v[r * cols + j] = x[j] / nrm;
    }
    return make_op(a.shape(), std::move(v), {a},
                   [rows = rows, cols = cols, norms](detail::Node& nd) {
                       auto& p = *nd.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                           const double* y = nd.value.data() + r * cols;
                           const double* g = nd.grad.data() + r * cols;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < cols; ++j) dot += y[j] * g[j];
                           double* pg = p.grad.data() + r * cols;
                           for (std::size_t j = 0; j < cols; ++j)
                               pg[j] += (g[j] - y[j] * dot) / norms[r];
                       }
                   });
}

// ---------------------------------------------------------------------------
// reductions and losses

inline Tensor sum_all(const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    return make_op({1}, {s}, {a}, [](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (auto& g : p.grad) g += nd.grad[0];
    });
}

inline Tensor mean_all(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0) * inv;
    return make_op({1}, {s}, {a}, [inv](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (auto& g : p.grad) g += nd.grad[0] * inv;
    });
}

// Mean negative log-likelihood of target entries of a log-probability matrix.
inline Tensor nll_rows(const Tensor& logp, const std::vector<std::size_t>& targets) {
    detail::check_matrix(logp, "nll_rows");
    const std::size_t n = logp.dim(0), m = logp.dim(1);
    if (targets.size() != n) {
        throw ShapeError("nll_rows: " + std::to_string(targets.size()) + " targets vs " +
                         shape_str(logp.shape()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] >= m) throw ContractError("nll_rows: target out of range");
        s -= logp.data()[i * m + targets[i]];
    }
    s /= static_cast<double>(n);
    return make_op({1}, {s}, {logp}, [targets, n, m](detail::Node& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double c = nd.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) p.grad[i * m + targets[i]] -= c;
    });
}

inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
    return nll_rows(log_softmax(logits), targets);
}

// ---------------------------------------------------------------------------
// reverse-mode sweep

inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    // Deterministic post-order over the recorded graph.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* child = node->parents[next].get();
            ++next;
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::Node* n : order) n->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop(**it);
    }
}

}  // namespace sdtag
