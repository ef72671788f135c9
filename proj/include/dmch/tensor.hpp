#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dmch/errors.hpp"
#include "dmch/util.hpp"

// Reverse-mode differentiation engine. The op set is exactly what the DMCH
// graph needs: dense matrix/vector products, pointwise nonlinearities,
// softmax, concatenation/slicing, index gathers and reductions. 64-bit
// floats throughout; tapes are rebuilt per training step.

namespace dmch {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (int e : s) n *= static_cast<std::size_t>(e);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad; // allocated lazily; same length as values once present
    bool requires_grad = false;
    std::string name;

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

/// Shared handle to a dense 64-bit tensor with an optional gradient slot.
/// Parameters are long-lived leaves; intermediate results are produced by
/// ops recorded on a Tape.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), {}, requires_grad, true);
    }

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        return Tensor(std::move(shape), std::move(values), requires_grad, false);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool valid() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int extent(int axis) const { return n_->shape[static_cast<std::size_t>(axis)]; }
    std::size_t size() const { return n_->values.size(); }

    std::vector<double>& values() { return n_->values; }
    const std::vector<double>& values() const { return n_->values; }
    std::vector<double>& grad() { return n_->grad; }
    const std::vector<double>& grad() const { return n_->grad; }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }

    const std::string& name() const { return n_->name; }
    Tensor& set_name(std::string nm) {
        n_->name = std::move(nm);
        return *this;
    }

    double at(int i) const { return n_->values[static_cast<std::size_t>(i)]; }
    double at(int i, int j) const {
        return n_->values[static_cast<std::size_t>(i) * static_cast<std::size_t>(shape()[1]) +
                          static_cast<std::size_t>(j)];
    }
    double& at(int i) { return n_->values[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) {
        return n_->values[static_cast<std::size_t>(i) * static_cast<std::size_t>(shape()[1]) +
                          static_cast<std::size_t>(j)];
    }

    void ensure_grad() { n_->ensure_grad(); }
    void zero_grad() {
        n_->grad.assign(n_->values.size(), 0.0);
    }

    TensorNode* node() const { return n_.get(); }
    bool same_node(const Tensor& other) const { return n_ == other.n_; }

private:
    Tensor(Shape shape, std::vector<double> values, bool requires_grad, bool zero_fill)
        : n_(std::make_shared<TensorNode>()) {
        n_->shape = std::move(shape);
        for (int e : n_->shape)
            if (e <= 0) throw argument_error("tensor extents must be positive, got " + shape_str(n_->shape));
        std::size_t n = numel(n_->shape);
        if (zero_fill) {
            n_->values.assign(n, 0.0);
        } else {
            if (values.size() != n)
                throw argument_error("value count " + std::to_string(values.size()) +
                                     " does not match shape " + shape_str(n_->shape));
            n_->values = std::move(values);
        }
        n_->requires_grad = requires_grad;
    }

    std::shared_ptr<TensorNode> n_;
};

/// Ordered record of executed ops. Backward walks the record once, in
/// reverse, accumulating into each input's grad slot. Single-threaded per
/// tape; distinct tapes are independent.
class Tape {
public:
    void record(Tensor out, std::function<void(TensorNode&)> back) {
        steps_.push_back({std::move(out), std::move(back)});
    }

    std::size_t step_count() const { return steps_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and propagates through every recorded op
    /// in reverse topological order. Grads accumulate across multiple uses
    /// of the same tensor and across repeated backward calls; callers clear
    /// them when appropriate.
    void backward(Tensor loss) {
        if (loss.size() != 1)
            throw argument_error("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
        loss.ensure_grad();
        loss.grad()[0] += 1.0;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
            TensorNode& out = *it->out.node();
            if (out.grad.empty()) continue; // nothing flowed into this op's output
            it->back(out);
        }
    }

    void clear() { steps_.clear(); }

private:
    struct Step {
        Tensor out;
        std::function<void(TensorNode&)> back;
    };
    std::vector<Step> steps_;
};

inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw argument_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

inline std::vector<double>& grad_of(TensorNode* n) {
    n->ensure_grad();
    return n->grad;
}

} // namespace detail

// ---------------------------------------------------------------------------
// matrix / vector products
// ---------------------------------------------------------------------------

/// C[m,n] = A[m,k] · B[k,n]. Backward: A.grad += g·Bᵀ, B.grad += Aᵀ·g.
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw argument_error("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    if (a.extent(1) != b.extent(0))
        throw argument_error("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor out = Tensor::zeros({m, n});
    {
        const double* pa = a.values().data();
        const double* pb = b.values().data();
        double* pc = out.values().data();
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                const double av = pa[i * k + p];
                const double* brow = pb + p * n;
                double* crow = pc + i * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
    }
    tape.record(out, [a, b, m, k, n](TensorNode& o) {
        const double* g = o.grad.data();
        auto& ga = detail::grad_of(a.node());
        auto& gb = detail::grad_of(b.node());
        const double* pa = a.values().data();
        const double* pb = b.values().data();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const double gv = g[i * n + j];
                if (gv == 0.0) continue;
                for (int p = 0; p < k; ++p) {
                    ga[i * k + p] += gv * pb[p * n + j];
                    gb[p * n + j] += pa[i * k + p] * gv;
                }
            }
    });
    return out;
}

/// y[m] = A[m,k] · x[k].
inline Tensor matvec(Tape& tape, const Tensor& a, const Tensor& x) {
    if (a.rank() != 2 || x.rank() != 1 || a.extent(1) != x.extent(0))
        throw argument_error("matvec: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(x.shape()));
    const int m = a.extent(0), k = a.extent(1);
    Tensor out = Tensor::zeros({m});
    {
        const double* pa = a.values().data();
        const double* px = x.values().data();
        double* py = out.values().data();
        for (int i = 0; i < m; ++i) {
            const double* row = pa + i * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += row[p] * px[p];
            py[i] = acc;
        }
    }
    tape.record(out, [a, x, m, k](TensorNode& o) {
        const double* g = o.grad.data();
        auto& ga = detail::grad_of(a.node());
        auto& gx = detail::grad_of(x.node());
        const double* pa = a.values().data();
        const double* px = x.values().data();
        for (int i = 0; i < m; ++i) {
            const double gv = g[i];
            if (gv == 0.0) continue;
            for (int p = 0; p < k; ++p) {
                ga[i * k + p] += gv * px[p];
                gx[p] += pa[i * k + p] * gv;
            }
        }
    });
    return out;
}

/// y[n] = xᵀ[m] · A[m,n].
inline Tensor vecmat(Tape& tape, const Tensor& x, const Tensor& a) {
    if (a.rank() != 2 || x.rank() != 1 || a.extent(0) != x.extent(0))
        throw argument_error("vecmat: incompatible shapes " + shape_str(x.shape()) + " and " +
                             shape_str(a.shape()));
    const int m = a.extent(0), n = a.extent(1);
    Tensor out = Tensor::zeros({n});
    {
        const double* pa = a.values().data();
        const double* px = x.values().data();
        double* py = out.values().data();
        for (int i = 0; i < m; ++i) {
            const double xv = px[i];
            const double* row = pa + i * n;
            for (int j = 0; j < n; ++j) py[j] += xv * row[j];
        }
    }
    tape.record(out, [x, a, m, n](TensorNode& o) {
        const double* g = o.grad.data();
        auto& gx = detail::grad_of(x.node());
        auto& ga = detail::grad_of(a.node());
        const double* pa = a.values().data();
        const double* px = x.values().data();
        for (int i = 0; i < m; ++i) {
            const double* row = pa + i * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) {
                acc += row[j] * g[j];
                ga[i * n + j] += px[i] * g[j];
            }
            gx[i] += acc;
        }
    });
    return out;
}

/// Scalar dot product of two equal-length vectors.
inline Tensor dot(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1) throw argument_error("dot expects rank-1 operands");
    detail::check_same_shape(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.values()[i] * b.values()[i];
    Tensor out = Tensor::scalar(acc);
    tape.record(out, [a, b](TensorNode& o) {
        const double g = o.grad[0];
        auto& ga = detail::grad_of(a.node());
        auto& gb = detail::grad_of(b.node());
        for (std::size_t i = 0; i < a.size(); ++i) {
            ga[i] += g * b.values()[i];
            gb[i] += g * a.values()[i];
        }
    });
    return out;
}

inline Tensor transpose(Tape& tape, const Tensor& a) {
    if (a.rank() != 2) throw argument_error("transpose expects a rank-2 tensor");
    const int m = a.extent(0), n = a.extent(1);
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    tape.record(out, [a, m, n](TensorNode& o) {
        auto& ga = detail::grad_of(a.node());
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += o.grad[static_cast<std::size_t>(j) * m + i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// pointwise ops
// ---------------------------------------------------------------------------

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
    tape.record(out, [a, b](TensorNode& o) {
        auto& ga = detail::grad_of(a.node());
        auto& gb = detail::grad_of(b.node());
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            ga[i] += o.grad[i];
            gb[i] += o.grad[i];
        }
    });
    return out;
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] - b.values()[i];
    tape.record(out, [a, b](TensorNode& o) {
        auto& ga = detail::grad_of(a.node());
        auto& gb = detail::grad_of(b.node());
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            ga[i] += o.grad[i];
            gb[i] -= o.grad[i];
        }
    });
    return out;
}

inline Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "hadamard");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
    tape.record(out, [a, b](TensorNode& o) {
        auto& ga = detail::grad_of(a.node());
        auto& gb = detail::grad_of(b.node());
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            ga[i] += o.grad[i] * b.values()[i];
            gb[i] += o.grad[i] * a.values()[i];
        }
    });
    return out;
}

/// mul·x + shift, elementwise with scalar constants.
inline Tensor affine(Tape& tape, const Tensor& x, double mul, double shift) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = mul * x.values()[i] + shift;
    tape.record(out, [x, mul](TensorNode& o) {
        auto& gx = detail::grad_of(x.node());
        for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += mul * o.grad[i];
    });
    return out;
}

inline Tensor scale(Tape& tape, const Tensor& x, double c) { return affine(tape, x, c, 0.0); }

/// Elementwise product with a scalar *tensor* (the sentinel mixing weight).
inline Tensor scale_by(Tape& tape, const Tensor& x, const Tensor& s) {
    if (s.size() != 1) throw argument_error("scale_by expects a scalar tensor multiplier");
    const double sv = s.values()[0];
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = sv * x.values()[i];
    tape.record(out, [x, s, sv](TensorNode& o) {
        auto& gx = detail::grad_of(x.node());
        auto& gs = detail::grad_of(s.node());
        double acc = 0.0;
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            gx[i] += sv * o.grad[i];
            acc += x.values()[i] * o.grad[i];
        }
        gs[0] += acc;
    });
    return out;
}

inline Tensor tanh(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = std::tanh(x.values()[i]);
    tape.record(out, [x](TensorNode& o) {
        auto& gx = detail::grad_of(x.node());
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            gx[i] += o.grad[i] * (1.0 - o.values[i] * o.values[i]);
    });
    return out;
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.values()[i];
        // split on sign so exp never overflows
        out.values()[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    tape.record(out, [x](TensorNode& o) {
        auto& gx = detail::grad_of(x.node());
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            gx[i] += o.grad[i] * o.values[i] * (1.0 - o.values[i]);
    });
    return out;
}

/// Hinge nonlinearity max(0, x). Subgradient at 0 is 0, so an inactive
/// triplet contributes exactly zero gradient.
inline Tensor relu(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
    tape.record(out, [x](TensorNode& o) {
        auto& gx = detail::grad_of(x.node());
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            if (x.values()[i] > 0.0) gx[i] += o.grad[i];
    });
    return out;
}

/// Natural log; inputs must be positive.
inline Tensor log(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x.values()[i] > 0.0))
            throw argument_error("log requires positive inputs, got " + std::to_string(x.values()[i]));
        out.values()[i] = std::log(x.values()[i]);
    }
    tape.record(out, [x](TensorNode& o) {
        auto& gx = detail::grad_of(x.node());
        for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i] / x.values()[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Stable softmax over a rank-1 tensor (max-subtraction). Outputs are
/// positive and sum to 1 within 1e-12 for any finite input.
inline Tensor softmax(Tape& tape, const Tensor& z) {
    if (z.rank() != 1 || z.size() == 0) throw argument_error("softmax expects a nonempty rank-1 tensor");
    const std::size_t n = z.size();
    Tensor out = Tensor::zeros(z.shape());
    double mx = z.values()[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, z.values()[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(z.values()[i] - mx);
        out.values()[i] = e;
        sum += e;
    }
    for (std::size_t i = 0; i < n; ++i) out.values()[i] /= sum;
    tape.record(out, [z](TensorNode& o) {
        // dz = y ∘ (g − ⟨g, y⟩)
        auto& gz = detail::grad_of(z.node());
        double gy = 0.0;
        for (std::size_t i = 0; i < o.grad.size(); ++i) gy += o.grad[i] * o.values[i];
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            gz[i] += o.values[i] * (o.grad[i] - gy);
    });
    return out;
}

// ---------------------------------------------------------------------------
// structure ops
// ---------------------------------------------------------------------------

inline Tensor concat(Tape& tape, const Tensor& a, const Tensor& b, int axis = 0) {
    if (a.rank() != b.rank()) throw argument_error("concat: rank mismatch");
    if (axis < 0 || axis >= a.rank())
        throw argument_error("concat: axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(a.rank()));
    for (int d = 0; d < a.rank(); ++d)
        if (d != axis && a.extent(d) != b.extent(d))
            throw argument_error("concat: non-concat extents differ, " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] += b.extent(axis);

    if (a.rank() == 1) {
        Tensor out = Tensor::zeros(out_shape);
        std::copy(a.values().begin(), a.values().end(), out.values().begin());
        std::copy(b.values().begin(), b.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(a.size()));
        tape.record(out, [a, b](TensorNode& o) {
            auto& ga = detail::grad_of(a.node());
            auto& gb = detail::grad_of(b.node());
            for (std::size_t i = 0; i < a.size(); ++i) ga[i] += o.grad[i];
            for (std::size_t i = 0; i < b.size(); ++i) gb[i] += o.grad[a.size() + i];
        });
        return out;
    }
    if (a.rank() != 2) throw argument_error("concat supports rank 1 and 2 tensors");
    const int ra = a.extent(0), ca = a.extent(1), rb = b.extent(0), cb = b.extent(1);
    Tensor out = Tensor::zeros(out_shape);
    if (axis == 0) {
        std::copy(a.values().begin(), a.values().end(), out.values().begin());
        std::copy(b.values().begin(), b.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(a.size()));
    } else {
        for (int i = 0; i < ra; ++i) {
            for (int j = 0; j < ca; ++j) out.at(i, j) = a.at(i, j);
            for (int j = 0; j < cb; ++j) out.at(i, ca + j) = b.at(i, j);
        }
    }
    tape.record(out, [a, b, axis, ra, ca, rb, cb](TensorNode& o) {
        auto& ga = detail::grad_of(a.node());
        auto& gb = detail::grad_of(b.node());
        if (axis == 0) {
            for (std::size_t i = 0; i < a.size(); ++i) ga[i] += o.grad[i];
            for (std::size_t i = 0; i < b.size(); ++i) gb[i] += o.grad[a.size() + i];
        } else {
            const int cols = ca + cb;
            for (int i = 0; i < ra; ++i) {
                for (int j = 0; j < ca; ++j) ga[static_cast<std::size_t>(i) * ca + j] += o.grad[static_cast<std::size_t>(i) * cols + j];
                for (int j = 0; j < cb; ++j) gb[static_cast<std::size_t>(i) * cb + j] += o.grad[static_cast<std::size_t>(i) * cols + ca + j];
            }
        }
        (void)rb;
    });
    return out;
}

/// Contiguous sub-vector [begin, begin+len) of a rank-1 tensor.
inline Tensor slice(Tape& tape, const Tensor& x, int begin, int len) {
    if (x.rank() != 1) throw argument_error("slice expects a rank-1 tensor");
    if (begin < 0 || len < 1 || begin + len > x.extent(0))
        throw argument_error("slice [" + std::to_string(begin) + "," + std::to_string(begin + len) +
                             ") out of range for " + shape_str(x.shape()));
    Tensor out = Tensor::zeros({len});
    for (int i = 0; i < len; ++i) out.values()[static_cast<std::size_t>(i)] = x.values()[static_cast<std::size_t>(begin + i)];
    tape.record(out, [x, begin, len](TensorNode& o) {
        auto& gx = detail::grad_of(x.node());
        for (int i = 0; i < len; ++i) gx[static_cast<std::size_t>(begin + i)] += o.grad[static_cast<std::size_t>(i)];
    });
    return out;
}

/// Single element of a rank-1 tensor, as a scalar tensor.
inline Tensor pick(Tape& tape, const Tensor& x, int i) {
    if (x.rank() != 1 || i < 0 || i >= x.extent(0))
        throw argument_error("pick: index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
    Tensor out = Tensor::scalar(x.values()[static_cast<std::size_t>(i)]);
    tape.record(out, [x, i](TensorNode& o) {
        detail::grad_of(x.node())[static_cast<std::size_t>(i)] += o.grad[0];
    });
    return out;
}

/// Row i of a matrix (also the embedding-table lookup).
inline Tensor row_select(Tape& tape, const Tensor& a, int i) {
    if (a.rank() != 2 || i < 0 || i >= a.extent(0))
        throw argument_error("row_select: row " + std::to_string(i) + " out of range for " + shape_str(a.shape()));
    const int n = a.extent(1);
    Tensor out = Tensor::zeros({n});
    for (int j = 0; j < n; ++j) out.values()[static_cast<std::size_t>(j)] = a.at(i, j);
    tape.record(out, [a, i, n](TensorNode& o) {
        auto& ga = detail::grad_of(a.node());
        for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += o.grad[static_cast<std::size_t>(j)];
    });
    return out;
}

/// Gather from the flattened values of x: out[j] = x.flat[idx[j]], with
/// idx[j] == -1 reading as 0 (zero padding for im2col borders). Backward
/// scatter-adds.
inline Tensor gather(Tape& tape, const Tensor& x, std::vector<int> idx, Shape out_shape) {
    if (numel(out_shape) != idx.size())
        throw argument_error("gather: index count does not match output shape");
    const std::size_t n = x.size();
    for (int v : idx)
        if (v < -1 || v >= static_cast<int>(n)) throw argument_error("gather: index out of range");
    Tensor out = Tensor::zeros(std::move(out_shape));
    auto shared_idx = std::make_shared<std::vector<int>>(std::move(idx));
    for (std::size_t j = 0; j < shared_idx->size(); ++j) {
        const int v = (*shared_idx)[j];
        out.values()[j] = v < 0 ? 0.0 : x.values()[static_cast<std::size_t>(v)];
    }
    tape.record(out, [x, shared_idx](TensorNode& o) {
        auto& gx = detail::grad_of(x.node());
        for (std::size_t j = 0; j < shared_idx->size(); ++j) {
            const int v = (*shared_idx)[j];
            if (v >= 0) gx[static_cast<std::size_t>(v)] += o.grad[j];
        }
    });
    return out;
}

inline Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        throw argument_error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    Tensor out = Tensor::from(std::move(new_shape), x.values());
    tape.record(out, [x](TensorNode& o) {
        auto& gx = detail::grad_of(x.node());
        for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
    });
    return out;
}

/// A[m,n] + b[n] broadcast over rows (per-row bias).
inline Tensor add_rowvec(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 1 || a.extent(1) != b.extent(0))
        throw argument_error("add_rowvec: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const int m = a.extent(0), n = a.extent(1);
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + b.at(j);
    tape.record(out, [a, b, m, n](TensorNode& o) {
        auto& ga = detail::grad_of(a.node());
        auto& gb = detail::grad_of(b.node());
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                const double g = o.grad[static_cast<std::size_t>(i) * n + j];
                ga[static_cast<std::size_t>(i) * n + j] += g;
                gb[static_cast<std::size_t>(j)] += g;
            }
    });
    return out;
}

/// A[m,n] + b[m] broadcast over columns (the (W_g h_t)·1ᵀ term of the
/// attention logits).
inline Tensor add_colvec(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 1 || a.extent(0) != b.extent(0))
        throw argument_error("add_colvec: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const int m = a.extent(0), n = a.extent(1);
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + b.at(i);
    tape.record(out, [a, b, m, n](TensorNode& o) {
        auto& ga = detail::grad_of(a.node());
        auto& gb = detail::grad_of(b.node());
        for (int i = 0; i < m; ++i) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) {
                const double g = o.grad[static_cast<std::size_t>(i) * n + j];
                ga[static_cast<std::size_t>(i) * n + j] += g;
                acc += g;
            }
            gb[static_cast<std::size_t>(i)] += acc;
        }
    });
    return out;
}

/// y[D] = Σ_k w[k] · R[k,:], the attended context c_t = Σ α_i v_i.
inline Tensor weighted_sum(Tape& tape, const Tensor& regions, const Tensor& w) {
    if (regions.rank() != 2 || w.rank() != 1 || regions.extent(0) != w.extent(0))
        throw argument_error("weighted_sum: incompatible shapes " + shape_str(regions.shape()) + " and " +
                             shape_str(w.shape()));
    const int k = regions.extent(0), d = regions.extent(1);
    Tensor out = Tensor::zeros({d});
    for (int i = 0; i < k; ++i) {
        const double wv = w.at(i);
        for (int j = 0; j < d; ++j) out.values()[static_cast<std::size_t>(j)] += wv * regions.at(i, j);
    }
    tape.record(out, [regions, w, k, d](TensorNode& o) {
        auto& gr = detail::grad_of(regions.node());
        auto& gw = detail::grad_of(w.node());
        for (int i = 0; i < k; ++i) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j) {
                gr[static_cast<std::size_t>(i) * d + j] += w.at(i) * o.grad[static_cast<std::size_t>(j)];
                acc += regions.at(i, j) * o.grad[static_cast<std::size_t>(j)];
            }
            gw[static_cast<std::size_t>(i)] += acc;
        }
    });
    return out;
}

/// Mean over one axis of a matrix. axis 0: column means [n]; axis 1: row
/// means [m].
inline Tensor mean_axis(Tape& tape, const Tensor& a, int axis) {
    if (a.rank() != 2) throw argument_error("mean_axis expects a rank-2 tensor");
    if (axis != 0 && axis != 1) throw argument_error("mean_axis: axis must be 0 or 1");
    const int m = a.extent(0), n = a.extent(1);
    if (axis == 0) {
        Tensor out = Tensor::zeros({n});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out.values()[static_cast<std::size_t>(j)] += a.at(i, j);
        for (int j = 0; j < n; ++j) out.values()[static_cast<std::size_t>(j)] /= m;
        tape.record(out, [a, m, n](TensorNode& o) {
            auto& ga = detail::grad_of(a.node());
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += o.grad[static_cast<std::size_t>(j)] / m;
        });
        return out;
    }
    Tensor out = Tensor::zeros({m});
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += a.at(i, j);
        out.values()[static_cast<std::size_t>(i)] = acc / n;
    }
    tape.record(out, [a, m, n](TensorNode& o) {
        auto& ga = detail::grad_of(a.node());
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += o.grad[static_cast<std::size_t>(i)] / n;
    });
    return out;
}

/// Sum of all entries, as a scalar tensor.
inline Tensor sum(Tape& tape, const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    Tensor out = Tensor::scalar(acc);
    tape.record(out, [x](TensorNode& o) {
        auto& gx = detail::grad_of(x.node());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[0];
    });
    return out;
}

// ---------------------------------------------------------------------------
// finite-difference checking harness
// ---------------------------------------------------------------------------

namespace detail {

inline double fd_relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

} // namespace detail

/// Max relative error between the tape gradient of f at x and a central
/// finite difference. f must be deterministic (checked by double
/// evaluation) and produce a scalar tensor on the given tape.
inline double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                         double eps = 1e-5) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw argument_error("grad_check: eps must lie in [1e-7, 1e-3]");
    auto eval = [&](const Tensor& in) {
        Tape t;
        Tensor y = f(t, in);
        if (y.size() != 1) throw argument_error("grad_check: f must return a scalar tensor");
        return y.values()[0];
    };
    Tensor probe = Tensor::from(x.shape(), x.values());
    if (eval(probe) != eval(probe))
        throw oracle_error("grad_check: repeated evaluations of f disagree (nondeterministic f?)");

    Tensor xg = Tensor::from(x.shape(), x.values(), true);
    Tape tape;
    Tensor y = f(tape, xg);
    if (y.size() != 1) throw argument_error("grad_check: f must return a scalar tensor");
    tape.backward(y);
    xg.ensure_grad();

    double worst = 0.0;
    Tensor xp = Tensor::from(x.shape(), x.values());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = xp.values()[i];
        xp.values()[i] = orig + eps;
        const double up = eval(xp);
        xp.values()[i] = orig - eps;
        const double dn = eval(xp);
        xp.values()[i] = orig;
        const double numeric = (up - dn) / (2.0 * eps);
        worst = std::max(worst, detail::fd_relative_error(xg.grad()[i], numeric));
    }
    return worst;
}

/// Same check over a set of shared parameter tensors: build_loss reads the
/// parameters (which are perturbed in place for the numeric side) and
/// returns the scalar loss on a fresh tape.
inline double grad_check_params(const std::function<Tensor(Tape&)>& build_loss,
                                std::span<const Tensor> params, double eps = 1e-5) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw argument_error("grad_check: eps must lie in [1e-7, 1e-3]");
    auto eval = [&] {
        Tape t;
        Tensor y = build_loss(t);
        if (y.size() != 1) throw argument_error("grad_check: loss must be scalar");
        return y.values()[0];
    };
    if (eval() != eval())
        throw oracle_error("grad_check: repeated evaluations disagree (nondeterministic loss?)");

    for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
    Tape tape;
    Tensor loss = build_loss(tape);
    tape.backward(loss);

    double worst = 0.0;
    for (const Tensor& p : params) {
        Tensor& param = const_cast<Tensor&>(p);
        param.ensure_grad();
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double orig = param.values()[i];
            param.values()[i] = orig + eps;
            const double up = eval();
            param.values()[i] = orig - eps;
            const double dn = eval();
            param.values()[i] = orig;
            const double numeric = (up - dn) / (2.0 * eps);
            worst = std::max(worst, detail::fd_relative_error(param.grad()[i], numeric));
        }
    }
    return worst;
}

/// Uniform ±1/√fan_in initialization.
inline void init_uniform_fanin(Tensor& t, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.values()) v = uniform(rng, -bound, bound);
}

} // namespace dmch
