#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "relex/errors.hpp"
#include "relex/rng.hpp"

namespace relex {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << ")";
    return os.str();
}

// One value in the computation graph. Parents and backward_fn are recorded
// only when the value participates in gradient computation; pure inference
// leaves both empty so no graph accumulates.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Shared handle to a graph node. Copying a Tensor aliases the node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value.assign(shape_numel(n->shape), v);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_values(Shape shape, std::vector<double> values,
                              bool requires_grad = false) {
        if (values.size() != shape_numel(shape))
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v) { return full({1}, v); }

    // Uniform fill in [lo, hi), e.g. for Xavier initialization.
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                          bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (double& v : t.node_->value) v = rng.uniform(lo, hi);
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    bool is_scalar() const { return node_->value.size() == 1; }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& value() const { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }

    // Mutable access for optimizers and finite differencing. Writing through
    // this pointer does not invalidate the recorded graph; callers must not
    // mutate values between a forward pass and its backward.
    double* data() { return node_->value.data(); }
    double item() const {
        if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<TensorNode> node_;

    friend Tensor make_result(Shape shape, bool requires_grad);
};

inline Tensor make_result(Shape shape, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.resize(shape_numel(n->shape));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

namespace detail {

inline void attach(Tensor& out, std::vector<Tensor> inputs,
                   std::function<void(TensorNode&)> backward_fn) {
    if (!out.requires_grad()) return;
    auto n = out.node();
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backward_fn = std::move(backward_fn);
}

inline bool any_grad(std::initializer_list<Tensor> ts) {
    for (const auto& t : ts)
        if (t.requires_grad()) return true;
    return false;
}

// c[p x r] += a[p x q] * b[q x r]
inline void mm_acc(const double* a, const double* b, double* c, std::size_t p,
                   std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        double* crow = c + i * r;
        const double* arow = a + i * q;
        for (std::size_t k = 0; k < q; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b + k * r;
            for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
        }
    }
}

// da[p x q] += dc[p x r] * b^T  (b is q x r)
inline void mm_acc_bt(const double* dc, const double* b, double* da, std::size_t p,
                      std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        const double* dcrow = dc + i * r;
        double* darow = da + i * q;
        for (std::size_t j = 0; j < q; ++j) {
            const double* brow = b + j * r;
            double acc = 0.0;
            for (std::size_t k = 0; k < r; ++k) acc += dcrow[k] * brow[k];
            darow[j] += acc;
        }
    }
}

// db[q x r] += a^T * dc  (a is p x q, dc is p x r)
inline void mm_acc_at(const double* a, const double* dc, double* db, std::size_t p,
                      std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        const double* arow = a + i * q;
        const double* dcrow = dc + i * r;
        for (std::size_t k = 0; k < q; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            double* dbrow = db + k * r;
            for (std::size_t j = 0; j < r; ++j) dbrow[j] += aik * dcrow[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

// Addition. Shapes must match, except that a rank-1 `b` whose length equals
// the last dimension of `a` broadcasts as a per-row bias.
inline Tensor add(const Tensor& a, const Tensor& b) {
    const bool bias = b.shape().size() == 1 && a.shape().size() > 1 &&
                      b.shape()[0] == a.shape().back();
    if (!bias && a.shape() != b.shape())
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor out = make_result(a.shape(), detail::any_grad({a, b}));
    const std::size_t n = a.numel();
    const double* av = a.value().data();
    double* ov = const_cast<double*>(out.value().data());
    if (bias) {
        const std::size_t f = b.shape()[0];
        const double* bv = b.value().data();
        for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i % f];
    } else {
        const double* bv = b.value().data();
        for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
    }
    detail::attach(out, {a, b}, [bias](TensorNode& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            if (bias) {
                const std::size_t f = pb.value.size();
                for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i % f] += o.grad[i];
            } else {
                for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] += o.grad[i];
            }
        }
    });
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor out = make_result(a.shape(), detail::any_grad({a, b}));
    double* ov = const_cast<double*>(out.value().data());
    for (std::size_t i = 0; i < a.numel(); ++i) ov[i] = a.value()[i] - b.value()[i];
    detail::attach(out, {a, b}, [](TensorNode& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] -= o.grad[i];
        }
    });
    return out;
}

// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor out = make_result(a.shape(), detail::any_grad({a, b}));
    double* ov = const_cast<double*>(out.value().data());
    for (std::size_t i = 0; i < a.numel(); ++i) ov[i] = a.value()[i] * b.value()[i];
    detail::attach(out, {a, b}, [](TensorNode& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                pa.grad[i] += o.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                pb.grad[i] += o.grad[i] * pa.value[i];
        }
    });
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = make_result(a.shape(), a.requires_grad());
    double* ov = const_cast<double*>(out.value().data());
    for (std::size_t i = 0; i < a.numel(); ++i) ov[i] = a.value()[i] * c;
    detail::attach(out, {a}, [c](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * c;
    });
    return out;
}

inline Tensor sigmoid(const Tensor& a) {
    Tensor out = make_result(a.shape(), a.requires_grad());
    double* ov = const_cast<double*>(out.value().data());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double x = a.value()[i];
        // Split by sign so exp never overflows.
        ov[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                         : std::exp(x) / (1.0 + std::exp(x));
    }
    detail::attach(out, {a}, [](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double y = o.value[i];
            p.grad[i] += o.grad[i] * y * (1.0 - y);
        }
    });
    return out;
}

inline Tensor tanh(const Tensor& a) {
    Tensor out = make_result(a.shape(), a.requires_grad());
    double* ov = const_cast<double*>(out.value().data());
    for (std::size_t i = 0; i < a.numel(); ++i) ov[i] = std::tanh(a.value()[i]);
    detail::attach(out, {a}, [](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double y = o.value[i];
            p.grad[i] += o.grad[i] * (1.0 - y * y);
        }
    });
    return out;
}

inline Tensor log(const Tensor& a) {
    Tensor out = make_result(a.shape(), a.requires_grad());
    double* ov = const_cast<double*>(out.value().data());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double x = a.value()[i];
        if (x <= 0.0)
            throw DomainError("log: non-positive input " + std::to_string(x) +
                              " at flat index " + std::to_string(i));
        ov[i] = std::log(x);
    }
    detail::attach(out, {a}, [](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] / p.value[i];
    });
    return out;
}

inline Tensor relu(const Tensor& a) {
    Tensor out = make_result(a.shape(), a.requires_grad());
    double* ov = const_cast<double*>(out.value().data());
    for (std::size_t i = 0; i < a.numel(); ++i) ov[i] = std::max(0.0, a.value()[i]);
    detail::attach(out, {a}, [](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            if (p.value[i] > 0.0) p.grad[i] += o.grad[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Matrix product, reshaping, concatenation
// ---------------------------------------------------------------------------

// Batched matrix product [..., p, q] x [..., q, r] -> [..., p, r]. Leading
// batch dimensions must agree elementwise or broadcast from size 1.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2)
        throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(sa) +
                             " and " + shape_str(sb));
    const std::size_t p = sa[sa.size() - 2], q = sa.back();
    const std::size_t q2 = sb[sb.size() - 2], r = sb.back();
    if (q != q2)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(sa) + " vs " +
                             shape_str(sb));

    const std::size_t rank = std::max(sa.size(), sb.size());
    Shape batch(rank - 2, 1), ba(rank - 2, 1), bb(rank - 2, 1);
    for (std::size_t i = 0; i < sa.size() - 2; ++i)
        ba[rank - 2 - (sa.size() - 2) + i] = sa[i];
    for (std::size_t i = 0; i < sb.size() - 2; ++i)
        bb[rank - 2 - (sb.size() - 2) + i] = sb[i];
    for (std::size_t i = 0; i < rank - 2; ++i) {
        if (ba[i] == bb[i] || bb[i] == 1)
            batch[i] = ba[i];
        else if (ba[i] == 1)
            batch[i] = bb[i];
        else
            throw DimensionError("matmul: batch dimensions disagree, " + shape_str(sa) +
                                 " vs " + shape_str(sb));
    }

    Shape out_shape = batch;
    out_shape.push_back(p);
    out_shape.push_back(r);
    Tensor out = make_result(out_shape, detail::any_grad({a, b}));
    std::fill(const_cast<double*>(out.value().data()),
              const_cast<double*>(out.value().data()) + out.numel(), 0.0);

    // Per-slice operand offsets, honoring broadcast (size-1) batch dims.
    const std::size_t nbatch = shape_numel(batch);
    std::vector<std::size_t> a_of(nbatch), b_of(nbatch);
    std::vector<std::size_t> coord(rank - 2);
    for (std::size_t flat = 0; flat < nbatch; ++flat) {
        std::size_t rem = flat;
        for (std::size_t i = rank - 2; i-- > 0;) {
            coord[i] = rem % batch[i];
            rem /= batch[i];
        }
        std::size_t ia = 0, ib = 0;
        for (std::size_t i = 0; i < rank - 2; ++i) {
            ia = ia * ba[i] + (ba[i] == 1 ? 0 : coord[i]);
            ib = ib * bb[i] + (bb[i] == 1 ? 0 : coord[i]);
        }
        a_of[flat] = ia;
        b_of[flat] = ib;
    }

    const double* av = a.value().data();
    const double* bv = b.value().data();
    double* ov = const_cast<double*>(out.value().data());
    for (std::size_t s = 0; s < nbatch; ++s)
        detail::mm_acc(av + a_of[s] * p * q, bv + b_of[s] * q * r, ov + s * p * r, p, q, r);

    detail::attach(out, {a, b}, [p, q, r, nbatch, a_of, b_of](TensorNode& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t s = 0; s < nbatch; ++s)
                detail::mm_acc_bt(o.grad.data() + s * p * r, pb.value.data() + b_of[s] * q * r,
                                  pa.grad.data() + a_of[s] * p * q, p, q, r);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t s = 0; s < nbatch; ++s)
                detail::mm_acc_at(pa.value.data() + a_of[s] * p * q, o.grad.data() + s * p * r,
                                  pb.grad.data() + b_of[s] * q * r, p, q, r);
        }
    });
    return out;
}

// Swap the last two dimensions.
inline Tensor transpose(const Tensor& a) {
    const Shape& s = a.shape();
    if (s.size() < 2)
        throw DimensionError("transpose: rank must be >= 2, got " + shape_str(s));
    Shape out_shape = s;
    std::swap(out_shape[s.size() - 1], out_shape[s.size() - 2]);
    const std::size_t p = s[s.size() - 2], q = s.back();
    const std::size_t nslices = a.numel() / (p * q);
    Tensor out = make_result(out_shape, a.requires_grad());
    double* ov = const_cast<double*>(out.value().data());
    const double* av = a.value().data();
    for (std::size_t sl = 0; sl < nslices; ++sl)
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j)
                ov[sl * p * q + j * p + i] = av[sl * p * q + i * q + j];
    detail::attach(out, {a}, [p, q, nslices](TensorNode& o) {
        auto& pa = *o.parents[0];
        pa.ensure_grad();
        for (std::size_t sl = 0; sl < nslices; ++sl)
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < q; ++j)
                    pa.grad[sl * p * q + i * q + j] += o.grad[sl * p * q + j * p + i];
    });
    return out;
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(new_shape));
    Tensor out = make_result(std::move(new_shape), a.requires_grad());
    std::copy(a.value().begin(), a.value().end(),
              const_cast<double*>(out.value().data()));
    detail::attach(out, {a}, [](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
    });
    return out;
}

// Concatenate along `axis`; all other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& ts, std::size_t axis) {
    if (ts.empty()) throw ContractError("concat: empty tensor list");
    const Shape& s0 = ts[0].shape();
    if (axis >= s0.size())
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(s0));
    std::size_t axis_total = 0;
    for (const auto& t : ts) {
        const Shape& s = t.shape();
        if (s.size() != s0.size())
            throw DimensionError("concat: rank mismatch " + shape_str(s0) + " vs " +
                                 shape_str(s));
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i])
                throw DimensionError("concat: shape mismatch off axis, " + shape_str(s0) +
                                     " vs " + shape_str(s));
        axis_total += s[axis];
    }
    Shape out_shape = s0;
    out_shape[axis] = axis_total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

    bool rg = false;
    for (const auto& t : ts) rg = rg || t.requires_grad();
    Tensor out = make_result(out_shape, rg);
    double* ov = const_cast<double*>(out.value().data());
    const std::size_t out_row = axis_total * inner;
    std::vector<std::size_t> axis_sizes(ts.size());
    std::size_t off = 0;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const std::size_t ak = ts[k].shape()[axis];
        axis_sizes[k] = ak;
        const double* tv = ts[k].value().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(tv + o * ak * inner, tv + (o + 1) * ak * inner,
                      ov + o * out_row + off * inner);
        off += ak;
    }
    detail::attach(out, ts, [outer, inner, out_row, axis_sizes](TensorNode& o) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < o.parents.size(); ++k) {
            auto& p = *o.parents[k];
            const std::size_t ak = axis_sizes[k];
            if (p.requires_grad) {
                p.ensure_grad();
                for (std::size_t ou = 0; ou < outer; ++ou) {
                    const double* g = o.grad.data() + ou * out_row + off * inner;
                    double* pg = p.grad.data() + ou * ak * inner;
                    for (std::size_t i = 0; i < ak * inner; ++i) pg[i] += g[i];
                }
            }
            off += ak;
        }
    });
    return out;
}

// Contiguous sub-range [begin, end) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape& s = a.shape();
    if (axis >= s.size())
        throw DimensionError("slice: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(s));
    if (begin >= end || end > s[axis])
        throw ContractError("slice: invalid range [" + std::to_string(begin) + ", " +
                            std::to_string(end) + ") on axis of size " +
                            std::to_string(s[axis]));
    Shape out_shape = s;
    out_shape[axis] = end - begin;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

    Tensor out = make_result(out_shape, a.requires_grad());
    double* ov = const_cast<double*>(out.value().data());
    const double* av = a.value().data();
    const std::size_t in_row = s[axis] * inner;
    const std::size_t out_row = (end - begin) * inner;
    for (std::size_t o = 0; o < outer; ++o)
        std::copy(av + o * in_row + begin * inner, av + o * in_row + end * inner,
                  ov + o * out_row);
    detail::attach(out, {a}, [outer, inner, in_row, out_row, begin](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t ou = 0; ou < outer; ++ou) {
            const double* g = o.grad.data() + ou * out_row;
            double* pg = p.grad.data() + ou * in_row + begin * inner;
            for (std::size_t i = 0; i < out_row; ++i) pg[i] += g[i];
        }
    });
    return out;
}

// Stack same-shape tensors along a new leading axis.
inline Tensor stack0(const std::vector<Tensor>& ts) {
    if (ts.empty()) throw ContractError("stack0: empty tensor list");
    std::vector<Tensor> expanded;
    expanded.reserve(ts.size());
    for (const auto& t : ts) {
        Shape s = t.shape();
        s.insert(s.begin(), 1);
        expanded.push_back(reshape(t, s));
    }
    return concat(expanded, 0);
}

// ---------------------------------------------------------------------------
// Softmax, layer norm, losses, reductions
// ---------------------------------------------------------------------------

// Softmax over the last dimension, computed with max subtraction.
inline Tensor softmax(const Tensor& a) {
    const Shape& s = a.shape();
    if (s.empty() || s.back() < 1)
        throw DimensionError("softmax: need a non-empty last dimension, got " + shape_str(s));
    const std::size_t c = s.back();
    const std::size_t rows = a.numel() / c;
    Tensor out = make_result(s, a.requires_grad());
    double* ov = const_cast<double*>(out.value().data());
    const double* av = a.value().data();
    for (std::size_t rix = 0; rix < rows; ++rix) {
        const double* x = av + rix * c;
        double* y = ov + rix * c;
        double m = x[0];
        for (std::size_t i = 1; i < c; ++i) m = std::max(m, x[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            y[i] = std::exp(x[i] - m);
            z += y[i];
        }
        for (std::size_t i = 0; i < c; ++i) y[i] /= z;
    }
    detail::attach(out, {a}, [c, rows](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t rix = 0; rix < rows; ++rix) {
            const double* y = o.value.data() + rix * c;
            const double* g = o.grad.data() + rix * c;
            double* pg = p.grad.data() + rix * c;
            double dot = 0.0;
            for (std::size_t i = 0; i < c; ++i) dot += g[i] * y[i];
            for (std::size_t i = 0; i < c; ++i) pg[i] += y[i] * (g[i] - dot);
        }
    });
    return out;
}

// Row-wise normalization over the last dimension followed by an affine
// gain/bias. Variance is the population variance; eps keeps the zero-variance
// row finite.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps) {
    const Shape& s = x.shape();
    if (s.empty()) throw DimensionError("layer_norm: scalar input");
    const std::size_t f = s.back();
    if (gain.shape() != Shape{f} || bias.shape() != Shape{f})
        throw DimensionError("layer_norm: gain/bias must have shape (" + std::to_string(f) +
                             "), got " + shape_str(gain.shape()) + " and " +
                             shape_str(bias.shape()));
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    const std::size_t rows = x.numel() / f;

    Tensor out = make_result(s, detail::any_grad({x, gain, bias}));
    std::vector<double> inv_std(rows), xhat(x.numel());
    const double* xv = x.value().data();
    double* ov = const_cast<double*>(out.value().data());
    for (std::size_t rix = 0; rix < rows; ++rix) {
        const double* row = xv + rix * f;
        double mean = 0.0;
        for (std::size_t i = 0; i < f; ++i) mean += row[i];
        mean /= static_cast<double>(f);
        double var = 0.0;
        for (std::size_t i = 0; i < f; ++i) {
            const double d = row[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(f);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[rix] = is;
        for (std::size_t i = 0; i < f; ++i) {
            const double h = (row[i] - mean) * is;
            xhat[rix * f + i] = h;
            ov[rix * f + i] = h * gain.value()[i] + bias.value()[i];
        }
    }
    detail::attach(out, {x, gain, bias},
                   [f, rows, inv_std = std::move(inv_std),
                    xhat = std::move(xhat)](TensorNode& o) {
                       auto& px = *o.parents[0];
                       auto& pg = *o.parents[1];
                       auto& pb = *o.parents[2];
                       if (pg.requires_grad) pg.ensure_grad();
                       if (pb.requires_grad) pb.ensure_grad();
                       if (px.requires_grad) px.ensure_grad();
                       for (std::size_t rix = 0; rix < rows; ++rix) {
                           const double* g = o.grad.data() + rix * f;
                           const double* h = xhat.data() + rix * f;
                           if (pg.requires_grad)
                               for (std::size_t i = 0; i < f; ++i) pg.grad[i] += g[i] * h[i];
                           if (pb.requires_grad)
                               for (std::size_t i = 0; i < f; ++i) pb.grad[i] += g[i];
                           if (px.requires_grad) {
                               double mean_dh = 0.0, mean_dh_h = 0.0;
                               for (std::size_t i = 0; i < f; ++i) {
                                   const double dh = g[i] * pg.value[i];
                                   mean_dh += dh;
                                   mean_dh_h += dh * h[i];
                               }
                               mean_dh /= static_cast<double>(f);
                               mean_dh_h /= static_cast<double>(f);
                               double* gx = px.grad.data() + rix * f;
                               for (std::size_t i = 0; i < f; ++i) {
                                   const double dh = g[i] * pg.value[i];
                                   gx[i] += (dh - mean_dh - h[i] * mean_dh_h) * inv_std[rix];
                               }
                           }
                       }
                   });
    return out;
}

constexpr double kLogFloor = 1e-12;

// Negative log-likelihood summed over unmasked positions. `pred` rows are
// probabilities, `gold` rows one-hot (or all-zero for ignored positions).
// `mask`, when defined, has one entry per row; zero entries drop the row.
inline Tensor cross_entropy(const Tensor& pred, const Tensor& gold,
                            const Tensor& mask = Tensor()) {
    if (pred.shape() != gold.shape())
        throw DimensionError("cross_entropy: shape mismatch " + shape_str(pred.shape()) +
                             " vs " + shape_str(gold.shape()));
    const std::size_t c = pred.shape().back();
    const std::size_t rows = pred.numel() / c;
    if (mask.defined() && mask.numel() != rows)
        throw DimensionError("cross_entropy: mask has " + std::to_string(mask.numel()) +
                             " entries for " + std::to_string(rows) + " rows");
    Tensor out = make_result({1}, pred.requires_grad());
    double loss = 0.0;
    for (std::size_t rix = 0; rix < rows; ++rix) {
        if (mask.defined() && mask.value()[rix] == 0.0) continue;
        const double* p = pred.value().data() + rix * c;
        const double* y = gold.value().data() + rix * c;
        for (std::size_t i = 0; i < c; ++i)
            if (y[i] != 0.0) loss -= y[i] * std::log(std::max(p[i], kLogFloor));
    }
    const_cast<double*>(out.value().data())[0] = loss;
    std::vector<Tensor> inputs = {pred, gold};
    if (mask.defined()) inputs.push_back(mask);
    detail::attach(out, inputs, [c, rows, masked = mask.defined()](TensorNode& o) {
        auto& pp = *o.parents[0];
        auto& pg = *o.parents[1];
        const double* mv = masked ? o.parents[2]->value.data() : nullptr;
        if (!pp.requires_grad) return;
        pp.ensure_grad();
        const double g = o.grad[0];
        for (std::size_t rix = 0; rix < rows; ++rix) {
            if (mv && mv[rix] == 0.0) continue;
            const double* p = pp.value.data() + rix * c;
            const double* y = pg.value.data() + rix * c;
            double* dp = pp.grad.data() + rix * c;
            for (std::size_t i = 0; i < c; ++i)
                if (y[i] != 0.0 && p[i] >= kLogFloor) dp[i] -= g * y[i] / p[i];
        }
    });
    return out;
}

// Per-element binary cross-entropy against independent probabilities, used by
// the multilabel relation head. Same masking and clamping policy as
// cross_entropy.
inline Tensor binary_cross_entropy(const Tensor& pred, const Tensor& gold,
                                   const Tensor& mask = Tensor()) {
    if (pred.shape() != gold.shape())
        throw DimensionError("binary_cross_entropy: shape mismatch " +
                             shape_str(pred.shape()) + " vs " + shape_str(gold.shape()));
    const std::size_t c = pred.shape().back();
    const std::size_t rows = pred.numel() / c;
    if (mask.defined() && mask.numel() != rows)
        throw DimensionError("binary_cross_entropy: mask has " +
                             std::to_string(mask.numel()) + " entries for " +
                             std::to_string(rows) + " rows");
    Tensor out = make_result({1}, pred.requires_grad());
    double loss = 0.0;
    for (std::size_t rix = 0; rix < rows; ++rix) {
        if (mask.defined() && mask.value()[rix] == 0.0) continue;
        const double* p = pred.value().data() + rix * c;
        const double* y = gold.value().data() + rix * c;
        for (std::size_t i = 0; i < c; ++i)
            loss -= y[i] * std::log(std::max(p[i], kLogFloor)) +
                    (1.0 - y[i]) * std::log(std::max(1.0 - p[i], kLogFloor));
    }
    const_cast<double*>(out.value().data())[0] = loss;
    std::vector<Tensor> inputs = {pred, gold};
    if (mask.defined()) inputs.push_back(mask);
    detail::attach(out, inputs, [c, rows, masked = mask.defined()](TensorNode& o) {
        auto& pp = *o.parents[0];
        auto& pg = *o.parents[1];
        const double* mv = masked ? o.parents[2]->value.data() : nullptr;
        if (!pp.requires_grad) return;
        pp.ensure_grad();
        const double g = o.grad[0];
        for (std::size_t rix = 0; rix < rows; ++rix) {
            if (mv && mv[rix] == 0.0) continue;
            const double* p = pp.value.data() + rix * c;
            const double* y = pg.value.data() + rix * c;
            double* dp = pp.grad.data() + rix * c;
            for (std::size_t i = 0; i < c; ++i) {
                if (p[i] >= kLogFloor) dp[i] -= g * y[i] / p[i];
                if (1.0 - p[i] >= kLogFloor) dp[i] += g * (1.0 - y[i]) / (1.0 - p[i]);
            }
        }
    });
    return out;
}

// Sum of all elements.
inline Tensor sum(const Tensor& a) {
    Tensor out = make_result({1}, a.requires_grad());
    double acc = 0.0;
    for (double v : a.value()) acc += v;
    const_cast<double*>(out.value().data())[0] = acc;
    detail::attach(out, {a}, [](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (double& g : p.grad) g += o.grad[0];
    });
    return out;
}

// Row gather: out[t] = table[ids[t]]. Gradient scatter-adds into the table.
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    const Shape& s = table.shape();
    if (s.size() != 2) throw DimensionError("gather_rows: table must be 2-D, got " + shape_str(s));
    const std::size_t vocab = s[0], dim = s[1];
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= vocab)
            throw VocabError("gather_rows: id " + std::to_string(id) +
                             " outside vocabulary of size " + std::to_string(vocab));
    Tensor out = make_result({ids.size(), dim}, table.requires_grad());
    double* ov = const_cast<double*>(out.value().data());
    for (std::size_t t = 0; t < ids.size(); ++t)
        std::copy(table.value().begin() + ids[t] * dim,
                  table.value().begin() + (ids[t] + 1) * dim, ov + t * dim);
    detail::attach(out, {table}, [ids, dim](TensorNode& o) {
        auto& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t t = 0; t < ids.size(); ++t) {
            const double* g = o.grad.data() + t * dim;
            double* pg = p.grad.data() + static_cast<std::size_t>(ids[t]) * dim;
            for (std::size_t i = 0; i < dim; ++i) pg[i] += g[i];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

// Topologically ordered record of the operations reachable from one output.
// Replaying `nodes` in reverse accumulates gradients into every
// requires_grad leaf exactly once per backward call.
struct Tape {
    std::vector<TensorNode*> nodes;  // dependency order; the output is last
};

inline Tape build_tape(const Tensor& output) {
    Tape tape;
    std::unordered_set<TensorNode*> visited;
    // Iterative post-order DFS: parents precede their consumers.
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(output.node().get(), 0);
    visited.insert(output.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            tape.nodes.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

// Reverse-mode gradient accumulation from a scalar loss. Gradients add onto
// whatever is already stored; call zero_grads (or Tensor::zero_grad) between
// optimization steps.
inline void backward(const Tensor& loss) {
    if (!loss.is_scalar())
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;
    Tape tape = build_tape(loss);
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

inline void zero_grads(std::span<Tensor> params) {
    for (auto& p : params) p.zero_grad();
}

// Detach every node reachable from `root`. Long recorded graphs otherwise
// tear down by recursive shared_ptr release, which can exhaust the stack.
inline void release_graph(const Tensor& root) {
    if (!root.defined()) return;
    Tape tape = build_tape(root);
    for (TensorNode* n : tape.nodes) {
        n->parents.clear();
        n->backward_fn = nullptr;
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

namespace detail {

inline double grad_check_impl(const std::function<Tensor()>& f, Tensor x, double h,
                              const std::vector<std::size_t>& coords) {
    if (!x.requires_grad())
        throw ContractError("grad_check: x does not require gradients");
    x.zero_grad();
    Tensor loss = f();
    if (!loss.is_scalar())
        throw ContractError("grad_check: f must be scalar-valued, got " +
                            shape_str(loss.shape()));
    backward(loss);
    std::vector<double> analytic(x.numel(), 0.0);
    if (!x.grad().empty()) analytic.assign(x.grad().begin(), x.grad().end());

    double worst = 0.0;
    double* xv = x.data();
    for (std::size_t i : coords) {
        const double saved = xv[i];
        xv[i] = saved + h;
        const double up = f().item();
        xv[i] = saved - h;
        const double down = f().item();
        xv[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace detail

// Central-difference check of d f / d x against the reverse-mode gradient.
// Returns max over coordinates of |analytic - numeric| / max(1, |analytic|,
// |numeric|). `f` must be a deterministic scalar function closing over x.
inline double grad_check(const std::function<Tensor()>& f, Tensor x, double h = 1e-5) {
    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), 0);
    return detail::grad_check_impl(f, x, h, coords);
}

// Same check restricted to at most `max_coords` distinct coordinates drawn
// from `rng`; used where a full sweep would be needlessly slow.
inline double grad_check_sampled(const std::function<Tensor()>& f, Tensor x, double h,
                                 std::size_t max_coords, Rng& rng) {
    const std::size_t n = x.numel();
    if (max_coords >= n) return grad_check(f, x, h);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    rng.shuffle(all);
    all.resize(max_coords);
    std::sort(all.begin(), all.end());
    return detail::grad_check_impl(f, x, h, all);
}

// Argmax along the last dimension, one result per row.
inline std::vector<int> argmax_rows(const Tensor& t) {
    const std::size_t c = t.shape().back();
    const std::size_t rows = t.numel() / c;
    std::vector<int> out(rows);
    for (std::size_t rix = 0; rix < rows; ++rix) {
        const double* row = t.value().data() + rix * c;
        out[rix] = static_cast<int>(std::max_element(row, row + c) - row);
    }
    return out;
}

}  // namespace relex
