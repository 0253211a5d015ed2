#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "unlearn/errors.hpp"
#include "unlearn/rng.hpp"

namespace unlearn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor of doubles. Data is shared and treated as immutable
// once constructed; `node` points into the active Tape when the tensor
// participates in a recorded computation (-1 otherwise).
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    int node = -1;

    Tensor() : data(std::make_shared<std::vector<double>>()) {}

    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)) {
        if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
            throw DimensionError("Tensor: shape " + shape_str(shape) + " does not match " +
                                 std::to_string(values.size()) + " values");
        for (auto d : shape)
            if (d <= 0) throw DimensionError("Tensor: nonpositive dimension in " + shape_str(shape));
        data = std::make_shared<std::vector<double>>(std::move(values));
    }

    static Tensor zeros(Shape s) {
        auto n = shape_numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    }

    static Tensor full(Shape s, double v) {
        auto n = shape_numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::int64_t numel() const { return shape_numel(shape); }
    std::int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    bool is_scalar() const { return numel() == 1; }
    double item() const {
        if (!is_scalar()) throw ContractError("Tensor::item: tensor is not scalar, shape " + shape_str(shape));
        return (*data)[0];
    }
    double operator()(std::int64_t r, std::int64_t c) const { return (*data)[r * cols() + c]; }
    const std::vector<double>& vec() const { return *data; }

    bool same_values(const Tensor& o) const { return shape == o.shape && *data == *o.data; }
};

inline void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericError(std::string(op) + ": non-finite value produced, aborting step");
}

// Define-by-run tape: nodes are recorded in execution order (inputs always
// precede consumers), one backward sweep visits each node once in reverse.
// Single-owner; rebuilt for every training step.
class Tape {
public:
    // Registers a leaf (typically a parameter). Returns a copy wired to the
    // tape so downstream ops record gradients for it.
    Tensor leaf(const Tensor& t) {
        Tensor out = t;
        out.node = new_node(t.numel());
        return out;
    }

    void backward(const Tensor& loss) {
        if (loss.node < 0) throw ContractError("backward: loss is not recorded on this tape");
        if (!loss.is_scalar()) throw ContractError("backward: loss must be scalar, shape " + shape_str(loss.shape));
        for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
        grads_[static_cast<std::size_t>(loss.node)][0] = 1.0;
        for (std::size_t i = backs_.size(); i-- > 0;)
            if (backs_[i]) backs_[i](*this);
    }

    // Gradient of the last backward() w.r.t. the tensor recorded as `node`.
    const std::vector<double>& grad(int node) const { return grads_[static_cast<std::size_t>(node)]; }
    std::vector<double>& grad_mut(int node) { return grads_[static_cast<std::size_t>(node)]; }

    int new_node(std::int64_t size) {
        backs_.emplace_back();
        grads_.emplace_back(static_cast<std::size_t>(size), 0.0);
        return static_cast<int>(backs_.size()) - 1;
    }

    void set_back(int node, std::function<void(Tape&)> back) {
        backs_[static_cast<std::size_t>(node)] = std::move(back);
    }

    std::size_t num_nodes() const { return backs_.size(); }

private:
    std::vector<std::function<void(Tape&)>> backs_;
    std::vector<std::vector<double>> grads_;
};

namespace detail {

inline bool recording(Tape* tape, std::initializer_list<int> parents) {
    if (!tape) return false;
    for (int p : parents)
        if (p >= 0) return true;
    return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / shape ops
// ---------------------------------------------------------------------------

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
}

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.vec().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] + b.vec()[i];
    check_finite("add", out);
    Tensor r(a.shape, std::move(out));
    if (detail::recording(tape, {a.node, b.node})) {
        int an = a.node, bn = b.node, id = tape->new_node(r.numel());
        r.node = id;
        tape->set_back(id, [an, bn, id](Tape& t) {
            const auto& g = t.grad(id);
            if (an >= 0) {
                auto& ga = t.grad_mut(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn >= 0) {
                auto& gb = t.grad_mut(bn);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return r;
}

inline Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.vec().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] - b.vec()[i];
    check_finite("sub", out);
    Tensor r(a.shape, std::move(out));
    if (detail::recording(tape, {a.node, b.node})) {
        int an = a.node, bn = b.node, id = tape->new_node(r.numel());
        r.node = id;
        tape->set_back(id, [an, bn, id](Tape& t) {
            const auto& g = t.grad(id);
            if (an >= 0) {
                auto& ga = t.grad_mut(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn >= 0) {
                auto& gb = t.grad_mut(bn);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return r;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.vec().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] * b.vec()[i];
    check_finite("mul", out);
    Tensor r(a.shape, std::move(out));
    if (detail::recording(tape, {a.node, b.node})) {
        int an = a.node, bn = b.node, id = tape->new_node(r.numel());
        auto ad = a.data, bd = b.data;
        r.node = id;
        tape->set_back(id, [an, bn, id, ad, bd](Tape& t) {
            const auto& g = t.grad(id);
            if (an >= 0) {
                auto& ga = t.grad_mut(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bd)[i];
            }
            if (bn >= 0) {
                auto& gb = t.grad_mut(bn);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*ad)[i];
            }
        });
    }
    return r;
}

inline Tensor scale(Tape* tape, const Tensor& a, double c) {
    std::vector<double> out(a.vec().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] * c;
    check_finite("scale", out);
    Tensor r(a.shape, std::move(out));
    if (detail::recording(tape, {a.node})) {
        int an = a.node, id = tape->new_node(r.numel());
        r.node = id;
        tape->set_back(id, [an, c, id](Tape& t) {
            const auto& g = t.grad(id);
            auto& ga = t.grad_mut(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return r;
}

// a: [m x n], v: [n] broadcast over rows (bias add).
inline Tensor add_rowvec(Tape* tape, const Tensor& a, const Tensor& v) {
    if (a.shape.size() != 2 || v.numel() != a.cols())
        throw DimensionError("add_rowvec: " + shape_str(a.shape) + " vs " + shape_str(v.shape));
    std::int64_t m = a.rows(), n = a.cols();
    std::vector<double> out(a.vec().size());
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[i * n + j] = a.vec()[i * n + j] + v.vec()[j];
    check_finite("add_rowvec", out);
    Tensor r(a.shape, std::move(out));
    if (detail::recording(tape, {a.node, v.node})) {
        int an = a.node, vn = v.node, id = tape->new_node(r.numel());
        r.node = id;
        tape->set_back(id, [an, vn, m, n, id](Tape& t) {
            const auto& g = t.grad(id);
            if (an >= 0) {
                auto& ga = t.grad_mut(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (vn >= 0) {
                auto& gv = t.grad_mut(vn);
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
            }
        });
    }
    return r;
}

inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.cols() != b.rows())
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape) + " x " +
                             shape_str(b.shape));
    std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    const auto& A = a.vec();
    const auto& B = b.vec();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
            double av = A[i * k + p];
            const double* brow = B.data() + p * n;
            double* orow = out.data() + i * n;
            for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    check_finite("matmul", out);
    Tensor r({m, n}, std::move(out));
    if (detail::recording(tape, {a.node, b.node})) {
        int an = a.node, bn = b.node, id = tape->new_node(r.numel());
        auto ad = a.data, bd = b.data;
        r.node = id;
        tape->set_back(id, [an, bn, id, ad, bd, m, k, n](Tape& t) {
            const auto& g = t.grad(id);
            if (an >= 0) {  // dA = dC * B^T
                auto& ga = t.grad_mut(an);
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j) {
                        double gv = g[i * n + j];
                        const double* brow = bd->data() + 0;
                        for (std::int64_t p = 0; p < k; ++p) ga[i * k + p] += gv * brow[p * n + j];
                    }
            }
            if (bn >= 0) {  // dB = A^T * dC
                auto& gb = t.grad_mut(bn);
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t p = 0; p < k; ++p) {
                        double av = (*ad)[i * k + p];
                        const double* grow = g.data() + i * n;
                        for (std::int64_t j = 0; j < n; ++j) gb[p * n + j] += av * grow[j];
                    }
            }
        });
    }
    return r;
}

inline Tensor transpose(Tape* tape, const Tensor& a) {
    if (a.shape.size() != 2) throw DimensionError("transpose: expects a matrix, got " + shape_str(a.shape));
    std::int64_t m = a.rows(), n = a.cols();
    std::vector<double> out(a.vec().size());
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = a.vec()[i * n + j];
    Tensor r({n, m}, std::move(out));
    if (detail::recording(tape, {a.node})) {
        int an = a.node, id = tape->new_node(r.numel());
        r.node = id;
        tape->set_back(id, [an, id, m, n](Tape& t) {
            const auto& g = t.grad(id);
            auto& ga = t.grad_mut(an);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        });
    }
    return r;
}

inline Tensor sum_all(Tape* tape, const Tensor& a) {
    double s = 0;
    for (double x : a.vec()) s += x;
    check_finite("sum", {s});
    Tensor r = Tensor::scalar(s);
    if (detail::recording(tape, {a.node})) {
        int an = a.node, id = tape->new_node(1);
        r.node = id;
        tape->set_back(id, [an, id](Tape& t) {
            double g = t.grad(id)[0];
            auto& ga = t.grad_mut(an);
            for (auto& v : ga) v += g;
        });
    }
    return r;
}

// Slice of columns [c0, c1): used to split attention heads.
inline Tensor slice_cols(Tape* tape, const Tensor& a, std::int64_t c0, std::int64_t c1) {
    if (a.shape.size() != 2 || c0 < 0 || c1 > a.cols() || c0 >= c1)
        throw DimensionError("slice_cols: bad range on " + shape_str(a.shape));
    std::int64_t m = a.rows(), n = a.cols(), w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(m * w));
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < w; ++j) out[i * w + j] = a.vec()[i * n + c0 + j];
    Tensor r({m, w}, std::move(out));
    if (detail::recording(tape, {a.node})) {
        int an = a.node, id = tape->new_node(r.numel());
        r.node = id;
        tape->set_back(id, [an, id, m, n, w, c0](Tape& t) {
            const auto& g = t.grad(id);
            auto& ga = t.grad_mut(an);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < w; ++j) ga[i * n + c0 + j] += g[i * w + j];
        });
    }
    return r;
}

inline Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    std::int64_t m = parts[0].rows(), n = 0;
    for (const auto& p : parts) {
        if (p.shape.size() != 2 || p.rows() != m)
            throw DimensionError("concat_cols: row mismatch");
        n += p.cols();
    }
    std::vector<double> out(static_cast<std::size_t>(m * n));
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::int64_t w = p.cols();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < w; ++j) out[i * n + off + j] = p.vec()[i * w + j];
        off += w;
    }
    Tensor r({m, n}, std::move(out));
    bool rec = false;
    for (const auto& p : parts) rec = rec || p.node >= 0;
    if (tape && rec) {
        std::vector<int> pn;
        std::vector<std::int64_t> widths;
        for (const auto& p : parts) {
            pn.push_back(p.node);
            widths.push_back(p.cols());
        }
        int id = tape->new_node(r.numel());
        r.node = id;
        tape->set_back(id, [pn, widths, id, m, n](Tape& t) {
            const auto& g = t.grad(id);
            std::int64_t off2 = 0;
            for (std::size_t q = 0; q < pn.size(); ++q) {
                std::int64_t w = widths[q];
                if (pn[q] >= 0) {
                    auto& gp = t.grad_mut(pn[q]);
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + off2 + j];
                }
                off2 += w;
            }
        });
    }
    return r;
}

inline Tensor concat_rows(Tape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    std::int64_t n = parts[0].cols(), m = 0;
    for (const auto& p : parts) {
        if (p.shape.size() != 2 || p.cols() != n)
            throw DimensionError("concat_rows: column mismatch");
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m * n));
    for (const auto& p : parts) out.insert(out.end(), p.vec().begin(), p.vec().end());
    Tensor r({m, n}, std::move(out));
    bool rec = false;
    for (const auto& p : parts) rec = rec || p.node >= 0;
    if (tape && rec) {
        std::vector<int> pn;
        std::vector<std::int64_t> sizes;
        for (const auto& p : parts) {
            pn.push_back(p.node);
            sizes.push_back(p.numel());
        }
        int id = tape->new_node(r.numel());
        r.node = id;
        tape->set_back(id, [pn, sizes, id](Tape& t) {
            const auto& g = t.grad(id);
            std::size_t off = 0;
            for (std::size_t q = 0; q < pn.size(); ++q) {
                if (pn[q] >= 0) {
                    auto& gp = t.grad_mut(pn[q]);
                    for (std::int64_t i = 0; i < sizes[q]; ++i) gp[i] += g[off + i];
                }
                off += static_cast<std::size_t>(sizes[q]);
            }
        });
    }
    return r;
}

// Row gather from an embedding table; backward scatter-adds.
inline Tensor embedding_rows(Tape* tape, const Tensor& table, const std::vector<int>& ids) {
    if (table.shape.size() != 2) throw DimensionError("embedding_rows: table must be a matrix");
    std::int64_t v = table.rows(), d = table.cols();
    for (int i : ids)
        if (i < 0 || i >= v) throw DataError("embedding_rows: id " + std::to_string(i) + " out of range");
    std::int64_t m = static_cast<std::int64_t>(ids.size());
    std::vector<double> out(static_cast<std::size_t>(m * d));
    for (std::int64_t i = 0; i < m; ++i)
        std::copy_n(table.vec().data() + static_cast<std::int64_t>(ids[i]) * d, d, out.data() + i * d);
    Tensor r({m, d}, std::move(out));
    if (detail::recording(tape, {table.node})) {
        int tn = table.node, id = tape->new_node(r.numel());
        r.node = id;
        tape->set_back(id, [tn, id, ids, d](Tape& t) {
            const auto& g = t.grad(id);
            auto& gt = t.grad_mut(tn);
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::int64_t j = 0; j < d; ++j)
                    gt[static_cast<std::int64_t>(ids[i]) * d + j] += g[i * d + j];
        });
    }
    return r;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalizations
// ---------------------------------------------------------------------------

// Row-wise log-softmax over the last axis, max-subtracted for stability.
inline Tensor log_softmax_rows(Tape* tape, const Tensor& a) {
    std::int64_t c = a.shape.empty() ? 0 : a.shape.back();
    if (c < 1) throw DimensionError("log_softmax: empty class axis in " + shape_str(a.shape));
    std::int64_t m = a.numel() / c;
    std::vector<double> out(a.vec().size());
    for (std::int64_t i = 0; i < m; ++i) {
        const double* row = a.vec().data() + i * c;
        double mx = row[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double s = 0;
        for (std::int64_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
        double lse = mx + std::log(s);
        for (std::int64_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
    }
    check_finite("log_softmax", out);
    Tensor r(a.shape, std::move(out));
    if (detail::recording(tape, {a.node})) {
        int an = a.node, id = tape->new_node(r.numel());
        auto od = r.data;
        r.node = id;
        tape->set_back(id, [an, id, od, m, c](Tape& t) {
            const auto& g = t.grad(id);
            auto& ga = t.grad_mut(an);
            for (std::int64_t i = 0; i < m; ++i) {
                double gs = 0;
                for (std::int64_t j = 0; j < c; ++j) gs += g[i * c + j];
                for (std::int64_t j = 0; j < c; ++j)
                    ga[i * c + j] += g[i * c + j] - std::exp((*od)[i * c + j]) * gs;
            }
        });
    }
    return r;
}

inline Tensor softmax_rows(Tape* tape, const Tensor& a) {
    std::int64_t c = a.shape.empty() ? 0 : a.shape.back();
    if (c < 1) throw DimensionError("softmax: empty class axis in " + shape_str(a.shape));
    std::int64_t m = a.numel() / c;
    std::vector<double> out(a.vec().size());
    for (std::int64_t i = 0; i < m; ++i) {
        const double* row = a.vec().data() + i * c;
        double mx = row[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double s = 0;
        for (std::int64_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(row[j] - mx);
            s += out[i * c + j];
        }
        for (std::int64_t j = 0; j < c; ++j) out[i * c + j] /= s;
    }
    check_finite("softmax", out);
    Tensor r(a.shape, std::move(out));
    if (detail::recording(tape, {a.node})) {
        int an = a.node, id = tape->new_node(r.numel());
        auto od = r.data;
        r.node = id;
        tape->set_back(id, [an, id, od, m, c](Tape& t) {
            const auto& g = t.grad(id);
            auto& ga = t.grad_mut(an);
            for (std::int64_t i = 0; i < m; ++i) {
                double dot = 0;
                for (std::int64_t j = 0; j < c; ++j) dot += g[i * c + j] * (*od)[i * c + j];
                for (std::int64_t j = 0; j < c; ++j)
                    ga[i * c + j] += (*od)[i * c + j] * (g[i * c + j] - dot);
            }
        });
    }
    return r;
}

// Smooth tanh-form gelu; kink-free so finite differences stay reliable.
inline Tensor gelu(Tape* tape, const Tensor& a) {
    static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    static constexpr double kA = 0.044715;
    std::vector<double> out(a.vec().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = a.vec()[i];
        out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
    }
    check_finite("gelu", out);
    Tensor r(a.shape, std::move(out));
    if (detail::recording(tape, {a.node})) {
        int an = a.node, id = tape->new_node(r.numel());
        auto ad = a.data;
        r.node = id;
        tape->set_back(id, [an, id, ad](Tape& t) {
            const auto& g = t.grad(id);
            auto& ga = t.grad_mut(an);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double x = (*ad)[i];
                double u = kC * (x + kA * x * x * x);
                double th = std::tanh(u);
                double du = kC * (1.0 + 3.0 * kA * x * x);
                ga[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
            }
        });
    }
    return r;
}

// Per-row layer normalization with learned gain/bias.
inline Tensor layer_norm_rows(Tape* tape, const Tensor& a, const Tensor& gain, const Tensor& bias,
                              double eps = 1e-5) {
    if (a.shape.size() != 2 || gain.numel() != a.cols() || bias.numel() != a.cols())
        throw DimensionError("layer_norm: " + shape_str(a.shape) + " with gain " + shape_str(gain.shape));
    std::int64_t m = a.rows(), n = a.cols();
    std::vector<double> out(a.vec().size());
    auto xhat = std::make_shared<std::vector<double>>(a.vec().size());
    auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) {
        const double* row = a.vec().data() + i * n;
        double mu = 0;
        for (std::int64_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<double>(n);
        double var = 0;
        for (std::int64_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(n);
        double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[static_cast<std::size_t>(i)] = rs;
        for (std::int64_t j = 0; j < n; ++j) {
            double xh = (row[j] - mu) * rs;
            (*xhat)[i * n + j] = xh;
            out[i * n + j] = gain.vec()[j] * xh + bias.vec()[j];
        }
    }
    check_finite("layer_norm", out);
    Tensor r(a.shape, std::move(out));
    if (detail::recording(tape, {a.node, gain.node, bias.node})) {
        int an = a.node, gn = gain.node, bn = bias.node, id = tape->new_node(r.numel());
        auto gd = gain.data;
        r.node = id;
        tape->set_back(id, [an, gn, bn, id, gd, xhat, rstd, m, n](Tape& t) {
            const auto& g = t.grad(id);
            for (std::int64_t i = 0; i < m; ++i) {
                if (gn >= 0) {
                    auto& gg = t.grad_mut(gn);
                    for (std::int64_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * (*xhat)[i * n + j];
                }
                if (bn >= 0) {
                    auto& gb = t.grad_mut(bn);
                    for (std::int64_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                }
                if (an >= 0) {
                    auto& ga = t.grad_mut(an);
                    double rs = (*rstd)[static_cast<std::size_t>(i)];
                    double s1 = 0, s2 = 0;
                    for (std::int64_t j = 0; j < n; ++j) {
                        double dy = g[i * n + j] * (*gd)[j];
                        s1 += dy;
                        s2 += dy * (*xhat)[i * n + j];
                    }
                    s1 /= static_cast<double>(n);
                    s2 /= static_cast<double>(n);
                    for (std::int64_t j = 0; j < n; ++j) {
                        double dy = g[i * n + j] * (*gd)[j];
                        ga[i * n + j] += rs * (dy - s1 - (*xhat)[i * n + j] * s2);
                    }
                }
            }
        });
    }
    return r;
}

// L2-normalize each row; rows with tiny norm are left unscaled.
inline Tensor l2_normalize_rows(Tape* tape, const Tensor& a) {
    if (a.shape.size() != 2) throw DimensionError("l2_normalize: expects a matrix");
    std::int64_t m = a.rows(), n = a.cols();
    std::vector<double> out(a.vec().size());
    auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) {
        const double* row = a.vec().data() + i * n;
        double s = 0;
        for (std::int64_t j = 0; j < n; ++j) s += row[j] * row[j];
        double nm = std::sqrt(s);
        if (nm < 1e-12) nm = 1.0;
        (*norms)[static_cast<std::size_t>(i)] = nm;
        for (std::int64_t j = 0; j < n; ++j) out[i * n + j] = row[j] / nm;
    }
    check_finite("l2_normalize", out);
    Tensor r(a.shape, std::move(out));
    if (detail::recording(tape, {a.node})) {
        int an = a.node, id = tape->new_node(r.numel());
        auto od = r.data;
        r.node = id;
        tape->set_back(id, [an, id, od, norms, m, n](Tape& t) {
            const auto& g = t.grad(id);
            auto& ga = t.grad_mut(an);
            for (std::int64_t i = 0; i < m; ++i) {
                double dot = 0;
                for (std::int64_t j = 0; j < n; ++j) dot += g[i * n + j] * (*od)[i * n + j];
                double nm = (*norms)[static_cast<std::size_t>(i)];
                for (std::int64_t j = 0; j < n; ++j)
                    ga[i * n + j] += (g[i * n + j] - (*od)[i * n + j] * dot) / nm;
            }
        });
    }
    return r;
}

// Inverted dropout: zero with probability `rate`, survivors scaled by
// 1/(1-rate). Identity when train == false.
inline Tensor dropout(Tape* tape, const Tensor& a, double rate, Rng& rng, bool train = true) {
    if (rate < 0.0 || rate >= 1.0)
        throw ParameterError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
    if (!train || rate == 0.0) return a;
    double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(a.vec().size());
    std::vector<double> out(a.vec().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
        (*mask)[i] = m;
        out[i] = a.vec()[i] * m;
    }
    check_finite("dropout", out);
    Tensor r(a.shape, std::move(out));
    if (detail::recording(tape, {a.node})) {
        int an = a.node, id = tape->new_node(r.numel());
        r.node = id;
        tape->set_back(id, [an, id, mask](Tape& t) {
            const auto& g = t.grad(id);
            auto& ga = t.grad_mut(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
        });
    }
    return r;
}

// Weighted negative log-likelihood over rows of log-probabilities:
// -(sum_j w_j * logp[j, label_j]). Caller divides by the weight total.
inline Tensor nll_rows(Tape* tape, const Tensor& logp, const std::vector<int>& labels,
                       const std::vector<double>& weights) {
    if (logp.shape.size() != 2) throw DimensionError("nll_rows: expects [rows x classes]");
    std::int64_t m = logp.rows(), c = logp.cols();
    if (static_cast<std::int64_t>(labels.size()) != m || weights.size() != labels.size())
        throw ContractError("nll_rows: labels/weights length mismatch");
    double loss = 0;
    for (std::int64_t i = 0; i < m; ++i) {
        int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c) throw DataError("nll_rows: label " + std::to_string(y) + " out of range [0," +
                                             std::to_string(c) + ")");
        loss -= weights[static_cast<std::size_t>(i)] * logp.vec()[i * c + y];
    }
    check_finite("nll", {loss});
    Tensor r = Tensor::scalar(loss);
    if (detail::recording(tape, {logp.node})) {
        int pn = logp.node, id = tape->new_node(1);
        r.node = id;
        tape->set_back(id, [pn, id, labels, weights, c](Tape& t) {
            double g = t.grad(id)[0];
            auto& gp = t.grad_mut(pn);
            for (std::size_t i = 0; i < labels.size(); ++i)
                gp[static_cast<std::int64_t>(i) * c + labels[i]] -= g * weights[i];
        });
    }
    return r;
}

}  // namespace unlearn
