#include "treeman/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "treeman/error.hpp"

namespace treeman::ad {

namespace {

bool any_grad(std::initializer_list<const Tensor*> inputs) {
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank)
        throw Error(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                    shape_string(x.shape()));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Softmax over groups of `len` elements spaced by `stride`, starting at each
// of `starts`.
void softmax_groups(std::span<const double> x, std::span<double> y, std::size_t n_groups, std::size_t len,
                    std::size_t group_step, std::size_t stride) {
    for (std::size_t g = 0; g < n_groups; ++g) {
        const std::size_t base = g * group_step;
        double hi = x[base];
        for (std::size_t k = 1; k < len; ++k) hi = std::max(hi, x[base + k * stride]);
        double sum = 0.0;
        for (std::size_t k = 0; k < len; ++k) {
            const double e = std::exp(x[base + k * stride] - hi);
            y[base + k * stride] = e;
            sum += e;
        }
        for (std::size_t k = 0; k < len; ++k) y[base + k * stride] /= sum;
    }
}

void softmax_groups_backward(std::span<const double> y, std::span<const double> gy, std::span<double> gx,
                             std::size_t n_groups, std::size_t len, std::size_t group_step, std::size_t stride) {
    for (std::size_t g = 0; g < n_groups; ++g) {
        const std::size_t base = g * group_step;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += gy[base + k * stride] * y[base + k * stride];
        for (std::size_t k = 0; k < len; ++k) {
            const std::size_t i = base + k * stride;
            gx[i] += y[i] * (gy[i] - dot);
        }
    }
}

}  // namespace

std::string shape_string(const Shape& shape) {
    std::ostringstream ss;
    ss << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) ss << (i ? "x" : "") << shape[i];
    ss << ']';
    return ss.str();
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    if (shape.size() > 3) throw Error("tensor rank > 3 unsupported: " + shape_string(shape));
    auto node = std::make_shared<Node>();
    node->value.assign(shape_size(shape), 0.0);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
    if (values.size() != shape_size(shape))
        throw Error("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                    shape_string(shape));
    Tensor t = zeros(std::move(shape));
    t.node_->value = std::move(values);
    return t;
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    Tensor t = zeros({}, requires_grad);
    t.node_->value[0] = v;
    return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
    if (rank() != 2) throw Error("rows() on non-matrix " + shape_string(shape()));
    return shape()[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw Error("cols() on non-matrix " + shape_string(shape()));
    return shape()[1];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
std::span<double> Tensor::values() { return node_->value; }
std::span<const double> Tensor::values() const { return node_->value; }

double Tensor::item() const {
    if (size() != 1) throw Error("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

std::span<double> Tensor::grad() { return node_->grad; }
std::span<const double> Tensor::grad() const { return node_->grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

void Tensor::zero_grad() const {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::vector<double>& Tensor::grad_buffer() const {
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

// --- Tape -------------------------------------------------------------------

void Tape::record(std::function<void()> backward_rule) {
    if (recording_) rules_.push_back(std::move(backward_rule));
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw Error("backward needs a scalar loss, got " + (loss.defined() ? shape_string(loss.shape()) : "undefined"));
    Tensor seed = loss;
    seed.grad_buffer()[0] += 1.0;
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
    rules_.clear();
}

// --- ops --------------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw Error("matmul: shape mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    Tensor out = Tensor::zeros({m, n}, any_grad({&a, &b}));
    const auto av = a.values();
    const auto bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
        }
    }
    if (out.requires_grad()) {
        tape.record([a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad_buffer();
                const auto bv = b.values();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
                        ga[i * k + p] += acc;
                    }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad_buffer();
                const auto av = a.values();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                    }
            }
        });
    }
    return out;
}

Tensor transpose(Tape& tape, const Tensor& x) {
    require_rank(x, 2, "transpose");
    const std::size_t r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({c, r}, x.requires_grad());
    const auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = xv[i * c + j];
    if (out.requires_grad()) {
        tape.record([x, out, r, c]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
        });
    }
    return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size())
        throw Error("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
    Tensor out = Tensor::zeros(std::move(shape), x.requires_grad());
    std::copy(x.values().begin(), x.values().end(), out.values().begin());
    if (out.requires_grad()) {
        tape.record([x, out]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw Error("add: shape mismatch " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
    Tensor out = Tensor::zeros(a.shape(), any_grad({&a, &b}));
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = a.values()[i] + b.values()[i];
    if (out.requires_grad()) {
        tape.record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            for (const Tensor* t : {&a, &b}) {
                if (!t->requires_grad()) continue;
                auto& gt = t->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
            }
        });
    }
    return out;
}

Tensor add_row(Tape& tape, const Tensor& x, const Tensor& row) {
    require_rank(x, 2, "add_row");
    const std::size_t n = x.rows(), k = x.cols();
    if (row.size() != k || row.rank() > 2 || (row.rank() == 2 && row.rows() != 1))
        throw Error("add_row: cannot broadcast " + shape_string(row.shape()) + " over " + shape_string(x.shape()));
    Tensor out = Tensor::zeros(x.shape(), any_grad({&x, &row}));
    auto ov = out.values();
    const auto xv = x.values();
    const auto rv = row.values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) ov[i * k + j] = xv[i * k + j] + rv[j];
    if (out.requires_grad()) {
        tape.record([x, row, out, n, k]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            if (x.requires_grad()) {
                auto& gx = x.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (row.requires_grad()) {
                auto& gr = row.grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < k; ++j) gr[j] += g[i * k + j];
            }
        });
    }
    return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw Error("mul: shape mismatch " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
    Tensor out = Tensor::zeros(a.shape(), any_grad({&a, &b}));
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = a.values()[i] * b.values()[i];
    if (out.requires_grad()) {
        tape.record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad_buffer();
                const auto bv = b.values();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad_buffer();
                const auto av = a.values();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        });
    }
    return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
    Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = x.values()[i] * factor;
    if (out.requires_grad()) {
        tape.record([x, out, factor]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
        });
    }
    return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = stable_sigmoid(x.values()[i]);
    if (out.requires_grad()) {
        tape.record([x, out]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            const auto y = out.values();
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
        });
    }
    return out;
}

Tensor tanh(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::tanh(x.values()[i]);
    if (out.requires_grad()) {
        tape.record([x, out]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            const auto y = out.values();
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
        });
    }
    return out;
}

Tensor softmax(Tape& tape, const Tensor& x, int axis) {
    std::size_t n_groups = 1, len = 0, group_step = 0, stride = 1;
    if (x.rank() == 1) {
        if (axis != -1 && axis != 0) throw Error("softmax: rank-1 input only has axis 0");
        len = x.size();
    } else if (x.rank() == 2) {
        const std::size_t r = x.rows(), c = x.cols();
        if (axis == 1 || axis == -1) {
            n_groups = r, len = c, group_step = c, stride = 1;
        } else if (axis == 0) {
            n_groups = c, len = r, group_step = 1, stride = c;
        } else {
            throw Error("softmax: bad axis " + std::to_string(axis));
        }
    } else {
        throw Error("softmax: unsupported shape " + shape_string(x.shape()));
    }
    if (len == 0) throw Error("softmax over an empty axis");
    Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
    softmax_groups(x.values(), out.values(), n_groups, len, group_step, stride);
    if (out.requires_grad()) {
        tape.record([x, out, n_groups, len, group_step, stride]() mutable {
            if (!out.has_grad()) return;
            softmax_groups_backward(out.values(), out.grad(), x.grad_buffer(), n_groups, len, group_step, stride);
        });
    }
    return out;
}

Tensor concat(Tape& tape, std::span<const Tensor> parts, int axis) {
    if (parts.empty()) throw Error("concat of zero tensors");
    if (axis != 0 && axis != 1) throw Error("concat: axis must be 0 or 1");
    bool grad = false;
    std::size_t rows = 0, cols = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        require_rank(parts[p], 2, "concat");
        grad = grad || parts[p].requires_grad();
        const std::size_t r = parts[p].rows(), c = parts[p].cols();
        if (axis == 0) {
            if (p > 0 && c != cols) throw Error("concat axis 0: column mismatch " + shape_string(parts[p].shape()));
            cols = c;
            rows += r;
        } else {
            if (p > 0 && r != rows) throw Error("concat axis 1: row mismatch " + shape_string(parts[p].shape()));
            rows = r;
            cols += c;
        }
    }
    Tensor out = Tensor::zeros({rows, cols}, grad);
    auto ov = out.values();
    std::size_t offset = 0;
    for (const auto& part : parts) {
        const auto pv = part.values();
        const std::size_t r = part.rows(), c = part.cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                if (axis == 0)
                    ov[(offset + i) * cols + j] = pv[i * c + j];
                else
                    ov[i * cols + offset + j] = pv[i * c + j];
            }
        offset += axis == 0 ? r : c;
    }
    if (grad) {
        std::vector<Tensor> inputs(parts.begin(), parts.end());
        tape.record([inputs, out, axis, cols]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            std::size_t offset = 0;
            for (auto& part : inputs) {
                const std::size_t r = part.rows(), c = part.cols();
                if (part.requires_grad()) {
                    auto& gp = part.grad_buffer();
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j)
                            gp[i * c + j] += axis == 0 ? g[(offset + i) * cols + j] : g[i * cols + offset + j];
                }
                offset += axis == 0 ? r : c;
            }
        });
    }
    return out;
}

Tensor concat(Tape& tape, std::initializer_list<Tensor> parts, int axis) {
    return concat(tape, std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(Tape& tape, const Tensor& x, int axis, std::size_t begin, std::size_t end) {
    require_rank(x, 2, "slice");
    const std::size_t r = x.rows(), c = x.cols();
    const std::size_t extent = axis == 0 ? r : c;
    if ((axis != 0 && axis != 1) || begin >= end || end > extent)
        throw Error("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                    std::to_string(axis) + " of " + shape_string(x.shape()));
    const std::size_t orows = axis == 0 ? end - begin : r;
    const std::size_t ocols = axis == 1 ? end - begin : c;
    const std::size_t r0 = axis == 0 ? begin : 0;
    const std::size_t c0 = axis == 1 ? begin : 0;
    Tensor out = Tensor::zeros({orows, ocols}, x.requires_grad());
    auto ov = out.values();
    const auto xv = x.values();
    for (std::size_t i = 0; i < orows; ++i)
        for (std::size_t j = 0; j < ocols; ++j) ov[i * ocols + j] = xv[(r0 + i) * c + c0 + j];
    if (out.requires_grad()) {
        tape.record([x, out, orows, ocols, r0, c0, c]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < orows; ++i)
                for (std::size_t j = 0; j < ocols; ++j) gx[(r0 + i) * c + c0 + j] += g[i * ocols + j];
        });
    }
    return out;
}

Tensor gather(Tape& tape, const Tensor& table, std::span<const int> indices) {
    require_rank(table, 2, "gather");
    const std::size_t v = table.rows(), d = table.cols();
    if (indices.empty()) throw Error("gather with no indices");
    for (int idx : indices) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= v)
            throw Error("gather: index " + std::to_string(idx) + " out of range for " + shape_string(table.shape()));
    }
    const std::size_t n = indices.size();
    Tensor out = Tensor::zeros({n, d}, table.requires_grad());
    auto ov = out.values();
    const auto tv = table.values();
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(indices[i]) * d), d,
                    ov.begin() + static_cast<std::ptrdiff_t>(i * d));
    if (out.requires_grad()) {
        std::vector<int> idx(indices.begin(), indices.end());
        tape.record([table, out, idx = std::move(idx), d]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            auto& gt = table.grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(idx[i]) * d + j] += g[i * d + j];
        });
    }
    return out;
}

Tensor mean_cols(Tape& tape, const Tensor& x) {
    require_rank(x, 2, "mean_cols");
    const std::size_t r = x.rows(), c = x.cols();
    if (c == 0) throw Error("mean_cols over zero columns");
    // Accumulate x * (1/c) left to right: the same arithmetic as a matmul
    // against a uniform weight vector, so uniform attention reproduces it exactly.
    const double w = 1.0 / static_cast<double>(c);
    Tensor out = Tensor::zeros({r}, x.requires_grad());
    auto ov = out.values();
    const auto xv = x.values();
    for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += xv[i * c + j] * w;
        ov[i] = acc;
    }
    if (out.requires_grad()) {
        tape.record([x, out, r, c, w]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i] * w;
        });
    }
    return out;
}

Tensor maxpool_cols(Tape& tape, const Tensor& x) {
    require_rank(x, 2, "maxpool_cols");
    const std::size_t r = x.rows(), c = x.cols();
    if (c == 0) throw Error("maxpool_cols over zero columns");
    Tensor out = Tensor::zeros({r}, x.requires_grad());
    std::vector<std::size_t> argmax(r, 0);
    auto ov = out.values();
    const auto xv = x.values();
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (xv[i * c + j] > xv[i * c + best]) best = j;
        }
        argmax[i] = best;
        ov[i] = xv[i * c + best];
    }
    if (out.requires_grad()) {
        tape.record([x, out, argmax = std::move(argmax), c]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < argmax.size(); ++i) gx[i * c + argmax[i]] += g[i];
        });
    }
    return out;
}

Tensor row_sum(Tape& tape, const Tensor& x) {
    require_rank(x, 2, "row_sum");
    const std::size_t r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({r}, x.requires_grad());
    auto ov = out.values();
    const auto xv = x.values();
    for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += xv[i * c + j];
        ov[i] = acc;
    }
    if (out.requires_grad()) {
        tape.record([x, out, r, c]() mutable {
            if (!out.has_grad()) return;
            const auto g = out.grad();
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i];
        });
    }
    return out;
}

Tensor bce(Tape& tape, const Tensor& yhat, std::span<const int> targets) {
    if (yhat.rank() != 1 || yhat.size() != targets.size())
        throw Error("bce: predictions " + shape_string(yhat.shape()) + " vs " + std::to_string(targets.size()) +
                    " targets");
    const auto clamp = [](double p) { return std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon); };
    double loss = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double p = clamp(yhat.values()[i]);
        const double y = targets[i];
        loss += -y * std::log(p) - (1.0 - y) * std::log(1.0 - p);
    }
    Tensor out = Tensor::scalar(loss, yhat.requires_grad());
    if (out.requires_grad()) {
        std::vector<int> y(targets.begin(), targets.end());
        tape.record([yhat, out, y = std::move(y), clamp]() mutable {
            if (!out.has_grad()) return;
            const double g = out.grad()[0];
            auto& gy = yhat.grad_buffer();
            for (std::size_t i = 0; i < y.size(); ++i) {
                const double p = clamp(yhat.values()[i]);
                gy[i] += g * (p - y[i]) / (p * (1.0 - p));
            }
        });
    }
    return out;
}

// --- optimizers -------------------------------------------------------------

void Adam::step(std::span<Tensor> params) {
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw Error("Adam: parameter list changed between steps");
    ++step_;
    const double b1 = hyper_.beta1, b2 = hyper_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        if (p.size() != m_[k].size()) throw Error("Adam: moment shape does not match parameter " + std::to_string(k));
        if (!p.has_grad()) continue;
        auto values = p.values();
        const auto g = p.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < values.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            values[i] -= hyper_.learning_rate * m_hat / (std::sqrt(v_hat) + hyper_.epsilon);
        }
    }
}

void Sgd::step(std::span<Tensor> params) {
    ++step_;
    for (auto& p : params) {
        if (!p.has_grad()) continue;
        auto values = p.values();
        const auto g = p.grad();
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= learning_rate_ * g[i];
    }
}

void zero_grad(std::span<Tensor> params) {
    for (auto& p : params) p.zero_grad();
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double factor = max_norm / norm;
        for (auto& p : params) {
            for (double& g : p.grad()) g *= factor;
        }
    }
    return norm;
}

}  // namespace treeman::ad
