#pragma once

/**
 * Dense float64 tensors with a dynamic reverse-mode tape.
 *
 * A Tensor is a shared handle to a node holding row-major values and, once
 * touched by backward(), an accumulated gradient of the same shape. Every op
 * takes the tape explicitly and records a backward rule only when one of its
 * inputs requires a gradient. Tapes are rebuilt per example and are confined to
 * one thread; parameters outlive tapes.
 */

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace treeman::ad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor parameter(Shape shape, std::vector<double> values);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t rows() const;  // rank-2 only
    std::size_t cols() const;  // rank-2 only

    bool requires_grad() const;

    std::span<double> values();
    std::span<const double> values() const;
    double item() const;
    double at(std::size_t i, std::size_t j) const { return values()[i * cols() + j]; }

    // Empty span until a gradient has been accumulated.
    std::span<double> grad();
    std::span<const double> grad() const;
    bool has_grad() const;
    void zero_grad() const;

    // Internal: mutable grad buffer sized to shape.
    std::vector<double>& grad_buffer() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    std::shared_ptr<Node> node_;
};

class Tape {
public:
    // A non-recording tape runs ops forward only (inference).
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    void record(std::function<void()> backward_rule);

    // Seeds d(loss)/d(loss) = 1 and replays the recorded rules in reverse.
    // Gradients accumulate; the tape is cleared afterwards.
    void backward(const Tensor& loss);

    std::size_t size() const { return rules_.size(); }
    void clear() { rules_.clear(); }

private:
    bool recording_ = true;
    std::vector<std::function<void()>> rules_;
};

// --- ops --------------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
// x: n x k, row: [k] or 1 x k broadcast over rows.
Tensor add_row(Tape& tape, const Tensor& x, const Tensor& row);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);

Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);

// Rank-1: over the whole vector. Rank-2: axis 1 normalizes each row,
// axis 0 normalizes each column.
Tensor softmax(Tape& tape, const Tensor& x, int axis = -1);

Tensor concat(Tape& tape, std::span<const Tensor> parts, int axis);
Tensor concat(Tape& tape, std::initializer_list<Tensor> parts, int axis);
// Rank-2 slice [begin, end) along axis.
Tensor slice(Tape& tape, const Tensor& x, int axis, std::size_t begin, std::size_t end);

// Rows of `table` (V x d) at `indices` -> n x d.
Tensor gather(Tape& tape, const Tensor& table, std::span<const int> indices);

// d x n -> [d]: mean / max over the columns of each row. Max routes its gradient
// to the first arg-max.
Tensor mean_cols(Tape& tape, const Tensor& x);
Tensor maxpool_cols(Tape& tape, const Tensor& x);

// n x k -> [n]
Tensor row_sum(Tape& tape, const Tensor& x);

inline constexpr double kBceEpsilon = 1e-12;

// Summed binary cross-entropy of yhat ([n], clamped to [eps, 1-eps]) against
// 0/1 targets.
Tensor bce(Tape& tape, const Tensor& yhat, std::span<const int> targets);

// --- optimizers -------------------------------------------------------------

struct AdamHyper {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Optimizer {
public:
    virtual ~Optimizer() = default;
    // Applies one update from the accumulated grads; grads are left untouched.
    virtual void step(std::span<Tensor> params) = 0;
    virtual long steps() const = 0;
};

class Adam final : public Optimizer {
public:
    explicit Adam(AdamHyper hyper = {}) : hyper_(hyper) {}

    void step(std::span<Tensor> params) override;
    long steps() const override { return step_; }

    const AdamHyper& hyper() const { return hyper_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

private:
    AdamHyper hyper_;
    long step_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

class Sgd final : public Optimizer {
public:
    explicit Sgd(double learning_rate) : learning_rate_(learning_rate) {}

    void step(std::span<Tensor> params) override;
    long steps() const override { return step_; }

private:
    double learning_rate_;
    long step_ = 0;
};

void zero_grad(std::span<Tensor> params);

// Global L2 norm of all grads; rescales them in place when it exceeds max_norm
// (max_norm <= 0 disables clipping). Returns the pre-clip norm.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

// --- named array files ------------------------------------------------------

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;

    friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

}  // namespace treeman::ad
