#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace ptcbf::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Multi-layer perceptron with tanh hidden layers and a linear output layer.
/// All weights and biases live in one flat parameter vector so optimizers
/// and checkpoints can treat the network as a single array.
class Mlp {
public:
    Mlp() = default;

    explicit Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            layers_.push_back({off, off + static_cast<std::size_t>(widths_[l + 1] * widths_[l]), widths_[l + 1],
                               widths_[l]});
            off += static_cast<std::size_t>(widths_[l + 1] * widths_[l] + widths_[l + 1]);
        }
        params_ = Vector::Zero(static_cast<Eigen::Index>(off));
    }

    /// Uniform Glorot init; the output layer is scaled by `output_scale`.
    template <class Rng>
    void initialize(Rng& rng, double output_scale = 1.0) {
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& L = layers_[l];
            double limit = std::sqrt(6.0 / (L.in + L.out));
            if (l + 1 == layers_.size()) limit *= output_scale;
            std::uniform_real_distribution<double> u(-limit, limit);
            auto w = weight(l);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
            bias(l).setZero();
        }
    }

    const std::vector<int>& widths() const { return widths_; }
    int input_size() const { return widths_.front(); }
    int output_size() const { return widths_.back(); }
    std::size_t layer_count() const { return layers_.size(); }
    Eigen::Index param_count() const { return params_.size(); }
    Vector& params() { return params_; }
    const Vector& params() const { return params_; }

    Eigen::Map<Matrix> weight(std::size_t l) { return {params_.data() + layers_[l].w, layers_[l].out, layers_[l].in}; }
    Eigen::Map<const Matrix> weight(std::size_t l) const {
        return {params_.data() + layers_[l].w, layers_[l].out, layers_[l].in};
    }
    Eigen::Map<Vector> bias(std::size_t l) { return {params_.data() + layers_[l].b, layers_[l].out}; }
    Eigen::Map<const Vector> bias(std::size_t l) const { return {params_.data() + layers_[l].b, layers_[l].out}; }

    /// Activations of every layer for a batch (one sample per column).
    struct Cache {
        std::vector<Matrix> acts;   // acts[0] = input, acts.back() = output
    };

    Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
        Matrix h = x;
        if (cache) {
            cache->acts.clear();
            cache->acts.push_back(x);
        }
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Matrix z = weight(l) * h;
            z.colwise() += bias(l);
            if (l + 1 < layers_.size()) z = z.array().tanh().matrix();
            h = std::move(z);
            if (cache) cache->acts.push_back(h);
        }
        return h;
    }

    Vector forward_one(const Vector& x) const { return forward(x); }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
    void backward(const Cache& cache, const Matrix& d_out, Vector& grad) const {
        Matrix delta = d_out;
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const Matrix& in = cache.acts[l];
            Eigen::Map<Matrix> gw(grad.data() + layers_[l].w, layers_[l].out, layers_[l].in);
            Eigen::Map<Vector> gb(grad.data() + layers_[l].b, layers_[l].out);
            gw.noalias() += delta * in.transpose();
            gb += delta.rowwise().sum();
            if (l == 0) break;
            Matrix d_in = weight(l).transpose() * delta;
            delta = d_in.array() * (1.0 - in.array().square());
        }
    }

private:
    struct Layout {
        std::size_t w, b;
        int out, in;
    };
    std::vector<int> widths_;
    std::vector<Layout> layers_;
    Vector params_;
};

/// Adam with optional global-norm gradient clipping.
class Adam {
public:
    Adam() = default;
    Adam(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

    void step(Vector& params, const Vector& grad) {
        ++t_;
        m_ = b1_ * m_ + (1.0 - b1_) * grad;
        v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    long steps() const { return t_; }
    const Vector& first_moment() const { return m_; }
    const Vector& second_moment() const { return v_; }
    void restore(long t, Vector m, Vector v) {
        t_ = t;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    double lr_ = 1e-3, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
    Vector m_, v_;
};

/// Scales `grad` so its Euclidean norm is at most `max_norm`; returns the original norm.
inline double clip_grad_norm(Vector& grad, double max_norm) {
    const double n = grad.norm();
    if (max_norm > 0.0 && n > max_norm) grad *= max_norm / n;
    return n;
}

} // namespace ptcbf::nn
