#pragma once

/// \file model.hpp
///
/// Fully connected ReLU networks (FCN-d-n) in standard, maximal-update and
/// simple maximal-update parameterizations, with MSE / cross-entropy losses
/// and hand-written reverse-mode gradients. Also the quadratic oracle model,
/// whose Hessian is known exactly.

#include "numerics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace warmup {

enum class Parameterization { SP, MUP, SIMPLE_MUP };
enum class Activation { RELU };
enum class LossKind { MSE, XENT };

inline std::string_view to_string(Parameterization p)
{
    switch (p) {
    case Parameterization::SP: return "sp";
    case Parameterization::MUP: return "mup";
    case Parameterization::SIMPLE_MUP: return "simple-mup";
    }
    return "?";
}

inline Parameterization parameterization_from_string(std::string_view s)
{
    if (s == "sp") return Parameterization::SP;
    if (s == "mup") return Parameterization::MUP;
    if (s == "simple-mup" || s == "simple_mup") return Parameterization::SIMPLE_MUP;
    throw std::invalid_argument{"unknown parameterization: " + std::string{s}};
}

inline std::string_view to_string(LossKind k) { return k == LossKind::MSE ? "mse" : "xent"; }

inline LossKind loss_from_string(std::string_view s)
{
    if (s == "mse") return LossKind::MSE;
    if (s == "xent") return LossKind::XENT;
    throw std::invalid_argument{"unknown loss: " + std::string{s}};
}

struct NetworkSpec {
    int depth = 4;  ///< number of weight layers, >= 2
    int width = 64;
    int in_dim = 32;
    int out_dim = 10;
    Activation activation = Activation::RELU;
    Parameterization parameterization = Parameterization::SP;
    double sigma_w2_hidden = 2.0;
    double sigma_w2_last = 1.0;

    /// Layer widths from input to output; `depth + 1` entries.
    std::vector<std::size_t> widths() const
    {
        std::vector<std::size_t> w;
        w.push_back(static_cast<std::size_t>(in_dim));
        for (int l = 1; l < depth; ++l) w.push_back(static_cast<std::size_t>(width));
        w.push_back(static_cast<std::size_t>(out_dim));
        return w;
    }

    void validate() const
    {
        if (depth < 2) throw std::invalid_argument{"NetworkSpec: depth must be >= 2"};
        if (width < 1 || in_dim < 1 || out_dim < 1)
            throw std::invalid_argument{"NetworkSpec: dimensions must be positive"};
        if (!(sigma_w2_hidden >= 0.0) || !(sigma_w2_last >= 0.0))
            throw std::invalid_argument{"NetworkSpec: weight variances must be >= 0"};
    }
};

struct LayerShape {
    std::size_t fan_in;
    std::size_t fan_out;
    std::size_t weight_offset;  ///< fan_out x fan_in, column-major
    std::size_t bias_offset;    ///< fan_out entries
    double init_variance;
    double forward_scale;       ///< multiplies (W a + b)
    double adam_lr_multiplier;

    std::size_t weight_count() const noexcept { return fan_in * fan_out; }
};

/// Per-layer shape map of a flat parameter vector.
struct ParamLayout {
    std::vector<LayerShape> layers;
    std::size_t size = 0;

    static ParamLayout for_network(const NetworkSpec& spec)
    {
        spec.validate();
        const auto w = spec.widths();
        const bool mup = spec.parameterization != Parameterization::SP;
        const bool mup_lr = spec.parameterization == Parameterization::MUP;
        ParamLayout layout;
        std::size_t offset = 0;
        for (std::size_t l = 0; l + 1 < w.size(); ++l) {
            const double fan_in = static_cast<double>(w[l]);
            const double fan_out = static_cast<double>(w[l + 1]);
            const bool last = l + 2 == w.size();
            LayerShape s{};
            s.fan_in = w[l];
            s.fan_out = w[l + 1];
            s.weight_offset = offset;
            s.bias_offset = offset + s.weight_count();
            offset = s.bias_offset + s.fan_out;
            const double sigma2 = last ? spec.sigma_w2_last : spec.sigma_w2_hidden;
            if (!mup) {
                s.init_variance = sigma2 / fan_in;
                s.forward_scale = 1.0;
            } else if (!last) {
                s.init_variance = sigma2 / fan_out;
                s.forward_scale = std::sqrt(fan_out / fan_in);
            } else {
                s.init_variance = sigma2 / fan_in;
                s.forward_scale = std::sqrt(1.0 / fan_in);
            }
            if (!mup_lr)
                s.adam_lr_multiplier = 1.0;
            else if (l == 0)
                s.adam_lr_multiplier = 1.0 / std::sqrt(fan_out);
            else if (!last)
                s.adam_lr_multiplier = 1.0 / std::sqrt(fan_in);
            else
                s.adam_lr_multiplier = 1.0 / fan_in;
            layout.layers.push_back(s);
        }
        layout.size = offset;
        return layout;
    }

    /// Elementwise expansion of the per-layer Adam learning-rate multipliers.
    FlatVector lr_multipliers() const
    {
        FlatVector out(size, 1.0);
        for (const auto& s : layers)
            std::fill(out.begin() + static_cast<std::ptrdiff_t>(s.weight_offset),
                      out.begin() + static_cast<std::ptrdiff_t>(s.bias_offset + s.fan_out),
                      s.adam_lr_multiplier);
        return out;
    }
};

struct ParamVector {
    ParamLayout layout;
    FlatVector values;
};

/// Weights from the truncated normal at each layer's init variance; biases zero.
inline ParamVector init_params(const NetworkSpec& spec, RngStream& rng)
{
    ParamVector p{ParamLayout::for_network(spec), {}};
    p.values.assign(p.layout.size, 0.0);
    for (const auto& s : p.layout.layers) {
        auto w = truncated_normal(rng, s.weight_count(), std::sqrt(s.init_variance));
        std::copy(w.begin(), w.end(), p.values.begin() + static_cast<std::ptrdiff_t>(s.weight_offset));
    }
    return p;
}

// ----------------------------------------------------------------------------
// Data batches
// ----------------------------------------------------------------------------

/// Column-per-sample batch. `targets` holds one-hot rows for classification
/// (or real targets for regression); `labels` holds class indices and is empty
/// for regression data.
struct Batch {
    Eigen::MatrixXd inputs;   ///< in_dim x B
    Eigen::MatrixXd targets;  ///< out_dim x B
    std::vector<int> labels;

    std::size_t size() const noexcept { return static_cast<std::size_t>(inputs.cols()); }

    Batch gather(std::span<const std::size_t> index) const
    {
        Batch b;
        b.inputs.resize(inputs.rows(), static_cast<Eigen::Index>(index.size()));
        b.targets.resize(targets.rows(), static_cast<Eigen::Index>(index.size()));
        if (!labels.empty()) b.labels.resize(index.size());
        for (std::size_t k = 0; k < index.size(); ++k) {
            const auto j = static_cast<Eigen::Index>(index[k]);
            const auto c = static_cast<Eigen::Index>(k);
            b.inputs.col(c) = inputs.col(j);
            b.targets.col(c) = targets.col(j);
            if (!labels.empty()) b.labels[k] = labels[index[k]];
        }
        return b;
    }
};

// ----------------------------------------------------------------------------
// Network
// ----------------------------------------------------------------------------

/// FCN evaluator. Stateless given (spec, theta); safe to share across threads.
class Mlp {
public:
    explicit Mlp(NetworkSpec spec) : spec_{std::move(spec)}, layout_{ParamLayout::for_network(spec_)} {}

    const NetworkSpec& spec() const noexcept { return spec_; }
    const ParamLayout& layout() const noexcept { return layout_; }
    std::size_t num_params() const noexcept { return layout_.size; }

    Eigen::MatrixXd forward(std::span<const double> theta, const Eigen::MatrixXd& inputs) const
    {
        check(theta, inputs);
        Eigen::MatrixXd a = inputs;
        for (std::size_t l = 0; l < layout_.layers.size(); ++l) {
            Eigen::MatrixXd z = affine(theta, layout_.layers[l], a);
            if (l + 1 < layout_.layers.size()) z = z.cwiseMax(0.0);
            a = std::move(z);
        }
        return a;
    }

    /// Output of every layer (post-activation for hidden layers).
    std::vector<Eigen::MatrixXd> layer_outputs(std::span<const double> theta, const Eigen::MatrixXd& inputs) const
    {
        check(theta, inputs);
        std::vector<Eigen::MatrixXd> outs;
        outs.reserve(layout_.layers.size());
        const Eigen::MatrixXd* a = &inputs;
        for (std::size_t l = 0; l < layout_.layers.size(); ++l) {
            Eigen::MatrixXd z = affine(theta, layout_.layers[l], *a);
            if (l + 1 < layout_.layers.size()) z = z.cwiseMax(0.0);
            outs.push_back(std::move(z));
            a = &outs.back();
        }
        return outs;
    }

    double loss(std::span<const double> theta, const Batch& batch, LossKind kind) const
    {
        return loss_value(forward(theta, batch.inputs), batch, kind);
    }

    /// Loss and its exact gradient. Non-finite activations yield a non-finite
    /// loss rather than an exception.
    double loss_and_grad(std::span<const double> theta, const Batch& batch, LossKind kind,
                         std::span<double> grad) const
    {
        check(theta, batch.inputs);
        if (grad.size() != layout_.size) throw std::invalid_argument{"Mlp: gradient size mismatch"};
        if (batch.size() == 0) throw std::invalid_argument{"Mlp: empty batch"};
        const std::size_t n_layers = layout_.layers.size();
        std::vector<Eigen::MatrixXd> acts;  // acts[l] is the input of layer l
        acts.reserve(n_layers + 1);
        acts.push_back(batch.inputs);
        for (std::size_t l = 0; l < n_layers; ++l) {
            Eigen::MatrixXd z = affine(theta, layout_.layers[l], acts.back());
            if (l + 1 < n_layers) z = z.cwiseMax(0.0);
            acts.push_back(std::move(z));
        }
        const Eigen::MatrixXd& out = acts.back();
        const double value = loss_value(out, batch, kind);

        Eigen::MatrixXd delta = output_delta(out, batch, kind);
        for (std::size_t l = n_layers; l-- > 0;) {
            const auto& s = layout_.layers[l];
            Eigen::Map<Eigen::MatrixXd> dw(grad.data() + s.weight_offset, static_cast<Eigen::Index>(s.fan_out),
                                           static_cast<Eigen::Index>(s.fan_in));
            Eigen::Map<Eigen::VectorXd> db(grad.data() + s.bias_offset, static_cast<Eigen::Index>(s.fan_out));
            dw.noalias() = s.forward_scale * (delta * acts[l].transpose());
            db = s.forward_scale * delta.rowwise().sum();
            if (l == 0) break;
            Eigen::MatrixXd upstream = s.forward_scale * (weights(theta, s).transpose() * delta);
            // ReLU mask; the derivative at exactly zero is zero.
            delta = upstream.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
        }
        return value;
    }

    /// Exact Hessian-vector product H v of the loss (forward-mode R-operator
    /// over backprop). ReLU is treated as piecewise linear: the mask is fixed
    /// at theta, so no difference step can straddle a kink.
    void hessian_vector(std::span<const double> theta, const Batch& batch, LossKind kind, std::span<const double> v,
                        std::span<double> out) const
    {
        check(theta, batch.inputs);
        if (v.size() != layout_.size || out.size() != layout_.size)
            throw std::invalid_argument{"Mlp: direction size mismatch"};
        if (batch.size() == 0) throw std::invalid_argument{"Mlp: empty batch"};
        const std::size_t n_layers = layout_.layers.size();
        std::vector<Eigen::MatrixXd> acts, r_acts, masks;  // inputs of layer l and their directional derivatives
        acts.reserve(n_layers + 1);
        r_acts.reserve(n_layers + 1);
        acts.push_back(batch.inputs);
        r_acts.push_back(Eigen::MatrixXd::Zero(batch.inputs.rows(), batch.inputs.cols()));
        for (std::size_t l = 0; l < n_layers; ++l) {
            const auto& s = layout_.layers[l];
            Eigen::MatrixXd z = affine(theta, s, acts.back());
            Eigen::MatrixXd rz = affine(v, s, acts.back());
            rz.noalias() += s.forward_scale * (weights(theta, s) * r_acts.back());
            if (l + 1 < n_layers) {
                Eigen::MatrixXd mask = (z.array() > 0.0).cast<double>().matrix();
                z = z.cwiseProduct(mask);
                rz = rz.cwiseProduct(mask);
                masks.push_back(std::move(mask));
            }
            acts.push_back(std::move(z));
            r_acts.push_back(std::move(rz));
        }

        const Eigen::MatrixXd& z_out = acts.back();
        const Eigen::MatrixXd& rz_out = r_acts.back();
        const double n = static_cast<double>(z_out.cols());
        Eigen::MatrixXd delta = output_delta(z_out, batch, kind);
        Eigen::MatrixXd r_delta;
        if (kind == LossKind::MSE) {
            r_delta = (2.0 / (n * static_cast<double>(z_out.rows()))) * rz_out;
        } else {
            // d softmax = (diag(p) - p p^T) dz, per sample
            r_delta.resize(z_out.rows(), z_out.cols());
            for (Eigen::Index j = 0; j < z_out.cols(); ++j) {
                const double mx = z_out.col(j).maxCoeff();
                Eigen::VectorXd p = (z_out.col(j).array() - mx).exp();
                p /= p.sum();
                r_delta.col(j) = (p.cwiseProduct(rz_out.col(j)) - p * p.dot(rz_out.col(j))) / n;
            }
        }

        for (std::size_t l = n_layers; l-- > 0;) {
            const auto& s = layout_.layers[l];
            Eigen::Map<Eigen::MatrixXd> hw(out.data() + s.weight_offset, static_cast<Eigen::Index>(s.fan_out),
                                           static_cast<Eigen::Index>(s.fan_in));
            Eigen::Map<Eigen::VectorXd> hb(out.data() + s.bias_offset, static_cast<Eigen::Index>(s.fan_out));
            hw.noalias() = s.forward_scale * (r_delta * acts[l].transpose() + delta * r_acts[l].transpose());
            hb = s.forward_scale * r_delta.rowwise().sum();
            if (l == 0) break;
            const auto w = weights(theta, s);
            const auto vw = weights(v, s);
            Eigen::MatrixXd r_up = s.forward_scale * (vw.transpose() * delta + w.transpose() * r_delta);
            Eigen::MatrixXd up = s.forward_scale * (w.transpose() * delta);
            r_delta = r_up.cwiseProduct(masks[l - 1]);
            delta = up.cwiseProduct(masks[l - 1]);
        }
    }

    static double accuracy(const Eigen::MatrixXd& outputs, std::span<const int> labels)
    {
        if (labels.empty()) return 0.0;
        std::size_t hits = 0;
        for (Eigen::Index j = 0; j < outputs.cols(); ++j) {
            Eigen::Index arg;
            outputs.col(j).maxCoeff(&arg);
            if (arg == labels[static_cast<std::size_t>(j)]) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(labels.size());
    }

    static double loss_value(const Eigen::MatrixXd& out, const Batch& batch, LossKind kind)
    {
        const double n = static_cast<double>(out.cols());
        if (kind == LossKind::MSE) return (out - batch.targets).squaredNorm() / (n * static_cast<double>(out.rows()));
        require_labels(batch);
        double total = 0.0;
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            const double mx = out.col(j).maxCoeff();
            const double lse = mx + std::log((out.col(j).array() - mx).exp().sum());
            total += lse - out(batch.labels[static_cast<std::size_t>(j)], j);
        }
        return total / n;
    }

private:
    static void require_labels(const Batch& batch)
    {
        if (batch.labels.size() != batch.size())
            throw std::invalid_argument{"cross-entropy requires one class label per sample"};
    }

    static Eigen::MatrixXd output_delta(const Eigen::MatrixXd& out, const Batch& batch, LossKind kind)
    {
        const double n = static_cast<double>(out.cols());
        if (kind == LossKind::MSE) return (2.0 / (n * static_cast<double>(out.rows()))) * (out - batch.targets);
        Eigen::MatrixXd d(out.rows(), out.cols());
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            const double mx = out.col(j).maxCoeff();
            Eigen::VectorXd e = (out.col(j).array() - mx).exp();
            d.col(j) = e / e.sum();
            d(batch.labels[static_cast<std::size_t>(j)], j) -= 1.0;
        }
        return d / n;
    }

    static Eigen::Map<const Eigen::MatrixXd> weights(std::span<const double> theta, const LayerShape& s)
    {
        return {theta.data() + s.weight_offset, static_cast<Eigen::Index>(s.fan_out),
                static_cast<Eigen::Index>(s.fan_in)};
    }

    static Eigen::MatrixXd affine(std::span<const double> theta, const LayerShape& s, const Eigen::MatrixXd& a)
    {
        Eigen::Map<const Eigen::VectorXd> b(theta.data() + s.bias_offset, static_cast<Eigen::Index>(s.fan_out));
        Eigen::MatrixXd z = weights(theta, s) * a;
        z.colwise() += b;
        if (s.forward_scale != 1.0) z *= s.forward_scale;
        return z;
    }

    void check(std::span<const double> theta, const Eigen::MatrixXd& inputs) const
    {
        if (theta.size() != layout_.size) throw std::invalid_argument{"Mlp: parameter size mismatch"};
        if (inputs.rows() != spec_.in_dim) throw std::invalid_argument{"Mlp: input dimension mismatch"};
    }

    NetworkSpec spec_;
    ParamLayout layout_;
};

// ----------------------------------------------------------------------------
// Objectives
// ----------------------------------------------------------------------------

/// Anything with a loss and gradient over a flat parameter vector.
template <class F>
concept Objective = requires(const F& f, std::span<const double> theta, std::span<double> grad) {
    { f.dim() } -> std::convertible_to<std::size_t>;
    { f.loss(theta) } -> std::convertible_to<double>;
    { f.loss_and_grad(theta, grad) } -> std::convertible_to<double>;
};

/// An objective that also supplies exact Hessian-vector products.
template <class F>
concept ExactCurvature = Objective<F> && requires(const F& f, std::span<const double> theta, std::span<double> out) {
    f.hessian_vector(theta, theta, out);
};

/// L(theta) = 0.5 theta^T A theta.
class QuadraticOracle {
public:
    explicit QuadraticOracle(SymMatrix a) : a_{std::move(a)} {}

    const SymMatrix& hessian() const noexcept { return a_; }
    std::size_t dim() const noexcept { return a_.dim(); }

    double loss(std::span<const double> theta) const
    {
        check(theta.size());
        return 0.5 * dot(theta, a_.apply(theta));
    }

    double loss_and_grad(std::span<const double> theta, std::span<double> grad) const
    {
        check(theta.size());
        if (grad.size() != dim()) throw std::invalid_argument{"QuadraticOracle: gradient size mismatch"};
        a_.apply(theta, grad);
        return 0.5 * dot(theta, grad);
    }

    void hessian_vector(std::span<const double> theta, std::span<const double> v, std::span<double> out) const
    {
        check(theta.size());
        check(v.size());
        a_.apply(v, out);
    }

private:
    void check(std::size_t n) const
    {
        if (n != dim()) throw std::invalid_argument{"QuadraticOracle: parameter size mismatch"};
    }

    SymMatrix a_;
};

/// An FCN plus a loss on a fixed batch. Holds references; the network and
/// batch must outlive it.
class FcnObjective {
public:
    FcnObjective(const Mlp& net, LossKind kind, const Batch& batch) : net_{&net}, kind_{kind}, batch_{&batch} {}

    std::size_t dim() const noexcept { return net_->num_params(); }
    double loss(std::span<const double> theta) const { return net_->loss(theta, *batch_, kind_); }
    double loss_and_grad(std::span<const double> theta, std::span<double> grad) const
    {
        return net_->loss_and_grad(theta, *batch_, kind_, grad);
    }
    void hessian_vector(std::span<const double> theta, std::span<const double> v, std::span<double> out) const
    {
        net_->hessian_vector(theta, *batch_, kind_, v, out);
    }

    const Mlp& network() const noexcept { return *net_; }
    const Batch& batch() const noexcept { return *batch_; }
    LossKind loss_kind() const noexcept { return kind_; }

private:
    const Mlp* net_;
    LossKind kind_;
    const Batch* batch_;
};

static_assert(Objective<QuadraticOracle>);
static_assert(ExactCurvature<QuadraticOracle>);
static_assert(ExactCurvature<FcnObjective>);

}  // namespace warmup
