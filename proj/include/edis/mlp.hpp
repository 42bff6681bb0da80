#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "random.hpp"
#include "tensor.hpp"

namespace edis {

enum class Activation { relu, identity };

/// Fully connected network: ReLU hidden layers, linear output layer.
///
/// With `residual` set, hidden layers after the first are grouped in pairs and
/// each pair whose input and output widths agree becomes an additive skip block
/// h_out = h_in + relu(W2 relu(W1 h_in + b1) + b2). A trailing unpaired hidden
/// layer is a plain layer.
template <class T>
class Mlp {
public:
    Mlp() = default;

    /// widths = {in, hidden..., out}; weights are stored [fan_in, fan_out].
    explicit Mlp(std::vector<std::size_t> widths, bool residual = true, Activation hidden = Activation::relu)
        : widths_(std::move(widths)), residual_(residual), hidden_act_(hidden) {
        detail::require(widths_.size() >= 2, "mlp needs at least an input and an output width");
        for (std::size_t w : widths_) detail::require(w > 0, "mlp widths must be positive");
        const std::size_t n = widths_.size() - 1;
        for (std::size_t l = 0; l < n; ++l) {
            weights_.emplace_back(Shape{widths_[l], widths_[l + 1]});
            biases_.emplace_back(Shape{widths_[l + 1]});
        }
        skip_.assign(n, false);
        if (residual_ && n >= 4) {
            // hidden layers are 0..n-2; layer 0 maps the input, pairs start at 1
            for (std::size_t l = 1; l + 1 <= n - 2; l += 2)
                if (widths_[l] == widths_[l + 1] && widths_[l + 1] == widths_[l + 2]) skip_[l + 1] = true;
        }
    }

    /// He-normal hidden weights, fan-in scaled output weights, zero biases.
    void init(Rng& rng) {
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            const bool out = l + 1 == weights_.size();
            double scale = std::sqrt((out ? 1.0 : 2.0) / static_cast<double>(widths_[l]));
            if (skip_[l]) scale *= 0.5;
            for (auto& w : weights_[l].values()) w = static_cast<T>(scale * rng.normal());
            biases_[l].fill(T{});
        }
    }

    std::size_t input_width() const { return widths_.front(); }
    std::size_t output_width() const { return widths_.back(); }
    std::size_t num_layers() const { return weights_.size(); }
    const std::vector<std::size_t>& widths() const noexcept { return widths_; }
    bool residual() const noexcept { return residual_; }
    bool is_skip(std::size_t layer) const { return skip_[layer]; }
    Activation hidden_activation() const noexcept { return hidden_act_; }

    Tensor<T>& weight(std::size_t l) { return weights_[l]; }
    const Tensor<T>& weight(std::size_t l) const { return weights_[l]; }
    Tensor<T>& bias(std::size_t l) { return biases_[l]; }
    const Tensor<T>& bias(std::size_t l) const { return biases_[l]; }

    /// Parameters in a fixed order: W0, b0, W1, b1, ...
    std::vector<Tensor<T>*> parameters() {
        std::vector<Tensor<T>*> ps;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            ps.push_back(&weights_[l]);
            ps.push_back(&biases_[l]);
        }
        return ps;
    }

    std::vector<const Tensor<T>*> parameters() const {
        std::vector<const Tensor<T>*> ps;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            ps.push_back(&weights_[l]);
            ps.push_back(&biases_[l]);
        }
        return ps;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto* p : parameters()) n += p->size();
        return n;
    }

    template <class U>
    Mlp<U> cast() const {
        Mlp<U> out(widths_, residual_, hidden_act_);
        auto dst = out.parameters();
        auto src = parameters();
        for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
        return out;
    }

private:
    std::vector<std::size_t> widths_;
    bool residual_ = true;
    Activation hidden_act_ = Activation::relu;
    std::vector<Tensor<T>> weights_;
    std::vector<Tensor<T>> biases_;
    std::vector<bool> skip_;
};

/// Activations recorded by a forward pass; pre[l] is layer l's affine output,
/// post[l] the input to layer l (post[0] is the network input).
template <class T>
struct MlpTrace {
    std::vector<Tensor<T>> pre;
    std::vector<Tensor<T>> post;
    Tensor<T> output;
};

template <class T>
struct MlpGrads {
    std::vector<Tensor<T>> params;  // same order as Mlp::parameters()
    Tensor<T> input;
};

namespace detail {

template <class T>
Tensor<T> as_batch(const Tensor<T>& x, std::size_t width, const char* who) {
    const std::size_t cols = x.rank() == 0 ? 0 : x.shape().back();
    if (cols != width)
        throw ValidationError(std::string(who) + ": input trailing dimension " + std::to_string(cols) +
                              " does not match network input width " + std::to_string(width) + " (shape " +
                              shape_str(x.shape()) + ")");
    if (x.rank() == 2) return x;
    return Tensor<T>({x.size() / width, width}, x.values());
}

template <class T>
Tensor<T> restore_rank(Tensor<T> y, const Tensor<T>& like) {
    if (like.rank() == 2) return y;
    Shape s = like.shape();
    s.back() = y.cols();
    return Tensor<T>(s, std::move(y.values()));
}

template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const std::size_t n = x.rows(), m = w.cols();
    Tensor<T> z = Tensor<T>::matrix(n, m);
    for (std::size_t r = 0; r < n; ++r) std::copy_n(b.data(), m, z.data() + r * m);
    kernel::gemm_acc(n, x.cols(), m, x.data(), w.data(), z.data());
    return z;
}

}  // namespace detail

/// Forward pass keeping every intermediate needed by mlp_backward.
template <class T>
MlpTrace<T> mlp_trace(const Mlp<T>& net, const Tensor<T>& x_in) {
    Tensor<T> x = detail::as_batch(x_in, net.input_width(), "mlp_forward");
    MlpTrace<T> tr;
    const std::size_t n = net.num_layers();
    tr.post.reserve(n);
    tr.pre.reserve(n);
    tr.post.push_back(std::move(x));
    for (std::size_t l = 0; l < n; ++l) {
        Tensor<T> z = detail::affine(tr.post[l], net.weight(l), net.bias(l));
        const bool out_layer = l + 1 == n;
        Tensor<T> a = z;
        if (!out_layer && net.hidden_activation() == Activation::relu)
            for (auto& v : a.values()) v = v > T{} ? v : T{};
        if (net.is_skip(l)) {
            const auto& prev = tr.post[l - 1];
            for (std::size_t i = 0; i < a.size(); ++i) a[i] = a[i] + prev[i];
        }
        tr.pre.push_back(std::move(z));
        if (out_layer)
            tr.output = std::move(a);
        else
            tr.post.push_back(std::move(a));
    }
    return tr;
}

template <class T>
Tensor<T> mlp_forward(const Mlp<T>& net, const Tensor<T>& x) {
    return detail::restore_rank(mlp_trace(net, x).output, x);
}

/// Gradients of <upstream, net(x)> with respect to every parameter and to x.
template <class T>
MlpGrads<T> mlp_backward(const Mlp<T>& net, const MlpTrace<T>& tr, const Tensor<T>& upstream_in,
                         bool param_grads = true) {
    const std::size_t n = net.num_layers();
    const std::size_t rows = tr.output.rows();
    if (upstream_in.size() != tr.output.size() || upstream_in.shape().back() != net.output_width())
        throw ValidationError("mlp_backward: upstream shape " + shape_str(upstream_in.shape()) +
                              " does not match output shape " + shape_str(tr.output.shape()));
    Tensor<T> upstream({rows, net.output_width()}, upstream_in.values());

    // g[l] = dL/d post[l]; index n holds the output gradient
    std::vector<Tensor<T>> g(n + 1);
    g[n] = std::move(upstream);
    for (std::size_t l = 0; l < n; ++l) g[l] = Tensor<T>::matrix(rows, net.widths()[l]);

    MlpGrads<T> out;
    if (param_grads) out.params.resize(2 * n);

    for (std::size_t l = n; l-- > 0;) {
        const bool out_layer = l + 1 == n;
        Tensor<T> dz = g[l + 1];
        if (!out_layer && net.hidden_activation() == Activation::relu) {
            const auto& z = tr.pre[l];
            for (std::size_t i = 0; i < dz.size(); ++i)
                if (!(z[i] > T{})) dz[i] = T{};
        }
        if (net.is_skip(l)) {
            auto& gp = g[l - 1];
            const auto& go = g[l + 1];
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = gp[i] + go[i];
        }
        if (param_grads) {
            Tensor<T> xt = transpose(tr.post[l]);
            Tensor<T> dw = Tensor<T>::matrix(net.widths()[l], net.widths()[l + 1]);
            kernel::gemm_acc(xt.rows(), rows, dw.cols(), xt.data(), dz.data(), dw.data());
            Tensor<T> db(Shape{net.widths()[l + 1]});
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < db.size(); ++c) db[c] = db[c] + dz(r, c);
            out.params[2 * l] = std::move(dw);
            out.params[2 * l + 1] = std::move(db);
        }
        Tensor<T> wt = transpose(net.weight(l));
        kernel::gemm_acc(rows, dz.cols(), wt.cols(), dz.data(), wt.data(), g[l].data());
    }
    out.input = std::move(g[0]);
    return out;
}

template <class T>
MlpGrads<T> mlp_backward(const Mlp<T>& net, const Tensor<T>& x, const Tensor<T>& upstream, bool param_grads = true) {
    MlpGrads<T> gr = mlp_backward(net, mlp_trace(net, x), upstream, param_grads);
    gr.input = detail::restore_rank(std::move(gr.input), x);
    return gr;
}

}  // namespace edis
