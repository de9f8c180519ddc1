#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "beamrl/common.hpp"

namespace beamrl {

enum class Activation : std::uint8_t { Relu = 0, ScaledTanh = 1, Identity = 2 };

inline double apply_activation(Activation act, double z) {
    switch (act) {
        case Activation::Relu: return z > 0.0 ? z : 0.0;
        case Activation::ScaledTanh: return kPi * std::tanh(z);
        case Activation::Identity: return z;
    }
    return z;
}

inline double activation_derivative(Activation act, double z) {
    switch (act) {
        case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::ScaledTanh: {
            const double t = std::tanh(z);
            return kPi * (1.0 - t * t);
        }
        case Activation::Identity: return 1.0;
    }
    return 1.0;
}

struct DenseLayer {
    Eigen::MatrixXd weights;  // out x in
    Eigen::VectorXd bias;     // out
    Activation act = Activation::Identity;
};

/// Plain feed-forward network over batches stored column-wise (one sample per
/// column). Forward caches pre-activations so backward can run without
/// recomputation; backward produces parameter gradients and, when asked, the
/// gradient with respect to the inputs.
class Mlp {
  public:
    Mlp() = default;

    /// dims = {in, hidden..., out}; acts has one entry per layer.
    Mlp(const std::vector<int>& dims, const std::vector<Activation>& acts, std::uint64_t seed) {
        if (dims.size() < 2 || acts.size() != dims.size() - 1)
            throw std::invalid_argument("Mlp: dims/activations mismatch");
        auto rng = make_rng(seed);
        layers_.resize(acts.size());
        for (std::size_t l = 0; l < acts.size(); ++l) {
            const int in = dims[l], out = dims[l + 1];
            layers_[l].act = acts[l];
            layers_[l].bias = Eigen::VectorXd::Zero(out);
            layers_[l].weights.resize(out, in);
            // He-style uniform fan-in scaling on rectifier layers; the output
            // layer starts near zero as usual for DDPG heads.
            const bool last = (l + 1 == acts.size());
            const double limit = last ? 3e-3 : std::sqrt(6.0 / in);
            std::uniform_real_distribution<double> dist(-limit, limit);
            for (int i = 0; i < out; ++i)
                for (int j = 0; j < in; ++j) layers_[l].weights(i, j) = dist(rng);
        }
    }

    /// Actor: M -> 16M -> 16M -> M with rectifier hidden layers and a final
    /// tanh scaled by pi, keeping every output phase strictly inside (-pi, pi).
    static Mlp actor(int antennas, std::uint64_t seed) {
        const int h = 16 * antennas;
        return Mlp({antennas, h, h, antennas},
                   {Activation::Relu, Activation::Relu, Activation::ScaledTanh}, seed);
    }

    /// Critic: the state-action concatenation 2M -> 32M -> 32M -> 1 with a
    /// linear scalar head.
    static Mlp critic(int antennas, std::uint64_t seed) {
        const int h = 32 * antennas;
        return Mlp({2 * antennas, h, h, 1},
                   {Activation::Relu, Activation::Relu, Activation::Identity}, seed);
    }

    int input_dim() const { return static_cast<int>(layers_.front().weights.cols()); }
    int output_dim() const { return static_cast<int>(layers_.back().weights.rows()); }
    std::size_t layer_count() const { return layers_.size(); }
    const DenseLayer& layer(std::size_t l) const { return layers_.at(l); }
    DenseLayer& layer(std::size_t l) { return layers_.at(l); }

    struct Cache {
        std::vector<Eigen::MatrixXd> inputs;  // inputs[l] = input to layer l
        std::vector<Eigen::MatrixXd> pre;     // pre[l] = W*x + b before activation
    };

    Eigen::MatrixXd forward(const Eigen::MatrixXd& batch, Cache* cache = nullptr) const {
        if (batch.rows() != input_dim()) throw std::invalid_argument("Mlp::forward: shape mismatch");
        if (cache) {
            cache->inputs.clear();
            cache->pre.clear();
        }
        Eigen::MatrixXd x = batch;
        for (const auto& layer : layers_) {
            if (cache) cache->inputs.push_back(x);
            Eigen::MatrixXd z = layer.weights * x;
            z.colwise() += layer.bias;
            if (cache) cache->pre.push_back(z);
            x = z.unaryExpr([&layer](double v) { return apply_activation(layer.act, v); });
        }
        return x;
    }

    Eigen::VectorXd forward_vec(const Eigen::VectorXd& input) const {
        return forward(Eigen::MatrixXd(input)).col(0);
    }

    struct Gradients {
        std::vector<Eigen::MatrixXd> weights;
        std::vector<Eigen::VectorXd> bias;
    };

    /// Backpropagates the upstream gradient dL/d(output) through the cached
    /// forward pass. Fills `grads` when non-null; returns dL/d(input) when
    /// `input_grad` is true (the critic-to-actor chain needs it).
    Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& output_grad,
                             Gradients* grads, bool input_grad = false) const {
        if (cache.pre.size() != layers_.size())
            throw std::invalid_argument("Mlp::backward: cache does not match network");
        if (grads) {
            grads->weights.assign(layers_.size(), {});
            grads->bias.assign(layers_.size(), {});
        }
        Eigen::MatrixXd delta = output_grad;
        for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
            const auto& layer = layers_[static_cast<std::size_t>(l)];
            const auto& z = cache.pre[static_cast<std::size_t>(l)];
            Eigen::MatrixXd dz =
                delta.cwiseProduct(z.unaryExpr([&layer](double v) { return activation_derivative(layer.act, v); }));
            if (grads) {
                grads->weights[static_cast<std::size_t>(l)].noalias() =
                    dz * cache.inputs[static_cast<std::size_t>(l)].transpose();
                grads->bias[static_cast<std::size_t>(l)] = dz.rowwise().sum();
            }
            if (l > 0 || input_grad) delta.noalias() = layer.weights.transpose() * dz;
        }
        return delta;
    }

    bool same_shape(const Mlp& other) const {
        if (layers_.size() != other.layers_.size()) return false;
        for (std::size_t l = 0; l < layers_.size(); ++l)
            if (layers_[l].weights.rows() != other.layers_[l].weights.rows() ||
                layers_[l].weights.cols() != other.layers_[l].weights.cols() ||
                layers_[l].act != other.layers_[l].act)
                return false;
        return true;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
        return n;
    }

  private:
    std::vector<DenseLayer> layers_;
};

/// Adam with decoupled weight decay: the decay term is applied directly to
/// the parameters and never enters the moment estimates.
class AdamW {
  public:
    AdamW() = default;
    AdamW(double learning_rate, double weight_decay)
        : lr_(learning_rate), weight_decay_(weight_decay) {}

    double learning_rate() const { return lr_; }
    double weight_decay() const { return weight_decay_; }
    std::uint64_t steps() const { return step_; }

    void step(Mlp& net, const Mlp::Gradients& grads) {
        if (moments_w_.empty()) init_moments(net);
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            auto& layer = net.layer(l);
            update(layer.weights, grads.weights[l], moments_w_[l].first, moments_w_[l].second, bc1, bc2);
            update(layer.bias, grads.bias[l], moments_b_[l].first, moments_b_[l].second, bc1, bc2);
        }
    }

    void save(std::ostream& os) const;
    void load(std::istream& is);

  private:
    template <typename Mat>
    void update(Mat& param, const Mat& grad, Mat& m, Mat& v, double bc1, double bc2) {
        m = beta1_ * m + (1.0 - beta1_) * grad;
        v.array() = beta2_ * v.array() + (1.0 - beta2_) * grad.array().square();
        param.array() -=
            lr_ * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_) + weight_decay_ * param.array());
    }

    void init_moments(const Mlp& net) {
        moments_w_.resize(net.layer_count());
        moments_b_.resize(net.layer_count());
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            const auto& layer = net.layer(l);
            moments_w_[l] = {Eigen::MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()),
                             Eigen::MatrixXd::Zero(layer.weights.rows(), layer.weights.cols())};
            moments_b_[l] = {Eigen::VectorXd::Zero(layer.bias.size()),
                             Eigen::VectorXd::Zero(layer.bias.size())};
        }
    }

    double lr_ = 1e-3;
    double weight_decay_ = 0.0;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    std::uint64_t step_ = 0;
    std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> moments_w_;
    std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> moments_b_;
};

/// Trainable network plus its slowly tracking target copy.
struct TargetPair {
    Mlp net;
    Mlp target;

    explicit TargetPair(Mlp n) : net(std::move(n)), target(net) {}
    TargetPair() = default;
};

/// theta' <- tau*theta + (1-tau)*theta', elementwise.
inline void soft_update(TargetPair& pair, double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("soft_update: tau must be in (0, 1]");
    if (!pair.net.same_shape(pair.target)) throw std::invalid_argument("soft_update: shape mismatch");
    for (std::size_t l = 0; l < pair.net.layer_count(); ++l) {
        auto& t = pair.target.layer(l);
        const auto& s = pair.net.layer(l);
        t.weights = tau * s.weights + (1.0 - tau) * t.weights;
        t.bias = tau * s.bias + (1.0 - tau) * t.bias;
    }
}

/// One optimizer step on the mean-squared error between the critic outputs
/// for (state, action) columns and the given targets; returns the pre-step
/// loss.
inline double critic_step(Mlp& critic, AdamW& opt, const Eigen::MatrixXd& states,
                          const Eigen::MatrixXd& actions, const Eigen::VectorXd& targets) {
    const auto batch = states.cols();
    if (batch < 1) throw std::invalid_argument("critic_step: empty batch");
    if (actions.cols() != batch || targets.size() != batch)
        throw std::invalid_argument("critic_step: batch size mismatch");
    Eigen::MatrixXd input(states.rows() + actions.rows(), batch);
    input << states, actions;
    Mlp::Cache cache;
    const Eigen::MatrixXd q = critic.forward(input, &cache);  // 1 x B
    const Eigen::RowVectorXd err = q.row(0) - targets.transpose();
    const double loss = err.squaredNorm() / static_cast<double>(batch);
    const Eigen::MatrixXd output_grad = (2.0 / static_cast<double>(batch)) * err;
    Mlp::Gradients grads;
    critic.backward(cache, output_grad, &grads);
    opt.step(critic, grads);
    return loss;
}

/// One ascent step on J = E[Q(s, mu(s))] via the chain rule
/// grad_a Q * grad_theta mu; the critic itself stays frozen. Returns the
/// pre-step batch estimate of J.
inline double actor_step(Mlp& actor, const Mlp& critic, AdamW& opt, const Eigen::MatrixXd& states) {
    const auto batch = states.cols();
    if (batch < 1) throw std::invalid_argument("actor_step: empty batch");
    Mlp::Cache actor_cache;
    const Eigen::MatrixXd actions = actor.forward(states, &actor_cache);
    Eigen::MatrixXd input(states.rows() + actions.rows(), batch);
    input << states, actions;
    Mlp::Cache critic_cache;
    const Eigen::MatrixXd q = critic.forward(input, &critic_cache);
    const double objective = q.row(0).mean();
    // Minimize -J: upstream gradient is -1/B on each Q output.
    Eigen::MatrixXd output_grad = Eigen::MatrixXd::Constant(1, batch, -1.0 / static_cast<double>(batch));
    const Eigen::MatrixXd input_grad = critic.backward(critic_cache, output_grad, nullptr, true);
    const Eigen::MatrixXd action_grad = input_grad.bottomRows(actions.rows());
    Mlp::Gradients grads;
    actor.backward(actor_cache, action_grad, &grads);
    opt.step(actor, grads);
    return objective;
}

/// Compares the analytic gradient of the scalar readout sum(output) with
/// central finite differences over every parameter; returns the largest
/// relative error. The difference quotient is evaluated in extended
/// precision so the oracle's own rounding noise stays below the comparison
/// floor. The caller is responsible for avoiding rectifier kinks (see
/// min_abs_preactivation).
inline double gradient_check(Mlp& net, const Eigen::VectorXd& input, double epsilon) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
        throw std::invalid_argument("gradient_check: epsilon out of [1e-7, 1e-3]");
    Mlp::Cache cache;
    const Eigen::MatrixXd batch(input);
    net.forward(batch, &cache);
    Mlp::Gradients grads;
    net.backward(cache, Eigen::MatrixXd::Ones(net.output_dim(), 1), &grads);

    auto loss_at = [&net, &input]() -> long double {
        std::vector<long double> x(input.begin(), input.end());
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            const auto& layer = net.layer(l);
            std::vector<long double> y(static_cast<std::size_t>(layer.weights.rows()));
            for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) {
                long double z = layer.bias[i];
                for (Eigen::Index j = 0; j < layer.weights.cols(); ++j)
                    z += static_cast<long double>(layer.weights(i, j)) * x[static_cast<std::size_t>(j)];
                switch (layer.act) {
                    case Activation::Relu: y[static_cast<std::size_t>(i)] = z > 0.0L ? z : 0.0L; break;
                    case Activation::ScaledTanh:
                        y[static_cast<std::size_t>(i)] = static_cast<long double>(kPi) * std::tanh(z);
                        break;
                    case Activation::Identity: y[static_cast<std::size_t>(i)] = z; break;
                }
            }
            x = std::move(y);
        }
        long double sum = 0.0L;
        for (long double v : x) sum += v;
        return sum;
    };
    double max_rel = 0.0;
    auto probe = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + epsilon;
        const long double up = loss_at();
        param = saved - epsilon;
        const long double down = loss_at();
        param = saved;
        const double numeric = static_cast<double>((up - down) / (2.0L * static_cast<long double>(epsilon)));
        const double rel = std::fabs(analytic - numeric) /
                           std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    };
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        auto& layer = net.layer(l);
        for (Eigen::Index i = 0; i < layer.weights.size(); ++i)
            probe(layer.weights.data()[i], grads.weights[l].data()[i]);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
            probe(layer.bias.data()[i], grads.bias[l].data()[i]);
    }
    return max_rel;
}

/// Smallest |pre-activation| over the rectifier layers for this input; used
/// by gradient-check callers to skip instances where a finite-difference
/// probe could cross a kink.
inline double min_abs_preactivation(const Mlp& net, const Eigen::VectorXd& input) {
    Mlp::Cache cache;
    net.forward(Eigen::MatrixXd(input), &cache);
    double min_abs = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < net.layer_count(); ++l)
        if (net.layer(l).act == Activation::Relu)
            min_abs = std::min(min_abs, cache.pre[l].cwiseAbs().minCoeff());
    return min_abs;
}

// --- Binary checkpoints ----------------------------------------------------
//
// Little-endian stream: magic "BRLN" + u32 version, then layer shapes,
// parameters, and (for optimizers) moment accumulators. Exact round-trip.

namespace io {

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
inline double read_f64(std::istream& is) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

template <typename Mat>
void write_matrix(std::ostream& os, const Mat& m) {
    write_u32(os, static_cast<std::uint32_t>(m.rows()));
    write_u32(os, static_cast<std::uint32_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
}

inline Eigen::MatrixXd read_matrix(std::istream& is) {
    const auto rows = read_u32(is), cols = read_u32(is);
    Eigen::MatrixXd m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    return m;
}

inline Eigen::VectorXd read_vector(std::istream& is) {
    Eigen::MatrixXd m = read_matrix(is);
    return Eigen::Map<Eigen::VectorXd>(m.data(), m.size());
}

}  // namespace io

inline void save_mlp(const Mlp& net, std::ostream& os) {
    os.write("BRLN", 4);
    io::write_u32(os, 1);
    io::write_u32(os, static_cast<std::uint32_t>(net.layer_count()));
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const auto& layer = net.layer(l);
        io::write_u32(os, static_cast<std::uint32_t>(layer.act));
        io::write_matrix(os, layer.weights);
        io::write_matrix(os, Eigen::MatrixXd(layer.bias));
    }
}

inline Mlp load_mlp(std::istream& is) {
    char magic[4] = {};
    is.read(magic, 4);
    if (std::string_view(magic, 4) != "BRLN" || io::read_u32(is) != 1)
        throw std::runtime_error("load_mlp: bad checkpoint header");
    const auto layers = io::read_u32(is);
    std::vector<int> dims;
    std::vector<Activation> acts;
    std::vector<DenseLayer> loaded(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
        loaded[l].act = static_cast<Activation>(io::read_u32(is));
        loaded[l].weights = io::read_matrix(is);
        loaded[l].bias = io::read_vector(is);
    }
    if (!is) throw std::runtime_error("load_mlp: truncated checkpoint");
    dims.push_back(static_cast<int>(loaded.front().weights.cols()));
    for (const auto& l : loaded) {
        dims.push_back(static_cast<int>(l.weights.rows()));
        acts.push_back(l.act);
    }
    Mlp net(dims, acts, 0);
    for (std::uint32_t l = 0; l < layers; ++l) net.layer(l) = std::move(loaded[l]);
    return net;
}

inline void AdamW::save(std::ostream& os) const {
    os.write("BRLO", 4);
    io::write_u32(os, 1);
    io::write_f64(os, lr_);
    io::write_f64(os, weight_decay_);
    io::write_f64(os, beta1_);
    io::write_f64(os, beta2_);
    io::write_f64(os, eps_);
    io::write_u64(os, step_);
    io::write_u32(os, static_cast<std::uint32_t>(moments_w_.size()));
    for (std::size_t l = 0; l < moments_w_.size(); ++l) {
        io::write_matrix(os, moments_w_[l].first);
        io::write_matrix(os, moments_w_[l].second);
        io::write_matrix(os, Eigen::MatrixXd(moments_b_[l].first));
        io::write_matrix(os, Eigen::MatrixXd(moments_b_[l].second));
    }
}

inline void AdamW::load(std::istream& is) {
    char magic[4] = {};
    is.read(magic, 4);
    if (std::string_view(magic, 4) != "BRLO" || io::read_u32(is) != 1)
        throw std::runtime_error("AdamW::load: bad checkpoint header");
    lr_ = io::read_f64(is);
    weight_decay_ = io::read_f64(is);
    beta1_ = io::read_f64(is);
    beta2_ = io::read_f64(is);
    eps_ = io::read_f64(is);
    step_ = io::read_u64(is);
    const auto layers = io::read_u32(is);
    moments_w_.resize(layers);
    moments_b_.resize(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
        moments_w_[l].first = io::read_matrix(is);
        moments_w_[l].second = io::read_matrix(is);
        moments_b_[l].first = io::read_vector(is);
        moments_b_[l].second = io::read_vector(is);
    }
    if (!is) throw std::runtime_error("AdamW::load: truncated checkpoint");
}

}  // namespace beamrl
