#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "beamrl/beams.hpp"
#include "beamrl/channel.hpp"
#include "beamrl/common.hpp"
#include "beamrl/neural.hpp"

namespace beamrl {

/// Temporally correlated exploration noise x <- x + theta*(0 - x) + sigma(t)*N(0, I)
/// with a geometrically decaying, floored noise scale. Early on the noise is
/// strong enough to push a predicted phase anywhere on the circle; near the
/// end it only perturbs to adjacent lattice phases.
class OuProcess {
  public:
    OuProcess() = default;
    OuProcess(int dim, double theta, double sigma0, double sigma_min, long decay_iterations,
              std::uint64_t seed)
        : theta_(theta),
          sigma0_(sigma0),
          sigma_min_(std::min(sigma_min, sigma0)),
          state_(Eigen::VectorXd::Zero(dim)),
          rng_(make_rng(seed)) {
        if (dim < 1) throw std::invalid_argument("OuProcess: dim must be >= 1");
        if (theta < 0.0 || theta > 1.0) throw std::invalid_argument("OuProcess: theta must be in [0,1]");
        if (sigma0 < 0.0 || sigma_min_ < 0.0) throw std::invalid_argument("OuProcess: negative sigma");
        if (decay_iterations > 0 && sigma_min_ > 0.0 && sigma0 > 0.0)
            decay_ = std::pow(sigma_min_ / sigma0_, 1.0 / static_cast<double>(decay_iterations));
    }

    double sigma() const {
        if (decay_ >= 1.0 || sigma0_ == 0.0) return sigma0_;
        return std::max(sigma_min_, sigma0_ * std::pow(decay_, static_cast<double>(step_)));
    }

    Eigen::VectorXd sample() {
        const double s = sigma();
        std::normal_distribution<double> unit;
        for (Eigen::Index i = 0; i < state_.size(); ++i)
            state_[i] += theta_ * (0.0 - state_[i]) + s * unit(rng_);
        ++step_;
        return state_;
    }

    const Eigen::VectorXd& state() const { return state_; }

    void save(std::ostream& os) const;
    void load(std::istream& is);

  private:
    double theta_ = 0.15;
    double sigma0_ = kPi / 2.0;
    double sigma_min_ = 0.0;
    double decay_ = 1.0;
    long step_ = 0;
    Eigen::VectorXd state_;
    std::mt19937_64 rng_;
};

/// One stored interaction. The action directly specifies the next state.
struct Transition {
    Eigen::VectorXd state;
    Eigen::VectorXd action;
    int reward = 0;  // in {-1, 0, +1}
    Eigen::VectorXd next_state;
};

/// Fixed-capacity ring of transitions with uniform without-replacement
/// batch sampling.
class ReplayBuffer {
  public:
    explicit ReplayBuffer(std::size_t capacity = 8192) : capacity_(capacity) {
        if (capacity < 1) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return data_.size(); }

    void push(Transition t) {
        if (data_.size() < capacity_) {
            data_.push_back(std::move(t));
        } else {
            data_[head_] = std::move(t);
            head_ = (head_ + 1) % capacity_;
        }
    }

    const Transition& at(std::size_t i) const { return data_.at(i); }

    std::vector<std::size_t> sample_indices(std::size_t batch, std::mt19937_64& rng) const {
        const std::size_t n = std::min(batch, data_.size());
        std::vector<std::size_t> all(data_.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        std::vector<std::size_t> out;
        out.reserve(n);
        std::sample(all.begin(), all.end(), std::back_inserter(out), n, rng);
        return out;
    }

    void save(std::ostream& os) const;
    void load(std::istream& is);

  private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<Transition> data_;
};

/// Ternary reward with an adaptive threshold: +1 beats the best gain seen so
/// far (and raises the bar), 0 merely improves on the previous step, -1
/// otherwise. The threshold doubles as the running best-gain record.
struct RewardTracker {
    double threshold = 0.0;  // beta; always equals best_gain
    double prev_gain = 0.0;
    double best_gain = 0.0;
    BeamVector best_beam;

    int update(double gain_value, const BeamVector& beam) {
        if (gain_value < 0.0) throw std::invalid_argument("RewardTracker: negative gain");
        int reward;
        if (gain_value > threshold) {
            reward = 1;
            threshold = gain_value;
            best_gain = gain_value;
            best_beam = beam;
        } else if (gain_value > prev_gain) {
            reward = 0;
        } else {
            reward = -1;
        }
        prev_gain = gain_value;
        return reward;
    }
};

/// The k lattice beams closest to a continuous phase vector under summed
/// squared circular per-element distance, found by best-first expansion over
/// per-element alternative phases. k = 1 coincides with quantize_phases.
inline std::vector<BeamVector> nearest_lattice_beams(const Eigen::VectorXd& proto,
                                                     const PhaseSet& phases, int k) {
    if (k < 1) throw std::invalid_argument("nearest_lattice_beams: k must be >= 1");
    const int m_count = static_cast<int>(proto.size());
    if (m_count < 1) throw std::invalid_argument("nearest_lattice_beams: empty proto-action");

    // Per element: lattice indices ranked by circular distance, ties toward
    // the smaller index (consistent with quantize_phases).
    std::vector<std::vector<std::pair<double, int>>> ranked(m_count);
    for (int m = 0; m < m_count; ++m) {
        if (!std::isfinite(proto[m]))
            throw std::invalid_argument("nearest_lattice_beams: non-finite proto-action");
        ranked[m].reserve(phases.size());
        for (int i = 0; i < phases.size(); ++i) {
            const double d = PhaseSet::circular_distance(proto[m], phases.value(i));
            ranked[m].push_back({d * d, i});
        }
        std::stable_sort(ranked[m].begin(), ranked[m].end());
    }

    using Ranks = std::vector<int>;
    using Node = std::pair<double, Ranks>;
    std::priority_queue<Node, std::vector<Node>, std::greater<Node>> frontier;
    std::set<Ranks> seen;

    Ranks start(m_count, 0);
    double start_cost = 0.0;
    for (int m = 0; m < m_count; ++m) start_cost += ranked[m][0].first;
    frontier.push({start_cost, start});
    seen.insert(start);

    std::vector<BeamVector> out;
    while (!frontier.empty() && static_cast<int>(out.size()) < k) {
        auto [cost, ranks] = frontier.top();
        frontier.pop();
        BeamVector beam;
        beam.indices.resize(m_count);
        for (int m = 0; m < m_count; ++m) beam.indices[m] = ranked[m][ranks[m]].second;
        out.push_back(std::move(beam));
        for (int m = 0; m < m_count; ++m) {
            if (ranks[m] + 1 >= phases.size()) continue;
            Ranks next = ranks;
            ++next[m];
            if (!seen.insert(next).second) continue;
            const double next_cost =
                cost - ranked[m][ranks[m]].first + ranked[m][ranks[m] + 1].first;
            frontier.push({next_cost, std::move(next)});
        }
    }
    return out;
}

/// Critic-side candidate selection: the candidate whose (state, phase-vector)
/// pair scores the highest Q value; ties go to the first candidate.
inline BeamVector select_action(const Mlp& critic, const Eigen::VectorXd& state,
                                const std::vector<BeamVector>& candidates, const PhaseSet& phases) {
    if (candidates.empty()) throw std::invalid_argument("select_action: empty candidate list");
    if (candidates.size() == 1) return candidates.front();
    std::size_t best = 0;
    double best_q = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        Eigen::VectorXd input(2 * state.size());
        input << state, realize_phases(candidates[i], phases);
        const double q = critic.forward_vec(input)[0];
        if (q > best_q) {
            best_q = q;
            best = i;
        }
    }
    return candidates[best];
}

struct AgentConfig {
    int antennas = 8;
    int bits = 3;
    double actor_lr = 1e-3;
    double critic_lr = 1e-3;
    double actor_weight_decay = 1e-2;
    double critic_weight_decay = 1e-3;
    double gamma = 0.5;
    double tau = 0.05;
    int target_every = 1;  // C
    int batch = 1024;      // B
    int capacity = 8192;
    int knn = 1;
    double ou_theta = 0.15;
    double ou_sigma0 = kPi / 2.0;
    double ou_sigma_min = -1.0;      // < 0: pi / 2^bits
    long ou_decay_iterations = -1;   // < 0: resolved to T/2 when training starts
    std::uint64_t seed = 1;

    double resolved_sigma_min() const {
        return ou_sigma_min >= 0.0 ? ou_sigma_min : kPi / static_cast<double>(1 << bits);
    }
};

struct TrainLogRow {
    long iteration;
    double gain;
    double threshold;
    int reward;
};

struct TrainResult {
    BeamVector best_beam;
    double best_gain = 0.0;
    std::vector<TrainLogRow> log;
};

/// A single Wolpertinger DDPG learner: actor/critic with target copies,
/// replay, OU exploration over proto-phases, nearest-lattice quantization and
/// the adaptive-threshold reward. One agent owns one sequential training
/// loop; separate agents never share mutable state.
class Agent {
  public:
    explicit Agent(const AgentConfig& config, long planned_iterations = 0)
        : config_(config),
          phases_(config.bits),
          actor_(Mlp::actor(config.antennas, derive_seed(config.seed, "actor"))),
          critic_(Mlp::critic(config.antennas, derive_seed(config.seed, "critic"))),
          actor_opt_(config.actor_lr, config.actor_weight_decay),
          critic_opt_(config.critic_lr, config.critic_weight_decay),
          buffer_(static_cast<std::size_t>(config.capacity)),
          rng_(make_rng(derive_seed(config.seed, "sample"))) {
        if (config.antennas < 1) throw std::invalid_argument("Agent: antennas must be >= 1");
        if (config.batch < 1) throw std::invalid_argument("Agent: batch must be >= 1");
        if (config.knn < 1) throw std::invalid_argument("Agent: knn must be >= 1");
        if (!(config.gamma >= 0.0 && config.gamma < 1.0))
            throw std::invalid_argument("Agent: gamma must be in [0, 1)");
        long horizon = config.ou_decay_iterations;
        if (horizon < 0) horizon = std::max<long>(planned_iterations / 2, 1);
        ou_ = OuProcess(config.antennas, config.ou_theta, config.ou_sigma0,
                        config.resolved_sigma_min(), horizon, derive_seed(config.seed, "ou"));
        // Random initial beamforming vector as the initial state.
        std::uniform_int_distribution<int> idx(0, phases_.size() - 1);
        auto init_rng = make_rng(derive_seed(config.seed, "init"));
        state_.indices.resize(config.antennas);
        for (auto& i : state_.indices) i = idx(init_rng);
        tracker_.best_beam = state_;
    }

    const AgentConfig& config() const { return config_; }
    const PhaseSet& phases() const { return phases_; }
    const BeamVector& best_beam() const { return tracker_.best_beam; }
    double best_gain() const { return tracker_.best_gain; }
    double threshold() const { return tracker_.threshold; }
    long iteration() const { return iteration_; }
    const ReplayBuffer& buffer() const { return buffer_; }
    const Mlp& critic_net() const { return critic_.net; }
    const Mlp& actor_net() const { return actor_.net; }

    /// Proto-action (actor output plus exploration noise, wrapped into
    /// (-pi, pi]) and its k nearest lattice beams. Advances the noise process.
    std::pair<Eigen::VectorXd, std::vector<BeamVector>> propose_action(const BeamVector& state) {
        Eigen::VectorXd proto =
            actor_.net.forward_vec(realize_phases(state, phases_)) + ou_.sample();
        for (Eigen::Index i = 0; i < proto.size(); ++i) proto[i] = wrap_angle(proto[i]);
        return {proto, nearest_lattice_beams(proto, phases_, config_.knn)};
    }

    /// Ternary reward for the gain just observed with `executed`; updates the
    /// threshold, previous-gain and best-beam records.
    int compute_reward(double gain_value, const BeamVector& executed) {
        return tracker_.update(gain_value, executed);
    }

    /// One full Alg.-1 iteration against the channel set; returns the log row.
    TrainLogRow step(const ChannelSet& set) {
        if (set.empty()) throw std::invalid_argument("Agent::step: empty channel set");
        ++iteration_;
        auto [proto, candidates] = propose_action(state_);
        BeamVector action = select_action(critic_.net, realize_phases(state_, phases_), candidates, phases_);
        const double g = average_gain(realize(action, phases_), set);
        const int reward = compute_reward(g, action);

        const Eigen::VectorXd action_phases = realize_phases(action, phases_);
        buffer_.push({realize_phases(state_, phases_), action_phases, reward, action_phases});
        state_ = std::move(action);

        if (buffer_.size() >= static_cast<std::size_t>(config_.batch)) train_once();
        return {iteration_, g, tracker_.threshold, reward};
    }

    std::vector<TrainLogRow> train(const ChannelSet& set, long iterations) {
        if (iterations < 1) throw std::invalid_argument("Agent::train: iterations must be >= 1");
        std::vector<TrainLogRow> log;
        log.reserve(static_cast<std::size_t>(iterations));
        for (long t = 0; t < iterations; ++t) log.push_back(step(set));
        return log;
    }

    void save(std::ostream& os) const;
    static Agent load(std::istream& is);

  private:
    void train_once() {
        const int m_count = config_.antennas;
        const auto idx = buffer_.sample_indices(static_cast<std::size_t>(config_.batch), rng_);
        const auto batch = static_cast<Eigen::Index>(idx.size());
        Eigen::MatrixXd states(m_count, batch), actions(m_count, batch), next_states(m_count, batch);
        Eigen::VectorXd rewards(batch);
        for (Eigen::Index b = 0; b < batch; ++b) {
            const Transition& t = buffer_.at(idx[static_cast<std::size_t>(b)]);
            states.col(b) = t.state;
            actions.col(b) = t.action;
            next_states.col(b) = t.next_state;
            rewards[b] = t.reward;
        }
        // y_b = r_b + gamma * Q'(s_{b+1}, mu'(s_{b+1}))
        const Eigen::MatrixXd next_actions = actor_.target.forward(next_states);
        Eigen::MatrixXd critic_in(2 * m_count, batch);
        critic_in << next_states, next_actions;
        const Eigen::VectorXd targets =
            rewards + config_.gamma * critic_.target.forward(critic_in).row(0).transpose();

        critic_step(critic_.net, critic_opt_, states, actions, targets);
        actor_step(actor_.net, critic_.net, actor_opt_, states);
        if (iteration_ % config_.target_every == 0) {
            soft_update(actor_, config_.tau);
            soft_update(critic_, config_.tau);
        }
    }

    AgentConfig config_;
    PhaseSet phases_;
    TargetPair actor_;
    TargetPair critic_;
    AdamW actor_opt_;
    AdamW critic_opt_;
    ReplayBuffer buffer_;
    OuProcess ou_;
    RewardTracker tracker_;
    BeamVector state_;
    long iteration_ = 0;
    std::mt19937_64 rng_;
};

/// Runs a fresh agent for `iterations` steps on the (normalized) channel set
/// and returns the best beam found together with the per-iteration log.
inline TrainResult train_beam_pattern(const AgentConfig& config, const ChannelSet& set,
                                      long iterations) {
    if (iterations < 1) throw std::invalid_argument("train_beam_pattern: iterations must be >= 1");
    if (set.empty()) throw std::invalid_argument("train_beam_pattern: empty channel set");
    if (set.antennas() != config.antennas)
        throw std::invalid_argument("train_beam_pattern: antenna count mismatch");
    Agent agent(config, iterations);
    TrainResult result;
    result.log = agent.train(set, iterations);
    result.best_beam = agent.best_beam();
    result.best_gain = agent.best_gain();
    return result;
}

// --- Checkpointing ---------------------------------------------------------

namespace io {

inline void write_rng(std::ostream& os, const std::mt19937_64& rng) {
    std::ostringstream tmp;
    tmp << rng;
    const std::string s = tmp.str();
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_rng(std::istream& is, std::mt19937_64& rng) {
    const auto n = read_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    std::istringstream tmp(s);
    tmp >> rng;
}

inline void write_vector_raw(std::ostream& os, const Eigen::VectorXd& v) {
    write_u64(os, static_cast<std::uint64_t>(v.size()));
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(8 * v.size()));
}

inline Eigen::VectorXd read_vector_raw(std::istream& is) {
    const auto n = read_u64(is);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(8 * n));
    return v;
}

inline void write_beam(std::ostream& os, const BeamVector& b) {
    write_u64(os, b.indices.size());
    for (int i : b.indices) write_u32(os, static_cast<std::uint32_t>(i));
}

inline BeamVector read_beam(std::istream& is) {
    BeamVector b;
    b.indices.resize(read_u64(is));
    for (auto& i : b.indices) i = static_cast<int>(read_u32(is));
    return b;
}

}  // namespace io

inline void OuProcess::save(std::ostream& os) const {
    io::write_f64(os, theta_);
    io::write_f64(os, sigma0_);
    io::write_f64(os, sigma_min_);
    io::write_f64(os, decay_);
    io::write_u64(os, static_cast<std::uint64_t>(step_));
    io::write_vector_raw(os, state_);
    io::write_rng(os, rng_);
}

inline void OuProcess::load(std::istream& is) {
    theta_ = io::read_f64(is);
    sigma0_ = io::read_f64(is);
    sigma_min_ = io::read_f64(is);
    decay_ = io::read_f64(is);
    step_ = static_cast<long>(io::read_u64(is));
    state_ = io::read_vector_raw(is);
    io::read_rng(is, rng_);
}

inline void ReplayBuffer::save(std::ostream& os) const {
    io::write_u64(os, capacity_);
    io::write_u64(os, head_);
    io::write_u64(os, data_.size());
    for (const auto& t : data_) {
        io::write_vector_raw(os, t.state);
        io::write_vector_raw(os, t.action);
        io::write_u32(os, static_cast<std::uint32_t>(t.reward + 1));
        io::write_vector_raw(os, t.next_state);
    }
}

inline void ReplayBuffer::load(std::istream& is) {
    capacity_ = io::read_u64(is);
    head_ = io::read_u64(is);
    data_.resize(io::read_u64(is));
    for (auto& t : data_) {
        t.state = io::read_vector_raw(is);
        t.action = io::read_vector_raw(is);
        t.reward = static_cast<int>(io::read_u32(is)) - 1;
        t.next_state = io::read_vector_raw(is);
    }
}

inline void Agent::save(std::ostream& os) const {
    os.write("BRLA", 4);
    io::write_u32(os, 1);
    io::write_u32(os, static_cast<std::uint32_t>(config_.antennas));
    io::write_u32(os, static_cast<std::uint32_t>(config_.bits));
    io::write_f64(os, config_.actor_lr);
    io::write_f64(os, config_.critic_lr);
    io::write_f64(os, config_.actor_weight_decay);
    io::write_f64(os, config_.critic_weight_decay);
    io::write_f64(os, config_.gamma);
    io::write_f64(os, config_.tau);
    io::write_u32(os, static_cast<std::uint32_t>(config_.target_every));
    io::write_u32(os, static_cast<std::uint32_t>(config_.batch));
    io::write_u32(os, static_cast<std::uint32_t>(config_.capacity));
    io::write_u32(os, static_cast<std::uint32_t>(config_.knn));
    io::write_f64(os, config_.ou_theta);
    io::write_f64(os, config_.ou_sigma0);
    io::write_f64(os, config_.ou_sigma_min);
    io::write_u64(os, static_cast<std::uint64_t>(config_.ou_decay_iterations));
    io::write_u64(os, config_.seed);

    save_mlp(actor_.net, os);
    save_mlp(actor_.target, os);
    save_mlp(critic_.net, os);
    save_mlp(critic_.target, os);
    actor_opt_.save(os);
    critic_opt_.save(os);
    buffer_.save(os);
    ou_.save(os);
    io::write_f64(os, tracker_.threshold);
    io::write_f64(os, tracker_.prev_gain);
    io::write_f64(os, tracker_.best_gain);
    io::write_beam(os, tracker_.best_beam);
    io::write_beam(os, state_);
    io::write_u64(os, static_cast<std::uint64_t>(iteration_));
    io::write_rng(os, rng_);
}

inline Agent Agent::load(std::istream& is) {
    char magic[4] = {};
    is.read(magic, 4);
    if (std::string_view(magic, 4) != "BRLA" || io::read_u32(is) != 1)
        throw std::runtime_error("Agent::load: bad checkpoint header");
    AgentConfig config;
    config.antennas = static_cast<int>(io::read_u32(is));
    config.bits = static_cast<int>(io::read_u32(is));
    config.actor_lr = io::read_f64(is);
    config.critic_lr = io::read_f64(is);
    config.actor_weight_decay = io::read_f64(is);
    config.critic_weight_decay = io::read_f64(is);
    config.gamma = io::read_f64(is);
    config.tau = io::read_f64(is);
    config.target_every = static_cast<int>(io::read_u32(is));
    config.batch = static_cast<int>(io::read_u32(is));
    config.capacity = static_cast<int>(io::read_u32(is));
    config.knn = static_cast<int>(io::read_u32(is));
    config.ou_theta = io::read_f64(is);
    config.ou_sigma0 = io::read_f64(is);
    config.ou_sigma_min = io::read_f64(is);
    config.ou_decay_iterations = static_cast<long>(io::read_u64(is));
    config.seed = io::read_u64(is);

    Agent agent(config, 1);
    agent.actor_.net = load_mlp(is);
    agent.actor_.target = load_mlp(is);
    agent.critic_.net = load_mlp(is);
    agent.critic_.target = load_mlp(is);
    agent.actor_opt_.load(is);
    agent.critic_opt_.load(is);
    agent.buffer_.load(is);
    agent.ou_.load(is);
    agent.tracker_.threshold = io::read_f64(is);
    agent.tracker_.prev_gain = io::read_f64(is);
    agent.tracker_.best_gain = io::read_f64(is);
    agent.tracker_.best_beam = io::read_beam(is);
    agent.state_ = io::read_beam(is);
    agent.iteration_ = static_cast<long>(io::read_u64(is));
    io::read_rng(is, agent.rng_);
    if (!is) throw std::runtime_error("Agent::load: truncated checkpoint");
    return agent;
}

}  // namespace beamrl
