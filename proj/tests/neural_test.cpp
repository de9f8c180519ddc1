#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "beamrl/neural.hpp"

using namespace beamrl;

namespace {

Eigen::VectorXd random_vector(int n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> unit;
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = scale * unit(rng);
    return v;
}

// Independent per-element evaluation of the network: plain nested loops, no
// Eigen products.
Eigen::VectorXd loop_forward(const Mlp& net, const Eigen::VectorXd& input) {
    std::vector<double> x(input.begin(), input.end());
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const auto& layer = net.layer(l);
        std::vector<double> y(static_cast<std::size_t>(layer.weights.rows()));
        for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) {
            double z = layer.bias[i];
            for (Eigen::Index j = 0; j < layer.weights.cols(); ++j)
                z += layer.weights(i, j) * x[static_cast<std::size_t>(j)];
            y[static_cast<std::size_t>(i)] = apply_activation(layer.act, z);
        }
        x = std::move(y);
    }
    return Eigen::Map<Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

Mlp zero_net(const Mlp& like) {
    Mlp net = like;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        net.layer(l).weights.setZero();
        net.layer(l).bias.setZero();
    }
    return net;
}

}  // namespace

TEST(ActorForward, ZeroParametersGiveZeroOutput) {
    const auto actor = zero_net(Mlp::actor(4, 1));
    std::mt19937_64 rng(2);
    const auto out = actor.forward_vec(random_vector(4, rng));
    EXPECT_NEAR(out.cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(ActorForward, OutputsStrictlyInsideScaledRange) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10000; ++trial) {
        Mlp actor = Mlp::actor(2, static_cast<std::uint64_t>(trial));
        const auto out = actor.forward_vec(random_vector(2, rng, kPi));
        EXPECT_LT(out.cwiseAbs().maxCoeff(), kPi);
    }
}

TEST(ActorForward, MatchesLoopOracle) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Mlp actor = Mlp::actor(3, static_cast<std::uint64_t>(trial + 100));
        const auto input = random_vector(3, rng, 2.0);
        const auto fast = actor.forward_vec(input);
        const auto slow = loop_forward(actor, input);
        EXPECT_NEAR((fast - slow).cwiseAbs().maxCoeff(), 0.0, 1e-10);
    }
}

TEST(CriticForward, ZeroParametersGiveZero) {
    const auto critic = zero_net(Mlp::critic(4, 1));
    std::mt19937_64 rng(7);
    Eigen::VectorXd input = random_vector(8, rng);
    EXPECT_NEAR(critic.forward_vec(input)[0], 0.0, 1e-15);
}

TEST(CriticForward, SensitiveToStateActionOrder) {
    const Mlp critic = Mlp::critic(3, 17);
    std::mt19937_64 rng(11);
    const auto state = random_vector(3, rng);
    const auto action = random_vector(3, rng);
    Eigen::VectorXd forward_in(6), swapped_in(6);
    forward_in << state, action;
    swapped_in << action, state;
    EXPECT_NE(critic.forward_vec(forward_in)[0], critic.forward_vec(swapped_in)[0]);
}

TEST(CriticForward, MatchesLoopOracle) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const Mlp critic = Mlp::critic(2, static_cast<std::uint64_t>(trial + 200));
        const auto input = random_vector(4, rng, 2.0);
        EXPECT_NEAR(critic.forward_vec(input)[0], loop_forward(critic, input)[0], 1e-10);
    }
}

TEST(CriticStep, PerfectTargetsLeaveOnlyWeightDecay) {
    Mlp critic = Mlp::critic(2, 23);
    std::mt19937_64 rng(17);
    Eigen::MatrixXd states(2, 4), actions(2, 4);
    for (int b = 0; b < 4; ++b) {
        states.col(b) = random_vector(2, rng);
        actions.col(b) = random_vector(2, rng);
    }
    Eigen::MatrixXd input(4, 4);
    input << states, actions;
    const Eigen::VectorXd targets = critic.forward(input).row(0);

    // With zero decay nothing moves (the data gradient is exactly zero).
    Mlp frozen = critic;
    AdamW no_decay(1e-3, 0.0);
    const double loss = critic_step(frozen, no_decay, states, actions, targets);
    EXPECT_NEAR(loss, 0.0, 1e-20);
    for (std::size_t l = 0; l < critic.layer_count(); ++l)
        EXPECT_NEAR((frozen.layer(l).weights - critic.layer(l).weights).cwiseAbs().maxCoeff(), 0.0,
                    1e-15);

    // With decay the parameters shrink toward zero.
    Mlp decayed = critic;
    AdamW with_decay(1e-3, 1e-2);
    critic_step(decayed, with_decay, states, actions, targets);
    EXPECT_LT(decayed.layer(1).weights.cwiseAbs().sum(), critic.layer(1).weights.cwiseAbs().sum());
}

TEST(CriticStep, LossDecreasesOnFixedToyBatch) {
    Mlp critic = Mlp::critic(2, 29);
    AdamW opt(1e-3, 0.0);
    std::mt19937_64 rng(19);
    Eigen::MatrixXd states(2, 8), actions(2, 8);
    Eigen::VectorXd targets(8);
    for (int b = 0; b < 8; ++b) {
        states.col(b) = random_vector(2, rng);
        actions.col(b) = random_vector(2, rng);
        targets[b] = random_vector(1, rng)[0];
    }
    std::vector<double> losses;
    for (int step = 0; step < 50; ++step)
        losses.push_back(critic_step(critic, opt, states, actions, targets));
    EXPECT_LT(losses.back(), 0.5 * losses.front());
}

TEST(CriticStep, SingleSampleReducesToSquaredError) {
    Mlp critic = Mlp::critic(2, 31);
    std::mt19937_64 rng(23);
    const auto state = random_vector(2, rng);
    const auto action = random_vector(2, rng);
    Eigen::VectorXd input(4);
    input << state, action;
    const double q = critic.forward_vec(input)[0];
    const double target = q + 0.7;
    AdamW opt(1e-3, 0.0);
    const double loss = critic_step(critic, opt, Eigen::MatrixXd(state), Eigen::MatrixXd(action),
                                    Eigen::VectorXd::Constant(1, target));
    EXPECT_NEAR(loss, 0.49, 1e-12);
    EXPECT_THROW(critic_step(critic, opt, Eigen::MatrixXd(2, 0), Eigen::MatrixXd(2, 0),
                             Eigen::VectorXd(0)),
                 std::invalid_argument);
}

TEST(ActorStep, ConstantCriticMovesParametersOnlyThroughDecay) {
    Mlp actor = Mlp::actor(2, 37);
    Mlp critic = zero_net(Mlp::critic(2, 38));
    // A critic with zero weights but nonzero output bias is constant in the
    // action, so the data term of the actor gradient vanishes.
    critic.layer(critic.layer_count() - 1).bias[0] = 2.5;
    std::mt19937_64 rng(29);
    Eigen::MatrixXd states(2, 4);
    for (int b = 0; b < 4; ++b) states.col(b) = random_vector(2, rng);

    Mlp before = actor;
    AdamW no_decay(1e-3, 0.0);
    const double objective = actor_step(actor, critic, no_decay, states);
    EXPECT_NEAR(objective, 2.5, 1e-12);
    for (std::size_t l = 0; l < actor.layer_count(); ++l)
        EXPECT_NEAR((actor.layer(l).weights - before.layer(l).weights).cwiseAbs().maxCoeff(), 0.0,
                    1e-15);
}

TEST(ActorStep, ObjectiveRisesAgainstFrozenCritic) {
    Mlp actor = Mlp::actor(2, 41);
    const Mlp critic = Mlp::critic(2, 42);
    AdamW opt(1e-3, 0.0);
    std::mt19937_64 rng(31);
    Eigen::MatrixXd states(2, 8);
    for (int b = 0; b < 8; ++b) states.col(b) = random_vector(2, rng);
    std::vector<double> objectives;
    for (int step = 0; step < 50; ++step) objectives.push_back(actor_step(actor, critic, opt, states));
    EXPECT_GT(objectives.back(), objectives.front());
}

TEST(ActorStep, GradientMatchesFiniteDifferencesThroughCritic) {
    // Perturb one actor parameter and compare the resulting change of the
    // objective J = mean Q(s, mu(s)) with the analytic chain-rule gradient.
    Mlp actor = Mlp::actor(2, 43);
    const Mlp critic = Mlp::critic(2, 44);
    std::mt19937_64 rng(37);
    Eigen::MatrixXd states(2, 4);
    for (int b = 0; b < 4; ++b) states.col(b) = random_vector(2, rng);

    auto objective = [&](const Mlp& a) {
        const Eigen::MatrixXd actions = a.forward(states);
        Eigen::MatrixXd input(4, 4);
        input << states, actions;
        return critic.forward(input).row(0).mean();
    };

    // Analytic gradient of -J as computed inside actor_step.
    Mlp::Cache actor_cache;
    const Eigen::MatrixXd actions = actor.forward(states, &actor_cache);
    Eigen::MatrixXd input(4, 4);
    input << states, actions;
    Mlp::Cache critic_cache;
    critic.forward(input, &critic_cache);
    const Eigen::MatrixXd upstream = Eigen::MatrixXd::Constant(1, 4, -0.25);
    const Eigen::MatrixXd action_grad =
        critic.backward(critic_cache, upstream, nullptr, true).bottomRows(2);
    Mlp::Gradients grads;
    actor.backward(actor_cache, action_grad, &grads);

    const double eps = 1e-6;
    std::uniform_int_distribution<int> layer_pick(0, static_cast<int>(actor.layer_count()) - 1);
    for (int probe = 0; probe < 30; ++probe) {
        const auto l = static_cast<std::size_t>(layer_pick(rng));
        auto& w = actor.layer(l).weights;
        std::uniform_int_distribution<Eigen::Index> idx(0, w.size() - 1);
        const Eigen::Index i = idx(rng);
        const double saved = w.data()[i];
        w.data()[i] = saved + eps;
        const double up = objective(actor);
        w.data()[i] = saved - eps;
        const double down = objective(actor);
        w.data()[i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double analytic = -grads.weights[l].data()[i];  // grads hold d(-J)
        EXPECT_NEAR(analytic, numeric, 1e-5 * std::max(1.0, std::fabs(numeric)));
    }
}

TEST(SoftUpdate, FullTauCopiesAndIdentityIsStable) {
    TargetPair pair(Mlp::actor(2, 47));
    Mlp modified = pair.net;
    modified.layer(0).weights.array() += 0.5;
    pair.net = modified;
    soft_update(pair, 1.0);
    EXPECT_NEAR((pair.target.layer(0).weights - modified.layer(0).weights).cwiseAbs().maxCoeff(), 0.0,
                1e-15);
    // Already-equal targets stay unchanged for any tau.
    soft_update(pair, 0.3);
    EXPECT_NEAR((pair.target.layer(0).weights - pair.net.layer(0).weights).cwiseAbs().maxCoeff(), 0.0,
                1e-15);
}

TEST(SoftUpdate, ScalarArithmeticCase) {
    // tau = 0.1 with theta = 1, theta' = 0 gives theta' = 0.1.
    Mlp net({1, 1}, {Activation::Identity}, 0);
    net.layer(0).weights(0, 0) = 1.0;
    net.layer(0).bias[0] = 0.0;
    TargetPair pair(net);
    pair.target.layer(0).weights(0, 0) = 0.0;
    soft_update(pair, 0.1);
    EXPECT_DOUBLE_EQ(pair.target.layer(0).weights(0, 0), 0.1);
    EXPECT_THROW(soft_update(pair, 0.0), std::invalid_argument);
    EXPECT_THROW(soft_update(pair, 1.5), std::invalid_argument);
}

TEST(SoftUpdate, ContractsTowardSourceExactly) {
    TargetPair pair(Mlp::critic(2, 53));
    std::mt19937_64 rng(41);
    for (std::size_t l = 0; l < pair.target.layer_count(); ++l)
        pair.target.layer(l).weights.array() += 0.2;
    const double tau = 0.25;
    for (std::size_t l = 0; l < pair.net.layer_count(); ++l) {
        const Eigen::MatrixXd before = pair.target.layer(l).weights - pair.net.layer(l).weights;
        soft_update(pair, tau);
        const Eigen::MatrixXd after = pair.target.layer(l).weights - pair.net.layer(l).weights;
        // Elementwise: after = (1 - tau) * before, exactly up to fp rounding.
        EXPECT_NEAR((after - (1.0 - tau) * before).cwiseAbs().maxCoeff(), 0.0, 1e-15);
        break;  // one layer suffices; soft_update already touched them all
    }
}

TEST(GradientCheck, LinearNetworkIsExact) {
    Mlp net({3, 2}, {Activation::Identity}, 61);
    std::mt19937_64 rng(43);
    EXPECT_LT(gradient_check(net, random_vector(3, rng), 1e-5), 1e-10);
}

TEST(GradientCheck, ActorAndCriticBelowTolerance) {
    std::mt19937_64 rng(47);
    for (int antennas : {2, 4, 8}) {
        for (int trial = 0; trial < 5; ++trial) {
            Mlp actor = Mlp::actor(antennas, derive_seed(71, "a" + std::to_string(trial)));
            Eigen::VectorXd input = random_vector(antennas, rng, 2.0);
            while (min_abs_preactivation(actor, input) < 1e-4) input = random_vector(antennas, rng, 2.0);
            EXPECT_LT(gradient_check(actor, input, 1e-5), 1e-4);

            Mlp critic = Mlp::critic(antennas, derive_seed(73, "c" + std::to_string(trial)));
            Eigen::VectorXd cin = random_vector(2 * antennas, rng, 2.0);
            while (min_abs_preactivation(critic, cin) < 1e-4) cin = random_vector(2 * antennas, rng, 2.0);
            EXPECT_LT(gradient_check(critic, cin, 1e-5), 1e-4);
        }
    }
}

TEST(GradientCheck, RejectsEpsilonOutOfRange) {
    Mlp net({2, 1}, {Activation::Identity}, 79);
    std::mt19937_64 rng(53);
    EXPECT_THROW(gradient_check(net, random_vector(2, rng), 1e-8), std::invalid_argument);
    EXPECT_THROW(gradient_check(net, random_vector(2, rng), 1e-2), std::invalid_argument);
}

TEST(Checkpoint, MlpRoundTripsBitExact) {
    const Mlp net = Mlp::critic(3, 83);
    std::stringstream blob;
    save_mlp(net, blob);
    const Mlp back = load_mlp(blob);
    ASSERT_TRUE(back.same_shape(net));
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        EXPECT_TRUE(back.layer(l).weights == net.layer(l).weights);
        EXPECT_TRUE(back.layer(l).bias == net.layer(l).bias);
    }
}

TEST(Checkpoint, OptimizerStateRoundTripsAndResumesIdentically) {
    Mlp net_a = Mlp::critic(2, 89);
    Mlp net_b = net_a;
    AdamW opt_a(1e-3, 1e-3);
    std::mt19937_64 rng(59);
    Eigen::MatrixXd states(2, 4), actions(2, 4);
    Eigen::VectorXd targets(4);
    for (int b = 0; b < 4; ++b) {
        states.col(b) = random_vector(2, rng);
        actions.col(b) = random_vector(2, rng);
        targets[b] = random_vector(1, rng)[0];
    }
    critic_step(net_a, opt_a, states, actions, targets);

    std::stringstream blob;
    save_mlp(net_a, blob);
    opt_a.save(blob);
    net_b = load_mlp(blob);
    AdamW opt_b;
    opt_b.load(blob);

    // Continue training both copies; they must stay bit-identical.
    critic_step(net_a, opt_a, states, actions, targets);
    critic_step(net_b, opt_b, states, actions, targets);
    for (std::size_t l = 0; l < net_a.layer_count(); ++l)
        EXPECT_TRUE(net_a.layer(l).weights == net_b.layer(l).weights);
}

TEST(Determinism, SameSeedSameTrainingTrajectory) {
    auto run = [] {
        Mlp critic = Mlp::critic(2, 97);
        AdamW opt(1e-3, 1e-3);
        std::mt19937_64 rng(61);
        std::normal_distribution<double> unit;
        Eigen::MatrixXd states(2, 4), actions(2, 4);
        Eigen::VectorXd targets(4);
        for (int step = 0; step < 10; ++step) {
            for (int b = 0; b < 4; ++b)
                for (int i = 0; i < 2; ++i) {
                    states(i, b) = unit(rng);
                    actions(i, b) = unit(rng);
                    targets[b] = unit(rng);
                }
            critic_step(critic, opt, states, actions, targets);
        }
        return critic;
    };
    const Mlp a = run();
    const Mlp b = run();
    for (std::size_t l = 0; l < a.layer_count(); ++l) EXPECT_TRUE(a.layer(l).weights == b.layer(l).weights);
}
