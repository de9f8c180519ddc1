#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "beamrl/agent.hpp"
#include "beamrl/beams.hpp"
#include "beamrl/channel.hpp"
#include "beamrl/common.hpp"

namespace beamrl {

/// Random lattice beams used to probe users; their receive gains are the only
/// information the clustering stage ever sees.
struct SensingSet {
    std::vector<BeamVector> beams;
    std::uint64_t seed = 0;

    int size() const { return static_cast<int>(beams.size()); }
};

inline SensingSet sample_sensing_set(int count, int antennas, const PhaseSet& phases,
                                     std::uint64_t seed) {
    if (count < 2) throw std::invalid_argument("sample_sensing_set: need at least 2 sensing beams");
    if (antennas < 1) throw std::invalid_argument("sample_sensing_set: antennas must be >= 1");
    auto rng = make_rng(seed);
    std::uniform_int_distribution<int> idx(0, phases.size() - 1);
    SensingSet set;
    set.seed = seed;
    set.beams.resize(count);
    for (auto& b : set.beams) {
        b.indices.resize(antennas);
        for (auto& i : b.indices) i = idx(rng);
    }
    return set;
}

/// P[s][k] = |f_s^H h_k|^2; column k holds the receive gains of user k over
/// all sensing beams.
inline Eigen::MatrixXd build_sensing_matrix(const SensingSet& sensing, const PhaseSet& phases,
                                            const ChannelSet& users) {
    if (users.empty()) throw std::invalid_argument("build_sensing_matrix: empty user set");
    if (sensing.size() < 2) throw std::invalid_argument("build_sensing_matrix: need >= 2 sensing beams");
    Eigen::MatrixXd p(sensing.size(), static_cast<Eigen::Index>(users.size()));
    for (int s = 0; s < sensing.size(); ++s) {
        const Eigen::VectorXcd f = realize(sensing.beams[static_cast<std::size_t>(s)], phases);
        if (f.size() != users.antennas())
            throw std::invalid_argument("build_sensing_matrix: dimension mismatch");
        for (std::size_t k = 0; k < users.size(); ++k)
            p(s, static_cast<Eigen::Index>(k)) = gain(f, users.channels[k]);
    }
    return p;
}

/// Per-user feature column: pair-wise differences P[i][k] - P[j][k] for i < j
/// in lexicographic order, scaled by the inverse column mean. Invariant to
/// any per-user complex channel scaling; lives in all of R^{S(S-1)/2} rather
/// than the nonnegative orthant.
inline Eigen::MatrixXd feature_vectors(const Eigen::MatrixXd& sensing_matrix) {
    const auto s_count = sensing_matrix.rows();
    const auto k_count = sensing_matrix.cols();
    if (s_count < 2) throw std::invalid_argument("feature_vectors: need >= 2 sensing beams");
    const auto rows = s_count * (s_count - 1) / 2;
    Eigen::MatrixXd features(rows, k_count);
    for (Eigen::Index k = 0; k < k_count; ++k) {
        const double mean = sensing_matrix.col(k).mean();
        if (!(mean > 0.0))
            throw std::invalid_argument("feature_vectors: zero-energy user " + std::to_string(k));
        Eigen::Index row = 0;
        for (Eigen::Index i = 0; i < s_count; ++i)
            for (Eigen::Index j = i + 1; j < s_count; ++j)
                features(row++, k) = (sensing_matrix(i, k) - sensing_matrix(j, k)) / mean;
    }
    return features;
}

/// Fitted k-means model over feature columns.
struct ClusterModel {
    Eigen::MatrixXd centroids;  // feature_dim x clusters
    std::vector<int> labels;    // training labels, one per column of U

    int clusters() const { return static_cast<int>(centroids.cols()); }
    bool fitted() const { return centroids.size() > 0; }
};

inline int kmeans_classify(const ClusterModel& model, const Eigen::VectorXd& feature) {
    if (!model.fitted()) throw std::invalid_argument("kmeans_classify: unfitted model");
    if (feature.size() != model.centroids.rows())
        throw std::invalid_argument("kmeans_classify: feature dimension mismatch");
    int best = 0;
    double best_dist = (feature - model.centroids.col(0)).squaredNorm();
    for (int n = 1; n < model.clusters(); ++n) {
        const double d = (feature - model.centroids.col(n)).squaredNorm();
        if (d < best_dist) {  // ties toward the smaller label
            best_dist = d;
            best = n;
        }
    }
    return best;
}

/// Lloyd's iterations with k-means++ seeding. Converges when assignments stop
/// changing or after 300 rounds; a cluster that empties steals the point
/// farthest from its current centroid.
inline ClusterModel kmeans_fit(const Eigen::MatrixXd& points, int clusters, std::uint64_t seed,
                               const Eigen::MatrixXd* initial_centroids = nullptr) {
    const auto k_count = points.cols();
    if (clusters < 1) throw std::invalid_argument("kmeans_fit: clusters must be >= 1");
    if (k_count < clusters) throw std::invalid_argument("kmeans_fit: fewer points than clusters");

    ClusterModel model;
    auto rng = make_rng(seed);
    if (initial_centroids) {
        if (initial_centroids->rows() != points.rows() || initial_centroids->cols() != clusters)
            throw std::invalid_argument("kmeans_fit: bad initial centroids");
        model.centroids = *initial_centroids;
    } else {
        // k-means++ seeding
        model.centroids.resize(points.rows(), clusters);
        std::uniform_int_distribution<Eigen::Index> first(0, k_count - 1);
        model.centroids.col(0) = points.col(first(rng));
        Eigen::VectorXd dist2 = Eigen::VectorXd::Constant(k_count, std::numeric_limits<double>::max());
        for (int c = 1; c < clusters; ++c) {
            for (Eigen::Index k = 0; k < k_count; ++k)
                dist2[k] = std::min(dist2[k], (points.col(k) - model.centroids.col(c - 1)).squaredNorm());
            const double total = dist2.sum();
            Eigen::Index chosen = 0;
            if (total > 0.0) {
                std::uniform_real_distribution<double> unit(0.0, total);
                double target = unit(rng), cum = 0.0;
                for (Eigen::Index k = 0; k < k_count; ++k) {
                    cum += dist2[k];
                    if (cum >= target) {
                        chosen = k;
                        break;
                    }
                }
            } else {
                chosen = first(rng);
            }
            model.centroids.col(c) = points.col(chosen);
        }
    }

    model.labels.assign(static_cast<std::size_t>(k_count), 0);
    for (int round = 0; round < 300; ++round) {
        bool changed = false;
        for (Eigen::Index k = 0; k < k_count; ++k) {
            const int label = kmeans_classify(model, points.col(k));
            if (label != model.labels[static_cast<std::size_t>(k)]) {
                model.labels[static_cast<std::size_t>(k)] = label;
                changed = true;
            }
        }
        // Repair empty clusters by stealing the worst-fitting point.
        for (int c = 0; c < clusters; ++c) {
            if (std::count(model.labels.begin(), model.labels.end(), c) > 0) continue;
            Eigen::Index worst = 0;
            double worst_dist = -1.0;
            for (Eigen::Index k = 0; k < k_count; ++k) {
                const int l = model.labels[static_cast<std::size_t>(k)];
                if (std::count(model.labels.begin(), model.labels.end(), l) <= 1) continue;
                const double d = (points.col(k) - model.centroids.col(l)).squaredNorm();
                if (d > worst_dist) {
                    worst_dist = d;
                    worst = k;
                }
            }
            model.labels[static_cast<std::size_t>(worst)] = c;
            model.centroids.col(c) = points.col(worst);
            changed = true;
        }
        if (!changed && round > 0) break;
        // Recompute centroids.
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(points.rows(), clusters);
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(clusters);
        for (Eigen::Index k = 0; k < k_count; ++k) {
            sums.col(model.labels[static_cast<std::size_t>(k)]) += points.col(k);
            counts[model.labels[static_cast<std::size_t>(k)]] += 1.0;
        }
        for (int c = 0; c < clusters; ++c)
            if (counts[c] > 0.0) model.centroids.col(c) = sums.col(c) / counts[c];
    }
    return model;
}

/// Z[n][n'] = average gain of the n-th temporarily-best beam on cluster n'.
inline Eigen::MatrixXd cost_matrix(const std::vector<BeamVector>& best_beams, const PhaseSet& phases,
                                   const std::vector<ChannelSet>& clusters) {
    if (best_beams.size() != clusters.size())
        throw std::invalid_argument("cost_matrix: beam/cluster count mismatch");
    const auto n_count = static_cast<Eigen::Index>(best_beams.size());
    Eigen::MatrixXd z(n_count, n_count);
    for (Eigen::Index n = 0; n < n_count; ++n) {
        const Eigen::VectorXcd w = realize(best_beams[static_cast<std::size_t>(n)], phases);
        for (Eigen::Index c = 0; c < n_count; ++c) {
            if (clusters[static_cast<std::size_t>(c)].empty())
                throw std::invalid_argument("cost_matrix: empty cluster");
            z(n, c) = average_gain(w, clusters[static_cast<std::size_t>(c)]);
        }
    }
    return z;
}

struct AssignmentResult {
    std::vector<int> network_to_cluster;  // permutation sigma: network n -> cluster sigma(n)
    Eigen::MatrixXd cost;                 // the Z matrix the assignment was computed from
    double total = 0.0;                   // maximized sum of Z[n][sigma(n)]
};

namespace detail {

/// Jonker-style shortest augmenting path solver for the square linear sum
/// assignment problem (minimization). Returns row -> column.
inline std::vector<int> solve_lsap_min(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace detail

/// Solves the cluster-assignment problem: the permutation maximizing
/// sum_n Z[n][sigma(n)] (the linear sum assignment with negated costs).
inline AssignmentResult hungarian_assign(const Eigen::MatrixXd& z) {
    if (z.rows() != z.cols() || z.rows() < 1)
        throw std::invalid_argument("hungarian_assign: matrix must be square and nonempty");
    if (!z.allFinite()) throw std::invalid_argument("hungarian_assign: non-finite cost matrix");
    AssignmentResult result;
    result.cost = z;
    result.network_to_cluster = detail::solve_lsap_min(-z);
    for (int n = 0; n < z.rows(); ++n) result.total += z(n, result.network_to_cluster[static_cast<std::size_t>(n)]);
    return result;
}

/// Perturb-and-quantize hill climbing: add exploration noise to the phases of
/// the best beam so far, quantize, evaluate, keep the winner. Never returns a
/// beam worse than the input.
inline BeamVector fine_tune(const BeamVector& beam, const PhaseSet& phases, const ChannelSet& cluster,
                            int iterations, double noise_scale, std::mt19937_64& rng) {
    if (cluster.empty()) throw std::invalid_argument("fine_tune: empty cluster");
    BeamVector best = beam;
    double best_gain = average_gain(realize(best, phases), cluster);
    if (noise_scale <= 0.0 || iterations < 1) return best;
    std::normal_distribution<double> unit;
    for (int it = 0; it < iterations; ++it) {
        Eigen::VectorXd p = realize_phases(best, phases);
        for (Eigen::Index m = 0; m < p.size(); ++m) p[m] = wrap_angle(p[m] + noise_scale * unit(rng));
        const BeamVector candidate = quantize_phases(p, phases);
        const double g = average_gain(realize(candidate, phases), cluster);
        if (g > best_gain) {
            best_gain = g;
            best = candidate;
        }
    }
    return best;
}

struct CodebookConfig {
    AgentConfig agent;                  // per-network settings; seed is the base seed
    int sensing_beams = 16;             // S
    int rounds = 1;                     // clustering/assignment refresh rounds
    long iterations_per_round = 8000;   // agent training iterations per round
    double subsample = 1.0;             // fraction of users drawn each round
    int finetune_iterations = 2000;
    double finetune_noise = -1.0;       // < 0: pi / 2^bits
    long saturation_window = 2000;      // best-gain window for the saturation test
    double saturation_epsilon = 1e-3;   // relative improvement below which training is saturated
    std::uint64_t sensing_seed = 1;
    std::uint64_t kmeans_seed = 1;
    std::uint64_t subsample_seed = 1;

    double resolved_finetune_noise() const {
        return finetune_noise >= 0.0 ? finetune_noise : kPi / static_cast<double>(1 << agent.bits);
    }
};

struct RoundLogRow {
    int round;
    int network;
    int cluster;
    double avg_gain;  // Z[n][sigma(n)] at assignment time
};

struct ObjectiveLogRow {
    int round;
    double objective;       // codebook objective of the current best-beam set
    double best_objective;  // best-so-far codebook objective
};

struct CodebookResult {
    Codebook codebook;  // best-so-far beams at the end of the run
    std::vector<BeamVector> beams;
    ClusterModel model;
    SensingSet sensing;
    std::vector<RoundLogRow> assignment_log;
    std::vector<ObjectiveLogRow> objective_log;
};

/// Full codebook learning pipeline: random sensing beams probe all users, the
/// scaled pair-wise gain differences are clustered with k-means, each round a
/// Hungarian assignment matches clusters to the persistent per-beam agents,
/// the agents train on their clusters, and saturated agents get a final
/// perturb-and-quantize polish. Only receive gains ever reach the clustering;
/// raw channels stay inside the gain evaluations.
inline CodebookResult learn_codebook(const CodebookConfig& config, const ChannelSet& users,
                                     int beams) {
    if (beams < 1) throw std::invalid_argument("learn_codebook: beams must be >= 1");
    if (users.size() < static_cast<std::size_t>(beams))
        throw std::invalid_argument("learn_codebook: fewer users than beams");
    if (config.rounds < 1) throw std::invalid_argument("learn_codebook: rounds must be >= 1");
    if (!(config.subsample > 0.0 && config.subsample <= 1.0))
        throw std::invalid_argument("learn_codebook: subsample must be in (0, 1]");

    const PhaseSet phases(config.agent.bits);
    CodebookResult result;
    result.sensing =
        sample_sensing_set(config.sensing_beams, config.agent.antennas, phases, config.sensing_seed);

    // Sensing, features and the cluster model come from the full user set.
    const Eigen::MatrixXd sensing_matrix = build_sensing_matrix(result.sensing, phases, users);
    const Eigen::MatrixXd features = feature_vectors(sensing_matrix);
    result.model = kmeans_fit(features, beams, config.kmeans_seed);

    // Persistent per-beam agents, initialized with random lattice beams.
    std::vector<Agent> agents;
    agents.reserve(static_cast<std::size_t>(beams));
    for (int n = 0; n < beams; ++n) {
        AgentConfig agent_config = config.agent;
        agent_config.seed = derive_seed(config.agent.seed, "agent." + std::to_string(n));
        agents.emplace_back(agent_config, config.rounds * config.iterations_per_round);
    }
    std::vector<BeamVector> best_beams;
    for (const auto& a : agents) best_beams.push_back(a.best_beam());

    auto rng = make_rng(config.subsample_seed);
    std::vector<BeamVector> best_codebook = best_beams;
    double best_objective = codebook_objective(Codebook::from_beams(best_codebook, phases), users);

    for (int round = 0; round < config.rounds; ++round) {
        // Sample this round's users and classify them with the trained model.
        std::vector<std::size_t> chosen(users.size());
        std::iota(chosen.begin(), chosen.end(), 0);
        if (config.subsample < 1.0) {
            const std::size_t n =
                std::max<std::size_t>(beams, static_cast<std::size_t>(config.subsample * users.size()));
            std::vector<std::size_t> picked;
            picked.reserve(n);
            std::sample(chosen.begin(), chosen.end(), std::back_inserter(picked), n, rng);
            chosen = std::move(picked);
        }
        ChannelSet round_users = users.subset(chosen);
        const Eigen::MatrixXd round_features =
            feature_vectors(build_sensing_matrix(result.sensing, phases, round_users));
        std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(beams));
        for (std::size_t k = 0; k < round_users.size(); ++k)
            members[static_cast<std::size_t>(
                        kmeans_classify(result.model, round_features.col(static_cast<Eigen::Index>(k))))]
                .push_back(k);

        // Gain cost matrix over nonempty clusters; an empty cluster (possible
        // only under subsampling) contributes a zero column and its agent
        // idles this round.
        Eigen::MatrixXd z = Eigen::MatrixXd::Zero(beams, beams);
        std::vector<ChannelSet> clusters(static_cast<std::size_t>(beams));
        for (int c = 0; c < beams; ++c) {
            clusters[static_cast<std::size_t>(c)] = round_users.subset(members[static_cast<std::size_t>(c)]);
            if (clusters[static_cast<std::size_t>(c)].empty()) continue;
            for (int n = 0; n < beams; ++n)
                z(n, c) = average_gain(realize(best_beams[static_cast<std::size_t>(n)], phases),
                                       clusters[static_cast<std::size_t>(c)]);
        }
        const AssignmentResult assignment = hungarian_assign(z);

        for (int n = 0; n < beams; ++n) {
            const int c = assignment.network_to_cluster[static_cast<std::size_t>(n)];
            result.assignment_log.push_back({round, n, c, z(n, c)});
            ChannelSet& cluster = clusters[static_cast<std::size_t>(c)];
            if (cluster.empty()) continue;
            Agent& agent = agents[static_cast<std::size_t>(n)];
            const auto log = agent.train(cluster, config.iterations_per_round);

            // Perturb-and-quantize fine-tuning once the threshold has
            // saturated (relative best-gain improvement below epsilon over
            // the trailing window).
            bool saturated = false;
            if (static_cast<long>(log.size()) > config.saturation_window) {
                const double before =
                    log[log.size() - 1 - static_cast<std::size_t>(config.saturation_window)].threshold;
                const double after = log.back().threshold;
                saturated = after <= before * (1.0 + config.saturation_epsilon);
            }
            if (saturated && config.finetune_iterations > 0) {
                auto ft_rng = make_rng(derive_seed(agent.config().seed,
                                                   "finetune." + std::to_string(round)));
                const BeamVector tuned =
                    fine_tune(agent.best_beam(), phases, cluster, config.finetune_iterations,
                              config.resolved_finetune_noise(), ft_rng);
                const double tuned_gain = average_gain(realize(tuned, phases), cluster);
                agent.compute_reward(tuned_gain, tuned);  // records the beam if it beats the threshold
            }
            best_beams[static_cast<std::size_t>(n)] = agent.best_beam();
        }

        const double objective = codebook_objective(Codebook::from_beams(best_beams, phases), users);
        if (objective > best_objective) {
            best_objective = objective;
            best_codebook = best_beams;
        }
        result.objective_log.push_back({round, objective, best_objective});
    }

    result.beams = best_codebook;
    result.codebook = Codebook::from_beams(best_codebook, phases);
    return result;
}

inline nlohmann::json cluster_model_to_json(const ClusterModel& model, const SensingSet& sensing) {
    nlohmann::json j;
    j["clusters"] = model.clusters();
    j["sensing_beams"] = nlohmann::json::array();
    for (const auto& b : sensing.beams) j["sensing_beams"].push_back(b.indices);
    j["centroids"] = nlohmann::json::array();
    for (int c = 0; c < model.clusters(); ++c) {
        std::vector<double> col(model.centroids.col(c).begin(), model.centroids.col(c).end());
        j["centroids"].push_back(col);
    }
    return j;
}

}  // namespace beamrl
