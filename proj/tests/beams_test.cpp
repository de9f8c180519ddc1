#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>

#include "beamrl/beams.hpp"

using namespace beamrl;

namespace {

Eigen::VectorXcd random_channel(int antennas, std::mt19937_64& rng) {
    std::normal_distribution<double> unit;
    Eigen::VectorXcd h(antennas);
    for (int m = 0; m < antennas; ++m) h[m] = {unit(rng), unit(rng)};
    return h;
}

BeamVector random_beam(int antennas, const PhaseSet& phases, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> idx(0, phases.size() - 1);
    BeamVector b;
    b.indices.resize(antennas);
    for (auto& i : b.indices) i = idx(rng);
    return b;
}

}  // namespace

TEST(PhaseSet, ValuesAreUniformWithPiIncluded) {
    for (int r = 1; r <= 4; ++r) {
        PhaseSet phases(r);
        ASSERT_EQ(phases.size(), 1 << r);
        EXPECT_NEAR(phases.value(phases.size() - 1), kPi, 1e-15);
        for (int i = 0; i < phases.size(); ++i) {
            EXPECT_GT(phases.value(i), -kPi);
            EXPECT_LE(phases.value(i), kPi + 1e-15);
            EXPECT_NEAR(phases.value(i), -kPi + (i + 1) * 2.0 * kPi / phases.size(), 1e-15);
        }
    }
}

TEST(Realize, SingleAntennaLastIndexIsMinusOne) {
    for (int r = 1; r <= 3; ++r) {
        PhaseSet phases(r);
        BeamVector b{{phases.size() - 1}};  // Theta contains pi by construction
        const auto w = realize(b, phases);
        EXPECT_NEAR(std::abs(w[0] - std::complex<double>(-1.0, 0.0)), 0.0, 1e-12);
    }
}

TEST(Realize, EqualIndicesGiveEqualElementsAndUnitNorm) {
    PhaseSet phases(3);
    BeamVector b{{5, 5, 5, 5}};
    const auto w = realize(b, phases);
    EXPECT_NEAR(w.norm(), 1.0, 1e-12);
    for (int m = 1; m < 4; ++m) EXPECT_NEAR(std::abs(w[m] - w[0]), 0.0, 1e-12);
}

TEST(Realize, RejectsOutOfRangeIndex) {
    PhaseSet phases(2);
    EXPECT_THROW(realize(BeamVector{{4}}, phases), std::out_of_range);
}

TEST(QuantizePhases, BijectionWithRealize) {
    PhaseSet phases(3);
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const auto b = random_beam(6, phases, rng);
        EXPECT_EQ(quantize_phases(realize_phases(b, phases), phases), b);
    }
}

TEST(QuantizePhases, InteriorExampleEnumeratedDistances) {
    // r=2: Theta = {-pi/2, 0, pi/2, pi}. Element 0.6 is nearer to 0 (0.6)
    // than to pi/2 (~0.97); enumerate all four circular distances.
    PhaseSet phases(2);
    const double proto = 0.6;
    int best = -1;
    double best_dist = 1e99;
    for (int i = 0; i < phases.size(); ++i) {
        const double d = PhaseSet::circular_distance(proto, phases.value(i));
        if (d < best_dist) {
            best_dist = d;
            best = i;
        }
    }
    EXPECT_EQ(best, 1);
    EXPECT_NEAR(phases.value(best), 0.0, 1e-15);
    Eigen::VectorXd v(1);
    v << proto;
    EXPECT_EQ(quantize_phases(v, phases).indices[0], best);
}

TEST(QuantizePhases, SeamMapsToPiNotLinearNearest) {
    // -3.14159 is circularly next to +pi; a plain |a-b| would pick -pi/2.
    PhaseSet phases(2);
    Eigen::VectorXd v(1);
    v << -3.14159;
    EXPECT_EQ(quantize_phases(v, phases).indices[0], phases.size() - 1);
    int linear_best = 0;
    double linear_dist = 1e99;
    for (int i = 0; i < phases.size(); ++i) {
        const double d = std::fabs(v[0] - phases.value(i));
        if (d < linear_dist) {
            linear_dist = d;
            linear_best = i;
        }
    }
    EXPECT_EQ(linear_best, 0);  // -pi/2: what circular distance avoids
}

TEST(QuantizePhases, IdempotentOnAllLatticePoints) {
    for (int r = 1; r <= 3; ++r) {
        PhaseSet phases(r);
        for (int m = 1; m <= 3; ++m) {
            BeamVector b{std::vector<int>(m, 0)};
            const long total = 1L << (r * m);
            for (long it = 0; it < total; ++it) {
                EXPECT_EQ(quantize_phases(realize_phases(b, phases), phases), b);
                for (int d = m - 1; d >= 0; --d) {
                    if (++b.indices[d] < phases.size()) break;
                    b.indices[d] = 0;
                }
            }
        }
    }
}

TEST(QuantizePhases, RejectsNonFinite) {
    PhaseSet phases(2);
    Eigen::VectorXd v(1);
    v << std::nan("");
    EXPECT_THROW(quantize_phases(v, phases), std::invalid_argument);
}

TEST(Gain, MatchedFilterAndOrthogonal) {
    Eigen::VectorXcd h(2);
    h << std::complex<double>(1.0, 1.0), std::complex<double>(0.0, -2.0);
    const Eigen::VectorXcd w = h / h.norm();
    EXPECT_NEAR(gain(w, h), h.squaredNorm(), 1e-12);

    // [-conj(h2), conj(h1)] is orthogonal to h under the Hermitian product.
    Eigen::VectorXcd perp(2);
    perp << -std::conj(h[1]), std::conj(h[0]);
    perp /= perp.norm();
    EXPECT_NEAR(std::abs(w.dot(perp)), 0.0, 1e-12);
    EXPECT_NEAR(gain(perp, h), 0.0, 1e-12);
}

TEST(Gain, MatchesScalarLoopOracle) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const auto w = random_channel(8, rng).normalized();
        const auto h = random_channel(8, rng);
        std::complex<double> inner = 0.0;
        for (int m = 0; m < 8; ++m) inner += std::conj(w[m]) * h[m];
        EXPECT_NEAR(gain(w, h), std::norm(inner), 1e-12);
    }
}

TEST(Gain, RejectsDimensionMismatch) {
    EXPECT_THROW(gain(Eigen::VectorXcd::Ones(2), Eigen::VectorXcd::Ones(3)), std::invalid_argument);
}

TEST(Snr, ScalesLinearlyWithRhoAndMatchesUnsimplifiedFormula) {
    std::mt19937_64 rng(13);
    const auto h = random_channel(4, rng);
    PhaseSet phases(3);
    const auto w = realize(random_beam(4, phases, rng), phases);
    const double g = gain(w, h);
    EXPECT_DOUBLE_EQ(snr(w, h, 1.0), g);
    EXPECT_DOUBLE_EQ(snr(w, h, 2.0), 2.0 * snr(w, h, 1.0));
    // Unsimplified form |w^H h|^2 / ||w||^2 * rho with ||w|| = 1.
    const double rho = 3.7;
    EXPECT_NEAR(snr(w, h, rho), std::norm(w.dot(h)) / w.squaredNorm() * rho, 1e-12);
    EXPECT_THROW(snr(w, h, 0.0), std::invalid_argument);
}

TEST(AverageGain, SingleUserDuplicatesAndLoopOracle) {
    std::mt19937_64 rng(17);
    PhaseSet phases(2);
    const auto w = realize(random_beam(4, phases, rng), phases);

    ChannelSet single;
    single.channels.push_back(random_channel(4, rng));
    EXPECT_DOUBLE_EQ(average_gain(w, single), gain(w, single.channels[0]));

    ChannelSet doubled = single;
    doubled.channels.push_back(single.channels[0]);
    EXPECT_NEAR(average_gain(w, doubled), average_gain(w, single), 1e-12);

    ChannelSet many;
    for (int u = 0; u < 10; ++u) many.channels.push_back(random_channel(4, rng));
    double sum = 0.0;
    for (const auto& h : many.channels) sum += std::norm(w.dot(h));
    EXPECT_NEAR(average_gain(w, many), sum / 10.0, 1e-12);

    EXPECT_THROW(average_gain(w, ChannelSet{}), std::invalid_argument);
}

TEST(CodebookObjective, SingleBeamEqualsAverageGain) {
    std::mt19937_64 rng(19);
    PhaseSet phases(3);
    const auto beam = random_beam(4, phases, rng);
    const auto cb = Codebook::from_beams({beam}, phases);
    ChannelSet set;
    for (int u = 0; u < 5; ++u) set.channels.push_back(random_channel(4, rng));
    EXPECT_DOUBLE_EQ(codebook_objective(cb, set), average_gain(realize(beam, phases), set));
}

TEST(CodebookObjective, MonotoneUnderBeamAddition) {
    std::mt19937_64 rng(23);
    PhaseSet phases(3);
    ChannelSet set;
    for (int u = 0; u < 6; ++u) set.channels.push_back(random_channel(4, rng));
    std::vector<BeamVector> beams{random_beam(4, phases, rng)};
    double prev = codebook_objective(Codebook::from_beams(beams, phases), set);
    for (int n = 0; n < 5; ++n) {
        beams.push_back(random_beam(4, phases, rng));
        const double cur = codebook_objective(Codebook::from_beams(beams, phases), set);
        EXPECT_GE(cur, prev - 1e-15);
        prev = cur;
    }
}

TEST(CodebookObjective, MatchesNestedLoopOracleWithArgmax) {
    std::mt19937_64 rng(29);
    PhaseSet phases(2);
    std::vector<BeamVector> beams;
    for (int n = 0; n < 3; ++n) beams.push_back(random_beam(4, phases, rng));
    const auto cb = Codebook::from_beams(beams, phases);
    ChannelSet set;
    for (int u = 0; u < 5; ++u) set.channels.push_back(random_channel(4, rng));

    double sum = 0.0;
    std::vector<int> expected_argmax;
    for (const auto& h : set.channels) {
        double best = -1.0;
        int best_n = 0;
        for (int n = 0; n < 3; ++n) {
            const double g = gain(realize(beams[n], phases), h);
            if (g > best) {
                best = g;
                best_n = n;
            }
        }
        sum += best;
        expected_argmax.push_back(best_n);
    }
    std::vector<int> argmax;
    EXPECT_NEAR(codebook_objective(cb, set, &argmax), sum / 5.0, 1e-12);
    EXPECT_EQ(argmax, expected_argmax);
}

TEST(EgcUpperBound, EqualMagnitudeAndSingleAntenna) {
    Eigen::VectorXcd h(4);
    const double c = 0.7;
    for (int m = 0; m < 4; ++m) h[m] = std::polar(c, 0.3 * m);
    EXPECT_NEAR(egc_upper_bound(h), 4.0 * c * c, 1e-12);

    Eigen::VectorXcd h1(1);
    h1 << std::complex<double>(1.5, -2.0);
    EXPECT_NEAR(egc_upper_bound(h1), std::norm(h1[0]), 1e-12);
    EXPECT_THROW(egc_upper_bound(Eigen::VectorXcd::Zero(3)), std::invalid_argument);
}

TEST(EgcUpperBound, EgcBeamAttainsTheBound) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const auto h = random_channel(8, rng);
        EXPECT_NEAR(gain(egc_beam(h), h), egc_upper_bound(h), 1e-10);
    }
}

TEST(EgcUpperBound, NoRandomConstantModulusBeamExceedsIt) {
    std::mt19937_64 rng(37);
    const auto h = random_channel(6, rng);
    const double bound = egc_upper_bound(h);
    std::uniform_real_distribution<double> phase(-kPi, kPi);
    for (int trial = 0; trial < 100000; ++trial) {
        Eigen::VectorXcd w(6);
        for (int m = 0; m < 6; ++m) w[m] = std::polar(1.0 / std::sqrt(6.0), phase(rng));
        EXPECT_LE(gain(w, h), bound * (1.0 + 1e-12));
    }
}

TEST(EgcDominance, HoldsOverRandomLatticeBeamPairs) {
    std::mt19937_64 rng(41);
    PhaseSet phases(3);
    for (int trial = 0; trial < 10000; ++trial) {
        const int m_count = 1 << (trial % 5);  // 1, 2, 4, 8, 16
        const auto h = random_channel(m_count, rng);
        const auto w = realize(random_beam(m_count, phases, rng), phases);
        EXPECT_LE(gain(w, h), egc_upper_bound(h) * (1.0 + 1e-9));
    }
}

TEST(Beamsteering, SingleBeamPointsAtZero) {
    const auto cb = beamsteering_codebook(4, 1);
    ASSERT_EQ(cb.size(), 1u);
    const auto a = array_response(ArrayGeometry::ideal(4), 0.0);
    EXPECT_NEAR(gain(cb.entries[0].weights, a), 4.0, 1e-12);
}

TEST(Beamsteering, MatchedGainEqualsAntennaCount) {
    const int antennas = 8;
    const auto geometry = ArrayGeometry::ideal(antennas);
    const auto cb = beamsteering_codebook(antennas, 16);
    const auto grid = steering_grid(16);
    for (std::size_t n = 0; n < cb.size(); ++n) {
        const auto a = array_response(geometry, grid[n]);
        EXPECT_NEAR(gain(cb.entries[n].weights, a), antennas, 1e-10);
    }
}

TEST(Beamsteering, ThirtyTwoBeamBaselineConfiguration) {
    const auto cb = beamsteering_codebook(32, 32);
    EXPECT_EQ(cb.size(), 32u);
    EXPECT_FALSE(cb.quantized());
    PhaseSet phases(3);
    const auto quantized = beamsteering_codebook(32, 32, &phases);
    EXPECT_TRUE(quantized.quantized());
    for (const auto& e : quantized.entries) EXPECT_NEAR(e.weights.norm(), 1.0, 1e-12);
}

TEST(ExhaustiveOracle, SingleAntennaMatchesScalarArgmax) {
    std::mt19937_64 rng(43);
    PhaseSet phases(3);
    ChannelSet set;
    set.channels.push_back(random_channel(1, rng));
    const auto [beam, best] = exhaustive_oracle(set, 1, phases);
    double expected = -1.0;
    int expected_idx = 0;
    for (int i = 0; i < phases.size(); ++i) {
        const double g = average_gain(realize(BeamVector{{i}}, phases), set);
        if (g > expected) {
            expected = g;
            expected_idx = i;
        }
    }
    EXPECT_DOUBLE_EQ(best, expected);
    EXPECT_EQ(beam.indices[0], expected_idx);
}

TEST(ExhaustiveOracle, EnumeratesExactlyTheLattice) {
    // M=4, r=2: 256 beams; the optimum must dominate the full enumeration.
    std::mt19937_64 rng(47);
    PhaseSet phases(2);
    ChannelSet set;
    for (int u = 0; u < 3; ++u) set.channels.push_back(random_channel(4, rng));
    const auto [beam, best] = exhaustive_oracle(set, 4, phases);

    BeamVector b{std::vector<int>(4, 0)};
    long count = 0;
    for (long it = 0; it < 256; ++it) {
        EXPECT_LE(average_gain(realize(b, phases), set), best + 1e-15);
        ++count;
        for (int d = 3; d >= 0; --d) {
            if (++b.indices[d] < phases.size()) break;
            b.indices[d] = 0;
        }
    }
    EXPECT_EQ(count, 256);
    EXPECT_NEAR(average_gain(realize(beam, phases), set), best, 1e-15);
}

TEST(ExhaustiveOracle, BudgetErrorAtPaperScale) {
    // 32 antennas with 3-bit shifters: 8^32 beams, far beyond any budget.
    PhaseSet phases(3);
    ChannelSet set;
    std::mt19937_64 rng(53);
    set.channels.push_back(random_channel(32, rng));
    EXPECT_THROW(exhaustive_oracle(set, 32, phases), std::runtime_error);
}

TEST(ExhaustiveOracle, DominatesRandomBeamsAndQuantizedSteering) {
    std::mt19937_64 rng(59);
    PhaseSet phases(2);
    ChannelSet set;
    for (int u = 0; u < 4; ++u) set.channels.push_back(random_channel(4, rng));
    const auto [beam, best] = exhaustive_oracle(set, 4, phases);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto w = realize(random_beam(4, phases, rng), phases);
        EXPECT_LE(average_gain(w, set), best + 1e-15);
    }
    const auto steering = beamsteering_codebook(4, 16, &phases);
    for (const auto& e : steering.entries) EXPECT_LE(average_gain(e.weights, set), best + 1e-15);
}

TEST(BeamPattern, SteeringBeamPeaksAtItsAngleWithValueM) {
    const int antennas = 8;
    const auto geometry = ArrayGeometry::ideal(antennas);
    const auto cb = beamsteering_codebook(antennas, 5);
    const auto grid = steering_grid(181);
    for (std::size_t n = 0; n < cb.size(); ++n) {
        const auto pattern = beam_pattern(cb.entries[n].weights, geometry, grid);
        const double at_angle = gain(cb.entries[n].weights, array_response(geometry, steering_grid(5)[n]));
        EXPECT_NEAR(at_angle, antennas, 1e-9);
        EXPECT_LE(pattern.maxCoeff(), antennas + 1e-9);
        if (n > 0 && n + 1 < cb.size()) {
            // Interior beams peak at their own angle; the two endfire beams
            // alias each other (cos(0) and cos(pi) give the same response).
            Eigen::Index peak;
            pattern.maxCoeff(&peak);
            EXPECT_NEAR(grid[static_cast<std::size_t>(peak)], steering_grid(5)[n],
                        kPi / 180.0 + 1e-12);
        }
    }
}

TEST(BeamPattern, MatchesLoopOracle) {
    std::mt19937_64 rng(61);
    PhaseSet phases(3);
    ImpairmentSpec spec{6, 0.5, 0.05, 0.2, 5};
    const auto geometry = sample_impaired_geometry(spec);
    const auto w = realize(random_beam(6, phases, rng), phases);
    const std::vector<double> grid{0.0, 0.3, 1.1, 2.2, kPi};
    const auto pattern = beam_pattern(w, geometry, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        std::complex<double> inner = 0.0;
        const auto a = array_response(geometry, grid[i]);
        for (int m = 0; m < 6; ++m) inner += std::conj(w[m]) * a[m];
        EXPECT_NEAR(pattern[static_cast<Eigen::Index>(i)], std::norm(inner), 1e-12);
    }
}

TEST(BeamPattern, CleanEqualsCorruptedOnlyWithoutImpairment) {
    std::mt19937_64 rng(67);
    PhaseSet phases(3);
    const auto w = realize(random_beam(8, phases, rng), phases);
    const auto grid = steering_grid(61);
    const auto ideal = ArrayGeometry::ideal(8);
    const auto clean = beam_pattern(w, ideal, grid);
    const auto same = beam_pattern(w, sample_impaired_geometry({8, 0.5, 0.0, 0.0, 2}), grid);
    EXPECT_NEAR((clean - same).cwiseAbs().maxCoeff(), 0.0, 1e-15);
    const auto impaired = sample_impaired_geometry({8, 0.5, 0.1, 0.32 * kPi, 2});
    const auto corrupted = beam_pattern(w, impaired, grid);
    EXPECT_GT((clean - corrupted).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(CodebookJson, RoundTripsThroughJson) {
    std::mt19937_64 rng(71);
    PhaseSet phases(3);
    std::vector<BeamVector> beams;
    for (int n = 0; n < 4; ++n) beams.push_back(random_beam(8, phases, rng));
    const auto cb = Codebook::from_beams(beams, phases);
    const auto back = codebook_from_json(codebook_to_json(cb));
    ASSERT_EQ(back.size(), cb.size());
    for (std::size_t n = 0; n < cb.size(); ++n) {
        EXPECT_EQ(back.entries[n].indices->indices, cb.entries[n].indices->indices);
        EXPECT_NEAR((back.entries[n].weights - cb.entries[n].weights).norm(), 0.0, 1e-15);
    }
    EXPECT_THROW(codebook_to_json(beamsteering_codebook(8, 4)), std::invalid_argument);
}
