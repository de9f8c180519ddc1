#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "beamrl/common.hpp"

namespace beamrl {

/// Linear antenna array, possibly with non-uniform spacing and per-antenna
/// phase mismatch. Positions are expressed in carrier wavelengths so the
/// response phase of element m is 2*pi*positions[m]*cos(phi) + mismatch[m].
/// Immutable after construction; safe to share across threads.
struct ArrayGeometry {
    Eigen::VectorXd positions;       // wavelengths, strictly increasing
    Eigen::VectorXd phase_mismatch;  // radians

    int size() const { return static_cast<int>(positions.size()); }

    static ArrayGeometry ideal(int antennas, double spacing = 0.5) {
        if (antennas < 1) throw std::invalid_argument("ArrayGeometry: antennas must be >= 1");
        ArrayGeometry g;
        g.positions = spacing * Eigen::VectorXd::LinSpaced(antennas, 0.0, antennas - 1.0);
        if (antennas == 1) g.positions = Eigen::VectorXd::Zero(1);
        g.phase_mismatch = Eigen::VectorXd::Zero(antennas);
        return g;
    }

    void validate() const {
        if (positions.size() < 1) throw std::invalid_argument("ArrayGeometry: empty position list");
        if (positions.size() != phase_mismatch.size())
            throw std::invalid_argument("ArrayGeometry: positions/mismatch length mismatch");
        for (int m = 1; m < positions.size(); ++m)
            if (!(positions[m] > positions[m - 1]))
                throw std::invalid_argument("ArrayGeometry: positions must be strictly increasing");
    }

    /// Short content hash used as provenance id in channel sets.
    std::string id() const {
        std::ostringstream os;
        os.precision(17);
        for (int m = 0; m < positions.size(); ++m)
            os << positions[m] << ',' << phase_mismatch[m] << ';';
        std::ostringstream hex;
        hex << std::hex << fnv1a(os.str());
        return hex.str();
    }
};

/// Distribution parameters for drawing an impaired geometry. With
/// sigma_d = sigma_p = 0 the draw reproduces the ideal array exactly.
struct ImpairmentSpec {
    int antennas = 1;
    double spacing = 0.5;   // nominal inter-element spacing d, wavelengths
    double sigma_d = 0.0;   // std dev of antenna positions, wavelengths
    double sigma_p = 0.0;   // std dev of per-antenna phase mismatch, radians
    std::uint64_t seed = 0;
};

/// Draws a fixed random realization of antenna positions ~ N((m-1)d, sigma_d^2)
/// and phase mismatches ~ N(0, sigma_p^2). The physical ordering constraint
/// d_1 < d_2 < ... < d_M is enforced by redrawing the whole position vector;
/// sorting would bias the marginals.
inline ArrayGeometry sample_impaired_geometry(const ImpairmentSpec& spec) {
    if (spec.antennas < 1) throw std::invalid_argument("sample_impaired_geometry: antennas must be >= 1");
    if (spec.sigma_d < 0 || spec.sigma_p < 0)
        throw std::invalid_argument("sample_impaired_geometry: negative standard deviation");

    auto rng = make_rng(spec.seed);
    const int m_count = spec.antennas;

    ArrayGeometry g;
    if (spec.sigma_d == 0.0) {
        g.positions = spec.spacing * Eigen::VectorXd::LinSpaced(m_count, 0.0, m_count - 1.0);
        if (m_count == 1) g.positions = Eigen::VectorXd::Zero(1);
    } else {
        std::normal_distribution<double> unit;
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            g.positions.resize(m_count);
            for (int m = 0; m < m_count; ++m)
                g.positions[m] = m * spec.spacing + spec.sigma_d * unit(rng);
            ok = true;
            for (int m = 1; m < m_count && ok; ++m)
                if (!(g.positions[m] > g.positions[m - 1])) ok = false;
        }
        if (!ok)
            throw std::runtime_error(
                "sample_impaired_geometry: no monotone position draw in 1000 attempts "
                "(sigma_d too large relative to spacing)");
    }

    if (spec.sigma_p == 0.0) {
        g.phase_mismatch = Eigen::VectorXd::Zero(m_count);
    } else {
        std::normal_distribution<double> unit;
        g.phase_mismatch.resize(m_count);
        for (int m = 0; m < m_count; ++m) g.phase_mismatch[m] = spec.sigma_p * unit(rng);
    }
    return g;
}

/// Array response vector at azimuth phi, element m equal to
/// exp(j(2*pi*positions[m]*cos(phi) + mismatch[m])). Angles outside [0, pi]
/// are handled by the evenness of cos; no folding is needed.
inline Eigen::VectorXcd array_response(const ArrayGeometry& geometry, double phi) {
    const int m_count = geometry.size();
    Eigen::VectorXcd a(m_count);
    const double c = std::cos(phi);
    for (int m = 0; m < m_count; ++m) {
        const double phase = 2.0 * kPi * geometry.positions[m] * c + geometry.phase_mismatch[m];
        a[m] = std::polar(1.0, phase);
    }
    return a;
}

inline void to_json(nlohmann::json& j, const ArrayGeometry& g) {
    j = nlohmann::json{{"positions", std::vector<double>(g.positions.begin(), g.positions.end())},
                       {"phase_mismatch",
                        std::vector<double>(g.phase_mismatch.begin(), g.phase_mismatch.end())}};
}

inline void from_json(const nlohmann::json& j, ArrayGeometry& g) {
    auto pos = j.at("positions").get<std::vector<double>>();
    auto mis = j.at("phase_mismatch").get<std::vector<double>>();
    g.positions = Eigen::Map<Eigen::VectorXd>(pos.data(), static_cast<Eigen::Index>(pos.size()));
    g.phase_mismatch = Eigen::Map<Eigen::VectorXd>(mis.data(), static_cast<Eigen::Index>(mis.size()));
    g.validate();
}

}  // namespace beamrl
