#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "beamrl/array.hpp"
#include "beamrl/common.hpp"

namespace beamrl {

/// One propagation path: complex gain and angle of arrival in [0, pi].
struct PathComponent {
    std::complex<double> gain;
    double aoa = 0.0;  // radians
};

/// Immutable collection of user channels sharing one array geometry.
struct ChannelSet {
    std::vector<Eigen::VectorXcd> channels;
    std::string geometry_id;
    std::optional<double> normalization;  // factor the set was divided by

    int antennas() const { return channels.empty() ? 0 : static_cast<int>(channels.front().size()); }
    std::size_t size() const { return channels.size(); }
    bool empty() const { return channels.empty(); }

    ChannelSet subset(const std::vector<std::size_t>& users) const {
        ChannelSet s;
        s.geometry_id = geometry_id;
        s.normalization = normalization;
        s.channels.reserve(users.size());
        for (std::size_t u : users) s.channels.push_back(channels.at(u));
        return s;
    }
};

/// Geometric channel h = sum_l gain_l * a(aoa_l).
inline Eigen::VectorXcd synthesize_channel(const ArrayGeometry& geometry,
                                           const std::vector<PathComponent>& paths) {
    if (paths.empty()) throw std::invalid_argument("synthesize_channel: empty path list");
    Eigen::VectorXcd h = Eigen::VectorXcd::Zero(geometry.size());
    for (const auto& p : paths) {
        if (!std::isfinite(p.gain.real()) || !std::isfinite(p.gain.imag()))
            throw std::invalid_argument("synthesize_channel: non-finite path gain");
        h += p.gain * array_response(geometry, p.aoa);
    }
    return h;
}

enum class ScenarioKind { Los, Nlos };

struct ScenarioParams {
    /// Angular spans (radians, [lo, hi] pairs). LOS users draw their dominant
    /// AoA from one of these, assigned round-robin; NLOS reflector angles are
    /// drawn from the union of the spans.
    std::vector<std::pair<double, double>> spans = {{kPi / 6.0, 5.0 * kPi / 6.0}};
    int max_paths = 5;  // L
    // LOS: secondary paths, power relative to the dominant one.
    double weak_min_db = -30.0;
    double weak_max_db = -15.0;
    // NLOS: shared reflector angles and per-path angular jitter around them.
    int reflectors = 2;
    double reflector_jitter = 2.0 * kPi / 180.0;
};

/// Synthetic geometric-channel scenario. LOS: one dominant unit-magnitude
/// path plus up to L-1 weak ones; NLOS: 2..L comparable-power paths clustered
/// around a small set of reflector angles shared by all users. Deterministic
/// in the seed.
inline ChannelSet generate_scenario(ScenarioKind kind, const ArrayGeometry& geometry, int users,
                                    std::uint64_t seed, const ScenarioParams& params = {}) {
    if (users < 1) throw std::invalid_argument("generate_scenario: need at least one user");
    if (params.spans.empty()) throw std::invalid_argument("generate_scenario: empty angular span list");
    for (const auto& [lo, hi] : params.spans)
        if (hi < lo) throw std::invalid_argument("generate_scenario: span with hi < lo");
    if (params.max_paths < 1) throw std::invalid_argument("generate_scenario: max_paths must be >= 1");

    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform_in = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    auto random_phase = [&] { return uniform_in(-kPi, kPi); };

    ChannelSet set;
    set.geometry_id = geometry.id();
    set.channels.reserve(users);

    if (kind == ScenarioKind::Los) {
        for (int u = 0; u < users; ++u) {
            const auto& span = params.spans[u % params.spans.size()];
            std::vector<PathComponent> paths;
            paths.push_back({std::polar(1.0, random_phase()), uniform_in(span.first, span.second)});
            const int extra =
                static_cast<int>(unit(rng) * params.max_paths) % params.max_paths;  // 0..L-1
            for (int l = 0; l < extra; ++l) {
                const double db = uniform_in(params.weak_min_db, params.weak_max_db);
                const double mag = std::pow(10.0, db / 20.0);
                paths.push_back({std::polar(mag, random_phase()), uniform_in(0.0, kPi)});
            }
            set.channels.push_back(synthesize_channel(geometry, paths));
        }
    } else {
        if (params.reflectors < 1)
            throw std::invalid_argument("generate_scenario: NLOS needs at least one reflector");
        std::vector<double> reflector_angles(params.reflectors);
        for (auto& ang : reflector_angles) {
            const auto& span = params.spans[static_cast<std::size_t>(unit(rng) * params.spans.size()) %
                                            params.spans.size()];
            ang = uniform_in(span.first, span.second);
        }
        const int min_paths = std::min(2, params.max_paths);
        for (int u = 0; u < users; ++u) {
            const int count =
                min_paths + static_cast<int>(unit(rng) * (params.max_paths - min_paths + 1)) %
                                (params.max_paths - min_paths + 1);
            std::vector<PathComponent> paths;
            for (int l = 0; l < count; ++l) {
                const double base =
                    reflector_angles[static_cast<std::size_t>(unit(rng) * params.reflectors) %
                                     params.reflectors];
                const double aoa = std::clamp(
                    base + uniform_in(-params.reflector_jitter, params.reflector_jitter), 0.0, kPi);
                const double mag = uniform_in(0.5, 1.0);  // comparable powers
                paths.push_back({std::polar(mag, random_phase()), aoa});
            }
            set.channels.push_back(synthesize_channel(geometry, paths));
        }
    }
    return set;
}

/// Divides every channel by the largest element magnitude in the set and
/// records that factor, so reported gains can be de-normalized by factor^2.
inline std::pair<ChannelSet, double> normalize(const ChannelSet& set) {
    if (set.empty()) throw std::invalid_argument("normalize: empty channel set");
    double delta = 0.0;
    for (const auto& h : set.channels) delta = std::max(delta, h.cwiseAbs().maxCoeff());
    if (delta == 0.0) throw std::invalid_argument("normalize: all-zero channel set");
    ChannelSet out;
    out.geometry_id = set.geometry_id;
    out.normalization = set.normalization.value_or(1.0) * delta;
    out.channels.reserve(set.size());
    for (const auto& h : set.channels) out.channels.push_back(h / delta);
    return {std::move(out), delta};
}

// --- Channel file format -----------------------------------------------
//
// Binary: little-endian, magic "BFCH", u32 version=1, u32 M, u32 K, then
// K*M complex entries as (f64 re, f64 im) in user-major order.
// JSON alternative: {"magic":"BFCH","version":1,"M":...,"K":...,
//                    "channels":[[[re,im],...],...]} for small sets.

namespace detail {

inline void check_finite(const Eigen::VectorXcd& h, std::size_t user) {
    for (int m = 0; m < h.size(); ++m)
        if (!std::isfinite(h[m].real()) || !std::isfinite(h[m].imag()))
            throw std::runtime_error("channel file: non-finite entry for user " + std::to_string(user));
}

}  // namespace detail

inline void save_channels_binary(const ChannelSet& set, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_channels: cannot open " + path.string());
    const std::uint32_t version = 1;
    const std::uint32_t m_count = static_cast<std::uint32_t>(set.antennas());
    const std::uint32_t k_count = static_cast<std::uint32_t>(set.size());
    os.write("BFCH", 4);
    os.write(reinterpret_cast<const char*>(&version), 4);
    os.write(reinterpret_cast<const char*>(&m_count), 4);
    os.write(reinterpret_cast<const char*>(&k_count), 4);
    for (const auto& h : set.channels) {
        if (h.size() != m_count) throw std::runtime_error("save_channels: inconsistent vector lengths");
        for (int m = 0; m < h.size(); ++m) {
            const double re = h[m].real(), im = h[m].imag();
            os.write(reinterpret_cast<const char*>(&re), 8);
            os.write(reinterpret_cast<const char*>(&im), 8);
        }
    }
    if (!os) throw std::runtime_error("save_channels: write failed for " + path.string());
}

inline void save_channels_json(const ChannelSet& set, const std::filesystem::path& path) {
    nlohmann::json j;
    j["magic"] = "BFCH";
    j["version"] = 1;
    j["M"] = set.antennas();
    j["K"] = set.size();
    auto& chans = j["channels"] = nlohmann::json::array();
    for (const auto& h : set.channels) {
        nlohmann::json row = nlohmann::json::array();
        for (int m = 0; m < h.size(); ++m) row.push_back({h[m].real(), h[m].imag()});
        chans.push_back(std::move(row));
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_channels: cannot open " + path.string());
    os << j.dump(2) << '\n';
}

inline ChannelSet load_channels(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_channels: cannot open " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    if (!is) throw std::runtime_error("load_channels: truncated file " + path.string());

    ChannelSet set;
    if (std::memcmp(magic, "BFCH", 4) == 0) {
        std::uint32_t version = 0, m_count = 0, k_count = 0;
        is.read(reinterpret_cast<char*>(&version), 4);
        is.read(reinterpret_cast<char*>(&m_count), 4);
        is.read(reinterpret_cast<char*>(&k_count), 4);
        if (!is || version != 1) throw std::runtime_error("load_channels: bad header in " + path.string());
        if (m_count == 0 || k_count == 0)
            throw std::runtime_error("load_channels: empty dimensions in " + path.string());
        set.channels.assign(k_count, Eigen::VectorXcd(m_count));
        for (std::uint32_t u = 0; u < k_count; ++u) {
            for (std::uint32_t m = 0; m < m_count; ++m) {
                double re = 0, im = 0;
                is.read(reinterpret_cast<char*>(&re), 8);
                is.read(reinterpret_cast<char*>(&im), 8);
                set.channels[u][m] = {re, im};
            }
            if (!is) throw std::runtime_error("load_channels: truncated payload in " + path.string());
            detail::check_finite(set.channels[u], u);
        }
    } else {
        // Fall back to the JSON form.
        is.seekg(0);
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("load_channels: not a BFCH binary or JSON file: " + std::string(e.what()));
        }
        if (j.value("magic", "") != "BFCH" || j.value("version", 0) != 1)
            throw std::runtime_error("load_channels: bad JSON header in " + path.string());
        const std::size_t m_count = j.at("M").get<std::size_t>();
        const std::size_t k_count = j.at("K").get<std::size_t>();
        const auto& chans = j.at("channels");
        if (chans.size() != k_count)
            throw std::runtime_error("load_channels: K does not match channel count");
        for (std::size_t u = 0; u < k_count; ++u) {
            const auto& row = chans[u];
            if (row.size() != m_count)
                throw std::runtime_error("load_channels: user " + std::to_string(u) +
                                         " has wrong vector length");
            Eigen::VectorXcd h(m_count);
            for (std::size_t m = 0; m < m_count; ++m)
                h[m] = {row[m].at(0).get<double>(), row[m].at(1).get<double>()};
            detail::check_finite(h, u);
            set.channels.push_back(std::move(h));
        }
    }
    return set;
}

}  // namespace beamrl
