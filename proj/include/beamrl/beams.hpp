#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "beamrl/array.hpp"
#include "beamrl/channel.hpp"
#include "beamrl/common.hpp"

namespace beamrl {

/// The 2^r admissible phase-shifter values, Theta_i = -pi + (i+1)*2*pi/2^r.
/// This indexing puts pi in the set and leaves -pi out, matching phases drawn
/// uniformly from (-pi, pi].
class PhaseSet {
  public:
    explicit PhaseSet(int bits) : bits_(bits) {
        if (bits < 1 || bits > 16) throw std::invalid_argument("PhaseSet: bits must be in [1,16]");
        const int n = 1 << bits;
        values_.resize(n);
        for (int i = 0; i < n; ++i) values_[i] = -kPi + (i + 1) * 2.0 * kPi / n;
    }

    int bits() const { return bits_; }
    int size() const { return static_cast<int>(values_.size()); }
    double value(int i) const { return values_.at(i); }
    const std::vector<double>& values() const { return values_; }

    /// Index of the circularly nearest admissible phase; ties break toward
    /// the smaller index. Circular distance resolves the +-pi seam that a
    /// plain absolute difference would get wrong.
    int nearest(double theta) const {
        if (!std::isfinite(theta)) throw std::invalid_argument("PhaseSet::nearest: non-finite phase");
        int best = 0;
        double best_dist = circular_distance(theta, values_[0]);
        for (int i = 1; i < size(); ++i) {
            const double d = circular_distance(theta, values_[i]);
            if (d < best_dist) {
                best_dist = d;
                best = i;
            }
        }
        return best;
    }

    static double circular_distance(double a, double b) {
        double d = std::fabs(a - b);
        d = std::fmod(d, 2.0 * kPi);
        return std::min(d, 2.0 * kPi - d);
    }

  private:
    int bits_;
    std::vector<double> values_;
};

/// A beam as per-antenna phase indices; bijective with the constant-modulus
/// combiner w_m = (1/sqrt(M)) * exp(j*Theta[indices[m]]).
struct BeamVector {
    std::vector<int> indices;

    int size() const { return static_cast<int>(indices.size()); }
    bool operator==(const BeamVector& other) const { return indices == other.indices; }
};

inline Eigen::VectorXcd realize(const BeamVector& beam, const PhaseSet& phases) {
    const int m_count = beam.size();
    if (m_count == 0) throw std::invalid_argument("realize: empty beam");
    const double scale = 1.0 / std::sqrt(static_cast<double>(m_count));
    Eigen::VectorXcd w(m_count);
    for (int m = 0; m < m_count; ++m) {
        const int idx = beam.indices[m];
        if (idx < 0 || idx >= phases.size()) throw std::out_of_range("realize: phase index out of range");
        w[m] = std::polar(scale, phases.value(idx));
    }
    return w;
}

/// Phase-vector view of a beam (the state representation fed to networks).
inline Eigen::VectorXd realize_phases(const BeamVector& beam, const PhaseSet& phases) {
    Eigen::VectorXd p(beam.size());
    for (int m = 0; m < beam.size(); ++m) {
        const int idx = beam.indices[m];
        if (idx < 0 || idx >= phases.size())
            throw std::out_of_range("realize_phases: phase index out of range");
        p[m] = phases.value(idx);
    }
    return p;
}

/// Per-element nearest-neighbor lookup of a continuous phase vector onto the
/// lattice.
inline BeamVector quantize_phases(const Eigen::VectorXd& proto, const PhaseSet& phases) {
    BeamVector beam;
    beam.indices.resize(proto.size());
    for (int m = 0; m < proto.size(); ++m) beam.indices[m] = phases.nearest(proto[m]);
    return beam;
}

/// Beamforming/combining gain |w^H h|^2.
inline double gain(const Eigen::VectorXcd& w, const Eigen::VectorXcd& h) {
    if (w.size() != h.size()) throw std::invalid_argument("gain: dimension mismatch");
    return std::norm(w.dot(h));
}

/// SNR after combining; with ||w|| = 1 this is gain * rho, rho = Px/sigma_n^2.
inline double snr(const Eigen::VectorXcd& w, const Eigen::VectorXcd& h, double rho) {
    if (rho <= 0.0) throw std::invalid_argument("snr: rho must be positive");
    return gain(w, h) * rho;
}

inline double average_gain(const Eigen::VectorXcd& w, const ChannelSet& set) {
    if (set.empty()) throw std::invalid_argument("average_gain: empty channel set");
    double sum = 0.0;
    for (const auto& h : set.channels) sum += gain(w, h);
    return sum / static_cast<double>(set.size());
}

/// A finite set of beams. Learned beams carry lattice indices; baseline beams
/// (EGC, unquantized beamsteering) are plain complex unit vectors flagged by
/// the absence of indices, so every codebook shares one evaluation path.
struct CodebookEntry {
    Eigen::VectorXcd weights;
    std::optional<BeamVector> indices;
};

struct Codebook {
    std::vector<CodebookEntry> entries;
    std::optional<int> bits;  // set when all entries are lattice beams

    std::size_t size() const { return entries.size(); }
    int antennas() const { return entries.empty() ? 0 : static_cast<int>(entries.front().weights.size()); }
    bool quantized() const {
        return std::all_of(entries.begin(), entries.end(),
                           [](const CodebookEntry& e) { return e.indices.has_value(); });
    }

    static Codebook from_beams(const std::vector<BeamVector>& beams, const PhaseSet& phases) {
        Codebook cb;
        cb.bits = phases.bits();
        cb.entries.reserve(beams.size());
        for (const auto& b : beams) cb.entries.push_back({realize(b, phases), b});
        return cb;
    }
};

/// Average over users of the best per-user gain in the codebook.
inline double codebook_objective(const Codebook& cb, const ChannelSet& set,
                                 std::vector<int>* best_beam_per_user = nullptr) {
    if (cb.entries.empty()) throw std::invalid_argument("codebook_objective: empty codebook");
    if (set.empty()) throw std::invalid_argument("codebook_objective: empty channel set");
    if (best_beam_per_user) best_beam_per_user->assign(set.size(), 0);
    double sum = 0.0;
    for (std::size_t u = 0; u < set.size(); ++u) {
        double best = -1.0;
        int best_n = 0;
        for (std::size_t n = 0; n < cb.entries.size(); ++n) {
            const double g = gain(cb.entries[n].weights, set.channels[u]);
            if (g > best) {
                best = g;
                best_n = static_cast<int>(n);
            }
        }
        sum += best;
        if (best_beam_per_user) (*best_beam_per_user)[u] = best_n;
    }
    return sum / static_cast<double>(set.size());
}

/// Largest gain any constant-modulus combiner can reach on h: per-element
/// phase alignment gives (sum_m |h_m|)^2 / M. Requires unquantized phases and
/// channel knowledge, so it upper-bounds every realizable beam.
inline double egc_upper_bound(const Eigen::VectorXcd& h) {
    if (h.size() == 0) throw std::invalid_argument("egc_upper_bound: empty channel");
    const double s = h.cwiseAbs().sum();
    if (s == 0.0) throw std::invalid_argument("egc_upper_bound: zero channel");
    return s * s / static_cast<double>(h.size());
}

/// The combiner attaining the EGC bound: w_m = (1/sqrt(M)) e^{j arg(h_m)},
/// so that w^H h = (1/sqrt(M)) sum |h_m|.
inline Eigen::VectorXcd egc_beam(const Eigen::VectorXcd& h) {
    const int m_count = static_cast<int>(h.size());
    if (m_count == 0) throw std::invalid_argument("egc_beam: empty channel");
    const double scale = 1.0 / std::sqrt(static_cast<double>(m_count));
    Eigen::VectorXcd w(m_count);
    for (int m = 0; m < m_count; ++m)
        w[m] = std::polar(scale, h[m] == 0.0 ? 0.0 : std::arg(h[m]));
    return w;
}

/// Ideal-ULA phase profile of the matched beam steered at phi, i.e. the
/// per-element phases that align w^H a(phi) on a calibrated half-wavelength
/// array.
inline Eigen::VectorXd steering_phases(int antennas, double phi) {
    Eigen::VectorXd p(antennas);
    const double c = std::cos(phi);
    for (int m = 0; m < antennas; ++m) p[m] = wrap_angle(2.0 * kPi * 0.5 * m * c);
    return p;
}

inline std::vector<double> steering_grid(int beams) {
    if (beams < 1) throw std::invalid_argument("beamsteering_codebook: need at least one beam");
    std::vector<double> grid(beams);
    if (beams == 1) {
        grid[0] = 0.0;  // convention: a single steering beam points at phi = 0
    } else {
        for (int n = 0; n < beams; ++n) grid[n] = kPi * n / (beams - 1.0);
    }
    return grid;
}

/// Classical baseline: matched beams for the *ideal* half-wavelength ULA at
/// angles evenly spaced over [0, pi] including both endpoints. Optionally
/// phase-quantized onto the lattice.
inline Codebook beamsteering_codebook(int antennas, int beams,
                                      const PhaseSet* phases = nullptr) {
    if (antennas < 1) throw std::invalid_argument("beamsteering_codebook: antennas must be >= 1");
    Codebook cb;
    if (phases) cb.bits = phases->bits();
    const double scale = 1.0 / std::sqrt(static_cast<double>(antennas));
    for (double phi : steering_grid(beams)) {
        const Eigen::VectorXd p = steering_phases(antennas, phi);
        CodebookEntry entry;
        if (phases) {
            entry.indices = quantize_phases(p, *phases);
            entry.weights = realize(*entry.indices, *phases);
        } else {
            entry.weights.resize(antennas);
            for (int m = 0; m < antennas; ++m) entry.weights[m] = std::polar(scale, p[m]);
        }
        cb.entries.push_back(std::move(entry));
    }
    return cb;
}

/// Ground-truth optimizer of the average-gain objective by full enumeration
/// of the (2^r)^M lattice. Only feasible at desk scale; the search space
/// explodes exponentially, hence the budget guard. Ties break toward the
/// lexicographically smallest index vector.
inline std::pair<BeamVector, double> exhaustive_oracle(const ChannelSet& set, int antennas,
                                                       const PhaseSet& phases,
                                                       std::uint64_t budget = 1ULL << 20) {
    if (set.empty()) throw std::invalid_argument("exhaustive_oracle: empty channel set");
    if (antennas < 1) throw std::invalid_argument("exhaustive_oracle: antennas must be >= 1");
    if (set.antennas() != antennas) throw std::invalid_argument("exhaustive_oracle: dimension mismatch");
    const int total_bits = phases.bits() * antennas;
    if (total_bits >= 64 || (1ULL << total_bits) > budget)
        throw std::runtime_error("exhaustive_oracle: search space exceeds budget");

    BeamVector current{std::vector<int>(antennas, 0)};
    BeamVector best = current;
    double best_gain = -1.0;
    const std::uint64_t total = 1ULL << total_bits;
    for (std::uint64_t it = 0; it < total; ++it) {
        const double g = average_gain(realize(current, phases), set);
        if (g > best_gain) {
            best_gain = g;
            best = current;
        }
        // odometer increment, most significant digit first => lexicographic order
        for (int m = antennas - 1; m >= 0; --m) {
            if (++current.indices[m] < phases.size()) break;
            current.indices[m] = 0;
        }
    }
    return {best, best_gain};
}

/// Gain of beam w against the array response over an angle grid; the "clean"
/// angular space uses the ideal geometry, the "corrupted" one the impaired
/// geometry actually deployed.
inline Eigen::VectorXd beam_pattern(const Eigen::VectorXcd& w, const ArrayGeometry& geometry,
                                    const std::vector<double>& grid) {
    if (grid.empty()) throw std::invalid_argument("beam_pattern: empty angle grid");
    if (w.size() != geometry.size()) throw std::invalid_argument("beam_pattern: dimension mismatch");
    Eigen::VectorXd pattern(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.size(); ++i)
        pattern[static_cast<Eigen::Index>(i)] = gain(w, array_response(geometry, grid[i]));
    return pattern;
}

// --- Serialization -------------------------------------------------------

inline nlohmann::json codebook_to_json(const Codebook& cb) {
    if (!cb.quantized() || !cb.bits)
        throw std::invalid_argument("codebook_to_json: only lattice codebooks serialize to JSON");
    nlohmann::json j;
    j["M"] = cb.antennas();
    j["r"] = *cb.bits;
    auto& beams = j["beams"] = nlohmann::json::array();
    for (const auto& e : cb.entries) beams.push_back(e.indices->indices);
    return j;
}

inline Codebook codebook_from_json(const nlohmann::json& j) {
    const int antennas = j.at("M").get<int>();
    const int bits = j.at("r").get<int>();
    PhaseSet phases(bits);
    std::vector<BeamVector> beams;
    for (const auto& row : j.at("beams")) {
        BeamVector b{row.get<std::vector<int>>()};
        if (b.size() != antennas) throw std::runtime_error("codebook_from_json: beam length mismatch");
        beams.push_back(std::move(b));
    }
    if (beams.empty()) throw std::runtime_error("codebook_from_json: empty codebook");
    return Codebook::from_beams(beams, phases);
}

inline void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_codebook: cannot open " + path.string());
    os << codebook_to_json(cb).dump(2) << '\n';
}

inline Codebook load_codebook(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_codebook: cannot open " + path.string());
    nlohmann::json j;
    is >> j;
    return codebook_from_json(j);
}

/// CSV export: header "angle_deg,beam_0,beam_1,...", one row per grid angle.
inline void save_patterns_csv(const std::vector<Eigen::VectorXd>& patterns,
                              const std::vector<double>& grid, const std::filesystem::path& path) {
    if (patterns.empty()) throw std::invalid_argument("save_patterns_csv: no patterns");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_patterns_csv: cannot open " + path.string());
    os << "angle_deg";
    for (std::size_t n = 0; n < patterns.size(); ++n) os << ",beam_" << n;
    os << '\n';
    char buf[64];
    for (std::size_t i = 0; i < grid.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", grid[i] * 180.0 / kPi);
        os << buf;
        for (const auto& p : patterns) {
            std::snprintf(buf, sizeof buf, "%.17g", p[static_cast<Eigen::Index>(i)]);
            os << ',' << buf;
        }
        os << '\n';
    }
}

}  // namespace beamrl
