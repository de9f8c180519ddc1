#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "beamrl/agent.hpp"
#include "beamrl/array.hpp"
#include "beamrl/beams.hpp"
#include "beamrl/channel.hpp"
#include "beamrl/codebook.hpp"
#include "beamrl/common.hpp"

namespace beamrl {

/// Invalid or inconsistent experiment configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Flat key-value configuration with dotted keys (array.antennas,
/// agent.gamma, ...). Every lookup records the resolved value, so the
/// metadata record lists every default that was in effect, not just the keys
/// the user set.
class ExperimentConfig {
  public:
    ExperimentConfig() = default;

    static ExperimentConfig from_string(const std::string& text) {
        ExperimentConfig config;
        std::istringstream is(text);
        std::string line;
        int line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
            const std::string key = detail::trim(line.substr(0, eq));
            const std::string value = detail::trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
            config.values_[key] = value;
        }
        return config;
    }

    static ExperimentConfig from_file(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file " + path.string());
        std::ostringstream buf;
        buf << is.rdbuf();
        return from_string(buf.str());
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        consumed_.insert(key);
        const auto it = values_.find(key);
        const std::string v = it == values_.end() ? fallback : it->second;
        resolved_[key] = v;
        return v;
    }

    long get_int(const std::string& key, long fallback) const {
        consumed_.insert(key);
        const auto it = values_.find(key);
        long v = fallback;
        if (it != values_.end()) {
            try {
                std::size_t pos = 0;
                v = std::stol(it->second, &pos);
                if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
            } catch (const std::exception&) {
                throw ConfigError("config key " + key + ": expected integer, got '" + it->second + "'");
            }
        }
        resolved_[key] = std::to_string(v);
        return v;
    }

    double get_double(const std::string& key, double fallback) const {
        consumed_.insert(key);
        const auto it = values_.find(key);
        double v = fallback;
        if (it != values_.end()) {
            try {
                std::size_t pos = 0;
                v = std::stod(it->second, &pos);
                if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
            } catch (const std::exception&) {
                throw ConfigError("config key " + key + ": expected number, got '" + it->second + "'");
            }
        }
        resolved_[key] = detail::format_double(v);
        return v;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        consumed_.insert(key);
        const auto it = values_.find(key);
        bool v = fallback;
        if (it != values_.end()) {
            if (it->second == "true" || it->second == "1")
                v = true;
            else if (it->second == "false" || it->second == "0")
                v = false;
            else
                throw ConfigError("config key " + key + ": expected true/false, got '" + it->second + "'");
        }
        resolved_[key] = v ? "true" : "false";
        return v;
    }

    std::uint64_t get_seed(const std::string& key, std::uint64_t master) const {
        consumed_.insert(key);
        const auto it = values_.find(key);
        std::uint64_t v;
        if (it != values_.end()) {
            try {
                v = std::stoull(it->second);
            } catch (const std::exception&) {
                throw ConfigError("config key " + key + ": expected seed integer");
            }
        } else {
            v = derive_seed(master, key);
        }
        resolved_[key] = std::to_string(v);
        return v;
    }

    /// Rejects keys that no lookup ever touched; catches typos early.
    void reject_unknown_keys() const {
        for (const auto& [key, value] : values_)
            if (consumed_.count(key) == 0)
                throw ConfigError("unknown config key: " + key);
    }

    nlohmann::json metadata() const {
        nlohmann::json j;
        j["library_version"] = kVersion;
        for (const auto& [key, value] : resolved_) j["config"][key] = value;
        return j;
    }

  private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, std::string> resolved_;
    mutable std::set<std::string> consumed_;
};

// --- Baseline comparison -----------------------------------------------

struct BaselineRow {
    std::string name;
    int beams;
    bool quantized;
    double objective;
    double egc_ratio;
};

struct BaselineReport {
    std::vector<BaselineRow> rows;
    double mean_egc = 0.0;
};

/// Beamsteering codebook sizes compared against: N, 2N, 4N, ... capped at 32,
/// with 32 itself always present.
inline std::vector<int> baseline_sizes(int beams) {
    std::vector<int> sizes;
    for (int n = beams; n <= 32; n *= 2) sizes.push_back(n);
    if (sizes.empty() || sizes.back() != 32) sizes.push_back(32);
    return sizes;
}

/// Learned-vs-classical comparison: the learned codebook objective, ideal and
/// quantized beamsteering objectives at growing sizes, the mean EGC bound and
/// all ratios to it. The per-user EGC beams themselves sit at ratio 1 exactly.
inline BaselineReport compare_baselines(const Codebook& learned, const ChannelSet& set,
                                        const ArrayGeometry& geometry,
                                        const PhaseSet* phases = nullptr) {
    if (set.empty()) throw std::invalid_argument("compare_baselines: empty channel set");
    if (learned.antennas() != set.antennas() || geometry.size() != set.antennas())
        throw std::invalid_argument("compare_baselines: dimension mismatch");

    BaselineReport report;
    for (const auto& h : set.channels) report.mean_egc += egc_upper_bound(h);
    report.mean_egc /= static_cast<double>(set.size());

    auto add = [&](const std::string& name, int beams, bool quantized, double objective) {
        report.rows.push_back({name, beams, quantized, objective, objective / report.mean_egc});
    };

    add("learned", static_cast<int>(learned.size()), learned.quantized(),
        codebook_objective(learned, set));
    for (int n : baseline_sizes(static_cast<int>(learned.size()))) {
        add("beamsteering", n, false, codebook_objective(beamsteering_codebook(set.antennas(), n), set));
        if (phases)
            add("beamsteering", n, true,
                codebook_objective(beamsteering_codebook(set.antennas(), n, phases), set));
    }
    add("egc", static_cast<int>(set.size()), false, report.mean_egc);
    return report;
}

inline void save_baselines_csv(const BaselineReport& report, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_baselines_csv: cannot open " + path.string());
    os << "name,beams,quantized,objective,egc_ratio\n";
    for (const auto& row : report.rows)
        os << row.name << ',' << row.beams << ',' << (row.quantized ? 1 : 0) << ','
           << detail::format_double(row.objective) << ',' << detail::format_double(row.egc_ratio)
           << '\n';
}

// --- Experiment runner ---------------------------------------------------

namespace detail {

inline std::vector<std::pair<double, double>> parse_spans(const std::string& text) {
    std::vector<std::pair<double, double>> spans;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw ConfigError("scenario.spans: expected 'lo:hi' degree pairs, got '" + item + "'");
        try {
            const double lo = std::stod(item.substr(0, colon));
            const double hi = std::stod(item.substr(colon + 1));
            spans.push_back({lo * kPi / 180.0, hi * kPi / 180.0});
        } catch (const std::exception&) {
            throw ConfigError("scenario.spans: bad span '" + item + "'");
        }
    }
    if (spans.empty()) throw ConfigError("scenario.spans: empty span list");
    return spans;
}

inline std::vector<double> angle_grid(int points) {
    std::vector<double> grid(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) grid[static_cast<std::size_t>(i)] = kPi * i / (points - 1.0);
    return grid;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path.string());
    os << text;
}

}  // namespace detail

struct ExperimentArtifacts {
    std::filesystem::path directory;
    std::vector<std::string> files;
};

/// Resolves geometry, channels and hyperparameters from the config and runs
/// one task end to end, writing every artifact under the output directory.
/// Tasks: generate-scenario | learn-beam | learn-codebook | evaluate |
/// export-patterns.
inline ExperimentArtifacts run_experiment(const ExperimentConfig& config,
                                          const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    ExperimentArtifacts artifacts;
    artifacts.directory = out_dir;
    auto emit = [&artifacts](const std::string& name) { artifacts.files.push_back(name); };

    const std::string task = config.get_string("task", "learn-beam");
    const std::uint64_t master = static_cast<std::uint64_t>(config.get_int("seed.master", 1));

    // Array + geometry
    ImpairmentSpec impairment;
    impairment.antennas = static_cast<int>(config.get_int("array.antennas", 8));
    impairment.spacing = config.get_double("array.spacing", 0.5);
    impairment.sigma_d = config.get_double("array.sigma_d", 0.0);
    impairment.sigma_p = config.get_double("array.sigma_p", 0.0);
    impairment.seed = config.get_seed("seed.geometry", master);
    const int bits = static_cast<int>(config.get_int("array.bits", 3));
    if (impairment.antennas < 1) throw ConfigError("array.antennas must be >= 1");
    if (bits < 1) throw ConfigError("array.bits must be >= 1");
    const PhaseSet phases(bits);
    const ArrayGeometry geometry = sample_impaired_geometry(impairment);
    const ArrayGeometry clean_geometry = ArrayGeometry::ideal(impairment.antennas, impairment.spacing);

    // Channels: external file or synthetic scenario
    const std::string channel_file = config.get_string("channel.file", "");
    ScenarioParams scenario;
    scenario.spans = detail::parse_spans(config.get_string("scenario.spans", "30:150"));
    scenario.max_paths = static_cast<int>(config.get_int("scenario.paths", 5));
    scenario.weak_min_db = config.get_double("scenario.weak_min_db", -30.0);
    scenario.weak_max_db = config.get_double("scenario.weak_max_db", -15.0);
    scenario.reflectors = static_cast<int>(config.get_int("scenario.reflectors", 2));
    scenario.reflector_jitter = config.get_double("scenario.reflector_jitter_deg", 2.0) * kPi / 180.0;
    const std::string kind_name = config.get_string("scenario.kind", "los");
    const int users = static_cast<int>(config.get_int("scenario.users", 64));
    const std::uint64_t scenario_seed = config.get_seed("seed.scenario", master);
    const bool do_normalize = config.get_bool("channel.normalize", true);

    ChannelSet raw_set;
    if (!channel_file.empty()) {
        if (!fs::exists(channel_file)) throw ConfigError("channel.file does not exist: " + channel_file);
        raw_set = load_channels(channel_file);
        if (raw_set.antennas() != impairment.antennas)
            throw ConfigError("channel.file antenna count does not match array.antennas");
    } else {
        ScenarioKind kind;
        if (kind_name == "los")
            kind = ScenarioKind::Los;
        else if (kind_name == "nlos")
            kind = ScenarioKind::Nlos;
        else
            throw ConfigError("scenario.kind must be los or nlos");
        raw_set = generate_scenario(kind, geometry, users, scenario_seed, scenario);
    }
    ChannelSet set = raw_set;
    double normalization = 1.0;
    if (do_normalize) std::tie(set, normalization) = normalize(raw_set);

    // Agent + codebook hyperparameters
    AgentConfig agent;
    agent.antennas = impairment.antennas;
    agent.bits = bits;
    agent.actor_lr = config.get_double("agent.actor_lr", 1e-3);
    agent.critic_lr = config.get_double("agent.critic_lr", 1e-3);
    agent.actor_weight_decay = config.get_double("agent.actor_weight_decay", 1e-2);
    agent.critic_weight_decay = config.get_double("agent.critic_weight_decay", 1e-3);
    agent.gamma = config.get_double("agent.gamma", 0.5);
    agent.tau = config.get_double("agent.tau", 0.05);
    agent.target_every = static_cast<int>(config.get_int("agent.target_every", 1));
    agent.batch = static_cast<int>(config.get_int("agent.batch", 1024));
    agent.capacity = static_cast<int>(config.get_int("agent.capacity", 8192));
    agent.knn = static_cast<int>(config.get_int("agent.knn", 1));
    agent.ou_theta = config.get_double("agent.ou_theta", 0.15);
    agent.ou_sigma0 = config.get_double("agent.ou_sigma0", kPi / 2.0);
    agent.ou_sigma_min = config.get_double("agent.ou_sigma_min", -1.0);
    agent.ou_decay_iterations = config.get_int("agent.ou_decay", -1);
    agent.seed = config.get_seed("seed.agent", master);
    const long iterations = config.get_int("agent.iterations", 20000);

    CodebookConfig codebook_config;
    codebook_config.agent = agent;
    codebook_config.sensing_beams = static_cast<int>(config.get_int("codebook.sensing", 16));
    codebook_config.rounds = static_cast<int>(config.get_int("codebook.rounds", 1));
    codebook_config.iterations_per_round = config.get_int("codebook.iterations", 8000);
    codebook_config.subsample = config.get_double("codebook.subsample", 1.0);
    codebook_config.finetune_iterations = static_cast<int>(config.get_int("codebook.finetune_iterations", 2000));
    codebook_config.finetune_noise = config.get_double("codebook.finetune_noise", -1.0);
    codebook_config.saturation_window = config.get_int("codebook.saturation_window", 2000);
    codebook_config.saturation_epsilon = config.get_double("codebook.saturation_epsilon", 1e-3);
    codebook_config.sensing_seed = config.get_seed("seed.sensing", master);
    codebook_config.kmeans_seed = config.get_seed("seed.kmeans", master);
    codebook_config.subsample_seed = config.get_seed("seed.subsample", master);
    const int codebook_beams = static_cast<int>(config.get_int("codebook.beams", 4));

    const int pattern_points = static_cast<int>(config.get_int("pattern.points", 181));
    const std::string eval_codebook = config.get_string("eval.codebook", "");
    const std::string scenario_format = config.get_string("scenario.format", "binary");

    config.reject_unknown_keys();
    fs::create_directories(out_dir);

    auto write_geometry = [&] {
        nlohmann::json j = geometry;
        detail::write_text(out_dir / "geometry.json", j.dump(2) + "\n");
        emit("geometry.json");
    };

    auto write_patterns = [&](const Codebook& cb) {
        const auto grid = detail::angle_grid(pattern_points);
        std::vector<Eigen::VectorXd> clean, corrupted;
        for (const auto& entry : cb.entries) {
            clean.push_back(beam_pattern(entry.weights, clean_geometry, grid));
            corrupted.push_back(beam_pattern(entry.weights, geometry, grid));
        }
        save_patterns_csv(clean, grid, out_dir / "patterns_clean.csv");
        save_patterns_csv(corrupted, grid, out_dir / "patterns_corrupted.csv");
        emit("patterns_clean.csv");
        emit("patterns_corrupted.csv");
    };

    auto write_baselines = [&](const Codebook& cb) {
        save_baselines_csv(compare_baselines(cb, set, geometry, &phases), out_dir / "baselines.csv");
        emit("baselines.csv");
    };

    auto write_metadata = [&] {
        nlohmann::json meta = config.metadata();
        meta["normalization"] = normalization;
        meta["geometry_id"] = geometry.id();
        meta["users"] = set.size();
        detail::write_text(out_dir / "metadata.json", meta.dump(2) + "\n");
        emit("metadata.json");
    };

    if (task == "generate-scenario") {
        if (scenario_format == "json") {
            save_channels_json(set, out_dir / "channels.json");
            emit("channels.json");
        } else if (scenario_format == "binary") {
            save_channels_binary(set, out_dir / "channels.bfch");
            emit("channels.bfch");
        } else {
            throw ConfigError("scenario.format must be binary or json");
        }
        write_geometry();
    } else if (task == "learn-beam") {
        const TrainResult result = train_beam_pattern(agent, set, iterations);
        std::ostringstream curve;
        curve << "iter,gain,threshold,reward\n";
        for (const auto& row : result.log)
            curve << row.iteration << ',' << detail::format_double(row.gain) << ','
                  << detail::format_double(row.threshold) << ',' << row.reward << '\n';
        detail::write_text(out_dir / "curve.csv", curve.str());
        emit("curve.csv");
        const Codebook learned = Codebook::from_beams({result.best_beam}, phases);
        save_codebook(learned, out_dir / "codebook.json");
        emit("codebook.json");
        write_patterns(learned);
        write_baselines(learned);
        write_geometry();
    } else if (task == "learn-codebook") {
        const CodebookResult result = learn_codebook(codebook_config, set, codebook_beams);
        save_codebook(result.codebook, out_dir / "codebook.json");
        emit("codebook.json");
        std::ostringstream objective;
        objective << "round,objective,best_objective\n";
        for (const auto& row : result.objective_log)
            objective << row.round << ',' << detail::format_double(row.objective) << ','
                      << detail::format_double(row.best_objective) << '\n';
        detail::write_text(out_dir / "objective.csv", objective.str());
        emit("objective.csv");
        std::ostringstream assignment;
        assignment << "round,network,cluster,avg_gain\n";
        for (const auto& row : result.assignment_log)
            assignment << row.round << ',' << row.network << ',' << row.cluster << ','
                       << detail::format_double(row.avg_gain) << '\n';
        detail::write_text(out_dir / "assignment.csv", assignment.str());
        emit("assignment.csv");
        detail::write_text(out_dir / "cluster_model.json",
                           cluster_model_to_json(result.model, result.sensing).dump(2) + "\n");
        emit("cluster_model.json");
        write_patterns(result.codebook);
        write_baselines(result.codebook);
        write_geometry();
    } else if (task == "evaluate") {
        if (eval_codebook.empty()) throw ConfigError("evaluate needs eval.codebook");
        if (!fs::exists(eval_codebook)) throw ConfigError("eval.codebook does not exist: " + eval_codebook);
        const Codebook cb = load_codebook(eval_codebook);
        if (cb.antennas() != set.antennas())
            throw ConfigError("eval.codebook antenna count does not match the channel set");
        write_baselines(cb);
    } else if (task == "export-patterns") {
        if (eval_codebook.empty()) throw ConfigError("export-patterns needs eval.codebook");
        if (!fs::exists(eval_codebook)) throw ConfigError("eval.codebook does not exist: " + eval_codebook);
        const Codebook cb = load_codebook(eval_codebook);
        if (cb.antennas() != geometry.size())
            throw ConfigError("eval.codebook antenna count does not match array.antennas");
        write_patterns(cb);
        write_geometry();
    } else {
        throw ConfigError("unknown task: " + task);
    }
    write_metadata();
    return artifacts;
}

}  // namespace beamrl
