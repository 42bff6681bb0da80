#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "experiment.hpp"

namespace edis {

/// Everything a command needs besides its file arguments.
struct RunConfig {
    ExperimentConfig exp;
    std::size_t seeds = 5;  ///< runs per multi-seed command; run i uses root seed + i

    RunConfig() {
        exp.spec = MazeSpec::from_layout({"S..#....", ".#.#.##.", ".#...#..", ".###.#.#",
                                          "...#....", ".#.###.#", ".#...#..", "...#...E"});
        GeneratorConfig& g = exp.sources.edis;
        g.denoiser.net = {128, 4, true};
        g.denoiser.iterations = 3000;
        g.denoiser.lr = 1e-3;
        g.energy.hidden = 128;
        g.energy.depth = 2;
        g.energy.iterations = 1200;
        g.energy.updates_per_pass = 32;
        exp.sources.model.iterations = 2000;
        exp.agent.env_steps = 4000;
        exp.agent.retrain_interval = 2000;
    }

    /// Derived settings: the diffusion baseline shares the EDIS denoiser recipe
    /// (width comes from the parameter budget) and its schedule.
    SourceConfig resolved_sources() const {
        SourceConfig s = with_parity(exp.sources);
        s.model.sched = s.edis.sched;
        const std::size_t it = s.model.iterations;
        s.model.denoiser = s.edis.denoiser;
        s.model.denoiser.iterations = it;
        return s;
    }

    ExperimentConfig resolved() const {
        ExperimentConfig e = exp;
        e.sources = resolved_sources();
        return e;
    }

    void validate() const {
        exp.spec.validate();
        exp.agent.validate();
        exp.sources.edis.sched.validate();
        exp.sources.edis.energy.validate();
        exp.sources.edis.sampler.validate();
        const auto& d = exp.sources.edis.denoiser;
        detail::require(d.iterations >= 1 && d.batch_size >= 1 && d.sigma_groups >= 1, "denoiser: iterations, batch size and groups must be positive");
        detail::require(d.net.hidden >= 1 && d.net.depth >= 1, "denoiser: depth and hidden width must be positive");
        detail::require(d.lr > 0, "denoiser: learning rate must be positive");
        const auto& m = exp.sources.model;
        detail::require(m.iterations >= 1 && m.batch_size >= 1 && m.depth >= 1, "baseline: iterations, batch size and depth must be positive");
        detail::require(m.lr > 0, "baseline: learning rate must be positive");
        detail::require(exp.sources.horizon >= 1, "baseline: horizon must be positive");
        detail::require(exp.offline_n >= 1, "data: n must be positive");
        detail::require(exp.behavior.epsilon >= 0 && exp.behavior.epsilon <= 1, "data: epsilon must lie in [0,1]");
        detail::require(exp.sample_n >= 1, "experiment: sample_n must be positive");
        detail::require(seeds >= 1, "experiment: seeds must be positive");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* end = text.data() + text.size();
    const auto r = std::from_chars(text.data(), end, v);
    if (r.ec != std::errc{} || r.ptr != end) throw ValidationError("config: '" + key + "' expects a number, got '" + text + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ValidationError("config: '" + key + "' expects true or false, got '" + text + "'");
}

struct Field {
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

/// Keys are "section.name"; registration order is the echo order.
class FieldTable {
public:
    void add(std::string key, Field f) {
        order_.push_back(key);
        fields_.emplace(std::move(key), std::move(f));
    }

    void num(const std::string& key, std::size_t& v) {
        add(key, {[&v] { return std::to_string(v); }, [&v, key](const std::string& s) { v = parse_number<std::size_t>(key, s); }});
    }
    void num(const std::string& key, int& v) {
        add(key, {[&v] { return std::to_string(v); }, [&v, key](const std::string& s) { v = parse_number<int>(key, s); }});
    }
    void num(const std::string& key, double& v) {
        add(key, {[&v] { return format_double(v); }, [&v, key](const std::string& s) { v = parse_number<double>(key, s); }});
    }
    void flag(const std::string& key, bool& v) {
        add(key, {[&v] { return v ? "true" : "false"; }, [&v, key](const std::string& s) { v = parse_bool(key, s); }});
    }

    Field* find(const std::string& key) {
        auto it = fields_.find(key);
        return it == fields_.end() ? nullptr : &it->second;
    }
    const std::vector<std::string>& order() const { return order_; }
    const Field& at(const std::string& key) const { return fields_.at(key); }

private:
    std::map<std::string, Field> fields_;
    std::vector<std::string> order_;
};

inline FieldTable fields_of(RunConfig& c) {
    FieldTable t;
    ExperimentConfig& e = c.exp;
    MazeSpec& m = e.spec;
    t.num("maze.step_penalty", m.step_penalty);
    t.num("maze.exit_reward", m.exit_reward);
    t.num("maze.gamma", m.gamma);
    t.num("maze.episode_cap", m.episode_cap);
    t.num("maze.jitter", m.jitter);

    t.num("data.n", e.offline_n);
    t.add("data.behavior",
          {[&e] { return std::string(e.behavior.kind == BehaviorPolicy::Kind::uniform ? "uniform" : "epsilon_greedy"); },
           [&e](const std::string& s) {
               if (s == "uniform") e.behavior.kind = BehaviorPolicy::Kind::uniform;
               else if (s == "epsilon_greedy") e.behavior.kind = BehaviorPolicy::Kind::epsilon_greedy;
               else throw ValidationError("config: 'data.behavior' expects uniform or epsilon_greedy, got '" + s + "'");
           }});
    t.num("data.epsilon", e.behavior.epsilon);

    GeneratorConfig& g = e.sources.edis;
    t.num("schedule.sigma_max", g.sched.sigma_max);
    t.num("schedule.sigma_min", g.sched.sigma_min);
    t.num("schedule.rho", g.sched.rho);
    t.num("schedule.steps", g.sched.steps);

    t.num("denoiser.hidden", g.denoiser.net.hidden);
    t.num("denoiser.depth", g.denoiser.net.depth);
    t.flag("denoiser.residual", g.denoiser.net.residual);
    t.num("denoiser.iterations", g.denoiser.iterations);
    t.num("denoiser.batch_size", g.denoiser.batch_size);
    t.num("denoiser.lr", g.denoiser.lr);
    t.flag("denoiser.cosine", g.denoiser.cosine);
    t.num("denoiser.sigma_groups", g.denoiser.sigma_groups);

    t.num("energy.k", g.energy.k);
    t.num("energy.k_neg", g.energy.k_neg);
    t.num("energy.k1", g.energy.k1);
    t.num("energy.k2", g.energy.k2);
    t.num("energy.lr", g.energy.lr);
    t.flag("energy.cosine", g.energy.cosine);
    t.num("energy.iterations", g.energy.iterations);
    t.num("energy.updates_per_pass", g.energy.updates_per_pass);
    t.num("energy.hidden", g.energy.hidden);
    t.num("energy.depth", g.energy.depth);
    t.num("energy.online_fraction", g.energy.online_fraction);

    t.num("sampler.beta", g.sampler.beta);
    t.num("sampler.guidance_scale", g.sampler.guidance_scale);
    t.num("sampler.chunk", g.sampler.chunk);

    t.flag("guidance.state", g.guidance.use[0]);
    t.flag("guidance.action", g.guidance.use[1]);
    t.flag("guidance.transition", g.guidance.use[2]);
    t.flag("guidance.free_slice_only", g.guidance.free_slice_only);

    AgentConfig& a = e.agent;
    t.num("agent.offline_iterations", a.offline_iterations);
    t.num("agent.alpha", a.alpha);
    t.num("agent.env_steps", a.env_steps);
    t.num("agent.grad_steps", a.grad_steps);
    t.num("agent.batch_size", a.batch_size);
    t.num("agent.retrain_interval", a.retrain_interval);
    t.num("agent.refill", a.refill);
    t.num("agent.synthetic_ratio", a.synthetic_ratio);
    t.num("agent.epsilon", a.epsilon);
    t.flag("agent.include_offline", a.include_offline);
    t.num("agent.eval_interval", a.eval_interval);
    t.num("agent.eval_episodes", a.eval_episodes);
    t.num("agent.positive_capacity", a.positive_capacity);

    SourceConfig& s = e.sources;
    t.num("baseline.depth", s.model.depth);
    t.num("baseline.hidden", s.model.hidden);
    t.num("baseline.iterations", s.model.iterations);
    t.num("baseline.batch_size", s.model.batch_size);
    t.num("baseline.lr", s.model.lr);
    t.num("baseline.horizon", s.horizon);
    t.num("baseline.param_budget", s.param_budget);

    t.num("experiment.warmup_steps", e.warmup_steps);
    t.num("experiment.sample_n", e.sample_n);
    t.num("experiment.seeds", c.seeds);
    return t;
}

}  // namespace detail

/// Applies "key=value" (section-qualified key) on top of the current values.
inline void apply_override(RunConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ValidationError("override '" + assignment + "' is not of the form section.key=value");
    const std::string key = detail::trim(assignment.substr(0, eq)), value = detail::trim(assignment.substr(eq + 1));
    auto table = detail::fields_of(c);
    detail::Field* f = table.find(key);
    if (!f) throw ValidationError("unknown config key '" + key + "'");
    f->set(value);
}

/// Parses the flat sectioned format:
///
///   [section]
///   key = value     ; comment
///
/// The maze is given either by `layout = path` (relative to the config file)
/// or by one `grid = row` line per maze row. Unknown sections or keys are errors.
inline RunConfig parse_config(std::istream& in, const std::string& base_dir = ".") {
    RunConfig c;
    auto table = detail::fields_of(c);
    std::string section, line;
    std::vector<std::string> grid;
    std::string layout_path;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        const std::string body = detail::trim(line.substr(0, line.find(';')));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']') throw FormatError("config: unterminated section header", n);
            section = detail::trim(body.substr(1, body.size() - 2));
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw FormatError("config: expected key = value", n);
        if (section.empty()) throw FormatError("config: key outside of a section", n);
        const std::string key = section + "." + detail::trim(body.substr(0, eq));
        const std::string value = detail::trim(body.substr(eq + 1));
        if (key == "maze.grid") {
            grid.push_back(value);
        } else if (key == "maze.layout") {
            layout_path = value;
        } else {
            detail::Field* f = table.find(key);
            if (!f) throw FormatError("config: unknown key '" + key + "'", n);
            try {
                f->set(value);
            } catch (const ValidationError& e) {
                throw FormatError(e.what(), n);
            }
        }
    }
    if (!grid.empty() && !layout_path.empty()) throw ValidationError("config: give the maze by layout or by grid rows, not both");
    if (!grid.empty() || !layout_path.empty()) {
        const MazeSpec shape = grid.empty() ? MazeSpec::load_layout(layout_path.front() == '/' ? layout_path : base_dir + "/" + layout_path)
                                            : MazeSpec::from_layout(grid);
        MazeSpec& m = c.exp.spec;
        m.width = shape.width;
        m.height = shape.height;
        m.blocked = shape.blocked;
        m.start = shape.start;
        m.exit = shape.exit;
    }
    c.validate();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config '" + path + "'");
    const auto slash = path.find_last_of('/');
    return parse_config(in, slash == std::string::npos ? "." : path.substr(0, slash));
}

/// Fully resolved configuration in the input format; parsing it reproduces `c`.
inline void write_config(std::ostream& os, const RunConfig& c) {
    RunConfig copy = c;
    auto table = detail::fields_of(copy);
    std::string section;
    for (const std::string& key : table.order()) {
        const auto dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) os << '\n';
            os << '[' << sec << "]\n";
            section = sec;
            if (sec == "maze")
                for (const std::string& row : c.exp.spec.layout()) os << "grid = " << row << '\n';
        }
        os << key.substr(dot + 1) << " = " << table.at(key).get() << '\n';
    }
}

inline std::string config_text(const RunConfig& c) {
    std::ostringstream os;
    write_config(os, c);
    return os.str();
}

}  // namespace edis
