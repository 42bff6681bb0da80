#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "random.hpp"

namespace edis {

enum class Action { up = 0, down = 1, left = 2, right = 3 };
inline constexpr std::size_t kNumActions = 4;

struct Cell {
    int row = 0;
    int col = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

/// Grid maze. Layout is data: '.' open, '#' wall, 'S' start, 'E' exit.
struct MazeSpec {
    int width = 0;
    int height = 0;
    std::vector<bool> blocked;  ///< row-major
    Cell start;
    Cell exit;
    double step_penalty = -0.01;
    double exit_reward = 1.0;
    double gamma = 0.99;
    int episode_cap = 200;
    double jitter = 0.05;  ///< observation noise in cell units; 0 gives the tabular variant

    static MazeSpec from_layout(const std::vector<std::string>& rows) {
        MazeSpec m;
        if (rows.empty()) throw ValidationError("maze layout: no rows");
        m.height = static_cast<int>(rows.size());
        m.width = static_cast<int>(rows.front().size());
        bool has_start = false, has_exit = false;
        for (int r = 0; r < m.height; ++r) {
            const std::string& line = rows[static_cast<std::size_t>(r)];
            if (static_cast<int>(line.size()) != m.width)
                throw FormatError("maze layout: row " + std::to_string(r + 1) + " has width " +
                                      std::to_string(line.size()) + ", expected " + std::to_string(m.width),
                                  static_cast<std::size_t>(r + 1));
            for (int c = 0; c < m.width; ++c) {
                const char ch = line[static_cast<std::size_t>(c)];
                switch (ch) {
                    case '.': m.blocked.push_back(false); break;
                    case '#': m.blocked.push_back(true); break;
                    case 'S': m.blocked.push_back(false), m.start = {r, c}, has_start = true; break;
                    case 'E': m.blocked.push_back(false), m.exit = {r, c}, has_exit = true; break;
                    default:
                        throw FormatError(std::string("maze layout: unexpected character '") + ch + "'",
                                          static_cast<std::size_t>(r + 1));
                }
            }
        }
        if (!has_start || !has_exit) throw ValidationError("maze layout: needs one 'S' and one 'E'");
        m.validate();
        return m;
    }

    /// Layout file: one row per line; blank lines and lines starting with ';' are skipped.
    static MazeSpec load_layout(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open maze layout '" + path + "'");
        std::vector<std::string> rows;
        std::string line;
        while (std::getline(in, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
            if (line.empty() || line.front() == ';') continue;
            rows.push_back(line);
        }
        return from_layout(rows);
    }

    std::vector<std::string> layout() const {
        std::vector<std::string> rows(static_cast<std::size_t>(height), std::string(static_cast<std::size_t>(width), '.'));
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c)
                if (blocked[index({r, c})]) rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = '#';
        rows[static_cast<std::size_t>(start.row)][static_cast<std::size_t>(start.col)] = 'S';
        rows[static_cast<std::size_t>(exit.row)][static_cast<std::size_t>(exit.col)] = 'E';
        return rows;
    }

    void validate() const {
        detail::require(width > 0 && height > 0, "maze: empty grid");
        detail::require(blocked.size() == static_cast<std::size_t>(width * height), "maze: blocked mask size mismatch");
        detail::require(is_open(start), "maze: start must be an open cell");
        detail::require(is_open(exit), "maze: exit must be an open cell");
        detail::require(!(start == exit), "maze: start and exit coincide");
        detail::require(step_penalty < 0, "maze: step penalty must be negative");
        detail::require(exit_reward > 0, "maze: exit reward must be positive");
        detail::require(gamma >= 0 && gamma < 1, "maze: gamma must lie in [0, 1)");
        detail::require(episode_cap >= 1, "maze: episode cap must be positive");
        detail::require(jitter >= 0, "maze: jitter must be nonnegative");
        if (distance_to_exit(start) < 0) throw ValidationError("maze: exit is unreachable from start");
    }

    std::size_t num_cells() const { return static_cast<std::size_t>(width * height); }
    bool in_grid(Cell c) const { return c.row >= 0 && c.row < height && c.col >= 0 && c.col < width; }
    bool is_open(Cell c) const { return in_grid(c) && !blocked[index(c)]; }
    std::size_t index(Cell c) const { return static_cast<std::size_t>(c.row * width + c.col); }
    Cell cell(std::size_t i) const { return {static_cast<int>(i) / width, static_cast<int>(i) % width}; }

    /// Deterministic move; walls and edges leave the agent in place.
    Cell move(Cell c, Action a) const {
        Cell n = c;
        switch (a) {
            case Action::up: --n.row; break;
            case Action::down: ++n.row; break;
            case Action::left: --n.col; break;
            case Action::right: ++n.col; break;
        }
        return is_open(n) ? n : c;
    }

    double reward(Cell s, Action a) const { return move(s, a) == exit ? exit_reward : step_penalty; }

    /// BFS step counts to the exit; -1 for walls and unreachable cells.
    std::vector<int> distances() const {
        std::vector<int> d(num_cells(), -1);
        std::deque<Cell> q{exit};
        d[index(exit)] = 0;
        while (!q.empty()) {
            Cell c = q.front();
            q.pop_front();
            for (std::size_t a = 0; a < kNumActions; ++a) {
                // moves are reversible, so predecessors are the neighbours
                Cell n = move(c, static_cast<Action>(a));
                if (d[index(n)] < 0) {
                    d[index(n)] = d[index(c)] + 1;
                    q.push_back(n);
                }
            }
        }
        return d;
    }

    int distance_to_exit(Cell c) const { return is_open(c) ? distances()[index(c)] : -1; }

    /// Undiscounted return of a shortest-path episode from the start.
    double optimal_return() const {
        const int n = distance_to_exit(start);
        return exit_reward + (n - 1) * step_penalty;
    }
};

/// State vector convention: (x, y) = (column, row) in cell units.
inline constexpr std::size_t kStateDim = 2;

inline std::array<float, 2> cell_center(Cell c) { return {static_cast<float>(c.col), static_cast<float>(c.row)}; }

/// Nearest cell to a state vector; may be outside the grid.
inline Cell nearest_cell(const float* s) {
    return {static_cast<int>(std::lround(s[1])), static_cast<int>(std::lround(s[0]))};
}

inline std::vector<float> one_hot(Action a) {
    std::vector<float> v(kNumActions, 0.f);
    v[static_cast<std::size_t>(a)] = 1.f;
    return v;
}

/// Arg-max snap; ties go to the first action.
inline Action decode_action(const float* a) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < kNumActions; ++i)
        if (a[i] > a[best]) best = i;
    return static_cast<Action>(best);
}

inline std::vector<float> observe(const MazeSpec& spec, Cell c, Rng& rng) {
    auto ctr = cell_center(c);
    std::vector<float> s(ctr.begin(), ctr.end());
    if (spec.jitter > 0)
        for (auto& v : s) v = static_cast<float>(v + spec.jitter * rng.normal());
    return s;
}

enum class Provenance { environment, generated };

struct Transition {
    std::vector<float> s;
    std::vector<float> a;
    float r = 0.f;
    std::vector<float> s_next;
    bool done = false;  ///< exit reached (episode-cap truncation is not terminal)
    Provenance origin = Provenance::environment;
};

struct StepResult {
    std::vector<float> s_next;
    double reward = 0.0;
    bool done = false;       ///< exit reached or cap hit
    bool terminal = false;   ///< exit reached
};

/// Cell under a state vector, rejecting walls and off-grid states.
inline Cell state_cell(const MazeSpec& spec, const float* s) {
    const Cell c = nearest_cell(s);
    if (!spec.in_grid(c))
        throw ValidationError("maze step: state (" + std::to_string(s[0]) + ", " + std::to_string(s[1]) + ") is off the grid");
    if (!spec.is_open(c))
        throw ValidationError("maze step: state (" + std::to_string(c.col) + ", " + std::to_string(c.row) + ") is a wall");
    return c;
}

/// One environment step from state vector s; `t` is the number of steps already taken.
inline StepResult step(const MazeSpec& spec, const std::vector<float>& s, Action a, Rng& rng, int t = 0) {
    if (s.size() != kStateDim) throw ValidationError("maze step: state must have 2 components");
    const Cell c = state_cell(spec, s.data());
    const Cell n = spec.move(c, a);
    StepResult out;
    out.s_next = observe(spec, n, rng);
    out.reward = spec.reward(c, a);
    out.terminal = n == spec.exit;
    out.done = out.terminal || t + 1 >= spec.episode_cap;
    return out;
}

/// Stateful episode wrapper.
class MazeEnv {
public:
    MazeEnv(const MazeSpec& spec, Rng& rng) : spec_(&spec), rng_(&rng) { reset(); }

    const std::vector<float>& reset() {
        t_ = 0;
        s_ = observe(*spec_, spec_->start, *rng_);
        return s_;
    }

    const std::vector<float>& state() const noexcept { return s_; }
    int steps() const noexcept { return t_; }

    /// Steps, fills `tr`, and returns true when the episode ended.
    bool step(Action a, Transition& tr) {
        StepResult res = edis::step(*spec_, s_, a, *rng_, t_);
        tr.s = s_;
        tr.a = one_hot(a);
        tr.r = static_cast<float>(res.reward);
        tr.s_next = res.s_next;
        tr.done = res.terminal;
        tr.origin = Provenance::environment;
        ++t_;
        s_ = std::move(res.s_next);
        return res.done;
    }

private:
    const MazeSpec* spec_;
    Rng* rng_;
    std::vector<float> s_;
    int t_ = 0;
};

/// Ordered transitions with fixed state and action widths.
struct Dataset {
    std::size_t dim_s = kStateDim;
    std::size_t dim_a = kNumActions;
    std::vector<Transition> items;

    std::size_t size() const noexcept { return items.size(); }
    bool empty() const noexcept { return items.empty(); }
    std::size_t tuple_dim() const { return 2 * dim_s + dim_a; }

    void add(Transition t) {
        if (t.s.size() != dim_s || t.s_next.size() != dim_s || t.a.size() != dim_a)
            throw ValidationError("dataset: transition widths (" + std::to_string(t.s.size()) + ", " +
                                  std::to_string(t.a.size()) + ", " + std::to_string(t.s_next.size()) +
                                  ") do not match dim_s=" + std::to_string(dim_s) + " dim_a=" + std::to_string(dim_a));
        items.push_back(std::move(t));
    }

    /// Rows of (s, a, s'); rewards and flags are left out.
    Matrix tuples() const {
        Matrix m = Matrix::matrix(items.size(), tuple_dim());
        for (std::size_t i = 0; i < items.size(); ++i) {
            float* row = m.data() + i * tuple_dim();
            std::copy(items[i].s.begin(), items[i].s.end(), row);
            std::copy(items[i].a.begin(), items[i].a.end(), row + dim_s);
            std::copy(items[i].s_next.begin(), items[i].s_next.end(), row + dim_s + dim_a);
        }
        return m;
    }

    Matrix states() const {
        Matrix m = Matrix::matrix(items.size(), dim_s);
        for (std::size_t i = 0; i < items.size(); ++i) std::copy(items[i].s.begin(), items[i].s.end(), m.data() + i * dim_s);
        return m;
    }

    /// Per-coordinate statistics of the tuple vectors, computed on demand.
    Standardizer stats() const {
        if (items.empty()) throw ValidationError("dataset: empty dataset has no statistics");
        return Standardizer::fit(tuples());
    }
};

inline Dataset concat(const Dataset& a, const Dataset& b) {
    Dataset out = a;
    for (const auto& t : b.items) out.add(t);
    return out;
}

/// Greedy shortest-path action (first best action on ties).
inline Action shortest_path_action(const MazeSpec& spec, const std::vector<int>& dist, Cell c) {
    std::size_t best = 0;
    int best_d = -1;
    for (std::size_t a = 0; a < kNumActions; ++a) {
        const int d = dist[spec.index(spec.move(c, static_cast<Action>(a)))];
        if (d >= 0 && (best_d < 0 || d < best_d)) best = a, best_d = d;
    }
    return static_cast<Action>(best);
}

struct BehaviorPolicy {
    enum class Kind { uniform, epsilon_greedy } kind = Kind::uniform;
    double epsilon = 0.1;  ///< for epsilon_greedy around the shortest path
};

/// Episodes from the start under the behavior policy until exactly n transitions.
inline Dataset generate_offline_dataset(const MazeSpec& spec, const BehaviorPolicy& behavior, std::size_t n,
                                        std::uint64_t seed) {
    detail::require(n >= 1, "generate_offline_dataset: n must be at least 1");
    spec.validate();
    if (behavior.kind == BehaviorPolicy::Kind::epsilon_greedy)
        detail::require(behavior.epsilon >= 0 && behavior.epsilon <= 1, "generate_offline_dataset: epsilon must lie in [0,1]");
    Rng rng(seed, "offline-data");
    const auto dist = spec.distances();
    Dataset ds;
    MazeEnv env(spec, rng);
    while (ds.size() < n) {
        const Cell c = nearest_cell(env.state().data());
        Action a;
        if (behavior.kind == BehaviorPolicy::Kind::uniform || rng.bernoulli(behavior.epsilon))
            a = static_cast<Action>(rng.index(kNumActions));
        else
            a = shortest_path_action(spec, dist, c);
        Transition tr;
        const bool ended = env.step(a, tr);
        ds.add(std::move(tr));
        if (ended) env.reset();
    }
    return ds;
}

}  // namespace edis
