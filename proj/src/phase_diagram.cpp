#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nora/analysis.hpp"
#include "nora/container.hpp"
#include "nora/errors.hpp"
#include "nora/parallel.hpp"
#include "nora/random.hpp"

namespace nora {

namespace fs = std::filesystem;

namespace {

fs::path cell_path(const fs::path& dir, std::int64_t rank, std::int64_t lines) {
    return dir / ("cell_R" + std::to_string(rank) + "_L" + std::to_string(lines) + ".json");
}

std::optional<PhaseCell> load_checkpoint(const PhaseDiagramConfig& cfg, std::int64_t rank,
                                         std::int64_t lines) {
    if (!cfg.checkpoint_dir) return std::nullopt;
    const auto path = cell_path(*cfg.checkpoint_dir, rank, lines);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("seed").get<std::uint64_t>() != cfg.seed ||
            j.at("success_threshold").get<double>() != cfg.success_threshold) {
            return std::nullopt;
        }
        PhaseCell cell = phase_cell_from_json(j);
        if (cell.rank != rank || cell.lines != lines || cell.trials != cfg.trials) return std::nullopt;
        return cell;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
}

void save_checkpoint(const PhaseDiagramConfig& cfg, const PhaseCell& cell) {
    if (!cfg.checkpoint_dir) return;
    auto j = to_json(cell);
    j["seed"] = cfg.seed;
    j["success_threshold"] = cfg.success_threshold;
    write_file_atomic(cell_path(*cfg.checkpoint_dir, cell.rank, cell.lines), j.dump(2) + "\n");
}

}  // namespace

nlohmann::json to_json(const PhaseCell& c) {
    return {{"R", c.rank},
            {"Lprime", c.lines},
            {"trials", c.trials},
            {"successes", c.successes},
            {"failures", c.failures},
            {"success_fraction", c.success_fraction},
            {"mean_rel_error", c.mean_rel_error},
            {"seeds", c.seeds},
            {"rel_errors", c.rel_errors},
            {"errors", c.errors}};
}

PhaseCell phase_cell_from_json(const nlohmann::json& j) {
    PhaseCell c;
    c.rank = j.at("R").get<std::int64_t>();
    c.lines = j.at("Lprime").get<std::int64_t>();
    c.trials = j.at("trials").get<int>();
    c.successes = j.at("successes").get<int>();
    c.failures = j.at("failures").get<int>();
    c.success_fraction = j.at("success_fraction").get<double>();
    auto number = [](const nlohmann::json& v) { return v.is_null() ? std::nan("") : v.get<double>(); };
    c.mean_rel_error = number(j.at("mean_rel_error"));
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& e : j.at("rel_errors")) c.rel_errors.push_back(number(e));
    c.errors = j.at("errors").get<std::vector<std::string>>();
    return c;
}

const PhaseCell* PhaseDiagramResult::find(std::int64_t rank, std::int64_t lines) const {
    for (const auto& c : cells) {
        if (c.rank == rank && c.lines == lines) return &c;
    }
    return nullptr;
}

std::optional<std::int64_t> PhaseDiagramResult::boundary(std::int64_t rank, double min_success) const {
    std::optional<std::int64_t> best;
    for (const auto& c : cells) {
        if (c.rank == rank && c.success_fraction >= min_success && (!best || c.lines < *best)) {
            best = c.lines;
        }
    }
    return best;
}

double phase_trial(const PhaseDiagramConfig& cfg, std::int64_t rank, std::int64_t lines,
                   std::uint64_t seed) {
    const Matrix truth = random_low_rank(cfg.grid.pixels(), cfg.frames, rank, derive_seed(seed, {1}));
    const SamplingPlan plan = generate_plan(cfg.grid, cfg.frames, lines, cfg.strategy, derive_seed(seed, {2}));
    const ForwardModel model(cfg.psf, plan);
    const MeasurementSet y{plan, model.apply(truth)};
    SolverConfig solver = cfg.solver;
    solver.seed = derive_seed(seed, {3});
    solver.mode = LagrangianMode{cfg.lambda_rel * lambda_zero_threshold(y, model)};
    const Solution s = solve_lagrangian(y, model, solver);
    return (s.estimate.data() - truth).norm() / truth.norm();
}

PhaseDiagramResult phase_diagram(const PhaseDiagramConfig& cfg) {
    if (cfg.trials < 1) throw ConfigError("phase diagram needs at least one trial per cell");
    cfg.grid.validate();
    for (auto r : cfg.ranks) {
        if (r < 1 || r > std::min(cfg.grid.pixels(), cfg.frames)) throw ConfigError("rank out of range");
    }
    for (auto l : cfg.lines) {
        if (l < 1 || l > cfg.grid.height_lines) throw ConfigError("line count out of range");
    }
    if (cfg.checkpoint_dir) fs::create_directories(*cfg.checkpoint_dir);

    struct Task {
        std::int64_t rank, lines;
    };
    std::vector<Task> tasks;
    for (auto r : cfg.ranks) {
        for (auto l : cfg.lines) tasks.push_back({r, l});
    }

    PhaseDiagramResult result;
    result.success_threshold = cfg.success_threshold;
    result.seed = cfg.seed;
    result.cells.resize(tasks.size());

    parallel_for(static_cast<std::int64_t>(tasks.size()), cfg.threads, [&](std::int64_t i) {
        const auto [rank, lines] = tasks[i];
        if (auto cached = load_checkpoint(cfg, rank, lines)) {
            result.cells[i] = std::move(*cached);
            return;
        }
        PhaseCell cell;
        cell.rank = rank;
        cell.lines = lines;
        cell.trials = cfg.trials;
        double error_sum = 0.0;
        int solved = 0;
        for (int trial = 0; trial < cfg.trials; ++trial) {
            const auto seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(rank),
                                                     static_cast<std::uint64_t>(lines),
                                                     static_cast<std::uint64_t>(trial)});
            cell.seeds.push_back(seed);
            try {
                const double err = phase_trial(cfg, rank, lines, seed);
                cell.rel_errors.push_back(err);
                error_sum += err;
                ++solved;
                if (err <= cfg.success_threshold) ++cell.successes;
            } catch (const Error& e) {
                ++cell.failures;
                cell.rel_errors.push_back(std::nan(""));
                cell.errors.emplace_back(e.what());
            }
        }
        cell.success_fraction = static_cast<double>(cell.successes) / cfg.trials;
        cell.mean_rel_error = solved > 0 ? error_sum / solved : std::nan("");
        save_checkpoint(cfg, cell);
        result.cells[i] = std::move(cell);
    });
    return result;
}

std::string phase_diagram_csv(const PhaseDiagramResult& result) {
    std::ostringstream out;
    out.precision(17);
    out << "R,Lprime,success_fraction,mean_rel_error\n";
    for (const auto& c : result.cells) {
        out << c.rank << ',' << c.lines << ',' << c.success_fraction << ',' << c.mean_rel_error << '\n';
    }
    return out.str();
}

}  // namespace nora
