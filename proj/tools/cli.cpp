#include "nora/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>

#include "nora/container.hpp"
#include "nora/errors.hpp"
#include "nora/parallel.hpp"
#include "nora/random.hpp"

namespace nora::cli {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

// Every accepted key with its default value.
const std::vector<std::pair<std::string, std::string>> kDefaults = {
    {"run.seed", "1"},
    {"run.threads", "0"},
    {"grid.height_lines", "32"},
    {"grid.width_pixels", "32"},
    {"grid.pixel_pitch_um", "1.0"},
    {"grid.frame_rate_hz", "30"},
    {"grid.frames", "256"},
    {"scene.cells", "5"},
    {"scene.radius_min_px", "2.5"},
    {"scene.radius_max_px", "4"},
    {"activity.spike_rate_hz", "0.2"},
    {"activity.tau_rise_s", "0.05"},
    {"activity.tau_decay_s", "0.4"},
    {"activity.baseline", "1"},
    {"activity.amplitude_jitter", "0.2"},
    {"noise.enabled", "true"},
    {"noise.snr", "10"},
    {"noise.poisson_fraction", "0.5"},
    {"noise.photon_gain", "0"},
    {"noise.gaussian_sigma", "0"},
    {"noise.offset", "0"},
    {"motion.rigid_sigma_px", "0"},
    {"motion.line_jitter_sigma_px", "0"},
    {"psf.sigma_fast_px", "0.5"},
    {"psf.sigma_slow_px", "1.5"},
    {"psf.fwhm_fast_um", "0"},
    {"psf.fwhm_slow_um", "0"},
    {"psf.truncation_sigmas", "4"},
    {"plan.strategy", "rotating"},
    {"plan.lines_per_frame", "0"},
    {"plan.speedup", "10"},
    {"solver.mode", "lagrangian"},
    {"solver.lambda", "0"},
    {"solver.lambda_rel", "1e-4"},
    {"solver.preset", ""},
    {"solver.epsilon", "0"},
    {"solver.mu", "0.1"},
    {"solver.max_iters", "500"},
    {"solver.rel_tol", "1e-4"},
    {"solver.step_scale", "0.99"},
    {"solver.svd_rank_cap", "0"},
    {"solver.continuation", "true"},
    {"solver.norm_iterations", "100"},
    {"solver.batch_size_frames", "500"},
    {"evaluate.median_filter", "true"},
    {"evaluate.median_window", "9,9,9"},
    {"phase.height_lines", "16"},
    {"phase.width_pixels", "16"},
    {"phase.frames", "64"},
    {"phase.ranks", "1,2,4,8"},
    {"phase.lines", "1,2,3,4,5,6,7,8,10,12"},
    {"phase.trials", "5"},
    {"phase.success_threshold", "0.05"},
    {"phase.lambda_rel", "1e-4"},
    {"phase.strategy", "uniform"},
    {"phase.sigma_fast_px", "0"},
    {"phase.sigma_slow_px", "0"},
    {"phase.max_iters", "2000"},
    {"phase.rel_tol", "1e-6"},
    {"phase.continuation", "true"},
};

constexpr double kReferenceGrid = 512.0;
constexpr double kReferenceBatchFrames = 500.0;

template <typename T>
T get(const pt::ptree& tree, const std::string& key) {
    const auto raw = tree.get<std::string>(key);
    try {
        if constexpr (std::is_same_v<T, bool>) {
            std::string v = raw;
            std::transform(v.begin(), v.end(), v.begin(), ::tolower);
            if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
            if (v == "false" || v == "0" || v == "no" || v == "off") return false;
            throw std::invalid_argument(raw);
        } else if constexpr (std::is_same_v<T, std::string>) {
            return raw;
        } else {
            std::size_t used = 0;
            T value{};
            if constexpr (std::is_floating_point_v<T>) {
                value = static_cast<T>(std::stod(raw, &used));
            } else if constexpr (std::is_unsigned_v<T>) {
                value = static_cast<T>(std::stoull(raw, &used));
            } else {
                value = static_cast<T>(std::stoll(raw, &used));
            }
            if (used != raw.size()) throw std::invalid_argument(raw);
            return value;
        }
    } catch (const std::logic_error&) {
        throw ConfigError("cannot parse " + key + " = '" + raw + "'");
    }
}

std::vector<std::int64_t> int_list(const pt::ptree& tree, const std::string& key) {
    std::vector<std::int64_t> out;
    std::stringstream in(tree.get<std::string>(key));
    std::string item;
    while (std::getline(in, item, ',')) {
        pt::ptree one;
        one.put("v", item);
        out.push_back(get<std::int64_t>(one, "v"));
    }
    if (out.empty()) throw ConfigError(key + " must list at least one integer");
    return out;
}

SamplingStrategy strategy_from(const pt::ptree& tree, const std::string& key) {
    const auto v = get<std::string>(tree, key);
    if (v == "rotating") return SamplingStrategy::RotatingEvenlySpaced;
    if (v == "uniform") return SamplingStrategy::UniformRandom;
    try {
        return parse_strategy(v);
    } catch (const Error&) {
        throw ConfigError(key + " must be 'rotating' or 'uniform', got '" + v + "'");
    }
}

std::string strategy_name(SamplingStrategy s) {
    return s == SamplingStrategy::RotatingEvenlySpaced ? "rotating" : "uniform";
}

fs::path input(const std::optional<fs::path>& given, const fs::path& out, const char* name) {
    const fs::path p = given ? *given : out / name;
    if (!fs::exists(p)) throw IoError("input file not found: " + p.string());
    return p;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

void write_manifest(const RunConfig& config, const fs::path& out, const std::string& command,
                    const std::vector<std::string>& files, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json m;
    m["command"] = command;
    m["config"] = config.to_json();
    nlohmann::json seeds;
    seeds["run"] = config.seed;
    seeds["scene"] = config.seed_for(SeedTag::Scene);
    seeds["activity"] = config.seed_for(SeedTag::Activity);
    seeds["motion"] = config.seed_for(SeedTag::Motion);
    seeds["plan"] = config.seed_for(SeedTag::Plan);
    seeds["noise"] = config.seed_for(SeedTag::Noise);
    seeds["solver"] = config.seed_for(SeedTag::Solver);
    seeds["phase"] = config.seed_for(SeedTag::Phase);
    m["seeds"] = seeds;
    auto& list = m["files"] = nlohmann::json::array();
    for (const auto& f : files) {
        nlohmann::json entry;
        entry["name"] = f;
        entry["bytes"] = static_cast<std::uint64_t>(fs::file_size(out / f));
        list.push_back(entry);
    }
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_json(out / (command + "_manifest.json"), m);
}

std::int64_t resolve_lines(const pt::ptree& tree, std::int64_t height) {
    const auto lines = get<std::int64_t>(tree, "plan.lines_per_frame");
    if (lines > 0) {
        if (lines > height) throw ConfigError("plan.lines_per_frame exceeds grid.height_lines");
        return lines;
    }
    const auto speedup = get<double>(tree, "plan.speedup");
    if (!(speedup > 0.0)) throw ConfigError("plan.speedup must be positive when lines_per_frame is 0");
    return lines_for_speedup(height, speedup);
}

SolverConfig iteration_controls(const pt::ptree& tree) {
    SolverConfig c;
    c.max_iters = get<int>(tree, "solver.max_iters");
    c.rel_tol = get<double>(tree, "solver.rel_tol");
    c.step_scale = get<double>(tree, "solver.step_scale");
    const auto cap = get<std::int64_t>(tree, "solver.svd_rank_cap");
    if (cap < 0) throw ConfigError("solver.svd_rank_cap must be nonnegative");
    if (cap > 0) c.svd_rank_cap = cap;
    c.continuation = get<bool>(tree, "solver.continuation");
    c.norm_iterations = get<int>(tree, "solver.norm_iterations");
    return c;
}

}  // namespace

Psf PsfParams::make(double pixel_pitch_um) const {
    if (fwhm_fast_um > 0.0 || fwhm_slow_um > 0.0) {
        return make_gaussian_psf(fwhm_fast_um, fwhm_slow_um, pixel_pitch_um, truncation_sigmas);
    }
    return make_gaussian_psf_px(sigma_fast_px, sigma_slow_px, truncation_sigmas);
}

std::uint64_t RunConfig::seed_for(SeedTag tag) const {
    return derive_seed(seed, {static_cast<std::uint64_t>(tag)});
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [section, keys] : values) {
        for (const auto& [key, value] : keys) j[section][key] = value.data();
    }
    j["resolved"]["lines_per_frame"] = lines_per_frame;
    j["resolved"]["threads"] = threads;
    return j;
}

RunConfig load_run_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
    pt::ptree tree;
    for (const auto& [k, v] : kDefaults) tree.put(k, v);
    auto known = [](const std::string& key) {
        return std::any_of(kDefaults.begin(), kDefaults.end(), [&](const auto& d) { return d.first == key; });
    };

    if (file) {
        if (!fs::exists(*file)) throw IoError("config file not found: " + file->string());
        pt::ptree loaded;
        try {
            pt::ini_parser::read_ini(file->string(), loaded);
        } catch (const pt::ini_parser_error& e) {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
        for (const auto& [section, keys] : loaded) {
            if (keys.empty() && !keys.data().empty()) {
                throw ConfigError("key '" + section + "' must live inside a [section]");
            }
            for (const auto& [key, value] : keys) {
                const std::string full = section + "." + key;
                if (!known(full)) throw ConfigError("unknown config key '" + full + "'");
                tree.put(full, value.data());
            }
        }
    }
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
        const auto key = o.substr(0, eq);
        if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
        tree.put(key, o.substr(eq + 1));
    }

    RunConfig c;
    c.values = tree;
    c.seed = get<std::uint64_t>(tree, "run.seed");
    const auto threads = get<int>(tree, "run.threads");
    if (threads < 0) throw ConfigError("run.threads must be nonnegative");
    c.threads = threads > 0 ? std::min(threads, default_thread_count()) : default_thread_count();

    c.grid = FrameGrid{get<std::int64_t>(tree, "grid.height_lines"), get<std::int64_t>(tree, "grid.width_pixels"),
                       get<double>(tree, "grid.pixel_pitch_um"), get<double>(tree, "grid.frame_rate_hz")};
    c.grid.validate();
    c.frames = get<std::int64_t>(tree, "grid.frames");
    if (c.frames < 1) throw ConfigError("grid.frames must be at least 1");

    c.cells = get<std::int64_t>(tree, "scene.cells");
    c.radius_min_px = get<double>(tree, "scene.radius_min_px");
    c.radius_max_px = get<double>(tree, "scene.radius_max_px");

    c.activity.spike_rate_hz = get<double>(tree, "activity.spike_rate_hz");
    c.activity.tau_rise_s = get<double>(tree, "activity.tau_rise_s");
    c.activity.tau_decay_s = get<double>(tree, "activity.tau_decay_s");
    c.activity.baseline = get<double>(tree, "activity.baseline");
    c.activity.amplitude_jitter = get<double>(tree, "activity.amplitude_jitter");
    c.activity.seed = c.seed_for(SeedTag::Activity);
    c.activity.validate();

    c.noise_enabled = get<bool>(tree, "noise.enabled");
    c.snr = get<double>(tree, "noise.snr");
    c.poisson_fraction = get<double>(tree, "noise.poisson_fraction");
    c.noise.photon_gain = get<double>(tree, "noise.photon_gain");
    c.noise.gaussian_sigma = get<double>(tree, "noise.gaussian_sigma");
    c.noise.offset = get<double>(tree, "noise.offset");
    c.noise.seed = c.seed_for(SeedTag::Noise);
    c.noise.validate();
    if (c.snr < 0.0) throw ConfigError("noise.snr must be nonnegative");

    c.motion.rigid_sigma_px = get<double>(tree, "motion.rigid_sigma_px");
    c.motion.line_jitter_sigma_px = get<double>(tree, "motion.line_jitter_sigma_px");
    c.motion.seed = c.seed_for(SeedTag::Motion);
    c.motion.validate();

    c.psf.sigma_fast_px = get<double>(tree, "psf.sigma_fast_px");
    c.psf.sigma_slow_px = get<double>(tree, "psf.sigma_slow_px");
    c.psf.fwhm_fast_um = get<double>(tree, "psf.fwhm_fast_um");
    c.psf.fwhm_slow_um = get<double>(tree, "psf.fwhm_slow_um");
    c.psf.truncation_sigmas = get<double>(tree, "psf.truncation_sigmas");
    (void)c.psf.make(c.grid.pixel_pitch_um);

    c.strategy = strategy_from(tree, "plan.strategy");
    c.lines_per_frame = resolve_lines(tree, c.grid.height_lines);

    auto& s = c.solver;
    s.mode = get<std::string>(tree, "solver.mode");
    if (s.mode != "lagrangian" && s.mode != "constrained") {
        throw ConfigError("solver.mode must be 'lagrangian' or 'constrained'");
    }
    s.lambda = get<double>(tree, "solver.lambda");
    s.lambda_rel = get<double>(tree, "solver.lambda_rel");
    s.preset = get<std::string>(tree, "solver.preset");
    if (!s.preset.empty()) (void)epsilon_preset(s.preset);
    s.epsilon = get<double>(tree, "solver.epsilon");
    s.mu = get<double>(tree, "solver.mu");
    if (s.lambda < 0.0 || s.lambda_rel < 0.0 || s.epsilon < 0.0 || s.mu < 0.0) {
        throw ConfigError("solver weights must be nonnegative");
    }
    s.base = iteration_controls(tree);
    s.base.seed = c.seed_for(SeedTag::Solver);
    s.base.mode = LagrangianMode{1.0};
    s.base.validate();
    s.batch_size_frames = get<std::int64_t>(tree, "solver.batch_size_frames");
    if (s.batch_size_frames < 1) throw ConfigError("solver.batch_size_frames must be at least 1");

    c.median_filter = get<bool>(tree, "evaluate.median_filter");
    const auto window = int_list(tree, "evaluate.median_window");
    if (window.size() != 3) throw ConfigError("evaluate.median_window needs three sizes");
    for (auto w : window) {
        if (w < 1 || w % 2 == 0) throw ConfigError("evaluate.median_window sizes must be odd and positive");
    }
    c.median_window = {window[0], window[1], window[2]};

    auto& ph = c.phase;
    ph.grid = FrameGrid{get<std::int64_t>(tree, "phase.height_lines"), get<std::int64_t>(tree, "phase.width_pixels"),
                        c.grid.pixel_pitch_um, c.grid.frame_rate_hz};
    ph.grid.validate();
    ph.frames = get<std::int64_t>(tree, "phase.frames");
    ph.ranks = int_list(tree, "phase.ranks");
    ph.lines = int_list(tree, "phase.lines");
    ph.trials = get<int>(tree, "phase.trials");
    ph.success_threshold = get<double>(tree, "phase.success_threshold");
    ph.lambda_rel = get<double>(tree, "phase.lambda_rel");
    ph.strategy = strategy_from(tree, "phase.strategy");
    ph.psf.sigma_fast_px = get<double>(tree, "phase.sigma_fast_px");
    ph.psf.sigma_slow_px = get<double>(tree, "phase.sigma_slow_px");
    ph.solver.max_iters = get<int>(tree, "phase.max_iters");
    ph.solver.rel_tol = get<double>(tree, "phase.rel_tol");
    ph.solver.continuation = get<bool>(tree, "phase.continuation");
    ph.solver.mode = LagrangianMode{1.0};
    ph.solver.validate();
    return c;
}

EpsilonPreset epsilon_preset(const std::string& name) {
    struct Row {
        const char* name;
        double eps, speedup;
    };
    static constexpr Row kTable[] = {
        {"10x", 475.0, 10.0},        {"15x", 375.0, 15.0},        {"20x", 325.0, 20.0},
        {"10x-motion", 475.0, 10.0}, {"15x-motion", 375.0, 15.0}, {"20x-motion", 340.0, 20.0},
    };
    for (const auto& r : kTable) {
        if (name == r.name) return {r.eps, r.speedup};
    }
    throw ConfigError("unknown epsilon preset '" + name + "' (expected 10x, 15x, 20x, optionally with -motion)");
}

double scaled_epsilon(const EpsilonPreset& preset, std::int64_t samples) {
    const double lines = std::max(1.0, std::round(kReferenceGrid / preset.speedup));
    const double reference_samples = kReferenceBatchFrames * lines * kReferenceGrid;
    return preset.epsilon_reference * std::sqrt(static_cast<double>(samples) / reference_samples);
}

void cmd_phantom(const RunConfig& c, const Paths& paths) {
    const Scene scene = gen_scene(c.grid, c.cells, c.radius_min_px, c.radius_max_px, c.seed_for(SeedTag::Scene));
    const Matrix traces = gen_traces(c.activity, c.cells, c.frames, c.grid.frame_rate_hz);
    const VideoMatrix clean = render_clean(scene, traces);

    // right factor: K trace rows and the constant background coefficient
    Matrix factor(c.cells + 1, c.frames);
    factor.topRows(c.cells) = traces;
    factor.row(c.cells).setOnes();

    fs::create_directories(paths.out);
    write_container(paths.out / "clean.nora", clean);
    write_container(paths.out / "scene.nora", scene_to_video(scene));
    write_container(paths.out / "traces.nora",
                    VideoMatrix(FrameGrid{c.cells + 1, 1, c.grid.pixel_pitch_um, c.grid.frame_rate_hz}, factor));
    write_traces_csv(paths.out / "traces.csv", traces);
    write_manifest(c, paths.out, "phantom", {"clean.nora", "scene.nora", "traces.nora", "traces.csv"});
}

void cmd_acquire(const RunConfig& c, const Paths& paths) {
    const VideoMatrix clean = read_video(input(paths.clean, paths.out, "clean.nora"));
    if (!(clean.grid() == c.grid)) {
        throw ShapeError("clean video grid " + std::to_string(clean.grid().height_lines) + "x" +
                         std::to_string(clean.grid().width_pixels) + " differs from the configured grid");
    }
    const bool moving = c.motion.rigid_sigma_px > 0.0 || c.motion.line_jitter_sigma_px > 0.0;
    const VideoMatrix scene_video = moving ? apply_motion(clean, c.motion) : clean;

    const SamplingPlan plan =
        generate_plan(c.grid, clean.frames(), c.lines_per_frame, c.strategy, c.seed_for(SeedTag::Plan));
    const ForwardModel model(c.psf.make(c.grid.pixel_pitch_um), plan);
    const MeasurementSet ideal = forward_apply(scene_video, model);

    nlohmann::json acq;
    acq["samples_pixels"] = ideal.data.size();
    acq["samples_lines"] = plan.frames * plan.lines_per_frame;
    acq["lines_per_frame"] = plan.lines_per_frame;
    acq["strategy"] = strategy_name(c.strategy);
    acq["motion"] = moving;
    MeasurementSet measured = ideal;
    if (c.noise_enabled) {
        const double mean = ideal.data.mean();
        NoiseModel noise = c.noise;
        if (c.snr > 0.0) {
            if (!(mean > 0.0)) throw ConfigError("SNR calibration needs a positive mean signal");
            noise = noise_for_snr(mean, c.snr, c.poisson_fraction, c.seed_for(SeedTag::Noise));
            noise.offset = c.noise.offset;
        }
        const auto noisy = apply_noise(ideal, noise);
        measured = noisy.measurements;
        // RMS per-entry standard deviation over the clean measurements
        double var = 0.0;
        for (Eigen::Index i = 0; i < ideal.data.size(); ++i) {
            var += std::pow(noise_sigma_at(noise, ideal.data.data()[i]), 2);
        }
        const Matrix error = measured.data.array() - ideal.data.array() - noise.offset;
        acq["photon_gain"] = std::isinf(noise.photon_gain) ? nlohmann::json("inf") : nlohmann::json(noise.photon_gain);
        acq["gaussian_sigma"] = noise.gaussian_sigma;
        acq["offset"] = noise.offset;
        acq["noise_level"] = std::sqrt(var / static_cast<double>(ideal.data.size()));
        acq["noise_frobenius"] = error.norm();
        acq["clamped_entries"] = noisy.clamped_entries;
    } else {
        acq["noise_level"] = 0.0;
        acq["noise_frobenius"] = 0.0;
        acq["clamped_entries"] = 0;
    }

    fs::create_directories(paths.out);
    write_container(paths.out / "measurements.nora", measured);
    write_container(paths.out / "plan.nora", plan);
    write_json(paths.out / "acquisition.json", acq);
    write_manifest(c, paths.out, "acquire", {"measurements.nora", "plan.nora", "acquisition.json"});
}

void cmd_reconstruct(const RunConfig& c, const Paths& paths, std::optional<double> lambda_flag) {
    const MeasurementSet y = read_measurements(input(paths.measurements, paths.out, "measurements.nora"));
    if (!(y.plan.grid == c.grid)) throw ShapeError("measurement grid differs from the configured grid");
    const Psf psf = c.psf.make(c.grid.pixel_pitch_um);
    const auto& s = c.solver;

    // precedence: explicit lambda, then preset, then solver.mode
    std::string mode = s.mode;
    double lambda = lambda_flag.value_or(s.lambda);
    if (lambda_flag && !(*lambda_flag > 0.0)) throw ConfigError("--lambda must be positive");
    if (lambda > 0.0) {
        mode = "lagrangian";
    } else if (!s.preset.empty()) {
        mode = "constrained";
    }
    if (mode == "lagrangian" && !(lambda > 0.0) && !(s.lambda_rel > 0.0)) {
        throw ConfigError("lagrangian mode needs solver.lambda, solver.lambda_rel or --lambda");
    }
    if (mode == "constrained" && s.preset.empty() && !(s.epsilon > 0.0)) {
        throw ConfigError("constrained mode needs solver.epsilon or solver.preset");
    }

    auto configure = [&](SolverConfig& cfg, const MeasurementSet& part, const ForwardModel& model) {
        if (mode == "lagrangian") {
            cfg.mode = LagrangianMode{lambda > 0.0 ? lambda : s.lambda_rel * lambda_zero_threshold(part, model)};
        } else {
            const double eps = s.preset.empty() ? s.epsilon
                                                : scaled_epsilon(epsilon_preset(s.preset), part.data.size());
            cfg.mode = ConstrainedMode{eps, s.mu};
        }
    };
    const BatchedSolution sol = solve_in_batches(y, psf, s.base, s.batch_size_frames, c.threads, configure);

    nlohmann::json report;
    report["mode"] = mode;
    if (!s.preset.empty() && mode == "constrained") report["preset"] = s.preset;
    report["batch_size_frames"] = s.batch_size_frames;
    auto& batches = report["batches"] = nlohmann::json::array();
    for (const auto& r : sol.reports) batches.push_back(to_json(r));

    fs::create_directories(paths.out);
    write_container(paths.out / "recon.nora", sol.estimate);
    write_json(paths.out / "reconstruct_report.json", report);
    write_manifest(c, paths.out, "reconstruct", {"recon.nora", "reconstruct_report.json"});
}

void cmd_evaluate(const RunConfig& c, const Paths& paths) {
    const VideoMatrix recon = read_video(input(paths.recon, paths.out, "recon.nora"));
    const VideoMatrix clean = read_video(input(paths.clean, paths.out, "clean.nora"));
    const VideoMatrix scene_video = read_video(input(paths.scene, paths.out, "scene.nora"));
    const VideoMatrix factor = read_video(input(paths.traces, paths.out, "traces.nora"));
    if (!(recon.grid() == clean.grid()) || recon.frames() != clean.frames()) {
        throw ShapeError("reconstruction and clean video differ in shape");
    }
    const Scene scene = scene_from_video(scene_video, c.seed_for(SeedTag::Scene));
    if (!(scene.grid == clean.grid())) throw ShapeError("scene grid differs from the clean video");
    if (factor.grid().pixels() != scene.cells() + 1 || factor.frames() != clean.frames()) {
        throw ShapeError("trace file does not match the scene and video");
    }

    nlohmann::json acq = nlohmann::json::object();
    const fs::path acq_path = paths.acquisition ? *paths.acquisition : paths.out / "acquisition.json";
    if (fs::exists(acq_path)) {
        std::ifstream in(acq_path);
        try {
            acq = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("cannot parse " + acq_path.string() + ": " + e.what());
        }
    } else if (paths.acquisition) {
        throw IoError("input file not found: " + acq_path.string());
    }

    const auto N = clean.grid().pixels(), T = clean.frames();
    MetricsReport m;
    m.psnr_db = psnr(recon.data(), clean.data());
    const VideoMatrix filtered = c.median_filter ? median_filter_3d(recon, c.median_window) : recon;
    const TraceSet est = pals_traces(filtered, scene);
    const TraceSet truth = make_trace_set(factor.data().topRows(scene.cells()), clean.grid().frame_rate_hz);
    if (scene.cells() > 0) {
        const auto corr = trace_correlations(est, truth);
        m.per_cell_correlation = corr.per_cell;
        m.excluded_cells = corr.excluded;
        m.correlation_histogram = corr.histogram;
        if (corr.excluded < scene.cells()) {
            m.mean_correlation = corr.mean;
            m.median_correlation = corr.median;
        }
    }

    const Psf psf = c.psf.make(c.grid.pixel_pitch_um);
    const auto rank = std::min<std::int64_t>(scene.cells() + 1, numerical_rank(clean.data()));
    if (rank >= 1) {
        m.mu_b2 = coherence_mu_b(clean, psf, rank);
        m.mu_b2_unit_energy = coherence_mu_b(clean, psf, rank, KernelNormalization::UnitEnergy);
    }
    m.eta = psf.eta;
    m.noise_level = acq.value("noise_level", 0.0);
    const auto lines = acq.value("lines_per_frame", c.lines_per_frame);
    m.samples_pixels = acq.value("samples_pixels", T * lines * c.grid.width_pixels);
    m.samples_lines = acq.value("samples_lines", T * lines);
    const auto bound = [&](std::int64_t samples) {
        return theorem_bounds(static_cast<double>(N), static_cast<double>(T), static_cast<double>(samples),
                              static_cast<double>(std::max<std::int64_t>(rank, 1)), m.mu_b2, m.noise_level)
            .error_bound;
    };
    m.theorem_error_bound = bound(m.samples_pixels);
    m.theorem_error_bound_lines = bound(m.samples_lines);
    m.measured_error = (recon.data() - clean.data()).norm();
    const double clean_norm = clean.data().norm();
    m.relative_error = clean_norm > 0.0 ? m.measured_error / clean_norm : 0.0;

    nlohmann::json j = to_json(m);
    j["median_filter"] = c.median_filter ? nlohmann::json(c.median_window) : nlohmann::json(nullptr);
    j["pals_regularized"] = est.regularized;
    j["coherence_rank"] = rank;
    fs::create_directories(paths.out);
    write_json(paths.out / "metrics.json", j);
    write_manifest(c, paths.out, "evaluate", {"metrics.json"});
}

void cmd_phase_diagram(const RunConfig& c, const Paths& paths) {
    const auto& ph = c.phase;
    PhaseDiagramConfig cfg;
    cfg.grid = ph.grid;
    cfg.frames = ph.frames;
    cfg.psf = ph.psf.make(ph.grid.pixel_pitch_um);
    cfg.strategy = ph.strategy;
    cfg.solver = ph.solver;
    cfg.lambda_rel = ph.lambda_rel;
    cfg.ranks = ph.ranks;
    cfg.lines = ph.lines;
    cfg.trials = ph.trials;
    cfg.success_threshold = ph.success_threshold;
    cfg.seed = c.seed_for(SeedTag::Phase);
    cfg.threads = c.threads;
    cfg.checkpoint_dir = paths.out / "phase_checkpoints";
    const PhaseDiagramResult res = phase_diagram(cfg);

    nlohmann::json summary;
    auto& cells = summary["cells"] = nlohmann::json::array();
    for (const auto& cell : res.cells) cells.push_back(to_json(cell));
    auto& boundary = summary["boundary"] = nlohmann::json::object();
    for (auto r : ph.ranks) {
        const auto b = res.boundary(r, 0.9);
        boundary[std::to_string(r)] = b ? nlohmann::json(*b) : nlohmann::json(nullptr);
    }
    summary["success_threshold"] = res.success_threshold;
    summary["seed"] = res.seed;
    write_file_atomic(paths.out / "phase_diagram.csv", phase_diagram_csv(res));
    write_json(paths.out / "phase_summary.json", summary);
    write_manifest(c, paths.out, "phase-diagram", {"phase_diagram.csv", "phase_summary.json"});
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Compressive raster-scan video acquisition and low-rank recovery"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::vector<std::string> sets;
    std::optional<double> lambda;
    std::string clean, scene, traces, measurements, recon, acquisition;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key-value config file");
        sub->add_option("--set", sets, "override a config key, e.g. --set grid.frames=64");
        sub->add_option("--out", out_dir, "output directory")->required();
    };
    auto* phantom = app.add_subcommand("phantom", "generate a synthetic clean video, scene and traces");
    auto* acquire = app.add_subcommand("acquire", "blur, subsample and add noise to a clean video");
    auto* reconstruct = app.add_subcommand("reconstruct", "recover the video from measurements");
    auto* evaluate = app.add_subcommand("evaluate", "score a reconstruction against the ground truth");
    auto* phase = app.add_subcommand("phase-diagram", "empirical recovery boundary over rank and lines");
    for (auto* sub : {phantom, acquire, reconstruct, evaluate, phase}) common(sub);
    acquire->add_option("--clean", clean, "clean video (default <out>/clean.nora)");
    reconstruct->add_option("--measurements", measurements, "measurements (default <out>/measurements.nora)");
    reconstruct->add_option("--lambda", lambda, "Lagrangian weight; overrides presets");
    evaluate->add_option("--recon", recon, "reconstruction (default <out>/recon.nora)");
    evaluate->add_option("--clean", clean, "clean video (default <out>/clean.nora)");
    evaluate->add_option("--scene", scene, "scene file (default <out>/scene.nora)");
    evaluate->add_option("--traces", traces, "trace file (default <out>/traces.nora)");
    evaluate->add_option("--acquisition", acquisition, "acquisition record (default <out>/acquisition.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    auto opt = [](const std::string& s) { return s.empty() ? std::optional<fs::path>{} : fs::path(s); };
    try {
        const RunConfig config = load_run_config(opt(config_path), sets);
        Paths paths;
        paths.out = out_dir;
        paths.clean = opt(clean);
        paths.scene = opt(scene);
        paths.traces = opt(traces);
        paths.measurements = opt(measurements);
        paths.recon = opt(recon);
        paths.acquisition = opt(acquisition);
        if (phantom->parsed()) cmd_phantom(config, paths);
        if (acquire->parsed()) cmd_acquire(config, paths);
        if (reconstruct->parsed()) cmd_reconstruct(config, paths, lambda);
        if (evaluate->parsed()) cmd_evaluate(config, paths);
        if (phase->parsed()) cmd_phase_diagram(config, paths);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ShapeError& e) {
        err << "shape error: " << e.what() << '\n';
        return kConfigError;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kIoError;
    } catch (const fs::filesystem_error& e) {
        err << "I/O error: " << e.what() << '\n';
        return kIoError;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kNumericalError;
    }
    return kOk;
}

}  // namespace nora::cli
