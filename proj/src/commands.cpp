#include "rectflow/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "rectflow/csv_io.hpp"
#include "rectflow/errors.hpp"
#include "rectflow/model.hpp"
#include "rectflow/sampler.hpp"
#include "rectflow/training.hpp"
#include "rectflow/verify.hpp"

namespace rectflow {

using nlohmann::json;

namespace {

constexpr std::uint64_t kReferenceStream = 0xDA7A;
constexpr std::uint64_t kProjectionStream = 0x5E7;
constexpr std::uint64_t kBankStream = 0xBA4C;
constexpr std::uint64_t kVerifyStream = 0x7E51;

constexpr double kSlopeLo = 0.7;
constexpr double kSlopeHi = 1.3;
constexpr double kEqualityTolerance = 1e-12;
constexpr double kQuadratureTolerance = 1e-10;
constexpr std::size_t kQuadratureIntervals = 4096;
constexpr double kRegionPad = 0.5;

void write_file(const std::filesystem::path& path, const std::string& contents)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out << contents;
    if (!out) throw InputError("failed writing " + path.string());
}

std::string dump_json(const json& doc)
{
    return doc.dump(2) + "\n";
}

MlpVelocityField load_model(const RunConfig& config, const ConditionalDataset& dataset)
{
    Checkpoint ckpt = load_checkpoint_file(config.checkpoint_path());
    const auto& arch = ckpt.field.architecture();
    if (arch.dim != dataset.dim() || arch.num_labels != dataset.num_labels()) {
        throw ConfigError("checkpoint " + config.checkpoint_path().string() + " was trained for dim " +
                          std::to_string(arch.dim) + " with " + std::to_string(arch.num_labels) +
                          " labels; the dataset has dim " + std::to_string(dataset.dim()) + " with " +
                          std::to_string(dataset.num_labels()) + " labels");
    }
    return std::move(ckpt.field);
}

std::vector<Vec> reference_data(const ConditionalDataset& dataset, std::span<const Condition> labels, std::size_t n,
                                std::uint64_t seed)
{
    const RngStream root(seed, kReferenceStream);
    std::vector<Vec> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        RngStream rng = root.split(i);
        out.push_back(dataset.sample_data(labels[i % labels.size()], rng));
    }
    return out;
}

std::size_t nearest_index(const std::vector<double>& times, double t)
{
    std::size_t best = 0;
    for (std::size_t k = 1; k < times.size(); ++k) {
        if (std::abs(times[k] - t) < std::abs(times[best] - t)) best = k;
    }
    return best;
}

std::string label_text(const LabelSpec& spec)
{
    if (spec.all) return "all";
    return to_string(spec.single);
}

SampleResult sample_named(const VelocityField& field, const GuidanceStrategy& strategy,
                          std::span<const Condition> labels, std::size_t n_chains, const SamplerConfig& sampler)
{
    try {
        return sample(field, strategy, labels, n_chains, sampler);
    } catch (const ChainFailure& e) {
        throw NumericError(strategy_label(strategy) + ": " + e.what(), e.step());
    }
}

json bound_report_json(const BoundReport& r)
{
    return json{{"dt", r.dt},
                {"max_lhs", r.max_lhs},
                {"max_ratio", r.max_ratio},
                {"violations", r.violations},
                {"violation_rate", r.violation_rate},
                {"n", r.lhs.size()}};
}

} // namespace

RunConfig load_config(const std::filesystem::path& path, const CliOverrides& overrides)
{
    RunConfig config = load_run_config(path);
    if (overrides.seed) {
        config.seed = *overrides.seed;
        config.train.seed = *overrides.seed;
        config.sampling.sampler.seed = *overrides.seed;
    }
    if (overrides.output_dir) config.output_dir = *overrides.output_dir;
    return config;
}

CompareReport run_compare(const VelocityField& field, const ConditionalDataset& dataset, const RunConfig& config)
{
    const auto& spec = config.compare;
    const auto strategies = spec.strategies.empty() ? config.guidance : spec.strategies;
    if (strategies.size() < 2) throw ConfigError("compare needs at least two strategies or a scale grid");
    const auto labels = config.sampling.label.resolve(dataset);
    std::vector<std::size_t> step_counts = spec.n_steps_sweep;
    if (step_counts.empty()) step_counts.push_back(config.sampling.sampler.n_steps);

    const auto reference = reference_data(dataset, labels, spec.n_reference, config.seed);
    const RngStream projections(config.seed, kProjectionStream);
    std::map<std::pair<std::size_t, double>, std::vector<Vec>> banks;

    CompareReport report;
    for (std::size_t n_steps : step_counts) {
        SamplerConfig sampler = config.sampling.sampler;
        sampler.n_steps = n_steps;
        if (sampler.time_grid.size() != n_steps + 1) sampler.time_grid.clear();
        sampler.record_trajectory = true;
        sampler.record_reference = false;
        sampler.seed = config.seed;

        for (const auto& strategy : strategies) {
            const SampleResult result = sample_named(field, strategy, labels, config.sampling.n_chains, sampler);
            CompareRow row;
            row.strategy = strategy_label(strategy);
            row.label = label_text(config.sampling.label);
            row.n_steps = n_steps;
            row.nfe_total = result.field_evaluations;
            row.sw_to_data = sliced_wasserstein(result.final_points, reference, spec.n_projections, projections);
            row.energy_distance = energy_distance(result.final_points, reference);

            double sum = 0.0;
            std::size_t count = 0;
            for (const auto& traj : result.trajectories) {
                for (const auto& d : traj.diagnostics) {
                    sum += d.deviation_from_conditional;
                    row.max_deviation = std::max(row.max_deviation, d.deviation_from_conditional);
                    ++count;
                }
            }
            row.mean_deviation = count > 0 ? sum / static_cast<double>(count) : 0.0;

            for (double t : spec.manifold_times) {
                std::vector<double> distances;
                double grid_t = t;
                std::map<std::size_t, std::vector<Vec>> by_label;
                for (std::size_t i = 0; i < result.trajectories.size(); ++i) {
                    const auto& traj = result.trajectories[i];
                    const std::size_t k = nearest_index(traj.times, t);
                    grid_t = traj.times[k];
                    by_label[result.chain_ids[i] % labels.size()].push_back(traj.states[k]);
                }
                for (const auto& [label_index, states] : by_label) {
                    auto key = std::make_pair(label_index, grid_t);
                    auto it = banks.find(key);
                    if (it == banks.end()) {
                        const RngStream bank_rng = RngStream(config.seed, kBankStream).split(label_index);
                        it = banks
                                 .emplace(key, path_bank(dataset, labels[label_index], grid_t, spec.bank_size,
                                                         bank_rng.split(static_cast<std::uint64_t>(
                                                             std::llround(grid_t * 1e6)))))
                                 .first;
                    }
                    const auto d = nearest_distances(states, it->second);
                    distances.insert(distances.end(), d.begin(), d.end());
                }
                row.manifold_p95.emplace_back(grid_t, distances.empty() ? 0.0 : quantile(distances, 0.95));
            }
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

json compare_report_json(const CompareReport& report, const RunConfig& config)
{
    std::map<std::size_t, json> blocks;
    for (const auto& row : report.rows) {
        json manifold = json::object();
        for (const auto& [t, p95] : row.manifold_p95) manifold[format_number(t)] = p95;
        json entry{{"strategy", row.strategy},
                   {"label", row.label},
                   {"nfe_total", row.nfe_total},
                   {"sw_to_data", row.sw_to_data},
                   {"energy_distance", row.energy_distance},
                   {"mean_deviation", row.mean_deviation},
                   {"max_deviation", row.max_deviation},
                   {"manifold_p95", manifold}};
        auto& block = blocks[row.n_steps];
        if (block.is_null()) block = json{{"n_steps", row.n_steps}, {"rows", json::array()}};
        block["rows"].push_back(std::move(entry));
    }
    json out{{"seed", config.seed}, {"n_chains", config.sampling.n_chains}, {"blocks", json::array()}};
    for (auto& [n, block] : blocks) out["blocks"].push_back(std::move(block));
    return out;
}

json run_verify(const VelocityField& field, const ConditionalDataset& dataset, const RunConfig& config,
                std::vector<DeviationPoint>& deviation_curve)
{
    const auto& spec = config.verify;
    const auto labels = config.sampling.label.resolve(dataset);
    const Condition y = labels.front();
    const RngStream root(config.seed, kVerifyStream);

    GuidanceStrategy rect = guidance::RectCfgPP(1.0, 1.0);
    for (const auto& s : config.guidance) {
        if (std::holds_alternative<guidance::RectCfgPP>(s)) {
            rect = s;
            break;
        }
    }

    SamplerConfig sampler = config.sampling.sampler;
    sampler.seed = config.seed;
    sampler.record_trajectory = true;
    sampler.record_reference = true;
    sampler.integrator = Integrator::Euler;
    const std::vector<Condition> single{y};
    const SampleResult run = sample_named(field, rect, single, config.sampling.n_chains, sampler);

    const auto grid = sampler.grid();
    std::vector<double> mid_times;
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) mid_times.push_back(grid[k] - 0.5 * (grid[k] - grid[k + 1]));
    std::vector<double> all_times = grid;
    all_times.insert(all_times.end(), mid_times.begin(), mid_times.end());

    // every state must admit a half step back for the largest dt used
    double t_min = spec.drift_dt;
    for (double dt : spec.dts) t_min = std::max(t_min, dt);
    const auto on_path = draw_on_path_states(dataset, y, spec.n_states, t_min, root.split(1));
    std::vector<Vec> region_points;
    for (const auto& traj : run.trajectories) {
        region_points.insert(region_points.end(), traj.states.begin(), traj.states.end());
    }
    for (const auto& p : on_path) region_points.push_back(p.x_t);
    const Box region = Box::around(region_points, kRegionPad);

    BoundEstimates estimates;
    estimates.region = region;
    estimates.n_probes = spec.n_probes;
    estimates.seed = config.seed;
    estimates.lipschitz = estimate_lipschitz(field, region, all_times, y, spec.n_pairs, root.split(2));
    const GuidanceBounds bounds =
        estimate_guidance_bounds(field, region, all_times, y, spec.n_probes, root.split(3), spec.refine_starts);
    estimates.guidance_bound = bounds.guidance_bound;
    estimates.velocity_bound = bounds.velocity_bound;

    const BoundReport drift = check_guidance_drift(field, on_path, y, spec.drift_dt, estimates);
    const ScalingReport scaling = guidance_drift_scaling(field, on_path, y, spec.dts);
    const bool slope_pass = scaling.slope_literal >= kSlopeLo && scaling.slope_literal <= kSlopeHi;

    const BoundReport steps = check_step_deviation(run.trajectories, estimates.guidance_bound);
    const bool step_pass = steps.max_equality_rel_error <= kEqualityTolerance && steps.violations == 0;

    const auto& schedule = std::get<guidance::RectCfgPP>(rect).schedule;
    const double analytic = schedule.integral();
    const double numeric = integrate_schedule(schedule, kQuadratureIntervals);
    const bool quad_pass = std::abs(analytic - numeric) <= kQuadratureTolerance;

    // deviation curve of the primary strategy
    SamplerConfig dev_sampler = sampler;
    dev_sampler.record_reference = false;
    const SampleResult primary =
        sample_named(field, config.primary_guidance(), single, config.sampling.n_chains, dev_sampler);
    deviation_curve = distributional_deviation(primary.trajectories, dataset, y, spec.deviation_times,
                                               spec.n_projections, root.split(4));

    json drift_json = bound_report_json(drift);
    drift_json["scaling"] = json{{"dts", scaling.dts},
                                 {"max_literal", scaling.max_literal},
                                 {"max_common_time", scaling.max_common_time},
                                 {"slope_literal", scaling.slope_literal},
                                 {"slope_common_time", scaling.slope_common_time},
                                 {"slope_range", {kSlopeLo, kSlopeHi}},
                                 {"pass", slope_pass}};
    json step_json = bound_report_json(steps);
    step_json["strategy"] = strategy_label(rect);
    step_json["max_equality_rel_error"] = steps.max_equality_rel_error;
    step_json["max_state_abs_error"] = steps.max_state_abs_error;
    step_json["state_checks"] = steps.state_checks;
    step_json["equality_tolerance"] = kEqualityTolerance;
    step_json["pass"] = step_pass;

    json deviation = json::array();
    for (const auto& p : deviation_curve) {
        deviation.push_back(json{{"t", p.t}, {"sw", p.sliced_w}, {"kl", p.kl ? json(*p.kl) : json(nullptr)}});
    }

    return json{{"seed", config.seed},
                {"label", to_string(y)},
                {"estimates",
                 {{"lipschitz", estimates.lipschitz},
                  {"guidance_bound", estimates.guidance_bound},
                  {"velocity_bound", estimates.velocity_bound},
                  {"n_probes", spec.n_probes},
                  {"n_pairs", spec.n_pairs},
                  {"region_lo", std::vector<double>(region.lo.values().begin(), region.lo.values().end())},
                  {"region_hi", std::vector<double>(region.hi.values().begin(), region.hi.values().end())}}},
                {"guidance_drift", drift_json},
                {"step_deviation", step_json},
                {"schedule_integral",
                 {{"analytic", analytic},
                  {"numeric", numeric},
                  {"intervals", kQuadratureIntervals},
                  {"tolerance", kQuadratureTolerance},
                  {"pass", quad_pass}}},
                {"deviation_curve", deviation},
                {"pass", slope_pass && step_pass && quad_pass}};
}

void cmd_train(const RunConfig& config, std::ostream& log)
{
    const ConditionalDataset dataset = config.dataset();
    MlpVelocityField field = MlpVelocityField::initialized(config.model, config.seed);
    TrainReport report;
    try {
        report = train(field, dataset, config.train);
    } catch (const TrainingAborted& e) {
        std::ostringstream csv;
        write_loss_csv(csv, e.report());
        write_file(config.output_dir / "loss.csv", csv.str());
        throw;
    }
    const TrainingMetadata metadata{config.train.epochs, report.final_loss().value_or(0.0), config.seed};
    std::filesystem::create_directories(config.output_dir);
    if (config.checkpoint_path().has_parent_path()) {
        std::filesystem::create_directories(config.checkpoint_path().parent_path());
    }
    save_checkpoint_file(config.checkpoint_path(), field, metadata);
    std::ostringstream csv;
    write_loss_csv(csv, report);
    write_file(config.output_dir / "loss.csv", csv.str());

    log << "trained " << config.train.epochs << " epochs";
    if (auto loss = report.final_loss()) log << ", final loss " << format_number(*loss);
    if (!report.oracle_rmse_curve.empty()) {
        log << ", oracle rmse " << format_number(report.oracle_rmse_curve.back().value);
    }
    log << " -> " << config.checkpoint_path().string() << "\n";
}

void cmd_sample(const RunConfig& config, std::ostream& log)
{
    const ConditionalDataset dataset = config.dataset();
    const MlpVelocityField field = load_model(config, dataset);
    const auto labels = config.sampling.label.resolve(dataset);
    const auto strategy = config.primary_guidance();
    const SampleResult result = sample_named(field, strategy, labels, config.sampling.n_chains, config.sampling.sampler);

    std::ostringstream points;
    write_final_points_csv(points, result);
    write_file(config.output_dir / "final_points.csv", points.str());
    if (config.sampling.sampler.record_trajectory) {
        std::ostringstream traj;
        write_trajectory_csv(traj, result);
        write_file(config.output_dir / "trajectory.csv", traj.str());
    }
    log << "sampled " << result.final_points.size() << " chains with " << strategy_label(strategy) << ", "
        << result.field_evaluations << " field evaluations";
    if (result.failed_chains > 0) log << ", " << result.failed_chains << " failed";
    log << "\n";
}

void cmd_compare(const RunConfig& config, std::ostream& log)
{
    const ConditionalDataset dataset = config.dataset();
    const MlpVelocityField field = load_model(config, dataset);
    const CompareReport report = run_compare(field, dataset, config);
    write_file(config.output_dir / "compare_report.json", dump_json(compare_report_json(report, config)));

    std::ostringstream csv;
    csv << "n_steps,strategy,label,nfe_total,sw_to_data,energy_distance,mean_deviation,max_deviation";
    const auto& times = config.compare.manifold_times;
    for (double t : times) csv << ",manifold_p95_t" << format_number(t);
    csv << '\n';
    for (const auto& row : report.rows) {
        csv << row.n_steps << ',' << csv_field(row.strategy) << ',' << csv_field(row.label) << ',' << row.nfe_total
            << ',' << format_number(row.sw_to_data) << ',' << format_number(row.energy_distance) << ','
            << format_number(row.mean_deviation) << ',' << format_number(row.max_deviation);
        for (const auto& [t, p95] : row.manifold_p95) csv << ',' << format_number(p95);
        csv << '\n';
    }
    write_file(config.output_dir / "compare_metrics.csv", csv.str());
    log << "compared " << report.rows.size() << " runs -> " << (config.output_dir / "compare_report.json").string()
        << "\n";
}

void cmd_verify(const RunConfig& config, std::ostream& log)
{
    const ConditionalDataset dataset = config.dataset();
    const MlpVelocityField field = load_model(config, dataset);
    std::vector<DeviationPoint> curve;
    const json report = run_verify(field, dataset, config, curve);
    write_file(config.output_dir / "verify_report.json", dump_json(report));
    std::ostringstream csv;
    write_deviation_csv(csv, curve);
    write_file(config.output_dir / "deviation_curve.csv", csv.str());
    log << "verify " << (report.at("pass").get<bool>() ? "pass" : "FAIL") << ": drift slope "
        << format_number(report.at("guidance_drift").at("scaling").at("slope_literal").get<double>()) << ", step deviation max rel error "
        << format_number(report.at("step_deviation").at("max_equality_rel_error").get<double>()) << "\n";
}

void cmd_plot(const std::filesystem::path& trajectory_csv, const PlotOptions& options,
              const std::filesystem::path& out, std::ostream& log)
{
    std::ifstream in(trajectory_csv, std::ios::binary);
    if (!in) throw InputError("cannot open " + trajectory_csv.string());
    const TrajectoryTable table = read_trajectory_csv(in);
    write_file(out, render_trajectory_svg(table, options));
    log << "wrote " << out.string() << "\n";
}

namespace {

std::vector<double> parse_number_list(const std::string& text, const char* what)
{
    std::vector<double> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw ConfigError(std::string("bad ") + what + " \"" + text + "\"");
        }
    }
    return values;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Guided rectified-flow sampling on toy distributions"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("config", config_path, "JSON run config")->required();
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--output-dir", output_dir, "override the output directory");
    };
    CLI::App* train_cmd = app.add_subcommand("train", "train a velocity model");
    CLI::App* sample_cmd = app.add_subcommand("sample", "sample with the configured guidance");
    CLI::App* compare_cmd = app.add_subcommand("compare", "compare guidance strategies");
    CLI::App* verify_cmd = app.add_subcommand("verify", "run the bound and deviation checks");
    for (CLI::App* sub : {train_cmd, sample_cmd, compare_cmd, verify_cmd}) add_common(sub);

    CLI::App* plot_cmd = app.add_subcommand("plot", "render a trajectory CSV as SVG");
    std::string csv_path;
    std::string svg_path = "trajectory.svg";
    std::string panels_text;
    std::vector<std::string> stars_text;
    bool paths = false;
    plot_cmd->add_option("trajectory", csv_path, "trajectory CSV")->required();
    plot_cmd->add_option("--out", svg_path, "output SVG path");
    plot_cmd->add_option("--panels", panels_text, "comma-separated steps to draw");
    plot_cmd->add_flag("--paths", paths, "draw chain paths");
    plot_cmd->add_option("--star", stars_text, "target marker x,y (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitInput;
    }

    try {
        if (plot_cmd->parsed()) {
            PlotOptions options;
            options.paths = paths;
            for (double step : parse_number_list(panels_text, "--panels")) {
                if (step < 0.0 || step != std::floor(step)) throw ConfigError("--panels takes step indices");
                options.panels.push_back(static_cast<std::size_t>(step));
            }
            for (const auto& s : stars_text) options.stars.emplace_back(parse_number_list(s, "--star"));
            cmd_plot(csv_path, options, svg_path, out);
            return kExitOk;
        }
        CliOverrides overrides;
        overrides.seed = seed;
        if (output_dir) overrides.output_dir = *output_dir;
        const RunConfig config = load_config(config_path, overrides);
        if (train_cmd->parsed()) cmd_train(config, out);
        if (sample_cmd->parsed()) cmd_sample(config, out);
        if (compare_cmd->parsed()) cmd_compare(config, out);
        if (verify_cmd->parsed()) cmd_verify(config, out);
        return kExitOk;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
}

} // namespace rectflow
