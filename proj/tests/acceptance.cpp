// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "rectflow/commands.hpp"
#include "rectflow/csv_io.hpp"
#include "rectflow/svg_plot.hpp"
#include "rectflow/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

namespace {

using namespace rectflow;
using nlohmann::json;

// Pinned tolerances and budgets.
constexpr double kLatticeTolerance = 0.0;
constexpr double kEqualityRelTolerance = 1e-12;
constexpr std::size_t kMinProbes = 10000;
constexpr double kSlopeLo = 0.7;
constexpr double kSlopeHi = 1.3;
constexpr double kOracleRmseMax = 0.15;
constexpr double kEnergyFactor = 3.0;
constexpr double kRectSpreadMax = 1.5;
constexpr double kCfgBlowupMin = 3.0;
constexpr double kLowNfeMargin = 0.10;
constexpr double kFdTolerance = 1e-5;
constexpr double kEnergyOracleTolerance = 1e-12;

constexpr double kBudget1 = 10.0;
constexpr double kBudget2 = 30.0;
constexpr double kBudget3 = 120.0;
constexpr double kBudget4 = 300.0;
constexpr double kBudget5 = 120.0;
constexpr double kBudget6 = 180.0;
constexpr double kBudget7 = 60.0;
constexpr double kBudget8 = 120.0;
constexpr double kBudget9 = 60.0;

constexpr std::uint64_t kSeed = 1;

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, double budget, const std::function<Outcome()>& body)
{
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(start);
    const bool in_budget = budget <= 0.0 || secs < budget;
    const bool pass = o.pass && in_budget;
    if (!pass) ++failures;
    char timing[64];
    std::snprintf(timing, sizeof timing, " (%.1fs", secs);
    std::string t = timing;
    if (budget > 0.0) {
        std::snprintf(timing, sizeof timing, ", budget %.0fs", budget);
        t += timing;
    }
    t += ")";
    std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << o.detail << t << std::endl;
}

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

const char* kMixtureConfig = R"({
  "seed": 1,
  "dataset": {"kind": "gaussian_mixture", "num_labels": 8, "radius": 4.0, "sigma_data": 0.3},
  "model": {"hidden": [64, 64, 64], "embed_dim": 8},
  "train": {"epochs": 4000, "batch_size": 4096, "learning_rate": 0.002, "p_uncond": 0.1, "eval_every": 0},
  "sampler": {"n_steps": 28, "n_chains": 1000, "label": "all"},
  "compare": {
    "strategies": [
      {"name": "rect_cfgpp", "lambda_max": [0.2, 0.4, 0.6, 0.8, 1.0, 1.2]},
      {"name": "cfg", "omega": [1.5, 3.0, 10.0]},
      {"name": "rect_cfgpp", "lambda_max": 0.5}
    ],
    "nfe": [5, 28],
    "n_reference": 5000,
    "n_projections": 128,
    "manifold_times": [0.75, 0.5, 0.25],
    "bank_size": 20000
  }
})";

std::vector<Condition> round_robin(std::size_t num_labels, std::size_t n)
{
    std::vector<Condition> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(Condition::label(static_cast<std::int64_t>(i % num_labels)));
    return out;
}

std::vector<Vec> draw_data(const ConditionalDataset& ds, std::size_t n, std::uint64_t stream)
{
    const RngStream root(kSeed, stream);
    std::vector<Vec> out;
    for (std::size_t i = 0; i < n; ++i) {
        RngStream rng = root.split(i);
        out.push_back(ds.sample_data(Condition::label(static_cast<std::int64_t>(i % ds.num_labels())), rng));
    }
    return out;
}

// Plain double loop, no shared code with the library implementation.
double brute_energy(const std::vector<Vec>& a, const std::vector<Vec>& b)
{
    auto mean_dist = [](const std::vector<Vec>& p, const std::vector<Vec>& q) {
        long double s = 0.0L;
        for (const Vec& u : p) {
            for (const Vec& v : q) {
                long double d2 = 0.0L;
                for (std::size_t k = 0; k < u.size(); ++k) {
                    const long double d = static_cast<long double>(u[k]) - v[k];
                    d2 += d * d;
                }
                s += std::sqrt(d2);
            }
        }
        return static_cast<double>(s / (static_cast<long double>(p.size()) * q.size()));
    };
    return 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
}

const CompareRow& find_row(const CompareReport& report, const std::string& strategy, std::size_t n_steps)
{
    for (const auto& row : report.rows) {
        if (row.strategy == strategy && row.n_steps == n_steps) return row;
    }
    throw std::runtime_error("no compare row for " + strategy);
}

} // namespace

int main()
{
    std::cout << "training models..." << std::endl;
    const ConditionalDataset gaussian = ConditionalDataset::gaussian_single(Vec{2.0, 0.0}, 0.5);
    TrainConfig gauss_train;
    gauss_train.epochs = 2000;
    gauss_train.batch_size = 256;
    gauss_train.seed = kSeed;
    gauss_train.eval_every = 0;
    MlpArchitecture gauss_arch;
    MlpVelocityField gauss_model = MlpVelocityField::initialized(gauss_arch, kSeed);
    const auto gauss_start = std::chrono::steady_clock::now();
    train(gauss_model, gaussian, gauss_train);
    const double gauss_train_secs = seconds_since(gauss_start);

    const RunConfig config = parse_run_config(json::parse(kMixtureConfig));
    const ConditionalDataset mixture = config.dataset();
    MlpVelocityField mix_model = MlpVelocityField::initialized(config.model, kSeed);
    train(mix_model, mixture, config.train);
    const std::size_t k = mixture.num_labels();

    report(1, kBudget1, [&] {
        const auto labels = round_robin(k, 1000);
        SamplerConfig sc;
        sc.n_steps = 28;
        sc.seed = kSeed;
        const auto none = sample(mix_model, guidance::None{}, labels, 1000, sc);
        const auto cfg1 = sample(mix_model, guidance::Cfg{1.0}, labels, 1000, sc);
        const auto rect0 = sample(mix_model, guidance::RectCfgPP(0.0, 1.0), labels, 1000, sc);
        double worst = 0.0;
        for (std::size_t i = 0; i < none.final_points.size(); ++i) {
            for (std::size_t d = 0; d < 2; ++d) {
                worst = std::max({worst, std::abs(none.final_points[i][d] - cfg1.final_points[i][d]),
                                  std::abs(none.final_points[i][d] - rect0.final_points[i][d])});
            }
        }
        const bool bitwise = none.final_points == cfg1.final_points && none.final_points == rect0.final_points;
        return Outcome{bitwise && worst <= kLatticeTolerance && none.final_points.size() == 1000,
                       "none/cfg(1)/rect(0) over 1000 chains, max abs diff " + num(worst)};
    });

    report(2, kBudget2, [&] {
        SamplerConfig sc;
        sc.n_steps = 28;
        sc.seed = kSeed;
        sc.record_trajectory = true;
        sc.record_reference = true;
        const Condition y = Condition::label(0);
        const auto run = sample(mix_model, guidance::RectCfgPP(1.0, 1.0), y, 200, sc);
        std::vector<Vec> states;
        for (const auto& tr : run.trajectories) states.insert(states.end(), tr.states.begin(), tr.states.end());
        const Box region = Box::around(states, 0.5);
        std::vector<double> times = sc.grid();
        const std::size_t n = times.size();
        for (std::size_t i = 0; i + 1 < n; ++i) times.push_back(0.5 * (times[i] + times[i + 1]));
        const auto bounds =
            estimate_guidance_bounds(mix_model, region, times, y, kMinProbes, RngStream(kSeed, 0xB0), 16);
        const BoundReport steps = check_step_deviation(run.trajectories, bounds.guidance_bound);
        const bool pass = steps.max_equality_rel_error <= kEqualityRelTolerance && steps.violations == 0 &&
                          steps.lhs.size() == 200u * 28u;
        return Outcome{pass, "steps " + std::to_string(steps.lhs.size()) + ", equality rel err " +
                                 num(steps.max_equality_rel_error) + ", B " + num(bounds.guidance_bound) +
                                 " from " + std::to_string(kMinProbes) + " probes, violations " +
                                 std::to_string(steps.violations)};
    });

    report(3, kBudget3, [&] {
        const std::vector<double> dts{1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128, 1.0 / 256};
        const Condition y = Condition::label(0);
        const auto states = draw_on_path_states(mixture, y, 2000, dts.front(), RngStream(kSeed, 0x3A));
        const ScalingReport s = guidance_drift_scaling(mix_model, states, y, dts);
        std::string maxima;
        for (double m : s.max_literal) maxima += (maxima.empty() ? "" : ",") + num(m);
        return Outcome{s.slope_literal >= kSlopeLo && s.slope_literal <= kSlopeHi,
                       "log-log slope " + num(s.slope_literal) + " over 2000 states, maxima [" + maxima + "]"};
    });

    report(4, kBudget4, [&] {
        const auto probes = oracle_probes(gaussian, Condition::label(0), kMinProbes, RngStream(kSeed, 0x4B));
        const double rmse = oracle_rmse(gauss_model, gaussian, probes);
        const bool in_budget = gauss_train_secs < kBudget4;
        return Outcome{rmse <= kOracleRmseMax && in_budget,
                       "oracle RMSE " + num(rmse) + " over 10^4 probes after 2000x256 steps, training " +
                           num(gauss_train_secs) + "s"};
    });

    report(5, kBudget5, [&] {
        const std::size_t n = 5000;
        SamplerConfig sc;
        sc.n_steps = 28;
        sc.seed = kSeed;
        const auto run = sample(mix_model, guidance::None{}, round_robin(k, n), n, sc);
        const auto held_out = draw_data(mixture, n, 0x51);
        const auto a = draw_data(mixture, n, 0x52);
        const auto b = draw_data(mixture, n, 0x53);
        const double model = energy_distance(run.final_points, held_out);
        const double self = energy_distance(a, b);
        return Outcome{model <= kEnergyFactor * self,
                       "energy " + num(model) + " vs data self-distance " + num(self) + " (ratio " +
                           num(model / self) + ")"};
    });

    CompareReport compare;
    double compare_secs = 0.0;
    {
        const auto start = std::chrono::steady_clock::now();
        compare = run_compare(mix_model, mixture, config);
        compare_secs = seconds_since(start);
    }

    // The same sweep on the exact velocity field. Printed next to criteria 6
    // and 8 for context; pass/fail is judged on the trained model only.
    CompareReport exact;
    {
        RunConfig exact_cfg = config;
        exact_cfg.compare.strategies.clear();
        for (double lam : {0.2, 0.4, 0.6, 0.8, 1.0, 1.2}) {
            exact_cfg.compare.strategies.push_back(guidance::RectCfgPP(lam, 1.0));
        }
        exact_cfg.compare.strategies.push_back(guidance::Cfg{1.5});
        exact_cfg.compare.strategies.push_back(guidance::Cfg{10.0});
        exact_cfg.compare.n_steps_sweep = {28};
        exact = run_compare(OracleField(mixture), mixture, exact_cfg);
    }

    report(6, kBudget6, [&] {
        double lo = INFINITY;
        double hi = 0.0;
        for (double lam : {0.2, 0.4, 0.6, 0.8, 1.0, 1.2}) {
            const double sw =
                find_row(compare, strategy_label(guidance::RectCfgPP(lam, 1.0)), 28).sw_to_data;
            lo = std::min(lo, sw);
            hi = std::max(hi, sw);
        }
        double exact_lo = INFINITY;
        double exact_hi = 0.0;
        for (double lam : {0.2, 0.4, 0.6, 0.8, 1.0, 1.2}) {
            const double sw = find_row(exact, strategy_label(guidance::RectCfgPP(lam, 1.0)), 28).sw_to_data;
            exact_lo = std::min(exact_lo, sw);
            exact_hi = std::max(exact_hi, sw);
        }
        const double exact_cfg_ratio = find_row(exact, strategy_label(guidance::Cfg{10.0}), 28).sw_to_data /
                                       find_row(exact, strategy_label(guidance::Cfg{1.5}), 28).sw_to_data;
        const double cfg_low = find_row(compare, strategy_label(guidance::Cfg{1.5}), 28).sw_to_data;
        const double cfg_high = find_row(compare, strategy_label(guidance::Cfg{10.0}), 28).sw_to_data;
        const bool pass = hi <= kRectSpreadMax * lo && cfg_high >= kCfgBlowupMin * cfg_low && compare_secs < kBudget6;
        return Outcome{pass, "rect SW max/min " + num(hi) + "/" + num(lo) + " = " + num(hi / lo) +
                                 ", cfg SW w10/w1.5 " + num(cfg_high) + "/" + num(cfg_low) + " = " +
                                 num(cfg_high / cfg_low) + "; exact field: rect " + num(exact_hi / exact_lo) + ", cfg " +
                                 num(exact_cfg_ratio) + "; compare sweep " + num(compare_secs) + "s"};
    });

    report(7, kBudget7, [&] {
        const double rect = find_row(compare, strategy_label(guidance::RectCfgPP(0.5, 1.0)), 5).sw_to_data;
        const double cfg = find_row(compare, strategy_label(guidance::Cfg{3.0}), 5).sw_to_data;
        return Outcome{rect <= (1.0 - kLowNfeMargin) * cfg,
                       "N=5 SW rect(0.5) " + num(rect) + " vs cfg(3) " + num(cfg) + ", margin " +
                           num(1.0 - rect / cfg)};
    });

    report(8, kBudget8, [&] {
        const auto& rect = find_row(compare, strategy_label(guidance::RectCfgPP(1.0, 1.0)), 28).manifold_p95;
        const auto& cfg = find_row(compare, strategy_label(guidance::Cfg{10.0}), 28).manifold_p95;
        bool pass = rect.size() == 3 && cfg.size() == 3;
        std::string detail = "p95 rect(1.0) vs cfg(10):";
        for (std::size_t i = 0; i < rect.size() && i < cfg.size(); ++i) {
            pass = pass && rect[i].second <= cfg[i].second;
            detail += " t=" + num(rect[i].first) + " " + num(rect[i].second) + "/" + num(cfg[i].second);
        }
        const auto& exact_rect = find_row(exact, strategy_label(guidance::RectCfgPP(1.0, 1.0)), 28).manifold_p95;
        const auto& exact_cfg = find_row(exact, strategy_label(guidance::Cfg{10.0}), 28).manifold_p95;
        detail += "; exact field:";
        for (std::size_t i = 0; i < exact_rect.size() && i < exact_cfg.size(); ++i) {
            detail += " " + num(exact_rect[i].second) + "/" + num(exact_cfg[i].second);
        }
        return Outcome{pass, detail};
    });

    report(9, kBudget9, [&] {
        // gradient vs central differences on the trained model
        MlpVelocityField f = mix_model;
        const Vec x{0.4, -0.8};
        const double t = 0.35;
        const Condition c = Condition::label(3);
        const Vec target{1.0, 0.5};
        auto loss = [&] {
            const Vec r = f.forward(x, t, c) - target;
            return 0.5 * dot(r, r);
        };
        const GradientItem item{x, t, c, f.forward(x, t, c) - target};
        const auto grad = f.backward(std::span(&item, 1));
        double fd_worst = 0.0;
        auto params = f.mutable_params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double saved = params[i];
            params[i] = saved + 1e-5;
            const double up = loss();
            params[i] = saved - 1e-5;
            const double down = loss();
            params[i] = saved;
            const double numeric = (up - down) / 2e-5;
            fd_worst = std::max(fd_worst, std::abs(grad[i] - numeric) /
                                              std::max({std::abs(grad[i]), std::abs(numeric), 1e-3}));
        }

        const auto a = draw_data(mixture, 300, 0x91);
        const auto b = draw_data(mixture, 250, 0x92);
        const double energy_gap = std::abs(energy_distance(a, b) - brute_energy(a, b));

        const auto bytes = save_checkpoint(mix_model, TrainingMetadata{4000, 0.0, kSeed});
        const auto restored = load_checkpoint(bytes);
        const bool ckpt = std::equal(restored.field.params().begin(), restored.field.params().end(),
                                     mix_model.params().begin(), mix_model.params().end()) &&
                          save_checkpoint(restored.field, restored.metadata) == bytes;

        auto render = [&] {
            SamplerConfig sc;
            sc.n_steps = 28;
            sc.seed = kSeed;
            sc.record_trajectory = true;
            const auto run = sample(mix_model, guidance::RectCfgPP(1.0, 1.0), round_robin(k, 64), 64, sc);
            std::ostringstream csv;
            write_trajectory_csv(csv, run);
            std::istringstream in(csv.str());
            PlotOptions po;
            po.paths = true;
            return std::pair{csv.str(), render_trajectory_svg(read_trajectory_csv(in), po)};
        };
        const auto first = render();
        const auto second = render();
        const bool bytes_equal = first == second;

        const bool pass = fd_worst <= kFdTolerance && energy_gap <= kEnergyOracleTolerance && ckpt && bytes_equal;
        return Outcome{pass, "fd rel err " + num(fd_worst) + ", energy oracle gap " + num(energy_gap) +
                                 ", checkpoint " + (ckpt ? "bit-exact" : "MISMATCH") + ", csv/svg " +
                                 (bytes_equal ? "identical" : "DIFFER")};
    });

    report(10, 0.0, [&] {
        const std::size_t chains = 50;
        const std::size_t steps = 28;
        SamplerConfig sc;
        sc.n_steps = steps;
        sc.seed = kSeed;
        const std::vector<std::pair<GuidanceStrategy, std::uint64_t>> cases{
            {guidance::None{}, 1},
            {guidance::Cfg{3.0}, 2},
            {guidance::CfgZeroStar{3.0, 1}, 2},
            {guidance::Apg{1.0, 1.0, 0.5}, 2},
            {guidance::RectCfgPP(1.0, 1.0), 3},
        };
        bool pass = true;
        std::string detail;
        for (const auto& [strategy, per_step] : cases) {
            const auto run = sample(mix_model, strategy, round_robin(k, chains), chains, sc);
            const std::uint64_t expected = chains * steps * per_step;
            pass = pass && run.field_evaluations == expected;
            detail += std::string(detail.empty() ? "" : ", ") + strategy_name(strategy) + " " +
                      std::to_string(run.field_evaluations) + "/" + std::to_string(expected);
        }
        return Outcome{pass, detail};
    });

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
