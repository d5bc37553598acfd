#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rectflow/numerics.hpp"
#include "rectflow/velocity_field.hpp"

namespace rectflow {

/// lambda_max * (1 - t)^gamma, with 0^0 = 1.
double alpha_schedule(double t, double lambda_max, double gamma);

/// Corrector weight alpha(t) for the predictor-corrector strategy. The power
/// law is the standard form; constant and piecewise-linear tables are alternatives.
class AlphaSchedule {
public:
    struct Power {
        double lambda_max;
        double gamma;
    };
    struct Constant {
        double value;
    };
    /// (t, alpha) knots; linear interpolation, clamped outside the knot range.
    struct Table {
        std::vector<std::pair<double, double>> knots;
    };

    AlphaSchedule(Power p);
    AlphaSchedule(Constant c);
    AlphaSchedule(Table table);

    double operator()(double t) const;
    /// Closed form for Power and Constant; trapezoid over knots for Table.
    double integral() const;

    const std::variant<Power, Constant, Table>& form() const noexcept { return form_; }

private:
    std::variant<Power, Constant, Table> form_;
};

namespace guidance {

struct None {};

struct Cfg {
    double omega;
};

struct RectCfgPP {
    AlphaSchedule schedule;
    double sigma_noise = 0.0;

    RectCfgPP(double lambda_max, double gamma, double sigma_noise = 0.0);
    RectCfgPP(AlphaSchedule schedule, double sigma_noise = 0.0);
};

struct Apg {
    double eta;
    double r;
    double beta;
};

struct CfgZeroStar {
    double omega;
    std::size_t zero_init_steps = 0;
};

} // namespace guidance

using GuidanceStrategy =
    std::variant<guidance::None, guidance::Cfg, guidance::RectCfgPP, guidance::Apg, guidance::CfgZeroStar>;

/// "none", "cfg", "rect_cfgpp", "apg", "cfg_zero_star".
const char* strategy_name(const GuidanceStrategy& strategy);
/// Short human label including hyperparameters, e.g. "cfg(omega=3)".
std::string strategy_label(const GuidanceStrategy& strategy);
/// Field evaluations per step: 1, 2, 3, 2, 2 in declaration order.
std::size_t nfe_per_step(const GuidanceStrategy& strategy);
void validate(const GuidanceStrategy& strategy);

struct StepDiagnostics {
    /// Weight applied to the guidance difference (|omega - 1| for CFG, eta for APG).
    double alpha = 0.0;
    /// |v_c - v_u| at the point where the difference enters the update.
    double dv_norm = 0.0;
    double vc_norm = 0.0;
    /// |dt * (v_hat - v_c)|: distance from the pure conditional Euler step.
    double deviation_from_conditional = 0.0;
    std::size_t nfe = 0;
};

struct GuidedVelocity {
    Vec velocity;
    StepDiagnostics diagnostics;
};

/// Per-chain mutable state: step counter for CFG-Zero*, momentum for APG.
struct ChainState {
    std::size_t step_index = 0;
    std::optional<Vec> apg_momentum;
};

GuidedVelocity unguided_velocity(const VelocityField& field, const Vec& x, double t, double dt, Condition y);

/// (1 - omega) v(x, t, null) + omega v(x, t, y).
GuidedVelocity cfg_velocity(const VelocityField& field, const Vec& x, double t, double dt, Condition y,
                            double omega);

/// Predictor-corrector step:
///   v_c = v(x, t, y);  x~ = x + (dt/2) v_c  (+ eps ~ N(0, sigma^2 I) if enabled)
///   dv  = v(x~, t - dt/2, y) - v(x~, t - dt/2, null)
///   v_hat = v_c + alpha(t) dv
GuidedVelocity rect_cfgpp_velocity(const VelocityField& field, const Vec& x, double t, double dt, Condition y,
                                   const guidance::RectCfgPP& params, RngStream& rng);

/// v_c + eta * sat_r(orth_{v_c}(m)), with momentum m <- beta m + (1 - beta)(v_c - v_u).
GuidedVelocity apg_velocity(const VelocityField& field, const Vec& x, double t, double dt, Condition y,
                            const guidance::Apg& params, std::optional<Vec>& momentum);

/// (1 - omega) s* v_u + omega v_c with s* = <v_c, v_u> / |v_u|^2 (0 if |v_u| < 1e-12);
/// zero velocity while step_index < zero_init_steps. Always evaluates both branches.
GuidedVelocity cfg_zero_star_velocity(const VelocityField& field, const Vec& x, double t, double dt, Condition y,
                                      const guidance::CfgZeroStar& params, std::size_t step_index);

/// Dispatch on the strategy; advances state.step_index.
GuidedVelocity guided_velocity(const VelocityField& field, const GuidanceStrategy& strategy, const Vec& x,
                               double t, double dt, Condition y, ChainState& state, RngStream& rng);

} // namespace rectflow
