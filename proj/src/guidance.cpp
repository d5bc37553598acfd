#include "rectflow/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rectflow {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_time(double t, const char* where)
{
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError(std::string(where) + ": t=" + std::to_string(t) + " outside [0,1]");
}

// |dt * scale * v| computed from the exact correction vector.
double scaled_norm(double dt, double scale, const Vec& v)
{
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double c = dt * (scale * v[i]);
        sum += c * c;
    }
    return std::sqrt(sum);
}

} // namespace

double alpha_schedule(double t, double lambda_max, double gamma)
{
    check_time(t, "alpha_schedule");
    if (gamma == 0.0) return lambda_max;
    return lambda_max * std::pow(1.0 - t, gamma);
}

AlphaSchedule::AlphaSchedule(Power p) : form_(p)
{
    if (!(p.lambda_max >= 0.0) || !std::isfinite(p.lambda_max)) throw ConfigError("lambda_max must be >= 0");
    if (!(p.gamma >= 0.0) || !std::isfinite(p.gamma)) throw ConfigError("gamma must be >= 0");
}

AlphaSchedule::AlphaSchedule(Constant c) : form_(c)
{
    if (!(c.value >= 0.0) || !std::isfinite(c.value)) throw ConfigError("constant alpha must be >= 0");
}

AlphaSchedule::AlphaSchedule(Table table) : form_(std::move(table))
{
    const auto& knots = std::get<Table>(form_).knots;
    if (knots.empty()) throw ConfigError("alpha table needs at least one knot");
    for (std::size_t i = 0; i < knots.size(); ++i) {
        check_time(knots[i].first, "alpha table");
        if (!(knots[i].second >= 0.0) || !std::isfinite(knots[i].second)) {
            throw ConfigError("alpha table values must be >= 0");
        }
        if (i > 0 && !(knots[i].first > knots[i - 1].first)) {
            throw ConfigError("alpha table times must be strictly increasing");
        }
    }
}

double AlphaSchedule::operator()(double t) const
{
    return std::visit(overloaded{
                          [t](const Power& p) { return alpha_schedule(t, p.lambda_max, p.gamma); },
                          [t](const Constant& c) {
                              check_time(t, "alpha_schedule");
                              return c.value;
                          },
                          [t](const Table& table) {
                              check_time(t, "alpha_schedule");
                              const auto& k = table.knots;
                              if (t <= k.front().first) return k.front().second;
                              if (t >= k.back().first) return k.back().second;
                              const auto hi = std::upper_bound(
                                  k.begin(), k.end(), t, [](double v, const auto& knot) { return v < knot.first; });
                              const auto lo = hi - 1;
                              const double w = (t - lo->first) / (hi->first - lo->first);
                              return (1.0 - w) * lo->second + w * hi->second;
                          },
                      },
                      form_);
}

double AlphaSchedule::integral() const
{
    return std::visit(overloaded{
                          [](const Power& p) { return p.lambda_max / (p.gamma + 1.0); },
                          [](const Constant& c) { return c.value; },
                          [](const Table& table) {
                              const auto& k = table.knots;
                              double area = k.front().first * k.front().second;
                              for (std::size_t i = 1; i < k.size(); ++i) {
                                  area += 0.5 * (k[i].second + k[i - 1].second) * (k[i].first - k[i - 1].first);
                              }
                              area += (1.0 - k.back().first) * k.back().second;
                              return area;
                          },
                      },
                      form_);
}

namespace guidance {

RectCfgPP::RectCfgPP(double lambda_max, double gamma, double sigma)
    : schedule(AlphaSchedule::Power{lambda_max, gamma}), sigma_noise(sigma)
{}

RectCfgPP::RectCfgPP(AlphaSchedule s, double sigma) : schedule(std::move(s)), sigma_noise(sigma) {}

} // namespace guidance

const char* strategy_name(const GuidanceStrategy& strategy)
{
    return std::visit(overloaded{
                          [](const guidance::None&) { return "none"; },
                          [](const guidance::Cfg&) { return "cfg"; },
                          [](const guidance::RectCfgPP&) { return "rect_cfgpp"; },
                          [](const guidance::Apg&) { return "apg"; },
                          [](const guidance::CfgZeroStar&) { return "cfg_zero_star"; },
                      },
                      strategy);
}

std::string strategy_label(const GuidanceStrategy& strategy)
{
    std::ostringstream out;
    out << strategy_name(strategy);
    std::visit(overloaded{
                   [](const guidance::None&) {},
                   [&](const guidance::Cfg& s) { out << "(omega=" << s.omega << ")"; },
                   [&](const guidance::RectCfgPP& s) {
                       std::visit(overloaded{
                                      [&](const AlphaSchedule::Power& p) {
                                          out << "(lambda_max=" << p.lambda_max << ",gamma=" << p.gamma;
                                      },
                                      [&](const AlphaSchedule::Constant& c) { out << "(alpha=" << c.value; },
                                      [&](const AlphaSchedule::Table& table) {
                                          out << "(table=" << table.knots.size() << "knots";
                                      },
                                  },
                                  s.schedule.form());
                       if (s.sigma_noise > 0.0) out << ",sigma=" << s.sigma_noise;
                       out << ")";
                   },
                   [&](const guidance::Apg& s) { out << "(eta=" << s.eta << ",r=" << s.r << ",beta=" << s.beta << ")"; },
                   [&](const guidance::CfgZeroStar& s) {
                       out << "(omega=" << s.omega << ",zero_init=" << s.zero_init_steps << ")";
                   },
               },
               strategy);
    return out.str();
}

std::size_t nfe_per_step(const GuidanceStrategy& strategy)
{
    return std::visit(overloaded{
                          [](const guidance::None&) -> std::size_t { return 1; },
                          [](const guidance::Cfg&) -> std::size_t { return 2; },
                          [](const guidance::RectCfgPP&) -> std::size_t { return 3; },
                          [](const guidance::Apg&) -> std::size_t { return 2; },
                          [](const guidance::CfgZeroStar&) -> std::size_t { return 2; },
                      },
                      strategy);
}

void validate(const GuidanceStrategy& strategy)
{
    std::visit(overloaded{
                   [](const guidance::None&) {},
                   [](const guidance::Cfg& s) {
                       if (!std::isfinite(s.omega)) throw ConfigError("cfg omega must be finite");
                   },
                   [](const guidance::RectCfgPP& s) {
                       if (!(s.sigma_noise >= 0.0) || !std::isfinite(s.sigma_noise)) {
                           throw ConfigError("rect_cfgpp sigma_noise must be >= 0");
                       }
                   },
                   [](const guidance::Apg& s) {
                       if (!std::isfinite(s.eta)) throw ConfigError("apg eta must be finite");
                       if (!(s.r > 0.0)) throw ConfigError("apg r must be > 0");
                       if (!(s.beta >= 0.0 && s.beta < 1.0)) throw ConfigError("apg beta must lie in [0,1)");
                   },
                   [](const guidance::CfgZeroStar& s) {
                       if (!std::isfinite(s.omega)) throw ConfigError("cfg_zero_star omega must be finite");
                   },
               },
               strategy);
}

GuidedVelocity unguided_velocity(const VelocityField& field, const Vec& x, double t, double, Condition y)
{
    check_time(t, "unguided");
    Vec vc = field.velocity(x, t, y);
    StepDiagnostics diag;
    diag.vc_norm = l2_norm(vc);
    diag.nfe = 1;
    return GuidedVelocity{std::move(vc), diag};
}

GuidedVelocity cfg_velocity(const VelocityField& field, const Vec& x, double t, double dt, Condition y, double omega)
{
    check_time(t, "cfg");
    const Vec vc = field.velocity(x, t, y);
    const Vec vu = field.velocity(x, t, Condition::null());
    Vec out(vc.size());
    for (std::size_t i = 0; i < vc.size(); ++i) out[i] = (1.0 - omega) * vu[i] + omega * vc[i];
    const Vec dv = vc - vu;
    StepDiagnostics diag;
    diag.alpha = std::abs(omega - 1.0);
    diag.dv_norm = l2_norm(dv);
    diag.vc_norm = l2_norm(vc);
    diag.deviation_from_conditional = scaled_norm(dt, omega - 1.0, dv);
    diag.nfe = 2;
    return GuidedVelocity{std::move(out), diag};
}

GuidedVelocity rect_cfgpp_velocity(const VelocityField& field, const Vec& x, double t, double dt, Condition y,
                                   const guidance::RectCfgPP& params, RngStream& rng)
{
    check_time(t, "rect_cfgpp");
    if (!(dt > 0.0)) throw ScheduleError("rect_cfgpp: dt must be > 0");
    const double t_mid = t - 0.5 * dt;
    if (t_mid < 0.0) throw ScheduleError("rect_cfgpp: mid-point time " + std::to_string(t_mid) + " < 0");

    const Vec vc = field.velocity(x, t, y);
    Vec x_pred = axpy(x, 0.5 * dt, vc);
    if (params.sigma_noise > 0.0) x_pred = axpy(x_pred, params.sigma_noise, sample_standard_normal(rng, x.size()));
    const Vec vc_half = field.velocity(x_pred, t_mid, y);
    const Vec vu_half = field.velocity(x_pred, t_mid, Condition::null());
    const Vec dv = vc_half - vu_half;
    const double alpha = params.schedule(t);

    Vec out(vc.size());
    for (std::size_t i = 0; i < vc.size(); ++i) out[i] = vc[i] + alpha * dv[i];

    StepDiagnostics diag;
    diag.alpha = alpha;
    diag.dv_norm = l2_norm(dv);
    diag.vc_norm = l2_norm(vc);
    diag.deviation_from_conditional = scaled_norm(dt, alpha, dv);
    diag.nfe = 3;
    return GuidedVelocity{std::move(out), diag};
}

GuidedVelocity apg_velocity(const VelocityField& field, const Vec& x, double t, double dt, Condition y,
                            const guidance::Apg& params, std::optional<Vec>& momentum)
{
    check_time(t, "apg");
    const Vec vc = field.velocity(x, t, y);
    const Vec vu = field.velocity(x, t, Condition::null());
    const Vec raw = vc - vu;
    if (!momentum) momentum = Vec(vc.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        (*momentum)[i] = params.beta * (*momentum)[i] + (1.0 - params.beta) * raw[i];
    }

    Vec orth = *momentum;
    const double vc_sq = dot(vc, vc);
    if (vc_sq > 1e-24) orth = axpy(orth, -dot(*momentum, vc) / vc_sq, vc);
    const double orth_norm = l2_norm(orth);
    if (orth_norm > params.r) orth *= params.r / orth_norm;

    Vec out(vc.size());
    for (std::size_t i = 0; i < vc.size(); ++i) out[i] = vc[i] + params.eta * orth[i];

    StepDiagnostics diag;
    diag.alpha = std::abs(params.eta);
    diag.dv_norm = l2_norm(raw);
    diag.vc_norm = std::sqrt(vc_sq);
    diag.deviation_from_conditional = scaled_norm(dt, params.eta, orth);
    diag.nfe = 2;
    return GuidedVelocity{std::move(out), diag};
}

GuidedVelocity cfg_zero_star_velocity(const VelocityField& field, const Vec& x, double t, double dt, Condition y,
                                      const guidance::CfgZeroStar& params, std::size_t step_index)
{
    check_time(t, "cfg_zero_star");
    const Vec vc = field.velocity(x, t, y);
    const Vec vu = field.velocity(x, t, Condition::null());
    const double vu_norm = l2_norm(vu);
    const double s_star = vu_norm < 1e-12 ? 0.0 : dot(vc, vu) / dot(vu, vu);

    Vec out(vc.size());
    if (step_index >= params.zero_init_steps) {
        for (std::size_t i = 0; i < vc.size(); ++i) {
            out[i] = (1.0 - params.omega) * s_star * vu[i] + params.omega * vc[i];
        }
    }

    StepDiagnostics diag;
    diag.alpha = std::abs(params.omega - 1.0);
    diag.dv_norm = l2_norm(vc - vu);
    diag.vc_norm = l2_norm(vc);
    diag.deviation_from_conditional = scaled_norm(dt, 1.0, out - vc);
    diag.nfe = 2;
    return GuidedVelocity{std::move(out), diag};
}

GuidedVelocity guided_velocity(const VelocityField& field, const GuidanceStrategy& strategy, const Vec& x, double t,
                               double dt, Condition y, ChainState& state, RngStream& rng)
{
    GuidedVelocity result = std::visit(
        overloaded{
            [&](const guidance::None&) { return unguided_velocity(field, x, t, dt, y); },
            [&](const guidance::Cfg& s) { return cfg_velocity(field, x, t, dt, y, s.omega); },
            [&](const guidance::RectCfgPP& s) { return rect_cfgpp_velocity(field, x, t, dt, y, s, rng); },
            [&](const guidance::Apg& s) { return apg_velocity(field, x, t, dt, y, s, state.apg_momentum); },
            [&](const guidance::CfgZeroStar& s) {
                return cfg_zero_star_velocity(field, x, t, dt, y, s, state.step_index);
            },
        },
        strategy);
    ++state.step_index;
    return result;
}

} // namespace rectflow
