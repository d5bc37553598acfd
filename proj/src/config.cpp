#include "rectflow/config.hpp"

#include <fstream>
#include <set>

namespace rectflow {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed)
{
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [key, value] : obj.items()) {
        if (!keys.contains(key)) throw ConfigError(where + ": unknown key \"" + key + "\"");
    }
}

const json& require(const json& obj, const std::string& where, const char* key)
{
    if (!obj.contains(key)) throw ConfigError(where + ": missing required key \"" + key + "\"");
    return obj.at(key);
}

double get_number(const json& obj, const std::string& where, const char* key, double fallback)
{
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
    return v.get<double>();
}

std::size_t get_count(const json& obj, const std::string& where, const char* key, std::size_t fallback)
{
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(where + "." + key + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
}

bool get_bool(const json& obj, const std::string& where, const char* key, bool fallback)
{
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_boolean()) throw ConfigError(where + "." + key + ": expected true or false");
    return v.get<bool>();
}

std::vector<double> get_numbers(const json& obj, const std::string& where, const char* key,
                                std::vector<double> fallback)
{
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_array()) throw ConfigError(where + "." + key + ": expected an array of numbers");
    std::vector<double> out;
    for (const json& e : v) {
        if (!e.is_number()) throw ConfigError(where + "." + key + ": expected an array of numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

Vec parse_vec(const json& v, const std::string& where)
{
    if (!v.is_array() || v.empty()) throw ConfigError(where + ": expected a non-empty array of numbers");
    std::vector<double> values;
    for (const json& e : v) {
        if (!e.is_number()) throw ConfigError(where + ": expected numbers");
        values.push_back(e.get<double>());
    }
    return Vec(std::move(values));
}

// A scalar or a list of scalars; lists drive scale sweeps in compare.
std::vector<double> scalar_or_list(const json& obj, const std::string& where, const char* key, double fallback)
{
    if (!obj.contains(key)) return {fallback};
    const json& v = obj.at(key);
    if (v.is_number()) return {v.get<double>()};
    auto values = get_numbers(obj, where, key, {});
    if (values.empty()) throw ConfigError(where + "." + key + ": empty list");
    return values;
}

MlpArchitecture parse_model(const json& j, const ConditionalDataset* dataset, std::optional<std::filesystem::path>& ckpt,
                            const std::filesystem::path& base_dir)
{
    const std::string where = "model";
    reject_unknown(j, where, {"hidden", "embed_dim", "checkpoint"});
    MlpArchitecture arch;
    if (j.contains("hidden")) {
        arch.hidden.clear();
        for (double w : get_numbers(j, where, "hidden", {})) {
            if (!(w >= 1.0) || w != static_cast<double>(static_cast<std::size_t>(w))) {
                throw ConfigError("model.hidden: widths must be positive integers");
            }
            arch.hidden.push_back(static_cast<std::size_t>(w));
        }
    }
    arch.embed_dim = get_count(j, where, "embed_dim", arch.embed_dim);
    if (j.contains("checkpoint")) {
        if (!j.at("checkpoint").is_string()) throw ConfigError("model.checkpoint: expected a path string");
        ckpt = base_dir / j.at("checkpoint").get<std::string>();
    }
    if (dataset != nullptr) {
        arch.dim = dataset->dim();
        arch.num_labels = dataset->num_labels();
    }
    return arch;
}

TrainConfig parse_train(const json& j, std::uint64_t seed)
{
    const std::string where = "train";
    reject_unknown(j, where,
                   {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "eps", "p_uncond", "eval_every"});
    TrainConfig c;
    c.seed = seed;
    c.epochs = get_count(j, where, "epochs", c.epochs);
    c.batch_size = get_count(j, where, "batch_size", c.batch_size);
    c.learning_rate = get_number(j, where, "learning_rate", c.learning_rate);
    c.beta1 = get_number(j, where, "beta1", c.beta1);
    c.beta2 = get_number(j, where, "beta2", c.beta2);
    c.adam_eps = get_number(j, where, "eps", c.adam_eps);
    c.p_uncond = get_number(j, where, "p_uncond", c.p_uncond);
    c.eval_every = get_count(j, where, "eval_every", c.eval_every);
    c.validate();
    return c;
}

LabelSpec parse_label(const json& v)
{
    LabelSpec spec;
    if (v.is_null()) {
        spec.single = Condition::null();
    } else if (v.is_string() && v.get<std::string>() == "all") {
        spec.all = true;
    } else if (v.is_number_integer() && v.get<long long>() >= 0) {
        spec.single = Condition::label(v.get<int>());
    } else {
        throw ConfigError("sampler.label: expected a label index, null, or \"all\"");
    }
    return spec;
}

SamplingSpec parse_sampler(const json& j, std::uint64_t seed)
{
    const std::string where = "sampler";
    reject_unknown(j, where,
                   {"n_steps", "n_chains", "label", "record_trajectory", "record_reference", "time_grid",
                    "integrator", "strict"});
    SamplingSpec spec;
    spec.sampler.seed = seed;
    spec.sampler.n_steps = get_count(j, where, "n_steps", spec.sampler.n_steps);
    spec.n_chains = get_count(j, where, "n_chains", spec.n_chains);
    if (spec.n_chains == 0) throw ConfigError("sampler.n_chains must be >= 1");
    if (j.contains("label")) spec.label = parse_label(j.at("label"));
    spec.sampler.record_trajectory = get_bool(j, where, "record_trajectory", false);
    spec.sampler.record_reference = get_bool(j, where, "record_reference", false);
    spec.sampler.time_grid = get_numbers(j, where, "time_grid", {});
    spec.sampler.strict = get_bool(j, where, "strict", true);
    if (j.contains("integrator")) {
        const json& v = j.at("integrator");
        if (v == "euler") {
            spec.sampler.integrator = Integrator::Euler;
        } else if (v == "heun") {
            spec.sampler.integrator = Integrator::Heun;
        } else {
            throw ConfigError("sampler.integrator: expected \"euler\" or \"heun\"");
        }
    }
    spec.sampler.grid(); // validates
    return spec;
}

CompareSpec parse_compare(const json& j)
{
    const std::string where = "compare";
    reject_unknown(j, where, {"strategies", "nfe", "n_reference", "n_projections", "manifold_times", "bank_size"});
    CompareSpec spec;
    if (j.contains("strategies")) {
        const json& list = j.at("strategies");
        if (!list.is_array()) throw ConfigError("compare.strategies: expected an array");
        for (const json& s : list) {
            auto expanded = parse_guidance(s);
            spec.strategies.insert(spec.strategies.end(), expanded.begin(), expanded.end());
        }
    }
    for (double n : get_numbers(j, where, "nfe", {})) {
        if (!(n >= 1.0) || n != static_cast<double>(static_cast<std::size_t>(n))) {
            throw ConfigError("compare.nfe: step counts must be positive integers");
        }
        spec.n_steps_sweep.push_back(static_cast<std::size_t>(n));
    }
    spec.n_reference = get_count(j, where, "n_reference", spec.n_reference);
    spec.n_projections = get_count(j, where, "n_projections", spec.n_projections);
    spec.manifold_times = get_numbers(j, where, "manifold_times", spec.manifold_times);
    spec.bank_size = get_count(j, where, "bank_size", spec.bank_size);
    if (spec.n_reference < 2) throw ConfigError("compare.n_reference must be >= 2");
    if (spec.n_projections == 0) throw ConfigError("compare.n_projections must be >= 1");
    if (spec.bank_size == 0) throw ConfigError("compare.bank_size must be >= 1");
    for (double t : spec.manifold_times) {
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("compare.manifold_times must lie in [0,1]");
    }
    return spec;
}

VerifySpec parse_verify(const json& j)
{
    const std::string where = "verify";
    reject_unknown(j, where,
                   {"n_probes", "refine_starts", "n_pairs", "n_states", "drift_dt", "dts", "deviation_times",
                    "n_projections", "bank_size"});
    VerifySpec spec;
    spec.n_probes = get_count(j, where, "n_probes", spec.n_probes);
    spec.refine_starts = get_count(j, where, "refine_starts", spec.refine_starts);
    spec.n_pairs = get_count(j, where, "n_pairs", spec.n_pairs);
    spec.n_states = get_count(j, where, "n_states", spec.n_states);
    spec.drift_dt = get_number(j, where, "drift_dt", spec.drift_dt);
    spec.dts = get_numbers(j, where, "dts", spec.dts);
    spec.deviation_times = get_numbers(j, where, "deviation_times", spec.deviation_times);
    spec.n_projections = get_count(j, where, "n_projections", spec.n_projections);
    spec.bank_size = get_count(j, where, "bank_size", spec.bank_size);
    if (spec.n_probes < 100) throw ConfigError("verify.n_probes must be >= 100");
    if (spec.n_pairs < 100) throw ConfigError("verify.n_pairs must be >= 100");
    if (!(spec.drift_dt > 0.0 && spec.drift_dt <= 1.0)) throw ConfigError("verify.drift_dt must lie in (0,1]");
    if (spec.dts.size() < 2) throw ConfigError("verify.dts needs at least two step sizes");
    for (double dt : spec.dts) {
        if (!(dt > 0.0 && dt <= 1.0)) throw ConfigError("verify.dts must lie in (0,1]");
    }
    for (double t : spec.deviation_times) {
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("verify.deviation_times must lie in [0,1]");
    }
    return spec;
}

} // namespace

std::vector<Condition> LabelSpec::resolve(const ConditionalDataset& dataset) const
{
    if (!all) {
        dataset.check_label(single);
        return {single};
    }
    std::vector<Condition> labels;
    for (std::size_t k = 0; k < dataset.num_labels(); ++k) labels.push_back(Condition::label(static_cast<int>(k)));
    return labels;
}

ConditionalDataset parse_dataset(const json& j)
{
    const std::string where = "dataset";
    reject_unknown(j, where, {"kind", "dim", "means", "sigma_data", "num_labels", "radius"});
    const json& kind_json = require(j, where, "kind");
    if (!kind_json.is_string()) throw ConfigError("dataset.kind: expected a string");
    const std::string kind = kind_json.get<std::string>();
    try {
        if (kind == "gaussian_single") {
            const Vec mean = j.contains("means") ? parse_vec(j.at("means").is_array() && !j.at("means").empty() &&
                                                                     j.at("means").front().is_array()
                                                                 ? j.at("means").front()
                                                                 : j.at("means"),
                                                             "dataset.means")
                                                 : Vec(get_count(j, where, "dim", 2));
            if (j.contains("dim") && get_count(j, where, "dim", 0) != mean.size()) {
                throw ConfigError("dataset.dim does not match the mean's length");
            }
            return ConditionalDataset::gaussian_single(mean, get_number(j, where, "sigma_data", 1.0));
        }
        if (kind == "gaussian_mixture") {
            const double sigma = get_number(j, where, "sigma_data", 0.3);
            if (j.contains("means")) {
                const json& list = j.at("means");
                if (!list.is_array()) throw ConfigError("dataset.means: expected an array of points");
                std::vector<Vec> means;
                for (const json& m : list) means.push_back(parse_vec(m, "dataset.means"));
                return ConditionalDataset::gaussian_mixture(std::move(means), sigma);
            }
            return ConditionalDataset::gaussian_mixture(get_count(j, where, "num_labels", 8),
                                                        get_number(j, where, "radius", 4.0), sigma,
                                                        get_count(j, where, "dim", 2));
        }
        if (kind == "two_moons") return ConditionalDataset::two_moons(get_number(j, where, "sigma_data", 0.1));
        if (kind == "checkerboard") return ConditionalDataset::checkerboard();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("dataset: ") + e.what());
    }
    throw ConfigError("dataset.kind: unknown kind \"" + kind + "\"");
}

std::vector<GuidanceStrategy> parse_guidance(const json& j)
{
    const std::string where = "guidance";
    if (!j.is_object()) throw ConfigError("guidance: expected an object");
    const json& name_json = require(j, where, "name");
    if (!name_json.is_string()) throw ConfigError("guidance.name: expected a string");
    const std::string name = name_json.get<std::string>();
    std::vector<GuidanceStrategy> out;
    try {
        if (name == "none") {
            reject_unknown(j, where, {"name"});
            out.emplace_back(guidance::None{});
        } else if (name == "cfg") {
            reject_unknown(j, where, {"name", "omega"});
            for (double w : scalar_or_list(j, where, "omega", 1.0)) out.emplace_back(guidance::Cfg{w});
        } else if (name == "rect_cfgpp") {
            reject_unknown(j, where, {"name", "schedule", "lambda_max", "gamma", "alpha", "table", "sigma_noise"});
            const double sigma = get_number(j, where, "sigma_noise", 0.0);
            std::string schedule = "power";
            if (j.contains("schedule")) {
                if (!j.at("schedule").is_string()) throw ConfigError("guidance.schedule: expected a string");
                schedule = j.at("schedule").get<std::string>();
            }
            if (schedule == "power") {
                const double gamma = get_number(j, where, "gamma", 1.0);
                for (double lambda : scalar_or_list(j, where, "lambda_max", 1.0)) {
                    out.emplace_back(guidance::RectCfgPP(lambda, gamma, sigma));
                }
            } else if (schedule == "constant") {
                for (double a : scalar_or_list(j, where, "alpha", 1.0)) {
                    out.emplace_back(guidance::RectCfgPP(AlphaSchedule(AlphaSchedule::Constant{a}), sigma));
                }
            } else if (schedule == "table") {
                const json& table = require(j, where, "table");
                if (!table.is_array()) throw ConfigError("guidance.table: expected [[t, alpha], ...]");
                AlphaSchedule::Table knots;
                for (const json& knot : table) {
                    const Vec pair = parse_vec(knot, "guidance.table");
                    if (pair.size() != 2) throw ConfigError("guidance.table: knots are [t, alpha] pairs");
                    knots.knots.emplace_back(pair[0], pair[1]);
                }
                out.emplace_back(guidance::RectCfgPP(AlphaSchedule(std::move(knots)), sigma));
            } else {
                throw ConfigError("guidance.schedule: expected \"power\", \"constant\" or \"table\"");
            }
        } else if (name == "apg") {
            reject_unknown(j, where, {"name", "eta", "r", "beta"});
            const double r = get_number(j, where, "r", 1.0);
            const double beta = get_number(j, where, "beta", 0.5);
            for (double eta : scalar_or_list(j, where, "eta", 1.0)) out.emplace_back(guidance::Apg{eta, r, beta});
        } else if (name == "cfg_zero_star") {
            reject_unknown(j, where, {"name", "omega", "zero_init_steps"});
            const std::size_t zero_init = get_count(j, where, "zero_init_steps", 0);
            for (double w : scalar_or_list(j, where, "omega", 1.0)) {
                out.emplace_back(guidance::CfgZeroStar{w, zero_init});
            }
        } else {
            throw ConfigError("guidance.name: unknown strategy \"" + name + "\"");
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("guidance: ") + e.what());
    }
    for (const auto& s : out) validate(s);
    return out;
}

ConditionalDataset RunConfig::dataset() const
{
    if (!dataset_json) throw ConfigError("config: missing required key \"dataset\"");
    return parse_dataset(*dataset_json);
}

std::filesystem::path RunConfig::checkpoint_path() const
{
    return checkpoint ? *checkpoint : output_dir / "model.fgv";
}

GuidanceStrategy RunConfig::primary_guidance() const
{
    return guidance.empty() ? GuidanceStrategy(guidance::None{}) : guidance.front();
}

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base_dir)
{
    reject_unknown(doc, "config",
                   {"seed", "output_dir", "dataset", "model", "train", "sampler", "guidance", "compare", "verify"});
    RunConfig cfg;
    const json& seed = require(doc, "config", "seed");
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0)) {
        throw ConfigError("config.seed: expected a non-negative integer");
    }
    cfg.seed = seed.get<std::uint64_t>();
    if (doc.contains("output_dir")) {
        if (!doc.at("output_dir").is_string()) throw ConfigError("config.output_dir: expected a path string");
        cfg.output_dir = base_dir / doc.at("output_dir").get<std::string>();
    } else {
        cfg.output_dir = base_dir / "out";
    }

    std::optional<ConditionalDataset> dataset;
    if (doc.contains("dataset")) {
        cfg.dataset_json = doc.at("dataset");
        dataset = parse_dataset(*cfg.dataset_json);
    }
    cfg.model = parse_model(doc.contains("model") ? doc.at("model") : json::object(), dataset ? &*dataset : nullptr,
                            cfg.checkpoint, base_dir);
    cfg.train = parse_train(doc.contains("train") ? doc.at("train") : json::object(), cfg.seed);
    cfg.sampling = parse_sampler(doc.contains("sampler") ? doc.at("sampler") : json::object(), cfg.seed);
    if (dataset) cfg.sampling.label.resolve(*dataset);
    if (doc.contains("guidance")) {
        const json& g = doc.at("guidance");
        if (g.is_array()) {
            for (const json& s : g) {
                auto expanded = parse_guidance(s);
                cfg.guidance.insert(cfg.guidance.end(), expanded.begin(), expanded.end());
            }
        } else {
            cfg.guidance = parse_guidance(g);
        }
    }
    cfg.compare = parse_compare(doc.contains("compare") ? doc.at("compare") : json::object());
    cfg.verify = parse_verify(doc.contains("verify") ? doc.at("verify") : json::object());
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_run_config(doc, path.parent_path());
}

} // namespace rectflow
