#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rectflow/datasets.hpp"
#include "rectflow/guidance.hpp"
#include "rectflow/model.hpp"
#include "rectflow/sampler.hpp"
#include "rectflow/training.hpp"

namespace rectflow {

/// Which chains get which condition: one label, the null condition, or every
/// label in round-robin order ("all").
struct LabelSpec {
    bool all = false;
    Condition single = Condition::label(0);

    std::vector<Condition> resolve(const ConditionalDataset& dataset) const;
};

struct SamplingSpec {
    SamplerConfig sampler;
    std::size_t n_chains = 200;
    LabelSpec label;
};

struct CompareSpec {
    std::vector<GuidanceStrategy> strategies;
    /// Step counts to sweep; empty means just the sampler's n_steps.
    std::vector<std::size_t> n_steps_sweep;
    std::size_t n_reference = 2000;
    std::size_t n_projections = 64;
    std::vector<double> manifold_times{0.75, 0.5, 0.25};
    std::size_t bank_size = 20000;
};

struct VerifySpec {
    std::size_t n_probes = 10000;
    std::size_t refine_starts = 16;
    std::size_t n_pairs = 2000;
    std::size_t n_states = 2000;
    double drift_dt = 1.0 / 28.0;
    std::vector<double> dts{1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128, 1.0 / 256};
    std::vector<double> deviation_times{1.0, 0.75, 0.5, 0.25, 0.0};
    std::size_t n_projections = 64;
    std::size_t bank_size = 20000;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";
    std::optional<nlohmann::json> dataset_json;
    MlpArchitecture model;
    std::optional<std::filesystem::path> checkpoint;
    TrainConfig train;
    SamplingSpec sampling;
    std::vector<GuidanceStrategy> guidance;
    CompareSpec compare;
    VerifySpec verify;

    ConditionalDataset dataset() const;
    std::filesystem::path checkpoint_path() const;
    /// First configured strategy, or None.
    GuidanceStrategy primary_guidance() const;
};

/// Parses and validates a config document. Unknown keys anywhere are rejected;
/// "seed" is mandatory. Relative paths resolve against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

ConditionalDataset parse_dataset(const nlohmann::json& j);
/// One strategy object; list-valued scale parameters expand into several strategies.
std::vector<GuidanceStrategy> parse_guidance(const nlohmann::json& j);

} // namespace rectflow
