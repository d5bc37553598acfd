#include "rectflow/commands.hpp"

#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

#include <gtest/gtest.h>

namespace rectflow {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_text(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t line_count(const std::string& text)
{
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "rectflow");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

json base_config()
{
    return json::parse(R"({
      "seed": 5,
      "output_dir": "run",
      "dataset": {"kind": "gaussian_single", "means": [2.0, 0.0], "sigma_data": 0.5},
      "model": {"hidden": [16, 16], "embed_dim": 4},
      "train": {"epochs": 60, "batch_size": 64, "eval_every": 20},
      "sampler": {"n_steps": 6, "n_chains": 20, "label": 0},
      "guidance": {"name": "rect_cfgpp", "lambda_max": 1.0},
      "compare": {"n_reference": 200, "n_projections": 16, "bank_size": 200},
      "verify": {"n_probes": 200, "refine_starts": 2, "n_pairs": 100, "n_states": 40,
                 "dts": [0.125, 0.0625, 0.03125], "n_projections": 16, "bank_size": 200}
    })");
}

// One trained checkpoint shared by every test; each test writes its own config
// next to it and points "model.checkpoint" at it.
class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        root_ = fs::temp_directory_path() / ("rectflow_cli_" + std::to_string(::getpid()));
        fs::remove_all(root_);
        fs::create_directories(root_);
        const fs::path cfg = write_config(base_config(), "train.json");
        const CliResult r = cli({"train", cfg.string()});
        ASSERT_EQ(r.code, kExitOk) << r.err;
        checkpoint_ = root_ / "run" / "model.fgv";
        ASSERT_TRUE(fs::exists(checkpoint_));
    }

    static void TearDownTestSuite() { fs::remove_all(root_); }

    static fs::path write_config(const json& doc, const std::string& name)
    {
        const fs::path p = root_ / name;
        std::ofstream(p) << doc.dump(2);
        return p;
    }

    static json with_checkpoint(json doc, const std::string& output_dir)
    {
        doc["model"]["checkpoint"] = checkpoint_.string();
        doc["output_dir"] = output_dir;
        return doc;
    }

    static inline fs::path root_;
    static inline fs::path checkpoint_;
};

TEST_F(Cli, TrainWritesLossCurve)
{
    const std::string loss = read_text(root_ / "run" / "loss.csv");
    EXPECT_EQ(loss.rfind("epoch,loss,oracle_rmse\n", 0), 0u);
    EXPECT_EQ(line_count(loss), 61u);
}

TEST_F(Cli, ZeroEpochsStillWritesCheckpoint)
{
    json doc = base_config();
    doc["train"]["epochs"] = 0;
    doc["output_dir"] = "zero";
    const CliResult r = cli({"train", write_config(doc, "zero.json").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_TRUE(fs::exists(root_ / "zero" / "model.fgv"));
    EXPECT_EQ(read_text(root_ / "zero" / "loss.csv"), "epoch,loss,oracle_rmse\n");
}

TEST_F(Cli, MissingDatasetIsInputErrorNamingKey)
{
    json doc = base_config();
    doc.erase("dataset");
    const CliResult r = cli({"train", write_config(doc, "nodata.json").string()});
    EXPECT_EQ(r.code, kExitInput);
    EXPECT_NE(r.err.find("\"dataset\""), std::string::npos) << r.err;
}

TEST_F(Cli, BadArgumentsAreInputErrors)
{
    EXPECT_EQ(cli({}).code, kExitInput);
    EXPECT_EQ(cli({"frobnicate"}).code, kExitInput);
    EXPECT_EQ(cli({"sample"}).code, kExitInput);
    EXPECT_EQ(cli({"sample", (root_ / "absent.json").string()}).code, kExitInput);
    std::ofstream(root_ / "broken.json") << "{\"seed\": ";
    EXPECT_EQ(cli({"sample", (root_ / "broken.json").string()}).code, kExitInput);
    EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST_F(Cli, SampleIsDeterministicAndRecordsTrajectories)
{
    json doc = with_checkpoint(base_config(), "s1");
    doc["sampler"]["record_trajectory"] = true;
    ASSERT_EQ(cli({"sample", write_config(doc, "s1.json").string()}).code, kExitOk);
    doc["output_dir"] = "s2";
    ASSERT_EQ(cli({"sample", write_config(doc, "s2.json").string()}).code, kExitOk);

    const std::string a = read_text(root_ / "s1" / "final_points.csv");
    EXPECT_EQ(a, read_text(root_ / "s2" / "final_points.csv"));
    EXPECT_EQ(line_count(a), 21u);
    const std::string traj = read_text(root_ / "s1" / "trajectory.csv");
    EXPECT_EQ(traj, read_text(root_ / "s2" / "trajectory.csv"));
    EXPECT_EQ(line_count(traj), 1u + 20u * 7u);

    const CliResult other = cli({"sample", write_config(doc, "s3.json").string(), "--seed", "6", "--output-dir",
                                 (root_ / "s3").string()});
    ASSERT_EQ(other.code, kExitOk) << other.err;
    EXPECT_NE(read_text(root_ / "s3" / "final_points.csv"), a);
}

TEST_F(Cli, ZeroStrengthMatchesUnguided)
{
    json doc = with_checkpoint(base_config(), "lam0");
    doc["guidance"] = json::parse(R"({"name": "rect_cfgpp", "lambda_max": 0.0})");
    ASSERT_EQ(cli({"sample", write_config(doc, "lam0.json").string()}).code, kExitOk);
    doc["output_dir"] = "none";
    doc["guidance"] = json::parse(R"({"name": "none"})");
    ASSERT_EQ(cli({"sample", write_config(doc, "none.json").string()}).code, kExitOk);
    EXPECT_EQ(read_text(root_ / "lam0" / "final_points.csv"), read_text(root_ / "none" / "final_points.csv"));
}

TEST_F(Cli, MissingOrCorruptCheckpoint)
{
    json doc = base_config();
    doc["model"]["checkpoint"] = (root_ / "nope.fgv").string();
    EXPECT_EQ(cli({"sample", write_config(doc, "nockpt.json").string()}).code, kExitInput);

    std::string bytes = read_text(checkpoint_);
    bytes[bytes.size() / 2] ^= 0x5A;
    bytes.resize(bytes.size() - 3);
    std::ofstream(root_ / "bad.fgv", std::ios::binary) << bytes;
    doc["model"]["checkpoint"] = (root_ / "bad.fgv").string();
    EXPECT_EQ(cli({"sample", write_config(doc, "badckpt.json").string()}).code, kExitInput);
}

TEST_F(Cli, CheckpointMustMatchDataset)
{
    json doc = with_checkpoint(base_config(), "mismatch");
    doc["dataset"] = json::parse(R"({"kind": "gaussian_mixture", "num_labels": 3, "radius": 2.0, "sigma_data": 0.3})");
    const CliResult r = cli({"sample", write_config(doc, "mismatch.json").string()});
    EXPECT_EQ(r.code, kExitInput);
}

TEST_F(Cli, PlotIsByteDeterministicAndRejectsMalformedCsv)
{
    json doc = with_checkpoint(base_config(), "plot");
    doc["sampler"]["record_trajectory"] = true;
    ASSERT_EQ(cli({"sample", write_config(doc, "plot.json").string()}).code, kExitOk);
    const std::string csv = (root_ / "plot" / "trajectory.csv").string();
    const std::string a = (root_ / "a.svg").string();
    const std::string b = (root_ / "b.svg").string();
    ASSERT_EQ(cli({"plot", csv, "--out", a, "--paths", "--star", "2,0"}).code, kExitOk);
    ASSERT_EQ(cli({"plot", csv, "--out", b, "--paths", "--star", "2,0"}).code, kExitOk);
    EXPECT_EQ(read_text(a), read_text(b));
    EXPECT_NE(read_text(a).find("</svg>"), std::string::npos);

    std::ofstream(root_ / "malformed.csv") << "chain,step,t,x_0,x_1,alpha,dv_norm,deviation\n0,0,1,x,0,,,\n";
    const CliResult bad = cli({"plot", (root_ / "malformed.csv").string(), "--out", a});
    EXPECT_EQ(bad.code, kExitInput);
    EXPECT_NE(bad.err.find("line 2"), std::string::npos) << bad.err;
    EXPECT_EQ(cli({"plot", csv, "--panels", "one"}).code, kExitInput);
}

TEST_F(Cli, CompareUnitCfgMatchesUnguidedAndSweepsSteps)
{
    json doc = with_checkpoint(base_config(), "cmp");
    doc["compare"]["strategies"] = json::parse(R"([{"name": "none"}, {"name": "cfg", "omega": 1.0}])");
    doc["compare"]["nfe"] = json::array({4, 8});
    const CliResult r = cli({"compare", write_config(doc, "cmp.json").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;

    const json report = json::parse(read_text(root_ / "cmp" / "compare_report.json"));
    ASSERT_EQ(report["blocks"].size(), 2u);
    for (const auto& block : report["blocks"]) {
        const auto& rows = block["rows"];
        ASSERT_EQ(rows.size(), 2u);
        EXPECT_EQ(rows[0]["sw_to_data"], rows[1]["sw_to_data"]);
        EXPECT_EQ(rows[0]["energy_distance"], rows[1]["energy_distance"]);
        EXPECT_EQ(rows[0]["manifold_p95"], rows[1]["manifold_p95"]);
        const std::uint64_t n = block["n_steps"];
        EXPECT_EQ(rows[0]["nfe_total"], 20u * n);
        EXPECT_EQ(rows[1]["nfe_total"], 40u * n);
    }
    EXPECT_EQ(line_count(read_text(root_ / "cmp" / "compare_metrics.csv")), 5u);

    doc["compare"]["strategies"] = json::parse(R"([{"name": "none"}])");
    EXPECT_EQ(cli({"compare", write_config(doc, "cmp1.json").string()}).code, kExitInput);
}

TEST_F(Cli, VerifyZeroStrengthHasNoDeviation)
{
    json doc = with_checkpoint(base_config(), "ver");
    doc["guidance"] = json::parse(R"({"name": "rect_cfgpp", "lambda_max": 0.0})");
    const CliResult r = cli({"verify", write_config(doc, "ver.json").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const json report = json::parse(read_text(root_ / "ver" / "verify_report.json"));
    EXPECT_EQ(report["step_deviation"]["violations"], 0);
    EXPECT_EQ(report["step_deviation"]["max_lhs"], 0.0);
    EXPECT_TRUE(report["step_deviation"]["pass"].get<bool>());
    EXPECT_TRUE(report["schedule_integral"]["pass"].get<bool>());
    EXPECT_GT(report["estimates"]["lipschitz"].get<double>(), 0.0);
    EXPECT_EQ(read_text(root_ / "ver" / "deviation_curve.csv").rfind("t,sw,kl\n", 0), 0u);
}

} // namespace
} // namespace rectflow
