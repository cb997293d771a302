#include <hierctl/runner.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace hierctl;
namespace fs = std::filesystem;

namespace {

const char* small_config = R"ini(seed = 3
[grid]
dim = 1
length_x = 1
nx = 12
T = 1
nt = 10

[geometry]
leader = 0.1 0.5
follower1 = 0.5 0.8
follower2 = 0.2 0.6
target1 = 0.3 0.9
target2 = 0.1 0.7

[weights]
alpha1 = 1e-3
alpha2 = 1e-3

[data]
u0 = "16*x^2*(1-x)^2"
target1 = "0.5*sin(pi*x)"
leader = "sin(3*x)*cos(t)"
)ini";

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("hierctl_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    fs::path p = dir / "run.ini";
    std::ofstream(p) << text;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(const std::string& args) {
    std::string cmd = std::string(HIERCTL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
    auto at = s.find(from);
    if (at != std::string::npos) s.replace(at, from.size(), to);
    return s;
}

std::vector<std::vector<double>> csv_rows(const std::string& text) {
    std::vector<std::vector<double>> rows;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<double> r;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) r.push_back(std::stod(cell));
        rows.push_back(r);
    }
    return rows;
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

} // namespace

TEST(Config, ParsesTypedValues) {
    RunConfig c = parse_config(small_config);
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.nx[0], 12);
    EXPECT_EQ(c.nt, 10);
    ASSERT_TRUE(c.follower_box[0]);
    EXPECT_DOUBLE_EQ(c.follower_box[0]->lo[0], 0.5);
    EXPECT_DOUBLE_EQ(c.alpha[1], 1e-3);
    EXPECT_DOUBLE_EQ(c.initial(0.5), 1.0);
    EXPECT_EQ(c.entries.at("grid").at("nx"), "12");
}

TEST(Config, ListsAcceptCommasAndSpaces) {
    RunConfig a = parse_config(std::string(small_config) + "[solver]\ntol = 1e-9\n");
    RunConfig b = parse_config(replace(small_config, "[weights]\n", "[weights]\neps = \"1e-2, 1e-3 1e-4\"\n"));
    EXPECT_DOUBLE_EQ(a.solver.tol, 1e-9);
    EXPECT_EQ(b.eps, (std::vector<double>{1e-2, 1e-3, 1e-4}));
}

TEST(Config, RejectsUnknownAndMalformedEntries) {
    EXPECT_THROW(parse_config(std::string(small_config) + "[grid2]\nnx = 3\n"), ConfigError);
    EXPECT_THROW(parse_config(replace(small_config, "nt = 10", "nt = 10\nnz = 4")), ConfigError);
    EXPECT_THROW(parse_config(replace(small_config, "nt = 10", "nt = ten")), ConfigError);
    EXPECT_THROW(parse_config(replace(small_config, "alpha1 = 1e-3", "alpha1 = inf")), ConfigError);
    EXPECT_THROW(parse_config(replace(small_config, "16*x^2", "16*x^^2")), ConfigError);
    EXPECT_THROW(parse_config(replace(small_config, "leader = 0.1 0.5", "leader = 0.1 0.5 0.7")), ConfigError);
    EXPECT_THROW(parse_config(std::string(small_config) + "[solver]\nmode = fancy\n"), ConfigError);
}

TEST(Config, MissingBoxFailsBeforeSolve) {
    RunConfig c = parse_config(replace(small_config, "follower1 = 0.5 0.8\n", ""));
    EXPECT_THROW(prepare_run("nash", c, 1), ConfigError);
}

TEST(Config, ControllabilityNeedsTargetMeetingLeader) {
    RunConfig c = parse_config(replace(replace(small_config, "target1 = 0.3 0.9", "target1 = 0.6 0.9"),
                                       "target2 = 0.1 0.7", "target2 = 0.6 0.9"));
    EXPECT_NO_THROW(prepare_run("nash", c, 1));
    EXPECT_THROW(prepare_run("null-control", c, 1), InvalidSpec);
}

TEST(Config, ShippedConfigsPrepare) {
    int count = 0;
    for (const auto& entry : fs::directory_iterator(HIERCTL_CONFIG_DIR)) {
        if (entry.path().extension() != ".ini") continue;
        ++count;
        EXPECT_NO_THROW(load_config(entry.path().string())) << entry.path();
    }
    EXPECT_GE(count, 8);
}

TEST(Execute, ZeroDataNashIsZero) {
    std::string text = replace(replace(replace(small_config, "u0 = \"16*x^2*(1-x)^2\"\n", ""),
                                       "target1 = \"0.5*sin(pi*x)\"\n", ""),
                               "leader = \"sin(3*x)*cos(t)\"\n", "");
    Artifacts a = execute(prepare_run("nash", parse_config(text), 1));
    EXPECT_TRUE(a.summary.at("all_zero").get<bool>());
}

TEST(Cli, VersionAndUsageErrors) {
    EXPECT_EQ(cli("--version"), 0);
    fs::path dir = scratch("usage");
    fs::path cfg = write_config(dir, small_config);
    EXPECT_EQ(cli("nash"), ExitUsage);
    EXPECT_EQ(cli("frobnicate --config " + cfg.string()), ExitUsage);
    EXPECT_EQ(cli("nash --config " + (dir / "missing.ini").string()), ExitUsage);
    EXPECT_EQ(cli("nash --config " + cfg.string() + " --threads 0"), ExitUsage);
    fs::remove_all(dir);
}

TEST(Cli, NashWritesArtifacts) {
    fs::path dir = scratch("nash");
    fs::path cfg = write_config(dir, small_config);
    ASSERT_EQ(cli("nash --config " + cfg.string() + " --out " + (dir / "out").string()), ExitOk);
    for (const char* f : {"manifest.json", "summary.json", "nash_history.csv", "state.txt", "control_1.txt",
                          "control_2.txt", "adjoint_1.txt", "adjoint_2.txt"})
        EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
    EXPECT_FALSE(fs::exists(dir / "out" / "error.json"));
    EXPECT_EQ(first_line(slurp(dir / "out" / "nash_history.csv")), "iter,change_norm,residual_1,residual_2");
    auto summary = nlohmann::json::parse(slurp(dir / "out" / "summary.json"));
    EXPECT_EQ(summary.at("status"), "ok");
    auto manifest = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
    EXPECT_EQ(manifest.at("subcommand"), "nash");
    EXPECT_EQ(manifest.at("seed"), 3);
    fs::remove_all(dir);
}

TEST(Cli, InvalidConfigWritesOnlyErrorRecord) {
    fs::path dir = scratch("invalid");
    fs::path cfg = write_config(dir, replace(small_config, "follower1 = 0.5 0.8\n", ""));
    fs::path out = dir / "out";
    EXPECT_EQ(cli("nash --config " + cfg.string() + " --out " + out.string()), ExitInvalid);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(out)) files.push_back(e.path().filename().string());
    EXPECT_EQ(files, std::vector<std::string>{"error.json"});
    auto err = nlohmann::json::parse(slurp(out / "error.json"));
    EXPECT_EQ(err.at("error"), "ConfigError");
    EXPECT_EQ(err.at("stage"), "validation");
    EXPECT_EQ(err.at("exit_code"), ExitInvalid);
    fs::remove_all(dir);
}

TEST(Cli, NumericalFailureExitCode) {
    fs::path dir = scratch("numerical");
    std::string text = slurp(fs::path(HIERCTL_CONFIG_DIR) / "nash_reference.ini");
    text = replace(replace(text, "alpha1 = 1e-3", "alpha1 = 10"), "alpha2 = 1e-3", "alpha2 = 10");
    fs::path cfg = write_config(dir, text);
    fs::path out = dir / "out";
    EXPECT_EQ(cli("nash --config " + cfg.string() + " --out " + out.string()), ExitNumerical);
    auto err = nlohmann::json::parse(slurp(out / "error.json"));
    EXPECT_EQ(err.at("error"), "ContractionFailure");
    EXPECT_EQ(err.at("stage"), "solve");
    EXPECT_FALSE(fs::exists(out / "summary.json"));
    fs::remove_all(dir);
}

TEST(Cli, UnsupportedSecondOrderForExpression) {
    fs::path dir = scratch("unsupported");
    fs::path cfg =
        write_config(dir, std::string(small_config) + "[nonlinearity]\npreset = expression\nexpr = \"0.5*tanh(u)\"\nbound = 0.5\n");
    EXPECT_EQ(cli("second-order --config " + cfg.string() + " --out " + (dir / "out").string()), ExitInvalid);
    EXPECT_EQ(nlohmann::json::parse(slurp(dir / "out" / "error.json")).at("error"), "Unsupported");
    fs::remove_all(dir);
}

TEST(Cli, NullControlSweepDecreasesAndIsDeterministic) {
    fs::path dir = scratch("sweep");
    std::string cfg = (fs::path(HIERCTL_CONFIG_DIR) / "null_control_reference.ini").string();
    ASSERT_EQ(cli("null-control --config " + cfg + " --out " + (dir / "a").string() + " --threads 1"), ExitOk);
    ASSERT_EQ(cli("null-control --config " + cfg + " --out " + (dir / "b").string() + " --threads 4"), ExitOk);
    std::string sweep = slurp(dir / "a" / "sweep.csv");
    EXPECT_EQ(first_line(sweep), "eps,terminal_norm,cg_iters,f_norm,J_leader");
    EXPECT_EQ(first_line(slurp(dir / "a" / "cg_history.csv")), "eps,iter,residual,raw_residual");
    EXPECT_EQ(sweep, slurp(dir / "b" / "sweep.csv"));
    EXPECT_EQ(slurp(dir / "a" / "cg_history.csv"), slurp(dir / "b" / "cg_history.csv"));
    auto rows = csv_rows(sweep);
    ASSERT_EQ(rows.size(), 5u);
    for (std::size_t k = 1; k < rows.size(); ++k) {
        EXPECT_LT(rows[k][0], rows[k - 1][0]);
        EXPECT_LT(rows[k][1], rows[k - 1][1]);
    }
    fs::remove_all(dir);
}

TEST(Cli, SeedOverrideChangesSampledOutputs) {
    fs::path dir = scratch("seed");
    std::string cfg = (fs::path(HIERCTL_CONFIG_DIR) / "carleman_unit.ini").string();
    ASSERT_EQ(cli("carleman --config " + cfg + " --out " + (dir / "a").string()), ExitOk);
    ASSERT_EQ(cli("carleman --config " + cfg + " --out " + (dir / "b").string()), ExitOk);
    ASSERT_EQ(cli("carleman --config " + cfg + " --out " + (dir / "c").string() + " --seed 99"), ExitOk);
    std::string a = slurp(dir / "a" / "carleman_ratio.csv");
    EXPECT_EQ(first_line(a), "sample,lhs,rhs,ratio");
    EXPECT_EQ(a, slurp(dir / "b" / "carleman_ratio.csv"));
    EXPECT_NE(a, slurp(dir / "c" / "carleman_ratio.csv"));
    EXPECT_EQ(nlohmann::json::parse(slurp(dir / "c" / "manifest.json")).at("seed"), 99);
    fs::remove_all(dir);
}

TEST(Cli, OracleChecksPass) {
    fs::path dir = scratch("oracle");
    std::string cfg = (fs::path(HIERCTL_CONFIG_DIR) / "oracle_small.ini").string();
    ASSERT_EQ(cli("oracle --config " + cfg + " --out " + dir.string()), ExitOk);
    std::string text = slurp(dir / "oracle.csv");
    EXPECT_EQ(first_line(text), "check,value,tolerance,pass");
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    int checks = 0;
    while (std::getline(in, line)) {
        ++checks;
        EXPECT_EQ(line.substr(line.rfind(',') + 1), "1") << line;
    }
    EXPECT_GE(checks, 5);
    fs::remove_all(dir);
}
