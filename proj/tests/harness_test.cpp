#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cct/harness.hpp"
#include "cct/tensor_archive.hpp"

namespace {

namespace fs = std::filesystem;
using namespace cct::harness;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class HarnessTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cct_harness_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write_prompt(const std::string& name, const std::vector<int>& ids) {
    const auto doc = cct::PromptDocument::from_token_ids(ids).to_json();
    const auto path = dir_ / name;
    std::ofstream(path) << doc.dump();
    return path.string();
  }

  RunConfig shrink_config(const std::string& out) {
    RunConfig c;
    c.prompt_paths = {write_prompt("fruits.json", {4, 4, 4, 4, 12})};
    c.sweep = cct::SweepKind::shrink;
    c.selector = cct::SpanSelector{0, 3};
    c.expected_count = 4;
    c.out_dir = (dir_ / out).string();
    c.seed = 3;
    return c;
  }

  fs::path dir_;
};

TEST_F(HarnessTest, ShrinkSweepWritesNineteenRows) {
  const auto outcome = cmd_sweep(shrink_config("a"));
  ASSERT_EQ(outcome.files.size(), 3u);
  const auto csv = slurp(outcome.files[0]);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 20);  // header + 19 rows
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sweep_value,0,1,2,3,4,5,6,7,8,9,other");
  const auto metrics = nlohmann::json::parse(slurp(outcome.files[2]));
  EXPECT_EQ(metrics["format"], 1);
  EXPECT_TRUE(metrics.contains("counting"));
}

TEST_F(HarnessTest, RerunsAreByteIdentical) {
  auto config = shrink_config("a");
  const auto first = cmd_sweep(config);
  config.out_dir = (dir_ / "b").string();
  config.workers = 3;
  const auto second = cmd_sweep(config);
  for (std::size_t i = 0; i < first.files.size(); ++i) {
    EXPECT_EQ(slurp(first.files[i]), slurp(second.files[i])) << first.files[i];
  }
}

TEST_F(HarnessTest, ArchiveBackedModelMatchesRandomInit) {
  const auto model = cct::init_random(3, {});
  const auto archive_path = (dir_ / "model.bin").string();
  model.archive().save(archive_path);
  auto from_seed = shrink_config("seeded");
  auto from_file = shrink_config("file");
  from_file.model_path = archive_path;
  from_file.seed = 99;  // ignored when an archive is given
  EXPECT_EQ(slurp(cmd_sweep(from_seed).files[0]), slurp(cmd_sweep(from_file).files[0]));
}

TEST_F(HarnessTest, MismatchedInterpolationIsSkipped) {
  RunConfig c;
  c.sweep = cct::SweepKind::interpolate;
  c.prompt_paths = {write_prompt("a.json", {1, 2, 3}), write_prompt("b.json", {1, 2})};
  c.out_dir = (dir_ / "out").string();
  const auto outcome = cmd_sweep(c);
  EXPECT_TRUE(outcome.skipped);
  const auto metrics = nlohmann::json::parse(slurp(outcome.files[2]));
  EXPECT_TRUE(metrics.contains("skip_reason"));
}

TEST_F(HarnessTest, SumsSkipFlagMatchesMetricsDocument) {
  auto c = shrink_config("sums");
  c.expected_count.reset();
  c.sum = std::pair{24, 37};
  const auto outcome = cmd_sweep(c);
  const auto metrics = nlohmann::json::parse(slurp(outcome.files[2]));
  // A random tiny model rarely predicts "6"; either way the document is well formed.
  EXPECT_EQ(outcome.skipped, metrics.contains("skip_reason") && !metrics["skip_reason"].is_null());
}

TEST_F(HarnessTest, AggregatePassthroughAndVersionCheck) {
  const auto outcome = cmd_sweep(shrink_config("a"));
  const auto summary = cmd_aggregate({outcome.files[2].string()}, (dir_ / "agg").string());
  const auto record = cct::RecordMetrics::from_json(nlohmann::json::parse(slurp(outcome.files[2])));
  EXPECT_EQ(summary.global.observed_frequency, record.counting->normalized_frequency.value());
  EXPECT_TRUE(fs::exists(dir_ / "agg" / "summary.json"));
  EXPECT_TRUE(fs::exists(dir_ / "agg" / "summary.csv"));

  auto doc = nlohmann::json::parse(slurp(outcome.files[2]));
  doc["format"] = 2;
  const auto stale = dir_ / "stale.metrics.json";
  std::ofstream(stale) << doc.dump();
  EXPECT_ANY_THROW(cmd_aggregate({outcome.files[2].string(), stale.string()},
                                 (dir_ / "agg2").string()));
}

TEST_F(HarnessTest, ThreeFileAggregateMatchesHand) {
  std::vector<std::string> files;
  const std::pair<int, int> cases[] = {{3, 4}, {2, 5}, {1, 2}};
  for (const auto& [peaks, n] : cases) {
    cct::RecordMetrics m;
    m.record_id = "r" + std::to_string(peaks);
    cct::PeakReport p;
    for (int i = 1; i <= peaks; ++i) p.unique_relative_peaks.push_back(std::to_string(i));
    p.expected_count = n;
    p.normalized_frequency = cct::normalized_peak_frequency(p.unique_relative_peaks, n);
    p.expected_only_frequency = cct::expected_only_frequency(p.unique_relative_peaks, n);
    p.counterfactual_frequency = cct::counterfactual_frequency(n);
    m.counting = p;
    const auto path = dir_ / (m.record_id + ".metrics.json");
    std::ofstream(path) << m.to_json().dump();
    files.push_back(path.string());
  }
  const auto s = cmd_aggregate(files, (dir_ / "agg").string());
  EXPECT_DOUBLE_EQ(s.global.observed_frequency, (0.75 + 0.4 + 0.5) / 3.0);
  EXPECT_DOUBLE_EQ(s.global.counterfactual_frequency, (0.25 + 0.2 + 0.5) / 3.0);
  EXPECT_DOUBLE_EQ(s.global.average_ratio, (3.0 + 2.0 + 1.0) / 3.0);
}

TEST(ParseHelpers, GridAndSelector) {
  EXPECT_EQ(parse_grid("0.5,1,2"), (std::vector<double>{0.5, 1, 2}));
  EXPECT_THROW(parse_grid("0.5,x"), std::invalid_argument);
  EXPECT_THROW(parse_grid(""), std::invalid_argument);
  const auto sel = parse_selector("2:5");
  EXPECT_EQ(sel.start_index, 2u);
  EXPECT_EQ(sel.end_index, 5u);
  EXPECT_EQ(parse_selector("3").end_index, 3u);
  EXPECT_THROW(parse_selector("a:b"), std::invalid_argument);
}

TEST(Check, PassesAndNegativeControlFails) {
  CheckOptions options;
  options.cases = 10;
  const auto report = cmd_check(options);
  EXPECT_TRUE(report.all_passed());
  EXPECT_EQ(report.convergence.size(), 7u);

  options.corrupt_duration_bias = true;
  const auto corrupted = cmd_check(options);
  EXPECT_FALSE(corrupted.all_passed());
  for (const auto& r : corrupted.results) {
    if (r.name.rfind("path_equivalence", 0) == 0) {
      EXPECT_FALSE(r.passed) << r.name;
    }
  }
}

// Exit statuses through the real executable.
class CliTest : public HarnessTest {
 protected:
  int run(const std::string& args) {
    const char* exe = std::getenv("CCT_BINARY");
    if (exe == nullptr) return -1;
    const std::string cmd = std::string(exe) + " " + args + " > " + (dir_ / "stdout").string() +
                            " 2> " + (dir_ / "stderr").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
};

TEST_F(CliTest, ExitStatuses) {
  if (std::getenv("CCT_BINARY") == nullptr) GTEST_SKIP() << "CCT_BINARY not set";
  const auto prompt = write_prompt("p.json", {1, 2, 3});
  const auto other = write_prompt("q.json", {1, 2});
  const auto out = (dir_ / "out").string();
  EXPECT_EQ(run("check --cases 5"), 0);
  EXPECT_EQ(run("check --cases 5 --corrupt-duration-bias"), 1);
  EXPECT_EQ(run("sweep --prompt " + prompt + " --out " + out), 0);
  EXPECT_EQ(run("sweep --sweep interpolate --prompt " + prompt + " --prompt " + other + " --out " + out), 0);
  EXPECT_EQ(run("sweep --prompt " + (dir_ / "missing.json").string() + " --out " + out), 2);
  EXPECT_EQ(run("sweep --prompt " + prompt + " --grid 1,0.5 --out " + out), 2);
  EXPECT_EQ(run("sweep --prompt " + prompt + " --sweep bogus"), 2);
  EXPECT_EQ(run("aggregate " + out + "/shrink_p.metrics.json --out " + out), 0);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "summary.csv"));
}

TEST_F(CliTest, EnvironmentOverrides) {
  if (std::getenv("CCT_BINARY") == nullptr) GTEST_SKIP() << "CCT_BINARY not set";
  const auto prompt = write_prompt("p.json", {5, 6, 7});
  const auto out = (dir_ / "env").string();
  EXPECT_EQ(run("sweep --prompt " + prompt + " --out " + out + " --sweep scale"), 0);
  const auto with_env = "env CCT_SWEEP=scale CCT_OUT=" + (dir_ / "env2").string() + " " +
                        std::string(std::getenv("CCT_BINARY")) + " sweep --prompt " + prompt +
                        " 2>/dev/null";
  ASSERT_EQ(std::system(with_env.c_str()), 0);
  EXPECT_EQ(slurp(dir_ / "env" / "scale_p.csv"), slurp(dir_ / "env2" / "scale_p.csv"));
}

}  // namespace
