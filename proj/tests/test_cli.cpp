#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "commands.hpp"
#include "edfusion/config.hpp"
#include "edfusion/error.hpp"
#include "edfusion/io.hpp"
#include "edfusion/pipeline.hpp"
#include "test_support.hpp"

namespace edfusion {
namespace {

namespace fs = std::filesystem;

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "edfusion");
  return cli::run(args);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

constexpr const char* kPanScene = R"({"surface": "sinusoid", "bump_amplitude_mm": 1.5, "frames": 12,
  "camera_step": [0, 0, 0, 0.3, 0.1, 0], "noise_sigma_mm": 0.1, "seed": 4})";

/// One simulated 12-frame sequence and one reconstruction of it, shared by
/// the tests below.
class CliSequence : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir("cli");
    spit(root() / "scene.json", kPanScene);
    ASSERT_EQ(run({"simulate", (root() / "scene.json").string(), (root() / "seq").string()}), cli::kExitOk);
    ASSERT_EQ(run({"reconstruct", (root() / "seq").string(), (root() / "out").string(), "--export-every", "5"}),
              cli::kExitOk);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path root() { return dir_->path(); }

 private:
  static test::TempDir* dir_;
};
test::TempDir* CliSequence::dir_ = nullptr;

TEST_F(CliSequence, SimulateWritesFramesAndTruth) {
  for (int f = 0; f < 12; ++f) {
    char name[64];
    std::snprintf(name, sizeof name, "frame_%06d.depth.pgm", f);
    EXPECT_TRUE(fs::exists(root() / "seq" / name)) << name;
    std::snprintf(name, sizeof name, "frame_%06d.rgb.ppm", f);
    EXPECT_TRUE(fs::exists(root() / "seq" / name)) << name;
    std::snprintf(name, sizeof name, "mesh_%06d.ply", f);
    EXPECT_TRUE(fs::exists(root() / "seq" / "truth" / name)) << name;
  }
  EXPECT_TRUE(fs::exists(root() / "seq" / "intrinsics.txt"));
  EXPECT_TRUE(fs::exists(root() / "seq" / "truth" / "poses.txt"));
}

TEST_F(CliSequence, SummaryHasOneRowPerFrame) {
  const auto lines = lines_of(slurp(root() / "out" / "summary.csv"));
  ASSERT_EQ(lines.size(), 13u);
  EXPECT_EQ(lines[0], summary_csv_header());
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split(lines[i]);
    EXPECT_EQ(fields.size(), split(lines[0]).size());
    EXPECT_EQ(fields[0], std::to_string(kSummaryCsvVersion));
    EXPECT_EQ(fields[1], std::to_string(i - 1));
  }
}

TEST_F(CliSequence, ExportsEveryFifthFrameAndTheFinalModel) {
  std::vector<std::string> plys;
  for (const auto& e : fs::directory_iterator(root() / "out"))
    if (e.path().extension() == ".ply") plys.push_back(e.path().filename().string());
  std::sort(plys.begin(), plys.end());
  EXPECT_EQ(plys, (std::vector<std::string>{"final_model.ply", "model_000005.ply", "model_000010.ply"}));
}

TEST_F(CliSequence, EvaluatesPerfectAndOffsetModels) {
  const io::FrameDirectory frames(root() / "seq");
  const DepthFrame last = frames.load(frames.indices().back());
  SurfelCloud cloud = test::cloud_of(last);
  io::write_ply(root() / "perfect.ply", cloud);
  for (Surfel& s : cloud.surfels()) s.position.z() += 0.5;
  io::write_ply(root() / "offset.ply", cloud);

  auto evaluate = [&](const std::string& model) {
    ::testing::internal::CaptureStdout();
    const int code = run({"evaluate", (root() / model).string(), (root() / "seq").string(), "--header"});
    const auto lines = lines_of(::testing::internal::GetCapturedStdout());
    EXPECT_EQ(code, cli::kExitOk);
    EXPECT_EQ(lines.size(), 2u);
    EXPECT_EQ(lines.at(0), "frame,count,mean_mm,median_mm,max_mm");
    const auto f = split(lines.at(1));
    EXPECT_EQ(f.at(0), "11");
    return std::stod(f.at(2));
  };
  // Noisy depth: the perfect model carries the simulated noise.
  EXPECT_LT(evaluate("perfect.ply"), 0.1);
  // A 0.5 mm push in depth over a gently curved sheet with noise.
  EXPECT_NEAR(evaluate("offset.ply"), 0.5, 0.06);
}

TEST_F(CliSequence, FinalModelEvaluatesCloseToTheTruth) {
  ::testing::internal::CaptureStdout();
  const int code = run({"evaluate", (root() / "out" / "final_model.ply").string(), (root() / "seq").string()});
  const auto lines = lines_of(::testing::internal::GetCapturedStdout());
  ASSERT_EQ(code, cli::kExitOk);
  EXPECT_LT(std::stod(split(lines.at(0)).at(2)), 0.2);
}

TEST(Cli, SimulateIsByteDeterministic) {
  const test::TempDir dir("cli_det");
  spit(dir.path() / "scene.json",
       R"({"frames": 3, "deformation": "random", "noise_sigma_mm": 0.3, "seed": 1, "texture": "checker"})");
  ASSERT_EQ(run({"simulate", (dir.path() / "scene.json").string(), (dir.path() / "a").string()}), 0);
  ASSERT_EQ(run({"simulate", (dir.path() / "scene.json").string(), (dir.path() / "b").string()}), 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path() / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), dir.path() / "a");
    EXPECT_EQ(slurp(e.path()), slurp(dir.path() / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_GE(files, 3u * 3u + 2u);
  // --seed overrides the scene seed.
  ASSERT_EQ(run({"simulate", (dir.path() / "scene.json").string(), (dir.path() / "c").string(), "--seed", "2"}), 0);
  EXPECT_NE(slurp(dir.path() / "a" / "frame_000001.depth.pgm"), slurp(dir.path() / "c" / "frame_000001.depth.pgm"));
}

TEST(Cli, ReconstructIsDeterministicApartFromTimings) {
  const test::TempDir dir("cli_rdet");
  spit(dir.path() / "scene.json", R"({"frames": 3, "deformation": "random", "noise_sigma_mm": 0.2, "seed": 6,
    "displacement_min_mm": 0.5, "displacement_max_mm": 1.0})");
  ASSERT_EQ(run({"simulate", (dir.path() / "scene.json").string(), (dir.path() / "seq").string()}), 0);
  for (const char* out : {"a", "b"})
    ASSERT_EQ(run({"reconstruct", (dir.path() / "seq").string(), (dir.path() / out).string(), "--seed", "5",
                   "--threads", "2"}),
              0);
  EXPECT_EQ(slurp(dir.path() / "a" / "final_model.ply"), slurp(dir.path() / "b" / "final_model.ply"));
  const auto a = lines_of(slurp(dir.path() / "a" / "summary.csv")), b = lines_of(slurp(dir.path() / "b" / "summary.csv"));
  ASSERT_EQ(a.size(), b.size());
  const auto header = split(a[0]);
  for (std::size_t i = 1; i < a.size(); ++i) {
    const auto fa = split(a[i]), fb = split(b[i]);
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k].rfind("t_", 0) != 0) EXPECT_EQ(fa[k], fb[k]) << header[k] << " row " << i;
  }
}

TEST(Cli, MissingIntrinsicsIsBadInputNamingTheFile) {
  const test::TempDir dir("cli_noint");
  spit(dir.path() / "scene.json", R"({"frames": 2})");
  ASSERT_EQ(run({"simulate", (dir.path() / "scene.json").string(), (dir.path() / "seq").string()}), 0);
  fs::remove(dir.path() / "seq" / "intrinsics.txt");
  ::testing::internal::CaptureStderr();
  const int code = run({"reconstruct", (dir.path() / "seq").string(), (dir.path() / "out").string()});
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, cli::kExitBadInput);
  EXPECT_NE(err.find("intrinsics.txt"), std::string::npos) << err;
}

TEST(Cli, EmptyInputDirectoryIsBadInput) {
  const test::TempDir dir("cli_empty");
  fs::create_directories(dir.path() / "seq");
  spit(dir.path() / "seq" / "intrinsics.txt", "100 100 63.5 47.5 128 96\n");
  ::testing::internal::CaptureStderr();
  EXPECT_EQ(run({"reconstruct", (dir.path() / "seq").string(), (dir.path() / "out").string()}), cli::kExitBadInput);
  ::testing::internal::GetCapturedStderr();
}

TEST(Cli, BadSceneOrConfigIsBadInput) {
  const test::TempDir dir("cli_bad");
  spit(dir.path() / "scene.json", R"({"frames": 2, "colour": "red"})");
  ::testing::internal::CaptureStderr();
  EXPECT_EQ(run({"simulate", (dir.path() / "scene.json").string(), (dir.path() / "seq").string()}),
            cli::kExitBadInput);
  EXPECT_EQ(run({"simulate", (dir.path() / "missing.json").string(), (dir.path() / "seq").string()}),
            cli::kExitBadInput);
  spit(dir.path() / "good.json", R"({"frames": 2})");
  ASSERT_EQ(run({"simulate", (dir.path() / "good.json").string(), (dir.path() / "seq").string()}), 0);
  spit(dir.path() / "config.json", R"({"w_rott": 5})");
  EXPECT_EQ(run({"reconstruct", (dir.path() / "seq").string(), (dir.path() / "out").string(), "--config",
                 (dir.path() / "config.json").string()}),
            cli::kExitBadInput);
  EXPECT_EQ(run({"evaluate", (dir.path() / "nothing.ply").string(), (dir.path() / "seq").string()}),
            cli::kExitBadInput);
  ::testing::internal::GetCapturedStderr();
}

TEST(Cli, UsageErrors) {
  ::testing::internal::CaptureStdout();
  ::testing::internal::CaptureStderr();
  EXPECT_EQ(run({}), cli::kExitUsage);
  EXPECT_EQ(run({"reconstruct"}), cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}), cli::kExitUsage);
  EXPECT_EQ(run({"simulate", "a", "b", "--threads", "-1"}), cli::kExitUsage);
  EXPECT_EQ(run({"--help"}), cli::kExitOk);
  ::testing::internal::GetCapturedStderr();
  ::testing::internal::GetCapturedStdout();
}

// ---------------------------------------------------------------------------
// Configuration files

TEST(Config, DumpParsesBackToTheSameValues) {
  PipelineConfig cfg;
  cfg.node_spacing = 5.5;
  cfg.binding_k = 6;
  cfg.weights.reg = 1234.5;
  cfg.weights.corr = 0.0;
  cfg.visibility.use_distance_field = false;
  cfg.solver.max_iters = 7;
  cfg.matcher.refine_radius = 0;
  cfg.matcher.search_radius = 20;
  cfg.ransac.seed = 99;
  cfg.fusion.tau = 3.25;
  cfg.depth_filter_sigma_px = 0.0;
  cfg.depth_filter_sigma_mm = 2.5;
  cfg.frame_skip_error_threshold = 1.5;
  cfg.seed = 1ull << 40;
  const std::string text = dump_config(cfg);
  const PipelineConfig back = parse_config(text);
  EXPECT_EQ(dump_config(back), text);
  EXPECT_EQ(back.node_spacing, 5.5);
  EXPECT_EQ(back.matcher.refine_radius, 0);
  EXPECT_EQ(back.depth_filter_sigma_mm, 2.5);
  EXPECT_EQ(back.seed, 1ull << 40);
  EXPECT_FALSE(back.visibility.use_distance_field);
}

TEST(Config, AbsentKeysKeepDefaults) {
  const PipelineConfig cfg = parse_config(R"({"tau_mm": 3})");
  EXPECT_EQ(cfg.fusion.tau, 3.0);
  EXPECT_EQ(dump_config(parse_config("{}")), dump_config(PipelineConfig{}));
}

TEST(Config, RejectsUnknownKeysAndWrongTypes) {
  for (const char* text : {R"({"tau": 3})", R"({"tau_mm": "three"})", R"({"match_stride": 1.5})", "[]", "{"}) {
    try {
      parse_config(text);
      ADD_FAILURE() << "accepted " << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::MalformedInput) << text;
    }
  }
}

TEST(Config, InvalidValuesAreRejected) {
  PipelineConfig cfg;
  cfg.matcher.patch = 4;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.frame_skip_error_threshold = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
}

}  // namespace
}  // namespace edfusion
