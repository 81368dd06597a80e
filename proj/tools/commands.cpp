#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "edfusion/config.hpp"
#include "edfusion/error.hpp"
#include "edfusion/io.hpp"
#include "edfusion/parallel.hpp"
#include "edfusion/pipeline.hpp"
#include "edfusion/simulator.hpp"

namespace edfusion::cli {

namespace fs = std::filesystem;

namespace {

class DirectorySource : public FrameSource {
 public:
  explicit DirectorySource(const fs::path& dir) : dir_(dir) {}
  std::size_t size() const override { return dir_.size(); }
  DepthFrame load(std::size_t i) const override { return dir_.load(dir_.indices()[i]); }

 private:
  io::FrameDirectory dir_;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedInput:
    case ErrorCode::Io:
    case ErrorCode::NoFrames:
    case ErrorCode::InvalidArgument: return kExitBadInput;
    default: return kExitPipeline;
  }
}

struct Common {
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool trace = false;
};

void apply_common(const Common& c) {
  set_num_threads(c.threads);
  spdlog::set_level(c.trace ? spdlog::level::trace : spdlog::level::warn);
}

int cmd_reconstruct(const fs::path& input, const fs::path& output, const std::optional<fs::path>& config_path,
                    int export_every, bool ascii, const Common& common) {
  PipelineConfig cfg = config_path ? load_config(*config_path) : PipelineConfig{};
  if (common.seed) cfg.seed = *common.seed;
  const DirectorySource source(input);
  fs::create_directories(output);
  const NccProvider provider(cfg.matcher);
  RunOptions opts;
  opts.export_every = export_every;
  opts.export_dir = output;
  const SequenceResult result = run_sequence(cfg, source, provider, opts);

  std::ofstream csv(output / "summary.csv");
  if (!csv) throw Error(ErrorCode::Io, "cannot write " + (output / "summary.csv").string());
  csv << summary_csv_header() << '\n';
  for (const auto& r : result.reports) csv << summary_csv_row(r) << '\n';
  io::write_ply(output / "final_model.ply", result.state.model,
                ascii ? io::PlyFormat::Ascii : io::PlyFormat::BinaryLittleEndian);
  std::cout << "frames=" << result.summary.frames << " fused=" << result.summary.fused
            << " discarded=" << result.summary.discarded << " skipped=" << result.summary.skipped
            << " mean_residual_mm=" << result.summary.mean_residual << " model_size=" << result.state.model.size()
            << '\n';
  return kExitOk;
}

int cmd_simulate(const fs::path& scene_path, const fs::path& output, const Common& common) {
  sim::SceneSpec spec = sim::load_scene(scene_path);
  if (common.seed) spec.seed = *common.seed;
  const sim::Sequence seq = sim::generate(spec);
  sim::write_sequence(output, seq);
  std::cout << "frames=" << seq.frames.size() << " events=" << seq.truth.events.size() << '\n';
  return kExitOk;
}

int cmd_evaluate(const fs::path& model_path, const fs::path& truth_dir, int frame, bool header) {
  if (!fs::exists(model_path)) throw Error(ErrorCode::MalformedInput, "missing model " + model_path.string());
  const io::PlyData ply = io::read_ply(model_path);
  const sim::GroundTruth truth = sim::load_truth(truth_dir);
  if (frame < 0) frame = static_cast<int>(truth.num_frames()) - 1;
  const sim::Metrics m = sim::evaluate(ply.cloud, truth, frame);
  if (header) std::cout << "frame,count,mean_mm,median_mm,max_mm\n";
  std::cout.precision(9);
  std::cout << frame << ',' << m.count << ',' << m.mean << ',' << m.median << ',' << m.max << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  static const bool logger_ready = [] {
    spdlog::set_default_logger(spdlog::stderr_color_mt("edfusion"));
    return true;
  }();
  (void)logger_ready;

  CLI::App app{"Deformable surface reconstruction from depth and color frames"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", common.seed, "Random seed (overrides config/scene)");
    sub->add_option("--threads", common.threads, "Worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
    sub->add_flag("--trace", common.trace, "Verbose per-frame logging");
  };

  fs::path input, output, scene, model, truth;
  std::optional<fs::path> config;
  int export_every = 0, frame = -1;
  bool ascii = false, header = false;

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct a frame directory");
  rec->add_option("input", input, "Directory with frame_%06d.depth.pgm, frame_%06d.rgb.ppm, intrinsics.txt")->required();
  rec->add_option("output", output, "Output directory")->required();
  rec->add_option("--config", config, "JSON pipeline configuration");
  rec->add_option("--export-every", export_every, "Write model_%06d.ply every N frames")->check(CLI::NonNegativeNumber);
  rec->add_flag("--ascii", ascii, "Write the final model as ASCII PLY");
  add_common(rec);

  auto* simc = app.add_subcommand("simulate", "Render a synthetic sequence with ground truth");
  simc->add_option("scene", scene, "JSON scene description")->required();
  simc->add_option("output", output, "Output directory")->required();
  add_common(simc);

  auto* eval = app.add_subcommand("evaluate", "Distance from a model to the ground-truth surface");
  eval->add_option("model", model, "Model PLY (camera coordinates of the evaluated frame)")->required();
  eval->add_option("truth", truth, "Directory written by simulate")->required();
  eval->add_option("--frame", frame, "Frame index (default: last)");
  eval->add_flag("--header", header, "Print a CSV header line first");
  add_common(eval);

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }
  apply_common(common);

  try {
    if (*rec) return cmd_reconstruct(input, output, config, export_every, ascii, common);
    if (*simc) return cmd_simulate(scene, output, common);
    if (*eval) return cmd_evaluate(model, truth, frame, header);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadInput;
  }
  return kExitUsage;
}

}  // namespace edfusion::cli
