// Command-line surface: gen / train / infer / eval / export-slices.
// Exit codes: 0 ok, 1 usage or configuration, 2 data, 3 numeric failure.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crswin/evaluation.hpp"
#include "crswin/model.hpp"
#include "crswin/pipeline.hpp"
#include "crswin/volume.hpp"

namespace fs = std::filesystem;
using namespace crswin;

namespace {

std::array<std::int64_t, 3> to_dims3(const std::vector<std::int64_t>& v, const std::string& flag) {
  if (v.size() != 3) {
    throw std::invalid_argument(flag + " expects three comma-separated extents, got " +
                                std::to_string(v.size()));
  }
  return {v[0], v[1], v[2]};
}

std::int64_t axis_index(const std::string& name) {
  if (name == "z") return 0;
  if (name == "y") return 1;
  if (name == "x") return 2;
  throw std::invalid_argument("--axis must be one of z, y, x, got '" + name + "'");
}

// The stored mask alongside a prediction or ground-truth file; channel data
// is optional for masks.
std::pair<Volume, LabelMask> read_case(const fs::path& path) { return read_raw(path); }

int run_gen(std::uint64_t seed, const std::vector<std::int64_t>& dims_in, std::int64_t count,
            double difficulty, const fs::path& out_dir) {
  const auto dims = to_dims3(dims_in, "--dims");
  if (count < 1) throw std::invalid_argument("--count must be >= 1");
  fs::create_directories(out_dir);
  for (std::int64_t i = 0; i < count; ++i) {
    const std::uint64_t case_seed = seed + static_cast<std::uint64_t>(i);
    auto [volume, mask] = generate_synthetic(case_seed, dims, difficulty);
    char name[32];
    std::snprintf(name, sizeof(name), "case_%05llu.crsv",
                  static_cast<unsigned long long>(case_seed));
    const fs::path path = out_dir / name;
    write_raw(volume, mask, path);
    std::cout << path.string() << "  " << dims[0] << "x" << dims[1] << "x" << dims[2]
              << "  WT=" << (mask.count(1) + mask.count(2) + mask.count(4)) << " voxels\n";
  }
  return 0;
}

int run_train(const fs::path& data_dir, const std::string& config_path, const fs::path& out_dir,
              bool full_scale) {
  TrainConfig config;
  if (!config_path.empty()) config = load_train_config(config_path);
  if (full_scale) {
    config.model = ModelConfig{};
    config.crop = {128, 128, 128};
  }
  validate(config);
  const auto cases = list_dataset(data_dir);
  fs::create_directories(out_dir);
  save_train_config(config, out_dir / "config.json");
  TrainResult result = train(cases, config, out_dir, &std::cout);
  std::cout << "best mean WT Dice " << result.best_dice << " at epoch " << result.best_epoch
            << "\ncheckpoint " << result.best_checkpoint.string() << "\nlog "
            << (out_dir / "train_log.csv").string() << "\n";
  return 0;
}

int run_infer(const fs::path& ckpt, const fs::path& in_path, const fs::path& out_path,
              const std::vector<std::int64_t>& patch_in, double overlap, bool no_clip) {
  const auto patch = to_dims3(patch_in, "--patch");
  ModelParams params = load_checkpoint(ckpt.string());
  auto [volume, gt] = read_case(in_path);
  if (volume.voxels.empty()) {
    throw FormatError("infer: '" + in_path.string() + "' carries no image channels");
  }
  const Volume prepared = normalize_intensities(volume, !no_clip);
  LabelMask internal = sliding_window_infer(prepared, params, patch, overlap);
  LabelMask external = remap_labels(internal, LabelMap::internal_to_external);
  Volume shell;  // dims and spacing only; zero channels marks a mask file
  shell.d = volume.d;
  shell.h = volume.h;
  shell.w = volume.w;
  shell.spacing = volume.spacing;
  shell.id = volume.id;
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_raw(shell, external, out_path);
  std::cout << out_path.string() << "  NCR/NET=" << external.count(1)
            << " ED=" << external.count(2) << " ET=" << external.count(4) << "\n";
  return 0;
}

int run_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out_csv,
             std::string boxplot_csv) {
  std::vector<CaseMetrics> all;
  for (const fs::path& pred_path : list_dataset(pred_dir)) {
    const fs::path gt_path = gt_dir / pred_path.filename();
    if (!fs::exists(gt_path)) {
      throw IoError("eval: no ground truth for '" + pred_path.filename().string() + "' in " +
                    gt_dir.string());
    }
    auto [pred_vol, pred_mask] = read_case(pred_path);
    auto [gt_vol, gt_mask] = read_case(gt_path);
    all.push_back(evaluate_case(pred_mask, gt_mask, gt_vol.spacing, pred_path.stem().string()));
  }
  if (all.empty()) throw IoError("eval: no .crsv cases in " + pred_dir.string());
  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  write_metrics_csv(all, out_csv);
  if (boxplot_csv.empty()) {
    fs::path side = out_csv;
    side.replace_filename(out_csv.stem().string() + "_boxplot" + out_csv.extension().string());
    boxplot_csv = side.string();
  }
  write_boxplot_csv(all, boxplot_csv);
  for (std::size_t r = 0; r < 3; ++r) {
    double sum = 0.0;
    for (const CaseMetrics& c : all) sum += c.regions[r].dice;
    std::cout << all.front().regions[r].region << " mean Dice "
              << sum / static_cast<double>(all.size()) << " over " << all.size() << " cases\n";
  }
  std::cout << out_csv.string() << "\n" << boxplot_csv << "\n";
  return 0;
}

int run_export(const fs::path& in_path, const fs::path& pred_path, const std::string& gt_path,
               const std::string& axis, const fs::path& out_dir, std::int64_t every) {
  auto [volume, embedded_gt] = read_case(in_path);
  if (volume.voxels.empty()) {
    throw FormatError("export-slices: '" + in_path.string() + "' carries no image channels");
  }
  auto [pred_vol, pred] = read_case(pred_path);
  LabelMask gt;
  bool have_gt = false;
  if (!gt_path.empty()) {
    auto [gt_vol, loaded] = read_case(gt_path);
    gt = std::move(loaded);
    have_gt = true;
  }
  export_slices(volume, pred, have_gt ? &gt : nullptr, axis_index(axis), out_dir, every);
  std::cout << out_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric segmentation: dual-window transformer training and inference"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::vector<std::int64_t> dims = {64, 64, 64};
  std::int64_t count = 1;
  double difficulty = 0.5;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Write synthetic labeled cases as .crsv files");
  gen->add_option("--seed", seed, "Base seed; case i uses seed+i");
  gen->add_option("--dims", dims, "Volume extents D,H,W (each >= 16)")->delimiter(',');
  gen->add_option("--count", count, "Number of cases");
  gen->add_option("--difficulty", difficulty, "Noise level in [0,1]");
  gen->add_option("--out", gen_out, "Output directory")->required();

  std::string data_dir, config_path, train_out;
  bool full_scale = false;
  auto* train_cmd = app.add_subcommand("train", "Train on a directory of .crsv cases");
  train_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  train_cmd->add_option("--config", config_path, "JSON config; defaults used when omitted");
  train_cmd->add_option("--out", train_out, "Run directory (checkpoints, log)")->required();
  train_cmd->add_flag("--full-scale", full_scale,
                      "Full-scale preset: embed dim 48, three stages, 128^3 crops");

  std::string ckpt, infer_in, infer_out;
  std::vector<std::int64_t> patch = {64, 64, 64};
  double overlap = 0.5;
  bool no_clip = false;
  auto* infer_cmd = app.add_subcommand("infer", "Segment one volume with a trained checkpoint");
  infer_cmd->add_option("--ckpt", ckpt, "Checkpoint file (.crck)")->required();
  infer_cmd->add_option("--in", infer_in, "Input volume (.crsv)")->required();
  infer_cmd->add_option("--out", infer_out, "Output mask (.crsv, zero channels)")->required();
  infer_cmd->add_option("--patch", patch, "Sliding-window patch D,H,W")->delimiter(',');
  infer_cmd->add_option("--overlap", overlap, "Fractional window overlap in [0,1)");
  infer_cmd->add_flag("--no-clip", no_clip, "Skip percentile clipping before min-max scaling");

  std::string pred_dir, gt_dir, eval_out, boxplot_out;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions against ground truth");
  eval_cmd->add_option("--pred", pred_dir, "Directory of predicted masks")->required();
  eval_cmd->add_option("--gt", gt_dir, "Directory of matching ground-truth cases")->required();
  eval_cmd->add_option("--out", eval_out, "Per-case metrics CSV")->required();
  eval_cmd->add_option("--boxplot", boxplot_out,
                       "Summary CSV; defaults to <out>_boxplot.csv");

  std::string exp_in, exp_pred, exp_gt, exp_axis = "z", exp_out;
  std::int64_t every = 1;
  auto* exp_cmd = app.add_subcommand("export-slices", "Write slice images with label overlays");
  exp_cmd->add_option("--in", exp_in, "Background volume (.crsv)")->required();
  exp_cmd->add_option("--pred", exp_pred, "Predicted mask (.crsv)")->required();
  exp_cmd->add_option("--gt", exp_gt, "Ground-truth mask (.crsv)");
  exp_cmd->add_option("--axis", exp_axis, "Slice axis: z, y, or x");
  exp_cmd->add_option("--out", exp_out, "Output directory")->required();
  exp_cmd->add_option("--every", every, "Keep each every-th slice");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen(seed, dims, count, difficulty, gen_out);
    if (train_cmd->parsed()) return run_train(data_dir, config_path, train_out, full_scale);
    if (infer_cmd->parsed()) return run_infer(ckpt, infer_in, infer_out, patch, overlap, no_clip);
    if (eval_cmd->parsed()) return run_eval(pred_dir, gt_dir, eval_out, boxplot_out);
    if (exp_cmd->parsed()) return run_export(exp_in, exp_pred, exp_gt, exp_axis, exp_out, every);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const LabelError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
