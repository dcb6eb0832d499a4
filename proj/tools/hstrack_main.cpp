#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "hstrack/config.hpp"
#include "hstrack/gradcheck_suite.hpp"
#include "hstrack/harness.hpp"
#include "hstrack/synthdata.hpp"
#include "hstrack/tracker.hpp"

namespace fs = std::filesystem;
using namespace hstrack;

namespace {

int cmd_gen(const std::string& spec_path, const std::string& out_dir, int count,
            uint64_t seed_override, bool has_seed) {
  KeyValues kv = KeyValues::parse_file(spec_path);
  SceneSpec base = scene_spec_from(kv);
  if (count <= 0) count = kv.get("sequences", 1);
  if (has_seed) base.seed = seed_override;
  fs::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    SceneSpec spec = base;
    spec.seed = base.seed + static_cast<uint64_t>(i);
    SequenceRecord rec = gen_sequence(spec);
    char name[64];
    std::snprintf(name, sizeof(name), "seq_%03d", i);
    std::string stem = (fs::path(out_dir) / name).string();
    write_hsvc(stem + ".hsvc", rec);
    write_annotations(stem + ".json", rec);
    std::cout << "wrote " << stem << ".hsvc (" << rec.cubes.size() << " frames, "
              << rec.bands << " bands)\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_ckpt, const std::string& log_csv) {
  TrainConfig cfg = parse_train_config(config_path);
  std::vector<SequenceRecord> data = load_dataset(data_dir);
  Tracker tracker(cfg.model, cfg.seed);

  std::ofstream log;
  if (!log_csv.empty()) {
    log.open(log_csv, std::ios::trunc);
    log << "step,total,tracking,unmixing,lr\n";
  }
  TrainResult res = train(tracker, cfg, data, [&](const StepLog& s) {
    if (log.is_open())
      log << s.step << "," << s.total << "," << s.tracking << "," << s.unmixing
          << "," << s.lr << "\n";
    if (s.step % 10 == 0)
      std::cout << "step " << s.step << " total " << s.total << " tracking "
                << s.tracking << " unmixing " << s.unmixing << "\n";
  });
  save_tracker(out_ckpt, tracker, cfg);
  std::cout << "trained " << res.steps.size() << " steps -> " << out_ckpt << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir,
             const std::string& json_out, const std::string& csv_out) {
  auto tracker = load_tracker(ckpt);
  std::vector<SequenceRecord> data = load_dataset(data_dir);
  OpeResult r = evaluate(*tracker, data);
  if (!json_out.empty()) write_metrics_json(json_out, r);
  if (!csv_out.empty()) write_metrics_csv(csv_out, r);
  std::cout << "DP@20 " << r.dp20 << "  AUC " << r.auc << " (" << data.size()
            << " sequences)\n";
  return 0;
}

int cmd_unmix(const std::string& ckpt, const std::string& cube_path,
              const std::string& out_path) {
  TrainConfig cfg;
  auto tracker = load_tracker(ckpt, &cfg);
  SequenceRecord in = read_hsvc(cube_path);
  UnmixNet& net = tracker->unmixer();

  SequenceRecord out;
  out.bands = in.bands;
  out.height = in.height;
  out.width = in.width;
  out.r_true = net.config().endmembers;
  out.endmembers = net.endmembers(nullptr);
  for (const Tensor& cube : in.cubes) {
    Tensor a = net.encode(nullptr, cube);
    out.abundances.push_back(a);
    out.cubes.push_back(net.decode(nullptr, a));
  }
  out.boxes = in.boxes;
  write_hsvc(out_path, out);
  std::cout << "unmixed " << in.cubes.size() << " frames (r="
            << out.r_true << ") -> " << out_path << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& op, int seeds) {
  auto results = run_gradcheck_suite(op, seeds);
  if (results.empty()) {
    std::cerr << "no checks match '" << op << "'\n";
    return 2;
  }
  bool all_ok = true;
  for (const auto& e : results) {
    std::printf("%-28s max_rel_err %.3e  %s\n", e.name.c_str(), e.max_error,
                e.passed ? "ok" : "FAIL");
    all_ok = all_ok && e.passed;
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperspectral material-prompt tracker"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate synthetic sequences");
  std::string spec_path, out_dir;
  int count = 0;
  uint64_t seed = 0;
  gen->add_option("--spec", spec_path, "scene spec (key=value)")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "number of sequences (overrides spec)");
  auto* seed_opt = gen->add_option("--seed", seed, "master seed (overrides spec)");

  auto* tr = app.add_subcommand("train", "train a tracker");
  std::string config_path, data_dir, ckpt_out, log_csv;
  tr->add_option("--config", config_path, "training config (key=value)")->required();
  tr->add_option("--data", data_dir, "directory of .hsvc sequences")->required();
  tr->add_option("--out", ckpt_out, "output checkpoint")->required();
  tr->add_option("--log", log_csv, "per-step loss CSV");

  auto* ev = app.add_subcommand("eval", "one-pass evaluation");
  std::string eval_ckpt, eval_data, json_out, csv_out;
  ev->add_option("--ckpt", eval_ckpt, "checkpoint")->required();
  ev->add_option("--data", eval_data, "directory of .hsvc sequences")->required();
  ev->add_option("--json", json_out, "metrics JSON output")->required();
  ev->add_option("--csv", csv_out, "per-frame CSV output");

  auto* um = app.add_subcommand("unmix", "export abundances and endmembers");
  std::string um_ckpt, um_cube, um_out;
  um->add_option("--ckpt", um_ckpt, "checkpoint")->required();
  um->add_option("--cube", um_cube, "input .hsvc file")->required();
  um->add_option("--out", um_out, "output .hsvc file")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string gc_op;
  int gc_seeds = 5;
  gc->add_option("--op", gc_op, "substring filter on check names");
  gc->add_option("--seeds", gc_seeds, "random restarts per check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(spec_path, out_dir, count, seed, seed_opt->count() > 0);
    if (tr->parsed()) return cmd_train(config_path, data_dir, ckpt_out, log_csv);
    if (ev->parsed()) return cmd_eval(eval_ckpt, eval_data, json_out, csv_out);
    if (um->parsed()) return cmd_unmix(um_ckpt, um_cube, um_out);
    if (gc->parsed()) return cmd_gradcheck(gc_op, gc_seeds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
