#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "samdetr/checkpoint.hpp"
#include "samdetr/config.hpp"
#include "samdetr/gradcheck.hpp"
#include "samdetr/train.hpp"
#include "samdetr/visualize.hpp"

namespace fs = std::filesystem;
using namespace samdetr;

namespace {

struct RunFlags {
  std::string config_file;
  std::optional<std::string> variant, strategy, search_range, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  bool no_reweight = false;
  std::vector<std::string> overrides;  // key=value

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "flat key = value config file");
    app->add_option("--variant", variant, "baseline | sam | sam-smca")
        ->check(CLI::IsMember({"baseline", "sam", "sam-smca"}));
    app->add_option("--strategy", strategy, "avg | max | sp1 | spm")->check(CLI::IsMember({"avg", "max", "sp1", "spm"}));
    app->add_flag("--no-reweight", no_reweight, "disable query reweighting");
    app->add_option("--search-range", search_range, "box | image")->check(CLI::IsMember({"box", "image"}));
    app->add_option("--seed", seed, "run seed");
    app->add_option("--steps", steps, "optimizer steps");
    app->add_option("--out", out, "output directory");
    app->add_option("--set", overrides, "extra key=value overrides (repeatable)");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (variant) set_config_value(cfg, "variant", *variant);
    if (strategy) set_config_value(cfg, "strategy", *strategy);
    if (no_reweight) cfg.model.aligner.reweight = false;
    if (search_range) set_config_value(cfg, "search_range", *search_range);
    if (seed) cfg.seed = *seed;
    if (steps) cfg.steps = *steps;
    if (out) cfg.out = *out;
    cfg.validate();
    return cfg;
  }
};

void print_row(const MetricsRow& row) {
  std::printf("step %zu  train_loss %.5f  val_ap50 %.4f  wall_ms %.0f\n", row.step, row.train_loss, row.val_ap50,
              row.wall_ms);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"samdetr: toy semantic-aligned-matching detector"};
  app.require_subcommand(1);

  RunFlags train_flags, eval_flags, ablate_flags, dump_flags;
  auto* train_cmd = app.add_subcommand("train", "train one model and write metrics.csv, model.ckpt, run.cfg");
  train_flags.attach(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "AP50 of a checkpoint on the validation split");
  eval_flags.attach(eval_cmd);
  std::string eval_ckpt;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint (default <out>/model.ckpt)");

  auto* ablate_cmd = app.add_subcommand("ablate", "train every ablation arm and write ablation.csv");
  ablate_flags.attach(ablate_cmd);

  auto* dump_cmd = app.add_subcommand("dump-attention", "write attention maps and salient points for one scene");
  dump_flags.attach(dump_cmd);
  std::string dump_ckpt, dump_dir;
  std::uint64_t scene = 0;
  dump_cmd->add_option("--checkpoint", dump_ckpt, "checkpoint (default <out>/model.ckpt)");
  dump_cmd->add_option("--scene-seed", scene, "seed of the scene to render");
  dump_cmd->add_option("--dump-dir", dump_dir, "output directory (default <out>/attention)");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::uint64_t grad_seed = 0;
  std::size_t trials = 10;
  grad_cmd->add_option("--seed", grad_seed, "seed");
  grad_cmd->add_option("--trials", trials, "random instances per operation");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const RunConfig cfg = train_flags.resolve();
      std::printf("training %s -> %s\n", to_string(cfg.model.variant), cfg.out.c_str());
      train(cfg, print_row);
    } else if (*eval_cmd) {
      const RunConfig cfg = eval_flags.resolve();
      const std::string ckpt = eval_ckpt.empty() ? (fs::path(cfg.out) / "model.ckpt").string() : eval_ckpt;
      const Model model = load_model(cfg, ckpt);
      std::printf("val_ap50 %.9g\n", evaluate(model, make_split(cfg, Split::kVal)));
    } else if (*ablate_cmd) {
      const RunConfig cfg = ablate_flags.resolve();
      const auto rows = run_ablation(cfg, [](const std::string& msg) { std::printf("%s\n", msg.c_str()); });
      for (const auto& r : rows) {
        std::printf("%-9s final_train_loss %.5f  final_val_ap50 %.4f\n", r.arm.c_str(), r.final_row.train_loss,
                    r.final_row.val_ap50);
      }
      std::printf("wrote %s\n", (fs::path(cfg.out) / "ablation.csv").string().c_str());
    } else if (*dump_cmd) {
      const RunConfig cfg = dump_flags.resolve();
      const std::string ckpt = dump_ckpt.empty() ? (fs::path(cfg.out) / "model.ckpt").string() : dump_ckpt;
      const Model model = load_model(cfg, ckpt);
      const SceneSample sample = generate_scene(scene, scene_config_for(cfg.model));
      const fs::path dir = dump_dir.empty() ? fs::path(cfg.out) / "attention" : fs::path(dump_dir);
      const AttentionDump dump = dump_attention(model, sample, dir);
      std::printf("wrote %zu head maps, %zu query maps, %zu points to %s\n", dump.head_maps.size(),
                  dump.query_maps.size(), dump.point_lines, dir.string().c_str());
    } else if (*grad_cmd) {
      bool ok = true;
      for (const auto& r : run_op_gradchecks(grad_seed, trials)) {
        const bool pass = r.max_rel_error < 1e-4;
        ok = ok && pass;
        std::printf("%-4s %-28s max_rel_err %.3e over %zu coords\n", pass ? "ok" : "FAIL", r.name.c_str(),
                    r.max_rel_error, r.coords);
      }
      for (Variant v : {Variant::kBaseline, Variant::kSam, Variant::kSamSmca}) {
        const auto r = run_end_to_end_gradcheck(v, grad_seed);
        const bool pass = r.max_rel_error < 1e-3;
        ok = ok && pass;
        std::printf("%-4s %-28s max_rel_err %.3e over %zu coords\n", pass ? "ok" : "FAIL", r.name.c_str(),
                    r.max_rel_error, r.coords);
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
