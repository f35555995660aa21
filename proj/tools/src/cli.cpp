#include "mcpmix/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <optional>
#include <ostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "mcpmix/error.hpp"
#include "mcpmix/gradcheck.hpp"
#include "mcpmix/svg_plot.hpp"
#include "mcpmix/synthgen.hpp"
#include "mcpmix/trainloop.hpp"
#include "mcpmix/version.hpp"

namespace mcpmix {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

struct Common {
  std::string out;
  bool record_wall_time = false;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string part;
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw ConfigError("bad seed list: '" + text + "'");
    return static_cast<std::uint64_t>(v);
  };
  while (std::getline(ss, part, ',')) {
    const auto dots = part.find("..");
    if (dots == std::string::npos) {
      out.push_back(number(part));
      continue;
    }
    const auto lo = number(part.substr(0, dots));
    const auto hi = number(part.substr(dots + 2));
    if (hi < lo) throw ConfigError("bad seed range: '" + part + "'");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

std::vector<TrainMode> parse_modes(const std::string& text) {
  std::vector<TrainMode> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(parse_train_mode(part));
  if (out.empty()) throw ConfigError("empty mode list");
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open config");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << text;
  if (!out) throw IoError(path.string(), "write failed");
}

std::vector<std::string> list_outputs(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel != "run.json") out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// run.json: written last, via rename so readers never see a partial file.
void write_run_manifest(const Common& common, const std::string& command, const json& config,
                        std::optional<std::uint64_t> seed, Clock::time_point start) {
  const fs::path dir(common.out);
  json m{{"command", command},
         {"config", config},
         {"seed", seed ? json(*seed) : json(nullptr)},
         {"version", kVersion},
         {"outputs", list_outputs(dir)},
         {"wall_time_seconds", nullptr}};
  if (common.record_wall_time) {
    m["wall_time_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  }
  const fs::path tmp = dir / "run.json.tmp";
  write_text(tmp, m.dump(2) + "\n");
  fs::rename(tmp, dir / "run.json");
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir, "cannot create directory: " + ec.message());
}

// Training flags shared by train and compare. Only flags actually given
// override the config file.
struct TrainFlags {
  std::string config, manifest, test_manifest, mode;
  int epochs = 0, extension_epochs = 0;
  std::size_t batch_size = 0, hidden = 0, probe_items = 0;
  double lr = 0, weight_decay = 0, tau0 = 0, gate_lr = 0, s_max = 0, rho_max = 0, mu = 0;
  std::uint64_t seed = 0, extractor_seed = 0;
  std::map<std::string, CLI::Option*> opts;

  void attach(CLI::App* app, bool with_mode_and_seed) {
    app->add_option("--config", config, "JSON training config")->check(CLI::ExistingFile);
    opts["manifest"] = app->add_option("--manifest", manifest, "Training manifest.json");
    opts["test_manifest"] = app->add_option("--test-manifest", test_manifest, "Held-out manifest.json");
    if (with_mode_and_seed) {
      opts["mode"] = app->add_option("--mode", mode, "rla|stepwise|cosine-fixed|none|classical-mixup");
      opts["seed"] = app->add_option("--seed", seed, "Run seed");
    }
    opts["epochs"] = app->add_option("--epochs", epochs, "Annealing horizon T")->check(CLI::PositiveNumber);
    opts["extension_epochs"] =
        app->add_option("--extension-epochs", extension_epochs, "Epochs after T")->check(CLI::NonNegativeNumber);
    opts["batch_size"] = app->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
    opts["hidden"] = app->add_option("--hidden", hidden, "Segmentation model width")->check(CLI::PositiveNumber);
    opts["probe_items"] = app->add_option("--probe-items", probe_items);
    opts["lr"] = app->add_option("--lr", lr)->check(CLI::PositiveNumber);
    opts["weight_decay"] = app->add_option("--weight-decay", weight_decay)->check(CLI::NonNegativeNumber);
    opts["tau0"] = app->add_option("--tau0", tau0, "Hinge threshold at t=0 (default: calibrate)")
                       ->check(CLI::NonNegativeNumber);
    opts["gate_lr"] = app->add_option("--gate-lr", gate_lr)->check(CLI::NonNegativeNumber);
    opts["s_max"] = app->add_option("--s-max", s_max)->check(CLI::Range(0.0, 1.0));
    opts["rho_max"] = app->add_option("--rho-max", rho_max)->check(CLI::Range(0.0, 1.0));
    opts["mu"] = app->add_option("--mu", mu)->check(CLI::NonNegativeNumber);
    opts["extractor_seed"] = app->add_option("--extractor-seed", extractor_seed);
  }

  bool given(const std::string& key) const {
    auto it = opts.find(key);
    return it != opts.end() && it->second->count() > 0;
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config.empty()) cfg = read_json_file(config).get<TrainConfig>();
    if (given("manifest")) cfg.manifest = manifest;
    if (given("test_manifest")) cfg.test_manifest = test_manifest;
    if (given("mode")) cfg.mode = parse_train_mode(mode);
    if (given("seed")) cfg.seed = seed;
    if (given("epochs")) cfg.epochs = epochs;
    if (given("extension_epochs")) cfg.extension_epochs = extension_epochs;
    if (given("batch_size")) cfg.batch_size = batch_size;
    if (given("hidden")) cfg.hidden = hidden;
    if (given("probe_items")) cfg.probe_items = probe_items;
    if (given("lr")) cfg.lr = lr;
    if (given("weight_decay")) cfg.weight_decay = weight_decay;
    if (given("tau0")) cfg.rla.tau0 = tau0;
    if (given("gate_lr")) cfg.rla.gate_lr = gate_lr;
    if (given("s_max")) cfg.rla.s_max = s_max;
    if (given("rho_max")) cfg.rla.rho_max = rho_max;
    if (given("mu")) cfg.rla.mu = mu;
    if (given("extractor_seed")) cfg.extractor_seed = extractor_seed;
    cfg.rla.total_epochs = cfg.epochs;
    return cfg;
  }
};

int cmd_datagen(const Common& common, std::size_t n, std::size_t size, std::size_t channels,
                double strength, std::uint64_t seed, const std::string& config, std::ostream& out) {
  const auto start = Clock::now();
  GenConfig gen;
  if (!config.empty()) gen = read_json_file(config).get<GenConfig>();
  if (size) gen.size = size;
  if (channels) gen.channels = channels;
  if (strength >= 0.0) gen.strength = strength;
  gen.validate();
  ensure_dir(common.out);
  const auto m = generate_dataset(gen, n, seed, common.out);
  json cfg{{"n", n}, {"generator", gen}};
  write_run_manifest(common, "datagen", cfg, seed, start);
  out << fmt::format("wrote {} triplets ({}x{}x{}) to {}\n", m.items.size(), gen.size, gen.size,
                     gen.channels, common.out);
  return kExitOk;
}

int cmd_train(const Common& common, const TrainFlags& flags, std::ostream& out) {
  const auto start = Clock::now();
  TrainConfig cfg = flags.resolve();
  cfg.out_dir = common.out;
  cfg.log_path.clear();
  cfg.record_wall_time = common.record_wall_time;
  cfg.validate();
  ensure_dir(common.out);
  const auto res = train(cfg);
  const auto gv = gate_values(res.final_gate);
  const auto& last = res.log.back();
  out << fmt::format("mode {} seed {}: {} batches, final l_real {:.6f}, total {:.6f}\n",
                     to_string(cfg.mode), cfg.seed, res.log.size(), last.l_real, last.total);
  if (cfg.mode == TrainMode::Rla) {
    out << fmt::format("final gates: rho {:.6f} s {:.6f} (tau0 {:.6f}, bandwidth {:.6f})\n", gv.rho, gv.s,
                       res.tau0, res.bandwidth);
  }
  json jc = cfg;
  jc["rla"]["tau0"] = res.tau0;
  write_run_manifest(common, "train", jc, cfg.seed, start);
  return kExitOk;
}

std::string metric_summary(const MetricRow& m) {
  return fmt::format("mIoU {:.2f}  DSC {:.2f}  PA {:.2f}  HD95 {:.3f}  ASSD {:.3f}  BF1@2 {:.2f}  BIoU {:.4f}",
                     m.region.miou, m.region.dsc, m.region.pa, m.hd95, m.assd, m.at2.f1, m.biou2);
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::string& manifest_path,
             double threshold, bool gt_as_prediction, std::ostream& out) {
  const auto start = Clock::now();
  const auto manifest = load_manifest(manifest_path);
  EvalResult res;
  if (gt_as_prediction) {
    std::vector<BinaryMask> preds;
    for (std::size_t i = 0; i < manifest.items.size(); ++i) preds.push_back(manifest.load_item(i).mask);
    res = evaluate_predictions(preds, manifest);
  } else {
    if (checkpoint.empty()) throw ConfigError("eval: --checkpoint is required unless --gt-as-prediction");
    res = evaluate(load_checkpoint(checkpoint), manifest, threshold);
  }
  ensure_dir(common.out);
  write_eval_csv(fs::path(common.out) / "eval.csv", res);
  json cfg{{"checkpoint", checkpoint},
           {"manifest", manifest_path},
           {"threshold", threshold},
           {"gt_as_prediction", gt_as_prediction}};
  write_run_manifest(common, "eval", cfg, std::nullopt, start);
  out << fmt::format("{} images: {}\n", res.rows.size(), metric_summary(res.mean));
  return kExitOk;
}

int cmd_compare(const Common& common, const TrainFlags& flags, const std::string& modes_text,
                const std::string& seeds_text, std::ostream& out) {
  const auto start = Clock::now();
  TrainConfig cfg = flags.resolve();
  cfg.out_dir = common.out;
  cfg.record_wall_time = common.record_wall_time;
  cfg.validate();
  const auto modes = parse_modes(modes_text);
  const auto seeds = parse_seeds(seeds_text);
  ensure_dir(common.out);
  const auto res = schedule_compare(cfg, modes, seeds);
  json jc = cfg;
  jc["modes"] = modes_text;
  jc["seeds"] = seeds;
  write_run_manifest(common, "compare", jc, std::nullopt, start);
  out << render_compare_table(res);
  return kExitOk;
}

int cmd_probe(const Common& common, const std::string& manifest_path, const std::string& seeds_text,
              const ProbeConfig& pcfg, const std::string& checkpoint, std::ostream& out) {
  const auto start = Clock::now();
  const auto manifest = load_manifest(manifest_path);
  const auto seeds = parse_seeds(seeds_text);
  std::optional<SegModel> model;
  if (!checkpoint.empty()) model = load_checkpoint(checkpoint);
  const auto report = gradient_instability_probe(manifest, seeds, pcfg, model ? &*model : nullptr);
  ensure_dir(common.out);
  const auto j = probe_to_json(report);
  write_text(fs::path(common.out) / "probe.json", j.dump(2) + "\n");
  json cfg{{"manifest", manifest_path},
           {"seeds", seeds},
           {"draws", pcfg.draws},
           {"anchors", pcfg.anchors},
           {"hidden", pcfg.hidden},
           {"s_max", pcfg.s_max},
           {"band_radius", pcfg.band_radius},
           {"checkpoint", checkpoint}};
  write_run_manifest(common, "probe", cfg, std::nullopt, start);
  auto line = [&](const char* name, const RegimeStats& r) {
    out << fmt::format("{:<10} mean|g| {:.6f}  var {:.6f}  flip {:.4f}  fractional {:.4f}  n {}\n", name,
                       r.mean_abs_gradient, r.gradient_variance, r.sign_flip_rate,
                       r.fractional_target_fraction, r.samples);
  };
  line("classical", report.classical);
  line("mcpmix", report.mcpmix);
  return kExitOk;
}

int cmd_gradcheck(const Common& common, const std::string& seeds_text, const GradCheckOptions& base,
                  std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  const auto seeds = parse_seeds(seeds_text);
  bool all_pass = true;
  json report = json::array();
  for (auto seed : seeds) {
    GradCheckOptions opt = base;
    opt.seed = seed;
    bool pass = true;
    for (const auto& r : run_gradcheck(opt)) {
      const bool ok = r.passed(opt.tolerance);
      pass = pass && ok;
      out << fmt::format("  seed {} {:<15} checked {:>4}  max rel err {:.3e}  {}\n", seed, r.suite, r.checked,
                         r.max_rel_error, ok ? "ok" : "FAIL");
      if (!ok) {
        err << fmt::format("seed {} {}: worst at {} (analytic {:.12g}, numeric {:.12g})\n", seed, r.suite,
                           r.worst, r.worst_analytic, r.worst_numeric);
      }
      report.push_back({{"seed", seed},
                        {"suite", r.suite},
                        {"checked", r.checked},
                        {"max_rel_error", r.max_rel_error},
                        {"worst", r.worst},
                        {"passed", ok}});
    }
    out << fmt::format("seed {} {}\n", seed, pass ? "PASS" : "FAIL");
    all_pass = all_pass && pass;
  }
  if (!common.out.empty()) {
    ensure_dir(common.out);
    write_text(fs::path(common.out) / "gradcheck.json", report.dump(2) + "\n");
    json cfg{{"seeds", seeds},
             {"step", base.step},
             {"tolerance", base.tolerance},
             {"floor", base.floor},
             {"gate_configs", base.gate_configs},
             {"corrupt", base.corrupt}};
    write_run_manifest(common, "gradcheck", cfg, std::nullopt, start);
  }
  return all_pass ? kExitOk : kExitRuntime;
}

int cmd_report(const Common& common, std::string log_path, const std::string& run_dir,
               std::string distribution_path, std::ostream& out) {
  const auto start = Clock::now();
  if (log_path.empty()) {
    if (run_dir.empty()) throw ConfigError("report: give --run or --log");
    log_path = (fs::path(run_dir) / "train_log.csv").string();
    if (distribution_path.empty() && fs::exists(fs::path(run_dir) / "distribution.csv")) {
      distribution_path = (fs::path(run_dir) / "distribution.csv").string();
    }
  }
  const auto log = read_train_log(log_path);

  RlaConfig rla;
  int max_epoch = 0;
  for (const auto& r : log) max_epoch = std::max(max_epoch, r.epoch);
  rla.total_epochs = std::max(max_epoch, 1);
  const fs::path manifest_path = fs::path(log_path).parent_path() / "run.json";
  if (fs::exists(manifest_path)) {
    const auto m = read_json_file(manifest_path.string());
    if (m.contains("config") && m["config"].contains("epochs")) {
      const auto cfg = m["config"].get<TrainConfig>();
      rla.total_epochs = cfg.epochs;
      rla.s_max = cfg.rla.s_max;
      rla.rho_max = cfg.rla.rho_max;
    }
  }

  // x: fractional epoch, each batch spread evenly inside its epoch.
  std::map<int, int> per_epoch;
  for (const auto& r : log) per_epoch[r.epoch] = std::max(per_epoch[r.epoch], r.batch + 1);
  std::vector<double> x, s, rho, d, tau, lr, lm, tot, ps, pr;
  for (const auto& r : log) {
    x.push_back(r.epoch - 1 + static_cast<double>(r.batch + 1) / per_epoch[r.epoch]);
    s.push_back(r.s);
    rho.push_back(r.rho);
    d.push_back(r.d);
    tau.push_back(r.tau);
    lr.push_back(r.l_real);
    lm.push_back(r.l_mix);
    tot.push_back(r.total);
    const auto prior = prior_schedules(rla, r.epoch);
    ps.push_back(prior.s);
    pr.push_back(prior.rho);
  }
  ensure_dir(common.out);
  const fs::path dir(common.out);
  auto chart = [&](const std::string& file, const std::string& title, const std::string& ylab,
                   std::vector<PlotSeries> series) {
    LineChart c{title, "epoch", ylab, std::move(series)};
    write_text(dir / file, render_line_chart(c));
  };
  chart("s_t.svg", "Mixing ratio", "s_t",
        {{"s_t", x, s, "#1f77b4", false}, {"cosine prior", x, ps, "#7f7f7f", true}});
  chart("rho_t.svg", "Mixed-loss weight", "rho_t",
        {{"rho_t", x, rho, "#d62728", false}, {"cosine prior", x, pr, "#7f7f7f", true}});
  chart("d_tau.svg", "Discrepancy and threshold", "value",
        {{"D_t", x, d, "#2ca02c", false}, {"tau_t", x, tau, "#7f7f7f", true}});
  chart("losses.svg", "Losses", "loss",
        {{"l_real", x, lr, "#1f77b4", false}, {"l_mix", x, lm, "#ff7f0e", false},
         {"total", x, tot, "#000000", false}});
  if (!distribution_path.empty()) {
    const auto pts = read_distribution(distribution_path);
    std::vector<double> ex, cd;
    for (const auto& p : pts) {
      ex.push_back(p.epoch);
      cd.push_back(p.centroid_distance);
    }
    chart("centroid.svg", "Mixed vs real centroid distance", "distance",
          {{"centroid distance", ex, cd, "#9467bd", false}});
  }
  json cfg{{"log", log_path}, {"distribution", distribution_path}};
  write_run_manifest(common, "report", cfg, std::nullopt, start);
  out << fmt::format("rendered {} records into {}\n", log.size(), common.out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mask-consistent paired mixing with learnable annealing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Common common;
  auto add_common = [&](CLI::App* sub, bool out_required) {
    auto* o = sub->add_option("--out", common.out, "Output directory");
    if (out_required) o->required();
    sub->add_flag("--record-wall-time", common.record_wall_time, "Store wall time in run.json and logs");
  };

  auto* datagen = app.add_subcommand("datagen", "Generate a paired synthetic dataset");
  std::size_t n = 64, size = 0, channels = 0;
  double strength = -1.0;
  std::uint64_t data_seed = 1;
  std::string gen_config;
  add_common(datagen, true);
  datagen->add_option("--n", n, "Number of triplets")->check(CLI::PositiveNumber);
  datagen->add_option("--size", size, "Image side length")->check(CLI::PositiveNumber);
  datagen->add_option("--channels", channels)->check(CLI::PositiveNumber);
  datagen->add_option("--strength", strength, "Appearance shift strength")->check(CLI::Range(0.0, 1.0));
  datagen->add_option("--seed", data_seed);
  datagen->add_option("--config", gen_config, "JSON generator config")->check(CLI::ExistingFile);

  auto* train_cmd = app.add_subcommand("train", "Train one model");
  TrainFlags train_flags;
  add_common(train_cmd, true);
  train_flags.attach(train_cmd, true);

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  std::string checkpoint, eval_manifest;
  double threshold = 0.5;
  bool gt_pred = false;
  add_common(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory");
  eval_cmd->add_option("--manifest", eval_manifest, "manifest.json")->required();
  eval_cmd->add_option("--threshold", threshold)->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_flag("--gt-as-prediction", gt_pred, "Score the masks against themselves");

  auto* compare_cmd = app.add_subcommand("compare", "Compare schedules over seeds");
  TrainFlags compare_flags;
  std::string modes_text = "rla,stepwise,cosine-fixed,none", compare_seeds = "1,2,3,4";
  add_common(compare_cmd, true);
  compare_flags.attach(compare_cmd, false);
  compare_cmd->add_option("--modes", modes_text, "Comma-separated modes");
  compare_cmd->add_option("--seeds", compare_seeds, "Seeds, e.g. 1,2,3 or 1..4");

  auto* probe_cmd = app.add_subcommand("probe", "Boundary gradient instability probe");
  std::string probe_manifest, probe_seeds = "1", probe_checkpoint;
  ProbeConfig pcfg;
  add_common(probe_cmd, true);
  probe_cmd->add_option("--manifest", probe_manifest, "manifest.json")->required();
  probe_cmd->add_option("--seeds", probe_seeds, "Seeds, e.g. 1,2,3 or 1..4");
  probe_cmd->add_option("--draws", pcfg.draws)->check(CLI::PositiveNumber);
  probe_cmd->add_option("--anchors", pcfg.anchors)->check(CLI::PositiveNumber);
  probe_cmd->add_option("--hidden", pcfg.hidden)->check(CLI::PositiveNumber);
  probe_cmd->add_option("--s-max", pcfg.s_max)->check(CLI::Range(0.0, 1.0));
  probe_cmd->add_option("--band-radius", pcfg.band_radius)->check(CLI::NonNegativeNumber);
  probe_cmd->add_option("--checkpoint", probe_checkpoint, "Use a trained model instead of a random one");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::string grad_seeds = "0";
  GradCheckOptions gopt;
  add_common(grad_cmd, false);
  grad_cmd->add_option("--seed", grad_seeds, "Seed or sweep, e.g. 0 or 0..9");
  grad_cmd->add_option("--configs", gopt.gate_configs, "Random gate configurations")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--step", gopt.step)->check(CLI::PositiveNumber);
  grad_cmd->add_option("--floor", gopt.floor, "Relative-error denominator floor")->check(CLI::PositiveNumber);
  grad_cmd->add_flag("--corrupt", gopt.corrupt, "Perturb the analytic gradients (negative control)");

  auto* report_cmd = app.add_subcommand("report", "Render SVG charts from a training log");
  std::string report_log, report_run, report_dist;
  add_common(report_cmd, true);
  report_cmd->add_option("--run", report_run, "Training output directory");
  report_cmd->add_option("--log", report_log, "train_log.csv");
  report_cmd->add_option("--distribution", report_dist, "distribution.csv");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    auto subs = app.get_subcommands();
    err << '\n' << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (datagen->parsed()) {
      return cmd_datagen(common, n, size, channels, strength, data_seed, gen_config, out);
    }
    if (train_cmd->parsed()) return cmd_train(common, train_flags, out);
    if (eval_cmd->parsed()) return cmd_eval(common, checkpoint, eval_manifest, threshold, gt_pred, out);
    if (compare_cmd->parsed()) return cmd_compare(common, compare_flags, modes_text, compare_seeds, out);
    if (probe_cmd->parsed()) return cmd_probe(common, probe_manifest, probe_seeds, pcfg, probe_checkpoint, out);
    if (grad_cmd->parsed()) return cmd_gradcheck(common, grad_seeds, gopt, out, err);
    if (report_cmd->parsed()) return cmd_report(common, report_log, report_run, report_dist, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << fmt::format(" (l_real {}, total {})\n", e.record().l_real, e.record().total);
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace mcpmix
