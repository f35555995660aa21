// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
//
//   mcpmix_acceptance --work <dir> [--only 1,4,7]

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mcpmix/cli.hpp"
#include "mcpmix/featspace.hpp"
#include "mcpmix/gradcheck.hpp"
#include "mcpmix/mixer.hpp"
#include "mcpmix/rla.hpp"
#include "mcpmix/trainloop.hpp"
#include "metric_oracle.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace mcpmix;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

// Probe regression constants from the first seeded run (train set seed 1,
// 64 items; probe seeds 1..4, 100 draws, 8 anchors, hidden 8).
constexpr double kClassicalVariance = 0.08050038644964626;
constexpr double kClassicalFlipRate = 0.3390108155048551;
constexpr double kMcpmixVariance = 1.0107505576080392e-05;
constexpr double kMcpmixFlipRate = 0.0;

bool close(double got, double want) { return std::abs(got - want) <= 1e-9 * std::max(1.0, std::abs(want)); }

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != kExitOk) std::cerr << "command failed (" << code << "): " << args.front() << "\n" << err.str();
  return code;
}

class Acceptance {
 public:
  explicit Acceptance(fs::path work) : work_(std::move(work)) {}

  Verdict gradient_fidelity() {
    const auto t0 = Clock::now();
    GradCheckOptions opt;
    opt.gate_configs = 20;
    Verdict v;
    std::string parts;
    for (const auto& r : run_gradcheck(opt)) {
      v.pass = v.pass && r.passed(1e-5);
      parts += fmt::format(" {}={:.2e}", r.suite, r.max_rel_error);
    }
    const double t = seconds_since(t0);
    v.pass = v.pass && t < 60.0;
    v.detail = fmt::format("max rel err{} ({} gate configs) in {:.1f} s", parts, opt.gate_configs, t);
    return v;
  }

  Verdict schedule_endpoints() {
    RlaConfig cfg;
    cfg.tau0 = 0.8;
    cfg.total_epochs = 60;
    const GateState g;
    const auto gv = gate_values(g);
    bool ok = tau_schedule(cfg, 0) == 0.8 && tau_schedule(cfg, 30) == 0.4 && tau_schedule(cfg, 60) == 0.0;
    ok = ok && g.rho_max == 0.5 && g.s_max == 0.7 && gv.rho == 0.25 && gv.s == 0.35;
    const double r = 0.6;
    for (int t : {0, 12, 27, 45, 60}) {
      ok = ok && fixed_schedule(FixedSchedule::Cosine, r, t, 60) ==
                     r * 0.25 * (1.0 + std::cos(std::numbers::pi * (t / 60.0)));
    }
    return {ok, fmt::format("tau {}/{}/{}, rho(0)={} s(0)={}, cosine baseline exact at 5 epochs",
                            tau_schedule(cfg, 0), tau_schedule(cfg, 30), tau_schedule(cfg, 60), gv.rho, gv.s)};
  }

  Verdict hard_labels() {
    std::vector<PairedTriplet> pool;
    for (std::uint64_t i = 0; i < 32; ++i) pool.push_back(generate_triplet(GenConfig{}, {300, i}));
    const auto t0 = Clock::now();
    Rng rng({301, 0});
    bool ok = true;
    for (int k = 0; k < 10000 && ok; ++k) {
      const auto& t = pool[rng.below(pool.size())];
      const auto m = mcpmix::mcpmix(t, rng.uniform());
      ok = m.label == t.mask;
      for (auto b : m.label.data()) ok = ok && (b == 0 || b == 1);
    }
    std::size_t classical = 0;
    for (int k = 0; k < 1000 && ok; ++k) {
      const auto& a = pool[rng.below(pool.size())];
      const auto& b = pool[rng.below(pool.size())];
      if (a.mask == b.mask) continue;
      double lambda = rng.uniform();
      if (lambda == 0.0) continue;
      const auto [img, label] = classical_mixup(a.real, a.mask, b.real, b.mask, lambda);
      bool fractional = false;
      for (double y : label.data()) fractional = fractional || (y > 0.0 && y < 1.0);
      ok = fractional;
      ++classical;
    }
    const double t = seconds_since(t0);
    return {ok && t < 10.0,
            fmt::format("10000 MCPMix draws hard and equal to source; {} misaligned classical draws fractional; {:.2f} s",
                        classical, t)};
  }

  Verdict metric_oracle() {
    const auto t0 = Clock::now();
    Rng rng({302, 0});
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      const auto h = 1 + rng.below(24), w = 1 + rng.below(24);
      const auto pred = mcpmix::testing::random_mask(h, w, rng);
      const auto gt = mcpmix::testing::random_mask(h, w, rng);
      const auto got = metric_row_values(evaluate_pair(pred, gt));
      const auto want = mcpmix::testing::brute_row(pred, gt);
      for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    }
    const BinaryMask dice_gt(1, 4, {1, 1, 0, 0}), dice_pred(1, 4, {1, 0, 0, 0});
    const bool dice = region_metrics(confusion(dice_pred, dice_gt)).dsc == 100.0 * 2.0 / 3.0;
    const bool hd = hd95(BinaryMask(1, 5, {1, 0, 0, 0, 0}), BinaryMask(1, 5, {0, 0, 0, 1, 0})) == 3.0;
    std::vector<std::uint8_t> a(256, 0), b(256, 0);
    for (int y = 4; y < 10; ++y)
      for (int x = 4; x < 10; ++x) {
        a[y * 16 + x] = 1;
        b[(y + 1) * 16 + x] = 1;
      }
    const bool bf1 = boundary_prf(BinaryMask(16, 16, b), BinaryMask(16, 16, a), 2.0).f1 == 100.0;
    const double t = seconds_since(t0);
    return {worst <= 1e-9 && dice && hd && bf1 && t < 60.0,
            fmt::format("200 pairs max |diff| {:.2e}; DSC=2/3 {}, HD95=3 {}, shifted B-F1=100 {}; {:.2f} s", worst,
                        dice ? "ok" : "no", hd ? "ok" : "no", bf1 ? "ok" : "no", t)};
  }

  Verdict mmd_properties() {
    const auto t0 = Clock::now();
    Rng rng({303, 0});
    auto cloud = [&](std::size_t n, std::size_t d) {
      FeatureCloud c{n, d, std::vector<double>(n * d)};
      for (auto& v : c.rows) v = rng.normal();
      return c;
    };
    double min_value = 1.0, asym = 0.0, self = 0.0, singleton = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
      const auto x = cloud(1 + rng.below(8), 6), y = cloud(1 + rng.below(8), 6);
      const double bw = 0.5 + 2.0 * rng.uniform();
      min_value = std::min(min_value, mmd(x, y, bw));
      asym = std::max(asym, std::abs(mmd(x, y, bw) - mmd(y, x, bw)));
      self = std::max(self, std::abs(mmd_squared(x, x, bw)));
      const auto u = cloud(1, 6), v = cloud(1, 6);
      double d2 = 0.0;
      for (std::size_t q = 0; q < 6; ++q) d2 += (u.rows[q] - v.rows[q]) * (u.rows[q] - v.rows[q]);
      singleton = std::max(singleton, std::abs(mmd_squared(u, v, bw) - (2.0 - 2.0 * std::exp(-d2 / (2 * bw * bw)))));
    }
    const double t = seconds_since(t0);
    return {min_value >= 0.0 && asym <= 1e-12 && self <= 1e-12 && singleton <= 1e-12 && t < 10.0,
            fmt::format("min {:.3g}, max asymmetry {:.2e}, max MMD^2(X,X) {:.2e}, singleton err {:.2e}; {:.2f} s",
                        min_value, asym, self, singleton, t)};
  }

  Verdict probe() {
    ensure_data();
    const auto t0 = Clock::now();
    const auto manifest = load_manifest(work_ / "train" / kManifestFileName);
    const std::vector<std::uint64_t> seeds{1, 2, 3, 4};
    const auto rep = gradient_instability_probe(manifest, seeds, ProbeConfig{});
    const double t = seconds_since(t0);
    const bool directional = rep.classical.gradient_variance > rep.mcpmix.gradient_variance &&
                             rep.classical.sign_flip_rate > rep.mcpmix.sign_flip_rate;
    const bool pinned = close(rep.classical.gradient_variance, kClassicalVariance) &&
                        close(rep.classical.sign_flip_rate, kClassicalFlipRate) &&
                        close(rep.mcpmix.gradient_variance, kMcpmixVariance) &&
                        close(rep.mcpmix.sign_flip_rate, kMcpmixFlipRate);
    return {directional && pinned && t < 120.0,
            fmt::format("variance {:.6f} vs {:.3g}, sign flips {:.4f} vs {:.4f} (classical vs MCPMix), "
                        "pinned {}; {:.1f} s",
                        rep.classical.gradient_variance, rep.mcpmix.gradient_variance, rep.classical.sign_flip_rate,
                        rep.mcpmix.sign_flip_rate, pinned ? "match" : "DIFFER", t)};
  }

  Verdict schedule_study() {
    ensure_data();
    const fs::path out = work_ / "compare";
    fs::remove_all(out);
    const auto t0 = Clock::now();
    const int code = cli({"compare", "--manifest", (work_ / "train" / kManifestFileName).string(), "--test-manifest",
                          (work_ / "test" / kManifestFileName).string(), "--modes", "rla,stepwise,cosine-fixed,none",
                          "--seeds", "1,2,3,4", "--out", out.string()});
    const double t = seconds_since(t0);
    if (code != kExitOk) return {false, "compare command failed"};
    compare_done_ = true;

    std::map<std::string, double> miou;
    std::istringstream csv(mcpmix::testing::slurp(out / "compare.csv"));
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      const auto c3 = line.find(',', c2 + 1);
      miou[line.substr(0, c1)] = std::stod(line.substr(c2 + 1, c3 - c2 - 1));
    }

    // Mean absolute deviation of the logged s_t from the cosine prior.
    double min_mad = INFINITY;
    RlaConfig rla;
    for (int seed = 1; seed <= 4; ++seed) {
      const auto log = read_train_log(out / "runs" / fmt::format("rla_seed{}", seed) / "train_log.csv");
      double acc = 0.0;
      for (const auto& r : log) acc += std::abs(r.s - prior_schedules(rla, r.epoch).s);
      min_mad = std::min(min_mad, acc / static_cast<double>(log.size()));
    }
    const bool ok = t < 900.0 && miou["rla"] >= miou["none"] && min_mad > 0.0;
    return {ok, fmt::format("mean mIoU rla {:.4f} stepwise {:.4f} cosine-fixed {:.4f} none {:.4f}; "
                            "min s_t deviation from prior {:.4f}; {:.0f} s",
                            miou["rla"], miou["stepwise"], miou["cosine-fixed"], miou["none"], min_mad, t)};
  }

  Verdict distribution_trend() {
    ensure_data();
    fs::path dist = work_ / "compare" / "runs" / "rla_seed1" / "distribution.csv";
    if (!compare_done_) {
      const fs::path out = work_ / "rla_seed1";
      if (cli({"train", "--manifest", (work_ / "train" / kManifestFileName).string(), "--seed", "1", "--out",
               out.string()}) != kExitOk) {
        return {false, "train command failed"};
      }
      dist = out / "distribution.csv";
    }
    const auto series = track_distribution(read_distribution(dist));
    std::string text;
    for (double v : series) text += fmt::format(" {:.4f}", v);
    return {series.back() <= series.front(), fmt::format("rla seed 1 centroid distance:{}", text)};
  }

  Verdict determinism() {
    const fs::path root = work_ / "determinism";
    fs::remove_all(root);
    const std::string gen = (root / "gen.json").string();
    fs::create_directories(root);
    {
      std::ofstream(gen) << nlohmann::json(mcpmix::testing::tiny_config(32)).dump();
    }
    bool ok = true;
    for (const char* rep : {"a", "b"}) {
      const fs::path d = root / rep;
      const std::string data = (d / "data").string(), test = (d / "test").string();
      // Inputs of the second pass point at the first pass's data, so the
      // commands see the same flags.
      const std::string in_manifest = (root / "a" / "data" / kManifestFileName).string();
      const std::string in_test = (root / "a" / "test" / kManifestFileName).string();
      ok = ok && cli({"datagen", "--config", gen, "--n", "8", "--seed", "1", "--out", data}) == kExitOk;
      ok = ok && cli({"datagen", "--config", gen, "--n", "4", "--seed", "2", "--out", test}) == kExitOk;
      const std::vector<std::string> small{"--epochs", "4", "--batch-size", "4", "--hidden", "4", "--probe-items", "4"};
      auto with = [&](std::vector<std::string> head) {
        head.insert(head.end(), small.begin(), small.end());
        return head;
      };
      ok = ok && cli(with({"train", "--manifest", in_manifest, "--seed", "3", "--out", (d / "train").string()})) == kExitOk;
      ok = ok && cli(with({"train", "--manifest", in_manifest, "--mode", "classical-mixup", "--seed", "3", "--out",
                           (d / "classical").string()})) == kExitOk;
      ok = ok && cli({"eval", "--checkpoint", (root / "a" / "train" / "checkpoint").string(), "--manifest", in_test,
                      "--out", (d / "eval").string()}) == kExitOk;
      ok = ok && cli({"report", "--run", (root / "a" / "train").string(), "--out", (d / "report").string()}) == kExitOk;
      ok = ok && cli(with({"compare", "--manifest", in_manifest, "--test-manifest", in_test, "--modes",
                           "rla,stepwise,none", "--seeds", "1,2", "--out", (d / "compare").string()})) == kExitOk;
      ok = ok && cli({"probe", "--manifest", in_manifest, "--seeds", "1", "--draws", "20", "--hidden", "4", "--out",
                      (d / "probe").string()}) == kExitOk;
    }
    if (!ok) return {false, "a command failed"};

    // Every data file except the run manifests, which name their own output
    // directory.
    std::size_t compared = 0, differing = 0;
    std::string first_diff;
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
      if (!e.is_regular_file() || e.path().filename() == "run.json") continue;
      const auto rel = fs::relative(e.path(), root / "a");
      const auto other = root / "b" / rel;
      ++compared;
      if (!fs::exists(other) || mcpmix::testing::slurp(e.path()) != mcpmix::testing::slurp(other)) {
        ++differing;
        if (first_diff.empty()) first_diff = rel.string();
      }
    }
    return {differing == 0 && compared > 0,
            fmt::format("{} CSV/SVG/JSON/checkpoint files compared, {} differ{}", compared, differing,
                        first_diff.empty() ? "" : " (first: " + first_diff + ")")};
  }

 private:
  // Desk-scale data: 64 training and 16 held-out triplets of 64x64x3.
  void ensure_data() {
    if (data_ready_) return;
    const bool ok =
        cli({"datagen", "--n", "64", "--seed", "1", "--out", (work_ / "train").string()}) == kExitOk &&
        cli({"datagen", "--n", "16", "--seed", "2", "--out", (work_ / "test").string()}) == kExitOk;
    if (!ok) throw std::runtime_error("datagen failed");
    data_ready_ = true;
  }

  fs::path work_;
  bool data_ready_ = false;
  bool compare_done_ = false;
};

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "mcpmix_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--work") == 0 && i + 1 < argc) {
      work = argv[++i];
    } else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: mcpmix_acceptance [--work DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  fs::remove_all(work);
  fs::create_directories(work);

  Acceptance a(work);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient fidelity", [&] { return a.gradient_fidelity(); }},
      {"schedule endpoints", [&] { return a.schedule_endpoints(); }},
      {"hard-label invariance", [&] { return a.hard_labels(); }},
      {"metric oracle equivalence", [&] { return a.metric_oracle(); }},
      {"MMD properties", [&] { return a.mmd_properties(); }},
      {"boundary gradient instability", [&] { return a.probe(); }},
      {"schedule comparison", [&] { return a.schedule_study(); }},
      {"feature distribution trend", [&] { return a.distribution_trend(); }},
      {"determinism", [&] { return a.determinism(); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << fmt::format("{} [{}] {}: {}", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail)
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
