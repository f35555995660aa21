#include "mcpmix/trainloop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "mcpmix/mixer.hpp"

namespace mcpmix {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kExtractorStream = 0xFEA7;

// Children of the per-run root stream.
enum StreamSlot : std::uint64_t { kInit = 0, kShuffle = 1, kSynth = 2, kFixedR = 3, kMixup = 4 };

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(path.string(), "not a number: '" + s + "'");
  }
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path,
                                               const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::string line;
  if (!std::getline(in, line) || split_csv(line) != header) {
    throw IoError(path.string(), "unexpected header");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != header.size()) throw IoError(path.string(), "ragged row");
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw IoError(path.string(), "no rows");
  return rows;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  return out;
}

std::string join_numbers(std::span<const double> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_number(values[i]);
  }
  return out;
}

void add_into(std::vector<double>& acc, std::span<const double> v) {
  for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
}

std::vector<ImageTensor> reals_of(std::span<const PairedTriplet> batch) {
  std::vector<ImageTensor> out;
  out.reserve(batch.size());
  for (const auto& t : batch) out.push_back(t.real);
  return out;
}

// Sattolo's algorithm: a uniformly random single cycle, so no fixed points.
std::vector<std::size_t> derangement(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(p[i], p[rng.below(i)]);
  return p;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(p[i], p[rng.below(i + 1)]);
  return p;
}

struct BatchEval {
  LossBreakdown loss;
  GateGradients gate_grads;
  std::vector<double> theta_grad;
  double mix_dot = 0.0;
  double mmd_dot = 0.0;
  double centroid = 0.0;
};

// Shared body of the MCPMix batch step. With `gate` the objective comes from
// the gates and gate gradients are produced; otherwise rho and s are given.
BatchEval mixed_step(const SegModel& model, const FrozenExtractor& extractor, double bandwidth,
                     std::span<const PairedTriplet> batch, double rho, double s, const GateState* gate,
                     const RlaConfig& cfg, double t, CallCounters* calls) {
  if (batch.empty()) throw ShapeError("batch is empty");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<ImageTensor> mixed;
  mixed.reserve(batch.size());
  for (const auto& tr : batch) mixed.push_back(mcpmix(tr, s).image);
  if (calls) calls->mixer += batch.size();

  BatchEval out;
  const std::size_t np = model.params().size();
  std::vector<double> g_real(np, 0.0), g_mix(np, 0.0);
  double l_real = 0.0, l_mix = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto r = backward(model, batch[i].real, batch[i].mask);
    auto m = backward(model, mixed[i], batch[i].mask);
    l_real += r.loss;
    l_mix += m.loss;
    add_into(g_real, r.grads.params);
    add_into(g_mix, m.grads.params);
    if (gate) out.mix_dot += mix_input_dot(m.grads, batch[i]);
  }
  l_real *= inv_b;
  l_mix *= inv_b;
  out.mix_dot *= inv_b;

  const auto reals = reals_of(batch);
  const FeatureCloud fx = extract(extractor, mixed);
  const FeatureCloud fy = extract(extractor, reals);
  if (calls) ++calls->featspace;
  out.centroid = centroid_distance(fx, fy);
  double d = 0.0;
  if (gate) {
    const auto mg = mmd_gradient_from_features(mixed, fx, fy, extractor, bandwidth);
    d = mg.value;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      out.mmd_dot += dot_difference(mg.grad_x[i], batch[i].real, batch[i].synthetic);
    }
    out.loss = total_loss(l_real, l_mix, d, t, *gate, cfg);
    out.gate_grads = gate_gradients(l_real, l_mix, d, t, *gate, cfg, out.mix_dot, out.mmd_dot);
  } else {
    d = mmd(fx, fy, bandwidth);
    out.loss = assemble_loss(l_real, l_mix, d, t, rho, s, cfg);
  }
  if (calls) ++calls->rla;

  out.theta_grad.resize(np);
  for (std::size_t k = 0; k < np; ++k) {
    out.theta_grad[k] = ((1.0 - rho) * g_real[k] + rho * g_mix[k]) * inv_b;
  }
  return out;
}

struct RunContext {
  const TrainConfig& cfg;
  RlaConfig rla;
  GenConfig gen;
  std::vector<PairedTriplet> data;
  RngStream root;
  std::size_t channels = 0;
};

ImageTensor fresh_synthetic(const RunContext& ctx, int epoch, std::size_t item) {
  const RngStream st =
      rng_child(rng_child(rng_child(ctx.root, kSynth), static_cast<std::uint64_t>(epoch)), item);
  return synthesize_counterpart(ctx.data[item].real, ctx.data[item].mask, ctx.gen, st);
}

std::vector<std::vector<std::size_t>> epoch_batches(const RunContext& ctx, int epoch) {
  Rng rng(rng_child(rng_child(ctx.root, kShuffle), static_cast<std::uint64_t>(epoch)));
  const auto order = shuffled(ctx.data.size(), rng);
  std::vector<std::vector<std::size_t>> out;
  const std::size_t b = ctx.cfg.batch_size;
  for (std::size_t start = 0; start < order.size(); start += b) {
    const std::size_t end = std::min(order.size(), start + b);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<PairedTriplet> assemble_batch(const RunContext& ctx, int epoch,
                                          const std::vector<std::size_t>& idx, bool synth) {
  std::vector<PairedTriplet> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    PairedTriplet t;
    t.real = ctx.data[i].real;
    t.mask = ctx.data[i].mask;
    t.synthetic = synth ? fresh_synthetic(ctx, epoch, i) : ctx.data[i].real;
    out.push_back(std::move(t));
  }
  return out;
}

struct ClassicalPlan {
  std::vector<std::size_t> partner;
  std::vector<double> lambda;
};

ClassicalPlan classical_plan(const RunContext& ctx, int epoch) {
  Rng rng(rng_child(rng_child(ctx.root, kMixup), static_cast<std::uint64_t>(epoch)));
  ClassicalPlan plan;
  plan.partner = derangement(ctx.data.size(), rng);
  plan.lambda.resize(ctx.data.size());
  for (auto& l : plan.lambda) l = rng.uniform();
  return plan;
}

struct ClassicalBatch {
  std::vector<ImageTensor> images;
  std::vector<SoftMask> labels;
};

ClassicalBatch classical_batch(const RunContext& ctx, const ClassicalPlan& plan,
                               const std::vector<std::size_t>& idx, CallCounters& calls) {
  ClassicalBatch out;
  for (std::size_t i : idx) {
    const auto& a = ctx.data[i];
    const auto& b = ctx.data[plan.partner[i]];
    auto [img, lab] = classical_mixup(a.real, a.mask, b.real, b.mask, plan.lambda[i]);
    out.images.push_back(std::move(img));
    out.labels.push_back(std::move(lab));
  }
  calls.mixer += idx.size();
  return out;
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Rla: return "rla";
    case TrainMode::Stepwise: return "stepwise";
    case TrainMode::CosineFixed: return "cosine-fixed";
    case TrainMode::None: return "none";
    case TrainMode::ClassicalMixup: return "classical-mixup";
  }
  return "unknown";
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "rla") return TrainMode::Rla;
  if (name == "stepwise") return TrainMode::Stepwise;
  if (name == "cosine-fixed") return TrainMode::CosineFixed;
  if (name == "none") return TrainMode::None;
  if (name == "classical-mixup") return TrainMode::ClassicalMixup;
  throw ConfigError("unknown mode: " + name);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("TrainConfig: epochs must be at least 1");
  if (extension_epochs < 0) throw ConfigError("TrainConfig: extension_epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("TrainConfig: lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("TrainConfig: weight_decay must be non-negative");
  if (hidden < 1) throw ConfigError("TrainConfig: hidden must be at least 1");
  if (manifest.empty()) throw ConfigError("TrainConfig: manifest path is required");
  RlaConfig r = rla;
  r.total_epochs = epochs;
  r.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"manifest", cfg.manifest},
                     {"test_manifest", cfg.test_manifest},
                     {"epochs", cfg.epochs},
                     {"extension_epochs", cfg.extension_epochs},
                     {"batch_size", cfg.batch_size},
                     {"lr", cfg.lr},
                     {"weight_decay", cfg.weight_decay},
                     {"hidden", cfg.hidden},
                     {"rla", cfg.rla},
                     {"mode", to_string(cfg.mode)},
                     {"seed", cfg.seed},
                     {"extractor_seed", cfg.extractor_seed},
                     {"extractor",
                      {{"patch", cfg.extractor.patch},
                       {"stride", cfg.extractor.stride},
                       {"hidden", cfg.extractor.hidden},
                       {"dim", cfg.extractor.dim}}},
                     {"probe_items", cfg.probe_items},
                     {"out_dir", cfg.out_dir},
                     {"log_path", cfg.log_path},
                     {"record_wall_time", cfg.record_wall_time}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  const TrainConfig d;
  try {
    cfg.manifest = j.value("manifest", d.manifest);
    cfg.test_manifest = j.value("test_manifest", d.test_manifest);
    cfg.epochs = j.value("epochs", d.epochs);
    cfg.extension_epochs = j.value("extension_epochs", d.extension_epochs);
    cfg.batch_size = j.value("batch_size", d.batch_size);
    cfg.lr = j.value("lr", d.lr);
    cfg.weight_decay = j.value("weight_decay", d.weight_decay);
    cfg.hidden = j.value("hidden", d.hidden);
    cfg.rla = j.contains("rla") ? j.at("rla").get<RlaConfig>() : d.rla;
    cfg.mode = parse_train_mode(j.value("mode", to_string(d.mode)));
    cfg.seed = j.value("seed", d.seed);
    cfg.extractor_seed = j.value("extractor_seed", d.extractor_seed);
    cfg.extractor = d.extractor;
    if (j.contains("extractor")) {
      const auto& e = j.at("extractor");
      cfg.extractor.patch = e.value("patch", d.extractor.patch);
      cfg.extractor.stride = e.value("stride", d.extractor.stride);
      cfg.extractor.hidden = e.value("hidden", d.extractor.hidden);
      cfg.extractor.dim = e.value("dim", d.extractor.dim);
    }
    cfg.probe_items = j.value("probe_items", d.probe_items);
    cfg.out_dir = j.value("out_dir", d.out_dir);
    cfg.log_path = j.value("log_path", d.log_path);
    cfg.record_wall_time = j.value("record_wall_time", d.record_wall_time);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("TrainConfig: ") + e.what());
  }
}

std::string format_number(double v) { return fmt::format("{}", v); }

const std::vector<std::string>& train_log_columns() {
  static const std::vector<std::string> cols{"epoch",  "batch",  "s_t",     "rho_t",
                                             "D_t",    "tau_t",  "l_real",  "l_mix",
                                             "penalty", "total", "centroid_distance", "wall_time"};
  return cols;
}

void write_train_log(const fs::path& path, std::span<const TrainLogRecord> log) {
  auto out = open_out(path);
  const auto& cols = train_log_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : log) {
    const double vals[] = {r.s,     r.rho,   r.d,    r.tau, r.l_real, r.l_mix, r.penalty, r.total,
                           r.centroid_distance, r.wall_time};
    out << r.epoch << ',' << r.batch << ',' << join_numbers(vals) << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

std::vector<TrainLogRecord> read_train_log(const fs::path& path) {
  std::vector<TrainLogRecord> out;
  for (const auto& c : read_csv(path, train_log_columns())) {
    TrainLogRecord r;
    r.epoch = static_cast<int>(parse_double(c[0], path));
    r.batch = static_cast<int>(parse_double(c[1], path));
    r.s = parse_double(c[2], path);
    r.rho = parse_double(c[3], path);
    r.d = parse_double(c[4], path);
    r.tau = parse_double(c[5], path);
    r.l_real = parse_double(c[6], path);
    r.l_mix = parse_double(c[7], path);
    r.penalty = parse_double(c[8], path);
    r.total = parse_double(c[9], path);
    r.centroid_distance = parse_double(c[10], path);
    r.wall_time = parse_double(c[11], path);
    out.push_back(r);
  }
  return out;
}

namespace {
const std::vector<std::string> kDistributionColumns{"epoch", "s_t", "centroid_distance"};
}

void write_distribution(const fs::path& path, std::span<const DistributionPoint> points) {
  auto out = open_out(path);
  out << "epoch,s_t,centroid_distance\n";
  for (const auto& p : points) {
    out << p.epoch << ',' << format_number(p.s) << ',' << format_number(p.centroid_distance) << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

std::vector<DistributionPoint> read_distribution(const fs::path& path) {
  std::vector<DistributionPoint> out;
  for (const auto& c : read_csv(path, kDistributionColumns)) {
    out.push_back({static_cast<int>(parse_double(c[0], path)), parse_double(c[1], path),
                   parse_double(c[2], path)});
  }
  return out;
}

MixedBatchOutcome rla_batch(const SegModel& model, const FrozenExtractor& extractor, double bandwidth,
                            std::span<const PairedTriplet> batch, const GateState& gate,
                            const RlaConfig& cfg, double t) {
  const auto gv = gate_values(gate);
  auto e = mixed_step(model, extractor, bandwidth, batch, gv.rho, gv.s, &gate, cfg, t, nullptr);
  return {e.loss, e.gate_grads, std::move(e.theta_grad), e.mix_dot, e.mmd_dot, e.centroid};
}

LossBreakdown rla_batch_objective(const SegModel& model, const FrozenExtractor& extractor,
                                  double bandwidth, std::span<const PairedTriplet> batch,
                                  const GateState& gate, const RlaConfig& cfg, double t) {
  if (batch.empty()) throw ShapeError("batch is empty");
  const auto gv = gate_values(gate);
  std::vector<ImageTensor> mixed;
  double l_real = 0.0, l_mix = 0.0;
  for (const auto& tr : batch) {
    mixed.push_back(mcpmix(tr, gv.s).image);
    l_real += bce_loss(forward(model, tr.real), tr.mask);
    l_mix += bce_loss(forward(model, mixed.back()), tr.mask);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const auto reals = reals_of(batch);
  const double d = mmd(extract(extractor, mixed), extract(extractor, reals), bandwidth);
  return total_loss(l_real * inv_b, l_mix * inv_b, d, t, gate, cfg);
}

std::vector<int> checkpoint_epochs(int total_epochs) {
  std::vector<int> out;
  for (int k = 0; k <= 8; ++k) {
    out.push_back(static_cast<int>(std::lround(static_cast<double>(k) * total_epochs / 8.0)));
  }
  return out;
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  const auto manifest = load_manifest(cfg.manifest);
  RunContext ctx{cfg, cfg.rla, manifest.config, manifest.load_all(), {cfg.seed, 0}, 0};
  ctx.rla.total_epochs = cfg.epochs;
  if (ctx.data.empty()) throw ConfigError("train: manifest has no items");
  ctx.channels = ctx.data.front().real.channels();
  for (const auto& t : ctx.data) {
    if (!t.real.same_shape(ctx.data.front().real)) throw ShapeError("train: images differ in shape");
  }
  const TrainMode mode = cfg.mode;
  const bool mcp = mode == TrainMode::Rla || mode == TrainMode::Stepwise ||
                   mode == TrainMode::CosineFixed;
  const bool classical = mode == TrainMode::ClassicalMixup;
  if (classical && ctx.data.size() < 2) throw ConfigError("classical-mixup needs at least two items");
  const bool uses_features = mode != TrainMode::None;

  ExtractorConfig ec = cfg.extractor;
  ec.channels = ctx.channels;
  const FrozenExtractor extractor(ec, {cfg.extractor_seed, kExtractorStream});

  TrainResult res;
  res.model = SegModel::random(ctx.channels, cfg.hidden, rng_child(ctx.root, kInit));
  GateState gate{0.0, 0.0, ctx.rla.rho_max, ctx.rla.s_max};
  std::optional<FixedSchedule> fixed;
  if (mode == TrainMode::Stepwise) fixed = FixedSchedule::Stepwise;
  if (mode == TrainMode::CosineFixed) fixed = FixedSchedule::Cosine;
  if (fixed) res.fixed_r = Rng(rng_child(ctx.root, kFixedR)).uniform();

  auto s_at = [&](double t) {
    if (mode == TrainMode::Rla) return gate_values(gate).s;
    if (fixed) return fixed_schedule(*fixed, res.fixed_r, t, cfg.epochs);
    return 0.0;
  };
  auto rho_at = [&](double t) {
    if (mode == TrainMode::Rla) return gate_values(gate).rho;
    if (mode == TrainMode::None) return 0.0;
    return prior_schedules(ctx.rla, t).rho;
  };

  // Bandwidth from the first batch of epoch 1; tau0 from epoch 1 at the
  // initial mixing state unless given.
  if (uses_features) {
    const auto batches = epoch_batches(ctx, 1);
    const auto first = assemble_batch(ctx, 1, batches.front(), false);
    const auto reals = reals_of(first);
    res.bandwidth = median_bandwidth(extract(extractor, reals));
    ++res.calls.featspace;
    if (ctx.rla.tau0) {
      res.tau0 = *ctx.rla.tau0;
    } else {
      std::vector<double> ds;
      const auto plan = classical ? classical_plan(ctx, 1) : ClassicalPlan{};
      for (const auto& idx : batches) {
        const auto b = assemble_batch(ctx, 1, idx, mcp);
        std::vector<ImageTensor> mixed;
        if (classical) {
          mixed = classical_batch(ctx, plan, idx, res.calls).images;
        } else {
          for (const auto& tr : b) mixed.push_back(mcpmix(tr, s_at(1.0)).image);
          res.calls.mixer += b.size();
        }
        ds.push_back(mmd(extract(extractor, mixed), extract(extractor, reals_of(b)), res.bandwidth));
        ++res.calls.featspace;
      }
      std::sort(ds.begin(), ds.end());
      const std::size_t m = ds.size() / 2;
      res.tau0 = ds.size() % 2 ? ds[m] : 0.5 * (ds[m - 1] + ds[m]);
    }
    ctx.rla.tau0 = res.tau0;
  }

  // Distribution checkpoints on a fixed probe set with stored synthetics.
  const auto ckpts = checkpoint_epochs(cfg.epochs);
  const std::size_t n_probe = std::min(cfg.probe_items, ctx.data.size());
  std::vector<ImageTensor> probe_real;
  for (std::size_t i = 0; i < n_probe; ++i) probe_real.push_back(ctx.data[i].real);
  std::optional<FeatureCloud> probe_feats;
  auto checkpoint = [&](int epoch) {
    if (std::find(ckpts.begin(), ckpts.end(), epoch) == ckpts.end()) return;
    DistributionPoint p{epoch, 0.0, 0.0};
    if (mcp && n_probe > 0) {
      p.s = s_at(epoch);
      if (!probe_feats) probe_feats = extract(extractor, probe_real);
      std::vector<ImageTensor> mixed;
      for (std::size_t i = 0; i < n_probe; ++i) mixed.push_back(mcpmix(ctx.data[i], p.s).image);
      res.calls.mixer += n_probe;
      p.centroid_distance = centroid_distance(extract(extractor, mixed), *probe_feats);
      ++res.calls.featspace;
    }
    res.distribution.push_back(p);
  };
  checkpoint(0);

  const auto start = std::chrono::steady_clock::now();
  const fs::path log_path =
      !cfg.log_path.empty() ? fs::path(cfg.log_path)
                            : (cfg.out_dir.empty() ? fs::path() : fs::path(cfg.out_dir) / "train_log.csv");
  const int total_epochs = cfg.epochs + cfg.extension_epochs;
  const std::size_t np = res.model.params().size();

  for (int epoch = 1; epoch <= total_epochs; ++epoch) {
    const double t = epoch;
    const auto batches = epoch_batches(ctx, epoch);
    const auto plan = classical ? classical_plan(ctx, epoch) : ClassicalPlan{};
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      const auto batch = assemble_batch(ctx, epoch, idx, mcp);
      TrainLogRecord rec;
      rec.epoch = epoch;
      rec.batch = static_cast<int>(bi);
      std::vector<double> theta_grad;

      if (mcp) {
        const double rho = rho_at(t), s = s_at(t);
        const GateState* g = mode == TrainMode::Rla ? &gate : nullptr;
        auto e = mixed_step(res.model, extractor, res.bandwidth, batch, rho, s, g, ctx.rla, t, &res.calls);
        rec.s = s;
        rec.rho = rho;
        rec.d = e.loss.d;
        rec.tau = e.loss.tau;
        rec.l_real = e.loss.l_real;
        rec.l_mix = e.loss.l_mix;
        rec.penalty = e.loss.penalty;
        rec.total = e.loss.total;
        rec.centroid_distance = e.centroid;
        theta_grad = std::move(e.theta_grad);
        if (g && std::isfinite(e.loss.total)) gate = gate_step(gate, e.gate_grads, ctx.rla.gate_lr);
      } else {
        const double inv_b = 1.0 / static_cast<double>(batch.size());
        std::vector<double> g_real(np, 0.0), g_mix(np, 0.0);
        double l_real = 0.0, l_mix = 0.0;
        for (const auto& tr : batch) {
          auto r = backward(res.model, tr.real, tr.mask);
          l_real += r.loss;
          add_into(g_real, r.grads.params);
        }
        l_real *= inv_b;
        double rho = 0.0;
        if (classical) {
          rho = rho_at(t);
          const auto cb = classical_batch(ctx, plan, idx, res.calls);
          for (std::size_t i = 0; i < batch.size(); ++i) {
            auto m = backward(res.model, cb.images[i], cb.labels[i]);
            l_mix += m.loss;
            add_into(g_mix, m.grads.params);
          }
          l_mix *= inv_b;
          const FeatureCloud fx = extract(extractor, cb.images);
          const FeatureCloud fy = extract(extractor, reals_of(batch));
          ++res.calls.featspace;
          const auto lb = assemble_loss(l_real, l_mix, mmd(fx, fy, res.bandwidth), t, rho, 0.0, ctx.rla);
          ++res.calls.rla;
          rec.rho = rho;
          rec.d = lb.d;
          rec.tau = lb.tau;
          rec.l_mix = l_mix;
          rec.penalty = lb.penalty;
          rec.total = lb.total;
          rec.centroid_distance = centroid_distance(fx, fy);
        } else {
          rec.total = l_real;
        }
        rec.l_real = l_real;
        theta_grad.resize(np);
        for (std::size_t k = 0; k < np; ++k) {
          theta_grad[k] = ((1.0 - rho) * g_real[k] + rho * g_mix[k]) * inv_b;
        }
      }

      if (cfg.record_wall_time) {
        rec.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      }
      res.log.push_back(rec);
      const bool finite = std::isfinite(rec.total) &&
                          std::all_of(theta_grad.begin(), theta_grad.end(),
                                      [](double v) { return std::isfinite(v); });
      if (!finite) {
        if (!log_path.empty()) write_train_log(log_path, res.log);
        throw TrainingDiverged(fmt::format("non-finite loss at epoch {} batch {}", epoch, bi), rec);
      }
      try {
        res.model = sgd_step(res.model, theta_grad, cfg.lr, cfg.weight_decay);
      } catch (const DomainError&) {
        // The step overflowed a parameter.
        if (!log_path.empty()) write_train_log(log_path, res.log);
        throw TrainingDiverged(fmt::format("non-finite parameters after epoch {} batch {}", epoch, bi), rec);
      }
    }
    checkpoint(epoch);
  }
  res.final_gate = gate;

  if (!log_path.empty()) write_train_log(log_path, res.log);
  if (!cfg.out_dir.empty()) {
    const fs::path dir(cfg.out_dir);
    write_distribution(dir / "distribution.csv", res.distribution);
    save_checkpoint(dir / "checkpoint", res.model, cfg.seed);
  }
  return res;
}

std::vector<double> track_distribution(std::span<const DistributionPoint> points) {
  if (points.size() < 9) {
    throw DomainError(fmt::format("track_distribution: {} of 9 checkpoints recorded", points.size()));
  }
  std::vector<double> out;
  for (const auto& p : points) out.push_back(p.centroid_distance);
  return out;
}

std::vector<double> track_distribution(const TrainResult& run) {
  return track_distribution(std::span<const DistributionPoint>(run.distribution));
}

EvalResult evaluate_predictions(std::span<const BinaryMask> predictions, const DatasetManifest& manifest) {
  if (predictions.size() != manifest.items.size()) {
    throw ShapeError("evaluate: prediction count does not match manifest");
  }
  EvalResult res;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    res.rows.push_back(evaluate_pair(predictions[i], manifest.load_item(i).mask));
  }
  if (res.rows.empty()) throw DomainError("evaluate: manifest has no items");
  res.mean = mean_row(res.rows);
  return res;
}

EvalResult evaluate(const SegModel& model, const DatasetManifest& manifest, double threshold) {
  std::vector<BinaryMask> preds;
  for (std::size_t i = 0; i < manifest.items.size(); ++i) {
    preds.push_back(forward(model, manifest.load_item(i).real).threshold(threshold));
  }
  return evaluate_predictions(preds, manifest);
}

void write_eval_csv(const fs::path& path, const EvalResult& result) {
  auto out = open_out(path);
  out << "image";
  for (const auto& c : metric_columns()) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    out << i << ',' << join_numbers(metric_row_values(result.rows[i])) << '\n';
  }
  out << "mean," << join_numbers(metric_row_values(result.mean)) << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

CompareResult schedule_compare(const TrainConfig& base, std::span<const TrainMode> modes,
                               std::span<const std::uint64_t> seeds) {
  if (modes.empty() || seeds.empty()) throw ConfigError("schedule_compare: need at least one mode and seed");
  if (base.test_manifest.empty()) throw ConfigError("schedule_compare: test manifest is required");
  const auto test = load_manifest(base.test_manifest);
  CompareResult res;
  const std::size_t nm = metric_columns().size();
  for (TrainMode mode : modes) {
    std::vector<std::vector<double>> values;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.mode = mode;
      cfg.seed = seed;
      cfg.log_path.clear();
      if (!base.out_dir.empty()) {
        cfg.out_dir = (fs::path(base.out_dir) / "runs" / fmt::format("{}_seed{}", to_string(mode), seed)).string();
      }
      CompareRun run{mode, seed, train(cfg), {}};
      run.eval = evaluate(run.train.model, test);
      if (!cfg.out_dir.empty()) write_eval_csv(fs::path(cfg.out_dir) / "eval.csv", run.eval);
      values.push_back(metric_row_values(run.eval.mean));
      res.runs.push_back(std::move(run));
    }
    CompareRow row{mode, values.size(), std::vector<double>(nm, 0.0), std::vector<double>(nm, 0.0)};
    const double n = static_cast<double>(values.size());
    for (std::size_t k = 0; k < nm; ++k) {
      for (const auto& v : values) row.mean[k] += v[k];
      row.mean[k] /= n;
      if (values.size() > 1) {
        double ss = 0.0;
        for (const auto& v : values) ss += (v[k] - row.mean[k]) * (v[k] - row.mean[k]);
        row.stddev[k] = std::sqrt(ss / (n - 1.0));
      }
    }
    res.rows.push_back(std::move(row));
  }
  if (!base.out_dir.empty()) {
    write_compare_csv(fs::path(base.out_dir) / "compare.csv", res);
    auto out = open_out(fs::path(base.out_dir) / "compare.txt");
    out << render_compare_table(res);
  }
  return res;
}

void write_compare_csv(const fs::path& path, const CompareResult& result) {
  auto out = open_out(path);
  out << "mode,runs";
  for (const auto& c : metric_columns()) out << ',' << c << "_mean," << c << "_std";
  out << '\n';
  for (const auto& r : result.rows) {
    out << to_string(r.mode) << ',' << r.runs;
    for (std::size_t k = 0; k < r.mean.size(); ++k) {
      out << ',' << format_number(r.mean[k]) << ',' << format_number(r.stddev[k]);
    }
    out << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

std::string render_compare_table(const CompareResult& result) {
  static const std::vector<std::pair<std::string, std::string>> shown{
      {"miou", "mIoU"}, {"pa", "PA"},     {"recall", "Recall"}, {"precision", "Precision"},
      {"dsc", "DSC"},   {"hd95", "HD95"}, {"assd", "ASSD"},     {"biou_2", "BIoU"}};
  const auto& cols = metric_columns();
  std::vector<std::size_t> index;
  for (const auto& [key, _] : shown) {
    index.push_back(static_cast<std::size_t>(std::find(cols.begin(), cols.end(), key) - cols.begin()));
  }
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"mode", "runs"};
  for (const auto& [_, label] : shown) header.push_back(label);
  cells.push_back(header);
  for (const auto& r : result.rows) {
    std::vector<std::string> line{to_string(r.mode), std::to_string(r.runs)};
    for (std::size_t k : index) line.push_back(fmt::format("{:.2f} +/- {:.2f}", r.mean[k], r.stddev[k]));
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::string out;
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      out += c == 0 ? fmt::format("{:<{}}", line[c], width[c]) : fmt::format("  {:>{}}", line[c], width[c]);
    }
    out += '\n';
  }
  return out;
}

namespace {

struct Series {
  // coordinate key -> gradient sequence in draw order
  std::map<std::uint64_t, std::vector<double>> seq;
  std::size_t fractional = 0;
  std::size_t recorded = 0;
  double abs_sum = 0.0;
};

RegimeStats summarize(const Series& s) {
  RegimeStats out;
  out.samples = s.recorded;
  if (s.recorded == 0) return out;
  out.mean_abs_gradient = s.abs_sum / static_cast<double>(s.recorded);
  out.fractional_target_fraction = static_cast<double>(s.fractional) / static_cast<double>(s.recorded);
  double var_sum = 0.0;
  std::size_t var_n = 0, flips = 0, pairs = 0;
  for (const auto& [_, v] : s.seq) {
    if (v.size() < 2) continue;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double g : v) ss += (g - mean) * (g - mean);
    var_sum += ss / static_cast<double>(v.size());
    ++var_n;
    for (std::size_t k = 1; k < v.size(); ++k) {
      ++pairs;
      if (v[k] * v[k - 1] < 0.0) ++flips;
    }
  }
  if (var_n) out.gradient_variance = var_sum / static_cast<double>(var_n);
  if (pairs) out.sign_flip_rate = static_cast<double>(flips) / static_cast<double>(pairs);
  return out;
}

void record(Series& s, std::uint64_t key_base, const std::vector<std::size_t>& band,
            std::span<const double> prob, std::span<const double> target) {
  for (std::size_t p : band) {
    const double g = prob[p] - target[p];
    s.seq[key_base + p].push_back(g);
    s.abs_sum += std::abs(g);
    ++s.recorded;
    if (target[p] > 0.0 && target[p] < 1.0) ++s.fractional;
  }
}

}  // namespace

ProbeReport gradient_instability_probe(const DatasetManifest& manifest,
                                       std::span<const std::uint64_t> seeds, const ProbeConfig& cfg,
                                       const SegModel* model) {
  if (seeds.empty()) throw ConfigError("probe: at least one seed is required");
  if (cfg.draws < 1 || cfg.anchors < 1) throw ConfigError("probe: draws and anchors must be positive");
  if (!(cfg.s_max >= 0.0 && cfg.s_max <= 1.0)) throw ConfigError("probe: s_max must lie in [0,1]");
  const auto data = manifest.load_all();
  if (data.size() < 2) throw DomainError("probe: need at least two samples");

  // Anchors: leading items that have at least one partner with a different mask.
  std::vector<std::size_t> anchors;
  std::vector<std::vector<std::size_t>> partners;
  for (std::size_t i = 0; i < data.size() && anchors.size() < cfg.anchors; ++i) {
    std::vector<std::size_t> cand;
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (j != i && !(data[j].mask == data[i].mask)) cand.push_back(j);
    }
    if (!cand.empty()) {
      anchors.push_back(i);
      partners.push_back(std::move(cand));
    }
  }
  if (anchors.empty()) throw DomainError("probe: every mask is identical");

  std::vector<std::vector<std::size_t>> bands;
  for (std::size_t a : anchors) {
    const auto& m = data[a].mask;
    const auto field = distance_field(boundary_extract(m), m.height(), m.width());
    std::vector<std::size_t> band;
    for (std::size_t p = 0; p < field.data.size(); ++p) {
      if (field.data[p] <= cfg.band_radius) band.push_back(p);
    }
    bands.push_back(std::move(band));
  }

  const std::size_t channels = data.front().real.channels();
  const std::uint64_t pixels = data.front().mask.size();
  Series classical, mcp;
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    const RngStream root{seeds[si], 0};
    const SegModel net = model ? *model : SegModel::random(channels, cfg.hidden, rng_child(root, kInit));
    Rng rng(rng_child(root, 7));
    for (std::size_t k = 0; k < cfg.draws; ++k) {
      const std::size_t slot = k % anchors.size();
      const auto& a = data[anchors[slot]];
      const std::uint64_t key = (si * anchors.size() + slot) * pixels;

      const double s = rng.uniform(0.0, cfg.s_max);
      PairedTriplet t{a.real, synthesize_counterpart(a.real, a.mask, manifest.config, rng_child(root, 1000 + k)),
                      a.mask};
      const auto pm = forward(net, mcpmix(t, s).image);
      const auto hard = SoftMask::from_binary(a.mask);
      record(mcp, key, bands[slot], pm.data(), hard.data());

      const auto& cand = partners[slot];
      const auto& b = data[cand[rng.below(cand.size())]];
      const double lambda = rng.uniform();
      auto [img, lab] = classical_mixup(a.real, a.mask, b.real, b.mask, lambda);
      const auto pc = forward(net, img);
      record(classical, key, bands[slot], pc.data(), lab.data());
    }
  }
  return {summarize(classical), summarize(mcp), cfg.draws, anchors.size()};
}

nlohmann::json probe_to_json(const ProbeReport& report) {
  auto regime = [](const RegimeStats& r) {
    return nlohmann::json{{"mean_abs_gradient", r.mean_abs_gradient},
                          {"gradient_variance", r.gradient_variance},
                          {"sign_flip_rate", r.sign_flip_rate},
                          {"fractional_target_fraction", r.fractional_target_fraction},
                          {"samples", r.samples}};
  };
  return {{"draws", report.draws},
          {"anchors", report.anchors},
          {"classical", regime(report.classical)},
          {"mcpmix", regime(report.mcpmix)}};
}

}  // namespace mcpmix
