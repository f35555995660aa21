#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcpmix/boundary_metrics.hpp"
#include "mcpmix/error.hpp"
#include "mcpmix/featspace.hpp"
#include "mcpmix/rla.hpp"
#include "mcpmix/segnet.hpp"
#include "mcpmix/synthgen.hpp"

namespace mcpmix {

enum class TrainMode { Rla, Stepwise, CosineFixed, None, ClassicalMixup };

std::string to_string(TrainMode mode);
/// Accepts rla, stepwise, cosine-fixed, none, classical-mixup.
TrainMode parse_train_mode(const std::string& name);

struct TrainConfig {
  std::string manifest;
  /// Held-out set used by schedule_compare.
  std::string test_manifest;
  int epochs = 60;
  /// Extra epochs after annealing ends; schedules stay at their t = T value.
  int extension_epochs = 0;
  std::size_t batch_size = 8;
  double lr = 0.5;
  double weight_decay = 1e-4;
  std::size_t hidden = 8;
  RlaConfig rla;
  TrainMode mode = TrainMode::Rla;
  std::uint64_t seed = 1;
  /// Seed of the frozen feature extractor; shared by every run so that
  /// discrepancies are measured in the same space.
  std::uint64_t extractor_seed = 0;
  ExtractorConfig extractor;
  /// Items (taken from the head of the manifest, stored synthetics) used for
  /// the centroid-distance checkpoints.
  std::size_t probe_items = 16;
  /// Output directory for train_log.csv, distribution.csv and checkpoint/.
  /// Empty means keep everything in memory.
  std::string out_dir;
  /// Log path; defaults to <out_dir>/train_log.csv.
  std::string log_path;
  /// Fill the wall_time column. Off by default so logs are byte-stable.
  bool record_wall_time = false;

  /// Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct TrainLogRecord {
  int epoch = 0;
  int batch = 0;
  double s = 0.0;
  double rho = 0.0;
  double d = 0.0;
  double tau = 0.0;
  double l_real = 0.0;
  double l_mix = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  double centroid_distance = 0.0;
  double wall_time = 0.0;
};

const std::vector<std::string>& train_log_columns();
void write_train_log(const std::filesystem::path& path, std::span<const TrainLogRecord> log);
/// Throws IoError on a missing file, wrong header, ragged or empty body.
std::vector<TrainLogRecord> read_train_log(const std::filesystem::path& path);

/// Centroid distance between mixed and real probe features after `epoch`.
struct DistributionPoint {
  int epoch = 0;
  double s = 0.0;
  double centroid_distance = 0.0;
};

void write_distribution(const std::filesystem::path& path, std::span<const DistributionPoint> points);
std::vector<DistributionPoint> read_distribution(const std::filesystem::path& path);

/// How often train() reached into each collaborating module.
struct CallCounters {
  std::size_t mixer = 0;
  std::size_t featspace = 0;
  std::size_t rla = 0;
};

struct TrainResult {
  SegModel model;
  std::vector<TrainLogRecord> log;
  std::vector<DistributionPoint> distribution;
  GateState final_gate;
  double bandwidth = 0.0;
  double tau0 = 0.0;
  /// Initial draw r of the fixed baselines (unused otherwise).
  double fixed_r = 0.0;
  CallCounters calls;
};

/// Raised when a batch produces a non-finite loss. The log written so far,
/// including the offending record, is kept.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, TrainLogRecord record)
      : Error(what), record_(record) {}
  const TrainLogRecord& record() const noexcept { return record_; }

 private:
  TrainLogRecord record_;
};

/// Everything one MCPMix batch step needs, evaluated at fixed parameters.
struct MixedBatchOutcome {
  LossBreakdown loss;
  GateGradients gate_grads;
  std::vector<double> theta_grad;
  /// <dL_mix/dI_mix, I_s - I_r> and <dD/dI_mix, I_s - I_r> over the batch.
  double mix_dot = 0.0;
  double mmd_dot = 0.0;
  double centroid_distance = 0.0;
};

/// Mix every triplet at the gate's s, run both streams through the model,
/// measure D between mixed and real features, and assemble the objective
/// and all gradients. Losses are batch means.
MixedBatchOutcome rla_batch(const SegModel& model, const FrozenExtractor& extractor, double bandwidth,
                            std::span<const PairedTriplet> batch, const GateState& gate,
                            const RlaConfig& cfg, double t);

/// Objective only (no gradients); used by finite-difference checks.
LossBreakdown rla_batch_objective(const SegModel& model, const FrozenExtractor& extractor,
                                  double bandwidth, std::span<const PairedTriplet> batch,
                                  const GateState& gate, const RlaConfig& cfg, double t);

/// Runs the training loop. Deterministic in cfg.
TrainResult train(const TrainConfig& cfg);

/// Epochs at which the distribution checkpoints are taken: round(k T / 8),
/// k = 0..8.
std::vector<int> checkpoint_epochs(int total_epochs);

/// Centroid-distance series of a finished run. Throws if the run did not
/// record all nine checkpoints.
std::vector<double> track_distribution(const TrainResult& run);
std::vector<double> track_distribution(std::span<const DistributionPoint> points);

struct EvalResult {
  std::vector<MetricRow> rows;
  MetricRow mean;
};

/// Thresholds the model's probabilities on the real images (p >= threshold
/// is foreground) and scores them against the masks.
EvalResult evaluate(const SegModel& model, const DatasetManifest& manifest, double threshold = 0.5);
/// Scores given predictions (one per manifest item) against the masks.
EvalResult evaluate_predictions(std::span<const BinaryMask> predictions, const DatasetManifest& manifest);
void write_eval_csv(const std::filesystem::path& path, const EvalResult& result);

struct CompareRow {
  TrainMode mode;
  std::size_t runs = 0;
  std::vector<double> mean;  // per metric_columns()
  std::vector<double> stddev;
};

struct CompareRun {
  TrainMode mode;
  std::uint64_t seed;
  TrainResult train;
  EvalResult eval;
};

struct CompareResult {
  std::vector<CompareRow> rows;
  std::vector<CompareRun> runs;
};

/// Trains every (mode, seed), evaluates on base.test_manifest and reduces
/// each metric to mean and sample standard deviation over seeds. With a
/// non-empty base.out_dir, every run writes into <out_dir>/runs/<mode>_seed<k>.
CompareResult schedule_compare(const TrainConfig& base, std::span<const TrainMode> modes,
                               std::span<const std::uint64_t> seeds);
void write_compare_csv(const std::filesystem::path& path, const CompareResult& result);
/// Aligned text table of the region metrics, mean +/- std.
std::string render_compare_table(const CompareResult& result);

struct RegimeStats {
  double mean_abs_gradient = 0.0;
  double gradient_variance = 0.0;
  double sign_flip_rate = 0.0;
  double fractional_target_fraction = 0.0;
  std::size_t samples = 0;
};

struct ProbeReport {
  RegimeStats classical;
  RegimeStats mcpmix;
  std::size_t draws = 0;
  std::size_t anchors = 0;
};

struct ProbeConfig {
  std::size_t draws = 100;
  std::size_t anchors = 8;
  std::size_t hidden = 8;
  double s_max = 0.7;
  double band_radius = 2.0;
};

/// Per-pixel logit gradient (p - target) of BCE at boundary-band pixels of
/// anchor masks, across repeated mixing draws: classical soft-label mixup
/// with a partner whose mask differs versus MCPMix with the hard mask.
/// The model is a seeded random SegModel, or `model` when given.
ProbeReport gradient_instability_probe(const DatasetManifest& manifest,
                                       std::span<const std::uint64_t> seeds, const ProbeConfig& cfg,
                                       const SegModel* model = nullptr);
nlohmann::json probe_to_json(const ProbeReport& report);

/// Shortest round-trip decimal form used in every CSV.
std::string format_number(double v);

}  // namespace mcpmix
