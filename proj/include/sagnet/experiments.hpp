#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sagnet/network.hpp"
#include "sagnet/synthdata.hpp"
#include "sagnet/training.hpp"

namespace sagnet {

// Component variants mirroring the ablation axes: the full method, the
// method without content-biased learning (SR replaced by identity), the
// method without adversarial style-biased learning (style head untrained),
// and the plain pooled-training baseline.
enum class Variant { full, no_cbl, no_asbl, baseline };

enum class PlanKind {
  bias_sweep,
  stage_ablation,
  multi_source_dg,
  single_source_dg,
  unlabeled_extension,
  component_ablation,
};

std::string variant_name(Variant v);
Variant variant_from_string(const std::string& s);
std::string plan_kind_name(PlanKind k);
PlanKind plan_kind_from_string(const std::string& s);

struct Cell {
  std::string id;
  PlanKind kind = PlanKind::multi_source_dg;
  Variant variant = Variant::full;
  double lambda_adv = 0.1;
  int stage = 3;
  std::uint64_t seed = 0;
  int target_domain = 3;
  int source_domain = 0;
  bool use_unlabeled = false;
};

// A declarative experiment grid. Cells are the cross product of variants,
// lambda values, stages and seeds; each cell derives its own rng substreams
// (data/init/train/eval) from its grid seed, so cells that share a seed pair
// on identical data and initialization.
struct ExperimentPlan {
  int schema_version = 1;
  PlanKind kind = PlanKind::multi_source_dg;
  std::vector<Variant> variants = {Variant::full};
  std::vector<double> lambda_advs = {0.1};
  std::vector<int> stages = {3};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int target_domain = 3;
  int source_domain = 0;  // single-source protocol only
  bool use_unlabeled_target = false;
  int stimuli_per_pair = 6;
  int max_probe_features = 256;
  StyleShiftSpec data_spec;
  StageCNNConfig net;
  TrainConfig train_base;
  std::string out_dir;

  nlohmann::json to_json() const;
  static ExperimentPlan from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static ExperimentPlan load(const std::string& path);

  std::vector<Cell> cells() const;
};

// One experiment row; reproducible bitwise from its cell id and seed.
struct MetricsRecord {
  std::string cell_id;
  std::string kind;
  std::string variant;
  double lambda_adv = 0;
  int stage = 3;
  std::uint64_t seed = 0;
  int target_domain = 3;
  bool use_unlabeled = false;
  double in_domain_accuracy = 0;
  double target_accuracy = 0;
  double shape_accuracy = 0;
  double texture_accuracy = 0;
  std::optional<double> shape_bias;
  double d_a = 0;
  double epsilon = 0;
  double final_loss_content = 0;
  double first_loss_unl = 0;
  double final_loss_unl = 0;
  std::string trace_path;
  bool failed = false;
  std::string error;

  nlohmann::json to_json() const;
  static MetricsRecord from_json(const nlohmann::json& j);
};

// Result of one trained cell, exposed for callers that want the model too.
struct CellResult {
  MetricsRecord record;
  ModelBundle<float> model;
};

CellResult run_cell(const ExperimentPlan& plan, const Cell& cell, const std::string& out_dir);

// Executes every cell not yet present in <out_dir>/records.jsonl, appending
// records atomically (flock-serialized, one JSON object per line). Cell
// failures are recorded with a diagnostic and the plan continues. Returns
// all records, including pre-existing ones.
std::vector<MetricsRecord> run_plan(const ExperimentPlan& plan, int jobs = 1,
                                    const std::string& out_dir_override = "");

std::string resolve_out_dir(const ExperimentPlan& plan, const std::string& override_dir);

std::vector<MetricsRecord> load_records(const std::string& records_path);
void append_record(const std::string& records_path, const MetricsRecord& record);

// One-sided exact sign test: probability of >= wins successes among
// wins+losses fair coin flips. Ties are dropped by the caller.
double sign_test_p(int wins, int losses);

struct SummaryRow {
  std::string variant;
  double lambda_adv = 0;
  int stage = 3;
  int target_domain = 3;
  bool use_unlabeled = false;
  int n_seeds = 0;
  bool std_flagged = false;  // fewer than 2 seeds: std not estimable
  double in_domain_mean = 0, in_domain_std = 0;
  double target_mean = 0, target_std = 0;
  double shape_bias_mean = 0, shape_bias_std = 0;
  int shape_bias_n = 0;
  double d_a_mean = 0, d_a_std = 0;
};

struct TrendTest {
  std::string metric;
  std::string direction;  // "increasing" or "decreasing"
  int wins = 0, losses = 0, ties = 0;
  double p_value = 1.0;
  bool means_ordered = false;
};

struct Summary {
  std::vector<SummaryRow> rows;
  std::vector<TrendTest> trends;
};

// Aggregates per grid cell group (variant, lambda, stage, target, unlabeled)
// over seeds; pure function of the record set. For groups differing only in
// lambda_adv, runs paired sign tests for shape bias increasing and proxy
// A-distance decreasing across the lambda grid.
Summary summarize(const std::vector<MetricsRecord>& records);

void write_summary_csv(const Summary& summary, const std::string& path);
void write_plot_data(const Summary& summary, const std::string& path);

}  // namespace sagnet
