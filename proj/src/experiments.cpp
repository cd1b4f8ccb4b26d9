#include "sagnet/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "sagnet/evaluation.hpp"

namespace sagnet {

namespace fs = std::filesystem;

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_cbl: return "no_CBL";
    case Variant::no_asbl: return "no_ASBL";
    case Variant::baseline: return "baseline";
  }
  return "full";
}

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_CBL" || s == "no_cbl") return Variant::no_cbl;
  if (s == "no_ASBL" || s == "no_asbl") return Variant::no_asbl;
  if (s == "baseline") return Variant::baseline;
  throw std::invalid_argument("unknown variant: " + s);
}

std::string plan_kind_name(PlanKind k) {
  switch (k) {
    case PlanKind::bias_sweep: return "bias_sweep";
    case PlanKind::stage_ablation: return "stage_ablation";
    case PlanKind::multi_source_dg: return "multi_source_dg";
    case PlanKind::single_source_dg: return "single_source_dg";
    case PlanKind::unlabeled_extension: return "unlabeled_extension";
    case PlanKind::component_ablation: return "component_ablation";
  }
  return "multi_source_dg";
}

PlanKind plan_kind_from_string(const std::string& s) {
  for (PlanKind k : {PlanKind::bias_sweep, PlanKind::stage_ablation, PlanKind::multi_source_dg,
                     PlanKind::single_source_dg, PlanKind::unlabeled_extension,
                     PlanKind::component_ablation}) {
    if (plan_kind_name(k) == s) return k;
  }
  throw std::invalid_argument("unknown plan kind: " + s);
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

nlohmann::json spec_to_json(const StyleShiftSpec& s) {
  return {{"num_classes", s.num_classes},
          {"num_domains", s.num_domains},
          {"samples_per_class_per_domain", s.samples_per_class_per_domain},
          {"image_size", s.image_size},
          {"seed", s.seed},
          {"gain_spread", s.gain_spread},
          {"offset_spread", s.offset_spread},
          {"field_amp_max", s.field_amp_max},
          {"noise_min", s.noise_min},
          {"noise_max", s.noise_max},
          {"jitter_px", s.jitter_px},
          {"palette_jitter", s.palette_jitter},
          {"train_frac", s.train_frac},
          {"val_frac", s.val_frac},
          {"stimulus_noise", s.stimulus_noise}};
}

StyleShiftSpec spec_from_json(const nlohmann::json& j) {
  StyleShiftSpec s;
  s.num_classes = j.at("num_classes").get<int>();
  s.num_domains = j.at("num_domains").get<int>();
  s.samples_per_class_per_domain = j.at("samples_per_class_per_domain").get<int>();
  s.image_size = j.at("image_size").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.gain_spread = j.at("gain_spread").get<double>();
  s.offset_spread = j.at("offset_spread").get<double>();
  s.field_amp_max = j.at("field_amp_max").get<double>();
  s.noise_min = j.at("noise_min").get<double>();
  s.noise_max = j.at("noise_max").get<double>();
  s.jitter_px = j.at("jitter_px").get<int>();
  s.palette_jitter = j.at("palette_jitter").get<double>();
  s.train_frac = j.at("train_frac").get<double>();
  s.val_frac = j.at("val_frac").get<double>();
  s.stimulus_noise = j.at("stimulus_noise").get<double>();
  return s;
}

nlohmann::json net_to_json(const StageCNNConfig& c) {
  return {{"num_stages", c.num_stages},
          {"channels", c.channels},
          {"blocks_per_stage", c.blocks_per_stage},
          {"num_classes", c.num_classes},
          {"in_channels", c.in_channels},
          {"in_height", c.in_height},
          {"in_width", c.in_width},
          {"randomization_stage", c.randomization_stage},
          {"eps_norm", c.eps_norm},
          {"eps_stats", c.eps_stats}};
}

StageCNNConfig net_from_json(const nlohmann::json& j) {
  StageCNNConfig c;
  c.num_stages = j.at("num_stages").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.in_height = j.at("in_height").get<int>();
  c.in_width = j.at("in_width").get<int>();
  c.randomization_stage = j.at("randomization_stage").get<int>();
  c.eps_norm = j.at("eps_norm").get<double>();
  c.eps_stats = j.at("eps_stats").get<double>();
  return c;
}

nlohmann::json train_to_json(const TrainConfig& t) {
  return {{"lambda_adv", t.lambda_adv},
          {"lambda_unl", t.lambda_unl},
          {"lr", t.lr},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},
          {"total_iters", t.total_iters},
          {"seed", t.seed},
          {"log_every", t.log_every},
          {"style_randomization", t.style_randomization},
          {"style_pathway", t.style_pathway}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.lambda_adv = j.at("lambda_adv").get<double>();
  t.lambda_unl = j.at("lambda_unl").get<double>();
  t.lr = j.at("lr").get<double>();
  t.momentum = j.at("momentum").get<double>();
  t.weight_decay = j.at("weight_decay").get<double>();
  t.batch_size = j.at("batch_size").get<int>();
  t.total_iters = j.at("total_iters").get<int>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.log_every = j.at("log_every").get<int>();
  t.style_randomization = j.at("style_randomization").get<bool>();
  t.style_pathway = j.at("style_pathway").get<bool>();
  return t;
}

}  // namespace

nlohmann::json ExperimentPlan::to_json() const {
  nlohmann::json j;
  j["schema_version"] = schema_version;
  j["kind"] = plan_kind_name(kind);
  nlohmann::json vs = nlohmann::json::array();
  for (Variant v : variants) vs.push_back(variant_name(v));
  j["variants"] = vs;
  j["lambda_advs"] = lambda_advs;
  j["stages"] = stages;
  j["seeds"] = seeds;
  j["target_domain"] = target_domain;
  j["source_domain"] = source_domain;
  j["use_unlabeled_target"] = use_unlabeled_target;
  j["stimuli_per_pair"] = stimuli_per_pair;
  j["max_probe_features"] = max_probe_features;
  j["data_spec"] = spec_to_json(data_spec);
  j["net"] = net_to_json(net);
  j["train"] = train_to_json(train_base);
  j["out_dir"] = out_dir;
  return j;
}

ExperimentPlan ExperimentPlan::from_json(const nlohmann::json& j) {
  ExperimentPlan p;
  p.schema_version = j.at("schema_version").get<int>();
  if (p.schema_version != 1) {
    throw std::invalid_argument("plan: unsupported schema_version " + std::to_string(p.schema_version));
  }
  p.kind = plan_kind_from_string(j.at("kind").get<std::string>());
  p.variants.clear();
  for (const auto& v : j.at("variants")) p.variants.push_back(variant_from_string(v.get<std::string>()));
  p.lambda_advs = j.at("lambda_advs").get<std::vector<double>>();
  p.stages = j.at("stages").get<std::vector<int>>();
  p.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  p.target_domain = j.at("target_domain").get<int>();
  p.source_domain = j.at("source_domain").get<int>();
  p.use_unlabeled_target = j.at("use_unlabeled_target").get<bool>();
  p.stimuli_per_pair = j.at("stimuli_per_pair").get<int>();
  p.max_probe_features = j.at("max_probe_features").get<int>();
  p.data_spec = spec_from_json(j.at("data_spec"));
  p.net = net_from_json(j.at("net"));
  p.train_base = train_from_json(j.at("train"));
  p.out_dir = j.at("out_dir").get<std::string>();
  return p;
}

void ExperimentPlan::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("plan: cannot open " + path);
  f << to_json().dump(2) << "\n";
}

ExperimentPlan ExperimentPlan::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("plan: cannot open " + path);
  return from_json(nlohmann::json::parse(f));
}

std::vector<Cell> ExperimentPlan::cells() const {
  std::vector<Cell> out;
  for (Variant v : variants) {
    for (double lam : lambda_advs) {
      for (int stage : stages) {
        for (std::uint64_t seed : seeds) {
          Cell c;
          c.kind = kind;
          c.variant = v;
          c.lambda_adv = lam;
          c.stage = stage;
          c.seed = seed;
          c.target_domain = target_domain;
          c.source_domain = source_domain;
          c.use_unlabeled = use_unlabeled_target || kind == PlanKind::unlabeled_extension;
          std::ostringstream id;
          id << plan_kind_name(kind) << ":" << variant_name(v) << ":lam" << format_double(lam)
             << ":stage" << stage << ":seed" << seed << ":target" << target_domain;
          if (c.use_unlabeled) id << ":unl";
          c.id = id.str();
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

nlohmann::json MetricsRecord::to_json() const {
  nlohmann::json j;
  j["cell_id"] = cell_id;
  j["kind"] = kind;
  j["variant"] = variant;
  j["lambda_adv"] = lambda_adv;
  j["stage"] = stage;
  j["seed"] = seed;
  j["target_domain"] = target_domain;
  j["use_unlabeled"] = use_unlabeled;
  j["in_domain_accuracy"] = in_domain_accuracy;
  j["target_accuracy"] = target_accuracy;
  j["shape_accuracy"] = shape_accuracy;
  j["texture_accuracy"] = texture_accuracy;
  if (shape_bias.has_value()) {
    j["shape_bias"] = *shape_bias;
  } else {
    j["shape_bias"] = nullptr;
  }
  j["d_a"] = d_a;
  j["epsilon"] = epsilon;
  j["final_loss_content"] = final_loss_content;
  j["first_loss_unl"] = first_loss_unl;
  j["final_loss_unl"] = final_loss_unl;
  j["trace_path"] = trace_path;
  j["failed"] = failed;
  j["error"] = error;
  return j;
}

MetricsRecord MetricsRecord::from_json(const nlohmann::json& j) {
  MetricsRecord r;
  r.cell_id = j.at("cell_id").get<std::string>();
  r.kind = j.at("kind").get<std::string>();
  r.variant = j.at("variant").get<std::string>();
  r.lambda_adv = j.at("lambda_adv").get<double>();
  r.stage = j.at("stage").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.target_domain = j.at("target_domain").get<int>();
  r.use_unlabeled = j.at("use_unlabeled").get<bool>();
  r.in_domain_accuracy = j.at("in_domain_accuracy").get<double>();
  r.target_accuracy = j.at("target_accuracy").get<double>();
  r.shape_accuracy = j.at("shape_accuracy").get<double>();
  r.texture_accuracy = j.at("texture_accuracy").get<double>();
  if (!j.at("shape_bias").is_null()) r.shape_bias = j.at("shape_bias").get<double>();
  r.d_a = j.at("d_a").get<double>();
  r.epsilon = j.at("epsilon").get<double>();
  r.final_loss_content = j.at("final_loss_content").get<double>();
  r.first_loss_unl = j.at("first_loss_unl").get<double>();
  r.final_loss_unl = j.at("final_loss_unl").get<double>();
  r.trace_path = j.at("trace_path").get<std::string>();
  r.failed = j.at("failed").get<bool>();
  r.error = j.at("error").get<std::string>();
  return r;
}

namespace {

ImageSet take_first(const ImageSet& set, int cap) {
  if (set.n <= cap) return set;
  ImageSet out = set;
  out.n = cap;
  out.data.resize(static_cast<std::size_t>(cap) * set.image_stride());
  out.content_labels.resize(static_cast<std::size_t>(cap));
  out.domain_labels.resize(static_cast<std::size_t>(cap));
  if (!out.style_labels.empty()) out.style_labels.resize(static_cast<std::size_t>(cap));
  return out;
}

}  // namespace

CellResult run_cell(const ExperimentPlan& plan, const Cell& cell, const std::string& out_dir) {
  // Substreams derived from the grid seed: cells sharing a seed share data
  // and initialization, so lambda comparisons are paired.
  StyleShiftSpec spec = plan.data_spec;
  spec.seed = derive_stream(cell.seed, "data");
  const std::uint64_t init_seed = derive_stream(cell.seed, "init");
  const std::uint64_t train_seed = derive_stream(cell.seed, "train");
  Rng eval_rng(derive_stream(cell.seed, "eval"));

  SourceTarget data = cell.kind == PlanKind::single_source_dg
                          ? single_source(spec, cell.source_domain, cell.target_domain)
                          : holdout_domain(spec, cell.target_domain);

  StageCNNConfig net = plan.net;
  net.randomization_stage = cell.stage;
  net.num_classes = spec.num_classes;
  net.in_height = spec.image_size;
  net.in_width = spec.image_size;

  TrainConfig tc = plan.train_base;
  tc.seed = train_seed;
  switch (cell.variant) {
    case Variant::full:
      tc.style_randomization = true;
      tc.style_pathway = true;
      tc.lambda_adv = cell.lambda_adv;
      break;
    case Variant::no_cbl:
      tc.style_randomization = false;
      tc.style_pathway = true;
      tc.lambda_adv = cell.lambda_adv;
      break;
    case Variant::no_asbl:
      tc.style_randomization = true;
      tc.style_pathway = false;
      tc.lambda_adv = 0.0;
      break;
    case Variant::baseline:
      tc.style_randomization = false;
      tc.style_pathway = false;
      tc.lambda_adv = 0.0;
      break;
  }

  auto model = build_model<float>(net, init_seed);
  auto train_samples = data.source_train.to_samples();
  Samples<float> unl_samples;
  const bool with_unl = cell.use_unlabeled && tc.lambda_unl > 0.0;
  if (with_unl) {
    unl_samples = data.target_unlabeled.to_samples();
    unl_samples.labels.clear();  // the unlabeled pathway must not see labels
  }

  std::string trace_path;
  std::ofstream trace_file;
  if (!out_dir.empty()) {
    fs::create_directories(fs::path(out_dir) / "traces");
    std::string fname = cell.id;
    std::replace(fname.begin(), fname.end(), ':', '_');
    trace_path = (fs::path(out_dir) / "traces" / (fname + ".jsonl")).string();
    trace_file.open(trace_path);
  }

  MetricsRecord rec;
  rec.cell_id = cell.id;
  rec.kind = plan_kind_name(cell.kind);
  rec.variant = variant_name(cell.variant);
  rec.lambda_adv = tc.lambda_adv;
  rec.stage = cell.stage;
  rec.seed = cell.seed;
  rec.target_domain = cell.target_domain;
  rec.use_unlabeled = with_unl;
  rec.trace_path = trace_path;

  bool first_unl_seen = false;
  auto on_report = [&](const StepReport& r) {
    if (trace_file.is_open()) {
      nlohmann::json line = {{"iteration", r.iteration},
                             {"loss_content", r.loss_content},
                             {"loss_style", r.has_style ? nlohmann::json(r.loss_style) : nlohmann::json()},
                             {"loss_adv", r.has_adv ? nlohmann::json(r.loss_adv) : nlohmann::json()},
                             {"loss_unl", r.has_unl ? nlohmann::json(r.loss_unl) : nlohmann::json()},
                             {"lr", r.lr},
                             {"batch_accuracy", r.batch_accuracy}};
      trace_file << line.dump() << "\n";
    }
    rec.final_loss_content = r.loss_content;
    if (r.has_unl) {
      if (!first_unl_seen) {
        rec.first_loss_unl = r.loss_unl;
        first_unl_seen = true;
      }
      rec.final_loss_unl = r.loss_unl;
    }
  };

  train(model, train_samples, tc, with_unl ? &unl_samples : nullptr, on_report);

  rec.in_domain_accuracy = cross_domain_accuracy(model, data.source_val);
  rec.target_accuracy = cross_domain_accuracy(model, data.target_eval);

  auto stimuli = generate_cue_conflict(spec, plan.stimuli_per_pair);
  auto bias = bias_metrics(model, stimuli);
  rec.shape_accuracy = bias.shape_accuracy;
  rec.texture_accuracy = bias.texture_accuracy;
  rec.shape_bias = bias.shape_bias;

  auto fa = penultimate_features(model, take_first(data.source_val, plan.max_probe_features));
  auto fb = penultimate_features(model, take_first(data.target_eval, plan.max_probe_features));
  auto disc = proxy_a_distance(fa, fb, eval_rng);
  rec.d_a = disc.d_a;
  rec.epsilon = disc.epsilon;

  return {rec, std::move(model)};
}

std::string resolve_out_dir(const ExperimentPlan& plan, const std::string& override_dir) {
  if (!override_dir.empty()) return override_dir;
  if (!plan.out_dir.empty()) return plan.out_dir;
  const char* root = std::getenv("SAGNET_OUT_ROOT");
  const fs::path base = root != nullptr ? fs::path(root) : fs::path("sagnet-out");
  return (base / plan_kind_name(plan.kind)).string();
}

std::vector<MetricsRecord> load_records(const std::string& records_path) {
  std::vector<MetricsRecord> out;
  std::ifstream f(records_path);
  if (!f) return out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(MetricsRecord::from_json(nlohmann::json::parse(line)));
  }
  return out;
}

// Single write() under an exclusive flock, so concurrent plan processes can
// share one records file.
void append_record(const std::string& records_path, const MetricsRecord& record) {
  const std::string line = record.to_json().dump() + "\n";
  const int fd = ::open(records_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error("append_record: cannot open " + records_path);
  if (::flock(fd, LOCK_EX) != 0) {
    ::close(fd);
    throw std::runtime_error("append_record: cannot lock " + records_path);
  }
  const ssize_t written = ::write(fd, line.data(), line.size());
  ::flock(fd, LOCK_UN);
  ::close(fd);
  if (written != static_cast<ssize_t>(line.size())) {
    throw std::runtime_error("append_record: short write to " + records_path);
  }
}

std::vector<MetricsRecord> run_plan(const ExperimentPlan& plan, int jobs,
                                    const std::string& out_dir_override) {
  const std::string out_dir = resolve_out_dir(plan, out_dir_override);
  fs::create_directories(out_dir);
  const std::string records_path = (fs::path(out_dir) / "records.jsonl").string();

  auto existing = load_records(records_path);
  std::vector<Cell> todo;
  for (const auto& cell : plan.cells()) {
    const bool done = std::any_of(existing.begin(), existing.end(),
                                  [&](const MetricsRecord& r) { return r.cell_id == cell.id; });
    if (!done) todo.push_back(cell);
  }

  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&]() {
    for (;;) {
      Cell cell;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= todo.size()) return;
        cell = todo[next++];
      }
      MetricsRecord rec;
      try {
        rec = run_cell(plan, cell, out_dir).record;
      } catch (const std::exception& e) {
        rec = MetricsRecord{};
        rec.cell_id = cell.id;
        rec.kind = plan_kind_name(cell.kind);
        rec.variant = variant_name(cell.variant);
        rec.lambda_adv = cell.lambda_adv;
        rec.stage = cell.stage;
        rec.seed = cell.seed;
        rec.target_domain = cell.target_domain;
        rec.failed = true;
        rec.error = e.what();
      }
      std::lock_guard<std::mutex> lock(mu);
      append_record(records_path, rec);
      existing.push_back(rec);
    }
  };

  const int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(todo.size())));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(n_workers));
  for (int i = 0; i < n_workers; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  return existing;
}

double sign_test_p(int wins, int losses) {
  const int n = wins + losses;
  if (n == 0) return 1.0;
  // P(X >= wins) for X ~ Binomial(n, 1/2), exact.
  double p = 0.0;
  for (int k = wins; k <= n; ++k) {
    double logc = 0.0;
    for (int i = 1; i <= k; ++i) logc += std::log(static_cast<double>(n - k + i)) - std::log(static_cast<double>(i));
    p += std::exp(logc - n * std::log(2.0));
  }
  return std::min(1.0, p);
}

namespace {

struct GroupKey {
  std::string variant;
  double lambda_adv;
  int stage;
  int target_domain;
  bool use_unlabeled;

  bool operator<(const GroupKey& o) const {
    return std::tie(variant, lambda_adv, stage, target_domain, use_unlabeled) <
           std::tie(o.variant, o.lambda_adv, o.stage, o.target_domain, o.use_unlabeled);
  }
};

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0;
  sd = 0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double acc = 0;
  for (double x : v) acc += (x - mean) * (x - mean);
  sd = std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

Summary summarize(const std::vector<MetricsRecord>& records) {
  std::map<GroupKey, std::vector<const MetricsRecord*>> groups;
  for (const auto& r : records) {
    if (r.failed) continue;
    groups[{r.variant, r.lambda_adv, r.stage, r.target_domain, r.use_unlabeled}].push_back(&r);
  }

  Summary s;
  for (const auto& [key, recs] : groups) {
    SummaryRow row;
    row.variant = key.variant;
    row.lambda_adv = key.lambda_adv;
    row.stage = key.stage;
    row.target_domain = key.target_domain;
    row.use_unlabeled = key.use_unlabeled;
    row.n_seeds = static_cast<int>(recs.size());
    row.std_flagged = recs.size() < 2;
    std::vector<double> in_dom, target, bias, da;
    for (const auto* r : recs) {
      in_dom.push_back(r->in_domain_accuracy);
      target.push_back(r->target_accuracy);
      da.push_back(r->d_a);
      if (r->shape_bias.has_value()) bias.push_back(*r->shape_bias);
    }
    mean_std(in_dom, row.in_domain_mean, row.in_domain_std);
    mean_std(target, row.target_mean, row.target_std);
    mean_std(da, row.d_a_mean, row.d_a_std);
    mean_std(bias, row.shape_bias_mean, row.shape_bias_std);
    row.shape_bias_n = static_cast<int>(bias.size());
    s.rows.push_back(row);
  }

  // Paired trend tests across the lambda grid, within groups that share
  // everything but lambda_adv.
  std::map<std::tuple<std::string, int, int, bool>, std::vector<GroupKey>> lambda_families;
  for (const auto& [key, recs] : groups) {
    (void)recs;
    lambda_families[{key.variant, key.stage, key.target_domain, key.use_unlabeled}].push_back(key);
  }
  for (auto& [fam, keys] : lambda_families) {
    (void)fam;
    if (keys.size() < 2) continue;
    std::sort(keys.begin(), keys.end(),
              [](const GroupKey& a, const GroupKey& b) { return a.lambda_adv < b.lambda_adv; });
    auto run_trend = [&](const std::string& metric, bool increasing) {
      TrendTest t;
      t.metric = metric;
      t.direction = increasing ? "increasing" : "decreasing";
      t.means_ordered = true;
      std::vector<double> means;
      for (std::size_t lo = 0; lo < keys.size(); ++lo) {
        double m = 0;
        int cnt = 0;
        for (const auto* r : groups[keys[lo]]) {
          const double v = metric == "shape_bias" ? r->shape_bias.value_or(0.0) : r->d_a;
          m += v;
          ++cnt;
        }
        means.push_back(cnt > 0 ? m / cnt : 0.0);
      }
      for (std::size_t i = 0; i + 1 < means.size(); ++i) {
        if (increasing ? means[i + 1] <= means[i] : means[i + 1] >= means[i]) t.means_ordered = false;
      }
      for (std::size_t lo = 0; lo < keys.size(); ++lo) {
        for (std::size_t hi = lo + 1; hi < keys.size(); ++hi) {
          for (const auto* a : groups[keys[lo]]) {
            for (const auto* b : groups[keys[hi]]) {
              if (a->seed != b->seed) continue;
              const double va = metric == "shape_bias" ? a->shape_bias.value_or(0.0) : a->d_a;
              const double vb = metric == "shape_bias" ? b->shape_bias.value_or(0.0) : b->d_a;
              const double diff = increasing ? vb - va : va - vb;
              if (diff > 0) {
                ++t.wins;
              } else if (diff < 0) {
                ++t.losses;
              } else {
                ++t.ties;
              }
            }
          }
        }
      }
      t.p_value = sign_test_p(t.wins, t.losses);
      s.trends.push_back(t);
    };
    run_trend("shape_bias", true);
    run_trend("d_a", false);
  }
  return s;
}

void write_summary_csv(const Summary& summary, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_summary_csv: cannot open " + path);
  f << "variant,lambda_adv,stage,target_domain,use_unlabeled,n_seeds,std_flagged,"
       "in_domain_mean,in_domain_std,target_mean,target_std,"
       "shape_bias_mean,shape_bias_std,shape_bias_n,d_a_mean,d_a_std\n";
  for (const auto& r : summary.rows) {
    f << r.variant << "," << r.lambda_adv << "," << r.stage << "," << r.target_domain << ","
      << (r.use_unlabeled ? 1 : 0) << "," << r.n_seeds << "," << (r.std_flagged ? 1 : 0) << ","
      << r.in_domain_mean << "," << r.in_domain_std << "," << r.target_mean << "," << r.target_std << ","
      << r.shape_bias_mean << "," << r.shape_bias_std << "," << r.shape_bias_n << "," << r.d_a_mean << ","
      << r.d_a_std << "\n";
  }
}

void write_plot_data(const Summary& summary, const std::string& path) {
  nlohmann::json j;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : summary.rows) {
    rows.push_back({{"variant", r.variant},
                    {"lambda_adv", r.lambda_adv},
                    {"stage", r.stage},
                    {"target_domain", r.target_domain},
                    {"use_unlabeled", r.use_unlabeled},
                    {"n_seeds", r.n_seeds},
                    {"in_domain", {{"mean", r.in_domain_mean}, {"std", r.in_domain_std}}},
                    {"target", {{"mean", r.target_mean}, {"std", r.target_std}}},
                    {"shape_bias", {{"mean", r.shape_bias_mean}, {"std", r.shape_bias_std}, {"n", r.shape_bias_n}}},
                    {"d_a", {{"mean", r.d_a_mean}, {"std", r.d_a_std}}}});
  }
  j["rows"] = rows;
  nlohmann::json trends = nlohmann::json::array();
  for (const auto& t : summary.trends) {
    trends.push_back({{"metric", t.metric},
                      {"direction", t.direction},
                      {"wins", t.wins},
                      {"losses", t.losses},
                      {"ties", t.ties},
                      {"p_value", t.p_value},
                      {"means_ordered", t.means_ordered}});
  }
  j["trends"] = trends;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_plot_data: cannot open " + path);
  f << j.dump(2) << "\n";
}

}  // namespace sagnet
