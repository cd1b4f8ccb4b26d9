// sagnet command line: dataset generation, training, evaluation and
// experiment plans for the style-randomization training mechanism.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sagnet/checkpoint.hpp"
#include "sagnet/evaluation.hpp"
#include "sagnet/experiments.hpp"
#include "sagnet/synthdata.hpp"
#include "sagnet/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string default_out(const std::string& leaf) {
  const char* root = std::getenv("SAGNET_OUT_ROOT");
  const fs::path base = root != nullptr ? fs::path(root) : fs::path("sagnet-out");
  return (base / leaf).string();
}

std::string domain_base(const std::string& dir, int domain, const std::string& split) {
  return (fs::path(dir) / ("domain" + std::to_string(domain) + "_" + split)).string();
}

struct LoadedData {
  sagnet::ImageSet source_train, source_val, target_eval, target_unlabeled;
  int num_classes = 0;
  int num_domains = 0;
};

LoadedData load_holdout(const std::string& dir, int target_domain) {
  std::ifstream sf(fs::path(dir) / "spec.json");
  if (!sf) throw std::runtime_error("data dir is missing spec.json: " + dir);
  const json spec = json::parse(sf);
  LoadedData out;
  out.num_classes = spec.at("num_classes").get<int>();
  out.num_domains = spec.at("num_domains").get<int>();
  if (target_domain < 0 || target_domain >= out.num_domains) {
    throw std::runtime_error("unknown target domain " + std::to_string(target_domain));
  }
  for (int d = 0; d < out.num_domains; ++d) {
    if (d == target_domain) {
      out.target_eval = sagnet::load_image_set(domain_base(dir, d, "test"));
      out.target_unlabeled = sagnet::load_image_set(domain_base(dir, d, "train"));
    } else {
      out.source_train.append(sagnet::load_image_set(domain_base(dir, d, "train")));
      out.source_val.append(sagnet::load_image_set(domain_base(dir, d, "val")));
    }
  }
  return out;
}

int cmd_gen_data(const std::string& out_dir, sagnet::StyleShiftSpec spec, int stimuli_per_pair) {
  spec.validate();
  fs::create_directories(out_dir);
  std::vector<int> all;
  for (int d = 0; d < spec.num_domains; ++d) all.push_back(d);
  auto dataset = sagnet::generate_dataset(spec, all);
  for (std::size_t i = 0; i < dataset.domains.size(); ++i) {
    const int d = dataset.domain_ids[i];
    sagnet::save_image_set(domain_base(out_dir, d, "train"), dataset.domains[i].train);
    sagnet::save_image_set(domain_base(out_dir, d, "val"), dataset.domains[i].val);
    sagnet::save_image_set(domain_base(out_dir, d, "test"), dataset.domains[i].test);
  }
  if (stimuli_per_pair > 0) {
    auto stimuli = sagnet::generate_cue_conflict(spec, stimuli_per_pair);
    sagnet::save_image_set((fs::path(out_dir) / "stimuli").string(), stimuli);
  }
  json meta = {{"num_classes", spec.num_classes},
               {"num_domains", spec.num_domains},
               {"samples_per_class_per_domain", spec.samples_per_class_per_domain},
               {"image_size", spec.image_size},
               {"seed", spec.seed},
               {"stimuli_per_pair", stimuli_per_pair}};
  std::ofstream mf(fs::path(out_dir) / "spec.json");
  mf << meta.dump(2) << "\n";
  std::cout << json({{"out_dir", out_dir},
                     {"domains", spec.num_domains},
                     {"images_per_domain", spec.num_classes * spec.samples_per_class_per_domain}})
                   .dump()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"style-randomization training benchmark"};
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic style-shift dataset");
  sagnet::StyleShiftSpec spec;
  std::string gen_out = default_out("data");
  int gen_stimuli = 6;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--classes", spec.num_classes, "number of content classes (2..7)");
  gen->add_option("--domains", spec.num_domains, "number of style domains");
  gen->add_option("--per-class", spec.samples_per_class_per_domain, "samples per class per domain");
  gen->add_option("--image-size", spec.image_size, "square image extent");
  gen->add_option("--seed", spec.seed, "generator seed");
  gen->add_option("--stimuli", gen_stimuli, "cue-conflict stimuli per ordered class pair (0 = none)");
  gen->add_option("--gain-spread", spec.gain_spread, "per-domain channel gain spread");
  gen->add_option("--offset-spread", spec.offset_spread, "per-domain channel offset spread");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train a model on generated data");
  std::string tr_data, tr_out = default_out("train");
  std::string tr_variant = "full";
  int tr_target = 3, tr_stage = 3;
  bool tr_unlabeled = false;
  sagnet::TrainConfig tc;
  tr->add_option("--data", tr_data, "directory produced by gen-data")->required();
  tr->add_option("--target-domain", tr_target, "held-out domain id");
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--variant", tr_variant, "full | no_CBL | no_ASBL | baseline");
  tr->add_option("--lambda-adv", tc.lambda_adv, "adversarial weight");
  tr->add_option("--lambda-unl", tc.lambda_unl, "consistency weight");
  tr->add_option("--stage", tr_stage, "randomization stage");
  tr->add_option("--seed", tc.seed, "training seed");
  tr->add_option("--iters", tc.total_iters, "optimization steps");
  tr->add_option("--batch", tc.batch_size, "batch size");
  tr->add_option("--lr", tc.lr, "initial learning rate (cosine decay)");
  tr->add_option("--momentum", tc.momentum, "SGD momentum");
  tr->add_option("--weight-decay", tc.weight_decay, "weight decay");
  tr->add_option("--log-every", tc.log_every, "trace cadence");
  tr->add_flag("--unlabeled-target", tr_unlabeled, "use the target train split as unlabeled data");

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint: accuracies, bias, discrepancy");
  std::string ev_ckpt, ev_data, ev_out, ev_stimuli;
  int ev_target = 3;
  std::uint64_t ev_seed = 0;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "directory produced by gen-data")->required();
  ev->add_option("--target-domain", ev_target, "held-out domain id");
  ev->add_option("--stimuli", ev_stimuli, "stimuli file base (default <data>/stimuli)");
  ev->add_option("--out", ev_out, "report file (default stdout only)");
  ev->add_option("--seed", ev_seed, "probe fold seed");

  // ---- run-plan ----
  auto* rp = app.add_subcommand("run-plan", "execute an experiment plan");
  std::string rp_plan, rp_out;
  int rp_jobs = 1;
  rp->add_option("--plan", rp_plan, "plan JSON file")->required();
  rp->add_option("--out", rp_out, "output directory override");
  rp->add_option("--jobs", rp_jobs, "parallel cells");

  // ---- summarize ----
  auto* sm = app.add_subcommand("summarize", "aggregate records into summary tables");
  std::string sm_records, sm_out;
  sm->add_option("--records", sm_records, "records.jsonl file")->required();
  sm->add_option("--out-dir", sm_out, "directory for summary.csv and plot_data.json");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gen_out, spec, gen_stimuli);
    }

    if (tr->parsed()) {
      auto data = load_holdout(tr_data, tr_target);
      const auto variant = sagnet::variant_from_string(tr_variant);
      switch (variant) {
        case sagnet::Variant::full:
          break;
        case sagnet::Variant::no_cbl:
          tc.style_randomization = false;
          break;
        case sagnet::Variant::no_asbl:
          tc.style_pathway = false;
          tc.lambda_adv = 0.0;
          break;
        case sagnet::Variant::baseline:
          tc.style_randomization = false;
          tc.style_pathway = false;
          tc.lambda_adv = 0.0;
          break;
      }
      sagnet::StageCNNConfig net;
      net.num_classes = data.num_classes;
      net.in_height = data.source_train.height;
      net.in_width = data.source_train.width;
      net.randomization_stage = tr_stage;
      auto model = sagnet::build_model<float>(net, sagnet::derive_stream(tc.seed, "init"));
      auto samples = data.source_train.to_samples();
      sagnet::Samples<float> unl;
      if (tr_unlabeled) {
        unl = data.target_unlabeled.to_samples();
        unl.labels.clear();
      }
      fs::create_directories(tr_out);
      std::ofstream trace(fs::path(tr_out) / "trace.jsonl");
      sagnet::TrainConfig run_tc = tc;
      run_tc.seed = sagnet::derive_stream(tc.seed, "train");
      auto on_report = [&](const sagnet::StepReport& r) {
        trace << json({{"iteration", r.iteration},
                       {"loss_content", r.loss_content},
                       {"loss_style", r.has_style ? json(r.loss_style) : json()},
                       {"loss_adv", r.has_adv ? json(r.loss_adv) : json()},
                       {"loss_unl", r.has_unl ? json(r.loss_unl) : json()},
                       {"lr", r.lr},
                       {"batch_accuracy", r.batch_accuracy}})
                     .dump()
              << "\n";
      };
      sagnet::train(model, samples, run_tc, tr_unlabeled ? &unl : nullptr, on_report);
      const std::string ckpt = (fs::path(tr_out) / "checkpoint.sgnet").string();
      sagnet::save_checkpoint(ckpt, model, tc.seed);
      json result = {{"checkpoint", ckpt},
                     {"trace", (fs::path(tr_out) / "trace.jsonl").string()},
                     {"in_domain_accuracy", sagnet::cross_domain_accuracy(model, data.source_val)},
                     {"target_accuracy", sagnet::cross_domain_accuracy(model, data.target_eval)}};
      std::ofstream rf(fs::path(tr_out) / "result.json");
      rf << result.dump(2) << "\n";
      std::cout << result.dump() << "\n";
      return 0;
    }

    if (ev->parsed()) {
      auto loaded = sagnet::load_checkpoint(ev_ckpt);
      auto data = load_holdout(ev_data, ev_target);
      const std::string stim_base =
          ev_stimuli.empty() ? (fs::path(ev_data) / "stimuli").string() : ev_stimuli;
      auto stimuli = sagnet::load_image_set(stim_base);
      auto bias = sagnet::bias_metrics(loaded.model, stimuli);
      sagnet::Rng rng(sagnet::derive_stream(ev_seed, "eval"));
      auto fa = sagnet::penultimate_features(loaded.model, data.source_val);
      auto fb = sagnet::penultimate_features(loaded.model, data.target_eval);
      auto disc = sagnet::proxy_a_distance(fa, fb, rng);
      json report = {{"in_domain_accuracy", sagnet::cross_domain_accuracy(loaded.model, data.source_val)},
                     {"target_accuracy", sagnet::cross_domain_accuracy(loaded.model, data.target_eval)},
                     {"shape_accuracy", bias.shape_accuracy},
                     {"texture_accuracy", bias.texture_accuracy},
                     {"shape_bias", bias.shape_bias.has_value() ? json(*bias.shape_bias) : json()},
                     {"n_shape_correct", bias.n_shape_correct},
                     {"n_texture_correct", bias.n_texture_correct},
                     {"n_neither", bias.n_neither},
                     {"d_a", disc.d_a},
                     {"epsilon", disc.epsilon},
                     {"probe_folds", disc.folds},
                     {"probe_weight_decay", disc.weight_decay}};
      if (!ev_out.empty()) {
        std::ofstream f(ev_out);
        f << report.dump(2) << "\n";
      }
      std::cout << report.dump() << "\n";
      return 0;
    }

    if (rp->parsed()) {
      auto plan = sagnet::ExperimentPlan::load(rp_plan);
      auto records = sagnet::run_plan(plan, rp_jobs, rp_out);
      int failed = 0;
      for (const auto& r : records) failed += r.failed ? 1 : 0;
      std::cout << json({{"out_dir", sagnet::resolve_out_dir(plan, rp_out)},
                         {"records", records.size()},
                         {"failed", failed}})
                       .dump()
                << "\n";
      return failed == 0 ? 0 : 1;
    }

    if (sm->parsed()) {
      auto records = sagnet::load_records(sm_records);
      if (records.empty()) throw std::runtime_error("no records found in " + sm_records);
      auto summary = sagnet::summarize(records);
      if (sm_out.empty()) sm_out = fs::path(sm_records).parent_path().string();
      if (sm_out.empty()) sm_out = ".";
      fs::create_directories(sm_out);
      sagnet::write_summary_csv(summary, (fs::path(sm_out) / "summary.csv").string());
      sagnet::write_plot_data(summary, (fs::path(sm_out) / "plot_data.json").string());
      for (const auto& row : summary.rows) {
        std::cout << row.variant << " lambda=" << row.lambda_adv << " stage=" << row.stage
                  << " seeds=" << row.n_seeds << (row.std_flagged ? " [std n/a]" : "")
                  << " target=" << row.target_mean << "+/-" << row.target_std
                  << " shape_bias=" << row.shape_bias_mean << "+/-" << row.shape_bias_std
                  << " d_A=" << row.d_a_mean << "+/-" << row.d_a_std << "\n";
      }
      for (const auto& t : summary.trends) {
        std::cout << "trend " << t.metric << " " << t.direction << ": wins=" << t.wins
                  << " losses=" << t.losses << " ties=" << t.ties << " p=" << t.p_value
                  << " means_ordered=" << (t.means_ordered ? "yes" : "no") << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << json({{"error", e.what()}}).dump() << "\n";
    return 1;
  }
  return 0;
}
