// Command-line front end: build long-tailed data, train, attack/evaluate,
// and aggregate run reports.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "reat/config.hpp"
#include "reat/evalkit.hpp"
#include "reat/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

void write_resolved_config(const reat::RunConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir + "/resolved_config.json", cfg.resolved.dump(2) + "\n");
}

reat::ModelSpec model_spec_for(const reat::RunConfig& cfg, const reat::PreparedData& data) {
  reat::ModelSpec spec = cfg.model;
  spec.classes = data.train.classes;
  spec.input_shape = data.train.sample_shape;
  spec.validate();
  return spec;
}

int cmd_data(const std::string& config_path, const std::vector<std::string>& overrides) {
  reat::RunConfig cfg = reat::load_run_config(config_path, overrides);
  reat::PreparedData data = reat::prepare_data(cfg);
  reat::ClassPartition part = reat::partition_classes(data.train.classes);
  reat::OmegaWeights omega = reat::omega_weights(data.counts);

  json manifest;
  manifest["classes"] = data.train.classes;
  manifest["train_size"] = data.train.size();
  manifest["test_size"] = data.test.size();
  manifest["sample_shape"] = data.train.sample_shape;
  manifest["class_counts"] = data.counts.n;
  manifest["unbalanced_ratio"] =
      static_cast<double>(data.counts.n.front()) / static_cast<double>(data.counts.n.back());
  manifest["partition"] = {{"head", part.head}, {"body", part.body}, {"tail", part.tail}};
  manifest["omega"] = omega.omega;

  write_resolved_config(cfg);
  write_text(cfg.output_dir + "/manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << cfg.output_dir << "/manifest.json (" << data.train.size()
            << " train / " << data.test.size() << " test samples)\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  reat::RunConfig cfg = reat::load_run_config(config_path, overrides);
  reat::PreparedData data = reat::prepare_data(cfg);
  reat::ModelSpec spec = model_spec_for(cfg, data);
  write_resolved_config(cfg);
  reat::TrainArtifacts art =
      reat::run_training(cfg.train, spec, data.train, data.counts, data.test, cfg.output_dir);
  std::cout << "trained " << cfg.train.epochs << " epochs (" << reat::method_name(cfg.train.method)
            << ", " << reat::lt_loss_name(cfg.train.lt_loss) << ") -> " << art.final_checkpoint;
  if (!art.best_checkpoint.empty())
    std::cout << "; best probe acc " << reat::fmt_double(art.best_probe_acc) << " at epoch "
              << art.best_epoch;
  std::cout << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::vector<std::string>& overrides) {
  reat::RunConfig cfg = reat::load_run_config(config_path, overrides);
  reat::PreparedData data = reat::prepare_data(cfg);
  reat::ModelState model = reat::load_checkpoint(checkpoint_path);
  if (model.spec.classes != data.test.classes)
    throw std::runtime_error("eval: checkpoint classes do not match dataset");

  reat::EvalReport rep = reat::evaluate(model, data.test, cfg.eval_attacks, &data.counts);
  if (cfg.bound_mode == "raw" && !rep.attacks.empty()) {
    size_t strongest = 0;
    for (size_t i = 1; i < rep.attacks.size(); ++i)
      if (rep.attacks[i].robust_balanced < rep.attacks[strongest].robust_balanced) strongest = i;
    std::vector<double> clean_counts(rep.classes), flip_counts(rep.classes);
    for (size_t i = 0; i < rep.classes; ++i) {
      clean_counts[i] = static_cast<double>(rep.clean_err_count[i]);
      flip_counts[i] = static_cast<double>(rep.attacks[strongest].flip_count[i]);
    }
    rep.bound = reat::robust_risk_lower_bound(clean_counts, flip_counts, rep.classes,
                                              reat::BoundMode::raw);
  }

  fs::create_directories(cfg.output_dir);
  write_resolved_config(cfg);
  write_text(cfg.output_dir + "/report.json", reat::report_json(rep).dump(2) + "\n");

  // per-class CSV: epoch, split, class, clean_acc, robust_acc@A...,
  // flip_rate@A..., ae_count, w, E, omega, entropy
  std::ostringstream csv;
  csv << "epoch,split,class,clean_acc";
  for (const auto& a : rep.attacks) csv << ",robust_acc@" << a.cfg.name;
  for (const auto& a : rep.attacks) csv << ",flip_rate@" << a.cfg.name;
  csv << ",ae_count,w,E,omega,entropy\n";
  size_t strongest = 0;
  for (size_t i = 1; i < rep.attacks.size(); ++i)
    if (rep.attacks[i].robust_balanced < rep.attacks[strongest].robust_balanced) strongest = i;
  for (size_t c = 0; c < rep.classes; ++c) {
    csv << model.epoch << ",test," << (c + 1) << "," << reat::fmt_double(rep.clean_acc[c]);
    for (const auto& a : rep.attacks) csv << "," << reat::fmt_double(a.robust_acc[c]);
    for (const auto& a : rep.attacks) csv << "," << reat::fmt_double(a.flip_rate[c]);
    if (!rep.attacks.empty()) {
      csv << "," << rep.attacks[strongest].histogram.counts[c];
      csv << "," << (rep.rbl_weight.empty() ? "" : reat::fmt_double(rep.rbl_weight[c]));
      csv << "," << (rep.effective_number.empty() ? "" : reat::fmt_double(rep.effective_number[c]));
      csv << "," << (rep.omega.empty() ? "" : reat::fmt_double(rep.omega[c]));
      csv << "," << reat::fmt_double(rep.attacks[strongest].histogram.normalized_entropy());
    } else {
      csv << ",,,,,";
    }
    csv << "\n";
  }
  write_text(cfg.output_dir + "/per_class.csv", csv.str());

  if (cfg.export_features)
    reat::export_features(model, data.test, cfg.output_dir + "/features.csv");

  std::cout << "clean balanced acc " << reat::fmt_double(rep.clean_balanced);
  for (const auto& a : rep.attacks)
    std::cout << "; " << a.cfg.name << " " << reat::fmt_double(a.robust_balanced);
  if (!rep.attacks.empty())
    std::cout << "; robust-risk lower bound (" << cfg.bound_mode << ", " << rep.bound_attack
              << ") " << reat::fmt_double(rep.bound.value);
  std::cout << "\n";
  return 0;
}

int cmd_report(const std::string& dir) {
  std::vector<std::pair<std::string, json>> reports;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.path().filename() == "report.json") {
      std::ifstream in(entry.path());
      json j;
      in >> j;
      reports.emplace_back(fs::relative(entry.path().parent_path(), dir).string(), std::move(j));
    }
  }
  if (reports.empty()) throw std::runtime_error("report: no report.json found under " + dir);
  std::sort(reports.begin(), reports.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::ostringstream csv;
  csv << "run,clean_balanced";
  std::vector<std::string> attack_names;
  for (const json& a : reports.front().second.at("attacks"))
    attack_names.push_back(a.at("config").at("name").get<std::string>());
  for (const std::string& n : attack_names) csv << ",robust_balanced@" << n;
  csv << ",bound\n";
  for (const auto& [run, j] : reports) {
    csv << run << "," << reat::fmt_double(j.at("clean").at("balanced_accuracy").get<double>());
    for (const std::string& n : attack_names) {
      double v = std::nan("");
      for (const json& a : j.at("attacks"))
        if (a.at("config").at("name") == n) v = a.at("balanced_robust_accuracy").get<double>();
      csv << "," << reat::fmt_double(v);
    }
    double bound = j.contains("robust_risk_lower_bound")
                       ? j.at("robust_risk_lower_bound").at("value").get<double>()
                       : std::nan("");
    csv << "," << reat::fmt_double(bound) << "\n";
  }
  write_text(dir + "/summary.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"re-balanced adversarial training laboratory for long-tailed datasets"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, report_dir;
  std::vector<std::string> overrides;

  CLI::App* data = app.add_subcommand("data", "build the long-tailed subset and write a manifest");
  data->add_option("--config", config_path, "run config JSON")->required();
  data->add_option("--override", overrides, "key.path=value config override");

  CLI::App* train = app.add_subcommand("train", "run adversarial training");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--override", overrides, "key.path=value config override");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint under the attack suite");
  eval->add_option("--config", config_path, "run config JSON")->required();
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
  eval->add_option("--override", overrides, "key.path=value config override");

  CLI::App* report = app.add_subcommand("report", "aggregate run reports into a summary table");
  report->add_option("--dir", report_dir, "directory containing run outputs")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (data->parsed()) return cmd_data(config_path, overrides);
    if (train->parsed()) return cmd_train(config_path, overrides);
    if (eval->parsed()) return cmd_eval(config_path, checkpoint_path, overrides);
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
