// nluqa command-line interface: one subcommand per experiment protocol plus
// data and analysis utilities.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nluqa/analysis.hpp"
#include "nluqa/corpus.hpp"
#include "nluqa/encoder.hpp"
#include "nluqa/errors.hpp"
#include "nluqa/instruction.hpp"
#include "nluqa/orchestrator.hpp"
#include "nluqa/t5_params.hpp"
#include "nluqa/text.hpp"
#include "nluqa/worker.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flag values layered over an optional declarative spec file.
struct RunFlags {
  std::string config;
  std::string dataset;
  std::string data;
  std::string descriptions;
  std::string domain, source, target;
  std::vector<std::string> domains;
  int folds = 0;
  std::vector<int> fold_ids;
  std::string fold_role;
  std::string template_name;
  std::string task;
  std::string eval_task;
  std::string backend;
  std::string checkpoint;
  std::string encoder;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> sizes;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, batch_size;
  std::optional<double> learning_rate;
  bool adapters = false;
  bool oos = false;
  int workers = 0;
  std::string output;
  bool force = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool with_protocol_fields) {
  cmd->add_option("--config", f.config, "Run spec JSON; flags override its fields");
  cmd->add_option("--dataset", f.dataset, "nlupp or clinc");
  cmd->add_option("--data", f.data, "Dataset directory");
  cmd->add_option("--descriptions", f.descriptions, "CLINC intent descriptions file");
  cmd->add_option("--folds", f.folds, "Fold setup: 10 or 20 (or any k >= 2 for generated folds)");
  cmd->add_option("--fold-ids", f.fold_ids, "Run only these folds");
  cmd->add_option("--fold-role", f.fold_role, "train-on-one (default) or test-on-one");
  cmd->add_option("--template", f.template_name, "Template preset or grid name");
  cmd->add_option("--backend", f.backend, "gold-oracle or worker");
  cmd->add_option("--checkpoint", f.checkpoint, "Model id from the registry, a directory or random-t5:<config>");
  cmd->add_option("--seed", f.seed, "Training seed");
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--batch-size", f.batch_size);
  cmd->add_option("--lr", f.learning_rate);
  cmd->add_flag("--adapters", f.adapters, "Train bottleneck adapters (reduction 16) instead of all weights");
  cmd->add_flag("--out-of-scope", f.oos, "Add CLINC out-of-scope utterances to evaluation");
  cmd->add_option("--workers", f.workers, "Concurrent folds");
  cmd->add_option("-o,--output", f.output, "Run directory");
  cmd->add_flag("--force", f.force, "Replace an existing run directory");
  if (with_protocol_fields) {
    cmd->add_option("--domain", f.domain);
    cmd->add_option("--task", f.task, "ID, VE or both");
  }
}

nluqa::RunSpec build_spec(const std::string& protocol, const RunFlags& f) {
  json j = json::object();
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw nluqa::LoadError("cannot open " + f.config);
    in >> j;
  }
  if (!protocol.empty()) j["protocol"] = protocol;
  auto set = [&](const char* key, const std::string& v) {
    if (!v.empty()) j[key] = v;
  };
  set("dataset", f.dataset);
  set("data_path", f.data);
  set("descriptions", f.descriptions);
  set("domain", f.domain);
  set("source_domain", f.source);
  set("target_domain", f.target);
  set("fold_role", f.fold_role);
  set("template", f.template_name);
  set("task", f.task);
  set("eval_task", f.eval_task);
  set("backend", f.backend);
  set("checkpoint", f.checkpoint);
  set("encoder", f.encoder);
  set("output_dir", f.output);
  if (!f.domains.empty()) {
    j["domains"] = f.domains;
    j["grid"] = true;
  }
  if (f.folds) j["folds"] = f.folds;
  if (!f.fold_ids.empty()) j["fold_ids"] = f.fold_ids;
  if (!f.seeds.empty()) j["seeds"] = f.seeds;
  if (!f.sizes.empty()) j["sizes"] = f.sizes;
  if (f.workers) j["workers"] = f.workers;
  if (f.oos) j["include_out_of_scope"] = true;
  json& train = j["train"];
  if (train.is_null()) train = json::object();
  if (f.adapters) train["adapter"] = {{"reduction_factor", 16}};
  if (f.seed) train["seed"] = *f.seed;
  if (f.epochs) train["epochs"] = *f.epochs;
  if (f.batch_size) train["batch_size"] = *f.batch_size;
  if (f.learning_rate) train["learning_rate"] = *f.learning_rate;
  if (j.contains("clse") && f.seed) j["clse"]["seed"] = *f.seed;
  return nluqa::run_spec_from_json(j);
}

int report_run(const nluqa::RunResult& r, const nluqa::RunSpec& spec) {
  if (r.skipped) std::cout << "identical completed run found in " << spec.output_dir << "; nothing to do\n";
  for (const auto& [key, by_task] : r.aggregates) {
    for (const auto& [task, rep] : by_task) {
      std::cout << key << "  " << nluqa::to_string(task) << "  micro-F1 " << 100.0 * rep.micro_f1;
      if (rep.pooled_micro_f1) std::cout << "  (pooled " << 100.0 * *rep.pooled_micro_f1 << ")";
      std::cout << "  folds " << rep.per_fold.size() << "\n";
    }
  }
  for (const auto& [task, rep] : r.full_corpus) {
    std::cout << "full corpus  " << nluqa::to_string(task) << "  micro-F1 " << 100.0 * rep.micro_f1 << "\n";
  }
  if (!r.complete) {
    std::cerr << "run incomplete: " << r.error << "\n";
    return 1;
  }
  return 0;
}

std::vector<nluqa::AnnotatedUtterance> utterances_for(const std::string& dataset, const std::string& data,
                                                      const std::string& domain, nluqa::DomainOntology& o,
                                                      const std::string& descriptions) {
  if (dataset == "clinc") {
    nluqa::ClincOptions opts;
    if (!descriptions.empty()) opts.descriptions = descriptions;
    auto all = nluqa::load_clinc(data, opts);
    auto it = all.find(domain);
    if (it == all.end()) throw nluqa::ArgumentError("CLINC has no domain '" + domain + "'");
    o = it->second.ontology;
    return it->second.utterances;
  }
  auto d = nluqa::load_nluplusplus(data, domain);
  o = d.ontology;
  return d.utterances;
}

std::ostream& output_stream(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw nluqa::LoadError("cannot write " + path);
  return file;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue NLU as per-class question answering with seq2seq models"};
  app.require_subcommand(1);

  std::map<std::string, RunFlags> flags;
  const std::vector<std::pair<std::string, std::string>> protocols = {
      {"zero-shot", "Evaluate an untuned checkpoint"},
      {"in-domain", "Train and evaluate per fold in one domain"},
      {"cross-domain", "Train on a source domain, evaluate on a target (or a full grid with --domains)"},
      {"cross-task", "Train on one task, evaluate on the other"},
      {"multi-task", "Train on ID and VE together"},
      {"sample-efficiency", "Vary the training-set size over seeds on a fixed test set"},
      {"mc-ablation", "In-domain ID with one multiple-choice prompt per utterance"},
      {"clse-baseline", "Embedding classifier baseline"},
  };
  std::map<std::string, CLI::App*> protocol_cmds;
  for (const auto& [name, help] : protocols) {
    auto* cmd = app.add_subcommand(name, help);
    RunFlags& f = flags[name];
    add_run_flags(cmd, f, true);
    if (name == "cross-domain") {
      cmd->add_option("--source", f.source);
      cmd->add_option("--target", f.target);
      cmd->add_option("--domains", f.domains, "Grid mode: every ordered pair of these domains");
    }
    if (name == "cross-task") cmd->add_option("--eval-task", f.eval_task);
    if (name == "sample-efficiency") {
      cmd->add_option("--sizes", f.sizes);
      cmd->add_option("--seeds", f.seeds);
    }
    if (name == "clse-baseline") cmd->add_option("--encoder", f.encoder);
    protocol_cmds[name] = cmd;
  }

  auto* run_cmd = app.add_subcommand("run", "Run a declarative spec file");
  RunFlags& run_flags = flags["run"];
  add_run_flags(run_cmd, run_flags, true);

  std::string c_dataset = "nlupp", c_data, c_domain, c_template = "desc", c_task = "ID", c_out, c_desc;
  auto* compile_cmd = app.add_subcommand("compile", "Write compiled instructions as JSON lines");
  compile_cmd->add_option("--dataset", c_dataset);
  compile_cmd->add_option("--data", c_data)->required();
  compile_cmd->add_option("--domain", c_domain)->required();
  compile_cmd->add_option("--descriptions", c_desc);
  compile_cmd->add_option("--template", c_template);
  compile_cmd->add_option("--task", c_task, "ID-binary, VE-extractive or MC-ID");
  compile_cmd->add_option("-o,--output", c_out);

  std::string s_dataset = "nlupp", s_data, s_domain, s_out, s_desc;
  auto* snapshot_cmd = app.add_subcommand("snapshot", "Write a normalized corpus snapshot and print its fingerprint");
  snapshot_cmd->add_option("--dataset", s_dataset);
  snapshot_cmd->add_option("--data", s_data)->required();
  snapshot_cmd->add_option("--domain", s_domain)->required();
  snapshot_cmd->add_option("--descriptions", s_desc);
  snapshot_cmd->add_option("-o,--output", s_out);

  std::string p_arch, p_checkpoint;
  int p_reduction = 16;
  bool p_adapters = false, p_worker = false;
  auto* params_cmd = app.add_subcommand("count-params", "Count total and trainable parameters");
  params_cmd->add_option("--architecture", p_arch, "config.json of the model");
  params_cmd->add_option("--checkpoint", p_checkpoint, "Registry id (uses its architecture file)");
  params_cmd->add_flag("--adapters", p_adapters);
  params_cmd->add_option("--reduction-factor", p_reduction);
  params_cmd->add_flag("--worker", p_worker, "Also instantiate the model in the worker and compare");

  std::string r_matrix, r_data, r_desc, r_encoder, r_label = "desc", r_out;
  auto* corr_cmd = app.add_subcommand("correlate", "Correlate a transfer matrix with domain similarities");
  corr_cmd->add_option("--matrix", r_matrix, "Transfer matrix CSV (rows source, columns target)")->required();
  corr_cmd->add_option("--data", r_data, "CLINC directory")->required();
  corr_cmd->add_option("--descriptions", r_desc);
  corr_cmd->add_option("--encoder", r_encoder)->required();
  corr_cmd->add_option("--label", r_label, "Template label for the table row");
  corr_cmd->add_option("-o,--output", r_out);

  app.add_subcommand("templates", "List the instruction template grid");

  std::string d_data, d_out;
  auto* desc_cmd = app.add_subcommand("clinc-descriptions", "Write an editable starter descriptions file for CLINC");
  desc_cmd->add_option("--data", d_data)->required();
  desc_cmd->add_option("-o,--output", d_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [name, cmd] : protocol_cmds) {
      if (!cmd->parsed()) continue;
      const auto spec = build_spec(name, flags[name]);
      nluqa::RunOptions opts;
      opts.force = flags[name].force;
      return report_run(nluqa::run(spec, opts), spec);
    }
    if (run_cmd->parsed()) {
      if (run_flags.config.empty()) throw nluqa::ArgumentError("run needs --config");
      const auto spec = build_spec("", run_flags);
      nluqa::RunOptions opts;
      opts.force = run_flags.force;
      return report_run(nluqa::run(spec, opts), spec);
    }
    if (compile_cmd->parsed()) {
      nluqa::DomainOntology o;
      auto utts = utterances_for(c_dataset, c_data, c_domain, o, c_desc);
      auto instances = nluqa::compile_all(utts, o, nluqa::InstructionTemplate::parse(c_template),
                                          nluqa::parse_task_kind(c_task));
      std::ofstream file;
      nluqa::write_instances(output_stream(c_out, file), instances);
      std::cerr << instances.size() << " instances (" << utts.size() << " utterances)\n";
      return 0;
    }
    if (snapshot_cmd->parsed()) {
      nluqa::DomainOntology o;
      auto utts = utterances_for(s_dataset, s_data, s_domain, o, s_desc);
      std::ofstream file;
      nluqa::write_snapshot(output_stream(s_out, file), utts);
      std::cerr << "fingerprint " << nluqa::corpus_fingerprint(utts) << "\n";
      return 0;
    }
    if (params_cmd->parsed()) {
      const auto registry = nluqa::ModelRegistry::from_environment();
      fs::path arch = p_arch;
      if (arch.empty()) {
        auto a = registry.architecture_of(p_checkpoint);
        if (!a) throw nluqa::ConfigError("no architecture known for '" + p_checkpoint + "'");
        arch = *a;
      }
      std::optional<nluqa::AdapterConfig> adapter;
      if (p_adapters) adapter = nluqa::AdapterConfig{p_reduction};
      const auto c = nluqa::count_parameters(nluqa::T5Architecture::load(arch), adapter);
      std::cout << "total " << c.total << "\ntrainable " << c.trainable << "\n";
      if (p_worker) {
        nluqa::WorkerProcess w(registry.worker_command(), registry.cache_dir());
        json req = {{"op", "count_parameters"},
                    {"checkpoint", "random-t5:" + fs::absolute(arch).string()},
                    {"adapter", adapter ? json{{"reduction_factor", adapter->reduction_factor}} : json(nullptr)}};
        auto r = w.call(req);
        std::cout << "worker total " << r["total"] << "\nworker trainable " << r["trainable"] << "\n";
        if (r["total"].get<std::uint64_t>() != c.total || r["trainable"].get<std::uint64_t>() != c.trainable) {
          std::cerr << "analytic and instantiated counts differ\n";
          return 1;
        }
      }
      return 0;
    }
    if (corr_cmd->parsed()) {
      const auto tm = nluqa::TransferMatrix::load_csv(r_matrix);
      nluqa::ClincOptions opts;
      if (!r_desc.empty()) opts.descriptions = r_desc;
      const auto clinc = nluqa::load_clinc(r_data, opts);
      std::map<std::string, std::vector<std::string>> utts, prompts;
      for (const auto& d : tm.domains) {
        auto it = clinc.find(d);
        if (it == clinc.end()) throw nluqa::ArgumentError("CLINC has no domain '" + d + "'");
        for (const auto& u : it->second.utterances) utts[d].push_back(u.text);
        prompts[d] = nluqa::class_prompts(it->second.ontology);
      }
      auto encoder = nluqa::make_encoder(r_encoder, nluqa::ModelRegistry::from_environment());
      const auto e = nluqa::domain_similarities(utts, *encoder);
      const auto c = nluqa::domain_similarities(prompts, *encoder);
      std::vector<nluqa::CorrelationReport> reports{nluqa::correlation_report(tm, e, c, r_label)};
      std::ofstream file;
      nluqa::write_correlation_table(output_stream(r_out, file), reports);
      return 0;
    }
    if (app.got_subcommand("templates")) {
      for (const auto& t : nluqa::InstructionTemplate::grid()) std::cout << t.name() << "\n";
      return 0;
    }
    if (desc_cmd->parsed()) {
      std::ifstream in(fs::path(d_data) / "data_full.json");
      if (!in) throw nluqa::LoadError("cannot open " + (fs::path(d_data) / "data_full.json").string());
      const json data = json::parse(in);
      std::set<std::string> intents;
      for (const auto& [split, records] : data.items()) {
        for (const auto& rec : records) {
          const auto name = rec.at(1).get<std::string>();
          if (name != "oos") intents.insert(name);
        }
      }
      json out = json::object();
      for (const auto& name : intents) {
        std::string words = name;
        std::replace(words.begin(), words.end(), '_', ' ');
        out[name] = {{"description", "intend to ask about " + words}};
      }
      std::ofstream file(d_out);
      file << out.dump(2) << "\n";
      std::cerr << "wrote " << intents.size() << " starter descriptions to " << d_out << "; edit before use\n";
      return 0;
    }
  } catch (const nluqa::ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
