#include "nluqa/orchestrator.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "nluqa/encoder.hpp"
#include "nluqa/errors.hpp"
#include "nluqa/fingerprint.hpp"
#include "nluqa/instruction.hpp"
#include "nluqa/text.hpp"

namespace nluqa {

namespace fs = std::filesystem;

namespace {

constexpr std::pair<Protocol, std::string_view> kProtocolNames[] = {
    {Protocol::ZeroShot, "zero-shot"},
    {Protocol::InDomain, "in-domain"},
    {Protocol::CrossDomain, "cross-domain"},
    {Protocol::CrossTask, "cross-task"},
    {Protocol::MultiTask, "multi-task"},
    {Protocol::SampleEfficiency, "sample-efficiency"},
    {Protocol::McAblation, "mc-ablation"},
    {Protocol::ClseBaseline, "clse-baseline"},
};

std::string dataset_name(Dataset d) { return d == Dataset::Clinc ? "clinc" : "nlupp"; }

Dataset parse_dataset(const std::string& s) {
  const auto l = to_lower(s);
  if (l == "nlupp" || l == "nlu++" || l == "nluplusplus") return Dataset::NluPlusPlus;
  if (l == "clinc" || l == "clinc150" || l == "clinc-150") return Dataset::Clinc;
  throw ArgumentError("unknown dataset '" + s + "'");
}

std::string role_name(FoldRole r) { return r == FoldRole::TrainOnOne ? "train-on-one" : "test-on-one"; }

FoldRole parse_role(const std::string& s) {
  if (s == "train-on-one") return FoldRole::TrainOnOne;
  if (s == "test-on-one") return FoldRole::TestOnOne;
  throw ArgumentError("unknown fold role '" + s + "'");
}

TaskKind kind_for(Task task, Formulation f) {
  if (task == Task::VE) return TaskKind::VeExtractive;
  return f == Formulation::MultipleChoice ? TaskKind::McId : TaskKind::IdBinary;
}

std::string pair_key(const std::string& source, const std::string& target) { return source + "->" + target; }

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Everything a fold needs, shared read-only across worker threads.
struct Context {
  const RunSpec& spec;
  std::map<std::string, LoadedDomain> domains;
  InstructionTemplate tmpl;
  std::shared_ptr<Seq2SeqBackend> backend;
  std::shared_ptr<SentenceEncoder> encoder;
  ModelHandle base;
  bool gold = false;
  fs::path out;

  const LoadedDomain& domain(const std::string& name) const {
    auto it = domains.find(name);
    if (it == domains.end()) throw ArgumentError("domain '" + name + "' not loaded");
    return it->second;
  }
};

std::vector<InstructionInstance> compile_tasks(const Context& ctx, std::span<const AnnotatedUtterance> utts,
                                               const DomainOntology& o, const std::vector<Task>& tasks) {
  std::vector<InstructionInstance> out;
  for (Task t : tasks) {
    auto part = compile_all(utts, o, ctx.tmpl, kind_for(t, ctx.spec.formulation));
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

// The gold oracle needs no training: it answers from the evaluation labels.
ModelHandle train_on(const Context& ctx, const LoadedDomain& src, std::span<const AnnotatedUtterance> utts,
                     const std::vector<Task>& tasks, const fs::path& dir) {
  if (ctx.gold) return ctx.base;
  auto data = compile_tasks(ctx, utts, src.ontology, tasks);
  TrainConfig cfg = ctx.spec.train;
  return ctx.backend->train(ctx.base, data, cfg, dir).model;
}

std::vector<Prediction> predict(const Context& ctx, const ModelHandle& model, const DomainOntology& o,
                                std::span<const AnnotatedUtterance> utts, Task task) {
  auto instances = compile_all(utts, o, ctx.tmpl, kind_for(task, ctx.spec.formulation));
  std::vector<Prediction> preds;
  if (!instances.empty()) {
    const ModelHandle m = ctx.gold ? make_gold_oracle(instances) : model;
    auto answers = ctx.backend->generate(m, std::span<const InstructionInstance>(instances), ctx.spec.max_input_length);
    preds = assemble(instances, answers, o);
  }
  // Utterances without instances (no classes of this kind) predict nothing.
  std::unordered_set<std::string> seen;
  for (const auto& p : preds) seen.insert(p.utterance_id);
  for (const auto& u : utts) {
    if (!seen.count(u.id)) preds.push_back(Prediction{u.id, {}, {}});
  }
  return preds;
}

std::vector<Prediction> subset(const std::vector<Prediction>& preds, std::span<const AnnotatedUtterance> utts) {
  std::unordered_map<std::string_view, const Prediction*> by_id;
  for (const auto& p : preds) by_id.emplace(p.utterance_id, &p);
  std::vector<Prediction> out;
  out.reserve(utts.size());
  for (const auto& u : utts) out.push_back(*by_id.at(u.id));
  return out;
}

std::vector<AnnotatedUtterance> eval_set(const Context& ctx, const LoadedDomain& d, std::span<const std::string> ids) {
  auto utts = select(d.utterances, ids);
  if (ctx.spec.include_out_of_scope) utts.insert(utts.end(), d.out_of_scope.begin(), d.out_of_scope.end());
  return utts;
}

std::vector<const FoldSplit*> chosen_folds(const RunSpec& spec, const LoadedDomain& d) {
  std::vector<const FoldSplit*> out;
  if (spec.fold_ids.empty()) {
    for (const auto& f : d.folds) out.push_back(&f);
    return out;
  }
  for (int id : spec.fold_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= d.folds.size()) {
      throw ArgumentError("fold " + std::to_string(id) + " out of range for " + std::to_string(d.folds.size()) +
                          " folds");
    }
    out.push_back(&d.folds[static_cast<std::size_t>(id)]);
  }
  return out;
}

fs::path fold_dir(const Context& ctx, const std::string& label) { return ctx.out / "folds" / label; }

using WorkItem = std::function<std::vector<FoldResult>()>;

// Runs items on up to `workers` threads. Stops scheduling after the first
// failure; completed results are kept in item order.
std::vector<FoldResult> execute(std::vector<WorkItem>& items, int workers, std::string& error) {
  std::vector<std::optional<std::vector<FoldResult>>> slots(items.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mu;
  auto loop = [&] {
    for (;;) {
      if (failed) return;
      const std::size_t i = next++;
      if (i >= items.size()) return;
      try {
        slots[i] = items[i]();
        std::clog << "[nluqa] unit " << (i + 1) << "/" << items.size() << " done\n";
      } catch (const std::exception& e) {
        std::lock_guard lock(err_mu);
        if (!failed.exchange(true)) error = "unit " + std::to_string(i) + ": " + e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(items.size())));
  if (n == 1) {
    loop();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < n; ++t) threads.emplace_back(loop);
    for (auto& t : threads) t.join();
  }
  std::vector<FoldResult> out;
  for (auto& s : slots) {
    if (s) out.insert(out.end(), s->begin(), s->end());
  }
  return out;
}

void write_fold(const Context& ctx, const FoldResult& r) {
  const std::string label = (r.source.empty() ? "" : r.source + "_to_") + r.target + "_fold" + std::to_string(r.fold_id);
  write_file_atomic(ctx.out / "folds" / (label + ".json"), r.to_json().dump(2) + "\n");
}

void aggregate_into(RunResult& result) {
  std::map<std::string, std::map<Task, std::vector<EvalReport>>> grouped;
  for (const auto& f : result.folds) {
    const std::string key = f.source.empty() || f.source == f.target ? f.target : pair_key(f.source, f.target);
    for (const auto& [task, rep] : f.reports) grouped[key][task].push_back(rep);
  }
  for (auto& [key, by_task] : grouped) {
    for (auto& [task, reps] : by_task) result.aggregates[key][task] = aggregate(reps);
  }
}

// ---- protocol bodies -------------------------------------------------

std::vector<WorkItem> plan_zero_shot(Context& ctx, RunResult& result) {
  const auto& d = ctx.domain(ctx.spec.domain);
  std::vector<AnnotatedUtterance> all = d.utterances;
  if (ctx.spec.include_out_of_scope) all.insert(all.end(), d.out_of_scope.begin(), d.out_of_scope.end());
  // No training, so one generation pass serves every fold.
  std::map<Task, std::vector<Prediction>> preds;
  for (Task t : ctx.spec.tasks()) {
    preds[t] = predict(ctx, ctx.base, d.ontology, all, t);
    result.full_corpus[t] = score(t, preds[t], all, -1);
  }
  std::vector<WorkItem> items;
  for (const FoldSplit* f : chosen_folds(ctx.spec, d)) {
    items.push_back([&ctx, &d, f, preds] {
      FoldResult r;
      r.fold_id = f->fold_id;
      r.target = ctx.spec.domain;
      auto test = eval_set(ctx, d, f->test_ids);
      for (const auto& [t, p] : preds) r.reports[t] = score(t, subset(p, test), test, f->fold_id);
      write_fold(ctx, r);
      return std::vector<FoldResult>{r};
    });
  }
  return items;
}

std::vector<WorkItem> plan_trained(Context& ctx, const std::string& source, const std::vector<std::string>& targets,
                                   const std::vector<Task>& train_tasks, const std::vector<Task>& eval_tasks) {
  const auto& src = ctx.domain(source);
  for (const auto& t : targets) {
    if (ctx.domain(t).folds.size() != src.folds.size()) {
      throw ArgumentError("fold setups differ between " + source + " and " + t);
    }
  }
  std::vector<WorkItem> items;
  for (const FoldSplit* f : chosen_folds(ctx.spec, src)) {
    items.push_back([&ctx, &src, f, source, targets, train_tasks, eval_tasks] {
      auto train_utts = select(src.utterances, f->train_ids);
      const ModelHandle model =
          train_on(ctx, src, train_utts, train_tasks, fold_dir(ctx, source + "_fold" + std::to_string(f->fold_id)));
      std::vector<FoldResult> out;
      for (const auto& target : targets) {
        const auto& tgt = ctx.domain(target);
        // Source fold i pairs with target fold i.
        const FoldSplit& tf = tgt.folds[static_cast<std::size_t>(f->fold_id)];
        auto test = eval_set(ctx, tgt, tf.test_ids);
        FoldResult r;
        r.fold_id = f->fold_id;
        r.source = source;
        r.target = target;
        for (Task t : eval_tasks) {
          r.reports[t] = score(t, predict(ctx, model, tgt.ontology, test, t), test, f->fold_id);
        }
        write_fold(ctx, r);
        out.push_back(std::move(r));
      }
      return out;
    });
  }
  return items;
}

std::vector<WorkItem> plan_clse(Context& ctx) {
  const auto& d = ctx.domain(ctx.spec.domain);
  std::vector<WorkItem> items;
  for (const FoldSplit* f : chosen_folds(ctx.spec, d)) {
    items.push_back([&ctx, &d, f] {
      auto train = select(d.utterances, f->train_ids);
      auto test = eval_set(ctx, d, f->test_ids);
      auto rows = [&](std::span<const AnnotatedUtterance> utts) {
        std::vector<std::string> texts;
        for (const auto& u : utts) texts.push_back(u.text);
        Eigen::MatrixXd m = ctx.encoder->encode(texts);
        std::vector<Eigen::VectorXd> out;
        for (Eigen::Index i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).transpose());
        return out;
      };
      std::vector<std::set<std::string>> gold;
      for (const auto& u : train) gold.push_back(u.gold_intents);
      ClseConfig cfg = ctx.spec.clse;
      cfg.seed = ctx.spec.train.seed + static_cast<std::uint64_t>(f->fold_id);
      auto clf = train_clse(rows(train), gold, d.ontology, cfg);
      const fs::path dir = fold_dir(ctx, ctx.spec.domain + "_fold" + std::to_string(f->fold_id));
      fs::create_directories(dir);
      clf.save(dir / "classifier.json");
      auto test_rows = rows(test);
      std::vector<Prediction> preds;
      for (std::size_t i = 0; i < test.size(); ++i) preds.push_back({test[i].id, clf.predict(test_rows[i]), {}});
      FoldResult r;
      r.fold_id = f->fold_id;
      r.target = ctx.spec.domain;
      r.reports[Task::ID] = micro_f1_id(preds, test, f->fold_id);
      write_fold(ctx, r);
      return std::vector<FoldResult>{r};
    });
  }
  return items;
}

void run_sample_efficiency_body(Context& ctx, RunResult& result) {
  const auto& d = ctx.domain(ctx.spec.domain);
  const Task task = ctx.spec.tasks().front();
  std::map<std::size_t, std::vector<EvalReport>> by_size;
  for (std::size_t si = 0; si < ctx.spec.seeds.size(); ++si) {
    const std::uint64_t seed = ctx.spec.seeds[si];
    std::optional<std::vector<std::string>> test_ids;
    for (std::size_t n : ctx.spec.sizes) {
      auto split = sample_efficiency_split(d.utterances, n, seed, ctx.spec.test_size);
      std::vector<std::string> ids;
      for (const auto& u : split.test) ids.push_back(u.id);
      if (!test_ids) {
        test_ids = ids;
      } else if (*test_ids != ids) {
        throw std::logic_error("sample-efficiency test set changed with n_train");
      }
      const std::string label = "n" + std::to_string(n) + "_seed" + std::to_string(seed);
      const ModelHandle model = train_on(ctx, d, split.train, ctx.spec.tasks(), fold_dir(ctx, label));
      auto rep = score(task, predict(ctx, model, d.ontology, split.test, task), split.test, static_cast<int>(si));
      result.sample_rows.push_back({n, seed, rep.micro_f1});
      by_size[n].push_back(rep);
      std::clog << "[nluqa] " << label << " micro-F1 " << rep.micro_f1 << "\n";
      write_file_atomic(ctx.out / "folds" / (label + ".json"), to_json(rep).dump(2) + "\n");
    }
  }
  for (auto& [n, reps] : by_size) result.aggregates["n=" + std::to_string(n)][task] = aggregate(reps);
}

std::string results_csv(const RunResult& r) {
  std::ostringstream out;
  out << "key,task,fold,micro_f1\n";
  for (const auto& f : r.folds) {
    const std::string key = f.source.empty() || f.source == f.target ? f.target : pair_key(f.source, f.target);
    for (const auto& [task, rep] : f.reports) out << key << ',' << to_string(task) << ',' << f.fold_id << ',' << rep.micro_f1 << '\n';
  }
  for (const auto& [key, by_task] : r.aggregates) {
    for (const auto& [task, rep] : by_task) {
      out << key << ',' << to_string(task) << ",mean," << rep.micro_f1 << '\n';
      if (rep.pooled_micro_f1) out << key << ',' << to_string(task) << ",pooled," << *rep.pooled_micro_f1 << '\n';
    }
  }
  for (const auto& [task, rep] : r.full_corpus) out << "full-corpus," << to_string(task) << ",all," << rep.micro_f1 << '\n';
  return out.str();
}

nlohmann::json manifest_for(const Context& ctx) {
  nlohmann::json fps = nlohmann::json::object();
  for (const auto& [name, d] : ctx.domains) fps[name] = corpus_fingerprint(d.utterances);
  return {{"spec", to_json(ctx.spec)},
          {"seeds", {{"fold_seed", ctx.spec.fold_seed}, {"train_seed", ctx.spec.train.seed}, {"seeds", ctx.spec.seeds}}},
          {"corpus_fingerprints", fps},
          {"template", ctx.tmpl.name()},
          {"backend", ctx.gold ? std::string("gold-oracle") : ctx.spec.backend + ":" + ctx.spec.checkpoint},
          {"training", ctx.gold ? "skipped (gold-oracle answers from evaluation labels)" : "per fold"},
          {"code_fingerprint", code_fingerprint()}};
}

std::optional<nlohmann::json> read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) return std::nullopt;
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

}  // namespace

std::string_view to_string(Protocol p) {
  for (const auto& [v, name] : kProtocolNames) {
    if (v == p) return name;
  }
  return "?";
}

Protocol parse_protocol(std::string_view s) {
  for (const auto& [v, name] : kProtocolNames) {
    if (name == s) return v;
  }
  throw ArgumentError("unknown protocol '" + std::string(s) + "'");
}

std::vector<Task> RunSpec::tasks() const {
  if (task == "both") return {Task::ID, Task::VE};
  return {parse_task(task)};
}

void RunSpec::validate() const {
  train.validate();
  if (task != "both") parse_task(task);
  if (output_dir.empty()) throw ArgumentError("output_dir is required");
  if (data_path.empty()) throw ArgumentError("data_path is required");
  if (workers < 1) throw ArgumentError("workers must be >= 1");
  if (folds < 2) throw ArgumentError("folds must be >= 2");
  InstructionTemplate::parse(template_name);
  const auto ts = tasks();
  const bool has_ve = std::find(ts.begin(), ts.end(), Task::VE) != ts.end();
  if (dataset == Dataset::Clinc && (has_ve || eval_task == Task::VE)) {
    throw ArgumentError("CLINC has no slots; VE is unavailable");
  }
  if (formulation == Formulation::MultipleChoice && has_ve) throw ArgumentError("multiple choice covers ID only");
  if (backend != "gold-oracle" && backend != "worker") throw ArgumentError("backend must be gold-oracle or worker");
  if (backend == "worker" && checkpoint.empty() && protocol != Protocol::ClseBaseline) {
    throw ArgumentError("worker backend needs a checkpoint");
  }

  const bool single = protocol != Protocol::CrossDomain;
  if (single && domain.empty()) throw ArgumentError(std::string(to_string(protocol)) + " needs a domain");
  switch (protocol) {
    case Protocol::CrossDomain:
      if (grid) {
        if (domains.size() < 2) throw ArgumentError("grid mode needs at least two domains");
        if (ts.size() != 1) throw ArgumentError("grid mode scores one task");
        if (std::set<std::string>(domains.begin(), domains.end()).size() != domains.size()) {
          throw ArgumentError("grid domains must be distinct");
        }
      } else {
        if (source_domain.empty() || target_domain.empty()) throw ArgumentError("cross-domain needs source and target");
        if (source_domain == target_domain) throw ArgumentError("cross-domain needs distinct source and target");
      }
      break;
    case Protocol::CrossTask:
      if (ts.size() != 1 || !eval_task) throw ArgumentError("cross-task needs one training task and an eval_task");
      if (ts.front() == *eval_task) throw ArgumentError("cross-task needs distinct training and evaluation tasks");
      break;
    case Protocol::MultiTask:
      if (task != "both") throw ArgumentError("multi-task requires task=both");
      break;
    case Protocol::SampleEfficiency:
      if (sizes.empty() || seeds.empty()) throw ArgumentError("sample-efficiency needs sizes and seeds");
      if (!std::is_sorted(sizes.begin(), sizes.end())) throw ArgumentError("sizes must be ascending");
      if (ts.size() != 1) throw ArgumentError("sample-efficiency scores one task");
      break;
    case Protocol::McAblation:
      if (has_ve) throw ArgumentError("mc-ablation covers ID only");
      break;
    case Protocol::ClseBaseline:
      if (has_ve) throw ArgumentError("the embedding classifier covers ID only");
      if (encoder.empty()) throw ArgumentError("clse-baseline needs an encoder");
      clse.validate();
      break;
    default:
      break;
  }
}

nlohmann::json to_json(const RunSpec& s) {
  nlohmann::json j;
  j["protocol"] = to_string(s.protocol);
  j["dataset"] = dataset_name(s.dataset);
  j["data_path"] = s.data_path.string();
  j["descriptions"] = s.descriptions ? nlohmann::json(s.descriptions->string()) : nlohmann::json(nullptr);
  j["include_out_of_scope"] = s.include_out_of_scope;
  j["domain"] = s.domain;
  j["source_domain"] = s.source_domain;
  j["target_domain"] = s.target_domain;
  j["domains"] = s.domains;
  j["grid"] = s.grid;
  j["folds"] = s.folds;
  j["fold_seed"] = s.fold_seed;
  j["fold_role"] = role_name(s.fold_role);
  j["fold_ids"] = s.fold_ids;
  j["template"] = s.template_name;
  j["task"] = s.task;
  j["eval_task"] = s.eval_task ? nlohmann::json(to_string(*s.eval_task)) : nlohmann::json(nullptr);
  j["formulation"] = s.formulation == Formulation::MultipleChoice ? "mc" : "binary";
  j["train"] = to_json(s.train);
  j["backend"] = s.backend;
  j["checkpoint"] = s.checkpoint;
  j["max_input_length"] = s.max_input_length;
  j["encoder"] = s.encoder;
  j["clse"] = to_json(s.clse);
  j["sizes"] = s.sizes;
  j["seeds"] = s.seeds;
  j["test_size"] = s.test_size;
  j["workers"] = s.workers;
  j["output_dir"] = s.output_dir.string();
  j["reference"] = s.reference;
  return j;
}

RunSpec run_spec_from_json(const nlohmann::json& j) {
  RunSpec s;
  try {
    s.protocol = parse_protocol(j.at("protocol").get<std::string>());
    s.dataset = parse_dataset(j.value("dataset", std::string("nlupp")));
    const char* env = std::getenv(s.dataset == Dataset::Clinc ? "NLUQA_CLINC_PATH" : "NLUQA_NLUPP_PATH");
    s.data_path = j.value("data_path", std::string(env ? env : ""));
    if (j.contains("descriptions") && !j["descriptions"].is_null()) s.descriptions = j["descriptions"].get<std::string>();
    s.include_out_of_scope = j.value("include_out_of_scope", false);
    s.domain = j.value("domain", std::string());
    s.source_domain = j.value("source_domain", std::string());
    s.target_domain = j.value("target_domain", std::string());
    s.domains = j.value("domains", std::vector<std::string>{});
    s.grid = j.value("grid", false);
    s.folds = j.value("folds", s.folds);
    s.fold_seed = j.value("fold_seed", s.fold_seed);
    s.fold_role = parse_role(j.value("fold_role", std::string("train-on-one")));
    s.fold_ids = j.value("fold_ids", std::vector<int>{});
    s.template_name = j.value("template", s.template_name);
    s.task = j.value("task", s.task);
    if (s.task != "both") s.task = std::string(to_string(parse_task(s.task)));
    if (j.contains("eval_task") && !j["eval_task"].is_null()) s.eval_task = parse_task(j["eval_task"].get<std::string>());
    const std::string form = j.value("formulation", std::string("binary"));
    if (form != "binary" && form != "mc") throw ArgumentError("formulation must be binary or mc");
    s.formulation = form == "mc" || s.protocol == Protocol::McAblation ? Formulation::MultipleChoice : Formulation::Binary;
    if (j.contains("train")) s.train = train_config_from_json(j["train"]);
    s.backend = j.value("backend", s.backend);
    s.checkpoint = j.value("checkpoint", s.checkpoint);
    s.max_input_length = j.value("max_input_length", s.max_input_length);
    s.encoder = j.value("encoder", s.encoder);
    if (j.contains("clse")) s.clse = clse_config_from_json(j["clse"]);
    s.sizes = j.value("sizes", std::vector<std::size_t>{});
    s.seeds = j.value("seeds", std::vector<std::uint64_t>{});
    s.test_size = j.value("test_size", s.test_size);
    s.workers = j.value("workers", s.workers);
    s.output_dir = j.value("output_dir", std::string());
    s.reference = j.value("reference", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed run spec: ") + e.what());
  }
  return s;
}

RunSpec load_run_spec(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError("cannot open run spec " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError("malformed run spec " + file.string() + ": " + e.what());
  }
  return run_spec_from_json(j);
}

nlohmann::json FoldResult::to_json() const {
  nlohmann::json reps = nlohmann::json::object();
  for (const auto& [t, r] : reports) reps[std::string(nluqa::to_string(t))] = nluqa::to_json(r);
  return {{"fold_id", fold_id}, {"source", source}, {"target", target}, {"reports", reps}};
}

const EvalReport& RunResult::report(Task task) const {
  if (aggregates.size() != 1) throw ArgumentError("run has " + std::to_string(aggregates.size()) + " aggregates");
  return aggregates.begin()->second.at(task);
}

nlohmann::json RunResult::to_json() const {
  nlohmann::json j;
  j["status"] = complete ? "complete" : "partial";
  if (!error.empty()) j["error"] = error;
  nlohmann::json aggs = nlohmann::json::object();
  for (const auto& [key, by_task] : aggregates) {
    for (const auto& [t, r] : by_task) aggs[key][std::string(nluqa::to_string(t))] = nluqa::to_json(r);
  }
  j["aggregates"] = aggs;
  nlohmann::json folds_json = nlohmann::json::array();
  for (const auto& f : folds) folds_json.push_back(f.to_json());
  j["folds"] = folds_json;
  if (!full_corpus.empty()) {
    for (const auto& [t, r] : full_corpus) j["full_corpus"][std::string(nluqa::to_string(t))] = nluqa::to_json(r);
  }
  if (transfer) {
    j["transfer"] = {{"domains", transfer->domains}};
    for (Eigen::Index i = 0; i < transfer->scores.rows(); ++i) {
      std::vector<double> row;
      for (Eigen::Index k = 0; k < transfer->scores.cols(); ++k) row.push_back(transfer->scores(i, k));
      j["transfer"]["scores"].push_back(row);
    }
  }
  if (!sample_rows.empty()) {
    for (const auto& r : sample_rows) {
      j["sample_efficiency"].push_back({{"n_train", r.n_train}, {"seed", r.seed}, {"micro_f1", r.micro_f1}});
    }
  }
  return j;
}

std::map<std::string, LoadedDomain> load_domains(const RunSpec& spec) {
  std::vector<std::string> names;
  if (spec.protocol == Protocol::CrossDomain) {
    names = spec.grid ? spec.domains : std::vector<std::string>{spec.source_domain, spec.target_domain};
  } else {
    names = {spec.domain};
  }
  const bool needs_folds = spec.protocol != Protocol::SampleEfficiency;

  std::map<std::string, LoadedDomain> out;
  auto finish = [&](LoadedDomain& d, const std::map<int, std::vector<FoldSplit>>* published) {
    if (!needs_folds) return;
    if (published) {
      auto it = published->find(spec.folds);
      if (it != published->end()) {
        d.folds = it->second;
        if (spec.fold_role == FoldRole::TestOnOne) {
          for (auto& f : d.folds) std::swap(f.train_ids, f.test_ids);
        }
        return;
      }
    }
    d.folds = make_folds(d.utterances, spec.folds, spec.fold_seed, spec.fold_role);
  };

  if (spec.dataset == Dataset::NluPlusPlus) {
    for (const auto& name : names) {
      auto loaded = load_nluplusplus(spec.data_path, name);
      LoadedDomain d{std::move(loaded.ontology), std::move(loaded.utterances), {}, {}};
      finish(d, &loaded.folds);
      out.emplace(name, std::move(d));
    }
  } else {
    ClincOptions opts;
    opts.descriptions = spec.descriptions;
    auto all = load_clinc(spec.data_path, opts);
    for (const auto& name : names) {
      auto it = all.find(name);
      if (it == all.end()) throw ArgumentError("CLINC has no domain '" + name + "'");
      LoadedDomain d{std::move(it->second.ontology), std::move(it->second.utterances),
                     std::move(it->second.out_of_scope), {}};
      finish(d, nullptr);
      out.emplace(name, std::move(d));
    }
  }
  return out;
}

void write_file_atomic(const fs::path& file, const std::string& content) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw LoadError("write failed for " + tmp.string());
  }
  fs::rename(tmp, file);
}

RunResult run(const RunSpec& spec, const RunOptions& options) {
  spec.validate();
  Context ctx{spec, load_domains(spec), InstructionTemplate::parse(spec.template_name), nullptr, nullptr, {}, false,
              spec.output_dir};

  ctx.gold = spec.backend == "gold-oracle";
  if (spec.protocol == Protocol::ClseBaseline) {
    if (options.encoder) {
      ctx.encoder = options.encoder;
    } else {
      const ModelRegistry registry = options.registry ? *options.registry : ModelRegistry::from_environment();
      ctx.encoder = make_encoder(spec.encoder, registry);
    }
  } else if (options.backend) {
    ctx.backend = options.backend;
  } else if (ctx.gold) {
    ctx.backend = std::make_shared<GoldOracleBackend>();
  } else {
    ctx.backend = std::make_shared<WorkerBackend>(options.registry ? *options.registry : ModelRegistry::from_environment());
  }
  ctx.base = ctx.gold ? ModelHandle{BackendKind::GoldOracle, "gold-oracle", "", nullptr}
                      : make_checkpoint_handle(spec.checkpoint);

  // Resumability: an identical completed run is a no-op.
  const nlohmann::json manifest = manifest_for(ctx);
  const fs::path manifest_file = ctx.out / "manifest.json";
  if (auto previous = read_json(manifest_file)) {
    previous->erase("created");
    auto results = read_json(ctx.out / "results.json");
    const bool same = *previous == manifest;
    if (!options.force) {
      if (same && results && results->value("status", "") == "complete") {
        RunResult r;
        r.complete = true;
        r.skipped = true;
        for (auto& [key, by_task] : (*results)["aggregates"].items()) {
          for (auto& [t, rep] : by_task.items()) r.aggregates[key][parse_task(t)] = eval_report_from_json(rep);
        }
        if (results->contains("full_corpus")) {
          for (auto& [t, rep] : (*results)["full_corpus"].items()) r.full_corpus[parse_task(t)] = eval_report_from_json(rep);
        }
        return r;
      }
      if (!same) throw ConfigError(ctx.out.string() + " holds a different run; pass --force to replace it");
    }
    fs::remove_all(ctx.out);
  }
  nlohmann::json stamped = manifest;
  stamped["created"] = now_iso();
  write_file_atomic(manifest_file, stamped.dump(2) + "\n");

  RunResult result;
  try {
    std::vector<WorkItem> items;
    const auto ts = spec.tasks();
    switch (spec.protocol) {
      case Protocol::ZeroShot:
        items = plan_zero_shot(ctx, result);
        break;
      case Protocol::InDomain:
      case Protocol::MultiTask:
      case Protocol::McAblation:
        items = plan_trained(ctx, spec.domain, {spec.domain}, ts, ts);
        break;
      case Protocol::CrossTask:
        items = plan_trained(ctx, spec.domain, {spec.domain}, ts, {*spec.eval_task});
        break;
      case Protocol::CrossDomain:
        if (spec.grid) {
          for (const auto& s : spec.domains) {
            auto part = plan_trained(ctx, s, spec.domains, ts, ts);
            items.insert(items.end(), part.begin(), part.end());
          }
        } else {
          items = plan_trained(ctx, spec.source_domain, {spec.target_domain}, ts, ts);
        }
        break;
      case Protocol::ClseBaseline:
        items = plan_clse(ctx);
        break;
      case Protocol::SampleEfficiency:
        run_sample_efficiency_body(ctx, result);
        break;
    }
    if (spec.protocol != Protocol::SampleEfficiency) {
      result.folds = execute(items, spec.workers, result.error);
      aggregate_into(result);
    }
    result.complete = result.error.empty();
  } catch (const std::exception& e) {
    result.error = e.what();
    result.complete = false;
  }

  if (result.complete && spec.protocol == Protocol::CrossDomain && spec.grid) {
    TransferMatrix tm;
    tm.domains = spec.domains;
    const auto n = static_cast<Eigen::Index>(tm.domains.size());
    tm.scores.resize(n, n);
    const Task t = spec.tasks().front();
    for (Eigen::Index s = 0; s < n; ++s) {
      for (Eigen::Index g = 0; g < n; ++g) {
        const auto& src = tm.domains[static_cast<std::size_t>(s)];
        const auto& tgt = tm.domains[static_cast<std::size_t>(g)];
        tm.scores(s, g) = 100.0 * result.aggregates.at(s == g ? tgt : pair_key(src, tgt)).at(t).micro_f1;
      }
    }
    std::ostringstream csv;
    tm.write_csv(csv);
    write_file_atomic(ctx.out / "transfer.csv", csv.str());
    result.transfer = std::move(tm);
  }
  if (!result.sample_rows.empty()) {
    std::ostringstream csv;
    csv << "n_train,seed,micro_f1\n";
    for (const auto& r : result.sample_rows) csv << r.n_train << ',' << r.seed << ',' << r.micro_f1 << '\n';
    write_file_atomic(ctx.out / "sample_efficiency.csv", csv.str());
  }

  nlohmann::json results = result.to_json();
  results["reference"] = spec.reference;
  write_file_atomic(ctx.out / "results.json", results.dump(2) + "\n");
  write_file_atomic(ctx.out / "results.csv", results_csv(result));
  return result;
}

namespace {

RunResult checked(const RunSpec& spec, const RunOptions& options, std::initializer_list<Protocol> allowed) {
  if (std::find(allowed.begin(), allowed.end(), spec.protocol) == allowed.end()) {
    throw ArgumentError("spec protocol " + std::string(to_string(spec.protocol)) + " does not fit this runner");
  }
  return run(spec, options);
}

}  // namespace

RunResult run_zero_shot(const RunSpec& s, const RunOptions& o) { return checked(s, o, {Protocol::ZeroShot}); }
RunResult run_in_domain(const RunSpec& s, const RunOptions& o) {
  return checked(s, o, {Protocol::InDomain, Protocol::MultiTask, Protocol::McAblation});
}
RunResult run_cross_domain(const RunSpec& s, const RunOptions& o) { return checked(s, o, {Protocol::CrossDomain}); }
RunResult run_cross_task(const RunSpec& s, const RunOptions& o) { return checked(s, o, {Protocol::CrossTask}); }
RunResult run_sample_efficiency(const RunSpec& s, const RunOptions& o) {
  return checked(s, o, {Protocol::SampleEfficiency});
}

}  // namespace nluqa
