#include "nluqa/worker.hpp"

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "nluqa/errors.hpp"

extern char** environ;

namespace nluqa {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kRandomPrefix = "random-t5:";

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

fs::path source_dir() { return fs::path(NLUQA_SOURCE_DIR); }

std::vector<std::string> default_worker_command() {
  return {"python3", (source_dir() / "tools" / "seq2seq_worker.py").string()};
}

void write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(std::string("worker write failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

}  // namespace

ModelRegistry ModelRegistry::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open model registry " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed model registry " + file.string() + ": " + e.what());
  }
  const fs::path base = fs::absolute(file).parent_path();
  const fs::path root = fs::weakly_canonical(base / j.value("root", std::string("..")));

  ModelRegistry r;
  const nlohmann::json checkpoints = j.value("checkpoints", nlohmann::json::object());
  const nlohmann::json encoders = j.value("encoders", nlohmann::json::object());
  for (auto& [name, entry] : checkpoints.items()) {
    CheckpointEntry c;
    c.source = entry.at("source").get<std::string>();
    if (entry.contains("architecture")) c.architecture = base / entry["architecture"].get<std::string>();
    r.checkpoints_.emplace(name, std::move(c));
  }
  for (auto& [name, entry] : encoders.items()) {
    EncoderEntry e;
    e.kind = entry.value("kind", std::string("sentence-transformers"));
    e.source = entry.value("source", name);
    e.dimension = entry.value("dimension", 0);
    r.encoders_.emplace(name, std::move(e));
  }
  if (j.contains("worker")) {
    for (const auto& arg : j["worker"]) {
      auto s = arg.get<std::string>();
      if (s.rfind("{root}", 0) == 0) s = (root / s.substr(7)).string();
      r.worker_command_.push_back(std::move(s));
    }
  }
  if (j.contains("cache_dir") && !j["cache_dir"].is_null()) {
    r.cache_dir_ = base / j["cache_dir"].get<std::string>();
  }
  return r;
}

ModelRegistry ModelRegistry::from_environment() {
  if (const char* cfg = std::getenv("NLUQA_CONFIG"); cfg && *cfg) return load(cfg);
  const fs::path fallback = source_dir() / "configs" / "models.json";
  if (fs::exists(fallback)) return load(fallback);
  return {};
}

std::string ModelRegistry::resolve_checkpoint(const std::string& id) const {
  if (auto it = checkpoints_.find(id); it != checkpoints_.end()) return it->second.source;
  if (id.rfind(kRandomPrefix, 0) == 0) {
    const std::string arch = id.substr(kRandomPrefix.size());
    if (!arch.empty() && arch.front() == '{') return id;
    if (fs::exists(arch)) return std::string(kRandomPrefix) + fs::absolute(arch).string();
    throw ConfigError("architecture file not found: " + arch);
  }
  if (fs::is_directory(id)) return fs::absolute(id).string();
  throw ConfigError("unknown checkpoint '" + id + "'");
}

std::optional<fs::path> ModelRegistry::architecture_of(const std::string& id) const {
  if (auto it = checkpoints_.find(id); it != checkpoints_.end()) return it->second.architecture;
  if (id.rfind(kRandomPrefix, 0) == 0) {
    const std::string arch = id.substr(kRandomPrefix.size());
    if (!arch.empty() && arch.front() != '{') return fs::path(arch);
  }
  if (fs::exists(fs::path(id) / "config.json")) return fs::path(id) / "config.json";
  return std::nullopt;
}

bool ModelRegistry::has_encoder(const std::string& id) const { return encoders_.count(id) > 0; }

const EncoderEntry& ModelRegistry::encoder(const std::string& id) const {
  auto it = encoders_.find(id);
  if (it == encoders_.end()) throw ConfigError("unknown encoder '" + id + "'");
  return it->second;
}

std::vector<std::string> ModelRegistry::worker_command() const {
  if (const char* w = std::getenv("NLUQA_WORKER"); w && *w) return split_ws(w);
  return worker_command_.empty() ? default_worker_command() : worker_command_;
}

std::optional<fs::path> ModelRegistry::cache_dir() const {
  if (const char* c = std::getenv("NLUQA_MODEL_CACHE"); c && *c) return fs::path(c);
  return cache_dir_;
}

WorkerProcess::WorkerProcess(std::vector<std::string> command, std::optional<fs::path> cache_dir)
    : command_(std::move(command)), cache_dir_(std::move(cache_dir)) {
  if (command_.empty()) throw ConfigError("empty worker command");
}

WorkerProcess::~WorkerProcess() { stop(); }

void WorkerProcess::start() {
  // A dead worker must surface as an exception, not kill the process.
  std::signal(SIGPIPE, SIG_IGN);

  int in_pipe[2], out_pipe[2];
  if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0) {
    throw std::runtime_error(std::string("pipe: ") + std::strerror(errno));
  }
  std::vector<std::string> args = command_;
  if (cache_dir_) {
    args.push_back("--cache-dir");
    args.push_back(cache_dir_->string());
  }
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) {
    posix_spawn_file_actions_addclose(&actions, fd);
  }
  pid_t pid = 0;
  int rc = posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  if (rc != 0) {
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    throw ConfigError("cannot start worker '" + command_.front() + "': " + std::strerror(rc));
  }
  ::fcntl(in_pipe[1], F_SETFD, FD_CLOEXEC);
  ::fcntl(out_pipe[0], F_SETFD, FD_CLOEXEC);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = ::fdopen(out_pipe[0], "r");
}

void WorkerProcess::stop() noexcept {
  if (pid_ < 0) return;
  try {
    write_all(to_child_, "{\"op\":\"shutdown\"}\n");
  } catch (...) {
  }
  ::close(to_child_);
  if (from_child_) std::fclose(from_child_);
  int status = 0;
  ::waitpid(pid_, &status, 0);
  pid_ = -1;
  to_child_ = -1;
  from_child_ = nullptr;
}

nlohmann::json WorkerProcess::call(const nlohmann::json& request) {
  std::lock_guard lock(mu_);
  if (pid_ < 0) start();
  write_all(to_child_, request.dump() + "\n");

  char* line = nullptr;
  std::size_t cap = 0;
  ssize_t n = ::getline(&line, &cap, from_child_);
  std::string text = n > 0 ? std::string(line, static_cast<std::size_t>(n)) : std::string();
  std::free(line);
  if (n <= 0) {
    stop();
    throw std::runtime_error("worker exited during '" + request.value("op", std::string("?")) + "'");
  }
  nlohmann::json response;
  try {
    response = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw std::runtime_error("worker sent a malformed response: " + text);
  }
  if (!response.value("ok", false)) {
    const std::string err = response.value("error", std::string("unknown worker error"));
    if (response.contains("index") && response["index"].is_number_integer()) {
      throw GenerationError(response["index"].get<std::size_t>(), err);
    }
    throw std::runtime_error(err);
  }
  return response;
}

WorkerBackend::WorkerBackend(ModelRegistry registry) : registry_(std::move(registry)) {}

WorkerProcess& WorkerBackend::process() {
  std::lock_guard lock(start_mu_);
  if (!process_) process_ = std::make_unique<WorkerProcess>(registry_.worker_command(), registry_.cache_dir());
  return *process_;
}

TrainResult WorkerBackend::do_train(const ModelHandle& base, std::span<const InstructionInstance> data,
                                    const TrainConfig& cfg, const fs::path& out_dir) {
  nlohmann::json examples = nlohmann::json::array();
  for (const auto& inst : data) {
    examples.push_back({{"input", inst.input_text},
                        {"target", inst.target_text},
                        {"question_start", inst.question_start}});
  }
  const fs::path state_dir = fs::absolute(out_dir / "model");
  nlohmann::json request = {{"op", "train"},
                            {"checkpoint", registry_.resolve_checkpoint(base.checkpoint_id)},
                            {"state", base.state},
                            {"data", std::move(examples)},
                            {"config", to_json(cfg)},
                            {"out_dir", state_dir.string()}};
  auto r = process().call(request);

  TrainResult result;
  result.model = base;
  result.model.state = r.value("state", state_dir.string());
  auto& m = result.manifest;
  m.config = cfg;
  m.checkpoint_id = base.checkpoint_id;
  m.base_state = base.state;
  m.data_fingerprint = data_fingerprint(data);
  m.examples = data.size();
  m.truncated_inputs = r.value("truncated_inputs", std::size_t{0});
  m.truncated_targets = r.value("truncated_targets", std::size_t{0});
  m.trainable_parameters = r.value("trainable_parameters", std::uint64_t{0});
  m.total_parameters = r.value("total_parameters", std::uint64_t{0});
  m.final_loss = r.value("final_loss", 0.0);
  m.warnings = r.value("warnings", std::vector<std::string>{});
  if (m.truncated_inputs > 0) {
    m.warnings.push_back(std::to_string(m.truncated_inputs) + " inputs truncated to " +
                         std::to_string(cfg.max_input_length) + " tokens");
  }
  return result;
}

std::vector<std::string> WorkerBackend::do_generate(const ModelHandle& m,
                                                    std::span<const std::string> inputs,
                                                    const GenerateOptions& opts) {
  if (m.kind != BackendKind::Seq2SeqCheckpoint) throw ConfigError("worker backend needs a checkpoint handle");
  nlohmann::json request = {{"op", "generate"},
                            {"checkpoint", registry_.resolve_checkpoint(m.checkpoint_id)},
                            {"state", m.state},
                            {"inputs", std::vector<std::string>(inputs.begin(), inputs.end())},
                            {"question_starts", opts.question_starts},
                            {"max_new_tokens", opts.max_new_tokens},
                            {"max_input_length", opts.max_input_length},
                            {"batch_size", opts.batch_size}};
  auto r = process().call(request);
  return r.at("outputs").get<std::vector<std::string>>();
}

}  // namespace nluqa
