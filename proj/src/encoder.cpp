#include "nluqa/encoder.hpp"

#include <cctype>
#include <cmath>
#include <map>
#include <set>

#include "nluqa/errors.hpp"
#include "nluqa/fingerprint.hpp"
#include "nluqa/text.hpp"

namespace nluqa {

namespace {

constexpr std::string_view kHashPrefix = "hash-ngram-";

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

void normalize_rows(Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0.0) {
      m.row(i) /= n;
    } else {
      m.row(i).setZero();
      m(i, 0) = 1.0;
    }
  }
}

}  // namespace

HashingEncoder::HashingEncoder(int dimension) : dim_(dimension), id_(std::string(kHashPrefix) + std::to_string(dimension)) {
  if (dimension < 2) throw ArgumentError("hashing dimension must be >= 2");
}

Eigen::VectorXd HashingEncoder::encode_one(std::string_view text) const {
  std::map<std::string, int> features;
  const auto ws = words(text);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    ++features["w:" + ws[i]];
    if (i + 1 < ws.size()) ++features["b:" + ws[i] + " " + ws[i + 1]];
  }
  const std::string padded = " " + join(ws, " ") + " ";
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) ++features["c:" + padded.substr(i, 3)];

  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
  for (const auto& [f, count] : features) {
    const std::uint64_t h = fnv1a(f);
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v[static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim_))] += sign * (1.0 + std::log(count));
  }
  const double n = v.norm();
  if (n > 0.0) {
    v /= n;
  } else {
    v[0] = 1.0;
  }
  return v;
}

Eigen::MatrixXd HashingEncoder::encode(std::span<const std::string> texts) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(texts.size()), dim_);
  for (std::size_t i = 0; i < texts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = encode_one(texts[i]);
  return out;
}

WorkerEncoder::WorkerEncoder(std::string id, std::string source, const ModelRegistry& registry)
    : id_(std::move(id)), source_(std::move(source)), process_(registry.worker_command(), registry.cache_dir()) {}

Eigen::MatrixXd WorkerEncoder::encode(std::span<const std::string> texts) {
  auto r = process_.call({{"op", "embed"},
                          {"model", source_},
                          {"texts", std::vector<std::string>(texts.begin(), texts.end())}});
  const auto rows = r.at("vectors").get<std::vector<std::vector<double>>>();
  if (rows.size() != texts.size() || rows.empty()) throw std::runtime_error("embed: wrong number of vectors");
  const auto dim = static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != dim) throw std::runtime_error("embed: ragged vectors");
    out.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(rows[i].data(), dim);
  }
  normalize_rows(out);
  return out;
}

CachingEncoder::CachingEncoder(std::unique_ptr<SentenceEncoder> inner) : inner_(std::move(inner)) {}

std::size_t CachingEncoder::cache_size() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

Eigen::MatrixXd CachingEncoder::encode(std::span<const std::string> texts) {
  std::vector<std::string> keys;
  keys.reserve(texts.size());
  std::vector<std::string> missing;
  {
    std::lock_guard lock(mu_);
    for (const auto& t : texts) {
      keys.push_back(inner_->id() + ":" + sha256_hex(t));
      if (!cache_.count(keys.back())) missing.push_back(t);
    }
  }
  if (!missing.empty()) {
    // Deduplicate so each text is encoded once.
    std::vector<std::string> unique;
    std::set<std::string> seen;
    for (auto& t : missing) {
      if (seen.insert(t).second) unique.push_back(t);
    }
    Eigen::MatrixXd fresh = inner_->encode(unique);
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < unique.size(); ++i) {
      cache_[inner_->id() + ":" + sha256_hex(unique[i])] = fresh.row(static_cast<Eigen::Index>(i)).transpose();
    }
  }
  std::lock_guard lock(mu_);
  const auto dim = cache_.at(keys.front()).size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(texts.size()), dim);
  for (std::size_t i = 0; i < keys.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = cache_.at(keys[i]).transpose();
  return out;
}

std::unique_ptr<SentenceEncoder> make_encoder(const std::string& encoder_id, const ModelRegistry& registry) {
  if (registry.has_encoder(encoder_id)) {
    const auto& e = registry.encoder(encoder_id);
    if (e.kind == "native") return make_encoder(e.source, ModelRegistry{});
    if (e.kind == "sentence-transformers") {
      return std::make_unique<CachingEncoder>(std::make_unique<WorkerEncoder>(encoder_id, e.source, registry));
    }
    throw ConfigError("encoder '" + encoder_id + "' has unknown kind '" + e.kind + "'");
  }
  if (encoder_id.rfind(kHashPrefix, 0) == 0) {
    const std::string dim = encoder_id.substr(kHashPrefix.size());
    if (!dim.empty() && dim.find_first_not_of("0123456789") == std::string::npos && dim.size() < 7 && std::stoi(dim) >= 2) {
      return std::make_unique<CachingEncoder>(std::make_unique<HashingEncoder>(std::stoi(dim)));
    }
  }
  throw ConfigError("unknown encoder '" + encoder_id + "'");
}

Eigen::MatrixXd embed(std::span<const std::string> texts, const std::string& encoder_id,
                      const ModelRegistry& registry) {
  auto enc = make_encoder(encoder_id, registry);
  if (texts.empty()) throw ArgumentError("embed: no texts");
  return enc->encode(texts);
}

}  // namespace nluqa
