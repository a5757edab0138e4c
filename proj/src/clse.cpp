#include "nluqa/clse.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "nluqa/errors.hpp"
#include "nluqa/rng.hpp"

namespace nluqa {

namespace {

Eigen::VectorXd sigmoid(const Eigen::VectorXd& z) {
  return z.unaryExpr([](double v) {
    // Stable in both tails.
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

void glorot(Eigen::MatrixXd& w, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-limit, limit);
  }
}

// Adam state for one parameter block.
template <typename T>
struct Adam {
  T m, v;
  explicit Adam(const T& like) : m(T::Zero(like.rows(), like.cols())), v(T::Zero(like.rows(), like.cols())) {}

  void step(T& param, const T& grad, double lr, int t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad.cwiseProduct(grad);
    const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(std::move(r));
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  const auto cols = rows.empty() ? 0 : rows.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw LoadError("ragged matrix in classifier file");
    for (std::size_t k = 0; k < cols; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return m;
}

Eigen::VectorXd vector_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void ClseConfig::validate() const {
  if (hidden_size < 1) throw ArgumentError("hidden_size must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ArgumentError("threshold must lie in (0, 1)");
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
}

nlohmann::json to_json(const ClseConfig& cfg) {
  return {{"hidden_size", cfg.hidden_size}, {"hidden_activation", "tanh"}, {"output_activation", "sigmoid"},
          {"loss", "binary-cross-entropy"},  {"optimizer", "adam"},         {"threshold", cfg.threshold},
          {"epochs", cfg.epochs},            {"batch_size", cfg.batch_size}, {"learning_rate", cfg.learning_rate},
          {"seed", cfg.seed}};
}

ClseConfig clse_config_from_json(const nlohmann::json& j) {
  ClseConfig cfg;
  cfg.hidden_size = j.value("hidden_size", cfg.hidden_size);
  cfg.threshold = j.value("threshold", cfg.threshold);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

Eigen::VectorXd ClseClassifier::probabilities(const Eigen::VectorXd& x) const {
  if (x.size() != w1_.cols()) {
    throw ArgumentError("embedding has dimension " + std::to_string(x.size()) + ", classifier expects " +
                        std::to_string(w1_.cols()));
  }
  const Eigen::VectorXd h = (w1_ * x + b1_).array().tanh().matrix();
  return sigmoid(w2_ * h + b2_);
}

std::set<std::string> ClseClassifier::predict(const Eigen::VectorXd& x, double theta) const {
  const Eigen::VectorXd p = probabilities(x);
  std::set<std::string> out;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (p[k] > theta) out.insert(intents_[static_cast<std::size_t>(k)]);
  }
  return out;
}

nlohmann::json ClseClassifier::to_json() const {
  return {{"intents", intents_},        {"threshold", threshold_}, {"final_loss", final_loss_},
          {"w1", matrix_json(w1_)},      {"b1", std::vector<double>(b1_.data(), b1_.data() + b1_.size())},
          {"w2", matrix_json(w2_)},      {"b2", std::vector<double>(b2_.data(), b2_.data() + b2_.size())}};
}

ClseClassifier ClseClassifier::from_json(const nlohmann::json& j) {
  ClseClassifier c;
  c.intents_ = j.at("intents").get<std::vector<std::string>>();
  c.threshold_ = j.value("threshold", 0.3);
  c.final_loss_ = j.value("final_loss", 0.0);
  c.w1_ = matrix_from(j.at("w1"));
  c.b1_ = vector_from(j.at("b1"));
  c.w2_ = matrix_from(j.at("w2"));
  c.b2_ = vector_from(j.at("b2"));
  if (c.b1_.size() != c.w1_.rows() || c.w2_.cols() != c.w1_.rows() || c.b2_.size() != c.w2_.rows() ||
      static_cast<std::size_t>(c.w2_.rows()) != c.intents_.size()) {
    throw LoadError("classifier file has inconsistent shapes");
  }
  return c;
}

void ClseClassifier::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw LoadError("cannot write " + file.string());
  out << to_json().dump() << '\n';
}

ClseClassifier ClseClassifier::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError("cannot open " + file.string());
  return from_json(nlohmann::json::parse(in));
}

ClseClassifier train_clse(std::span<const Eigen::VectorXd> embeddings,
                          std::span<const std::set<std::string>> gold, const DomainOntology& o,
                          const ClseConfig& cfg) {
  cfg.validate();
  if (embeddings.empty()) throw ArgumentError("train_clse: no training examples");
  if (embeddings.size() != gold.size()) throw ArgumentError("train_clse: embeddings and labels differ in length");
  if (o.intents.empty()) throw ArgumentError("train_clse: ontology has no intents");
  const Eigen::Index d = embeddings.front().size();
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != d) {
      throw ArgumentError("train_clse: embedding " + std::to_string(i) + " has dimension " +
                          std::to_string(embeddings[i].size()) + ", expected " + std::to_string(d));
    }
  }
  const auto k = static_cast<Eigen::Index>(o.intents.size());
  const auto n = embeddings.size();

  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(k, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& name : gold[i]) {
      Eigen::Index idx = -1;
      for (Eigen::Index c = 0; c < k; ++c) {
        if (o.intents[static_cast<std::size_t>(c)].name == name) idx = c;
      }
      if (idx < 0) throw ArgumentError("train_clse: intent '" + name + "' not in ontology");
      targets(idx, static_cast<Eigen::Index>(i)) = 1.0;
    }
  }

  ClseClassifier c;
  for (const auto& intent : o.intents) c.intents_.push_back(intent.name);
  c.threshold_ = cfg.threshold;
  Rng rng(cfg.seed);
  c.w1_.resize(cfg.hidden_size, d);
  glorot(c.w1_, rng);
  c.b1_ = Eigen::VectorXd::Zero(cfg.hidden_size);
  c.w2_.resize(k, cfg.hidden_size);
  glorot(c.w2_, rng);
  c.b2_ = Eigen::VectorXd::Zero(k);

  Adam<Eigen::MatrixXd> aw1(c.w1_), aw2(c.w2_);
  Adam<Eigen::VectorXd> ab1(c.b1_), ab2(c.b2_);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  int t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const auto b = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd x(d, b), y(k, b);
      for (Eigen::Index j = 0; j < b; ++j) {
        const std::size_t idx = order[start + static_cast<std::size_t>(j)];
        x.col(j) = embeddings[idx];
        y.col(j) = targets.col(static_cast<Eigen::Index>(idx));
      }
      const Eigen::MatrixXd h = ((c.w1_ * x).colwise() + c.b1_).array().tanh().matrix();
      const Eigen::MatrixXd z = (c.w2_ * h).colwise() + c.b2_;
      Eigen::MatrixXd p(k, b);
      for (Eigen::Index j = 0; j < b; ++j) p.col(j) = sigmoid(z.col(j));

      // Mean over all (class, example) cells, as in the usual BCE reduction.
      const double scale = 1.0 / static_cast<double>(k * b);
      for (Eigen::Index r = 0; r < k; ++r) {
        for (Eigen::Index j = 0; j < b; ++j) {
          const double zz = z(r, j);
          epoch_loss += (std::max(zz, 0.0) - zz * y(r, j) + std::log1p(std::exp(-std::abs(zz)))) * scale *
                        static_cast<double>(b) / static_cast<double>(n);
        }
      }
      const Eigen::MatrixXd dz = (p - y) * scale;
      const Eigen::MatrixXd gw2 = dz * h.transpose();
      const Eigen::VectorXd gb2 = dz.rowwise().sum();
      const Eigen::MatrixXd dh = (c.w2_.transpose() * dz).cwiseProduct((1.0 - h.array().square()).matrix());
      const Eigen::MatrixXd gw1 = dh * x.transpose();
      const Eigen::VectorXd gb1 = dh.rowwise().sum();

      ++t;
      aw1.step(c.w1_, gw1, cfg.learning_rate, t);
      ab1.step(c.b1_, gb1, cfg.learning_rate, t);
      aw2.step(c.w2_, gw2, cfg.learning_rate, t);
      ab2.step(c.b2_, gb2, cfg.learning_rate, t);
    }
    c.final_loss_ = epoch_loss;
  }
  return c;
}

}  // namespace nluqa
