#include "karl/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <Eigen/Sparse>
#include <json.hpp>

#include "karl/eval.hpp"
#include "karl/parallel.hpp"

namespace karl {

using nlohmann::json;

TrainingSet TrainingSet::subset(std::span<const std::size_t> rows) const {
  TrainingSet out;
  out.features.schema_id = features.schema_id;
  out.features.values.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.values.row(static_cast<Eigen::Index>(i)) = features.values.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels.at(rows[i]));
    if (!keys.empty()) out.keys.push_back(keys.at(rows[i]));
  }
  return out;
}

TrainingSet TrainingSet::concat(const TrainingSet& a, const TrainingSet& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.features.schema_id != b.features.schema_id) {
    throw SchemaMismatch("cannot combine feature rows from featurizers " + a.features.schema_id.hex() +
                         " and " + b.features.schema_id.hex());
  }
  if (a.features.cols() != b.features.cols()) throw InvalidArgument("feature dimension mismatch");
  TrainingSet out;
  out.features.schema_id = a.features.schema_id;
  out.features.values.resize(a.features.rows() + b.features.rows(), a.features.cols());
  out.features.values << a.features.values, b.features.values;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  if (!a.keys.empty() && !b.keys.empty()) {
    out.keys = a.keys;
    out.keys.insert(out.keys.end(), b.keys.begin(), b.keys.end());
  }
  return out;
}

LogRegModel LogRegModel::zeros(int dim, SchemaId schema) {
  LogRegModel m;
  m.weights = Eigen::MatrixXd::Zero(kNumRel3, dim);
  m.bias = Eigen::VectorXd::Zero(kNumRel3);
  m.schema_id = schema;
  return m;
}

namespace {

/// Row-wise log-softmax cross-entropy of logits Z (n x 3). Fills P with
/// probabilities when non-null.
double mean_cross_entropy(const Eigen::MatrixXd& Z, std::span<const Rel3> labels, Eigen::MatrixXd* P) {
  const Eigen::Index n = Z.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = Z.row(i).maxCoeff();
    double s = 0.0;
    for (int c = 0; c < kNumRel3; ++c) s += std::exp(Z(i, c) - mx);
    const double lse = mx + std::log(s);
    total += lse - Z(i, index_of(labels[static_cast<std::size_t>(i)]));
    if (P) {
      for (int c = 0; c < kNumRel3; ++c) (*P)(i, c) = std::exp(Z(i, c) - lse);
    }
  }
  return total / static_cast<double>(n);
}

Eigen::MatrixXd logits(const Eigen::MatrixXd& X, const Eigen::MatrixXd& W, const Eigen::VectorXd& b) {
  Eigen::MatrixXd Z = X * W.transpose();
  Z.rowwise() += b.transpose();
  return Z;
}

void check_training_input(const TrainingSet& t) {
  if (t.features.rows() != static_cast<Eigen::Index>(t.labels.size())) {
    throw InvalidArgument("feature rows and labels are misaligned");
  }
  if (!t.keys.empty() && t.keys.size() != t.labels.size()) throw InvalidArgument("keys and labels are misaligned");
  std::array<bool, kNumRel3> present{};
  for (Rel3 r : t.labels) present[static_cast<std::size_t>(index_of(r))] = true;
  if (std::count(present.begin(), present.end(), true) < 2) {
    throw InvalidArgument("training requires examples of at least two classes");
  }
  if (!t.features.values.allFinite()) throw InvalidArgument("training features contain non-finite values");
}

Proba softmax_row(const Eigen::VectorXd& z) {
  const double mx = z.maxCoeff();
  Proba p{};
  double s = 0.0;
  for (int c = 0; c < kNumRel3; ++c) {
    p[static_cast<std::size_t>(c)] = std::exp(z(c) - mx);
    s += p[static_cast<std::size_t>(c)];
  }
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

double regularized_loss(const Eigen::MatrixXd& X, std::span<const Rel3> labels, const Eigen::MatrixXd& W,
                        const Eigen::VectorXd& b, double l2_lambda, Eigen::MatrixXd* grad_w,
                        Eigen::VectorXd* grad_b) {
  const Eigen::MatrixXd Z = logits(X, W, b);
  const bool want_grad = grad_w || grad_b;
  Eigen::MatrixXd P;
  if (want_grad) P.resize(Z.rows(), kNumRel3);
  const double ce = mean_cross_entropy(Z, labels, want_grad ? &P : nullptr);
  if (want_grad) {
    for (Eigen::Index i = 0; i < P.rows(); ++i) P(i, index_of(labels[static_cast<std::size_t>(i)])) -= 1.0;
    const double inv_n = 1.0 / static_cast<double>(X.rows());
    if (grad_w) *grad_w = inv_n * (P.transpose() * X) + 2.0 * l2_lambda * W;
    if (grad_b) *grad_b = inv_n * P.colwise().sum().transpose();
  }
  return ce + l2_lambda * W.squaredNorm();
}

LogRegModel train_logreg(const TrainingSet& train, const Hyperparams& hp, std::uint64_t /*seed*/,
                         TrainTrace* trace) {
  check_training_input(train);
  if (!(hp.l2_lambda > 0.0)) throw InvalidArgument("l2_lambda must be positive");
  if (hp.max_iters < 0) throw InvalidArgument("max_iters must be non-negative");

  // Canonical row order: by label, then lexicographically by feature values.
  const Eigen::MatrixXd& raw = train.features.values;
  const Eigen::Index n = raw.rows();
  const Eigen::Index d = raw.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const int la = index_of(train.labels[static_cast<std::size_t>(a)]);
    const int lb = index_of(train.labels[static_cast<std::size_t>(b)]);
    if (la != lb) return la < lb;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (raw(a, j) != raw(b, j)) return raw(a, j) < raw(b, j);
    }
    return false;
  });
  Eigen::MatrixXd X(n, d);
  std::vector<Rel3> y(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    X.row(i) = raw.row(order[static_cast<std::size_t>(i)]);
    y[static_cast<std::size_t>(i)] = train.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  }

  LogRegModel model = LogRegModel::zeros(static_cast<int>(d), train.features.schema_id);
  model.hyperparams = hp;
  Eigen::MatrixXd& W = model.weights;
  Eigen::VectorXd& b = model.bias;

  // Hashed features are mostly zero; products go through a sparse copy.
  const Eigen::SparseMatrix<double> Xs = X.sparseView();
  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd P(n, kNumRel3);
  Eigen::MatrixXd gW;
  Eigen::VectorXd gb;
  auto gradient_at = [&](const Eigen::MatrixXd& Z) {
    const double ce = mean_cross_entropy(Z, y, &P);
    for (Eigen::Index i = 0; i < n; ++i) P(i, index_of(y[static_cast<std::size_t>(i)])) -= 1.0;
    gW = inv_n * (Xs.transpose() * P).transpose() + 2.0 * hp.l2_lambda * W;
    gb = inv_n * P.colwise().sum().transpose();
    return ce + hp.l2_lambda * W.squaredNorm();
  };

  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, kNumRel3);
  double f = gradient_at(Z);
  if (trace) trace->loss.assign(1, f);

  // Safe first step from a bound on the curvature of the softmax loss.
  const double max_row_sq = n > 0 ? X.rowwise().squaredNorm().maxCoeff() : 0.0;
  double step = 1.0 / (0.5 * (max_row_sq + 1.0) + 2.0 * hp.l2_lambda);

  constexpr double kArmijo = 1e-4;
  constexpr int kMaxHalvings = 60;
  int it = 0;
  Eigen::MatrixXd Zt(n, kNumRel3);
  for (; it < hp.max_iters; ++it) {
    const double gnorm_inf = std::max(gW.cwiseAbs().maxCoeff(), gb.cwiseAbs().maxCoeff());
    if (gnorm_inf < hp.tol) {
      model.converged = true;
      break;
    }
    const double gsq = gW.squaredNorm() + gb.squaredNorm();

    // Logits move linearly along the search direction, so each trial step
    // costs O(n) instead of a fresh matrix product.
    Eigen::MatrixXd dZ = Xs * gW.transpose();
    dZ.rowwise() += gb.transpose();
    const double w_sq = W.squaredNorm();
    const double w_dot_g = (W.array() * gW.array()).sum();
    const double g_sq = gW.squaredNorm();

    double alpha = step;
    double f_new = f;
    bool accepted = false;
    for (int h = 0; h < kMaxHalvings; ++h) {
      Zt = Z - alpha * dZ;
      const double reg = hp.l2_lambda * (w_sq - 2.0 * alpha * w_dot_g + alpha * alpha * g_sq);
      f_new = mean_cross_entropy(Zt, y, nullptr) + reg;
      if (std::isfinite(f_new) && f_new <= f - kArmijo * alpha * gsq) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;  // stalled at numerical precision

    const Eigen::MatrixXd gW_prev = gW;
    const Eigen::VectorXd gb_prev = gb;
    W -= alpha * gW_prev;
    b -= alpha * gb_prev;
    Z.swap(Zt);
    gradient_at(Z);
    f = f_new;
    if (trace) trace->loss.push_back(f);

    // Barzilai-Borwein step for the next line search; the displacement is -alpha * g_prev.
    const double sy = -alpha * (((gW_prev.array() * (gW - gW_prev).array()).sum()) + gb_prev.dot(gb - gb_prev));
    const double ss = alpha * alpha * (gW_prev.squaredNorm() + gb_prev.squaredNorm());
    step = sy > 0.0 ? std::clamp(ss / sy, 1e-10, 1e10) : std::min(alpha * 2.0, 1e10);
  }
  model.iterations = it;
  if (!model.converged) {
    model.converged = std::max(gW.cwiseAbs().maxCoeff(), gb.cwiseAbs().maxCoeff()) < hp.tol;
  }
  if (!W.allFinite() || !b.allFinite()) throw Error("logistic regression diverged");
  return model;
}

Proba predict_proba(const LogRegModel& model, const FeatureVector& fv) {
  if (fv.schema_id != model.schema_id) {
    throw SchemaMismatch("feature schema " + fv.schema_id.hex() + " does not match model schema " +
                         model.schema_id.hex());
  }
  if (static_cast<Eigen::Index>(fv.values.size()) != model.weights.cols()) {
    throw InvalidArgument("feature dimension mismatch");
  }
  const Eigen::Map<const Eigen::VectorXd> x(fv.values.data(), static_cast<Eigen::Index>(fv.values.size()));
  return softmax_row(model.weights * x + model.bias);
}

Eigen::MatrixXd predict_proba(const LogRegModel& model, const FeatureMatrix& X) {
  if (X.schema_id != model.schema_id) {
    throw SchemaMismatch("feature schema " + X.schema_id.hex() + " does not match model schema " +
                         model.schema_id.hex());
  }
  if (X.rows() > 0 && X.cols() != model.weights.cols()) throw InvalidArgument("feature dimension mismatch");
  Eigen::MatrixXd Z = logits(X.values, model.weights, model.bias);
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const Proba p = softmax_row(Z.row(i).transpose());
    for (int c = 0; c < kNumRel3; ++c) Z(i, c) = p[static_cast<std::size_t>(c)];
  }
  return Z;
}

Rel3 argmax(const Proba& p) {
  int best = 0;
  for (int c = 1; c < kNumRel3; ++c) {
    if (p[static_cast<std::size_t>(c)] > p[static_cast<std::size_t>(best)]) best = c;
  }
  return static_cast<Rel3>(best);
}

std::vector<Rel3> argmax_rows(const Eigen::MatrixXd& probs) {
  std::vector<Rel3> out;
  out.reserve(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    out.push_back(argmax({probs(i, 0), probs(i, 1), probs(i, 2)}));
  }
  return out;
}

std::vector<std::size_t> undersample_balance(std::span<const Rel3> labels, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumRel3> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(index_of(labels[i]))].push_back(i);
  std::size_t m = 0;
  for (const auto& v : by_class) {
    if (!v.empty() && (m == 0 || v.size() < m)) m = v.size();
  }
  Rng rng(derive_seed(seed, "undersample"));
  std::vector<std::size_t> out;
  for (const auto& v : by_class) {
    if (v.empty()) continue;
    auto picked = rng.sample(v, m);
    out.insert(out.end(), picked.begin(), picked.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<LlmRecord> undersample_balance(const LlmLabeledSet& set, std::uint64_t seed) {
  const auto records = set.as_vector();
  std::vector<Rel3> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.rel3);
  std::vector<LlmRecord> out;
  for (std::size_t i : undersample_balance(labels, seed)) out.push_back(records[i]);
  return out;
}

Ensemble train_ensemble(const TrainingSet& human, const TrainingSet& llm, int k, std::uint64_t seed,
                        const Hyperparams& hp, int parallelism) {
  if (k < 1) throw InvalidArgument("ensemble size must be at least 1");
  if (human.empty()) throw InvalidArgument("the human-labeled set must not be empty");
  if (!llm.empty() && llm.features.schema_id != human.features.schema_id) {
    throw SchemaMismatch("human and LLM feature rows come from different featurizers");
  }

  Ensemble e;
  e.schema_id = human.features.schema_id;
  std::vector<std::vector<std::size_t>> bags(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    e.bag_seeds.push_back(derive_seed(seed, static_cast<std::uint64_t>(j)));
    if (!llm.empty()) bags[static_cast<std::size_t>(j)] = undersample_balance(llm.labels, e.bag_seeds.back());
  }

  // Bags with identical membership train identical models; fit each once.
  std::map<std::vector<std::size_t>, std::size_t> unique_index;
  std::vector<std::size_t> bag_to_unique(static_cast<std::size_t>(k));
  std::vector<std::size_t> uniques;  // first bag index of each distinct membership
  for (std::size_t j = 0; j < bags.size(); ++j) {
    auto [it, fresh] = unique_index.emplace(bags[j], uniques.size());
    if (fresh) uniques.push_back(j);
    bag_to_unique[j] = it->second;
  }

  std::vector<LogRegModel> fitted(uniques.size());
  parallel_for(uniques.size(), parallelism, [&](std::size_t u) {
    const auto& members = bags[uniques[u]];
    const TrainingSet data = members.empty() ? human : TrainingSet::concat(human, llm.subset(members));
    fitted[u] = train_logreg(data, hp, e.bag_seeds[uniques[u]]);
  });

  std::vector<PairKey> all_keys = human.keys;
  all_keys.insert(all_keys.end(), llm.keys.begin(), llm.keys.end());
  for (std::size_t j = 0; j < bags.size(); ++j) {
    e.models.push_back(fitted[bag_to_unique[j]]);
    std::vector<PairKey> keys;
    if (!llm.keys.empty()) {
      for (std::size_t i : bags[j]) keys.push_back(llm.keys[i]);
    }
    e.bag_llm_keys.push_back(std::move(keys));
  }
  std::sort(all_keys.begin(), all_keys.end());
  all_keys.erase(std::unique(all_keys.begin(), all_keys.end()), all_keys.end());
  e.training_keys = std::move(all_keys);
  return e;
}

Proba ensemble_proba(const Ensemble& e, const FeatureVector& fv) {
  if (e.models.empty()) throw InvalidArgument("empty ensemble");
  Proba acc{};
  for (const auto& m : e.models) {
    const Proba p = predict_proba(m, fv);
    for (int c = 0; c < kNumRel3; ++c) acc[static_cast<std::size_t>(c)] += p[static_cast<std::size_t>(c)];
  }
  for (double& v : acc) v /= static_cast<double>(e.models.size());
  return acc;
}

std::vector<Eigen::MatrixXd> member_probas(const Ensemble& e, const FeatureMatrix& X) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(e.models.size());
  for (const auto& m : e.models) out.push_back(predict_proba(m, X));
  return out;
}

Eigen::MatrixXd ensemble_proba(const Ensemble& e, const FeatureMatrix& X) {
  if (e.models.empty()) throw InvalidArgument("empty ensemble");
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(X.rows(), kNumRel3);
  for (const auto& m : e.models) acc += predict_proba(m, X);
  return acc / static_cast<double>(e.models.size());
}

TuneResult tune_hyperparams(const TrainingSet& train, const TrainingSet& val, const std::vector<double>& grid,
                            Hyperparams base) {
  if (grid.empty()) throw InvalidArgument("hyperparameter grid is empty");
  if (val.empty()) throw InvalidArgument("validation set is empty");
  if (!train.keys.empty() && !val.keys.empty()) {
    std::vector<PairKey> a = train.keys, b = val.keys;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<PairKey> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    if (!both.empty()) throw LeakageError("tuning train and validation sets share pair " + both.front().str());
  }
  TuneResult r;
  r.grid = grid;
  double best_score = -1.0;
  for (double lambda : grid) {
    Hyperparams hp = base;
    hp.l2_lambda = lambda;
    const LogRegModel m = train_logreg(train, hp);
    const double score = macro_f1(argmax_rows(predict_proba(m, val.features)), val.labels);
    r.val_macro_f1.push_back(score);
    if (score > best_score || (score == best_score && lambda > r.best.l2_lambda)) {
      best_score = score;
      r.best = hp;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

json hyperparams_to_json(const Hyperparams& hp) {
  return {{"l2_lambda", hp.l2_lambda}, {"max_iters", hp.max_iters}, {"tol", hp.tol}};
}

Hyperparams hyperparams_from_json(const json& j) {
  return {j.at("l2_lambda").get<double>(), j.at("max_iters").get<int>(), j.at("tol").get<double>()};
}

json model_to_json(const LogRegModel& m) {
  json w = json::array();
  for (Eigen::Index c = 0; c < m.weights.rows(); ++c) {
    std::vector<double> row(m.weights.row(c).begin(), m.weights.row(c).end());
    w.push_back(row);
  }
  return {{"schema_id", m.schema_id.hex()},
          {"hyperparams", hyperparams_to_json(m.hyperparams)},
          {"iterations", m.iterations},
          {"converged", m.converged},
          {"bias", std::vector<double>(m.bias.begin(), m.bias.end())},
          {"weights", std::move(w)}};
}

LogRegModel model_from_json(const json& j) {
  LogRegModel m;
  m.schema_id = SchemaId::from_hex(j.at("schema_id").get<std::string>());
  m.hyperparams = hyperparams_from_json(j.at("hyperparams"));
  m.iterations = j.at("iterations").get<int>();
  m.converged = j.at("converged").get<bool>();
  const auto bias = j.at("bias").get<std::vector<double>>();
  const auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
  if (bias.size() != kNumRel3 || rows.size() != kNumRel3) throw ParseError("model must have three classes");
  const auto d = static_cast<Eigen::Index>(rows[0].size());
  m.weights.resize(kNumRel3, d);
  m.bias.resize(kNumRel3);
  for (int c = 0; c < kNumRel3; ++c) {
    const auto& r = rows[static_cast<std::size_t>(c)];
    if (static_cast<Eigen::Index>(r.size()) != d) throw ParseError("ragged weight matrix");
    for (Eigen::Index k = 0; k < d; ++k) m.weights(c, k) = r[static_cast<std::size_t>(k)];
    m.bias(c) = bias[static_cast<std::size_t>(c)];
  }
  return m;
}

json ensemble_to_json(const Ensemble& e) {
  json models = json::array();
  for (const auto& m : e.models) models.push_back(model_to_json(m));
  json bags = json::array();
  for (const auto& keys : e.bag_llm_keys) {
    json b = json::array();
    for (const auto& k : keys) b.push_back({k.lo, k.hi});
    bags.push_back(std::move(b));
  }
  json training = json::array();
  for (const auto& k : e.training_keys) training.push_back({k.lo, k.hi});
  return {{"format", "karl-ensemble"},
          {"version", 1},
          {"schema_id", e.schema_id.hex()},
          {"bag_seeds", e.bag_seeds},
          {"bag_llm_keys", std::move(bags)},
          {"training_keys", std::move(training)},
          {"models", std::move(models)}};
}

Ensemble ensemble_from_json(const json& j) {
  if (j.at("format") != "karl-ensemble" || j.at("version") != 1) throw ParseError("not an ensemble checkpoint");
  Ensemble e;
  e.schema_id = SchemaId::from_hex(j.at("schema_id").get<std::string>());
  e.bag_seeds = j.at("bag_seeds").get<std::vector<std::uint64_t>>();
  for (const auto& b : j.at("bag_llm_keys")) {
    std::vector<PairKey> keys;
    for (const auto& k : b) keys.emplace_back(k.at(0).get<std::string>(), k.at(1).get<std::string>());
    e.bag_llm_keys.push_back(std::move(keys));
  }
  for (const auto& k : j.at("training_keys")) e.training_keys.emplace_back(k.at(0).get<std::string>(), k.at(1).get<std::string>());
  for (const auto& m : j.at("models")) e.models.push_back(model_from_json(m));
  if (e.models.size() != e.bag_seeds.size()) throw ParseError("ensemble checkpoint is inconsistent");
  for (const auto& m : e.models) {
    if (m.schema_id != e.schema_id) throw ParseError("ensemble members disagree on schema");
  }
  return e;
}

}  // namespace karl
