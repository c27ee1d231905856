#include "karl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <spdlog/spdlog.h>

namespace karl {

std::array<double, kNumRel3> per_class_f1(std::span<const Rel3> preds, std::span<const Rel3> golds) {
  if (preds.size() != golds.size()) throw InvalidArgument("prediction and gold lengths differ");
  if (preds.empty()) throw InvalidArgument("macro-F1 of an empty sample");
  std::array<std::size_t, kNumRel3> tp{}, fp{}, fn{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto p = static_cast<std::size_t>(index_of(preds[i]));
    const auto g = static_cast<std::size_t>(index_of(golds[i]));
    if (p == g) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  std::array<double, kNumRel3> f1{};
  for (std::size_t c = 0; c < kNumRel3; ++c) {
    // F1 = 2TP / (2TP + FP + FN); zero denominator scores 0.
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    f1[c] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return f1;
}

double macro_f1(std::span<const Rel3> preds, std::span<const Rel3> golds) {
  const auto f1 = per_class_f1(preds, golds);
  return (f1[0] + f1[1] + f1[2]) / 3.0;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("pearson: length mismatch");
  if (a.size() < 2) throw InvalidArgument("pearson needs at least two points");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {

/// Rows centred and scaled to unit norm; zero-variance rows become zero.
Eigen::MatrixXd normalized_rows(const Eigen::MatrixXd& X, std::size_t& zero_rows) {
  Eigen::MatrixXd Z(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Eigen::RowVectorXd v = X.row(i);
    v.array() -= v.mean();
    const double norm = v.norm();
    if (norm > 0.0) {
      Z.row(i) = v / norm;
    } else {
      Z.row(i).setZero();
      ++zero_rows;
    }
  }
  return Z;
}

/// Sum of |G(i, j)| over i < j.
double upper_abs_sum(const Eigen::MatrixXd& G) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    double row_sum = 0.0;
    for (Eigen::Index j = i + 1; j < G.cols(); ++j) row_sum += std::min(1.0, std::abs(G(i, j)));
    sum += row_sum;
  }
  return sum;
}

double abs_sum(const Eigen::MatrixXd& G) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    double row_sum = 0.0;
    for (Eigen::Index j = 0; j < G.cols(); ++j) row_sum += std::min(1.0, std::abs(G(i, j)));
    sum += row_sum;
  }
  return sum;
}

double from_sum(double sum, std::size_t n) {
  const double nd = static_cast<double>(n);
  return 1.0 - 2.0 * sum / (nd * (nd - 1.0));
}

void log_zero_rows(std::size_t n) {
  if (n) spdlog::debug("diversity: {} zero-variance rows treated as uncorrelated", n);
}

}  // namespace

DiversityResult diversity(const Eigen::MatrixXd& X, std::size_t n_max, std::uint64_t seed) {
  if (X.rows() < 2) throw InvalidArgument("diversity needs at least two rows");
  if (X.cols() < 2) throw InvalidArgument("diversity needs rows of dimension at least two");
  DiversityResult r;
  Eigen::MatrixXd sample;
  const Eigen::MatrixXd* src = &X;
  if (n_max >= 2 && static_cast<std::size_t>(X.rows()) > n_max) {
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) rows[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(seed, "diversity"));
    rows = rng.sample(std::move(rows), n_max);
    std::sort(rows.begin(), rows.end());
    sample.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) sample.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
    src = &sample;
    r.subsampled = true;
  }
  r.rows_used = static_cast<std::size_t>(src->rows());
  const Eigen::MatrixXd Z = normalized_rows(*src, r.zero_variance_rows);
  log_zero_rows(r.zero_variance_rows);
  r.value = from_sum(upper_abs_sum(Z * Z.transpose()), r.rows_used);
  return r;
}

DiversityBase::DiversityBase(const Eigen::MatrixXd& base) : raw_(base) {
  z_ = normalized_rows(base, zero_rows_);
  if (base.rows() >= 2) base_sum_ = upper_abs_sum(z_ * z_.transpose());
}

DiversityResult DiversityBase::with(const Eigen::MatrixXd& extra, std::size_t n_max, std::uint64_t seed) const {
  if (extra.rows() > 0 && extra.cols() != raw_.cols()) throw InvalidArgument("diversity: column count mismatch");
  const auto n = static_cast<std::size_t>(raw_.rows() + extra.rows());
  if (n < 2) throw InvalidArgument("diversity needs at least two rows");
  if (raw_.cols() < 2) throw InvalidArgument("diversity needs rows of dimension at least two");
  if (n_max >= 2 && n > n_max) {
    Eigen::MatrixXd all(static_cast<Eigen::Index>(n), raw_.cols());
    all << raw_, extra;
    return diversity(all, n_max, seed);
  }
  DiversityResult r;
  r.rows_used = n;
  r.zero_variance_rows = zero_rows_;
  double sum = base_sum_;
  if (extra.rows() > 0) {
    const Eigen::MatrixXd ze = normalized_rows(extra, r.zero_variance_rows);
    sum += abs_sum(z_ * ze.transpose());
    sum += upper_abs_sum(ze * ze.transpose());
  }
  log_zero_rows(r.zero_variance_rows);
  r.value = from_sum(sum, n);
  return r;
}

std::vector<std::size_t> FoldPlan::training_indices(int fold) const {
  std::set<std::size_t> test(outer.at(static_cast<std::size_t>(fold)).begin(),
                             outer.at(static_cast<std::size_t>(fold)).end());
  std::vector<std::size_t> out;
  for (const auto& f : outer) {
    for (std::size_t i : f) {
      if (!test.count(i)) out.push_back(i);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoldPlan make_fold_plan(std::span<const Rel3> labels, int k, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("fold count must be at least 2");
  if (labels.size() < static_cast<std::size_t>(k)) throw InvalidArgument("fewer examples than folds");
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.outer.resize(static_cast<std::size_t>(k));

  std::array<std::vector<std::size_t>, kNumRel3> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(index_of(labels[i]))].push_back(i);

  Rng rng(derive_seed(seed, "folds"));
  // Round-robin with a cursor carried across classes keeps both the per-class
  // and the total fold sizes within one of each other.
  std::size_t cursor = 0;
  for (std::size_t c = 0; c < kNumRel3; ++c) {
    auto idx = by_class[c];
    if (!idx.empty() && idx.size() < static_cast<std::size_t>(k)) {
      plan.warnings.push_back("class " + std::string(name(static_cast<Rel3>(c))) + " has " +
                              std::to_string(idx.size()) + " members for " + std::to_string(k) +
                              " folds; it cannot be stratified");
      spdlog::warn("fold plan: {}", plan.warnings.back());
    }
    rng.shuffle(idx);
    for (std::size_t i : idx) {
      plan.outer[cursor % static_cast<std::size_t>(k)].push_back(i);
      ++cursor;
    }
  }
  for (auto& f : plan.outer) std::sort(f.begin(), f.end());

  for (int f = 0; f < k; ++f) {
    const auto train = plan.training_indices(f);
    std::array<std::vector<std::size_t>, kNumRel3> train_by_class;
    for (std::size_t i : train) train_by_class[static_cast<std::size_t>(index_of(labels[i]))].push_back(i);
    Rng inner_rng(derive_seed(seed, "inner", f));
    std::vector<std::size_t> itrain, ival;
    for (auto& idx : train_by_class) {
      inner_rng.shuffle(idx);
      auto n_val = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(idx.size())));
      if (n_val >= idx.size() && !idx.empty()) n_val = idx.size() - 1;
      ival.insert(ival.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
      itrain.insert(itrain.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    }
    std::sort(itrain.begin(), itrain.end());
    std::sort(ival.begin(), ival.end());
    plan.inner_train.push_back(std::move(itrain));
    plan.inner_val.push_back(std::move(ival));
  }
  return plan;
}

double evaluate_model(const LogRegModel& model, const TrainingSet& test) {
  return macro_f1(argmax_rows(predict_proba(model, test.features)), test.labels);
}

EvalResult evaluate_run(const Ensemble& ensemble, const TrainingSet& id_test, const TrainingSet& ood_test) {
  if (id_test.empty() || ood_test.empty()) throw InvalidArgument("evaluation sets must be non-empty");
  if (!std::is_sorted(ensemble.training_keys.begin(), ensemble.training_keys.end())) {
    throw InvalidArgument("ensemble training keys must be sorted");
  }
  for (const auto& k : id_test.keys) {
    if (std::binary_search(ensemble.training_keys.begin(), ensemble.training_keys.end(), k)) {
      throw LeakageError("ID test pair " + k.str() + " was used to train the ensemble");
    }
  }
  EvalResult r;
  r.id_macro_f1 = macro_f1(argmax_rows(ensemble_proba(ensemble, id_test.features)), id_test.labels);
  r.ood_macro_f1 = macro_f1(argmax_rows(ensemble_proba(ensemble, ood_test.features)), ood_test.labels);
  return r;
}

std::string_view name(Setting s) { return s == Setting::ID ? "ID" : "OOD"; }

void summarize_correlations(GainSummary& summary) {
  for (Setting s : {Setting::ID, Setting::OOD}) {
    std::vector<double> dg, fg;
    for (const auto& r : summary.records) {
      if (r.setting != s || r.round < 1) continue;
      dg.push_back(r.diversity_gain);
      fg.push_back(r.f1_gain);
    }
    const double rho = dg.size() >= 2 ? pearson(dg, fg) : 0.0;
    (s == Setting::ID ? summary.correlation_id : summary.correlation_ood) = rho;
  }
}

GainSummary emit_gain_records(std::span<const RoundBagMetrics> rounds, int fold) {
  const RoundBagMetrics* base = nullptr;
  for (const auto& r : rounds) {
    if (r.round == 0) base = &r;
  }
  if (!base) throw InvalidArgument("gain records need the round-0 metrics");
  GainSummary out;
  for (Setting s : {Setting::ID, Setting::OOD}) {
    for (const auto& r : rounds) {
      if (r.bags.size() != base->bags.size()) throw InvalidArgument("bag count changed between rounds");
      for (std::size_t b = 0; b < r.bags.size(); ++b) {
        const auto& now = r.bags[b];
        const auto& ref = base->bags[b];
        GainRecord g;
        g.fold = fold;
        g.round = r.round;
        g.bag = static_cast<int>(b);
        g.setting = s;
        g.f1_gain = s == Setting::ID ? now.id_macro_f1 - ref.id_macro_f1 : now.ood_macro_f1 - ref.ood_macro_f1;
        g.diversity_gain = now.diversity - ref.diversity;
        out.records.push_back(g);
      }
    }
  }
  summarize_correlations(out);
  return out;
}

std::string format_gain_csv(std::span<const GainRecord> records) {
  std::string out = "fold,round,bag,setting,f1_gain,diversity_gain\n";
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%s,%.10g,%.10g\n", r.fold, r.round, r.bag,
                  std::string(name(r.setting)).c_str(), r.f1_gain, r.diversity_gain);
    out += buf;
  }
  return out;
}

}  // namespace karl
