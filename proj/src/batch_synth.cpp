#include "popsynth/batch_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "popsynth/numeric.hpp"

namespace popsynth {

namespace {

struct GroupSlots {
  Index group = 0;                 // schema group index
  std::vector<Index> positions;    // column positions in the sampled subset
};

/// Groups whose columns all lie in `names`; partially covered groups are an error.
std::vector<GroupSlots> groups_in(const FeatureSchema& schema, const std::vector<std::string>& names) {
  std::vector<GroupSlots> out;
  for (std::size_t g = 0; g < schema.groups().size(); ++g) {
    const auto& group = schema.groups()[g];
    GroupSlots slots{static_cast<Index>(g), {}};
    for (Index c : group.columns) {
      const auto& col = schema.feature(c).name;
      auto it = std::find(names.begin(), names.end(), col);
      if (it != names.end()) slots.positions.push_back(static_cast<Index>(it - names.begin()));
    }
    if (slots.positions.empty()) continue;
    if (slots.positions.size() != group.columns.size()) {
      throw Error(Errc::SchemaInvalid, "group '" + group.name + "' is split across feature sets");
    }
    out.push_back(std::move(slots));
  }
  return out;
}

/// Class-probability vector from share values: normalized shares for a group,
/// (y, 1 - y) for a binary indicator.
Vector class_probabilities(const CategoricalGroup& group, const Eigen::Ref<const Vector>& shares,
                           const Eigen::Ref<const Vector>& fallback) {
  if (group.binary) {
    const double y = std::clamp(shares(0), 0.0, 1.0);
    Vector p(2);
    p << y, 1.0 - y;
    return p;
  }
  Vector p = shares.cwiseMax(0.0);
  double sum = p.sum();
  if (!(sum > 0.0)) {
    p = fallback.cwiseMax(0.0);
    sum = p.sum();
  }
  if (!(sum > 0.0)) return Vector::Constant(shares.size(), 1.0 / static_cast<double>(shares.size()));
  return p / sum;
}

int draw_class(const Vector& p, RandomStream& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  int last = 0;
  for (Index c = 0; c < p.size(); ++c) {
    if (p(c) <= 0.0) continue;
    cum += p(c);
    last = static_cast<int>(c);
    if (u < cum) return last;
  }
  return last;
}

int argmax_class(const Vector& p) {
  Index best = 0;
  for (Index c = 1; c < p.size(); ++c) {
    if (p(c) > p(best)) best = c;
  }
  return static_cast<int>(best);
}

void write_class(Eigen::Ref<Matrix> values, Index row, const std::vector<Index>& positions, bool binary,
                 int cls) {
  if (binary) {
    values(row, positions[0]) = cls == 0 ? 1.0 : 0.0;
    return;
  }
  for (std::size_t j = 0; j < positions.size(); ++j) {
    values(row, positions[j]) = static_cast<int>(j) == cls ? 1.0 : 0.0;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Gaussian-copula sampling of feature subsets

SyntheticPopulation sample_features(const CoarseTable& table, const FeatureSchema& schema,
                                    const std::vector<std::string>& features,
                                    const std::vector<long>& rows_per_unit, std::uint64_t seed,
                                    std::string_view purpose, const SynthesisOptions& options,
                                    CorrelationModel* model_out) {
  if (features.empty()) throw Error(Errc::MissingInput, "no features to sample");
  if (static_cast<Index>(rows_per_unit.size()) != table.num_units()) {
    throw Error(Errc::DimensionMismatch, "row counts do not match the table's units");
  }
  const std::vector<std::string> names = schema.in_schema_order(features);
  const auto dim = static_cast<Index>(names.size());
  const auto groups = groups_in(schema, names);

  CorrelationModel model = dim >= 2 ? estimate_correlation(table, names)
                                    : make_correlation_model(Matrix::Identity(1, 1), names);

  auto layout = SyntheticPopulation::layout(table.unit_ids(), rows_per_unit);
  const Index total = layout.empty() ? 0 : layout.back().offset + layout.back().size;
  Matrix values(total, dim);
  std::vector<Matrix> probs;
  for (const auto& g : groups) {
    probs.emplace_back(total, schema.groups()[static_cast<std::size_t>(g.group)].num_classes());
  }

  const std::string purpose_str(purpose);
  const std::string realize_tag = purpose_str + ":realize";
  parallel_for(static_cast<std::size_t>(table.num_units()), options.threads, [&](std::size_t m) {
    const auto& unit = layout[m];
    const auto specs = fit_unit_marginals(table, schema, static_cast<Index>(m), names, options.sigma_mode);
    const CopulaSampleBlock block =
        sample_unit(model, specs, unit.size, unit_seed(seed, purpose_str, unit.unit_id));
    values.middleRows(unit.offset, unit.size) = block.realized;

    RandomStream rng(unit_seed(seed, realize_tag, unit.unit_id));
    for (Index k = 0; k < unit.size; ++k) {
      const Index row = unit.offset + k;
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& slots = groups[gi];
        const auto& group = schema.groups()[static_cast<std::size_t>(slots.group)];
        Vector shares(static_cast<Index>(slots.positions.size()));
        Vector coarse(shares.size());
        for (std::size_t j = 0; j < slots.positions.size(); ++j) {
          shares(static_cast<Index>(j)) = values(row, slots.positions[j]);
          coarse(static_cast<Index>(j)) = specs[static_cast<std::size_t>(slots.positions[j])].mu;
        }
        const Vector p = class_probabilities(group, shares, coarse);
        probs[gi].row(row) = p.transpose();
        write_class(values, row, slots.positions, group.binary, draw_class(p, rng));
      }
    }
  });

  SyntheticPopulation pop(std::move(layout), names, std::move(values), Provenance::PostCopula);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    pop.probabilities()[schema.groups()[static_cast<std::size_t>(groups[gi].group)].name] =
        std::move(probs[gi]);
  }
  if (model_out != nullptr) *model_out = std::move(model);
  return pop;
}

SyntheticPopulation synthesize_core(const CoarseTable& table, const FeatureSchema& schema,
                                    std::uint64_t seed, const SynthesisOptions& options,
                                    CorrelationModel* model_out) {
  if (schema.core_set().empty()) throw Error(Errc::SchemaInvalid, "schema declares no core features");
  return sample_features(table, schema, schema.core_set(), table.sizes(), seed, "core", options, model_out);
}

// ---------------------------------------------------------------------------
// Batch plan

const char* to_string(ModelKind kind) noexcept { return kind == ModelKind::Knn ? "knn" : "linear"; }

ModelKind parse_model_kind(std::string_view text) {
  if (text == "knn") return ModelKind::Knn;
  if (text == "linear") return ModelKind::Linear;
  throw Error(Errc::ConfigInvalid, "unknown batch model '" + std::string(text) + "'");
}

BatchPlan make_batch_plan(const FeatureSchema& schema, const BatchModelConfig& config) {
  BatchPlan plan;
  for (std::size_t b = 0; b < schema.batches().size(); ++b) {
    plan.batches.push_back({schema.batch_labels()[b], schema.batches()[b], config.kind});
  }
  return plan;
}

long training_rows(std::size_t core_features, std::size_t batch_features) {
  return std::min<long>(50L * static_cast<long>(core_features + batch_features), 200000L);
}

// ---------------------------------------------------------------------------
// PredictiveModel

namespace {

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (Index r = 0; r < p.rows(); ++r) {
    const double mx = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - mx).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

/// Multinomial logistic regression on soft targets by gradient descent with a
/// step bounded by the loss curvature.
Matrix fit_softmax(const Matrix& design, const Matrix& targets) {
  constexpr double ridge = 1e-4;
  const auto n = static_cast<double>(design.rows());
  Matrix w = Matrix::Zero(design.cols(), targets.cols());
  // Intercepts start at the log marginal frequencies.
  const Vector freq = targets.colwise().mean().transpose();
  for (Index c = 0; c < targets.cols(); ++c) w(0, c) = std::log(std::max(freq(c), 1e-12));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(design.transpose() * design / n, Eigen::EigenvaluesOnly);
  const double step = 1.0 / (0.5 * eig.eigenvalues().maxCoeff() + ridge);
  for (int it = 0; it < 500; ++it) {
    const Matrix grad = design.transpose() * (softmax_rows(design * w) - targets) / n + ridge * w;
    w -= step * grad;
    if (grad.cwiseAbs().maxCoeff() < 1e-9) break;
  }
  return w;
}

}  // namespace

Vector PredictiveModel::standardize(const Eigen::Ref<const Vector>& core) const {
  Vector z(core.size());
  for (Index j = 0; j < core.size(); ++j) {
    z(j) = input_scale_(j) > 0.0 ? (core(j) - input_mean_(j)) / input_scale_(j) : 0.0;
  }
  return z;
}

void PredictiveModel::neighbors(const Vector& x, std::vector<Index>& ids, std::vector<double>& weights) const {
  const Index n = train_inputs_.rows();
  const Vector d2 = (train_inputs_.rowwise() - x.transpose()).rowwise().squaredNorm();
  const Index k = std::min<Index>(k_, n);
  ids.resize(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), Index{0});
  std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [&](Index a, Index b) {
    return d2(a) < d2(b) || (d2(a) == d2(b) && a < b);
  });
  ids.resize(static_cast<std::size_t>(k));
  weights.assign(static_cast<std::size_t>(k), 0.0);
  constexpr double kExact = 1e-12;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (std::sqrt(d2(ids[i])) < kExact) {
      weights[i] = 1.0;
      ++hits;
    }
  }
  if (hits == 0) {
    for (std::size_t i = 0; i < ids.size(); ++i) weights[i] = 1.0 / std::sqrt(d2(ids[i]));
  }
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double& w : weights) w /= sum;
}

void PredictiveModel::predict_distribution(const Eigen::Ref<const Vector>& core, Eigen::Ref<Vector> means,
                                           std::vector<Vector>& probabilities) const {
  probabilities.resize(groups_.size());
  if (marginal_only_) {
    means = marginal_means_;
    for (std::size_t g = 0; g < groups_.size(); ++g) probabilities[g] = marginal_probabilities_[g];
    return;
  }
  const Vector z = standardize(core);
  if (kind_ == ModelKind::Linear) {
    Vector design(z.size() + 1);
    design << 1.0, z;
    means = linear_coef_.transpose() * design;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      const Matrix logits = (design.transpose() * softmax_coef_[g]);
      probabilities[g] = softmax_rows(logits).row(0).transpose();
    }
    return;
  }
  std::vector<Index> ids;
  std::vector<double> w;
  neighbors(z, ids, w);
  means.setZero();
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    probabilities[g] = Vector::Zero(groups_[g].num_classes());
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (w[i] == 0.0) continue;
    means += w[i] * train_continuous_.row(ids[i]).transpose();
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      probabilities[g] += w[i] * train_probabilities_[g].row(ids[i]).transpose();
    }
  }
  for (auto& p : probabilities) p /= p.sum();
}

void PredictiveModel::sample_continuous(const Eigen::Ref<const Vector>& core, RandomStream& rng,
                                        Eigen::Ref<Vector> out) const {
  if (continuous_.empty()) return;
  if (kind_ == ModelKind::Linear) {
    if (marginal_only_) {
      out = marginal_means_;
    } else {
      Vector design(static_cast<Index>(inputs_.size()) + 1);
      design << 1.0, standardize(core);
      out = linear_coef_.transpose() * design;
    }
    for (Index j = 0; j < out.size(); ++j) out(j) += residual_sd_(j) * rng.standard_normal();
    return;
  }
  Index pick = 0;
  if (marginal_only_) {
    pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(train_continuous_.rows())));
  } else {
    std::vector<Index> ids;
    std::vector<double> w;
    neighbors(standardize(core), ids, w);
    const double u = rng.uniform();
    double cum = 0.0;
    pick = ids.back();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      cum += w[i];
      if (w[i] > 0.0 && u < cum) {
        pick = ids[i];
        break;
      }
    }
  }
  out = train_continuous_.row(pick).transpose();
}

PredictiveModel fit_batch_model(const SyntheticPopulation& block, const FeatureSchema& schema,
                                const std::vector<std::string>& batch_features,
                                const BatchModelConfig& config) {
  if (config.k < 1) throw Error(Errc::ConfigInvalid, "k-NN needs k >= 1");
  const Index n = block.num_rows();
  if (n == 0) throw Error(Errc::MissingInput, "training block is empty");

  PredictiveModel model;
  model.kind_ = config.kind;
  model.k_ = config.k;
  model.inputs_ = schema.core_set();
  const auto outputs = schema.in_schema_order(batch_features);
  model.outputs_ = outputs;
  for (const auto& name : outputs) {
    if (std::find(model.inputs_.begin(), model.inputs_.end(), name) != model.inputs_.end()) {
      throw Error(Errc::SchemaInvalid, "batch feature '" + name + "' is a core feature");
    }
    if (schema.feature(schema.index_of(name)).continuous()) model.continuous_.push_back(name);
  }

  const auto p = static_cast<Index>(model.inputs_.size());
  Matrix x(n, p);
  for (Index j = 0; j < p; ++j) {
    const auto col = block.find_column(model.inputs_[static_cast<std::size_t>(j)]);
    if (!col) throw Error(Errc::MissingInput, "training block lacks core column '" + model.inputs_[static_cast<std::size_t>(j)] + "'");
    x.col(j) = block.values().col(*col);
  }
  model.train_continuous_.resize(n, static_cast<Index>(model.continuous_.size()));
  for (std::size_t j = 0; j < model.continuous_.size(); ++j) {
    model.train_continuous_.col(static_cast<Index>(j)) = block.values().col(block.column(model.continuous_[j]));
  }
  for (const auto& slots : groups_in(schema, outputs)) {
    const auto& group = schema.groups()[static_cast<std::size_t>(slots.group)];
    PredictiveModel::GroupOutput out{group.name, {}, group.binary};
    std::vector<Index> cols;
    for (Index c : group.columns) {
      out.columns.push_back(schema.feature(c).name);
      cols.push_back(block.column(schema.feature(c).name));
    }
    Matrix probs(n, group.num_classes());
    auto side = block.probabilities().find(group.name);
    if (side != block.probabilities().end() && side->second.rows() == n &&
        side->second.cols() == group.num_classes()) {
      probs = side->second;
    } else {
      const Vector uniform = Vector::Constant(static_cast<Index>(cols.size()), 1.0);
      for (Index r = 0; r < n; ++r) {
        Vector shares(static_cast<Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j) shares(static_cast<Index>(j)) = block.values()(r, cols[j]);
        probs.row(r) = class_probabilities(group, shares, uniform).transpose();
      }
    }
    model.groups_.push_back(std::move(out));
    model.train_probabilities_.push_back(std::move(probs));
  }

  model.marginal_means_ = model.train_continuous_.colwise().mean().transpose();
  for (const auto& probs : model.train_probabilities_) {
    model.marginal_probabilities_.push_back(probs.colwise().mean().transpose());
  }
  model.residual_sd_ = Vector::Zero(static_cast<Index>(model.continuous_.size()));
  for (Index j = 0; j < model.residual_sd_.size(); ++j) model.residual_sd_(j) = sample_sd(model.train_continuous_.col(j));

  model.input_mean_ = x.colwise().mean().transpose();
  model.input_scale_.resize(p);
  bool any_active = false;
  for (Index j = 0; j < p; ++j) {
    model.input_scale_(j) = sample_sd(x.col(j));
    any_active = any_active || model.input_scale_(j) > 0.0;
  }
  if (!any_active) {
    model.marginal_only_ = true;
    return model;
  }
  Matrix z(n, p);
  for (Index r = 0; r < n; ++r) z.row(r) = model.standardize(x.row(r).transpose()).transpose();

  if (config.kind == ModelKind::Knn) {
    model.train_inputs_ = std::move(z);
    return model;
  }

  Matrix design(n, p + 1);
  design.col(0).setOnes();
  design.rightCols(p) = z;
  if (!model.continuous_.empty()) {
    Eigen::ColPivHouseholderQR<Matrix> qr(design);
    model.linear_coef_ = qr.solve(model.train_continuous_);
    const Matrix resid = model.train_continuous_ - design * model.linear_coef_;
    for (Index j = 0; j < resid.cols(); ++j) model.residual_sd_(j) = sample_sd(resid.col(j));
  } else {
    model.linear_coef_ = Matrix::Zero(p + 1, 0);
  }
  for (const auto& probs : model.train_probabilities_) model.softmax_coef_.push_back(fit_softmax(design, probs));
  return model;
}

// ---------------------------------------------------------------------------
// Prediction and join

BatchValues predict_batch(const PredictiveModel& model, const SyntheticPopulation& core_rows,
                          PredictMode mode, std::uint64_t seed, int threads) {
  std::vector<Index> input_cols;
  for (const auto& name : model.inputs()) {
    const auto col = core_rows.find_column(name);
    if (!col) throw Error(Errc::MissingInput, "population lacks model input '" + name + "'");
    input_cols.push_back(*col);
  }

  BatchValues out;
  out.units = core_rows.units();
  // Each output column maps to (-1, continuous index) or (group, class).
  std::vector<std::pair<std::string, std::pair<int, Index>>> slots;
  for (const auto& name : model.outputs()) {
    const auto& cont_names = model.continuous_outputs();
    if (auto it = std::find(cont_names.begin(), cont_names.end(), name); it != cont_names.end()) {
      slots.push_back({name, {-1, static_cast<Index>(it - cont_names.begin())}});
      continue;
    }
    for (std::size_t g = 0; g < model.group_outputs().size(); ++g) {
      const auto& cols = model.group_outputs()[g].columns;
      if (auto it = std::find(cols.begin(), cols.end(), name); it != cols.end()) {
        slots.push_back({name, {static_cast<int>(g), static_cast<Index>(it - cols.begin())}});
      }
    }
  }
  out.columns.reserve(slots.size());
  for (const auto& s : slots) out.columns.push_back(s.first);

  const Index n = core_rows.num_rows();
  const Index n_cont = static_cast<Index>(model.continuous_outputs().size());
  Matrix cont(n, n_cont);
  std::vector<Matrix> probs;
  std::vector<std::vector<int>> classes(model.group_outputs().size(), std::vector<int>(static_cast<std::size_t>(n)));
  for (const auto& g : model.group_outputs()) probs.emplace_back(n, g.num_classes());

  parallel_for(core_rows.units().size(), threads, [&](std::size_t m) {
    const auto& unit = core_rows.units()[m];
    RandomStream rng(unit_seed(seed, "predict", unit.unit_id));
    Vector x(static_cast<Index>(input_cols.size()));
    Vector means(n_cont);
    std::vector<Vector> p;
    for (Index k = 0; k < unit.size; ++k) {
      const Index row = unit.offset + k;
      for (std::size_t j = 0; j < input_cols.size(); ++j) x(static_cast<Index>(j)) = core_rows.values()(row, input_cols[j]);
      model.predict_distribution(x, means, p);
      if (mode == PredictMode::Sample) {
        model.sample_continuous(x, rng, means);
      }
      cont.row(row) = means.transpose();
      for (std::size_t g = 0; g < p.size(); ++g) {
        probs[g].row(row) = p[g].transpose();
        classes[g][static_cast<std::size_t>(row)] = mode == PredictMode::Argmax ? argmax_class(p[g]) : draw_class(p[g], rng);
      }
    }
  });

  out.values.resize(n, static_cast<Index>(slots.size()));
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const auto [kind, idx] = slots[s].second;
    if (kind < 0) {
      out.values.col(static_cast<Index>(s)) = cont.col(idx);
      continue;
    }
    const auto& g = model.group_outputs()[static_cast<std::size_t>(kind)];
    for (Index r = 0; r < n; ++r) {
      const int cls = classes[static_cast<std::size_t>(kind)][static_cast<std::size_t>(r)];
      out.values(r, static_cast<Index>(s)) = g.binary ? (cls == 0 ? 1.0 : 0.0) : (cls == idx ? 1.0 : 0.0);
    }
  }
  for (std::size_t g = 0; g < probs.size(); ++g) out.probabilities[model.group_outputs()[g].name] = std::move(probs[g]);
  return out;
}

SyntheticPopulation extend_population(const SyntheticPopulation& pop, const BatchValues& batch,
                                      const FeatureSchema& schema) {
  if (batch.columns.empty()) return pop;
  if (batch.units.size() != pop.units().size()) {
    throw Error(Errc::KeyMismatch, "batch and population cover different units");
  }
  for (std::size_t m = 0; m < batch.units.size(); ++m) {
    const auto& a = batch.units[m];
    const auto& b = pop.units()[m];
    if (a.unit_id != b.unit_id || a.size != b.size || a.offset != b.offset) {
      throw Error(Errc::KeyMismatch, "batch keys differ from population at unit '" + b.unit_id + "'");
    }
  }
  if (batch.values.rows() != pop.num_rows()) throw Error(Errc::KeyMismatch, "batch row count differs");

  std::vector<std::string> merged = pop.columns();
  for (const auto& c : batch.columns) {
    if (pop.find_column(c)) throw Error(Errc::KeyMismatch, "column '" + c + "' already present");
    merged.push_back(c);
  }
  merged = schema.in_schema_order(merged);

  Matrix values(pop.num_rows(), static_cast<Index>(merged.size()));
  for (std::size_t j = 0; j < merged.size(); ++j) {
    if (const auto c = pop.find_column(merged[j])) {
      values.col(static_cast<Index>(j)) = pop.values().col(*c);
      continue;
    }
    const auto it = std::find(batch.columns.begin(), batch.columns.end(), merged[j]);
    values.col(static_cast<Index>(j)) = batch.values.col(static_cast<Index>(it - batch.columns.begin()));
  }
  SyntheticPopulation out(pop.units(), std::move(merged), std::move(values), Provenance::PostBatch);
  out.probabilities() = pop.probabilities();
  for (const auto& [name, p] : batch.probabilities) out.probabilities()[name] = p;
  return out;
}

SyntheticPopulation run_batches(const SyntheticPopulation& core, const CoarseTable& table,
                                const FeatureSchema& schema, const BatchPlan& plan,
                                std::uint64_t seed, const SynthesisOptions& options,
                                const BatchModelConfig& config,
                                std::vector<BatchDiagnostics>* diagnostics) {
  SyntheticPopulation pop = core;
  const auto& core_set = schema.core_set();
  for (const auto& entry : plan.batches) {
    std::vector<std::string> features = core_set;
    features.insert(features.end(), entry.features.begin(), entry.features.end());
    const long rows = training_rows(core_set.size(), entry.features.size());
    std::vector<double> weights(table.sizes().begin(), table.sizes().end());
    const auto allocation = largest_remainder(weights, rows);

    CorrelationModel corr;
    const SyntheticPopulation block = sample_features(table, schema, features, allocation, seed,
                                                      "batch:" + entry.label, options, &corr);
    BatchModelConfig entry_config = config;
    entry_config.kind = entry.model;
    const PredictiveModel model = fit_batch_model(block, schema, entry.features, entry_config);
    const BatchValues values = predict_batch(model, pop, PredictMode::Argmax,
                                             derive_seed(seed, "predict", entry.label), options.threads);
    pop = extend_population(pop, values, schema);
    if (diagnostics != nullptr) {
      diagnostics->push_back({entry.label, rows, corr.repaired, model.marginal_only()});
    }
  }
  pop.set_provenance(Provenance::PostBatch);
  return pop;
}

}  // namespace popsynth
