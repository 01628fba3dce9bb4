#include <doctest.h>

#include <filesystem>
#include <numeric>

#include "check.hpp"
#include "oracles.hpp"
#include "popsynth/batch_synth.hpp"
#include "popsynth/numeric.hpp"

namespace fs = std::filesystem;
using namespace popsynth;

namespace {

const fs::path kFixtures(POPSYNTH_FIXTURES);

FeatureDef core(const std::string& name, FeatureKind kind = FeatureKind::ContinuousReal) {
  return {name, kind, std::nullopt, Role::Core, ""};
}

FeatureDef batch(const std::string& name, const std::string& label, FeatureKind kind = FeatureKind::ContinuousReal,
                 std::optional<std::string> group = std::nullopt) {
  return {name, kind, std::move(group), Role::Batch, label};
}

// x -> y training block with one unit holding every row.
SyntheticPopulation block_of(const std::vector<std::string>& columns, const Matrix& values) {
  return SyntheticPopulation({{"U", 0, values.rows()}}, columns, values, Provenance::PostCopula);
}

}  // namespace

TEST_CASE("core synthesis on the three-unit excerpt") {
  const auto schema = load_schema(kFixtures / "table1" / "schema.json");
  const auto table = load_coarse_table(kFixtures / "table1" / "coarse.csv", schema);
  const auto pop = synthesize_core(table, schema, 20190401);
  CHECK(pop.num_rows() == 777);
  CHECK(pop.columns() == std::vector<std::string>{"AvgAge", "Mortgage", "TwoLang"});
  REQUIRE(pop.units().size() == 3);
  CHECK(pop.units()[0].unit_id == "M5S3G2");
  CHECK(pop.units()[0].size == 467);
  CHECK(pop.units()[1].offset == 467);
  CHECK(pop.units()[2].size == 41);
  CHECK(pop.provenance() == Provenance::PostCopula);
  CHECK(pop.values().col(0).minCoeff() > 0.0);
  for (Index r = 0; r < pop.num_rows(); ++r) {
    for (Index c : {1, 2}) CHECK((pop.values()(r, c) == 0.0 || pop.values()(r, c) == 1.0));
  }
  REQUIRE(pop.probabilities().count("Mortgage"));
  const Matrix& p = pop.probabilities().at("Mortgage");
  CHECK(p.rows() == 777);
  CHECK(p.cols() == 2);
  CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);

  const auto again = synthesize_core(table, schema, 20190401, {SigmaMode::SqrtN, 3});
  CHECK(again.values() == pop.values());
  CHECK(synthesize_core(table, schema, 20190402).values() != pop.values());
}

TEST_CASE("training block size") {
  CHECK(training_rows(3, 2) == 250);
  CHECK(training_rows(1, 1) == 100);
  CHECK(training_rows(3000, 2000) == 200000);
}

TEST_CASE("batch plan follows first appearance") {
  const auto schema = load_schema(kFixtures / "demo" / "schema.json");
  const auto plan = make_batch_plan(schema, {ModelKind::Linear, 3});
  REQUIRE(plan.batches.size() == 2);
  CHECK(plan.batches[0].label == "household");
  CHECK(plan.batches[0].features ==
        std::vector<std::string>{"mortgage", "educ_none", "educ_college", "educ_degree"});
  CHECK(plan.batches[0].model == ModelKind::Linear);
  CHECK(plan.batches[1].label == "language");
  CHECK(parse_model_kind("knn") == ModelKind::Knn);
  CHECK_ERRC(parse_model_kind("forest"), Errc::ConfigInvalid);
}

TEST_CASE("k-NN reproduces training rows at their own inputs") {
  const FeatureSchema schema({core("x"), core("w"), batch("y", "b"), batch("flag", "b", FeatureKind::Share)});
  gen::Source src(51);
  const Index n = 60;
  Matrix v(n, 4);
  for (Index i = 0; i < n; ++i) {
    v(i, 0) = src.uniform(-5, 5);
    v(i, 1) = src.uniform(0, 100);
    v(i, 2) = 3.0 * v(i, 0) - 0.1 * v(i, 1) + src.normal();
    v(i, 3) = src.uniform() < 0.4 ? 1.0 : 0.0;
  }
  const auto block = block_of({"x", "w", "y", "flag"}, v);
  for (int k : {1, 5}) {
    const auto model = fit_batch_model(block, schema, {"y", "flag"}, {ModelKind::Knn, k});
    CHECK(!model.marginal_only());
    CHECK(model.inputs() == std::vector<std::string>{"x", "w"});
    const auto pred = predict_batch(model, block_of({"x", "w"}, v.leftCols(2)), PredictMode::Argmax, 1);
    CHECK(pred.columns == std::vector<std::string>{"y", "flag"});
    CHECK(pred.values.col(0) == v.col(2));
    CHECK(pred.values.col(1) == v.col(3));
  }
}

TEST_CASE("k-NN probability votes") {
  const FeatureSchema schema({core("x"), batch("c_a", "b", FeatureKind::Share, "c"),
                              batch("c_b", "b", FeatureKind::Share, "c"), batch("c_c", "b", FeatureKind::Share, "c")});
  Matrix v(3, 4);
  v << 0, 1, 0, 0,  //
      2, 0, 1, 0,   //
      10, 0, 0, 1;
  const auto model = fit_batch_model(block_of({"x", "c_a", "c_b", "c_c"}, v), schema, {"c_a", "c_b", "c_c"},
                                     {ModelKind::Knn, 2});
  Vector means(0);
  std::vector<Vector> p;
  SUBCASE("equidistant neighbours tie and argmax takes the lower class") {
    model.predict_distribution((Vector(1) << 1.0).finished(), means, p);
    REQUIRE(p.size() == 1);
    CHECK(p[0](0) == doctest::Approx(0.5));
    CHECK(p[0](1) == doctest::Approx(0.5));
    CHECK(p[0](2) == 0.0);
    const auto pred = predict_batch(model, block_of({"x"}, Matrix::Constant(1, 1, 1.0)), PredictMode::Argmax, 3);
    CHECK(pred.values.row(0) == (Eigen::RowVector3d() << 1, 0, 0).finished());
  }
  SUBCASE("inverse distance weights") {
    // Standardization divides both distances by the same scale, so the ratio survives.
    model.predict_distribution((Vector(1) << 1.5).finished(), means, p);
    CHECK(p[0](1) / p[0](0) == doctest::Approx(1.5 / 0.5));
  }
}

TEST_CASE("predicted distributions are valid [property]") {
  gen::Source src(53);
  for (int trial = 0; trial < 25; ++trial) {
    const bool linear = trial % 2 == 1;
    const FeatureSchema schema({core("x"), core("s", FeatureKind::Share), batch("y", "b", FeatureKind::ContinuousPositive),
                                batch("g_a", "b", FeatureKind::Share, "g"), batch("g_b", "b", FeatureKind::Share, "g"),
                                batch("g_c", "b", FeatureKind::Share, "g")});
    const Index n = src.integer(10, 80);
    Matrix v = Matrix::Zero(n, 6);
    for (Index i = 0; i < n; ++i) {
      v(i, 0) = src.normal();
      v(i, 1) = src.uniform() < 0.5 ? 1.0 : 0.0;
      v(i, 2) = std::exp(src.normal());
      v(i, 3 + src.integer(0, 2)) = 1.0;
    }
    const auto model = fit_batch_model(block_of({"x", "s", "y", "g_a", "g_b", "g_c"}, v), schema,
                                       {"y", "g_a", "g_b", "g_c"}, {linear ? ModelKind::Linear : ModelKind::Knn,
                                                                    static_cast<int>(src.integer(1, 8))});
    const Index q = 40;
    Matrix queries(q, 2);
    for (Index i = 0; i < q; ++i) {
      queries(i, 0) = src.uniform(-4, 4);
      queries(i, 1) = src.uniform() < 0.5 ? 1.0 : 0.0;
    }
    for (auto mode : {PredictMode::Argmax, PredictMode::Sample}) {
      const auto pred = predict_batch(model, block_of({"x", "s"}, queries), mode, 99);
      const Matrix& p = pred.probabilities.at("g");
      CHECK(p.minCoeff() >= 0.0);
      CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
      CHECK((pred.values.rightCols(3).rowwise().sum().array() == 1.0).all());
      if (!linear) {
        // k-NN means are convex combinations of training values.
        CHECK(pred.values.col(0).minCoeff() >= v.col(2).minCoeff() - 1e-12);
        CHECK(pred.values.col(0).maxCoeff() <= v.col(2).maxCoeff() + 1e-12);
      }
      if (mode == PredictMode::Argmax) {
        for (Index i = 0; i < q; ++i) {
          Index best = 0;
          p.row(i).maxCoeff(&best);
          CHECK(pred.values(i, 1 + best) == 1.0);
        }
      }
    }
  }
}

TEST_CASE("linear model recovers an exact relationship") {
  const FeatureSchema schema({core("x"), batch("y", "b")});
  Matrix v(20, 2);
  for (Index i = 0; i < 20; ++i) {
    v(i, 0) = static_cast<double>(i) * 0.7 - 3.0;
    v(i, 1) = 2.0 * v(i, 0) + 1.0;
  }
  const auto model = fit_batch_model(block_of({"x", "y"}, v), schema, {"y"}, {ModelKind::Linear, 5});
  const auto pred = predict_batch(model, block_of({"x"}, (Matrix(2, 1) << 100.0, -7.0).finished()), PredictMode::Argmax, 0);
  CHECK(pred.values(0, 0) == doctest::Approx(201.0).epsilon(1e-9));
  CHECK(pred.values(1, 0) == doctest::Approx(-13.0).epsilon(1e-9));
}

TEST_CASE("constant core inputs fall back to the block marginal") {
  const FeatureSchema schema({core("x"), batch("y", "b"), batch("f", "b", FeatureKind::Share)});
  Matrix v(4, 3);
  v << 5, 1, 1,  //
      5, 2, 0,   //
      5, 3, 1,   //
      5, 6, 1;
  for (auto kind : {ModelKind::Knn, ModelKind::Linear}) {
    const auto model = fit_batch_model(block_of({"x", "y", "f"}, v), schema, {"y", "f"}, {kind, 2});
    CHECK(model.marginal_only());
    const auto pred = predict_batch(model, block_of({"x"}, Matrix::Constant(3, 1, -1.0)), PredictMode::Argmax, 0);
    CHECK((pred.values.col(0).array() == 3.0).all());
    CHECK(pred.probabilities.at("f")(0, 0) == doctest::Approx(0.75));
  }
}

TEST_CASE("model fitting errors") {
  const FeatureSchema schema({core("x"), batch("y", "b")});
  const auto block = block_of({"x", "y"}, Matrix::Random(5, 2));
  CHECK_ERRC(fit_batch_model(block, schema, {"y"}, {ModelKind::Knn, 0}), Errc::ConfigInvalid);
  CHECK_ERRC(fit_batch_model(block, schema, {"x"}, {ModelKind::Knn, 3}), Errc::SchemaInvalid);
  CHECK_ERRC(fit_batch_model(block_of({"y"}, Matrix::Random(5, 1)), schema, {"y"}, {ModelKind::Knn, 3}),
             Errc::MissingInput);
  const auto model = fit_batch_model(block, schema, {"y"}, {ModelKind::Knn, 3});
  CHECK_ERRC(predict_batch(model, block_of({"z"}, Matrix::Random(2, 1)), PredictMode::Argmax, 0), Errc::MissingInput);
}

TEST_CASE("joining batch values") {
  const FeatureSchema schema({core("a"), batch("b", "x"), core("c")});
  const std::vector<UnitBlock> units{{"P", 0, 2}, {"Q", 2, 1}};
  Matrix core_values(3, 2);
  core_values << 1, 10, 2, 20, 3, 30;
  const SyntheticPopulation pop(units, {"a", "c"}, core_values, Provenance::PostCopula);
  BatchValues values;
  values.units = units;
  values.columns = {"b"};
  values.values = (Matrix(3, 1) << 7, 8, 9).finished();

  const auto joined = extend_population(pop, values, schema);
  CHECK(joined.columns() == std::vector<std::string>{"a", "b", "c"});
  CHECK(joined.values().col(0) == core_values.col(0));
  CHECK(joined.values().col(1) == values.values.col(0));
  CHECK(joined.values().col(2) == core_values.col(1));
  CHECK(joined.provenance() == Provenance::PostBatch);

  BatchValues empty;
  CHECK(extend_population(pop, empty, schema).values() == pop.values());

  BatchValues shifted = values;
  shifted.units = {{"P", 0, 1}, {"Q", 1, 2}};
  CHECK_ERRC(extend_population(pop, shifted, schema), Errc::KeyMismatch);
  BatchValues renamed = values;
  renamed.units[1].unit_id = "R";
  CHECK_ERRC(extend_population(pop, renamed, schema), Errc::KeyMismatch);
  BatchValues clash = values;
  clash.columns = {"a"};
  CHECK_ERRC(extend_population(pop, clash, schema), Errc::KeyMismatch);
}

TEST_CASE("batches extend the demo population") {
  const auto schema = load_schema(kFixtures / "demo" / "schema.json");
  const auto table = load_coarse_table(kFixtures / "demo" / "coarse.csv", schema);
  const auto core_pop = synthesize_core(table, schema, 7);
  CHECK(core_pop.columns() == std::vector<std::string>{"age", "income", "sex_F", "sex_M"});
  const auto plan = make_batch_plan(schema, {});
  std::vector<BatchDiagnostics> diag;
  const auto pop = run_batches(core_pop, table, schema, plan, 7, {}, {}, &diag);
  CHECK(pop.columns() == schema.names());
  CHECK(pop.num_rows() == table.total_size());
  CHECK(pop.provenance() == Provenance::PostBatch);
  REQUIRE(diag.size() == 2);
  CHECK(diag[0].training_rows == 50 * (4 + 4));
  CHECK(diag[1].training_rows == 50 * (4 + 1));
  for (const char* name : {"age", "income", "sex_F"}) {
    CHECK(pop.values().col(pop.column(name)) == core_pop.values().col(core_pop.column(name)));
  }
  const auto& educ = schema.groups()[*schema.find_group("educ")];
  for (int cls : realized_classes(pop, schema, educ)) CHECK(cls >= 0);
  CHECK(pop.probabilities().count("educ"));
  CHECK(pop.probabilities().count("mortgage"));
  CHECK(pop.values().col(pop.column("languages")).minCoeff() > 0.0);

  const auto again = run_batches(core_pop, table, schema, plan, 7, {SigmaMode::SqrtN, 4}, {});
  CHECK(again.values() == pop.values());
}
