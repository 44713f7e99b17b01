#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "tvae/experiments.hpp"
#include "tvae/export.hpp"
#include "tvae/model_io.hpp"
#include "tvae/train.hpp"

using namespace tvae;

namespace {

Dataset small_data(std::size_t n, std::uint64_t seed, OutcomeMode mode = OutcomeMode::continuous) {
  GeneratorConfig g;
  g.n = n;
  g.p = 8;
  g.seed = seed;
  g.treated_fraction = 0.3;
  g.outcome = mode;
  return generate_replication(g, 0);
}

TrainConfig quick(std::size_t epochs = 4) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.hidden = {8};
  c.latent_dim = 5;
  c.warmup_epochs = 1;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("tvae_test_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<std::vector<std::string>> read_csv_cells(const std::string& text) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(detail::split_csv_line(line));
  return out;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::vector({1.0, -2.0, 0.5});
  Adam opt(AdamSettings{0.1, 0.9, 0.999, 1e-8});
  opt.step({&p}, {Tensor::vector({3.0, -0.5, 0.0})});
  // bias-corrected moments give m/sqrt(v) = sign(g) on the first step
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(p[2], 0.5);
}

TEST(Adam, ConvergesOnQuadratic) {
  Tensor p = Tensor::vector({5.0, -3.0});
  Adam opt(AdamSettings{0.05, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 2000; ++i) opt.step({&p}, {Tensor::vector({2.0 * (p[0] - 1.0), 2.0 * (p[1] + 2.0)})});
  EXPECT_NEAR(p[0], 1.0, 1e-3);
  EXPECT_NEAR(p[1], -2.0, 1e-3);
}

TEST(BatchRanges, CoverEveryRowWithoutSingletons) {
  for (std::size_t n = 1; n < 80; ++n)
    for (std::size_t b : {2u, 3u, 7u, 32u}) {
      const auto r = detail::batch_ranges(n, b);
      std::size_t covered = 0, expect_begin = 0;
      for (const auto& [lo, hi] : r) {
        EXPECT_EQ(lo, expect_begin);
        EXPECT_TRUE(hi - lo >= 2 || r.size() == 1);
        covered += hi - lo;
        expect_begin = hi;
      }
      EXPECT_EQ(covered, n);
    }
}

TEST(TrainConfig, TextRoundTripAndValidation) {
  TrainConfig c = quick();
  c.adam.lr = 3.3e-4;
  c.hidden = {7, 3};
  c.match = MatchStrategy::of(MatchKind::wasserstein_1d);
  c.upsample_ratio = 0.35;
  c.seed = 123456789012345ULL;
  c.outcome = OutcomeMode::binary;
  c.kl_weight = 0.15;
  c.fake_decoding = FakeDecoding::mean;
  EXPECT_EQ(TrainConfig::from(KvConfig::parse(c.to_text())), c);
  EXPECT_THROW(TrainConfig::from(KvConfig::parse("kl_weight=0\n")), ConfigError);
  KvConfig bad = KvConfig::parse("upsample_ratio=1.5\n");
  EXPECT_THROW(TrainConfig::from(bad), ConfigError);
  EXPECT_THROW(TrainConfig::from(KvConfig::parse("epochs=0\n")), ConfigError);
  EXPECT_THROW(TrainConfig::from(KvConfig::parse("latent_dim=3\n")), ConfigError);
  KvConfig typo = KvConfig::parse("epoch=5\n");
  TrainConfig::from(typo);
  EXPECT_THROW(typo.check_consumed(), ConfigError);
}

TEST(Train, PlainVaeLossDecreases) {
  TrainConfig c = quick(20);
  c.alpha = 0.0;
  c.beta = 0.0;
  c.upsample_ratio = 0.0;
  c.validation_fraction = 0.0;
  c.adam.lr = 1e-2;
  const TrainResult r = train(small_data(200, 1), c);
  ASSERT_EQ(r.manifest.epochs.size(), 20u);
  auto elbo = [&](std::size_t e) { return r.manifest.epochs[e].train.recon + r.manifest.epochs[e].train.kl_prior; };
  EXPECT_LT(elbo(17) + elbo(18) + elbo(19), elbo(0) + elbo(1) + elbo(2));
  for (const EpochRecord& e : r.manifest.epochs) {
    EXPECT_EQ(e.train.supervised * c.alpha, 0.0);
    EXPECT_EQ(e.train.tc, 0.0);
    EXPECT_EQ(e.n_fake, 0u);
  }
}

TEST(Train, DeterministicForSameSeed) {
  const Dataset d = small_data(150, 2);
  const TrainResult a = train(d, quick()), b = train(d, quick());
  EXPECT_TRUE(a.model == b.model);
  TrainConfig other = quick();
  other.seed = 1;
  EXPECT_FALSE(train(d, other).model == a.model);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const Dataset d = small_data(120, 3);
  TrainConfig c = quick(6);
  c.adam.lr = 0.0;
  const TrainResult r = train(d, c);
  const TvaeModel init = init_model(c.model_config(d.cols(), d.features), derive_seed(c.seed, SeedPurpose::init));
  EXPECT_TRUE(r.model.encoder == init.encoder);
  EXPECT_TRUE(r.model.decoder == init.decoder);
}

TEST(Train, FakesAppearAfterWarmupOnly) {
  TrainConfig c = quick(5);
  c.warmup_epochs = 2;
  c.upsample_ratio = 1.0;
  c.validation_fraction = 0.0;
  const TrainResult r = train(small_data(150, 4), c);
  for (const EpochRecord& e : r.manifest.epochs) {
    if (e.epoch <= 2) EXPECT_EQ(e.n_fake, 0u);
    else EXPECT_GT(e.n_fake, 0u);
  }
}

TEST(Train, EarlyStoppingReturnsBestSnapshot) {
  TrainConfig c = quick(40);
  c.patience = 3;
  c.adam.lr = 5e-2;
  const TrainResult r = train(small_data(150, 5), c);
  double best = INFINITY;
  std::size_t arg = 0;
  for (const EpochRecord& e : r.manifest.epochs)
    if (*e.validation_loss < best) {
      best = *e.validation_loss;
      arg = e.epoch;
    }
  EXPECT_EQ(r.manifest.best_epoch, arg);
  EXPECT_LE(r.manifest.epochs.size(), arg + c.patience);
}

TEST(Train, Errors) {
  Dataset d = small_data(100, 6);
  EXPECT_THROW(train(d.subset({}), quick()), DataError);
  TrainConfig c = quick(3);
  c.adam.lr = 1e250;
  try {
    train(d, c);
    FAIL() << "expected a numerical error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
  Dataset fake = d;
  fake.synthetic[0] = 1;
  EXPECT_THROW(train(fake, quick()), DataError);
}

TEST(Train, StandardizationUsesFittingRowsOnly) {
  Dataset d = small_data(120, 7);
  TrainConfig c = quick(1);
  c.validation_fraction = 0.0;
  const TrainResult r = train(d, c);
  const Standardization s = fit_standardization(d.x, d.features);
  EXPECT_EQ(r.model.standardization.mean, s.mean);
  EXPECT_EQ(r.model.standardization.scale, s.scale);
}

TEST(Evaluate, OracleAndConstantPredictors) {
  Dataset d = small_data(200, 8, OutcomeMode::binary);
  std::vector<Prediction> oracle(d.rows()), flat(d.rows());
  for (std::size_t i = 0; i < d.rows(); ++i) {
    oracle[i].propensity = d.w[i];
    oracle[i].y1hat = (*d.mu1)[i];
    oracle[i].y0hat = (*d.mu0)[i];
    (d.w[i] ? oracle[i].y1hat : oracle[i].y0hat) = d.y[i];
  }
  // ground truth taken from the predictor itself gives zero error
  Dataset truth = d;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    (*truth.mu1)[i] = oracle[i].y1hat;
    (*truth.mu0)[i] = oracle[i].y0hat;
  }
  MetricsReport r = metrics_from_predictions(oracle, truth, OutcomeMode::binary);
  EXPECT_EQ(*r.auroc_assignment, 1.0);
  EXPECT_EQ(*r.auprc_assignment, 1.0);
  EXPECT_EQ(*r.auroc_response, 1.0);
  EXPECT_EQ(*r.auprc_response, 1.0);
  EXPECT_EQ(*r.rpehe, 0.0);
  MetricsReport c = metrics_from_predictions(flat, d, OutcomeMode::binary);
  EXPECT_EQ(*c.auroc_assignment, 0.5);
  EXPECT_EQ(*c.auroc_response, 0.5);
}

TEST(Evaluate, AgreesWithMetricsOnExportedPredictions) {
  const Dataset d = small_data(200, 9, OutcomeMode::binary);
  TrainConfig c = quick(3);
  c.outcome = OutcomeMode::binary;
  const TrainResult r = train(d, c);
  const MetricsReport report = evaluate(r.model, d);
  const auto path = scratch("pred.csv");
  predict_export(r.model, d, path.string());
  const auto cells = read_csv_cells(detail::read_file(path.string()));
  std::vector<double> prop, factual, y1, y0;
  std::vector<int> w, y;
  for (std::size_t i = 1; i < cells.size(); ++i) {
    prop.push_back(std::stod(cells[i][1]));
    y1.push_back(std::stod(cells[i][2]));
    y0.push_back(std::stod(cells[i][3]));
    w.push_back(std::stoi(cells[i][5]));
    y.push_back(std::stod(cells[i][6]) > 0.5);
    factual.push_back(w.back() ? y1.back() : y0.back());
  }
  EXPECT_EQ(*report.auroc_assignment, auroc(prop, w));
  EXPECT_EQ(*report.auprc_assignment, auprc(prop, w));
  EXPECT_EQ(*report.auroc_response, auroc(factual, y));
  EXPECT_EQ(*report.auprc_response, auprc(factual, y));
  EXPECT_EQ(*report.rpehe, rpehe(y1, y0, *d.mu1, *d.mu0));
}

TEST(Export, PredictionSchema) {
  const Dataset d = small_data(80, 10);
  const TrainResult r = train(d, quick(2));
  const auto p1 = scratch("p1.csv"), p2 = scratch("p2.csv");
  predict_export(r.model, d, p1.string());
  predict_export(r.model, d, p2.string());
  const std::string text = detail::read_file(p1.string());
  EXPECT_EQ(text, detail::read_file(p2.string()));
  const auto cells = read_csv_cells(text);
  ASSERT_EQ(cells.size(), d.rows() + 1);
  EXPECT_EQ(cells[0], (std::vector<std::string>{"row_id", "propensity", "y1hat", "y0hat", "ite", "w", "y"}));
  for (std::size_t i = 1; i < cells.size(); ++i) {
    ASSERT_EQ(cells[i].size(), 7u);
    EXPECT_EQ(std::stod(cells[i][4]), std::stod(cells[i][2]) - std::stod(cells[i][3]));
  }
  EXPECT_THROW(predict_export(r.model, d, "/nonexistent-dir/x.csv"), IoError);
}

TEST(Export, LatentCsvAndSvg) {
  const Dataset d = small_data(60, 11);
  TrainConfig c = quick(2);
  c.latent_dim = 6;
  const TrainResult r = train(d, c);
  const auto prefix = scratch("latent").string();
  emit_latent(r.model, d, prefix);
  const auto cells = read_csv_cells(detail::read_file(prefix + ".csv"));
  EXPECT_EQ(cells[0].size(), 6u + 2u);
  EXPECT_EQ(cells.size(), d.rows() + 1);
  const std::string svg = detail::read_file(prefix + ".svg");
  std::size_t circles = 0;
  for (std::size_t pos = 0; (pos = svg.find("<circle", pos)) != std::string::npos; ++pos) ++circles;
  EXPECT_EQ(circles, d.rows());
  EXPECT_NE(svg.find(">z4<"), std::string::npos);
  EXPECT_NE(svg.find(">z5<"), std::string::npos);
  EXPECT_EQ(LatentScatter{}.dim_x, 4u);
  EXPECT_EQ(LatentScatter{}.dim_y, 5u);
}

TEST(ModelIo, BitExactRoundTrip) {
  const TrainResult r = train(small_data(80, 12), quick(2));
  const auto path = scratch("model.json");
  save_model(r.model, path.string());
  const TvaeModel back = load_model(path.string());
  EXPECT_TRUE(back == r.model);
  EXPECT_EQ(model_to_json(back).dump(), model_to_json(r.model).dump());
  nlohmann::json j = model_to_json(r.model);
  j["format_version"] = 99;
  EXPECT_THROW(model_from_json(j), ParseError);
  j = model_to_json(r.model);
  j.erase("encoder");
  EXPECT_THROW(model_from_json(j), ParseError);
}

TEST(Manifest, JsonRoundTripAndReplay) {
  const Dataset d = small_data(120, 13);
  TrainResult r = train(d, quick(3));
  r.manifest.metrics = evaluate(r.model, d);
  const RunManifest back = RunManifest::from_json(nlohmann::json::parse(r.manifest.to_json().dump()));
  EXPECT_EQ(back.to_json(), r.manifest.to_json());
  EXPECT_EQ(back.dataset_fingerprint, d.fingerprint());
  const TrainResult again = train(d, back.config());
  EXPECT_TRUE(again.model == r.model);
  EXPECT_EQ(evaluate(again.model, d), *back.metrics);
}

TEST(Manifest, TrainAndReportReplaysThroughJson) {
  const Dataset d = small_data(150, 15);
  const TrainResult r = train_and_report(d, quick(2));
  ASSERT_TRUE(r.manifest.metrics.has_value());
  EXPECT_EQ(r.manifest.dataset_fingerprint, d.fingerprint());
  const RunManifest back = RunManifest::from_json(nlohmann::json::parse(r.manifest.to_json().dump()));
  const ReplayCheck c = replay(back, d);
  EXPECT_TRUE(c.identical);
  EXPECT_EQ(c.replayed, *r.manifest.metrics);
  Dataset other = d;
  other.y[0] += 1.0;
  EXPECT_THROW(replay(back, other), DataError);
}

TEST(Summaries, ArithmeticAndStandardError) {
  const Summary s = summarize({1.0, 2.0, 6.0});
  EXPECT_DOUBLE_EQ(s.mean, 3.0);
  EXPECT_DOUBLE_EQ(s.stderr_, std::sqrt(7.0) / std::sqrt(3.0));
  EXPECT_EQ(summarize({2.5, 2.5}).stderr_, 0.0);
  EXPECT_TRUE(std::isnan(summarize({1.0}).stderr_));
}

TEST(Benchmark, IdenticalReplicationsHaveZeroSpread) {
  const Dataset d = small_data(200, 14);
  BenchmarkOptions o;
  o.k = 5;
  o.methods = {"tvae", "ols_s", "ols_t", "knn"};
  const BenchmarkReport r = run_benchmark(std::vector<Dataset>{d, d}, quick(2), o);
  EXPECT_TRUE(r.failures.empty());
  EXPECT_EQ(r.fold_fingerprints[0], r.fold_fingerprints[1]);
  for (const std::string& m : o.methods) {
    const auto v = r.values(m, "rpehe");
    ASSERT_EQ(v.size(), 2u);
    EXPECT_DOUBLE_EQ(r.summary(m, "rpehe").mean, (v[0] + v[1]) / 2.0);
    EXPECT_EQ(r.summary(m, "rpehe").stderr_, 0.0);
  }
}

TEST(Benchmark, OlsTOnNoiselessLinearReplications) {
  GeneratorConfig g;
  g.surface = Surface::linear;
  g.noise_sd = 0.0;
  g.n = 300;
  g.replications = 4;
  BenchmarkOptions o;
  o.methods = {"ols_t"};
  const BenchmarkReport r = run_benchmark(g, quick(), o);
  EXPECT_TRUE(r.failures.empty());
  EXPECT_LT(r.summary("ols_t", "rpehe").mean, 1e-6);
}

TEST(Benchmark, FailuresAreRecordedAndExcluded) {
  GeneratorConfig g;
  g.n = 100;
  g.p = 8;
  g.replications = 3;
  std::vector<std::function<Dataset()>> reps{[&] { return generate_replication(g, 0); },
                                             [] () -> Dataset { throw GenerationError("boom"); },
                                             [&] { return generate_replication(g, 2); }};
  BenchmarkOptions o;
  o.k = 5;
  o.methods = {"ols_s"};
  const BenchmarkReport r = run_benchmark(reps, quick(), o);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].replication, 1u);
  EXPECT_EQ(r.summary("ols_s", "rpehe").count, 2u);
  o.methods = {"nope"};
  EXPECT_THROW(run_benchmark(reps, quick(), o), ConfigError);
}

TEST(Ablate, ArmsShareFoldsAndCarryDiagnostics) {
  const Dataset d = small_data(150, 16);
  CvOptions o;
  o.k = 3;
  o.folds_used = 2;
  const AblationReport r = ablate(d, quick(2), AblationComponent::both, o);
  EXPECT_EQ(r.on.fold_fingerprint, r.off.fold_fingerprint);
  ASSERT_EQ(r.off.runs.size(), 2u);
  for (const FoldRun& f : r.off.runs) ASSERT_TRUE(f.diagnostics.has_value());
  TrainConfig off = quick(2);
  off.beta = 0.0;
  off.upsample_ratio = 0.0;
  const CrossValidation direct = cross_validate(d, off, o);
  for (std::size_t f = 0; f < 2; ++f) EXPECT_EQ(direct.runs[f].metrics, r.off.runs[f].metrics);
  EXPECT_EQ(ablated(quick(), AblationComponent::db).upsample_ratio, quick().upsample_ratio);
  EXPECT_EQ(ablated(quick(), AblationComponent::lb).beta, quick().beta);
}

TEST(Sweep, RowsAndConsistencyWithLbOffArm) {
  const Dataset d = small_data(150, 17);
  CvOptions o;
  o.k = 3;
  o.folds_used = 1;
  const auto rows = sweep_upsample(d, quick(2), {0.0, 0.5}, o);
  ASSERT_EQ(rows.size(), 2u);
  const AblationReport lb = ablate(d, quick(2), AblationComponent::lb, o);
  EXPECT_EQ(rows[0].cv.runs[0].metrics, lb.off.runs[0].metrics);
  const std::string csv = sweep_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_THROW(sweep_upsample(d, quick(2), {1.2}, o), ConfigError);
}

TEST(ParallelFor, MatchesSequentialAndPropagatesErrors) {
  std::vector<int> out(50, 0);
  parallel_for(50, 4, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw DataError("x");
               }),
               DataError);
}
