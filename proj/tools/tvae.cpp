#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tvae/balance.hpp"
#include "tvae/data.hpp"
#include "tvae/experiments.hpp"
#include "tvae/export.hpp"
#include "tvae/model_io.hpp"
#include "tvae/train.hpp"

namespace fs = std::filesystem;
using namespace tvae;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  bool ihdp = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_data) {
  cmd->add_option("--config", c.config, "key=value config file");
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--out", c.out, "output directory (created if missing)")->required();
  auto* data = cmd->add_option("--data", c.data, "dataset CSV");
  if (needs_data) data->required();
  cmd->add_flag("--ihdp", c.ihdp, "read --data as a headerless IHDP replication file");
}

KvConfig load_kv(const std::string& path) { return path.empty() ? KvConfig() : KvConfig::load(path); }

TrainConfig load_train_config(const Common& c) {
  const KvConfig kv = load_kv(c.config);
  TrainConfig cfg = TrainConfig::from(kv);
  kv.check_consumed();
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

Dataset load_data(const std::string& path, bool ihdp) {
  return ihdp ? parse_ihdp_csv(detail::read_file(path)) : ingest_csv(path);
}

fs::path out_dir(const Common& c) {
  fs::path p(c.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create output directory '" + c.out + "': " + ec.message());
  return p;
}

void write_json(const fs::path& path, const nlohmann::json& j) { detail::write_file(path.string(), j.dump(2) + "\n"); }

void say(const std::string& what, const fs::path& path) { std::cout << what << ": " << path.string() << "\n"; }

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& c) {
  const KvConfig kv = load_kv(c.config);
  GeneratorConfig g = GeneratorConfig::from(kv);
  kv.check_consumed();
  if (c.seed) g.seed = *c.seed;
  const fs::path dir = out_dir(c);
  for (std::size_t r = 0; r < g.replications; ++r) {
    char name[40];
    std::snprintf(name, sizeof name, "replication_%03zu.csv", r);
    export_csv(generate_replication(g, r), (dir / name).string());
  }
  std::cout << "wrote " << g.replications << " replication(s) to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& replay_path) {
  const Dataset d = load_data(c.data, c.ihdp);
  const fs::path dir = out_dir(c);
  if (!replay_path.empty()) {
    if (!c.config.empty() || c.seed) throw ConfigError("--replay takes its config and seed from the manifest");
    const RunManifest m = RunManifest::from_json(nlohmann::json::parse(detail::read_file(replay_path)));
    const ReplayCheck check = replay(m, d);
    write_json(dir / "replay.json", {{"identical", check.identical},
                                     {"recorded", check.recorded.to_json()},
                                     {"replayed", check.replayed.to_json()}});
    say("replay", dir / "replay.json");
    if (!check.identical) {
      std::cerr << "replay produced different metrics\n";
      return 2;
    }
    std::cout << "replay identical\n";
    return 0;
  }
  const TrainConfig cfg = load_train_config(c);
  const TrainResult r = train_and_report(d, cfg);
  save_model(r.model, (dir / "model.json").string());
  write_json(dir / "manifest.json", r.manifest.to_json());
  write_json(dir / "metrics.json", r.manifest.metrics->to_json());
  say("model", dir / "model.json");
  say("manifest", dir / "manifest.json");
  std::cout << r.manifest.metrics->to_json().dump() << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& model_path) {
  const TvaeModel m = load_model(model_path);
  const MetricsReport r = evaluate(m, load_data(c.data, c.ihdp));
  for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";
  const fs::path dir = out_dir(c);
  write_json(dir / "metrics.json", r.to_json());
  std::cout << r.to_json().dump() << "\n";
  return 0;
}

int cmd_predict(const Common& c, const std::string& model_path, const std::string& method, const std::string& train_path,
                std::size_t knn_k) {
  const Dataset d = load_data(c.data, c.ihdp);
  const fs::path dir = out_dir(c);
  const fs::path path = dir / "predictions.csv";
  if (method == "tvae") {
    if (model_path.empty()) throw ConfigError("predict with the tvae method needs --model");
    predict_export(load_model(model_path), d, path.string());
  } else {
    if (train_path.empty()) throw ConfigError("baseline prediction needs --train");
    const Dataset train_rows = load_data(train_path, c.ihdp);
    detail::write_file(path.string(), predictions_csv(baseline_predict(method, train_rows, d.x, knn_k), d));
  }
  say("predictions", path);
  return 0;
}

int cmd_benchmark(const Common& c, const std::string& gen_config, const std::vector<std::string>& files,
                  BenchmarkOptions opt) {
  const TrainConfig cfg = load_train_config(c);
  BenchmarkReport report;
  if (!files.empty() || !c.data.empty()) {
    if (!gen_config.empty()) throw ConfigError("benchmark takes either --gen-config or data files, not both");
    std::vector<std::string> paths = files;
    if (!c.data.empty()) paths.insert(paths.begin(), c.data);
    std::vector<std::function<Dataset()>> reps;
    for (const std::string& p : paths) reps.push_back([p, ihdp = c.ihdp] { return load_data(p, ihdp); });
    report = run_benchmark(reps, cfg, opt);
  } else {
    const KvConfig kv = load_kv(gen_config);
    GeneratorConfig g = GeneratorConfig::from(kv);
    kv.check_consumed();
    report = run_benchmark(g, cfg, opt);
  }
  const fs::path dir = out_dir(c);
  const nlohmann::json j = report.to_json();
  write_json(dir / "benchmark.json", j);
  for (const BenchmarkFailure& f : report.failures)
    std::cerr << "replication " << f.replication << " (" << f.method << ") failed: " << f.message << "\n";
  std::cout << j.at("summary").dump(2) << "\n";
  say("report", dir / "benchmark.json");
  return 0;
}

void write_diagnostics(const fs::path& dir, const std::string& arm, const CrossValidation& cv) {
  for (const FoldRun& r : cv.runs)
    if (r.diagnostics) {
      detail::write_file((dir / ("latent_diagnostics_" + arm + "_fold" + std::to_string(r.fold) + ".csv")).string(),
                         r.diagnostics->to_csv());
    }
}

int cmd_ablate(const Common& c, const std::string& component, const CvOptions& opt) {
  const AblationReport r = ablate(load_data(c.data, c.ihdp), load_train_config(c), parse_ablation(component), opt);
  const fs::path dir = out_dir(c);
  write_json(dir / "ablation.json", r.to_json());
  write_diagnostics(dir, "on", r.on);
  write_diagnostics(dir, "off", r.off);
  const nlohmann::json j = r.to_json();
  std::cout << nlohmann::json{{"on", j["on"]["summary"]}, {"off", j["off"]["summary"]}}.dump(2) << "\n";
  say("report", dir / "ablation.json");
  return 0;
}

int cmd_sweep(const Common& c, const std::vector<double>& ratios, const CvOptions& opt) {
  const std::vector<SweepRow> rows = sweep_upsample(load_data(c.data, c.ihdp), load_train_config(c), ratios, opt);
  const fs::path dir = out_dir(c);
  detail::write_file((dir / "sweep.csv").string(), sweep_csv(rows));
  nlohmann::json j = nlohmann::json::array();
  for (const SweepRow& row : rows) j.push_back({{"ratio", row.ratio}, {"cv", row.cv.to_json()}});
  write_json(dir / "sweep.json", j);
  std::cout << sweep_csv(rows);
  say("table", dir / "sweep.csv");
  return 0;
}

int cmd_latent(const Common& c, const std::string& model_path, const std::vector<std::size_t>& dims, bool no_svg) {
  if (dims.size() != 2) throw ConfigError("--dims takes exactly two latent dimensions");
  const fs::path dir = out_dir(c);
  std::optional<LatentScatter> scatter;
  if (!no_svg) scatter = LatentScatter{dims[0], dims[1]};
  emit_latent(load_model(model_path), load_data(c.data, c.ihdp), (dir / "latent").string(), scatter);
  say("latent", dir / "latent.csv");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Treatment-effect variational autoencoder: training, evaluation, benchmarks"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, predict_c, bench_c, ablate_c, sweep_c, latent_c;

  auto* gen = app.add_subcommand("gen-data", "write IHDP-like replications as CSV");
  add_common(gen, gen_c, false);

  std::string replay_path;
  auto* tr = app.add_subcommand("train", "train on a holdout split and report test metrics");
  add_common(tr, train_c, true);
  tr->add_option("--replay", replay_path, "manifest to replay; metrics must match bit for bit");

  std::string eval_model;
  auto* ev = app.add_subcommand("eval", "metrics of a saved model on a dataset");
  add_common(ev, eval_c, true);
  ev->add_option("--model", eval_model, "saved model JSON")->required();

  std::string predict_model, predict_method = "tvae", predict_train;
  std::size_t predict_knn = 5;
  auto* pr = app.add_subcommand("predict", "per-row propensity and potential-outcome predictions");
  add_common(pr, predict_c, true);
  pr->add_option("--model", predict_model, "saved model JSON (tvae method)");
  pr->add_option("--method", predict_method, "tvae|ols_s|ols_t|knn")
      ->check(CLI::IsMember({"tvae", "ols_s", "ols_t", "knn"}));
  pr->add_option("--train", predict_train, "training CSV for baseline methods");
  pr->add_option("--knn-k", predict_knn, "neighbours for knn")->check(CLI::PositiveNumber);

  std::string bench_gen;
  std::vector<std::string> bench_files;
  BenchmarkOptions bench_opt;
  auto* bm = app.add_subcommand("benchmark", "TVAE and baselines over replications");
  add_common(bm, bench_c, false);
  bm->add_option("--gen-config", bench_gen, "generator config (used when no data files are given)");
  bm->add_option("--files", bench_files, "additional replication CSVs");
  bm->add_option("--folds", bench_opt.k, "k of the stratified split whose first fold is the test set");
  bm->add_option("--methods", bench_opt.methods, "subset of tvae ols_s ols_t knn")->delimiter(',');
  bm->add_option("--knn-k", bench_opt.knn_k, "neighbours for knn")->check(CLI::PositiveNumber);
  bm->add_option("--threads", bench_opt.threads, "replications run in parallel")->check(CLI::PositiveNumber);

  std::string ablate_component = "both";
  CvOptions ablate_opt;
  auto* ab = app.add_subcommand("ablate", "paired cross-validated runs with a component on and off");
  add_common(ab, ablate_c, true);
  ab->add_option("--component", ablate_component, "db|lb|both")->check(CLI::IsMember({"db", "lb", "both"}));
  ab->add_option("--folds", ablate_opt.k, "number of stratified folds");
  ab->add_option("--folds-used", ablate_opt.folds_used, "evaluate only the first N folds (0 = all)");
  ab->add_option("--threads", ablate_opt.threads, "folds run in parallel")->check(CLI::PositiveNumber);

  std::vector<double> sweep_ratios{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  CvOptions sweep_opt;
  auto* sw = app.add_subcommand("sweep-upsample", "assignment AUPRC against the upsampling ratio");
  add_common(sw, sweep_c, true);
  sw->add_option("--ratios", sweep_ratios, "comma-separated ratios in [0, 1]")->delimiter(',');
  sw->add_option("--folds", sweep_opt.k, "number of stratified folds");
  sw->add_option("--folds-used", sweep_opt.folds_used, "evaluate only the first N folds (0 = all)");
  sw->add_option("--threads", sweep_opt.threads, "folds run in parallel")->check(CLI::PositiveNumber);

  std::string latent_model;
  std::vector<std::size_t> latent_dims{4, 5};
  bool latent_no_svg = false;
  auto* la = app.add_subcommand("latent", "posterior means per row plus a two-dimension scatter");
  add_common(la, latent_c, true);
  la->add_option("--model", latent_model, "saved model JSON")->required();
  la->add_option("--dims", latent_dims, "two 1-based latent dims for the scatter")->delimiter(',');
  la->add_flag("--no-svg", latent_no_svg, "skip the scatter");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(gen_c);
    if (*tr) return cmd_train(train_c, replay_path);
    if (*ev) return cmd_eval(eval_c, eval_model);
    if (*pr) return cmd_predict(predict_c, predict_model, predict_method, predict_train, predict_knn);
    if (*bm) return cmd_benchmark(bench_c, bench_gen, bench_files, bench_opt);
    if (*ab) return cmd_ablate(ablate_c, ablate_component, ablate_opt);
    if (*sw) return cmd_sweep(sweep_c, sweep_ratios, sweep_opt);
    if (*la) return cmd_latent(latent_c, latent_model, latent_dims, latent_no_svg);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
