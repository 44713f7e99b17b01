// One PASS/FAIL/SKIP line per acceptance criterion. Usage:
//   acceptance [criterion ...]     (no arguments runs 1..10)
// Exit status is non-zero when any requested criterion fails.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tvae/balance.hpp"
#include "tvae/data.hpp"
#include "tvae/diff/grad_check.hpp"
#include "tvae/experiments.hpp"
#include "tvae/losses/objective.hpp"
#include "tvae/train.hpp"

using namespace tvae;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict = Verdict::fail;
  std::string detail;
};

Outcome judge(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor normal_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(Shape{r, c});
  for (double& v : t.values()) v = n(rng);
  return t;
}

// ---------------------------------------------------------------------------
// 1. gradient correctness of the full objective

Outcome gradient_correctness() {
  double worst = 0.0, worst_fixed = 0.0, largest_loss = 0.0;
  std::string where;
  std::uint64_t seed = 100;
  for (OutcomeMode mode : {OutcomeMode::continuous, OutcomeMode::binary}) {
    for (MatchKind k : {MatchKind::kernel_mmd, MatchKind::linear_mmd, MatchKind::wasserstein_1d, MatchKind::gaussian_kl}) {
      ModelConfig c;
      c.input_dim = 4;
      c.latent_dim = 6;
      c.hidden = {8, 8};
      c.outcome = mode;
      c.features = {ColumnKind::continuous, ColumnKind::continuous, ColumnKind::binary, ColumnKind::continuous};
      TvaeModel model = init_model(c, ++seed);
      Batch batch;
      batch.x = normal_matrix(5, 4, ++seed);
      std::mt19937_64 rng(++seed);
      for (std::size_t i = 0; i < 5; ++i) {
        batch.x(i, 2) = static_cast<double>(rng() % 2);
        batch.w.push_back(i % 2 == 0 ? 1 : 0);
        batch.y.push_back(mode == OutcomeMode::binary ? static_cast<double>(rng() % 2)
                                                      : std::normal_distribution<double>(0, 1)(rng));
      }
      const Tensor noise = normal_matrix(5, 6, ++seed);
      LossSettings s = LossSettings::from(model.config, 5);
      s.match = MatchStrategy::of(k);
      s.beta = 1.0;
      if (k == MatchKind::kernel_mmd) {
        // median-scaled widths are a data-dependent constant; pin them at the base point
        diff::Tape t;
        s.fixed_widths = total_loss(bind(t, model, false), batch, noise, s).widths;
      }
      std::vector<Tensor> params;
      for (const Tensor* p : model.parameters()) params.push_back(*p);
      auto build = [&](diff::Tape&, const std::vector<diff::Var>& vars) {
        BoundModel b{&model, vars};
        return total_loss(b, batch, noise, s).total;
      };
      const diff::GradCheckReport r = diff::grad_check(build, params, 1e-5, 1e-4);
      worst_fixed = std::max(worst_fixed, r.max_relative_error_fixed_floor);
      largest_loss = std::max(largest_loss, std::fabs(r.loss));
      if (r.max_relative_error >= worst) {
        worst = r.max_relative_error;
        where = to_string(k) + "/" + to_string(mode);
      }
    }
  }
  return judge(worst < 1e-4, "max relative error " + fmt("%.3g", worst) + " (worst " + where +
                                "), bound 1e-4; with a fixed 1e-6 floor " + fmt("%.3g", worst_fixed) +
                                " (largest loss " + fmt("%.3g", largest_loss) + ")");
}

// ---------------------------------------------------------------------------
// 2. total-correlation chain rule on a 4-dim Gaussian

// log det through a hand-rolled Cholesky factorisation
double logdet(const std::vector<std::vector<double>>& a) {
  const std::size_t n = a.size();
  std::vector<std::vector<double>> l(n, std::vector<double>(n, 0.0));
  double acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j][j];
    for (std::size_t k = 0; k < j; ++k) d -= l[j][k] * l[j][k];
    l[j][j] = std::sqrt(d);
    acc += 2.0 * std::log(l[j][j]);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a[i][j];
      for (std::size_t k = 0; k < j; ++k) v -= l[i][k] * l[j][k];
      l[i][j] = v / l[j][j];
    }
  }
  return acc;
}

std::vector<std::vector<double>> block(const std::vector<std::vector<double>>& a, const std::vector<std::size_t>& idx) {
  std::vector<std::vector<double>> b(idx.size(), std::vector<double>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) b[i][j] = a[idx[i]][idx[j]];
  return b;
}

double gaussian_tc(const std::vector<std::vector<double>>& cov, const std::vector<std::size_t>& idx) {
  double s = 0.0;
  for (std::size_t k : idx) s += std::log(cov[k][k]);
  return 0.5 * (s - logdet(block(cov, idx)));
}

double gaussian_mi(const std::vector<std::vector<double>>& cov, std::size_t a, const std::vector<std::size_t>& b) {
  std::vector<std::size_t> joint = b;
  joint.insert(joint.begin(), a);
  return 0.5 * (std::log(cov[a][a]) + logdet(block(cov, b)) - logdet(block(cov, joint)));
}

Outcome tc_chain_rule() {
  const std::vector<std::vector<double>> cov{
      {1.0, 0.6, 0.3, 0.2}, {0.6, 1.0, 0.5, 0.1}, {0.3, 0.5, 1.0, 0.4}, {0.2, 0.1, 0.4, 1.0}};
  const std::size_t m = 5000, d = 4;
  const double s = 0.3;  // per-sample posterior sd; the means carry cov - s^2 I
  Eigen::MatrixXd inner(4, 4);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) inner(i, j) = cov[i][j] - (i == j ? s * s : 0.0);
  const Eigen::MatrixXd l = inner.llt().matrixL();
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor z(Shape{m, d}), mu(Shape{m, d}), logvar(Shape{m, d}, 2.0 * std::log(s));
  for (std::size_t i = 0; i < m; ++i) {
    Eigen::VectorXd e(4);
    for (auto& v : e) v = n(rng);
    const Eigen::VectorXd mean = l * e;
    for (std::size_t k = 0; k < d; ++k) {
      mu(i, k) = mean(static_cast<Eigen::Index>(k));
      z(i, k) = mu(i, k) + s * n(rng);
    }
  }
  const double tc_all = tc_estimate(z, mu, logvar, m, {0, 1, 2, 3});
  const double tc_rest = tc_estimate(z, mu, logvar, m, {1, 2, 3});
  const double mi = mutual_info_estimate(z, mu, logvar, m, 0, {1, 2, 3});
  const double est_gap = std::fabs(tc_all - tc_rest - mi);

  const double a_all = gaussian_tc(cov, {0, 1, 2, 3});
  const double a_gap = std::fabs(a_all - gaussian_tc(cov, {1, 2, 3}) - gaussian_mi(cov, 0, {1, 2, 3}));

  return judge(est_gap < 0.05 && a_gap < 1e-12,
               "estimator gap " + fmt("%.3g", est_gap) + " (< 0.05), closed-form gap " + fmt("%.3g", a_gap) +
                   " (< 1e-12); TC estimate " + fmt("%.4f", tc_all) + " vs closed form " + fmt("%.4f", a_all));
}

// ---------------------------------------------------------------------------
// 3. kernel MMD against a permutation null

// Squared MMD (biased, summed RBF widths) from a precomputed pooled kernel
// matrix; `in_a` marks membership of the first sample.
double mmd_from_gram(const std::vector<double>& gram, std::size_t n, const std::vector<char>& in_a, std::size_t m) {
  double aa = 0.0, bb = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &gram[i * n];
    for (std::size_t j = 0; j < n; ++j) {
      if (in_a[i] && in_a[j]) aa += row[j];
      else if (!in_a[i] && !in_a[j]) bb += row[j];
      else if (in_a[i]) ab += row[j];
    }
  }
  const double mm = static_cast<double>(m), nb = static_cast<double>(n - m);
  return std::max(0.0, aa / (mm * mm) + bb / (nb * nb) - 2.0 * ab / (mm * nb));
}

Outcome mmd_permutation() {
  const std::size_t m = 500, shuffles = 200, trials = 20;
  int null_below = 0, shift_above = 0;
  double max_route_gap = 0.0;
  for (int shifted = 0; shifted < 2; ++shifted) {
    for (std::size_t trial = 0; trial < trials; ++trial) {
      std::mt19937_64 rng(7000 + 100 * static_cast<std::uint64_t>(shifted) + trial);
      std::normal_distribution<double> g(0.0, 1.0);
      std::vector<double> a(m), b(m);
      for (double& v : a) v = g(rng);
      for (double& v : b) v = g(rng) + (shifted ? 1.0 : 0.0);
      const MatchStrategy strategy = MatchStrategy::of(MatchKind::kernel_mmd);
      const double observed = match_penalty(strategy, a, b);

      // widths depend only on the pooled sample, so they are shared by every permutation
      const std::vector<double> widths = resolve_bandwidths(strategy, a, b);
      std::vector<double> pooled = a;
      pooled.insert(pooled.end(), b.begin(), b.end());
      const std::size_t n = pooled.size();
      std::vector<double> gram(n * n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double dd = (pooled[i] - pooled[j]) * (pooled[i] - pooled[j]);
          for (double w : widths) gram[i * n + j] += std::exp(-dd / (2.0 * w * w));
        }
      std::vector<char> in_a(n, 0);
      std::fill(in_a.begin(), in_a.begin() + static_cast<std::ptrdiff_t>(m), 1);
      max_route_gap = std::max(max_route_gap, std::fabs(mmd_from_gram(gram, n, in_a, m) - observed));

      std::vector<double> null(shuffles);
      std::vector<std::size_t> idx(n);
      for (std::size_t s = 0; s < shuffles; ++s) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        std::fill(in_a.begin(), in_a.end(), 0);
        for (std::size_t k = 0; k < m; ++k) in_a[idx[k]] = 1;
        null[s] = mmd_from_gram(gram, n, in_a, m);
      }
      std::sort(null.begin(), null.end());
      const double q95 = null[static_cast<std::size_t>(std::ceil(0.95 * shuffles)) - 1];
      if (shifted) shift_above += observed > q95;
      else null_below += observed < q95;
    }
  }
  return judge(null_below >= 18 && shift_above >= 19 && max_route_gap < 1e-9,
               "same-distribution below null q95 in " + std::to_string(null_below) + "/20 (need 18), shifted above in " +
                   std::to_string(shift_above) + "/20 (need 19); gram route vs library " + fmt("%.2g", max_route_gap));
}

// ---------------------------------------------------------------------------
// 4. metric oracles

double auroc_pairs(const std::vector<double>& s, const std::vector<int>& l) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (l[i] == 1 && l[j] == 0) {
        den += 1.0;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / den;
}

// walk a descending stable ranking; equal scores keep their input order
double ap_rank_walk(const std::vector<double>& s, const std::vector<int>& l) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // insertion sort keeps this independent of the library's stable_sort
  for (std::size_t i = 1; i < order.size(); ++i)
    for (std::size_t j = i; j > 0 && s[order[j]] > s[order[j - 1]]; --j) std::swap(order[j], order[j - 1]);
  double acc = 0.0;
  int hits = 0, seen = 0;
  for (std::size_t k : order) {
    ++seen;
    if (l[k]) acc += static_cast<double>(++hits) / seen;
  }
  return acc / hits;
}

Outcome metric_oracles() {
  std::mt19937_64 rng(44);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 49;
    std::vector<double> s(n);
    std::vector<int> l(n);
    const bool coarse = trial % 2 == 0;  // coarse scores force ties
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? static_cast<double>(rng() % 5) : std::uniform_real_distribution<double>(0, 1)(rng);
      l[i] = static_cast<int>(rng() % 2);
    }
    l[0] = 1;
    l[1] = 0;
    worst = std::max({worst, std::fabs(auroc(s, l) - auroc_pairs(s, l)), std::fabs(auprc(s, l) - ap_rank_walk(s, l))});
  }
  const std::vector<double> y1{1.0, 3.0}, y0{0.0, 0.0}, m1{2.0, 2.0}, m0{0.0, 0.0};
  const double hand = rpehe(y1, y0, m1, m0);
  const std::vector<double> y1b{0.5, 2.0, -1.0}, y0b{0.0, 1.0, 1.0}, m1b{1.0, 1.0, 1.0}, m0b{0.0, 0.0, 0.0};
  // effects (0.5, 1, -2) against 1: squared errors 0.25, 0, 9
  const double hand_b = rpehe(y1b, y0b, m1b, m0b);
  return judge(worst <= 1e-12 && hand == 1.0 && std::fabs(hand_b - std::sqrt(9.25 / 3.0)) < 1e-15,
               "max oracle gap " + fmt("%.2g", worst) + " over 200 instances; rpehe([1,3] vs [2,2]) = " +
                   fmt("%.17g", hand));
}

// ---------------------------------------------------------------------------
// 5. synthetic benchmark ordering

std::size_t threads() {
  if (const char* t = std::getenv("TVAE_ACCEPTANCE_THREADS")) return std::max(1, std::atoi(t));
  return default_threads();
}

Outcome benchmark_ordering() {
  GeneratorConfig g;  // n = 747, p = 25, continuous
  g.replications = 100;
  TrainConfig cfg;  // defaults, kernel MMD
  BenchmarkOptions opt;
  opt.methods = {"tvae", "ols_t", "knn"};
  opt.threads = threads();
  const BenchmarkReport r = run_benchmark(g, cfg, opt);
  const Summary tv = r.summary("tvae", "rpehe"), ols = r.summary("ols_t", "rpehe"), knn = r.summary("knn", "rpehe");
  auto show = [](const char* name, const Summary& s) {
    return std::string(name) + " " + fmt("%.3f", s.mean) + " +- " + fmt("%.3f", s.stderr_) + " (n=" +
           std::to_string(s.count) + ")";
  };
  const bool complete = r.failures.empty() && tv.count == 100;
  return judge(complete && tv.mean < ols.mean && tv.mean < knn.mean,
               "rPEHE " + show("tvae", tv) + ", " + show("ols_t", ols) + ", " + show("knn", knn) + "; failures " +
                   std::to_string(r.failures.size()));
}

// ---------------------------------------------------------------------------
// 6. original replication files (optional)

Outcome ihdp_files() {
  const char* dir = std::getenv("TVAE_IHDP_DIR");
  if (!dir) return {Verdict::skip, "TVAE_IHDP_DIR not set"};
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.size() > 100) files.resize(100);
  if (files.empty()) return {Verdict::skip, std::string("no .csv files in ") + dir};
  std::vector<std::function<Dataset()>> reps;
  for (const std::string& f : files) reps.push_back([f] { return parse_ihdp_csv(detail::read_file(f)); });
  BenchmarkOptions opt;
  opt.methods = {"tvae"};
  opt.threads = threads();
  const Summary s = run_benchmark(reps, TrainConfig(), opt).summary("tvae", "rpehe");
  return judge(s.mean <= 1.5, "tvae rPEHE " + fmt("%.3f", s.mean) + " +- " + fmt("%.3f", s.stderr_) + " over " +
                                  std::to_string(s.count) + " files (bound 1.5)");
}

// ---------------------------------------------------------------------------
// 7 and 8. balancing ablations on a rare-treatment binary dataset

struct AblationArms {
  std::vector<double> lb_on, lb_off;  // mean assignment AUPRC per seed
  std::vector<double> mmd_on, mmd_off;  // mean free-dim match penalty per seed
  std::vector<double> corr_on, corr_off;  // mean |corr(z1, zj)| over free dims per seed
};

// At the default prior weight the free coordinates collapse onto the prior
// (the generator's covariates are independent with unit variance, which a
// unit-variance Gaussian decoder explains best with no latent signal), so
// decoded fakes carry no covariate information. A lighter prior keeps the
// free coordinates informative; 40 epochs keeps both criteria inside budget.
TrainConfig ablation_config() {
  TrainConfig c;
  c.outcome = OutcomeMode::binary;
  c.epochs = 40;
  c.kl_weight = 0.1;
  return c;
}

GeneratorConfig ablation_generator(std::uint64_t seed) {
  GeneratorConfig g;
  g.n = 5000;
  g.treated_fraction = 0.02;
  g.outcome = OutcomeMode::binary;
  g.seed = seed;
  return g;
}

void diagnostics_means(const CrossValidation& cv, double& mmd, double& corr) {
  double sm = 0.0, sc = 0.0;
  std::size_t nm = 0, nc = 0;
  for (const FoldRun& r : cv.runs) {
    const LatentDiagnostics& d = *r.diagnostics;
    for (const LatentDimRecord& rec : d.dims)
      if (rec.dim > LatentLayout::kFirstFree) {  // records are 1-based
        sm += rec.mmd;
        ++nm;
      }
    for (std::size_t j = LatentLayout::kFirstFree; j < d.corr.size(); ++j) {
      sc += d.corr[0][j];
      ++nc;
    }
  }
  mmd = sm / static_cast<double>(nm);
  corr = sc / static_cast<double>(nc);
}

const AblationArms& ablation_arms(bool need_db_off) {
  static std::optional<AblationArms> arms;
  static bool have_db_off = false;
  if (arms && (have_db_off || !need_db_off)) return *arms;
  AblationArms a;
  CvOptions opt;
  opt.k = 5;
  opt.diagnostics = true;
  opt.threads = threads();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset d = generate_replication(ablation_generator(seed), 0);
    TrainConfig c = ablation_config();
    c.seed = seed;
    const AblationReport lb = ablate(d, c, AblationComponent::lb, opt);
    a.lb_on.push_back(summarize(lb.on.values("auprc_assignment")).mean);
    a.lb_off.push_back(summarize(lb.off.values("auprc_assignment")).mean);
    double m = 0.0, r = 0.0;
    diagnostics_means(lb.on, m, r);
    a.mmd_on.push_back(m);
    a.corr_on.push_back(r);
    if (need_db_off) {
      const CrossValidation off = cross_validate(d, ablated(c, AblationComponent::db), opt);
      if (off.fold_fingerprint != lb.on.fold_fingerprint) throw ContractError("db arms saw different folds");
      diagnostics_means(off, m, r);
      a.mmd_off.push_back(m);
      a.corr_off.push_back(r);
    }
    std::printf("  seed %llu: auprc lb-on %.4f lb-off %.4f", static_cast<unsigned long long>(seed), a.lb_on.back(),
                a.lb_off.back());
    if (need_db_off)
      std::printf(" | mmd db-on %.3g db-off %.3g | corr db-on %.3g db-off %.3g", a.mmd_on.back(), a.mmd_off.back(),
                  a.corr_on.back(), a.corr_off.back());
    std::printf("\n");
    std::fflush(stdout);
  }
  arms = std::move(a);
  have_db_off = need_db_off;
  return *arms;
}

Outcome label_balancing() {
  const AblationArms& a = ablation_arms(false);
  int wins = 0;
  double on = 0.0, off = 0.0;
  for (std::size_t s = 0; s < a.lb_on.size(); ++s) {
    wins += a.lb_on[s] > a.lb_off[s];
    on += a.lb_on[s] / 5.0;
    off += a.lb_off[s] / 5.0;
  }
  return judge(wins >= 4, "r=0.8 beats r=0 in " + std::to_string(wins) + "/5 seeds (need 4); mean AUPRC " +
                              fmt("%.4f", on) + " vs " + fmt("%.4f", off));
}

Outcome distribution_balancing() {
  const AblationArms& a = ablation_arms(true);
  int wins = 0, mmd_wins = 0, corr_wins = 0;
  for (std::size_t s = 0; s < a.mmd_on.size(); ++s) {
    const bool m = a.mmd_on[s] < a.mmd_off[s], c = a.corr_on[s] < a.corr_off[s];
    mmd_wins += m;
    corr_wins += c;
    wins += m && c;
  }
  return judge(wins >= 4, "db-on lower on both diagnostics in " + std::to_string(wins) + "/5 seeds (need 4); match " +
                              std::to_string(mmd_wins) + "/5, correlation " + std::to_string(corr_wins) + "/5");
}

// ---------------------------------------------------------------------------
// 9. balancing arithmetic

Outcome balancing_arithmetic() {
  const bool example = plan_upsample(608, 139, 0.8).n_fake == 347;
  std::mt19937_64 rng(909);
  int exact = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t nc = 2 + rng() % 400, nt = 1 + rng() % 200;
    const std::size_t k = rng() % 1001;  // r = k / 1000
    const double r = static_cast<double>(k) / 1000.0;
    // round-half-up of k * nc / 1000 in integers
    const std::size_t target = (2 * k * nc + 1000) / 2000;
    const std::size_t fakes = target > nt ? target - nt : 0;
    const std::size_t want_treated = nt + fakes, want_rows = nc + nt + fakes;

    Dataset d;
    d.x = Tensor(Shape{nc + nt, 2});
    d.features = {ColumnKind::continuous, ColumnKind::binary};
    for (std::size_t i = 0; i < nc + nt; ++i) {
      d.x(i, 0) = static_cast<double>(i % 7);
      d.x(i, 1) = static_cast<double>(i % 2);
      d.w.push_back(i < nc ? 0 : 1);
      d.y.push_back(0.0);
    }
    d.synthetic.assign(nc + nt, 0);
    TvaeModel m = init_model(2, 4, {4}, 1);
    m.features = d.features;
    std::vector<std::size_t> treated(nt);
    std::iota(treated.begin(), treated.end(), nc);
    const Dataset merged = merge(d, generate_fakes(m, d.subset(treated), plan_upsample(d, r), 3));
    const double got = static_cast<double>(merged.treated_count()) / static_cast<double>(merged.rows());
    const double want = static_cast<double>(want_treated) / static_cast<double>(want_rows);
    exact += merged.treated_count() == want_treated && merged.rows() == want_rows && got == want;
  }
  return judge(example && exact == 50, std::string("plan_upsample(608, 139, 0.8) ") + (example ? "= 347" : "!= 347") +
                                           "; augmented treated fraction exact in " + std::to_string(exact) + "/50");
}

// ---------------------------------------------------------------------------
// 10. manifest replay

Outcome manifest_replay() {
  std::mt19937_64 rng(1010);
  int identical = 0;
  std::string configs;
  for (int trial = 0; trial < 3; ++trial) {
    TrainConfig c;
    c.epochs = 2 + rng() % 4;
    c.batch_size = 32 + rng() % 97;
    c.adam.lr = std::pow(10.0, -3.5 + static_cast<double>(rng() % 150) / 100.0);
    c.beta = static_cast<double>(rng() % 4) / 10.0;
    c.gamma = 0.5 + static_cast<double>(rng() % 3);
    c.latent_dim = 4 + rng() % 5;
    c.hidden = {static_cast<std::size_t>(8 + rng() % 24)};
    const MatchKind kinds[] = {MatchKind::kernel_mmd, MatchKind::linear_mmd, MatchKind::wasserstein_1d,
                               MatchKind::gaussian_kl};
    c.match = MatchStrategy::of(kinds[rng() % 4]);
    c.upsample_ratio = static_cast<double>(rng() % 11) / 10.0;
    c.warmup_epochs = rng() % 2;
    c.fake_decoding = rng() % 2 ? FakeDecoding::sample : FakeDecoding::mean;
    c.outcome = rng() % 2 ? OutcomeMode::binary : OutcomeMode::continuous;
    c.seed = rng();
    GeneratorConfig g;
    g.n = 250 + rng() % 150;
    g.p = 10;
    g.outcome = c.outcome;
    g.seed = rng();
    const Dataset d = generate_replication(g, 0);
    const TrainResult first = train_and_report(d, c);
    const RunManifest stored = RunManifest::from_json(nlohmann::json::parse(first.manifest.to_json().dump()));
    identical += replay(stored, d).identical;
    configs += (trial ? ", " : "") + to_string(c.match.kind) + "/" + to_string(c.outcome);
  }
  return judge(identical == 3, "bit-identical metrics in " + std::to_string(identical) + "/3 replays (" + configs + ")");
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"gradient correctness", gradient_correctness}},
      {2, {"total-correlation chain rule", tc_chain_rule}},
      {3, {"kernel MMD permutation behaviour", mmd_permutation}},
      {4, {"metric oracles", metric_oracles}},
      {5, {"synthetic benchmark ordering", benchmark_ordering}},
      {6, {"original IHDP replications", ihdp_files}},
      {7, {"label-balancing ablation", label_balancing}},
      {8, {"distribution-balancing ablation", distribution_balancing}},
      {9, {"balancing arithmetic", balancing_arithmetic}},
      {10, {"manifest replay", manifest_replay}},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  if (wanted.empty())
    for (const auto& [k, v] : criteria) wanted.push_back(k);

  // ctest hides the output of passing tests, so lines can also be appended to a file.
  std::FILE* log = nullptr;
  if (const char* path = std::getenv("TVAE_ACCEPTANCE_LOG"); path && *path) log = std::fopen(path, "a");

  int failures = 0;
  for (int k : wanted) {
    auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", k);
      return 2;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {Verdict::fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
    std::printf("[%s] criterion %d (%s): %s [%.1fs]\n", tag, k, it->second.first, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (log) {
      std::fprintf(log, "[%s] criterion %d (%s): %s [%.1fs]\n", tag, k, it->second.first, o.detail.c_str(), secs);
      std::fflush(log);
    }
    failures += o.verdict == Verdict::fail;
  }
  if (log) std::fclose(log);
  return failures ? 1 : 0;
}
