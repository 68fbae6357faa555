#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "numvae/checkpoint.hpp"
#include "numvae/errors.hpp"
#include "numvae/probes.hpp"

using namespace numvae;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("numvae_probes_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

// Scene labels plus noise latents; callers overwrite individual columns
// with planted signals.
ProbeDataset noise_probe(int64_t n, int64_t d, uint64_t seed,
                         bool independent_area = false,
                         bool include_zero = true) {
  Rng rng(seed);
  ProbeDataset p;
  p.latents.resize(n, d);
  p.numerosity.resize(static_cast<size_t>(n));
  p.cumulative_area.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int N =
        static_cast<int>(rng.uniform_int(include_zero ? 0 : 1, 4));
    p.numerosity[static_cast<size_t>(i)] = N;
    const double per_object =
        std::exp(rng.uniform(std::log(50.0), std::log(800.0)));
    if (independent_area)
      p.cumulative_area[static_cast<size_t>(i)] = N == 0 ? 0.0 : per_object;
    else
      p.cumulative_area[static_cast<size_t>(i)] = N * per_object;
    for (int64_t k = 0; k < d; ++k) p.latents(i, k) = rng.normal();
  }
  return p;
}

// z-scored copy of a label-derived column over the N >= 1 rows; rows with
// N = 0 get independent noise so they cannot leak into the fit.
void plant_column(ProbeDataset& p, int64_t col, bool use_numerosity,
                  double noise_scale, uint64_t seed) {
  Rng rng(seed);
  std::vector<int64_t> rows;
  for (int64_t i = 0; i < p.size(); ++i)
    if (p.numerosity[static_cast<size_t>(i)] >= 1) rows.push_back(i);
  Eigen::VectorXd v(static_cast<int64_t>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    const int64_t i = rows[r];
    v(static_cast<int64_t>(r)) =
        use_numerosity
            ? std::log(static_cast<double>(p.numerosity[static_cast<size_t>(i)]))
            : std::log(p.cumulative_area[static_cast<size_t>(i)]);
  }
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().mean());
  for (size_t r = 0; r < rows.size(); ++r)
    p.latents(rows[r], col) =
        (v(static_cast<int64_t>(r)) - mean) / sd + noise_scale * rng.normal();
  for (int64_t i = 0; i < p.size(); ++i)
    if (p.numerosity[static_cast<size_t>(i)] == 0)
      p.latents(i, col) = rng.normal();
}

// Independent normal-equations solver (Cramer's rule on the 2x2 system)
// with its own standardization; the reference for fit_dimension.
RegressionFit cramer_fit(const ProbeDataset& p, int dim) {
  std::vector<double> y, x1, x2;
  for (int64_t i = 0; i < p.size(); ++i) {
    if (p.numerosity[static_cast<size_t>(i)] < 1) continue;
    y.push_back(p.latents(i, dim));
    x1.push_back(std::log(static_cast<double>(p.numerosity[static_cast<size_t>(i)])));
    x2.push_back(std::log(p.cumulative_area[static_cast<size_t>(i)]));
  }
  const auto n = static_cast<double>(y.size());
  auto standardize = [&](std::vector<double>& v) {
    double m = 0.0;
    for (double t : v) m += t;
    m /= n;
    double var = 0.0;
    for (double t : v) var += (t - m) * (t - m);
    var /= n;
    for (double& t : v) t = (t - m) / std::sqrt(var);
  };
  standardize(y);
  standardize(x1);
  standardize(x2);
  double s11 = 0, s12 = 0, s22 = 0, s1y = 0, s2y = 0, syy = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    s11 += x1[i] * x1[i];
    s12 += x1[i] * x2[i];
    s22 += x2[i] * x2[i];
    s1y += x1[i] * y[i];
    s2y += x2[i] * y[i];
    syy += y[i] * y[i];
  }
  const double det = s11 * s22 - s12 * s12;
  RegressionFit f;
  f.dim_index = dim;
  f.beta1 = (s1y * s22 - s2y * s12) / det;
  f.beta2 = (s2y * s11 - s1y * s12) / det;
  double ss_res = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    const double pred = f.beta1 * x1[i] + f.beta2 * x2[i];
    ss_res += (y[i] - pred) * (y[i] - pred);
  }
  f.r_squared = 1.0 - ss_res / syy;
  f.n_samples = static_cast<int64_t>(y.size());
  return f;
}

// PR-curve AP: walk the ranking, integrate precision over recall steps.
// Same quantity as average_precision but phrased as an explicit curve.
double ap_by_pr_curve(std::vector<double> scores, std::vector<uint8_t> pos) {
  std::vector<int64_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    return a < b;
  });
  int64_t total = 0;
  for (auto v : pos) total += v;
  double ap = 0.0;
  int64_t tp = 0;
  for (size_t r = 0; r < order.size(); ++r) {
    if (!pos[static_cast<size_t>(order[r])]) continue;
    ++tp;
    const double precision = static_cast<double>(tp) / static_cast<double>(r + 1);
    const double recall_step = 1.0 / static_cast<double>(total);
    ap += precision * recall_step;
  }
  return ap;
}

ArchitectureConfig tiny64_arch() {
  ArchitectureConfig arch;
  arch.preset = "custom";
  arch.input_h = arch.input_w = 64;
  arch.input_c = 3;
  arch.encoder_layers = {{4, 4, 1}, {8, 4, 2}, {8, 4, 2}, {8, 4, 2}};
  arch.decoder_layers = {{8, 3, 1}, {8, 3, 2}, {8, 3, 2}, {4, 3, 2}};
  arch.latent_dim = 8;
  arch.validate();
  return arch;
}

}  // namespace

// ---------------------------------------------------------------------------
// fit_dimension
// ---------------------------------------------------------------------------

TEST_CASE("fit matches the normal-equations oracle to 1e-8") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    auto p = noise_probe(300, 6, seed);
    plant_column(p, 1, true, 0.5, seed * 7 + 1);   // numerosity-ish signal
    plant_column(p, 4, false, 0.8, seed * 7 + 2);  // diluted area signal
    for (int d = 0; d < 6; ++d) {
      const auto fit = fit_dimension(p, d);
      const auto oracle = cramer_fit(p, d);
      CHECK(fit.beta1 == doctest::Approx(oracle.beta1).epsilon(1e-8));
      CHECK(fit.beta2 == doctest::Approx(oracle.beta2).epsilon(1e-8));
      CHECK(fit.r_squared ==
            doctest::Approx(oracle.r_squared).epsilon(1e-8));
      CHECK(fit.n_samples == oracle.n_samples);
      CHECK(fit.r_squared >= 0.0);
      CHECK(fit.r_squared <= 1.0);
    }
  }
}

TEST_CASE("planted log N dimension fits with beta1 = 1") {
  auto p = noise_probe(4000, 4, 3, /*independent_area=*/true);
  plant_column(p, 2, true, 0.0, 11);
  const auto fit = fit_dimension(p, 2);
  CHECK(fit.beta1 == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::fabs(fit.beta2) < 0.01);
  CHECK(fit.r_squared > 0.99);
}

TEST_CASE("planted log A dimension fits with beta2 = 1") {
  auto p = noise_probe(4000, 4, 5, /*independent_area=*/true);
  plant_column(p, 0, false, 0.0, 13);
  const auto fit = fit_dimension(p, 0);
  CHECK(std::fabs(fit.beta1) < 0.01);
  CHECK(fit.beta2 == doctest::Approx(1.0).epsilon(0.02));
  CHECK(fit.r_squared > 0.99);
}

TEST_CASE("noise dimensions explain almost nothing") {
  auto p = noise_probe(10000, 3, 17);
  const auto fit = fit_dimension(p, 1);
  CHECK(fit.r_squared < 0.01);
}

TEST_CASE("degenerate fits are rejected") {
  // fewer than 3 usable rows
  auto p = noise_probe(10, 2, 5);
  for (size_t i = 0; i < p.numerosity.size(); ++i) {
    p.numerosity[i] = 0;
    p.cumulative_area[i] = 0.0;
  }
  p.numerosity[0] = 2;
  p.cumulative_area[0] = 100.0;
  CHECK_THROWS_AS(fit_dimension(p, 0), DegenerateInputError);

  // constant latent dimension
  auto q = noise_probe(50, 2, 6, false, false);
  q.latents.col(1).setConstant(3.25);
  CHECK_THROWS_AS(fit_dimension(q, 1), DegenerateInputError);

  // no area ground truth
  auto r = noise_probe(50, 2, 7);
  r.area_available = false;
  CHECK_THROWS_AS(fit_dimension(r, 0), ConfigError);

  // out-of-range dimension
  CHECK_THROWS_AS(fit_dimension(q, 9), ShapeError);
}

TEST_CASE("classification is invariant to affine latent maps") {
  auto p = noise_probe(800, 3, 23);
  plant_column(p, 0, true, 0.4, 29);
  const auto before = fit_dimension(p, 0);
  p.latents.col(0) = (p.latents.col(0).array() * -3.7 + 11.0).matrix();
  const auto after = fit_dimension(p, 0);
  CHECK(std::fabs(after.beta1) ==
        doctest::Approx(std::fabs(before.beta1)).epsilon(1e-9));
  CHECK(std::fabs(after.beta2) ==
        doctest::Approx(std::fabs(before.beta2)).epsilon(1e-9));
  CHECK(after.r_squared == doctest::Approx(before.r_squared).epsilon(1e-9));
  DetectorCriteria crit;
  CHECK(classify_detector(before, crit).cls == classify_detector(after, crit).cls);
}

// ---------------------------------------------------------------------------
// classify_detector
// ---------------------------------------------------------------------------

TEST_CASE("detector classification rules") {
  DetectorCriteria strict{0.10, 0.1};
  DetectorCriteria relaxed{0.05, 0.1};

  RegressionFit f;
  f.r_squared = 0.2;
  f.beta1 = 0.5;
  f.beta2 = 0.05;
  CHECK(classify_detector(f, strict).cls == DetectorClass::kNumerosity);
  CHECK(!classify_detector(f, strict).ambiguous);

  f.r_squared = 0.04;
  CHECK(classify_detector(f, strict).cls == DetectorClass::kNeither);
  CHECK(classify_detector(f, relaxed).cls == DetectorClass::kNeither);

  // the relaxed 5%-variance threshold admits weaker detectors
  f.r_squared = 0.055;
  f.beta1 = 0.22;
  f.beta2 = 0.05;
  CHECK(classify_detector(f, strict).cls == DetectorClass::kNeither);
  CHECK(classify_detector(f, relaxed).cls == DetectorClass::kNumerosity);

  // area detector: complementary numerosity coefficient small
  f.r_squared = 0.3;
  f.beta1 = 0.02;
  f.beta2 = -0.5;
  CHECK(classify_detector(f, strict).cls == DetectorClass::kArea);

  // both coefficients below the complementary bound: larger wins, flagged
  f.r_squared = 0.12;
  f.beta1 = 0.09;
  f.beta2 = 0.03;
  auto d = classify_detector(f, strict);
  CHECK(d.cls == DetectorClass::kNumerosity);
  CHECK(d.ambiguous);
  f.beta1 = 0.02;
  f.beta2 = -0.08;
  d = classify_detector(f, strict);
  CHECK(d.cls == DetectorClass::kArea);
  CHECK(d.ambiguous);
}

// ---------------------------------------------------------------------------
// probe_all_dimensions
// ---------------------------------------------------------------------------

TEST_CASE("planted detectors are recovered exactly, 100 trials") {
  int perfect = 0;
  for (uint64_t trial = 0; trial < 100; ++trial) {
    auto p = noise_probe(400, 8, 1000 + trial);
    plant_column(p, 2, true, 0.1, 2000 + trial);   // SNR 100
    plant_column(p, 5, false, 0.1, 3000 + trial);
    const auto report = probe_all_dimensions(p, DetectorCriteria{0.10, 0.1});
    if (report.numerosity_detectors == std::vector<int>{2} &&
        report.area_detectors == std::vector<int>{5})
      ++perfect;
  }
  CHECK(perfect == 100);
}

TEST_CASE("all-noise latents yield empty detector lists") {
  const auto p = noise_probe(2000, 6, 77);
  const auto report = probe_all_dimensions(p, DetectorCriteria{0.10, 0.1});
  CHECK(report.numerosity_detectors.empty());
  CHECK(report.area_detectors.empty());
  CHECK(report.fits.size() == 6);
  CHECK(report.failed_dims.empty());
}

TEST_CASE("opposite-sign area pairs are reported") {
  auto p = noise_probe(600, 5, 81);
  plant_column(p, 1, false, 0.1, 91);
  plant_column(p, 3, false, 0.1, 92);
  p.latents.col(3) *= -1.0;  // same area signal, flipped sign
  const auto report = probe_all_dimensions(p, DetectorCriteria{0.10, 0.1});
  REQUIRE(report.area_detectors == std::vector<int>{1, 3});
  REQUIRE(report.opposite_sign_area_pairs.size() == 1);
  CHECK(report.opposite_sign_area_pairs[0] == std::pair<int, int>{1, 3});
}

TEST_CASE("per-dimension failures are recorded, not fatal") {
  auto p = noise_probe(500, 4, 83);
  p.latents.col(2).setConstant(0.0);
  const auto report = probe_all_dimensions(p, DetectorCriteria{0.10, 0.1});
  CHECK(report.fits.size() == 3);
  REQUIRE(report.failed_dims.size() == 1);
  CHECK(report.failed_dims[0].first == 2);
}

// ---------------------------------------------------------------------------
// average precision
// ---------------------------------------------------------------------------

TEST_CASE("AP hand example: positives at ranks 1 and 3") {
  const std::vector<double> scores{0.9, 0.5, 0.3};
  const std::vector<uint8_t> pos{1, 0, 1};
  CHECK(average_precision(scores, pos) ==
        doctest::Approx((1.0 / 1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("AP agrees with the PR-curve enumeration on random cases") {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 6;
    std::vector<double> scores(n);
    std::vector<uint8_t> pos(n);
    bool any = false;
    for (int i = 0; i < n; ++i) {
      scores[static_cast<size_t>(i)] = rng.uniform();
      pos[static_cast<size_t>(i)] = rng.bernoulli(0.4) ? 1 : 0;
      any = any || pos[static_cast<size_t>(i)];
    }
    if (!any) pos[static_cast<size_t>(rng.uniform_int(0, n - 1))] = 1;
    CHECK(average_precision(scores, pos) ==
          doctest::Approx(ap_by_pr_curve(scores, pos)).epsilon(1e-12));
  }
}

TEST_CASE("AP with ties is settled by sample index") {
  // equal scores: ranking follows the index, so the positive at index 0
  // lands at rank 1
  CHECK(average_precision({0.5, 0.5}, {1, 0}) == doctest::Approx(1.0));
  CHECK(average_precision({0.5, 0.5}, {0, 1}) == doctest::Approx(0.5));
}

TEST_CASE("AP is invariant to sample permutation for distinct scores") {
  Rng rng(19);
  std::vector<double> scores(64);
  std::vector<uint8_t> pos(64);
  for (size_t i = 0; i < scores.size(); ++i) {
    scores[i] = rng.uniform() + static_cast<double>(i) * 1e-9;  // distinct
    pos[i] = rng.bernoulli(0.3) ? 1 : 0;
  }
  pos[0] = 1;
  const double base = average_precision(scores, pos);
  for (int shuffle = 0; shuffle < 10; ++shuffle) {
    std::vector<size_t> perm(scores.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (size_t i = perm.size() - 1; i > 0; --i)
      std::swap(perm[i],
                perm[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)))]);
    std::vector<double> s2(scores.size());
    std::vector<uint8_t> p2(scores.size());
    for (size_t i = 0; i < perm.size(); ++i) {
      s2[i] = scores[perm[i]];
      p2[i] = pos[perm[i]];
    }
    CHECK(average_precision(s2, p2) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("random scores give AP near class prevalence") {
  Rng rng(31);
  const int64_t n = 10000;
  std::vector<double> scores(static_cast<size_t>(n));
  std::vector<uint8_t> pos(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    scores[static_cast<size_t>(i)] = rng.uniform();
    pos[static_cast<size_t>(i)] = rng.bernoulli(0.2) ? 1 : 0;
  }
  CHECK(average_precision(scores, pos) == doctest::Approx(0.2).epsilon(0.1));
}

TEST_CASE("AP without positives is undefined") {
  CHECK_THROWS_AS(average_precision({0.1, 0.2}, {0, 0}), DegenerateInputError);
}

// ---------------------------------------------------------------------------
// readout
// ---------------------------------------------------------------------------

TEST_CASE("readout overfits a small sample set") {
  Rng rng(41);
  const int64_t n = 20, d = 6;
  Eigen::MatrixXd latents(n, d);
  std::vector<int> labels(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t k = 0; k < d; ++k) latents(i, k) = rng.normal();
    labels[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(0, 4));
  }
  ReadoutConfig cfg;
  cfg.epochs = 500;
  const auto model = train_readout(latents, labels, cfg);
  const auto pred = model.predict(latents);
  int correct = 0;
  for (int64_t i = 0; i < n; ++i)
    if (pred(i) == labels[static_cast<size_t>(i)]) ++correct;
  CHECK(correct == n);

  const auto eval = evaluate_readout(model, latents, labels);
  CHECK(eval.mean_ap > 0.99);
}

TEST_CASE("degenerate labels collapse to a constant prediction") {
  Rng rng(43);
  Eigen::MatrixXd latents(30, 4);
  for (int64_t i = 0; i < latents.size(); ++i)
    latents.data()[i] = rng.normal();
  const std::vector<int> labels(30, 3);
  ReadoutConfig cfg;
  cfg.epochs = 200;
  const auto model = train_readout(latents, labels, cfg);
  const auto pred = model.predict(latents);
  for (int64_t i = 0; i < pred.size(); ++i) CHECK(pred(i) == 3);

  // AP defined only for the one present class; the others carry warnings
  const auto eval = evaluate_readout(model, latents, labels);
  CHECK(eval.defined[3]);
  CHECK(eval.per_class_ap[3] == doctest::Approx(1.0));
  CHECK(eval.warnings.size() == 4);
}

TEST_CASE("readout rejects shape mismatches") {
  Eigen::MatrixXd latents(10, 4);
  latents.setRandom();
  std::vector<int> labels(9, 0);
  CHECK_THROWS_AS(train_readout(latents, labels, ReadoutConfig{}), ShapeError);

  labels.assign(10, 0);
  labels[0] = 7;
  CHECK_THROWS_AS(train_readout(latents, labels, ReadoutConfig{}), DataError);

  labels[0] = 0;
  ReadoutConfig cfg;
  cfg.epochs = 5;
  const auto model = train_readout(latents, labels, cfg);
  Eigen::MatrixXd wrong(10, 5);
  wrong.setRandom();
  CHECK_THROWS_AS(model.scores(wrong), ShapeError);
}

TEST_CASE("readout training is seeded and the artifact round-trips") {
  Rng rng(47);
  Eigen::MatrixXd latents(40, 5);
  std::vector<int> labels(40);
  for (int64_t i = 0; i < 40; ++i) {
    for (int64_t k = 0; k < 5; ++k) latents(i, k) = rng.normal();
    labels[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(0, 4));
  }
  ReadoutConfig cfg;
  cfg.epochs = 50;
  const auto m1 = train_readout(latents, labels, cfg);
  const auto m2 = train_readout(latents, labels, cfg);
  CHECK((m1.scores(latents) - m2.scores(latents)).cwiseAbs().maxCoeff() == 0.0);

  cfg.seed = 2;
  const auto m3 = train_readout(latents, labels, cfg);
  CHECK((m1.scores(latents) - m3.scores(latents)).cwiseAbs().maxCoeff() > 0.0);

  TempDir dir;
  const auto path = (dir.path / "readout.nvtf").string();
  save_readout(path, m1);
  const auto loaded = load_readout(path);
  CHECK(loaded.latent_dim == m1.latent_dim);
  CHECK((loaded.scores(latents) - m1.scores(latents)).cwiseAbs().maxCoeff() ==
        0.0);
}

// ---------------------------------------------------------------------------
// response profiles
// ---------------------------------------------------------------------------

TEST_CASE("profiles separate numerosity signal from area signal") {
  auto p = noise_probe(6000, 3, 53, /*independent_area=*/true);
  plant_column(p, 0, true, 0.05, 61);   // numerosity-coding dim
  plant_column(p, 1, false, 0.05, 62);  // area-coding dim

  const auto num_prof = response_profile(p, 0, 5);
  // mean z must vary strongly across N...
  std::vector<double> row_means;
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    int64_t cnt = 0;
    for (const auto& c : num_prof.cells[static_cast<size_t>(r)]) {
      if (c.count == 0) continue;
      s += c.mean_z * static_cast<double>(c.count);
      cnt += c.count;
    }
    row_means.push_back(s / static_cast<double>(cnt));
  }
  CHECK(row_means[3] - row_means[0] > 1.0);
  // ...but stay near-constant across area bins at fixed N
  for (int r = 0; r < 4; ++r) {
    double lo = 1e9, hi = -1e9;
    for (const auto& c : num_prof.cells[static_cast<size_t>(r)]) {
      if (c.count < 10) continue;
      lo = std::min(lo, c.mean_z);
      hi = std::max(hi, c.mean_z);
    }
    CHECK(hi - lo < 0.25);
  }

  // the area dim is monotone across bins (pooled over N)
  const auto area_prof = response_profile(p, 1, 5);
  std::vector<double> bin_means(5, 0.0);
  std::vector<int64_t> bin_counts(5, 0);
  for (int r = 0; r < 4; ++r)
    for (int b = 0; b < 5; ++b) {
      const auto& c = area_prof.cells[static_cast<size_t>(r)][static_cast<size_t>(b)];
      bin_means[static_cast<size_t>(b)] += c.mean_z * static_cast<double>(c.count);
      bin_counts[static_cast<size_t>(b)] += c.count;
    }
  for (int b = 0; b < 5; ++b)
    bin_means[static_cast<size_t>(b)] /= static_cast<double>(bin_counts[static_cast<size_t>(b)]);
  for (int b = 1; b < 5; ++b)
    CHECK(bin_means[static_cast<size_t>(b)] > bin_means[static_cast<size_t>(b - 1)]);

  // N = 0 rows live in their own category
  CHECK(num_prof.zero_numerosity.count > 0);
}

TEST_CASE("single-sample profiles have no std") {
  ProbeDataset p;
  p.latents.resize(1, 2);
  p.latents.setConstant(0.7);
  p.numerosity = {2};
  p.cumulative_area = {300.0};
  const auto prof = response_profile(p, 0, 3);
  int64_t populated = 0;
  for (const auto& row : prof.cells)
    for (const auto& c : row)
      if (c.count > 0) {
        ++populated;
        CHECK(!c.has_std);
        CHECK(c.mean_z == doctest::Approx(0.7));
      }
  CHECK(populated == 1);
  CHECK(prof.zero_numerosity.count == 0);
}

// ---------------------------------------------------------------------------
// collect_latents + traversal (through a real model)
// ---------------------------------------------------------------------------

TEST_CASE("latent collection is deterministic and row-aligned") {
  TempDir data;
  auto gen = GeneratorConfig::make("probe");
  gen.master_seed = 99;
  build_dataset(gen, 10, {1.0, 0.0, 0.0}, builtin_asset_bank(), data.str());

  VaeModel<float> model(tiny64_arch());
  model.init(5);
  auto p1 = collect_latents(model, data.str());
  auto p2 = collect_latents(model, data.str());
  CHECK(p1.latents.rows() == 10);
  CHECK(p1.latents.cols() == 8);
  CHECK((p1.latents - p2.latents).cwiseAbs().maxCoeff() == 0.0);
  CHECK(p1.area_available);
  for (int64_t i = 0; i < p1.size(); ++i) {
    if (p1.numerosity[static_cast<size_t>(i)] > 0)
      CHECK(p1.cumulative_area[static_cast<size_t>(i)] > 0.0);
  }

  // the regression probe refuses manifests without area ground truth
  auto manifest = load_manifest((data.path / "manifest.jsonl").string());
  for (auto& r : manifest.records) {
    r.area_available = false;
    r.cumulative_area = -1;
  }
  save_manifest((data.path / "manifest.jsonl").string(), manifest);
  const auto p3 = collect_latents(model, data.str());
  CHECK(!p3.area_available);
  CHECK_THROWS_AS(fit_dimension(p3, 0), ConfigError);
  // but the readout path still works from the same latents
  ReadoutConfig rc;
  rc.epochs = 5;
  CHECK_NOTHROW(train_readout(p3.latents, p3.numerosity, rc));
}

TEST_CASE("latent traversal grid contract") {
  VaeModel<float> model(tiny64_arch());
  model.init(7);
  Tensor<float> image({1, 3, 64, 64});
  Rng rng(3);
  for (int64_t i = 0; i < image.numel(); ++i)
    image[i] = static_cast<float>(rng.uniform());
  Eigen::VectorXd stds = Eigen::VectorXd::Ones(8);

  const auto base = model.decode(model.encode(image, false).mu, false);

  const auto grid0 = latent_traversal(model, image, {2}, {0.0}, stds);
  REQUIRE(grid0.images.size() == 1);
  bool equal = true;
  for (int64_t i = 0; i < base.numel(); ++i)
    if (grid0.images[0][i] != base[i]) equal = false;
  CHECK(equal);  // delta = 0 reproduces the baseline bit-for-bit

  const auto grid = latent_traversal(model, image, {1, 4},
                                     {-2.0, -1.0, 0.0, 1.0, 2.0}, stds);
  REQUIRE(grid.images.size() == 10);
  // column 3 of each row is the baseline
  for (size_t row = 0; row < 2; ++row) {
    const auto& img = grid.images[row * 5 + 2];
    bool same = true;
    for (int64_t i = 0; i < base.numel(); ++i)
      if (img[i] != base[i]) same = false;
    CHECK(same);
  }
  // nonzero deltas actually move the reconstruction
  bool moved = false;
  for (int64_t i = 0; i < base.numel(); ++i)
    if (grid.images[0][i] != base[i]) moved = true;
  CHECK(moved);

  CHECK_THROWS_AS(latent_traversal(model, image, {99}, {0.0}, stds),
                  ShapeError);
  Tensor<float> bad({1, 3, 32, 32});
  CHECK_THROWS_AS(latent_traversal(model, bad, {0}, {0.0}, stds), ShapeError);
}
