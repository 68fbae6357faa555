#pragma once

#include <array>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "numvae/layers.hpp"
#include "numvae/scenegen.hpp"
#include "numvae/vae.hpp"

namespace numvae {

// Post-hoc analysis of a frozen model: linear regression probes over the
// latent dimensions, a supervised softmax readout scored by count
// average precision, grouped response profiles, and latent traversals.

struct ProbeDataset {
  Eigen::MatrixXd latents;  // rows = samples, cols = latent dims (posterior means)
  std::vector<int> numerosity;
  std::vector<double> cumulative_area;  // pixels; meaningful iff area_available
  bool area_available = true;
  std::string source_manifest;

  int64_t size() const { return latents.rows(); }
  int64_t dim() const { return latents.cols(); }
};

// Encodes every record of a manifest with eps = 0 (latent = posterior
// mean), in manifest order. `split` filters records ("" = all).
ProbeDataset collect_latents(VaeModel<float>& model, const std::string& dataset_dir,
                             const std::string& split = "",
                             int64_t batch_size = 64);

struct RegressionFit {
  int dim_index = 0;
  double beta1 = 0.0;      // coefficient of log N (standardized)
  double beta2 = 0.0;      // coefficient of log A (standardized)
  double r_squared = 0.0;
  int64_t n_samples = 0;
};

// OLS of standardized z_i on standardized (log N, log A) over rows with
// N >= 1. Throws DegenerateInputError when fewer than 3 usable rows
// remain or any variable has zero variance, ConfigError when the
// dataset has no area ground truth.
RegressionFit fit_dimension(const ProbeDataset& probe, int dim_index);

struct DetectorCriteria {
  double r2_threshold = 0.05;     // 0.10 for the strict variant
  double complementary_max = 0.1;
};

enum class DetectorClass { kNeither, kNumerosity, kArea };

struct DetectorDecision {
  DetectorClass cls = DetectorClass::kNeither;
  bool ambiguous = false;  // both complementary coefficients were small
};

DetectorDecision classify_detector(const RegressionFit& fit,
                                   const DetectorCriteria& criteria);

struct DetectorReport {
  std::vector<RegressionFit> fits;               // one per fitted dimension
  std::vector<int> numerosity_detectors;
  std::vector<int> area_detectors;
  std::vector<int> ambiguous_dims;
  std::vector<std::pair<int, int>> opposite_sign_area_pairs;
  std::vector<std::pair<int, std::string>> failed_dims;  // dim -> reason
};

DetectorReport probe_all_dimensions(const ProbeDataset& probe,
                                    const DetectorCriteria& criteria);

// --------------------------------------------------------------------------
// Softmax readout
// --------------------------------------------------------------------------

struct ReadoutConfig {
  int hidden_units = 160;
  int hidden_layers = 2;
  std::vector<double> class_weights;  // empty = inverse class frequency
  int epochs = 300;
  double lr = 0.05;
  double momentum = 0.9;
  uint64_t seed = 1;
};

struct ReadoutModel {
  ReadoutConfig config;
  int64_t latent_dim = 0;
  std::shared_ptr<Stack<float>> net;  // Linear/ReLU trunk + 5-way head

  // class scores (softmax probabilities), one row per sample
  Eigen::MatrixXd scores(const Eigen::MatrixXd& latents) const;
  Eigen::VectorXi predict(const Eigen::MatrixXd& latents) const;
};

// Trains the MLP readout on frozen latents with class-weighted
// cross-entropy (full-batch gradient descent with momentum).
ReadoutModel train_readout(const Eigen::MatrixXd& latents,
                           const std::vector<int>& labels,
                           const ReadoutConfig& config);

void save_readout(const std::string& path, const ReadoutModel& model);
ReadoutModel load_readout(const std::string& path);

// All-points average precision: samples ranked by descending score with
// ties broken by sample index; AP = mean of precision at each positive.
// Throws DegenerateInputError when there are no positives.
double average_precision(const std::vector<double>& scores,
                         const std::vector<uint8_t>& is_positive);

struct ReadoutEvaluation {
  std::array<double, 5> per_class_ap{};
  std::array<bool, 5> defined{};  // false = no positives, excluded from mean
  double mean_ap = 0.0;
  std::vector<std::string> warnings;
};

ReadoutEvaluation evaluate_readout(const ReadoutModel& model,
                                   const Eigen::MatrixXd& latents,
                                   const std::vector<int>& labels);

// --------------------------------------------------------------------------
// Response profiles and traversals
// --------------------------------------------------------------------------

struct ProfileCell {
  int64_t count = 0;
  double mean_z = 0.0;
  double std_z = 0.0;
  bool has_std = false;  // needs at least 2 samples
};

struct ResponseProfile {
  int dim = 0;
  std::vector<double> bin_edges;                 // n_bins + 1, log-spaced in A
  std::vector<std::vector<ProfileCell>> cells;   // [N-1][bin] for N = 1..4
  ProfileCell zero_numerosity;                   // the N = 0 category
};

ResponseProfile response_profile(const ProbeDataset& probe, int dim,
                                 int n_bins_area);

// Empirical per-dimension std of the latents; the traversal step unit.
Eigen::VectorXd dimension_stds(const ProbeDataset& probe);

struct TraversalGrid {
  std::vector<int> dims;
  std::vector<double> deltas;
  // row-major over (dim, delta); each entry is a decoded (1,C,H,W) image
  std::vector<Tensor<float>> images;
};

TraversalGrid latent_traversal(VaeModel<float>& model, const Tensor<float>& image,
                               const std::vector<int>& dims,
                               const std::vector<double>& deltas,
                               const Eigen::VectorXd& dim_stds);

}  // namespace numvae
