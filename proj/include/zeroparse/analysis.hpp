#pragma once

#include <array>
#include <string>
#include <vector>

#include "zeroparse/autodiff.hpp"
#include "zeroparse/data.hpp"
#include "zeroparse/model.hpp"

namespace zeroparse::analysis {

// Encoder outputs for one language's slice of a parallel corpus, aligned by
// example index with the other languages' sets.
struct EncodingSet {
  std::string lang;
  std::vector<ad::Matrix> token_encodings;  // T_i x d_model per utterance
  ad::Matrix means;                         // row i = time-mean of utterance i
};

// Runs the encoder over each utterance (eval mode). Special tokens (mask
// markers in noised text) are dropped from the token sets and the means
// unless told otherwise; an utterance reduced to nothing is an error.
EncodingSet build_encoding_set(const model::ModelParams& params, const data::Vocabulary& vocab,
                               const std::string& lang,
                               const std::vector<std::vector<std::string>>& utterances,
                               bool exclude_special_tokens = true);

// 1 - cos(a, b), in [0, 2]. Zero-norm inputs are errors.
double cosine_distance(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b);

// Mean over aligned pairs of the cosine distance between sentence means.
double mean_cosine_distance(const EncodingSet& a, const EncodingSet& b);

// Ground metric between token encodings inside the Hausdorff distance. The
// cosine form matches the sentence-level metric; Euclidean is the
// alternative reading, kept selectable.
enum class Ground { kCosine, kEuclidean };

// max(max_a min_b d, max_b min_a d) over the rows of two point sets.
double symmetric_hausdorff(const ad::Matrix& a, const ad::Matrix& b,
                           Ground ground = Ground::kCosine);

// Mean over aligned utterance pairs of the symmetric Hausdorff distance
// between their token-encoding sets.
double mean_hausdorff(const EncodingSet& a, const EncodingSet& b,
                      Ground ground = Ground::kCosine);

// Accuracy of a linear softmax head over mean-pooled encodings. Pass the
// trained head for the frozen probe, or fit_probe's output for a fresh one.
// Labels must lie inside the head's class count.
double lp_probe_accuracy(const ad::Matrix& means, const std::vector<int>& labels,
                         const ad::Matrix& w, const ad::Matrix& b);

struct ProbeHead {
  ad::Matrix w;  // d x classes
  ad::Matrix b;  // 1 x classes
};

// Deterministic full-batch softmax regression from a zero start.
ProbeHead fit_probe(const ad::Matrix& means, const std::vector<int>& labels, int n_classes,
                    int iters = 300, double lr = 0.5);

struct Projection {
  ad::Matrix coords;      // n x 2
  ad::Matrix components;  // 2 x d, rows are the principal directions
  std::array<double, 2> eigenvalues{0.0, 0.0};
};

// Top-2 PCA of mean-centered points (covariance normalized by n - 1).
// Deterministic sign convention: the largest-magnitude entry of each
// component is positive. Needs at least 3 points; a rank-deficient second
// direction is zero-padded.
Projection project_2d(const ad::Matrix& points);

}  // namespace zeroparse::analysis
