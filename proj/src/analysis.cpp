#include "zeroparse/analysis.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

namespace zeroparse::analysis {

EncodingSet build_encoding_set(const model::ModelParams& params, const data::Vocabulary& vocab,
                               const std::string& lang,
                               const std::vector<std::vector<std::string>>& utterances,
                               bool exclude_special_tokens) {
  if (params.config.vocab_size != vocab.size())
    throw std::invalid_argument("checkpoint and corpus vocabularies disagree");
  const model::Bound b = model::bind(nullptr, params);
  Rng no_drop(0);

  EncodingSet set;
  set.lang = lang;
  set.means.resize(static_cast<Eigen::Index>(utterances.size()), params.config.d_model);
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const std::vector<int> ids = vocab.encode(utterances[i]);
    const ad::Matrix enc = model::encode(b, ids, false, no_drop).val();
    ad::Matrix kept;
    if (exclude_special_tokens) {
      std::vector<Eigen::Index> rows;
      for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] > data::Vocabulary::kMask) rows.push_back(static_cast<Eigen::Index>(t));
      }
      if (rows.empty())
        throw std::invalid_argument("utterance " + std::to_string(i) +
                                    " has no content tokens to encode");
      kept.resize(static_cast<Eigen::Index>(rows.size()), enc.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) kept.row(static_cast<Eigen::Index>(r)) = enc.row(rows[r]);
    } else {
      kept = enc;
    }
    set.means.row(static_cast<Eigen::Index>(i)) = kept.colwise().mean();
    set.token_encodings.push_back(std::move(kept));
  }
  return set;
}

double cosine_distance(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_distance: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_distance: zero-norm vector");
  return 1.0 - a.dot(b) / (na * nb);
}

double mean_cosine_distance(const EncodingSet& a, const EncodingSet& b) {
  if (a.means.rows() != b.means.rows() || a.means.rows() == 0)
    throw std::invalid_argument("mean_cosine_distance: sets must align pairwise");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.means.rows(); ++i)
    sum += cosine_distance(a.means.row(i), b.means.row(i));
  return sum / static_cast<double>(a.means.rows());
}

namespace {

double ground_distance(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b, Ground g) {
  return g == Ground::kCosine ? cosine_distance(a, b) : (a - b).norm();
}

double directed_hausdorff(const ad::Matrix& from, const ad::Matrix& to, Ground g) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    double nearest = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < to.rows(); ++j)
      nearest = std::min(nearest, ground_distance(from.row(i), to.row(j), g));
    worst = std::max(worst, nearest);
  }
  return worst;
}

}  // namespace

double symmetric_hausdorff(const ad::Matrix& a, const ad::Matrix& b, Ground ground) {
  if (a.rows() == 0 || b.rows() == 0)
    throw std::invalid_argument("symmetric_hausdorff: empty point set");
  if (a.cols() != b.cols())
    throw std::invalid_argument("symmetric_hausdorff: dimension mismatch");
  return std::max(directed_hausdorff(a, b, ground), directed_hausdorff(b, a, ground));
}

double mean_hausdorff(const EncodingSet& a, const EncodingSet& b, Ground ground) {
  if (a.token_encodings.size() != b.token_encodings.size() || a.token_encodings.empty())
    throw std::invalid_argument("mean_hausdorff: sets must align pairwise");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.token_encodings.size(); ++i)
    sum += symmetric_hausdorff(a.token_encodings[i], b.token_encodings[i], ground);
  return sum / static_cast<double>(a.token_encodings.size());
}

namespace {

void check_probe_labels(Eigen::Index n_rows, const std::vector<int>& labels,
                        Eigen::Index n_classes) {
  if (static_cast<std::size_t>(n_rows) != labels.size())
    throw std::invalid_argument("probe: one label per encoding required");
  for (int l : labels)
    if (l < 0 || l >= static_cast<int>(n_classes))
      throw std::invalid_argument("probe: label " + std::to_string(l) +
                                  " outside the trained language set");
}

}  // namespace

double lp_probe_accuracy(const ad::Matrix& means, const std::vector<int>& labels,
                         const ad::Matrix& w, const ad::Matrix& b) {
  if (means.cols() != w.rows() || w.cols() != b.cols() || b.rows() != 1)
    throw std::invalid_argument("probe: head shapes do not match the encodings");
  check_probe_labels(means.rows(), labels, w.cols());
  if (means.rows() == 0) throw std::invalid_argument("probe: empty encoding set");
  int correct = 0;
  for (Eigen::Index i = 0; i < means.rows(); ++i) {
    const ad::Matrix logits = means.row(i) * w + b;
    Eigen::Index best = 0;
    logits.row(0).maxCoeff(&best);  // ties resolve to the lowest index
    if (static_cast<int>(best) == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(means.rows());
}

ProbeHead fit_probe(const ad::Matrix& means, const std::vector<int>& labels, int n_classes,
                    int iters, double lr) {
  if (n_classes < 1) throw std::invalid_argument("probe: need at least one class");
  check_probe_labels(means.rows(), labels, n_classes);
  if (means.rows() == 0) throw std::invalid_argument("probe: empty encoding set");
  const Eigen::Index n = means.rows(), d = means.cols();

  ProbeHead head;
  head.w = ad::Matrix::Zero(d, n_classes);
  head.b = ad::Matrix::Zero(1, n_classes);
  for (int it = 0; it < iters; ++it) {
    ad::Matrix probs = (means * head.w).rowwise() + head.b.row(0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = probs.row(i).maxCoeff();
      probs.row(i) = (probs.row(i).array() - mx).exp();
      probs.row(i) /= probs.row(i).sum();
      probs(i, labels[static_cast<std::size_t>(i)]) -= 1.0;  // p - onehot
    }
    probs /= static_cast<double>(n);
    head.w -= lr * (means.transpose() * probs);
    head.b -= lr * probs.colwise().sum();
  }
  return head;
}

Projection project_2d(const ad::Matrix& points) {
  if (points.rows() < 3)
    throw std::invalid_argument("project_2d: need at least three points");
  const Eigen::Index n = points.rows(), d = points.cols();
  const ad::Matrix centered = points.rowwise() - points.colwise().mean();
  const ad::Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("project_2d: eigendecomposition failed");

  Projection out;
  out.components = ad::Matrix::Zero(2, d);
  out.coords = ad::Matrix::Zero(n, 2);

  // eigenvalues come back ascending
  out.eigenvalues[0] = es.eigenvalues()(d - 1);
  out.eigenvalues[1] = d >= 2 ? es.eigenvalues()(d - 2) : 0.0;

  const auto fix_sign = [](Eigen::VectorXd v) {
    Eigen::Index at = 0;
    v.cwiseAbs().maxCoeff(&at);
    if (v(at) < 0.0) v = -v;
    return v;
  };

  const Eigen::VectorXd first = fix_sign(es.eigenvectors().col(d - 1));
  out.components.row(0) = first.transpose();
  out.coords.col(0) = centered * first;

  // a second direction only exists when the data really spans one
  const bool degenerate =
      d < 2 || out.eigenvalues[1] <= 1e-9 * std::max(out.eigenvalues[0], 1e-300);
  if (!degenerate) {
    const Eigen::VectorXd second = fix_sign(es.eigenvectors().col(d - 2));
    out.components.row(1) = second.transpose();
    out.coords.col(1) = centered * second;
  }
  return out;
}

}  // namespace zeroparse::analysis
