#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "zeroparse/analysis.hpp"
#include "zeroparse/data.hpp"
#include "zeroparse/model.hpp"
#include "zeroparse/rng.hpp"

using namespace zeroparse;

namespace {

ad::Matrix rows2(std::initializer_list<std::initializer_list<double>> vals) {
  ad::Matrix m(static_cast<Eigen::Index>(vals.size()),
               static_cast<Eigen::Index>(vals.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : vals) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

analysis::EncodingSet set_of_means(const ad::Matrix& means) {
  analysis::EncodingSet s;
  s.means = means;
  for (Eigen::Index i = 0; i < means.rows(); ++i) s.token_encodings.push_back(means.row(i));
  return s;
}

}  // namespace

TEST_CASE("cosine distance spans [0, 2] and rejects zero vectors") {
  Eigen::RowVectorXd x(2), y(2);
  x << 1.0, 0.0;
  y << 0.0, 1.0;
  CHECK(analysis::cosine_distance(x, x) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(analysis::cosine_distance(x, y) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(analysis::cosine_distance(x, (-x).eval()) == doctest::Approx(2.0).epsilon(1e-15));

  Eigen::RowVectorXd z = Eigen::RowVectorXd::Zero(2);
  CHECK_THROWS_AS(analysis::cosine_distance(x, z), std::invalid_argument);
  Eigen::RowVectorXd w(3);
  w << 1.0, 2.0, 3.0;
  CHECK_THROWS_AS(analysis::cosine_distance(x, w), std::invalid_argument);
}

TEST_CASE("mean cosine distance averages aligned pairs and ignores scale") {
  const auto a = set_of_means(rows2({{1.0, 0.0}, {1.0, 0.0}}));
  const auto b = set_of_means(rows2({{0.0, 1.0}, {1.0, 0.0}}));
  CHECK(analysis::mean_cosine_distance(a, b) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(analysis::mean_cosine_distance(a, a) == doctest::Approx(0.0).epsilon(1e-15));

  // common positive scaling of every vector changes nothing
  Rng rng(3);
  ad::Matrix ma(6, 4), mb(6, 4);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) {
      ma(i, j) = rng.normal();
      mb(i, j) = rng.normal();
    }
  const double base = analysis::mean_cosine_distance(set_of_means(ma), set_of_means(mb));
  const double scaled =
      analysis::mean_cosine_distance(set_of_means((3.7 * ma).eval()),
                                     set_of_means((0.002 * mb).eval()));
  CHECK(base == doctest::Approx(scaled).epsilon(1e-12));

  const auto misaligned = set_of_means(rows2({{1.0, 0.0}}));
  CHECK_THROWS_AS(analysis::mean_cosine_distance(a, misaligned), std::invalid_argument);
}

TEST_CASE("symmetric hausdorff matches hand-enumerated cases") {
  const ad::Matrix a = rows2({{1.0, 0.0}});
  const ad::Matrix b = rows2({{0.0, 1.0}, {1.0, 0.0}});
  const ad::Matrix c = rows2({{0.0, 1.0}});

  CHECK(analysis::symmetric_hausdorff(a, a) == doctest::Approx(0.0).epsilon(1e-15));
  // the far side dominates: (0, 1) has no near neighbour in the singleton
  CHECK(analysis::symmetric_hausdorff(a, b) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(analysis::symmetric_hausdorff(a, c) == doctest::Approx(1.0).epsilon(1e-15));

  // zero without equal cardinality: every point has a zero-distance partner
  const ad::Matrix covered = rows2({{1.0, 0.0}, {0.0, 1.0}});
  const ad::Matrix covering = rows2({{2.0, 0.0}, {0.0, 3.0}, {1.0, 0.0}});
  CHECK(std::abs(analysis::symmetric_hausdorff(covered, covering)) <= 1e-12);

  // equal as sets under cosine distance zero, though not equal as matrices
  const ad::Matrix v2 = rows2({{1.0, 0.0}, {2.0, 0.0}});
  CHECK(analysis::symmetric_hausdorff(v2, a) == doctest::Approx(0.0).epsilon(1e-15));

  Rng rng(5);
  ad::Matrix p(4, 3), q(6, 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < 3; ++j) p(i, j) = rng.normal();
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index j = 0; j < 3; ++j) q(i, j) = rng.normal();
  CHECK(analysis::symmetric_hausdorff(p, q) == analysis::symmetric_hausdorff(q, p));
  CHECK(analysis::symmetric_hausdorff(p, q) >= 0.0);

  // the Euclidean ground metric is a plain point-set distance
  const ad::Matrix o = rows2({{0.0, 0.0}, {1.0, 0.0}});
  const ad::Matrix z = rows2({{0.0, 0.0}});
  CHECK(analysis::symmetric_hausdorff(o, z, analysis::Ground::kEuclidean) ==
        doctest::Approx(1.0).epsilon(1e-15));

  const ad::Matrix empty(0, 2);
  CHECK_THROWS_AS(analysis::symmetric_hausdorff(empty, a), std::invalid_argument);
  const ad::Matrix wide(1, 5);
  CHECK_THROWS_AS(analysis::symmetric_hausdorff(a, wide), std::invalid_argument);
}

TEST_CASE("probe accuracy follows the head and stays at chance for random labels") {
  const ad::Matrix means = rows2({{1.0, 0.0}, {0.0, 1.0}});
  const ad::Matrix w = ad::Matrix::Identity(2, 2);
  const ad::Matrix b = ad::Matrix::Zero(1, 2);
  CHECK(analysis::lp_probe_accuracy(means, {0, 1}, w, b) == 1.0);
  CHECK(analysis::lp_probe_accuracy(means, {1, 0}, w, b) == 0.0);

  CHECK_THROWS_AS(analysis::lp_probe_accuracy(means, {0, 2}, w, b), std::invalid_argument);
  CHECK_THROWS_AS(analysis::lp_probe_accuracy(means, {0}, w, b), std::invalid_argument);
  CHECK_THROWS_AS(analysis::lp_probe_accuracy(means, {0, 1}, ad::Matrix::Zero(3, 2), b),
                  std::invalid_argument);

  // any fixed head scores 1/L against labels drawn independently of the data
  const int n = 6000, L = 3;
  Rng rng(11);
  ad::Matrix X(n, 4), W(4, L), B(1, L);
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j) X(i, j) = rng.normal();
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = rng.normal();
  for (Eigen::Index j = 0; j < B.cols(); ++j) B(0, j) = rng.normal();
  std::vector<int> labels(n);
  for (int& l : labels) l = static_cast<int>(rng.uniform_int(L));
  const double acc = analysis::lp_probe_accuracy(X, labels, W, B);
  const double sigma = std::sqrt((1.0 / L) * (1.0 - 1.0 / L) / n);
  CHECK(std::abs(acc - 1.0 / L) <= 3 * sigma);
}

TEST_CASE("a retrained probe separates what is separable and nothing else") {
  const int per = 120, L = 3;
  Rng rng(13);
  ad::Matrix X(per * L, 2);
  std::vector<int> labels(per * L);
  const double centers[L][2] = {{5.0, 0.0}, {0.0, 5.0}, {-5.0, -5.0}};
  for (int c = 0; c < L; ++c) {
    for (int i = 0; i < per; ++i) {
      const Eigen::Index row = c * per + i;
      X(row, 0) = centers[c][0] + 0.3 * rng.normal();
      X(row, 1) = centers[c][1] + 0.3 * rng.normal();
      labels[static_cast<std::size_t>(row)] = c;
    }
  }

  const analysis::ProbeHead head = analysis::fit_probe(X, labels, L);
  CHECK(analysis::lp_probe_accuracy(X, labels, head.w, head.b) >= 0.99);

  const analysis::ProbeHead again = analysis::fit_probe(X, labels, L);
  CHECK((head.w - again.w).cwiseAbs().maxCoeff() == 0.0);  // fitting is deterministic
  CHECK((head.b - again.b).cwiseAbs().maxCoeff() == 0.0);

  // permuting the labels collapses even a perfect head to chance
  std::vector<int> shuffled = labels;
  Rng perm(17);
  perm.shuffle(shuffled);
  const double chance_acc = analysis::lp_probe_accuracy(X, shuffled, head.w, head.b);
  const double sigma = std::sqrt((1.0 / L) * (1.0 - 1.0 / L) / (per * L));
  CHECK(std::abs(chance_acc - 1.0 / L) <= 4 * sigma);

  CHECK_THROWS_AS(analysis::fit_probe(X, labels, 0), std::invalid_argument);
  CHECK_THROWS_AS(analysis::fit_probe(X, {0, 1}, L), std::invalid_argument);
}

TEST_CASE("pca projection reproduces the hand eigendecomposition") {
  const ad::Matrix pts = rows2({{0.0, 0.0}, {1.0, 0.0}, {2.0, 1.0}});
  const analysis::Projection p = analysis::project_2d(pts);

  CHECK(p.eigenvalues[0] == doctest::Approx(1.2675918792439984).epsilon(1e-12));
  CHECK(p.eigenvalues[1] == doctest::Approx(0.06574145408933513).epsilon(1e-12));

  CHECK(p.components(0, 0) == doctest::Approx(0.8816745987679436).epsilon(1e-12));
  CHECK(p.components(0, 1) == doctest::Approx(0.47185792553202427).epsilon(1e-12));
  CHECK(p.components(1, 0) == doctest::Approx(-0.47185792553202427).epsilon(1e-12));
  CHECK(p.components(1, 1) == doctest::Approx(0.8816745987679436).epsilon(1e-12));

  const double expected[3][2] = {{-1.038960573945285, 0.1779663926093764},
                                 {-0.1572859751773414, -0.29389153292264786},
                                 {1.1962465491226264, 0.11592514031327154}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(p.coords(i, j) == doctest::Approx(expected[i][j]).epsilon(1e-12));
}

TEST_CASE("pca projection is an isometry on full-rank 2-D data") {
  Rng rng(19);
  ad::Matrix pts(8, 2);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    pts(i, 0) = rng.normal();
    pts(i, 1) = 2.0 * rng.normal();
  }
  const analysis::Projection p = analysis::project_2d(pts);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < pts.rows(); ++j) {
      const double orig = (pts.row(i) - pts.row(j)).norm();
      const double proj = (p.coords.row(i) - p.coords.row(j)).norm();
      CHECK(orig == doctest::Approx(proj).epsilon(1e-10));
    }
  }
  // the convention pins each component's largest entry positive
  for (int c = 0; c < 2; ++c) {
    Eigen::Index at = 0;
    p.components.row(c).cwiseAbs().maxCoeff(&at);
    CHECK(p.components(c, at) > 0.0);
  }
}

TEST_CASE("pca projection zero-pads directions the data never spans") {
  const ad::Matrix line = rows2({{0.0, 0.0}, {1.0, 2.0}, {2.0, 4.0}, {3.0, 6.0}});
  const analysis::Projection p = analysis::project_2d(line);
  for (Eigen::Index i = 0; i < line.rows(); ++i) CHECK(p.coords(i, 1) == 0.0);
  CHECK(p.components.row(1).isZero());
  CHECK(p.eigenvalues[0] > 0.0);
  // spacing along the line survives in the first coordinate
  const double step = std::abs(p.coords(1, 0) - p.coords(0, 0));
  CHECK(step == doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));

  ad::Matrix one_dim(3, 1);
  one_dim << 1.0, 2.0, 4.0;
  const analysis::Projection q = analysis::project_2d(one_dim);
  CHECK(q.coords.col(1).isZero());
  CHECK(q.coords(0, 0) == doctest::Approx(-4.0 / 3.0).epsilon(1e-12));

  CHECK_THROWS_AS(analysis::project_2d(rows2({{1.0, 0.0}, {0.0, 1.0}})),
                  std::invalid_argument);
}

TEST_CASE("encoding sets come from the encoder with specials filtered") {
  const data::Vocabulary vocab = data::Vocabulary::build({"alpha", "beta", "gamma", "delta"});
  model::ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.n_languages = 2;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.enc_layers = 1;
  mc.dec_layers = 1;
  mc.d_ff = 16;
  mc.max_len = 8;
  mc.dropout = 0.0;
  Rng r(23);
  const model::ModelParams params = model::ModelParams::init(mc, r);

  const std::vector<std::vector<std::string>> utts = {
      {"alpha", "beta", "gamma"},
      {"alpha", "<mask>", "gamma"},
  };
  const analysis::EncodingSet filtered =
      analysis::build_encoding_set(params, vocab, "en", utts, true);
  const analysis::EncodingSet full =
      analysis::build_encoding_set(params, vocab, "en", utts, false);

  CHECK(filtered.lang == "en");
  REQUIRE(filtered.token_encodings.size() == 2);
  CHECK(filtered.token_encodings[0].rows() == 3);
  CHECK(filtered.token_encodings[1].rows() == 2);  // the mask row is dropped
  CHECK(full.token_encodings[1].rows() == 3);
  CHECK(filtered.means.rows() == 2);
  CHECK(filtered.means.cols() == mc.d_model);

  // means really are the row means of the kept encodings
  for (int i = 0; i < 2; ++i) {
    const ad::Matrix expect = filtered.token_encodings[static_cast<std::size_t>(i)]
                                  .colwise()
                                  .mean();
    CHECK((filtered.means.row(i) - expect).cwiseAbs().maxCoeff() <= 1e-15);
  }
  CHECK((filtered.means.row(1) - full.means.row(1)).cwiseAbs().maxCoeff() > 0.0);

  // a parallel set against itself sits at distance zero, up to rounding
  CHECK(std::abs(analysis::mean_cosine_distance(filtered, filtered)) <= 1e-12);
  CHECK(std::abs(analysis::mean_hausdorff(filtered, filtered)) <= 1e-12);

  CHECK_THROWS_AS(
      analysis::build_encoding_set(params, vocab, "en", {{"<mask>", "<mask>"}}, true),
      std::invalid_argument);
  model::ModelParams wrong = params;
  wrong.config.vocab_size += 1;
  CHECK_THROWS_AS(analysis::build_encoding_set(wrong, vocab, "en", utts, true),
                  std::invalid_argument);
}
