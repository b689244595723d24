#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "moa/metrics.hpp"

using namespace moa;

namespace {

// Independent route: Eigen's self-adjoint solver on K/n.
double vendi_oracle(const Eigen::MatrixXd& k) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(k / static_cast<double>(k.rows()));
  double h = 0;
  for (double l : solver.eigenvalues())
    if (l > 0) h -= l * std::log(l);
  return std::exp(h);
}

// Random Gram matrix of unit vectors: symmetric PSD with unit diagonal.
Eigen::MatrixXd random_kernel(std::mt19937& rng, int n, int dim) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd v(dim, n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < dim; ++i) v(i, j) = g(rng);
    v.col(j).normalize();
  }
  Eigen::MatrixXd k = v.transpose() * v;
  k.diagonal().setOnes();
  return (k + k.transpose()) / 2;
}

Sample sample(const std::string& prompt, const std::string& text) { return {"i", 0, text, prompt, {}, 0}; }

// Plain-loop cosine over unigram counts.
double cosine_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::map<std::string, double> ca, cb;
  for (auto& t : a) ca[t] += 1;
  for (auto& t : b) cb[t] += 1;
  double dot = 0, na = 0, nb = 0;
  for (auto& [t, c] : ca) {
    na += c * c;
    if (auto it = cb.find(t); it != cb.end()) dot += c * it->second;
  }
  for (auto& [t, c] : cb) nb += c * c;
  if (na == 0 || nb == 0) return 0;
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("tokenize") {
  CHECK(tokenize("Hello, World! 42x") == std::vector<std::string>{"hello", "world", "42x"});
  CHECK(tokenize("  ").empty());
}

TEST_CASE("unigram cosine kernel examples") {
  const std::vector<std::string> same{"a b", "a b"};
  auto k = similarity_matrix(same);
  CHECK(k(0, 1) == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<std::string> half{"a b", "a c"};
  k = similarity_matrix(half);
  CHECK(k(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(k(0, 0) == 1.0);

  const std::vector<std::string> with_empty{"", "x"};
  k = similarity_matrix(with_empty);
  CHECK(k(0, 0) == 1.0);
  CHECK(k(0, 1) == 0.0);

  const std::vector<std::string> none;
  CHECK_THROWS_AS(similarity_matrix(none), Error);
  CHECK_THROWS_AS(make_kernel("bleu"), Error);
  CHECK(make_kernel("unigram-cosine")->name() == "unigram-cosine");
}

TEST_CASE("kernel matches a plain-loop cosine on random texts") {
  std::mt19937 rng(5);
  const std::vector<std::string> vocab{"alpha", "beta", "gamma", "delta", "eps", "zeta"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> texts(5);
    for (auto& t : texts) {
      const int len = 1 + static_cast<int>(rng() % 8);
      for (int w = 0; w < len; ++w) t += vocab[rng() % vocab.size()] + " ";
    }
    const auto k = similarity_matrix(texts);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j)
        if (i != j) CHECK(k(i, j) == doctest::Approx(cosine_oracle(tokenize(texts[i]), tokenize(texts[j]))).epsilon(1e-12));
  }
}

TEST_CASE("similarity matrix validation") {
  Eigen::MatrixXd bad(2, 2);
  bad << 1, 0.5, 0.4, 1;
  CHECK_THROWS_AS(SimilarityMatrix<double>{bad}, Error);
  bad << 0.9, 0.5, 0.5, 1;
  CHECK_THROWS_AS(SimilarityMatrix<double>{bad}, Error);
}

TEST_CASE("Jacobi eigenvalues agree with Eigen's self-adjoint solver") {
  std::mt19937 rng(11);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 12);
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = g(rng);
    a = (a + a.transpose()).eval();
    const Eigen::VectorXd ours = symmetric_eigenvalues(a);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a, Eigen::EigenvaluesOnly);
    CHECK((ours - solver.eigenvalues()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("Jacobi works for float scalars") {
  Eigen::Matrix2f a;
  a << 2, 1, 1, 2;
  const Eigen::VectorXf e = symmetric_eigenvalues(a, JacobiOptions{1e-6, 100});
  CHECK(e(0) == doctest::Approx(1.0f).epsilon(1e-5));
  CHECK(e(1) == doctest::Approx(3.0f).epsilon(1e-5));
}

TEST_CASE("Vendi Score reference values") {
  for (int n : {1, 2, 6, 10}) {
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(n, n);
    CHECK(std::abs(vendi_score(ones) - 1.0) < 1e-9);
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
    CHECK(std::abs(vendi_score(eye) - n) < 1e-9);
  }
  Eigen::Matrix2d half;
  half << 1, 0.5, 0.5, 1;
  // eigenvalues of K/2 are 3/4 and 1/4
  const double expected = std::exp(-(0.75 * std::log(0.75) + 0.25 * std::log(0.25)));
  CHECK(std::abs(expected - 1.7548) < 1e-4);
  CHECK(std::abs(vendi_score(half) - expected) < 1e-12);
  CHECK(std::abs(vendi_score(half) - 1.7548) < 1e-4);
}

TEST_CASE("Vendi Score against oracle, bounds, permutation invariance") {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 8);
    const Eigen::MatrixXd k = random_kernel(rng, n, 1 + static_cast<int>(rng() % 6));
    const double vs = vendi_score(k);
    CHECK(vs == doctest::Approx(vendi_oracle(k)).epsilon(1e-9));
    CHECK(vs >= 1.0 - 1e-9);
    CHECK(vs <= n + 1e-9);

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> p(n);
    for (int i = 0; i < n; ++i) p.indices()(i) = perm[i];
    const Eigen::MatrixXd permuted = p * k * p.transpose();
    CHECK(std::abs(vendi_score(permuted) - vs) < 1e-9);
  }
}

TEST_CASE("Vendi Score rejects indefinite matrices") {
  Eigen::Matrix3d k;
  k << 1, 0.9, -0.9, 0.9, 1, 0.9, -0.9, 0.9, 1;
  try {
    vendi_score(k);
    FAIL("indefinite kernel accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NotPSD);
  }
}

TEST_CASE("prompt and dataset diversity") {
  std::vector<Sample> same(6, sample("p", "the same words"));
  CHECK(std::abs(prompt_diversity(same) - 1.0) < 1e-9);

  std::vector<Sample> ortho;
  for (int i = 0; i < 6; ++i) ortho.push_back(sample("p", "word" + std::to_string(i)));
  CHECK(std::abs(prompt_diversity(ortho) - 6.0) < 1e-9);

  std::vector<Sample> mixed{sample("p", "x"), sample("q", "y")};
  try {
    prompt_diversity(mixed);
    FAIL("mixed prompt ids accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MixedPromptIds);
  }
  CHECK_THROWS_AS(prompt_diversity(std::span<const Sample>{}), Error);

  std::vector<DatasetRecord> records{
      {{"a", "A", std::nullopt}, same, std::nullopt},
      {{"b", "B", std::nullopt}, ortho, std::nullopt},
  };
  for (auto& s : records[1].samples) s.prompt_id = "b";
  for (auto& s : records[0].samples) s.prompt_id = "a";
  const auto report = dataset_diversity(records);
  CHECK(report.per_prompt.size() == 2);
  CHECK(report.dataset_diversity == doctest::Approx(3.5).epsilon(1e-9));

  // mixed texts: oracle through Eigen on the plain-loop cosine matrix
  std::vector<std::string> texts{"a b c", "a b", "c d e", "f"};
  Eigen::MatrixXd k(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) k(i, j) = i == j ? 1.0 : cosine_oracle(tokenize(texts[i]), tokenize(texts[j]));
  std::vector<Sample> mix;
  for (auto& t : texts) mix.push_back(sample("m", t));
  CHECK(prompt_diversity(mix) == doctest::Approx(vendi_oracle(k)).epsilon(1e-9));

  CHECK_THROWS_AS(dataset_diversity(std::span<const DatasetRecord>{}), Error);
}

TEST_CASE("answer extraction and normalization") {
  CHECK(extract_answer("work\n\\boxed{1} then \\boxed{{2}+3}") == "{2}+3");
  CHECK(extract_answer("line one\nfinal answer \n\n") == "final answer ");
  CHECK(normalize_answer("  Foo \t Bar  ") == "foo bar");
}

TEST_CASE("accuracy") {
  std::vector<DatasetRecord> records;
  for (int i = 0; i < 4; ++i) {
    DatasetRecord r{{"p" + std::to_string(i), "t", "yes"}, {}, std::nullopt};
    r.samples.push_back(sample(r.prompt.id, i < 3 ? "\\boxed{YES}" : "no"));
    records.push_back(r);
  }
  CHECK(accuracy(records) == doctest::Approx(0.75).epsilon(1e-12));

  records[3].outcome = EnsembleOutcome{"Yes", {}, 1, "x"};
  CHECK(accuracy(records) == doctest::Approx(1.0));

  records[0].prompt.reference_answer.reset();
  try {
    accuracy(records);
    FAIL("missing reference accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MissingReference);
  }
  CHECK_THROWS_AS(accuracy(std::span<const DatasetRecord>{}), Error);
}

TEST_CASE("quality spec parsing") {
  CHECK(parse_quality_spec("avg") == QualitySpec{QualityMethod::Average, 1});
  CHECK(parse_quality_spec("knorm:3") == QualitySpec{QualityMethod::KNorm, 3});
  CHECK(parse_quality_spec("cinv:2") == QualitySpec{QualityMethod::CenteredInvKNorm, 2});
  CHECK(to_string(parse_quality_spec("cinv:2")) == "cinv:2");
  CHECK_THROWS_AS(parse_quality_spec("knorm:0"), Error);
  CHECK_THROWS_AS(parse_quality_spec("median"), Error);
  CHECK(parse_quality_specs("avg,knorm:2,cinv:2").size() == 3);
}

TEST_CASE("quality reference values") {
  const std::vector<double> q{0.9, 0.5};
  CHECK(quality(q, {QualityMethod::Average, 1}) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(quality(q, {QualityMethod::KNorm, 2}) == doctest::Approx(std::sqrt(0.53)).epsilon(1e-12));
  CHECK(std::abs(quality(q, {QualityMethod::KNorm, 2}) - 0.7280) < 1e-4);
  // 0.9 - ((0 + sqrt(0.4)) / 2)^2 = 0.9 - 0.1
  CHECK(quality(q, {QualityMethod::CenteredInvKNorm, 2}) == doctest::Approx(0.8).epsilon(1e-12));

  const std::vector<double> bad{1.2};
  try {
    quality(bad, {});
    FAIL("out of range accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidRange);
  }
  CHECK_THROWS_AS(quality(std::span<const double>{}, {}), Error);
}

TEST_CASE("quality properties over random accuracy vectors") {
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> q(1 + rng() % 10);
    for (auto& v : q) v = u(rng);
    const double mean = std::accumulate(q.begin(), q.end(), 0.0) / q.size();
    const double best = *std::max_element(q.begin(), q.end());
    for (auto m : {QualityMethod::Average, QualityMethod::KNorm, QualityMethod::CenteredInvKNorm})
      CHECK(std::abs(quality(q, {m, 1}) - mean) < 1e-12);
    double prev = quality(q, {QualityMethod::KNorm, 1});
    for (int k = 2; k <= 6; ++k) {
      const double cur = quality(q, {QualityMethod::KNorm, k});
      CHECK(cur >= prev - 1e-12);
      prev = cur;
    }
    for (int k = 1; k <= 6; ++k) {
      const double c = quality(q, {QualityMethod::CenteredInvKNorm, k});
      CHECK(c >= mean - 1e-12);
      CHECK(c <= best + 1e-12);
    }
  }
}
