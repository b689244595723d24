#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "moa/core.hpp"

namespace moa {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// n x n Gram matrix over responses: symmetric, unit diagonal. Positive
// semi-definiteness is checked where the spectrum is computed (vendi_score).
template <typename Scalar = double>
class SimilarityMatrix {
 public:
  static constexpr Scalar kTolerance = Scalar(1e-12);

  template <typename Derived>
  explicit SimilarityMatrix(const Eigen::MatrixBase<Derived>& values) : values_(values) {
    if (values_.rows() == 0) throw Error(Errc::EmptyList, "similarity matrix is empty");
    if (values_.rows() != values_.cols())
      throw Error(Errc::InvalidArgument, "similarity matrix must be square");
    const Eigen::Index n = values_.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(values_(i, i) - Scalar(1)) > kTolerance)
        throw Error(Errc::InvalidArgument, "similarity diagonal must be 1");
      for (Eigen::Index j = i + 1; j < n; ++j)
        if (std::abs(values_(i, j) - values_(j, i)) > kTolerance)
          throw Error(Errc::InvalidArgument, "similarity matrix must be symmetric");
    }
  }

  Eigen::Index size() const noexcept { return values_.rows(); }
  const MatrixX<Scalar>& values() const noexcept { return values_; }
  Scalar operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

 private:
  MatrixX<Scalar> values_;
};

// Lowercased alphanumeric runs; bytes >= 0x80 count as word characters so
// UTF-8 text is kept intact.
std::vector<std::string> tokenize(std::string_view text);

// Pluggable pairwise similarity over responses.
class SimilarityKernel {
 public:
  virtual ~SimilarityKernel() = default;
  virtual std::string name() const = 0;
  virtual SimilarityMatrix<double> compute(std::span<const std::string> responses) const = 0;
};

// Cosine of L2-normalized unigram term-frequency vectors. An empty response
// maps to the zero vector: similarity 0 to others, 1 to itself.
class UnigramCosineKernel final : public SimilarityKernel {
 public:
  std::string name() const override { return "unigram-cosine"; }
  SimilarityMatrix<double> compute(std::span<const std::string> responses) const override;
};

std::unique_ptr<SimilarityKernel> make_kernel(std::string_view name);

SimilarityMatrix<double> similarity_matrix(std::span<const std::string> responses);

struct JacobiOptions {
  double off_diagonal_tolerance = 1e-12;
  int max_sweeps = 100;
};

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
// Converged when the off-diagonal Frobenius norm drops below the tolerance.
template <typename Derived>
VectorX<typename Derived::Scalar> symmetric_eigenvalues(const Eigen::MatrixBase<Derived>& input,
                                                        const JacobiOptions& opts = {}) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> a = input;
  const Eigen::Index n = a.rows();
  if (n != a.cols()) throw Error(Errc::InvalidArgument, "eigensolver needs a square matrix");

  auto off_norm = [&] {
    Scalar s = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  int sweep = 0;
  while (off_norm() >= Scalar(opts.off_diagonal_tolerance)) {
    if (sweep++ >= opts.max_sweeps)
      throw Error(Errc::EigenFailure, "Jacobi did not converge in " +
                                          std::to_string(opts.max_sweeps) + " sweeps");
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar apq = a(p, q);
        if (apq == Scalar(0)) continue;
        const Scalar theta = (a(q, q) - a(p, p)) / (Scalar(2) * apq);
        const Scalar t = (theta >= 0 ? Scalar(1) : Scalar(-1)) /
                         (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
        const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
        const Scalar s = t * c;
        // A <- J^T A J with J the (p, q) Givens rotation.
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar akp = a(k, p);
          const Scalar akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar apk = a(p, k);
          const Scalar aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = Scalar(0);
      }
    }
  }
  VectorX<Scalar> eig = a.diagonal();
  std::sort(eig.data(), eig.data() + eig.size());
  return eig;
}

inline constexpr double kPsdTolerance = 1e-10;

// exp of the von Neumann entropy of K/n, with 0 log 0 = 0. Eigenvalues in
// [-1e-10, 0) are clamped to 0; anything lower raises NotPSD.
template <typename Scalar>
Scalar vendi_score(const SimilarityMatrix<Scalar>& kernel) {
  const Scalar n = static_cast<Scalar>(kernel.size());
  const VectorX<Scalar> eig = symmetric_eigenvalues(kernel.values() / n);
  Scalar entropy = 0;
  for (Eigen::Index i = 0; i < eig.size(); ++i) {
    Scalar lambda = eig(i);
    if (lambda < Scalar(-kPsdTolerance))
      throw Error(Errc::NotPSD, "eigenvalue " + std::to_string(static_cast<double>(lambda)));
    if (lambda <= Scalar(0)) continue;
    entropy -= lambda * std::log(lambda);
  }
  return std::exp(entropy);
}

template <typename Derived>
typename Derived::Scalar vendi_score(const Eigen::MatrixBase<Derived>& kernel) {
  return vendi_score(SimilarityMatrix<typename Derived::Scalar>(kernel));
}

struct DiversityReport {
  std::map<std::string, double> per_prompt;
  double dataset_diversity = 0.0;
};

double prompt_diversity(std::span<const Sample> samples, const SimilarityKernel& kernel);
double prompt_diversity(std::span<const Sample> samples);

DiversityReport dataset_diversity(std::span<const DatasetRecord> records,
                                  const SimilarityKernel& kernel);
DiversityReport dataset_diversity(std::span<const DatasetRecord> records);

using AnswerExtractor = std::function<std::string(std::string_view)>;

// Last \boxed{...} group if present, otherwise the last non-empty line.
std::string extract_answer(std::string_view text);

// Trim, ASCII case-fold, collapse internal whitespace runs to one space.
std::string normalize_answer(std::string_view text);

// Fraction of records whose extracted answer matches the reference. The
// scored text is the outcome's final_text when present, else the first
// sample's text.
double accuracy(std::span<const DatasetRecord> records, const AnswerExtractor& extractor = extract_answer);

enum class QualityMethod { Average, KNorm, CenteredInvKNorm };

struct QualitySpec {
  QualityMethod method = QualityMethod::Average;
  int order = 1;

  bool operator==(const QualitySpec&) const = default;
  auto operator<=>(const QualitySpec&) const = default;
};

// "avg", "knorm:K", "cinv:K".
QualitySpec parse_quality_spec(std::string_view text);
std::string to_string(const QualitySpec& spec);
std::vector<QualitySpec> parse_quality_specs(std::string_view comma_list);

// Proposer quality from per-model accuracies:
//   Average           mean(q)
//   KNorm             mean(q^K)^(1/K)
//   CenteredInvKNorm  max(q) - mean((max(q) - q)^(1/K))^K
template <typename Derived>
typename Derived::Scalar quality(const Eigen::DenseBase<Derived>& per_model, const QualitySpec& spec) {
  using Scalar = typename Derived::Scalar;
  if (per_model.size() == 0) throw Error(Errc::EmptyList, "no per-model accuracies");
  if (spec.order < 1) throw Error(Errc::InvalidArgument, "quality order must be >= 1");
  const auto& q = per_model.derived().array();
  if ((q < Scalar(0)).any() || (q > Scalar(1)).any() || !q.isFinite().all())
    throw Error(Errc::InvalidRange, "per-model accuracy outside [0, 1]");
  const Scalar k = static_cast<Scalar>(spec.order);
  switch (spec.method) {
    case QualityMethod::Average:
      return q.mean();
    case QualityMethod::KNorm:
      return std::pow(q.pow(k).mean(), Scalar(1) / k);
    case QualityMethod::CenteredInvKNorm: {
      const Scalar best = q.maxCoeff();
      const Scalar spread = std::pow((best - q).pow(Scalar(1) / k).mean(), k);
      return best - spread;
    }
  }
  return q.mean();
}

inline double quality(std::span<const double> per_model, const QualitySpec& spec) {
  return quality(Eigen::Map<const Eigen::ArrayXd>(per_model.data(), static_cast<Eigen::Index>(per_model.size())),
                 spec);
}

struct QualityReport {
  std::vector<double> per_model;
  QualitySpec spec;
  double value = 0.0;
};

QualityReport quality_report(std::vector<double> per_model, const QualitySpec& spec);

}  // namespace moa
