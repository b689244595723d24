#include "moa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>

namespace moa {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

SimilarityMatrix<double> UnigramCosineKernel::compute(std::span<const std::string> responses) const {
  if (responses.empty()) throw Error(Errc::EmptyList, "no responses");
  std::unordered_map<std::string, Eigen::Index> vocab;
  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(responses.size());
  for (const auto& r : responses) {
    tokenized.push_back(tokenize(r));
    for (const auto& t : tokenized.back()) vocab.try_emplace(t, static_cast<Eigen::Index>(vocab.size()));
  }
  const auto n = static_cast<Eigen::Index>(responses.size());
  Eigen::MatrixXd tf = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(vocab.size()), n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (const auto& t : tokenized[static_cast<std::size_t>(j)]) tf(vocab.at(t), j) += 1.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double norm = tf.col(j).norm();
    if (norm > 0) tf.col(j) /= norm;
  }
  Eigen::MatrixXd gram = tf.transpose() * tf;
  for (Eigen::Index i = 0; i < n; ++i) {
    gram(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) gram(j, i) = gram(i, j);
  }
  return SimilarityMatrix<double>(gram);
}

std::unique_ptr<SimilarityKernel> make_kernel(std::string_view name) {
  if (name.empty() || name == "unigram-cosine") return std::make_unique<UnigramCosineKernel>();
  throw Error(Errc::ConfigError, "unknown similarity kernel '" + std::string(name) + "'");
}

SimilarityMatrix<double> similarity_matrix(std::span<const std::string> responses) {
  return UnigramCosineKernel{}.compute(responses);
}

double prompt_diversity(std::span<const Sample> samples, const SimilarityKernel& kernel) {
  if (samples.empty()) throw Error(Errc::EmptyList, "no samples");
  std::vector<std::string> texts;
  texts.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.prompt_id != samples.front().prompt_id)
      throw Error(Errc::MixedPromptIds, "'" + s.prompt_id + "' vs '" + samples.front().prompt_id + "'");
    texts.push_back(s.text);
  }
  return vendi_score(kernel.compute(texts));
}

double prompt_diversity(std::span<const Sample> samples) {
  return prompt_diversity(samples, UnigramCosineKernel{});
}

DiversityReport dataset_diversity(std::span<const DatasetRecord> records, const SimilarityKernel& kernel) {
  if (records.empty()) throw Error(Errc::EmptyDataset, "no records");
  DiversityReport report;
  double sum = 0.0;
  for (const auto& r : records) {
    if (r.samples.empty())
      throw Error(Errc::EmptyList, "record '" + r.prompt.id + "' has no samples");
    const double d = prompt_diversity(r.samples, kernel);
    report.per_prompt[r.prompt.id] = d;
    sum += d;
  }
  report.dataset_diversity = sum / static_cast<double>(records.size());
  return report;
}

DiversityReport dataset_diversity(std::span<const DatasetRecord> records) {
  return dataset_diversity(records, UnigramCosineKernel{});
}

std::string extract_answer(std::string_view text) {
  static constexpr std::string_view kBoxed = "\\boxed{";
  if (const auto start = text.rfind(kBoxed); start != std::string_view::npos) {
    int depth = 1;
    const std::size_t open = start + kBoxed.size();
    for (std::size_t i = open; i < text.size(); ++i) {
      if (text[i] == '{') ++depth;
      if (text[i] == '}' && --depth == 0) return std::string(text.substr(open, i - open));
    }
  }
  std::string_view last;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) last = line;
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return std::string(last);
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

double accuracy(std::span<const DatasetRecord> records, const AnswerExtractor& extractor) {
  if (records.empty()) throw Error(Errc::EmptyDataset, "no records");
  std::size_t correct = 0;
  for (const auto& r : records) {
    if (!r.prompt.reference_answer)
      throw Error(Errc::MissingReference, "prompt '" + r.prompt.id + "' has no reference answer");
    std::string_view scored;
    if (r.outcome)
      scored = r.outcome->final_text;
    else if (!r.samples.empty())
      scored = r.samples.front().text;
    else
      throw Error(Errc::EmptyList, "record '" + r.prompt.id + "' has nothing to score");
    if (normalize_answer(extractor(scored)) == normalize_answer(*r.prompt.reference_answer)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

QualitySpec parse_quality_spec(std::string_view text) {
  const auto colon = text.find(':');
  const auto head = text.substr(0, colon);
  int order = 1;
  if (colon != std::string_view::npos) {
    const std::string tail(text.substr(colon + 1));
    try {
      std::size_t used = 0;
      order = std::stoi(tail, &used);
      if (used != tail.size()) throw std::invalid_argument(tail);
    } catch (const std::exception&) {
      throw Error(Errc::ConfigError, "bad quality order in '" + std::string(text) + "'");
    }
    if (order < 1) throw Error(Errc::ConfigError, "quality order must be >= 1");
  }
  if (head == "avg" || head == "average") return {QualityMethod::Average, 1};
  if (head == "knorm") return {QualityMethod::KNorm, order};
  if (head == "cinv") return {QualityMethod::CenteredInvKNorm, order};
  throw Error(Errc::ConfigError, "unknown quality spec '" + std::string(text) + "'");
}

std::string to_string(const QualitySpec& spec) {
  switch (spec.method) {
    case QualityMethod::Average: return "avg";
    case QualityMethod::KNorm: return "knorm:" + std::to_string(spec.order);
    case QualityMethod::CenteredInvKNorm: return "cinv:" + std::to_string(spec.order);
  }
  return "avg";
}

std::vector<QualitySpec> parse_quality_specs(std::string_view comma_list) {
  std::vector<QualitySpec> specs;
  std::size_t pos = 0;
  while (pos <= comma_list.size()) {
    const auto comma = comma_list.find(',', pos);
    auto item = comma_list.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) specs.push_back(parse_quality_spec(item));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  if (specs.empty()) throw Error(Errc::ConfigError, "no quality specs given");
  return specs;
}

QualityReport quality_report(std::vector<double> per_model, const QualitySpec& spec) {
  QualityReport report{std::move(per_model), spec, 0.0};
  report.value = quality(std::span<const double>(report.per_model), spec);
  return report;
}

}  // namespace moa
