#include "moa/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <iostream>
#include <sstream>

namespace moa {

RegressionFit ols_fit(std::span<const SweepPoint> points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::VectorXd q(n), d(n), t(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    q(i) = p.quality;
    d(i) = p.diversity;
    t(i) = p.performance;
  }
  return ols_fit(q, d, t);
}

std::string_view to_string(RSquareBand band) noexcept {
  switch (band) {
    case RSquareBand::VeryWeak: return "Very weak";
    case RSquareBand::Weak: return "Weak";
    case RSquareBand::Median: return "Median";
    case RSquareBand::Strong: return "Strong";
    case RSquareBand::VeryStrong: return "Very Strong";
  }
  return "Very weak";
}

RSquareBand classify_r_square(double r2) {
  if (r2 < 0.0) {
    std::cerr << "warning: negative R^2 (" << r2 << ") classified as Very weak\n";
    return RSquareBand::VeryWeak;
  }
  if (r2 < 0.2) return RSquareBand::VeryWeak;
  if (r2 < 0.4) return RSquareBand::Weak;
  if (r2 < 0.6) return RSquareBand::Median;
  if (r2 < 0.8) return RSquareBand::Strong;
  return RSquareBand::VeryStrong;
}

std::optional<RSquareBand> SweepRow::band() const {
  if (!fit) return std::nullopt;
  return classify_r_square(fit->r_square);
}

std::vector<SweepRow> sweep_report(std::span<const SweepPoint> points, std::span<const QualitySpec> specs) {
  std::vector<QualitySpec> ordered(specs.begin(), specs.end());
  std::sort(ordered.begin(), ordered.end());
  ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());

  std::vector<SweepRow> rows;
  for (const auto& spec : ordered) {
    SweepRow row{spec, std::nullopt, {}};
    try {
      std::vector<SweepPoint> recomputed(points.begin(), points.end());
      for (auto& p : recomputed) {
        if (!p.per_model.empty())
          p.quality = quality(std::span<const double>(p.per_model), spec);
        else if (spec.method != QualityMethod::Average && spec.order != 1)
          throw Error(Errc::InsufficientData,
                      "point '" + p.config_code + "' lacks per-model accuracies for " + to_string(spec));
      }
      row.fit = ols_fit(recomputed);
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_real(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

namespace {

double parse_real(std::string_view field, int line_no) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
    field.remove_suffix(1);
  double value = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw Error(Errc::ParseError,
                "line " + std::to_string(line_no) + ": bad number '" + std::string(field) + "'", line_no);
  return value;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(sep, pos);
    out.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace

std::vector<SweepPoint> parse_sweep_csv(std::string_view text) {
  std::vector<SweepPoint> points;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  bool has_per_model = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (!header_seen) {
      header_seen = true;
      const bool base = fields.size() >= 5 && fields[0] == "config" && fields[1] == "quality" &&
                        fields[2] == "diversity" && fields[3] == "performance" &&
                        fields[4] == "temperature";
      has_per_model = fields.size() == 6 && fields[5] == "per_model";
      if (!base || (fields.size() != 5 && !has_per_model))
        throw Error(Errc::ParseError,
                    "line 1: expected header config,quality,diversity,performance,temperature[,per_model]", 1);
      continue;
    }
    const std::size_t expected = has_per_model ? 6 : 5;
    if (fields.size() != expected)
      throw Error(Errc::ParseError,
                  "line " + std::to_string(line_no) + ": expected " + std::to_string(expected) + " fields",
                  line_no);
    SweepPoint p;
    p.config_code = std::string(fields[0]);
    p.quality = parse_real(fields[1], line_no);
    p.diversity = parse_real(fields[2], line_no);
    p.performance = parse_real(fields[3], line_no);
    p.temperature = parse_real(fields[4], line_no);
    if (has_per_model && !fields[5].empty())
      for (auto item : split(fields[5], ';')) p.per_model.push_back(parse_real(item, line_no));
    points.push_back(std::move(p));
  }
  if (!header_seen) throw Error(Errc::ParseError, "empty sweep CSV", 0);
  return points;
}

std::string format_sweep_csv(std::span<const SweepPoint> points) {
  std::string out = "config,quality,diversity,performance,temperature,per_model\n";
  for (const auto& p : points) {
    out += p.config_code + ',' + format_real(p.quality) + ',' + format_real(p.diversity) + ',' +
           format_real(p.performance) + ',' + format_real(p.temperature) + ',';
    for (std::size_t i = 0; i < p.per_model.size(); ++i) {
      if (i > 0) out += ';';
      out += format_real(p.per_model[i]);
    }
    out += '\n';
  }
  return out;
}

nlohmann::json fit_to_json(const RegressionFit& fit) {
  return {{"alpha", fit.alpha},
          {"beta", fit.beta},
          {"gamma", fit.gamma},
          {"alpha_se", fit.alpha_se},
          {"beta_se", fit.beta_se},
          {"gamma_se", fit.gamma_se},
          {"alpha_p", fit.alpha_p},
          {"beta_p", fit.beta_p},
          {"gamma_p", fit.gamma_p},
          {"uncertainty", "standard_error"},
          {"r_square", fit.r_square},
          {"band", std::string(to_string(classify_r_square(fit.r_square)))},
          {"n_points", fit.n_points},
          {"standardization",
           {{"quality_mean", fit.quality_mean},
            {"quality_std", fit.quality_std},
            {"diversity_mean", fit.diversity_mean},
            {"diversity_std", fit.diversity_std},
            {"std_divisor", "n"}}}};
}

nlohmann::json sweep_report_json(std::span<const SweepRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json j{{"spec", to_string(row.spec)}};
    if (row.fit)
      j["fit"] = fit_to_json(*row.fit);
    else
      j["error"] = row.error;
    out.push_back(std::move(j));
  }
  return out;
}

std::string sweep_table_csv(std::span<const SweepRow> rows) {
  std::string out = "spec,alpha,beta,r_square,band\n";
  for (const auto& row : rows) {
    out += to_string(row.spec);
    if (row.fit) {
      out += ',' + format_real(row.fit->alpha) + ',' + format_real(row.fit->beta) + ',' +
             format_real(row.fit->r_square) + ',' + std::string(to_string(*row.band()));
    } else {
      out += ",,,,error";
    }
    out += '\n';
  }
  return out;
}

std::string plot_csv(std::span<const SweepPoint> points) {
  std::string out = "diversity,quality,performance\n";
  for (const auto& p : points)
    out += format_real(p.diversity) + ',' + format_real(p.quality) + ',' + format_real(p.performance) + '\n';
  return out;
}

}  // namespace moa
