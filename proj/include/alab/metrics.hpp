#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace alab {

using Tokens = std::vector<std::string>;

// Lowercase (ASCII), split on whitespace (ASCII and the Unicode space
// separators), strip leading/trailing ASCII punctuation, drop empties.
// Idempotent: tokenize(join(tokenize(x))) == tokenize(x).
Tokens tokenize(std::string_view text);

struct Fragment {
  std::size_t summary_start = 0;
  std::size_t article_start = 0;
  std::size_t length = 0;
  bool operator==(const Fragment&) const = default;
};

// Greedy longest-match scan; ties broken by smallest article index.
std::vector<Fragment> extract_fragments(std::span<const std::string> article, std::span<const std::string> summary);

// (sum l) / |S| and (sum l^2) / |S|. Empty summary is undefined.
double coverage(std::span<const Fragment> fragments, std::size_t summary_len);
double density(std::span<const Fragment> fragments, std::size_t summary_len);

// Mean of 2-gram and 3-gram positional containment. Needs |S| >= 3.
double overlap_precision(std::span<const std::string> article, std::span<const std::string> summary);

struct LengthCompression {
  std::size_t length = 0;
  double ratio = 0.0;
};
LengthCompression length_and_compression(std::span<const std::string> article, std::span<const std::string> summary);

struct RougeScores {
  double r1 = 0.0;
  double r2 = 0.0;
  double rl = 0.0;
};
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
RougeScores rouge(std::span<const std::string> reference, std::span<const std::string> hypothesis);

// Scores one sentence given its raw (case-preserving, punctuation-stripped) words.
using SentenceScorer = std::function<double(std::span<const std::string>)>;

// Fraction of words that contain a digit, are capitalized past the first word
// of the sentence, or are at least 8 characters long. A heuristic stand-in for
// a trained specificity model.
double specificity_proxy(std::span<const std::string> words);

// Macro average of the scorer over sentences split on . ! ?.
double specificity(std::string_view summary, const SentenceScorer& scorer = specificity_proxy);

enum class Metric { length, compression, coverage, density, overlap, rouge1, rouge2, rougeL, specificity };
inline constexpr std::size_t kMetricCount = 9;
inline constexpr std::array<Metric, kMetricCount> kAllMetrics{
    Metric::length, Metric::compression, Metric::coverage, Metric::density,    Metric::overlap,
    Metric::rouge1, Metric::rouge2,      Metric::rougeL,   Metric::specificity};
std::string_view metric_name(Metric m);
std::string_view metric_title(Metric m);

// Raw per-sample values; nullopt where the metric is undefined for the sample.
struct SampleMetrics {
  std::array<std::optional<double>, kMetricCount> values{};
  std::optional<double>& operator[](Metric m) { return values[static_cast<std::size_t>(m)]; }
  const std::optional<double>& operator[](Metric m) const { return values[static_cast<std::size_t>(m)]; }
};

// ROUGE is computed only when a reference is given.
SampleMetrics measure(std::string_view article, std::string_view summary, std::optional<std::string_view> reference,
                      const SentenceScorer& scorer = specificity_proxy);

struct EvalSample {
  std::string bucket;  // e.g. "length=short"
  SampleMetrics metrics;
};

struct MetricStat {
  double mean = 0.0;
  std::size_t count = 0;
};

struct MetricReport {
  std::string bucket;
  std::size_t n = 0;
  std::array<MetricStat, kMetricCount> stats{};
  const MetricStat& operator[](Metric m) const { return stats[static_cast<std::size_t>(m)]; }
  MetricStat& operator[](Metric m) { return stats[static_cast<std::size_t>(m)]; }
};

inline constexpr std::string_view kOverallBucket = "Overall";

// One report per bucket (sorted by attribute kind, then canonical value
// order), followed by an Overall row pooled over every sample.
std::vector<MetricReport> aggregate(std::span<const EvalSample> samples);

// bucket,n,<metric>,<metric>_n,... with %.17g values; empty cell when count is 0.
std::string report_csv(std::span<const MetricReport> reports);
std::vector<MetricReport> parse_report_csv(std::string_view text);
// Aligned text, one row per bucket.
std::string report_table(std::span<const MetricReport> reports);

// One row of a combined table: a labeled evaluation run.
struct ReportRow {
  std::string method;
  std::string config;
  std::vector<MetricReport> reports;
};

// Columns are metrics; each cell joins the per-bucket means of one attribute
// kind with '/', e.g. header "Length(S/N/L)" and cell "8.0/16.1/31.7".
std::string grouped_table(std::span<const ReportRow> rows, std::span<const Metric> metrics, bool csv);

}  // namespace alab
