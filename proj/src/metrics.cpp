#include "alab/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "alab/corpus.hpp"
#include "alab/errors.hpp"

namespace alab {

namespace {

// Byte length of a whitespace sequence starting at s[i], or 0.
std::size_t space_len(std::string_view s, std::size_t i) {
  const auto b = [&](std::size_t k) { return i + k < s.size() ? static_cast<unsigned char>(s[i + k]) : 0u; };
  const unsigned c = b(0);
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') return 1;
  if (c == 0xC2 && (b(1) == 0x85 || b(1) == 0xA0)) return 2;
  if (c == 0xE1 && b(1) == 0x9A && b(2) == 0x80) return 3;
  if (c == 0xE2 && b(1) == 0x80 && ((b(2) >= 0x80 && b(2) <= 0x8A) || b(2) == 0xA8 || b(2) == 0xA9 || b(2) == 0xAF)) {
    return 3;
  }
  if (c == 0xE2 && b(1) == 0x81 && b(2) == 0x9F) return 3;
  if (c == 0xE3 && b(1) == 0x80 && b(2) == 0x80) return 3;
  return 0;
}

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

std::string strip_punct(std::string_view w) {
  while (!w.empty() && is_punct(w.front())) w.remove_prefix(1);
  while (!w.empty() && is_punct(w.back())) w.remove_suffix(1);
  return std::string(w);
}

// Whitespace split without any other normalization.
std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  std::size_t start = 0;
  while (i < text.size()) {
    const std::size_t sl = space_len(text, i);
    if (sl) {
      if (i > start) out.push_back(text.substr(start, i - start));
      i += sl;
      start = i;
    } else {
      ++i;
    }
  }
  if (text.size() > start) out.push_back(text.substr(start));
  return out;
}

std::string join(std::span<const std::string> words, std::size_t from, std::size_t n) {
  std::string key;
  for (std::size_t k = 0; k < n; ++k) {
    if (k) key += '\x1f';
    key += words[from + k];
  }
  return key;
}

std::unordered_map<std::string, std::size_t> ngram_counts(std::span<const std::string> w, std::size_t n) {
  std::unordered_map<std::string, std::size_t> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) ++out[join(w, i, n)];
  return out;
}

double f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

double rouge_n(std::span<const std::string> ref, std::span<const std::string> hyp, std::size_t n) {
  const auto rc = ngram_counts(ref, n);
  const auto hc = ngram_counts(hyp, n);
  std::size_t ref_total = ref.size() >= n ? ref.size() - n + 1 : 0;
  std::size_t hyp_total = hyp.size() >= n ? hyp.size() - n + 1 : 0;
  if (ref_total == 0 || hyp_total == 0) return 0.0;
  std::size_t overlap = 0;
  for (const auto& [g, c] : hc) {
    auto it = rc.find(g);
    if (it != rc.end()) overlap += std::min(c, it->second);
  }
  return f1(static_cast<double>(overlap) / static_cast<double>(hyp_total),
            static_cast<double>(overlap) / static_cast<double>(ref_total));
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  for (std::string_view w : split_words(text)) {
    std::string t = strip_punct(w);
    if (t.empty()) continue;
    for (char& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Fragment> extract_fragments(std::span<const std::string> article, std::span<const std::string> summary) {
  std::vector<Fragment> out;
  std::size_t i = 0;
  while (i < summary.size()) {
    std::size_t best_len = 0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < article.size(); ++j) {
      std::size_t l = 0;
      while (i + l < summary.size() && j + l < article.size() && summary[i + l] == article[j + l]) ++l;
      if (l > best_len) {
        best_len = l;
        best_j = j;
      }
    }
    if (best_len > 0) {
      out.push_back({i, best_j, best_len});
      i += best_len;
    } else {
      ++i;
    }
  }
  return out;
}

double coverage(std::span<const Fragment> fragments, std::size_t summary_len) {
  if (summary_len == 0) throw UndefinedMetricError("coverage of an empty summary");
  std::size_t sum = 0;
  for (const auto& f : fragments) sum += f.length;
  return static_cast<double>(sum) / static_cast<double>(summary_len);
}

double density(std::span<const Fragment> fragments, std::size_t summary_len) {
  if (summary_len == 0) throw UndefinedMetricError("density of an empty summary");
  std::size_t sum = 0;
  for (const auto& f : fragments) sum += f.length * f.length;
  return static_cast<double>(sum) / static_cast<double>(summary_len);
}

double overlap_precision(std::span<const std::string> article, std::span<const std::string> summary) {
  if (summary.size() < 3) {
    throw UndefinedMetricError("overlap precision needs at least 3 summary tokens, got " +
                               std::to_string(summary.size()));
  }
  double total = 0.0;
  for (std::size_t n : {std::size_t{2}, std::size_t{3}}) {
    std::unordered_set<std::string> grams;
    for (std::size_t i = 0; i + n <= article.size(); ++i) grams.insert(join(article, i, n));
    const std::size_t positions = summary.size() - n + 1;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < positions; ++i) hits += grams.count(join(summary, i, n));
    total += static_cast<double>(hits) / static_cast<double>(positions);
  }
  return total / 2.0;
}

LengthCompression length_and_compression(std::span<const std::string> article, std::span<const std::string> summary) {
  if (article.empty()) throw UndefinedMetricError("compression ratio against an empty article");
  return {summary.size(), static_cast<double>(summary.size()) / static_cast<double>(article.size())};
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScores rouge(std::span<const std::string> reference, std::span<const std::string> hypothesis) {
  if (reference.empty()) throw UndefinedMetricError("ROUGE against an empty reference");
  RougeScores out;
  out.r1 = rouge_n(reference, hypothesis, 1);
  out.r2 = rouge_n(reference, hypothesis, 2);
  if (!hypothesis.empty()) {
    const double l = static_cast<double>(lcs_length(reference, hypothesis));
    out.rl = f1(l / static_cast<double>(hypothesis.size()), l / static_cast<double>(reference.size()));
  }
  return out;
}

double specificity_proxy(std::span<const std::string> words) {
  if (words.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string& w = words[i];
    const bool digit = std::any_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
    const bool proper = i > 0 && std::isupper(static_cast<unsigned char>(w.front()));
    if (digit || proper || w.size() >= 8) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(words.size());
}

double specificity(std::string_view summary, const SentenceScorer& scorer) {
  double total = 0.0;
  std::size_t sentences = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= summary.size(); ++i) {
    if (i < summary.size() && summary[i] != '.' && summary[i] != '!' && summary[i] != '?') continue;
    std::vector<std::string> words;
    for (std::string_view w : split_words(summary.substr(start, i - start))) {
      std::string t = strip_punct(w);
      if (!t.empty()) words.push_back(std::move(t));
    }
    start = i + 1;
    if (words.empty()) continue;
    total += scorer(words);
    ++sentences;
  }
  if (sentences == 0) throw UndefinedMetricError("specificity of a summary with no sentences");
  return total / static_cast<double>(sentences);
}

std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::length: return "length";
    case Metric::compression: return "compression";
    case Metric::coverage: return "coverage";
    case Metric::density: return "density";
    case Metric::overlap: return "overlap_precision";
    case Metric::rouge1: return "rouge1";
    case Metric::rouge2: return "rouge2";
    case Metric::rougeL: return "rougeL";
    case Metric::specificity: return "specificity";
  }
  return "?";
}

std::string_view metric_title(Metric m) {
  switch (m) {
    case Metric::length: return "Length";
    case Metric::compression: return "Comp. Ratio";
    case Metric::coverage: return "Coverage";
    case Metric::density: return "Density";
    case Metric::overlap: return "Overlap Precision";
    case Metric::rouge1: return "ROUGE-1";
    case Metric::rouge2: return "ROUGE-2";
    case Metric::rougeL: return "ROUGE-L";
    case Metric::specificity: return "Specificity";
  }
  return "?";
}

SampleMetrics measure(std::string_view article, std::string_view summary, std::optional<std::string_view> reference,
                      const SentenceScorer& scorer) {
  const Tokens a = tokenize(article);
  const Tokens s = tokenize(summary);
  SampleMetrics m;
  auto attempt = [](std::optional<double>& slot, auto&& fn) {
    try {
      slot = fn();
    } catch (const UndefinedMetricError&) {
      slot.reset();
    }
  };
  attempt(m[Metric::length], [&] { return static_cast<double>(s.size()); });
  attempt(m[Metric::compression], [&] { return length_and_compression(a, s).ratio; });
  const auto frags = extract_fragments(a, s);
  attempt(m[Metric::coverage], [&] { return coverage(frags, s.size()); });
  attempt(m[Metric::density], [&] { return density(frags, s.size()); });
  attempt(m[Metric::overlap], [&] { return overlap_precision(a, s); });
  if (reference) {
    const Tokens r = tokenize(*reference);
    if (!r.empty()) {
      const RougeScores rs = rouge(r, s);
      m[Metric::rouge1] = rs.r1;
      m[Metric::rouge2] = rs.r2;
      m[Metric::rougeL] = rs.rl;
    }
  }
  attempt(m[Metric::specificity], [&] { return specificity(summary, scorer); });
  return m;
}

namespace {

// (kind order, value rank, raw) so buckets print in table order.
struct BucketKey {
  int kind = 99;
  std::size_t rank = 0;
  std::string raw;

  explicit BucketKey(const std::string& bucket) : raw(bucket) {
    const auto eq = bucket.find('=');
    if (eq == std::string::npos || bucket.find(',') != std::string::npos) return;
    try {
      ControlAttribute a{parse_attribute_kind(bucket.substr(0, eq)), bucket.substr(eq + 1)};
      kind = static_cast<int>(a.kind);
      rank = a.value_rank();
    } catch (const Error&) {
    }
  }
  bool operator<(const BucketKey& o) const { return std::tie(kind, rank, raw) < std::tie(o.kind, o.rank, o.raw); }
};

struct Accum {
  std::size_t n = 0;
  std::array<double, kMetricCount> sum{};
  std::array<std::size_t, kMetricCount> count{};

  void add(const SampleMetrics& m) {
    ++n;
    for (std::size_t k = 0; k < kMetricCount; ++k) {
      if (m.values[k]) {
        sum[k] += *m.values[k];
        ++count[k];
      }
    }
  }

  MetricReport finish(std::string bucket) const {
    MetricReport r;
    r.bucket = std::move(bucket);
    r.n = n;
    for (std::size_t k = 0; k < kMetricCount; ++k) {
      r.stats[k].count = count[k];
      r.stats[k].mean = count[k] ? sum[k] / static_cast<double>(count[k]) : 0.0;
    }
    return r;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.emplace_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::string pad(std::string s, std::size_t w, bool left) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

std::string render_aligned(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::string out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      if (c) out += "  ";
      out += pad(rows[i][c], c + 1 == rows[i].size() ? 0 : width[c], c == 0);
    }
    out += '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
      out += std::string(total, '-') + '\n';
    }
  }
  return out;
}

}  // namespace

std::vector<MetricReport> aggregate(std::span<const EvalSample> samples) {
  std::vector<MetricReport> out;
  if (samples.empty()) return out;
  std::map<BucketKey, Accum> buckets;
  Accum overall;
  for (const auto& s : samples) {
    buckets[BucketKey(s.bucket)].add(s.metrics);
    overall.add(s.metrics);
  }
  for (const auto& [key, acc] : buckets) out.push_back(acc.finish(key.raw));
  out.push_back(overall.finish(std::string(kOverallBucket)));
  return out;
}

std::string report_csv(std::span<const MetricReport> reports) {
  std::string out = "bucket,n";
  for (Metric m : kAllMetrics) {
    out += ',';
    out += metric_name(m);
    out += ',';
    out += metric_name(m);
    out += "_n";
  }
  out += '\n';
  for (const auto& r : reports) {
    out += r.bucket + ',' + std::to_string(r.n);
    for (Metric m : kAllMetrics) {
      out += ',';
      if (r[m].count) out += fmt("%.17g", r[m].mean);
      out += ',' + std::to_string(r[m].count);
    }
    out += '\n';
  }
  return out;
}

std::vector<MetricReport> parse_report_csv(std::string_view text) {
  std::vector<MetricReport> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 2 + 2 * kMetricCount) {
      throw ParseError("expected " + std::to_string(2 + 2 * kMetricCount) + " columns, got " +
                           std::to_string(cells.size()),
                       line_no);
    }
    if (line_no == 1) {
      if (cells[0] != "bucket") throw ParseError("missing report header", line_no);
      continue;
    }
    MetricReport r;
    r.bucket = cells[0];
    try {
      r.n = std::stoull(cells[1]);
      for (std::size_t k = 0; k < kMetricCount; ++k) {
        const std::string& v = cells[2 + 2 * k];
        r.stats[k].mean = v.empty() ? 0.0 : std::stod(v);
        r.stats[k].count = std::stoull(cells[3 + 2 * k]);
      }
    } catch (const std::logic_error&) {
      throw ParseError("non-numeric report cell", line_no);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string report_table(std::span<const MetricReport> reports) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"bucket", "n"};
  for (Metric m : kAllMetrics) header.emplace_back(metric_title(m));
  rows.push_back(header);
  for (const auto& r : reports) {
    std::vector<std::string> row{r.bucket, std::to_string(r.n)};
    for (Metric m : kAllMetrics) row.push_back(r[m].count ? fmt("%.4f", r[m].mean) : "-");
    rows.push_back(std::move(row));
  }
  return render_aligned(rows);
}

std::string grouped_table(std::span<const ReportRow> rows, std::span<const Metric> metrics, bool csv) {
  // Union of attribute groups over all rows: kind -> ordered bucket values.
  std::map<int, std::map<BucketKey, std::string>> groups;
  for (const auto& row : rows) {
    for (const auto& r : row.reports) {
      BucketKey key(r.bucket);
      if (key.kind == 99) continue;
      groups[key.kind].emplace(key, r.bucket.substr(r.bucket.find('=') + 1));
    }
  }
  auto abbrev = [](const std::map<BucketKey, std::string>& values) {
    std::string s;
    for (const auto& [k, v] : values) {
      if (!s.empty()) s += '/';
      s += static_cast<char>(std::toupper(static_cast<unsigned char>(v.front())));
    }
    return s;
  };

  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{"method", "config"};
  for (const auto& [kind, values] : groups) {
    for (Metric m : metrics) header.push_back(std::string(metric_title(m)) + "(" + abbrev(values) + ")");
  }
  table.push_back(header);
  for (const auto& row : rows) {
    std::vector<std::string> cells{row.method, row.config};
    for (const auto& [kind, values] : groups) {
      for (Metric m : metrics) {
        std::string cell;
        for (const auto& [key, v] : values) {
          if (!cell.empty()) cell += '/';
          auto it = std::find_if(row.reports.begin(), row.reports.end(),
                                 [&](const MetricReport& r) { return r.bucket == key.raw; });
          cell += it != row.reports.end() && (*it)[m].count ? fmt("%.2f", (*it)[m].mean) : "-";
        }
        cells.push_back(std::move(cell));
      }
    }
    table.push_back(std::move(cells));
  }

  if (!csv) return render_aligned(table);
  std::string out;
  for (const auto& r : table) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) out += ',';
      out += r[c];
    }
    out += '\n';
  }
  return out;
}

}  // namespace alab
