#include <cmath>

#include "doctest.h"

#include "alab/errors.hpp"
#include "alab/metrics.hpp"
#include "alab/prng.hpp"

using namespace alab;

namespace {

Tokens random_words(Prng& rng, std::size_t max_len, std::size_t alphabet) {
  Tokens out(rng.below(max_len + 1));
  for (auto& w : out) w = std::string(1, static_cast<char>('a' + rng.below(alphabet)));
  return out;
}

// Tries every start in the article and extends each match by direct comparison.
std::vector<Fragment> brute_force_fragments(const Tokens& a, const Tokens& s) {
  std::vector<Fragment> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t best_len = 0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      std::size_t len = 0;
      while (i + len < s.size() && j + len < a.size() && s[i + len] == a[j + len]) ++len;
      if (len > best_len) {
        best_len = len;
        best_j = j;
      }
    }
    if (best_len == 0) {
      ++i;
      continue;
    }
    out.push_back({i, best_j, best_len});
    i += best_len;
  }
  return out;
}

std::size_t lcs_table(const Tokens& a, const Tokens& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
    }
  }
  return t[a.size()][b.size()];
}

}  // namespace

TEST_CASE("tokenize") {
  CHECK(tokenize("The cat, sat!  \"Down\"") == Tokens{"the", "cat", "sat", "down"});
  CHECK(tokenize("a b c") == Tokens{"a", "b", "c"});
  CHECK(tokenize(" ... ").empty());
  CHECK(tokenize("don't U.S.") == Tokens{"don't", "u.s"});
  Prng rng(3);
  const std::string chars = "aB .,!?'\"-x\t\n";
  for (int n = 0; n < 300; ++n) {
    std::string text;
    for (std::size_t k = rng.below(30); k > 0; --k) text += chars[rng.below(chars.size())];
    const Tokens once = tokenize(text);
    std::string joined;
    for (const auto& w : once) joined += w + " ";
    CHECK(tokenize(joined) == once);
  }
}

TEST_CASE("fragment worked examples") {
  const Tokens a = tokenize("a b c d e");
  const Tokens s = tokenize("a b c x d e");
  const auto frags = extract_fragments(a, s);
  CHECK(frags == std::vector<Fragment>{{0, 0, 3}, {4, 3, 2}});
  CHECK(std::abs(coverage(frags, s.size()) - 5.0 / 6.0) < 1e-12);
  CHECK(std::abs(density(frags, s.size()) - 13.0 / 6.0) < 1e-12);

  CHECK(extract_fragments(a, a) == std::vector<Fragment>{{0, 0, 5}});
  CHECK(coverage(extract_fragments(a, a), 5) == 1.0);
  CHECK(density(extract_fragments(a, a), 5) == 5.0);
  const Tokens other = tokenize("p q r");
  CHECK(extract_fragments(a, other).empty());
  CHECK(coverage({}, 3) == 0.0);
  CHECK(density({}, 3) == 0.0);
  CHECK_THROWS_AS(coverage({}, 0), UndefinedMetricError);
  CHECK_THROWS_AS(density({}, 0), UndefinedMetricError);
}

TEST_CASE("fragments match the brute force oracle") {
  Prng rng(2024);
  for (int n = 0; n < 1000; ++n) {
    const Tokens a = random_words(rng, 12, 4);
    const Tokens s = random_words(rng, 8, 5);
    CHECK(extract_fragments(a, s) == brute_force_fragments(a, s));
  }
}

TEST_CASE("overlap precision") {
  CHECK(std::abs(overlap_precision(tokenize("a b c d"), tokenize("a b c x")) - 7.0 / 12.0) < 1e-12);
  CHECK(overlap_precision(tokenize("x a b c d y"), tokenize("a b c d")) == 1.0);
  CHECK(overlap_precision(tokenize("a b c d"), tokenize("p q r s")) == 0.0);
  CHECK_THROWS_AS(overlap_precision(tokenize("a b c"), tokenize("a b")), UndefinedMetricError);
}

TEST_CASE("length and compression") {
  Tokens art(500, "w");
  Tokens sum(50, "w");
  const auto lc = length_and_compression(art, sum);
  CHECK(lc.length == 50);
  CHECK(lc.ratio == 0.1);
  CHECK(length_and_compression(art, art).ratio == 1.0);
  const auto empty = length_and_compression(art, {});
  CHECK(empty.length == 0);
  CHECK(empty.ratio == 0.0);
  CHECK_THROWS_AS(length_and_compression({}, sum), UndefinedMetricError);
}

TEST_CASE("rouge") {
  const RougeScores r = rouge(tokenize("the cat sat"), tokenize("the cat"));
  CHECK(std::abs(r.r1 - 0.8) < 1e-12);
  const RougeScores same = rouge(tokenize("a b c a"), tokenize("a b c a"));
  CHECK(same.r1 == 1.0);
  CHECK(same.r2 == 1.0);
  CHECK(same.rl == 1.0);
  // Clipped counts: the repeated "the" in the hypothesis matches only once.
  CHECK(std::abs(rouge(tokenize("the cat"), tokenize("the the")).r1 - 0.5) < 1e-12);
  CHECK(rouge(tokenize("a b"), tokenize("c d")).r1 == 0.0);
  CHECK_THROWS_AS(rouge({}, tokenize("a")), UndefinedMetricError);
}

TEST_CASE("lcs and rouge-l match the dp table") {
  Prng rng(77);
  for (int n = 0; n < 500; ++n) {
    const Tokens a = random_words(rng, 15, 4);
    const Tokens b = random_words(rng, 15, 4);
    const std::size_t want = lcs_table(a, b);
    CHECK(lcs_length(a, b) == want);
    if (a.empty()) continue;
    const double p = b.empty() ? 0.0 : static_cast<double>(want) / b.size();
    const double rec = static_cast<double>(want) / a.size();
    const double f1 = p + rec == 0.0 ? 0.0 : 2 * p * rec / (p + rec);
    CHECK(rouge(a, b).rl == f1);
  }
}

TEST_CASE("specificity") {
  CHECK(specificity("He ran.") == 0.0);
  const SentenceScorer constant = [](std::span<const std::string>) { return 0.7; };
  CHECK(std::abs(specificity("One. Two three! Four?", constant) - 0.7) < 1e-15);
  CHECK(specificity("He ran", constant) == 0.7);
  const std::vector<std::string> words{"In", "2024", "Kathmandu", "approved", "construction"};
  CHECK(std::abs(specificity_proxy(words) - 4.0 / 5.0) < 1e-12);
  CHECK(std::abs(specificity("In 2024 Kathmandu approved construction.") - 4.0 / 5.0) < 1e-12);
  CHECK(std::abs(specificity("He ran. In 2024 Kathmandu approved construction.") - 0.4) < 1e-12);
  CHECK_THROWS_AS(specificity("..."), UndefinedMetricError);
  CHECK_THROWS_AS(specificity(""), UndefinedMetricError);
}

TEST_CASE("case and punctuation invariance") {
  const std::string art = "The Quick brown fox jumps over the lazy dog.";
  const SampleMetrics lower = measure(art, "the quick brown fox", std::string_view("quick fox"));
  const SampleMetrics upper = measure(art, "THE QUICK, BROWN FOX!", std::string_view("Quick fox"));
  for (Metric m : kAllMetrics) {
    if (m == Metric::specificity) continue;
    CHECK(lower[m] == upper[m]);
  }
  CHECK(lower[Metric::length] == 4.0);
  CHECK(lower[Metric::coverage] == 1.0);
}

TEST_CASE("measure marks undefined metrics") {
  const SampleMetrics m = measure("a b c d", "a b", std::nullopt);
  CHECK(m[Metric::length] == 2.0);
  CHECK_FALSE(m[Metric::overlap].has_value());
  CHECK_FALSE(m[Metric::rouge1].has_value());
  const SampleMetrics empty = measure("a b c d", "", std::string_view("a"));
  CHECK_FALSE(empty[Metric::coverage].has_value());
  CHECK_FALSE(empty[Metric::specificity].has_value());
  CHECK(empty[Metric::length] == 0.0);
}

TEST_CASE("aggregate and reports") {
  std::vector<EvalSample> samples;
  auto add = [&](std::string bucket, double len, std::optional<double> overlap) {
    EvalSample s{std::move(bucket), {}};
    s.metrics[Metric::length] = len;
    s.metrics[Metric::overlap] = overlap;
    samples.push_back(s);
  };
  add("length=long", 30.0, 0.5);
  add("length=short", 8.0, std::nullopt);
  add("length=short", 10.0, 0.25);
  add("length=normal", 16.0, 1.0);

  const auto reports = aggregate(samples);
  REQUIRE(reports.size() == 4);
  CHECK(reports[0].bucket == "length=short");
  CHECK(reports[1].bucket == "length=normal");
  CHECK(reports[2].bucket == "length=long");
  CHECK(reports[3].bucket == kOverallBucket);
  CHECK(reports[0].n == 2);
  CHECK(reports[0][Metric::length].mean == 9.0);
  CHECK(reports[0][Metric::overlap].count == 1);
  CHECK(reports[0][Metric::overlap].mean == 0.25);
  // Overall pools samples rather than averaging bucket means.
  CHECK(reports[3].n == 4);
  CHECK(reports[3][Metric::length].mean == 16.0);
  CHECK(reports[3][Metric::overlap].mean == (0.5 + 0.25 + 1.0) / 3.0);
  CHECK(reports[3][Metric::coverage].count == 0);

  const std::string csv = report_csv(reports);
  CHECK(csv.rfind("bucket,n,length,length_n,", 0) == 0);
  const auto parsed = parse_report_csv(csv);
  CHECK(report_csv(parsed) == csv);
  CHECK(report_table(reports).find("length=normal") != std::string::npos);

  const std::vector<EvalSample> one{samples[0]};
  const auto single = aggregate(one);
  CHECK(single[0][Metric::length].mean == 30.0);
  CHECK(aggregate({}).empty());
}

TEST_CASE("grouped table uses S/N/L columns") {
  std::vector<EvalSample> samples;
  for (auto [bucket, len] : {std::pair{"length=short", 8.0}, {"length=normal", 16.0}, {"length=long", 32.0}}) {
    EvalSample s{bucket, {}};
    s.metrics[Metric::length] = len;
    samples.push_back(s);
  }
  const std::vector<ReportRow> rows{{"SFT", "joint", aggregate(samples)}};
  const std::vector<Metric> metrics{Metric::length};
  const std::string table = grouped_table(rows, metrics, false);
  CHECK(table.find("Length(S/N/L)") != std::string::npos);
  CHECK(table.find("8.00/16.00/32.00") != std::string::npos);
  const std::string csv = grouped_table(rows, metrics, true);
  CHECK(csv.find("SFT,joint,") != std::string::npos);
}
