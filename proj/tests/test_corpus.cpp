#include <algorithm>
#include <filesystem>
#include <set>

#include "doctest.h"

#include "alab/corpus.hpp"
#include "alab/errors.hpp"
#include "alab/metrics.hpp"

using namespace alab;

namespace {

const std::string kPreamble =
    "You are an honest and to the point assistant, please follow the instruction and answer to the point. "
    "Please do not provide any irrelevant information or add any extra words than that is necessary to "
    "answer the question. Write a summary of the source text.";
const std::string kLengthShort =
    " The summary should be short in length. The length is defined in terms of number of words used in the summary.";
const std::string kExtractNormal =
    " The summary should be normal in extractiveness. Extractiveness is defined by the degree of exact copying "
    "from the source text.";
const std::string kSpecNormal =
    " The summary should be normal in specificity. Specificity is defined by the degree of detail in the summary.";
const std::string kTail = " The source text is given below. ";

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

MacsumRecord rec(std::string id, std::string source, AttributeKind kind, std::string value, std::string summary) {
  return {std::move(id), std::move(source), {{kind, std::move(value)}}, std::move(summary)};
}

}  // namespace

TEST_CASE("attribute vocabularies") {
  CHECK(attribute_values(AttributeKind::length).size() == 3);
  CHECK(attribute_values(AttributeKind::extractiveness).size() == 3);
  CHECK(attribute_values(AttributeKind::specificity).size() == 2);
  CHECK(attribute_values(AttributeKind::topic).empty());
  CHECK(parse_attribute_kind("topic") == AttributeKind::topic);
  CHECK_THROWS_AS(parse_attribute_kind("speaker"), ScopeError);
  CHECK_THROWS_AS((ControlAttribute{AttributeKind::length, "tiny"}.validate()), ScopeError);
  CHECK_THROWS_AS((ControlAttribute{AttributeKind::topic, ""}.validate()), ScopeError);
  CHECK_NOTHROW((ControlAttribute{AttributeKind::topic, "Nepal, route"}.validate()));
}

TEST_CASE("appendix prompts byte for byte") {
  const std::string src = "Some article text.";
  const std::vector<ControlAttribute> p1{{AttributeKind::extractiveness, "normal"}};
  CHECK(render_prompt(p1, src) == kPreamble + kExtractNormal + kTail + src);

  const std::vector<ControlAttribute> p4{{AttributeKind::length, "short"}, {AttributeKind::topic, "Nepal, route"}};
  CHECK(render_prompt(p4, src) ==
        kPreamble + kLengthShort + " The summary should be focussed on the topic Nepal, route." + kTail + src);

  const std::vector<ControlAttribute> p3{{AttributeKind::extractiveness, "normal"},
                                         {AttributeKind::specificity, "normal"}};
  const std::string three = render_prompt(p3, src);
  CHECK(three == kPreamble + kExtractNormal + kSpecNormal + kTail + src);
  CHECK(count_of(three, "Extractiveness is defined") == 1);
  CHECK(count_of(three, "Specificity is defined") == 1);

  const std::vector<ControlAttribute> reversed{p3[1], p3[0]};
  CHECK(render_prompt(reversed, src) == kPreamble + kSpecNormal + kExtractNormal + kTail + src);
}

TEST_CASE("prompt scope errors and compact style") {
  const std::vector<ControlAttribute> none;
  CHECK_THROWS_AS(render_prompt(none, "x"), ScopeError);
  const std::vector<ControlAttribute> three{{AttributeKind::length, "short"},
                                            {AttributeKind::topic, "a"},
                                            {AttributeKind::specificity, "high"}};
  CHECK_THROWS_AS(render_prompt(three, "x"), ScopeError);
  CHECK_THROWS_AS(render_prompt(three, "x", PromptStyle::compact), ScopeError);

  const std::vector<ControlAttribute> two{three[0], three[1]};
  CHECK(render_prompt(two, "a b c", PromptStyle::compact) == "length=short;topic=a\na b c\n");
  CHECK(parse_prompt_style("appendix") == PromptStyle::appendix);
  CHECK_THROWS_AS(parse_prompt_style("verbose"), ConfigError);
}

TEST_CASE("preference pairs") {
  std::vector<MacsumRecord> records{
      rec("a3", "doc one", AttributeKind::length, "long", "l l l l"),
      rec("a1", "doc one", AttributeKind::length, "short", "s"),
      rec("a2", "doc one", AttributeKind::length, "normal", "n n"),
      rec("b1", "doc two", AttributeKind::specificity, "high", "Specific 2024 words"),
      rec("b2", "doc two", AttributeKind::specificity, "normal", "plain words"),
      rec("c1", "doc three", AttributeKind::length, "short", "only one"),
  };
  const PreferenceBuild built = build_preference_pairs(records);
  REQUIRE(built.pairs.size() == 8);
  CHECK(built.skipped_groups == 1);

  std::vector<std::pair<std::string, std::string>> length_pairs;
  for (const auto& p : built.pairs) {
    CHECK(p.chosen != p.rejected);
    CHECK(p.prompt.find(" " + p.value + " in ") != std::string::npos);
    if (p.kind == AttributeKind::length) length_pairs.emplace_back(p.chosen_id, p.rejected_id);
  }
  const std::vector<std::pair<std::string, std::string>> want{{"a1", "a2"}, {"a1", "a3"}, {"a2", "a1"},
                                                              {"a2", "a3"}, {"a3", "a1"}, {"a3", "a2"}};
  CHECK(length_pairs == want);

  const PreferencePair& first = built.pairs.front();
  CHECK(first.value == "short");
  CHECK(first.prompt == kPreamble + kLengthShort + kTail + "doc one");

  const std::vector<ControlAttribute> spec_normal{{AttributeKind::specificity, "normal"}};
  const auto spec_chosen_normal =
      std::find_if(built.pairs.begin(), built.pairs.end(), [](const auto& p) { return p.chosen_id == "b2"; });
  REQUIRE(spec_chosen_normal != built.pairs.end());
  CHECK(spec_chosen_normal->prompt == render_prompt(spec_normal, "doc two"));
}

TEST_CASE("pair count is k(k-1) for k values") {
  for (std::size_t k = 1; k <= 3; ++k) {
    std::vector<MacsumRecord> records;
    const auto values = attribute_values(AttributeKind::extractiveness);
    for (std::size_t i = 0; i < k; ++i) {
      records.push_back(rec("r" + std::to_string(i), "doc", AttributeKind::extractiveness, std::string(values[i]),
                            "summary " + std::to_string(i)));
    }
    CHECK(build_preference_pairs(records).pairs.size() == k * (k - 1));
  }
}

TEST_CASE("synthetic corpus") {
  const auto a = synth_corpus(SynthTask::length_control, 20, 7);
  const auto b = synth_corpus(SynthTask::length_control, 20, 7);
  const auto c = synth_corpus(SynthTask::length_control, 20, 8);
  CHECK(encode_jsonl(a) == encode_jsonl(b));
  CHECK(encode_jsonl(a) != encode_jsonl(c));
  CHECK(a.size() == 60);
  const SynthOptions opt;
  for (const auto& r : a) {
    REQUIRE(r.attributes.size() == 1);
    const std::size_t words = tokenize(r.summary).size();
    const std::string& v = r.attributes[0].value;
    if (v == "short") CHECK(words == opt.short_words);
    if (v == "normal") CHECK(words == opt.normal_words);
    if (v == "long") CHECK(words == opt.long_words);
    CHECK(tokenize(r.source).size() == opt.article_words);
  }

  const auto copy = synth_corpus(SynthTask::copy_control, 20, 7);
  CHECK(copy.size() == 40);
  for (const auto& r : copy) {
    const Tokens art = tokenize(r.source);
    const Tokens sum = tokenize(r.summary);
    const auto frags = extract_fragments(art, sum);
    if (r.attributes[0].value == "full") {
      CHECK(coverage(frags, sum.size()) == 1.0);
      CHECK(density(frags, sum.size()) == static_cast<double>(sum.size()));
    } else {
      CHECK(r.attributes[0].value == "normal");
      CHECK(std::multiset<std::string>(sum.begin(), sum.end()) ==
            std::multiset<std::string>(art.begin(), art.begin() + static_cast<std::ptrdiff_t>(sum.size())));
    }
  }
  CHECK(parse_synth_task("copy_control") == SynthTask::copy_control);
  CHECK_THROWS_AS(parse_synth_task("topic_control"), ConfigError);
}

TEST_CASE("jsonl round trip and errors") {
  const auto records = synth_corpus(SynthTask::length_control, 34, 3);
  std::vector<MacsumRecord> hundred(records.begin(), records.begin() + 100);
  hundred[5].attributes.push_back({AttributeKind::topic, "Nepal, route"});
  hundred[6].summary = "line one\nline \"two\", with commas";
  const std::string text = encode_jsonl(hundred);
  CHECK(std::count(text.begin(), text.end(), '\n') == 100);
  const auto back = decode_jsonl(text);
  CHECK(back == hundred);
  CHECK(encode_jsonl(back) == text);

  const auto path = std::filesystem::temp_directory_path() / "alab_corpus_test.jsonl";
  write_jsonl(hundred, path);
  CHECK(read_jsonl(path) == hundred);
  std::filesystem::remove(path);

  const std::string good = R"({"id":"x","source":"s","attributes":[{"kind":"length","value":"short"}],"summary":"y"})";
  const std::string no_source = R"({"id":"x","attributes":[{"kind":"length","value":"short"}],"summary":"y"})";
  try {
    decode_jsonl(good + "\n" + good + "\n" + no_source + "\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("source") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_jsonl("{not json\n"), ParseError);

  const std::string three =
      R"({"id":"x","source":"s","attributes":[{"kind":"length","value":"short"},{"kind":"topic","value":"a"},)"
      R"({"kind":"specificity","value":"high"}],"summary":"y"})";
  CHECK_THROWS_AS(decode_jsonl(three + "\n"), ScopeError);
}

TEST_CASE("preference pair jsonl round trip") {
  const auto built = build_preference_pairs(synth_corpus(SynthTask::length_control, 3, 1));
  CHECK(built.pairs.size() == 18);
  const std::string text = encode_pairs_jsonl(built.pairs);
  CHECK(decode_pairs_jsonl(text) == built.pairs);
}
