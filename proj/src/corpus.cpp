#include "alab/corpus.hpp"

#include <algorithm>
#include <array>
#include <map>
#include "json.hpp"

#include "alab/binary_io.hpp"
#include "alab/errors.hpp"
#include "alab/prng.hpp"

namespace alab {

namespace {

constexpr std::array<std::string_view, 3> kLengthValues{"short", "normal", "long"};
constexpr std::array<std::string_view, 3> kExtractValues{"normal", "high", "full"};
constexpr std::array<std::string_view, 2> kSpecificityValues{"normal", "high"};

constexpr std::string_view kPreamble =
    "You are an honest and to the point assistant, please follow the instruction and answer to the point. "
    "Please do not provide any irrelevant information or add any extra words than that is necessary to "
    "answer the question. Write a summary of the source text.";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string_view attribute_kind_name(AttributeKind k) {
  switch (k) {
    case AttributeKind::length: return "length";
    case AttributeKind::extractiveness: return "extractiveness";
    case AttributeKind::topic: return "topic";
    case AttributeKind::specificity: return "specificity";
  }
  return "?";
}

AttributeKind parse_attribute_kind(std::string_view s) {
  for (auto k : {AttributeKind::length, AttributeKind::extractiveness, AttributeKind::topic,
                 AttributeKind::specificity}) {
    if (attribute_kind_name(k) == s) return k;
  }
  throw ScopeError("unknown attribute kind \"" + std::string(s) + "\"");
}

std::span<const std::string_view> attribute_values(AttributeKind k) {
  switch (k) {
    case AttributeKind::length: return kLengthValues;
    case AttributeKind::extractiveness: return kExtractValues;
    case AttributeKind::specificity: return kSpecificityValues;
    case AttributeKind::topic: break;
  }
  return {};
}

void ControlAttribute::validate() const {
  if (kind == AttributeKind::topic) {
    if (trim(value).empty()) throw ScopeError("topic attribute needs at least one phrase");
    return;
  }
  auto values = attribute_values(kind);
  if (std::find(values.begin(), values.end(), value) == values.end()) {
    throw ScopeError("invalid " + std::string(attribute_kind_name(kind)) + " value \"" + value + "\"");
  }
}

std::size_t ControlAttribute::value_rank() const {
  auto values = attribute_values(kind);
  auto it = std::find(values.begin(), values.end(), value);
  return static_cast<std::size_t>(it - values.begin());
}

void MacsumRecord::validate() const {
  if (source.empty()) throw ScopeError("record " + id + ": empty source");
  if (summary.empty()) throw ScopeError("record " + id + ": empty summary");
  if (attributes.empty() || attributes.size() > 2) {
    throw ScopeError("record " + id + ": expected 1 or 2 attributes, got " + std::to_string(attributes.size()));
  }
  for (const auto& a : attributes) a.validate();
}

std::string_view prompt_style_name(PromptStyle s) { return s == PromptStyle::appendix ? "appendix" : "compact"; }

PromptStyle parse_prompt_style(std::string_view s) {
  if (s == "appendix") return PromptStyle::appendix;
  if (s == "compact") return PromptStyle::compact;
  throw ConfigError("prompt_style: unknown value \"" + std::string(s) + "\" (expected appendix or compact)");
}

std::string render_prompt(std::span<const ControlAttribute> attributes, std::string_view source, PromptStyle style) {
  if (attributes.empty() || attributes.size() > 2) {
    throw ScopeError("a prompt controls 1 or 2 attributes, got " + std::to_string(attributes.size()));
  }
  for (const auto& a : attributes) a.validate();

  std::string out;
  if (style == PromptStyle::compact) {
    for (std::size_t i = 0; i < attributes.size(); ++i) {
      if (i) out += ';';
      out += attribute_kind_name(attributes[i].kind);
      out += '=';
      out += attributes[i].value;
    }
    out += '\n';
    out += source;
    out += '\n';
    return out;
  }

  out = kPreamble;
  for (const auto& a : attributes) {
    switch (a.kind) {
      case AttributeKind::length:
        out += " The summary should be " + a.value +
               " in length. The length is defined in terms of number of words used in the summary.";
        break;
      case AttributeKind::extractiveness:
        out += " The summary should be " + a.value +
               " in extractiveness. Extractiveness is defined by the degree of exact copying from the source text.";
        break;
      case AttributeKind::specificity:
        out += " The summary should be " + a.value +
               " in specificity. Specificity is defined by the degree of detail in the summary.";
        break;
      case AttributeKind::topic:
        out += " The summary should be focussed on the topic " + a.value + ".";
        break;
    }
  }
  out += " The source text is given below. ";
  out += source;
  return out;
}

PreferenceBuild build_preference_pairs(std::span<const MacsumRecord> records, PromptStyle style) {
  struct Group {
    std::string source;
    AttributeKind kind;
    std::vector<const MacsumRecord*> members;
  };
  std::vector<Group> groups;
  std::map<std::pair<std::string, int>, std::size_t> index;
  for (const auto& r : records) {
    if (r.attributes.size() != 1) continue;
    const auto key = std::make_pair(r.source, static_cast<int>(r.attributes[0].kind));
    auto [it, inserted] = index.try_emplace(key, groups.size());
    if (inserted) groups.push_back({r.source, r.attributes[0].kind, {}});
    groups[it->second].members.push_back(&r);
  }

  PreferenceBuild out;
  for (auto& g : groups) {
    std::sort(g.members.begin(), g.members.end(), [](const MacsumRecord* a, const MacsumRecord* b) {
      const auto& x = a->attributes[0];
      const auto& y = b->attributes[0];
      if (x.value_rank() != y.value_rank()) return x.value_rank() < y.value_rank();
      if (x.value != y.value) return x.value < y.value;
      return a->id < b->id;
    });
    std::vector<std::string> values;
    for (const auto* m : g.members) {
      if (values.empty() || values.back() != m->attributes[0].value) values.push_back(m->attributes[0].value);
    }
    if (values.size() < 2) {
      ++out.skipped_groups;
      continue;
    }
    for (const auto* chosen : g.members) {
      const ControlAttribute& instructed = chosen->attributes[0];
      const std::string prompt = render_prompt(std::span(&instructed, 1), g.source, style);
      for (const auto* rejected : g.members) {
        if (rejected->attributes[0].value == instructed.value) continue;
        if (rejected->summary == chosen->summary) continue;
        out.pairs.push_back({prompt, chosen->summary, rejected->summary, g.kind, instructed.value, chosen->id,
                             rejected->id, g.source});
      }
    }
  }
  return out;
}

std::string_view synth_task_name(SynthTask t) {
  return t == SynthTask::length_control ? "length_control" : "copy_control";
}

SynthTask parse_synth_task(std::string_view s) {
  if (s == "length_control") return SynthTask::length_control;
  if (s == "copy_control") return SynthTask::copy_control;
  throw ConfigError("task: unknown value \"" + std::string(s) + "\" (expected length_control or copy_control)");
}

namespace {

std::string join_words(std::span<const char> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

std::vector<MacsumRecord> synth_corpus(SynthTask task, std::size_t n, std::uint64_t seed, const SynthOptions& opt) {
  if (n == 0) throw ConfigError("n: must be at least 1");
  const std::size_t longest = task == SynthTask::length_control
                                  ? std::max({opt.short_words, opt.normal_words, opt.long_words})
                                  : opt.copy_words;
  if (longest > opt.article_words || longest == 0) {
    throw ConfigError("summary spans must be nonempty and fit inside the article");
  }
  Prng rng(seed ^ (task == SynthTask::length_control ? 0x4C454EULL : 0x434F5059ULL));
  std::vector<MacsumRecord> out;
  char idbuf[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<char> words(opt.article_words);
    for (auto& w : words) w = static_cast<char>('a' + rng.below(26));
    const std::string article = join_words(words);
    std::snprintf(idbuf, sizeof idbuf, "%06zu", i);
    if (task == SynthTask::length_control) {
      const std::pair<std::string_view, std::size_t> labels[] = {
          {"short", opt.short_words}, {"normal", opt.normal_words}, {"long", opt.long_words}};
      for (const auto& [label, k] : labels) {
        out.push_back({"len-" + std::string(idbuf) + "-" + std::string(label), article,
                       {{AttributeKind::length, std::string(label)}},
                       join_words(std::span(words).first(k))});
      }
    } else {
      std::vector<char> lead(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(opt.copy_words));
      std::vector<char> shuffled = lead;
      // Reshuffle until the order differs; a span of one repeated letter gets its last word bumped.
      for (int attempt = 0; attempt < 16 && shuffled == lead; ++attempt) {
        for (std::size_t j = shuffled.size(); j > 1; --j) std::swap(shuffled[j - 1], shuffled[rng.below(j)]);
      }
      if (shuffled == lead) shuffled.back() = static_cast<char>(shuffled.back() == 'z' ? 'a' : shuffled.back() + 1);
      out.push_back({"copy-" + std::string(idbuf) + "-full", article, {{AttributeKind::extractiveness, "full"}},
                     join_words(lead)});
      out.push_back({"copy-" + std::string(idbuf) + "-normal", article,
                     {{AttributeKind::extractiveness, "normal"}}, join_words(shuffled)});
    }
  }
  return out;
}

namespace {

using nlohmann::json;

json record_to_json(const MacsumRecord& r) {
  json attrs = json::array();
  for (const auto& a : r.attributes) attrs.push_back({{"kind", attribute_kind_name(a.kind)}, {"value", a.value}});
  return {{"id", r.id}, {"source", r.source}, {"attributes", attrs}, {"summary", r.summary}};
}

const json& require(const json& row, const char* key, json::value_t type, std::size_t line) {
  auto it = row.find(key);
  if (it == row.end()) throw ParseError(std::string("missing field \"") + key + "\"", line);
  if (it->type() != type) throw ParseError(std::string("field \"") + key + "\" has the wrong type", line);
  return *it;
}

template <typename F>
void for_each_line(std::string_view text, F&& fn) {
  std::size_t line = 0;
  while (!text.empty()) {
    ++line;
    const std::size_t nl = text.find('\n');
    std::string_view row = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (!row.empty() && row.back() == '\r') row.remove_suffix(1);
    if (trim(row).empty()) continue;
    json j;
    try {
      j = json::parse(row);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line);
    }
    if (!j.is_object()) throw ParseError("row is not a JSON object", line);
    fn(j, line);
  }
}

}  // namespace

std::string encode_jsonl(std::span<const MacsumRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<MacsumRecord> decode_jsonl(std::string_view text) {
  std::vector<MacsumRecord> out;
  for_each_line(text, [&](const json& j, std::size_t line) {
    MacsumRecord r;
    r.id = require(j, "id", json::value_t::string, line).get<std::string>();
    r.source = require(j, "source", json::value_t::string, line).get<std::string>();
    r.summary = require(j, "summary", json::value_t::string, line).get<std::string>();
    const json& attrs = require(j, "attributes", json::value_t::array, line);
    if (attrs.empty() || attrs.size() > 2) {
      throw ScopeError("line " + std::to_string(line) + ": expected 1 or 2 attributes, got " +
                       std::to_string(attrs.size()));
    }
    for (const auto& a : attrs) {
      if (!a.is_object()) throw ParseError("attribute is not an object", line);
      ControlAttribute ca;
      ca.kind = parse_attribute_kind(require(a, "kind", json::value_t::string, line).get<std::string>());
      ca.value = require(a, "value", json::value_t::string, line).get<std::string>();
      r.attributes.push_back(std::move(ca));
    }
    try {
      r.validate();
    } catch (const ScopeError& e) {
      throw ScopeError("line " + std::to_string(line) + ": " + e.what());
    }
    out.push_back(std::move(r));
  });
  return out;
}

void write_jsonl(std::span<const MacsumRecord> records, const std::filesystem::path& path) {
  write_file_bytes(path, encode_jsonl(records));
}

std::vector<MacsumRecord> read_jsonl(const std::filesystem::path& path) { return decode_jsonl(read_file_bytes(path)); }

std::string encode_pairs_jsonl(std::span<const PreferencePair> pairs) {
  std::string out;
  for (const auto& p : pairs) {
    json j = {{"prompt", p.prompt},   {"chosen", p.chosen},       {"rejected", p.rejected},
              {"kind", attribute_kind_name(p.kind)}, {"value", p.value}, {"chosen_id", p.chosen_id},
              {"rejected_id", p.rejected_id}, {"source", p.source}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<PreferencePair> decode_pairs_jsonl(std::string_view text) {
  std::vector<PreferencePair> out;
  for_each_line(text, [&](const json& j, std::size_t line) {
    auto str = [&](const char* k) { return require(j, k, json::value_t::string, line).get<std::string>(); };
    PreferencePair p;
    p.prompt = str("prompt");
    p.chosen = str("chosen");
    p.rejected = str("rejected");
    p.kind = parse_attribute_kind(str("kind"));
    p.value = str("value");
    p.chosen_id = str("chosen_id");
    p.rejected_id = str("rejected_id");
    p.source = str("source");
    if (p.chosen == p.rejected) throw ParseError("chosen and rejected are identical", line);
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace alab
