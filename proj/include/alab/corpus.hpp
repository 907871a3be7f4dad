#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace alab {

enum class AttributeKind { length, extractiveness, topic, specificity };

std::string_view attribute_kind_name(AttributeKind k);
AttributeKind parse_attribute_kind(std::string_view s);

// Category values in canonical order; empty for topic.
std::span<const std::string_view> attribute_values(AttributeKind k);

struct ControlAttribute {
  AttributeKind kind = AttributeKind::length;
  std::string value;  // category, or comma-separated topic phrases

  // Throws ScopeError on an unknown category or empty topic.
  void validate() const;
  // Position in the canonical order (topics sort after all categories).
  std::size_t value_rank() const;
  bool operator==(const ControlAttribute&) const = default;
};

struct MacsumRecord {
  std::string id;
  std::string source;
  std::vector<ControlAttribute> attributes;
  std::string summary;

  void validate() const;
  bool operator==(const MacsumRecord&) const = default;
};

struct PreferencePair {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  AttributeKind kind = AttributeKind::length;
  std::string value;
  std::string chosen_id;
  std::string rejected_id;
  std::string source;

  bool operator==(const PreferencePair&) const = default;
};

enum class PromptStyle {
  appendix,  // the full instruction template
  compact,   // "kind=value;...\n" + source + "\n", for small context windows
};

std::string_view prompt_style_name(PromptStyle s);
PromptStyle parse_prompt_style(std::string_view s);

// One attribute sentence per attribute, in list order. 1 or 2 attributes.
std::string render_prompt(std::span<const ControlAttribute> attributes, std::string_view source,
                          PromptStyle style = PromptStyle::appendix);

struct PreferenceBuild {
  std::vector<PreferencePair> pairs;
  std::size_t skipped_groups = 0;  // groups with fewer than two distinct values
};

// Groups single-attribute records by (source, kind) in order of first
// appearance. Within a group, for each instructed value v (canonical order),
// every record labeled v is paired against every record labeled otherwise,
// rejected side ordered by (value, id).
PreferenceBuild build_preference_pairs(std::span<const MacsumRecord> records,
                                       PromptStyle style = PromptStyle::appendix);

enum class SynthTask { length_control, copy_control };

std::string_view synth_task_name(SynthTask t);
SynthTask parse_synth_task(std::string_view s);

struct SynthOptions {
  std::size_t article_words = 40;
  std::size_t short_words = 8;
  std::size_t normal_words = 16;
  std::size_t long_words = 32;
  std::size_t copy_words = 16;
};

// n source articles of single-letter words. length_control emits one record
// per {short, normal, long} with the lead span of that many words;
// copy_control emits "full" (verbatim lead span) and "normal" (the same words
// shuffled). Deterministic per (task, n, seed, options).
std::vector<MacsumRecord> synth_corpus(SynthTask task, std::size_t n, std::uint64_t seed,
                                       const SynthOptions& options = {});

// One JSON object per line: {"id","source","attributes":[{"kind","value"}],"summary"}.
std::string encode_jsonl(std::span<const MacsumRecord> records);
std::vector<MacsumRecord> decode_jsonl(std::string_view text);
void write_jsonl(std::span<const MacsumRecord> records, const std::filesystem::path& path);
std::vector<MacsumRecord> read_jsonl(const std::filesystem::path& path);

// {"prompt","chosen","rejected","kind","value","chosen_id","rejected_id","source"} per line.
std::string encode_pairs_jsonl(std::span<const PreferencePair> pairs);
std::vector<PreferencePair> decode_pairs_jsonl(std::string_view text);

}  // namespace alab
