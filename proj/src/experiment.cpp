#include "alab/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "alab/adapters.hpp"
#include "alab/binary_io.hpp"
#include "alab/corpus.hpp"
#include "alab/errors.hpp"
#include "alab/judge.hpp"
#include "alab/metrics.hpp"
#include "alab/model.hpp"
#include "alab/objectives.hpp"

namespace alab {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// -- Config ------------------------------------------------------------------

namespace {

std::string trim_copy(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

Config Config::parse(std::string_view text, const std::string& origin) {
  Config c;
  c.origin_ = origin;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string stripped = trim_copy(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim_copy(std::string_view(stripped).substr(0, eq));
    std::string value = trim_copy(std::string_view(stripped).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    c.values_[key] = value;
  }
  return c;
}

Config Config::load(const fs::path& path) { return parse(read_file_bytes(path), path.string()); }

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

bool Config::has(const std::string& key) const {
  used_.insert(key);
  return values_.count(key) != 0;
}

const std::string& Config::raw(const std::string& key) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key + ": required key is missing");
  return it->second;
}

std::string Config::str(const std::string& key) const { return raw(key); }

std::string Config::str(const std::string& key, const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

std::size_t Config::size(const std::string& key) const {
  std::size_t v = 0;
  if (!parse_number(raw(key), v)) throw ConfigError(key + ": expected a non-negative integer, got \"" + raw(key) + "\"");
  return v;
}

std::size_t Config::size(const std::string& key, std::size_t fallback) const {
  return has(key) ? size(key) : fallback;
}

std::uint64_t Config::u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  std::uint64_t v = 0;
  if (!parse_number(raw(key), v)) throw ConfigError(key + ": expected a non-negative integer, got \"" + raw(key) + "\"");
  return v;
}

double Config::real(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  double v = 0.0;
  if (!parse_number(raw(key), v)) throw ConfigError(key + ": expected a number, got \"" + raw(key) + "\"");
  return v;
}

std::vector<std::string> Config::list(const std::string& key) const {
  std::vector<std::string> out;
  if (!has(key)) return out;
  std::string_view s = raw(key);
  while (true) {
    const auto comma = s.find(',');
    std::string item = trim_copy(s.substr(0, comma));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

std::vector<double> Config::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : list(key)) {
    double v = 0.0;
    if (!parse_number(item, v)) throw ConfigError(key + ": \"" + item + "\" is not a number");
    out.push_back(v);
  }
  return out;
}

void Config::reject_unused(const std::vector<std::string>& foreign_prefixes) const {
  for (const auto& [key, value] : values_) {
    if (used_.count(key)) continue;
    const bool foreign = std::any_of(foreign_prefixes.begin(), foreign_prefixes.end(),
                                     [&](const std::string& p) { return key.rfind(p, 0) == 0; });
    if (!foreign) throw ConfigError(key + ": unknown key in " + origin_);
  }
}

// -- Shared helpers ------------------------------------------------------------

namespace {

// Keys owned by each command; a command ignores the others' keys.
const std::vector<std::string> kAllPrefixes = {"synth.", "prefs.", "train.", "stage", "fuse.",
                                               "eval.",  "judge.", "report.", "model."};

std::vector<std::string> foreign_to(std::initializer_list<std::string> own) {
  std::vector<std::string> out;
  for (const auto& p : kAllPrefixes) {
    if (std::find(own.begin(), own.end(), p) == own.end()) out.push_back(p);
  }
  // Experiment-wide keys used by only some commands.
  for (const char* k : {"id", "seed", "prompt_style", "regime", "objective", "order", "weights", "batch", "beta",
                        "rank", "alpha", "rank2", "alpha2", "points"}) {
    out.emplace_back(k);
  }
  return out;
}

class Manifest {
 public:
  Manifest(const CommandContext& ctx, std::string command) : ctx_(ctx), command_(std::move(command)) {}

  void input(const fs::path& p) { inputs_.push_back(p); }
  void output(const fs::path& p) { outputs_.push_back(p); }

  fs::path write() const {
    ojson j;
    j["command"] = command_;
    j["experiment"] = ctx_.config.str("id", "experiment");
    j["seed"] = ctx_.config.u64("seed", 1);
    j["config"] = ctx_.config_path.filename().string();
    std::string effective;
    for (const auto& [k, v] : ctx_.config.entries()) effective += k + " = " + v + "\n";
    j["config_sha256"] = sha256_hex(effective);
    j["inputs"] = hashes(inputs_);
    j["outputs"] = hashes(outputs_);
    const fs::path path = ctx_.out_dir / ("manifest." + command_ + ".json");
    write_file_bytes(path, j.dump(2) + "\n");
    return path;
  }

 private:
  ojson hashes(const std::vector<fs::path>& paths) const {
    ojson arr = ojson::array();
    for (const auto& p : paths) {
      ojson e;
      e["path"] = fs::relative(p, ctx_.out_dir).generic_string();
      e["sha256"] = sha256_hex(read_file_bytes(p));
      arr.push_back(e);
    }
    return arr;
  }

  const CommandContext& ctx_;
  std::string command_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
};

fs::path resolve(const CommandContext& ctx, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : ctx.out_dir / path;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

PromptStyle prompt_style(const Config& c) { return parse_prompt_style(c.str("prompt_style", "compact")); }

ModelConfig model_config(const Config& c) {
  ModelConfig m;
  m.dim = c.size("model.dim", m.dim);
  m.n_layers = c.size("model.layers", m.n_layers);
  m.n_heads = c.size("model.heads", m.n_heads);
  m.context_len = c.size("model.context", m.context_len);
  m.ffn_dim = c.size("model.ffn", m.ffn_dim);
  m.seed = c.u64("model.seed", c.u64("seed", m.seed));
  try {
    m.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return m;
}

// The base model: a checkpoint when model.base is set, else a fresh init.
TinyLM load_base(const CommandContext& ctx, Manifest& manifest) {
  if (ctx.config.has("model.base")) {
    const fs::path p = resolve(ctx, ctx.config.str("model.base"));
    manifest.input(p);
    return TinyLM::load(p);
  }
  return TinyLM(model_config(ctx.config));
}

std::string bucket_of(const MacsumRecord& r) {
  std::string b;
  for (const auto& a : r.attributes) {
    if (!b.empty()) b += '+';
    b += std::string(attribute_kind_name(a.kind)) + "=" + a.value;
  }
  std::replace(b.begin(), b.end(), ',', ';');
  return b;
}

bool has_kind(const MacsumRecord& r, const std::string& kind) {
  return std::any_of(r.attributes.begin(), r.attributes.end(),
                     [&](const ControlAttribute& a) { return attribute_kind_name(a.kind) == kind; });
}

}  // namespace

// -- synth ---------------------------------------------------------------------

std::string cmd_synth(CommandContext& ctx) {
  const Config& c = ctx.config;
  Manifest manifest(ctx, "synth");
  const SynthTask task = parse_synth_task(c.str("synth.task"));
  const std::size_t n = c.size("synth.n");
  const std::size_t eval_n = c.size("synth.eval_n", 0);
  const std::uint64_t seed = c.u64("seed", 1);
  SynthOptions opt;
  opt.article_words = c.size("synth.article_words", opt.article_words);
  opt.short_words = c.size("synth.short_words", opt.short_words);
  opt.normal_words = c.size("synth.normal_words", opt.normal_words);
  opt.long_words = c.size("synth.long_words", opt.long_words);
  opt.copy_words = c.size("synth.copy_words", opt.copy_words);
  const fs::path out = resolve(ctx, c.str("synth.output", "corpus.jsonl"));
  const fs::path eval_out = resolve(ctx, c.str("synth.eval_output", "eval.jsonl"));
  c.reject_unused(foreign_to({"synth."}));

  const auto records = synth_corpus(task, n, seed, opt);
  write_jsonl(records, out);
  manifest.output(out);
  std::string msg = "wrote " + std::to_string(records.size()) + " records to " + out.string() + "\n";
  if (eval_n > 0) {
    // Held-out articles come from a disjoint seed stream.
    std::uint64_t s = seed;
    const auto held_out = synth_corpus(task, eval_n, splitmix64(s), opt);
    write_jsonl(held_out, eval_out);
    manifest.output(eval_out);
    msg += "wrote " + std::to_string(held_out.size()) + " records to " + eval_out.string() + "\n";
  }
  manifest.write();
  return msg;
}

// -- build-prefs ---------------------------------------------------------------

std::string cmd_build_prefs(CommandContext& ctx) {
  const Config& c = ctx.config;
  Manifest manifest(ctx, "build-prefs");
  const fs::path in = resolve(ctx, c.str("prefs.input", "corpus.jsonl"));
  const fs::path out = resolve(ctx, c.str("prefs.output", "prefs.jsonl"));
  const PromptStyle style = prompt_style(c);
  c.reject_unused(foreign_to({"prefs."}));

  const auto records = read_jsonl(in);
  manifest.input(in);
  const PreferenceBuild built = build_preference_pairs(records, style);
  write_file_bytes(out, encode_pairs_jsonl(built.pairs));
  manifest.output(out);
  manifest.write();
  std::string msg = "wrote " + std::to_string(built.pairs.size()) + " preference pairs to " + out.string() + "\n";
  if (built.skipped_groups) {
    msg += "warning: skipped " + std::to_string(built.skipped_groups) + " group(s) with a single value\n";
  }
  return msg;
}

// -- train -----------------------------------------------------------------------

std::string cmd_train(CommandContext& ctx) {
  const Config& c = ctx.config;
  Manifest manifest(ctx, "train");

  Schedule sched;
  sched.regime = parse_regime(c.str("regime", "joint"));
  sched.objective = parse_objective(c.str("objective", "sft"));
  sched.order = c.list("order");
  sched.fusion_weights = c.reals("weights");
  sched.batch_size = c.size("batch", sched.batch_size);
  sched.beta = c.real("beta", sched.beta);
  sched.seed = c.u64("seed", sched.seed);
  sched.adapter.rank = c.size("rank", sched.adapter.rank);
  sched.adapter.alpha = c.real("alpha", sched.adapter.alpha);
  sched.adapter.rank2 = c.size("rank2", sched.adapter.rank2);
  sched.adapter.alpha2 = c.real("alpha2", sched.adapter.alpha2);
  sched.adapter.points = c.list("points");
  const PromptStyle style = prompt_style(c);
  const std::string prefix = c.str("train.prefix", "");

  DatasetMap datasets;
  for (std::size_t s = 1; c.has("stage" + std::to_string(s) + ".data"); ++s) {
    const std::string key = "stage" + std::to_string(s);
    const fs::path path = resolve(ctx, c.str(key + ".data"));
    std::string attribute = c.str(key + ".attribute", s <= sched.order.size() ? sched.order[s - 1] : "");
    if (!attribute.empty()) parse_attribute_kind(attribute);
    StageSpec stage;
    stage.dataset = key;
    stage.steps = c.size(key + ".steps", stage.steps);
    stage.lr = c.real(key + ".lr", stage.lr);
    sched.stages.push_back(stage);
    manifest.input(path);
    if (sched.objective == Objective::sft) {
      std::vector<SftExample> examples;
      for (const auto& r : read_jsonl(path)) {
        if (!attribute.empty() && !has_kind(r, attribute)) continue;
        examples.push_back({render_prompt(r.attributes, r.source, style), r.summary});
      }
      datasets[key] = std::move(examples);
    } else {
      std::vector<DpoExample> examples;
      for (const auto& p : decode_pairs_jsonl(read_file_bytes(path))) {
        if (!attribute.empty() && attribute_kind_name(p.kind) != attribute) continue;
        examples.push_back({p.prompt, p.chosen, p.rejected});
      }
      datasets[key] = std::move(examples);
    }
  }
  TinyLM model = load_base(ctx, manifest);
  c.reject_unused(foreign_to({"train.", "stage", "model."}));
  sched.validate();

  const TrainedArtifacts art = run_schedule(model, sched, datasets);

  std::string msg;
  const fs::path curve = ctx.out_dir / (prefix + "loss.csv");
  write_file_bytes(curve, loss_curve_csv(art.curve));
  manifest.output(curve);
  if (sched.regime == Regime::full) {
    const fs::path ckpt = ctx.out_dir / (prefix + "model.ckpt");
    model.save(ckpt);
    manifest.output(ckpt);
    msg += "wrote " + ckpt.string() + "\n";
  }
  for (const auto& named : art.adapters) {
    const fs::path p = ctx.out_dir / (prefix + named.name + ".alad");
    save_adapters(named.set, p);
    manifest.output(p);
    msg += "wrote " + p.string() + "\n";
  }
  if (art.fused) {
    const fs::path p = ctx.out_dir / (prefix + "fused.aldt");
    save_deltas(*art.fused, p);
    manifest.output(p);
    msg += "wrote " + p.string() + "\n";
  }
  for (std::size_t s = 0; s < art.stage_starts.size(); ++s) {
    const std::size_t begin = art.stage_starts[s];
    const std::size_t end = s + 1 < art.stage_starts.size() ? art.stage_starts[s + 1] : art.curve.size();
    if (end > begin) {
      msg += "stage " + std::to_string(s + 1) + ": " + std::to_string(end - begin) + " steps, loss " +
             fmt("%.4f", art.curve[begin].loss) + " -> " + fmt("%.4f", art.curve[end - 1].loss) + "\n";
    }
  }
  manifest.write();
  return msg;
}

// -- fuse ------------------------------------------------------------------------

std::string cmd_fuse(CommandContext& ctx) {
  const Config& c = ctx.config;
  Manifest manifest(ctx, "fuse");
  const auto inputs = c.list("fuse.inputs");
  const std::string weights = c.str("weights");
  const fs::path out = resolve(ctx, c.str("fuse.output", "fused.aldt"));
  c.reject_unused(foreign_to({"fuse."}));
  if (inputs.empty()) throw ConfigError("fuse.inputs: at least one adapter file is required");

  std::vector<AdapterSet> sets;
  for (const auto& in : inputs) {
    const fs::path p = resolve(ctx, in);
    sets.push_back(load_adapters(p));
    manifest.input(p);
  }
  const FusionSpec spec = FusionSpec::from_weights(inputs, weights);
  save_deltas(fuse_sets(spec, sets), out);
  manifest.output(out);
  manifest.write();
  return "wrote " + out.string() + "\n";
}

// -- eval ------------------------------------------------------------------------

std::string cmd_eval(CommandContext& ctx) {
  const Config& c = ctx.config;
  Manifest manifest(ctx, "eval");
  const fs::path data = resolve(ctx, c.str("eval.data", "eval.jsonl"));
  const auto adapters = c.list("eval.adapters");
  const std::string delta = c.str("eval.delta", "");
  const std::size_t per_bucket = c.size("eval.per_bucket", 0);
  const std::size_t max_new = c.size("eval.max_new", 96);
  const fs::path out = resolve(ctx, c.str("eval.output", "eval.csv"));
  const fs::path gens = resolve(ctx, c.str("eval.generations", "generations.jsonl"));
  const PromptStyle style = prompt_style(c);
  TinyLM model = load_base(ctx, manifest);
  c.reject_unused(foreign_to({"eval.", "model."}));

  // Adapters are merged into the base weights for decoding. A fused delta
  // file goes through the same merge, so fusing with weights (1, 0) decodes
  // exactly like adapter 1 alone.
  for (const auto& a : adapters) {
    const fs::path p = resolve(ctx, a);
    model.apply_deltas(delta_set(load_adapters(p)));
    manifest.input(p);
  }
  if (!delta.empty()) {
    const fs::path p = resolve(ctx, delta);
    model.apply_deltas(load_deltas(p));
    manifest.input(p);
  }

  const auto records = read_jsonl(data);
  manifest.input(data);
  std::map<std::string, std::size_t> taken;
  std::vector<EvalSample> samples;
  std::string gen_lines;
  for (const auto& r : records) {
    const std::string bucket = bucket_of(r);
    if (per_bucket && taken[bucket] >= per_bucket) continue;
    ++taken[bucket];
    const TokenSeq prompt = encode_prompt(render_prompt(r.attributes, r.source, style));
    const TokenSeq seq = model.generate(prompt, max_new, GenerateMode::greedy_mode());
    const std::string generated = decode(std::span(seq).subspan(prompt.size()));
    samples.push_back({bucket, measure(r.source, generated, r.summary)});
    std::string topics;
    for (const auto& a : r.attributes) {
      if (a.kind == AttributeKind::topic) topics = a.value;
    }
    // Raw model bytes need not be UTF-8; invalid sequences become U+FFFD.
    ojson g;
    g["id"] = r.id;
    g["bucket"] = bucket;
    g["source"] = r.source;
    g["reference"] = r.summary;
    g["generated"] = generated;
    g["topics"] = topics;
    gen_lines += g.dump(-1, ' ', false, ojson::error_handler_t::replace) + "\n";
  }
  const auto reports = aggregate(samples);
  write_file_bytes(out, report_csv(reports));
  write_file_bytes(gens, gen_lines);
  manifest.output(out);
  manifest.output(gens);
  manifest.write();
  return ctx.table_format ? report_table(reports) : report_csv(reports);
}

// -- judge -----------------------------------------------------------------------

std::string cmd_judge(CommandContext& ctx) {
  const Config& c = ctx.config;
  Manifest manifest(ctx, "judge");
  const fs::path in = resolve(ctx, c.str("judge.input", "generations.jsonl"));
  const fs::path out = resolve(ctx, c.str("judge.output", "verdicts.jsonl"));
  JudgeRequest proto;
  proto.samples = c.size("judge.samples", proto.samples);
  proto.max_retries = c.size("judge.retries", proto.max_retries);
  proto.endpoint = c.str("judge.endpoint", "");
  proto.model = c.str("judge.model", proto.model);
  proto.temperature = c.real("judge.temperature", proto.temperature);
  proto.timeout = std::chrono::milliseconds(c.size("judge.timeout_ms", 30000));
  const std::string mock = c.str("judge.mock", "");
  c.reject_unused(foreign_to({"judge."}));

  std::unique_ptr<JudgeTransport> transport;
  if (!mock.empty()) {
    const fs::path p = resolve(ctx, mock);
    transport = std::make_unique<MockTransport>(MockTransport::from_fixture(p));
    manifest.input(p);
  } else {
    if (proto.endpoint.empty()) throw ConfigError("judge.endpoint: required unless judge.mock is set");
    transport = std::make_unique<HttpTransport>(proto.timeout);
  }

  const std::string text = read_file_bytes(in);
  manifest.input(in);
  std::string lines;
  std::size_t judged = 0;
  std::size_t skipped = 0;
  double total = 0.0;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    const std::string row = text.substr(start, nl - start);
    start = nl + 1;
    ++line_no;
    if (trim_copy(row).empty()) continue;
    ojson g;
    try {
      g = ojson::parse(row);
    } catch (const ojson::parse_error&) {
      throw ParseError("malformed generations row", line_no);
    }
    const std::string topics = g.value("topics", "");
    const std::string generated = g.value("generated", "");
    if (topics.empty() || generated.empty()) {
      ++skipped;
      continue;
    }
    JudgeRequest req = proto;
    req.document = g.value("source", "");
    req.topics = topics;
    req.summary = generated;
    ojson v;
    v["id"] = g.value("id", "");
    v["bucket"] = g.value("bucket", "");
    try {
      const JudgeVerdict verdict = judge(req, *transport);
      v["scores"] = verdict.scores;
      v["mean"] = verdict.mean;
      v["std"] = verdict.std;
      v["failures"] = verdict.failures;
      total += verdict.mean;
      ++judged;
    } catch (const JudgeUnavailableError& e) {
      v["error"] = e.what();
    }
    lines += v.dump() + "\n";
  }
  write_file_bytes(out, lines);
  manifest.output(out);
  manifest.write();
  std::string msg = "judged " + std::to_string(judged) + " summaries";
  if (judged) msg += ", mean score " + fmt("%.4f", total / static_cast<double>(judged));
  if (skipped) msg += " (" + std::to_string(skipped) + " without topics skipped)";
  return msg + "\n";
}

// -- report ----------------------------------------------------------------------

std::string cmd_report(CommandContext& ctx) {
  const Config& c = ctx.config;
  Manifest manifest(ctx, "report");
  const std::string rows_spec = c.str("report.rows");
  std::vector<Metric> metrics;
  const auto names = c.list("report.metrics");
  for (const auto& n : names) {
    auto it = std::find_if(kAllMetrics.begin(), kAllMetrics.end(), [&](Metric m) { return metric_name(m) == n; });
    if (it == kAllMetrics.end()) throw ConfigError("report.metrics: unknown metric \"" + n + "\"");
    metrics.push_back(*it);
  }
  if (metrics.empty()) {
    metrics = {Metric::length, Metric::compression, Metric::density, Metric::coverage, Metric::overlap};
  }
  const fs::path out = resolve(ctx, c.str("report.output", ctx.table_format ? "report.txt" : "report.csv"));
  c.reject_unused(foreign_to({"report."}));

  // "method|config|eval.csv; method|config|eval.csv; ..."
  std::vector<ReportRow> rows;
  std::string_view spec = rows_spec;
  while (!spec.empty()) {
    const auto semi = spec.find(';');
    const std::string item = trim_copy(spec.substr(0, semi));
    spec.remove_prefix(semi == std::string_view::npos ? spec.size() : semi + 1);
    if (item.empty()) continue;
    const auto a = item.find('|');
    const auto b = a == std::string::npos ? a : item.find('|', a + 1);
    if (b == std::string::npos) throw ConfigError("report.rows: \"" + item + "\" is not method|config|path");
    const fs::path p = resolve(ctx, trim_copy(std::string_view(item).substr(b + 1)));
    rows.push_back({trim_copy(std::string_view(item).substr(0, a)),
                    trim_copy(std::string_view(item).substr(a + 1, b - a - 1)), parse_report_csv(read_file_bytes(p))});
    manifest.input(p);
  }
  if (rows.empty()) throw ConfigError("report.rows: no rows given");
  const std::string text = grouped_table(rows, metrics, !ctx.table_format);
  write_file_bytes(out, text);
  manifest.output(out);
  manifest.write();
  return text;
}

// -- dispatch --------------------------------------------------------------------

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"synth", "build-prefs", "train", "fuse", "eval", "judge", "report"};
  return names;
}

std::string run_command(const std::string& name, CommandContext& ctx) {
  fs::create_directories(ctx.out_dir);
  if (name == "synth") return cmd_synth(ctx);
  if (name == "build-prefs") return cmd_build_prefs(ctx);
  if (name == "train") return cmd_train(ctx);
  if (name == "fuse") return cmd_fuse(ctx);
  if (name == "eval") return cmd_eval(ctx);
  if (name == "judge") return cmd_judge(ctx);
  if (name == "report") return cmd_report(ctx);
  throw UsageError("unknown subcommand \"" + name + "\"");
}

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->error_class()) {
      case ErrorClass::usage: return 2;
      case ErrorClass::config: return 3;
      case ErrorClass::data: return 4;
      case ErrorClass::transport: return 5;
      case ErrorClass::internal: return 1;
    }
  }
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return 4;
  return 1;
}

}  // namespace alab
