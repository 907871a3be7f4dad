#include "alab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "alab/binary_io.hpp"
#include "alab/errors.hpp"

namespace alab {

TokenSeq encode_bytes(std::string_view text) {
  TokenSeq ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

TokenSeq encode(std::string_view text) {
  TokenSeq ids = encode_prompt(text);
  ids.push_back(tokens::kEos);
  return ids;
}

TokenSeq encode_prompt(std::string_view text) {
  TokenSeq ids;
  ids.reserve(text.size() + 2);
  ids.push_back(tokens::kBos);
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

std::string decode(std::span<const std::size_t> ids) {
  std::string out;
  for (std::size_t id : ids) {
    if (id < 256) out.push_back(static_cast<char>(id));
  }
  return out;
}

void ModelConfig::validate() const {
  if (vocab_size != tokens::kVocab) throw ConfigError("vocab_size must be 259 (256 bytes + BOS/EOS/PAD)");
  if (dim == 0 || n_heads == 0 || n_layers == 0) throw ConfigError("dim, n_heads and n_layers must be positive");
  if (dim % n_heads != 0) throw ConfigError("dim must be divisible by n_heads");
  if (context_len < 2) throw ConfigError("context_len must be at least 2");
}

Var LinearLayer::forward(Tape& tape, Var x) {
  Var y = matmul_nt(x, tape.leaf(weight));
  if (adapter) y = add(y, adapter_delta_rows(*adapter, x));
  return y;
}

namespace {

LinearLayer make_linear(std::string name, std::size_t out, std::size_t in, double stddev, Prng& rng) {
  LinearLayer l;
  l.name = std::move(name);
  l.weight = Tensor(Matrix::random_normal(out, in, stddev, rng));
  return l;
}

}  // namespace

TinyLM::TinyLM(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  Prng rng(cfg_.seed);
  const std::size_t d = cfg_.dim;
  const std::size_t f = cfg_.hidden_dim();
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double resid_std = in_std / std::sqrt(2.0 * static_cast<double>(cfg_.n_layers));
  const double ffn_out_std = 1.0 / std::sqrt(static_cast<double>(f)) /
                             std::sqrt(2.0 * static_cast<double>(cfg_.n_layers));

  tok_embed_ = Tensor(Matrix::random_normal(cfg_.vocab_size, d, 0.1, rng));
  pos_embed_ = Tensor(Matrix::random_normal(cfg_.context_len, d, 0.1, rng));
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    Block b;
    b.norm_attn = Tensor(Matrix(1, d, 1.0));
    b.q = make_linear(p + ".attn.q", d, d, in_std, rng);
    b.k = make_linear(p + ".attn.k", d, d, in_std, rng);
    b.v = make_linear(p + ".attn.v", d, d, in_std, rng);
    b.o = make_linear(p + ".attn.o", d, d, resid_std, rng);
    b.norm_mlp = Tensor(Matrix(1, d, 1.0));
    b.up = make_linear(p + ".mlp.up", f, d, in_std, rng);
    b.down = make_linear(p + ".mlp.down", d, f, ffn_out_std, rng);
    blocks_.push_back(std::move(b));
  }
  norm_final_ = Tensor(Matrix(1, d, 1.0));
  lm_head_ = make_linear("lm_head", cfg_.vocab_size, d, in_std, rng);
}

Var TinyLM::forward(Tape& tape, std::span<const std::size_t> ids) {
  const std::size_t n = ids.size();
  if (n == 0) throw ContextError("empty token sequence");
  if (n > cfg_.context_len) {
    throw ContextError("sequence of " + std::to_string(n) + " tokens exceeds context_len " +
                       std::to_string(cfg_.context_len));
  }
  for (std::size_t id : ids) {
    if (id >= cfg_.vocab_size) throw ContextError("token id " + std::to_string(id) + " outside vocabulary");
  }
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::size_t{0});

  Var x = add(embedding(tape.leaf(tok_embed_), ids), embedding(tape.leaf(pos_embed_), positions));
  const std::size_t dh = cfg_.dim / cfg_.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (auto& b : blocks_) {
    Var h = rmsnorm_rows(x, tape.leaf(b.norm_attn));
    Var q = b.q.forward(tape, h);
    Var k = b.k.forward(tape, h);
    Var v = b.v.forward(tape, h);
    std::vector<Var> heads;
    heads.reserve(cfg_.n_heads);
    for (std::size_t hd = 0; hd < cfg_.n_heads; ++hd) {
      Var qh = slice_cols(q, hd * dh, dh);
      Var kh = slice_cols(k, hd * dh, dh);
      Var vh = slice_cols(v, hd * dh, dh);
      Var probs = causal_softmax_rows(scale(matmul_nt(qh, kh), att_scale));
      heads.push_back(matmul(probs, vh));
    }
    Var att = cfg_.n_heads == 1 ? heads.front() : concat_cols(heads);
    x = add(x, b.o.forward(tape, att));
    Var h2 = rmsnorm_rows(x, tape.leaf(b.norm_mlp));
    x = add(x, b.down.forward(tape, silu(b.up.forward(tape, h2))));
  }
  return lm_head_.forward(tape, rmsnorm_rows(x, tape.leaf(norm_final_)));
}

TokenSeq TinyLM::generate(const TokenSeq& prompt, std::size_t max_new, const GenerateMode& mode) {
  if (max_new == 0) throw ContractError("generate needs max_new >= 1");
  if (prompt.empty()) throw ContextError("generate needs a nonempty prompt");
  if (!mode.greedy && !(mode.temperature > 0.0)) throw ConfigError("sampling temperature must be positive");
  TokenSeq seq = prompt;
  Prng rng(mode.seed);
  for (std::size_t step = 0; step < max_new && seq.size() < cfg_.context_len; ++step) {
    Tape tape;
    Var logits = forward(tape, seq);
    const auto row = logits.value().row(seq.size() - 1);
    std::size_t next = 0;
    if (mode.greedy) {
      next = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    } else {
      const double mx = *std::max_element(row.begin(), row.end());
      std::vector<double> p(row.size());
      double z = 0.0;
      for (std::size_t i = 0; i < row.size(); ++i) z += (p[i] = std::exp((row[i] - mx) / mode.temperature));
      double u = rng.uniform() * z;
      next = row.size() - 1;
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (u < p[i]) {
          next = i;
          break;
        }
        u -= p[i];
      }
    }
    seq.push_back(next);
    if (next == tokens::kEos) break;
  }
  return seq;
}

std::vector<LinearLayer*> TinyLM::linears() {
  std::vector<LinearLayer*> out;
  for (auto& b : blocks_) {
    for (LinearLayer* l : {&b.q, &b.k, &b.v, &b.o, &b.up, &b.down}) out.push_back(l);
  }
  out.push_back(&lm_head_);
  return out;
}

std::vector<const LinearLayer*> TinyLM::linears() const {
  std::vector<const LinearLayer*> out;
  for (const auto& b : blocks_) {
    for (const LinearLayer* l : {&b.q, &b.k, &b.v, &b.o, &b.up, &b.down}) out.push_back(l);
  }
  out.push_back(&lm_head_);
  return out;
}

std::vector<std::string> TinyLM::attachment_points() const {
  std::vector<std::string> out;
  for (const LinearLayer* l : linears()) out.push_back(l->name);
  return out;
}

std::vector<std::string> TinyLM::default_adapter_points() const {
  std::vector<std::string> out;
  for (const auto& b : blocks_) {
    for (const LinearLayer* l : {&b.q, &b.k, &b.v, &b.o}) out.push_back(l->name);
  }
  return out;
}

LinearLayer& TinyLM::linear(const std::string& point) {
  for (LinearLayer* l : linears()) {
    if (l->name == point) return *l;
  }
  throw LookupError("unknown attachment point \"" + point + "\"");
}

const LinearLayer& TinyLM::linear(const std::string& point) const {
  for (const LinearLayer* l : linears()) {
    if (l->name == point) return *l;
  }
  throw LookupError("unknown attachment point \"" + point + "\"");
}

void TinyLM::attach(const std::string& point, AdapterSpec spec) {
  LinearLayer& l = linear(point);
  if (l.adapter) throw ContractError("attachment point \"" + point + "\" already carries an adapter");
  if (out_dim(spec) != l.weight.rows() || in_dim(spec) != l.weight.cols()) {
    throw DimensionError("adapter for \"" + point + "\" is " + std::to_string(out_dim(spec)) + "x" +
                         std::to_string(in_dim(spec)) + ", weight is " + l.weight.value.shape_string());
  }
  l.adapter = std::move(spec);
}

void TinyLM::detach(const std::string& point) { linear(point).adapter.reset(); }

void TinyLM::detach_all() {
  for (LinearLayer* l : linears()) l->adapter.reset();
}

bool TinyLM::has_adapter(const std::string& point) const { return linear(point).adapter.has_value(); }

AdapterSpec& TinyLM::adapter(const std::string& point) {
  LinearLayer& l = linear(point);
  if (!l.adapter) throw LookupError("no adapter attached at \"" + point + "\"");
  return *l.adapter;
}

void TinyLM::apply_deltas(const DeltaSet& deltas) {
  for (const auto& e : deltas) {
    LinearLayer& l = linear(e.point);
    if (!e.delta.same_shape(l.weight.value)) {
      throw DimensionError("delta for \"" + e.point + "\" is " + e.delta.shape_string() + ", weight is " +
                           l.weight.value.shape_string());
    }
    l.weight.value = l.weight.value + e.delta;
  }
}

std::vector<std::pair<std::string, Tensor*>> TinyLM::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("tok_embed", &tok_embed_);
  out.emplace_back("pos_embed", &pos_embed_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const std::string p = "layer" + std::to_string(i);
    out.emplace_back(p + ".norm_attn", &b.norm_attn);
    for (LinearLayer* l : {&b.q, &b.k, &b.v, &b.o}) out.emplace_back(l->name, &l->weight);
    out.emplace_back(p + ".norm_mlp", &b.norm_mlp);
    for (LinearLayer* l : {&b.up, &b.down}) out.emplace_back(l->name, &l->weight);
  }
  out.emplace_back("norm_final", &norm_final_);
  out.emplace_back(lm_head_.name, &lm_head_.weight);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> TinyLM::named_parameters_const() const {
  auto params = const_cast<TinyLM*>(this)->named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [n, t] : params) out.emplace_back(n, t);
  return out;
}

void TinyLM::set_base_trainable(bool trainable) {
  for (auto& [name, t] : named_parameters()) {
    t->requires_grad = trainable;
    if (!trainable) t->zero_grad();
  }
}

std::vector<Tensor*> TinyLM::adapter_trainables() {
  std::vector<Tensor*> out;
  for (LinearLayer* l : linears()) {
    if (!l->adapter) continue;
    for (Tensor* t : trainable_tensors(*l->adapter)) out.push_back(t);
  }
  return out;
}

std::string TinyLM::encode_checkpoint() const {
  BinaryWriter w;
  w.bytes("ALAB");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(cfg_.vocab_size));
  w.u32(static_cast<std::uint32_t>(cfg_.dim));
  w.u32(static_cast<std::uint32_t>(cfg_.n_layers));
  w.u32(static_cast<std::uint32_t>(cfg_.n_heads));
  w.u32(static_cast<std::uint32_t>(cfg_.context_len));
  w.u32(static_cast<std::uint32_t>(cfg_.hidden_dim()));
  w.u64(cfg_.seed);
  const auto params = named_parameters_const();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t->rows()));
    w.u32(static_cast<std::uint32_t>(t->cols()));
    w.blob(t->value);
  }
  return w.buffer();
}

TinyLM TinyLM::decode_checkpoint(std::string bytes) {
  BinaryReader r(std::move(bytes));
  r.expect_magic("ALAB");
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v), version_at);
  }
  const std::size_t cfg_at = r.offset();
  ModelConfig cfg;
  cfg.vocab_size = r.u32();
  cfg.dim = r.u32();
  cfg.n_layers = r.u32();
  cfg.n_heads = r.u32();
  cfg.context_len = r.u32();
  cfg.ffn_dim = r.u32();
  cfg.seed = r.u64();
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("invalid config block: ") + e.what(), cfg_at);
  }
  TinyLM model(cfg);
  auto params = model.named_parameters();
  const std::size_t count_at = r.offset();
  if (r.u32() != params.size()) throw FormatError("parameter count does not match config", count_at);
  for (auto& [name, t] : params) {
    const std::size_t at = r.offset();
    const std::string got = r.str();
    if (got != name) throw FormatError("expected parameter \"" + name + "\", found \"" + got + "\"", at);
    const std::size_t rows = r.u32(), cols = r.u32();
    if (rows != t->rows() || cols != t->cols()) throw FormatError("shape mismatch for \"" + name + "\"", at);
    t->value = r.blob(rows, cols);
  }
  r.expect_end();
  return model;
}

void TinyLM::save(const std::filesystem::path& path) const { write_file_bytes(path, encode_checkpoint()); }

TinyLM TinyLM::load(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace alab
