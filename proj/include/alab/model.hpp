#pragma once

// Tiny byte-level causal decoder. Every projection is a bias-free LinearLayer
// computing y = x W^T (row activations), so an attached adapter adds exactly
// the delta term of its forward equation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "alab/adapters.hpp"
#include "alab/tensor.hpp"

namespace alab {

namespace tokens {
inline constexpr std::size_t kBos = 256;
inline constexpr std::size_t kEos = 257;
inline constexpr std::size_t kPad = 258;
inline constexpr std::size_t kVocab = 259;
}  // namespace tokens

using TokenSeq = std::vector<std::size_t>;

// BOS + bytes + EOS.
TokenSeq encode(std::string_view text);
// BOS + bytes, ready for generation.
TokenSeq encode_prompt(std::string_view text);
// Raw bytes only; BOS/EOS/PAD are dropped.
std::string decode(std::span<const std::size_t> ids);
// Bytes without any framing tokens.
TokenSeq encode_bytes(std::string_view text);

struct ModelConfig {
  std::size_t vocab_size = tokens::kVocab;
  std::size_t dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t context_len = 256;
  std::size_t ffn_dim = 0;  // 0 means 4 * dim
  std::uint64_t seed = 1;

  std::size_t hidden_dim() const { return ffn_dim ? ffn_dim : 4 * dim; }
  void validate() const;
};

struct LinearLayer {
  std::string name;
  Tensor weight;  // out x in
  std::optional<AdapterSpec> adapter;

  Var forward(Tape& tape, Var x);
};

struct GenerateMode {
  bool greedy = true;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  static GenerateMode greedy_mode() { return {}; }
  static GenerateMode sampled(double temperature, std::uint64_t seed) { return {false, temperature, seed}; }
};

class TinyLM {
 public:
  explicit TinyLM(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  // Logits, |ids| x vocab. Throws ContextError past context_len.
  Var forward(Tape& tape, std::span<const std::size_t> ids);

  // Appends up to max_new tokens, stopping after EOS or at context_len.
  TokenSeq generate(const TokenSeq& prompt, std::size_t max_new, const GenerateMode& mode);

  std::vector<std::string> attachment_points() const;
  // Attention q/k/v/o projections of every layer.
  std::vector<std::string> default_adapter_points() const;

  void attach(const std::string& point, AdapterSpec spec);
  void detach(const std::string& point);
  void detach_all();
  bool has_adapter(const std::string& point) const;
  AdapterSpec& adapter(const std::string& point);
  LinearLayer& linear(const std::string& point);
  const LinearLayer& linear(const std::string& point) const;

  // W += delta at each named point.
  void apply_deltas(const DeltaSet& deltas);

  // Base weights with stable names, in checkpoint order.
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  void set_base_trainable(bool trainable);
  // Trainable tensors of every attached adapter, in point order.
  std::vector<Tensor*> adapter_trainables();

  // "ALAB" | u32 version | config | u32 count | (str name | u32 rows | u32 cols | fp64 blob)*
  std::string encode_checkpoint() const;
  static TinyLM decode_checkpoint(std::string bytes);
  void save(const std::filesystem::path& path) const;
  static TinyLM load(const std::filesystem::path& path);

 private:
  struct Block {
    Tensor norm_attn;
    LinearLayer q, k, v, o;
    Tensor norm_mlp;
    LinearLayer up, down;
  };

  std::vector<LinearLayer*> linears();
  std::vector<const LinearLayer*> linears() const;
  std::vector<std::pair<std::string, const Tensor*>> named_parameters_const() const;

  ModelConfig cfg_;
  Tensor tok_embed_;
  Tensor pos_embed_;
  std::vector<Block> blocks_;
  Tensor norm_final_;
  LinearLayer lm_head_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace alab
