#pragma once

// Low-rank adapters on a frozen weight W (N x M).
//
//   LoRA:   h(x) = W x + s1 * B (A x),                     s1 = alpha1 / r1
//   HLoRA:  h(x) = W x + s1 * B A x + s2 * (B2 B1)(A2 A1) x, s2 = alpha2 / r2
//
// Shapes: A is r1 x M, B is N x r1, A1 is r2 x M, A2 is r1 x r2, B1 is
// r2 x r1, B2 is N x r2, with r2 < r1. Fresh blocks start with a zero
// up-projection (B = 0, B2 = 0) so attaching one never changes outputs.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "alab/prng.hpp"
#include "alab/tensor.hpp"

namespace alab {

inline constexpr double kAdapterInitStd = 0.02;

struct LoraBlock {
  Tensor a;  // r1 x M
  Tensor b;  // N x r1
  std::size_t rank = 0;
  double alpha = 0.0;
  bool frozen = false;

  static LoraBlock create(std::size_t out_dim, std::size_t in_dim, std::size_t rank, double alpha,
                          Prng& rng);

  double scale() const { return alpha / static_cast<double>(rank); }
  std::size_t out_dim() const { return b.rows(); }
  std::size_t in_dim() const { return a.cols(); }
  void set_frozen(bool f);
  void validate() const;
};

struct HloraBlock {
  LoraBlock base;  // stage 1, frozen while stage 2 trains
  Tensor a1;       // r2 x M
  Tensor a2;       // r1 x r2
  Tensor b1;       // r2 x r1
  Tensor b2;       // N x r2
  std::size_t rank2 = 0;
  double alpha2 = 0.0;
  bool frozen = false;

  // Takes ownership of a trained stage-1 block, freezes it and initializes
  // the stage-2 factors. Throws RankError unless rank2 < base.rank.
  static HloraBlock create(LoraBlock base, std::size_t rank2, double alpha2, Prng& rng);

  double scale2() const { return alpha2 / static_cast<double>(rank2); }
  std::size_t out_dim() const { return base.out_dim(); }
  std::size_t in_dim() const { return base.in_dim(); }
  void set_frozen(bool f);
  void validate() const;
};

// Several LoRA blocks on one weight; their deltas add.
struct AdapterStack {
  std::vector<LoraBlock> blocks;
};

using AdapterSpec = std::variant<LoraBlock, HloraBlock, AdapterStack>;

std::size_t out_dim(const AdapterSpec& spec);
std::size_t in_dim(const AdapterSpec& spec);

// Trainable tensors (those not frozen) in a fixed order.
std::vector<Tensor*> trainable_tensors(AdapterSpec& spec);
// Every tensor, frozen or not, in a fixed order.
std::vector<Tensor*> all_tensors(AdapterSpec& spec);

// Column-major forms on the tape (x is M x batch).
Var lora_forward(LoraBlock& block, Var w, Var x);
Var hlora_forward(HloraBlock& block, Var w, Var x);
Var stack_forward(AdapterStack& stack, Var w, Var x);

// Row-major delta for activations x (T x M): returns x * dW^T (T x N),
// evaluated through the low-rank factors.
Var adapter_delta_rows(AdapterSpec& spec, Var x);

// Dense effective delta dW (N x M).
Matrix delta_weight(const LoraBlock& block);
Matrix delta_weight(const HloraBlock& block);
Matrix delta_weight(const AdapterSpec& spec);

// W + dW.
Matrix merge_into_base(const Matrix& w, const LoraBlock& block);
Matrix merge_into_base(const Matrix& w, const AdapterSpec& spec);

struct FusionEntry {
  std::string id;
  double weight = 0.0;
};

struct FusionSpec {
  std::vector<FusionEntry> entries;

  // Pairs ids with a comma-separated weight list such as "0.67,0.33".
  static FusionSpec from_weights(std::span<const std::string> ids, std::string_view weights);
};

// sum_i w_i * dW_i, accumulated in entry order. All deltas must share a shape.
Matrix fuse(const FusionSpec& spec, std::span<const Matrix> deltas);
Matrix fuse(const FusionSpec& spec, std::span<const LoraBlock> adapters);

// -- Adapter files -----------------------------------------------------------
//
// "ALAD" | u32 version | u32 entry count | entries...
// entry: str point | u8 kind (0 LoRA, 1 HLoRA) | u32 N, M, r1, r2 |
//        f64 alpha1, alpha2 | u8 frozen1, frozen2 | fp64 blobs A, B[, A1, A2, B1, B2]
// All integers and floats little-endian; str is u32 length + bytes.

inline constexpr std::uint32_t kAdapterFileVersion = 1;

struct AdapterEntry {
  std::string point;
  std::variant<LoraBlock, HloraBlock> block;
};

using AdapterSet = std::vector<AdapterEntry>;

std::string encode_adapters(const AdapterSet& set);
AdapterSet decode_adapters(std::string bytes);
void save_adapters(const AdapterSet& set, const std::filesystem::path& path);
AdapterSet load_adapters(const std::filesystem::path& path);

void save_adapter(const LoraBlock& block, const std::string& point, const std::filesystem::path& path);
void save_adapter(const HloraBlock& block, const std::string& point, const std::filesystem::path& path);
// Single-entry file.
std::variant<LoraBlock, HloraBlock> load_adapter(const std::filesystem::path& path);

// -- Delta files ---------------------------------------------------------------
//
// "ALDT" | u32 version | u32 entry count | entries: str point | u32 N, M | fp64 blob

struct DeltaEntry {
  std::string point;
  Matrix delta;
};

using DeltaSet = std::vector<DeltaEntry>;

DeltaSet delta_set(const AdapterSet& set);
// Fuses whole adapter files point by point; every file must cover the same
// points with the same shapes.
DeltaSet fuse_sets(const FusionSpec& spec, std::span<const AdapterSet> sets);

std::string encode_deltas(const DeltaSet& set);
DeltaSet decode_deltas(std::string bytes);
void save_deltas(const DeltaSet& set, const std::filesystem::path& path);
DeltaSet load_deltas(const std::filesystem::path& path);

}  // namespace alab
