#include "alab/adapters.hpp"

#include <cmath>
#include <sstream>

#include "alab/binary_io.hpp"
#include "alab/errors.hpp"
#include "alab/simd/kernels.hpp"

namespace alab {
namespace {

void require_shape(const char* what, const Tensor& t, std::size_t rows, std::size_t cols) {
  if (t.rows() != rows || t.cols() != cols) {
    throw DimensionError(std::string(what) + " must be " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + t.value.shape_string());
  }
}

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

}  // namespace

// ---------------------------------------------------------------------------
// Blocks

LoraBlock LoraBlock::create(std::size_t out_dim, std::size_t in_dim, std::size_t rank, double alpha,
                            Prng& rng) {
  if (rank == 0) throw RankError("LoRA rank must be positive");
  LoraBlock blk;
  blk.a = Tensor(Matrix::random_normal(rank, in_dim, kAdapterInitStd, rng), true);
  blk.b = Tensor(Matrix(out_dim, rank, 0.0), true);
  blk.rank = rank;
  blk.alpha = alpha;
  blk.validate();
  return blk;
}

void LoraBlock::set_frozen(bool f) {
  frozen = f;
  a.requires_grad = !f;
  b.requires_grad = !f;
  if (f) {
    a.zero_grad();
    b.zero_grad();
  }
}

void LoraBlock::validate() const {
  if (rank == 0) throw RankError("LoRA rank must be positive");
  require_shape("LoRA A", a, rank, a.cols());
  require_shape("LoRA B", b, b.rows(), rank);
  if (!std::isfinite(scale())) throw RankError("LoRA scale alpha/rank is not finite");
}

HloraBlock HloraBlock::create(LoraBlock base, std::size_t rank2, double alpha2, Prng& rng) {
  base.validate();
  if (rank2 == 0 || rank2 >= base.rank) {
    throw RankError("HLoRA needs 0 < r2 < r1, got r1=" + std::to_string(base.rank) +
                    " r2=" + std::to_string(rank2));
  }
  HloraBlock h;
  const std::size_t n = base.out_dim();
  const std::size_t m = base.in_dim();
  const std::size_t r1 = base.rank;
  h.a1 = Tensor(Matrix::random_normal(rank2, m, kAdapterInitStd, rng), true);
  h.a2 = Tensor(Matrix::random_normal(r1, rank2, kAdapterInitStd, rng), true);
  h.b1 = Tensor(Matrix::random_normal(rank2, r1, kAdapterInitStd, rng), true);
  h.b2 = Tensor(Matrix(n, rank2, 0.0), true);
  h.rank2 = rank2;
  h.alpha2 = alpha2;
  h.base = std::move(base);
  h.base.set_frozen(true);
  h.validate();
  return h;
}

void HloraBlock::set_frozen(bool f) {
  frozen = f;
  for (Tensor* t : {&a1, &a2, &b1, &b2}) {
    t->requires_grad = !f;
    if (f) t->zero_grad();
  }
}

void HloraBlock::validate() const {
  base.validate();
  if (rank2 == 0 || rank2 >= base.rank) {
    throw RankError("HLoRA needs 0 < r2 < r1, got r1=" + std::to_string(base.rank) +
                    " r2=" + std::to_string(rank2));
  }
  const std::size_t n = base.out_dim(), m = base.in_dim(), r1 = base.rank;
  require_shape("HLoRA A1", a1, rank2, m);
  require_shape("HLoRA A2", a2, r1, rank2);
  require_shape("HLoRA B1", b1, rank2, r1);
  require_shape("HLoRA B2", b2, n, rank2);
  if (!std::isfinite(scale2())) throw RankError("HLoRA scale alpha2/rank2 is not finite");
}

std::size_t out_dim(const AdapterSpec& spec) {
  return std::visit(Overloaded{[](const LoraBlock& b) { return b.out_dim(); },
                               [](const HloraBlock& b) { return b.out_dim(); },
                               [](const AdapterStack& s) {
                                 return s.blocks.empty() ? std::size_t{0} : s.blocks.front().out_dim();
                               }},
                    spec);
}

std::size_t in_dim(const AdapterSpec& spec) {
  return std::visit(Overloaded{[](const LoraBlock& b) { return b.in_dim(); },
                               [](const HloraBlock& b) { return b.in_dim(); },
                               [](const AdapterStack& s) {
                                 return s.blocks.empty() ? std::size_t{0} : s.blocks.front().in_dim();
                               }},
                    spec);
}

std::vector<Tensor*> all_tensors(AdapterSpec& spec) {
  std::vector<Tensor*> out;
  std::visit(Overloaded{[&](LoraBlock& b) { out = {&b.a, &b.b}; },
                        [&](HloraBlock& h) { out = {&h.base.a, &h.base.b, &h.a1, &h.a2, &h.b1, &h.b2}; },
                        [&](AdapterStack& s) {
                          for (auto& b : s.blocks) {
                            out.push_back(&b.a);
                            out.push_back(&b.b);
                          }
                        }},
             spec);
  return out;
}

std::vector<Tensor*> trainable_tensors(AdapterSpec& spec) {
  std::vector<Tensor*> out;
  for (Tensor* t : all_tensors(spec)) {
    if (t->requires_grad) out.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward algebra

Var lora_forward(LoraBlock& block, Var w, Var x) {
  Tape& t = *w.tape();
  Var base = matmul(w, x);
  Var low = matmul(t.leaf(block.b), matmul(t.leaf(block.a), x));
  if (base.rows() != low.rows()) {
    throw DimensionError("LoRA output " + low.value().shape_string() + " does not match W x " +
                         base.value().shape_string());
  }
  return add(base, scale(low, block.scale()));
}

namespace {

// s2 * B2 (B1 (A2 (A1 x))), column form.
Var hlora_stage2_cols(HloraBlock& h, Var x) {
  Tape& t = *x.tape();
  Var z = matmul(t.leaf(h.a1), x);
  z = matmul(t.leaf(h.a2), z);
  z = matmul(t.leaf(h.b1), z);
  z = matmul(t.leaf(h.b2), z);
  return scale(z, h.scale2());
}

Var lora_rows(LoraBlock& b, Var x) {
  Tape& t = *x.tape();
  return scale(matmul_nt(matmul_nt(x, t.leaf(b.a)), t.leaf(b.b)), b.scale());
}

Var hlora_stage2_rows(HloraBlock& h, Var x) {
  Tape& t = *x.tape();
  Var z = matmul_nt(x, t.leaf(h.a1));
  z = matmul_nt(z, t.leaf(h.a2));
  z = matmul_nt(z, t.leaf(h.b1));
  z = matmul_nt(z, t.leaf(h.b2));
  return scale(z, h.scale2());
}

}  // namespace

Var hlora_forward(HloraBlock& block, Var w, Var x) {
  Var first = lora_forward(block.base, w, x);
  return add(first, hlora_stage2_cols(block, x));
}

Var stack_forward(AdapterStack& stack, Var w, Var x) {
  Tape& t = *w.tape();
  Var out = matmul(w, x);
  for (auto& b : stack.blocks) {
    out = add(out, scale(matmul(t.leaf(b.b), matmul(t.leaf(b.a), x)), b.scale()));
  }
  return out;
}

Var adapter_delta_rows(AdapterSpec& spec, Var x) {
  return std::visit(Overloaded{[&](LoraBlock& b) { return lora_rows(b, x); },
                               [&](HloraBlock& h) { return add(lora_rows(h.base, x), hlora_stage2_rows(h, x)); },
                               [&](AdapterStack& s) {
                                 if (s.blocks.empty()) throw ContractError("empty adapter stack");
                                 Var out = lora_rows(s.blocks.front(), x);
                                 for (std::size_t i = 1; i < s.blocks.size(); ++i) {
                                   out = add(out, lora_rows(s.blocks[i], x));
                                 }
                                 return out;
                               }},
                    spec);
}

// ---------------------------------------------------------------------------
// Dense deltas, merging, fusion

Matrix delta_weight(const LoraBlock& block) {
  return block.scale() * matmul(block.b.value, block.a.value);
}

Matrix delta_weight(const HloraBlock& h) {
  const Matrix up = matmul(h.b2.value, h.b1.value);    // N x r1
  const Matrix down = matmul(h.a2.value, h.a1.value);  // r1 x M
  return delta_weight(h.base) + h.scale2() * matmul(up, down);
}

Matrix delta_weight(const AdapterSpec& spec) {
  return std::visit(Overloaded{[](const LoraBlock& b) { return delta_weight(b); },
                               [](const HloraBlock& h) { return delta_weight(h); },
                               [](const AdapterStack& s) {
                                 if (s.blocks.empty()) throw ContractError("empty adapter stack");
                                 Matrix d = delta_weight(s.blocks.front());
                                 for (std::size_t i = 1; i < s.blocks.size(); ++i) d = d + delta_weight(s.blocks[i]);
                                 return d;
                               }},
                    spec);
}

Matrix merge_into_base(const Matrix& w, const LoraBlock& block) {
  const Matrix d = delta_weight(block);
  if (!d.same_shape(w)) {
    throw DimensionError("adapter delta " + d.shape_string() + " does not match weight " + w.shape_string());
  }
  return w + d;
}

Matrix merge_into_base(const Matrix& w, const AdapterSpec& spec) {
  const Matrix d = delta_weight(spec);
  if (!d.same_shape(w)) {
    throw DimensionError("adapter delta " + d.shape_string() + " does not match weight " + w.shape_string());
  }
  return w + d;
}

FusionSpec FusionSpec::from_weights(std::span<const std::string> ids, std::string_view weights) {
  std::vector<double> ws;
  std::string item;
  std::stringstream ss{std::string(weights)};
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double w = std::stod(item, &used);
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
      if (!std::isfinite(w)) throw std::invalid_argument(item);
      ws.push_back(w);
    } catch (const std::logic_error&) {
      throw ConfigError("weights: cannot parse \"" + item + "\"");
    }
  }
  if (ws.empty()) throw ConfigError("weights: at least one weight is required");
  if (ws.size() != ids.size()) {
    throw ConfigError("weights: " + std::to_string(ws.size()) + " weights for " + std::to_string(ids.size()) +
                      " adapters");
  }
  FusionSpec spec;
  for (std::size_t i = 0; i < ws.size(); ++i) spec.entries.push_back({ids[i], ws[i]});
  return spec;
}

Matrix fuse(const FusionSpec& spec, std::span<const Matrix> deltas) {
  if (spec.entries.empty()) throw FusionError("fusion needs at least one entry");
  if (spec.entries.size() != deltas.size()) {
    throw FusionError("fusion spec has " + std::to_string(spec.entries.size()) + " entries but " +
                      std::to_string(deltas.size()) + " adapters were given");
  }
  for (std::size_t i = 1; i < deltas.size(); ++i) {
    if (!deltas[i].same_shape(deltas[0])) {
      throw FusionError("adapter " + spec.entries[i].id + " has shape " + deltas[i].shape_string() +
                        ", expected " + deltas[0].shape_string());
    }
  }
  const auto& kt = simd::kernels();
  Matrix acc = spec.entries[0].weight * deltas[0];
  for (std::size_t i = 1; i < deltas.size(); ++i) {
    kt.axpy(acc.size(), spec.entries[i].weight, deltas[i].data(), acc.data());
  }
  return acc;
}

Matrix fuse(const FusionSpec& spec, std::span<const LoraBlock> adapters) {
  std::vector<Matrix> deltas;
  deltas.reserve(adapters.size());
  for (const auto& a : adapters) deltas.push_back(delta_weight(a));
  return fuse(spec, deltas);
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr std::string_view kAdapterMagic = "ALAD";
constexpr std::string_view kDeltaMagic = "ALDT";
constexpr std::uint32_t kDeltaFileVersion = 1;

std::uint32_t checked_u32(std::size_t v) {
  if (v > 0xFFFFFFFFu) throw FormatError("dimension too large to encode", 0);
  return static_cast<std::uint32_t>(v);
}

void put_lora_header(BinaryWriter& w, const LoraBlock& b, std::uint8_t kind, std::size_t r2, double alpha2,
                     bool frozen2) {
  w.u8(kind);
  w.u32(checked_u32(b.out_dim()));
  w.u32(checked_u32(b.in_dim()));
  w.u32(checked_u32(b.rank));
  w.u32(checked_u32(r2));
  w.f64(b.alpha);
  w.f64(alpha2);
  w.u8(b.frozen ? 1 : 0);
  w.u8(frozen2 ? 1 : 0);
}

}  // namespace

std::string encode_adapters(const AdapterSet& set) {
  BinaryWriter w;
  w.bytes(kAdapterMagic);
  w.u32(kAdapterFileVersion);
  w.u32(checked_u32(set.size()));
  for (const auto& e : set) {
    w.str(e.point);
    if (const auto* lb = std::get_if<LoraBlock>(&e.block)) {
      lb->validate();
      put_lora_header(w, *lb, 0, 0, 0.0, false);
      w.blob(lb->a.value);
      w.blob(lb->b.value);
    } else {
      const auto& h = std::get<HloraBlock>(e.block);
      h.validate();
      put_lora_header(w, h.base, 1, h.rank2, h.alpha2, h.frozen);
      w.blob(h.base.a.value);
      w.blob(h.base.b.value);
      w.blob(h.a1.value);
      w.blob(h.a2.value);
      w.blob(h.b1.value);
      w.blob(h.b2.value);
    }
  }
  return w.buffer();
}

AdapterSet decode_adapters(std::string bytes) {
  BinaryReader r(std::move(bytes));
  r.expect_magic(kAdapterMagic);
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32(); v != kAdapterFileVersion) {
    throw FormatError("unsupported adapter file version " + std::to_string(v), version_at);
  }
  const std::uint32_t count = r.u32();
  AdapterSet set;
  for (std::uint32_t i = 0; i < count; ++i) {
    AdapterEntry e;
    e.point = r.str();
    const std::size_t kind_at = r.offset();
    const std::uint8_t kind = r.u8();
    if (kind > 1) throw FormatError("unknown adapter kind " + std::to_string(kind), kind_at);
    const std::size_t dims_at = r.offset();
    const std::uint32_t n = r.u32(), m = r.u32(), r1 = r.u32(), r2 = r.u32();
    const double alpha1 = r.f64(), alpha2 = r.f64();
    const bool frozen1 = r.u8() != 0, frozen2 = r.u8() != 0;
    if (r1 == 0) throw FormatError("zero LoRA rank", dims_at);
    LoraBlock base;
    base.a = Tensor(r.blob(r1, m));
    base.b = Tensor(r.blob(n, r1));
    base.rank = r1;
    base.alpha = alpha1;
    base.set_frozen(frozen1);
    if (kind == 0) {
      if (r2 != 0) throw FormatError("LoRA entry with nonzero r2", dims_at);
      e.block = std::move(base);
    } else {
      if (r2 == 0 || r2 >= r1) {
        throw FormatError("HLoRA entry violates r2 < r1 (r1=" + std::to_string(r1) + ", r2=" + std::to_string(r2) + ")",
                          dims_at);
      }
      HloraBlock h;
      h.base = std::move(base);
      h.a1 = Tensor(r.blob(r2, m));
      h.a2 = Tensor(r.blob(r1, r2));
      h.b1 = Tensor(r.blob(r2, r1));
      h.b2 = Tensor(r.blob(n, r2));
      h.rank2 = r2;
      h.alpha2 = alpha2;
      h.set_frozen(frozen2);
      e.block = std::move(h);
    }
    set.push_back(std::move(e));
  }
  r.expect_end();
  return set;
}

void save_adapters(const AdapterSet& set, const std::filesystem::path& path) {
  write_file_bytes(path, encode_adapters(set));
}

AdapterSet load_adapters(const std::filesystem::path& path) { return decode_adapters(read_file_bytes(path)); }

void save_adapter(const LoraBlock& block, const std::string& point, const std::filesystem::path& path) {
  AdapterSet set;
  set.push_back({point, block});
  save_adapters(set, path);
}

void save_adapter(const HloraBlock& block, const std::string& point, const std::filesystem::path& path) {
  AdapterSet set;
  set.push_back({point, block});
  save_adapters(set, path);
}

std::variant<LoraBlock, HloraBlock> load_adapter(const std::filesystem::path& path) {
  AdapterSet set = load_adapters(path);
  if (set.size() != 1) {
    throw FormatError("expected a single adapter entry, found " + std::to_string(set.size()), 8);
  }
  return std::move(set.front().block);
}

DeltaSet delta_set(const AdapterSet& set) {
  DeltaSet out;
  for (const auto& e : set) {
    Matrix d = std::visit([](const auto& b) { return delta_weight(b); }, e.block);
    out.push_back({e.point, std::move(d)});
  }
  return out;
}

DeltaSet fuse_sets(const FusionSpec& spec, std::span<const AdapterSet> sets) {
  if (sets.empty()) throw FusionError("fusion needs at least one adapter file");
  std::vector<DeltaSet> deltas;
  for (const auto& s : sets) deltas.push_back(delta_set(s));
  DeltaSet out;
  for (std::size_t p = 0; p < deltas[0].size(); ++p) {
    const std::string& point = deltas[0][p].point;
    std::vector<Matrix> per_adapter;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      if (deltas[i].size() != deltas[0].size() || deltas[i][p].point != point) {
        throw FusionError("adapter " + spec.entries.at(i).id + " does not cover the same attachment points");
      }
      per_adapter.push_back(deltas[i][p].delta);
    }
    out.push_back({point, fuse(spec, per_adapter)});
  }
  return out;
}

std::string encode_deltas(const DeltaSet& set) {
  BinaryWriter w;
  w.bytes(kDeltaMagic);
  w.u32(kDeltaFileVersion);
  w.u32(checked_u32(set.size()));
  for (const auto& e : set) {
    w.str(e.point);
    w.u32(checked_u32(e.delta.rows()));
    w.u32(checked_u32(e.delta.cols()));
    w.blob(e.delta);
  }
  return w.buffer();
}

DeltaSet decode_deltas(std::string bytes) {
  BinaryReader r(std::move(bytes));
  r.expect_magic(kDeltaMagic);
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32(); v != kDeltaFileVersion) {
    throw FormatError("unsupported delta file version " + std::to_string(v), version_at);
  }
  const std::uint32_t count = r.u32();
  DeltaSet set;
  for (std::uint32_t i = 0; i < count; ++i) {
    DeltaEntry e;
    e.point = r.str();
    const std::uint32_t n = r.u32(), m = r.u32();
    e.delta = r.blob(n, m);
    set.push_back(std::move(e));
  }
  r.expect_end();
  return set;
}

void save_deltas(const DeltaSet& set, const std::filesystem::path& path) {
  write_file_bytes(path, encode_deltas(set));
}

DeltaSet load_deltas(const std::filesystem::path& path) { return decode_deltas(read_file_bytes(path)); }

}  // namespace alab
