#include <cmath>

#include "alab/errors.hpp"
#include "alab/objectives.hpp"
#include "alab/simd/kernels.hpp"

namespace alab {

SftBatch SftBatch::from_text(std::string_view prompt, std::string_view response) {
  SftBatch b;
  b.prompt = encode_prompt(prompt);
  b.response = encode_bytes(response);
  b.response.push_back(tokens::kEos);
  return b;
}

std::vector<bool> SftBatch::loss_mask() const {
  // Target index t predicts token t+1 of prompt ++ response.
  const std::size_t n = prompt.size() + response.size() - 1;
  std::vector<bool> mask(n, false);
  for (std::size_t t = 0; t < n; ++t) mask[t] = t + 1 >= prompt.size();
  return mask;
}

DpoBatch DpoBatch::from_text(std::string_view prompt, std::string_view chosen, std::string_view rejected,
                             double beta) {
  DpoBatch b;
  b.prompt = encode_prompt(prompt);
  b.chosen = encode_bytes(chosen);
  b.chosen.push_back(tokens::kEos);
  b.rejected = encode_bytes(rejected);
  b.rejected.push_back(tokens::kEos);
  b.beta = beta;
  return b;
}

void DpoBatch::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ContractError("DPO beta must be positive");
  if (chosen == rejected) throw ContractError("DPO chosen and rejected responses are identical");
  if (prompt.empty() || chosen.empty() || rejected.empty()) throw ContractError("DPO batch has an empty part");
}

namespace {

struct Packed {
  TokenSeq inputs;
  std::vector<std::size_t> targets;
  std::vector<bool> mask;
  std::size_t count = 0;
};

Packed pack(const TokenSeq& prompt, const TokenSeq& response, std::size_t context_len) {
  if (prompt.empty() || response.empty()) throw DegenerateBatchError("empty prompt or response");
  Packed p;
  TokenSeq full = prompt;
  full.insert(full.end(), response.begin(), response.end());
  const std::size_t n = full.size() - 1;
  if (n > context_len) {
    throw ContextError("prompt+response of " + std::to_string(full.size()) + " tokens exceeds context_len " +
                       std::to_string(context_len) + " + 1");
  }
  p.inputs.assign(full.begin(), full.end() - 1);
  p.targets.assign(full.begin() + 1, full.end());
  p.mask.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    p.mask[t] = t + 1 >= prompt.size();
    p.count += p.mask[t] ? 1 : 0;
  }
  return p;
}

}  // namespace

Var sft_loss(TinyLM& model, Tape& tape, const SftBatch& batch) {
  const Packed p = pack(batch.prompt, batch.response, model.config().context_len);
  Var logp = log_softmax_rows(model.forward(tape, p.inputs));
  return gather_nll(logp, p.targets, p.mask);
}

Var sft_loss(TinyLM& model, Tape& tape, std::span<const SftBatch> batches) {
  if (batches.empty()) throw DegenerateBatchError("empty SFT batch list");
  if (batches.size() == 1) return sft_loss(model, tape, batches.front());
  std::vector<Packed> packed;
  std::size_t total = 0;
  for (const auto& b : batches) {
    packed.push_back(pack(b.prompt, b.response, model.config().context_len));
    total += packed.back().count;
  }
  Var acc;
  for (std::size_t i = 0; i < packed.size(); ++i) {
    const auto& p = packed[i];
    Var logp = log_softmax_rows(model.forward(tape, p.inputs));
    Var term = scale(gather_nll(logp, p.targets, p.mask), static_cast<double>(p.count) / static_cast<double>(total));
    acc = i == 0 ? term : add(acc, term);
  }
  return acc;
}

Var sequence_logprob(TinyLM& model, Tape& tape, const TokenSeq& prompt, const TokenSeq& response) {
  const Packed p = pack(prompt, response, model.config().context_len);
  Var logp = log_softmax_rows(model.forward(tape, p.inputs));
  return scale(gather_nll(logp, p.targets, p.mask), -static_cast<double>(p.count));
}

double sequence_logprob_value(TinyLM& model, const TokenSeq& prompt, const TokenSeq& response) {
  Tape tape;
  return sequence_logprob(model, tape, prompt, response).item();
}

ReferenceLogprobs reference_logprobs(TinyLM& reference, const DpoBatch& batch) {
  return {sequence_logprob_value(reference, batch.prompt, batch.chosen),
          sequence_logprob_value(reference, batch.prompt, batch.rejected)};
}

DpoResult dpo_loss(TinyLM& policy, const ReferenceLogprobs& ref, Tape& tape, const DpoBatch& batch) {
  batch.validate();
  Var chosen = sequence_logprob(policy, tape, batch.prompt, batch.chosen);
  Var rejected = sequence_logprob(policy, tape, batch.prompt, batch.rejected);
  // (lp_w - ref_w) - (lp_l - ref_l)
  Var ref_diff = tape.constant(Matrix(1, 1, ref.chosen - ref.rejected));
  Var margin = sub(sub(chosen, rejected), ref_diff);
  DpoResult out;
  out.margin = margin.item();
  out.loss = scale(log_sigmoid(scale(margin, batch.beta)), -1.0);
  return out;
}

DpoResult dpo_loss(TinyLM& policy, TinyLM& reference, Tape& tape, const DpoBatch& batch) {
  batch.validate();
  return dpo_loss(policy, reference_logprobs(reference, batch), tape, batch);
}

DpoResult dpo_loss(TinyLM& policy, std::span<const ReferenceLogprobs> refs, Tape& tape,
                   std::span<const DpoBatch> batches) {
  if (batches.empty()) throw DegenerateBatchError("empty DPO batch list");
  if (refs.size() != batches.size()) throw ContractError("one reference entry per DPO pair is required");
  if (batches.size() == 1) return dpo_loss(policy, refs.front(), tape, batches.front());
  DpoResult out;
  const double w = 1.0 / static_cast<double>(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    DpoResult r = dpo_loss(policy, refs[i], tape, batches[i]);
    Var term = scale(r.loss, w);
    out.loss = i == 0 ? term : add(out.loss, term);
    out.margin += w * r.margin;
  }
  return out;
}

void adam_step(std::span<Tensor* const> params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.empty() && state.step == 0) {
    for (Tensor* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("Adam state holds " + std::to_string(state.m.size()) + " slots for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!state.m[i].same_shape(params[i]->value) || !state.v[i].same_shape(params[i]->value)) {
      throw DimensionError("Adam state shape " + state.m[i].shape_string() + " does not match parameter " +
                           params[i]->value.shape_string());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const auto& kt = simd::kernels();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (!p.requires_grad || !p.grad) continue;
    kt.adam(p.value.size(), p.value.data(), p.grad->data(), state.m[i].data(), state.v[i].data(), cfg.lr,
            cfg.beta1, cfg.beta2, cfg.eps, bc1, bc2);
  }
}

}  // namespace alab
