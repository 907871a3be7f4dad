#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "alab/adapters.hpp"
#include "alab/model.hpp"

namespace alab {

// -- Losses ------------------------------------------------------------------

// prompt = BOS + prompt bytes; response = response bytes + EOS. The loss mask
// covers exactly the response positions.
struct SftBatch {
  TokenSeq prompt;
  TokenSeq response;

  static SftBatch from_text(std::string_view prompt, std::string_view response);
  std::vector<bool> loss_mask() const;
};

struct DpoBatch {
  TokenSeq prompt;
  TokenSeq chosen;
  TokenSeq rejected;
  double beta = 0.1;

  static DpoBatch from_text(std::string_view prompt, std::string_view chosen, std::string_view rejected,
                            double beta = 0.1);
  void validate() const;
};

inline constexpr double kDefaultDpoBeta = 0.1;

// Mean next-token NLL over response positions.
Var sft_loss(TinyLM& model, Tape& tape, const SftBatch& batch);
// Token-weighted mean over several examples (one forward per example).
Var sft_loss(TinyLM& model, Tape& tape, std::span<const SftBatch> batches);

// Sum of log p(response | prompt) over response tokens.
Var sequence_logprob(TinyLM& model, Tape& tape, const TokenSeq& prompt, const TokenSeq& response);
// Same quantity evaluated without recording gradients.
double sequence_logprob_value(TinyLM& model, const TokenSeq& prompt, const TokenSeq& response);

struct DpoResult {
  Var loss;
  // (log pi(y_w) - log ref(y_w)) - (log pi(y_l) - log ref(y_l)), before beta.
  double margin = 0.0;
};

struct ReferenceLogprobs {
  double chosen = 0.0;
  double rejected = 0.0;
};

ReferenceLogprobs reference_logprobs(TinyLM& reference, const DpoBatch& batch);

// -log sigmoid(beta * margin). The reference model receives no gradient.
DpoResult dpo_loss(TinyLM& policy, TinyLM& reference, Tape& tape, const DpoBatch& batch);
DpoResult dpo_loss(TinyLM& policy, const ReferenceLogprobs& ref, Tape& tape, const DpoBatch& batch);
// Mean over pairs; margin is the mean margin.
DpoResult dpo_loss(TinyLM& policy, std::span<const ReferenceLogprobs> refs, Tape& tape,
                   std::span<const DpoBatch> batches);

// -- Optimizer -----------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

// One bias-corrected Adam update. Tensors with requires_grad == false (frozen)
// or without a gradient are left untouched. State is sized on first use and
// must keep matching the parameter shapes afterwards.
void adam_step(std::span<Tensor* const> params, AdamState& state, const AdamConfig& cfg);

// -- Schedules -----------------------------------------------------------------

enum class Regime { full, joint, continuous, multi_adapter, fusion, hlora };
enum class Objective { sft, dpo };

std::string_view regime_name(Regime r);
Regime parse_regime(std::string_view s);
std::string_view objective_name(Objective o);
Objective parse_objective(std::string_view s);

struct StageSpec {
  std::string dataset;  // key into the dataset map
  std::size_t steps = 100;
  double lr = 1e-3;
};

struct AdapterShape {
  std::size_t rank = 32;
  double alpha = 16.0;
  std::size_t rank2 = 16;
  double alpha2 = 8.0;
  std::vector<std::string> points;  // empty means the model's default set
};

struct Schedule {
  Regime regime = Regime::joint;
  Objective objective = Objective::sft;
  std::vector<std::string> order;      // attribute sequence, e.g. {length, extractiveness}
  std::vector<double> fusion_weights;  // fusion only
  std::vector<StageSpec> stages;
  AdapterShape adapter;
  std::size_t batch_size = 4;
  double beta = kDefaultDpoBeta;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SftExample {
  std::string prompt;
  std::string response;
};

struct DpoExample {
  std::string prompt;
  std::string chosen;
  std::string rejected;
};

using TrainingSet = std::variant<std::vector<SftExample>, std::vector<DpoExample>>;
using DatasetMap = std::map<std::string, TrainingSet>;

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;
};

struct NamedAdapterSet {
  std::string name;  // "adapter", "adapter1", "adapter2", ...
  AdapterSet set;
};

struct TrainedArtifacts {
  std::vector<NamedAdapterSet> adapters;
  std::vector<LossPoint> curve;
  std::vector<std::size_t> stage_starts;  // index into curve where each stage begins
  std::optional<DeltaSet> fused;          // fusion regime with weights
};

// Executes the stages in order on `model`. For the full regime the base
// weights are trained in place; otherwise the base stays frozen and adapters
// are left detached on return.
TrainedArtifacts run_schedule(TinyLM& model, const Schedule& schedule, const DatasetMap& datasets);

// Stage-wise hook for observers (tests use it to inspect intermediate state).
struct ScheduleObserver {
  virtual ~ScheduleObserver() = default;
  virtual void on_stage_begin(std::size_t /*stage*/, TinyLM& /*model*/) {}
  virtual void on_step(std::size_t /*stage*/, std::size_t /*step*/, double /*loss*/, TinyLM& /*model*/) {}
};

TrainedArtifacts run_schedule(TinyLM& model, const Schedule& schedule, const DatasetMap& datasets,
                              ScheduleObserver* observer);

std::string loss_curve_csv(const std::vector<LossPoint>& curve);

}  // namespace alab
