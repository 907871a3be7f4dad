#include <algorithm>
#include <cstdio>
#include <numeric>
#include <optional>

#include "alab/errors.hpp"
#include "alab/objectives.hpp"

namespace alab {

std::string_view regime_name(Regime r) {
  switch (r) {
    case Regime::full: return "full";
    case Regime::joint: return "joint";
    case Regime::continuous: return "continuous";
    case Regime::multi_adapter: return "multi_adapter";
    case Regime::fusion: return "fusion";
    case Regime::hlora: return "hlora";
  }
  return "?";
}

Regime parse_regime(std::string_view s) {
  for (Regime r : {Regime::full, Regime::joint, Regime::continuous, Regime::multi_adapter, Regime::fusion,
                   Regime::hlora}) {
    if (regime_name(r) == s) return r;
  }
  throw ConfigError("regime: unknown value \"" + std::string(s) +
                    "\" (expected full, joint, continuous, multi_adapter, fusion or hlora)");
}

std::string_view objective_name(Objective o) { return o == Objective::sft ? "sft" : "dpo"; }

Objective parse_objective(std::string_view s) {
  if (s == "sft") return Objective::sft;
  if (s == "dpo") return Objective::dpo;
  throw ConfigError("objective: unknown value \"" + std::string(s) + "\" (expected sft or dpo)");
}

void Schedule::validate() const {
  const std::size_t want = regime == Regime::joint ? 1 : 2;
  if (regime == Regime::full) {
    if (stages.empty()) throw ConfigError("stages: the full regime needs at least one stage");
  } else if (stages.size() != want) {
    throw ConfigError("stages: regime " + std::string(regime_name(regime)) + " needs exactly " +
                      std::to_string(want) + " stage(s), got " + std::to_string(stages.size()));
  }
  if (regime != Regime::joint && regime != Regime::full && !order.empty() && order.size() != 2) {
    throw ConfigError("order: two-stage regimes take exactly two attributes");
  }
  if (regime == Regime::fusion && !fusion_weights.empty() && fusion_weights.size() != 2) {
    throw ConfigError("weights: fusion of two adapters takes exactly two weights");
  }
  if (regime != Regime::fusion && !fusion_weights.empty()) {
    throw ConfigError("weights: only the fusion regime takes weights");
  }
  if (batch_size == 0) throw ConfigError("batch: must be at least 1");
  if (!(beta > 0.0)) throw ConfigError("beta: must be positive");
  if (adapter.rank == 0) throw ConfigError("rank: must be positive");
  if (regime == Regime::hlora && (adapter.rank2 == 0 || adapter.rank2 >= adapter.rank)) {
    throw ConfigError("rank2: HLoRA needs 0 < rank2 < rank");
  }
  for (const auto& s : stages) {
    if (s.dataset.empty()) throw ConfigError("stage dataset is empty");
    if (!(s.lr > 0.0)) throw ConfigError("lr: must be positive");
  }
}

namespace {

// Cycles through a dataset in seeded shuffled epochs.
class Sampler {
 public:
  Sampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  std::vector<std::size_t> take(std::size_t k) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  Prng rng_;
  std::size_t pos_ = 0;
};

class Runner {
 public:
  Runner(TinyLM& model, const Schedule& schedule, const DatasetMap& datasets, ScheduleObserver* observer)
      : model_(model), sched_(schedule), datasets_(datasets), observer_(observer), rng_(schedule.seed) {
    if (sched_.objective == Objective::dpo) {
      reference_.emplace(model_);
      reference_->detach_all();
      reference_->set_base_trainable(false);
    }
    points_ = sched_.adapter.points.empty() ? model_.default_adapter_points() : sched_.adapter.points;
  }

  TrainedArtifacts run() {
    model_.detach_all();
    model_.set_base_trainable(sched_.regime == Regime::full);
    switch (sched_.regime) {
      case Regime::full:
        for (std::size_t s = 0; s < sched_.stages.size(); ++s) train_stage(s);
        model_.set_base_trainable(false);
        break;
      case Regime::joint:
        attach_fresh();
        train_stage(0);
        out_.adapters.push_back({"adapter", collect()});
        break;
      case Regime::continuous:
        attach_fresh();
        train_stage(0);
        train_stage(1);
        out_.adapters.push_back({"adapter", collect()});
        break;
      case Regime::multi_adapter:
        attach_fresh();
        train_stage(0);
        out_.adapters.push_back({"adapter1", collect()});
        stack_fresh();
        train_stage(1);
        out_.adapters.push_back({"adapter2", collect_stack_top()});
        break;
      case Regime::fusion:
        attach_fresh();
        train_stage(0);
        out_.adapters.push_back({"adapter1", collect()});
        model_.detach_all();
        attach_fresh();
        train_stage(1);
        out_.adapters.push_back({"adapter2", collect()});
        if (!sched_.fusion_weights.empty()) {
          FusionSpec spec;
          for (std::size_t i = 0; i < 2; ++i) {
            spec.entries.push_back({out_.adapters[i].name, sched_.fusion_weights[i]});
          }
          const AdapterSet sets[] = {out_.adapters[0].set, out_.adapters[1].set};
          out_.fused = fuse_sets(spec, sets);
        }
        break;
      case Regime::hlora:
        attach_fresh();
        train_stage(0);
        grow_hlora();
        train_stage(1);
        out_.adapters.push_back({"adapter", collect()});
        break;
    }
    model_.detach_all();
    return std::move(out_);
  }

 private:
  void attach_fresh() {
    for (const auto& p : points_) {
      const LinearLayer& l = model_.linear(p);
      model_.attach(p, LoraBlock::create(l.weight.rows(), l.weight.cols(), sched_.adapter.rank,
                                         sched_.adapter.alpha, rng_));
    }
  }

  void stack_fresh() {
    for (const auto& p : points_) {
      LoraBlock first = std::move(std::get<LoraBlock>(model_.adapter(p)));
      first.set_frozen(true);
      model_.detach(p);
      const LinearLayer& l = model_.linear(p);
      AdapterStack stack;
      stack.blocks.push_back(std::move(first));
      stack.blocks.push_back(
          LoraBlock::create(l.weight.rows(), l.weight.cols(), sched_.adapter.rank, sched_.adapter.alpha, rng_));
      model_.attach(p, std::move(stack));
    }
  }

  void grow_hlora() {
    for (const auto& p : points_) {
      LoraBlock first = std::move(std::get<LoraBlock>(model_.adapter(p)));
      model_.detach(p);
      model_.attach(p, HloraBlock::create(std::move(first), sched_.adapter.rank2, sched_.adapter.alpha2, rng_));
    }
  }

  AdapterSet collect() {
    AdapterSet set;
    for (const auto& p : points_) {
      AdapterSpec& spec = model_.adapter(p);
      if (auto* l = std::get_if<LoraBlock>(&spec)) {
        set.push_back({p, *l});
      } else if (auto* h = std::get_if<HloraBlock>(&spec)) {
        set.push_back({p, *h});
      } else {
        throw ContractError("cannot collect a stacked adapter directly");
      }
    }
    return set;
  }

  AdapterSet collect_stack_top() {
    AdapterSet set;
    for (const auto& p : points_) {
      set.push_back({p, std::get<AdapterStack>(model_.adapter(p)).blocks.back()});
    }
    return set;
  }

  std::vector<Tensor*> trainables() {
    std::vector<Tensor*> out;
    if (sched_.regime == Regime::full) {
      for (auto& [name, t] : model_.named_parameters()) {
        if (t->requires_grad) out.push_back(t);
      }
    } else {
      out = model_.adapter_trainables();
    }
    return out;
  }

  void train_stage(std::size_t s) {
    const StageSpec& stage = sched_.stages[s];
    auto it = datasets_.find(stage.dataset);
    if (it == datasets_.end()) throw ConfigError("stage " + std::to_string(s + 1) + ": unknown dataset \"" + stage.dataset + "\"");
    const TrainingSet& data = it->second;

    if (observer_) observer_->on_stage_begin(s, model_);
    std::vector<Tensor*> params = trainables();
    if (params.empty()) throw NoTrainableParamsError("stage " + std::to_string(s + 1) + " has no trainable parameters");

    out_.stage_starts.push_back(out_.curve.size());

    AdamState state;
    const AdamConfig cfg{stage.lr};
    const std::uint64_t sampler_seed = sched_.seed * 0x9E3779B97F4A7C15ULL + s + 1;

    if (sched_.objective == Objective::sft) {
      const auto* examples = std::get_if<std::vector<SftExample>>(&data);
      if (!examples) throw ConfigError("dataset \"" + stage.dataset + "\" holds preference pairs, objective is sft");
      if (examples->empty()) throw DegenerateBatchError("dataset \"" + stage.dataset + "\" is empty");
      std::vector<SftBatch> batches;
      for (const auto& e : *examples) batches.push_back(SftBatch::from_text(e.prompt, e.response));
      Sampler sampler(batches.size(), sampler_seed);
      for (std::size_t step = 0; step < stage.steps; ++step) {
        std::vector<SftBatch> mb;
        for (std::size_t i : sampler.take(sched_.batch_size)) mb.push_back(batches[i]);
        for (Tensor* p : params) p->zero_grad();
        Tape tape;
        Var loss = sft_loss(model_, tape, mb);
        const double lv = loss.item();
        tape.backward(loss);
        if (observer_) observer_->on_step(s, step, lv, model_);
        adam_step(params, state, cfg);
        out_.curve.push_back({out_.curve.size(), lv});
      }
    } else {
      const auto* pairs = std::get_if<std::vector<DpoExample>>(&data);
      if (!pairs) throw ConfigError("dataset \"" + stage.dataset + "\" holds SFT records, objective is dpo");
      if (pairs->empty()) throw DegenerateBatchError("dataset \"" + stage.dataset + "\" is empty");
      std::vector<DpoBatch> batches;
      for (const auto& e : *pairs) batches.push_back(DpoBatch::from_text(e.prompt, e.chosen, e.rejected, sched_.beta));
      auto& cache = ref_cache_[stage.dataset];
      cache.resize(batches.size());
      Sampler sampler(batches.size(), sampler_seed);
      for (std::size_t step = 0; step < stage.steps; ++step) {
        std::vector<DpoBatch> mb;
        std::vector<ReferenceLogprobs> refs;
        for (std::size_t i : sampler.take(sched_.batch_size)) {
          if (!cache[i]) cache[i] = reference_logprobs(*reference_, batches[i]);
          mb.push_back(batches[i]);
          refs.push_back(*cache[i]);
        }
        for (Tensor* p : params) p->zero_grad();
        Tape tape;
        DpoResult r = dpo_loss(model_, refs, tape, mb);
        const double lv = r.loss.item();
        tape.backward(r.loss);
        if (observer_) observer_->on_step(s, step, lv, model_);
        adam_step(params, state, cfg);
        out_.curve.push_back({out_.curve.size(), lv});
      }
    }
    for (Tensor* p : params) p->zero_grad();
  }

  TinyLM& model_;
  const Schedule& sched_;
  const DatasetMap& datasets_;
  ScheduleObserver* observer_;
  Prng rng_;
  std::optional<TinyLM> reference_;
  std::map<std::string, std::vector<std::optional<ReferenceLogprobs>>> ref_cache_;
  std::vector<std::string> points_;
  TrainedArtifacts out_;
};

}  // namespace

TrainedArtifacts run_schedule(TinyLM& model, const Schedule& schedule, const DatasetMap& datasets,
                              ScheduleObserver* observer) {
  schedule.validate();
  return Runner(model, schedule, datasets, observer).run();
}

TrainedArtifacts run_schedule(TinyLM& model, const Schedule& schedule, const DatasetMap& datasets) {
  return run_schedule(model, schedule, datasets, nullptr);
}

std::string loss_curve_csv(const std::vector<LossPoint>& curve) {
  std::string out = "step,loss\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", p.step, p.loss);
    out += buf;
  }
  return out;
}

}  // namespace alab
