#include <cmath>

#include "doctest.h"

#include "alab/errors.hpp"
#include "alab/objectives.hpp"

using namespace alab;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.dim = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context_len = 48;
  c.ffn_dim = 16;
  c.seed = seed;
  return c;
}

void attach_random(TinyLM& m, Prng& rng, double b_std) {
  for (const auto& p : m.default_adapter_points()) {
    const auto& l = m.linear(p);
    LoraBlock b = LoraBlock::create(l.weight.rows(), l.weight.cols(), 4, 4.0, rng);
    for (double& v : b.b.value.values()) v = b_std * rng.normal();
    m.attach(p, std::move(b));
  }
}

// Finite differences of a loss of magnitude ~ln(259) carry roughly 1e-10 of
// absolute noise at h = 1e-5, so gradients here are compared with a relative
// tolerance plus a small absolute floor.
void check_gradients(const std::function<Var(Tape&)>& loss, std::vector<Tensor*> params) {
  std::vector<Matrix> analytic;
  {
    for (Tensor* p : params) p->zero_grad();
    Tape tape;
    tape.backward(loss(tape));
    for (Tensor* p : params) analytic.push_back(p->grad ? *p->grad : Matrix(p->rows(), p->cols()));
  }
  const double h = 1e-5;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i]->value.values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double keep = values[j];
      values[j] = keep + h;
      double up;
      {
        Tape t;
        up = loss(t).item();
      }
      values[j] = keep - h;
      double down;
      {
        Tape t;
        down = loss(t).item();
      }
      values[j] = keep;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[i].values()[j];
      if (std::abs(a - numeric) > 1e-4 * std::max(std::abs(a), std::abs(numeric)) + 1e-9) ++bad;
    }
  }
  CHECK(bad == 0);
}

Var sft_of(TinyLM& m, Tape& t, const SftBatch& b) { return sft_loss(m, t, b); }

}  // namespace

TEST_CASE("sft batch layout and mask") {
  const SftBatch b = SftBatch::from_text("ab", "cd");
  CHECK(b.prompt == TokenSeq{tokens::kBos, 'a', 'b'});
  CHECK(b.response == TokenSeq{'c', 'd', tokens::kEos});
  // Inputs BOS a b c d predict a b c d EOS; only c d EOS are scored.
  CHECK(b.loss_mask() == std::vector<bool>{false, false, true, true, true});
}

TEST_CASE("uniform model gives ln 259") {
  TinyLM m(tiny_config());
  m.linear("lm_head").weight.value.fill(0.0);
  Tape tape;
  const double loss = sft_loss(m, tape, SftBatch::from_text("hello", "world")).item();
  CHECK(std::abs(loss - std::log(259.0)) < 1e-9);
}

TEST_CASE("sft loss errors") {
  TinyLM m(tiny_config());
  Tape tape;
  CHECK_THROWS_AS(sft_loss(m, tape, SftBatch::from_text(std::string(40, 'a'), std::string(20, 'b'))), ContextError);
  const std::vector<SftBatch> none;
  CHECK_THROWS_AS(sft_loss(m, tape, none), DegenerateBatchError);
}

TEST_CASE("token-weighted sft over several examples") {
  TinyLM m(tiny_config(2));
  const SftBatch a = SftBatch::from_text("p", "xy");
  const SftBatch b = SftBatch::from_text("q", "zzzzz");
  Tape t1, t2, t3;
  const double la = sft_loss(m, t1, a).item();
  const double lb = sft_loss(m, t2, b).item();
  const std::vector<SftBatch> both{a, b};
  const double lab = sft_loss(m, t3, both).item();
  CHECK(std::abs(lab - (3.0 * la + 6.0 * lb) / 9.0) < 1e-12);
}

TEST_CASE("sft and dpo gradients through the whole model") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    TinyLM ref(tiny_config(seed));
    TinyLM m = ref;
    Prng rng(100 + seed);
    attach_random(m, rng, 0.1);
    m.set_base_trainable(true);
    std::vector<Tensor*> params;
    for (auto& [name, t] : m.named_parameters()) params.push_back(t);
    for (Tensor* t : m.adapter_trainables()) params.push_back(t);

    const SftBatch sft = SftBatch::from_text("ab", "cde");
    check_gradients([&](Tape& t) { return sft_of(m, t, sft); }, params);

    const DpoBatch dpo = DpoBatch::from_text("ab", "cd", "ef", 0.1);
    const ReferenceLogprobs refs = reference_logprobs(ref, dpo);
    check_gradients([&](Tape& t) { return dpo_loss(m, refs, t, dpo).loss; }, params);
  }
}

TEST_CASE("dpo at policy equal to reference is ln 2") {
  TinyLM ref(tiny_config(5));
  TinyLM policy = ref;
  Prng rng(5);
  for (const auto& p : policy.default_adapter_points()) {
    const auto& l = policy.linear(p);
    policy.attach(p, LoraBlock::create(l.weight.rows(), l.weight.cols(), 4, 4.0, rng));
  }
  const DpoBatch b = DpoBatch::from_text("summarize: abc", "ab", "abc ab", 0.1);
  Tape tape;
  const DpoResult r = dpo_loss(policy, ref, tape, b);
  CHECK(std::abs(r.loss.item() - std::log(2.0)) < 1e-9);
  CHECK(r.margin == 0.0);

  const std::vector<DpoBatch> batches{b, DpoBatch::from_text("x", "y", "z", 0.5)};
  std::vector<ReferenceLogprobs> refs;
  for (const auto& x : batches) refs.push_back(reference_logprobs(ref, x));
  Tape t2;
  CHECK(std::abs(dpo_loss(policy, refs, t2, batches).loss.item() - std::log(2.0)) < 1e-9);
}

TEST_CASE("dpo contract errors") {
  TinyLM m(tiny_config());
  Tape tape;
  CHECK_THROWS_AS(dpo_loss(m, m, tape, DpoBatch::from_text("p", "same", "same")), ContractError);
  CHECK_THROWS_AS(dpo_loss(m, m, tape, DpoBatch::from_text("p", "a", "b", 0.0)), ContractError);
  const std::vector<DpoBatch> one{DpoBatch::from_text("p", "a", "b")};
  const std::vector<ReferenceLogprobs> none;
  CHECK_THROWS_AS(dpo_loss(m, none, tape, one), ContractError);
}

TEST_CASE("dpo loss falls monotonically toward zero as the margin grows") {
  TinyLM m(tiny_config(6));
  const DpoBatch b = DpoBatch::from_text("p", "a", "b", 1.0);
  const ReferenceLogprobs base = reference_logprobs(m, b);
  double prev = INFINITY;
  for (double shift : {0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0}) {
    // Lowering the reference's chosen log-prob raises the policy margin.
    ReferenceLogprobs refs = base;
    refs.chosen -= shift;
    Tape tape;
    const DpoResult r = dpo_loss(m, refs, tape, b);
    CHECK(std::abs(r.margin - shift) < 1e-9);
    CHECK(r.loss.item() < prev);
    prev = r.loss.item();
  }
  CHECK(prev < 1e-8);
}

TEST_CASE("one optimizer step raises the preference margin") {
  TinyLM ref(tiny_config(7));
  TinyLM policy = ref;
  Prng rng(7);
  attach_random(policy, rng, 0.0);
  const DpoBatch b = DpoBatch::from_text("toy", "good", "bad", 0.1);
  const ReferenceLogprobs refs = reference_logprobs(ref, b);

  auto margin = [&] {
    Tape t;
    return dpo_loss(policy, refs, t, b).margin;
  };
  const double before = margin();
  CHECK(before == 0.0);

  auto params = policy.adapter_trainables();
  for (Tensor* p : params) p->zero_grad();
  Tape tape;
  tape.backward(dpo_loss(policy, refs, tape, b).loss);
  AdamState state;
  adam_step(params, state, AdamConfig{1e-3});
  const double after = margin();
  CHECK(after > before);
  const double lp_w = sequence_logprob_value(policy, b.prompt, b.chosen);
  const double lp_l = sequence_logprob_value(policy, b.prompt, b.rejected);
  CHECK(lp_w > refs.chosen);
  CHECK(lp_l < refs.rejected);
}

TEST_CASE("adam") {
  Tensor p(Matrix::from_rows({{1.0, -2.0, 3.0}}), true);
  Tensor frozen(Matrix::from_rows({{5.0}}), false);
  frozen.grad = Matrix::from_rows({{1.0}});
  std::vector<Tensor*> params{&p, &frozen};
  AdamState state;

  SUBCASE("zero gradient leaves parameters unchanged") {
    p.grad = Matrix(1, 3);
    adam_step(params, state, AdamConfig{0.1});
    CHECK(p.value == Matrix::from_rows({{1.0, -2.0, 3.0}}));
  }
  SUBCASE("first step moves by lr times the sign of the gradient") {
    p.grad = Matrix::from_rows({{0.5, -3.0, 1e-3}});
    adam_step(params, state, AdamConfig{0.1});
    CHECK(std::abs(p.value(0, 0) - 0.9) < 1e-6);
    CHECK(std::abs(p.value(0, 1) - -1.9) < 1e-6);
    CHECK(std::abs(p.value(0, 2) - 2.9) < 1e-4);
    CHECK(frozen.value(0, 0) == 5.0);
  }
  SUBCASE("state must keep matching the parameters") {
    p.grad = Matrix(1, 3, 1.0);
    adam_step(params, state, AdamConfig{0.1});
    Tensor other(Matrix(2, 2), true);
    std::vector<Tensor*> changed{&other, &frozen};
    CHECK_THROWS_AS(adam_step(changed, state, AdamConfig{0.1}), DimensionError);
    std::vector<Tensor*> fewer{&p};
    CHECK_THROWS_AS(adam_step(fewer, state, AdamConfig{0.1}), DimensionError);
  }
}

// -- Schedules -------------------------------------------------------------------

namespace {

DatasetMap toy_datasets() {
  std::vector<SftExample> len{{"length=short\na b c d e f\n", "a b"},
                              {"length=long\na b c d e f\n", "a b c d"},
                              {"length=short\nf e d c b a\n", "f e"},
                              {"length=long\nf e d c b a\n", "f e d c"}};
  std::vector<SftExample> ext{{"extractiveness=full\nq r s t\n", "q r"},
                              {"extractiveness=normal\nq r s t\n", "r q"}};
  std::vector<DpoExample> prefs{{"length=short\na b c\n", "a", "a b c"}, {"length=long\na b c\n", "a b c", "a"}};
  DatasetMap d;
  d["len"] = len;
  d["ext"] = ext;
  d["prefs"] = prefs;
  d["one"] = std::vector<SftExample>{{"p\n", "abc"}};
  return d;
}

Schedule make_schedule(Regime regime, std::vector<std::string> stages, std::size_t steps = 5) {
  Schedule s;
  s.regime = regime;
  for (auto& name : stages) s.stages.push_back({name, steps, 1e-2});
  s.adapter.rank = 4;
  s.adapter.alpha = 4.0;
  s.adapter.rank2 = 2;
  s.adapter.alpha2 = 2.0;
  s.batch_size = 2;
  s.seed = 11;
  return s;
}

std::string adapters_bytes(const TrainedArtifacts& a) {
  std::string out;
  for (const auto& n : a.adapters) out += n.name + encode_adapters(n.set);
  return out;
}

}  // namespace

TEST_CASE("schedule validation") {
  CHECK_THROWS_AS(make_schedule(Regime::joint, {"len", "ext"}).validate(), ConfigError);
  CHECK_THROWS_AS(make_schedule(Regime::continuous, {"len"}).validate(), ConfigError);
  CHECK_THROWS_AS(make_schedule(Regime::hlora, {"len"}).validate(), ConfigError);
  Schedule bad_rank = make_schedule(Regime::hlora, {"len", "ext"});
  bad_rank.adapter.rank2 = 4;
  CHECK_THROWS_AS(bad_rank.validate(), ConfigError);
  Schedule weights = make_schedule(Regime::joint, {"len"});
  weights.fusion_weights = {0.5, 0.5};
  CHECK_THROWS_AS(weights.validate(), ConfigError);
  CHECK(parse_regime("multi_adapter") == Regime::multi_adapter);
  CHECK_THROWS_AS(parse_regime("nope"), ConfigError);
  CHECK_THROWS_AS(parse_objective("ppo"), ConfigError);

  TinyLM m(tiny_config());
  const DatasetMap d = toy_datasets();
  CHECK_THROWS_AS(run_schedule(m, make_schedule(Regime::joint, {"missing"}), d), ConfigError);
  Schedule dpo_on_sft = make_schedule(Regime::joint, {"len"});
  dpo_on_sft.objective = Objective::dpo;
  CHECK_THROWS_AS(run_schedule(m, dpo_on_sft, d), ConfigError);
}

TEST_CASE("joint training leaves the base untouched and is deterministic") {
  const DatasetMap d = toy_datasets();
  TinyLM m(tiny_config(3));
  const std::string base = m.encode_checkpoint();
  const Schedule s = make_schedule(Regime::joint, {"len"}, 8);
  const TrainedArtifacts a = run_schedule(m, s, d);
  CHECK(m.encode_checkpoint() == base);
  CHECK(a.curve.size() == 8);
  CHECK(a.stage_starts == std::vector<std::size_t>{0});
  REQUIRE(a.adapters.size() == 1);
  CHECK(a.adapters[0].set.size() == m.default_adapter_points().size());
  for (const auto& p : m.default_adapter_points()) CHECK_FALSE(m.has_adapter(p));

  TinyLM again(tiny_config(3));
  const TrainedArtifacts b = run_schedule(again, s, d);
  CHECK(adapters_bytes(a) == adapters_bytes(b));
  CHECK(loss_curve_csv(a.curve) == loss_curve_csv(b.curve));
  CHECK(loss_curve_csv(a.curve).rfind("step,loss\n0,", 0) == 0);
}

TEST_CASE("full regime trains the base weights") {
  const DatasetMap d = toy_datasets();
  TinyLM m(tiny_config(3));
  const std::string base = m.encode_checkpoint();
  const TrainedArtifacts a = run_schedule(m, make_schedule(Regime::full, {"len"}, 3), d);
  CHECK(a.adapters.empty());
  CHECK(m.encode_checkpoint() != base);
  for (auto& [name, t] : m.named_parameters()) CHECK_FALSE(t->requires_grad);
}

TEST_CASE("training on one example lowers the smoothed loss") {
  const DatasetMap d = toy_datasets();
  TinyLM m(tiny_config(4));
  Schedule s = make_schedule(Regime::joint, {"one"}, 60);
  s.batch_size = 1;
  s.stages[0].lr = 3e-3;
  const TrainedArtifacts a = run_schedule(m, s, d);
  std::vector<double> windows;
  for (std::size_t w = 0; w + 10 <= a.curve.size(); w += 10) {
    double sum = 0.0;
    for (std::size_t i = w; i < w + 10; ++i) sum += a.curve[i].loss;
    windows.push_back(sum / 10.0);
  }
  for (std::size_t i = 1; i < windows.size(); ++i) CHECK(windows[i] <= windows[i - 1]);
  CHECK(windows.back() < windows.front());
}

namespace {

struct HloraProbe : ScheduleObserver {
  std::map<std::string, std::string> stage1_bytes;
  void on_stage_begin(std::size_t stage, TinyLM& model) override {
    if (stage != 1) return;
    for (const auto& p : model.default_adapter_points()) {
      const auto& h = std::get<HloraBlock>(model.adapter(p));
      AdapterSet one{{p, h.base}};
      stage1_bytes[p] = encode_adapters(one);
    }
  }
};

}  // namespace

TEST_CASE("hlora stage two starts from the stage one model and never moves it") {
  const DatasetMap d = toy_datasets();
  TinyLM m(tiny_config(8));
  Schedule s = make_schedule(Regime::hlora, {"one", "one"}, 100);
  s.batch_size = 1;
  s.stages[0].steps = 20;
  HloraProbe probe;
  const TrainedArtifacts a = run_schedule(m, s, d, &probe);
  REQUIRE(a.stage_starts.size() == 2);
  REQUIRE(a.curve.size() == 120);

  // Loss of the stage-one model alone on the same (single) example.
  TinyLM stage1 = m;
  for (const auto& e : a.adapters[0].set) stage1.attach(e.point, std::get<HloraBlock>(e.block).base);
  Tape tape;
  const double want = sft_loss(stage1, tape, SftBatch::from_text("p\n", "abc")).item();
  CHECK(std::abs(a.curve[a.stage_starts[1]].loss - want) < 1e-12);

  for (const auto& e : a.adapters[0].set) {
    const auto& h = std::get<HloraBlock>(e.block);
    AdapterSet one{{e.point, h.base}};
    CHECK(encode_adapters(one) == probe.stage1_bytes.at(e.point));
    bool moved = false;
    for (double v : h.b2.value.values()) moved = moved || v != 0.0;
    CHECK(moved);
  }
}

namespace {

struct StackProbe : ScheduleObserver {
  std::string first_block_at_end;
  void on_step(std::size_t stage, std::size_t step, double, TinyLM& model) override {
    if (stage != 1 || step != 4) return;
    AdapterSet set;
    for (const auto& p : model.default_adapter_points()) {
      set.push_back({p, std::get<AdapterStack>(model.adapter(p)).blocks.front()});
    }
    first_block_at_end = encode_adapters(set);
  }
};

struct FreezeAll : ScheduleObserver {
  void on_stage_begin(std::size_t, TinyLM& model) override {
    for (const auto& p : model.default_adapter_points()) {
      if (auto* l = std::get_if<LoraBlock>(&model.adapter(p))) l->set_frozen(true);
    }
  }
};

}  // namespace

TEST_CASE("multi-adapter keeps the first adapter frozen") {
  const DatasetMap d = toy_datasets();
  TinyLM m(tiny_config(9));
  StackProbe probe;
  const TrainedArtifacts a = run_schedule(m, make_schedule(Regime::multi_adapter, {"len", "ext"}), d, &probe);
  REQUIRE(a.adapters.size() == 2);
  CHECK(a.adapters[0].name == "adapter1");
  CHECK(a.adapters[1].name == "adapter2");
  // The stack's first block at the last stage-two step still equals adapter1,
  // apart from the frozen flag the stack sets.
  AdapterSet frozen_copy = a.adapters[0].set;
  for (auto& e : frozen_copy) std::get<LoraBlock>(e.block).set_frozen(true);
  CHECK(probe.first_block_at_end == encode_adapters(frozen_copy));
}

TEST_CASE("continuous order matters and fusion emits a delta") {
  const DatasetMap d = toy_datasets();
  TinyLM m1(tiny_config(10));
  TinyLM m2(tiny_config(10));
  const TrainedArtifacts le = run_schedule(m1, make_schedule(Regime::continuous, {"len", "ext"}), d);
  const TrainedArtifacts el = run_schedule(m2, make_schedule(Regime::continuous, {"ext", "len"}), d);
  CHECK(adapters_bytes(le) != adapters_bytes(el));

  TinyLM m3(tiny_config(10));
  Schedule f = make_schedule(Regime::fusion, {"len", "ext"});
  f.fusion_weights = {1.0, 0.0};
  const TrainedArtifacts fused = run_schedule(m3, f, d);
  REQUIRE(fused.fused.has_value());
  const DeltaSet one = delta_set(fused.adapters[0].set);
  REQUIRE(fused.fused->size() == one.size());
  for (std::size_t i = 0; i < one.size(); ++i) CHECK((*fused.fused)[i].delta == one[i].delta);
}

TEST_CASE("dpo schedule and the frozen-everything error") {
  const DatasetMap d = toy_datasets();
  TinyLM m(tiny_config(12));
  Schedule s = make_schedule(Regime::joint, {"prefs"}, 3);
  s.objective = Objective::dpo;
  const TrainedArtifacts a = run_schedule(m, s, d);
  REQUIRE(a.curve.size() == 3);
  CHECK(std::abs(a.curve[0].loss - std::log(2.0)) < 1e-9);

  TinyLM m2(tiny_config(12));
  FreezeAll freeze;
  CHECK_THROWS_AS(run_schedule(m2, make_schedule(Regime::joint, {"len"}), d, &freeze), NoTrainableParamsError);
}
