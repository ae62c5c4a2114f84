#include <doctest.h>

#include <random>

#include "forge/errors.hpp"
#include "forge/lora.hpp"
#include "forge/training.hpp"
#include "tempdir.hpp"

using namespace forge;

namespace {

ModelConfig small(AttentionLayout layout = AttentionLayout::kSplitQv, std::size_t layers = 2,
                  std::size_t d = 16) {
  ModelConfig c;
  c.d_model = d;
  c.n_heads = 2;
  c.n_layers = layers;
  c.max_seq_len = 64;
  c.layout = layout;
  c.seed = 1;
  return c;
}

LoraConfig lora(std::vector<std::string> targets = {"q_proj", "v_proj"}, std::size_t rank = 4) {
  LoraConfig c;
  c.rank = rank;
  c.target_names = std::move(targets);
  c.seed = 2;
  return c;
}

std::vector<TokenId> random_ids(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> d(0, 258);
  std::vector<TokenId> ids(n);
  for (auto& x : ids) x = d(rng);
  return ids;
}

std::vector<InstructionRecord> records() {
  std::vector<InstructionRecord> out;
  for (int i = 0; i < 8; ++i) {
    InstructionRecord r;
    r.instruction = "Repeat the word.";
    r.input = "word" + std::to_string(i);
    r.output = "word" + std::to_string(i);
    r.category = Category::kOther;
    r.source = "t";
    out.push_back(r);
  }
  return out;
}

void train_steps(DecoderModel& m, std::size_t steps, double lr) {
  TrainConfig tc;
  tc.learning_rate = lr;
  tc.train_seq_len = 64;
  const auto recs = records();
  const TrainingBatch batch = build_batch(recs, PromptFormat{}, tc);
  AdamW opt = make_adapter_optimizer(m, tc);
  std::mt19937_64 rng(3);
  for (std::size_t s = 0; s < steps; ++s) train_step(m, batch, opt, rng);
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace

TEST_SUITE("lora") {
  TEST_CASE("adapter counts per layout") {
    DecoderModel split = DecoderModel::init(small());
    CHECK(inject(split, lora()) == 4);
    CHECK(adapter_count(split) == 4);
    DecoderModel fused = DecoderModel::init(small(AttentionLayout::kFusedQkv));
    CHECK(inject(fused, lora({"query_key_value"})) == 2);
    for (const auto& [name, t] : adapter_parameters(fused))
      CHECK(name.find("query_key_value") != std::string::npos);
  }

  TEST_CASE("target matching") {
    CHECK(matches_target("layers.0.attn.v_proj", "v_proj"));
    CHECK(matches_target("layers.0.attn.v_proj", "layers.0.attn.v_proj"));
    CHECK_FALSE(matches_target("layers.0.attn.v_proj", "proj"));
    CHECK_FALSE(matches_target("layers.0.attn.o_proj", "v_proj"));
  }

  TEST_CASE("unmatched pattern is a configuration error naming it") {
    DecoderModel m = DecoderModel::init(small());
    try {
      inject(m, lora({"q_proj", "query_key_value"}));
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("query_key_value") != std::string::npos);
    }
    CHECK(adapter_count(m) == 0);
    CHECK_THROWS_AS(inject(m, lora({"q_proj"}, 0)), ConfigError);
    CHECK_THROWS_AS(inject(m, lora({"q_proj"}, 17)), ConfigError);
    inject(m, lora());
    CHECK_THROWS_AS(inject(m, lora()), StateError);
  }

  TEST_CASE("zero-init identity on 50 inputs") {
    const DecoderModel base = DecoderModel::init(small());
    DecoderModel adapted = base.clone();
    inject(adapted, lora());
    for (const auto& [name, t] : adapter_parameters(adapted))
      if (name.ends_with("lora_B"))
        for (float v : t.data()) CHECK(v == 0.0F);
    std::mt19937_64 rng(4);
    for (int i = 0; i < 50; ++i) {
      const auto ids = random_ids(1 + i % 20, rng);
      CHECK(adapted.logits(ids) == base.logits(ids));
    }
  }

  TEST_CASE("hand-computed rank-1 example") {
    std::mt19937_64 rng(0);
    LoraAdapter ad("w", Tensor::zeros({2, 2}), 1, 1.0, 0.0, rng);
    Tensor a = ad.a(), b = ad.b();
    a.assign(std::vector<float>{1, 0});
    b.assign(std::vector<float>{1, 0});
    const Tensor y = adapted_forward(ad, Tensor::from_data({1, 2}, {1, 1}));
    CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{1, 0});
    CHECK_THROWS_AS(adapted_forward(ad, Tensor::zeros({1, 3})), DimensionError);
  }

  TEST_CASE("B = 0 gives the frozen path; eval equals train when dropout is 0") {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> nd;
    std::vector<float> w(12), xv(15);
    for (auto& v : w) v = nd(rng);
    for (auto& v : xv) v = nd(rng);
    const Tensor base = Tensor::from_data({4, 3}, w);
    const Tensor x = Tensor::from_data({5, 3}, xv);
    LoraAdapter ad("w", base, 2, 16.0, 0.0, rng);
    CHECK(adapted_forward(ad, x).data()[0] == linear(x, base).data()[0]);
    Tensor b = ad.b();
    std::vector<float> bv(8);
    for (auto& v : bv) v = nd(rng);
    b.assign(bv);
    ForwardOptions train_mode;
    train_mode.training = true;
    train_mode.rng = &rng;
    const Tensor e = adapted_forward(ad, x), t = adapted_forward(ad, x, train_mode);
    CHECK(std::vector<float>(e.data().begin(), e.data().end()) ==
          std::vector<float>(t.data().begin(), t.data().end()));
  }

  TEST_CASE("parameter counts") {
    std::mt19937_64 rng(0);
    CHECK(LoraAdapter("w", Tensor::zeros({8, 8}), 2, 16.0, 0.0, rng).trainable_param_count() == 32);
    DecoderModel two = DecoderModel::init(small(AttentionLayout::kSplitQv, 2, 64));
    CHECK(trainable_param_count(two) == 0);
    inject(two, lora());
    CHECK(trainable_param_count(two) == 2048);
    DecoderModel toy = DecoderModel::init(small(AttentionLayout::kSplitQv, 4, 64));
    inject(toy, lora());
    CHECK(trainable_param_count(toy) == 4096);
    std::size_t counted = 0;
    for (const auto& [name, t] : adapter_parameters(toy)) counted += t.numel();
    CHECK(counted == 4096);
  }

  TEST_CASE("merge equivalence and exact unmerge") {
    DecoderModel m = DecoderModel::init(small());
    inject(m, lora());
    const std::vector<TokenId> probe = {256, 10, 20, 30, 40, 50};
    {
      // Merging a zero delta leaves every weight as it was.
      std::vector<std::vector<float>> before;
      for (const auto* lin : m.linears()) before.emplace_back(lin->weight.data().begin(), lin->weight.data().end());
      merge_all(m);
      std::size_t i = 0;
      for (const auto* lin : m.linears())
        CHECK(std::vector<float>(lin->weight.data().begin(), lin->weight.data().end()) == before[i++]);
      unmerge_all(m);
    }
    train_steps(m, 100, 1e-2);
    const auto adapted = m.logits(probe);
    merge_all(m);
    const auto merged = m.logits(probe);
    CHECK(max_abs_diff(adapted, merged) < 1e-5);
    CHECK(max_abs_diff(adapted, merged) > 0.0);
    CHECK_THROWS_AS(merge_all(m), StateError);
    unmerge_all(m);
    CHECK(m.logits(probe) == adapted);
    CHECK_THROWS_AS(unmerge_all(m), StateError);
  }

  TEST_CASE("merged weight equals W0 plus scaled BA") {
    DecoderModel m = DecoderModel::init(small());
    inject(m, lora());
    train_steps(m, 5, 1e-2);
    const LoraAdapter& ad = *m.linears()[0]->adapter;
    const auto a = ad.a().data(), b = ad.b().data(), w = ad.base().data();
    const Tensor merged_t = ad.merged_weight();
    const auto merged = merged_t.data();
    const std::size_t d = ad.out_features(), k = ad.in_features(), r = ad.rank();
    double worst = 0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        double s = 0;
        for (std::size_t p = 0; p < r; ++p) s += double(b[i * r + p]) * a[p * k + j];
        worst = std::max(worst, std::abs(merged[i * k + j] - (w[i * k + j] + 4.0 * s)));
      }
    CHECK(worst < 1e-6);
  }

  TEST_CASE("adapter save and load") {
    TempDir dir;
    const DecoderModel base = DecoderModel::init(small());
    DecoderModel m = base.clone();
    const LoraConfig cfg = lora();
    inject(m, cfg);
    train_steps(m, 10, 1e-2);
    save_adapters(m, cfg, dir / "a.bin");
    DecoderModel fresh = base.clone();
    const LoraConfig back = load_adapters(fresh, dir / "a.bin");
    CHECK(back.rank == cfg.rank);
    CHECK(back.target_names == cfg.target_names);
    const std::vector<TokenId> probe = {1, 2, 3, 4};
    CHECK(fresh.logits(probe) == m.logits(probe));

    DecoderModel other = DecoderModel::init(small(AttentionLayout::kSplitQv, 3));
    CHECK_THROWS_AS(load_adapters(other, dir / "a.bin"), IntegrityError);
  }
}
