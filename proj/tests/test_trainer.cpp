#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "cobra/trainer.hpp"

using namespace cobra;
using namespace cobra::train;

namespace {

// Independent schedule: ramp 0 -> lr over w steps, then half-cosine to 0.
double reference_lr(double step, double total, double lr, double ratio) {
  const double w = std::ceil(ratio * total);
  if (step < w) return lr * step / w;
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * (step - w) / (total - w)));
}

std::vector<double> flat_params(std::vector<ssm::ParamRef> refs) {
  std::vector<double> out;
  for (const auto& r : refs) out.insert(out.end(), r.values.begin(), r.values.end());
  return out;
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.lr = 1e-2;
  return cfg;
}

}  // namespace

TEST(Schedule, ShapeAndEndpoints) {
  TrainConfig cfg;
  cfg.lr = 2e-5;
  const std::size_t total = 1000;
  EXPECT_EQ(lr_at(0, total, cfg), 0.0);
  EXPECT_EQ(lr_at(30, total, cfg), 2e-5);  // ceil(0.03 * 1000) = 30
  EXPECT_LT(lr_at(total, total, cfg), 1e-3 * cfg.lr);
  double prev = 0.0;
  for (std::size_t s = 0; s <= total; ++s) {
    const double v = lr_at(s, total, cfg);
    ASSERT_NEAR(v, reference_lr(static_cast<double>(s), total, cfg.lr, cfg.warmup_ratio), 1e-18) << s;
    if (s <= 30) ASSERT_GE(v, prev);
    else ASSERT_LE(v, prev);
    prev = v;
  }
  EXPECT_THROW(lr_at(total + 1, total, cfg), RangeError);
}

TEST(Schedule, WarmupRoundsUp) {
  TrainConfig cfg;
  cfg.lr = 1.0;
  // ceil(0.03 * 10) = 1: step 1 is already the peak.
  EXPECT_EQ(lr_at(1, 10, cfg), 1.0);
  EXPECT_EQ(lr_at(0, 10, cfg), 0.0);
}

TEST(Config, DefaultsAndValidation) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.lr, 2e-5);
  EXPECT_EQ(cfg.weight_decay, 0.1);
  EXPECT_EQ(cfg.warmup_ratio, 0.03);
  EXPECT_EQ(cfg.epochs, 2u);
  EXPECT_EQ(TrainConfig::kReferenceBatchSize, 128u);
  TrainConfig bad;
  bad.lr = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.warmup_ratio = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Config, KeyValueParsing) {
  const auto cfg = TrainConfig::parse_kv("# comment\nlr = 0.5\n  epochs=3  # trailing\n\nseed = 9\n", TrainConfig{});
  EXPECT_EQ(cfg.lr, 0.5);
  EXPECT_EQ(cfg.epochs, 3u);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.weight_decay, 0.1);
  EXPECT_THROW(TrainConfig::parse_kv("lrr = 1\n", TrainConfig{}), ConfigError);
  EXPECT_THROW(TrainConfig::parse_kv("lr 1\n", TrainConfig{}), ConfigError);
  EXPECT_THROW(TrainConfig::parse_kv("lr = abc\n", TrainConfig{}), ConfigError);

  const auto path = std::filesystem::temp_directory_path() / "cobra_train_cfg.txt";
  std::ofstream(path) << "weight_decay = 0\n";
  EXPECT_EQ(TrainConfig::load_kv(path, TrainConfig{}).weight_decay, 0.0);
  std::filesystem::remove(path);
  EXPECT_THROW(TrainConfig::load_kv(path, TrainConfig{}), IoError);
}

TEST(Variants, NamesAndPlans) {
  EXPECT_EQ(kDefaultVariant, Variant::Ft2Epoch);
  EXPECT_EQ(parse_variant("ft2ep"), Variant::Ft2Epoch);
  EXPECT_EQ(parse_variant("ft1ep"), Variant::Ft1Epoch);
  EXPECT_EQ(parse_variant("prealign_ft"), Variant::PreAlignThenFt);
  EXPECT_EQ(to_string(Variant::PreAlignThenFt), "prealign_ft");
  EXPECT_THROW(parse_variant("ft3ep"), ConfigError);
  const TrainConfig cfg;
  EXPECT_EQ(ablation_modes(Variant::Ft2Epoch, cfg).ft_epochs, 2u);
  EXPECT_EQ(ablation_modes(Variant::Ft2Epoch, cfg).prealign_epochs, 0u);
  EXPECT_EQ(ablation_modes(Variant::Ft1Epoch, cfg).ft_epochs, 1u);
  EXPECT_GT(ablation_modes(Variant::PreAlignThenFt, cfg).prealign_epochs, 0u);
}

TEST(Dataset, DeterministicAndAnswerable) {
  const auto a = make_synthetic_dataset(8, 16, 3);
  const auto b = make_synthetic_dataset(8, 16, 3);
  ASSERT_EQ(a.size(), 8u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.pixels, b[i].image.pixels);
    EXPECT_EQ(a[i].instruction, b[i].instruction);
    EXPECT_EQ(a[i].answer, b[i].answer);
    EXPECT_FALSE(a[i].answer.empty());
    EXPECT_EQ(a[i].image.width, 16u);
  }
  EXPECT_NE(a[0].instruction, a[1].instruction);
}

TEST(Training, ZeroLearningRateLeavesWeightsUntouched) {
  auto model = CobraModel::init(PipelineConfig::tiny());
  const auto before_lm = flat_params(model.lm.params());
  const auto before_proj = flat_params(model.projector.params());
  TrainConfig cfg = toy_config();
  cfg.lr = 0.0;
  cfg.max_steps = 8;
  const auto r = train_toy(model, make_synthetic_dataset(8, 16, 1), cfg);
  EXPECT_EQ(r.curve.size(), 8u);
  EXPECT_EQ(flat_params(model.lm.params()), before_lm);
  EXPECT_EQ(flat_params(model.projector.params()), before_proj);
}

TEST(Training, TwoHundredStepsHalveTheLoss) {
  auto model = CobraModel::init(PipelineConfig::tiny());
  const auto enc_before = model.enc_a.embed;
  TrainConfig cfg = toy_config();
  cfg.max_steps = 200;
  const auto r = train_toy(model, make_synthetic_dataset(100, 16, 2), cfg);
  ASSERT_EQ(r.curve.size(), 200u);
  EXPECT_LE(r.final_eval_loss, 0.5 * r.initial_eval_loss)
      << r.initial_eval_loss << " -> " << r.final_eval_loss;
  for (const auto& p : r.curve) ASSERT_TRUE(std::isfinite(p.loss));
  // Encoders stay frozen.
  EXPECT_TRUE(model.enc_a.embed == enc_before);
}

TEST(Training, SameSeedSameCurve) {
  TrainConfig cfg = toy_config();
  cfg.max_steps = 12;
  cfg.seed = 5;
  const auto data = make_synthetic_dataset(6, 16, 5);
  auto m1 = CobraModel::init(PipelineConfig::tiny());
  auto m2 = CobraModel::init(PipelineConfig::tiny());
  const auto r1 = train_toy(m1, data, cfg);
  const auto r2 = train_toy(m2, data, cfg);
  ASSERT_EQ(r1.curve.size(), r2.curve.size());
  for (std::size_t i = 0; i < r1.curve.size(); ++i) EXPECT_EQ(r1.curve[i].loss, r2.curve[i].loss);
  EXPECT_EQ(flat_params(m1.lm.params()), flat_params(m2.lm.params()));
}

TEST(Training, PrealignFreezesBackbone) {
  auto model = CobraModel::init(PipelineConfig::tiny());
  const auto lm_before = flat_params(model.lm.params());
  const auto proj_before = flat_params(model.projector.params());
  TrainOptions opts;
  opts.variant = Variant::PreAlignThenFt;
  opts.prealign_only = true;
  const auto r = train_toy(model, make_synthetic_dataset(6, 16, 7), toy_config(), opts);
  ASSERT_FALSE(r.curve.empty());
  for (const auto& p : r.curve) EXPECT_EQ(p.phase, "prealign");
  EXPECT_EQ(flat_params(model.lm.params()), lm_before);
  EXPECT_NE(flat_params(model.projector.params()), proj_before);
}

TEST(Training, AllVariantsAndTemplatesRun) {
  for (auto v : {Variant::Ft2Epoch, Variant::Ft1Epoch, Variant::PreAlignThenFt}) {
    for (auto t : {prompt::Template::Chat, prompt::Template::Base}) {
      auto model = CobraModel::init(PipelineConfig::tiny());
      TrainOptions opts{t, v, false};
      const auto r = train_toy(model, make_synthetic_dataset(4, 16, 1), toy_config(), opts);
      const std::size_t ft_steps = v == Variant::Ft1Epoch ? 4 : 8;
      std::size_t ft = 0;
      for (const auto& p : r.curve) ft += p.phase == "ft";
      EXPECT_EQ(ft, ft_steps) << to_string(v);
      EXPECT_TRUE(std::isfinite(r.final_eval_loss));
    }
  }
}

TEST(Training, EmptyDatasetRejected) {
  auto model = CobraModel::init(PipelineConfig::tiny());
  EXPECT_THROW(train_toy(model, {}, toy_config()), PreconditionError);
}

TEST(Curve, CsvFormat) {
  const std::vector<LossPoint> curve{{0, 0.5, 2.0, "ft"}, {1, 0.25, 1.5, "ft"}};
  EXPECT_EQ(curve_csv(curve), "step,lr,loss\n0,0.5,2\n1,0.25,1.5\n");
}

TEST(AdamW, FirstStepMovesBySignTimesLr) {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  std::vector<double> w{1.0, -2.0}, g{0.3, -4.0};
  std::vector<ssm::ParamRef> p{{"w", w, true}};
  const std::vector<ssm::ParamRef> gr{{"w", g, true}};
  opt.step(p, gr, 0.1);
  // Bias-corrected m / sqrt(v) = sign(g) on step one.
  EXPECT_NEAR(w[0], 0.9, 1e-6);
  EXPECT_NEAR(w[1], -1.9, 1e-6);
  EXPECT_EQ(opt.steps_taken(), 1u);
}

TEST(AdamW, DecoupledDecay) {
  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  AdamW opt(cfg);
  std::vector<double> w{2.0}, g{0.0};
  std::vector<ssm::ParamRef> p{{"w", w, true}};
  const std::vector<ssm::ParamRef> gr{{"w", g, true}};
  opt.step(p, gr, 0.5);
  EXPECT_NEAR(w[0], 2.0 - 0.5 * 0.1 * 2.0, 1e-12);
}
