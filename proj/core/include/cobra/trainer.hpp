#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cobra/model.hpp"

namespace cobra::train {

// Defaults mirror the reference recipe (AdamW-style, lr 2e-5, cosine decay,
// warm-up 0.03, weight decay 0.1, two epochs). The reference global batch of
// 128 is scaled down to fit a single CPU.
struct TrainConfig {
  double lr = 2e-5;
  double weight_decay = 0.1;
  double warmup_ratio = 0.03;
  std::size_t epochs = 2;
  std::size_t batch_size = 1;
  std::size_t max_steps = 0;  // 0: no cap
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static constexpr std::size_t kReferenceBatchSize = 128;

  void validate() const;
  // "key = value" lines, '#' comments. Unknown keys are rejected.
  static TrainConfig parse_kv(std::string_view text, TrainConfig base);
  static TrainConfig load_kv(const std::filesystem::path& path, TrainConfig base);
};

// Linear warm-up over ceil(warmup_ratio * total) steps, then
// lr * 0.5 * (1 + cos(pi * progress)).
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct SyntheticSample {
  vision::ImageInput image;
  std::string instruction;
  std::string answer;
};

// Coloured background with a white square in one quadrant. Each sample asks
// for either the background colour or the square's quadrant; the answer is
// a pure function of the image and the question.
std::vector<SyntheticSample> make_synthetic_dataset(std::size_t count, std::size_t image_side, std::uint64_t seed);

enum class Variant { Ft2Epoch, Ft1Epoch, PreAlignThenFt };
Variant parse_variant(std::string_view id);  // ft2ep | ft1ep | prealign_ft
std::string_view to_string(Variant v);
inline constexpr Variant kDefaultVariant = Variant::Ft2Epoch;
// Epoch count and whether a projector-only warm phase runs first.
struct VariantPlan {
  std::size_t prealign_epochs = 0;
  std::size_t ft_epochs = 2;
};
VariantPlan ablation_modes(Variant v, const TrainConfig& cfg);

enum class Trainable { ProjectorOnly, ProjectorAndBackbone };

struct LossPoint {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::string phase;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
};

// Gradients of the mean batch loss for every trainable tensor of the model.
struct ModelGrads {
  vision::Projector projector;
  lm::BackboneWeights lm;

  static ModelGrads zeros_like(const CobraModel& m);
};

// Precomputed, frozen-encoder view of one sample.
struct EncodedSample {
  vision::VisualFeatures features;
  prompt::Conversation conversation;
  std::string answer;
};

std::vector<EncodedSample> encode_dataset(const CobraModel& model, const std::vector<SyntheticSample>& data);

// Loss of one sample and its gradients (accumulated, scaled by `scale`).
double sample_loss_and_grad(const CobraModel& model, const EncodedSample& s, prompt::Template tmpl,
                            ModelGrads& grads, double scale);
double eval_loss(const CobraModel& model, const std::vector<EncodedSample>& data, prompt::Template tmpl);

// Decoupled-weight-decay Adam over an ordered list of tensors.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}
  void step(std::vector<ssm::ParamRef>& params, const std::vector<ssm::ParamRef>& grads, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct TrainOptions {
  prompt::Template tmpl = prompt::Template::Chat;
  Variant variant = kDefaultVariant;
  // Stop after the projector-only phase (no effect without one).
  bool prealign_only = false;
};

TrainResult train_toy(CobraModel& model, const std::vector<SyntheticSample>& dataset, const TrainConfig& cfg,
                      const TrainOptions& opts = {});

void write_curve_csv(const std::vector<LossPoint>& curve, const std::filesystem::path& path);
std::string curve_csv(const std::vector<LossPoint>& curve);

}  // namespace cobra::train
