#pragma once

// End-to-end multi-modal model: two frozen toy encoders, a projector and the
// Mamba language model, stored together in one weight container.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cobra/backbone.hpp"
#include "cobra/prompting.hpp"
#include "cobra/vision.hpp"

namespace cobra {

struct PipelineConfig {
  std::size_t image_side = 378;  // 378 / 14 = 27 -> 729 visual tokens
  std::size_t patch_size = 14;
  std::size_t dim_a = 8;   // low-level spatial encoder width
  std::size_t dim_b = 16;  // semantic encoder width
  std::size_t projector_hidden = 64;
  vision::ProjectorKind projector = vision::ProjectorKind::Mlp;
  std::size_t ldp_out_side = 14;  // 27x27 -> 14x14 = 196 tokens
  lm::BackboneConfig backbone{};
  std::uint64_t seed = 0;

  // 378 px, P = 14, 729 tokens, D = 64.
  static PipelineConfig standard();
  // 384 px, P = 16, 576 tokens.
  static PipelineConfig standard_384();
  // 16 px, P = 4, 16 tokens, D = 16: fast enough for training loops.
  static PipelineConfig tiny();

  std::size_t grid_side() const { return image_side / patch_size; }
  std::size_t visual_tokens() const;
  void validate() const;
};

struct CobraModel {
  PipelineConfig config;
  vision::ToyEncoderWeights enc_a;
  vision::ToyEncoderWeights enc_b;
  vision::Projector projector;
  lm::BackboneWeights lm;

  static CobraModel init(const PipelineConfig& cfg);

  WeightContainer to_container() const;
  static CobraModel from_container(const WeightContainer& c);
  void save(const std::filesystem::path& path) const;
  static CobraModel load(const std::filesystem::path& path);

  // Resizes to the configured resolution when needed, patchifies and runs
  // both encoders.
  vision::VisualFeatures encode(const vision::ImageInput& image) const;
  // Validates externally computed features against the projector input.
  void check_features(const vision::VisualFeatures& f) const;
  vision::ProjectedVisualTokens project(const vision::VisualFeatures& f) const;
};

// A rendered prompt plus everything needed to run or train on it.
struct PreparedPrompt {
  std::string text;
  std::vector<prompt::TokenId> ids;
  lm::MultimodalSequence sequence;
};

// `answer`, when set, is appended (with its end-of-text token) and marked as
// the supervised span.
PreparedPrompt prepare_prompt(const CobraModel& model, const vision::VisualFeatures* features,
                              const prompt::Conversation& conv, prompt::Template tmpl,
                              const std::optional<std::string>& answer = std::nullopt);

struct GenerateOutput {
  std::string prompt;
  std::vector<prompt::TokenId> tokens;
  std::string answer;  // detokenized, stop token stripped
  std::size_t visual_tokens = 0;
  std::vector<lm::TraceEntry> trace;
};

GenerateOutput run_generation(const CobraModel& model, const vision::VisualFeatures* features,
                              const prompt::Conversation& conv, prompt::Template tmpl,
                              const lm::SamplingConfig& sampling);

}  // namespace cobra
