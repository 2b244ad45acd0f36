#include "cobra/model.hpp"

#include <cmath>

namespace cobra {

PipelineConfig PipelineConfig::standard() {
  PipelineConfig c;
  c.backbone.vocab = 300;
  c.backbone.model_dim = 64;
  c.backbone.layers = 2;
  c.backbone.state_dim = 16;
  return c;
}

PipelineConfig PipelineConfig::standard_384() {
  PipelineConfig c = standard();
  c.image_side = 384;
  c.patch_size = 16;
  c.ldp_out_side = 12;
  return c;
}

PipelineConfig PipelineConfig::tiny() {
  PipelineConfig c;
  c.image_side = 16;
  c.patch_size = 4;
  c.dim_a = 8;
  c.dim_b = 8;
  c.projector_hidden = 32;
  c.ldp_out_side = 2;
  c.backbone.vocab = 300;
  c.backbone.model_dim = 16;
  c.backbone.layers = 2;
  c.backbone.state_dim = 8;
  return c;
}

std::size_t PipelineConfig::visual_tokens() const {
  validate();
  const std::size_t g = grid_side();
  return projector == vision::ProjectorKind::Mlp ? g * g : ldp_out_side * ldp_out_side;
}

void PipelineConfig::validate() const {
  if (patch_size == 0 || image_side == 0) throw ConfigError("image side and patch size must be > 0");
  if (image_side % patch_size != 0) {
    throw ConfigError("image side " + std::to_string(image_side) + " is not divisible by patch size " +
                      std::to_string(patch_size));
  }
  if (dim_a == 0 || dim_b == 0 || projector_hidden == 0) throw ConfigError("encoder/projector dims must be > 0");
  if (projector == vision::ProjectorKind::Ldp && (ldp_out_side == 0 || ldp_out_side > grid_side())) {
    throw ConfigError("LDP output grid must be in [1, grid side]");
  }
  backbone.validate();
}

CobraModel CobraModel::init(const PipelineConfig& cfg) {
  cfg.validate();
  CobraModel m;
  m.config = cfg;
  m.enc_a = vision::ToyEncoderWeights::init(cfg.patch_size, cfg.dim_a, cfg.seed * 7919 + 1);
  m.enc_b = vision::ToyEncoderWeights::init(cfg.patch_size, cfg.dim_b, cfg.seed * 7919 + 2);
  Rng rng(cfg.seed * 7919 + 3);
  const std::size_t dv = cfg.dim_a + cfg.dim_b, dm = cfg.backbone.model_dim;
  if (cfg.projector == vision::ProjectorKind::Mlp) {
    m.projector = vision::Projector::make_mlp(vision::MlpWeights::init(dv, cfg.projector_hidden, dm, rng));
  } else {
    m.projector =
        vision::Projector::make_ldp(vision::LdpWeights::init(dv, cfg.projector_hidden, dm, cfg.ldp_out_side, rng));
  }
  Rng lm_rng(cfg.seed * 7919 + 4);
  m.lm = lm::BackboneWeights::init(cfg.backbone, lm_rng);
  return m;
}

WeightContainer CobraModel::to_container() const {
  WeightContainer c;
  c.put_scalar("pipeline.image_side", static_cast<double>(config.image_side));
  c.put_scalar("pipeline.patch_size", static_cast<double>(config.patch_size));
  c.put_scalar("pipeline.seed", static_cast<double>(config.seed));
  enc_a.save(c, "enc_a.");
  enc_b.save(c, "enc_b.");
  projector.save(c, "projector.");
  lm.save(c, "lm.");
  return c;
}

CobraModel CobraModel::from_container(const WeightContainer& c) {
  auto count = [&](const std::string& name) {
    const double v = c.scalar(name);
    if (!(v >= 1.0) || v != std::floor(v) || v > 1e9) throw FormatError("entry '" + name + "' is not a count", 0);
    return static_cast<std::size_t>(v);
  };
  CobraModel m;
  m.config.image_side = count("pipeline.image_side");
  m.config.patch_size = count("pipeline.patch_size");
  m.config.seed = static_cast<std::uint64_t>(c.scalar("pipeline.seed"));
  m.enc_a = vision::ToyEncoderWeights::load(c, "enc_a.", m.config.patch_size);
  m.enc_b = vision::ToyEncoderWeights::load(c, "enc_b.", m.config.patch_size);
  m.projector = vision::Projector::load(c, "projector.");
  m.lm = lm::BackboneWeights::load(c, "lm.");
  m.config.dim_a = m.enc_a.dim();
  m.config.dim_b = m.enc_b.dim();
  m.config.projector = m.projector.kind;
  m.config.projector_hidden = m.projector.mlp.w1.rows();
  if (m.projector.kind == vision::ProjectorKind::Ldp) m.config.ldp_out_side = m.projector.out_side;
  m.config.backbone = m.lm.config;
  if (m.projector.in_dim() != m.config.dim_a + m.config.dim_b || m.projector.out_dim() != m.lm.config.model_dim) {
    throw FormatError("projector dimensions do not match encoders/backbone", 0);
  }
  try {
    m.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint pipeline config invalid: ") + e.what(), 0);
  }
  return m;
}

void CobraModel::save(const std::filesystem::path& path) const { to_container().save(path); }

CobraModel CobraModel::load(const std::filesystem::path& path) {
  return from_container(WeightContainer::load(path));
}

vision::VisualFeatures CobraModel::encode(const vision::ImageInput& image) const {
  const bool fits = image.height == config.image_side && image.width == config.image_side;
  const auto grid = vision::patchify(fits ? image : vision::resize_bilinear(image, config.image_side),
                                     config.patch_size);
  return vision::encode_dual(grid, enc_a, enc_b);
}

void CobraModel::check_features(const vision::VisualFeatures& f) const {
  if (f.r_v.cols() != projector.in_dim()) {
    throw ShapeError("features have width " + std::to_string(f.r_v.cols()) + ", projector expects " +
                     std::to_string(projector.in_dim()));
  }
}

vision::ProjectedVisualTokens CobraModel::project(const vision::VisualFeatures& f) const {
  check_features(f);
  return projector.forward(f);
}

PreparedPrompt prepare_prompt(const CobraModel& model, const vision::VisualFeatures* features,
                              const prompt::Conversation& conv, prompt::Template tmpl,
                              const std::optional<std::string>& answer) {
  PreparedPrompt p;
  p.text = prompt::render(conv, tmpl);
  p.ids = prompt::tokenize(p.text);
  std::size_t answer_len = 0;
  if (answer) {
    const auto a = prompt::tokenize(prompt::answer_suffix(*answer));
    answer_len = a.size();
    p.ids.insert(p.ids.end(), a.begin(), a.end());
  }
  const Matrix h_v = features ? model.project(*features).h_v : Matrix{};
  p.sequence = lm::fuse_sequence(h_v, p.ids, model.lm, answer_len);
  return p;
}

GenerateOutput run_generation(const CobraModel& model, const vision::VisualFeatures* features,
                              const prompt::Conversation& conv, prompt::Template tmpl,
                              const lm::SamplingConfig& sampling) {
  const auto prepared = prepare_prompt(model, features, conv, tmpl);
  lm::GenerationSession session(model.lm, sampling);
  GenerateOutput out;
  out.prompt = prepared.text;
  out.visual_tokens = prepared.sequence.visual_count;
  out.tokens = lm::generate(session, prepared.sequence, model.lm);
  std::vector<prompt::TokenId> shown = out.tokens;
  if (!shown.empty() && shown.back() == sampling.stop_token && !sampling.ignore_stop) shown.pop_back();
  out.answer = lm::detokenize(shown);
  out.trace = session.trace();
  return out;
}

}  // namespace cobra
