#include "cobra/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace cobra::train {

void TrainConfig::validate() const {
  // lr == 0 is accepted so that a frozen run can be expressed.
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ConfigError("warmup_ratio must be in [0, 1)");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
}

TrainConfig TrainConfig::parse_kv(std::string_view text, TrainConfig cfg) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "lr") cfg.lr = std::stod(value);
      else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
      else if (key == "warmup_ratio") cfg.warmup_ratio = std::stod(value);
      else if (key == "epochs") cfg.epochs = std::stoul(value);
      else if (key == "batch_size") cfg.batch_size = std::stoul(value);
      else if (key == "max_steps") cfg.max_steps = std::stoul(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "beta1") cfg.beta1 = std::stod(value);
      else if (key == "beta2") cfg.beta2 = std::stod(value);
      else if (key == "eps") cfg.eps = std::stod(value);
      else throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("config line " + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::load_kv(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_kv(ss.str(), base);
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step > total_steps) {
    throw RangeError("lr_at: step " + std::to_string(step) + " beyond total " + std::to_string(total_steps));
  }
  const auto warmup = static_cast<std::size_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup) return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return cfg.lr;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<SyntheticSample> make_synthetic_dataset(std::size_t count, std::size_t image_side, std::uint64_t seed) {
  struct Colour {
    const char* name;
    double rgb[3];
  };
  static constexpr Colour kColours[] = {
      {"red", {0.9, 0.1, 0.1}}, {"green", {0.1, 0.8, 0.1}}, {"blue", {0.1, 0.2, 0.9}}, {"yellow", {0.9, 0.9, 0.1}}};
  static constexpr const char* kQuadrants[] = {"top left", "top right", "bottom left", "bottom right"};
  if (image_side < 4) throw ConfigError("synthetic images need a side of at least 4");
  Rng rng(seed);
  std::uniform_int_distribution<int> pick4(0, 3);
  std::uniform_real_distribution<double> noise(-0.05, 0.05);
  std::vector<SyntheticSample> out;
  out.reserve(count);
  const std::size_t half = image_side / 2, sq = std::max<std::size_t>(1, image_side / 4);
  for (std::size_t i = 0; i < count; ++i) {
    const int colour = pick4(rng);
    const int quadrant = pick4(rng);
    SyntheticSample s;
    s.image = vision::ImageInput::blank(image_side);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < image_side; ++y) {
        for (std::size_t x = 0; x < image_side; ++x) {
          s.image.at(c, y, x) = std::clamp(kColours[colour].rgb[c] + noise(rng), 0.0, 1.0);
        }
      }
    }
    const std::size_t y0 = (quadrant / 2) * half + (half - sq) / 2;
    const std::size_t x0 = (quadrant % 2) * half + (half - sq) / 2;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = y0; y < y0 + sq; ++y) {
        for (std::size_t x = x0; x < x0 + sq; ++x) s.image.at(c, y, x) = 1.0;
      }
    }
    s.image.source = "synthetic:" + std::to_string(i);
    if (i % 2 == 0) {
      s.instruction = "What color is the background?";
      s.answer = kColours[colour].name;
    } else {
      s.instruction = "Where is the white square?";
      s.answer = kQuadrants[quadrant];
    }
    out.push_back(std::move(s));
  }
  return out;
}

Variant parse_variant(std::string_view id) {
  if (id == "ft2ep") return Variant::Ft2Epoch;
  if (id == "ft1ep") return Variant::Ft1Epoch;
  if (id == "prealign_ft") return Variant::PreAlignThenFt;
  throw ConfigError("unknown training variant '" + std::string(id) + "' (expected ft2ep|ft1ep|prealign_ft)");
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Ft1Epoch:
      return "ft1ep";
    case Variant::PreAlignThenFt:
      return "prealign_ft";
    default:
      return "ft2ep";
  }
}

VariantPlan ablation_modes(Variant v, const TrainConfig& cfg) {
  switch (v) {
    case Variant::Ft2Epoch:
      return {0, cfg.epochs};
    case Variant::Ft1Epoch:
      return {0, 1};
    case Variant::PreAlignThenFt:
      return {1, cfg.epochs};
  }
  throw ConfigError("unknown training variant");
}

ModelGrads ModelGrads::zeros_like(const CobraModel& m) {
  return {vision::Projector::zeros_like(m.projector), lm::BackboneWeights::zeros_like(m.lm)};
}

std::vector<EncodedSample> encode_dataset(const CobraModel& model, const std::vector<SyntheticSample>& data) {
  std::vector<EncodedSample> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    out.push_back({model.encode(s.image), prompt::Conversation::single(s.instruction), s.answer});
  }
  return out;
}

namespace {

lm::MultimodalSequence training_sequence(const CobraModel& model, const Matrix& h_v, const EncodedSample& s,
                                         prompt::Template tmpl) {
  auto ids = prompt::tokenize(prompt::render(s.conversation, tmpl));
  const auto answer = prompt::tokenize(prompt::answer_suffix(s.answer));
  ids.insert(ids.end(), answer.begin(), answer.end());
  return lm::fuse_sequence(h_v, ids, model.lm, answer.size());
}

void axpy(std::vector<ssm::ParamRef> dst, const std::vector<ssm::ParamRef>& src, double scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t j = 0; j < dst[i].values.size(); ++j) dst[i].values[j] += scale * src[i].values[j];
  }
}

}  // namespace

double sample_loss_and_grad(const CobraModel& model, const EncodedSample& s, prompt::Template tmpl,
                            ModelGrads& grads, double scale) {
  vision::ProjectorCache pc;
  const auto tokens = vision::projector_forward_train(model.projector, s.features, pc);
  const auto seq = training_sequence(model, tokens.h_v, s, tmpl);
  ModelGrads local = ModelGrads::zeros_like(model);
  Matrix d_emb;
  const double loss = lm::loss_and_backward(model.lm, seq, local.lm, &d_emb);
  Matrix d_visual(seq.visual_count, d_emb.cols());
  for (std::size_t t = 0; t < seq.visual_count; ++t) {
    std::copy(d_emb.row(t).begin(), d_emb.row(t).end(), d_visual.row(t).begin());
  }
  vision::projector_backward(model.projector, pc, d_visual, local.projector);
  axpy(grads.projector.params(), local.projector.params(), scale);
  axpy(grads.lm.params(), local.lm.params(), scale);
  return loss;
}

double eval_loss(const CobraModel& model, const std::vector<EncodedSample>& data, prompt::Template tmpl) {
  if (data.empty()) throw PreconditionError("eval_loss: empty dataset");
  double total = 0.0;
  for (const auto& s : data) {
    const auto seq = training_sequence(model, model.project(s.features).h_v, s, tmpl);
    total += lm::next_token_loss(lm::forward_logits(model.lm, seq), seq);
  }
  return total / static_cast<double>(data.size());
}

void AdamW::step(std::vector<ssm::ParamRef>& params, const std::vector<ssm::ParamRef>& grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("AdamW: parameter/gradient list mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.values.size(), 0.0);
      v_.emplace_back(p.values.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ShapeError("AdamW: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values;
    const auto g = grads[i].values;
    if (p.size() != g.size() || p.size() != m_[i].size()) {
      throw ShapeError("AdamW: size mismatch for '" + params[i].name + "'");
    }
    const double wd = params[i].decay ? cfg_.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double update = (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + cfg_.eps) + wd * p[j];
      p[j] -= lr * update;
    }
  }
}

TrainResult train_toy(CobraModel& model, const std::vector<SyntheticSample>& dataset, const TrainConfig& cfg,
                      const TrainOptions& opts) {
  cfg.validate();
  if (dataset.empty()) throw PreconditionError("train_toy: empty dataset");
  const auto data = encode_dataset(model, dataset);
  const auto plan = ablation_modes(opts.variant, cfg);

  TrainResult result;
  result.initial_eval_loss = eval_loss(model, data, opts.tmpl);

  struct Phase {
    Trainable what;
    std::size_t epochs;
    const char* name;
  };
  const Phase phases[] = {{Trainable::ProjectorOnly, plan.prealign_epochs, "prealign"},
                          {Trainable::ProjectorAndBackbone, plan.ft_epochs, "ft"}};
  std::size_t global_step = 0;
  for (std::size_t ph = 0; ph < 2; ++ph) {
    const Phase& phase = phases[ph];
    if (phase.epochs == 0) continue;
    if (opts.prealign_only && phase.what != Trainable::ProjectorOnly) break;
    const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
    std::size_t total = phase.epochs * per_epoch;
    if (cfg.max_steps) total = std::min(total, cfg.max_steps);
    AdamW opt(cfg);
    Rng rng(cfg.seed * 1000003 + ph);
    std::vector<std::size_t> order(data.size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < phase.epochs && step < total; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size() && step < total; start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        // Update k uses point k+1 of a (total+1)-step schedule, which keeps
        // every update off the two zero endpoints.
        const double lr = lr_at(step + 1, total + 1, cfg);
        ModelGrads grads = ModelGrads::zeros_like(model);
        const double scale = 1.0 / static_cast<double>(end - start);
        double loss = 0.0;
        for (std::size_t k = start; k < end; ++k) {
          loss += scale * sample_loss_and_grad(model, data[order[k]], opts.tmpl, grads, scale);
        }
        if (!std::isfinite(loss)) {
          std::string ids;
          for (std::size_t k = start; k < end; ++k) ids += (ids.empty() ? "" : ",") + std::to_string(order[k]);
          throw TrainingError("non-finite loss at " + std::string(phase.name) + " step " + std::to_string(step) +
                              " (epoch " + std::to_string(epoch) + ", samples [" + ids + "], lr " +
                              std::to_string(lr) + ")");
        }
        auto params = model.projector.params();
        auto grad_refs = grads.projector.params();
        if (phase.what == Trainable::ProjectorAndBackbone) {
          for (auto& p : model.lm.params()) params.push_back(std::move(p));
          for (auto& g : grads.lm.params()) grad_refs.push_back(std::move(g));
        }
        opt.step(params, grad_refs, lr);
        result.curve.push_back({global_step, lr, loss, phase.name});
        ++step;
        ++global_step;
      }
    }
  }
  result.final_eval_loss = eval_loss(model, data, opts.tmpl);
  return result;
}

std::string curve_csv(const std::vector<LossPoint>& curve) {
  std::ostringstream out;
  out.precision(10);
  out << "step,lr,loss\n";
  for (const auto& p : curve) out << p.step << "," << p.lr << "," << p.loss << "\n";
  return out.str();
}

void write_curve_csv(const std::vector<LossPoint>& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << curve_csv(curve);
}

}  // namespace cobra::train
