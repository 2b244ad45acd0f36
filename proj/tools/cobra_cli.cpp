// cobra: generate / bench / train / verify front end.
//
// Exit codes:
//   0  success
//   1  a check failed (verify suite, training diverged)
//   2  an input file is missing or unreadable
//   3  a checkpoint or feature file is malformed
//   4  bad usage or configuration
//   5  any other runtime error

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cobra/bench.hpp"
#include "cobra/model.hpp"
#include "cobra/trainer.hpp"
#include "cobra/verify.hpp"

namespace fs = std::filesystem;
using namespace cobra;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kMissingFile = 2, kMalformed = 3, kUsage = 4, kRuntime = 5 };

struct ExitError : std::runtime_error {
  int code;
  ExitError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

constexpr const char* kPrecedence =
    "Settings resolve as: command-line flags, then COBRA_SSM_* environment variables\n"
    "(COBRA_SSM_MODEL, COBRA_SSM_TEMPLATE, COBRA_SSM_OCR_ORDER, COBRA_SSM_PROJECTOR,\n"
    "COBRA_SSM_MAX_NEW, COBRA_SSM_SEED), then the --config file (key = value lines),\n"
    "then built-in defaults. COBRA_SSM_HOME names a directory whose model.cssm is\n"
    "used when no model is given. Without any checkpoint a seeded toy model is built.\n"
    "Exit codes: 0 ok, 1 check failed, 2 missing file, 3 malformed checkpoint or\n"
    "feature file, 4 usage/config error, 5 other runtime error.";

// Layered string settings. Keys use the config-file spelling.
class Settings {
 public:
  Settings() {
    values_ = {{"template", "chat"}, {"ocr_order", "none"}, {"projector", "mlp"},
               {"max_new", "64"},    {"seed", "0"},         {"n_out", "256"}};
  }

  void load_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ExitError(kMissingFile, "config file not found: " + path.string());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const auto eq = line.find('=');
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (eq == std::string::npos) {
        throw ExitError(kUsage, path.string() + ":" + std::to_string(n) + ": expected key = value");
      }
      values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
  }

  void load_env() {
    static const std::pair<const char*, const char*> keys[] = {
        {"COBRA_SSM_MODEL", "model"},         {"COBRA_SSM_TEMPLATE", "template"},
        {"COBRA_SSM_OCR_ORDER", "ocr_order"}, {"COBRA_SSM_PROJECTOR", "projector"},
        {"COBRA_SSM_MAX_NEW", "max_new"},     {"COBRA_SSM_SEED", "seed"}};
    for (const auto& [env, key] : keys) {
      if (const char* v = std::getenv(env); v && *v) values_[key] = v;
    }
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::optional<std::string> get(const std::string& key) const {
    const auto it = values_.find(key);
    return it == values_.end() ? std::nullopt : std::optional(it->second);
  }
  std::string str(const std::string& key) const { return get(key).value_or(""); }
  std::uint64_t count(const std::string& key) const {
    const std::string v = str(key);
    try {
      std::size_t used = 0;
      const auto n = std::stoull(v, &used);
      if (used == v.size()) return n;
    } catch (const std::exception&) {
    }
    throw ExitError(kUsage, "setting '" + key + "' is not a non-negative integer: '" + v + "'");
  }
  // Training keys are forwarded to the trainer's own parser.
  std::string training_kv() const {
    static const char* keys[] = {"lr",         "weight_decay", "warmup_ratio", "epochs", "batch_size",
                                 "max_steps",  "beta1",        "beta2",        "eps"};
    std::string out;
    for (const char* k : keys) {
      if (auto v = get(k)) out += std::string(k) + " = " + *v + "\n";
    }
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }
  std::map<std::string, std::string> values_;
};

void require_file(const std::string& path, const char* what) {
  if (!path.empty() && !fs::is_regular_file(path)) {
    throw ExitError(kMissingFile, std::string(what) + " not found: " + path);
  }
}

std::string default_model_path() {
  if (const char* home = std::getenv("COBRA_SSM_HOME"); home && *home) {
    const fs::path p = fs::path(home) / "model.cssm";
    if (fs::is_regular_file(p)) return p.string();
  }
  return {};
}

CobraModel load_or_build(const Settings& s) {
  const std::string path = s.str("model");
  const auto kind = vision::parse_projector_kind(s.str("projector"));
  if (path.empty()) {
    PipelineConfig cfg = PipelineConfig::tiny();
    cfg.projector = kind;
    cfg.seed = s.count("seed");
    return CobraModel::init(cfg);
  }
  CobraModel m = CobraModel::load(path);
  if (m.projector.kind != kind) {
    std::cerr << "note: checkpoint uses the " << vision::to_string(m.projector.kind)
              << " projector; --projector ignored\n";
  }
  return m;
}

int run_generate(const Settings& s, const std::string& image, const std::string& features,
                 const std::string& conversation, const std::string& question, const std::string& ocr,
                 const std::string& report) {
  require_file(s.str("model"), "model checkpoint");
  require_file(image, "image");
  require_file(features, "feature file");
  require_file(conversation, "conversation file");
  if (!image.empty() && !features.empty()) throw ExitError(kUsage, "--image and --features are exclusive");

  prompt::Conversation conv;
  if (!conversation.empty()) {
    std::ifstream in(conversation);
    std::stringstream ss;
    ss << in.rdbuf();
    conv = prompt::parse_conversation_jsonl(ss.str());
  } else {
    conv = prompt::Conversation::single(question);
  }
  if (!ocr.empty()) conv.ocr = ocr;
  const auto ordering = prompt::parse_ocr_ordering(s.str("ocr_order"));
  if (ordering != prompt::OcrOrdering::None || !ocr.empty()) conv.ordering = ordering;
  const auto tmpl = prompt::parse_template(s.str("template"));

  const CobraModel model = load_or_build(s);
  std::optional<vision::VisualFeatures> f;
  if (!image.empty()) f = model.encode(vision::load_image(image));
  if (!features.empty()) {
    f = vision::ingest_external_features(features);
    model.check_features(*f);
  }

  lm::SamplingConfig sampling;
  sampling.max_new = s.count("max_new");
  sampling.seed = s.count("seed");
  const auto out = run_generation(model, f ? &*f : nullptr, conv, tmpl, sampling);
  std::cout << out.answer << "\n";

  if (!report.empty()) {
    // Line-delimited: one header record, then one record per decode step.
    std::ofstream o(report);
    if (!o) throw ExitError(kMissingFile, "cannot write report: " + report);
    const nlohmann::json head{{"prompt", out.prompt},
                              {"template", prompt::to_string(tmpl)},
                              {"ocr_order", prompt::to_string(conv.ordering)},
                              {"visual_tokens", out.visual_tokens},
                              {"answer", out.answer}};
    o << head.dump() << "\n";
    for (const auto& e : out.trace) {
      o << nlohmann::json{{"step", e.step}, {"token", e.token}, {"latency_us", e.latency_us}}.dump() << "\n";
    }
  }
  return kOk;
}

int run_bench(const Settings& s, const std::string& image, bool sweep, bool standard, const std::string& report) {
  require_file(s.str("model"), "model checkpoint");
  require_file(image, "image");
  std::vector<bench::ThroughputReport> reports;
  std::vector<CobraModel> models;
  std::vector<std::string> tags;
  if (!s.str("model").empty()) {
    models.push_back(load_or_build(s));
    tags.push_back(fs::path(s.str("model")).stem().string());
  } else {
    // The two visual-token budgets side by side, as in the reference table.
    for (const auto kind : {vision::ProjectorKind::Mlp, vision::ProjectorKind::Ldp}) {
      PipelineConfig cfg = standard ? PipelineConfig::standard() : PipelineConfig::tiny();
      cfg.projector = kind;
      cfg.seed = s.count("seed");
      models.push_back(CobraModel::init(cfg));
      tags.push_back(std::string(standard ? "cobra-standard-" : "cobra-tiny-") +
                     std::string(vision::to_string(kind)));
    }
  }
  const auto conv = prompt::Conversation::single("Describe the image.");
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& m = models[i];
    const auto img = image.empty() ? vision::ImageInput::blank(m.config.image_side, 0.5) : vision::load_image(image);
    bench::ThroughputOptions to;
    to.tag = tags[i];
    to.n_out = s.count("n_out");
    reports.push_back(bench::measure_throughput(m, &img, conv, prompt::parse_template(s.str("template")), to));
    if (reports.back().short_generation) std::cerr << "warning: " << to.tag << " stopped before n_out tokens\n";
  }
  std::cout << bench::format_table(reports);
  std::string csv = bench::reports_csv(reports);

  if (sweep) {
    lm::BackboneConfig cfg;
    cfg.model_dim = 64;
    Rng rng(s.count("seed"));
    const auto w = lm::BackboneWeights::init(cfg, rng);
    const auto ref = bench::AttentionReference::init(64, rng);
    bench::SweepOptions so;
    so.seed = s.count("seed");
    const std::vector<bench::ScalingTable> tables{bench::ssm_scaling_sweep(w, so),
                                                  bench::attention_scaling_sweep(ref, so)};
    std::cout << "\n" << bench::format_scaling(tables);
    csv += "\n" + bench::scaling_csv(tables);
  }
  if (!report.empty()) {
    std::ofstream o(report);
    if (!o) throw ExitError(kMissingFile, "cannot write report: " + report);
    o << csv;
  }
  return kOk;
}

int run_train(const Settings& s, const std::string& variant, std::size_t samples, const std::string& save,
              const std::string& report) {
  require_file(s.str("model"), "model checkpoint");
  train::TrainConfig base;
  base.lr = 1e-2;  // the toy model needs a far larger step than the reference recipe
  base.seed = s.count("seed");
  const auto cfg = train::TrainConfig::parse_kv(s.training_kv(), base);
  CobraModel model = load_or_build(s);
  const auto data = train::make_synthetic_dataset(samples, model.config.image_side, s.count("seed"));
  train::TrainOptions opts;
  opts.variant = train::parse_variant(variant);
  opts.tmpl = prompt::parse_template(s.str("template"));
  const auto result = train::train_toy(model, data, cfg, opts);
  std::cout << "variant " << variant << ": " << result.curve.size() << " steps, eval loss "
            << result.initial_eval_loss << " -> " << result.final_eval_loss << "\n";
  if (!report.empty()) train::write_curve_csv(result.curve, report);
  if (!save.empty()) model.save(save);
  return kOk;
}

int run_verify(const Settings& s, bool fault, bool skip_timing, bool json, const std::vector<std::string>& only) {
  verify::VerifyOptions vo;
  vo.seed = s.count("seed");
  vo.corrupt_kernel = fault;
  vo.skip_timing = skip_timing;
  vo.only = only;
  const auto names = verify::suite_names();
  for (const auto& n : only) {
    if (std::find(names.begin(), names.end(), n) == names.end()) throw ExitError(kUsage, "unknown suite: " + n);
  }
  const auto report = verify::run_verify(vo);
  std::cout << (json ? report.json() + "\n" : report.text());
  return report.passed() ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mamba-backbone multi-modal model toolkit", "cobra"};
  app.footer(kPrecedence);
  app.require_subcommand(1, 1);

  std::string model, config, tmpl, ocr_order, projector, report;
  std::size_t max_new = 0;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--model", model, "Checkpoint path");
    sub->add_option("--config", config, "key = value settings file");
    sub->add_option("--seed", seed, "Seed for toy weights, data and sampling");
    sub->add_option("--report", report, "Output path for the trace / CSV report");
  };

  auto* gen = app.add_subcommand("generate", "Answer a question about an image");
  add_common(gen);
  std::string image, features, conversation, question = "What is in the image?", ocr;
  gen->add_option("--image", image, "PPM (P6) or raw little-endian f64 CHW image");
  gen->add_option("--features", features, "Precomputed visual features (weight container)");
  gen->add_option("--conversation", conversation, "JSONL conversation");
  gen->add_option("--question", question, "Question (single turn)");
  gen->add_option("--ocr", ocr, "Reference OCR tokens");
  gen->add_option("--template", tmpl, "chat | base");
  gen->add_option("--ocr-order", ocr_order, "first | last | none");
  gen->add_option("--projector", projector, "mlp | ldp (toy model only)");
  gen->add_option("--max-new", max_new, "Maximum new tokens");

  auto* bn = app.add_subcommand("bench", "Throughput report and decode scaling sweep");
  add_common(bn);
  bool sweep = false, standard = false;
  bn->add_option("--image", image, "Image to encode (default: uniform grey)");
  bn->add_option("--max-new", max_new, "Output tokens per run (default 256)");
  bn->add_option("--template", tmpl, "chat | base");
  bn->add_flag("--sweep", sweep, "Also run the context-length scaling sweep");
  bn->add_flag("--standard", standard, "Benchmark the 378 px / 729-token configuration");

  auto* tr = app.add_subcommand("train", "Toy fine-tune on synthetic image questions");
  add_common(tr);
  std::string variant = "ft2ep", save;
  std::size_t samples = 32;
  tr->add_option("--variant", variant, "ft2ep | ft1ep | prealign_ft");
  tr->add_option("--samples", samples, "Synthetic dataset size");
  tr->add_option("--save", save, "Write the trained checkpoint here");
  tr->add_option("--template", tmpl, "chat | base");
  tr->add_option("--projector", projector, "mlp | ldp (toy model only)");

  auto* ver = app.add_subcommand("verify", "Run every invariant suite");
  add_common(ver);
  bool fault = false, skip_timing = false, json = false;
  std::vector<std::string> only;
  ver->add_flag("--inject-fault", fault, "Corrupt the first LTI kernel tap (self-test of verify)");
  ver->add_flag("--skip-timing", skip_timing, "Skip wall-clock assertions");
  ver->add_flag("--json", json, "Machine-readable summary");
  ver->add_option("--suite", only, "Run only the named suite(s)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    Settings s;
    if (!config.empty()) s.load_file(config);
    s.load_env();
    CLI::App* sub = app.get_subcommands().front();
    auto flag = [&](const char* name, const std::string& key, const std::string& value) {
      if (sub->get_option_no_throw(name) && sub->count(name)) s.set(key, value);
    };
    flag("--model", "model", model);
    flag("--template", "template", tmpl);
    flag("--ocr-order", "ocr_order", ocr_order);
    flag("--projector", "projector", projector);
    flag("--seed", "seed", std::to_string(seed));
    flag("--max-new", sub == bn ? "n_out" : "max_new", std::to_string(max_new));
    if (s.str("model").empty()) s.set("model", default_model_path());

    if (sub == gen) return run_generate(s, image, features, conversation, question, ocr, report);
    if (sub == bn) return run_bench(s, image, sweep, standard, report);
    if (sub == tr) return run_train(s, variant, samples, save, report);
    return run_verify(s, fault, skip_timing, json, only);
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissingFile;
  } catch (const FormatError& e) {
    std::cerr << "error: malformed input: " << e.what() << "\n";
    return kMalformed;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
