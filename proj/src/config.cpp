#include "tailgraph/config.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace tailgraph::train {

using nlohmann::json;

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool parse_on_off(const std::string& key, const std::string& v) {
  const std::string s = lower(v);
  if (s == "on" || s == "true" || s == "1" || s == "yes") return true;
  if (s == "off" || s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("switch '" + key + "': expected on/off, got '" + v + "'");
}

ContrastSwitch parse_contrast(const std::string& v) {
  const std::string s = lower(v);
  if (s == "none" || s == "off") return ContrastSwitch::None;
  if (s == "unsupervised" || s == "ucl") return ContrastSwitch::Unsupervised;
  if (s == "supervised" || s == "scl") return ContrastSwitch::Supervised;
  if (s == "balanced" || s == "bcl" || s == "on") return ContrastSwitch::Balanced;
  throw ConfigError("contrast: unknown value '" + v + "' (none, unsupervised, supervised, balanced)");
}

std::string contrast_name(ContrastSwitch c) {
  switch (c) {
    case ContrastSwitch::None: return "none";
    case ContrastSwitch::Unsupervised: return "unsupervised";
    case ContrastSwitch::Supervised: return "supervised";
    case ContrastSwitch::Balanced: return "balanced";
  }
  return "?";
}

DistillSwitch parse_distill(const std::string& v) {
  const std::string s = lower(v);
  if (s == "off" || s == "none") return DistillSwitch::Off;
  if (s == "disentangled" || s == "on" || s == "dkl") return DistillSwitch::Disentangled;
  if (s == "plain" || s == "kl" || s == "kd") return DistillSwitch::PlainKl;
  if (s == "target" || s == "tcd") return DistillSwitch::TargetOnly;
  if (s == "nontarget" || s == "ntcd") return DistillSwitch::NontargetOnly;
  throw ConfigError("distill: unknown value '" + v + "' (off, disentangled, plain, target, nontarget)");
}

std::string distill_name(DistillSwitch d) {
  switch (d) {
    case DistillSwitch::Off: return "off";
    case DistillSwitch::Disentangled: return "disentangled";
    case DistillSwitch::PlainKl: return "plain";
    case DistillSwitch::TargetOnly: return "target";
    case DistillSwitch::NontargetOnly: return "nontarget";
  }
  return "?";
}

std::string view_pairs_string(const std::vector<augment::ViewPair>& pairs) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i) out += ',';
    out += augment::to_string(pairs[i][0]) + "+" + augment::to_string(pairs[i][1]);
  }
  return out;
}

std::vector<augment::ViewPair> parse_view_pairs(const std::string& text) {
  std::vector<augment::ViewPair> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto plus = item.find('+');
    if (plus == std::string::npos) throw ConfigError("augmentations: expected kind+kind, got '" + item + "'");
    out.push_back({augment::parse_kind(item.substr(0, plus)), augment::parse_kind(item.substr(plus + 1))});
  }
  return out;
}

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "': wrong value type " + v.dump());
  }
}

std::string get_string(const json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "on" : "off";
  throw ConfigError("config key '" + key + "': expected a string, got " + v.dump());
}

bool get_bool(const json& v, const std::string& key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) return parse_on_off(key, v.get<std::string>());
  throw ConfigError("config key '" + key + "': expected a boolean, got " + v.dump());
}

void set_key(TrainConfig& c, const std::string& key, const json& v) {
  if (key == "method") c.method = parse_method(get_string(v, key));
  else if (key == "experts") c.experts = get_as<int>(v, key);
  else if (key == "batch_size") c.batch_size = get_as<int>(v, key);
  else if (key == "learning_rate") c.learning_rate = get_as<double>(v, key);
  else if (key == "epochs") c.epochs = get_as<int>(v, key);
  else if (key == "patience") c.patience = get_as<int>(v, key);
  else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
  else if (key == "hidden") c.hidden = get_as<Index>(v, key);
  else if (key == "z_dim") c.z_dim = get_as<Index>(v, key);
  else if (key == "layers") c.layers = get_as<int>(v, key);
  else if (key == "anchors_use_projection") c.anchors_use_projection = get_bool(v, key);
  else if (key == "tau") c.bcl.tau = get_as<double>(v, key);
  else if (key == "alpha") c.bcl.alpha = get_as<double>(v, key);
  else if (key == "symmetrize_views") c.bcl.symmetrize_views = get_bool(v, key);
  else if (key == "eta") c.fusion.eta = get_as<double>(v, key);
  else if (key == "kappa") c.fusion.kappa = get_as<double>(v, key);
  else if (key == "gating_similarity") {
    const std::string s = lower(get_string(v, key));
    if (s == "cosine") c.fusion.similarity = GatingSimilarity::Cosine;
    else if (s == "dot") c.fusion.similarity = GatingSimilarity::Dot;
    else throw ConfigError("gating_similarity: expected cosine or dot, got '" + s + "'");
  } else if (key == "beta1") c.distill.beta1 = get_as<double>(v, key);
  else if (key == "beta2") c.distill.beta2 = get_as<double>(v, key);
  else if (key == "epsilon") c.distill.epsilon = get_as<double>(v, key);
  else if (key == "detach_teacher") c.distill.detach_teacher = get_bool(v, key);
  else if (key == "hard_support_mode") {
    const std::string s = lower(get_string(v, key));
    if (s == "first") c.distill.hard_support = ensemble::HardSupport::FirstExpert;
    else if (s == "intersection") c.distill.hard_support = ensemble::HardSupport::Intersection;
    else throw ConfigError("hard_support_mode: expected first or intersection, got '" + s + "'");
  } else if (key == "m_hard") c.m_hard = get_as<int>(v, key);
  else if (key == "aug_ratio") c.aug_ratio = get_as<double>(v, key);
  else if (key == "augmentations") c.view_pairs = parse_view_pairs(get_string(v, key));
  else if (key == "adam_beta1") c.adam_beta1 = get_as<double>(v, key);
  else if (key == "adam_beta2") c.adam_beta2 = get_as<double>(v, key);
  else if (key == "adam_eps") c.adam_eps = get_as<double>(v, key);
  else if (key == "contrast") c.switches.contrast = parse_contrast(get_string(v, key));
  else if (key == "hcm") c.switches.hcm = get_bool(v, key);
  else if (key == "gating") c.switches.gating = get_bool(v, key);
  else if (key == "distill") c.switches.distill = parse_distill(get_string(v, key));
  else if (key == "bpp") c.switches.bpp = get_bool(v, key);
  else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

Switches parse_switches(const std::string& text, Switches s) {
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("switch '" + item + "': expected key=value");
    const std::string key = lower(item.substr(0, eq));
    const std::string value = item.substr(eq + 1);
    if (key == "contrast" || key == "bcl") s.contrast = parse_contrast(value);
    else if (key == "hcm") s.hcm = parse_on_off(key, value);
    else if (key == "gating") s.gating = parse_on_off(key, value);
    else if (key == "distill" || key == "died") s.distill = parse_distill(value);
    else if (key == "bpp") s.bpp = parse_on_off(key, value);
    else throw ConfigError("unknown switch '" + key + "' (contrast, hcm, gating, distill, bpp)");
  }
  return s;
}

std::string to_string(const Switches& s) {
  return "contrast=" + contrast_name(s.contrast) + ",hcm=" + (s.hcm ? "on" : "off") +
         ",gating=" + (s.gating ? "on" : "off") + ",distill=" + distill_name(s.distill) + ",bpp=" + (s.bpp ? "on" : "off");
}

void TrainConfig::validate() const {
  if (experts < 1) throw ConfigError("experts must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (hidden < 1 || z_dim < 1 || layers < 1) throw ConfigError("hidden, z_dim and layers must be >= 1");
  if (m_hard < 0) throw ConfigError("m_hard must be >= 0");
  if (!(aug_ratio >= 0 && aug_ratio <= 1)) throw ConfigError("aug_ratio must lie in [0, 1]");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
    throw ConfigError("adam moments must lie in [0, 1) and adam_eps must be positive");
  bcl.validate();
  fusion.validate();
  distill.validate();
}

ResolvedConfig resolve(const TrainConfig& config, int num_classes) {
  config.validate();
  if (num_classes < 2) throw ConfigError("need at least two classes");
  ResolvedConfig rc;
  rc.config = config;
  rc.experts = config.experts;
  rc.switches = config.switches;
  switch (config.method) {
    case Method::Come: break;
    case Method::OversampleBaseline:
      rc.oversample = true;
      [[fallthrough]];
    case Method::CeBaseline:
      rc.experts = 1;
      rc.switches = Switches{ContrastSwitch::None, false, false, DistillSwitch::Off, false};
      break;
    case Method::SupconBaseline:
      rc.experts = 1;
      rc.switches = Switches{ContrastSwitch::Supervised, false, false, DistillSwitch::Off, false};
      break;
  }
  const Index auto_hard = std::clamp<Index>(std::lround(0.3 * num_classes), 1, num_classes - 1);
  rc.m_hard = config.m_hard > 0 ? config.m_hard : auto_hard;
  if (rc.m_hard > num_classes - 1)
    throw ConfigError("m_hard " + std::to_string(rc.m_hard) + " exceeds M - 1 = " + std::to_string(num_classes - 1));
  rc.view_pairs = config.view_pairs.empty() ? augment::default_view_pairs(rc.experts) : config.view_pairs;
  if (static_cast<int>(rc.view_pairs.size()) < rc.experts)
    throw ConfigError("augmentations: " + std::to_string(rc.view_pairs.size()) + " pairs for " +
                      std::to_string(rc.experts) + " experts");
  rc.view_pairs.resize(static_cast<std::size_t>(rc.experts));
  return rc;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Come: return "come";
    case Method::CeBaseline: return "ce-baseline";
    case Method::OversampleBaseline: return "oversample-baseline";
    case Method::SupconBaseline: return "supcon-baseline";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  const std::string s = lower(name);
  if (s == "come") return Method::Come;
  if (s == "ce-baseline" || s == "ce") return Method::CeBaseline;
  if (s == "oversample-baseline" || s == "oversample") return Method::OversampleBaseline;
  if (s == "supcon-baseline" || s == "supcon") return Method::SupconBaseline;
  throw ConfigError("unknown method '" + name + "' (come, ce-baseline, oversample-baseline, supcon-baseline)");
}

TrainConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object of key/value pairs");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) set_key(c, key, value);
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return config_from_json_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

void apply_override(TrainConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json v = json::parse(raw, nullptr, false);
  if (v.is_discarded()) v = raw;
  set_key(config, key, v);
}

std::string config_to_json(const TrainConfig& c) {
  json j;
  j["method"] = to_string(c.method);
  j["experts"] = c.experts;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["hidden"] = c.hidden;
  j["z_dim"] = c.z_dim;
  j["layers"] = c.layers;
  j["anchors_use_projection"] = c.anchors_use_projection;
  j["tau"] = c.bcl.tau;
  j["alpha"] = c.bcl.alpha;
  j["symmetrize_views"] = c.bcl.symmetrize_views;
  j["eta"] = c.fusion.eta;
  j["kappa"] = c.fusion.kappa;
  j["gating_similarity"] = c.fusion.similarity == GatingSimilarity::Cosine ? "cosine" : "dot";
  j["beta1"] = c.distill.beta1;
  j["beta2"] = c.distill.beta2;
  j["epsilon"] = c.distill.epsilon;
  j["detach_teacher"] = c.distill.detach_teacher;
  j["hard_support_mode"] = c.distill.hard_support == ensemble::HardSupport::FirstExpert ? "first" : "intersection";
  j["m_hard"] = c.m_hard;
  j["aug_ratio"] = c.aug_ratio;
  j["augmentations"] = view_pairs_string(c.view_pairs);
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["contrast"] = contrast_name(c.switches.contrast);
  j["hcm"] = c.switches.hcm;
  j["gating"] = c.switches.gating;
  j["distill"] = distill_name(c.switches.distill);
  j["bpp"] = c.switches.bpp;
  return j.dump(2);
}

std::string default_config_text() {
  return R"({
  // Training method: come, ce-baseline, oversample-baseline, supcon-baseline.
  "method": "come",
  "experts": 3,              // K, from the reference setup
  "batch_size": 32,          // from the reference setup
  "learning_rate": 1e-4,     // fixed rate of the reference setup; desk-scale runs use larger values
  "epochs": 100,             // desk-scale choice, not given in the reference
  "patience": 20,            // early stopping on validation accuracy, desk-scale choice
  "seed": 0,                 // overridden by TAILGRAPH_SEED when set

  // Expert architecture (desk-scale choices).
  "hidden": 64,
  "z_dim": 64,
  "layers": 2,
  "anchors_use_projection": false,  // anchors scored against the raw embedding

  // Contrastive term.
  "tau": 0.2,                // temperature, desk-scale choice
  "alpha": 0.05,             // weight of same-class pairs relative to the class anchor
  "symmetrize_views": false,

  // Fusion.
  "eta": 1.0,                // weight of the contrastive term
  "kappa": 0.1,              // gating temperature, not given in the reference
  "gating_similarity": "cosine",  // "dot" uses the raw product

  // Distillation.
  "beta1": 1.0,
  "beta2": 1.0,
  "epsilon": 0.6,            // weight of the distillation loss
  "detach_teacher": false,   // mutual learning: gradients reach both experts
  "hard_support_mode": "first",  // or "intersection"

  // Hard classes and augmentation.
  "m_hard": 0,               // 0 means round(0.3 M), clamped to [1, M-1]
  "aug_ratio": 0.2,
  "augmentations": "",       // e.g. "mask+drop,drop+perturb,perturb+subgraph"; empty cycles that list

  // Adam with default moments.
  "adam_beta1": 0.9,
  "adam_beta2": 0.999,
  "adam_eps": 1e-8,

  // Component switches (come only).
  "contrast": "balanced",    // none, unsupervised, supervised, balanced
  "hcm": true,
  "gating": true,
  "distill": "disentangled", // off, disentangled, plain, target, nontarget
  "bpp": true                // prior-weighted softmax
}
)";
}

void apply_seed_env(TrainConfig& config) {
  const char* v = std::getenv(kSeedEnvVar);
  if (!v || !*v) return;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*end != '\0') throw ConfigError(std::string(kSeedEnvVar) + " must be an unsigned integer, got '" + v + "'");
  config.seed = s;
}

}  // namespace tailgraph::train
