#pragma once

#include "tailgraph/augment.hpp"
#include "tailgraph/ensemble.hpp"
#include "tailgraph/losses.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tailgraph::train {

enum class Method { Come, CeBaseline, OversampleBaseline, SupconBaseline };

enum class ContrastSwitch { None, Unsupervised, Supervised, Balanced };
enum class DistillSwitch { Off, Disentangled, PlainKl, TargetOnly, NontargetOnly };

// Component switches of the multi-expert method. The defaults enable everything.
struct Switches {
  ContrastSwitch contrast = ContrastSwitch::Balanced;
  bool hcm = true;
  bool gating = true;
  DistillSwitch distill = DistillSwitch::Disentangled;
  bool bpp = true;  // prior-weighted softmax in the supervised and distillation terms

  bool operator==(const Switches&) const = default;
};

// "contrast=balanced,hcm=on,gating=off,distill=plain,bpp=on"; unmentioned keys keep
// their value from `base`. Unknown keys or values throw ConfigError.
Switches parse_switches(const std::string& text, Switches base = {});
std::string to_string(const Switches& s);

struct TrainConfig {
  Method method = Method::Come;
  int experts = 3;
  int batch_size = 32;
  double learning_rate = 1e-4;
  int epochs = 100;
  int patience = 20;
  std::uint64_t seed = 0;

  Index hidden = 64;
  Index z_dim = 64;
  int layers = 2;
  bool anchors_use_projection = false;

  loss::BclConfig bcl;
  ensemble::FusionConfig fusion;
  ensemble::DistillConfig distill;
  Switches switches;

  int m_hard = 0;  // 0 picks round(0.3 M)
  double aug_ratio = 0.2;
  std::vector<augment::ViewPair> view_pairs;  // empty: default pairs for `experts`

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

// The configuration that is actually trained: baselines pin K = 1 and their
// component switches, M_hard and view pairs are filled in.
struct ResolvedConfig {
  TrainConfig config;
  Switches switches;
  int experts = 1;
  Index m_hard = 1;
  std::vector<augment::ViewPair> view_pairs;
  bool oversample = false;
};

ResolvedConfig resolve(const TrainConfig& config, int num_classes);

std::string to_string(Method m);
Method parse_method(const std::string& name);

// Config file: one JSON object of key/value pairs; // and /* */ comments allowed.
TrainConfig load_config(const std::filesystem::path& file);
TrainConfig config_from_json_text(const std::string& text);
// Applies "key=value" overrides; the value is read as JSON when it parses, else as a string.
void apply_override(TrainConfig& config, const std::string& assignment);
std::string config_to_json(const TrainConfig& config);
// The documented schema with every default and where it comes from.
std::string default_config_text();

// Seed override taken from the environment.
inline constexpr const char* kSeedEnvVar = "TAILGRAPH_SEED";
void apply_seed_env(TrainConfig& config);

}  // namespace tailgraph::train
