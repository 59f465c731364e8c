#include "tailgraph/ablation.hpp"

#include <sstream>

namespace tailgraph::train {

namespace {

Switches all_off() { return Switches{ContrastSwitch::None, false, false, DistillSwitch::Off, false}; }

}  // namespace

std::vector<Variant> table_variants(bool bpp) {
  const auto B = ContrastSwitch::Balanced;
  const auto N = ContrastSwitch::None;
  const auto D = DistillSwitch::Disentangled;
  const auto O = DistillSwitch::Off;
  return {
      {"M1", {N, false, false, O, bpp}}, {"M2", {N, true, false, O, bpp}}, {"M3", {B, false, false, O, bpp}},
      {"M4", {B, true, false, O, bpp}},  {"M5", {B, true, true, O, bpp}},  {"M6", {B, true, false, D, bpp}},
      {"M7", {B, true, true, D, bpp}},
  };
}

std::vector<Variant> contrast_variants() {
  const auto D = DistillSwitch::Disentangled;
  return {
      {"ucl+bpp", {ContrastSwitch::Unsupervised, true, true, D, true}},
      {"scl+bpp", {ContrastSwitch::Supervised, true, true, D, true}},
      {"bcl", {ContrastSwitch::Balanced, true, true, D, false}},
      {"bcl+bpp", {ContrastSwitch::Balanced, true, true, D, true}},
  };
}

std::vector<Variant> distill_variants() {
  const auto B = ContrastSwitch::Balanced;
  return {
      {"none", {B, true, true, DistillSwitch::Off, true}},
      {"kd", {B, true, true, DistillSwitch::PlainKl, true}},
      {"tcd", {B, true, true, DistillSwitch::TargetOnly, true}},
      {"ntcd", {B, true, true, DistillSwitch::NontargetOnly, true}},
      {"dkl", {B, true, true, DistillSwitch::Disentangled, true}},
  };
}

Variant parse_variant(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos || colon == 0) throw ConfigError("variant '" + text + "': expected name:switches");
  return {text.substr(0, colon), parse_switches(text.substr(colon + 1), all_off())};
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, std::span<const Variant> variants,
                                      std::span<const std::uint64_t> seeds, const SplitProvider& splits,
                                      const RunObserver& observer) {
  if (variants.empty()) throw ConfigError("ablation: no variants");
  if (seeds.empty()) throw ConfigError("ablation: no seeds");
  std::vector<Splits> data;
  for (std::uint64_t s : seeds) data.push_back(splits(s));
  std::vector<AblationRow> rows;
  for (const Variant& v : variants) {
    AblationRow row;
    row.variant = v;
    std::array<double, 3> gsum{};
    std::array<int, 3> gcount{};
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      TrainConfig c = base;
      c.method = Method::Come;
      c.switches = v.switches;
      c.seed = seeds[i];
      const TrainResult r = train(c, data[i]);
      if (observer) observer(v, seeds[i], r);
      if (!r.converged) throw NumericalError("ablation", v.name + " seed " + std::to_string(seeds[i]) + ": " + r.failure);
      if (!r.test) throw DataError("ablation: splits have no test set");
      row.runs.push_back(*r.test);
      row.mean_accuracy += r.test->accuracy;
      for (std::size_t g = 0; g < 3; ++g)
        if (r.test->group[g]) {
          gsum[g] += *r.test->group[g];
          ++gcount[g];
        }
    }
    row.mean_accuracy /= static_cast<double>(seeds.size());
    for (std::size_t g = 0; g < 3; ++g)
      if (gcount[g]) row.mean_group[g] = gsum[g] / gcount[g];
    row.delta = rows.empty() ? 0.0 : row.mean_accuracy - rows.front().mean_accuracy;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream out;
  out.precision(6);
  out << "variant,switches,seeds,accuracy,delta,head,medium,tail\n";
  auto cell = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  for (const auto& r : rows) {
    out << r.variant.name << ",\"" << to_string(r.variant.switches) << "\"," << r.runs.size() << ',' << r.mean_accuracy
        << ',' << r.delta << ',';
    cell(r.mean_group[0]);
    out << ',';
    cell(r.mean_group[1]);
    out << ',';
    cell(r.mean_group[2]);
    out << '\n';
  }
  return out.str();
}

}  // namespace tailgraph::train
