#include "tailgraph/expert.hpp"

#include <json.hpp>

#include <fstream>

namespace tailgraph::nn {

using nlohmann::json;

void save_checkpoint(const std::filesystem::path& file, const ExpertBank& bank, const std::string& meta_json) {
  json root;
  root["meta"] = meta_json.empty() ? json::object() : json::parse(meta_json);
  json shapes = json::array();
  json arrays = json::object();
  for (std::size_t k = 0; k < bank.size(); ++k) {
    const ExpertShape& s = bank[k].shape;
    shapes.push_back({{"input_dim", s.input_dim},
                      {"hidden", s.hidden},
                      {"z_dim", s.z_dim},
                      {"layers", s.layers},
                      {"classes", s.classes},
                      {"anchors_use_projection", s.anchors_use_projection}});
    for (const ad::Parameter* p : bank[k].parameters()) {
      json data = json::array();
      for (Index i = 0; i < p->value.size(); ++i) data.push_back(p->value.data()[i]);
      arrays["expert" + std::to_string(k) + "." + p->name] = {{"shape", {p->value.rows(), p->value.cols()}},
                                                             {"data", std::move(data)}};
    }
  }
  root["experts"] = std::move(shapes);
  root["arrays"] = std::move(arrays);
  std::ofstream out(file);
  if (!out) throw DataError(file.string() + ": cannot open for writing");
  out << root.dump() << '\n';
}

ExpertBank load_checkpoint(const std::filesystem::path& file, std::string* meta_json) {
  std::ifstream in(file);
  if (!in) throw DataError(file.string() + ": cannot open");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(file.string() + ": " + e.what());
  }
  if (meta_json) *meta_json = root.value("meta", json::object()).dump();
  ExpertBank bank;
  const auto& arrays = root.at("arrays");
  for (std::size_t k = 0; k < root.at("experts").size(); ++k) {
    const auto& js = root["experts"][k];
    ExpertShape s;
    s.input_dim = js.at("input_dim").get<Index>();
    s.hidden = js.at("hidden").get<Index>();
    s.z_dim = js.at("z_dim").get<Index>();
    s.layers = js.at("layers").get<int>();
    s.classes = js.at("classes").get<Index>();
    s.anchors_use_projection = js.at("anchors_use_projection").get<bool>();
    ExpertParams params = ExpertParams::init(s, 0);
    for (ad::Parameter* p : params.parameters()) {
      const std::string key = "expert" + std::to_string(k) + "." + p->name;
      if (!arrays.contains(key)) throw DataError(file.string() + ": missing array " + key);
      const auto& a = arrays[key];
      const Index rows = a.at("shape").at(0).get<Index>(), cols = a.at("shape").at(1).get<Index>();
      const auto& data = a.at("data");
      if (rows != p->value.rows() || cols != p->value.cols() || static_cast<Index>(data.size()) != rows * cols)
        throw DataError(file.string() + ": array " + key + " has shape " + shape_string(rows, cols) + ", expected " +
                        shape_string(p->value.rows(), p->value.cols()));
      for (Index i = 0; i < rows * cols; ++i) p->value.data()[i] = data[static_cast<std::size_t>(i)].get<double>();
    }
    bank.push_back(std::move(params));
  }
  return bank;
}

}  // namespace tailgraph::nn
