#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pavad/model.hpp"
#include "pavad/tensor_io.hpp"

namespace pavad::model {

using nlohmann::json;

void save_checkpoint(const ModelParams& p, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json tensors = json::object();
  for (const auto& [name, t] : p.named()) {
    const auto& shape = t->shape();
    std::vector<float> values(t->data().begin(), t->data().end());
    io::PavfTensor pt;
    if (shape.size() == 1) {
      pt = io::PavfTensor::vector(std::move(values));
    } else {
      const auto rows = static_cast<std::uint32_t>(shape[0]);
      pt = io::PavfTensor::matrix(rows, static_cast<std::uint32_t>(t->numel() / shape[0]), std::move(values));
    }
    const std::string file = name + ".pavf";
    io::write_tensor(pt, dir / file);
    tensors[name] = {{"file", file}, {"shape", shape}};
  }
  const json index = {{"format", "pavad-checkpoint"},
                      {"version", 1},
                      {"config", {{"heads", p.encoder.heads}, {"tau", p.tau}}},
                      {"tensors", tensors}};
  std::ofstream out(dir / "index.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "index.json").string());
  out << index.dump(2) << "\n";
}

ModelParams load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw std::runtime_error("checkpoint index not found in " + dir.string());
  json index;
  try {
    index = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("bad checkpoint index: " + std::string(e.what()));
  }
  ModelParams p;
  p.encoder.heads = index.at("config").at("heads").get<std::size_t>();
  p.tau = index.at("config").at("tau").get<double>();
  p.abnormal.role = BankRole::abnormal;
  p.normal.role = BankRole::normal;
  const json& tensors = index.at("tensors");
  for (auto& [name, t] : p.named()) {
    if (!tensors.contains(name)) throw std::runtime_error("checkpoint is missing tensor " + name);
    const json& rec = tensors.at(name);
    const auto shape = rec.at("shape").get<ad::Shape>();
    const auto pt = io::read_tensor(dir / rec.at("file").get<std::string>());
    std::vector<double> values(pt.data.begin(), pt.data.end());
    *t = Tensor(shape, std::move(values));
  }
  p.config().validate();
  return p;
}

}  // namespace pavad::model
