#include <json.hpp>

#include <cmath>
#include <string>

#include "sbthermo/detail/binary_io.hpp"
#include "sbthermo/error.hpp"
#include "sbthermo/mlp.hpp"

namespace sbthermo::nn {
namespace {

constexpr std::string_view kMagic = "MLPT";
constexpr std::uint32_t kMaxWidth = 1u << 16;

using json = nlohmann::json;

json box_to_json(const dataset::ParamBox& b) {
  return {{"nbar", {b.nbar_min, b.nbar_max}},
          {"eta", {b.eta_min, b.eta_max}},
          {"omega_t", {b.omega_t_min, b.omega_t_max}},
          {"sideband_count", b.sideband_count}};
}

dataset::ParamBox box_from_json(const json& j) {
  dataset::ParamBox b;
  b.nbar_min = j.at("nbar").at(0);
  b.nbar_max = j.at("nbar").at(1);
  b.eta_min = j.at("eta").at(0);
  b.eta_max = j.at("eta").at(1);
  b.omega_t_min = j.at("omega_t").at(0);
  b.omega_t_max = j.at("omega_t").at(1);
  b.sideband_count = j.at("sideband_count");
  return b;
}

}  // namespace

void save_model(const MlpModel& model, const std::filesystem::path& path) {
  model.validate();
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.put<std::uint32_t>(kModelFormatVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(model.layers().size()));
  for (int d : model.dims()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (Activation a : model.hidden_activations()) w.put<std::uint8_t>(static_cast<std::uint8_t>(a));
  for (const auto& layer : model.layers()) {
    w.put_doubles({layer.weight.data(), static_cast<std::size_t>(layer.weight.size())});
    w.put_doubles({layer.bias.data(), static_cast<std::size_t>(layer.bias.size())});
  }
  const auto& m = model.metadata();
  json meta = {{"sideband_count", m.sideband_count},
               {"seed", m.seed},
               {"epochs", m.epochs},
               {"final_loss", std::isfinite(m.final_loss) ? json(m.final_loss) : json(nullptr)},
               {"noise_trials", m.noise_trials},
               {"box", box_to_json(m.box)},
               {"config", json::parse(m.config_json)}};
  const std::string text = meta.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  detail::write_file_atomic(path, w.buffer());
}

MlpModel load_model(const std::filesystem::path& path) {
  const std::string raw = detail::read_file(path);
  detail::ByteReader r(raw);
  if (r.bytes(kMagic.size(), "magic") != kMagic)
    fail(ErrorCode::kFormat, "bad magic: not an MLPT model file");
  const auto version = r.get<std::uint32_t>("format version");
  if (version != kModelFormatVersion)
    fail(ErrorCode::kFormat, "unsupported model format version " + std::to_string(version));
  const auto layer_count = r.get<std::uint16_t>("layer count");
  if (layer_count < 1) fail(ErrorCode::kFormat, "layer count must be at least 1");
  std::vector<int> dims;
  for (int i = 0; i <= layer_count; ++i) {
    const auto d = r.get<std::uint32_t>("dims");
    if (d < 1 || d > kMaxWidth)
      fail(ErrorCode::kFormat, "dims[" + std::to_string(i) + "] = " + std::to_string(d) +
                                   " out of range");
    dims.push_back(static_cast<int>(d));
  }
  if (dims.back() != 2) fail(ErrorCode::kFormat, "output dimension must be 2");
  std::vector<Activation> hidden;
  for (int i = 0; i + 1 < layer_count; ++i) {
    const auto tag = r.get<std::uint8_t>("activation tags");
    if (tag > 2) fail(ErrorCode::kFormat, "unknown activation tag " + std::to_string(tag));
    hidden.push_back(static_cast<Activation>(tag));
  }
  MlpModel model(dims, hidden);
  for (auto& layer : model.layers()) {
    r.get_doubles({layer.weight.data(), static_cast<std::size_t>(layer.weight.size())}, "weights");
    r.get_doubles({layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}, "biases");
  }
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  const auto text = r.bytes(meta_len, "metadata");
  if (r.remaining() != 0) fail(ErrorCode::kFormat, "trailing bytes after metadata");

  auto& m = model.metadata();
  try {
    const json meta = json::parse(text);
    m.sideband_count = meta.at("sideband_count");
    m.seed = meta.at("seed");
    m.epochs = meta.at("epochs");
    const auto& fl = meta.at("final_loss");
    m.final_loss = fl.is_null() ? std::numeric_limits<double>::quiet_NaN() : fl.get<double>();
    m.noise_trials = meta.at("noise_trials");
    m.box = box_from_json(meta.at("box"));
    m.config_json = meta.at("config").dump();
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("metadata: ") + e.what());
  }
  if (m.sideband_count != model.sideband_count())
    fail(ErrorCode::kFormat, "metadata Q=" + std::to_string(m.sideband_count) +
                                 " disagrees with input dimension " +
                                 std::to_string(model.input_dim()));
  try {
    model.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, e.what());
  }
  return model;
}

}  // namespace sbthermo::nn
