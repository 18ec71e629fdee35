#include "grbo/checkpoint.hpp"

#include "grbo/scenario_io.hpp"

#include <json.hpp>

namespace grbo {

using nlohmann::json;

namespace {

template <typename Derived>
json tensor_to_json(const Eigen::MatrixBase<Derived>& t) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(t.size()));
  for (Eigen::Index r = 0; r < t.rows(); ++r)
    for (Eigen::Index c = 0; c < t.cols(); ++c) data.push_back(t(r, c));
  return {{"shape", {t.rows(), t.cols()}}, {"data", std::move(data)}};
}

template <typename Derived>
void tensor_from_json(const json& j, Eigen::PlainObjectBase<Derived>& t) {
  const auto rows = j.at("shape").at(0).get<Eigen::Index>();
  const auto cols = j.at("shape").at(1).get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw FormatError("checkpoint tensor size does not match its shape");
  if constexpr (Derived::ColsAtCompileTime == 1) {
    if (cols != 1) throw FormatError("checkpoint vector tensor must have one column");
    t.resize(rows);
  } else {
    t.resize(rows, cols);
  }
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) t(r, c) = data[static_cast<std::size_t>(r * cols + c)];
}

json params_to_json(const ParamSet& p) {
  return {{"w1", tensor_to_json(p.w1)},
          {"b1", tensor_to_json(p.b1)},
          {"w2", tensor_to_json(p.w2)},
          {"b2", tensor_to_json(p.b2)}};
}

ParamSet params_from_json(const json& j) {
  ParamSet p;
  tensor_from_json(j.at("w1"), p.w1);
  tensor_from_json(j.at("b1"), p.b1);
  tensor_from_json(j.at("w2"), p.w2);
  tensor_from_json(j.at("b2"), p.b2);
  if (p.b1.size() != p.w1.rows() || p.w2.cols() != p.w1.rows() || p.b2.size() != p.w2.rows())
    throw FormatError("checkpoint tensors have inconsistent shapes");
  return p;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  const PolicyModel& m = ck.model;
  json doc;
  doc["format_version"] = kCheckpointFormatVersion;
  doc["provenance"] = json::parse(ck.provenance_json);
  doc["vocabulary"] = {{"accel_levels", m.vocab.accel_levels()},
                       {"yaw_levels", m.vocab.yaw_levels()}};
  doc["features"] = {{"command_history", m.features.command_history},
                     {"max_neighbors", m.features.max_neighbors},
                     {"neighbor_radius", m.features.neighbor_radius},
                     {"cpa_horizon", m.features.cpa_horizon}};
  doc["params"] = params_to_json(m.params);
  if (ck.optimizer) {
    const OptimizerState& o = *ck.optimizer;
    doc["optimizer"] = {{"step", o.step},
                        {"learning_rate", o.learning_rate},
                        {"beta1", o.beta1},
                        {"beta2", o.beta2},
                        {"epsilon", o.epsilon},
                        {"m", params_to_json(o.m)},
                        {"v", params_to_json(o.v)}};
  } else {
    doc["optimizer"] = nullptr;
  }
  return doc.dump() + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("format_version"))
    throw FormatError("checkpoint lacks format_version");
  if (doc.at("format_version") != kCheckpointFormatVersion)
    throw CheckpointVersionError("checkpoint format_version " + doc.at("format_version").dump() +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointFormatVersion) + ")");
  try {
    Checkpoint ck{PolicyModel{}, std::nullopt, doc.at("provenance").dump()};
    ck.model.vocab = TokenVocabulary(doc.at("vocabulary").at("accel_levels").get<std::vector<double>>(),
                                     doc.at("vocabulary").at("yaw_levels").get<std::vector<double>>());
    const json& f = doc.at("features");
    ck.model.features.command_history = f.at("command_history").get<int>();
    ck.model.features.max_neighbors = f.at("max_neighbors").get<int>();
    ck.model.features.neighbor_radius = f.at("neighbor_radius").get<double>();
    ck.model.features.cpa_horizon = f.at("cpa_horizon").get<double>();
    ck.model.params = params_from_json(doc.at("params"));
    if (ck.model.params.input_dim() != ck.model.features.dim() ||
        ck.model.params.output_dim() != ck.model.vocab.size())
      throw FormatError("checkpoint parameter shapes disagree with its vocabulary/features");
    const json& o = doc.at("optimizer");
    if (!o.is_null()) {
      OptimizerState s;
      s.step = o.at("step").get<std::int64_t>();
      s.learning_rate = o.at("learning_rate").get<double>();
      s.beta1 = o.at("beta1").get<double>();
      s.beta2 = o.at("beta2").get<double>();
      s.epsilon = o.at("epsilon").get<double>();
      s.m = params_from_json(o.at("m"));
      s.v = params_from_json(o.at("v"));
      if (!s.m.same_shape(ck.model.params) || !s.v.same_shape(ck.model.params))
        throw FormatError("optimizer moments do not match parameter shapes");
      ck.optimizer = std::move(s);
    }
    return ck;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_text_file(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_text_file(path));
}

}  // namespace grbo
