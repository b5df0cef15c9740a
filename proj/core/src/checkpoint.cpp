#include "flowik/checkpoint.hpp"

#include <array>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "flowik/errors.hpp"

namespace flowik {

namespace {

using nlohmann::json;

constexpr std::array<char, 8> kModelMagic = {'F', 'L', 'O', 'W', 'I', 'K', 'C', 'K'};
constexpr std::array<char, 8> kOptMagic = {'F', 'L', 'O', 'W', 'I', 'K', 'O', 'P'};

void write_container(const std::string& path, const std::array<char, 8>& magic,
                     const json& header, const std::vector<double>& values) {
  detail::ByteWriter w;
  w.put_bytes(magic.data(), magic.size());
  w.put(static_cast<std::uint32_t>(kCheckpointFormatVersion));
  w.put_string(header.dump());
  w.put(static_cast<std::uint64_t>(values.size()));
  w.put(detail::crc32(values.data(), values.size() * sizeof(double)));
  w.put_bytes(values.data(), values.size() * sizeof(double));
  detail::write_file(path, w.bytes());
}

struct Container {
  json header;
  std::vector<double> values;
};

Container read_container(const std::string& path, const std::array<char, 8>& magic,
                         const char* kind) {
  detail::ByteReader r(detail::read_file(path), path);
  const char* m = r.take(magic.size());
  if (!std::equal(magic.begin(), magic.end(), m)) {
    throw FormatError(path + ": not a " + kind + " file");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != static_cast<std::uint32_t>(kCheckpointFormatVersion)) {
    throw FormatError(path + ": unsupported " + kind + " version " +
                      std::to_string(version));
  }
  Container c;
  try {
    c.header = json::parse(r.get_string());
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": corrupt header: " + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  const auto crc = r.get<std::uint32_t>();
  if (r.remaining() != count * sizeof(double)) {
    throw ChecksumError(path + ": payload size does not match header (truncated?)");
  }
  const char* payload = r.take(static_cast<std::size_t>(count) * sizeof(double));
  if (detail::crc32(payload, static_cast<std::size_t>(count) * sizeof(double)) != crc) {
    throw ChecksumError(path + ": checksum mismatch");
  }
  c.values.resize(static_cast<std::size_t>(count));
  std::memcpy(c.values.data(), payload, c.values.size() * sizeof(double));
  return c;
}

template <typename T>
T field(const json& j, const char* key, const std::string& path) {
  if (!j.contains(key)) throw FormatError(path + ": header lacks '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad header field '" + key + "': " + e.what());
  }
}

}  // namespace

void save_checkpoint(const FlowModel& model, const std::string& path,
                     const CheckpointInfo& info) {
  const FlowConfig& cfg = model.config();
  json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["chain_name"] = cfg.chain_name;
  header["dof"] = cfg.dof;
  header["width"] = cfg.width;
  header["cond_dim"] = cfg.cond_dim;
  header["num_layers"] = model.num_layers();
  header["hidden"] = cfg.hidden;
  header["s_clamp"] = cfg.s_clamp;
  header["seed"] = cfg.seed;
  header["chain_document"] = info.chain_document;
  header["training"] = info.training;

  json perms = json::array();
  json shapes = json::array();
  std::vector<double> values;
  for (std::size_t k = 0; k < model.num_layers(); ++k) {
    perms.push_back({{"seed", model.permutation(k).seed()},
                     {"map", model.permutation(k).map()}});
    json layer_shapes = json::array();
    for (const auto& l : model.coupling(k).net().layers()) {
      layer_shapes.push_back({l.weight.rows(), l.weight.cols()});
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
        for (Eigen::Index j = 0; j < l.weight.cols(); ++j) values.push_back(l.weight(i, j));
      }
      values.insert(values.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
    shapes.push_back(std::move(layer_shapes));
  }
  header["permutations"] = std::move(perms);
  header["net_shapes"] = std::move(shapes);
  write_container(path, kModelMagic, header, values);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  Container c = read_container(path, kModelMagic, "checkpoint");
  const json& h = c.header;

  FlowConfig cfg;
  cfg.chain_name = field<std::string>(h, "chain_name", path);
  cfg.dof = field<int>(h, "dof", path);
  cfg.width = field<int>(h, "width", path);
  cfg.cond_dim = field<int>(h, "cond_dim", path);
  cfg.num_layers = field<int>(h, "num_layers", path);
  cfg.hidden = field<std::vector<int>>(h, "hidden", path);
  cfg.s_clamp = field<double>(h, "s_clamp", path);
  cfg.seed = field<std::uint64_t>(h, "seed", path);

  LoadedCheckpoint out;
  try {
    out.model = FlowModel(cfg);
  } catch (const Error& e) {
    throw FormatError(path + ": invalid architecture: " + e.what());
  }
  out.info.chain_document = h.value("chain_document", "");
  if (h.contains("training")) {
    out.info.training = h.at("training").get<std::map<std::string, std::string>>();
  }

  const json& perms = h.at("permutations");
  const json& shapes = h.at("net_shapes");
  if (perms.size() != out.model.num_layers() || shapes.size() != out.model.num_layers()) {
    throw FormatError(path + ": layer count mismatch");
  }
  std::size_t pos = 0;
  for (std::size_t k = 0; k < out.model.num_layers(); ++k) {
    out.model.permutation(k) = Permutation::from_map(
        perms[k].at("map").get<std::vector<int>>(), perms[k].at("seed").get<std::uint64_t>());
    if (out.model.permutation(k).size() != cfg.width) {
      throw FormatError(path + ": permutation size mismatch");
    }
    auto& layers = out.model.coupling(k).net().layers();
    if (shapes[k].size() != layers.size()) throw FormatError(path + ": net depth mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& dense = layers[l];
      if (shapes[k][l][0].get<Eigen::Index>() != dense.weight.rows() ||
          shapes[k][l][1].get<Eigen::Index>() != dense.weight.cols()) {
        throw FormatError(path + ": net shape mismatch");
      }
      const auto needed = static_cast<std::size_t>(dense.weight.size() + dense.bias.size());
      if (pos + needed > c.values.size()) throw FormatError(path + ": too few weights");
      for (Eigen::Index i = 0; i < dense.weight.rows(); ++i) {
        for (Eigen::Index j = 0; j < dense.weight.cols(); ++j) dense.weight(i, j) = c.values[pos++];
      }
      for (Eigen::Index i = 0; i < dense.bias.size(); ++i) dense.bias[i] = c.values[pos++];
    }
  }
  if (pos != c.values.size()) throw FormatError(path + ": trailing weights");
  return out;
}

void save_optimizer_state(const TrainState& state, const std::string& path) {
  json header;
  header["kind"] = "adam";
  header["batch_counter"] = state.batch_counter;
  header["adam_steps"] = state.adam_steps;
  header["current_lr"] = state.current_lr;
  header["skipped_steps"] = state.skipped_steps;
  std::vector<std::size_t> sizes;
  std::vector<double> values;
  for (const auto& m : state.first_moment) {
    sizes.push_back(static_cast<std::size_t>(m.size()));
    values.insert(values.end(), m.data(), m.data() + m.size());
  }
  for (const auto& v : state.second_moment) {
    values.insert(values.end(), v.data(), v.data() + v.size());
  }
  header["block_sizes"] = sizes;
  write_container(path, kOptMagic, header, values);
}

TrainState load_optimizer_state(const std::string& path, const FlowModel& model) {
  Container c = read_container(path, kOptMagic, "optimizer state");
  const json& h = c.header;
  TrainState s;
  s.batch_counter = field<std::uint64_t>(h, "batch_counter", path);
  s.adam_steps = field<std::uint64_t>(h, "adam_steps", path);
  s.current_lr = field<double>(h, "current_lr", path);
  s.skipped_steps = field<std::uint64_t>(h, "skipped_steps", path);
  const auto sizes = field<std::vector<std::size_t>>(h, "block_sizes", path);
  const auto blocks = parameter_blocks(model);
  if (sizes.size() != blocks.size()) throw FormatError(path + ": optimizer layout mismatch");
  std::size_t total = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] != blocks[i].size()) throw FormatError(path + ": optimizer block mismatch");
    total += sizes[i];
  }
  if (c.values.size() != 2 * total) throw FormatError(path + ": optimizer payload mismatch");
  std::size_t pos = 0;
  for (auto* moments : {&s.first_moment, &s.second_moment}) {
    for (std::size_t n : sizes) {
      moments->push_back(Eigen::Map<const Eigen::VectorXd>(c.values.data() + pos,
                                                           static_cast<Eigen::Index>(n)));
      pos += n;
    }
  }
  return s;
}

}  // namespace flowik
