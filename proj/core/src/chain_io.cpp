#include "flowik/chain_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bundled_chains.hpp"
#include "flowik/errors.hpp"

namespace flowik {

namespace {

using nlohmann::json;

Eigen::Vector3d read_vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) {
    throw FormatError(what + " must be an array of 3 numbers");
  }
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw FormatError(what + " must contain numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

RigidTransform read_transform(const json& j, const std::string& what) {
  if (!j.is_object()) throw FormatError(what + " must be an object");
  RigidTransform t;
  if (j.contains("translation")) {
    t.translation = read_vec3(j.at("translation"), what + ".translation");
  }
  if (j.contains("rotation_quat")) {
    const json& q = j.at("rotation_quat");
    if (!q.is_array() || q.size() != 4) {
      throw FormatError(what + ".rotation_quat must be [w, x, y, z]");
    }
    for (const auto& c : q) {
      if (!c.is_number()) throw FormatError(what + ".rotation_quat must contain numbers");
    }
    t.rotation = Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(),
                                    q[2].get<double>(), q[3].get<double>());
    if (std::abs(t.rotation.norm() - 1.0) > 1e-9) {
      throw FormatError(what + ".rotation_quat is not a unit quaternion");
    }
  }
  return t;
}

json write_transform(const RigidTransform& t) {
  return {{"translation", {t.translation.x(), t.translation.y(), t.translation.z()}},
          {"rotation_quat",
           {t.rotation.w(), t.rotation.x(), t.rotation.y(), t.rotation.z()}}};
}

Joint read_joint(const json& j, std::size_t index) {
  const std::string where = "joints[" + std::to_string(index) + "]";
  if (!j.is_object()) throw FormatError(where + " must be an object");
  Joint joint;

  const std::string kind = j.value("kind", "");
  if (kind == "revolute") {
    joint.kind = JointKind::revolute;
  } else if (kind == "prismatic") {
    joint.kind = JointKind::prismatic;
  } else {
    throw FormatError(where + ": unknown joint kind '" + kind + "'");
  }

  if (!j.contains("axis")) throw FormatError(where + ": missing axis");
  joint.axis = read_vec3(j.at("axis"), where + ".axis");
  if (std::abs(joint.axis.norm() - 1.0) > 1e-12) {
    throw FormatError(where + ": axis is not unit length");
  }
  if (j.contains("offset")) joint.offset = read_transform(j.at("offset"), where + ".offset");

  if (!j.contains("limits")) throw FormatError(where + ": missing limits");
  const json& lim = j.at("limits");
  if (!lim.is_array() || lim.size() != 2 || !lim[0].is_number() ||
      !lim[1].is_number()) {
    throw FormatError(where + ".limits must be [lower, upper]");
  }
  joint.lower = lim[0].get<double>();
  joint.upper = lim[1].get<double>();
  if (!(joint.lower < joint.upper)) {
    throw FormatError(where + ": lower limit must be below upper limit");
  }
  return joint;
}

}  // namespace

KinematicChain parse_chain(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("chain document is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("chain document must be an object");
  if (!doc.contains("name") || !doc.at("name").is_string()) {
    throw FormatError("chain document needs a string 'name'");
  }
  if (!doc.contains("joints") || !doc.at("joints").is_array()) {
    throw FormatError("chain document needs a 'joints' array");
  }

  std::vector<Joint> joints;
  const json& arr = doc.at("joints");
  for (std::size_t i = 0; i < arr.size(); ++i) joints.push_back(read_joint(arr[i], i));

  TaskSpace task = TaskSpace::spatial;
  const std::string task_name = doc.value("task_space", "spatial");
  if (task_name == "planar_xy") {
    task = TaskSpace::planar_xy;
  } else if (task_name != "spatial") {
    throw FormatError("unknown task_space '" + task_name + "'");
  }

  RigidTransform tip;
  if (doc.contains("tip")) tip = read_transform(doc.at("tip"), "tip");

  return KinematicChain(doc.at("name").get<std::string>(), std::move(joints),
                        tip, task);
}

std::string serialize_chain(const KinematicChain& chain) {
  json doc;
  doc["name"] = chain.name();
  doc["task_space"] =
      chain.task_space() == TaskSpace::planar_xy ? "planar_xy" : "spatial";
  json joints = json::array();
  for (const Joint& j : chain.joints()) {
    joints.push_back(
        {{"kind", j.kind == JointKind::revolute ? "revolute" : "prismatic"},
         {"axis", {j.axis.x(), j.axis.y(), j.axis.z()}},
         {"offset", write_transform(j.offset)},
         {"limits", {j.lower, j.upper}}});
  }
  doc["joints"] = std::move(joints);
  doc["tip"] = write_transform(chain.tip());
  return doc.dump(2);
}

std::vector<std::string> bundled_chain_names() {
  std::vector<std::string> names;
  for (const auto& entry : detail::kBundledChains) names.emplace_back(entry.name);
  return names;
}

std::string bundled_chain_text(std::string_view name) {
  for (const auto& entry : detail::kBundledChains) {
    if (entry.name == name) return std::string(entry.text);
  }
  throw FormatError("no chain file or bundled chain named '" + std::string(name) + "'");
}

KinematicChain load_chain(const std::string& name_or_path) {
  std::error_code ec;
  if (std::filesystem::is_regular_file(name_or_path, ec)) {
    std::ifstream in(name_or_path);
    if (!in) throw FormatError("cannot open chain file " + name_or_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_chain(buf.str());
  }
  return parse_chain(bundled_chain_text(name_or_path));
}

}  // namespace flowik
