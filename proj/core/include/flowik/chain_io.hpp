#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "flowik/kinematics.hpp"

namespace flowik {

/// Parses a chain document (JSON):
///
///   { "name": "...",
///     "task_space": "spatial" | "planar_xy",            (optional)
///     "joints": [ { "kind": "revolute" | "prismatic",
///                   "axis": [x, y, z],
///                   "offset": { "translation": [x, y, z],
///                               "rotation_quat": [w, x, y, z] },
///                   "limits": [lower, upper] }, ... ],
///     "tip": { "translation": [...], "rotation_quat": [...] } }  (optional)
///
/// Axes are checked, not normalized. Throws FormatError.
KinematicChain parse_chain(std::string_view text);

/// Inverse of parse_chain; round-trips exactly.
std::string serialize_chain(const KinematicChain& chain);

/// Names of the chains compiled into the library.
std::vector<std::string> bundled_chain_names();

/// Document text of a bundled chain. Throws FormatError for unknown names.
std::string bundled_chain_text(std::string_view name);

/// Loads `name_or_path` as a file if one exists at that path, otherwise as a
/// bundled chain name.
KinematicChain load_chain(const std::string& name_or_path);

}  // namespace flowik
