#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vtrace/error.hpp"
#include "vtrace/vec3.hpp"

namespace vtrace {

/// Subvolume boundary face.
enum class Face { neg_x, pos_x, neg_y, pos_y, neg_z, pos_z };

inline const char* to_string(Face f) {
  static constexpr const char* names[] = {"-x", "+x", "-y", "+y", "-z", "+z"};
  return names[static_cast<int>(f)];
}

inline Face parse_face(const std::string& s) {
  static constexpr const char* names[] = {"-x", "+x", "-y", "+y", "-z", "+z"};
  for (int f = 0; f < 6; ++f)
    if (s == names[f]) return static_cast<Face>(f);
  throw Error(ErrorCode::malformed_file, "unknown face '" + s + "'");
}

/// Attachment of a branch to a point of another path in the same list.
struct ParentLink {
  int path = 0;
  int point = 0;
  friend bool operator==(const ParentLink&, const ParentLink&) = default;
};

/// Ordered centreline samples (mm) with a radius per sample.
struct CenterlinePath {
  std::vector<Vec3> points;
  std::vector<double> radii;
  std::optional<Face> source_face;
  std::optional<Face> target_face;
  std::optional<ParentLink> parent;

  std::size_t size() const { return points.size(); }

  double length() const {
    double len = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) len += distance(points[i - 1], points[i]);
    return len;
  }
};

inline nlohmann::json to_json(const std::vector<CenterlinePath>& paths) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : paths) {
    nlohmann::json j;
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& q : p.points) pts.push_back(to_array(q));
    j["points"] = std::move(pts);
    j["radii"] = p.radii;
    j["source_face"] = p.source_face ? nlohmann::json(to_string(*p.source_face)) : nlohmann::json();
    j["target_face"] = p.target_face ? nlohmann::json(to_string(*p.target_face)) : nlohmann::json();
    if (p.parent) j["parent"] = {{"path", p.parent->path}, {"point", p.parent->point}};
    arr.push_back(std::move(j));
  }
  return nlohmann::json{{"paths", std::move(arr)}};
}

inline std::vector<CenterlinePath> centerlines_from_json(const nlohmann::json& doc) {
  std::vector<CenterlinePath> out;
  try {
    for (const auto& j : doc.at("paths")) {
      CenterlinePath p;
      for (const auto& q : j.at("points")) p.points.push_back(from_array(q.get<std::array<double, 3>>()));
      p.radii = j.at("radii").get<std::vector<double>>();
      if (p.radii.size() != p.points.size())
        throw Error(ErrorCode::malformed_file, "points/radii length mismatch");
      if (j.contains("source_face") && j["source_face"].is_string())
        p.source_face = parse_face(j["source_face"].get<std::string>());
      if (j.contains("target_face") && j["target_face"].is_string())
        p.target_face = parse_face(j["target_face"].get<std::string>());
      if (j.contains("parent") && j["parent"].is_object())
        p.parent = ParentLink{j["parent"].at("path").get<int>(), j["parent"].at("point").get<int>()};
      out.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_file, std::string("centerline json: ") + e.what());
  }
  return out;
}

inline void save_centerlines(const std::vector<CenterlinePath>& paths, const std::filesystem::path& path,
                             const nlohmann::json& extra = {}) {
  nlohmann::json doc = to_json(paths);
  if (extra.is_object())
    for (auto it = extra.begin(); it != extra.end(); ++it) doc[it.key()] = it.value();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

inline std::vector<CenterlinePath> load_centerlines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "missing file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_file, path.string() + ": " + e.what());
  }
  return centerlines_from_json(doc);
}

}  // namespace vtrace
