#include "rigsfm/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace rigsfm {
namespace {

using Json = nlohmann::ordered_json;

std::int64_t RequireId(const Json& node, const char* key, const char* where) {
  if (!node.contains(key) || !node[key].is_number_integer() ||
      node[key].get<std::int64_t>() < 0) {
    throw std::runtime_error(std::string("view graph JSON: ") + where +
                             " needs non-negative integer '" + key + "'");
  }
  return node[key].get<std::int64_t>();
}

double RequireNumber(const Json& node, const char* key, const char* where) {
  if (!node.contains(key) || !node[key].is_number()) {
    throw std::runtime_error(std::string("view graph JSON: ") + where +
                             " needs number '" + key + "'");
  }
  return node[key].get<double>();
}

Json QuaternionJson(const Rotation& r) {
  const Eigen::Quaterniond& q = r.Quaternion();
  return Json::array({q.w(), q.x(), q.y(), q.z()});
}

Rotation QuaternionFromJson(const Json& arr, const char* where) {
  if (!arr.is_array() || arr.size() != 4) {
    throw std::runtime_error(std::string("view graph JSON: ") + where +
                             " quaternion must be [w,x,y,z]");
  }
  return Rotation::FromQuaternion(Eigen::Quaterniond(
      arr[0].get<double>(), arr[1].get<double>(), arr[2].get<double>(),
      arr[3].get<double>()));
}

std::string FormatDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ViewGraph ParseViewGraphJson(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& err) {
    throw std::runtime_error(std::string("view graph JSON: ") + err.what());
  }
  if (!doc.is_object()) {
    throw std::runtime_error("view graph JSON: top level must be an object");
  }
  for (const char* key : {"images", "intrinsics", "edges", "tracks"}) {
    if (!doc.contains(key) || !doc[key].is_array()) {
      throw std::runtime_error(std::string("view graph JSON: missing array '") +
                               key + "'");
    }
  }

  ViewGraph graph;
  for (const Json& node : doc["images"]) {
    ImageNode image;
    image.image_id = RequireId(node, "image_id", "images[]");
    image.unit_id = RequireId(node, "unit_id", "images[]");
    image.slot_id = RequireId(node, "slot_id", "images[]");
    image.intrinsics_id = RequireId(node, "intrinsics_id", "images[]");
    graph.images.push_back(image);
  }
  for (const Json& node : doc["intrinsics"]) {
    const IntrinsicsId id = RequireId(node, "intrinsics_id", "intrinsics[]");
    Intrinsics intr;
    intr.focal = RequireNumber(node, "focal", "intrinsics[]");
    intr.principal_point = {RequireNumber(node, "cx", "intrinsics[]"),
                            RequireNumber(node, "cy", "intrinsics[]")};
    intr.image_size = {RequireNumber(node, "width", "intrinsics[]"),
                       RequireNumber(node, "height", "intrinsics[]")};
    if (!graph.intrinsics.emplace(id, intr).second) {
      throw std::runtime_error("view graph JSON: duplicate intrinsics_id " +
                               std::to_string(id));
    }
  }
  std::set<std::pair<ImageId, ImageId>> seen_pairs;
  for (const Json& node : doc["edges"]) {
    RelativePoseEdge edge;
    edge.i = RequireId(node, "i", "edges[]");
    edge.j = RequireId(node, "j", "edges[]");
    edge.num_inliers = RequireId(node, "inliers", "edges[]");
    if (!node.contains("q") || !node.contains("t")) {
      throw std::runtime_error("view graph JSON: edge needs 'q' and 't'");
    }
    edge.rotation_ij = QuaternionFromJson(node["q"], "edges[]");
    const Json& t = node["t"];
    if (!t.is_array() || t.size() != 3) {
      throw std::runtime_error("view graph JSON: edge 't' must be [x,y,z]");
    }
    edge.translation_ij = {t[0].get<double>(), t[1].get<double>(),
                           t[2].get<double>()};
    if (!seen_pairs.insert(std::minmax(edge.i, edge.j)).second) {
      throw std::runtime_error("view graph JSON: duplicate edge for image pair (" +
                               std::to_string(edge.i) + "," +
                               std::to_string(edge.j) + ")");
    }
    graph.edges.push_back(edge);
  }
  for (const Json& node : doc["tracks"]) {
    Track track;
    track.point_id = RequireId(node, "point_id", "tracks[]");
    if (!node.contains("obs") || !node["obs"].is_array()) {
      throw std::runtime_error("view graph JSON: track needs array 'obs'");
    }
    for (const Json& o : node["obs"]) {
      TrackObservation obs;
      obs.image_id = RequireId(o, "image_id", "tracks[].obs[]");
      if (o.contains("bx") || o.contains("by") || o.contains("bz")) {
        obs.bearing = Eigen::Vector3d(RequireNumber(o, "bx", "obs[]"),
                                      RequireNumber(o, "by", "obs[]"),
                                      RequireNumber(o, "bz", "obs[]"));
      }
      if (o.contains("px") || o.contains("py")) {
        obs.pixel = Eigen::Vector2d(RequireNumber(o, "px", "obs[]"),
                                    RequireNumber(o, "py", "obs[]"));
      }
      if (!obs.pixel && !obs.bearing) {
        throw std::runtime_error(
            "view graph JSON: observation needs px/py or bx/by/bz");
      }
      track.observations.push_back(obs);
    }
    graph.tracks.push_back(std::move(track));
  }
  return graph;
}

std::string SerializeViewGraphJson(const ViewGraph& graph) {
  Json doc;

  std::vector<ImageNode> images = graph.images;
  std::sort(images.begin(), images.end(),
            [](const ImageNode& a, const ImageNode& b) {
              return a.image_id < b.image_id;
            });
  doc["images"] = Json::array();
  for (const ImageNode& node : images) {
    doc["images"].push_back({{"image_id", node.image_id},
                             {"unit_id", node.unit_id},
                             {"slot_id", node.slot_id},
                             {"intrinsics_id", node.intrinsics_id}});
  }

  doc["intrinsics"] = Json::array();
  for (const auto& [id, intr] : graph.intrinsics) {
    doc["intrinsics"].push_back({{"intrinsics_id", id},
                                 {"focal", intr.focal},
                                 {"cx", intr.principal_point.x()},
                                 {"cy", intr.principal_point.y()},
                                 {"width", intr.image_size.x()},
                                 {"height", intr.image_size.y()}});
  }

  std::vector<RelativePoseEdge> edges = graph.edges;
  std::sort(edges.begin(), edges.end(),
            [](const RelativePoseEdge& a, const RelativePoseEdge& b) {
              return std::tie(a.i, a.j) < std::tie(b.i, b.j);
            });
  doc["edges"] = Json::array();
  for (const RelativePoseEdge& edge : edges) {
    doc["edges"].push_back(
        {{"i", edge.i},
         {"j", edge.j},
         {"q", QuaternionJson(edge.rotation_ij)},
         {"t", Json::array({edge.translation_ij.x(), edge.translation_ij.y(),
                            edge.translation_ij.z()})},
         {"inliers", edge.num_inliers}});
  }

  std::vector<Track> tracks = graph.tracks;
  std::sort(tracks.begin(), tracks.end(), [](const Track& a, const Track& b) {
    return a.point_id < b.point_id;
  });
  doc["tracks"] = Json::array();
  for (Track& track : tracks) {
    std::sort(track.observations.begin(), track.observations.end(),
              [](const TrackObservation& a, const TrackObservation& b) {
                return a.image_id < b.image_id;
              });
    Json obs_array = Json::array();
    for (const TrackObservation& obs : track.observations) {
      Json o{{"image_id", obs.image_id}};
      if (obs.bearing) {
        o["bx"] = obs.bearing->x();
        o["by"] = obs.bearing->y();
        o["bz"] = obs.bearing->z();
      } else {
        o["px"] = obs.pixel->x();
        o["py"] = obs.pixel->y();
      }
      obs_array.push_back(std::move(o));
    }
    doc["tracks"].push_back(
        {{"point_id", track.point_id}, {"obs", std::move(obs_array)}});
  }

  return doc.dump(2) + "\n";
}

ViewGraph LoadViewGraph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open view graph file " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return ParseViewGraphJson(buffer.str());
}

void SaveViewGraph(const ViewGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write view graph file " + path.string());
  }
  out << SerializeViewGraphJson(graph);
}

void WritePoseFile(const std::filesystem::path& path,
                   const std::map<std::int64_t, PoseRecord>& poses) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write pose file " + path.string());
  }
  for (const auto& [id, pose] : poses) {
    const Eigen::Quaterniond& q = pose.rotation.Quaternion();
    out << id << ' ' << FormatDouble(q.w()) << ' ' << FormatDouble(q.x()) << ' '
        << FormatDouble(q.y()) << ' ' << FormatDouble(q.z()) << ' '
        << FormatDouble(pose.position.x()) << ' '
        << FormatDouble(pose.position.y()) << ' '
        << FormatDouble(pose.position.z()) << '\n';
  }
}

std::map<std::int64_t, PoseRecord> ReadPoseFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open pose file " + path.string());
  }
  std::map<std::int64_t, PoseRecord> poses;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::int64_t id;
    double qw, qx, qy, qz, x, y, z;
    if (!(row >> id >> qw >> qx >> qy >> qz >> x >> y >> z)) {
      throw std::runtime_error("malformed pose line in " + path.string() + ": " +
                               line);
    }
    PoseRecord pose;
    pose.rotation = Rotation::FromQuaternion(Eigen::Quaterniond(qw, qx, qy, qz));
    pose.position = {x, y, z};
    poses[id] = pose;
  }
  return poses;
}

void WritePointsFile(const std::filesystem::path& path,
                     const std::map<PointId, Eigen::Vector3d>& points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write points file " + path.string());
  }
  for (const auto& [id, p] : points) {
    out << id << ' ' << FormatDouble(p.x()) << ' ' << FormatDouble(p.y()) << ' '
        << FormatDouble(p.z()) << '\n';
  }
}

std::map<PointId, Eigen::Vector3d> ReadPointsFile(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open points file " + path.string());
  }
  std::map<PointId, Eigen::Vector3d> points;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::int64_t id;
    double x, y, z;
    if (!(row >> id >> x >> y >> z)) {
      throw std::runtime_error("malformed point line in " + path.string() + ": " +
                               line);
    }
    points[id] = {x, y, z};
  }
  return points;
}

std::map<std::int64_t, PoseRecord> ImagePoses(const ReconstructionState& state,
                                              const std::vector<ImageNode>& images) {
  std::map<std::int64_t, PoseRecord> poses;
  for (const ImageNode& node : images) {
    poses[node.image_id] = {state.CameraRotation(node), state.CameraCenter(node)};
  }
  return poses;
}

std::map<std::int64_t, PoseRecord> UnitPoses(const ReconstructionState& state) {
  std::map<std::int64_t, PoseRecord> poses;
  for (const auto& [unit, rotation] : state.unit_rotation) {
    poses[unit] = {rotation, state.unit_position.at(unit)};
  }
  return poses;
}

std::map<std::int64_t, PoseRecord> RigPoses(const RigCalibration& rig) {
  std::map<std::int64_t, PoseRecord> poses;
  for (const auto& [slot, rotation] : rig.rotation) {
    poses[slot] = {rotation, rig.translation.at(slot)};
  }
  return poses;
}

}  // namespace rigsfm
