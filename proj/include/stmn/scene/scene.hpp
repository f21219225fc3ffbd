#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stmn/errors.hpp"

namespace stmn::scene {

using Vec3 = std::array<double, 3>;

inline constexpr std::size_t kAuxDims = 6;  // RGB in [0,1] + unit normal
inline constexpr int kRoomCategory = 0;
inline constexpr const char* kSceneFormat = "stmn-scene/1";

struct PointCloudScene {
  std::string scene_id;
  std::vector<double> positions;  // n x 3, meters
  std::vector<double> aux;        // n x 6
  std::vector<int> instance_id;   // contiguous from 0; 0 is the room shell
  std::vector<int> category_id;   // 0 is the room shell

  std::size_t size() const { return instance_id.size(); }
  Vec3 position(std::size_t i) const {
    return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]};
  }
  Vec3 color(std::size_t i) const { return {aux[6 * i], aux[6 * i + 1], aux[6 * i + 2]}; }
  Vec3 normal(std::size_t i) const { return {aux[6 * i + 3], aux[6 * i + 4], aux[6 * i + 5]}; }
  int instance_count() const {
    return instance_id.empty() ? 0 : *std::max_element(instance_id.begin(), instance_id.end()) + 1;
  }
};

enum class Solid { box, cylinder };

struct CategorySpec {
  std::string name;
  Solid solid = Solid::box;
  Vec3 size{};  // box: x, y, z extents; cylinder: diameter, diameter, height
};

struct ColorSpec {
  std::string name;
  Vec3 rgb{};
};

struct Relation {
  std::string type;  // "near"
  int instance = 0;
};

struct ObjectRecord {
  int instance = 0;
  int category_id = 0;
  std::string category;
  std::string color;
  Vec3 center{};
  Vec3 size{};
  std::vector<Relation> relations;
};

struct SceneConfig {
  double room_x = 6.0;
  double room_y = 5.0;
  double wall_height = 2.4;
  int min_objects = 3;
  int max_objects = 6;
  std::size_t n_points = 4096;
  double shell_fraction = 0.3;
  std::size_t min_points_per_object = 48;
  double size_jitter = 0.1;
  double color_noise = 0.03;
  double placement_gap = 0.25;
  int max_retries = 500;
  Vec3 shell_rgb{0.6, 0.6, 0.6};
  std::vector<CategorySpec> categories = default_categories();
  std::vector<ColorSpec> colors = default_colors();

  static std::vector<CategorySpec> default_categories() {
    return {{"chair", Solid::box, {0.5, 0.5, 0.9}},    {"table", Solid::box, {1.4, 0.8, 0.75}},
            {"cabinet", Solid::box, {0.6, 0.5, 1.7}},  {"lamp", Solid::cylinder, {0.3, 0.3, 1.5}},
            {"bin", Solid::cylinder, {0.4, 0.4, 0.5}}, {"sofa", Solid::box, {1.8, 0.8, 0.8}}};
  }
  static std::vector<ColorSpec> default_colors() {
    return {{"red", {0.85, 0.15, 0.15}},   {"green", {0.2, 0.7, 0.25}},
            {"blue", {0.2, 0.3, 0.85}},    {"yellow", {0.9, 0.85, 0.2}},
            {"purple", {0.55, 0.25, 0.7}}, {"orange", {0.95, 0.55, 0.15}}};
  }

  // Category name for an id; id 0 is the room shell.
  std::string category_name(int id) const {
    return id == kRoomCategory ? "room" : categories.at(static_cast<std::size_t>(id - 1)).name;
  }
};

struct GeneratedScene {
  PointCloudScene scene;
  std::vector<ObjectRecord> objects;
};

namespace detail {

struct Surface {
  Vec3 origin;
  Vec3 u, v;  // spanning edges (rectangles) or unused
  Vec3 normal;
  double area = 0.0;
  bool lateral_cylinder = false;
  Vec3 axis_base{};
  double radius = 0.0, height = 0.0;
  bool disk = false;
};

inline Surface rect(Vec3 origin, Vec3 u, Vec3 v, Vec3 normal) {
  Surface s;
  s.origin = origin;
  s.u = u;
  s.v = v;
  s.normal = normal;
  auto len = [](const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); };
  s.area = len(u) * len(v);
  return s;
}

inline std::vector<Surface> box_surfaces(const Vec3& c, const Vec3& sz) {
  const double x0 = c[0] - sz[0] / 2, x1 = c[0] + sz[0] / 2;
  const double y0 = c[1] - sz[1] / 2, y1 = c[1] + sz[1] / 2;
  const double h = sz[2];
  return {rect({x0, y0, h}, {sz[0], 0, 0}, {0, sz[1], 0}, {0, 0, 1}),
          rect({x0, y0, 0}, {sz[0], 0, 0}, {0, 0, h}, {0, -1, 0}),
          rect({x0, y1, 0}, {sz[0], 0, 0}, {0, 0, h}, {0, 1, 0}),
          rect({x0, y0, 0}, {0, sz[1], 0}, {0, 0, h}, {-1, 0, 0}),
          rect({x1, y0, 0}, {0, sz[1], 0}, {0, 0, h}, {1, 0, 0})};
}

inline std::vector<Surface> cylinder_surfaces(const Vec3& c, double radius, double height) {
  Surface side;
  side.lateral_cylinder = true;
  side.axis_base = {c[0], c[1], 0};
  side.radius = radius;
  side.height = height;
  side.area = 2 * std::numbers::pi * radius * height;
  Surface top;
  top.disk = true;
  top.axis_base = {c[0], c[1], height};
  top.radius = radius;
  top.normal = {0, 0, 1};
  top.area = std::numbers::pi * radius * radius;
  return {side, top};
}

inline void sample_surface(const Surface& s, std::mt19937_64& rng, Vec3& p, Vec3& n) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (s.lateral_cylinder) {
    const double theta = 2 * std::numbers::pi * unit(rng);
    const double z = s.height * unit(rng);
    n = {std::cos(theta), std::sin(theta), 0.0};
    p = {s.axis_base[0] + s.radius * n[0], s.axis_base[1] + s.radius * n[1], z};
  } else if (s.disk) {
    const double theta = 2 * std::numbers::pi * unit(rng);
    const double r = s.radius * std::sqrt(unit(rng));
    p = {s.axis_base[0] + r * std::cos(theta), s.axis_base[1] + r * std::sin(theta), s.axis_base[2]};
    n = s.normal;
  } else {
    const double a = unit(rng), b = unit(rng);
    for (int k = 0; k < 3; ++k) p[k] = s.origin[k] + a * s.u[k] + b * s.v[k];
    n = s.normal;
  }
}

// Splits `total` points over surfaces proportionally to area, remainder to the
// largest fractional parts (lower index first on ties).
inline std::vector<std::size_t> allocate(const std::vector<double>& weights, std::size_t total) {
  double sum = 0;
  for (double w : weights) sum += w;
  std::vector<std::size_t> out(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = total * weights[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    used += out[i];
    frac.push_back({exact - out[i], i});
  }
  std::stable_sort(frac.begin(), frac.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; used < total; ++r, ++used) ++out[frac[r % frac.size()].second];
  return out;
}

inline double round_to(double v, double q) { return std::round(v / q) * q; }

}  // namespace detail

// Room shell plus axis-aligned boxes and cylinders resting on the floor.
// Deterministic per (config, seed); samples exactly config.n_points points.
inline GeneratedScene generate_scene(const SceneConfig& config, std::uint64_t seed,
                                     const std::string& scene_id = "scene") {
  if (config.categories.empty() || config.colors.empty()) {
    throw GenerationError("scene generator needs at least one category and one color");
  }
  if (config.min_objects < 1 || config.max_objects < config.min_objects) {
    throw GenerationError("invalid object count range");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count_dist(config.min_objects, config.max_objects);
  const int n_objects = count_dist(rng);
  if (static_cast<std::size_t>(n_objects) > config.categories.size() * config.colors.size()) {
    throw GenerationError("more objects requested than distinct (color, category) pairs");
  }
  const std::size_t object_budget =
      config.n_points - static_cast<std::size_t>(std::llround(config.shell_fraction * config.n_points));
  if (object_budget < config.min_points_per_object * static_cast<std::size_t>(n_objects)) {
    throw GenerationError("point budget too small for " + std::to_string(n_objects) + " objects");
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ObjectRecord> objects;
  std::vector<std::array<double, 4>> footprints;  // x0, y0, x1, y1
  for (int o = 0; o < n_objects; ++o) {
    ObjectRecord rec;
    rec.instance = o + 1;
    bool placed = false;
    for (int attempt = 0; attempt < config.max_retries && !placed; ++attempt) {
      const auto cat = static_cast<std::size_t>(unit(rng) * config.categories.size()) %
                       config.categories.size();
      const auto col =
          static_cast<std::size_t>(unit(rng) * config.colors.size()) % config.colors.size();
      const auto& spec = config.categories[cat];
      bool duplicate = false;
      for (const auto& other : objects)
        duplicate = duplicate || (other.category == spec.name && other.color == config.colors[col].name);
      if (duplicate) continue;
      Vec3 size = spec.size;
      const double jitter = 1.0 + config.size_jitter * (2 * unit(rng) - 1);
      for (auto& s : size) s *= jitter;
      if (spec.solid == Solid::box && unit(rng) < 0.5) std::swap(size[0], size[1]);
      const double margin = 0.1;
      const double span_x = config.room_x - size[0] - 2 * margin;
      const double span_y = config.room_y - size[1] - 2 * margin;
      if (span_x <= 0 || span_y <= 0) continue;
      const double cx = margin + size[0] / 2 + span_x * unit(rng);
      const double cy = margin + size[1] / 2 + span_y * unit(rng);
      std::array<double, 4> fp{cx - size[0] / 2, cy - size[1] / 2, cx + size[0] / 2, cy + size[1] / 2};
      bool overlap = false;
      for (const auto& f : footprints) {
        const double g = config.placement_gap;
        overlap = overlap || !(fp[2] + g < f[0] || f[2] + g < fp[0] || fp[3] + g < f[1] || f[3] + g < fp[1]);
      }
      if (overlap) continue;
      rec.category_id = static_cast<int>(cat) + 1;
      rec.category = spec.name;
      rec.color = config.colors[col].name;
      rec.center = {cx, cy, size[2] / 2};
      rec.size = size;
      footprints.push_back(fp);
      placed = true;
    }
    if (!placed) {
      throw GenerationError("could not place object " + std::to_string(o + 1) + " after " +
                            std::to_string(config.max_retries) + " attempts");
    }
    objects.push_back(std::move(rec));
  }

  for (auto& rec : objects) {
    double best = std::numeric_limits<double>::infinity();
    int nearest = -1;
    for (const auto& other : objects) {
      if (other.instance == rec.instance) continue;
      const double d = std::hypot(other.center[0] - rec.center[0], other.center[1] - rec.center[1]);
      if (d < best) {
        best = d;
        nearest = other.instance;
      }
    }
    if (nearest >= 0) rec.relations.push_back({"near", nearest});
  }

  // Per-instance surfaces and point budgets.
  std::vector<std::vector<detail::Surface>> surfaces(objects.size() + 1);
  const double rx = config.room_x, ry = config.room_y, h = config.wall_height;
  surfaces[0] = {detail::rect({0, 0, 0}, {rx, 0, 0}, {0, ry, 0}, {0, 0, 1}),
                 detail::rect({0, 0, 0}, {rx, 0, 0}, {0, 0, h}, {0, 1, 0}),
                 detail::rect({0, ry, 0}, {rx, 0, 0}, {0, 0, h}, {0, -1, 0}),
                 detail::rect({0, 0, 0}, {0, ry, 0}, {0, 0, h}, {1, 0, 0}),
                 detail::rect({rx, 0, 0}, {0, ry, 0}, {0, 0, h}, {-1, 0, 0})};
  std::vector<double> object_area;
  for (std::size_t o = 0; o < objects.size(); ++o) {
    const auto& rec = objects[o];
    const auto& spec = config.categories[static_cast<std::size_t>(rec.category_id - 1)];
    surfaces[o + 1] = spec.solid == Solid::box
                          ? detail::box_surfaces(rec.center, rec.size)
                          : detail::cylinder_surfaces(rec.center, rec.size[0] / 2, rec.size[2]);
    double a = 0;
    for (const auto& s : surfaces[o + 1]) a += s.area;
    object_area.push_back(a);
  }
  std::vector<std::size_t> budget(objects.size() + 1);
  budget[0] = config.n_points - object_budget;
  const std::size_t spare = object_budget - config.min_points_per_object * objects.size();
  auto extra = detail::allocate(object_area, spare);
  for (std::size_t o = 0; o < objects.size(); ++o) budget[o + 1] = config.min_points_per_object + extra[o];

  GeneratedScene out;
  auto& sc = out.scene;
  sc.scene_id = scene_id;
  sc.positions.reserve(3 * config.n_points);
  sc.aux.reserve(kAuxDims * config.n_points);
  std::normal_distribution<double> noise(0.0, config.color_noise);
  for (std::size_t inst = 0; inst < surfaces.size(); ++inst) {
    std::vector<double> areas;
    for (const auto& s : surfaces[inst]) areas.push_back(s.area);
    auto per_surface = detail::allocate(areas, budget[inst]);
    Vec3 base = config.shell_rgb;
    if (inst > 0) {
      for (const auto& c : config.colors)
        if (c.name == objects[inst - 1].color) base = c.rgb;
    }
    for (std::size_t si = 0; si < surfaces[inst].size(); ++si) {
      for (std::size_t k = 0; k < per_surface[si]; ++k) {
        Vec3 p{}, n{};
        detail::sample_surface(surfaces[inst][si], rng, p, n);
        for (double v : p) sc.positions.push_back(detail::round_to(v, 1e-5));
        for (int c = 0; c < 3; ++c)
          sc.aux.push_back(detail::round_to(std::clamp(base[c] + noise(rng), 0.0, 1.0), 1e-4));
        for (double v : n) sc.aux.push_back(v);
        sc.instance_id.push_back(static_cast<int>(inst));
        sc.category_id.push_back(inst == 0 ? kRoomCategory : objects[inst - 1].category_id);
      }
    }
  }
  out.objects = std::move(objects);
  return out;
}

// Throws ValidationError when a scene breaks its structural invariants.
inline void validate_scene(const PointCloudScene& s) {
  const std::size_t n = s.size();
  if (n == 0) throw ValidationError("scene " + s.scene_id + " has no points");
  if (s.positions.size() != 3 * n || s.aux.size() != kAuxDims * n || s.category_id.size() != n) {
    throw ValidationError("scene " + s.scene_id + ": array lengths disagree with n_points");
  }
  std::vector<char> seen(static_cast<std::size_t>(s.instance_count()), 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (s.instance_id[i] < 0) throw ValidationError("negative instance id");
    seen[static_cast<std::size_t>(s.instance_id[i])] = 1;
    auto nm = s.normal(i);
    const double len = std::sqrt(nm[0] * nm[0] + nm[1] * nm[1] + nm[2] * nm[2]);
    if (std::fabs(len - 1.0) > 1e-6) {
      throw ValidationError("scene " + s.scene_id + ": normal of point " + std::to_string(i) +
                            " is not unit length");
    }
  }
  for (char c : seen)
    if (!c) throw ValidationError("scene " + s.scene_id + ": instance ids are not contiguous");
}

inline nlohmann::json to_json(const GeneratedScene& g) {
  const auto& s = g.scene;
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : g.objects) {
    nlohmann::json rel = nlohmann::json::array();
    for (const auto& r : o.relations) rel.push_back({{"type", r.type}, {"instance", r.instance}});
    objs.push_back({{"instance", o.instance},
                    {"category", o.category},
                    {"category_id", o.category_id},
                    {"color", o.color},
                    {"center", o.center},
                    {"size", o.size},
                    {"relations", rel}});
  }
  return {{"format", kSceneFormat},     {"scene_id", s.scene_id},       {"n_points", s.size()},
          {"positions", s.positions},   {"aux", s.aux},                 {"instance_id", s.instance_id},
          {"category_id", s.category_id}, {"objects", objs}};
}

inline GeneratedScene scene_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != kSceneFormat) {
      throw ValidationError("unsupported scene format '" + j.value("format", "") + "'");
    }
    GeneratedScene g;
    auto& s = g.scene;
    s.scene_id = j.at("scene_id").get<std::string>();
    s.positions = j.at("positions").get<std::vector<double>>();
    s.aux = j.at("aux").get<std::vector<double>>();
    s.instance_id = j.at("instance_id").get<std::vector<int>>();
    s.category_id = j.at("category_id").get<std::vector<int>>();
    if (j.at("n_points").get<std::size_t>() != s.size()) {
      throw ValidationError("n_points disagrees with instance_id length");
    }
    for (const auto& o : j.at("objects")) {
      ObjectRecord r;
      r.instance = o.at("instance").get<int>();
      r.category = o.at("category").get<std::string>();
      r.category_id = o.value("category_id", 0);
      r.color = o.at("color").get<std::string>();
      if (o.contains("center")) r.center = o.at("center").get<Vec3>();
      if (o.contains("size")) r.size = o.at("size").get<Vec3>();
      for (const auto& rel : o.at("relations"))
        r.relations.push_back({rel.at("type").get<std::string>(), rel.at("instance").get<int>()});
      g.objects.push_back(std::move(r));
    }
    validate_scene(s);
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed scene JSON: ") + e.what());
  }
}

inline void write_scene(const std::string& path, const GeneratedScene& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write scene file " + path);
  out << to_json(g).dump() << '\n';
}

inline GeneratedScene read_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file " + path);
  try {
    return scene_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace stmn::scene
