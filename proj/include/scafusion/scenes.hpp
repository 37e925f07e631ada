#pragma once

// Procedural lunar-style scenes: a smooth heightfield with craters and
// protrusions, scattered meteors and platforms, plus analytic ray-cast
// LiDAR and camera rendering. Everything is a pure function of SceneSpec.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "scafusion/box.hpp"
#include "scafusion/lidar.hpp"
#include "scafusion/view_transform.hpp"

namespace scafusion {

struct LidarRig {
    int rings = 32;
    double elev_min = -0.45;  // radians, lowest ring
    double elev_max = 0.10;
    int azimuth_steps = 256;
    double max_range = 40.0;
    std::array<double, 3> origin = {0, 0, 1.6};
};

struct SceneSpec {
    uint64_t seed = 1;
    double extent = 22.0;  // terrain spans [-extent/2, extent/2] in x and y

    int crater_count = 6;
    double crater_radius_min = 1.0, crater_radius_max = 3.0;
    double crater_depth_max = 0.5;  // bump amplitude bound, both signs

    int meteor_count = 4;
    double meteor_size_min = 0.6, meteor_size_max = 1.4;

    int platform_count = 2;
    double platform_size_min = 2.0, platform_size_max = 3.2;

    LidarRig lidar;
    CameraCalib camera;
    double light_elevation = 0.9;  // radians above the horizon

    void validate() const;
};

// Camera looking along ego +x from 1.6 m up, principal point centered.
CameraCalib default_camera(int width = 64, int height = 64);

struct TerrainBump {
    double cx = 0, cy = 0, sigma = 1, amp = 0;
};

struct MeteorModel {
    Box3D box;                                    // tight bound, yaw 0
    std::vector<std::array<double, 3>> verts;     // 12 jittered icosahedron vertices
};

// hit identity: kHitNone, kHitTerrain, or an index into Scene::gt()
inline constexpr int kHitNone = -2;
inline constexpr int kHitTerrain = -1;

struct Scene {
    SceneSpec spec;
    std::vector<TerrainBump> bumps;
    std::vector<MeteorModel> meteors;
    std::vector<Box3D> platforms;

    double ground_height(double x, double y) const;
    std::array<double, 3> ground_normal(double x, double y) const;
    std::vector<Box3D> gt() const;  // meteors first, then platforms
};

struct Hit {
    double t = -1;
    int object = kHitNone;
    std::array<double, 3> normal = {0, 0, 1};
};

// Nearest intersection of origin + t*dir with terrain and objects, t in
// (0, t_max]. dir need not be unit length; t is in dir units.
bool raycast(const Scene& scene, const std::array<double, 3>& origin,
             const std::array<double, 3>& dir, double t_max, Hit& hit);

Scene generate_scene(const SceneSpec& spec);

// One point per (ring, azimuth) ray that hits within range. hit_ids, when
// given, receives the per-point hit identity for consistency checks.
PointCloud render_lidar(const Scene& scene, std::vector<int>* hit_ids = nullptr);

struct CameraFrame {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb;   // H x W x 3
    std::vector<float> depth;   // H x W, metric along the optical axis, 0 = sky
};

CameraFrame render_camera(const Scene& scene, const CameraCalib& calib, double light_elevation);

struct SceneSample {
    std::string token;
    PointCloud cloud;
    CameraFrame frame;
    CameraCalib calib;
    std::vector<Box3D> boxes;
};

SceneSample make_sample(const SceneSpec& spec, const std::string& token);

}  // namespace scafusion
