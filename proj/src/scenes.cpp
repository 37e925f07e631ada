#include "scafusion/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scafusion/rng.hpp"

namespace scafusion {

namespace {

constexpr double kPi = 3.14159265358979323846;

// icosahedron topology; vertices are jittered per meteor
const std::array<std::array<int, 3>, 20> kIcoFaces = {{
    {0, 11, 5},  {0, 5, 1},   {0, 1, 7},   {0, 7, 10},  {0, 10, 11},
    {1, 5, 9},   {5, 11, 4},  {11, 10, 2}, {10, 7, 6},  {7, 1, 8},
    {3, 9, 4},   {3, 4, 2},   {3, 2, 6},   {3, 6, 8},   {3, 8, 9},
    {4, 9, 5},   {2, 4, 11},  {6, 2, 10},  {8, 6, 7},   {9, 8, 1},
}};

std::array<std::array<double, 3>, 12> ico_unit_verts() {
    const double p = (1.0 + std::sqrt(5.0)) / 2.0;
    const double s = 1.0 / std::sqrt(1.0 + p * p);
    const double a = s, b = p * s;
    return {{{-a, b, 0}, {a, b, 0},  {-a, -b, 0}, {a, -b, 0},
             {0, -a, b}, {0, a, b},  {0, -a, -b}, {0, a, -b},
             {b, 0, -a}, {b, 0, a},  {-b, 0, -a}, {-b, 0, a}}};
}

double dot3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

std::array<double, 3> cross3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

std::array<double, 3> norm3(std::array<double, 3> v) {
    double n = std::sqrt(dot3(v, v));
    if (n > 0)
        for (auto& c : v) c /= n;
    return v;
}

// Moller-Trumbore; t in units of |dir|.
bool ray_triangle(const std::array<double, 3>& o, const std::array<double, 3>& d,
                  const std::array<double, 3>& v0, const std::array<double, 3>& v1,
                  const std::array<double, 3>& v2, double& t) {
    const std::array<double, 3> e1 = {v1[0] - v0[0], v1[1] - v0[1], v1[2] - v0[2]};
    const std::array<double, 3> e2 = {v2[0] - v0[0], v2[1] - v0[1], v2[2] - v0[2]};
    const auto pvec = cross3(d, e2);
    const double det = dot3(e1, pvec);
    if (std::abs(det) < 1e-14) return false;
    const double inv = 1.0 / det;
    const std::array<double, 3> tvec = {o[0] - v0[0], o[1] - v0[1], o[2] - v0[2]};
    const double u = dot3(tvec, pvec) * inv;
    if (u < 0 || u > 1) return false;
    const auto qvec = cross3(tvec, e1);
    const double v = dot3(d, qvec) * inv;
    if (v < 0 || u + v > 1) return false;
    t = dot3(e2, qvec) * inv;
    return t > 1e-9;
}

// Axis-aligned slab test in the box's yaw frame; reports the hit face normal.
bool ray_obb(const std::array<double, 3>& o, const std::array<double, 3>& d, const Box3D& box,
             double& t_hit, std::array<double, 3>& normal) {
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    // world -> box frame
    const double ox = o[0] - box.x, oy = o[1] - box.y, oz = o[2] - box.z;
    const std::array<double, 3> ob = {c * ox + s * oy, -s * ox + c * oy, oz};
    const std::array<double, 3> db = {c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]};
    const std::array<double, 3> half = {box.l / 2, box.w / 2, box.h / 2};
    double t0 = 1e-9, t1 = 1e30;
    int enter_axis = -1;
    double enter_sign = 0;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(db[a]) < 1e-14) {
            if (std::abs(ob[a]) > half[a]) return false;
            continue;
        }
        double ta = (-half[a] - ob[a]) / db[a];
        double tb = (half[a] - ob[a]) / db[a];
        double sign = -1;
        if (ta > tb) {
            std::swap(ta, tb);
            sign = 1;
        }
        if (ta > t0) {
            t0 = ta;
            enter_axis = a;
            enter_sign = sign;
        }
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    if (enter_axis < 0) return false;  // origin inside the box
    t_hit = t0;
    std::array<double, 3> nb = {0, 0, 0};
    nb[static_cast<size_t>(enter_axis)] = enter_sign;
    normal = {c * nb[0] - s * nb[1], s * nb[0] + c * nb[1], nb[2]};  // box -> world
    return true;
}

}  // namespace

void SceneSpec::validate() const {
    if (extent <= 4) throw std::invalid_argument("SceneSpec: extent must exceed 4 m");
    if (crater_count < 0 || meteor_count < 0 || platform_count < 0)
        throw std::invalid_argument("SceneSpec: object counts must be non-negative");
    if (meteor_count > 0 && platform_count > 0 && meteor_size_max >= platform_size_min)
        throw std::invalid_argument(
            "SceneSpec: meteor_size_max must be below platform_size_min");
    if (lidar.rings < 1) throw std::invalid_argument("SceneSpec: lidar needs at least one ring");
    if (lidar.rings > 1 && lidar.elev_min >= lidar.elev_max)
        throw std::invalid_argument("SceneSpec: lidar elevations must be strictly ordered");
    if (lidar.azimuth_steps < 1 || lidar.max_range <= 0)
        throw std::invalid_argument("SceneSpec: lidar azimuth/range invalid");
    camera.validate();
}

CameraCalib default_camera(int width, int height) {
    CameraCalib c;
    c.width = width;
    c.height = height;
    c.fx = width;
    c.fy = width;
    c.cx = width / 2.0;
    c.cy = height / 2.0;
    // camera x right, y down, z forward; mounted looking along ego +x
    c.rot = {{{0, 0, 1}, {-1, 0, 0}, {0, -1, 0}}};
    c.trans = {0, 0, 1.6};
    return c;
}

double Scene::ground_height(double x, double y) const {
    double h = 0;
    for (const auto& b : bumps) {
        const double dx = x - b.cx, dy = y - b.cy;
        h += b.amp * std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma));
    }
    return h;
}

std::array<double, 3> Scene::ground_normal(double x, double y) const {
    double gx = 0, gy = 0;
    for (const auto& b : bumps) {
        const double dx = x - b.cx, dy = y - b.cy;
        const double e = b.amp * std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma));
        gx += e * -dx / (b.sigma * b.sigma);
        gy += e * -dy / (b.sigma * b.sigma);
    }
    return norm3({-gx, -gy, 1});
}

std::vector<Box3D> Scene::gt() const {
    std::vector<Box3D> out;
    for (const auto& m : meteors) out.push_back(m.box);
    for (const auto& p : platforms) out.push_back(p);
    return out;
}

Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    Scene scene;
    scene.spec = spec;
    const double half = spec.extent / 2;

    Rng terrain_rng = Rng(spec.seed).fork(0x7e44a1);
    for (int i = 0; i < spec.crater_count; ++i) {
        TerrainBump b;
        b.cx = terrain_rng.uniform(-half, half);
        b.cy = terrain_rng.uniform(-half, half);
        double radius = terrain_rng.uniform(spec.crater_radius_min, spec.crater_radius_max);
        b.sigma = radius / 2;
        b.amp = terrain_rng.uniform(-spec.crater_depth_max, spec.crater_depth_max);
        scene.bumps.push_back(b);
    }

    // keep object footprints separated and away from the sensor
    struct Placed {
        double x, y, r;
    };
    std::vector<Placed> placed;
    auto place = [&](Rng& rng, double footprint, const char* field) {
        for (int attempt = 0; attempt < 100; ++attempt) {
            double x = rng.uniform(-half + footprint, half - footprint);
            double y = rng.uniform(-half + footprint, half - footprint);
            if (std::hypot(x, y) < 3.0 + footprint) continue;
            bool clash = false;
            for (const auto& p : placed)
                if (std::hypot(x - p.x, y - p.y) < p.r + footprint + 0.5) clash = true;
            if (clash) continue;
            placed.push_back({x, y, footprint});
            return std::array<double, 2>{x, y};
        }
        throw std::runtime_error(std::string("generate_scene: failed to place an object after "
                                             "100 attempts; reduce ") +
                                 field + " or increase extent");
    };

    Rng meteor_rng = Rng(spec.seed).fork(0x3e7e02);
    const auto unit = ico_unit_verts();
    for (int i = 0; i < spec.meteor_count; ++i) {
        const double size = meteor_rng.uniform(spec.meteor_size_min, spec.meteor_size_max);
        auto xy = place(meteor_rng, size / 2, "meteor_count");
        MeteorModel m;
        double lo[3] = {1e30, 1e30, 1e30}, hi[3] = {-1e30, -1e30, -1e30};
        std::array<std::array<double, 3>, 12> local;
        for (size_t v = 0; v < 12; ++v) {
            const double jitter = meteor_rng.uniform(0.72, 1.28) * size / 2;
            for (int a = 0; a < 3; ++a) {
                local[v][static_cast<size_t>(a)] = unit[v][static_cast<size_t>(a)] * jitter;
                lo[a] = std::min(lo[a], local[v][static_cast<size_t>(a)]);
                hi[a] = std::max(hi[a], local[v][static_cast<size_t>(a)]);
            }
        }
        Scene probe = scene;  // bumps only so far
        const double ground = probe.ground_height(xy[0], xy[1]);
        const double cz = ground - lo[2];  // rest the lowest vertex on the terrain
        for (size_t v = 0; v < 12; ++v)
            m.verts.push_back({local[v][0] + xy[0], local[v][1] + xy[1], local[v][2] + cz});
        m.box.x = xy[0] + (lo[0] + hi[0]) / 2;
        m.box.y = xy[1] + (lo[1] + hi[1]) / 2;
        m.box.z = cz + (lo[2] + hi[2]) / 2;
        m.box.l = hi[0] - lo[0];
        m.box.w = hi[1] - lo[1];
        m.box.h = hi[2] - lo[2];
        m.box.yaw = 0;
        m.box.cls = 0;
        scene.meteors.push_back(std::move(m));
    }

    Rng platform_rng = Rng(spec.seed).fork(0x91a7c3);
    for (int i = 0; i < spec.platform_count; ++i) {
        const double l = platform_rng.uniform(spec.platform_size_min, spec.platform_size_max);
        const double w = platform_rng.uniform(spec.platform_size_min, spec.platform_size_max);
        const double h = platform_rng.uniform(0.8, 1.6);
        auto xy = place(platform_rng, std::hypot(l, w) / 2, "platform_count");
        Box3D b;
        b.x = xy[0];
        b.y = xy[1];
        b.l = l;
        b.w = w;
        b.h = h;
        b.yaw = platform_rng.uniform(-kPi, kPi);
        b.cls = 1;
        b.z = scene.ground_height(b.x, b.y) + h / 2;
        scene.platforms.push_back(b);
    }
    return scene;
}

bool raycast(const Scene& scene, const std::array<double, 3>& origin,
             const std::array<double, 3>& dir, double t_max, Hit& hit) {
    hit = Hit{};
    double best = t_max;
    bool found = false;

    int gt_index = 0;
    for (const auto& m : scene.meteors) {
        std::array<double, 3> centroid = {0, 0, 0};
        for (const auto& v : m.verts)
            for (int a = 0; a < 3; ++a) centroid[static_cast<size_t>(a)] += v[static_cast<size_t>(a)] / 12;
        for (const auto& f : kIcoFaces) {
            double t;
            if (ray_triangle(origin, dir, m.verts[static_cast<size_t>(f[0])],
                             m.verts[static_cast<size_t>(f[1])],
                             m.verts[static_cast<size_t>(f[2])], t) &&
                t < best) {
                best = t;
                found = true;
                auto n = norm3(cross3(
                    {m.verts[static_cast<size_t>(f[1])][0] - m.verts[static_cast<size_t>(f[0])][0],
                     m.verts[static_cast<size_t>(f[1])][1] - m.verts[static_cast<size_t>(f[0])][1],
                     m.verts[static_cast<size_t>(f[1])][2] - m.verts[static_cast<size_t>(f[0])][2]},
                    {m.verts[static_cast<size_t>(f[2])][0] - m.verts[static_cast<size_t>(f[0])][0],
                     m.verts[static_cast<size_t>(f[2])][1] - m.verts[static_cast<size_t>(f[0])][1],
                     m.verts[static_cast<size_t>(f[2])][2] - m.verts[static_cast<size_t>(f[0])][2]}));
                // orient outward
                std::array<double, 3> to_face = {
                    m.verts[static_cast<size_t>(f[0])][0] - centroid[0],
                    m.verts[static_cast<size_t>(f[0])][1] - centroid[1],
                    m.verts[static_cast<size_t>(f[0])][2] - centroid[2]};
                if (dot3(n, to_face) < 0)
                    for (auto& c : n) c = -c;
                hit.object = gt_index;
                hit.normal = n;
            }
        }
        ++gt_index;
    }
    for (const auto& p : scene.platforms) {
        double t;
        std::array<double, 3> n;
        if (ray_obb(origin, dir, p, t, n) && t < best) {
            best = t;
            found = true;
            hit.object = gt_index;
            hit.normal = n;
        }
        ++gt_index;
    }

    // terrain: march for a sign change of (ray height - surface), then bisect
    double bump_top = 0;
    for (const auto& b : scene.bumps) bump_top += std::max(0.0, b.amp);
    const double dir_len = std::sqrt(dot3(dir, dir));
    const double dt = 0.2 / std::max(dir_len, 1e-12);
    auto above = [&](double t) {
        const double x = origin[0] + t * dir[0];
        const double y = origin[1] + t * dir[1];
        const double z = origin[2] + t * dir[2];
        return z - scene.ground_height(x, y);
    };
    double t_prev = 0;
    double f_prev = above(0);
    if (f_prev > 0) {
        for (double t = dt; t <= best; t += dt) {
            const double z = origin[2] + t * dir[2];
            if (dir[2] >= 0 && z > bump_top + 0.01) break;  // climbing away, no terrain ahead
            const double f = above(t);
            if (f <= 0) {
                double lo = t_prev, hi_t = t;
                for (int it = 0; it < 60; ++it) {
                    const double mid = (lo + hi_t) / 2;
                    if (above(mid) > 0)
                        lo = mid;
                    else
                        hi_t = mid;
                }
                const double t_hit = (lo + hi_t) / 2;
                if (t_hit < best) {
                    best = t_hit;
                    found = true;
                    hit.object = kHitTerrain;
                    hit.normal = scene.ground_normal(origin[0] + t_hit * dir[0],
                                                     origin[1] + t_hit * dir[1]);
                }
                break;
            }
            t_prev = t;
            f_prev = f;
        }
    }
    if (!found) return false;
    hit.t = best;
    return true;
}

PointCloud render_lidar(const Scene& scene, std::vector<int>* hit_ids) {
    const LidarRig& rig = scene.spec.lidar;
    Rng noise = Rng(scene.spec.seed).fork(0x11da5);
    PointCloud pc;
    if (hit_ids) hit_ids->clear();
    const int meteor_count = static_cast<int>(scene.meteors.size());
    for (int r = 0; r < rig.rings; ++r) {
        const double frac = rig.rings == 1 ? 0.0
                                           : static_cast<double>(r) / (rig.rings - 1);
        const double elev = rig.elev_min + frac * (rig.elev_max - rig.elev_min);
        for (int a = 0; a < rig.azimuth_steps; ++a) {
            const double az = 2 * kPi * a / rig.azimuth_steps;
            const std::array<double, 3> dir = {std::cos(elev) * std::cos(az),
                                               std::cos(elev) * std::sin(az), std::sin(elev)};
            Hit hit;
            if (!raycast(scene, rig.origin, dir, rig.max_range, hit)) continue;
            double base = 0.2;
            if (hit.object >= 0) base = hit.object < meteor_count ? 0.5 : 0.8;
            const double inten =
                std::clamp(base + noise.uniform(-0.02, 0.02), 0.0, 1.0);
            pc.push(static_cast<float>(rig.origin[0] + hit.t * dir[0]),
                    static_cast<float>(rig.origin[1] + hit.t * dir[1]),
                    static_cast<float>(rig.origin[2] + hit.t * dir[2]),
                    static_cast<float>(inten));
            if (hit_ids) hit_ids->push_back(hit.object);
        }
    }
    return pc;
}

CameraFrame render_camera(const Scene& scene, const CameraCalib& calib, double light_elevation) {
    calib.validate();
    CameraFrame frame;
    frame.width = calib.width;
    frame.height = calib.height;
    frame.rgb.assign(static_cast<size_t>(calib.width * calib.height * 3), 0);
    frame.depth.assign(static_cast<size_t>(calib.width * calib.height), 0.f);
    const std::array<double, 3> light = {std::cos(light_elevation), 0,
                                         std::sin(light_elevation)};
    const int meteor_count = static_cast<int>(scene.meteors.size());
    const double range = scene.spec.lidar.max_range;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 4)
#endif
    for (int v = 0; v < calib.height; ++v) {
        for (int u = 0; u < calib.width; ++u) {
            const std::array<double, 3> dc = {(u + 0.5 - calib.cx) / calib.fx,
                                              (v + 0.5 - calib.cy) / calib.fy, 1.0};
            std::array<double, 3> d;
            for (int i = 0; i < 3; ++i)
                d[static_cast<size_t>(i)] =
                    calib.rot[static_cast<size_t>(i)][0] * dc[0] +
                    calib.rot[static_cast<size_t>(i)][1] * dc[1] +
                    calib.rot[static_cast<size_t>(i)][2] * dc[2];
            Hit hit;
            double rgb[3] = {0.02, 0.02, 0.04};  // sky
            if (raycast(scene, calib.trans, d, range, hit)) {
                // dir has unit camera-z component, so t is the optical depth
                frame.depth[static_cast<size_t>(v * calib.width + u)] =
                    static_cast<float>(hit.t);
                double albedo[3] = {0.45, 0.42, 0.40};  // terrain
                if (hit.object >= 0) {
                    if (hit.object < meteor_count) {
                        albedo[0] = 0.35;
                        albedo[1] = 0.30;
                        albedo[2] = 0.28;
                    } else {
                        albedo[0] = 0.72;
                        albedo[1] = 0.74;
                        albedo[2] = 0.80;
                    }
                }
                const double shade = 0.15 + 0.85 * std::max(0.0, dot3(hit.normal, light));
                for (int c = 0; c < 3; ++c) rgb[c] = albedo[c] * shade;
            }
            for (int c = 0; c < 3; ++c)
                frame.rgb[static_cast<size_t>((v * calib.width + u) * 3 + c)] =
                    static_cast<uint8_t>(std::clamp(rgb[c], 0.0, 1.0) * 255.0 + 0.5);
        }
    }
    return frame;
}

SceneSample make_sample(const SceneSpec& spec, const std::string& token) {
    Scene scene = generate_scene(spec);
    SceneSample s;
    s.token = token;
    s.cloud = render_lidar(scene);
    s.calib = spec.camera;
    s.frame = render_camera(scene, spec.camera, spec.light_elevation);
    s.boxes = scene.gt();
    return s;
}

}  // namespace scafusion
