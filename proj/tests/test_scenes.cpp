#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "scafusion/dataset.hpp"
#include "scafusion/scenes.hpp"

using namespace scafusion;

namespace {

SceneSpec small_spec(uint64_t seed = 3) {
    SceneSpec s;
    s.seed = seed;
    s.extent = 20;
    s.crater_count = 4;
    s.meteor_count = 3;
    s.platform_count = 2;
    s.camera = default_camera(48, 32);
    s.lidar.rings = 16;
    s.lidar.azimuth_steps = 128;
    return s;
}

}  // namespace

TEST_CASE("generate_scene") {
    SUBCASE("same seed twice gives identical ground truth") {
        auto a = generate_scene(small_spec(7)).gt();
        auto b = generate_scene(small_spec(7)).gt();
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].x == b[i].x);
            CHECK(a[i].y == b[i].y);
            CHECK(a[i].z == b[i].z);
            CHECK(a[i].l == b[i].l);
            CHECK(a[i].yaw == b[i].yaw);
            CHECK(a[i].cls == b[i].cls);
        }
    }
    SUBCASE("meteors are smaller than platforms in every dimension") {
        auto gt = generate_scene(small_spec(11)).gt();
        for (const auto& m : gt) {
            if (m.cls != 0) continue;
            for (const auto& p : gt) {
                if (p.cls != 1) continue;
                CHECK(m.l < p.l);
                CHECK(m.w < p.w);
            }
        }
    }
    SUBCASE("zero counts give a terrain-only scene") {
        auto spec = small_spec(5);
        spec.meteor_count = 0;
        spec.platform_count = 0;
        auto scene = generate_scene(spec);
        CHECK(scene.gt().empty());
        CHECK(scene.bumps.size() == 4);
    }
    SUBCASE("impossible placement names the field to loosen") {
        auto spec = small_spec(5);
        spec.extent = 8;
        spec.platform_count = 40;
        try {
            generate_scene(spec);
            FAIL("expected placement failure");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("platform_count") != std::string::npos);
        }
    }
    SUBCASE("size ordering enforced") {
        auto spec = small_spec(5);
        spec.meteor_size_max = 3.0;
        spec.platform_size_min = 2.0;
        CHECK_THROWS_AS(generate_scene(spec), std::invalid_argument);
    }
}

TEST_CASE("render_lidar") {
    SUBCASE("flat ground ring lands at h/tan(theta)") {
        SceneSpec spec = small_spec(1);
        spec.crater_count = 0;
        spec.meteor_count = 0;
        spec.platform_count = 0;
        spec.lidar.rings = 1;
        spec.lidar.elev_min = -0.3;
        spec.lidar.elev_max = -0.3;
        spec.lidar.azimuth_steps = 32;
        spec.lidar.origin = {0, 0, 1.6};
        auto scene = generate_scene(spec);
        auto pc = render_lidar(scene);
        REQUIRE(pc.size() == 32);
        const double expect = 1.6 / std::tan(0.3);
        for (int64_t i = 0; i < pc.size(); ++i) {
            const float* p = pc.points.data() + 4 * i;
            CHECK(std::hypot(p[0], p[1]) == doctest::Approx(expect).epsilon(1e-4));
            CHECK(p[2] == doctest::Approx(0.0).epsilon(1e-3));
        }
    }
    SUBCASE("upward rays over flat ground produce no points") {
        SceneSpec spec = small_spec(1);
        spec.crater_count = 0;
        spec.meteor_count = 0;
        spec.platform_count = 0;
        spec.lidar.rings = 1;
        spec.lidar.elev_min = 0.2;
        spec.lidar.elev_max = 0.2;
        auto pc = render_lidar(generate_scene(spec));
        CHECK(pc.size() == 0);
    }
    SUBCASE("an object occludes the ground along its rays") {
        SceneSpec spec = small_spec(1);
        spec.crater_count = 0;
        spec.meteor_count = 0;
        spec.platform_count = 0;
        auto scene = generate_scene(spec);
        Box3D block;
        block.x = 5;
        block.y = 0;
        block.z = 1.0;
        block.l = 2;
        block.w = 2;
        block.h = 2;
        block.cls = 1;
        scene.platforms.push_back(block);
        Hit hit;
        // ray straight at the block, slightly downward
        REQUIRE(raycast(scene, {0, 0, 1.6}, {1, 0, -0.05}, 40, hit));
        CHECK(hit.object == 0);
        CHECK(hit.t < 5.0);  // ground hit would be at t = 32
    }
    SUBCASE("every point lies on scene geometry") {
        auto scene = generate_scene(small_spec(9));
        std::vector<int> ids;
        auto pc = render_lidar(scene, &ids);
        REQUIRE(pc.size() > 0);
        REQUIRE(static_cast<size_t>(pc.size()) == ids.size());
        const auto& o = scene.spec.lidar.origin;
        for (int64_t i = 0; i < pc.size(); i += 37) {
            const float* p = pc.points.data() + 4 * i;
            std::array<double, 3> d = {p[0] - o[0], p[1] - o[1], p[2] - o[2]};
            const double dist = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
            Hit hit;
            REQUIRE(raycast(scene, o, d, 2.0, hit));
            CHECK(std::abs(hit.t * dist - dist) < 1e-3);
            CHECK(hit.object == ids[static_cast<size_t>(i)]);
        }
    }
    SUBCASE("points inside a GT box carry that object's identity") {
        auto scene = generate_scene(small_spec(13));
        auto gt = scene.gt();
        std::vector<int> ids;
        auto pc = render_lidar(scene, &ids);
        for (int64_t i = 0; i < pc.size(); ++i) {
            if (ids[static_cast<size_t>(i)] < 0) continue;
            const float* p = pc.points.data() + 4 * i;
            const Box3D& b = gt[static_cast<size_t>(ids[static_cast<size_t>(i)])];
            // transform into the box frame with a small surface tolerance
            const double c = std::cos(b.yaw), s = std::sin(b.yaw);
            const double dx = p[0] - b.x, dy = p[1] - b.y;
            CHECK(std::abs(c * dx + s * dy) <= b.l / 2 + 1e-3);
            CHECK(std::abs(-s * dx + c * dy) <= b.w / 2 + 1e-3);
            CHECK(std::abs(p[2] - b.z) <= b.h / 2 + 1e-3);
        }
    }
}

TEST_CASE("render_camera") {
    SUBCASE("depth nonnegative; positive exactly at surface hits") {
        auto spec = small_spec(17);
        auto scene = generate_scene(spec);
        auto frame = render_camera(scene, spec.camera, spec.light_elevation);
        int hits = 0;
        for (float d : frame.depth) {
            CHECK(d >= 0.f);
            if (d > 0) ++hits;
        }
        CHECK(hits > 0);
        CHECK(hits < frame.width * frame.height);  // some sky above the horizon
    }
    SUBCASE("depth pixels reproject onto scene geometry within 1e-3 m") {
        auto spec = small_spec(17);
        auto scene = generate_scene(spec);
        auto frame = render_camera(scene, spec.camera, spec.light_elevation);
        const auto& cal = spec.camera;
        for (int v = 0; v < frame.height; v += 5) {
            for (int u = 0; u < frame.width; u += 5) {
                const float d = frame.depth[static_cast<size_t>(v * frame.width + u)];
                if (d <= 0) continue;
                const std::array<double, 3> dc = {(u + 0.5 - cal.cx) / cal.fx,
                                                  (v + 0.5 - cal.cy) / cal.fy, 1.0};
                std::array<double, 3> dir;
                for (int i = 0; i < 3; ++i)
                    dir[static_cast<size_t>(i)] =
                        cal.rot[static_cast<size_t>(i)][0] * dc[0] +
                        cal.rot[static_cast<size_t>(i)][1] * dc[1] +
                        cal.rot[static_cast<size_t>(i)][2] * dc[2];
                Hit hit;
                REQUIRE(raycast(scene, cal.trans, dir, 50, hit));
                const double dl = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
                CHECK(std::abs(hit.t - d) * dl < 1e-3);
            }
        }
    }
    SUBCASE("hit points project back to their pixel (pinhole consistency)") {
        auto spec = small_spec(19);
        auto scene = generate_scene(spec);
        auto frame = render_camera(scene, spec.camera, spec.light_elevation);
        const auto& cal = spec.camera;
        for (int v = 3; v < frame.height; v += 7) {
            for (int u = 3; u < frame.width; u += 7) {
                const float d = frame.depth[static_cast<size_t>(v * frame.width + u)];
                if (d <= 0) continue;
                // camera-frame hit point, depth d along the optical axis
                const double xc = (u + 0.5 - cal.cx) / cal.fx * d;
                const double yc = (v + 0.5 - cal.cy) / cal.fy * d;
                CHECK(cal.fx * xc / d + cal.cx == doctest::Approx(u + 0.5).epsilon(1e-9));
                CHECK(cal.fy * yc / d + cal.cy == doctest::Approx(v + 0.5).epsilon(1e-9));
            }
        }
    }
    SUBCASE("lower light elevation darkens the image") {
        auto spec = small_spec(21);
        auto scene = generate_scene(spec);
        auto bright = render_camera(scene, spec.camera, 1.2);
        auto dim = render_camera(scene, spec.camera, 0.25);
        double mb = 0, md = 0;
        for (uint8_t v : bright.rgb) mb += v;
        for (uint8_t v : dim.rgb) md += v;
        CHECK(md < mb);
    }
}

TEST_CASE("dataset_io") {
    namespace fs = std::filesystem;
    const std::string root = (fs::temp_directory_path() / "scafusion_ds_test").string();
    fs::remove_all(root);

    std::vector<SceneSample> samples;
    for (int i = 0; i < 3; ++i) {
        auto spec = small_spec(100 + static_cast<uint64_t>(i));
        spec.lidar.rings = 8;
        spec.lidar.azimuth_steps = 64;
        spec.camera = default_camera(32, 24);
        samples.push_back(make_sample(spec, "tok" + std::to_string(i)));
    }
    std::map<std::string, std::vector<std::string>> splits = {
        {"train", {"tok0", "tok1"}}, {"val", {"tok2"}}};
    write_dataset(root, samples, splits);

    SUBCASE("meta carries the class list") {
        auto meta = read_meta(root);
        REQUIRE(meta.classes.size() == 2);
        CHECK(meta.classes[0] == "Meteor");
        CHECK(meta.classes[1] == "Platform");
        auto sp = read_splits(root);
        CHECK(sp.at("train") == splits.at("train"));
        CHECK(sp.at("val") == splits.at("val"));
    }
    SUBCASE("round trip is bit-exact") {
        for (const auto& s : samples) {
            auto r = read_sample(root, s.token);
            CHECK(r.token == s.token);
            REQUIRE(r.cloud.points.size() == s.cloud.points.size());
            CHECK(std::memcmp(r.cloud.points.data(), s.cloud.points.data(),
                              s.cloud.points.size() * sizeof(float)) == 0);
            REQUIRE(r.frame.depth.size() == s.frame.depth.size());
            CHECK(std::memcmp(r.frame.depth.data(), s.frame.depth.data(),
                              s.frame.depth.size() * sizeof(float)) == 0);
            CHECK(r.frame.rgb == s.frame.rgb);
            REQUIRE(r.boxes.size() == s.boxes.size());
            for (size_t i = 0; i < r.boxes.size(); ++i) {
                CHECK(r.boxes[i].x == s.boxes[i].x);
                CHECK(r.boxes[i].yaw == s.boxes[i].yaw);
                CHECK(r.boxes[i].cls == s.boxes[i].cls);
            }
            CHECK(r.calib.fx == s.calib.fx);
            CHECK(r.calib.rot == s.calib.rot);
        }
    }
    SUBCASE("truncated points.bin names the file") {
        const std::string path = root + "/samples/tok0/points.bin";
        auto size = fs::file_size(path);
        fs::resize_file(path, size / 2);
        try {
            read_sample(root, "tok0");
            FAIL("expected truncation error");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("points.bin") != std::string::npos);
        }
    }
    SUBCASE("version mismatch rejected") {
        const std::string path = root + "/samples/tok1/depth.bin";
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        uint32_t bad = 99;
        f.write(reinterpret_cast<const char*>(&bad), 4);
        f.close();
        CHECK_THROWS_AS(read_sample(root, "tok1"), std::runtime_error);
    }

    fs::remove_all(root);
}
