#pragma once

// Simplified pillar-based LiDAR branch: bin points into BEV columns,
// decorate, run a small permutation-invariant encoder, scatter to the grid.

#include <map>
#include <vector>

#include "scafusion/param.hpp"
#include "scafusion/view_transform.hpp"

namespace scafusion {

struct PointCloud {
    // x, y, z in meters, intensity in [0,1]
    std::vector<float> points;  // N x 4 row-major

    int64_t size() const { return static_cast<int64_t>(points.size()) / 4; }
    void push(float x, float y, float z, float i) {
        points.insert(points.end(), {x, y, z, i});
    }
};

inline constexpr int kPillarFeatures = 9;

struct PillarSet {
    // per pillar: flat BEV cell index and up to P decorated points
    std::vector<int64_t> cells;
    std::vector<std::vector<std::array<float, kPillarFeatures>>> points;

    int64_t size() const { return static_cast<int64_t>(cells.size()); }
};

// Bin points by (x,y) cell and decorate each kept point with
// (x, y, z, intensity, offsets to pillar mean, offsets to cell center).
// Pillars truncate to the first P points in input order; out-of-range
// points are dropped.
inline PillarSet voxelize(const PointCloud& pc, const BEVGridSpec& grid, int max_points) {
    if (max_points < 1) throw std::invalid_argument("voxelize: max_points must be >= 1");
    grid.validate();
    PillarSet out;
    std::map<int64_t, size_t> pillar_of;  // ordered: deterministic pillar order
    std::vector<std::vector<std::array<float, 4>>> raw;
    for (int64_t i = 0; i < pc.size(); ++i) {
        const float* p = pc.points.data() + 4 * i;
        int64_t cell = grid.cell_of(p[0], p[1], p[2]);
        if (cell == kScatterDrop) continue;
        auto [it, inserted] = pillar_of.try_emplace(cell, raw.size());
        if (inserted) raw.emplace_back();
        auto& bucket = raw[it->second];
        if (static_cast<int>(bucket.size()) < max_points)
            bucket.push_back({p[0], p[1], p[2], p[3]});
    }
    const int64_t W = grid.width();
    for (const auto& [cell, idx] : pillar_of) {
        const auto& bucket = raw[idx];
        double mx = 0, my = 0, mz = 0;
        for (const auto& p : bucket) {
            mx += p[0];
            my += p[1];
            mz += p[2];
        }
        const double inv = 1.0 / static_cast<double>(bucket.size());
        mx *= inv;
        my *= inv;
        mz *= inv;
        const double cx = grid.x_min + (static_cast<double>(cell % W) + 0.5) * grid.cell;
        const double cy = grid.y_min + (static_cast<double>(cell / W) + 0.5) * grid.cell;
        std::vector<std::array<float, kPillarFeatures>> dec;
        for (const auto& p : bucket)
            dec.push_back({p[0], p[1], p[2], p[3],
                           static_cast<float>(p[0] - mx), static_cast<float>(p[1] - my),
                           static_cast<float>(p[2] - mz), static_cast<float>(p[0] - cx),
                           static_cast<float>(p[1] - cy)});
        out.cells.push_back(cell);
        out.points.push_back(std::move(dec));
    }
    return out;
}

template <class T>
void register_pillar_params(ParamStore<T>& store, const std::string& prefix, int c_lidar,
                            Rng& rng) {
    store.add_normal(prefix + "fc.w", {kPillarFeatures, c_lidar}, rng,
                     std::sqrt(2.0 / kPillarFeatures));
    store.add_zeros(prefix + "fc.b", {c_lidar});
}

// Affine + ReLU per point, max over the pillar's points, scatter to cells.
template <class T>
Tensor<T> pillar_encode_scatter(const PillarSet& pillars, const BEVGridSpec& grid,
                                ParamStore<T>& store, const std::string& prefix) {
    const Tensor<T>& w = store.at(prefix + "fc.w").tensor;
    const Tensor<T>& b = store.at(prefix + "fc.b").tensor;
    const int64_t C = w.dim(1);
    const int64_t Hb = grid.height(), Wb = grid.width();
    if (pillars.size() == 0) return Tensor<T>::zeros({C, Hb, Wb});
    // flatten all points, remembering per-pillar extents
    std::vector<T> flat;
    std::vector<int64_t> counts;
    for (const auto& bucket : pillars.points) {
        counts.push_back(static_cast<int64_t>(bucket.size()));
        for (const auto& p : bucket)
            for (float f : p) flat.push_back(static_cast<T>(f));
    }
    const int64_t total = static_cast<int64_t>(counts.size());
    const int64_t rows = static_cast<int64_t>(flat.size()) / kPillarFeatures;
    Tensor<T> pts = Tensor<T>::from({rows, kPillarFeatures}, std::move(flat));
    Tensor<T> feat = relu(linear(pts, w, b));
    // max over each pillar's contiguous slice of rows
    std::vector<Tensor<T>> pooled;
    int64_t row = 0;
    for (int64_t i = 0; i < total; ++i) {
        pooled.push_back(reduce_pool(slice(feat, 0, row, counts[static_cast<size_t>(i)]), {0},
                                     PoolMode::Max));
        row += counts[static_cast<size_t>(i)];
    }
    Tensor<T> per_pillar = pooled.size() == 1 ? pooled[0] : concat(pooled, 0);  // P x C
    return scatter_add(per_pillar, pillars.cells, Hb, Wb);
}

}  // namespace scafusion
