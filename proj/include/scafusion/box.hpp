#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace scafusion {

struct Box3D {
    double x = 0, y = 0, z = 0;   // center, meters (ego frame)
    double l = 1, w = 1, h = 1;   // size, meters
    double yaw = 0;               // radians about +z
    int cls = 0;
    double score = -1;            // < 0 for ground truth
};

inline const std::vector<std::string>& class_names() {
    static const std::vector<std::string> names = {"Meteor", "Platform"};
    return names;
}

inline constexpr int kNumClasses = 2;

}  // namespace scafusion
