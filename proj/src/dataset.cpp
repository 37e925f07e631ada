#include "scafusion/dataset.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace scafusion {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'F', 'P'};

void put_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f, const std::string& path, const char* field) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(path + ": truncated header (" + field + ")");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

json calib_to_json(const CameraCalib& c) {
    json j;
    j["fx"] = c.fx;
    j["fy"] = c.fy;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    j["width"] = c.width;
    j["height"] = c.height;
    j["rot"] = c.rot;  // camera -> ego, row major
    j["trans"] = c.trans;
    return j;
}

template <class T>
T require(const json& j, const char* field, const std::string& path) {
    if (!j.contains(field))
        throw std::runtime_error(path + ": missing field '" + field + "'");
    try {
        return j.at(field).get<T>();
    } catch (const json::exception&) {
        throw std::runtime_error(path + ": field '" + field + "' has the wrong type");
    }
}

CameraCalib calib_from_json(const json& j, const std::string& path) {
    CameraCalib c;
    c.fx = require<double>(j, "fx", path);
    c.fy = require<double>(j, "fy", path);
    c.cx = require<double>(j, "cx", path);
    c.cy = require<double>(j, "cy", path);
    c.width = require<int>(j, "width", path);
    c.height = require<int>(j, "height", path);
    c.rot = require<std::array<std::array<double, 3>, 3>>(j, "rot", path);
    c.trans = require<std::array<double, 3>>(j, "trans", path);
    return c;
}

void write_ppm(const std::string& path, const CameraFrame& frame) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
    f << "P6\n" << frame.width << " " << frame.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(frame.rgb.data()),
            static_cast<std::streamsize>(frame.rgb.size()));
    if (!f) throw std::runtime_error("write_ppm: short write to " + path);
}

void read_ppm(const std::string& path, CameraFrame& frame) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
        throw std::runtime_error(path + ": not a binary 8-bit P6 image");
    f.get();  // single whitespace after the header
    frame.width = w;
    frame.height = h;
    frame.rgb.resize(static_cast<size_t>(w * h * 3));
    if (!f.read(reinterpret_cast<char*>(frame.rgb.data()),
                static_cast<std::streamsize>(frame.rgb.size())))
        throw std::runtime_error(path + ": truncated pixel payload");
}

}  // namespace

void write_float_matrix(const std::string& path, uint32_t rows, uint32_t cols,
                        const std::vector<float>& data) {
    if (data.size() != static_cast<size_t>(rows) * cols)
        throw std::invalid_argument("write_float_matrix: data length " +
                                    std::to_string(data.size()) + " != " +
                                    std::to_string(rows) + "x" + std::to_string(cols));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_float_matrix: cannot open " + path);
    f.write(kMagic, 4);
    put_u32(f, kDatasetVersion);
    put_u32(f, rows);
    put_u32(f, cols);
    // byte order: this codebase targets little-endian hosts only
    f.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!f) throw std::runtime_error("write_float_matrix: short write to " + path);
}

std::vector<float> read_float_matrix(const std::string& path, uint32_t& rows, uint32_t& cols) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_float_matrix: cannot open " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error(path + ": bad magic, expected SCFP");
    const uint32_t version = get_u32(f, path, "version");
    if (version != kDatasetVersion)
        throw std::runtime_error(path + ": unsupported format version " +
                                 std::to_string(version));
    rows = get_u32(f, path, "rows");
    cols = get_u32(f, path, "cols");
    std::vector<float> data(static_cast<size_t>(rows) * cols);
    if (!f.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(float))))
        throw std::runtime_error(path + ": truncated payload, expected " +
                                 std::to_string(rows) + "x" + std::to_string(cols) +
                                 " floats");
    return data;
}

void write_dataset(const std::string& root, const std::vector<SceneSample>& samples,
                   const std::map<std::string, std::vector<std::string>>& splits) {
    fs::create_directories(fs::path(root) / "samples");

    json meta;
    meta["format_version"] = kDatasetVersion;
    meta["classes"] = class_names();
    meta["units"] = {{"length", "meters"}, {"angle", "radians"}};
    std::ofstream((fs::path(root) / "meta.json").string()) << meta.dump(2) << "\n";

    json sp(splits);
    std::ofstream((fs::path(root) / "splits.json").string()) << sp.dump(2) << "\n";

    for (const auto& s : samples) {
        const fs::path dir = fs::path(root) / "samples" / s.token;
        fs::create_directories(dir);
        write_float_matrix((dir / "points.bin").string(),
                           static_cast<uint32_t>(s.cloud.size()), 4, s.cloud.points);
        write_float_matrix((dir / "depth.bin").string(),
                           static_cast<uint32_t>(s.frame.height),
                           static_cast<uint32_t>(s.frame.width), s.frame.depth);
        write_ppm((dir / "cam_front.ppm").string(), s.frame);

        json anns;
        anns["token"] = s.token;
        anns["calib"] = calib_to_json(s.calib);
        json boxes = json::array();
        for (const auto& b : s.boxes) {
            json jb;
            jb["x"] = b.x;
            jb["y"] = b.y;
            jb["z"] = b.z;
            jb["l"] = b.l;
            jb["w"] = b.w;
            jb["h"] = b.h;
            jb["yaw"] = b.yaw;
            jb["class"] = class_names().at(static_cast<size_t>(b.cls));
            boxes.push_back(jb);
        }
        anns["boxes"] = boxes;
        std::ofstream((dir / "anns.json").string()) << anns.dump(2) << "\n";
    }
}

DatasetMeta read_meta(const std::string& root) {
    const std::string path = (fs::path(root) / "meta.json").string();
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_meta: cannot open " + path);
    json j = json::parse(f, nullptr, true);
    DatasetMeta m;
    m.format_version = require<uint32_t>(j, "format_version", path);
    if (m.format_version != kDatasetVersion)
        throw std::runtime_error(path + ": unsupported format version " +
                                 std::to_string(m.format_version));
    m.classes = require<std::vector<std::string>>(j, "classes", path);
    return m;
}

std::map<std::string, std::vector<std::string>> read_splits(const std::string& root) {
    const std::string path = (fs::path(root) / "splits.json").string();
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_splits: cannot open " + path);
    json j = json::parse(f, nullptr, true);
    return j.get<std::map<std::string, std::vector<std::string>>>();
}

SceneSample read_sample(const std::string& root, const std::string& token) {
    const fs::path dir = fs::path(root) / "samples" / token;
    SceneSample s;
    s.token = token;

    uint32_t rows = 0, cols = 0;
    s.cloud.points = read_float_matrix((dir / "points.bin").string(), rows, cols);
    if (cols != 4)
        throw std::runtime_error((dir / "points.bin").string() + ": expected 4 columns, got " +
                                 std::to_string(cols));

    read_ppm((dir / "cam_front.ppm").string(), s.frame);
    uint32_t dh = 0, dw = 0;
    s.frame.depth = read_float_matrix((dir / "depth.bin").string(), dh, dw);
    if (static_cast<int>(dh) != s.frame.height || static_cast<int>(dw) != s.frame.width)
        throw std::runtime_error((dir / "depth.bin").string() + ": depth size " +
                                 std::to_string(dw) + "x" + std::to_string(dh) +
                                 " does not match the image");

    const std::string apath = (dir / "anns.json").string();
    std::ifstream af(apath);
    if (!af) throw std::runtime_error("read_sample: cannot open " + apath);
    json j = json::parse(af, nullptr, true);
    s.calib = calib_from_json(require<json>(j, "calib", apath), apath);
    for (const auto& jb : require<json>(j, "boxes", apath)) {
        Box3D b;
        b.x = require<double>(jb, "x", apath);
        b.y = require<double>(jb, "y", apath);
        b.z = require<double>(jb, "z", apath);
        b.l = require<double>(jb, "l", apath);
        b.w = require<double>(jb, "w", apath);
        b.h = require<double>(jb, "h", apath);
        b.yaw = require<double>(jb, "yaw", apath);
        const std::string cls = require<std::string>(jb, "class", apath);
        const auto& names = class_names();
        auto it = std::find(names.begin(), names.end(), cls);
        if (it == names.end())
            throw std::runtime_error(apath + ": unknown class '" + cls + "'");
        b.cls = static_cast<int>(it - names.begin());
        s.boxes.push_back(b);
    }
    return s;
}

}  // namespace scafusion
