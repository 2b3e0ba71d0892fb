#pragma once

// Point cloud text I/O, ground-plane blocking, fixed-size sampling, input
// feature construction, translation augmentation and synthetic scenes.
//
// Point file format: one point per line, whitespace separated
//     x y z [r g b] label [prediction]
// '#' starts a comment. The last column is always read as the label, so a
// file written by `predict` loads with its predictions as ground truth.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "error.hpp"
#include "matrix.hpp"

namespace nbrseg {

using Vec3 = std::array<double, 3>;

struct PointCloud {
    Matrix<double> positions; // N×3, meters
    Matrix<double> colors;    // N×3 in [0,1], or empty
    std::vector<int> labels;
    std::string scene_id;

    std::size_t size() const { return positions.rows(); }
    bool has_colors() const { return !colors.empty(); }

    std::pair<Vec3, Vec3> bounds() const {
        Vec3 lo{0, 0, 0}, hi{0, 0, 0};
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t a = 0; a < 3; ++a) {
                const double v = positions(i, a);
                if (i == 0 || v < lo[a]) lo[a] = v;
                if (i == 0 || v > hi[a]) hi[a] = v;
            }
        return {lo, hi};
    }

    void validate(std::size_t num_classes) const {
        detail::require(labels.size() == size(), "point cloud: label count mismatch");
        detail::require(positions.cols() == 3, "point cloud: positions must be N×3");
        detail::require(positions.all_finite(), "point cloud: non-finite position");
        if (has_colors()) {
            detail::require(colors.rows() == size() && colors.cols() == 3, "point cloud: colors must be N×3");
            for (double c : colors.data())
                detail::require(c >= 0 && c <= 1, "point cloud: color outside [0,1]");
        }
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] < 0 || std::size_t(labels[i]) >= num_classes)
                throw ValidationError("point cloud " + scene_id + ": label " + std::to_string(labels[i]) +
                                      " at point " + std::to_string(i) + " outside [0, " +
                                      std::to_string(num_classes) + ")");
    }
};

// ---------------------------------------------------------------------------
// Text I/O
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <class V>
bool parse_number(std::string_view s, V& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline std::string_view strip_comment(std::string_view line) {
    auto hash = line.find('#');
    return hash == std::string_view::npos ? line : line.substr(0, hash);
}

} // namespace detail

/// Parses the point text format. Colors are rescaled from [0,255] to [0,1]
/// when any color value exceeds 1.
inline PointCloud parse_point_cloud(std::istream& in, std::size_t num_classes, std::string scene_id = {}) {
    std::vector<double> pos, col;
    std::vector<int> labels;
    std::size_t width = 0, line_no = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        auto fields = detail::split_ws(detail::strip_comment(line));
        if (fields.empty()) continue;
        auto fail = [&](const std::string& why) {
            return ParseError(scene_id + ":" + std::to_string(line_no) + ": " + why);
        };
        const std::size_t w = fields.size();
        if (w != 4 && w != 5 && w != 7 && w != 8)
            throw fail("expected 4, 5, 7 or 8 columns, got " + std::to_string(w));
        if (width == 0) width = w;
        if (w != width) throw fail("column count changed from " + std::to_string(width) + " to " + std::to_string(w));
        const std::size_t ncoord = w >= 7 ? 6 : 3;
        for (std::size_t c = 0; c < ncoord; ++c) {
            double v;
            if (!detail::parse_number(fields[c], v)) throw fail("bad number '" + std::string(fields[c]) + "'");
            (c < 3 ? pos : col).push_back(v);
        }
        int label;
        if (!detail::parse_number(fields.back(), label)) throw fail("bad label '" + std::string(fields.back()) + "'");
        labels.push_back(label);
    }
    if (labels.empty()) throw ValidationError("empty point cloud" + (scene_id.empty() ? "" : ": " + scene_id));
    PointCloud pc;
    pc.scene_id = std::move(scene_id);
    const std::size_t n = labels.size();
    pc.positions = Matrix<double>(n, 3, std::move(pos));
    if (!col.empty()) {
        if (*std::max_element(col.begin(), col.end()) > 1.0)
            for (auto& c : col) c /= 255.0;
        pc.colors = Matrix<double>(n, 3, std::move(col));
    }
    pc.labels = std::move(labels);
    pc.validate(num_classes);
    return pc;
}

inline PointCloud load_point_cloud(const std::filesystem::path& path, std::size_t num_classes) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open point cloud: " + path.string());
    return parse_point_cloud(in, num_classes, path.filename().string());
}

/// Writes the point text format using shortest round-trip number formatting,
/// optionally appending a prediction column.
inline void write_point_cloud(std::ostream& out, const PointCloud& pc, const std::vector<int>* predictions = nullptr) {
    detail::require(!predictions || predictions->size() == pc.size(), "write_point_cloud: prediction count mismatch");
    std::string line;
    for (std::size_t i = 0; i < pc.size(); ++i) {
        line.clear();
        for (std::size_t a = 0; a < 3; ++a) line += detail::format_double(pc.positions(i, a)) + ' ';
        if (pc.has_colors())
            for (std::size_t a = 0; a < 3; ++a) line += detail::format_double(pc.colors(i, a)) + ' ';
        line += std::to_string(pc.labels[i]);
        if (predictions) line += ' ' + std::to_string((*predictions)[i]);
        line += '\n';
        out << line;
    }
}

inline void save_point_cloud(const std::filesystem::path& path, const PointCloud& pc,
                             const std::vector<int>* predictions = nullptr) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write point cloud: " + path.string());
    write_point_cloud(out, pc, predictions);
    if (!out) throw ValidationError("write failed: " + path.string());
}

/// A directory loads every `*.txt` file in name order; a file loads alone.
inline std::vector<PointCloud> load_dataset(const std::filesystem::path& path, std::size_t num_classes) {
    namespace fs = std::filesystem;
    std::vector<PointCloud> out;
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(path))
            if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out.push_back(load_point_cloud(f, num_classes));
        if (out.empty()) throw ValidationError("no .txt point files in " + path.string());
    } else {
        out.push_back(load_point_cloud(path, num_classes));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

struct Block {
    std::vector<std::size_t> point_indices;
    Vec3 bbox_min{};
    Vec3 bbox_max{};
    double block_size = 0;
};

/// Tiles the ground plane (x, y) with block_size squares whose origins step by
/// `stride` from the cloud's minimum corner. Block k along an axis covers
/// [min + k·stride, min + k·stride + block_size); every point also belongs to
/// the block ⌊(p − min)/stride⌋, so the union covers the cloud. Empty blocks
/// are omitted; blocks are ordered by (x cell, y cell).
inline std::vector<Block> split_into_blocks(const PointCloud& cloud, double block_size, double stride) {
    detail::require(block_size > 0, "block_size must be > 0");
    detail::require(stride > 0, "stride must be > 0");
    detail::require(stride <= block_size, "stride must not exceed block_size");
    if (cloud.size() == 0) return {};
    const auto [lo, hi] = cloud.bounds();
    std::map<std::pair<long, long>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double x = cloud.positions(i, 0) - lo[0], y = cloud.positions(i, 1) - lo[1];
        const long kx = long(std::floor(x / stride)), ky = long(std::floor(y / stride));
        for (long ax = kx; ax >= 0 && (ax == kx || double(ax) * stride + block_size > x); --ax)
            for (long ay = ky; ay >= 0 && (ay == ky || double(ay) * stride + block_size > y); --ay)
                cells[{ax, ay}].push_back(i);
    }
    std::vector<Block> out;
    out.reserve(cells.size());
    for (auto& [key, idx] : cells) {
        Block b;
        std::sort(idx.begin(), idx.end());
        b.point_indices = std::move(idx);
        b.block_size = block_size;
        b.bbox_min = {lo[0] + double(key.first) * stride, lo[1] + double(key.second) * stride, lo[2]};
        b.bbox_max = {b.bbox_min[0] + block_size, b.bbox_min[1] + block_size, hi[2]};
        out.push_back(std::move(b));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling and features
// ---------------------------------------------------------------------------

enum class FeatureMode { xyz, xyzrgb, full9d };

inline std::size_t feature_dim(FeatureMode m) {
    switch (m) {
    case FeatureMode::xyz: return 3;
    case FeatureMode::xyzrgb: return 6;
    case FeatureMode::full9d: return 9;
    }
    return 0;
}

struct SampledBlock {
    Matrix<double> features;        // N×D once computed
    std::vector<int> labels;
    Matrix<double> world_positions; // N×3
    Matrix<double> colors;          // N×3 or empty
    std::vector<std::size_t> source_indices;

    std::size_t size() const { return labels.size(); }
};

/// Draws exactly n rows. A block with at least n points is sampled without
/// replacement; a smaller block contributes every point once and the
/// remainder is drawn with replacement.
template <class Rng>
SampledBlock sample_block(const PointCloud& cloud, const Block& block, std::size_t n, Rng& rng) {
    const auto& idx = block.point_indices;
    if (idx.empty()) throw ValidationError("sample_block: empty block");
    detail::require(n > 0, "sample_block: n_points must be > 0");
    std::vector<std::size_t> pick(idx);
    const std::size_t take = std::min(n, pick.size());
    for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, pick.size() - 1);
        std::swap(pick[i], pick[d(rng)]);
    }
    pick.resize(take);
    std::uniform_int_distribution<std::size_t> any(0, idx.size() - 1);
    while (pick.size() < n) pick.push_back(idx[any(rng)]);

    SampledBlock s;
    s.source_indices = std::move(pick);
    s.world_positions = Matrix<double>(n, 3);
    if (cloud.has_colors()) s.colors = Matrix<double>(n, 3);
    s.labels.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t src = s.source_indices[r];
        for (std::size_t a = 0; a < 3; ++a) {
            s.world_positions(r, a) = cloud.positions(src, a);
            if (cloud.has_colors()) s.colors(r, a) = cloud.colors(src, a);
        }
        s.labels[r] = cloud.labels[src];
    }
    return s;
}

/// Builds [x y z], [x y z r g b] or [x y z r g b x' y' z'] rows where the primed
/// coordinates are positions normalised to the room box (0.5 on a
/// zero-extent axis).
inline Matrix<double> compute_input_features(const SampledBlock& s, const Vec3& room_min, const Vec3& room_max,
                                             FeatureMode mode) {
    const std::size_t n = s.size(), d = feature_dim(mode);
    if (mode != FeatureMode::xyz && s.colors.empty())
        throw ValidationError("feature mode needs colors but the point cloud has none");
    Matrix<double> f(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t a = 0; a < 3; ++a) {
            const double p = s.world_positions(r, a);
            f(r, a) = p;
            if (d >= 6) f(r, 3 + a) = s.colors(r, a);
            if (d == 9) {
                const double extent = room_max[a] - room_min[a];
                f(r, 6 + a) = extent > 0 ? std::clamp((p - room_min[a]) / extent, 0.0, 1.0) : 0.5;
            }
        }
    }
    return f;
}

/// Adds one ground-plane offset drawn from U[−max_offset, max_offset]² to the
/// raw position columns; z, colors and normalised coordinates are untouched.
template <class Rng>
SampledBlock augment_translate(SampledBlock s, Rng& rng, double max_offset) {
    detail::require(max_offset >= 0, "augment_translate: max_offset must be >= 0");
    if (max_offset == 0) return s;
    std::uniform_real_distribution<double> u(-max_offset, max_offset);
    const double dx = u(rng), dy = u(rng);
    for (std::size_t r = 0; r < s.features.rows(); ++r) {
        s.features(r, 0) += dx;
        s.features(r, 1) += dy;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

struct ScenePrimitive {
    enum class Kind { plane, box };
    Kind kind = Kind::plane;
    int class_id = 0;
    Vec3 min{};
    Vec3 max{};
    double density = 100; // points per m² of surface
    Vec3 color{0.5, 0.5, 0.5};
};

struct SceneSpec {
    std::vector<ScenePrimitive> primitives;
    std::uint64_t seed = 0;
    std::string scene_id = "synthetic";

    void validate() const {
        detail::require(!primitives.empty(), "scene spec: at least one primitive required");
        for (const auto& p : primitives) {
            detail::require(p.density > 0, "scene spec: density must be positive");
            detail::require(p.class_id >= 0, "scene spec: class id must be >= 0");
            int flat = 0;
            for (std::size_t a = 0; a < 3; ++a) {
                detail::require(p.max[a] >= p.min[a], "scene spec: max below min");
                flat += p.max[a] == p.min[a];
            }
            if (p.kind == ScenePrimitive::Kind::plane)
                detail::require(flat == 1, "scene spec: a plane needs exactly one zero-extent axis");
            else
                detail::require(flat == 0, "scene spec: a box needs positive extent on every axis");
            for (double c : p.color) detail::require(c >= 0 && c <= 1, "scene spec: color outside [0,1]");
        }
    }
};

/// Line-based spec:
///     seed = 7
///     plane class=0 min=0,0,0 max=2,2,0 density=100 color=0.6,0.6,0.6
///     box   class=1 min=0.5,0.5,0 max=1,1,0.8 density=300
inline SceneSpec parse_scene_spec(std::istream& in) {
    SceneSpec spec;
    std::string line;
    std::size_t line_no = 0;
    auto vec3 = [&](std::string_view s, Vec3& out) {
        std::size_t a = 0, start = 0;
        for (std::size_t i = 0; i <= s.size(); ++i) {
            if (i == s.size() || s[i] == ',') {
                if (a >= 3 || !detail::parse_number(s.substr(start, i - start), out[a]))
                    throw ParseError("scene spec line " + std::to_string(line_no) + ": bad vector '" +
                                     std::string(s) + "'");
                ++a;
                start = i + 1;
            }
        }
        if (a != 3) throw ParseError("scene spec line " + std::to_string(line_no) + ": expected 3 components");
    };
    while (std::getline(in, line)) {
        ++line_no;
        auto fields = detail::split_ws(detail::strip_comment(line));
        if (fields.empty()) continue;
        auto fail = [&](const std::string& why) {
            return ParseError("scene spec line " + std::to_string(line_no) + ": " + why);
        };
        if (fields[0] == "plane" || fields[0] == "box") {
            ScenePrimitive p;
            p.kind = fields[0] == "plane" ? ScenePrimitive::Kind::plane : ScenePrimitive::Kind::box;
            for (std::size_t i = 1; i < fields.size(); ++i) {
                auto eq = fields[i].find('=');
                if (eq == std::string_view::npos) throw fail("expected key=value, got '" + std::string(fields[i]) + "'");
                auto key = fields[i].substr(0, eq), val = fields[i].substr(eq + 1);
                if (key == "class") {
                    if (!detail::parse_number(val, p.class_id)) throw fail("bad class");
                } else if (key == "density") {
                    if (!detail::parse_number(val, p.density)) throw fail("bad density");
                } else if (key == "min") {
                    vec3(val, p.min);
                } else if (key == "max") {
                    vec3(val, p.max);
                } else if (key == "color") {
                    vec3(val, p.color);
                } else {
                    throw fail("unknown key '" + std::string(key) + "'");
                }
            }
            spec.primitives.push_back(p);
        } else if (fields.size() == 3 && fields[1] == "=") {
            if (fields[0] == "seed") {
                if (!detail::parse_number(fields[2], spec.seed)) throw fail("bad seed");
            } else if (fields[0] == "scene_id") {
                spec.scene_id = std::string(fields[2]);
            } else {
                throw fail("unknown setting '" + std::string(fields[0]) + "'");
            }
        } else {
            throw fail("unrecognised line");
        }
    }
    spec.validate();
    return spec;
}

inline SceneSpec load_scene_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scene spec: " + path.string());
    return parse_scene_spec(in);
}

/// Samples round(area · density) points uniformly on each primitive's surface.
inline PointCloud generate_synthetic_scene(const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::vector<double> pos, col;
    std::vector<int> labels;
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // A face is an axis-aligned rectangle with `fixed` axis held at `at`.
    struct Face {
        std::size_t fixed;
        double at;
        Vec3 lo, hi;
        double area;
    };
    auto rect = [](const Vec3& lo, const Vec3& hi, std::size_t fixed, double at) {
        double area = 1;
        for (std::size_t a = 0; a < 3; ++a)
            if (a != fixed) area *= hi[a] - lo[a];
        return Face{fixed, at, lo, hi, area};
    };

    for (const auto& p : spec.primitives) {
        std::vector<Face> faces;
        if (p.kind == ScenePrimitive::Kind::plane) {
            std::size_t fixed = 0;
            for (std::size_t a = 0; a < 3; ++a)
                if (p.max[a] == p.min[a]) fixed = a;
            faces.push_back(rect(p.min, p.max, fixed, p.min[fixed]));
        } else {
            for (std::size_t a = 0; a < 3; ++a) {
                faces.push_back(rect(p.min, p.max, a, p.min[a]));
                faces.push_back(rect(p.min, p.max, a, p.max[a]));
            }
        }
        double area = 0;
        for (const auto& f : faces) area += f.area;
        const auto count = std::size_t(std::llround(area * p.density));
        std::vector<double> weights;
        for (const auto& f : faces) weights.push_back(f.area);
        std::discrete_distribution<std::size_t> face_pick(weights.begin(), weights.end());
        for (std::size_t i = 0; i < count; ++i) {
            const Face& f = faces[faces.size() == 1 ? 0 : face_pick(rng)];
            for (std::size_t a = 0; a < 3; ++a)
                pos.push_back(a == f.fixed ? f.at : f.lo[a] + unit(rng) * (f.hi[a] - f.lo[a]));
            col.insert(col.end(), p.color.begin(), p.color.end());
            labels.push_back(p.class_id);
        }
    }
    PointCloud pc;
    pc.scene_id = spec.scene_id;
    const std::size_t n = labels.size();
    pc.positions = Matrix<double>(n, 3, std::move(pos));
    pc.colors = Matrix<double>(n, 3, std::move(col));
    pc.labels = std::move(labels);
    return pc;
}

} // namespace nbrseg
