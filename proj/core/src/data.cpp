#include "atnlab/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "atnlab/container.hpp"
#include "atnlab/error.hpp"
#include "atnlab/rng.hpp"

namespace atnlab {

namespace {

struct Point {
    double x, y;
};

enum class ShapeType { Disc, Square, Triangle, Cross, Star };
enum class Stroke { Filled, Outline, Striped };

constexpr std::array kShapeTypes{ShapeType::Disc, ShapeType::Square, ShapeType::Triangle, ShapeType::Cross,
                                 ShapeType::Star};
constexpr std::array kStrokes{Stroke::Filled, Stroke::Outline, Stroke::Striped};

// Outline in unit coordinates, radius about 1.
std::vector<Point> unit_outline(ShapeType type) {
    std::vector<Point> poly;
    auto ring = [&](int n, double radius, double phase) {
        for (int i = 0; i < n; ++i) {
            const double a = phase + 2.0 * std::numbers::pi * i / n;
            poly.push_back({radius * std::cos(a), radius * std::sin(a)});
        }
    };
    switch (type) {
        case ShapeType::Disc:
            ring(40, 0.95, 0.0);
            break;
        case ShapeType::Square:
            poly = {{-0.8, -0.8}, {0.8, -0.8}, {0.8, 0.8}, {-0.8, 0.8}};
            break;
        case ShapeType::Triangle:
            ring(3, 1.05, -std::numbers::pi / 2);
            break;
        case ShapeType::Cross: {
            const double w = 0.32;
            poly = {{-w, -1}, {w, -1}, {w, -w}, {1, -w}, {1, w}, {w, w},
                    {w, 1},   {-w, 1}, {-w, w}, {-1, w}, {-1, -w}, {-w, -w}};
            break;
        }
        case ShapeType::Star:
            for (int i = 0; i < 10; ++i) {
                const double r = i % 2 == 0 ? 1.05 : 0.45;
                const double a = -std::numbers::pi / 2 + std::numbers::pi * i / 5;
                poly.push_back({r * std::cos(a), r * std::sin(a)});
            }
            break;
    }
    return poly;
}

bool inside(const std::vector<Point>& poly, Point p) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point a = poly[i], b = poly[j];
        if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) {
            in = !in;
        }
    }
    return in;
}

double boundary_distance(const std::vector<Point>& poly, Point p) {
    double best = 1e300;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point a = poly[j], b = poly[i];
        const double dx = b.x - a.x, dy = b.y - a.y;
        const double t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
        best = std::min(best, std::hypot(p.x - a.x - t * dx, p.y - a.y - t * dy));
    }
    return best;
}

void render(float* out, int side, ShapeType type, Stroke stroke, RngStream& rng) {
    const double s = side;
    const double cx = s / 2 + rng.uniform(-0.1, 0.1) * s;
    const double cy = s / 2 + rng.uniform(-0.1, 0.1) * s;
    const double scale = rng.uniform(0.26, 0.36) * s;
    const double angle = rng.uniform(-0.35, 0.35);
    const double background = rng.uniform(80.0, 130.0);
    const double contrast = rng.uniform(60.0, 100.0);
    const double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);
    const double stroke_width = 0.25;  // unit coordinates
    const double stripe_freq = rng.uniform(2.6, 3.4);

    const std::vector<Point> poly = unit_outline(type);
    const double ca = std::cos(angle), sa = std::sin(angle);
    constexpr int kSub = 3;
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            double coverage = 0.0;
            for (int sy = 0; sy < kSub; ++sy) {
                for (int sx = 0; sx < kSub; ++sx) {
                    const double px = x + (sx + 0.5) / kSub - cx;
                    const double py = y + (sy + 0.5) / kSub - cy;
                    // Into unit shape coordinates.
                    const Point u{(ca * px + sa * py) / scale, (-sa * px + ca * py) / scale};
                    if (!inside(poly, u)) {
                        continue;
                    }
                    bool on = true;
                    if (stroke == Stroke::Outline) {
                        on = boundary_distance(poly, u) < stroke_width;
                    } else if (stroke == Stroke::Striped) {
                        on = std::sin(stripe_freq * std::numbers::pi * u.y) > 0.0;
                    }
                    coverage += on ? 1.0 : 0.0;
                }
            }
            coverage /= kSub * kSub;
            const double v = background + gx * (x - s / 2) + gy * (y - s / 2) + contrast * coverage +
                             3.0 * rng.normal();
            out[y * side + x] = static_cast<float>(std::clamp(std::round(v), 0.0, 255.0));
        }
    }
}

std::uint32_t read_be32(std::istream& in, const std::string& origin) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        fail(ErrorCode::TruncatedData, "truncated data in " + origin + ": header ends early");
    }
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

std::ifstream open_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::Io, "cannot open " + path.string());
    }
    return in;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    require(!indices.empty(), ErrorCode::InvalidArgument, "empty dataset subset");
    const std::size_t per = images.numel() / size();
    std::vector<float> data;
    data.reserve(indices.size() * per);
    std::vector<int> sub_labels;
    sub_labels.reserve(indices.size());
    for (std::size_t i : indices) {
        require(i < size(), ErrorCode::InvalidArgument, "subset index out of range");
        auto src = images.data().subspan(i * per, per);
        data.insert(data.end(), src.begin(), src.end());
        sub_labels.push_back(labels[i]);
    }
    Tensor sub(image_shape().prepend(static_cast<std::int64_t>(indices.size())), std::move(data));
    return make_dataset(std::move(sub), std::move(sub_labels), num_classes);
}

std::string dataset_id(const Tensor& images, std::span<const int> labels) {
    std::string bytes(reinterpret_cast<const char*>(images.data().data()), images.numel() * sizeof(float));
    bytes.append(reinterpret_cast<const char*>(labels.data()), labels.size() * sizeof(int));
    return content_hash(bytes.data(), bytes.size());
}

Dataset make_dataset(Tensor images, std::vector<int> labels, int num_classes) {
    require(images.shape().rank() == 4, ErrorCode::ShapeMismatch,
            "dataset images must be [count,C,H,W], got " + images.shape().to_string());
    require(static_cast<std::size_t>(images.shape()[0]) == labels.size(), ErrorCode::CountMismatch,
            "count mismatch: " + std::to_string(images.shape()[0]) + " images vs " +
                std::to_string(labels.size()) + " labels");
    require(num_classes >= 2, ErrorCode::InvalidArgument, "a dataset needs at least two classes");
    for (int label : labels) {
        require(label >= 0 && label < num_classes, ErrorCode::InvalidArgument,
                "label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    for (float v : images.data()) {
        require(v >= 0.0f && v <= 255.0f, ErrorCode::InvalidArgument, "pixel outside [0, 255]");
    }
    Dataset d;
    d.id = dataset_id(images, labels);
    d.images = std::move(images);
    d.labels = std::move(labels);
    d.num_classes = num_classes;
    return d;
}

int synth_max_classes() { return static_cast<int>(kShapeTypes.size() * kStrokes.size()); }

Dataset synth_dataset(std::uint64_t seed, std::size_t count, int num_classes, int side) {
    require(num_classes >= 2 && num_classes <= synth_max_classes(), ErrorCode::InvalidArgument,
            "num_classes must be in [2, " + std::to_string(synth_max_classes()) + "]");
    require(count >= static_cast<std::size_t>(num_classes), ErrorCode::InvalidArgument,
            "count must be at least num_classes");
    require(side >= 16, ErrorCode::InvalidArgument, "side must be at least 16");

    const std::size_t per = static_cast<std::size_t>(side) * side;
    std::vector<float> pixels(count * per);
    std::vector<int> labels(count);
    const RngStream base(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const int label = static_cast<int>(i % static_cast<std::size_t>(num_classes));
        labels[i] = label;
        // Classes run over shape types first, then stroke patterns.
        const ShapeType type = kShapeTypes[label % kShapeTypes.size()];
        const Stroke stroke = kStrokes[label / kShapeTypes.size()];
        RngStream rng = base.fork(i);
        render(pixels.data() + i * per, side, type, stroke, rng);
    }
    Tensor images(Shape{static_cast<std::int64_t>(count), 1, side, side}, std::move(pixels));
    return make_dataset(std::move(images), std::move(labels), num_classes);
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    auto img = open_binary(images_path);
    const std::string img_origin = images_path.string();
    const std::uint32_t img_magic = read_be32(img, img_origin);
    if (img_magic != 0x00000803u) {
        std::ostringstream msg;
        msg << "wrong magic in " << img_origin << ": expected 0x00000803, got 0x" << std::hex << img_magic;
        fail(ErrorCode::WrongMagic, msg.str());
    }
    const std::uint32_t count = read_be32(img, img_origin);
    const std::uint32_t rows = read_be32(img, img_origin);
    const std::uint32_t cols = read_be32(img, img_origin);
    require(count > 0 && rows > 0 && cols > 0, ErrorCode::CorruptHeader,
            "corrupt header in " + img_origin + ": zero extent");

    auto lab = open_binary(labels_path);
    const std::string lab_origin = labels_path.string();
    const std::uint32_t lab_magic = read_be32(lab, lab_origin);
    if (lab_magic != 0x00000801u) {
        std::ostringstream msg;
        msg << "wrong magic in " << lab_origin << ": expected 0x00000801, got 0x" << std::hex << lab_magic;
        fail(ErrorCode::WrongMagic, msg.str());
    }
    const std::uint32_t label_count = read_be32(lab, lab_origin);
    if (label_count != count) {
        fail(ErrorCode::CountMismatch, "count mismatch: " + std::to_string(count) + " images in " + img_origin +
                                           " vs " + std::to_string(label_count) + " labels in " + lab_origin);
    }

    const std::size_t per = static_cast<std::size_t>(rows) * cols;
    std::vector<unsigned char> raw(static_cast<std::size_t>(count) * per);
    if (!img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        fail(ErrorCode::TruncatedData, "truncated data in " + img_origin + ": expected " +
                                           std::to_string(raw.size()) + " pixel bytes");
    }
    std::vector<unsigned char> raw_labels(count);
    if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(count))) {
        fail(ErrorCode::TruncatedData, "truncated data in " + lab_origin + ": expected " +
                                           std::to_string(count) + " label bytes");
    }
    std::vector<float> pixels(raw.begin(), raw.end());
    std::vector<int> labels(raw_labels.begin(), raw_labels.end());
    const int num_classes = std::max(2, *std::max_element(labels.begin(), labels.end()) + 1);
    Tensor images(Shape{static_cast<std::int64_t>(count), 1, static_cast<std::int64_t>(rows),
                        static_cast<std::int64_t>(cols)},
                  std::move(pixels));
    return make_dataset(std::move(images), std::move(labels), num_classes);
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction, std::uint64_t seed) {
    require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::InvalidArgument,
            "train_fraction must be in (0, 1)");
    const std::size_t n = dataset.size();
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    require(n_train >= 1 && n_train < n, ErrorCode::InvalidArgument,
            "split would leave one side empty");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        std::swap(order[i], order[rng.below(i + 1)]);
    }
    std::span<const std::size_t> all(order);
    return {dataset.subset(all.first(n_train)), dataset.subset(all.subspan(n_train))};
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    Container c;
    c.kind = "dataset";
    c.arch = {{"num_classes", std::to_string(dataset.num_classes)}};
    c.metadata = {{"dataset_id", dataset.id}};
    std::vector<float> labels(dataset.labels.begin(), dataset.labels.end());
    const Shape label_shape{static_cast<std::int64_t>(labels.size())};
    c.tensors.emplace_back("images", dataset.images);
    c.tensors.emplace_back("labels", Tensor(label_shape, std::move(labels)));
    save_container(path, c);
}

Dataset load_dataset(const std::filesystem::path& path) {
    const Container c = load_container(path);
    require(c.kind == "dataset", ErrorCode::ArchMismatch,
            "arch mismatch: " + path.string() + " holds a " + c.kind + ", not a dataset");
    const Tensor& label_tensor = c.tensor("labels");
    std::vector<int> labels;
    labels.reserve(label_tensor.numel());
    for (float v : label_tensor.data()) {
        labels.push_back(static_cast<int>(v));
    }
    Dataset d = make_dataset(c.tensor("images"), std::move(labels), std::stoi(c.arch.at("num_classes")));
    require(d.id == c.metadata.at("dataset_id"), ErrorCode::CorruptHeader,
            "corrupt header in " + path.string() + ": dataset_id does not match content");
    return d;
}

}  // namespace atnlab
