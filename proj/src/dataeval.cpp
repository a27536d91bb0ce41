#include "grc/dataeval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "grc/rng.hpp"

namespace grc {

namespace {

using Color = std::array<double, 3>;

constexpr Color kBackground{0.35, 0.35, 0.35};
constexpr Color kSquare{0.90, 0.80, 0.10};
constexpr std::array<Color, 2> kMarker{{{0.90, 0.10, 0.10}, {0.10, 0.20, 0.90}}};
constexpr double kNoise = 0.08;

int wrap(int v, int n) {
    const int r = v % n;
    return r < 0 ? r + n : r;
}

}  // namespace

std::pair<int, int> ContextLayout::placement(int k) const {
    switch (k) {
        case 0: return {shift_h, 0};
        case 1: return {0, shift_w};
        case 2: return {shift_h, shift_w};
        default: throw std::out_of_range("marker placement index");
    }
}

ContextLayout context_layout(int height, int width) {
    if (height < 32 || width < 32) throw std::invalid_argument("context dataset needs H, W >= 32");
    const int sh = height / 8, sw = width / 8;
    return {height / 2 - sh / 2, width / 2 - sw / 2, sh, sw, height / 2, width / 2};
}

Sample gen_context_sample(std::uint64_t sample_seed, int height, int width) {
    const ContextLayout layout = context_layout(height, width);
    CounterRng rng(sample_seed);
    const int cls = static_cast<int>(rng.below(2));  // 0 -> class 1, 1 -> class 2
    const auto [dy, dx] = layout.placement(static_cast<int>(rng.below(ContextLayout::kPlacements)));

    Sample s{Tensor4({1, 3, height, width}), LabelMap(1, height, width, 0), sample_seed};
    std::vector<const Color*> paint(static_cast<std::size_t>(height) * width, &kBackground);
    for (int y = 0; y < layout.square_h; ++y) {
        for (int x = 0; x < layout.square_w; ++x) {
            const int sy = layout.square_top + y, sx = layout.square_left + x;
            paint[static_cast<std::size_t>(sy) * width + sx] = &kSquare;
            s.mask.at(0, sy, sx) = static_cast<std::uint8_t>(1 + cls);
            paint[static_cast<std::size_t>(wrap(sy + dy, height)) * width + wrap(sx + dx, width)] = &kMarker[cls];
        }
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const Color& col = *paint[static_cast<std::size_t>(y) * width + x];
            for (int c = 0; c < 3; ++c) {
                const double v = col[c] + rng.uniform(-kNoise, kNoise);
                s.image.at(0, c, y, x) = static_cast<Real>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return s;
}

std::vector<Sample> gen_context_dataset(std::uint64_t seed, int n_samples, int height, int width) {
    context_layout(height, width);
    std::vector<Sample> out;
    out.reserve(n_samples);
    for (int i = 0; i < n_samples; ++i) {
        out.push_back(gen_context_sample(derive_key(seed, static_cast<std::uint64_t>(i)), height, width));
    }
    return out;
}

AugmentParams draw_augment(std::uint64_t seed) {
    CounterRng rng(seed);
    AugmentParams p;
    p.flip = rng.bernoulli(0.5);
    p.scale = rng.uniform(0.5, 2.0);
    p.crop_y = rng.uniform();
    p.crop_x = rng.uniform();
    return p;
}

Sample flip_horizontal(const Sample& s) {
    Sample out = s;
    const int H = s.image.h(), W = s.image.w();
    for (int c = 0; c < s.image.c(); ++c) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) out.image.at(0, c, y, x) = s.image.at(0, c, y, W - 1 - x);
        }
    }
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) out.mask.at(0, y, x) = s.mask.at(0, y, W - 1 - x);
    }
    return out;
}

namespace {

// align_corners=false bilinear resize in either direction.
Tensor4 resize_bilinear(const Tensor4& t, int out_h, int out_w) {
    auto taps = [](int in, int out) {
        std::vector<std::tuple<int, int, double>> v(out);
        const double ratio = static_cast<double>(in) / out;
        for (int i = 0; i < out; ++i) {
            const double src = std::max((i + 0.5) * ratio - 0.5, 0.0);
            const int lo = std::min(static_cast<int>(src), in - 1);
            v[i] = {lo, std::min(lo + 1, in - 1), src - lo};
        }
        return v;
    };
    const auto ty = taps(t.h(), out_h), tx = taps(t.w(), out_w);
    Tensor4 out({t.n(), t.c(), out_h, out_w});
    for (int b = 0; b < t.n(); ++b) {
        for (int c = 0; c < t.c(); ++c) {
            for (int y = 0; y < out_h; ++y) {
                const auto [y0, y1, fy] = ty[y];
                for (int x = 0; x < out_w; ++x) {
                    const auto [x0, x1, fx] = tx[x];
                    const double top = t.at(b, c, y0, x0) * (1 - fx) + t.at(b, c, y0, x1) * fx;
                    const double bot = t.at(b, c, y1, x0) * (1 - fx) + t.at(b, c, y1, x1) * fx;
                    out.at(b, c, y, x) = static_cast<Real>(top * (1 - fy) + bot * fy);
                }
            }
        }
    }
    return out;
}

LabelMap resize_nearest(const LabelMap& m, int out_h, int out_w) {
    LabelMap out(m.n, out_h, out_w);
    for (int b = 0; b < m.n; ++b) {
        for (int y = 0; y < out_h; ++y) {
            const int sy = std::min(static_cast<int>(static_cast<long long>(y) * m.h / out_h), m.h - 1);
            for (int x = 0; x < out_w; ++x) {
                const int sx = std::min(static_cast<int>(static_cast<long long>(x) * m.w / out_w), m.w - 1);
                out.at(b, y, x) = m.at(b, sy, sx);
            }
        }
    }
    return out;
}

int crop_origin(int size, int crop, double frac) {
    if (size <= crop) return 0;
    return std::min(static_cast<int>(frac * (size - crop + 1)), size - crop);
}

}  // namespace

Sample apply_augment(const Sample& s, const AugmentParams& p, int crop_h, int crop_w) {
    Sample src = p.flip ? flip_horizontal(s) : s;
    const int H = s.image.h(), W = s.image.w();
    const int new_h = std::max(1, static_cast<int>(std::lround(H * p.scale)));
    const int new_w = std::max(1, static_cast<int>(std::lround(W * p.scale)));
    Tensor4 image = (new_h == H && new_w == W) ? src.image : resize_bilinear(src.image, new_h, new_w);
    LabelMap mask = (new_h == H && new_w == W) ? src.mask : resize_nearest(src.mask, new_h, new_w);

    const int oy = crop_origin(new_h, crop_h, p.crop_y);
    const int ox = crop_origin(new_w, crop_w, p.crop_x);
    Sample out{Tensor4({1, image.c(), crop_h, crop_w}), LabelMap(1, crop_h, crop_w, kIgnoreLabel), s.seed};
    for (int y = 0; y < crop_h; ++y) {
        const int sy = oy + y;
        if (sy >= new_h) break;
        for (int x = 0; x < crop_w; ++x) {
            const int sx = ox + x;
            if (sx >= new_w) break;
            for (int c = 0; c < image.c(); ++c) out.image.at(0, c, y, x) = image.at(0, c, sy, sx);
            out.mask.at(0, y, x) = mask.at(0, sy, sx);
        }
    }
    return out;
}

Sample augment(const Sample& s, std::uint64_t seed, int crop_h, int crop_w) {
    return apply_augment(s, draw_augment(seed), crop_h, crop_w);
}

std::pair<Tensor4, LabelMap> make_batch(const std::vector<Sample>& samples) {
    if (samples.empty()) throw std::invalid_argument("empty batch");
    std::vector<Tensor4> images;
    images.reserve(samples.size());
    const Sample& first = samples.front();
    LabelMap labels(static_cast<int>(samples.size()), first.mask.h, first.mask.w);
    labels.data.clear();
    for (const Sample& s : samples) {
        images.push_back(s.image);
        if (s.mask.h != first.mask.h || s.mask.w != first.mask.w) {
            throw std::invalid_argument("batch samples differ in size");
        }
        labels.data.insert(labels.data.end(), s.mask.data.begin(), s.mask.data.end());
    }
    return {concat_batch(images), std::move(labels)};
}

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
    if (num_classes < 1) throw std::invalid_argument("confusion matrix needs >= 1 class");
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
}

std::uint64_t ConfusionMatrix::row_sum(int c) const {
    std::uint64_t t = 0;
    for (int p = 0; p < classes_; ++p) t += at(c, p);
    return t;
}

std::uint64_t ConfusionMatrix::col_sum(int c) const {
    std::uint64_t t = 0;
    for (int g = 0; g < classes_; ++g) t += at(g, c);
    return t;
}

void ConfusionMatrix::add(int gt, int pred, std::uint64_t count) {
    if (gt < 0 || gt >= classes_ || pred < 0 || pred >= classes_) {
        throw std::invalid_argument("label out of range for " + std::to_string(classes_) + " classes");
    }
    counts_[static_cast<std::size_t>(gt) * classes_ + pred] += count;
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
    if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w) {
        throw std::invalid_argument("prediction and ground truth shapes differ");
    }
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        if (gt.data[i] == kIgnoreLabel) continue;
        add(gt.data[i], pred.data[i]);
    }
}

ConfusionMatrix& accumulate_confusion(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt) {
    cm.accumulate(pred, gt);
    return cm;
}

double class_iou(const ConfusionMatrix& cm, int c) {
    const std::uint64_t inter = cm.at(c, c);
    const std::uint64_t uni = cm.row_sum(c) + cm.col_sum(c) - inter;
    if (uni == 0) return -1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double miou(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw std::invalid_argument("mIoU of an empty confusion matrix");
    double sum = 0;
    int present = 0;
    for (int c = 0; c < cm.num_classes(); ++c) {
        const double iou = class_iou(cm, c);
        if (iou < 0) continue;
        sum += iou;
        ++present;
    }
    return sum / present;
}

double center_square_accuracy(const LabelMap& pred, const LabelMap& gt) {
    std::size_t hit = 0, total = 0;
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        if (gt.data[i] != 1 && gt.data[i] != 2) continue;
        ++total;
        if (pred.data[i] == gt.data[i]) ++hit;
    }
    return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

void save_dataset(const std::string& dir, const std::vector<Sample>& samples) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream index(fs::path(dir) / "index.txt");
    if (!index) throw std::runtime_error("cannot write dataset index in " + dir);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        const std::string image_name = "image_" + std::to_string(i) + ".grct";
        const std::string mask_name = "mask_" + std::to_string(i) + ".grct";
        save_tensor((fs::path(dir) / image_name).string(), s.image);
        Tensor4 mask({1, 1, s.mask.h, s.mask.w});
        for (std::size_t p = 0; p < s.mask.data.size(); ++p) mask[p] = s.mask.data[p];
        save_tensor((fs::path(dir) / mask_name).string(), mask);
        index << image_name << ' ' << mask_name << ' ' << s.seed << '\n';
    }
}

std::vector<Sample> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream index(fs::path(dir) / "index.txt");
    if (!index) throw std::runtime_error("no dataset index in " + dir);
    std::vector<Sample> out;
    std::string line;
    while (std::getline(index, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string image_name, mask_name;
        std::uint64_t seed = 0;
        if (!(fields >> image_name >> mask_name >> seed)) {
            throw std::runtime_error("malformed dataset index line: " + line);
        }
        Sample s;
        s.seed = seed;
        s.image = load_tensor((fs::path(dir) / image_name).string());
        const Tensor4 mask = load_tensor((fs::path(dir) / mask_name).string());
        s.mask = LabelMap(1, mask.h(), mask.w());
        for (std::size_t p = 0; p < mask.size(); ++p) s.mask.data[p] = static_cast<std::uint8_t>(mask[p]);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace grc
