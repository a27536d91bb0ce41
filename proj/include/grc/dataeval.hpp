#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grc/layers.hpp"
#include "grc/tensor.hpp"

namespace grc {

struct Sample {
    Tensor4 image;   // (1, 3, H, W), values in [0, 1]
    LabelMap mask;   // (1, H, W)
    std::uint64_t seed = 0;
};

inline constexpr int kContextClasses = 3;

/// Geometry of the context task on an H x W canvas.
struct ContextLayout {
    int square_top, square_left, square_h, square_w;  // centred square
    int shift_h, shift_w;                             // H/2, W/2
    /// Marker placements: the square translated by (H/2, 0), (0, W/2) or (H/2, W/2), wrapping.
    static constexpr int kPlacements = 3;
    std::pair<int, int> placement(int k) const;
};

ContextLayout context_layout(int height, int width);

/// Synthetic context task. Each image has a centred square whose class (1 or 2)
/// is set only by the colour of a marker patch placed far away, at a
/// half-image wrap-around translate of the square; everything else is
/// textured background (class 0). Requires H, W >= 32.
std::vector<Sample> gen_context_dataset(std::uint64_t seed, int n_samples, int height, int width);
Sample gen_context_sample(std::uint64_t sample_seed, int height, int width);

/// Random draws of one augmentation.
struct AugmentParams {
    bool flip = false;
    double scale = 1.0;
    double crop_y = 0;  // fraction of the free range used for the crop origin
    double crop_x = 0;
};

AugmentParams draw_augment(std::uint64_t seed);

/// Horizontal flip, rescale (bilinear image, nearest mask), crop to
/// crop_h x crop_w; regions outside the rescaled image are padded with 0 / 255.
Sample apply_augment(const Sample& s, const AugmentParams& p, int crop_h, int crop_w);
Sample augment(const Sample& s, std::uint64_t seed, int crop_h, int crop_w);

Sample flip_horizontal(const Sample& s);

/// Stacks samples into a batch tensor and label map.
std::pair<Tensor4, LabelMap> make_batch(const std::vector<Sample>& samples);

/// Rows are ground truth, columns predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    int num_classes() const { return classes_; }
    std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * classes_ + pred]; }
    std::uint64_t total() const;
    std::uint64_t row_sum(int c) const;
    std::uint64_t col_sum(int c) const;

    /// Adds one count per non-ignored pixel. Labels >= num_classes (other than 255) throw.
    void accumulate(const LabelMap& pred, const LabelMap& gt);
    void add(int gt, int pred, std::uint64_t count = 1);

    bool operator==(const ConfusionMatrix&) const = default;

private:
    int classes_;
    std::vector<std::uint64_t> counts_;
};

ConfusionMatrix& accumulate_confusion(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt);

/// IoU of class c, or a negative value when its union is empty.
double class_iou(const ConfusionMatrix& cm, int c);

/// Mean IoU over classes with a non-empty union. Throws on an empty matrix.
double miou(const ConfusionMatrix& cm);

/// Fraction of pixels labelled 1 or 2 in `gt` that `pred` gets right.
double center_square_accuracy(const LabelMap& pred, const LabelMap& gt);

/// Directory of GRCT pairs (image, mask stored as reals) plus index.txt with
/// one "image_path mask_path seed" line per sample.
void save_dataset(const std::string& dir, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::string& dir);

}  // namespace grc
