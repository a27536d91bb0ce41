#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "grc/dataeval.hpp"
#include "grc/experiment.hpp"
#include "oracles.hpp"

using namespace grc;

namespace {

struct SquareInfo {
    int pixels = 0;
    int label = 0;
};

SquareInfo square_of(const Sample& s) {
    SquareInfo info;
    for (auto l : s.mask.data) {
        if (l == 1 || l == 2) {
            ++info.pixels;
            info.label = l;
        }
    }
    return info;
}

}  // namespace

TEST_CASE("context samples are deterministic in the seed") {
    const auto a = gen_context_dataset(3, 5, 32, 32);
    const auto b = gen_context_dataset(3, 5, 32, 32);
    for (int i = 0; i < 5; ++i) {
        CHECK(a[i].image == b[i].image);
        CHECK(a[i].mask == b[i].mask);
    }
    CHECK_FALSE(gen_context_dataset(4, 1, 32, 32)[0].image == a[0].image);
    CHECK_THROWS(gen_context_dataset(1, 1, 16, 32));
}

TEST_CASE("square label depends on the far marker colour only") {
    const auto data = gen_context_dataset(11, 40, 64, 64);
    const ContextLayout layout = context_layout(64, 64);
    int counts[3] = {};
    for (const Sample& s : data) {
        const SquareInfo info = square_of(s);
        CHECK(info.pixels == layout.square_h * layout.square_w);
        ++counts[info.label];
        // find the marker and check its distance from the square
        int marker_y = -1, marker_x = -1;
        for (int y = 0; y < 64 && marker_y < 0; ++y) {
            for (int x = 0; x < 64; ++x) {
                const int k = oracle::palette_index(s.image, y, x);
                if (k == 2 || k == 3) {
                    CHECK(k - 1 == info.label);
                    marker_y = y;
                    marker_x = x;
                    break;
                }
            }
        }
        REQUIRE(marker_y >= 0);
        const int dy = std::abs(marker_y - layout.square_top), dx = std::abs(marker_x - layout.square_left);
        CHECK(std::max(std::min(dy, 64 - dy), std::min(dx, 64 - dx)) >= 64 / 3);
    }
    CHECK(counts[1] > 5);
    CHECK(counts[2] > 5);
}

TEST_CASE("pixel values stay in [0, 1]") {
    for (const Sample& s : gen_context_dataset(2, 4, 32, 32)) {
        for (Real v : s.image.data()) {
            CHECK(v >= 0);
            CHECK(v <= 1);
        }
    }
}

TEST_CASE("a local window cannot tell the classes apart") {
    const auto fit = gen_context_dataset(21, 200, 32, 32);
    const auto score = gen_context_dataset(22, 200, 32, 32);
    const double bound = oracle::local_window_bayes_accuracy(fit, score, 4);
    CHECK(bound <= 0.60);
    CHECK(bound >= 0.40);
}

TEST_CASE("augmentation") {
    const Sample s = gen_context_sample(5, 32, 32);
    SUBCASE("flip twice is the identity") {
        const Sample f = flip_horizontal(s);
        CHECK(f.image.at(0, 0, 3, 0) == s.image.at(0, 0, 3, 31));
        const Sample ff = flip_horizontal(f);
        CHECK(ff.image == s.image);
        CHECK(ff.mask == s.mask);
    }
    SUBCASE("identity parameters keep the sample") {
        const Sample a = apply_augment(s, AugmentParams{false, 1.0, 0, 0}, 32, 32);
        CHECK(max_relative_difference(a.image, s.image) < 1e-12);
        CHECK(a.mask == s.mask);
    }
    SUBCASE("downscaling pads with zeros and ignore labels") {
        const Sample a = apply_augment(s, AugmentParams{false, 0.5, 0, 0}, 32, 32);
        CHECK(a.image.shape() == Shape4{1, 3, 32, 32});
        CHECK(a.mask.at(0, 31, 31) == kIgnoreLabel);
        CHECK(a.image.at(0, 1, 31, 31) == 0);
        CHECK(a.mask.at(0, 0, 0) == 0);
    }
    SUBCASE("labels stay in the label set") {
        for (std::uint64_t k = 0; k < 20; ++k) {
            const Sample a = augment(s, k, 32, 32);
            CHECK(a.image.shape() == Shape4{1, 3, 32, 32});
            for (auto l : a.mask.data) CHECK((l <= 2 || l == kIgnoreLabel));
        }
    }
    SUBCASE("draws are deterministic and in range") {
        for (std::uint64_t k = 0; k < 50; ++k) {
            const AugmentParams p = draw_augment(k);
            CHECK(p.scale >= 0.5);
            CHECK(p.scale <= 2.0);
            CHECK(draw_augment(k).scale == p.scale);
        }
    }
}

TEST_CASE("confusion matrix and mIoU") {
    ConfusionMatrix cm(2);
    cm.add(0, 0, 3);
    cm.add(0, 1, 1);
    cm.add(1, 0, 1);
    cm.add(1, 1, 3);
    CHECK(class_iou(cm, 0) == doctest::Approx(0.6));
    CHECK(miou(cm) == doctest::Approx(0.6));
    CHECK(cm.total() == 8);
    CHECK(cm.row_sum(0) == 4);
    CHECK(cm.col_sum(1) == 4);

    ConfusionMatrix perfect(3);
    perfect.add(0, 0, 10);
    perfect.add(2, 2, 4);
    CHECK(miou(perfect) == 1.0);
    CHECK(class_iou(perfect, 1) < 0);

    ConfusionMatrix wrong(2);
    wrong.add(0, 1, 5);
    wrong.add(1, 0, 5);
    CHECK(miou(wrong) == 0.0);

    CHECK_THROWS(miou(ConfusionMatrix(3)));
}

TEST_CASE("confusion accumulation skips ignored pixels") {
    LabelMap gt(1, 1, 3, 0), pred(1, 1, 3, 0);
    gt.at(0, 0, 1) = kIgnoreLabel;
    gt.at(0, 0, 2) = 2;
    pred.at(0, 0, 2) = 1;
    ConfusionMatrix cm(3);
    accumulate_confusion(cm, pred, gt);
    CHECK(cm.total() == 2);
    CHECK(cm.at(2, 1) == 1);
    CHECK_THROWS(accumulate_confusion(cm, LabelMap(1, 1, 3, 7), gt));
    CHECK(center_square_accuracy(pred, gt) == 0.0);
    CHECK(center_square_accuracy(gt, gt) == 1.0);
}

TEST_CASE("evaluating fixed predictors") {
    const auto val = gen_context_dataset(9, 12, 32, 32);
    const EvalReport perfect = evaluate([](const Sample& s) { return s.mask; }, val, kContextClasses);
    CHECK(perfect.miou == 1.0);
    CHECK(perfect.center_accuracy == 1.0);

    const EvalReport background =
        evaluate([](const Sample& s) { return LabelMap(1, s.mask.h, s.mask.w, 0); }, val, kContextClasses);
    std::size_t bg = 0, total = 0;
    for (const Sample& s : val) {
        for (auto l : s.mask.data) {
            bg += l == 0;
            ++total;
        }
    }
    const double bg_iou = static_cast<double>(bg) / static_cast<double>(total);
    CHECK(background.class_iou[0] == doctest::Approx(bg_iou));
    CHECK(background.miou == doctest::Approx(bg_iou / 3));
    CHECK(background.center_accuracy == 0.0);

    const EvalReport again =
        evaluate([](const Sample& s) { return LabelMap(1, s.mask.h, s.mask.w, 0); }, val, kContextClasses);
    CHECK(again.confusion == background.confusion);
    CHECK(format_report(again) == format_report(background));
}

TEST_CASE("datasets persist and reload") {
    const auto dir = std::filesystem::temp_directory_path() / "grc_dataset_test";
    std::filesystem::remove_all(dir);
    const auto data = gen_context_dataset(8, 3, 32, 32);
    save_dataset(dir.string(), data);
    const auto back = load_dataset(dir.string());
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(back[i].image == data[i].image);
        CHECK(back[i].mask == data[i].mask);
        CHECK(back[i].seed == data[i].seed);
    }
    std::filesystem::remove_all(dir);
    CHECK_THROWS(load_dataset(dir.string()));
}
