#pragma once

#include <cmath>

#include "statalign/dataset.hpp"
#include "statalign/rng.hpp"

namespace statalign {

// Procedural 10-class 32x32 grayscale dataset. Every sample is drawn at a
// random circular translation with jittered intensity, stroke size and
// additive noise, so class identity lives in shape/texture statistics rather
// than in absolute pixel positions. Pixels are quantized to u8 levels up
// front, which makes the in-memory set identical to its IDX round trip.
//
// Classes: 0 disk, 1 ring, 2 filled square, 3 square frame, 4 plus,
// 5 diagonal cross, 6 horizontal stripes, 7 vertical stripes,
// 8 checkerboard, 9 diagonal stripes.

namespace synth_detail {

constexpr int kSide = 32;

inline void draw_class(int label, Rng& rng, std::vector<float>& img) {
    const double fg = rng.next_real(0.65, 1.0);
    const double bg = rng.next_real(0.05, 0.15);
    const int cx = kSide / 2, cy = kSide / 2;
    auto mask_to_pixels = [&](auto&& inside) {
        for (int y = 0; y < kSide; ++y)
            for (int x = 0; x < kSide; ++x) img[y * kSide + x] = inside(x - cx, y - cy) ? fg : bg;
    };
    switch (label) {
        case 0: {  // disk
            const double r = rng.next_real(5.0, 7.5);
            mask_to_pixels([&](int dx, int dy) { return dx * dx + dy * dy <= r * r; });
            break;
        }
        case 1: {  // ring
            const double r = rng.next_real(6.0, 8.0);
            const double t = rng.next_real(1.0, 1.6);
            mask_to_pixels([&](int dx, int dy) {
                double d = std::sqrt(double(dx * dx + dy * dy));
                return std::abs(d - r) <= t;
            });
            break;
        }
        case 2: {  // filled square
            const int h = 5 + static_cast<int>(rng.next_below(3));
            mask_to_pixels([&](int dx, int dy) { return std::abs(dx) <= h && std::abs(dy) <= h; });
            break;
        }
        case 3: {  // square frame
            const int h = 6 + static_cast<int>(rng.next_below(3));
            mask_to_pixels([&](int dx, int dy) {
                int m = std::max(std::abs(dx), std::abs(dy));
                return m <= h && m > h - 2;
            });
            break;
        }
        case 4: {  // plus
            const int a = 6 + static_cast<int>(rng.next_below(3));
            mask_to_pixels([&](int dx, int dy) {
                return (std::abs(dx) <= 1 && std::abs(dy) <= a) || (std::abs(dy) <= 1 && std::abs(dx) <= a);
            });
            break;
        }
        case 5: {  // diagonal cross
            const int a = 7 + static_cast<int>(rng.next_below(3));
            mask_to_pixels([&](int dx, int dy) {
                if (std::abs(dx) > a || std::abs(dy) > a) return false;
                return std::abs(dx - dy) <= 1 || std::abs(dx + dy) <= 1;
            });
            break;
        }
        case 6: {  // horizontal stripes
            const int p = 6 + 2 * static_cast<int>(rng.next_below(3));
            const int phase = static_cast<int>(rng.next_below(p));
            mask_to_pixels([&](int dx, int dy) { return ((dy + cy + phase) % p) < p / 2; });
            break;
        }
        case 7: {  // vertical stripes
            const int p = 6 + 2 * static_cast<int>(rng.next_below(3));
            const int phase = static_cast<int>(rng.next_below(p));
            mask_to_pixels([&](int dx, int dy) { return ((dx + cx + phase) % p) < p / 2; });
            break;
        }
        case 8: {  // checkerboard
            const int c = 4 + static_cast<int>(rng.next_below(3));
            const int phase = static_cast<int>(rng.next_below(2 * c));
            mask_to_pixels([&](int dx, int dy) {
                return (((dx + cx + phase) / c) + ((dy + cy + phase) / c)) % 2 == 0;
            });
            break;
        }
        default: {  // diagonal stripes
            const int p = 6 + 2 * static_cast<int>(rng.next_below(3));
            const int phase = static_cast<int>(rng.next_below(p));
            mask_to_pixels([&](int dx, int dy) { return ((dx + dy + 2 * kSide + phase) % p) < p / 2; });
            break;
        }
    }
}

}  // namespace synth_detail

inline Dataset make_desk_dataset(int per_class, uint64_t seed, const char* split_tag = "train") {
    using namespace synth_detail;
    Dataset ds;
    ds.count = per_class * 10;
    ds.channels = 1;
    ds.height = kSide;
    ds.width = kSide;
    ds.num_classes = 10;
    ds.pixels.resize(static_cast<size_t>(ds.count) * kSide * kSide);
    ds.labels.resize(ds.count);

    std::vector<float> img(kSide * kSide), rolled(kSide * kSide);
    int out = 0;
    for (int label = 0; label < 10; ++label) {
        Rng rng(derive_seed(seed, std::string("synth:") + split_tag, label));
        for (int s = 0; s < per_class; ++s, ++out) {
            draw_class(label, rng, img);
            const int sx = static_cast<int>(rng.next_below(kSide));
            const int sy = static_cast<int>(rng.next_below(kSide));
            for (int y = 0; y < kSide; ++y)
                for (int x = 0; x < kSide; ++x)
                    rolled[((y + sy) % kSide) * kSide + ((x + sx) % kSide)] = img[y * kSide + x];
            float* dst = ds.pixels.data() + static_cast<size_t>(out) * kSide * kSide;
            for (int i = 0; i < kSide * kSide; ++i) {
                double v = rolled[i] + 0.05 * rng.next_normal();
                v = std::min(1.0, std::max(0.0, v));
                dst[i] = static_cast<float>(std::lround(v * 255.0) / 255.0);
            }
            ds.labels[out] = label;
        }
    }
    return ds;
}

}  // namespace statalign
