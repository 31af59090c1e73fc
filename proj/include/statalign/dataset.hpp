#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "statalign/tensor.hpp"

namespace statalign {

/// In-memory image set: pixels already scaled to [0,1].
struct Dataset {
    int count = 0, channels = 1, height = 32, width = 32;
    int num_classes = 10;
    std::vector<float> pixels;  // count * C * H * W, row-major
    std::vector<int> labels;

    size_t image_size() const { return static_cast<size_t>(channels) * height * width; }

    Tensor<float> image(int i) const {
        const float* p = pixels.data() + static_cast<size_t>(i) * image_size();
        return Tensor<float>::from_data({1, channels, height, width},
                                        std::vector<float>(p, p + image_size()));
    }

    Tensor<float> batch(const std::vector<int>& indices) const {
        Tensor<float> t({static_cast<int>(indices.size()), channels, height, width});
        for (size_t n = 0; n < indices.size(); ++n)
            std::copy(pixels.begin() + static_cast<size_t>(indices[n]) * image_size(),
                      pixels.begin() + static_cast<size_t>(indices[n] + 1) * image_size(),
                      t.data() + n * image_size());
        return t;
    }

    std::vector<int> batch_labels(const std::vector<int>& indices) const {
        std::vector<int> out(indices.size());
        for (size_t n = 0; n < indices.size(); ++n) out[n] = labels[indices[n]];
        return out;
    }
};

namespace idx {

constexpr uint32_t kImagesMagic = 0x00000803;  // u8 payload, 3 dims
constexpr uint32_t kLabelsMagic = 0x00000801;  // u8 payload, 1 dim

inline uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw TensorError("truncated IDX header in " + path);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace idx

/// Loads an IDX image/label pair (big-endian headers, u8 payload) and scales
/// pixels to [0,1].
inline Dataset ingest_idx(const std::string& images_path, const std::string& labels_path,
                          int num_classes = 10) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw TensorError("cannot open IDX images file " + images_path);
    uint32_t magic = idx::read_be32(imgs, images_path);
    if (magic != idx::kImagesMagic)
        throw TensorError("bad IDX magic in " + images_path + " (expected 0x00000803)");
    const uint32_t count = idx::read_be32(imgs, images_path);
    const uint32_t rows = idx::read_be32(imgs, images_path);
    const uint32_t cols = idx::read_be32(imgs, images_path);
    std::vector<unsigned char> raw(static_cast<size_t>(count) * rows * cols);
    if (!imgs.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw TensorError("truncated IDX image payload in " + images_path);

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw TensorError("cannot open IDX labels file " + labels_path);
    magic = idx::read_be32(labs, labels_path);
    if (magic != idx::kLabelsMagic)
        throw TensorError("bad IDX magic in " + labels_path + " (expected 0x00000801)");
    const uint32_t lcount = idx::read_be32(labs, labels_path);
    if (lcount != count)
        throw TensorError("IDX image/label count mismatch: " + std::to_string(count) + " images vs " +
                          std::to_string(lcount) + " labels");
    std::vector<unsigned char> lraw(lcount);
    if (!labs.read(reinterpret_cast<char*>(lraw.data()), static_cast<std::streamsize>(lraw.size())))
        throw TensorError("truncated IDX label payload in " + labels_path);

    Dataset ds;
    ds.count = static_cast<int>(count);
    ds.channels = 1;
    ds.height = static_cast<int>(rows);
    ds.width = static_cast<int>(cols);
    ds.num_classes = num_classes;
    ds.pixels.resize(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) ds.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
    ds.labels.resize(lcount);
    for (size_t i = 0; i < lraw.size(); ++i) {
        if (lraw[i] >= num_classes)
            throw TensorError("label " + std::to_string(int(lraw[i])) + " out of range [0," +
                              std::to_string(num_classes) + ") at index " + std::to_string(i));
        ds.labels[i] = lraw[i];
    }
    return ds;
}

inline void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw TensorError("cannot write " + images_path);
    idx::write_be32(imgs, idx::kImagesMagic);
    idx::write_be32(imgs, static_cast<uint32_t>(ds.count));
    idx::write_be32(imgs, static_cast<uint32_t>(ds.height));
    idx::write_be32(imgs, static_cast<uint32_t>(ds.width));
    std::vector<unsigned char> raw(ds.pixels.size());
    for (size_t i = 0; i < raw.size(); ++i)
        raw[i] = static_cast<unsigned char>(std::lround(ds.pixels[i] * 255.0f));
    imgs.write(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));

    std::ofstream labs(labels_path, std::ios::binary);
    if (!labs) throw TensorError("cannot write " + labels_path);
    idx::write_be32(labs, idx::kLabelsMagic);
    idx::write_be32(labs, static_cast<uint32_t>(ds.count));
    for (int l : ds.labels) {
        unsigned char c = static_cast<unsigned char>(l);
        labs.write(reinterpret_cast<char*>(&c), 1);
    }
}

}  // namespace statalign
