#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "statalign/model.hpp"

namespace statalign {

// Checkpoint file layout (all integers little-endian):
//   bytes  0..7   magic "SAATCKPT"
//   u32           format version (1)
//   u32 len + bytes   architecture name
//   u32           num_classes
//   u32           epochs trained
//   f32, f32      final train / val accuracy
//   u32           parameter count P
//   P times:      u32 len + name bytes, u32 ndim, u32 dims[ndim]
//   payload:      raw f32 data per parameter, manifest order

struct CheckpointMeta {
    int epochs = 0;
    float train_acc = 0.0f;
    float val_acc = 0.0f;
};

namespace ckpt_detail {

constexpr char kMagic[8] = {'S', 'A', 'A', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

inline void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
}

inline uint32_t read_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw TensorError("truncated checkpoint " + path);
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

inline float read_f32(std::istream& in, const std::string& path) {
    uint32_t bits = read_u32(in, path);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const std::string& path) {
    uint32_t len = read_u32(in, path);
    std::string s(len, '\0');
    if (!in.read(s.data(), len)) throw TensorError("truncated checkpoint " + path);
    return s;
}

}  // namespace ckpt_detail

inline void save_checkpoint(Model<float>& model, const CheckpointMeta& meta, const std::string& path) {
    using namespace ckpt_detail;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TensorError("cannot write checkpoint " + path);
    out.write(kMagic, 8);
    write_u32(out, kVersion);
    write_string(out, model.arch.name);
    write_u32(out, static_cast<uint32_t>(model.num_classes));
    write_u32(out, static_cast<uint32_t>(meta.epochs));
    write_f32(out, meta.train_acc);
    write_f32(out, meta.val_acc);
    auto params = model.parameters();
    write_u32(out, static_cast<uint32_t>(params.size()));
    for (auto& p : params) {
        write_string(out, p.name);
        write_u32(out, static_cast<uint32_t>(p.tensor.shape().size()));
        for (int d : p.tensor.shape()) write_u32(out, static_cast<uint32_t>(d));
    }
    for (auto& p : params)
        for (size_t i = 0; i < p.tensor.size(); ++i) write_f32(out, p.tensor.data()[i]);
}

inline Model<float> load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr) {
    using namespace ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TensorError("cannot open checkpoint " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw TensorError("bad checkpoint magic in " + path);
    const uint32_t version = read_u32(in, path);
    if (version != kVersion)
        throw TensorError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    const std::string arch_name = read_string(in, path);
    const int num_classes = static_cast<int>(read_u32(in, path));
    CheckpointMeta meta;
    meta.epochs = static_cast<int>(read_u32(in, path));
    meta.train_acc = read_f32(in, path);
    meta.val_acc = read_f32(in, path);
    if (meta_out) *meta_out = meta;

    Model<float> model = build<float>(architecture_by_name(arch_name), num_classes, 0);
    auto params = model.parameters();
    const uint32_t count = read_u32(in, path);
    if (count != params.size())
        throw TensorError("checkpoint " + path + " has " + std::to_string(count) + " parameters, model expects " +
                          std::to_string(params.size()));
    for (auto& p : params) {
        const std::string name = read_string(in, path);
        if (name != p.name)
            throw TensorError("checkpoint " + path + " manifest mismatch: " + name + " vs " + p.name);
        const uint32_t ndim = read_u32(in, path);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(read_u32(in, path));
        if (shape != p.tensor.shape())
            throw TensorError("checkpoint " + path + " shape mismatch for " + p.name);
    }
    for (auto& p : params)
        for (size_t i = 0; i < p.tensor.size(); ++i) p.tensor.data()[i] = read_f32(in, path);
    return model;
}

}  // namespace statalign
