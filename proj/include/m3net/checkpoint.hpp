#pragma once

// Checkpoint container: magic "M3NC", format version u16, then count-prefixed
// entries of (name length, UTF-8 name, dtype tag, rank, dims as u64
// little-endian, raw little-endian values). Round-trips bit-exactly.

#include <cstdio>
#include <filesystem>
#include <map>

#include "m3net/tensor.hpp"

namespace m3net {

enum class CkptDtype : uint8_t { f32 = 0, f64 = 1 };

struct CheckpointEntry {
    std::string name;
    CkptDtype dtype;
    Shape shape;
    std::vector<std::byte> raw;  // little-endian values

    template <typename T>
    std::vector<T> values() const {
        std::vector<T> out(static_cast<size_t>(numel(shape)));
        if (dtype == CkptDtype::f32) {
            const float* p = reinterpret_cast<const float*>(raw.data());
            for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(p[i]);
        } else {
            const double* p = reinterpret_cast<const double*>(raw.data());
            for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(p[i]);
        }
        return out;
    }
};

using Checkpoint = std::vector<CheckpointEntry>;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& entries);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
CheckpointEntry make_entry(const std::string& name, const Tensor<T>& t) {
    CheckpointEntry e;
    e.name = name;
    e.dtype = sizeof(T) == 4 ? CkptDtype::f32 : CkptDtype::f64;
    e.shape = t.shape();
    e.raw.resize(t.data().size() * sizeof(T));
    std::memcpy(e.raw.data(), t.data().data(), e.raw.size());
    return e;
}

}  // namespace m3net
