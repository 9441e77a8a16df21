#include "m3net/checkpoint.hpp"

#include <fstream>

namespace m3net {

namespace {

constexpr char kMagic[4] = {'M', '3', 'N', 'C'};
constexpr uint16_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
    // x86 is little-endian; raw write
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, 4);
    write_le<uint16_t>(os, kVersion);
    write_le<uint64_t>(os, entries.size());
    for (const auto& e : entries) {
        write_le<uint32_t>(os, static_cast<uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_le<uint8_t>(os, static_cast<uint8_t>(e.dtype));
        write_le<uint8_t>(os, static_cast<uint8_t>(e.shape.size()));
        for (int64_t d : e.shape) write_le<uint64_t>(os, static_cast<uint64_t>(d));
        os.write(reinterpret_cast<const char*>(e.raw.data()), static_cast<std::streamsize>(e.raw.size()));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open checkpoint: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw ValidationError("not a checkpoint file (bad magic): " + path.string());
    uint16_t version = read_le<uint16_t>(is);
    if (version != kVersion)
        throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    uint64_t count = read_le<uint64_t>(is);
    Checkpoint entries;
    entries.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        uint32_t name_len = read_le<uint32_t>(is);
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        uint8_t tag = read_le<uint8_t>(is);
        if (tag > 1) throw ValidationError("bad dtype tag in checkpoint entry " + e.name);
        e.dtype = static_cast<CkptDtype>(tag);
        uint8_t rank = read_le<uint8_t>(is);
        e.shape.resize(rank);
        for (uint8_t d = 0; d < rank; ++d) e.shape[d] = static_cast<int64_t>(read_le<uint64_t>(is));
        size_t bytes = static_cast<size_t>(numel(e.shape)) * (e.dtype == CkptDtype::f32 ? 4 : 8);
        e.raw.resize(bytes);
        is.read(reinterpret_cast<char*>(e.raw.data()), static_cast<std::streamsize>(bytes));
        if (!is) throw ValidationError("truncated checkpoint: " + path.string());
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace m3net
