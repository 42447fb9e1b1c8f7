#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "relex/errors.hpp"
#include "relex/nn.hpp"
#include "relex/tensor.hpp"

namespace relex {

// Checkpoint layout (all integers and floats little-endian):
//   magic "RELEXCP1"
//   u32 config_length, config JSON bytes
//   u32 parameter_count
//   per parameter: u32 name_length, name bytes, u32 rank, u64 dims[rank],
//                  f64 values in row-major order
inline constexpr char kCheckpointMagic[8] = {'R', 'E', 'L', 'E', 'X', 'C', 'P', '1'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
    put_u64(out, std::bit_cast<std::uint64_t>(d));
}

class ByteReader {
public:
    ByteReader(const char* data, std::size_t size) : data_(data), size_(size) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s(data_ + pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == size_; }

private:
    void need(std::size_t n) {
        if (pos_ + n > size_) throw SerializationError("checkpoint: truncated file");
    }
    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

}  // namespace detail

// Serializes the store's parameters after a JSON-encoded config. The file is
// written to a temp path and renamed so a failed save never leaves a partial
// checkpoint behind.
inline void save_checkpoint(const std::string& path, const std::string& config_json,
                            const ParamStore& store) {
    std::string out;
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_u32(out, static_cast<std::uint32_t>(config_json.size()));
    out.append(config_json);
    detail::put_u32(out, static_cast<std::uint32_t>(store.named().size()));
    for (const auto& [name, t] : store.named()) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        detail::put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
        for (std::size_t d : t.shape()) detail::put_u64(out, d);
        for (double v : t.value()) detail::put_f64(out, v);
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw SerializationError("checkpoint: cannot write " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw SerializationError("checkpoint: short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw SerializationError("checkpoint: cannot move " + tmp + " to " + path);
}

struct LoadedCheckpoint {
    std::string config_json;
    std::vector<std::pair<std::string, Tensor>> params;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw SerializationError("checkpoint: cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (data.size() < sizeof(kCheckpointMagic) ||
        data.compare(0, sizeof(kCheckpointMagic), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw SerializationError("checkpoint: bad magic in " + path);
    detail::ByteReader r(data.data() + sizeof(kCheckpointMagic),
                         data.size() - sizeof(kCheckpointMagic));
    LoadedCheckpoint out;
    out.config_json = r.bytes(r.u32());
    const std::uint32_t count = r.u32();
    out.params.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u32());
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = r.u64();
        std::vector<double> values(shape_numel(shape));
        for (double& v : values) v = r.f64();
        out.params.emplace_back(std::move(name), Tensor::from_values(shape, std::move(values)));
    }
    if (!r.done()) throw SerializationError("checkpoint: trailing bytes in " + path);
    return out;
}

// Copies loaded values into a freshly built store. Every store parameter must
// be present with a matching shape; extra checkpoint entries are an error too.
inline void restore_params(const LoadedCheckpoint& ck, ParamStore& store) {
    if (ck.params.size() != store.named().size())
        throw SerializationError("checkpoint: has " + std::to_string(ck.params.size()) +
                                 " parameters, model expects " +
                                 std::to_string(store.named().size()));
    for (const auto& [name, loaded] : ck.params) {
        Tensor target = store.find(name);
        if (target.shape() != loaded.shape())
            throw SerializationError("checkpoint: parameter " + name + " has shape " +
                                     shape_str(loaded.shape()) + ", model expects " +
                                     shape_str(target.shape()));
        std::copy(loaded.value().begin(), loaded.value().end(), target.data());
    }
}

}  // namespace relex
