#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "iapl/errors.hpp"
#include "iapl/model.hpp"
#include "iapl/tensor.hpp"

namespace iapl {

// "IAPL1" checkpoint: magic bytes, little-endian u32 tensor count, then per
// tensor a u16 name length, the UTF-8 name, a u8 rank, u32 dims, and raw
// little-endian f32 data. The model configuration rides along as the
// "meta.cfg" tensor so a file is self-describing.

namespace detail {

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back((v >> 8) & 0xff);
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

inline void put_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw FormatError("checkpoint: truncated file");
    }
    uint16_t u16() {
        need(2);
        uint16_t v = buf[pos] | (buf[pos + 1] << 8);
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

struct RawTensor {
    std::vector<int> shape;
    std::vector<float> data;
};

inline std::vector<float> encode_cfg(const EncoderConfig& e, const CilConfig& c,
                                     const ModelFlags& f) {
    std::vector<float> v = {1.0f,
                            static_cast<float>(e.depth),
                            static_cast<float>(e.dim),
                            static_cast<float>(e.heads),
                            static_cast<float>(e.patch),
                            static_cast<float>(e.view_size),
                            static_cast<float>(e.adapter_dim),
                            static_cast<float>(e.adapter_scale),
                            static_cast<float>(e.adapter_blocks),
                            static_cast<float>(e.token_blocks),
                            static_cast<float>(e.tokens_per_block),
                            static_cast<float>(e.dropout_p),
                            static_cast<float>(c.cond_patch),
                            f.adapters ? 1.0f : 0.0f,
                            f.tokens ? 1.0f : 0.0f,
                            f.prompts ? 1.0f : 0.0f,
                            static_cast<float>(e.adapter_range.size())};
    for (int r : e.adapter_range) v.push_back(static_cast<float>(r));
    v.push_back(static_cast<float>(c.channels.size()));
    for (int ch : c.channels) v.push_back(static_cast<float>(ch));
    return v;
}

inline void decode_cfg(const std::vector<float>& v, EncoderConfig& e, CilConfig& c,
                       ModelFlags& f) {
    size_t i = 0;
    auto next = [&]() -> float {
        if (i >= v.size()) throw FormatError("checkpoint: truncated meta.cfg");
        return v[i++];
    };
    if (static_cast<int>(next()) != 1) throw FormatError("checkpoint: unsupported meta.cfg version");
    e.depth = static_cast<int>(next());
    e.dim = static_cast<int>(next());
    e.heads = static_cast<int>(next());
    e.patch = static_cast<int>(next());
    e.view_size = static_cast<int>(next());
    e.adapter_dim = static_cast<int>(next());
    e.adapter_scale = next();
    e.adapter_blocks = static_cast<int>(next());
    e.token_blocks = static_cast<int>(next());
    e.tokens_per_block = static_cast<int>(next());
    e.dropout_p = next();
    c.cond_patch = static_cast<int>(next());
    f.adapters = next() != 0.0f;
    f.tokens = next() != 0.0f;
    f.prompts = next() != 0.0f;
    int n_range = static_cast<int>(next());
    e.adapter_range.clear();
    for (int k = 0; k < n_range; ++k) e.adapter_range.push_back(static_cast<int>(next()));
    int n_ch = static_cast<int>(next());
    c.channels.clear();
    for (int k = 0; k < n_ch; ++k) c.channels.push_back(static_cast<int>(next()));
    if (i != v.size()) throw FormatError("checkpoint: oversized meta.cfg");
}

inline void append_tensor(std::vector<uint8_t>& out, const std::string& name,
                          const std::vector<int>& shape, const std::vector<float>& data) {
    if (name.size() > 0xffff) throw ArgumentError("checkpoint: tensor name too long");
    put_u16(out, static_cast<uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<uint8_t>(shape.size()));
    for (int d : shape) put_u32(out, static_cast<uint32_t>(d));
    for (float v : data) put_f32(out, v);
}

}  // namespace detail

template <typename T>
void save_checkpoint(const ModelParams<T>& p, const std::string& path) {
    std::vector<uint8_t> out;
    const char magic[5] = {'I', 'A', 'P', 'L', '1'};
    out.insert(out.end(), magic, magic + 5);

    uint32_t count = 1;
    visit_params(p, [&](const std::string&, const Tensor<T>&, ParamKind) { ++count; });
    detail::put_u32(out, count);

    std::vector<float> cfg = detail::encode_cfg(p.enc, p.cil, p.flags);
    detail::append_tensor(out, "meta.cfg", {static_cast<int>(cfg.size())}, cfg);

    visit_params(p, [&](const std::string& name, const Tensor<T>& t, ParamKind) {
        std::vector<float> data(t.data.size());
        for (size_t i = 0; i < t.data.size(); ++i) data[i] = static_cast<float>(t.data[i]);
        detail::append_tensor(out, name, t.shape, data);
    });

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + path);
}

template <typename T>
ModelParams<T> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::Reader r{buf};

    std::string magic = r.str(5);
    if (magic != "IAPL1") throw FormatError("checkpoint: bad magic");
    uint32_t count = r.u32();

    std::map<std::string, detail::RawTensor> tensors;
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = r.u16();
        std::string name = r.str(name_len);
        uint8_t rank = r.u8();
        detail::RawTensor t;
        size_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            uint32_t dim = r.u32();
            t.shape.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        t.data.resize(numel);
        for (size_t k = 0; k < numel; ++k) t.data[k] = r.f32();
        if (!tensors.emplace(name, std::move(t)).second)
            throw FormatError("checkpoint: duplicate tensor name " + name);
    }
    if (r.pos != buf.size()) throw FormatError("checkpoint: trailing bytes");

    auto meta = tensors.find("meta.cfg");
    if (meta == tensors.end()) throw FormatError("checkpoint: missing meta.cfg");
    EncoderConfig enc;
    CilConfig cil;
    ModelFlags flags;
    detail::decode_cfg(meta->second.data, enc, cil, flags);
    tensors.erase(meta);

    ModelParams<T> p = init_params<T>(enc, cil, flags, Rng(0));
    visit_params(p, [&](const std::string& name, Tensor<T>& t, ParamKind) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError("checkpoint: missing tensor " + name);
        if (it->second.shape != t.shape)
            throw FormatError("checkpoint: shape mismatch for " + name + ", file has " +
                              shape_str(it->second.shape) + ", model wants " + shape_str(t.shape));
        for (size_t k = 0; k < t.data.size(); ++k) t.data[k] = static_cast<T>(it->second.data[k]);
        tensors.erase(it);
    });
    if (!tensors.empty())
        throw FormatError("checkpoint: unknown tensor " + tensors.begin()->first);
    return p;
}

}  // namespace iapl
