#include "resq/archive.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "archive format is little-endian");

namespace resq::archive {

namespace {

constexpr char kMagic[5] = {'R', 'E', 'S', 'Q', '1'};
constexpr uint32_t kVersion = 1;

size_t dtype_size(DType d) {
    switch (d) {
        case DType::F32: return 4;
        case DType::F64: return 8;
        case DType::I8:
        case DType::U8:
        case DType::Packed4: return 1;
    }
    return 1;
}

size_t payload_bytes(DType d, int64_t elems) {
    if (d == DType::Packed4) return static_cast<size_t>((elems + 1) / 2);
    return static_cast<size_t>(elems) * dtype_size(d);
}

template <class T>
void append_pod(std::vector<uint8_t>& buf, T v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
}

template <class T>
T read_pod(const std::vector<uint8_t>& buf, size_t& off) {
    require(off + sizeof(T) <= buf.size(), "archive: truncated file");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

const char* dtype_name(DType d) {
    switch (d) {
        case DType::F32: return "f32";
        case DType::F64: return "f64";
        case DType::I8: return "i8";
        case DType::U8: return "u8";
        case DType::Packed4: return "i8-packed-4bit";
    }
    return "?";
}

uint32_t crc32(const uint8_t* data, size_t n) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

std::vector<uint8_t> pack_nibbles(const std::vector<int16_t>& codes, bool is_signed) {
    std::vector<uint8_t> out((codes.size() + 1) / 2, 0);
    for (size_t i = 0; i < codes.size(); ++i) {
        int c = codes[i];
        if (is_signed) {
            require(c >= -8 && c <= 7, "pack_nibbles: signed code out of range");
        } else {
            require(c >= 0 && c <= 15, "pack_nibbles: unsigned code out of range");
        }
        const uint8_t nib = static_cast<uint8_t>(c & 0xF);
        if (i % 2 == 0)
            out[i / 2] |= nib;  // low nibble holds the even index
        else
            out[i / 2] |= static_cast<uint8_t>(nib << 4);
    }
    return out;
}

std::vector<int16_t> unpack_nibbles(const std::vector<uint8_t>& bytes, size_t n, bool is_signed) {
    require(bytes.size() >= (n + 1) / 2, "unpack_nibbles: buffer too small");
    std::vector<int16_t> out(n);
    for (size_t i = 0; i < n; ++i) {
        uint8_t nib = (i % 2 == 0) ? (bytes[i / 2] & 0xF) : (bytes[i / 2] >> 4);
        int c = nib;
        if (is_signed && c >= 8) c -= 16;
        out[i] = static_cast<int16_t>(c);
    }
    return out;
}

void TensorArchive::put_raw(const std::string& name, Tensor t) {
    require(!name.empty() && name.size() < 65536, "archive: bad tensor name");
    require(t.bytes.size() == payload_bytes(t.dtype, t.elems()),
            "archive: payload size mismatch for '" + name + "'");
    tensors_[name] = std::move(t);
}

void TensorArchive::put_f32(const std::string& name, const MatF& m) {
    Tensor t;
    t.dtype = DType::F32;
    t.shape = {m.rows, m.cols};
    t.bytes.resize(m.size() * 4);
    std::memcpy(t.bytes.data(), m.a.data(), t.bytes.size());
    put_raw(name, std::move(t));
}

void TensorArchive::put_f64(const std::string& name, const MatD& m) {
    Tensor t;
    t.dtype = DType::F64;
    t.shape = {m.rows, m.cols};
    t.bytes.resize(m.size() * 8);
    std::memcpy(t.bytes.data(), m.a.data(), t.bytes.size());
    put_raw(name, std::move(t));
}

void TensorArchive::put_vec_f32(const std::string& name, const std::vector<float>& v) {
    Tensor t;
    t.dtype = DType::F32;
    t.shape = {static_cast<int64_t>(v.size())};
    t.bytes.resize(v.size() * 4);
    std::memcpy(t.bytes.data(), v.data(), t.bytes.size());
    put_raw(name, std::move(t));
}

const Tensor& TensorArchive::get_raw(const std::string& name) const {
    auto it = tensors_.find(name);
    require(it != tensors_.end(), "archive: missing tensor '" + name + "'");
    return it->second;
}

MatF TensorArchive::get_f32(const std::string& name) const {
    const Tensor& t = get_raw(name);
    require(t.dtype == DType::F32 && t.shape.size() == 2,
            "archive: '" + name + "' is not an f32 matrix");
    MatF m(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]));
    std::memcpy(m.a.data(), t.bytes.data(), t.bytes.size());
    require(m.finite(), "archive: non-finite values in tensor '" + name + "'");
    return m;
}

MatD TensorArchive::get_f64(const std::string& name) const {
    const Tensor& t = get_raw(name);
    require(t.dtype == DType::F64 && t.shape.size() == 2,
            "archive: '" + name + "' is not an f64 matrix");
    MatD m(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]));
    std::memcpy(m.a.data(), t.bytes.data(), t.bytes.size());
    require(m.finite(), "archive: non-finite values in tensor '" + name + "'");
    return m;
}

std::vector<float> TensorArchive::get_vec_f32(const std::string& name) const {
    const Tensor& t = get_raw(name);
    require(t.dtype == DType::F32 && t.shape.size() == 1,
            "archive: '" + name + "' is not an f32 vector");
    std::vector<float> v(static_cast<size_t>(t.shape[0]));
    std::memcpy(v.data(), t.bytes.data(), t.bytes.size());
    for (float x : v) require(std::isfinite(x), "archive: non-finite values in '" + name + "'");
    return v;
}

void TensorArchive::put_quantized(const std::string& name, const quant::QuantizedTensor& q) {
    Tensor codes;
    codes.shape = {q.rows, q.cols};
    if (q.config.bits == 4) {
        codes.dtype = DType::Packed4;
        codes.bytes = pack_nibbles(q.codes, q.config.symmetric);
    } else if (q.config.symmetric) {
        codes.dtype = DType::I8;
        codes.bytes.resize(q.codes.size());
        for (size_t i = 0; i < q.codes.size(); ++i)
            codes.bytes[i] = static_cast<uint8_t>(static_cast<int8_t>(q.codes[i]));
    } else {
        codes.dtype = DType::U8;
        codes.bytes.resize(q.codes.size());
        for (size_t i = 0; i < q.codes.size(); ++i)
            codes.bytes[i] = static_cast<uint8_t>(q.codes[i]);
    }
    put_raw(name + ".codes", std::move(codes));
    put_vec_f32(name + ".scales", q.scales);
    put_vec_f32(name + ".zp", q.zero_points);

    meta["tensors"][name] = {{"bits", q.config.bits},
                             {"symmetric", q.config.symmetric},
                             {"granularity", quant::granularity_name(q.config.granularity)},
                             {"head_dim", q.config.head_dim}};
}

quant::QuantizedTensor TensorArchive::get_quantized(const std::string& name) const {
    require(meta.contains("tensors") && meta["tensors"].contains(name),
            "archive: missing quantization metadata for '" + name + "'");
    const auto& info = meta["tensors"][name];
    quant::QuantizedTensor q;
    q.config.bits = info["bits"].get<int>();
    q.config.symmetric = info["symmetric"].get<bool>();
    q.config.head_dim = info["head_dim"].get<int>();
    const std::string gran = info["granularity"].get<std::string>();
    if (gran == "per-tensor") q.config.granularity = quant::Granularity::PerTensor;
    else if (gran == "per-token") q.config.granularity = quant::Granularity::PerToken;
    else if (gran == "per-channel") q.config.granularity = quant::Granularity::PerChannel;
    else if (gran == "per-head") q.config.granularity = quant::Granularity::PerHead;
    else throw Error("archive: bad granularity '" + gran + "' for '" + name + "'");

    const Tensor& codes = get_raw(name + ".codes");
    require(codes.shape.size() == 2, "archive: bad code tensor for '" + name + "'");
    q.rows = static_cast<int>(codes.shape[0]);
    q.cols = static_cast<int>(codes.shape[1]);
    const size_t n = static_cast<size_t>(codes.elems());
    if (codes.dtype == DType::Packed4) {
        q.codes = unpack_nibbles(codes.bytes, n, q.config.symmetric);
    } else if (codes.dtype == DType::I8) {
        q.codes.resize(n);
        for (size_t i = 0; i < n; ++i) q.codes[i] = static_cast<int8_t>(codes.bytes[i]);
    } else if (codes.dtype == DType::U8) {
        q.codes.resize(n);
        for (size_t i = 0; i < n; ++i) q.codes[i] = codes.bytes[i];
    } else {
        throw Error("archive: bad code dtype for '" + name + "'");
    }
    q.scales = get_vec_f32(name + ".scales");
    q.zero_points = get_vec_f32(name + ".zp");
    return q;
}

void TensorArchive::save(const std::string& path) const {
    std::vector<uint8_t> head;
    head.insert(head.end(), kMagic, kMagic + 5);
    append_pod(head, kVersion);

    const std::string meta_str = meta.dump();
    append_pod(head, static_cast<uint64_t>(meta_str.size()));
    head.insert(head.end(), meta_str.begin(), meta_str.end());

    std::vector<uint8_t> index;
    append_pod(index, static_cast<uint32_t>(tensors_.size()));
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors_) {
        append_pod(index, static_cast<uint16_t>(name.size()));
        index.insert(index.end(), name.begin(), name.end());
        append_pod(index, static_cast<uint8_t>(t.dtype));
        append_pod(index, static_cast<uint8_t>(t.shape.size()));
        for (int64_t s : t.shape) append_pod(index, static_cast<uint64_t>(s));
        append_pod(index, offset);
        append_pod(index, static_cast<uint64_t>(t.bytes.size()));
        offset += t.bytes.size();
    }
    const uint32_t digest = crc32(index.data(), index.size());

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        require(f.good(), "archive: cannot open '" + tmp + "' for writing");
        f.write(reinterpret_cast<const char*>(head.data()), head.size());
        f.write(reinterpret_cast<const char*>(index.data()), index.size());
        f.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
        for (const auto& [name, t] : tensors_)
            f.write(reinterpret_cast<const char*>(t.bytes.data()), t.bytes.size());
        require(f.good(), "archive: write to '" + tmp + "' failed");
    }
    require(std::rename(tmp.c_str(), path.c_str()) == 0,
            "archive: cannot rename '" + tmp + "' onto '" + path + "'");
}

TensorArchive TensorArchive::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "archive: cannot open '" + path + "'");
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    size_t off = 0;
    require(buf.size() >= 5 && std::memcmp(buf.data(), kMagic, 5) == 0,
            "archive: bad magic in '" + path + "'");
    off = 5;
    const uint32_t version = read_pod<uint32_t>(buf, off);
    require(version == kVersion, "archive: unsupported version " + std::to_string(version));

    const uint64_t meta_len = read_pod<uint64_t>(buf, off);
    require(off + meta_len <= buf.size(), "archive: truncated metadata");
    TensorArchive a;
    a.meta = nlohmann::ordered_json::parse(buf.begin() + off, buf.begin() + off + meta_len,
                                           nullptr, false);
    require(!a.meta.is_discarded(), "archive: corrupt metadata json");
    off += meta_len;

    const size_t index_begin = off;
    const uint32_t n_tensors = read_pod<uint32_t>(buf, off);
    struct Entry {
        std::string name;
        Tensor t;
        uint64_t offset = 0, nbytes = 0;
    };
    std::vector<Entry> entries(n_tensors);
    for (auto& e : entries) {
        const uint16_t name_len = read_pod<uint16_t>(buf, off);
        require(off + name_len <= buf.size(), "archive: truncated name");
        e.name.assign(buf.begin() + off, buf.begin() + off + name_len);
        off += name_len;
        const uint8_t dt = read_pod<uint8_t>(buf, off);
        require(dt <= static_cast<uint8_t>(DType::Packed4), "archive: bad dtype");
        e.t.dtype = static_cast<DType>(dt);
        const uint8_t ndim = read_pod<uint8_t>(buf, off);
        e.t.shape.resize(ndim);
        for (auto& s : e.t.shape) s = static_cast<int64_t>(read_pod<uint64_t>(buf, off));
        e.offset = read_pod<uint64_t>(buf, off);
        e.nbytes = read_pod<uint64_t>(buf, off);
    }
    const size_t index_end = off;
    const uint32_t want = read_pod<uint32_t>(buf, off);
    const uint32_t got = crc32(buf.data() + index_begin, index_end - index_begin);
    require(want == got, "archive: index CRC mismatch in '" + path + "'");

    const size_t payload_base = off;
    uint64_t expect_offset = 0;
    for (auto& e : entries) {
        require(e.offset == expect_offset,
                "archive: overlapping or unordered payload for '" + e.name + "'");
        expect_offset += e.nbytes;
        require(payload_base + e.offset + e.nbytes <= buf.size(),
                "archive: payload out of bounds for '" + e.name + "'");
        require(e.nbytes == payload_bytes(e.t.dtype, e.t.elems()),
                "archive: payload size mismatch for '" + e.name + "'");
        e.t.bytes.assign(buf.begin() + payload_base + e.offset,
                         buf.begin() + payload_base + e.offset + e.nbytes);
        require(a.tensors_.emplace(e.name, std::move(e.t)).second,
                "archive: duplicate tensor name '" + e.name + "'");
    }
    return a;
}

}  // namespace resq::archive
