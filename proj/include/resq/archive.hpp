#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "resq/matrix.hpp"
#include "resq/quant.hpp"

namespace resq::archive {

// On-disk tensor container. Little-endian, magic "RESQ1", json metadata
// block, CRC32-guarded index, then raw payloads. Writes go through a temp
// file and rename so readers never observe a partial archive.
enum class DType : uint8_t { F32 = 0, F64 = 1, I8 = 2, U8 = 3, Packed4 = 4 };

const char* dtype_name(DType d);

struct Tensor {
    DType dtype = DType::F32;
    std::vector<int64_t> shape;
    std::vector<uint8_t> bytes;

    int64_t elems() const {
        int64_t n = 1;
        for (int64_t s : shape) n *= s;
        return n;
    }
};

class TensorArchive {
  public:
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();

    bool has(const std::string& name) const { return tensors_.count(name) != 0; }
    const std::map<std::string, Tensor>& tensors() const { return tensors_; }

    void put_f32(const std::string& name, const MatF& m);
    void put_f64(const std::string& name, const MatD& m);
    void put_vec_f32(const std::string& name, const std::vector<float>& v);
    void put_raw(const std::string& name, Tensor t);

    MatF get_f32(const std::string& name) const;
    MatD get_f64(const std::string& name) const;
    std::vector<float> get_vec_f32(const std::string& name) const;
    const Tensor& get_raw(const std::string& name) const;

    // codes + scales + zero-points under <name>.codes/.scales/.zp; 4-bit
    // codes are packed two per byte (low nibble = even index)
    void put_quantized(const std::string& name, const quant::QuantizedTensor& q);
    quant::QuantizedTensor get_quantized(const std::string& name) const;

    void save(const std::string& path) const;
    static TensorArchive load(const std::string& path);

  private:
    std::map<std::string, Tensor> tensors_;
};

uint32_t crc32(const uint8_t* data, size_t n);

std::vector<uint8_t> pack_nibbles(const std::vector<int16_t>& codes, bool is_signed);
std::vector<int16_t> unpack_nibbles(const std::vector<uint8_t>& bytes, size_t n, bool is_signed);

}  // namespace resq::archive
