#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mambaq/quant.hpp"
#include "mambaq/tensor.hpp"

namespace mambaq {

// Weight container: "MQWEIGHT" magic, u64 manifest length, manifest JSON,
// zero padding to a 64-byte boundary, then raw little-endian payloads, each
// starting at a 64-byte-aligned offset relative to the payload base.
//
// dtypes: f32 (reals), i8 (int8 codes), i4p (two codes per byte, low nibble
// first), e8 (power-of-two exponents as int8). Quantized entries reference
// their scale sidecar ("<name>#scales" f32 grid or "<name>#exps" e8 grid)
// through the manifest's quant block.

struct TensorRecord {
    std::string name;
    std::string dtype;
    std::vector<int64_t> shape;
    uint64_t offset = 0;  // relative to payload base
    uint64_t nbytes = 0;
    // present on quantized entries
    bool quantized = false;
    QuantScheme scheme;
    std::string scale_ref;
};

class ContainerWriter {
public:
    void add_f32(const std::string& name, const Tensor& t);
    void add_quantized(const std::string& name, const QuantizedTensor& q);
    void write(const std::string& path) const;

private:
    struct Entry {
        TensorRecord rec;
        std::vector<uint8_t> bytes;
    };
    std::vector<Entry> entries_;
    void add_raw(TensorRecord rec, std::vector<uint8_t> bytes);
};

class ContainerReader {
public:
    explicit ContainerReader(const std::string& path);

    const std::vector<TensorRecord>& records() const { return records_; }
    bool has(const std::string& name) const;
    const TensorRecord& record(const std::string& name) const;
    Tensor read_f32(const std::string& name) const;
    QuantizedTensor read_quantized(const std::string& name) const;

private:
    std::vector<TensorRecord> records_;
    std::map<std::string, size_t> index_;
    std::vector<uint8_t> payload_;
    const uint8_t* payload_ptr(const TensorRecord& rec) const;
};

std::vector<uint8_t> f32_bytes(const Tensor& t);
Tensor tensor_from_f32(const std::vector<int64_t>& shape, const uint8_t* bytes, size_t nbytes);

// FNV-1a over a file's bytes, as a 16-hex-digit string (input provenance in
// run manifests and quantized-model metadata).
std::string fnv1a_file(const std::string& path);
std::string fnv1a_bytes(const uint8_t* data, size_t n);

}  // namespace mambaq
