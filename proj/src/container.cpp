#include "mambaq/container.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace mambaq {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'Q', 'W', 'E', 'I', 'G', 'H', 'T'};
constexpr uint64_t kAlign = 64;

uint64_t align_up(uint64_t v) { return (v + kAlign - 1) & ~(kAlign - 1); }

json record_to_json(const TensorRecord& r) {
    json j;
    j["name"] = r.name;
    j["dtype"] = r.dtype;
    j["shape"] = r.shape;
    j["offset"] = r.offset;
    j["nbytes"] = r.nbytes;
    if (r.quantized) {
        json q;
        q["bits"] = r.scheme.bits;
        q["granularity"] = granularity_name(r.scheme.granularity);
        q["group_size"] = r.scheme.group_size;
        q["scale_kind"] = scale_kind_name(r.scheme.scale_kind);
        q["group_axis"] = r.scheme.group_axis == GroupAxis::cols ? "cols" : "rows";
        q["scales"] = r.scale_ref;
        j["quant"] = q;
    }
    return j;
}

TensorRecord record_from_json(const json& j) {
    TensorRecord r;
    r.name = j.at("name").get<std::string>();
    r.dtype = j.at("dtype").get<std::string>();
    r.shape = j.at("shape").get<std::vector<int64_t>>();
    r.offset = j.at("offset").get<uint64_t>();
    r.nbytes = j.at("nbytes").get<uint64_t>();
    if (j.contains("quant")) {
        const json& q = j.at("quant");
        r.quantized = true;
        r.scheme.bits = q.at("bits").get<int>();
        r.scheme.granularity = granularity_from_name(q.at("granularity").get<std::string>());
        r.scheme.group_size = q.at("group_size").get<int64_t>();
        r.scheme.scale_kind = scale_kind_from_name(q.at("scale_kind").get<std::string>());
        r.scheme.group_axis = q.at("group_axis").get<std::string>() == "rows" ? GroupAxis::rows : GroupAxis::cols;
        r.scale_ref = q.at("scales").get<std::string>();
    }
    return r;
}

}  // namespace

std::vector<uint8_t> f32_bytes(const Tensor& t) {
    std::vector<uint8_t> out(t.data.size() * 4);
    for (size_t i = 0; i < t.data.size(); ++i) {
        const float f = static_cast<float>(t.data[i]);
        std::memcpy(&out[i * 4], &f, 4);
    }
    return out;
}

Tensor tensor_from_f32(const std::vector<int64_t>& shape, const uint8_t* bytes, size_t nbytes) {
    const int64_t n = numel_of(shape);
    if (nbytes != static_cast<size_t>(n) * 4) throw IoError("f32 payload size mismatch");
    Tensor t(shape);
    for (int64_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, bytes + i * 4, 4);
        t.data[static_cast<size_t>(i)] = static_cast<double>(f);
    }
    return t;
}

void ContainerWriter::add_raw(TensorRecord rec, std::vector<uint8_t> bytes) {
    rec.nbytes = bytes.size();
    entries_.push_back({std::move(rec), std::move(bytes)});
}

void ContainerWriter::add_f32(const std::string& name, const Tensor& t) {
    TensorRecord r;
    r.name = name;
    r.dtype = "f32";
    r.shape = t.shape;
    add_raw(std::move(r), f32_bytes(t));
}

void ContainerWriter::add_quantized(const std::string& name, const QuantizedTensor& q) {
    TensorRecord r;
    r.name = name;
    r.dtype = q.scheme.bits == 4 ? "i4p" : "i8";
    r.shape = q.shape;
    r.quantized = true;
    r.scheme = q.scheme;

    if (q.scheme.scale_kind == ScaleKind::fp) {
        r.scale_ref = name + "#scales";
        add_raw(r, q.payload);
        Tensor s({q.grid.row_groups, q.grid.col_groups});
        std::copy(q.scales.begin(), q.scales.end(), s.data.begin());
        add_f32(r.scale_ref, s);
    } else {
        r.scale_ref = name + "#exps";
        add_raw(r, q.payload);
        TensorRecord er;
        er.name = r.scale_ref;
        er.dtype = "e8";
        er.shape = {q.grid.row_groups, q.grid.col_groups};
        std::vector<uint8_t> eb(q.exponents.size());
        std::memcpy(eb.data(), q.exponents.data(), q.exponents.size());
        add_raw(std::move(er), std::move(eb));
    }
}

void ContainerWriter::write(const std::string& path) const {
    // lay out payloads relative to the aligned payload base
    std::vector<TensorRecord> recs;
    uint64_t off = 0;
    for (const auto& e : entries_) {
        TensorRecord r = e.rec;
        r.offset = off;
        recs.push_back(r);
        off = align_up(off + r.nbytes);
    }
    json manifest;
    manifest["version"] = 1;
    json arr = json::array();
    for (const auto& r : recs) arr.push_back(record_to_json(r));
    manifest["tensors"] = arr;
    const std::string mtext = manifest.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write container " + path);
    f.write(kMagic, 8);
    const uint64_t mlen = mtext.size();
    f.write(reinterpret_cast<const char*>(&mlen), 8);
    f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    const uint64_t base = align_up(16 + mlen);
    for (uint64_t p = 16 + mlen; p < base; ++p) f.put(0);
    uint64_t pos = 0;
    for (const auto& e : entries_) {
        // every payload starts 64-byte aligned
        const uint64_t want = align_up(pos);
        for (uint64_t p = pos; p < want; ++p) f.put(0);
        pos = want;
        f.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
        pos += e.bytes.size();
    }
    if (!f) throw IoError("write failed for " + path);
}

ContainerReader::ContainerReader(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open container " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path + " is not a weight container");
    uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), 8);
    if (!f || mlen > (uint64_t{1} << 32)) throw IoError("bad manifest length in " + path);
    std::string mtext(mlen, '\0');
    f.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (!f) throw IoError("truncated manifest in " + path);

    json manifest;
    try {
        manifest = json::parse(mtext);
    } catch (const json::exception& e) {
        throw IoError(std::string("bad container manifest: ") + e.what());
    }
    for (const auto& j : manifest.at("tensors")) {
        TensorRecord r = record_from_json(j);
        index_[r.name] = records_.size();
        records_.push_back(std::move(r));
    }

    const uint64_t base = align_up(16 + mlen);
    f.seekg(static_cast<std::streamoff>(base));
    payload_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

bool ContainerReader::has(const std::string& name) const { return index_.count(name) > 0; }

const TensorRecord& ContainerReader::record(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError("container is missing tensor '" + name + "'");
    return records_[it->second];
}

const uint8_t* ContainerReader::payload_ptr(const TensorRecord& rec) const {
    if (rec.offset + rec.nbytes > payload_.size())
        throw IoError("tensor '" + rec.name + "' extends past end of container");
    return payload_.data() + rec.offset;
}

Tensor ContainerReader::read_f32(const std::string& name) const {
    const TensorRecord& r = record(name);
    if (r.dtype != "f32") throw IoError("tensor '" + name + "' has dtype " + r.dtype + ", expected f32");
    Tensor t = tensor_from_f32(r.shape, payload_ptr(r), r.nbytes);
    t.name = name;
    return t;
}

QuantizedTensor ContainerReader::read_quantized(const std::string& name) const {
    const TensorRecord& r = record(name);
    if (!r.quantized) throw IoError("tensor '" + name + "' is not quantized");
    QuantizedTensor q;
    q.shape = r.shape;
    q.scheme = r.scheme;
    q.grid = scale_grid(r.shape, r.scheme);
    const uint8_t* p = payload_ptr(r);
    q.payload.assign(p, p + r.nbytes);

    const TensorRecord& sr = record(r.scale_ref);
    if (r.scheme.scale_kind == ScaleKind::fp) {
        Tensor s = tensor_from_f32(sr.shape, payload_ptr(sr), sr.nbytes);
        if (s.numel() != q.grid.count()) throw IoError("scale grid mismatch for '" + name + "'");
        q.scales = s.data;
    } else {
        if (sr.dtype != "e8") throw IoError("exponent sidecar for '" + name + "' has dtype " + sr.dtype);
        if (static_cast<int64_t>(sr.nbytes) != q.grid.count()) throw IoError("exponent grid mismatch for '" + name + "'");
        const uint8_t* ep = payload_ptr(sr);
        q.exponents.assign(reinterpret_cast<const int8_t*>(ep), reinterpret_cast<const int8_t*>(ep) + sr.nbytes);
    }
    return q;
}

std::string fnv1a_bytes(const uint8_t* data, size_t n) {
    uint64_t h = 14695981039346656037ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string fnv1a_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot hash " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a_bytes(bytes.data(), bytes.size());
}

}  // namespace mambaq
