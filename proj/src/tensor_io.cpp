#include "elastreg/tensor_io.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "elastreg/error.hpp"

namespace elastreg {

namespace {

constexpr std::array<char, 8> kMagic{'T', 'E', 'N', 'S', 'O', 'R', '0', '1'};

void put_u32(std::string& buf, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t float_bits(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    return u;
}

float bits_float(std::uint32_t u) {
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

Grid grid_from(const std::vector<std::uint32_t>& dims, double spacing, const std::filesystem::path& path) {
    std::vector<int> d(dims.begin(), dims.end());
    try {
        return Grid::make(d, spacing);
    } catch (const ValidationError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

RawTensor from_doubles(std::vector<std::uint32_t> dims, const std::vector<double>& values) {
    RawTensor t;
    t.dims = std::move(dims);
    t.dtype = RawTensor::DType::Float32;
    t.f32.reserve(values.size());
    for (double v : values) t.f32.push_back(static_cast<float>(v));
    return t;
}

std::vector<std::uint32_t> dims_of(const Grid& g) {
    std::vector<std::uint32_t> d;
    for (int a = 0; a < g.ndim; ++a) d.push_back(static_cast<std::uint32_t>(g.dims[a]));
    return d;
}

} // namespace

std::size_t RawTensor::element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

void write_tensor(const std::filesystem::path& path, const RawTensor& t) {
    const std::size_t count = t.element_count();
    const std::size_t have = t.dtype == RawTensor::DType::Float32 ? t.f32.size() : t.i32.size();
    if (have != count) throw ValidationError("tensor payload size does not match its dims");

    std::string buf(kMagic.begin(), kMagic.end());
    put_u32(buf, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(buf, d);
    buf.push_back(static_cast<char>(t.dtype));
    buf.reserve(buf.size() + 4 * count);
    if (t.dtype == RawTensor::DType::Float32) {
        for (float f : t.f32) put_u32(buf, float_bits(f));
    } else {
        for (auto v : t.i32) put_u32(buf, static_cast<std::uint32_t>(v));
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw IoError("failed writing " + path.string());
}

RawTensor read_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    const std::string raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    const std::size_t size = raw.size();

    if (size < 12 || std::memcmp(raw.data(), kMagic.data(), kMagic.size()) != 0) {
        throw IoError(path.string() + ": not a TENSOR01 file");
    }
    RawTensor t;
    const std::uint32_t ndim = get_u32(p + 8);
    if (ndim == 0 || ndim > 8) throw IoError(path.string() + ": unsupported rank " + std::to_string(ndim));
    std::size_t pos = 12;
    if (size < pos + 4 * ndim + 1) throw IoError(path.string() + ": truncated header");
    for (std::uint32_t k = 0; k < ndim; ++k, pos += 4) t.dims.push_back(get_u32(p + pos));
    const std::uint8_t code = p[pos++];
    if (code > 1) throw IoError(path.string() + ": unknown dtype code " + std::to_string(code));
    t.dtype = static_cast<RawTensor::DType>(code);

    const std::size_t count = t.element_count();
    if (size != pos + 4 * count) throw IoError(path.string() + ": payload size does not match dims");
    if (t.dtype == RawTensor::DType::Float32) {
        t.f32.resize(count);
        for (std::size_t k = 0; k < count; ++k) t.f32[k] = bits_float(get_u32(p + pos + 4 * k));
    } else {
        t.i32.resize(count);
        for (std::size_t k = 0; k < count; ++k) t.i32[k] = static_cast<std::int32_t>(get_u32(p + pos + 4 * k));
    }
    return t;
}

void write_tensor(const std::filesystem::path& path, const ScalarImage& image) {
    write_tensor(path, from_doubles(dims_of(image.grid), image.data));
}

void write_tensor(const std::filesystem::path& path, const DisplacementField& field) {
    auto dims = dims_of(field.grid);
    dims.insert(dims.begin(), static_cast<std::uint32_t>(field.ndim()));
    write_tensor(path, from_doubles(std::move(dims), field.data));
}

void write_tensor(const std::filesystem::path& path, const SegmentationMap& seg) {
    RawTensor t;
    t.dims = dims_of(seg.grid);
    t.dtype = RawTensor::DType::Int32;
    t.i32 = seg.labels;
    write_tensor(path, t);
}

ScalarImage read_image(const std::filesystem::path& path, double spacing) {
    const RawTensor t = read_tensor(path);
    if (t.dtype != RawTensor::DType::Float32) throw IoError(path.string() + ": expected float32 image");
    ScalarImage img(grid_from(t.dims, spacing, path), std::vector<double>(t.f32.begin(), t.f32.end()));
    for (double v : img.data) {
        if (!std::isfinite(v)) throw IoError(path.string() + ": non-finite intensity");
    }
    return img;
}

DisplacementField read_field(const std::filesystem::path& path, double spacing) {
    const RawTensor t = read_tensor(path);
    if (t.dtype != RawTensor::DType::Float32) throw IoError(path.string() + ": expected float32 field");
    if (t.dims.size() < 3 || t.dims[0] != t.dims.size() - 1) {
        throw IoError(path.string() + ": field must have a leading component axis of extent D");
    }
    const std::vector<std::uint32_t> spatial(t.dims.begin() + 1, t.dims.end());
    DisplacementField f(grid_from(spatial, spacing, path), std::vector<double>(t.f32.begin(), t.f32.end()));
    for (double v : f.data) {
        if (!std::isfinite(v)) throw IoError(path.string() + ": non-finite displacement");
    }
    return f;
}

SegmentationMap read_labels(const std::filesystem::path& path, double spacing, int class_count) {
    const RawTensor t = read_tensor(path);
    if (t.dtype != RawTensor::DType::Int32) throw IoError(path.string() + ": expected int32 labels");
    try {
        return SegmentationMap(grid_from(t.dims, spacing, path), t.i32, class_count);
    } catch (const ValidationError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

} // namespace elastreg
