#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "elastreg/grid.hpp"

namespace elastreg {

/// ".ten" container: "TENSOR01", u32 ndim, ndim x u32 dims (row-major),
/// u8 dtype (0 = f32, 1 = i32), then the payload. All little-endian.
/// Fields are stored with a leading component axis of extent D.
struct RawTensor {
    enum class DType : std::uint8_t { Float32 = 0, Int32 = 1 };

    std::vector<std::uint32_t> dims;
    DType dtype = DType::Float32;
    std::vector<float> f32;
    std::vector<std::int32_t> i32;

    std::size_t element_count() const;
};

void write_tensor(const std::filesystem::path& path, const RawTensor& t);
RawTensor read_tensor(const std::filesystem::path& path);

void write_tensor(const std::filesystem::path& path, const ScalarImage& image);
void write_tensor(const std::filesystem::path& path, const DisplacementField& field);
void write_tensor(const std::filesystem::path& path, const SegmentationMap& seg);

ScalarImage read_image(const std::filesystem::path& path, double spacing = 1.0);
DisplacementField read_field(const std::filesystem::path& path, double spacing = 1.0);
/// class_count < 0 infers C from the largest label.
SegmentationMap read_labels(const std::filesystem::path& path, double spacing = 1.0, int class_count = -1);

} // namespace elastreg
