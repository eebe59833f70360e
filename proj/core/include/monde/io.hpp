#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "monde/models.hpp"

namespace monde {

inline constexpr int kModelFormatVersion = 1;

/// 64-bit FNV-1a hash.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Model file text: a header line "MONDE-MODEL <version> <checksum> <bytes>"
/// followed by a JSON payload holding the model spec, parameters, standardization
/// and extra state. Doubles are written with round-trip precision.
std::string serialize_model(const DensityModel& model);
/// Throws FormatError (bad header, version, payload) or ChecksumFailure.
/// With `expected`, a model of another family raises FamilyMismatch.
std::unique_ptr<DensityModel> deserialize_model(const std::string& text, std::optional<Family> expected = {});

/// Writes atomically via a temporary file. Throws IoError.
void save_model(const DensityModel& model, const std::string& path);
std::unique_ptr<DensityModel> load_model(const std::string& path, std::optional<Family> expected = {});

}  // namespace monde
