#pragma once

#include "fme/model.hpp"

#include <iosfwd>
#include <string>

namespace fme {

/// Versioned key-value text document. One entry per line: a key followed by
/// space-separated values; doubles carry 17 significant digits so a
/// write/read round trip reproduces every parameter bit for bit.
inline constexpr const char* kModelFormatTag = "fme-model";
inline constexpr int kModelFormatVersion = 1;

void write_model(std::ostream& out, const FmeModel& model);
FmeModel read_model(std::istream& in);

void save_model(const std::string& path, const FmeModel& model);
FmeModel load_model(const std::string& path);

}  // namespace fme
