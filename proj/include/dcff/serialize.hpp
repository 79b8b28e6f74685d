#ifndef DCFF_SERIALIZE_HPP
#define DCFF_SERIALIZE_HPP

#include "dcff/config.hpp"
#include "dcff/trainer.hpp"

#include <string>

namespace dcff {

// Both files share one container: the magic line "DCFF1", a structured text
// header (kind, config echo, scalar fields, blob declarations), the line
// "end", then the declared blobs as little-endian 64-bit floats in
// declaration order (matrices column-major). Writes go through a temp file
// and a rename.

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void save_compact(const CompactModel& model, const std::string& path);
CompactModel load_compact(const std::string& path);

}  // namespace dcff

#endif  // DCFF_SERIALIZE_HPP
