#pragma once

#include <string>

namespace ec2lab::util {

// Writes via a sibling temp file and renames into place, so readers never see
// a half-written file and a crashed run never leaves a corrupt artifact.
void atomic_write(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);  // throws if missing
bool file_exists(const std::string& path);
void ensure_parent_dir(const std::string& path);

}  // namespace ec2lab::util
