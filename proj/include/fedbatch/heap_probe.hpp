#pragma once

#include <cstddef>

namespace fedbatch {

/// Bytes currently allocated through malloc (arena + mmapped chunks), or 0
/// when the C library offers no way to query it.
std::size_t heap_in_use();

/// True when heap_in_use() reports real numbers on this platform.
bool heap_probe_available();

}  // namespace fedbatch
