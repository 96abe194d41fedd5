#include <fedbatch/heap_probe.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fedbatch {

std::size_t heap_in_use() {
#if defined(__GLIBC__) && (__GLIBC__ > 2 || (__GLIBC__ == 2 && __GLIBC_MINOR__ >= 33))
  const struct mallinfo2 info = mallinfo2();
  return info.uordblks + info.hblkhd;
#else
  return 0;
#endif
}

bool heap_probe_available() {
#if defined(__GLIBC__) && (__GLIBC__ > 2 || (__GLIBC__ == 2 && __GLIBC_MINOR__ >= 33))
  return true;
#else
  return false;
#endif
}

}  // namespace fedbatch
