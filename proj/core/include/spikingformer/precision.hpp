#pragma once

// Scalar type selection. The library is compiled once per precision; each
// build places its symbols in its own inline namespace so that an f32 and an
// f64 build can be linked into the same binary.

#if defined(SPKF_REAL_DOUBLE)
#define SPKF_PRECISION_NS f64
#else
#define SPKF_PRECISION_NS f32
#endif

#define SPKF_NAMESPACE_BEGIN \
  namespace spkf {           \
  inline namespace SPKF_PRECISION_NS {
#define SPKF_NAMESPACE_END \
  }                        \
  }

SPKF_NAMESPACE_BEGIN

#if defined(SPKF_REAL_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

SPKF_NAMESPACE_END
