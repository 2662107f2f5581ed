// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scalar type of every tensor. The library is built in float32; defining
// MCL_REAL_DOUBLE builds a float64 variant in its own inline namespace so
// both variants can be linked into one executable (used for tight
// finite-difference checks of the full objective).
#ifdef MCL_REAL_DOUBLE
#define MCL_BEGIN_NAMESPACE \
  namespace mcl {           \
  inline namespace f64 {
#else
#define MCL_BEGIN_NAMESPACE \
  namespace mcl {           \
  inline namespace f32 {
#endif
#define MCL_END_NAMESPACE \
  }                       \
  }

MCL_BEGIN_NAMESPACE

#ifdef MCL_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

MCL_END_NAMESPACE
