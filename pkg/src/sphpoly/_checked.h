/* Bounds-checked integer helpers for the accumulation kernel.
 *
 * Every helper returns non-zero when the exact result leaves [lo, hi]. The
 * 64-bit helpers also serve the 32-bit width: operands are always within
 * int32 range then, so the int64 result is exact and only the range test
 * matters.
 */
#ifndef SPHPOLY_CHECKED_H
#define SPHPOLY_CHECKED_H

#include <stdint.h>

typedef __int128 sp_i128;

static inline int sp_add64(int64_t a, int64_t b, int64_t lo, int64_t hi, int64_t *out)
{
    int64_t r;
    if (__builtin_add_overflow(a, b, &r)) return 1;
    if (r < lo || r > hi) return 1;
    *out = r;
    return 0;
}

static inline int sp_mul64(int64_t a, int64_t b, int64_t lo, int64_t hi, int64_t *out)
{
    int64_t r;
    if (__builtin_mul_overflow(a, b, &r)) return 1;
    if (r < lo || r > hi) return 1;
    *out = r;
    return 0;
}

static inline int sp_add128(sp_i128 a, sp_i128 b, sp_i128 *out)
{
    return __builtin_add_overflow(a, b, out);
}

static inline int sp_mul128(sp_i128 a, sp_i128 b, sp_i128 *out)
{
    return __builtin_mul_overflow(a, b, out);
}

static inline sp_i128 sp_make128(int64_t hi, uint64_t lo)
{
    return (sp_i128)(((unsigned __int128)(uint64_t)hi << 64) | (unsigned __int128)lo);
}

static inline int64_t sp_hi128(sp_i128 v)
{
    return (int64_t)(v >> 64);
}

static inline uint64_t sp_lo128(sp_i128 v)
{
    return (uint64_t)v;
}

#endif
