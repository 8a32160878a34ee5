#ifndef FEDIRL_LSE_CORE_H
#define FEDIRL_LSE_CORE_H
#include <stddef.h>

/* out[i] = log sum_j exp((g[j] - c[i*m + j]) * inv), buf holds m doubles */
void lse_rows_core(const double *c, const double *g, double inv, ptrdiff_t n, ptrdiff_t m,
                   double *buf, double *out);

/* out[j] = log sum_i exp((f[i] - c[i*m + j]) * inv), mx holds m doubles */
void lse_cols_core(const double *c, const double *f, double inv, ptrdiff_t n, ptrdiff_t m,
                   double *mx, double *out);

#endif
