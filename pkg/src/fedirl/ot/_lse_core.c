/* Log-sum-exp reductions over a dense row-major cost matrix.
 *
 * Built with fast-math so the exp loops vectorize through libmvec. Inputs
 * must be finite; the Python side checks potentials after every sweep.
 */
#include <math.h>
#include "_lse_core.h"

#define LOW (-1e300)

void lse_rows_core(const double *restrict c, const double *restrict g, double inv, ptrdiff_t n, ptrdiff_t m,
                   double *restrict buf, double *restrict out)
{
    for (ptrdiff_t i = 0; i < n; i++) {
        const double *restrict row = c + i * m;
        double mx = LOW;
        for (ptrdiff_t j = 0; j < m; j++) {
            buf[j] = (g[j] - row[j]) * inv;
            mx = fmax(mx, buf[j]);
        }
        double acc = 0.0;
        for (ptrdiff_t j = 0; j < m; j++)
            acc += exp(buf[j] - mx);
        out[i] = mx + log(acc);
    }
}

void lse_cols_core(const double *restrict c, const double *restrict f, double inv, ptrdiff_t n, ptrdiff_t m,
                   double *restrict mx, double *restrict out)
{
    /* row sweeps keep memory access contiguous; out doubles as the accumulator */
    for (ptrdiff_t j = 0; j < m; j++) {
        mx[j] = LOW;
        out[j] = 0.0;
    }
    for (ptrdiff_t i = 0; i < n; i++) {
        const double *restrict row = c + i * m;
        const double fi = f[i];
        for (ptrdiff_t j = 0; j < m; j++)
            mx[j] = fmax(mx[j], (fi - row[j]) * inv);
    }
    for (ptrdiff_t i = 0; i < n; i++) {
        const double *restrict row = c + i * m;
        const double fi = f[i];
        for (ptrdiff_t j = 0; j < m; j++)
            out[j] += exp((fi - row[j]) * inv - mx[j]);
    }
    for (ptrdiff_t j = 0; j < m; j++)
        out[j] = mx[j] + log(out[j]);
}
