"""Pure numpy log-sum-exp reductions used by the Sinkhorn solvers.

Same contract as the compiled ``_lse`` extension:

    lse_rows(C, g, eps)[i] = log sum_j exp((g[j] - C[i, j]) / eps)
    lse_cols(C, f, eps)[j] = log sum_i exp((f[i] - C[i, j]) / eps)
"""
import numpy as np


def lse_rows(C, g, eps):
    a = (g[None, :] - C) / eps
    m = a.max(axis=1)
    m[~np.isfinite(m)] = 0.0
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def lse_cols(C, f, eps):
    a = (f[:, None] - C) / eps
    m = a.max(axis=0)
    m[~np.isfinite(m)] = 0.0
    return m + np.log(np.exp(a - m[None, :]).sum(axis=0))
