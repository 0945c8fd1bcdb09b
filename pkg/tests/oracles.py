"""Independent reference computations used by the test suite.

Nothing here calls into the compiled min-plus routines: products are numpy
broadcasts, closures are Floyd–Warshall, cycle means come from matrix powers,
and separatrix integrals come from scipy quadrature.
"""
import math

import numpy as np
from scipy.integrate import quad


def mp_product(a, b):
    return np.min(a[:, :, None] + b[None, :, :], axis=1)


def mp_power(a, n):
    out = a
    for _ in range(n - 1):
        out = mp_product(out, a)
    return out


def floyd_warshall(w):
    """Shortest paths with at least one edge: closure of ``w`` under concatenation."""
    d = w.copy()
    n = d.shape[0]
    for k in range(n):
        d = np.minimum(d, d[:, k : k + 1] + d[k : k + 1, :])
    return d


def min_cycle_mean_bruteforce(w):
    """min over k <= n of min_i (W^k)_ii / k: every simple cycle has length <= n."""
    n = w.shape[0]
    best = math.inf
    p = w.copy()
    for k in range(1, n + 1):
        if k > 1:
            p = mp_product(p, w)
        best = min(best, float(np.min(np.diag(p))) / k)
    return best


def free_kernel_closed_form(n, mrange=3):
    """min over m of (Δ + m)²/2 for V ≡ 0, c = 0 over one period."""
    x = np.arange(n) / n
    d = x[None, :] - x[:, None]
    return np.min([(d + m) ** 2 / 2 for m in range(-mrange, mrange + 1)], axis=0)


def grid_quantization_excess(n, k):
    """Extra cost of splitting a displacement of ``j`` cells into ``k`` whole-cell substeps."""
    j = np.arange(n)
    out = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            best = math.inf
            for m in range(-2, 3):
                cells = b - a + m * n
                q, r = divmod(abs(cells), k)
                cost = (k * q * q + 2 * q * r + r) * k / (2 * n * n)
                best = min(best, cost)
            out[a, b] = best
    return out


def separatrix_speed(s):
    """|v| on the pendulum separatrix for V = cos 2πx at energy max V = 1."""
    return math.sqrt(2.0 * (1.0 - math.cos(2 * math.pi * s)))


def separatrix_action(a, b):
    """Critical action ∫_a^b |v| ds along the separatrix, by quadrature."""
    val, _ = quad(separatrix_speed, a, b, limit=200)
    return val


def pendulum_phi_closed(x):
    """(2/π)(1 - cos πx): the antiderivative of 2 sin πs on [0, 1]."""
    return 2.0 / math.pi * (1.0 - math.cos(math.pi * x))
