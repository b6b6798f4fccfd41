import math

import numpy as np
import pytest
from hypothesis import strategies as st

from ocbau.rate import PairParams

EXAMPLE = PairParams(0.0, 1.0, 10.0, 1.0)


@pytest.fixture
def example_pair():
    return EXAMPLE


@st.composite
def pair_params(draw):
    """Random oriented pairs with gaps and variances spanning three decades."""
    mu_i = draw(st.floats(-20.0, 20.0))
    gap = 10.0 ** draw(st.floats(-1.0, 1.5))
    var_i = 10.0 ** draw(st.floats(-1.5, 1.5))
    var_star = 10.0 ** draw(st.floats(-1.5, 1.5))
    return PairParams(mu_i, var_i, mu_i + gap, var_star)


def random_pairs(n, seed):
    """Seeded stand-in for ``pair_params`` where a plain loop reads better."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        mu_i = rng.uniform(-20, 20)
        gap = 10.0 ** rng.uniform(-1.0, 1.5)
        out.append(PairParams(mu_i, 10.0 ** rng.uniform(-1.5, 1.5), mu_i + gap, 10.0 ** rng.uniform(-1.5, 1.5)))
    return out


def _g_grid(p, r, phi):
    return r * np.log1p((p.mu_i - phi) ** 2 / p.var_i) + np.log1p((p.mu_star - phi) ** 2 / p.var_star)


def grid_min_g(p, r, points=100_001):
    """Brute-force min over phi in [mu_i, mu_star] of the inner objective.

    A uniform grid, then a second uniform grid of the same size spanning
    two cells around every local minimum of the first, so sharply curved
    cases are resolved too.
    """
    phi = np.linspace(p.mu_i, p.mu_star, points)
    g = _g_grid(p, r, phi)
    h = phi[1] - phi[0]
    interior = np.flatnonzero((g[1:-1] <= g[:-2]) & (g[1:-1] <= g[2:])) + 1
    cands = set(interior.tolist()) | {0, points - 1}
    best_g, best_phi = math.inf, math.nan
    for j in cands:
        fine = np.clip(np.linspace(phi[j] - h, phi[j] + h, points), p.mu_i, p.mu_star)
        gf = _g_grid(p, r, fine)
        m = int(np.argmin(gf))
        if gf[m] < best_g:
            best_g, best_phi = float(gf[m]), float(fine[m])
    return best_g, best_phi


def log_term_slope(phi, mu, var):
    """d/dphi of log(1 + (mu - phi)^2 / var)."""
    return 2.0 * (phi - mu) / (var + (phi - mu) ** 2)


def eta(b, p):
    return (max(p.var_i, p.var_star) + p.gap ** 2) / (b * min(p.var_i, p.var_star))


SQRT24 = math.sqrt(24.0)
