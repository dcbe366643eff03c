"""Shared builders for randomized test instances."""

from __future__ import annotations

import numpy as np

from dfmap.model import ModelOrder, Panel, Theta


def random_theta(rng: np.random.Generator, order: ModelOrder,
                 phi_scale: float = 0.3) -> Theta:
    return Theta(
        Lambda=rng.standard_normal((order.n, order.loading_dim)),
        Phi=phi_scale * rng.standard_normal((order.r, order.var_dim)),
        psi=rng.uniform(0.3, 3.0, order.n),
        omega=rng.uniform(0.3, 3.0, order.r),
    )


def random_panel(rng: np.random.Generator, n: int, T: int,
                 missing: float = 0.0) -> Panel:
    values = rng.standard_normal((n, T))
    mask = rng.random((n, T)) >= missing
    return Panel.of(np.where(mask, values, np.nan), mask)


def random_instance(rng: np.random.Generator, n_max: int = 3, T_max: int = 8,
                    r_max: int = 2, p_max: int = 1, q_max: int = 2,
                    missing: float | None = None):
    """A random small model/panel pair for oracle-style comparisons."""
    order = ModelOrder(
        n=int(rng.integers(1, n_max + 1)),
        r=int(rng.integers(1, r_max + 1)),
        p=int(rng.integers(0, p_max + 1)),
        q=int(rng.integers(1, q_max + 1)),
    )
    theta = random_theta(rng, order)
    T = int(rng.integers(1, T_max + 1))
    frac = float(rng.uniform(0.0, 0.6)) if missing is None else missing
    panel = random_panel(rng, order.n, T, missing=frac)
    sigma0 = float(rng.uniform(10.0, 1000.0))
    return order, theta, panel, sigma0
