"""Benchmark objective functions with landscape metadata.

Every objective carries, next to its evaluation map, the constants used by
the diagnostic formulas elsewhere in the package: the minimizer ``v*`` and
infimum value, the inverse-continuity constants ``(eta, nu)`` with their
validity radius ``r0`` and farfield floor ``e_inf``, the local-Lipschitz
constants ``(l_e, gamma)``, and the growth constants ``c1..c4``.

For the stock objectives the inverse-continuity property holds globally
(``r0 = inf``), which makes the farfield floor vacuous; ``e_inf`` is then
stored as ``inf`` as well.  The Lipschitz and growth constants are
conservative analytic estimates, not fitted values; they only feed
diagnostic constants and are flagged as estimates in report output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, InvalidDimensionError

__all__ = ["ObjectiveSpec", "rastrigin", "quadratic", "by_name"]


@dataclass(frozen=True)
class ObjectiveSpec:
    """An objective together with its assumption metadata.

    ``eval`` accepts a single point of shape ``(dim,)`` or a batch of shape
    ``(n, dim)`` and returns a scalar or an ``(n,)`` array.  Instances are
    immutable and safe to evaluate concurrently.
    """

    name: str
    dim: int
    eval: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    minimizer: Optional[np.ndarray]
    e_under: float
    eta: float
    nu: float
    r0: float
    e_inf: float
    l_e: float
    gamma: float
    c1: float
    c2: float
    c3: float
    c4: float


def _check_dim(dim):
    if not isinstance(dim, (int, np.integer)) or dim < 1:
        raise InvalidDimensionError(f"dimension must be a positive integer, got {dim!r}")
    return int(dim)


def rastrigin(dim):
    """Separable Rastrigin objective E(v) = sum_k v_k^2 + 2.5 (1 - cos(2 pi v_k)).

    Global minimum 0 at the origin.  The quadratic minorant E(v) >= ||v||^2
    holds everywhere, so the inverse-continuity property holds globally with
    eta = 1 and nu = 1/2.  The Lipschitz constant is taken on [-10, 10] per
    coordinate and summed over coordinates; the growth constants come from
    the coordinate-wise bound e(x) <= 6 (1 + x^2), likewise summed.
    """
    dim = _check_dim(dim)

    def _eval(v):
        v = np.asarray(v, dtype=float)
        e = v * v + 2.5 * (1.0 - np.cos(2.0 * np.pi * v))
        return e.sum(axis=-1)

    minimizer = np.zeros(dim)
    minimizer.setflags(write=False)
    return ObjectiveSpec(
        name="rastrigin",
        dim=dim,
        eval=_eval,
        minimizer=minimizer,
        e_under=0.0,
        eta=1.0,
        nu=0.5,
        r0=math.inf,
        e_inf=math.inf,
        l_e=dim * (20.0 + 5.0 * math.pi),
        gamma=1.0,
        c1=2.0 + 10.0 * math.pi**2,
        c2=6.0 * dim,
        c3=1.0,
        c4=1.0,
    )


def quadratic(dim, center=None):
    """Shifted quadratic E(v) = ||v - center||_2^2 (center defaults to 0).

    Analytic test objective: the inverse-continuity property holds globally
    with equality (eta = 1, nu = 1/2).  The growth constants are written for
    a general center and reduce to the unit constants at center = 0; c1
    assumes the centered form (the dynamics are shift-equivariant).
    """
    dim = _check_dim(dim)
    if center is None:
        center = np.zeros(dim)
    center = np.asarray(center, dtype=float)
    if center.shape != (dim,):
        raise InvalidDimensionError(
            f"center has shape {center.shape}, expected ({dim},)"
        )
    center = center.copy()
    center.setflags(write=False)

    def _eval(v):
        v = np.asarray(v, dtype=float)
        d = v - center
        return (d * d).sum(axis=-1)

    cnorm = float(np.linalg.norm(center))
    return ObjectiveSpec(
        name="quadratic",
        dim=dim,
        eval=_eval,
        minimizer=center,
        e_under=0.0,
        eta=1.0,
        nu=0.5,
        r0=math.inf,
        e_inf=math.inf,
        l_e=1.0,
        gamma=1.0,
        c1=1.0,
        c2=(1.0 + cnorm) ** 2,
        c3=0.25,
        c4=max(1.0, 2.0 * cnorm),
    )


_BY_NAME = {"rastrigin": rastrigin, "quadratic": quadratic}


def by_name(name, dim, **kwargs):
    """Resolve an objective from its config-file name ("rastrigin", "quadratic")."""
    try:
        factory = _BY_NAME[name]
    except KeyError:
        raise ConfigError(f"unknown objective {name!r}; known: {sorted(_BY_NAME)}") from None
    return factory(dim, **kwargs)
