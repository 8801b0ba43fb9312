"""Mean-field approximation harness.

Quantifies how fast the interacting particle system approaches its
mean-field limit by coupling: for each replication, the interacting system
and a surrogate mean-field system evolve from identical initial data with
bitwise-identical Gaussian increments, the surrogate using a frozen
consensus trajectory from one large reference run in place of its own
empirical consensus.  The per-particle sup over time of the squared gap is
aggregated over replications and its scaling in the particle count is
fitted on a log-log grid (the theory predicts order 1/N, conditional on a
bounded fourth-moment event).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import engine, objectives
from ._parallel import thread_map
from .errors import InvalidInputError
from .metrics import moment4_stat

__all__ = [
    "CouplingRun",
    "ReferenceTrajectory",
    "reference_consensus_trajectory",
    "coupled_error",
    "mfa_sweep",
    "MfaSweepResult",
    "fit_loglog_slope",
    "default_sweep_setup",
]


@dataclass(frozen=True)
class CouplingRun:
    """Coupled-gap statistics for one particle count.

    ``err_sup`` is the max over particles of the replication-averaged sup
    over time of the squared gap; ``err_sup_conditional`` restricts the
    average to replications whose fourth-moment statistic stays below
    ``m_threshold`` (NaN when every replication exceeds it).
    """

    n: int
    n_ref: int
    seeds: tuple
    err_sup: float
    err_sup_conditional: float
    m_threshold: float
    exceed_fraction: float


@dataclass
class ReferenceTrajectory:
    """Consensus path of one large reference run, standing in for the
    mean-field consensus; carries the run's own fourth-moment sup for
    threshold calibration."""

    points: np.ndarray  # (steps + 1, dim)
    moment4_sup: float
    n_ref: int


def reference_consensus_trajectory(dist, obj, params):
    """Run one large-N simulation and record the consensus point at every
    step (including t = 0); deterministic given the seed in ``params``."""
    ens = engine.sample_initial(dist, params.n_particles, params.dim, params.seed)
    noise = engine.NoiseSource(params.seed)
    points = [engine.consensus_point(ens, obj, params.alpha)]
    m4 = moment4_stat(ens)
    for _ in range(params.steps):
        ens = engine.cbo_step(ens, obj, params, noise)
        points.append(engine.consensus_point(ens, obj, params.alpha))
        m4 = max(m4, moment4_stat(ens))
    return ReferenceTrajectory(np.asarray(points), m4, params.n_particles)


def _traj_points(ref_traj):
    return ref_traj.points if isinstance(ref_traj, ReferenceTrajectory) else np.asarray(ref_traj)


def _one_replication(dist, obj, params, points, seed):
    n, d = params.n_particles, params.dim
    init = engine.sample_initial(dist, n, d, seed)
    sys_a = engine.Ensemble(init.positions.copy(), 0.0)
    sys_b = engine.Ensemble(init.positions.copy(), 0.0)
    noise = engine.NoiseSource(seed)
    sup_gap = np.zeros(n)
    sup_m4 = moment4_stat(sys_a, sys_b)
    for k in range(params.steps):
        inc = noise.increments(k, n, d, params.dt)
        sys_a = engine.cbo_step(sys_a, obj, params, increments=inc)
        sys_b = engine.cbo_step(sys_b, obj, params, increments=inc, consensus=points[k])
        gap = sys_a.positions - sys_b.positions
        np.maximum(sup_gap, (gap * gap).sum(axis=1), out=sup_gap)
        sup_m4 = max(sup_m4, moment4_stat(sys_a, sys_b))
    return sup_gap, sup_m4


def coupled_error(dist, obj, params, ref_traj, seeds, m_threshold):
    """Couple the interacting system against the frozen reference consensus.

    Per seed, both systems share the initial ensemble and the Brownian
    increments; system (a) uses its own empirical consensus, system (b) the
    reference trajectory entry of the same step.  Replications whose sup of
    the coupled fourth-moment statistic exceeds ``m_threshold`` are counted
    in ``exceed_fraction`` and excluded from the conditional error.
    """
    points = _traj_points(ref_traj)
    if len(points) != params.steps + 1:
        raise InvalidInputError(
            f"reference trajectory has {len(points)} entries, expected steps+1 = "
            f"{params.steps + 1}"
        )
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise InvalidInputError("need at least one replication seed")
    results = thread_map(
        lambda s: _one_replication(dist, obj, params, points, s), seeds
    )
    sups = np.stack([gap for gap, _ in results])          # (n_seeds, n)
    exceeds = np.array([m4 > m_threshold for _, m4 in results])
    err_sup = float(sups.mean(axis=0).max())
    if np.all(exceeds):
        err_cond = float("nan")
    else:
        err_cond = float(sups[~exceeds].mean(axis=0).max())
    n_ref = ref_traj.n_ref if isinstance(ref_traj, ReferenceTrajectory) else 0
    return CouplingRun(
        n=params.n_particles,
        n_ref=n_ref,
        seeds=seeds,
        err_sup=err_sup,
        err_sup_conditional=err_cond,
        m_threshold=float(m_threshold),
        exceed_fraction=float(exceeds.mean()),
    )


def fit_loglog_slope(ns, errs):
    """Least-squares slope of log err against log n."""
    ns = np.asarray(ns, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if ns.size != errs.size or ns.size < 2:
        raise InvalidInputError("need matching n/err arrays with >= 2 entries")
    if np.any(ns <= 0) or np.any(errs <= 0):
        raise InvalidInputError("log-log fit needs positive n and err values")
    x = np.log(ns)
    y = np.log(errs)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def default_sweep_setup(seed=11):
    """Reference configuration of the 1-D quadratic scaling experiment:
    moderate weight exponent so the consensus varies smoothly with the
    sample, one time unit of dynamics, 32 replication seeds."""
    obj = objectives.quadratic(1)
    dist = engine.GaussianIsotropic((1.0,), 1.0)
    params = engine.CboParams(
        lam=1.0, sigma=0.5, alpha=2.0, dt=0.01, steps=100,
        n_particles=50, dim=1, seed=seed,
    )
    n_values = (50, 100, 200, 400, 800)
    seeds = tuple(seed + 1 + i for i in range(32))
    return dist, obj, params, n_values, 10_000, seeds


@dataclass
class MfaSweepResult:
    runs: list
    slope: float
    m_threshold: float
    reference: ReferenceTrajectory


def mfa_sweep(dist, obj, params, n_values, n_ref, seeds, m_factor=10.0):
    """Reference run once, coupled error per particle count, log-log slope.

    ``params.n_particles`` is overridden per run.  The conditioning
    threshold defaults to ``m_factor`` times the reference run's observed
    fourth-moment sup.
    """
    n_values = [int(n) for n in n_values]
    if len(n_values) < 3:
        raise InvalidInputError(f"need >= 3 particle counts, got {len(n_values)}")
    if n_ref < 10 * max(n_values):
        raise InvalidInputError(
            f"n_ref = {n_ref} must be >= 10x the largest experiment size "
            f"{max(n_values)}"
        )
    ref = reference_consensus_trajectory(dist, obj, replace(params, n_particles=n_ref))
    m_threshold = m_factor * ref.moment4_sup
    runs = thread_map(
        lambda n: coupled_error(
            dist, obj, replace(params, n_particles=n), ref, seeds, m_threshold
        ),
        n_values,
    )
    slope = fit_loglog_slope(n_values, [run.err_sup for run in runs])
    return MfaSweepResult(runs=runs, slope=slope, m_threshold=m_threshold, reference=ref)
