"""Explicit finite differences for dV/dt + (b + h(t)) . grad V = 1/2 Lap V on a periodic grid.

Advection is first-order upwind, diffusion the standard second difference.
The step is 0.4 * min(dx / A, dx^2 / d) with A the largest l1 norm of the
advection velocity over nodes and times; both ratios stay below 0.4, which
keeps every update a convex combination of old values (discrete maximum
principle) in any dimension.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .characteristics import SampledDrift, regularized_drift
from .errors import DomainError, StepSizeError
from .fields import DriftSpec, GridSpec, ScalarField, VectorField, sample_drift
from .mollify import MollifierSpec
from .stochastic import ExponentialSpec, zero_h

CFL = 0.4
MAX_STEPS = 5_000_000


@dataclass
class ParabolicRun:
    grid: GridSpec
    drift_label: str
    h: ExponentialSpec
    V0: ScalarField
    outputs: list[float]
    snapshots: list[ScalarField]
    dt: float
    times: np.ndarray                 # every step time, t_0 = 0 .. t_K
    energy: np.ndarray                # int V^2 at every step time
    dissipation: np.ndarray           # int |D+ V|^2 at every step time
    source: np.ndarray                # int div b V^2 at every step time
    gamma: np.ndarray                 # sup |div b| at every step time
    extremes: tuple[float, float] = (0.0, 0.0)
    step_sizes: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def at(self, t: float) -> ScalarField:
        for s, f in zip(self.outputs, self.snapshots):
            if np.isclose(s, t, rtol=0, atol=1e-12):
                return f
        raise DomainError(f"no snapshot at t = {t}")


def _shift(f: np.ndarray, k: int, axis: int) -> np.ndarray:
    return np.roll(f, k, axis=axis)


def forward_gradient_sq(grid: GridSpec, V: np.ndarray) -> np.ndarray:
    """sum_d |D+_d V|^2 per node."""
    return sum(((_shift(V, -1, a) - V) / grid.dx) ** 2 for a in range(grid.dim))


def _slot(t: float, T_mesh: float | None, N_mesh: int | None, K: int) -> int:
    if K == 1:
        return 0
    j = int(np.floor(t * N_mesh / T_mesh + 1e-9))
    return min(max(j, 0), K - 1)


def _h_at(h: ExponentialSpec, t: float, T: float) -> np.ndarray:
    if h.kind != "sampled":
        return h(t)[0]
    n = h.samples.shape[0]
    return h.samples[min(int(np.floor(t / T * n + 1e-9)), n - 1)]


def _as_sampled(drift, grid: GridSpec, T: float, mollifier: MollifierSpec | None) -> SampledDrift:
    if drift is None:
        return SampledDrift.from_fields([VectorField(grid, np.zeros((grid.dim,) + grid.shape))],
                                        label="zero")
    if isinstance(drift, SampledDrift):
        if drift.grid != grid:
            raise DomainError("drift and V0 live on different grids")
        return drift
    if isinstance(drift, VectorField):
        return SampledDrift.from_fields([drift])
    if isinstance(drift, DriftSpec):
        if mollifier is not None:
            return regularized_drift(drift, grid, mollifier, T, 256)
        if not drift.autonomous:
            raise DomainError("pass a SampledDrift for time-dependent tabulated drifts")
        return SampledDrift.from_fields([sample_drift(drift, grid, 0.0)], label=drift.kind)
    raise TypeError(f"unsupported drift type {type(drift).__name__}")


def parabolic_solve(V0: ScalarField, drift=None, h: ExponentialSpec | None = None, T: float = 1.0,
                    outputs: Sequence[float] | None = None, mollifier: MollifierSpec | None = None,
                    dt_max: float | None = None) -> ParabolicRun:
    """March V from V0 to every requested output time (default: T).

    ``drift`` may be a SampledDrift (used as is, so the same regularized
    field can feed a Monte-Carlo comparison), a node-sampled VectorField, a
    DriftSpec (sampled raw, or regularized when ``mollifier`` is given) or
    None for b = 0.
    """
    grid = V0.grid
    if not grid.periodic:
        raise DomainError("the parabolic solver works on periodic grids")
    h = zero_h(grid.dim, T) if h is None else h
    if h.d != grid.dim:
        raise DomainError("h and grid dimensions differ")
    outs = sorted(set(float(t) for t in (outputs if outputs is not None else [T])))
    if not outs or outs[0] < 0 or outs[-1] > T + 1e-12:
        raise DomainError("output times must lie in [0, T]")
    sd = _as_sampled(drift, grid, T, mollifier)
    K = sd.cvals.shape[0]
    d = grid.dim
    dx = grid.dx
    bvals = sd.cvals[:, :, : grid.size].reshape((K, d) + grid.shape)
    divs = sd.dvals.reshape((K,) + grid.shape)

    hs = np.linspace(0.0, T, 2049)
    hmax = np.max(np.abs(h(hs)), axis=0) if h.kind != "sampled" else np.max(np.abs(h.samples), axis=0)
    speed = float(np.max(np.sum(np.abs(bvals), axis=1) if d > 1 else np.abs(bvals[:, 0])))
    speed = max(speed + float(np.sum(hmax)), 0.0)
    if not np.isfinite(speed):
        raise StepSizeError("advection speed is not finite")
    limit = dx * dx / d
    if speed > 0:
        limit = min(limit, dx / speed)
    step = CFL * limit
    if dt_max is not None:
        step = min(step, dt_max)
    if not step > 0 or step < 1e-12 * max(T, 1.0) or (outs[-1] / step) > MAX_STEPS:
        raise StepSizeError(f"time step {step:.3e} is degenerate for horizon {outs[-1]}")

    shape3 = tuple(grid.shape) + (1,) * (3 - d)
    V = np.array(V0.values, dtype=float).reshape(shape3)
    nxt = np.empty_like(V)
    zero = np.zeros(shape3)
    b3 = [[bvals[j, a].reshape(shape3) if a < d else zero for a in range(3)] for j in range(K)]
    div3 = [np.ascontiguousarray(divs[j]).reshape(shape3) for j in range(K)]
    w = grid.cell_volume

    def record(j: int) -> None:
        e, g2, s2 = _kernels.energy_terms(V, div3[j], dx)
        energy.append(e * w)
        diss.append(g2 * w)
        src.append(s2 * w)
        gam.append(float(sd.div_sup[j]))

    times = [0.0]
    energy: list[float] = []
    diss: list[float] = []
    src: list[float] = []
    gam: list[float] = []
    record(0)
    snaps: list[ScalarField] = []
    steps: list[float] = []
    t = 0.0
    for t_out in outs:
        span = t_out - t
        nsteps = int(np.ceil(span / step - 1e-9)) if span > 0 else 0
        dt = span / nsteps if nsteps else 0.0
        for i in range(nsteps):
            tk = t + i * dt
            j = _slot(tk, sd.T, sd.N, K)
            hk = np.zeros(3)
            hk[:d] = _h_at(h, tk, T)
            bj = b3[j]
            _kernels.parabolic_step(V, bj[0], bj[1], bj[2], hk[0], hk[1], hk[2], dx, dt, nxt)
            V, nxt = nxt, V
            steps.append(dt)
            tk1 = t + (i + 1) * dt
            times.append(tk1)
            record(_slot(tk1, sd.T, sd.N, K))
        t = t_out
        times[-1] = t_out
        snaps.append(V0.with_values(V.reshape(grid.shape).copy(), t_out))
    if not np.all(np.isfinite(V)):
        raise StepSizeError("solution became non-finite")
    ext = (float(min(s.values.min() for s in snaps)), float(max(s.values.max() for s in snaps)))
    return ParabolicRun(grid, sd.label, h, V0, outs, snaps, step, np.array(times), np.array(energy),
                        np.array(diss), np.array(src), np.array(gam), ext, np.array(steps))


@dataclass(frozen=True)
class EnergyRow:
    t: float
    energy: float
    dissipation_integral: float
    source_integral: float
    balance_residual: float


def _left_integral(values: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Cumulative left-endpoint integral at every step time (0 at t = 0)."""
    return np.concatenate([[0.0], np.cumsum(values[:-1] * steps)])


def energy_series(run: ParabolicRun) -> list[EnergyRow]:
    """Energy balance int V^2(t) + int_0^t int |grad V|^2 - int V0^2 - int_0^t int div b V^2.

    Gradients are forward differences, time integrals left-endpoint sums over
    the solver's own steps; one row per output time.
    """
    D = _left_integral(run.dissipation, run.step_sizes)
    S = _left_integral(run.source, run.step_sizes)
    rows = []
    for t_out in run.outputs:
        k = int(np.argmin(np.abs(run.times - t_out)))
        res = run.energy[k] + D[k] - run.energy[0] - S[k]
        rows.append(EnergyRow(float(run.times[k]), float(run.energy[k]), float(D[k]), float(S[k]),
                              float(res)))
    return rows


@dataclass(frozen=True)
class GronwallReport:
    passed: bool
    constant: float
    energy_ratio_max: float
    dissipation_total: float
    bound_total: float
    violating_time: float | None
    lhs: float | None
    rhs: float | None


def gronwall_check(run: ParabolicRun, slack: float = 0.05, gamma: float | None = None) -> GronwallReport:
    """int V^2(t) <= exp(int_0^t gamma) int V0^2 (1 + slack) at every step,
    and int_0^T int |grad V|^2 bounded by the same constant at T.

    gamma defaults to the grid sup of |div b| per step; pass a number to
    use a known bound instead.
    """
    E0 = float(run.energy[0])
    gam = run.gamma if gamma is None else np.full(run.gamma.shape, float(gamma))
    G = _left_integral(gam, run.step_sizes)
    C = np.exp(G)
    bound = C * E0 * (1.0 + slack)
    viol = np.nonzero(run.energy > bound + 1e-300)[0]
    D = _left_integral(run.dissipation, run.step_sizes)
    ratio = float(np.max(run.energy / np.maximum(C * E0, 1e-300))) if E0 > 0 else 0.0
    if viol.size:
        k = int(viol[0])
        return GronwallReport(False, float(C[-1]), ratio, float(D[-1]), float(bound[-1]),
                              float(run.times[k]), float(run.energy[k]), float(bound[k]))
    if D[-1] > bound[-1]:
        return GronwallReport(False, float(C[-1]), ratio, float(D[-1]), float(bound[-1]),
                              float(run.times[-1]), float(D[-1]), float(bound[-1]))
    return GronwallReport(True, float(C[-1]), ratio, float(D[-1]), float(bound[-1]), None, None, None)


def gaussian_density(grid: GridSpec, variance: float, center: Sequence[float] | None = None) -> ScalarField:
    """Isotropic Gaussian density with the given per-axis variance."""
    c = np.zeros(grid.dim) if center is None else np.asarray(center, dtype=float)
    r2 = sum((m - c[a]) ** 2 for a, m in enumerate(grid.mesh()))
    vals = np.exp(-0.5 * r2 / variance) / (2.0 * np.pi * variance) ** (grid.dim / 2.0)
    return ScalarField(grid, vals)


def periodic_gaussian(grid: GridSpec, variance: float, center: Sequence[float] | None = None,
                      images: int = 3) -> ScalarField:
    """Gaussian density summed over periodic images: the heat kernel on the torus."""
    c = np.zeros(grid.dim) if center is None else np.asarray(center, dtype=float)
    period = 2.0 * grid.extent
    ax = grid.axis()
    factors = []
    for a in range(grid.dim):
        k = np.arange(-images, images + 1)[:, None]
        g1 = np.exp(-0.5 * (ax[None, :] - c[a] - k * period) ** 2 / variance).sum(axis=0)
        factors.append(g1 / np.sqrt(2.0 * np.pi * variance))
    vals = factors[0]
    for f in factors[1:]:
        vals = np.multiply.outer(vals, f)
    return ScalarField(grid, vals)
