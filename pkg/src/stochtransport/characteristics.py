"""Characteristics of the regularized transport problem.

A single Brownian path drives every starting point.  The forward map is
Euler-Maruyama, the inverse map is the backward recursion that uses the
same increments, and the transported field is the initial datum read off at
the departure points.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import BlowupError, DomainError, MeshError
from .fields import (DriftSpec, GridSpec, ScalarField, VectorField, centered_divergence, norms)
from .mollify import MollifierSpec, regularize_drift
from .stochastic import BrownianPath


@dataclass(frozen=True)
class SampledDrift:
    """A drift tabulated on a grid, ready for the compiled kernels.

    ``cvals`` has shape (K, d, S): K == 1 for autonomous drifts, otherwise
    K == N + 1 slices at the mesh times j*T/N.  ``cshape``/``clo`` give each
    component's table layout (node-centred or staggered).  ``dvals`` holds
    the divergence on the node grid with one slice per time slot and
    ``div_sup`` its sup norm per slot.
    """

    grid: GridSpec
    cvals: np.ndarray
    cshape: np.ndarray
    clo: np.ndarray
    dvals: np.ndarray
    div_sup: np.ndarray
    T: float | None = None
    N: int | None = None
    label: str = ""

    @property
    def autonomous(self) -> bool:
        return self.cvals.shape[0] == 1

    def check_mesh(self, T: float, N: int) -> None:
        if self.autonomous:
            return
        if self.N != N or not np.isclose(self.T, T):
            raise MeshError(f"drift sampled on {self.N} steps over [0, {self.T}], path has {N} over [0, {T}]")

    def gamma(self, N: int) -> np.ndarray:
        """sup |div b(t_k, .)| for k = 0..N-1 (left endpoints)."""
        if self.div_sup.size == 1:
            return np.full(N, float(self.div_sup[0]))
        return np.asarray(self.div_sup[:N], dtype=float)

    def gamma_integral(self, k_end: int, dt: float) -> float:
        return float(np.sum(self.gamma(max(k_end, 1))[:k_end]) * dt)

    def field_at(self, j: int = 0) -> VectorField:
        """Node-centred slice j as a VectorField (only for node-centred layouts)."""
        g = self.grid
        j = min(j, self.cvals.shape[0] - 1)
        return VectorField(g, self.cvals[j, :, : g.size].reshape((g.dim,) + g.shape))

    @classmethod
    def from_fields(cls, fields: Sequence[VectorField], T: float | None = None, N: int | None = None,
                    label: str = "") -> SampledDrift:
        """Node-centred tables, one field (autonomous) or N + 1 fields at mesh times."""
        fields = list(fields)
        g = fields[0].grid
        if len(fields) > 1 and (N is None or len(fields) != N + 1):
            raise MeshError("time-dependent drift needs N + 1 slices")
        cvals = np.stack([f.values.reshape(g.dim, -1) for f in fields])
        dvals = np.stack([centered_divergence(g, f.values).ravel() for f in fields])
        shape, lo = g.table_layout()
        cshape = np.tile(shape, (g.dim, 1))
        clo = np.tile(lo, (g.dim, 1))
        sup = np.max(np.abs(dvals), axis=1)
        return cls(g, np.ascontiguousarray(cvals), cshape, clo, np.ascontiguousarray(dvals), sup,
                   T, N, label)


def regularized_drift(spec: DriftSpec, grid: GridSpec, mollifier: MollifierSpec, T: float = 1.0,
                      N: int = 256) -> SampledDrift:
    """Mollify and tabulate b; time-dependent drifts get one slice per mesh time."""
    if spec.autonomous:
        fields = [regularize_drift(spec, grid, mollifier, 0.0)]
    else:
        fields = [regularize_drift(spec, grid, mollifier, min(j * T / N, spec.horizon))
                  for j in range(N + 1)]
    return SampledDrift.from_fields(fields, T, N, label=spec.kind)


@dataclass(frozen=True)
class FlowField:
    """Images of points under the forward flow or its inverse at time t."""

    grid: GridSpec
    t: float
    positions: np.ndarray
    path_seed: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class JacobianField:
    grid: GridSpec
    t: float
    log_jacobian: np.ndarray


def _points(grid: GridSpec, x0: np.ndarray | None) -> np.ndarray:
    if x0 is None:
        return grid.nodes()
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(x0, dtype=float)))
    if pts.shape[1] != grid.dim:
        raise DomainError("points have the wrong dimension")
    return pts


def _incr3(incr: np.ndarray) -> np.ndarray:
    """Pad increments to 3 components so the kernels can index them uniformly."""
    P, N, d = incr.shape
    if d == 3:
        return np.ascontiguousarray(incr)
    out = np.zeros((P, N, 3))
    out[:, :, :d] = incr
    return out


def _run_inverse(drift: SampledDrift, incr: np.ndarray, dt: float, k_end: int, points: np.ndarray,
                 sigma: float, reflect: bool) -> tuple[np.ndarray, np.ndarray]:
    g = drift.grid
    return _kernels.inverse_flow_batch(drift.cvals, drift.cshape, drift.clo, g.dx, g.periodic,
                                       _incr3(incr), dt, k_end, float(sigma),
                                       np.ascontiguousarray(points), g.extent, reflect)


def _run_forward(drift: SampledDrift, incr: np.ndarray, dt: float, k_end: int, points: np.ndarray,
                 sigma: float, reflect: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    g = drift.grid
    shape, lo = g.table_layout()
    return _kernels.forward_flow_batch(drift.cvals, drift.cshape, drift.clo, drift.dvals, shape, lo,
                                       g.dx, g.periodic, _incr3(incr), dt, k_end, float(sigma),
                                       np.ascontiguousarray(points), g.extent, reflect)


def _reflect_default(grid: GridSpec, reflect: bool | None) -> bool:
    return (not grid.periodic) if reflect is None else bool(reflect)


def departure_points(drift: SampledDrift, incr: np.ndarray, T: float, k_end: int,
                     points: np.ndarray | None = None, sigma: float = 1.0,
                     reflect: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Inverse flow for a batch of increments (P, N, d) up to step k_end."""
    N = incr.shape[1]
    drift.check_mesh(T, N)
    pts = _points(drift.grid, points)
    return _run_inverse(drift, incr, T / N, k_end, pts, sigma, _reflect_default(drift.grid, reflect))


def forward_batch(drift: SampledDrift, incr: np.ndarray, T: float, k_end: int,
                  points: np.ndarray | None = None, sigma: float = 1.0,
                  reflect: bool | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward flow for a batch of increments: (positions, log-Jacobians, failed)."""
    N = incr.shape[1]
    drift.check_mesh(T, N)
    pts = _points(drift.grid, points)
    return _run_forward(drift, incr, T / N, k_end, pts, sigma, _reflect_default(drift.grid, reflect))


def transport_batch(u0: ScalarField, drift: SampledDrift, incr: np.ndarray, T: float, k_end: int,
                    sigma: float = 1.0, reflect: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """u(t_k, x_i) for every path in the batch: (values (P, n^d), failed (P,))."""
    Y, bad = departure_points(drift, incr, T, k_end, None, sigma, reflect)
    g = u0.grid
    shape, lo = g.table_layout()
    vals = _kernels.sample_batch(np.ascontiguousarray(u0.values).ravel(), shape, lo, g.dx,
                                 g.periodic, Y)
    return vals, bad


def _single(path: BrownianPath, drift: SampledDrift, t: float) -> tuple[np.ndarray, int]:
    if path.d != drift.grid.dim:
        raise DomainError("path and drift dimensions differ")
    drift.check_mesh(path.T, path.N)
    return np.asarray(path.increments)[None], path.step_index(t)


def forward_flow(drift: SampledDrift, path: BrownianPath, t: float, x0: np.ndarray | None = None,
                 sigma: float = 1.0, reflect: bool | None = None) -> FlowField:
    """Euler-Maruyama images of x0 (default: all nodes) at time t."""
    incr, k = _single(path, drift, t)
    pts = _points(drift.grid, x0)
    X, _, bad = _run_forward(drift, incr, path.dt, k, pts, sigma, _reflect_default(drift.grid, reflect))
    if bad[0]:
        raise BlowupError("forward characteristics left the admissible region")
    return FlowField(drift.grid, t, X[0], (path.seed, path.index))


def inverse_flow(drift: SampledDrift, path: BrownianPath, t: float, x: np.ndarray | None = None,
                 sigma: float = 1.0, reflect: bool | None = None) -> FlowField:
    """Departure points Y_0 of the backward recursion started from x (default: nodes)."""
    incr, k = _single(path, drift, t)
    pts = _points(drift.grid, x)
    Y, bad = _run_inverse(drift, incr, path.dt, k, pts, sigma, _reflect_default(drift.grid, reflect))
    if bad[0]:
        raise BlowupError("backward characteristics left the admissible region")
    return FlowField(drift.grid, t, Y[0], (path.seed, path.index))


def sample_at(u: ScalarField, points: np.ndarray) -> np.ndarray:
    g = u.grid
    shape, lo = g.table_layout()
    pts = np.ascontiguousarray(np.atleast_2d(points))
    return _kernels.sample_points(np.ascontiguousarray(u.values).ravel(), shape, lo, g.dx,
                                  g.periodic, pts)


def transport_solve(u0: ScalarField, drift: SampledDrift, path: BrownianPath, t: float,
                    sigma: float = 1.0, reflect: bool | None = None) -> ScalarField:
    """u(t, x_i) = u0(Y_0(x_i)) by multilinear interpolation."""
    if u0.grid != drift.grid:
        raise DomainError("u0 and drift live on different grids")
    flow = inverse_flow(drift, path, t, None, sigma, reflect)
    return u0.with_values(sample_at(u0, flow.positions), t)


def jacobian_log(drift: SampledDrift, path: BrownianPath, t: float, sigma: float = 1.0,
                 reflect: bool | None = None) -> JacobianField:
    """Left-point quadrature of div b along forward trajectories from every node."""
    incr, k = _single(path, drift, t)
    pts = drift.grid.nodes()
    _, logj, bad = _run_forward(drift, incr, path.dt, k, pts, sigma, _reflect_default(drift.grid, reflect))
    if bad[0]:
        raise BlowupError("forward characteristics left the admissible region")
    return JacobianField(drift.grid, t, logj[0].reshape(drift.grid.shape))


@dataclass(frozen=True)
class L2BoundReport:
    lhs: float
    rhs: float
    constant: float
    gamma_integral: float
    slack: float
    passed: bool


def l2_bound_check(u0: ScalarField, drift: SampledDrift, path: BrownianPath, t: float,
                   sigma: float = 1.0, slack: float = 0.05) -> L2BoundReport:
    """Check int u(t)^2 <= exp(int gamma) int u0^2 with relative slack."""
    u = transport_solve(u0, drift, path, t, sigma)
    k = path.step_index(t)
    gint = drift.gamma_integral(k, path.dt)
    C = float(np.exp(gint))
    lhs = norms(u, "L2") ** 2
    rhs = C * norms(u0, "L2") ** 2
    return L2BoundReport(lhs, rhs, C, gint, slack, lhs <= rhs * (1.0 + slack))
