"""Two-phase porous-media flow with transport noise, solved by Picard iteration.

Each outer iteration takes the current phase paths (density rho and
viscosity nu, one realization per Brownian path), forms the deterministic
coefficients

    H(t, x) = E[h(t, x, rho nu)],    G(t, x) = E[rho] g,

solves the Darcy problem  H v = -grad p + G,  div v = 0,  v.n = 0  at every
mesh time, and transports both phases again from their initial data along
the stochastic characteristics of v (reflected at the walls).  Velocities
live on cell faces, pressures at cell centres.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from . import _kernels
from .characteristics import SampledDrift
from .errors import ConditionError, ConfigError, DomainError, EllipticError
from .fields import BOX, GridSpec, ScalarField, VectorField
from .stochastic import BrownianPath, chunked, sample_increments

ELLIPTIC_TOL = 1e-9
CONDITION_LIMIT = 1e8
PATH_CHUNK = 50


@dataclass(frozen=True)
class Mobility:
    """h(t, x, m) = h0 + slope * m for m = rho * nu (slope >= 0)."""

    h0: float
    slope: float = 1.0

    def __post_init__(self) -> None:
        if not (self.h0 > 0 and np.isfinite(self.h0)):
            raise ConfigError("the mobility floor h0 must be positive")
        if not (self.slope >= 0 and np.isfinite(self.slope)):
            raise ConfigError("the mobility slope must be non-negative")

    def __call__(self, t: float, x, m: np.ndarray) -> np.ndarray:
        return self.h0 + self.slope * np.asarray(m, dtype=float)

    @property
    def label(self) -> str:
        if self.slope == 0:
            return f"{self.h0:g}"
        return f"{self.h0:g}+{self.slope:g}*m"


@dataclass
class MuskatConfig:
    grid: GridSpec
    sigma: float
    mobility: Mobility
    gravity: tuple[float, float]
    rho0: ScalarField
    nu0: ScalarField
    T: float = 1.0
    N: int = 20
    n_paths: int = 200
    max_iterations: int = 30
    fp_tolerance: float | None = None
    master_seed: int = 0
    damping: float = 1.0
    elliptic_tol: float = ELLIPTIC_TOL
    label: str = "custom"

    def __post_init__(self) -> None:
        g = self.grid
        if g.dim != 2 or g.boundary != BOX:
            raise ConfigError("the two-phase solver needs a 2-d box grid")
        if self.rho0.grid != g or self.nu0.grid != g:
            raise ConfigError("initial phases live on a different grid")
        if not self.sigma >= 0:
            raise ConfigError("sigma must be non-negative")
        if self.T <= 0 or self.N < 1 or self.n_paths < 1 or self.max_iterations < 1:
            raise ConfigError("T, N, n_paths and max_iterations must be positive")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must lie in (0, 1]")
        if len(self.gravity) != 2:
            raise ConfigError("gravity needs two components")
        lo, hi = self.bounds
        mlo = min(lo * lo, lo * hi, hi * hi)
        mhi = max(lo * lo, lo * hi, hi * hi)
        for m in (mlo, mhi):
            if float(np.min(self.mobility(0.0, None, m))) < self.mobility.h0:
                raise ConfigError("mobility drops below h0 on the admissible range")

    @property
    def bounds(self) -> tuple[float, float]:
        """[M_lo, M_hi]: the joint range of the initial phases."""
        lo = min(float(self.rho0.values.min()), float(self.nu0.values.min()))
        hi = max(float(self.rho0.values.max()), float(self.nu0.values.max()))
        return lo, hi

    @property
    def tolerance(self) -> float:
        """Stopping threshold; default 1e-3 times the space-time norm of rho0."""
        if self.fp_tolerance is not None:
            return float(self.fp_tolerance)
        g = self.grid
        return 1e-3 * float(np.sqrt(self.T * np.sum(self.rho0.values ** 2) * g.cell_volume))


@dataclass(frozen=True)
class FaceVelocity:
    """Normal velocities on cell faces: vx (n+1, n) on x-faces, vy (n, n+1) on y-faces."""

    grid: GridSpec
    vx: np.ndarray
    vy: np.ndarray
    residual: float = 0.0
    iterations: int = 0

    def divergence(self) -> np.ndarray:
        dx = self.grid.dx
        return (self.vx[1:, :] - self.vx[:-1, :]) / dx + (self.vy[:, 1:] - self.vy[:, :-1]) / dx

    def max_divergence(self) -> float:
        return float(np.max(np.abs(self.divergence())))

    def boundary_flux(self) -> float:
        """Largest |v.n| over the wall faces (zero by construction)."""
        return float(max(np.max(np.abs(self.vx[[0, -1], :])), np.max(np.abs(self.vy[:, [0, -1]]))))

    def centered(self) -> VectorField:
        """Face averages at cell centres."""
        u = 0.5 * (self.vx[1:, :] + self.vx[:-1, :])
        w = 0.5 * (self.vy[:, 1:] + self.vy[:, :-1])
        return VectorField(self.grid, np.stack([u, w]))

    def max_speed(self) -> float:
        return float(max(np.max(np.abs(self.vx)), np.max(np.abs(self.vy))))


def face_layout(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Kernel table layout (shape, lo) rows for the x- and y-face components."""
    n, L, dx = grid.n, grid.extent, grid.dx
    shape = np.array([[n + 1, n, 1], [n, n + 1, 1]], dtype=np.int64)
    lo = np.array([[-L, -L + 0.5 * dx, 0.0], [-L + 0.5 * dx, -L, 0.0]])
    return shape, lo


def face_drift(velocities: Sequence[FaceVelocity], T: float | None = None, N: int | None = None,
               label: str = "darcy") -> SampledDrift:
    """Tabulate face velocities for the characteristic kernels.

    One velocity gives an autonomous drift; N + 1 velocities give the values
    at the mesh times j T / N.
    """
    vs = list(velocities)
    g = vs[0].grid
    if len(vs) > 1 and (N is None or len(vs) != N + 1):
        raise DomainError("time-dependent velocity needs N + 1 slices")
    n = g.n
    S = (n + 1) * n
    cvals = np.zeros((len(vs), 2, S))
    for j, v in enumerate(vs):
        cvals[j, 0] = v.vx.ravel()
        cvals[j, 1] = v.vy.ravel()
    dvals = np.stack([v.divergence().ravel() for v in vs])
    shape, lo = face_layout(g)
    return SampledDrift(g, cvals, shape, lo, dvals, np.max(np.abs(dvals), axis=1), T, N, label)


def _face_mobility(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interior face coefficients 1/H by the harmonic mean of the two cells."""
    kx = 2.0 / (H[1:, :] + H[:-1, :])
    ky = 2.0 / (H[:, 1:] + H[:, :-1])
    return kx, ky


def _operator(kx: np.ndarray, ky: np.ndarray, n: int, dx: float) -> sparse.csr_matrix:
    """-div(k grad .) with zero-flux walls, 5-point stencil on cell centres."""
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, vals = [], [], []
    diag = np.zeros((n, n))
    w = 1.0 / (dx * dx)
    for k, a, b in ((kx, idx[:-1, :], idx[1:, :]), (ky, idx[:, :-1], idx[:, 1:])):
        c = (k * w).ravel()
        rows += [a.ravel(), b.ravel()]
        cols += [b.ravel(), a.ravel()]
        vals += [-c, -c]
    diag[:-1, :] += kx * w
    diag[1:, :] += kx * w
    diag[:, :-1] += ky * w
    diag[:, 1:] += ky * w
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    A = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n * n, n * n))
    return A.tocsr()


def darcy_solve(H: ScalarField, G: VectorField, tol: float = ELLIPTIC_TOL,
                max_iters: int | None = None) -> tuple[FaceVelocity, ScalarField]:
    """Solve H v = -grad p + G, div v = 0 with v.n = 0 on the walls.

    The pressure equation div((G - grad p) / H) = 0 is solved by Jacobi
    preconditioned conjugate gradients until the Euclidean norm of the
    residual (equal to the discrete divergence of v) is at most ``tol``.
    The pressure has zero mean.
    """
    grid = H.grid
    if grid.dim != 2 or grid.periodic:
        raise DomainError("darcy_solve works on 2-d box grids")
    if G.grid != grid:
        raise DomainError("H and G live on different grids")
    Hv = np.asarray(H.values, dtype=float)
    hmin = float(Hv.min())
    if not hmin > 0 or float(Hv.max()) / hmin > CONDITION_LIMIT:
        raise ConditionError(f"mobility range [{hmin:.3g}, {float(Hv.max()):.3g}] is near-singular")
    n, dx = grid.n, grid.dx
    kx, ky = _face_mobility(Hv)
    Gx = 0.5 * (G.values[0][1:, :] + G.values[0][:-1, :])
    Gy = 0.5 * (G.values[1][:, 1:] + G.values[1][:, :-1])
    fx = np.zeros((n + 1, n))
    fy = np.zeros((n, n + 1))
    fx[1:-1, :] = kx * Gx
    fy[:, 1:-1] = ky * Gy
    # discrete div(k G); the system is A p = -div(k G)
    source = (fx[1:, :] - fx[:-1, :]) / dx + (fy[:, 1:] - fy[:, :-1]) / dx
    rhs = -source.ravel()
    rhs -= rhs.mean()
    A = _operator(kx, ky, n, dx)
    iters = 0
    if np.max(np.abs(rhs)) <= tol / np.sqrt(rhs.size):
        p = np.zeros(n * n)
    else:
        M = sparse.diags(1.0 / A.diagonal())

        def count(_):
            nonlocal iters
            iters += 1

        limit = max_iters if max_iters is not None else 20 * n * n
        p, info = spla.cg(A, rhs, rtol=0.0, atol=0.1 * tol, maxiter=limit, M=M, callback=count)
        if info != 0:
            raise EllipticError(f"pressure solve did not converge in {limit} iterations")
        p -= p.mean()
    P = p.reshape(n, n)
    vx = np.zeros((n + 1, n))
    vy = np.zeros((n, n + 1))
    vx[1:-1, :] = kx * (Gx - (P[1:, :] - P[:-1, :]) / dx)
    vy[:, 1:-1] = ky * (Gy - (P[:, 1:] - P[:, :-1]) / dx)
    v = FaceVelocity(grid, vx, vy, 0.0, iters)
    res = float(np.linalg.norm(v.divergence()))
    if res > tol:
        raise EllipticError(f"true residual {res:.3e} exceeds {tol:.3e}")
    v = FaceVelocity(grid, vx, vy, res, iters)
    return v, ScalarField(grid, P)


def mobility_expectation(rho_paths: np.ndarray, nu_paths: np.ndarray, t: float, grid: GridSpec,
                         mobility: Mobility) -> ScalarField:
    """Monte-Carlo mean of h(t, x, rho nu) over the leading (path) axis."""
    rho = np.asarray(rho_paths, dtype=float).reshape((-1,) + grid.shape)
    nu = np.asarray(nu_paths, dtype=float).reshape((-1,) + grid.shape)
    H = np.mean(mobility(t, grid.mesh(), rho * nu), axis=0)
    if float(H.min()) < mobility.h0:
        raise ConfigError(f"mean mobility {float(H.min()):.6g} fell below h0 = {mobility.h0}")
    return ScalarField(grid, H, t)


def transport_phase(phase0: ScalarField, v: FaceVelocity | SampledDrift, sigma: float,
                    path: BrownianPath, t: float) -> ScalarField:
    """Transport one phase along reflected characteristics of v for one path."""
    grid = phase0.grid
    drift = v if isinstance(v, SampledDrift) else face_drift([v])
    drift.check_mesh(path.T, path.N)
    k = path.step_index(t)
    vals, bad = _departure_values([phase0], drift, np.asarray(path.increments)[None], path.dt, k,
                                  sigma)
    if bad[0]:
        raise DomainError("characteristics left the box")
    return phase0.with_values(vals[0][0].reshape(grid.shape), t)


def _incr3(incr: np.ndarray) -> np.ndarray:
    out = np.zeros(incr.shape[:2] + (3,))
    out[:, :, : incr.shape[2]] = incr
    return out


def _departure_values(phases: Sequence[ScalarField], drift: SampledDrift, incr: np.ndarray,
                      dt: float, k_end: int, sigma: float) -> tuple[list[np.ndarray], np.ndarray]:
    g = drift.grid
    Y, bad = _kernels.inverse_flow_batch(drift.cvals, drift.cshape, drift.clo, g.dx, False,
                                         _incr3(incr), dt, k_end, float(sigma), g.nodes(),
                                         g.extent, True)
    shape, lo = g.table_layout()
    out = [_kernels.sample_batch(np.ascontiguousarray(f.values).ravel(), shape, lo, g.dx, False, Y)
           for f in phases]
    return out, bad


@dataclass
class MuskatState:
    k: int
    change: float
    max_div: float
    boundary_flux: float
    min_H: float
    phase_min: float
    phase_max: float
    elliptic_iterations: int
    wallclock_s: float
    velocity: list[FaceVelocity] = field(default_factory=list, repr=False)
    pressure: list[ScalarField] = field(default_factory=list, repr=False)
    H: list[ScalarField] = field(default_factory=list, repr=False)
    rho_mean: ScalarField | None = field(default=None, repr=False)
    nu_mean: ScalarField | None = field(default=None, repr=False)


@dataclass
class MuskatResult:
    config: MuskatConfig
    states: list[MuskatState]
    status: str
    non_contractive: bool
    tolerance: float
    rho_sample: ScalarField
    nu_sample: ScalarField

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def table(self) -> tuple[list[str], list[list]]:
        header = ["k", "change", "max_div_v", "boundary_flux", "min_H", "phase_min", "phase_max"]
        rows = [[s.k, s.change, s.max_div, s.boundary_flux, s.min_H, s.phase_min, s.phase_max]
                for s in self.states]
        return header, rows


def _coefficients(cfg: MuskatConfig, rho_sum: np.ndarray, H_sum: np.ndarray,
                  count: int) -> tuple[list[ScalarField], list[VectorField]]:
    g = cfg.grid
    Hs, Gs = [], []
    for j in range(cfg.N + 1):
        t = j * cfg.T / cfg.N
        H = H_sum[j] / count
        if float(H.min()) < cfg.mobility.h0:
            raise ConfigError(f"mean mobility {float(H.min()):.6g} fell below h0")
        Hs.append(ScalarField(g, H, t))
        rho = rho_sum[j] / count
        Gs.append(VectorField(g, np.stack([cfg.gravity[0] * rho, cfg.gravity[1] * rho])))
    return Hs, Gs


def fixed_point_iterate(cfg: MuskatConfig,
                        progress: Callable[[MuskatState], None] | None = None) -> MuskatResult:
    """Picard iteration for the coupled Darcy / stochastic transport system.

    Iterate 0 is the initial data frozen in time.  The same Brownian paths
    (indices 0 .. n_paths - 1 of ``master_seed``) are used at every
    iteration, so the map is deterministic.  The change between iterates is
    the discrete L2(Omega x [0, T] x U) distance of (rho, nu); the loop
    stops once it drops below the tolerance or after ``max_iterations``.
    Three consecutive increases raise the non-contractive flag, and the
    loop keeps going.
    """
    g = cfg.grid
    N, T, P = cfg.N, cfg.T, cfg.n_paths
    dt = T / N
    r0 = np.asarray(cfg.rho0.values, dtype=float)
    n0 = np.asarray(cfg.nu0.values, dtype=float)
    size = g.size
    # per-path phases at mesh times 1..N, overwritten chunk by chunk
    rho = np.broadcast_to(r0.ravel(), (P, N, size)).copy()
    nu = np.broadcast_to(n0.ravel(), (P, N, size)).copy()
    lo, hi = cfg.bounds
    x = g.mesh()
    H_sum = np.empty((N + 1,) + g.shape)
    rho_sum = np.empty((N + 1,) + g.shape)
    for j in range(N + 1):
        H_sum[j] = P * cfg.mobility(j * dt, x, r0 * n0)
        rho_sum[j] = P * r0
    tol = cfg.tolerance
    states: list[MuskatState] = []
    increases = 0
    non_contractive = False
    status = "max-iterations"
    w = g.cell_volume
    for k in range(1, cfg.max_iterations + 1):
        t0 = time.perf_counter()
        Hs, Gs = _coefficients(cfg, rho_sum, H_sum, P)
        vel, prs = [], []
        for H, G in zip(Hs, Gs):
            v, p = darcy_solve(H, G, cfg.elliptic_tol)
            vel.append(v)
            prs.append(p)
        drift = face_drift(vel, T, N)
        H_sum = np.zeros((N + 1,) + g.shape)
        rho_sum = np.zeros((N + 1,) + g.shape)
        H_sum[0] = P * cfg.mobility(0.0, x, r0 * n0)
        rho_sum[0] = P * r0
        sq = 0.0
        pmin, pmax = np.inf, -np.inf
        for a, b in chunked(P, PATH_CHUNK):
            incr = sample_increments(cfg.master_seed, 2, T, N, range(a, b))
            for j in range(1, N + 1):
                (r_new, n_new), bad = _departure_values([cfg.rho0, cfg.nu0], drift, incr, dt, j,
                                                        cfg.sigma)
                if np.any(bad):
                    raise DomainError("characteristics left the box")
                if cfg.damping < 1.0:
                    r_new = cfg.damping * r_new + (1.0 - cfg.damping) * rho[a:b, j - 1]
                    n_new = cfg.damping * n_new + (1.0 - cfg.damping) * nu[a:b, j - 1]
                sq += float(np.sum((r_new - rho[a:b, j - 1]) ** 2)
                            + np.sum((n_new - nu[a:b, j - 1]) ** 2))
                rho[a:b, j - 1] = r_new
                nu[a:b, j - 1] = n_new
                pmin = min(pmin, float(r_new.min()), float(n_new.min()))
                pmax = max(pmax, float(r_new.max()), float(n_new.max()))
                t = j * dt
                rs = r_new.reshape((-1,) + g.shape)
                H_sum[j] += np.sum(cfg.mobility(t, x, rs * n_new.reshape(rs.shape)), axis=0)
                rho_sum[j] += np.sum(rs, axis=0)
        change = float(np.sqrt(sq * w * dt / P))
        state = MuskatState(
            k=k, change=change,
            max_div=max(v.max_divergence() for v in vel),
            boundary_flux=max(v.boundary_flux() for v in vel),
            min_H=min(float(H.values.min()) for H in Hs),
            phase_min=pmin, phase_max=pmax,
            elliptic_iterations=sum(v.iterations for v in vel),
            wallclock_s=time.perf_counter() - t0,
            velocity=vel, pressure=prs, H=Hs,
            rho_mean=ScalarField(g, rho_sum[N] / P, T), nu_mean=None)
        if states:
            increases = increases + 1 if change > states[-1].change else 0
            if increases >= 3:
                non_contractive = True
        states.append(state)
        if progress is not None:
            progress(state)
        if change < tol:
            status = "converged"
            break
    if non_contractive and status != "converged":
        status = "non-contractive"
    rho_s = ScalarField(g, rho[0, N - 1].reshape(g.shape), T)
    nu_s = ScalarField(g, nu[0, N - 1].reshape(g.shape), T)
    states[-1].nu_mean = ScalarField(g, nu[:, N - 1].mean(axis=0).reshape(g.shape), T)
    return MuskatResult(cfg, states, status, non_contractive, tol, rho_s, nu_s)


def smooth_step(s: np.ndarray) -> np.ndarray:
    """C^1 transition from 0 (s <= -1) to 1 (s >= 1)."""
    s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
    return 0.5 + 0.75 * s - 0.25 * s**3


def layered_phase(grid: GridSpec, below: float, above: float, amplitude: float = 0.0,
                  width: float = 0.2, modes: int = 1) -> ScalarField:
    """Two layers separated by the curve y = amplitude cos(modes pi x / L), smoothed over ``width``."""
    X, Y = grid.mesh()
    iface = amplitude * np.cos(modes * np.pi * X / grid.extent)
    s = smooth_step((Y - iface) / width)
    return ScalarField(grid, below + (above - below) * s)


PRESETS = ("desk64", "uniform")


def preset(name: str, seed: int = 0) -> MuskatConfig:
    """Built-in configurations.

    desk64: 64 x 64 box, heavy fluid above a perturbed interface, mobility
    h0 + rho nu, sigma = 0.05, 200 paths, 20 mesh times.  uniform: constant
    phases on a 32 x 32 box (a stationary state).
    """
    if name == "desk64":
        g = GridSpec(2, 1.0, 64, BOX)
        rho0 = layered_phase(g, 1.0, 2.0, amplitude=0.1)
        nu0 = layered_phase(g, 1.0, 3.0, amplitude=0.1)
        return MuskatConfig(g, 0.05, Mobility(0.5, 1.0), (0.0, -1.0), rho0, nu0, T=1.0, N=20,
                            n_paths=200, max_iterations=30, master_seed=seed, label=name)
    if name == "uniform":
        g = GridSpec(2, 1.0, 32, BOX)
        return MuskatConfig(g, 0.05, Mobility(0.5, 1.0), (0.0, -1.0), ScalarField.constant(g, 1.5),
                            ScalarField.constant(g, 1.2), T=1.0, N=10, n_paths=50,
                            max_iterations=5, master_seed=seed, label=name)
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
