"""Monte-Carlo means V = E[u F], their parabolic cross-check, the uniqueness
experiment across mollifier ladders, and the Ito weak-form residual."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .characteristics import SampledDrift, regularized_drift, transport_batch
from .errors import ConfigError, DomainError, MeshError, RunError
from .fields import DriftSpec, GridSpec, ScalarField, centered_gradient, norms
from .mollify import MollifierSpec, regularize_scalar
from .parabolic import ParabolicRun
from .stochastic import (ExponentialSpec, MeanAccumulator, chunked, log_exponential_batch,
                         LOG_LIMIT, mesh_index, sample_increments)

CHUNK = 256
MAX_FAIL_FRACTION = 0.01


@dataclass(frozen=True)
class MeanEstimate:
    grid: GridSpec
    t: float
    h: ExponentialSpec
    mean: ScalarField
    std_error: ScalarField
    n_paths: int
    master_seed: int
    failed_paths: int = 0

    @property
    def se_available(self) -> bool:
        return self.n_paths >= 2

    def pooled_se(self) -> float:
        """sqrt(sum SE^2 dx^d): the standard error of the L2 distance scale."""
        return norms(self.std_error, "L2")


def _zero_table(drift: SampledDrift) -> bool:
    return not np.any(drift.cvals)


def _prepare(u0: ScalarField, drift, mollifier: MollifierSpec | None, T: float, N: int,
             regularize_data: bool) -> tuple[ScalarField, SampledDrift]:
    grid = u0.grid
    if isinstance(drift, SampledDrift):
        sd = drift
    elif isinstance(drift, DriftSpec):
        if mollifier is None:
            raise ConfigError("characteristics need a mollifier for the drift")
        sd = regularized_drift(drift, grid, mollifier, T, N)
    else:
        raise TypeError("drift must be a DriftSpec or SampledDrift")
    if sd.grid != grid:
        raise MeshError("drift and data live on different grids")
    data = regularize_scalar(u0, mollifier) if (regularize_data and mollifier is not None) else u0
    return data, sd


def _translate(u0: ScalarField, incr: np.ndarray, k_end: int, sigma: float) -> np.ndarray:
    """u0(x - sigma B_t) for every path: the exact inverse flow of the zero drift."""
    g = u0.grid
    B = incr[:, :k_end].sum(axis=1)
    pts = g.nodes()[None, :, :] - sigma * B[:, None, :]
    shape, lo = g.table_layout()
    return _kernels.sample_batch(np.ascontiguousarray(u0.values).ravel(), shape, lo, g.dx,
                                 g.periodic, np.ascontiguousarray(pts))


def path_batches(u0: ScalarField, drift: SampledDrift, hs: Sequence[ExponentialSpec], t: float,
                 n_paths: int, master_seed: int, N: int, T: float | None = None, sigma: float = 1.0,
                 chunk: int = CHUNK, start: int = 0):
    """Yield (u values (P, S), weights F (len(hs), P), ok mask (P,)) per fixed-size chunk.

    Chunks cover path indices start .. start + n_paths - 1 in order, so any
    reduction over them is reproducible.
    """
    g = u0.grid
    T = t if T is None else T
    k_end = mesh_index(t, T, N)
    dt = T / N
    hvs = [h.on_mesh(T, N) for h in hs]
    exact_shift = _zero_table(drift)
    for a, b in chunked(n_paths, chunk):
        incr = sample_increments(master_seed, g.dim, T, N, range(start + a, start + b))
        if exact_shift:
            vals = _translate(u0, incr, k_end, sigma)
            ok = np.ones(b - a, dtype=bool)
        else:
            vals, bad = transport_batch(u0, drift, incr, T, k_end, sigma)
            ok = ~bad
        logs = np.stack([log_exponential_batch(hv, incr, k_end, dt) for hv in hvs])
        ok &= np.all(np.abs(logs) <= LOG_LIMIT, axis=0)
        F = np.exp(np.clip(logs, -LOG_LIMIT, LOG_LIMIT))
        yield vals, F, ok


def estimate_means(u0: ScalarField, drift, mollifier: MollifierSpec | None,
                   hs: Sequence[ExponentialSpec], t: float, n_paths: int, master_seed: int = 0,
                   N: int = 256, T: float | None = None, sigma: float = 1.0,
                   regularize_data: bool = False, chunk: int = CHUNK) -> list[MeanEstimate]:
    """V_h(t) = E[u(t) F^h] for several h sharing the same transported paths.

    F is taken at the evaluation time t; it is a martingale, so this has
    the same mean as the terminal weight and a smaller variance.
    """
    if n_paths < 1:
        raise ConfigError("need at least one path")
    T = t if T is None else T
    data, sd = _prepare(u0, drift, mollifier, T, N, regularize_data)
    accs = [MeanAccumulator() for _ in hs]
    failed = 0
    for vals, F, ok in path_batches(data, sd, hs, t, n_paths, master_seed, N, T, sigma, chunk):
        failed += int(np.sum(~ok))
        for acc, w in zip(accs, F):
            acc.add_batch(vals[ok] * w[ok, None])
    if failed > MAX_FAIL_FRACTION * n_paths:
        raise RunError(f"{failed} of {n_paths} paths failed")
    g = u0.grid
    out = []
    for h, acc in zip(hs, accs):
        mean = np.asarray(acc.mean).reshape(g.shape)
        se = np.asarray(acc.std_error).reshape(g.shape)
        out.append(MeanEstimate(g, t, h, ScalarField(g, mean, t), ScalarField(g, se, t),
                                n_paths - failed, master_seed, failed))
    return out


def estimate_mean(u0: ScalarField, drift, mollifier: MollifierSpec | None, h: ExponentialSpec,
                  t: float, n_paths: int, master_seed: int = 0, N: int = 256, T: float | None = None,
                  sigma: float = 1.0, regularize_data: bool = False) -> MeanEstimate:
    return estimate_means(u0, drift, mollifier, [h], t, n_paths, master_seed, N, T, sigma,
                          regularize_data)[0]


@dataclass(frozen=True)
class ComparisonReport:
    rel_l2: float
    pooled_se: float
    tolerance: float
    threshold: float
    z_exceed_fraction: float
    passed: bool


def compare_with_parabolic(est: MeanEstimate, run: ParabolicRun, scheme_tol: float = 0.02,
                           z_max: float = 3.0, max_fraction: float = 0.05) -> ComparisonReport:
    """Nodewise z-scores and relative L2 distance between the MC mean and the PDE oracle.

    PASS when at most ``max_fraction`` of nodes have |z| > z_max and the
    relative distance is within 3 pooled standard errors plus ``scheme_tol``.
    """
    if est.grid != run.grid:
        raise MeshError("estimate and oracle live on different grids")
    oracle = run.at(est.t)
    diff = est.mean.values - oracle.values
    se = est.std_error.values
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0),
                     np.where(np.abs(diff) > 1e-12, np.inf, 0.0))
    frac = float(np.mean(np.abs(z) > z_max))
    ref = norms(oracle, "L2")
    if ref == 0.0:
        ref = 1.0
    rel = norms(est.mean.with_values(diff), "L2") / ref
    pooled = est.pooled_se() / ref
    thr = 3.0 * pooled + scheme_tol
    return ComparisonReport(rel, pooled, scheme_tol, thr, frac, frac <= max_fraction and rel <= thr)


# --------------------------------------------------------------------------- uniqueness


@dataclass(frozen=True)
class LadderRow:
    h: str
    level: int
    eps_a: float
    eps_b: float
    gap: float
    pooled_se: float
    norm_a: float

    @property
    def rel_gap(self) -> float:
        return self.gap / self.norm_a if self.norm_a > 0 else self.gap

    @property
    def rel_se(self) -> float:
        return self.pooled_se / self.norm_a if self.norm_a > 0 else self.pooled_se


@dataclass
class UniquenessReport:
    rows: list[LadderRow]
    passed: bool
    decreasing: bool
    finest_ok: bool
    disc_tol: float
    slack: float
    details: dict = field(default_factory=dict)


def _ladder(seq: Sequence[MollifierSpec] | Sequence[float], kernel: str) -> list[MollifierSpec]:
    out = [m if isinstance(m, MollifierSpec) else MollifierSpec(float(m), kernel) for m in seq]
    eps = [m.epsilon for m in out]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("mollifier ladders must have strictly decreasing epsilon")
    return out


def uniqueness_experiment(u0: ScalarField, drift: DriftSpec, eps_sequence_a, eps_sequence_b,
                          h_family: Sequence[ExponentialSpec], t: float, n_paths: int,
                          master_seed: int = 0, N: int = 256, kernel_a: str = "bump",
                          kernel_b: str = "gaussian_truncated", disc_tol: float = 0.02,
                          slack: float = 0.1, chunk: int = CHUNK) -> UniquenessReport:
    """Gap between mean fields built from two regularization ladders on shared paths.

    At each level both the drift and the data are regularized with the
    ladder's mollifier.  The gap's standard error comes from per-path
    differences, which the shared seeds make strongly correlated.  PASS when
    every gap is at most (1 + slack) times the previous one and the finest
    relative gap is within 3 pooled standard errors plus 2 * disc_tol.
    """
    A = _ladder(eps_sequence_a, kernel_a)
    B = _ladder(eps_sequence_b, kernel_b)
    if len(A) != len(B):
        raise ConfigError("ladders must have the same length")
    grid = u0.grid
    rows: list[LadderRow] = []
    for level, (ma, mb) in enumerate(zip(A, B)):
        da, sa = _prepare(u0, drift, ma, t, N, True)
        db, sb = _prepare(u0, drift, mb, t, N, True)
        acc_d = [MeanAccumulator() for _ in h_family]
        acc_a = [MeanAccumulator() for _ in h_family]
        failed = 0
        gen_a = path_batches(da, sa, h_family, t, n_paths, master_seed, N, t, 1.0, chunk)
        gen_b = path_batches(db, sb, h_family, t, n_paths, master_seed, N, t, 1.0, chunk)
        for (va, Fa, oka), (vb, Fb, okb) in zip(gen_a, gen_b):
            ok = oka & okb
            failed += int(np.sum(~ok))
            for i in range(len(h_family)):
                wa = va[ok] * Fa[i, ok, None]
                wb = vb[ok] * Fb[i, ok, None]
                acc_a[i].add_batch(wa)
                acc_d[i].add_batch(wa - wb)
        if failed > MAX_FAIL_FRACTION * n_paths:
            raise RunError(f"{failed} of {n_paths} paths failed")
        w = grid.cell_volume
        for i, h in enumerate(h_family):
            gap = float(np.sqrt(np.sum(np.asarray(acc_d[i].mean) ** 2) * w))
            pse = float(np.sqrt(np.sum(np.asarray(acc_d[i].std_error) ** 2) * w))
            na = float(np.sqrt(np.sum(np.asarray(acc_a[i].mean) ** 2) * w))
            rows.append(LadderRow(h.name, level, ma.epsilon, mb.epsilon, gap, pse, na))
    decreasing = True
    finest_ok = True
    for h in h_family:
        hr = [r for r in rows if r.h == h.name]
        gaps = [r.gap for r in hr]
        if any(b > (1.0 + slack) * a for a, b in zip(gaps, gaps[1:])):
            decreasing = False
        last = hr[-1]
        if last.rel_gap > 3.0 * last.rel_se + 2.0 * disc_tol:
            finest_ok = False
    return UniquenessReport(rows, decreasing and finest_ok, decreasing, finest_ok, disc_tol, slack)


# --------------------------------------------------------------------------- weak form


@dataclass(frozen=True)
class TestFunction:
    """Tensor product of 1-d bumps exp(-1/(1 - s^2)), s = (x - c)/r."""

    center: tuple[float, ...]
    radius: float

    def _parts(self, grid: GridSpec):
        vals, d1, d2 = [], [], []
        for a, m in enumerate(grid.mesh()):
            s = (m - self.center[a]) / self.radius
            q = 1.0 - s * s
            inside = q > 0
            qs = np.where(inside, q, 1.0)
            psi = np.where(inside, np.exp(-1.0 / qs), 0.0)
            g1 = -2.0 * s / qs**2
            g2 = -2.0 / qs**2 - 8.0 * s * s / qs**3
            vals.append(psi)
            d1.append(np.where(inside, psi * g1 / self.radius, 0.0))
            d2.append(np.where(inside, psi * (g1 * g1 + g2) / self.radius**2, 0.0))
        return vals, d1, d2

    def evaluate(self, grid: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(phi, grad phi (d, ...), Laplacian phi) on the grid nodes."""
        vals, d1, d2 = self._parts(grid)
        d = grid.dim
        phi = np.prod(vals, axis=0)
        grad = []
        lap = np.zeros(grid.shape)
        for a in range(d):
            others = np.prod([vals[b] for b in range(d) if b != a], axis=0) if d > 1 else 1.0
            grad.append(d1[a] * others)
            lap += d2[a] * others
        return phi, np.stack(grad), lap


    def discrete(self, grid: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """phi with its centred-difference gradient and five-point Laplacian.

        On a periodic grid these operators sum to zero and are skew-adjoint
        to the centred divergence, so constants and divergence-free fields
        produce no residual from the test function's own quadrature.
        """
        phi = self.evaluate(grid)[0]
        grad = centered_gradient(grid, phi)
        lap = sum(np.roll(phi, -1, axis=a) - 2.0 * phi + np.roll(phi, 1, axis=a)
                  for a in range(grid.dim)) / grid.dx**2
        return phi, grad, lap


def default_test_functions(grid: GridSpec, radius: float | None = None) -> list[TestFunction]:
    r = 0.4 * grid.extent if radius is None else radius
    shift = 0.45 * grid.extent
    centers = [(-shift,) * grid.dim, (0.0,) * grid.dim, (shift,) * grid.dim]
    return [TestFunction(c, r) for c in centers]


@dataclass(frozen=True)
class WeakFormReport:
    n_steps: int
    n_paths: int
    mean_residual: np.ndarray      # per test function, averaged over paths
    rms_residual: np.ndarray       # per test function, root mean square over paths
    terms: dict


def weak_form_residual(u0: ScalarField, drift, mollifier: MollifierSpec | None, T: float, N: int,
                       n_paths: int = 1, master_seed: int = 0,
                       test_functions: Sequence[TestFunction] | None = None,
                       sigma: float = 1.0, discrete: bool = True) -> WeakFormReport:
    """Residual of the Ito weak form on each path, tested against bump functions.

    r = int u(T) phi - int u0 phi - sum_k dt int u(t_k) (b . grad phi + div b phi)
        - sum_k dB_k . int u(t_k) grad phi - 1/2 sum_k dt int u(t_k) Lap phi,
    with left-endpoint sums.  Derivatives of phi are centred differences by
    default (``discrete=False`` uses the exact derivatives, whose quadrature
    is poor while the bump spans few nodes).  Needs u at every mesh time, so
    the cost grows like N^2; this is a diagnostic for small grids.
    """
    data, sd = _prepare(u0, drift, mollifier, T, N, False)
    grid = u0.grid
    tfs = list(test_functions) if test_functions is not None else default_test_functions(grid)
    for tf in tfs:
        if any(abs(c) + tf.radius >= grid.extent - grid.dx for c in tf.center):
            raise DomainError("test function support reaches the periodic seam")
    w = grid.cell_volume
    pieces = [tf.discrete(grid) if discrete else tf.evaluate(grid) for tf in tfs]
    K = sd.cvals.shape[0]
    bv = sd.cvals[:, :, : grid.size].reshape((K, grid.dim) + grid.shape)
    dv = sd.dvals.reshape((K,) + grid.shape)
    # per time slot: the function multiplying u in the dt-term, for each test function
    drift_kernels = []
    for phi, grad, lap in pieces:
        per_slot = [np.sum(bv[j] * grad, axis=0) + dv[j] * phi + 0.5 * sigma**2 * lap for j in range(K)]
        drift_kernels.append(per_slot)
    dt = T / N
    res_acc = MeanAccumulator()
    sq_acc = MeanAccumulator()
    term_acc = {k: MeanAccumulator() for k in ("endpoint", "drift", "ito")}
    for a, b in chunked(n_paths, CHUNK):
        incr = sample_increments(master_seed, grid.dim, T, N, range(a, b))
        P = b - a
        endpoint = np.zeros((P, len(tfs)))
        dterm = np.zeros((P, len(tfs)))
        ito = np.zeros((P, len(tfs)))
        prev = None
        for k in range(N + 1):
            if _zero_table(sd):
                u = _translate(data, incr, k, sigma)
            else:
                u, bad = transport_batch(data, sd, incr, T, k, sigma)
                if np.any(bad):
                    raise RunError("characteristics failed in the weak-form diagnostic")
            u = u.reshape((P,) + grid.shape)
            if k == 0:
                prev = u
                for i, (phi, _, _) in enumerate(pieces):
                    endpoint[:, i] -= np.sum(u * phi, axis=tuple(range(1, grid.dim + 1))) * w
            if k > 0:
                # the step from t_{k-1} uses u(t_{k-1}) and the drift slot k-1
                j = min(k - 1, K - 1)
                axes = tuple(range(1, grid.dim + 1))
                for i, (phi, grad, lap) in enumerate(pieces):
                    dterm[:, i] += np.sum(prev * drift_kernels[i][j], axis=axes) * w * dt
                    gi = np.stack([np.sum(prev * grad[c], axis=axes) * w for c in range(grid.dim)], 1)
                    ito[:, i] += sigma * np.sum(gi * incr[:, k - 1], axis=1)
                prev = u
        for i, (phi, _, _) in enumerate(pieces):
            endpoint[:, i] += np.sum(prev * phi, axis=tuple(range(1, grid.dim + 1))) * w
        r = endpoint - dterm - ito
        res_acc.add_batch(r)
        sq_acc.add_batch(r**2)
        term_acc["endpoint"].add_batch(endpoint)
        term_acc["drift"].add_batch(dterm)
        term_acc["ito"].add_batch(ito)
    terms = {k: np.asarray(v.mean) for k, v in term_acc.items()}
    return WeakFormReport(N, n_paths, np.asarray(res_acc.mean), np.sqrt(np.asarray(sq_acc.mean)),
                          terms)
