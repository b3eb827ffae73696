"""Brownian paths from a counter-based generator, Ito sums and stochastic exponentials.

Every path is a pure function of (master seed, path index): the Philox
generator is keyed by that pair and its raw 64-bit output at position
``step * d + component`` is turned into a Gaussian by the inverse normal
CDF.  Paths can therefore be produced in any order or in parallel and
still come out bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import MeshError, RangeError, StatError

U64 = 2**64
LOG_LIMIT = 700.0


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < U64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def standard_normals(seed: int, index: int, count: int) -> np.ndarray:
    """``count`` standard normals for key (seed, index), in counter order."""
    bitgen = np.random.Philox(key=np.array([_check_seed(seed), _check_seed(index)], dtype=np.uint64))
    raw = bitgen.random_raw(count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True)
class BrownianPath:
    """One d-dimensional path stored as N increments over a uniform mesh on [0, T]."""

    d: int
    T: float
    N: int
    increments: np.ndarray
    seed: int = 0
    index: int = 0

    def __post_init__(self) -> None:
        inc = np.array(self.increments, dtype=float).reshape(self.N, self.d)
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 1)

    def values(self) -> np.ndarray:
        """B at all mesh times, shape (N + 1, d), with B_0 = 0."""
        out = np.zeros((self.N + 1, self.d))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def step_index(self, t: float) -> int:
        return mesh_index(t, self.T, self.N)


def mesh_index(t: float, T: float, N: int) -> int:
    k = t * N / T
    kr = int(round(k))
    if abs(k - kr) > 1e-9 * max(1.0, abs(k)) or not 0 <= kr <= N:
        raise MeshError(f"t = {t} is not a mesh time of the {N}-step mesh on [0, {T}]")
    return kr


def _check_mesh(T: float, N: int) -> None:
    if N < 1:
        raise MeshError("need at least one time step")
    if not T > 0:
        raise MeshError("horizon must be positive")


def sample_path(seed: int, d: int, T: float, N: int, index: int = 0) -> BrownianPath:
    _check_mesh(T, N)
    z = standard_normals(seed, index, N * d)
    return BrownianPath(d, T, N, z.reshape(N, d) * np.sqrt(T / N), seed, index)


def sample_increments(seed: int, d: int, T: float, N: int, indices: Iterable[int]) -> np.ndarray:
    """Increments of several paths stacked as (P, N, d)."""
    _check_mesh(T, N)
    idx = list(indices)
    out = np.empty((len(idx), N, d))
    scale = np.sqrt(T / N)
    for j, i in enumerate(idx):
        out[j] = standard_normals(seed, i, N * d).reshape(N, d) * scale
    return out


def sample_paths(seed: int, d: int, T: float, N: int, count: int, start: int = 0) -> list[BrownianPath]:
    return [sample_path(seed, d, T, N, i) for i in range(start, start + count)]


# --------------------------------------------------------------------------- statistics


@dataclass
class MeanAccumulator:
    """Streaming mean / variance with Chan's pairwise merge.

    Feeding the same batches in the same order gives bit-identical results;
    within a batch numpy's pairwise summation is used.
    """

    count: int = 0
    mean: np.ndarray | float = 0.0
    m2: np.ndarray | float = 0.0

    def add_batch(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        nb = values.shape[0]
        if nb == 0:
            return
        mb = values.mean(axis=0)
        m2b = ((values - mb) ** 2).sum(axis=0)
        if self.count == 0:
            self.count, self.mean, self.m2 = nb, mb, m2b
            return
        n = self.count + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * (nb / n)
        self.m2 = self.m2 + m2b + delta**2 * (self.count * nb / n)
        self.count = n

    @property
    def variance(self):
        if self.count < 2:
            return np.zeros_like(np.asarray(self.mean, dtype=float))
        return self.m2 / (self.count - 1)

    @property
    def std_error(self):
        if self.count < 2:
            return np.zeros_like(np.asarray(self.mean, dtype=float))
        return np.sqrt(self.variance / self.count)


def chunked(total: int, size: int) -> list[tuple[int, int]]:
    return [(a, min(a + size, total)) for a in range(0, total, size)]


# --------------------------------------------------------------------------- exponentials

H_KINDS = ("zero", "constant", "step", "sinusoid", "sampled")


@dataclass(frozen=True)
class ExponentialSpec:
    """Deterministic h: [0, T] -> R^d.

    Kinds: zero; constant (vector ``c``); step (``c`` before T/2, ``-c``
    after); sinusoid (``c * sin(2 pi f t / T)``); sampled (explicit (N, d)
    left-endpoint values on a fixed mesh).
    """

    kind: str
    d: int
    c: tuple[float, ...] = ()
    frequency: float = 1.0
    horizon: float = 1.0
    samples: np.ndarray | None = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self) -> None:
        if self.kind not in H_KINDS:
            raise ValueError(f"unknown h kind {self.kind!r}")
        if self.kind in ("constant", "step", "sinusoid") and len(self.c) != self.d:
            raise ValueError("coefficient vector has the wrong length")
        if self.kind == "sampled":
            if self.samples is None or np.asarray(self.samples).ndim != 2:
                raise ValueError("sampled h needs an (N, d) array")
            s = np.array(self.samples, dtype=float)
            if s.shape[1] != self.d or not np.all(np.isfinite(s)):
                raise ValueError("sampled h has the wrong width or non-finite values")
            s.setflags(write=False)
            object.__setattr__(self, "samples", s)

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "zero":
            return "zero"
        cs = ":".join(format(v, "g") for v in self.c)
        if self.kind == "sinusoid":
            return f"sin{format(self.frequency, 'g')}:{cs}"
        return f"{'const' if self.kind == 'constant' else self.kind}:{cs}"

    def __call__(self, t: np.ndarray | float) -> np.ndarray:
        """h(t) for an array of times, shape (len(t), d)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        c = np.asarray(self.c, dtype=float)
        if self.kind == "zero":
            return np.zeros((t.size, self.d))
        if self.kind == "constant":
            return np.broadcast_to(c, (t.size, self.d)).copy()
        if self.kind == "step":
            sign = np.where(t < 0.5 * self.horizon, 1.0, -1.0)
            return sign[:, None] * c
        if self.kind == "sinusoid":
            return np.sin(2.0 * np.pi * self.frequency * t / self.horizon)[:, None] * c
        raise MeshError("sampled h can only be read on its own mesh")

    def on_mesh(self, T: float, N: int) -> np.ndarray:
        """Left-endpoint samples h(t_k), k = 0..N-1."""
        if self.kind == "sampled":
            if self.samples.shape[0] != N or not np.isclose(self.horizon, T):
                raise MeshError(
                    f"h sampled on {self.samples.shape[0]} steps over [0, {self.horizon}], "
                    f"path has {N} steps over [0, {T}]"
                )
            return np.asarray(self.samples)
        return self(T / N * np.arange(N))

    def energy(self, T: float, N: int) -> float:
        """Discrete integral of |h|^2 over [0, T]."""
        return float(np.sum(self.on_mesh(T, N) ** 2) * T / N)


def constant_h(c: Sequence[float] | float, d: int | None = None, horizon: float = 1.0) -> ExponentialSpec:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if d is not None and c.size == 1 and d > 1:
        c = np.r_[c, np.zeros(d - 1)]
    return ExponentialSpec("constant", c.size, tuple(c.tolist()), horizon=horizon)


def zero_h(d: int, horizon: float = 1.0) -> ExponentialSpec:
    return ExponentialSpec("zero", d, horizon=horizon)


def _h_catalog(d: int, horizon: float) -> list[ExponentialSpec]:
    out = [zero_h(d, horizon)]
    eye = np.eye(d)
    for i in range(d):
        out.append(ExponentialSpec("constant", d, tuple(eye[i]), horizon=horizon))
        out.append(ExponentialSpec("constant", d, tuple(0.0 - eye[i]), horizon=horizon))
    for i in range(d):
        out.append(ExponentialSpec("step", d, tuple(eye[i]), horizon=horizon))
    for f in (1.0, 2.0):
        for i in range(d):
            out.append(ExponentialSpec("sinusoid", d, tuple(eye[i]), frequency=f, horizon=horizon))
    return out


def exponential_family(count: int, d: int = 1, horizon: float = 1.0) -> list[ExponentialSpec]:
    """The first ``count`` members of the fixed h catalog.

    Order: zero, +/- unit constants per axis, steps switching sign at T/2,
    sinusoids at frequencies 1 and 2.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    cat = _h_catalog(d, horizon)
    if count > len(cat):
        raise ValueError(f"catalog has {len(cat)} members in dimension {d}")
    return cat[:count]


def parse_h(text: str, d: int, horizon: float = 1.0) -> ExponentialSpec:
    """Parse ``zero``, ``const:a[:b..]``, ``step:..`` or ``sinF:..`` (e.g. ``sin2:1``)."""
    head, _, rest = text.partition(":")
    if head == "zero":
        return zero_h(d, horizon)
    vals = [float(v) for v in rest.split(":")] if rest else [1.0]
    if len(vals) == 1 and d > 1:
        vals = vals + [0.0] * (d - 1)
    if len(vals) != d:
        raise ValueError(f"h {text!r} has {len(vals)} components, expected {d}")
    if head in ("const", "constant"):
        return ExponentialSpec("constant", d, tuple(vals), horizon=horizon)
    if head == "step":
        return ExponentialSpec("step", d, tuple(vals), horizon=horizon)
    if head.startswith("sin"):
        f = float(head[3:] or 1.0)
        return ExponentialSpec("sinusoid", d, tuple(vals), frequency=f, horizon=horizon)
    raise ValueError(f"cannot parse h {text!r}")


def _h_for(h: ExponentialSpec, path: BrownianPath) -> np.ndarray:
    if h.d != path.d:
        raise MeshError(f"h has dimension {h.d}, path has {path.d}")
    return h.on_mesh(path.T, path.N)


def ito_integral(h: ExponentialSpec, path: BrownianPath, t: float | None = None) -> float:
    """Left-endpoint sum of h(t_k) . dB_k up to mesh time t (default T)."""
    hv = _h_for(h, path)
    k = path.N if t is None else path.step_index(t)
    return float(np.sum(hv[:k] * path.increments[:k]))


def log_exponential_batch(hv: np.ndarray, incr: np.ndarray, k_end: int, dt: float) -> np.ndarray:
    """log F at step k_end for increments (P, N, d); h sampled as (N, d)."""
    ito = np.einsum("pkd,kd->p", incr[:, :k_end], hv[:k_end])
    return ito - 0.5 * float(np.sum(hv[:k_end] ** 2)) * dt


def exponential_batch(hv: np.ndarray, incr: np.ndarray, k_end: int, dt: float) -> np.ndarray:
    logf = log_exponential_batch(hv, incr, k_end, dt)
    if np.any(np.abs(logf) > LOG_LIMIT):
        raise RangeError("stochastic exponential overflows (|log F| > 700)")
    return np.exp(logf)


def exponential(h: ExponentialSpec, path: BrownianPath, t: float | None = None) -> float:
    """F_t = exp(sum h.dB - 1/2 sum |h|^2 dt), left endpoints."""
    hv = _h_for(h, path)
    k = path.N if t is None else path.step_index(t)
    return float(exponential_batch(hv, path.increments[None], k, path.dt)[0])


def exponential_trajectory(h: ExponentialSpec, path: BrownianPath) -> np.ndarray:
    """F at every mesh time, shape (N + 1,)."""
    hv = _h_for(h, path)
    steps = np.sum(hv * path.increments, axis=1) - 0.5 * np.sum(hv**2, axis=1) * path.dt
    logf = np.concatenate([[0.0], np.cumsum(steps)])
    if np.any(np.abs(logf) > LOG_LIMIT):
        raise RangeError("stochastic exponential overflows (|log F| > 700)")
    return np.exp(logf)


@dataclass(frozen=True)
class MCReport:
    quantity: str
    estimate: float
    std_error: float
    n_paths: int
    n_steps: int
    seed: int
    target: float | None = None
    passed: bool | None = None

    def row(self) -> list:
        return [self.quantity, self.estimate, self.std_error, self.n_paths, self.n_steps, self.seed]


REPORT_HEADER = ["quantity", "estimate", "std_error", "n_paths", "n_steps", "seed"]


def _path_chunks(n_paths: int, chunk: int):
    return chunked(n_paths, chunk)


def martingale_means(hs: Sequence[ExponentialSpec], n_paths: int, N: int, T: float = 1.0,
                     seed: int = 0, chunk: int = 1024) -> list[MCReport]:
    """MC means of F_T for several h of one dimension, sharing the sampled paths.

    Each report is identical to what ``martingale_mean`` gives for that h
    alone; PASS when the estimate is within 3 standard errors of 1.
    """
    hs = list(hs)
    if n_paths < 2:
        raise StatError("need at least 2 paths for a standard error")
    if len({h.d for h in hs}) > 1:
        raise ValueError("all h must have the same dimension")
    hvs = [h.on_mesh(T, N) for h in hs]
    accs = [MeanAccumulator() for _ in hs]
    for a, b in _path_chunks(n_paths, chunk):
        incr = sample_increments(seed, hs[0].d, T, N, range(a, b))
        for hv, acc in zip(hvs, accs):
            acc.add_batch(exponential_batch(hv, incr, N, T / N))
    out = []
    for h, acc in zip(hs, accs):
        est = float(acc.mean)
        se = float(acc.std_error)
        passed = abs(est - 1.0) <= 3.0 * se or (se == 0.0 and abs(est - 1.0) < 1e-12)
        out.append(MCReport(f"E[F_T] {h.name}", est, se, n_paths, N, seed, 1.0, passed))
    return out


def martingale_mean(h: ExponentialSpec, n_paths: int, N: int, T: float = 1.0, seed: int = 0,
                    chunk: int = 1024) -> MCReport:
    """MC mean of F_T, PASS when within 3 standard errors of 1."""
    return martingale_means([h], n_paths, N, T, seed, chunk)[0]


@dataclass(frozen=True)
class SdeResidual:
    n_steps: int
    mean: float
    std_error: float
    rms: float


def sde_residual(h: ExponentialSpec, n_paths: int, N: int, T: float = 1.0, seed: int = 0,
                 chunk: int = 1024) -> SdeResidual:
    """Accumulated one-step residual F_{k+1} - F_k - h_k F_k dB_k of the exponential SDE.

    Returns its MC mean (with standard error) and root mean square over
    paths; the latter shrinks like dt^(1/2).
    """
    hv = h.on_mesh(T, N)
    dt = T / N
    acc = MeanAccumulator()
    sq = MeanAccumulator()
    for a, b in _path_chunks(n_paths, chunk):
        incr = sample_increments(seed, h.d, T, N, range(a, b))
        steps = np.einsum("pkd,kd->pk", incr, hv) - 0.5 * np.sum(hv**2, axis=1) * dt
        logf = np.concatenate([np.zeros((incr.shape[0], 1)), np.cumsum(steps, axis=1)], axis=1)
        F = np.exp(logf)
        drive = np.einsum("pkd,kd->pk", incr, hv)
        res = np.sum(F[:, 1:] - F[:, :-1] - F[:, :-1] * drive, axis=1)
        acc.add_batch(res)
        sq.add_batch(res**2)
    return SdeResidual(N, float(acc.mean), float(acc.std_error), float(np.sqrt(sq.mean)))


# --------------------------------------------------------------------------- Ito product identity

Y_KINDS = ("B", "sinB", "h")


def _adapted(kind: str, incr: np.ndarray, hv: np.ndarray) -> np.ndarray:
    """Y at left endpoints t_k, shape (P, N, d)."""
    if kind == "h":
        return np.broadcast_to(hv, incr.shape)
    B = np.cumsum(incr, axis=1) - incr  # B_{t_k}, starting at 0
    if kind == "B":
        return B
    if kind == "sinB":
        return np.sin(B)
    raise ValueError(f"unknown adapted process {kind!r}")


@dataclass(frozen=True)
class BFReport:
    h: str
    Y: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    threshold: float
    passed: bool
    n_paths: int
    n_steps: int
    seed: int

    @property
    def combined_se(self) -> float:
        return float(np.hypot(self.lhs_se, self.rhs_se))


def verify_bf_identity(h: ExponentialSpec, Y: str, n_paths: int, N: int = 256, T: float = 1.0,
                       seed: int = 0, t: float | None = None, C: float = 1.0,
                       chunk: int = 1024) -> BFReport:
    """E[(sum Y_k . dB_k) F_t] against sum h_k . E[Y_k F_t] dt.

    For deterministic Y the right side uses E[F_t] = 1 and is exact.  PASS
    when |lhs - rhs| <= 3 sqrt(se_l^2 + se_r^2) + C dt.
    """
    if n_paths < 100:
        raise StatError(f"need at least 100 paths, got {n_paths}")
    if Y not in Y_KINDS:
        raise ValueError(f"unknown adapted process {Y!r}")
    hv = h.on_mesh(T, N)
    dt = T / N
    k_end = N if t is None else mesh_index(t, T, N)
    lhs_acc = MeanAccumulator()
    rhs_acc = MeanAccumulator()
    for a, b in _path_chunks(n_paths, chunk):
        incr = sample_increments(seed, h.d, T, N, range(a, b))
        F = exponential_batch(hv, incr, k_end, dt)
        Yv = _adapted(Y, incr, hv)[:, :k_end]
        ito = np.einsum("pkd,pkd->p", Yv, incr[:, :k_end])
        lhs_acc.add_batch(ito * F)
        if Y != "h":
            rhs_acc.add_batch(np.einsum("pkd,kd->p", Yv, hv[:k_end]) * dt * F)
    lhs = float(lhs_acc.mean)
    lhs_se = float(lhs_acc.std_error)
    if Y == "h":
        rhs = float(np.sum(hv[:k_end] ** 2) * dt)
        rhs_se = 0.0
    else:
        rhs = float(rhs_acc.mean)
        rhs_se = float(rhs_acc.std_error)
    thr = 3.0 * float(np.hypot(lhs_se, rhs_se)) + C * dt
    return BFReport(h.name, Y, lhs, lhs_se, rhs, rhs_se, thr, abs(lhs - rhs) <= thr,
                    n_paths, N, seed)
