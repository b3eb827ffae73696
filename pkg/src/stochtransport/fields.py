"""Uniform grids, sampled fields, the drift catalog, norms and hypothesis checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CatalogError, DomainError

PERIODIC = "periodic"
BOX = "box"

DRIFT_KINDS = ("zero", "constant", "linear", "rotation", "shear", "cellular", "tabulated")


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [-L, L]^d.

    Periodic grids put nodes at -L + i*dx (index n is identified with 0);
    box grids are cell-centred, nodes at -L + (i + 1/2)*dx.
    """

    dim: int
    extent: float = 1.5
    n: int = 64
    boundary: str = PERIODIC

    def __post_init__(self) -> None:
        if self.dim not in (1, 2, 3):
            raise DomainError(f"dim must be 1, 2 or 3, got {self.dim}")
        if int(self.n) != self.n or self.n < 4:
            raise DomainError(f"need n >= 4 points per axis, got {self.n}")
        if not (np.isfinite(self.extent) and self.extent > 0):
            raise DomainError(f"extent must be positive, got {self.extent}")
        if self.boundary not in (PERIODIC, BOX):
            raise DomainError(f"unknown boundary {self.boundary!r}")

    @property
    def dx(self) -> float:
        return 2.0 * self.extent / self.n

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def origin(self) -> float:
        """Coordinate of node index 0 along every axis."""
        return -self.extent if self.periodic else -self.extent + 0.5 * self.dx

    def axis(self) -> np.ndarray:
        return self.origin + self.dx * np.arange(self.n)

    def mesh(self) -> tuple[np.ndarray, ...]:
        ax = self.axis()
        return tuple(np.meshgrid(*([ax] * self.dim), indexing="ij"))

    def nodes(self) -> np.ndarray:
        """All node coordinates as an (n^d, d) array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def index_coords(self) -> np.ndarray:
        idx = np.indices(self.shape).reshape(self.dim, -1)
        return idx.T

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(m**2 for m in self.mesh()))

    def table_layout(self) -> tuple[np.ndarray, np.ndarray]:
        """(shape, lo) rows in the 3-slot layout used by the compiled kernels."""
        shape = np.ones(3, dtype=np.int64)
        shape[: self.dim] = self.n
        lo = np.zeros(3)
        lo[: self.dim] = self.origin
        return shape, lo


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScalarField:
    grid: GridSpec
    values: np.ndarray
    time_tag: float | None = None

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.grid.size:
            raise DomainError(f"expected {self.grid.size} values, got {vals.size}")
        vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise DomainError("scalar field has non-finite values")
        object.__setattr__(self, "values", _frozen(vals))

    def with_values(self, values: np.ndarray, time_tag: float | None = None) -> ScalarField:
        return ScalarField(self.grid, values, self.time_tag if time_tag is None else time_tag)

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[..., np.ndarray],
                      time_tag: float | None = None) -> ScalarField:
        vals = np.broadcast_to(np.asarray(fn(*grid.mesh()), dtype=float), grid.shape)
        return cls(grid, vals, time_tag)

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> ScalarField:
        return cls(grid, np.full(grid.shape, float(value)))


@dataclass(frozen=True)
class VectorField:
    """Node-sampled vector field, ``values`` has shape (d, *grid.shape).

    ``div_free_tol`` tags the field as divergence free; construction then
    checks the centred-difference divergence against it.
    """

    grid: GridSpec
    values: np.ndarray
    div_free_tol: float | None = None

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        d = self.grid.dim
        if vals.size != d * self.grid.size:
            raise DomainError(f"expected {d} x {self.grid.size} values, got {vals.size}")
        vals = vals.reshape((d,) + self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise DomainError("vector field has non-finite components")
        object.__setattr__(self, "values", _frozen(vals))
        if self.div_free_tol is not None:
            div = centered_divergence(self.grid, vals)
            worst = float(np.max(np.abs(div)))
            if worst > self.div_free_tol:
                raise DomainError(
                    f"field tagged divergence free has max |div| {worst:.3e} > {self.div_free_tol:.3e}"
                )

    def component(self, c: int) -> ScalarField:
        return ScalarField(self.grid, self.values[c])


# --------------------------------------------------------------------------- drifts


@dataclass(frozen=True)
class DriftSpec:
    """A drift b(t, x) from the catalog.

    ``params`` holds the kind-specific data (constant vector, matrix, cell
    count, amplitude, tabulated samples).  The flags record which structural
    hypotheses hold: con1 (local square integrability, true for every entry),
    con2 (bounded divergence) and con3 (linear growth outside the ball of
    radius ``growth_radius``).
    """

    kind: str
    dim: int
    params: dict = field(default_factory=dict, compare=False)
    horizon: float = 1.0
    extent: float = 1.5
    growth_radius: float = 1.0
    con1: bool = True
    con2: bool = True
    con3: bool = True
    divergence_formula: str = "numeric"

    def __post_init__(self) -> None:
        if self.kind not in DRIFT_KINDS:
            raise CatalogError(f"unknown drift kind {self.kind!r}")
        if self.dim not in (1, 2, 3):
            raise CatalogError(f"unsupported dimension {self.dim}")
        if self.kind in ("rotation", "shear", "cellular") and self.dim < 2:
            raise CatalogError(f"{self.kind} drift needs dim >= 2")
        if not self.horizon > 0:
            raise CatalogError("horizon must be positive")

    @property
    def autonomous(self) -> bool:
        return self.kind != "tabulated" or len(self.params["times"]) == 1

    @property
    def name(self) -> str:
        return self.kind


def _hat_slope(s: np.ndarray, extent: float, cells: int) -> np.ndarray:
    """Right derivative of the per-cell hat (peak at cell centres, zero on cell edges)."""
    width = 2.0 * extent / cells
    u = (s + extent) / width
    frac = u - np.floor(u)
    return np.where(frac < 0.5, 1.0, -1.0)


def _hat(s: np.ndarray, extent: float, cells: int) -> np.ndarray:
    width = 2.0 * extent / cells
    u = (s + extent) / width
    frac = u - np.floor(u)
    return width * (0.5 - np.abs(frac - 0.5))


def cellular_stream(spec: DriftSpec, x: np.ndarray) -> np.ndarray:
    """Stream function A (T(x) + T(y)) of the cellular drift at points (M, d)."""
    if spec.kind != "cellular":
        raise CatalogError("stream function only defined for cellular drift")
    m = spec.params["cells"]
    amp = spec.params["amplitude"]
    return amp * (_hat(x[:, 0], spec.extent, m) + _hat(x[:, 1], spec.extent, m))


def _eval_points(spec: DriftSpec, t: float, x: np.ndarray) -> np.ndarray:
    d = spec.dim
    out = np.zeros_like(x)
    kind = spec.kind
    p = spec.params
    if kind == "zero":
        pass
    elif kind == "constant":
        out[:] = np.asarray(p["c"], dtype=float)
    elif kind == "linear":
        out[:] = x @ np.asarray(p["A"], dtype=float).T
    elif kind == "rotation":
        out[:, 0] = -x[:, 1]
        out[:, 1] = x[:, 0]
    elif kind == "shear":
        out[:, 0] = p["amplitude"] * np.sin(np.pi * x[:, 1] / spec.extent)
    elif kind == "cellular":
        m = p["cells"]
        amp = p["amplitude"]
        out[:, 0] = -amp * _hat_slope(x[:, 1], spec.extent, m)
        out[:, 1] = amp * _hat_slope(x[:, 0], spec.extent, m)
    elif kind == "tabulated":
        from ._kernels import sample_points

        j = _time_slot(p["times"], t)
        vf: VectorField = p["fields"][j]
        shape, lo = vf.grid.table_layout()
        for c in range(d):
            out[:, c] = sample_points(np.ascontiguousarray(vf.values[c]).ravel(), shape, lo,
                                      vf.grid.dx, vf.grid.periodic, np.ascontiguousarray(x))
    return out


def _time_slot(times: np.ndarray, t: float) -> int:
    # left-endpoint value: the last sample time not after t
    j = int(np.searchsorted(times, t + 1e-12 * max(1.0, abs(t)), side="right")) - 1
    return max(j, 0)


def evaluate_drift(spec: DriftSpec, t: float, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """b(t, x) at one point (shape (d,)) or many points (shape (M, d))."""
    if not (0.0 <= t <= spec.horizon):
        raise DomainError(f"t = {t} outside [0, {spec.horizon}]")
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != spec.dim:
        raise DomainError(f"points have dimension {pts.shape[1]}, drift has {spec.dim}")
    out = _eval_points(spec, t, pts)
    if not np.all(np.isfinite(out)):
        raise CatalogError(f"{spec.kind} drift produced non-finite values")
    return out[0] if single else out


def sample_drift(spec: DriftSpec, grid: GridSpec, t: float = 0.0) -> VectorField:
    if grid.dim != spec.dim:
        raise DomainError("grid and drift dimensions differ")
    vals = evaluate_drift(spec, t, grid.nodes())
    return VectorField(grid, vals.T.reshape((grid.dim,) + grid.shape))


def _diff(grid: GridSpec, f: np.ndarray, axis: int) -> np.ndarray:
    if grid.periodic:
        return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * grid.dx)
    return np.gradient(f, grid.dx, axis=axis)


def centered_divergence(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    """Second-order centred divergence of component arrays (d, *shape)."""
    return sum(_diff(grid, values[c], c) for c in range(grid.dim))


def centered_gradient(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    return np.stack([_diff(grid, f, c) for c in range(grid.dim)])


def divergence(spec: DriftSpec, grid: GridSpec, t: float = 0.0) -> tuple[ScalarField, float]:
    """div b(t, .) on the grid and its sup norm.

    Analytic where the catalog declares a formula, centred differences of the
    sampled field otherwise.
    """
    if spec.divergence_formula == "numeric":
        vals = centered_divergence(grid, sample_drift(spec, grid, t).values)
    else:
        vals = np.full(grid.shape, _analytic_divergence(spec))
    f = ScalarField(grid, vals, t)
    return f, float(np.max(np.abs(vals)))


def _analytic_divergence(spec: DriftSpec) -> float:
    if spec.kind == "linear":
        return float(np.trace(np.asarray(spec.params["A"], dtype=float)))
    return 0.0


def norms(f: ScalarField, kind: str = "L2", r: float | None = None) -> float:
    """Riemann-sum norms with cell weight dx^d."""
    vals = f.values
    w = f.grid.cell_volume
    if kind == "L2":
        return float(np.sqrt(np.sum(vals**2) * w))
    if kind == "Linf":
        return float(np.max(np.abs(vals)))
    if kind == "L1_ball":
        if r is None:
            raise DomainError("L1_ball needs a radius")
        if r > f.grid.extent:
            raise DomainError(f"ball radius {r} exceeds box half-width {f.grid.extent}")
        mask = f.grid.radius() <= r
        return float(np.sum(np.abs(vals[mask])) * w)
    raise DomainError(f"unknown norm {kind!r}")


# --------------------------------------------------------------------------- catalog


def make_drift(name: str, dim: int, extent: float = 1.5, horizon: float = 1.0, **params) -> DriftSpec:
    """Build a catalog drift by name with default parameters."""
    if name == "zero":
        return DriftSpec("zero", dim, {}, horizon, extent, divergence_formula="0")
    if name == "constant":
        c = np.asarray(params.get("c", [1.0] + [0.0] * (dim - 1)), dtype=float)
        if c.shape != (dim,):
            raise CatalogError("constant drift vector has the wrong length")
        return DriftSpec("constant", dim, {"c": c}, horizon, extent, divergence_formula="0")
    if name == "linear":
        A = np.asarray(params.get("A", 0.5 * np.eye(dim)), dtype=float)
        if A.shape != (dim, dim):
            raise CatalogError("linear drift matrix has the wrong shape")
        return DriftSpec("linear", dim, {"A": A}, horizon, extent, divergence_formula="trace")
    if name == "rotation":
        return DriftSpec("rotation", dim, {}, horizon, extent, divergence_formula="0")
    if name == "shear":
        return DriftSpec("shear", dim, {"amplitude": float(params.get("amplitude", 1.0))},
                         horizon, extent, divergence_formula="0")
    if name == "cellular":
        cells = int(params.get("cells", 4))
        if cells < 1:
            raise CatalogError("cellular drift needs at least one cell")
        return DriftSpec("cellular", dim,
                         {"cells": cells, "amplitude": float(params.get("amplitude", 1.0))},
                         horizon, extent, divergence_formula="0")
    if name == "tabulated":
        return tabulated_drift(params["fields"], params.get("times", [0.0]), horizon)
    raise CatalogError(f"unknown drift {name!r}")


def tabulated_drift(fields: Sequence[VectorField], times: Sequence[float],
                    horizon: float = 1.0) -> DriftSpec:
    fields = list(fields)
    t = np.asarray(times, dtype=float)
    if len(fields) == 0 or len(fields) != t.size:
        raise CatalogError("tabulated drift needs one field per sample time")
    if np.any(np.diff(t) <= 0) or t[0] != 0.0:
        raise CatalogError("sample times must start at 0 and increase")
    grid = fields[0].grid
    if any(f.grid != grid for f in fields):
        raise CatalogError("tabulated fields must share one grid")
    return DriftSpec("tabulated", grid.dim, {"fields": fields, "times": t}, horizon,
                     grid.extent, divergence_formula="numeric")


def catalog_names(dim: int = 2) -> list[str]:
    names = ["zero", "constant", "linear"]
    if dim >= 2:
        names += ["rotation", "shear", "cellular"]
    return sorted(names)


def drift_catalog(dim: int = 2, extent: float = 1.5, horizon: float = 1.0) -> dict[str, DriftSpec]:
    """Every analytic catalog entry available in this dimension."""
    return {name: make_drift(name, dim, extent, horizon) for name in catalog_names(dim)}


@dataclass(frozen=True)
class HypothesisReport:
    con1: bool
    con2: bool
    con3: bool
    div_sup: np.ndarray
    div_integral: float


def validate_hypotheses(spec: DriftSpec, grid: GridSpec, times: Sequence[float]) -> HypothesisReport:
    """Check bounded divergence on the sampled times and report its time integral.

    The integral uses left-endpoint weights on the given (increasing) times
    up to the drift horizon.
    """
    ts = np.asarray(times, dtype=float)
    sups = np.array([divergence(spec, grid, float(t))[1] for t in ts])
    con2 = bool(np.all(np.isfinite(sups)))
    edges = np.append(ts, spec.horizon)
    integral = float(np.sum(sups * np.diff(edges))) if con2 else float("inf")
    if not con2:
        raise CatalogError(f"{spec.kind} drift has unbounded divergence on the grid")
    return HypothesisReport(spec.con1, con2, spec.con3, sups, integral)
