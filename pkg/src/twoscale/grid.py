"""Uniform Dirichlet grids on the unit box and the discrete norms built on them.

The physical domain is (0,1)^N for N in {1, 2}. A grid with n cells per axis
carries unknowns on the (n-1)^N interior nodes x_i = i*h, h = 1/n; the zero
Dirichlet trace is implicit and never stored. All norms use the midpoint
quadrature weight h^N on nodal values, so the discrete sine modes

    e_k(x) = 2^(N/2) * prod_d sin(k_d pi x_d),   k_d = 1..n-1,

are exactly orthonormal in the discrete H inner product. That exactness is
what makes the spectral H^-1 proxy and the noise expansion cheap and stable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy.fft import dstn

from .errors import CountMismatch

__all__ = [
    "GridSpec",
    "ScalarField",
    "VectorField",
    "norm_H",
    "norm_V",
    "norm_L4",
    "norm_Hminus1_proxy",
    "inner_H",
    "sine_coefficients",
    "field_from_sine_coefficients",
    "sine_mode",
    "sine_weights_Hminus1",
    "first_eigenvalue",
    "field_to_csv",
    "field_from_csv",
]


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the unit box with homogeneous Dirichlet boundary.

    Attributes:
        dimension: spatial dimension N, 1 or 2.
        cells: cells per axis n, a power of two >= 8.
    """

    dimension: int
    cells: int

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if self.cells < 8 or not _is_power_of_two(self.cells):
            raise ValueError(
                f"cells must be a power of two >= 8, got {self.cells}")

    @property
    def h(self) -> float:
        return 1.0 / self.cells

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells - 1,) * self.dimension

    @property
    def dof(self) -> int:
        return (self.cells - 1) ** self.dimension

    def axis_nodes(self) -> np.ndarray:
        """Interior node coordinates along one axis."""
        return self.h * np.arange(1, self.cells)

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        """Interior node coordinates as broadcastable arrays, ij indexing."""
        ax = self.axis_nodes()
        return np.meshgrid(*([ax] * self.dimension), indexing="ij")


class ScalarField:
    """Nodal values of a scalar function with zero Dirichlet trace.

    Value semantics: the array is frozen at construction and every operation
    returns a fresh field, so instances are safe to share across workers.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: GridSpec, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(
                f"field shape {values.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values = values.copy()
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: GridSpec,
                      fn: Callable[..., np.ndarray]) -> "ScalarField":
        """Sample ``fn(x)`` or ``fn(x, y)`` at the interior nodes."""
        return cls(grid, fn(*grid.meshgrid()))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        self._check_same_grid(other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        self._check_same_grid(other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def _check_same_grid(self, other: "ScalarField") -> None:
        if self.grid != other.grid:
            raise ValueError("fields live on different grids")


class VectorField:
    """Tuple of scalar components on a common grid (velocity fields in 2D)."""

    __slots__ = ("grid", "components")

    def __init__(self, components: Iterable[ScalarField]):
        components = tuple(components)
        if not components:
            raise ValueError("vector field needs at least one component")
        grid = components[0].grid
        for c in components[1:]:
            if c.grid != grid:
                raise ValueError("components live on different grids")
        self.grid = grid
        self.components = components

    @classmethod
    def zeros(cls, grid: GridSpec, count: int | None = None) -> "VectorField":
        count = grid.dimension if count is None else count
        return cls(ScalarField.zeros(grid) for _ in range(count))

    def __len__(self) -> int:
        return len(self.components)

    def __getitem__(self, i: int) -> ScalarField:
        return self.components[i]


# ---------------------------------------------------------------------------
# norms


def norm_H(f: ScalarField) -> float:
    """Discrete L2 norm: sqrt(h^N * sum f^2)."""
    g = f.grid
    return float(np.sqrt(g.h ** g.dimension * np.sum(f.values ** 2)))


def inner_H(f: ScalarField, g: ScalarField) -> float:
    """Discrete L2 inner product with the h^N midpoint weight."""
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    d = f.grid
    return float(d.h ** d.dimension * np.sum(f.values * g.values))


def _face_differences(values: np.ndarray, axis: int) -> np.ndarray:
    """Forward differences across all faces along ``axis``.

    The zero trace supplies one ghost layer on each side, so a grid with
    (n-1) interior nodes has n faces per line.
    """
    pad = [(0, 0)] * values.ndim
    pad[axis] = (1, 1)
    padded = np.pad(values, pad)
    return np.diff(padded, axis=axis)


def norm_V(f: ScalarField) -> float:
    """Discrete H^1_0 seminorm from forward differences on faces.

    Boundary faces use the zero trace; the quadrature weight per face is
    h^N so norm_V(f)^2 = h^N * sum over faces of (difference/h)^2.
    """
    g = f.grid
    acc = 0.0
    for axis in range(g.dimension):
        d = _face_differences(f.values, axis)
        acc += np.sum(d * d)
    return float(np.sqrt(g.h ** g.dimension * acc / g.h ** 2))


def norm_L4(f: ScalarField) -> float:
    """Discrete L4 norm: (h^N * sum f^4)^(1/4)."""
    g = f.grid
    v2 = f.values ** 2
    return float((g.h ** g.dimension * np.sum(v2 * v2)) ** 0.25)


def sine_coefficients(f: ScalarField) -> np.ndarray:
    """Coefficients of f in the H-orthonormal Dirichlet sine basis.

    Returns an array indexed by (k_1-1, ..., k_N-1). The map is exactly
    unitary on the grid: sum of squares equals norm_H(f)^2 to round-off.
    """
    g = f.grid
    scale = (g.h / np.sqrt(2.0)) ** g.dimension
    return scale * dstn(f.values, type=1)


def field_from_sine_coefficients(grid: GridSpec, coeff: np.ndarray) -> ScalarField:
    """Inverse of :func:`sine_coefficients`."""
    coeff = np.asarray(coeff, dtype=float)
    if coeff.shape != grid.shape:
        raise ValueError("coefficient array does not match grid shape")
    # dstn type 1 is its own inverse up to the factor (2n)^N.
    scale = (np.sqrt(2.0) / (2.0 * grid.cells * grid.h)) ** grid.dimension
    return ScalarField(grid, scale * dstn(coeff, type=1))


def sine_mode(grid: GridSpec, k: tuple[int, ...] | int) -> ScalarField:
    """The H-orthonormal sine mode e_k, k_d in 1..n-1 per axis."""
    if isinstance(k, int):
        k = (k,)
    if len(k) != grid.dimension:
        raise ValueError("mode index has wrong length")
    ax = grid.axis_nodes()
    vals = np.ones(grid.shape)
    for d, kd in enumerate(k):
        if not 1 <= kd <= grid.cells - 1:
            raise ValueError(f"mode index {kd} outside 1..{grid.cells - 1}")
        line = np.sqrt(2.0) * np.sin(kd * np.pi * ax)
        shape = [1] * grid.dimension
        shape[d] = grid.cells - 1
        vals = vals * line.reshape(shape)
    return ScalarField(grid, vals)


def sine_weights_Hminus1(grid: GridSpec) -> np.ndarray:
    """Per-mode weights 1/(1 + pi^2 |k|^2) on the full sine spectrum."""
    k = np.arange(1, grid.cells)
    if grid.dimension == 1:
        ksq = k.astype(float) ** 2
    else:
        ksq = (k[:, None] ** 2 + k[None, :] ** 2).astype(float)
    return 1.0 / (1.0 + np.pi ** 2 * ksq)


def norm_Hminus1_proxy(f: ScalarField) -> float:
    """Spectral H^-1 proxy: sine coefficients damped by 1/(1 + pi^2 |k|^2).

    Always bounded by norm_H since every weight is < 1.
    """
    c = sine_coefficients(f)
    w = sine_weights_Hminus1(f.grid)
    return float(np.sqrt(np.sum(w * c ** 2)))


def first_eigenvalue(grid: GridSpec) -> float:
    """Smallest eigenvalue of the discrete Dirichlet Laplacian.

    mu_1^h = (4/h^2) sin^2(pi h / 2) per axis, summed over axes.
    """
    h = grid.h
    per_axis = (4.0 / h ** 2) * np.sin(np.pi * h / 2.0) ** 2
    return float(grid.dimension * per_axis)


# ---------------------------------------------------------------------------
# serialization


def field_to_csv(f: ScalarField, path) -> None:
    """Write nodal values as one flat row-major column with a header.

    The header records n, N and the ordering so the file round-trips
    without out-of-band information.
    """
    g = f.grid
    flat = f.values.reshape(-1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n={g.cells} N={g.dimension} order=row-major\n")
        fh.write("value\n")
        for v in flat:
            fh.write(f"{float(v)!r}\n")


def field_from_csv(path) -> ScalarField:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise CountMismatch(f"{path}: missing grid header")
        meta = dict(tok.split("=") for tok in header[1:].split() if "=" in tok)
        grid = GridSpec(dimension=int(meta["N"]), cells=int(meta["n"]))
        column = fh.readline()
        if column.strip() != "value":
            raise CountMismatch(f"{path}: unexpected column header {column!r}")
        flat = np.array([float(line) for line in fh if line.strip()])
    if flat.size != grid.dof:
        raise CountMismatch(
            f"{path}: expected {grid.dof} values, found {flat.size}")
    return ScalarField(grid, flat.reshape(grid.shape))
