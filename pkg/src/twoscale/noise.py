"""Trace-class cylindrical noise on the Dirichlet sine basis.

The driving process is W(t) = sum_k sqrt(lambda_k) e_k W_k(t) with
lambda_k = lambda0 * k^(-gamma), gamma > 1, and e_k the H-orthonormal
Dirichlet sine modes of the grid (in 2D the modes are enumerated by
increasing |k|^2, ties broken lexicographically). Increments over dt are

    dW = sum_k sqrt(lambda_k * dt) * xi_k * e_k,    xi_k iid N(0, 1),

so E ||dW||_H^2 = (sum_k lambda_k) * dt exactly.

Randomness is counter-addressed: a stream is (key, counter) where the key
is derived from the master seed and the stream indices (member, level, ...)
and the counter advances by the number of modes per draw. Identical
(key, counter) pairs reproduce draws bitwise on any platform, which is what
makes synchronous coupling across resolution levels and byte-identical
reruns possible.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox

from .grid import GridSpec

__all__ = [
    "QWienerSpec",
    "NoiseStream",
    "default_mode_count",
    "partial_trace",
    "trace_tail_bound",
    "sample_increment",
]

_MASK64 = (1 << 64) - 1


def default_mode_count(grid: GridSpec) -> int:
    """Default spectral truncation: min(n - 1, 64)."""
    return min(grid.cells - 1, 64)


def _mode_indices(grid: GridSpec, count: int) -> np.ndarray:
    """First ``count`` sine modes ordered by |k|^2 then lexicographically."""
    nmax = grid.cells - 1
    if grid.dimension == 1:
        if count > nmax:
            raise ValueError(f"at most {nmax} modes on this grid")
        return np.arange(1, count + 1, dtype=int).reshape(-1, 1)
    ks = [(k1 * k1 + k2 * k2, k1, k2)
          for k1 in range(1, nmax + 1) for k2 in range(1, nmax + 1)]
    ks.sort()
    if count > len(ks):
        raise ValueError(f"at most {len(ks)} modes on this grid")
    return np.array([(k1, k2) for _, k1, k2 in ks[:count]], dtype=int)


def _basis_matrix(grid: GridSpec, modes: np.ndarray) -> np.ndarray:
    """Stack of H-orthonormal mode values, shape (count, dof)."""
    ax = grid.axis_nodes()
    if grid.dimension == 1:
        return np.sqrt(2.0) * np.sin(np.outer(modes[:, 0], np.pi * ax))
    s1 = np.sin(np.pi * np.outer(modes[:, 0], ax))
    s2 = np.sin(np.pi * np.outer(modes[:, 1], ax))
    return 2.0 * (s1[:, :, None] * s2[:, None, :]).reshape(len(modes), -1)


@dataclass(frozen=True)
class QWienerSpec:
    """Spectral description of the driving noise on a grid.

    Attributes:
        grid: the spatial grid carrying the sine basis.
        modes: truncation K; at most the grid's sine spectrum size.
        gamma: eigenvalue decay exponent, must exceed 1 (trace class).
        lambda0: eigenvalue scale.
        seed: 64-bit master seed all stream keys derive from.
    """

    grid: GridSpec
    modes: int
    gamma: float = 2.0
    lambda0: float = 1.0
    seed: int = 0
    mode_indices: np.ndarray = field(init=False, repr=False, compare=False)
    eigenvalues: np.ndarray = field(init=False, repr=False, compare=False)
    basis: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.modes < 1:
            raise ValueError("need at least one mode")
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1 for a trace-class noise")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        idx = _mode_indices(self.grid, self.modes)
        lam = self.lambda0 * np.arange(1, self.modes + 1, dtype=float) ** (-self.gamma)
        basis = _basis_matrix(self.grid, idx)
        for arr in (idx, lam, basis):
            arr.setflags(write=False)
        object.__setattr__(self, "mode_indices", idx)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "basis", basis)


def partial_trace(spec: QWienerSpec) -> float:
    """Sum of the retained eigenvalues, sum_k lambda_k."""
    return float(spec.eigenvalues.sum())


def trace_tail_bound(spec: QWienerSpec) -> float:
    """Integral bound on the truncated tail: lambda0 * K^(1-gamma) / (gamma-1)."""
    return float(spec.lambda0 * spec.modes ** (1.0 - spec.gamma)
                 / (spec.gamma - 1.0))


def _derive_stream_id(*indices: int) -> int:
    """Stable 64-bit stream id from integer indices via keyed hashing."""
    payload = struct.pack(f"<{len(indices)}q", *indices)
    digest = hashlib.blake2b(payload, digest_size=8, person=b"ns-stream").digest()
    return int.from_bytes(digest, "little")


@dataclass
class NoiseStream:
    """Counter-addressed Gaussian stream tied to one noise spec.

    The key is (master seed, id(indices)); the counter counts consumed
    mode draws. Reconstructing a stream with the same key and counter
    reproduces the continuation bitwise.
    """

    spec: QWienerSpec
    stream_id: int
    counter: int = 0

    @classmethod
    def derive(cls, spec: QWienerSpec, *indices: int) -> "NoiseStream":
        """Stream for (member index, level index, ...) under the master seed."""
        return cls(spec=spec, stream_id=_derive_stream_id(*indices))

    def draw(self, count: int | None = None) -> np.ndarray:
        """Next ``count`` standard normals (default: one per mode).

        Advances the counter by ``count``. Each counter window of width K
        maps to a disjoint block range of the underlying generator, so
        windows never overlap.
        """
        count = self.spec.modes if count is None else int(count)
        bit = Philox(counter=[self.counter & _MASK64, 0, 0, 0],
                     key=[self.spec.seed & _MASK64, self.stream_id & _MASK64])
        xi = Generator(bit).standard_normal(count)
        self.counter += count
        return xi


def sample_increment(stream: NoiseStream, dt: float):
    """One noise increment dW over a step of size dt, as a grid field.

    Synthesis: sum_k sqrt(lambda_k * dt) * xi_k * e_k. Advances the stream
    counter by the mode count.
    """
    from .grid import ScalarField

    if not dt > 0:
        raise ValueError("dt must be positive")
    spec = stream.spec
    xi = stream.draw(spec.modes)
    coeff = np.sqrt(spec.eigenvalues * dt) * xi
    values = coeff @ spec.basis
    return ScalarField(spec.grid, values.reshape(spec.grid.shape))
