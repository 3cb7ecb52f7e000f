"""Sampled datasets and the block data matrices built from them.

Samples are stored sample-major (row ``k`` holds ``x_d(k)``) but every matrix
consumed by synthesis is node-major: node ``i`` owns the row vector ``Z_i``
and the regressor block ``Q_i``. Rows whose activation hit a rail are zeroed
in both, since a saturated sample carries no information about ``W`` or ``B``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import DimensionError, LtnSystem, UniformDisturbance

#: default absolute tolerance for detecting a rail hit in noise-free data
EPS_SAT = 1e-9


class RichnessError(ValueError):
    """The data do not determine the closed-loop representation."""


@dataclass(frozen=True, eq=False)
class DataSet:
    x: np.ndarray
    u: np.ndarray
    x_plus: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float, ndmin=2)
        u = np.array(self.u, dtype=float, ndmin=2)
        xp = np.array(self.x_plus, dtype=float, ndmin=2)
        if not (x.shape[0] == u.shape[0] == xp.shape[0]):
            raise DimensionError("x, u and x_plus must hold the same number of samples")
        if x.shape != xp.shape:
            raise DimensionError(f"x has shape {x.shape} but x_plus has {xp.shape}")
        for name, a in (("x", x), ("u", u), ("x_plus", xp)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def T_d(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    def regressor(self) -> np.ndarray:
        """Rows ``p_d(k)^T = [x_d(k)^T, u_d(k)^T]``."""
        return np.hstack([self.x, self.u])

    def append(self, other: "DataSet") -> "DataSet":
        return DataSet(
            np.vstack([self.x, other.x]),
            np.vstack([self.u, other.u]),
            np.vstack([self.x_plus, other.x_plus]),
        )

    def to_dict(self) -> dict:
        return {
            "T_d": self.T_d,
            "x": self.x.tolist(),
            "u": self.u.tolist(),
            "x_plus": self.x_plus.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataSet":
        ds = cls(d["x"], d["u"], d["x_plus"])
        if "T_d" in d and d["T_d"] != ds.T_d:
            raise DimensionError(f"T_d={d['T_d']} but {ds.T_d} samples present")
        return ds

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "DataSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def collect_random_dataset(
    sys: LtnSystem,
    T_d: int,
    x_box: tuple[float, float] | None = None,
    u_box: tuple[float, float] = (0.0, 10.0),
    seed: int | None = None,
    disturbance: UniformDisturbance | None = None,
) -> DataSet:
    """Draw ``T_d`` independent one-step experiments.

    States and inputs are uniform on their boxes. The generator draws all
    states, then all inputs, then the disturbance, so adding noise does not
    change the sampled ``(x, u)`` pairs for a given seed.
    """
    if T_d < 1:
        raise ValueError("T_d must be at least 1")
    xmax = sys.state_upper_bound()
    x_lo, x_hi = x_box if x_box is not None else (0.0, xmax)
    u_lo, u_hi = u_box
    if not (x_hi >= x_lo and u_hi >= u_lo):
        raise ValueError("empty sampling box")
    if x_lo < 0.0 or x_hi > xmax * (1 + 1e-9):
        raise ValueError(f"state box [{x_lo}, {x_hi}] leaves [0, {xmax:.6g}]")
    x_hi = min(x_hi, xmax)

    rng = np.random.default_rng(seed)
    x = rng.uniform(x_lo, x_hi, size=(T_d, sys.n))
    u = rng.uniform(u_lo, u_hi, size=(T_d, sys.m))
    pre = x @ sys.W.T + u @ sys.B.T
    if disturbance is not None:
        pre = pre + disturbance.draw(rng, T_d, sys.n)
    x_plus = sys.alpha * x + np.clip(pre, 0.0, sys.s)
    return DataSet(x, u, x_plus)


# -- row bookkeeping ----------------------------------------------------------
# The stacked regressor lists samples first (row (k-1)*n + i holds node i of
# sample k); the node-major ordering groups all samples of node i together.


def _check_ik(i: int, k: int, n: int, T_d: int) -> None:
    if not (1 <= i <= n and 1 <= k <= T_d):
        raise IndexError(f"(i={i}, k={k}) outside 1..{n} x 1..{T_d}")


def original_row_index(i: int, k: int, n: int, T_d: int) -> int:
    """1-based sample-major row of node ``i`` in sample ``k``."""
    _check_ik(i, k, n, T_d)
    return (k - 1) * n + i


def permuted_row_index(i: int, k: int, n: int, T_d: int) -> int:
    """1-based node-major row of node ``i`` in sample ``k``."""
    _check_ik(i, k, n, T_d)
    return (i - 1) * T_d + k


def permuted_to_original(row: int, n: int, T_d: int) -> int:
    if not 1 <= row <= n * T_d:
        raise IndexError(f"row {row} outside 1..{n * T_d}")
    i, k = divmod(row - 1, T_d)
    return original_row_index(i + 1, k + 1, n, T_d)


def original_to_permuted(row: int, n: int, T_d: int) -> int:
    if not 1 <= row <= n * T_d:
        raise IndexError(f"row {row} outside 1..{n * T_d}")
    k, i = divmod(row - 1, n)
    return permuted_row_index(i + 1, k + 1, n, T_d)


# -- data matrices ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DataMatrices:
    """Node-major data blocks.

    ``Z[i]`` is the row vector ``Z_i`` (length ``T_d``) and ``Q[i]`` the
    ``T_d x (n+m)`` block ``Q_i``; masked samples are exact zeros in both.
    """

    alpha: float
    s: float
    eps_sat: float
    z_bar: np.ndarray
    sat_mask: np.ndarray
    Z: np.ndarray
    Q: np.ndarray
    block_ranks: tuple[int, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def T_d(self) -> int:
        return self.Z.shape[1]

    @property
    def m(self) -> int:
        return self.Q.shape[2] - self.n

    @property
    def richness_rank(self) -> int:
        return int(sum(self.block_ranks))

    @property
    def Z_blocks(self) -> list[np.ndarray]:
        return [self.Z[i][None, :] for i in range(self.n)]

    @property
    def Q_blocks(self) -> list[np.ndarray]:
        return list(self.Q)

    def z_times(self, S: np.ndarray) -> np.ndarray:
        """``Z S`` for a stacked ``(n*T_d) x c`` matrix, block by block."""
        S = self._blocks(S)
        return np.einsum("it,itc->ic", self.Z, S)

    def qt_times(self, S: np.ndarray) -> np.ndarray:
        """Per-node products ``Q_i^T S_i`` as an ``n x (n+m) x c`` array."""
        S = self._blocks(S)
        return np.einsum("itp,itc->ipc", self.Q, S)

    def _blocks(self, S: np.ndarray) -> np.ndarray:
        S = np.asarray(S, dtype=float)
        if S.ndim != 2 or S.shape[0] != self.n * self.T_d:
            raise DimensionError(f"expected {self.n * self.T_d} stacked rows, got {S.shape}")
        return S.reshape(self.n, self.T_d, S.shape[1])


def numerical_rank(A: np.ndarray) -> int:
    if A.size == 0:
        return 0
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    tol = max(A.shape) * sv[0] * np.finfo(float).eps * 10
    return int(np.sum(sv > tol))


def build_data_matrices(
    ds: DataSet, alpha: float, s: float, eps_sat: float = EPS_SAT
) -> DataMatrices:
    if eps_sat < 0:
        raise ValueError("eps_sat must be non-negative")
    z_bar = (ds.x_plus - alpha * ds.x).T
    sat_mask = (np.abs(z_bar) <= eps_sat) | (np.abs(z_bar - s) <= eps_sat)
    Z = np.where(sat_mask, 0.0, z_bar)
    P = ds.regressor()
    Q = np.where(sat_mask[:, :, None], 0.0, P[None, :, :])
    ranks = tuple(numerical_rank(Q[i]) for i in range(ds.n))
    for a in (z_bar, sat_mask, Z, Q):
        a.setflags(write=False)
    return DataMatrices(float(alpha), float(s), float(eps_sat), z_bar, sat_mask, Z, Q, ranks)


@dataclass(frozen=True)
class RichnessReport:
    passed: bool
    required: int
    ranks: tuple[int, ...]
    unmasked: tuple[int, ...]

    @property
    def deficient(self) -> list[int]:
        """1-based nodes whose block loses rank."""
        return [i + 1 for i, r in enumerate(self.ranks) if r < self.required]

    def summary(self) -> str:
        lines = [
            f"node {i + 1}: rank {r}/{self.required}, {c} unmasked samples"
            for i, (r, c) in enumerate(zip(self.ranks, self.unmasked))
        ]
        verdict = "PASS" if self.passed else f"FAIL (deficient nodes: {self.deficient})"
        return "\n".join(lines + [f"richness: {verdict}"])

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "required": self.required,
            "ranks": list(self.ranks),
            "unmasked": list(self.unmasked),
            "deficient": self.deficient,
        }


def check_richness(dm: DataMatrices) -> RichnessReport:
    """Every ``Q_i`` must have full column rank ``n + m``."""
    need = dm.n + dm.m
    unmasked = tuple(int(c) for c in (~dm.sat_mask).sum(axis=1))
    return RichnessReport(all(r == need for r in dm.block_ranks), need, dm.block_ranks, unmasked)


def solve_M_for_gains(dm: DataMatrices, target: np.ndarray, check: bool = True) -> np.ndarray:
    """Minimum-norm blocks ``M_i`` with ``Q_i^T M_i = target``.

    ``target`` is ``(n+m) x c``; typical choices are ``[I; K1]`` and
    ``[0; K2]``. Returns the stacked ``(n*T_d) x c`` matrix.
    """
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if target.shape[0] != dm.n + dm.m:
        raise DimensionError(f"target needs {dm.n + dm.m} rows, got {target.shape[0]}")
    if check:
        rep = check_richness(dm)
        if not rep.passed:
            raise RichnessError(f"data not rich enough, deficient nodes {rep.deficient}")
    blocks = [np.linalg.lstsq(dm.Q[i].T, target, rcond=None)[0] for i in range(dm.n)]
    M = np.vstack(blocks)
    scale = max(1.0, np.abs(target).max())
    resid = np.abs(dm.qt_times(M) - target[None]).max()
    if check and resid > 1e-10 * scale:
        raise RichnessError(f"gain matching residual {resid:.3g} exceeds tolerance")
    return M


def stack_target(top: np.ndarray, bottom: np.ndarray) -> np.ndarray:
    return np.vstack([np.atleast_2d(top), np.atleast_2d(bottom)])
