"""Data-driven controller synthesis via LMIs.

Two controllers are designed purely from :class:`~ltnctrl.data.DataMatrices`:

* feedforward ``u = K1 x + K2 r``;
* integral ``u = K1 (x - r) + K2 xi`` with ``xi(t+1) = xi(t) + x(t) - r``.

Both certificates are common quadratic Lyapunov functions for the switched
closed loop, whose modes are the diagonal 0/1 matrices ``R`` (the threshold
either passes a node through or cuts it). Strictness is obtained by
maximizing a margin ``gamma`` on the mode ``R = I`` under the normalization
``P <= I``.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import sdp
from .data import DataMatrices, RichnessError, check_richness, numerical_rank, solve_M_for_gains

logger = logging.getLogger(__name__)

GAMMA_MIN = 1e-6
MAX_COND = 1e10
VERTEX_CAP = 16
#: tolerances of the certificate check
PSD_TOL = 1e-8
EQ_TOL = 1e-6


class SynthesisError(RuntimeError):
    exit_code = 1


class InfeasibleSynthesisError(SynthesisError):
    """The LMIs have no solution with a positive margin for these data."""

    exit_code = 2


class NumericalError(SynthesisError):
    """Solver breakdown or an ill-conditioned certificate."""

    exit_code = 3


# -- constant matrices and vertex sets ----------------------------------------


@dataclass(frozen=True, eq=False)
class ConstantMatrices:
    n: int
    m: int
    L: np.ndarray
    calL: np.ndarray
    C1: np.ndarray
    C2: np.ndarray


def build_constant_matrices(n: int, m: int) -> ConstantMatrices:
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    L = n * np.eye(n) - np.ones((n, n))
    calL = np.kron(L, np.eye(n + m))
    C1 = np.zeros((n, n * (n + m)))
    C1[:, :n] = np.eye(n)
    C2 = np.zeros((m, n * (n + m)))
    C2[:, n:n + m] = np.eye(m)
    return ConstantMatrices(n, m, L, calL, C1, C2)


@dataclass(frozen=True, eq=False)
class VertexSet:
    kind: str
    diagonals: np.ndarray  # one row of 0/1 entries per vertex

    def __len__(self) -> int:
        return self.diagonals.shape[0]

    @property
    def matrices(self) -> list[np.ndarray]:
        return [np.diag(d) for d in self.diagonals]


def enumerate_vertices(n: int, kind: str, cap: int = VERTEX_CAP) -> VertexSet:
    """Full set: all ``2^n`` 0/1 diagonals, identity first. Reduced: 0 and each ``e_k e_k^T``."""
    if kind == "full":
        if n > cap:
            raise ValueError(
                f"full vertex enumeration needs 2^{n} blocks (cap n <= {cap}); use reduced mode"
            )
        others = [b for b in itertools.product((0.0, 1.0), repeat=n) if not all(b)]
        diags = np.array([[1.0] * n] + others)
    elif kind == "reduced":
        diags = np.vstack([np.zeros((1, n)), np.eye(n)])
    else:
        raise ValueError(f"unknown vertex kind {kind!r}")
    return VertexSet(kind, diags)


def default_vertex_mode(n: int) -> str:
    return "reduced" if n > 8 else "full"


def certificate_vertices(n: int, mode: str) -> list[np.ndarray]:
    """Diagonals of the non-strict mode blocks imposed by the program.

    Full mode drops the identity (it carries the strict block); reduced mode
    scales every ``R~_k`` by ``n``.
    """
    vs = enumerate_vertices(n, mode)
    if mode == "full":
        return list(vs.diagonals[1:])
    return [n * d for d in vs.diagonals]


# -- program assembly ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Program:
    """An assembled SDP plus the handles needed to read the certificate."""

    kind: str
    vertex_mode: str
    problem: sdp.SdpProblem
    n: int
    T_d: int
    blocks: tuple = ()

    def certificate(self, sol: sdp.SdpSolution) -> dict:
        """``P``, ``S1``, ``S2`` and ``gamma`` in the original coordinates."""
        S1, S2 = self.blocks
        return {
            "P": sol["P"],
            "S1": S1.full_value(sol[S1.var.name]),
            "S2": S2.full_value(sol[S2.var.name]),
            "gamma": float(sol["gamma"][0, 0]),
        }


class _SBlocks:
    """Stacked per-node decision blocks ``S_i``.

    With ``compress`` each ``S_i`` is written as ``G_i Y_i`` where ``G_i`` is
    an orthonormal basis of the range of ``[Q_i, Z_i^T]``. The constraints see
    ``S_i`` only through ``Q_i^T S_i`` and ``Z_i S_i``, so this change of
    variables loses nothing while shrinking ``T_d x n`` unknowns per block to
    at most ``(n+m+1) x n``.
    """

    def __init__(self, b: sdp.ProblemBuilder, dm: DataMatrices, name: str, compress: bool):
        n, T = dm.n, dm.T_d
        self.compress = compress
        if compress:
            self.G = [_range_basis(np.hstack([dm.Q[i], dm.Z[i][:, None]])) for i in range(n)]
        else:
            self.G = [None] * n
        sizes = [T if g is None else g.shape[1] for g in self.G]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.var = b.variable(name if not compress else f"Y{name[1:]}", (int(self.offsets[-1]), n))
        self.dm = dm

    def _block(self, i):
        return self.var[self.offsets[i]:self.offsets[i + 1], :]

    def z_times(self) -> sdp.Affine:
        rows = []
        for i in range(self.dm.n):
            z = self.dm.Z[i][None, :]
            rows.append((z if self.G[i] is None else z @ self.G[i]) @ self._block(i))
        return sdp.vstack(rows)

    def qt_times(self, i: int) -> sdp.Affine:
        q = self.dm.Q[i].T
        return (q if self.G[i] is None else q @ self.G[i]) @ self._block(i)

    def full_value(self, value: np.ndarray) -> np.ndarray:
        """Map the solved variable back to the stacked ``(n*T_d) x n`` matrix ``S``."""
        if not self.compress:
            return value
        return np.vstack([
            self.G[i] @ value[self.offsets[i]:self.offsets[i + 1]] for i in range(self.dm.n)
        ])


def _range_basis(A: np.ndarray) -> np.ndarray:
    U, sv, _ = np.linalg.svd(A, full_matrices=False)
    if sv.size == 0 or sv[0] == 0:
        return U[:, :0]
    keep = sv > max(A.shape) * sv[0] * np.finfo(float).eps * 10
    return U[:, keep]


def _decoupling(b: sdp.ProblemBuilder, S: _SBlocks, name: str):
    """``calL Q^T S = 0`` written as ``Q_i^T S_i = Q_1^T S_1`` for ``i >= 2``."""
    first = S.qt_times(0)
    for i in range(1, S.dm.n):
        b.zero(S.qt_times(i) - first, f"decouple_{name}_{i + 1}")
    return first


def _sym_block(P, A) -> sdp.Affine:
    return sdp.bmat([[P, A.T], [A, P]])


def _resolve_mode(n: int, vertex_mode: str | None) -> str:
    mode = vertex_mode or default_vertex_mode(n)
    if mode not in ("full", "reduced"):
        raise ValueError(f"vertex mode must be 'full' or 'reduced', got {mode!r}")
    if mode == "full" and n > VERTEX_CAP:
        raise ValueError(f"full vertex mode capped at n <= {VERTEX_CAP}; use reduced mode")
    return mode


def assemble_ff_program(
    dm: DataMatrices, alpha: float, vertex_mode: str | None = None, compress: bool = False
) -> Program:
    n, T = dm.n, dm.T_d
    mode = _resolve_mode(n, vertex_mode)
    b = sdp.ProblemBuilder()
    P = b.variable("P", (n, n), symmetric=True)
    S1 = _SBlocks(b, dm, "S1", compress)
    S2 = _SBlocks(b, dm, "S2", compress)
    g = b.variable("gamma", (1, 1))
    ZS1, ZS2 = S1.z_times(), S2.z_times()

    b.psd(np.eye(n) - P, "P_le_I")
    b.psd(_sym_block(P, alpha * P + ZS1) - g.times(np.eye(2 * n)), "strict")
    for d in certificate_vertices(n, mode):
        tag = "".join(f"{v:g}" for v in d)
        b.psd(_sym_block(P, alpha * P + np.diag(d) @ ZS1), f"vertex_{tag}")

    q1 = _decoupling(b, S1, "S1")
    q2 = _decoupling(b, S2, "S2")
    b.zero(q1[:n, :] - P, "C1QS1_eq_P")
    b.zero(q2[:n, :], "C1QS2_eq_0")
    b.zero(ZS1 + ZS2 - (1 - alpha) * P, "ZS_sum")
    b.maximize(g)
    return Program("feedforward", mode, b.build(), n, T, (S1, S2))


def implied_zero_pattern(n: int, diagonals) -> tuple[list[int], list[tuple[int, int]]]:
    """Columns and entries forced to zero by the integral vertex blocks.

    When ``R[k,k] = 0`` the mode block has a fixed null direction built from
    ``e_k``, so positive semidefiniteness forces the block to annihilate it.
    That pins column ``k`` of ``P11 + (1-alpha) P12`` and entry ``(j, k)`` of
    ``Z(S1 + (1-alpha) S2)`` for every ``j`` with ``R[j,j] != 0``.
    """
    cols, entries = set(), set()
    for d in diagonals:
        off = [k for k in range(n) if d[k] == 0]
        on = [j for j in range(n) if d[j] != 0]
        cols.update(off)
        entries.update((j, k) for j in on for k in off)
    return sorted(cols), sorted(entries)


def assemble_integral_program(
    dm: DataMatrices,
    alpha: float,
    vertex_mode: str | None = None,
    implied_equalities: bool = True,
    compress: bool = False,
) -> Program:
    n, T = dm.n, dm.T_d
    mode = _resolve_mode(n, vertex_mode)
    b = sdp.ProblemBuilder()
    P = b.variable("P", (2 * n, 2 * n), symmetric=True)
    S1 = _SBlocks(b, dm, "S1", compress)
    S2 = _SBlocks(b, dm, "S2", compress)
    g = b.variable("gamma", (1, 1))
    ZS1, ZS2 = S1.z_times(), S2.z_times()
    P11, P12, P22 = P[:n, :n], P[:n, n:], P[n:, n:]
    bottom = [P11 + P12.T, P12 + P22]

    def block(R):
        A = sdp.bmat([[alpha * P11 + R @ ZS1, alpha * P12 + R @ ZS2], bottom])
        return _sym_block(P, A)

    b.psd(np.eye(2 * n) - P, "P_le_I")
    b.psd(block(np.eye(n)) - g.times(np.eye(4 * n)), "strict")
    verts = certificate_vertices(n, mode)
    for d in verts:
        tag = "".join(f"{v:g}" for v in d)
        b.psd(block(np.diag(d)), f"vertex_{tag}")

    q1 = _decoupling(b, S1, "S1")
    q2 = _decoupling(b, S2, "S2")
    b.zero(q1[:n, :] - P11, "C1QS1_eq_P11")
    b.zero(q2[:n, :] - P12, "C1QS2_eq_P12")

    if implied_equalities:
        cols, entries = implied_zero_pattern(n, verts)
        if cols:
            b.zero((P11 + (1 - alpha) * P12)[:, cols], "implied_P")
        if entries:
            Y = ZS1 + (1 - alpha) * ZS2
            b.zero(sdp.vstack([Y[j, k] for j, k in entries]), "implied_ZS")
    b.maximize(g)
    return Program("integral", mode, b.build(), n, T, (S1, S2))


# -- results ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    controller_kind: str
    K1: np.ndarray
    K2: np.ndarray
    P_bar: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    gamma: float
    vertex_mode: str
    alpha: float
    residuals: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    M: np.ndarray | None = None
    U: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.K1.shape[1]

    @property
    def m(self) -> int:
        return self.K1.shape[0]

    def P_blocks(self) -> dict:
        n = self.n
        if self.controller_kind != "integral":
            return {"P": self.P_bar}
        P = self.P_bar
        return {"P11": P[:n, :n], "P12": P[:n, n:], "P22": P[n:, n:]}

    def to_dict(self) -> dict:
        d = {
            "controller_kind": self.controller_kind,
            "vertex_mode": self.vertex_mode,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "K1": self.K1.tolist(),
            "K2": self.K2.tolist(),
            "P_bar": self.P_bar.tolist(),
            "S1": self.S1.tolist(),
            "S2": self.S2.tolist(),
            "residuals": self.residuals,
            "solver": self.solver,
        }
        if self.controller_kind == "integral":
            d["P_blocks"] = {k: v.tolist() for k, v in self.P_blocks().items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisResult":
        arr = lambda k: np.array(d[k], dtype=float)  # noqa: E731
        return cls(
            controller_kind=d["controller_kind"],
            K1=arr("K1"),
            K2=arr("K2"),
            P_bar=arr("P_bar"),
            S1=arr("S1"),
            S2=arr("S2"),
            gamma=float(d["gamma"]),
            vertex_mode=d["vertex_mode"],
            alpha=float(d["alpha"]),
            residuals=d.get("residuals", {}),
            solver=d.get("solver", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "SynthesisResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def stacked_qt(dm: DataMatrices, S: np.ndarray) -> np.ndarray:
    """``Q^T S`` as the ``n(n+m) x c`` stack of per-node blocks."""
    return dm.qt_times(S).reshape(dm.n * (dm.n + dm.m), -1)


def _solve_right(X: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``X P^{-1}`` for symmetric positive definite ``P``."""
    return sla.solve(P, X.T, assume_a="pos").T


def _check_P(P: np.ndarray, gamma: float, gamma_min: float) -> float:
    eig = np.linalg.eigvalsh(P)
    if eig[0] <= 0:
        raise NumericalError(f"certificate matrix not positive definite (min eig {eig[0]:.3g})")
    cond = eig[-1] / eig[0]
    if cond > MAX_COND:
        raise NumericalError(f"certificate matrix too ill-conditioned (cond {cond:.3g} > {MAX_COND:g})")
    if not gamma > gamma_min:
        raise InfeasibleSynthesisError(
            f"margin gamma={gamma:.3g} not above {gamma_min:g}; "
            "collect more data or try full vertex mode"
        )
    return float(cond)


def _achieved_margin(block: np.ndarray, gamma_solver: float) -> float:
    # report what the returned certificate actually achieves on the strict mode
    return float(min(gamma_solver, np.linalg.eigvalsh(block).min()))


def strict_block_ff(P, ZS1, alpha) -> np.ndarray:
    A = alpha * P + ZS1
    return np.block([[P, A.T], [A, P]])


def mode_block_ff(P, ZS1, alpha, R) -> np.ndarray:
    A = alpha * P + R @ ZS1
    return np.block([[P, A.T], [A, P]])


def mode_block_int(P, ZS1, ZS2, alpha, R) -> np.ndarray:
    n = ZS1.shape[0]
    P11, P12, P22 = P[:n, :n], P[:n, n:], P[n:, n:]
    A = np.block([[alpha * P11 + R @ ZS1, alpha * P12 + R @ ZS2], [P11 + P12.T, P12 + P22]])
    return np.block([[P, A.T], [A, P]])


def _read_certificate(sol: sdp.SdpSolution, program: Program | None) -> dict:
    if program is not None:
        return program.certificate(sol)
    return {"P": sol["P"], "S1": sol["S1"], "S2": sol["S2"], "gamma": float(sol["gamma"][0, 0])}


def extract_ff_gains(
    sol: sdp.SdpSolution,
    dm: DataMatrices,
    consts: ConstantMatrices | None = None,
    vertex_mode: str = "full",
    gamma_min: float = GAMMA_MIN,
    program: Program | None = None,
) -> SynthesisResult:
    if not sol.ok:
        raise InfeasibleSynthesisError(f"no certificate: solver status {sol.status}")
    consts = consts or build_constant_matrices(dm.n, dm.m)
    cert = _read_certificate(sol, program)
    P, S1, S2, gamma_solver = cert["P"], cert["S1"], cert["S2"], cert["gamma"]
    P = 0.5 * (P + P.T)
    gamma = _achieved_margin(strict_block_ff(P, dm.z_times(S1), dm.alpha), gamma_solver)
    cond = _check_P(P, gamma, gamma_min)
    K1 = _solve_right(consts.C2 @ stacked_qt(dm, S1), P)
    K2 = _solve_right(consts.C2 @ stacked_qt(dm, S2), P)
    solver = dict(sol.stats, status=sol.status, gamma_solver=gamma_solver, cond_P=cond)
    res = SynthesisResult("feedforward", K1, K2, P, S1, S2, gamma, vertex_mode, dm.alpha, solver=solver)
    return _with_residuals(res, dm, consts)


def extract_integral_gains(
    sol: sdp.SdpSolution,
    dm: DataMatrices,
    consts: ConstantMatrices | None = None,
    vertex_mode: str = "full",
    gamma_min: float = GAMMA_MIN,
    program: Program | None = None,
) -> SynthesisResult:
    if not sol.ok:
        raise InfeasibleSynthesisError(f"no certificate: solver status {sol.status}")
    n = dm.n
    consts = consts or build_constant_matrices(n, dm.m)
    cert = _read_certificate(sol, program)
    P, S1, S2, gamma_solver = cert["P"], cert["S1"], cert["S2"], cert["gamma"]
    P = 0.5 * (P + P.T)
    strict = mode_block_int(P, dm.z_times(S1), dm.z_times(S2), dm.alpha, np.eye(n))
    gamma = _achieved_margin(strict, gamma_solver)
    cond = _check_P(P, gamma, gamma_min)
    S = np.hstack([S1, S2])
    KK = _solve_right(consts.C2 @ stacked_qt(dm, S), P)
    MU = _solve_right(S, P)
    M, U = MU[:, :n], MU[:, n:]
    check_zu_nonsingular(dm, U)
    solver = dict(sol.stats, status=sol.status, gamma_solver=gamma_solver, cond_P=cond)
    res = SynthesisResult(
        "integral", KK[:, :n], KK[:, n:], P, S1, S2, gamma, vertex_mode, dm.alpha,
        solver=solver, M=M, U=U,
    )
    return _with_residuals(res, dm, consts)


def check_zu_nonsingular(dm: DataMatrices, U: np.ndarray, tol: float = 1e-8) -> float:
    smin = float(np.linalg.svd(dm.z_times(U), compute_uv=False).min())
    if not smin > tol:
        raise NumericalError(
            f"Z U is numerically singular (min singular value {smin:.3g}); "
            "the integrator equilibrium is not well defined"
        )
    return smin


def _with_residuals(res: SynthesisResult, dm: DataMatrices, consts: ConstantMatrices) -> SynthesisResult:
    report = validate_certificate(res, dm, consts=consts)
    object.__setattr__(res, "residuals", report.as_residual_map())
    return res


def integral_maps(res: SynthesisResult, dm: DataMatrices) -> dict:
    """Data maps of the integral loop.

    ``M``, ``U`` come from the certificate and ``N`` is the min-norm match of
    ``[0; -K1]``. ``MN`` is the min-norm match of ``[I; 0]``, which equals
    ``M + N`` in exact arithmetic but avoids cancelling the large ``B K1``
    terms that ``Z M`` and ``Z N`` carry separately. ``UK`` is the min-norm
    match of ``[0; K2]``; it shares ``Q_i^T U_i`` with ``U`` but skips the
    division by the ill-conditioned ``P``.
    """
    n = dm.n
    MU = _solve_right(np.hstack([res.S1, res.S2]), res.P_bar)
    zeros = np.zeros((n, n))
    N = solve_M_for_gains(dm, np.vstack([zeros, -res.K1]))
    MN = solve_M_for_gains(dm, np.vstack([np.eye(n), np.zeros((dm.m, n))]))
    UK = solve_M_for_gains(dm, np.vstack([zeros, res.K2]))
    return {"M": MU[:, :n], "U": MU[:, n:], "N": N, "MN": MN, "UK": UK}


# -- certificate check --------------------------------------------------------


@dataclass
class CertificateReport:
    P_min_eig: float
    P_max_eig: float
    strict_min_eig: float
    gamma: float
    vertex_min_eigs: dict
    equality_residuals: dict
    full_recheck: bool
    psd_tol: float = PSD_TOL
    eq_tol: float = EQ_TOL
    notes: list = field(default_factory=list)

    @property
    def worst_vertex(self) -> float:
        return min(self.vertex_min_eigs.values(), default=np.inf)

    @property
    def passed(self) -> bool:
        return (
            self.P_min_eig > 0
            and self.P_max_eig <= 1 + self.psd_tol
            and self.worst_vertex >= -self.psd_tol
            and self.strict_min_eig >= self.gamma * (1 - 1e-6)
            and all(v <= self.eq_tol for v in self.equality_residuals.values())
        )

    def failures(self) -> list[str]:
        out = []
        if self.P_min_eig <= 0:
            out.append(f"P not positive definite ({self.P_min_eig:.3g})")
        if self.P_max_eig > 1 + self.psd_tol:
            out.append(f"P exceeds identity ({self.P_max_eig:.6g})")
        out += [f"{k}: min eig {v:.3g}" for k, v in self.vertex_min_eigs.items() if v < -self.psd_tol]
        if self.strict_min_eig < self.gamma * (1 - 1e-6):
            out.append(f"strict block {self.strict_min_eig:.3g} below gamma {self.gamma:.3g}")
        out += [f"{k}: residual {v:.3g}" for k, v in self.equality_residuals.items() if v > self.eq_tol]
        return out

    def as_residual_map(self) -> dict:
        return {
            "P_min_eig": self.P_min_eig,
            "P_max_eig": self.P_max_eig,
            "strict_min_eig": self.strict_min_eig,
            "worst_vertex_min_eig": self.worst_vertex,
            **{f"eq:{k}": v for k, v in self.equality_residuals.items()},
        }

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "full_recheck": self.full_recheck,
            "P_min_eig": self.P_min_eig,
            "P_max_eig": self.P_max_eig,
            "strict_min_eig": self.strict_min_eig,
            "gamma": self.gamma,
            "vertex_min_eigs": self.vertex_min_eigs,
            "equality_residuals": self.equality_residuals,
            "failures": self.failures(),
            "notes": self.notes,
        }


def _rel(resid: np.ndarray, scale: float) -> float:
    return float(np.linalg.norm(resid) / max(scale, 1.0))


def validate_certificate(
    res: SynthesisResult,
    dm: DataMatrices,
    alpha: float | None = None,
    full_recheck: bool = False,
    consts: ConstantMatrices | None = None,
) -> CertificateReport:
    """Re-evaluate every condition of the certificate from ``(P, S1, S2)``.

    Equalities go through the dense ``calL``, ``C1`` route, independent of
    the blockwise encoding used to build the program. With ``full_recheck`` a
    reduced-mode certificate is also checked on all ``2^n`` modes.
    """
    alpha = dm.alpha if alpha is None else alpha
    n = dm.n
    consts = consts or build_constant_matrices(n, dm.m)
    P = res.P_bar
    S1, S2 = res.S1, res.S2
    ZS1, ZS2 = dm.z_times(S1), dm.z_times(S2)
    QS1, QS2 = stacked_qt(dm, S1), stacked_qt(dm, S2)
    eig = np.linalg.eigvalsh(P)
    integral = res.controller_kind == "integral"
    scale = np.linalg.norm(P)

    eqs = {
        "decouple_S1": _rel(consts.calL @ QS1, np.linalg.norm(QS1)),
        "decouple_S2": _rel(consts.calL @ QS2, np.linalg.norm(QS2)),
    }
    if integral:
        eqs["C1QS1_eq_P11"] = _rel(consts.C1 @ QS1 - P[:n, :n], scale)
        eqs["C1QS2_eq_P12"] = _rel(consts.C1 @ QS2 - P[:n, n:], scale)

        def block(R):
            return mode_block_int(P, ZS1, ZS2, alpha, R)
    else:
        eqs["C1QS1_eq_P"] = _rel(consts.C1 @ QS1 - P, scale)
        eqs["C1QS2_eq_0"] = _rel(consts.C1 @ QS2, scale)
        eqs["ZS_sum"] = _rel(ZS1 + ZS2 - (1 - alpha) * P, scale)

        def block(R):
            return mode_block_ff(P, ZS1, alpha, R)

    verts = {}
    for d in certificate_vertices(n, res.vertex_mode):
        verts["".join(f"{v:g}" for v in d)] = float(np.linalg.eigvalsh(block(np.diag(d))).min())
    notes = []
    if full_recheck and res.vertex_mode != "full":
        if n <= VERTEX_CAP:
            for d in enumerate_vertices(n, "full").diagonals:
                verts["full:" + "".join(f"{v:g}" for v in d)] = float(
                    np.linalg.eigvalsh(block(np.diag(d))).min()
                )
        else:
            notes.append(f"full recheck skipped: n={n} exceeds cap {VERTEX_CAP}")
    strict = float(np.linalg.eigvalsh(block(np.eye(n))).min())
    return CertificateReport(
        P_min_eig=float(eig[0]),
        P_max_eig=float(eig[-1]),
        strict_min_eig=strict,
        gamma=res.gamma,
        vertex_min_eigs=verts,
        equality_residuals=eqs,
        full_recheck=full_recheck,
        notes=notes,
    )


# -- structural pre-check -------------------------------------------------------


def consistent_data_map(dm: DataMatrices, rtol: float = 1e-8) -> np.ndarray | None:
    """Rows ``h_i`` with ``Z_i^T = Q_i h_i`` when the data admit them exactly.

    Noise-free data always do (each unmasked sample is linear in ``p_d``);
    corrupted data usually do not, and then ``None`` is returned.
    """
    rows = []
    for i in range(dm.n):
        z = dm.Z[i]
        h = np.linalg.lstsq(dm.Q[i], z, rcond=None)[0]
        if np.linalg.norm(dm.Q[i] @ h - z) > rtol * max(np.linalg.norm(z), 1e-300):
            return None
        rows.append(h)
    return np.array(rows)


def structural_obstruction(dm: DataMatrices, kind: str) -> str | None:
    """Reason the LMIs cannot be feasible, read off exactly consistent data.

    With ``Z_i^T = Q_i h_i`` every product ``Z_i S_i`` equals
    ``h_i^T Q_i^T S_i``, so the decoupled programs collapse onto the matrix
    ``H = [H_x H_u]`` stacked from the ``h_i``:

    * feedforward matching needs ``((1-alpha) I - H_x) P = H_u Y`` with ``P``
      invertible, i.e. ``range((1-alpha) I - H_x)`` inside ``range(H_u)``;
    * the integral certificate forces ``Z U = H_u K2`` to be invertible, which
      needs ``rank(H_u) = n``.
    """
    H = consistent_data_map(dm)
    if H is None:
        return None
    n = dm.n
    Hx, Hu = H[:, :n], H[:, n:]
    rank_u = numerical_rank(Hu)
    if kind == "integral":
        if rank_u < n:
            return (
                f"input directions span only rank {rank_u} < n={n}; "
                "Z U cannot be invertible, so no integral certificate exists"
            )
    else:
        target = (1 - dm.alpha) * np.eye(n) - Hx
        if numerical_rank(np.hstack([Hu, target])) > rank_u:
            return (
                f"the reference cannot be matched: (1-alpha)I - H_x is not in the range "
                f"of the rank-{rank_u} input map"
            )
    return None


# -- one-call pipeline ----------------------------------------------------------


def synthesize(
    dm: DataMatrices,
    kind: str,
    vertex_mode: str | None = None,
    settings: sdp.SolverSettings | None = None,
    gamma_min: float = GAMMA_MIN,
    compress: bool = True,
) -> SynthesisResult:
    """Richness check, program assembly, solve and gain extraction.

    ``compress`` restricts each ``S_i`` to the range of the data (exact, and
    far better conditioned); turn it off to solve the program verbatim.

    Raises :class:`RichnessError`, :class:`InfeasibleSynthesisError` or
    :class:`NumericalError`.
    """
    rep = check_richness(dm)
    if not rep.passed:
        raise RichnessError(f"data not rich enough: deficient nodes {rep.deficient}")
    why = structural_obstruction(dm, "integral" if kind == "integral" else "feedforward")
    if why is not None:
        raise InfeasibleSynthesisError(why)
    if kind in ("ff", "feedforward"):
        prog = assemble_ff_program(dm, dm.alpha, vertex_mode, compress=compress)
        extract = extract_ff_gains
    elif kind == "integral":
        prog = assemble_integral_program(dm, dm.alpha, vertex_mode, compress=compress)
        extract = extract_integral_gains
    else:
        raise ValueError(f"unknown controller kind {kind!r}")
    sol = sdp.solve(prog.problem, settings)
    logger.info("solve: %s in %.2fs", sol.status, sol.stats.get("time", 0.0))
    if sol.status == "infeasible":
        raise InfeasibleSynthesisError("the LMI conditions are infeasible for these data")
    if sol.status in ("numerical_failure", "timeout"):
        raise NumericalError(f"solver ended with status {sol.status} ({sol.stats.get('raw_status')})")
    return extract(sol, dm, vertex_mode=prog.vertex_mode, gamma_min=gamma_min, program=prog)
