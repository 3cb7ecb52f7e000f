"""A small modelling layer for linear SDPs.

Problems are described with matrix variables, affine matrix expressions and
two constraint kinds (PSD, zero). Every expression is stored as a sparse map
from each variable's free entries to the column-major vectorization of the
expression, plus a dense constant. That canonical form is what the backend
sees, what the JSON export writes, and what post-solve checks re-evaluate.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

STATUSES = ("optimal", "feasible", "infeasible", "numerical_failure", "timeout")


class Variable:
    """A named matrix variable; symmetric ones carry only upper-triangle entries."""

    def __init__(self, name: str, shape: tuple[int, int], symmetric: bool = False):
        rows, cols = shape
        if symmetric and rows != cols:
            raise ValueError(f"symmetric variable {name} must be square")
        self.name = name
        self.shape = (int(rows), int(cols))
        self.symmetric = symmetric
        if symmetric:
            self.size = rows * (rows + 1) // 2
        else:
            self.size = rows * cols
        self._basis = None

    def basis(self) -> sp.csr_matrix:
        """Map from free entries to the column-major vec of the full matrix."""
        if self._basis is None:
            r, c = self.shape
            if not self.symmetric:
                self._basis = sp.identity(r * c, format="csr")
            else:
                rows, cols = [], []
                idx = 0
                for j in range(c):
                    for i in range(j + 1):
                        rows.append(j * r + i)
                        cols.append(idx)
                        if i != j:
                            rows.append(i * r + j)
                            cols.append(idx)
                        idx += 1
                self._basis = sp.csr_matrix(
                    (np.ones(len(rows)), (rows, cols)), shape=(r * c, self.size)
                )
        return self._basis

    def free_entries(self, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=float).reshape(self.shape)
        if not self.symmetric:
            return value.flatten(order="F")
        iu = np.triu_indices(self.shape[0])
        # column-major traversal of the upper triangle
        order = np.lexsort((iu[0], iu[1]))
        return value[iu[0][order], iu[1][order]]

    def from_free(self, v: np.ndarray) -> np.ndarray:
        return (self.basis() @ v).reshape(self.shape, order="F")

    def expr(self) -> "Affine":
        return Affine(self.shape, {self: self.basis()}, None)

    def __getitem__(self, key):
        return self.expr()[key]

    @property
    def T(self) -> "Affine":
        return self.expr().T

    def __matmul__(self, other):
        return self.expr() @ other

    def __rmatmul__(self, other):
        return other @ self.expr()

    def __add__(self, other):
        return self.expr() + other

    __radd__ = __add__

    def __sub__(self, other):
        return self.expr() - other

    def __rsub__(self, other):
        return other - self.expr()

    def __mul__(self, c):
        return self.expr() * c

    __rmul__ = __mul__

    def __neg__(self):
        return -self.expr()

    def times(self, M):
        return self.expr().times(M)

    __array_ufunc__ = None

    def __repr__(self):
        kind = "sym" if self.symmetric else "full"
        return f"Variable({self.name!r}, {self.shape}, {kind})"


class Affine:
    """Affine matrix expression ``sum_v A_v x_v + C`` in column-major vec form."""

    __array_ufunc__ = None

    def __init__(self, shape, coeffs: dict, const: np.ndarray | None):
        self.shape = (int(shape[0]), int(shape[1]))
        self.coeffs = {v: sp.csr_matrix(a) for v, a in coeffs.items()}
        if const is None:
            const = np.zeros(self.shape)
        self.const = np.asarray(const, dtype=float).reshape(self.shape)

    # construction helpers
    @staticmethod
    def constant(a) -> "Affine":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return Affine(a.shape, {}, a)

    @staticmethod
    def wrap(x) -> "Affine":
        if isinstance(x, Affine):
            return x
        if isinstance(x, Variable):
            return x.expr()
        return Affine.constant(x)

    @property
    def variables(self) -> list[Variable]:
        return list(self.coeffs)

    def _map(self, lin, const) -> "Affine":
        """Apply a linear map on vec space to every coefficient and the constant."""
        new_const = lin @ self.const.flatten(order="F")
        return Affine(const, {v: lin @ a for v, a in self.coeffs.items()}, new_const.reshape(const, order="F"))

    # arithmetic
    def __add__(self, other) -> "Affine":
        other = Affine.wrap(other)
        if other.shape != self.shape:
            if other.shape == (1, 1) and not other.coeffs:
                other = Affine.constant(np.full(self.shape, other.const[0, 0]))
            else:
                raise ValueError(f"shape mismatch {self.shape} + {other.shape}")
        coeffs = dict(self.coeffs)
        for v, a in other.coeffs.items():
            coeffs[v] = coeffs[v] + a if v in coeffs else a
        return Affine(self.shape, coeffs, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return Affine(self.shape, {v: -a for v, a in self.coeffs.items()}, -self.const)

    def __sub__(self, other) -> "Affine":
        return self + (-Affine.wrap(other))

    def __rsub__(self, other) -> "Affine":
        return Affine.wrap(other) + (-self)

    def __mul__(self, c) -> "Affine":
        if isinstance(c, (Affine, Variable)):
            if isinstance(c, Variable) or c.coeffs:
                raise TypeError("product of two affine expressions is not affine")
            c = c.const
        if np.ndim(c) != 0:
            c = np.asarray(c, dtype=float)
            if c.size != 1:
                raise TypeError("use @ for matrix products")
            c = float(c.reshape(()))
        c = float(c)
        return Affine(self.shape, {v: c * a for v, a in self.coeffs.items()}, c * self.const)

    __rmul__ = __mul__

    def __matmul__(self, A) -> "Affine":
        # X @ A: vec(XA) = (A^T kron I_r) vec(X)
        if isinstance(A, (Affine, Variable)):
            A = Affine.wrap(A)
            if A.coeffs:
                raise TypeError("product of two affine expressions is not affine")
            A = A.const
        A = np.atleast_2d(np.asarray(A, dtype=float))
        r, c = self.shape
        if A.shape[0] != c:
            raise ValueError(f"shape mismatch {self.shape} @ {A.shape}")
        lin = sp.kron(sp.csr_matrix(A.T), sp.identity(r), format="csr")
        return self._map(lin, (r, A.shape[1]))

    def __rmatmul__(self, A) -> "Affine":
        # A @ X: vec(AX) = (I_c kron A) vec(X)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        r, c = self.shape
        if A.shape[1] != r:
            raise ValueError(f"shape mismatch {A.shape} @ {self.shape}")
        lin = sp.kron(sp.identity(c), sp.csr_matrix(A), format="csr")
        return self._map(lin, (A.shape[0], c))

    def times(self, M) -> "Affine":
        """Scalar expression times a constant matrix, e.g. ``gamma * I``."""
        if self.shape != (1, 1):
            raise ValueError("times() needs a scalar expression")
        M = np.atleast_2d(np.asarray(M, dtype=float))
        col = sp.csr_matrix(M.flatten(order="F")[:, None])
        return Affine(M.shape, {v: col @ a for v, a in self.coeffs.items()}, self.const[0, 0] * M)

    @property
    def T(self) -> "Affine":
        r, c = self.shape
        return self._select(np.arange(r * c).reshape(r, c, order="F").T.flatten(order="F"), (c, r))

    def _select(self, idx: np.ndarray, shape) -> "Affine":
        coeffs = {v: a[idx] for v, a in self.coeffs.items()}
        const = self.const.flatten(order="F")[idx].reshape(shape, order="F")
        return Affine(shape, coeffs, const)

    def __getitem__(self, key) -> "Affine":
        if not isinstance(key, tuple):
            key = (key, slice(None))
        r, c = self.shape
        rows = np.atleast_1d(np.arange(r)[key[0]])
        cols = np.atleast_1d(np.arange(c)[key[1]])
        grid = np.arange(r * c).reshape(r, c, order="F")[np.ix_(rows, cols)]
        return self._select(grid.flatten(order="F"), grid.shape)

    def prune(self) -> "Affine":
        coeffs = {}
        for v, a in self.coeffs.items():
            a = a.tocsr()
            a.eliminate_zeros()
            if a.nnz:
                coeffs[v] = a
        return Affine(self.shape, coeffs, self.const)

    def value(self, values: dict) -> np.ndarray:
        """Evaluate at ``values`` (variable name or Variable -> full matrix)."""
        out = self.const.flatten(order="F").copy()
        for v, a in self.coeffs.items():
            val = values[v.name] if v.name in values else values[v]
            out += a @ v.free_entries(val)
        return out.reshape(self.shape, order="F")

    def is_structurally_symmetric(self, tol: float = 0.0) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        t = self.T
        if np.abs(t.const - self.const).max(initial=0.0) > tol:
            return False
        for v in set(self.coeffs) | set(t.coeffs):
            zero = sp.csr_matrix((self.shape[0] ** 2, v.size))
            d = self.coeffs.get(v, zero) - t.coeffs.get(v, zero)
            if d.nnz and np.abs(d.data).max() > tol:
                return False
        return True

    def __repr__(self):
        names = ", ".join(v.name for v in self.coeffs)
        return f"Affine(shape={self.shape}, vars=[{names}])"


def hstack(items) -> Affine:
    return bmat([list(items)])


def vstack(items) -> Affine:
    return bmat([[x] for x in items])


def bmat(blocks) -> Affine:
    """Assemble a block matrix; ``None`` entries are zero blocks."""
    nr, nc = len(blocks), len(blocks[0])
    heights = [None] * nr
    widths = [None] * nc
    for i, row in enumerate(blocks):
        if len(row) != nc:
            raise ValueError("ragged block rows")
        for j, b in enumerate(row):
            if b is None:
                continue
            shape = Affine.wrap(b).shape
            if heights[i] not in (None, shape[0]) or widths[j] not in (None, shape[1]):
                raise ValueError(f"block ({i},{j}) has inconsistent shape {shape}")
            heights[i], widths[j] = shape[0], shape[1]
    if None in heights or None in widths:
        raise ValueError("every block row and column needs at least one sized block")
    R, C = sum(heights), sum(widths)
    roff = np.concatenate([[0], np.cumsum(heights)])
    coff = np.concatenate([[0], np.cumsum(widths)])

    const = np.zeros((R, C))
    parts: dict[Variable, list] = {}
    for i, row in enumerate(blocks):
        for j, b in enumerate(row):
            if b is None:
                continue
            b = Affine.wrap(b)
            h, w = b.shape
            const[roff[i]:roff[i] + h, coff[j]:coff[j] + w] = b.const
            # position of each block entry (column-major) inside the big matrix
            ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
            dest = ((coff[j] + jj) * R + roff[i] + ii).flatten(order="F")
            for v, a in b.coeffs.items():
                a = a.tocoo()
                parts.setdefault(v, []).append((dest[a.row], a.col, a.data))
    coeffs = {}
    for v, chunks in parts.items():
        rows = np.concatenate([c[0] for c in chunks])
        cols = np.concatenate([c[1] for c in chunks])
        data = np.concatenate([c[2] for c in chunks])
        coeffs[v] = sp.csr_matrix((data, (rows, cols)), shape=(R * C, v.size))
    return Affine((R, C), coeffs, const)


# -- problems -----------------------------------------------------------------


@dataclass(frozen=True)
class Constraint:
    label: str
    kind: str  # "psd" or "zero"
    expr: Affine


@dataclass(frozen=True)
class SdpProblem:
    """``maximize objective`` subject to PSD and zero constraints."""

    variables: tuple[Variable, ...]
    constraints: tuple[Constraint, ...]
    objective: Affine

    @property
    def psd_constraints(self) -> list[Constraint]:
        return [c for c in self.constraints if c.kind == "psd"]

    @property
    def equality_constraints(self) -> list[Constraint]:
        return [c for c in self.constraints if c.kind == "zero"]

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def num_scalar_variables(self) -> int:
        return sum(v.size for v in self.variables)

    def offsets(self) -> dict[Variable, int]:
        out, off = {}, 0
        for v in self.variables:
            out[v] = off
            off += v.size
        return out

    def stacked(self, expr: Affine) -> tuple[sp.csr_matrix, np.ndarray]:
        """Coefficients of ``vec(expr)`` over the concatenated free entries."""
        self.offsets()
        N = self.num_scalar_variables
        rows = expr.shape[0] * expr.shape[1]
        mats = []
        for v in self.variables:
            a = expr.coeffs.get(v)
            mats.append(a if a is not None else sp.csr_matrix((rows, v.size)))
        A = sp.hstack(mats, format="csr") if mats else sp.csr_matrix((rows, N))
        return A, expr.const.flatten(order="F")

    # sparse-triplet JSON
    def to_json_dict(self) -> dict:
        """Serialize to the triplet schema.

        ``variables``: name, shape, symmetric flag, offset and free-entry count.
        Each constraint lists ``[var, row, col, coeff]`` triplets where ``row``
        indexes the column-major vec of the expression and ``col`` the
        variable's free entries (column-major upper triangle when symmetric),
        and a dense column-major ``constant``.
        """
        offs = self.offsets()

        def enc(expr: Affine) -> dict:
            trip = []
            for v, a in expr.coeffs.items():
                a = a.tocoo()
                trip.extend([v.name, int(r), int(c), float(x)] for r, c, x in zip(a.row, a.col, a.data))
            return {
                "shape": list(expr.shape),
                "triplets": trip,
                "constant": expr.const.flatten(order="F").tolist(),
            }

        return {
            "format": "ltn-sdp-triplets",
            "version": 1,
            "sense": "maximize",
            "variables": [
                {"name": v.name, "shape": list(v.shape), "symmetric": v.symmetric,
                 "offset": offs[v], "size": v.size}
                for v in self.variables
            ],
            "objective": enc(self.objective),
            "constraints": [{"label": c.label, "kind": c.kind, **enc(c.expr)} for c in self.constraints],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SdpProblem":
        vars_ = [Variable(v["name"], tuple(v["shape"]), v["symmetric"]) for v in d["variables"]]
        by_name = {v.name: v for v in vars_}

        def dec(e: dict) -> Affine:
            shape = tuple(e["shape"])
            rows = shape[0] * shape[1]
            grouped: dict[str, list] = {}
            for name, r, c, x in e["triplets"]:
                grouped.setdefault(name, []).append((r, c, x))
            coeffs = {}
            for name, items in grouped.items():
                v = by_name[name]
                r, c, x = map(np.asarray, zip(*items))
                coeffs[v] = sp.csr_matrix((x.astype(float), (r, c)), shape=(rows, v.size))
            const = np.asarray(e["constant"], dtype=float).reshape(shape, order="F")
            return Affine(shape, coeffs, const)

        cons = tuple(Constraint(c["label"], c["kind"], dec(c)) for c in d["constraints"])
        return cls(tuple(vars_), cons, dec(d["objective"]))

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def load_json(cls, path) -> "SdpProblem":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


class ProblemBuilder:
    def __init__(self):
        self._vars: list[Variable] = []
        self._cons: list[Constraint] = []
        self._objective: Affine | None = None

    def variable(self, name: str, shape, symmetric: bool = False) -> Variable:
        if any(v.name == name for v in self._vars):
            raise ValueError(f"duplicate variable name {name!r}")
        v = Variable(name, shape, symmetric)
        self._vars.append(v)
        return v

    def psd(self, expr, label: str) -> None:
        expr = Affine.wrap(expr).prune()
        if expr.shape[0] != expr.shape[1]:
            raise ValueError(f"PSD constraint {label!r} is not square: {expr.shape}")
        if not expr.is_structurally_symmetric(tol=1e-12):
            raise ValueError(f"PSD constraint {label!r} is not symmetric by construction")
        self._cons.append(Constraint(label, "psd", expr))

    def zero(self, expr, label: str) -> None:
        self._cons.append(Constraint(label, "zero", Affine.wrap(expr).prune()))

    def maximize(self, expr) -> None:
        expr = Affine.wrap(expr)
        if expr.shape != (1, 1):
            raise ValueError("objective must be scalar")
        self._objective = expr

    def build(self) -> SdpProblem:
        known = set(self._vars)
        objective = self._objective if self._objective is not None else Affine.constant(0.0)
        for c in self._cons + [Constraint("objective", "zero", objective)]:
            stray = [v.name for v in c.expr.coeffs if v not in known]
            if stray:
                raise ValueError(f"constraint {c.label!r} uses undeclared variables {stray}")
        return SdpProblem(tuple(self._vars), tuple(self._cons), objective)


# -- solving ------------------------------------------------------------------


@dataclass(frozen=True)
class SolverSettings:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-6
    max_iters: int | None = None
    time_limit: float | None = None
    solver: str = field(default_factory=lambda: os.environ.get("LTN_SOLVER", "CLARABEL"))
    fallbacks: tuple[str, ...] = ("SCS",)
    verbose: bool = False


@dataclass(frozen=True)
class SdpSolution:
    status: str
    values: dict | None
    objective: float | None
    stats: dict
    residuals: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "feasible")

    def __getitem__(self, name: str) -> np.ndarray:
        if self.values is None:
            raise KeyError(f"no values for status {self.status}")
        return self.values[name]


def constraint_residuals(p: SdpProblem, values: dict) -> dict:
    """Min eigenvalue of every PSD block and max abs entry of every zero block."""
    out = {}
    for c in p.constraints:
        v = c.expr.value(values)
        if c.kind == "psd":
            out[c.label] = float(np.linalg.eigvalsh(0.5 * (v + v.T)).min())
        else:
            out[c.label] = float(np.abs(v).max(initial=0.0))
    return out


def residuals_ok(p: SdpProblem, res: dict, feas_tol: float) -> bool:
    for c in p.constraints:
        r = res[c.label]
        if c.kind == "psd" and r < -feas_tol:
            return False
        if c.kind == "zero" and r > feas_tol:
            return False
    return True


_CVX_STATUS = {
    "optimal": "optimal",
    "optimal_inaccurate": "inaccurate",
    "infeasible": "infeasible",
    "infeasible_inaccurate": "infeasible",
    "unbounded": "numerical_failure",
    "unbounded_inaccurate": "numerical_failure",
    "user_limit": "timeout",
    "solver_error": "numerical_failure",
}


#: extra attempts when a backend breaks down; a larger static regularization
#: rescues Clarabel on KKT systems made singular by redundant rows
RETRY_OPTIONS = {"CLARABEL": ({"static_regularization_constant": 1e-7},)}


def _backend_options(name: str, settings: "SolverSettings") -> dict:
    kw = {}
    if name == "CLARABEL":
        if settings.max_iters:
            kw["max_iter"] = settings.max_iters
        if settings.time_limit:
            kw["time_limit"] = settings.time_limit
    elif name == "SCS":
        kw["eps_abs"] = kw["eps_rel"] = min(1e-8, settings.feas_tol)
        if settings.max_iters:
            kw["max_iters"] = settings.max_iters
        if settings.time_limit:
            kw["time_limit_secs"] = settings.time_limit
    return kw


def solve(p: SdpProblem, settings: SolverSettings | None = None) -> SdpSolution:
    """Solve with a cvxpy-supported conic backend and re-check the answer.

    The returned values are re-evaluated against every constraint. An
    ``optimal`` claim that fails the check is downgraded to
    ``numerical_failure``; an inaccurate solve that passes becomes ``feasible``.
    Breakdowns are retried with safer options and then with the fallback
    solvers of ``settings``; infeasibility and timeouts are final.
    """
    settings = settings or SolverSettings()
    if p.num_scalar_variables == 0:
        return _solve_constant(p, time.perf_counter())
    name = settings.solver.upper()
    attempts = [(name, {})] + [(name, o) for o in RETRY_OPTIONS.get(name, ())]
    attempts += [(f.upper(), {}) for f in settings.fallbacks if f.upper() != name]
    sol = None
    for solver, extra in attempts:
        sol = _solve_once(p, settings, solver, extra)
        if sol.status != "numerical_failure":
            break
        logger.info("%s %s ended in numerical failure, trying next backend", solver, extra)
    return sol


def _solve_once(p: SdpProblem, settings: SolverSettings, name: str, extra: dict) -> SdpSolution:
    import cvxpy as cp

    t0 = time.perf_counter()
    x = cp.Variable(p.num_scalar_variables)
    cons = []
    for c in p.constraints:
        A, b = p.stacked(c.expr)
        if c.kind == "zero":
            keep = (A.getnnz(axis=1) > 0) | (b != 0)
            if not keep.any():
                continue
            cons.append(A[keep] @ x + b[keep] == 0)
        else:
            E = cp.reshape(A @ x + b, c.expr.shape, order="F")
            cons.append(0.5 * (E + E.T) >> 0)
    a, b0 = p.stacked(p.objective)
    prob = cp.Problem(cp.Maximize((a @ x)[0] + b0[0]), cons)

    kwargs = {**_backend_options(name, settings), **extra}
    try:
        prob.solve(solver=name, verbose=settings.verbose, **kwargs)
        raw = prob.status
    except cp.error.SolverError as exc:
        logger.info("solver %s failed: %s", name, exc)
        raw = "solver_error"
    stats = {"solver": name, "options": extra, "raw_status": raw, "time": time.perf_counter() - t0}
    ss = getattr(prob, "solver_stats", None)
    if ss is not None and ss.num_iters is not None:
        stats["iterations"] = int(ss.num_iters)

    status = _CVX_STATUS.get(raw, "numerical_failure")
    if status not in ("optimal", "inaccurate") or x.value is None:
        if status == "inaccurate":
            status = "numerical_failure"
        return SdpSolution(status, None, None, stats)

    values = {}
    offs = p.offsets()
    for v in p.variables:
        values[v.name] = v.from_free(x.value[offs[v]:offs[v] + v.size])
    res = constraint_residuals(p, values)
    if not residuals_ok(p, res, settings.feas_tol):
        logger.info("solution from %s fails re-evaluation at tol %g", name, settings.feas_tol)
        return SdpSolution("numerical_failure", None, None, stats, res)
    obj = float(p.objective.value(values)[0, 0])
    return SdpSolution("optimal" if status == "optimal" else "feasible", values, obj, stats, res)


def _solve_constant(p: SdpProblem, t0: float) -> SdpSolution:
    res = constraint_residuals(p, {})
    ok = residuals_ok(p, res, 0.0)
    stats = {"solver": "none", "time": time.perf_counter() - t0}
    if not ok:
        return SdpSolution("infeasible", None, None, stats, res)
    return SdpSolution("optimal", {}, float(p.objective.const[0, 0]), stats, res)
