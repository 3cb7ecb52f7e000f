"""Closed-loop simulation, switching matrices and Lyapunov bookkeeping.

Gains come from data, but every run here uses the true plant.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import kernels
from .data import DataMatrices, solve_M_for_gains
from .model import AdmissibilityError, LtnSystem, UniformDisturbance, fmt_float, validate_initial_state
from .synthesis import NumericalError, SynthesisResult, integral_maps

#: minimum distance of an integral-control reference from the box faces
INTERIOR_MARGIN = 1e-6


@dataclass(frozen=True, eq=False)
class FeedforwardController:
    K1: np.ndarray
    K2: np.ndarray
    r: np.ndarray
    P_bar: np.ndarray | None = None

    kind = "feedforward"

    def input(self, x, xi=None) -> np.ndarray:
        return self.K1 @ x + self.K2 @ self.r

    def check_reference(self, sys: LtnSystem) -> None:
        _check_ref(sys, self.r, 0.0)

    @classmethod
    def from_result(cls, res: SynthesisResult, r) -> "FeedforwardController":
        return cls(res.K1, res.K2, np.asarray(r, dtype=float), res.P_bar)


@dataclass(frozen=True, eq=False)
class IntegralController:
    """``u = K1 (x - r) + K2 xi`` with ``xi(0) = 0``."""

    K1: np.ndarray
    K2: np.ndarray
    r: np.ndarray
    P_bar: np.ndarray | None = None
    xi_star: np.ndarray | None = None

    kind = "integral"

    def input(self, x, xi) -> np.ndarray:
        return self.K1 @ (x - self.r) + self.K2 @ xi

    def check_reference(self, sys: LtnSystem) -> None:
        _check_ref(sys, self.r, INTERIOR_MARGIN)

    @classmethod
    def from_result(cls, res: SynthesisResult, r, dm: DataMatrices | None = None) -> "IntegralController":
        r = np.asarray(r, dtype=float)
        xi_star = None
        if dm is not None:
            maps = integral_maps(res, dm)
            xi_star = compute_xi_star(dm, maps["MN"], None, maps["UK"], dm.alpha, r)
        return cls(res.K1, res.K2, r, res.P_bar, xi_star)


def _check_ref(sys: LtnSystem, r: np.ndarray, margin: float) -> None:
    if r.shape != (sys.n,):
        raise AdmissibilityError(f"reference must have length {sys.n}")
    hi = sys.state_upper_bound()
    if margin > 0:
        if np.min(np.minimum(r, hi - r)) < margin:
            raise AdmissibilityError(
                f"integral control needs a reference strictly inside (0, {hi:.6g})"
            )
    elif np.any(r < 0) or np.any(r > hi):
        raise AdmissibilityError(f"reference leaves the box [0, {hi:.6g}]")


@dataclass(frozen=True, eq=False)
class ClosedLoopTrace:
    x: np.ndarray
    u: np.ndarray
    r: np.ndarray
    xi: np.ndarray | None = None
    V: np.ndarray | None = None
    w: np.ndarray | None = None
    backend: str = ""
    xi_star: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.u.shape[0]

    @property
    def eps(self) -> np.ndarray:
        return self.x - self.r

    @property
    def eps_inf(self) -> np.ndarray:
        return np.abs(self.eps).max(axis=1)

    def to_csv(self, path) -> None:
        n, m = self.x.shape[1], self.u.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
        if self.xi is not None:
            header += [f"xi{i + 1}" for i in range(n)]
        header += ["eps_inf", "V"]
        eps_inf = self.eps_inf
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for t in range(self.x.shape[0]):
                u = self.u[t] if t < self.T else [None] * m
                row = [t, *map(fmt_float, self.x[t]), *map(fmt_float, u)]
                if self.xi is not None:
                    row += list(map(fmt_float, self.xi[t]))
                row += [fmt_float(eps_inf[t]), fmt_float(None if self.V is None else self.V[t])]
                wr.writerow(row)


def run_closed_loop(
    sys: LtnSystem,
    ctrl,
    x0,
    T: int,
    disturbance: UniformDisturbance | None = None,
    seed: int | None = None,
    force: bool = False,
    backend: str | None = None,
) -> ClosedLoopTrace:
    """Simulate ``T`` steps of the controller on the true plant."""
    if T < 0:
        raise ValueError("horizon must be non-negative")
    x0 = validate_initial_state(sys, x0, force=force)
    ctrl.check_reference(sys)
    if disturbance is not None:
        noise = disturbance.draw(np.random.default_rng(seed), T, sys.n)
    else:
        noise = np.zeros((T, sys.n))
    integral = ctrl.kind == "integral"
    X, U, XI = kernels.rollout(
        sys.alpha, sys.s, sys.W, sys.B, ctrl.K1, ctrl.K2, ctrl.r, x0, noise, integral, backend
    )
    V = None
    if ctrl.P_bar is not None:
        if integral:
            if ctrl.xi_star is not None:
                V = lyapunov_value(ctrl.P_bar, X - ctrl.r, XI - ctrl.xi_star)
        else:
            V = lyapunov_value(ctrl.P_bar, X - ctrl.r)
    return ClosedLoopTrace(
        X, U, ctrl.r, XI if integral else None, V,
        noise if disturbance is not None else None, backend or kernels.BACKEND,
        getattr(ctrl, "xi_star", None),
    )


# -- switching matrices -------------------------------------------------------


def switch_diagonal(pre, r, alpha: float, s: float) -> np.ndarray:
    """Diagonal of the switching matrix for pre-activation deviation ``pre``.

    ``pre`` is ``Z M eps`` (feedforward) or ``Z M eps + Z U e`` (integral);
    batches along leading axes are allowed.
    """
    pre = np.asarray(pre, dtype=float)
    bias = (1 - alpha) * np.asarray(r, dtype=float)
    q = pre + bias
    sat = (q > s) | (q < 0)
    if np.any(pre[sat] == 0):
        raise AssertionError("saturated switching entry with zero denominator")
    out = np.ones_like(pre)
    out[sat] = ((np.clip(q, 0.0, s) - bias) / np.where(sat, pre, 1.0))[sat]
    return out


def eval_switch_matrix_ff(ZM_eps, r, alpha: float, s: float) -> np.ndarray:
    return np.diag(switch_diagonal(ZM_eps, r, alpha, s))


def eval_switch_matrix_int(ZM_eps, ZU_e, r, alpha: float, s: float) -> np.ndarray:
    return np.diag(switch_diagonal(np.asarray(ZM_eps) + np.asarray(ZU_e), r, alpha, s))


# -- certificates and equilibria ------------------------------------------------


def lyapunov_value(P_bar, eps, e=None) -> np.ndarray | float:
    """``z^T P^{-1} z`` with ``z = eps`` or ``z = [eps; e]``; rows are batched."""
    z = np.asarray(eps, dtype=float)
    if e is not None:
        z = np.concatenate([z, np.asarray(e, dtype=float)], axis=-1)
    try:
        cf = sla.cho_factor(P_bar)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("certificate matrix is not positive definite") from exc
    y = sla.cho_solve(cf, np.atleast_2d(z).T).T
    v = np.sum(np.atleast_2d(z) * y, axis=-1)
    return float(v[0]) if z.ndim == 1 else v


def compute_xi_star(dm: DataMatrices, M, N, U, alpha: float, r) -> np.ndarray:
    """Integrator equilibrium solving ``Z U xi = (1-alpha) r - Z (M+N) r``.

    Passing ``N=None`` means ``M`` already holds the sum ``M + N``.
    """
    r = np.asarray(r, dtype=float)
    ZU = dm.z_times(U)
    sv = np.linalg.svd(ZU, compute_uv=False)
    if not sv.min() > 1e-8 * max(1.0, sv.max()):
        raise NumericalError(
            f"Z U is singular (min singular value {sv.min():.3g}); no integrator equilibrium"
        )
    MN = np.asarray(M) if N is None else np.asarray(M) + np.asarray(N)
    rhs = (1 - alpha) * r - dm.z_times(MN) @ r
    xi = np.linalg.solve(ZU, rhs)
    resid = np.abs(ZU @ xi - rhs).max()
    if resid > 1e-8 * max(1.0, np.abs(rhs).max()):
        raise NumericalError(f"integrator equilibrium residual {resid:.3g}")
    return xi


def ff_maps(dm: DataMatrices, K1, K2) -> dict:
    """Min-norm ``M``, ``N`` reproducing ``u = K1 x + K2 r`` from data."""
    n = dm.n
    return {
        "M": solve_M_for_gains(dm, np.vstack([np.eye(n), K1])),
        "N": solve_M_for_gains(dm, np.vstack([np.zeros((n, n)), K2])),
    }


def data_step(dm: DataMatrices, M, N, x, r) -> np.ndarray:
    """One step of the data-based representation ``alpha x + [Z(Mx + Nr)]``."""
    pre = dm.z_times(M) @ x + dm.z_times(N) @ r
    return dm.alpha * np.asarray(x) + np.clip(pre, 0.0, dm.s)


# -- metrics ------------------------------------------------------------------


def settling_time(eps_inf: np.ndarray, tol: float) -> int | None:
    """First step after which the error stays within ``tol``."""
    outside = np.nonzero(eps_inf > tol)[0]
    if outside.size == 0:
        return 0
    t = int(outside[-1]) + 1
    return t if t < eps_inf.size else None


def steady_state_metrics(
    trace: ClosedLoopTrace,
    tail_fraction: float | None = 0.25,
    tail_steps: int | None = None,
    tol: float = 1e-2,
) -> dict:
    if trace.x.shape[0] < 10:
        raise ValueError("trace too short for steady-state metrics")
    total = trace.x.shape[0]
    k = tail_steps if tail_steps is not None else max(1, int(round(total * tail_fraction)))
    k = min(k, total)
    err = np.abs(trace.eps[-k:])
    return {
        "tail_steps": k,
        "mean_abs_error": err.mean(axis=0).tolist(),
        "mean_abs_error_overall": float(err.mean()),
        "max_error": float(err.max()),
        "final_error_inf": float(trace.eps_inf[-1]),
        "settling_time": settling_time(trace.eps_inf, tol),
        "settling_tol": tol,
    }


def lyapunov_violations(trace: ClosedLoopTrace, floor: float = 1e-9) -> list[int]:
    """Steps where ``V`` fails to decrease although the state is off equilibrium.

    Steps whose deviation is below ``floor`` (in sup norm, relative to the
    reference scale) sit at rounding level and are skipped.
    """
    if trace.V is None:
        raise ValueError("trace carries no Lyapunov values")
    scale = max(1.0, float(np.abs(trace.r).max()))
    dev = trace.eps_inf
    if trace.xi is not None and trace.xi_star is not None:
        dev = np.maximum(dev, np.abs(trace.xi - trace.xi_star).max(axis=1))
    V = trace.V
    return [t for t in range(V.size - 1) if not V[t + 1] < V[t] and dev[t] > floor * scale]


def metrics_json(metrics: dict, path) -> None:
    Path(path).write_text(json.dumps(metrics, indent=2))
