"""Linear-threshold network plant.

The plant evolves as ``x(t+1) = alpha * x(t) + [W x(t) + B u(t) (+ w(t))]_0^s``
where ``[.]_0^s`` clamps every component to ``[0, s]``. Starting inside the box
``[0, s/(1-alpha)]`` the state never leaves it.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

#: numerical slack used when checking box membership of states
BOX_SLACK = 1e-12


class DimensionError(ValueError):
    """Raised when vector or matrix sizes do not match the system."""


class AdmissibilityError(ValueError):
    """Raised when an initial state or reference leaves the admissible box."""


def threshold_clamp(v, s: float) -> np.ndarray:
    """Clamp ``v`` componentwise to ``[0, s]``."""
    if not s > 0:
        raise ValueError(f"saturation level must be positive, got {s}")
    return np.clip(np.asarray(v, dtype=float), 0.0, s)


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LtnSystem:
    """Ground-truth plant ``(alpha, s, W, B)``.

    Only data generation and closed-loop simulation read ``W`` and ``B``;
    controller synthesis works from sampled data alone.
    """

    alpha: float
    s: float
    W: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.s > 0.0:
            raise ValueError(f"s must be positive, got {self.s}")
        W = _frozen(self.W, 2, "W")
        B = _frozen(self.B, 2, "B")
        if W.shape[0] != W.shape[1]:
            raise DimensionError(f"W must be square, got {W.shape}")
        if B.shape[0] != W.shape[0]:
            raise DimensionError(f"B has {B.shape[0]} rows, W has {W.shape[0]}")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def state_upper_bound(self) -> float:
        return self.s / (1.0 - self.alpha)

    def in_box(self, x, slack: float = BOX_SLACK) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= -slack) and np.all(x <= self.state_upper_bound() + slack))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "alpha": self.alpha,
            "s": self.s,
            "W": self.W.tolist(),
            "B": self.B.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LtnSystem":
        sys = cls(alpha=d["alpha"], s=d["s"], W=d["W"], B=d["B"])
        if "n" in d and d["n"] != sys.n or "m" in d and d["m"] != sys.m:
            raise DimensionError("declared n/m disagree with matrix shapes")
        return sys

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "LtnSystem":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_vec(v, size: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (size,):
        raise DimensionError(f"{name} must have shape ({size},), got {v.shape}")
    return v


def step(sys: LtnSystem, x, u) -> np.ndarray:
    """One noise-free step of the plant."""
    x = _check_vec(x, sys.n, "x")
    u = _check_vec(u, sys.m, "u")
    return sys.alpha * x + threshold_clamp(sys.W @ x + sys.B @ u, sys.s)


def step_with_disturbance(sys: LtnSystem, x, u, w) -> np.ndarray:
    """One step with an additive disturbance entering before the threshold."""
    x = _check_vec(x, sys.n, "x")
    u = _check_vec(u, sys.m, "u")
    w = _check_vec(w, sys.n, "w")
    return sys.alpha * x + threshold_clamp(sys.W @ x + sys.B @ u + w, sys.s)


# -- disturbances -------------------------------------------------------------


@dataclass(frozen=True)
class UniformDisturbance:
    """i.i.d. disturbance with entries uniform on ``[low, high]``."""

    low: float
    high: float

    def __post_init__(self):
        if not self.high >= self.low:
            raise ValueError(f"empty disturbance box [{self.low}, {self.high}]")

    def draw(self, rng: np.random.Generator, T: int, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(T, n))

    def __str__(self) -> str:
        return f"uniform:{self.low!r}:{self.high!r}"


#: noise preset of the rodent robustness experiment
RODENT_DISTURBANCE = UniformDisturbance(0.0, 0.2)


def parse_disturbance(text: str | None) -> UniformDisturbance | None:
    """Parse ``"uniform:LO:HI"`` or ``"none"``."""
    if text is None or text.strip().lower() in ("", "none"):
        return None
    parts = text.split(":")
    if len(parts) != 3 or parts[0] != "uniform":
        raise ValueError(f"disturbance must be 'none' or 'uniform:LO:HI', got {text!r}")
    return UniformDisturbance(float(parts[1]), float(parts[2]))


# -- input policies -----------------------------------------------------------


class InputPolicy:
    """Maps ``(t, x, rng)`` to an input vector.

    Plain callables ``x -> u`` are also accepted by :func:`simulate`.
    """

    def __call__(self, t: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ConstantInput(InputPolicy):
    u: np.ndarray

    def __call__(self, t, x, rng):
        return np.asarray(self.u, dtype=float)


@dataclass(frozen=True)
class RandomBoxInput(InputPolicy):
    """Fresh uniform input on ``[low, high]^m`` at every step."""

    m: int
    low: float
    high: float

    def __call__(self, t, x, rng):
        return rng.uniform(self.low, self.high, size=self.m)


@dataclass(frozen=True, eq=False)
class FeedbackInput(InputPolicy):
    law: Callable[[np.ndarray], np.ndarray]

    def __call__(self, t, x, rng):
        return np.asarray(self.law(x), dtype=float)


def _as_policy(policy) -> InputPolicy:
    if isinstance(policy, InputPolicy):
        return policy
    if callable(policy):
        return FeedbackInput(policy)
    return ConstantInput(np.asarray(policy, dtype=float))


# -- simulation ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """States ``x[0..T]``, inputs ``u[0..T-1]`` and disturbances if any."""

    x: np.ndarray
    u: np.ndarray
    w: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.u.shape[0]

    def to_csv(self, path) -> None:
        n, m = self.x.shape[1], self.u.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for t in range(self.x.shape[0]):
                u = self.u[t] if t < self.T else [None] * m
                writer.writerow([t, *map(fmt_float, self.x[t]), *map(fmt_float, u)])


def fmt_float(v) -> str:
    """Round-trip exact float formatting for CSV output; ``None`` becomes empty."""
    return "" if v is None else repr(float(v))


def validate_initial_state(sys: LtnSystem, x0, force: bool = False) -> np.ndarray:
    x0 = _check_vec(x0, sys.n, "x0")
    if sys.in_box(x0):
        return np.clip(x0, 0.0, sys.state_upper_bound())
    if not force:
        raise AdmissibilityError(
            f"x0 leaves the admissible box [0, {sys.state_upper_bound():.6g}]"
        )
    warnings.warn("x0 outside the admissible box; clamping (force=True)", stacklevel=3)
    return np.clip(x0, 0.0, sys.state_upper_bound())


def simulate(
    sys: LtnSystem,
    x0,
    input_policy,
    T: int,
    seed: int | None = None,
    disturbance: UniformDisturbance | None = None,
    force: bool = False,
) -> SimulationTrace:
    """Roll the plant forward ``T`` steps under an arbitrary input policy.

    One generator seeded by ``seed`` feeds the disturbance (drawn up front)
    and then any randomized policy, so a fixed seed reproduces the trace
    bit for bit.
    """
    if T < 0:
        raise ValueError("horizon must be non-negative")
    x = validate_initial_state(sys, x0, force=force)
    policy = _as_policy(input_policy)
    rng = np.random.default_rng(seed)
    w = disturbance.draw(rng, T, sys.n) if disturbance is not None else None

    xs = np.empty((T + 1, sys.n))
    us = np.empty((T, sys.m))
    xs[0] = x
    for t in range(T):
        u = _check_vec(policy(t, x, rng), sys.m, "u")
        pre = sys.W @ x + sys.B @ u
        if w is not None:
            pre = pre + w[t]
        x = sys.alpha * x + np.clip(pre, 0.0, sys.s)
        xs[t + 1] = x
        us[t] = u
    return SimulationTrace(x=xs, u=us, w=w)


def sample_box(rng: np.random.Generator, low: float, high: float, size) -> np.ndarray:
    if not high >= low:
        raise ValueError(f"empty box [{low}, {high}]")
    return rng.uniform(low, high, size=size)


def random_admissible_states(sys: LtnSystem, count: int, seed: int | None = None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, sys.state_upper_bound(), size=(count, sys.n))


def as_matrix(rows: Sequence[Sequence[float]]) -> np.ndarray:
    return np.array(rows, dtype=float)
