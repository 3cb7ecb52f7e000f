"""Case-study definitions: a rodent firing-rate network and arousal regulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import RODENT_DISTURBANCE, LtnSystem, UniformDisturbance

RODENT_ALPHA = 0.9728
RODENT_S = 0.3984
RODENT_W = (
    (0.0, 0.0427, -0.0122, 0.0),
    (0.0084, 0.0, -0.0003, -0.0009),
    (0.0421, 0.0334, 0.0, 0.0),
    (0.1031, 0.0114, -0.0036, 0.0),
)
RODENT_B = (
    (0.0114, -0.0005, -0.0749, -0.0017, 0.0),
    (-0.0270, 0.0015, 0.2107, 0.0, 0.0),
    (-0.6332, 0.0044, -0.2840, 0.0, 0.0358),
    (-0.7236, 0.0162, 0.5482, 0.0, 0.0207),
)
RODENT_REFERENCE = (8.26, 4.42, 10.99, 6.95)
RODENT_STATE_BOUND = 14.647


def rodent_system() -> LtnSystem:
    return LtnSystem(RODENT_ALPHA, RODENT_S, np.array(RODENT_W), np.array(RODENT_B))


@dataclass(frozen=True)
class RodentScenario:
    T_d: int = 250
    x_box: tuple[float, float] = (0.0, RODENT_STATE_BOUND)
    u_box: tuple[float, float] = (0.0, 10.0)
    reference: tuple[float, ...] = RODENT_REFERENCE
    disturbance: UniformDisturbance = RODENT_DISTURBANCE
    horizon: int = 2000

    def system(self) -> LtnSystem:
        return rodent_system()


# -- arousal regulation -------------------------------------------------------

AROUSAL_N = 15
AROUSAL_M = 1
AROUSAL_ALPHA = 0.7
AROUSAL_S = 0.3
RESAMPLE_CAP = 1000


class ResampleCapError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ArousalDraw:
    system: LtnSystem
    phi: np.ndarray
    resamples: int
    seed: int


def arousal_system(seed: int = 0, cap: int = RESAMPLE_CAP) -> ArousalDraw:
    """Random 15-node network with a scalar input that lowers arousal.

    ``W``, ``B`` have entries uniform on ``[-0.5, 0.5]``. The readout ``phi``
    is nonnegative and scaled so that ``phi @ x`` runs from 0 at ``x = 0``
    to 100 at the top corner of the state box. Draws are repeated until
    ``phi @ B < 0``.
    """
    rng = np.random.default_rng(seed)
    xmax = AROUSAL_S / (1 - AROUSAL_ALPHA)
    for attempt in range(cap):
        W = rng.uniform(-0.5, 0.5, size=(AROUSAL_N, AROUSAL_N))
        B = rng.uniform(-0.5, 0.5, size=(AROUSAL_N, AROUSAL_M))
        phi = rng.uniform(0.0, 1.0, size=AROUSAL_N)
        phi *= 100.0 / (phi.sum() * xmax)
        if np.all(phi @ B < 0):
            return ArousalDraw(LtnSystem(AROUSAL_ALPHA, AROUSAL_S, W, B), phi, attempt, seed)
    raise ResampleCapError(f"no draw with phi^T B < 0 within {cap} attempts")


def arousal_level(phi: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Arousal in percent for a state or a stack of states."""
    return np.asarray(x) @ np.asarray(phi)


def arousal_target(draw: ArousalDraw, level: float = 50.0) -> np.ndarray:
    """Uniform target pattern ``c * 1`` with ``phi @ r = level``.

    The pattern is kept strictly inside the state box.
    """
    xmax = draw.system.state_upper_bound()
    c = level / float(draw.phi.sum())
    if not 0.0 < c < xmax:
        raise ValueError(f"arousal level {level} has no interior uniform pattern")
    return np.full(draw.system.n, c)


@dataclass(frozen=True)
class ArousalScenario:
    seed: int = 0
    T_d: int = 400
    x_box: tuple[float, float] = (0.0, 0.1)
    u_box: tuple[float, float] = (-1.0, 1.0)
    level: float = 50.0
    horizon: int = 300

    def draw(self) -> ArousalDraw:
        return arousal_system(self.seed)
