"""Drift sampling: episode-fixed movement/rotation drifts and disabled actions.

Training drifts come from small uniform ranges; evaluation drifts come from
fixed grids that lie (mostly) outside those ranges.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-9

PARTICLE_EVAL_DR = (-150.0, -135.0, -120.0, 120.0, 135.0, 150.0, 180.0)
NAV2D_EVAL_DM = (-0.1, -0.05, 0.05, 0.1, 0.2, 0.4)
NAV2D_EVAL_DR = (-135.0, -90.0, -45.0, -30.0, -15.0, 15.0, 30.0, 45.0, 90.0, 135.0, 180.0)

# rotation angles of the disabled-action experiments (clockwise positive)
RIGHT_ANGLES = (30.0, 60.0, 90.0, 120.0, 150.0)
LEFT_ANGLES = tuple(-a for a in RIGHT_ANGLES)


@dataclass(frozen=True)
class DriftSpec:
    dm: float = 0.0
    dr: float = 0.0
    disabled: frozenset[int] = field(default_factory=frozenset)

    def to_dict(self) -> dict:
        return {"dm": self.dm, "dr": self.dr, "disabled": sorted(self.disabled)}

    @classmethod
    def from_dict(cls, d: dict) -> "DriftSpec":
        return cls(float(d["dm"]), float(d["dr"]), frozenset(int(i) for i in d.get("disabled", ())))


@dataclass(frozen=True)
class DriftCell:
    """One evaluation cell of a drift grid."""

    drift: DriftSpec
    seen: bool

    @property
    def key(self) -> tuple[float, float]:
        return (self.drift.dm, self.drift.dr)


@dataclass(frozen=True)
class DriftRegime:
    mode: str = "train"
    p: float = 0.05
    q: float = 15.0
    eval_dm: tuple[float, ...] = NAV2D_EVAL_DM
    eval_dr: tuple[float, ...] = NAV2D_EVAL_DR
    cross: bool = False

    def __post_init__(self):
        if self.mode not in ("train", "eval"):
            raise ValueError(f"drift mode must be 'train' or 'eval', got {self.mode!r}")
        if self.p < 0 or self.q < 0:
            raise ValueError("drift ranges must be nonnegative")

    def is_seen(self, dm: float, dr: float) -> bool:
        return abs(dm) <= self.p + _EPS and abs(dr) <= self.q + _EPS

    def with_mode(self, mode: str) -> "DriftRegime":
        return DriftRegime(mode, self.p, self.q, self.eval_dm, self.eval_dr, self.cross)


def particle_regime(mode: str = "train") -> DriftRegime:
    return DriftRegime(mode, p=0.0, q=90.0, eval_dm=(), eval_dr=PARTICLE_EVAL_DR)


def nav2d_regime(mode: str = "train", cross: bool = False) -> DriftRegime:
    return DriftRegime(mode, p=0.05, q=15.0, eval_dm=NAV2D_EVAL_DM, eval_dr=NAV2D_EVAL_DR, cross=cross)


def sample_train(regime: DriftRegime, rng: np.random.Generator,
                 disabled: frozenset[int] = frozenset()) -> DriftSpec:
    """Draw an episode drift with d_m ~ U(-p, p) and d_r ~ U(-q, q)."""
    if regime.mode != "train":
        raise ValueError("sample_train requires a train-mode regime")
    dm = float(rng.uniform(-regime.p, regime.p)) if regime.p > 0 else 0.0
    dr = float(rng.uniform(-regime.q, regime.q)) if regime.q > 0 else 0.0
    return DriftSpec(dm, dr, disabled)


def eval_grid(regime: DriftRegime, disabled: frozenset[int] = frozenset()) -> list[DriftCell]:
    """Evaluation cells.

    Without ``cross`` every movement drift is paired with d_r = 0 and every
    rotation drift with d_m = 0 (two separate sweeps); with ``cross`` the full
    product is returned.  A regime without movement drifts yields the rotation
    sweep alone.
    """
    if regime.mode != "eval":
        raise ValueError("eval_grid requires an eval-mode regime")
    if regime.cross and regime.eval_dm and regime.eval_dr:
        pairs = [(dm, dr) for dm in regime.eval_dm for dr in regime.eval_dr]
    else:
        pairs = [(dm, 0.0) for dm in regime.eval_dm] + [(0.0, dr) for dr in regime.eval_dr]
    return [DriftCell(DriftSpec(float(dm), float(dr), disabled), regime.is_seen(dm, dr))
            for dm, dr in pairs]


def single_cell(dm: float, dr: float, regime: DriftRegime | None = None,
                disabled: frozenset[int] = frozenset()) -> DriftCell:
    seen = regime.is_seen(dm, dr) if regime is not None else False
    return DriftCell(DriftSpec(float(dm), float(dr), disabled), seen)


def disabled_set(side: str) -> frozenset[int]:
    """Nav2d action indices of the five clockwise (``right``) or counter-clockwise rotations."""
    from .envs.nav2d import ACTIONS

    angles = {"right": RIGHT_ANGLES, "left": LEFT_ANGLES}.get(side)
    if angles is None:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return frozenset(i for i, a in enumerate(ACTIONS) if a.kind == "rotate" and a.value in angles)


# drift setting paired with the disabled-action experiments
DISABLED_EXPERIMENT_DRIFT = (0.2, 0.0)
