"""Two-state hard-to-learn instance and its closed-form optimal quantities.

State ``x0`` pays 0 and leaves to ``x1`` with probability ``delta + <a, theta>``;
state ``x1`` pays 1 and falls back with probability ``delta``.  Actions are the
sign vectors ``{-1,+1}^(d-1)`` in lexicographic order with -1 before +1.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mdp import FeatureMap, LinearMixtureMDP, OracleSolution, bellman_average_residual


def compute_gap(dim: int, horizon: int, delta_conf: float, scale: float = 1.0) -> float:
    """``scale * (d-1) / (45 sqrt(2 T log 2 / (5 delta_conf)))``."""
    return scale * (dim - 1) / (45.0 * math.sqrt(2.0 * horizon * math.log(2.0) / (5.0 * delta_conf)))


def action_set(dim: int) -> np.ndarray:
    """All sign vectors of length d-1, lexicographic with -1 < +1; shape (2^(d-1), d-1)."""
    return np.array(list(itertools.product((-1.0, 1.0), repeat=dim - 1)))


@dataclass(frozen=True)
class HardInstanceParams:
    dim: int = 8
    delta_mdp: float = 1.0 / 120.0
    horizon: int = 100_000
    delta_conf: float | None = None
    scale: float = 3.0
    sign_vector: tuple[int, ...] | None = None
    gap_override: float | None = None
    gap: float = field(init=False)
    alpha: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        d = int(self.dim)
        if d != self.dim or d < 2:
            raise ValueError(f"dim must be an integer >= 2, got {self.dim!r}")
        if not 0.0 < self.delta_mdp <= 0.5:
            raise ValueError("delta_mdp must lie in (0, 1/2]")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        delta_conf = self.delta_mdp if self.delta_conf is None else float(self.delta_conf)
        if not delta_conf > 0:
            raise ValueError("delta_conf must be positive")
        signs = (1,) * (d - 1) if self.sign_vector is None else tuple(int(x) for x in self.sign_vector)
        if len(signs) != d - 1 or any(x not in (-1, 1) for x in signs):
            raise ValueError(f"sign_vector must be in {{-1,+1}}^{d - 1}")
        if self.gap_override is None:
            gap = compute_gap(d, int(self.horizon), delta_conf, self.scale)
        else:
            gap = float(self.gap_override)
            if not gap > 0:
                raise ValueError("gap_override must be positive")
        object.__setattr__(self, "dim", d)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "delta_conf", delta_conf)
        object.__setattr__(self, "sign_vector", signs)
        object.__setattr__(self, "gap", gap)
        object.__setattr__(self, "alpha", math.sqrt(gap / ((d - 1) * (1.0 + gap))))
        object.__setattr__(self, "beta", math.sqrt(1.0 / (1.0 + gap)))

    @property
    def theta(self) -> np.ndarray:
        """The (d-1)-vector ``sign_vector * gap / (d-1)``."""
        return np.asarray(self.sign_vector, dtype=float) * self.gap / (self.dim - 1)

    @property
    def core(self) -> np.ndarray:
        """``theta_bar = (theta / alpha, 1 / beta)``."""
        return np.append(self.theta / self.alpha, 1.0 / self.beta)

    @property
    def best_action(self) -> int:
        """Index of the action equal to the sign vector."""
        idx = 0
        for x in self.sign_vector:
            idx = 2 * idx + (1 if x > 0 else 0)
        return idx

    def with_random_signs(self, rng: np.random.Generator) -> "HardInstanceParams":
        signs = tuple(int(x) for x in rng.choice((-1, 1), size=self.dim - 1))
        return HardInstanceParams(self.dim, self.delta_mdp, self.horizon, self.delta_conf, self.scale,
                                  signs, self.gap_override)

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "delta_mdp": self.delta_mdp,
            "horizon": self.horizon,
            "delta_conf": self.delta_conf,
            "scale": self.scale,
            "sign_vector": list(self.sign_vector),
            "gap_override": self.gap_override,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "HardInstanceParams":
        known = {"dim", "delta_mdp", "horizon", "delta_conf", "scale", "sign_vector", "gap_override"}
        extra = set(doc) - known - {"type"}
        if extra:
            raise ValueError(f"unknown hard-instance fields: {sorted(extra)}")
        kw = {k: doc[k] for k in known if k in doc and doc[k] is not None}
        if "sign_vector" in kw:
            kw["sign_vector"] = tuple(kw["sign_vector"])
        return cls(**kw)


def build(params: HardInstanceParams) -> LinearMixtureMDP:
    d, delta = params.dim, params.delta_mdp
    acts = action_set(d)
    theta = params.theta
    p_up = delta + acts @ theta
    if p_up.min() < 0.0 or p_up.max() > 1.0:
        raise ValueError("delta + <a, theta> leaves [0, 1] for some action; gap too large")
    a_, b_ = params.alpha, params.beta
    A = acts.shape[0]
    phi = np.zeros((2, A, 2, d))
    phi[0, :, 0, : d - 1] = -a_ * acts
    phi[0, :, 0, d - 1] = b_ * (1 - delta)
    phi[0, :, 1, : d - 1] = a_ * acts
    phi[0, :, 1, d - 1] = b_ * delta
    phi[1, :, 0, d - 1] = b_ * delta
    phi[1, :, 1, d - 1] = b_ * (1 - delta)
    reward = np.zeros((2, A))
    reward[1] = 1.0
    core = params.core
    # ||core||^2 = gap (1 + gap) + (1 + gap) = (1 + gap)^2
    b_theta = max(1.0 + params.gap, float(np.linalg.norm(core)))
    return LinearMixtureMDP(FeatureMap(phi), core, reward, b_theta=b_theta)


def analytic_optimal(params: HardInstanceParams) -> OracleSolution:
    delta, gap = params.delta_mdp, params.gap
    denom = 2 * delta + gap
    j = (delta + gap) / denom
    v = np.array([0.0, 1.0 / denom])
    adv = action_set(params.dim) @ params.theta
    q = np.empty((2, adv.shape[0]))
    q[0] = (adv - gap) / denom
    q[1] = 1.0 / denom
    mdp = build(params)
    return OracleSolution(j, v, q, 1.0 / denom, bellman_average_residual(mdp.P, mdp.reward, j, v, q))


def stationary_distribution(params: HardInstanceParams) -> np.ndarray:
    """Stationary law of the optimal policy: ``(delta, delta + gap) / (2 delta + gap)``."""
    delta, gap = params.delta_mdp, params.gap
    return np.array([delta, delta + gap]) / (2 * delta + gap)


def load_params(source) -> HardInstanceParams:
    """Parse params from a JSON string or a path to a JSON file."""
    text = str(source)
    path = Path(text)
    if not text.lstrip().startswith("{") and path.exists():
        text = path.read_text()
    return HardInstanceParams.from_json(json.loads(text))
