"""Run configuration: every tunable constant, JSON round-trip, seed splitting.

All randomness in the package flows from ``RunConfig.seed`` through
:func:`substream`, which derives independent, order-insensitive generators
from a label.  Parallel chunking therefore cannot perturb results.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ParseError

# Opacity ceiling: the fields need G < 1 so log(1 - G) stays finite.
ALPHA_MAX = 0.999


@dataclass
class WrapConfig:
    """Knobs for orientation optimization and flip-and-clone densification."""

    iterations: int = 200
    learning_rate: float = 0.05        # step size for the sign parameter
    dir_learning_rate: float = 0.02    # step size for the direction vector
    densify_every: int = 50
    densify_fraction: float = 0.05
    fd_step: float = 1e-3
    views_per_step: int = 4
    loss_weight: float = 0.05          # weight of the alignment term when combined with other objectives
    visibility_weight: float = 1e-4    # blend weight above which a Gaussian counts as visible

    def validate(self) -> None:
        if self.iterations < 0:
            raise ParseError("wrap.iterations must be >= 0")
        for name in ("learning_rate", "dir_learning_rate", "fd_step", "loss_weight"):
            if getattr(self, name) <= 0:
                raise ParseError(f"wrap.{name} must be positive")
        if self.densify_every <= 0 or self.views_per_step <= 0:
            raise ParseError("wrap.densify_every and wrap.views_per_step must be positive")
        if not (0.0 < self.densify_fraction <= 0.5):
            raise ParseError("wrap.densify_fraction must lie in (0, 0.5]")


@dataclass
class PamConfig:
    """Knobs for the adaptive (sample/project/filter) meshing pipeline."""

    samples: int = 20000
    newton_steps: int = 10
    eps: float = 0.1               # |0.5 - v| outlier threshold
    max_rounds: int = 5
    samples_per_tet: int = 8

    def validate(self) -> None:
        if self.samples < 1 or self.newton_steps < 1 or self.max_rounds < 1 or self.samples_per_tet < 1:
            raise ParseError("pam counts must be >= 1")
        if self.eps <= 0:
            raise ParseError("pam.eps must be positive")


@dataclass
class EvalConfig:
    """Knobs for the mesh evaluation protocols."""

    uniform_count: int = 1_000_000
    tau_fraction: float = 0.01     # default tau as a fraction of the GT crop diagonal

    def validate(self) -> None:
        if self.uniform_count < 1:
            raise ParseError("eval.uniform_count must be >= 1")
        if self.tau_fraction <= 0:
            raise ParseError("eval.tau_fraction must be positive")


@dataclass
class RunConfig:
    """Top-level configuration. Defaults are the documented canonical values."""

    alpha_max: float = ALPHA_MAX
    support_sigma: float = 4.0     # Gaussians are treated as exactly zero beyond this Mahalanobis distance
    knn: int = 32                  # neighbors used by field queries
    vector_zero_eps: float = 1e-8  # below this vector-field norm the normal field is zero
    early_stop_t: float = 1e-4     # compositing stops once transmittance drops below this
    background: tuple = (0.0, 0.0, 0.0)
    vacancy_camera_subset: int = 0  # 0 = use all cameras; >0 = fixed random subset size (faster, lower fidelity)
    seed: int = 0
    wrap: WrapConfig = field(default_factory=WrapConfig)
    pam: PamConfig = field(default_factory=PamConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        if not (0.0 < self.alpha_max < 1.0):
            raise ParseError("alpha_max must lie in (0, 1)")
        if self.support_sigma <= 0 or self.knn < 1 or self.vector_zero_eps <= 0:
            raise ParseError("support_sigma/knn/vector_zero_eps out of range")
        if not (0.0 < self.early_stop_t < 1.0):
            raise ParseError("early_stop_t must lie in (0, 1)")
        if self.vacancy_camera_subset < 0:
            raise ParseError("vacancy_camera_subset must be >= 0")
        self.wrap.validate()
        self.pam.validate()
        self.eval.validate()

    # -- JSON round trip ----------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["background"] = list(self.background)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        _apply(cfg, data, prefix="")
        cfg.background = tuple(float(c) for c in cfg.background)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ParseError("config root must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")


def _apply(obj: Any, data: dict, prefix: str) -> None:
    """Copy ``data`` onto dataclass ``obj``, rejecting unknown keys."""
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ParseError(f"unknown config key: {prefix}{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ParseError(f"config key {prefix}{key} must be an object")
            _apply(current, value, prefix=f"{prefix}{key}.")
        else:
            setattr(obj, key, value)


# -- seed splitting ---------------------------------------------------------

def substream(seed: int, label: str) -> np.random.Generator:
    """Derive an independent generator from a master seed and a label.

    The derivation is a pure function of (seed, label): call order, thread
    scheduling, and chunk sizes cannot change the stream.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    key = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.default_rng(ss)


def max_workers() -> int:
    """Worker-pool cap: the GWRAP_THREADS environment variable, default 1."""
    raw = os.environ.get("GWRAP_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        n = 1
    return min(n, os.cpu_count() or 1)


DEFAULTS = RunConfig()
