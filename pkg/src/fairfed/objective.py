"""Fairness presets and the uncertainty-weighted power-loss objective.

Each client contributes ``w_i * H_i ** e_i`` where ``H_i`` is its empirical
risk, ``e_i`` an exponent and ``w_i`` a weight derived from the normalised
uncertainty scores.  A preset is a named choice of ``(r, beta, gamma)``:

============  ==============  =============  =====
preset        exponent e_i    weight w_i     gamma
============  ==============  =============  =====
egalitarian   1               u_i            +1
utilitarian   1               1 / u_i        -1
rawls(b)      1 + b           u_i            +1
desert        -b_i            1              0
qfed(q)       1 + q           1              0
custom        r * b           u_i ** gamma
============  ==============  =============  =====

with ``u_i = upsilon_i / sum(upsilon)`` and ``b_i = (1/upsilon_i) / sum(1/upsilon)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

LOSS_FLOOR = 1e-10


class PresetKind(str, enum.Enum):
    EGALITARIAN = "egalitarian"
    UTILITARIAN = "utilitarian"
    RAWLS = "rawls"
    DESERT = "desert"
    QFED = "qfed"
    FEDAVG = "fedavg"
    CUSTOM = "custom"


_ALIASES = {
    "egal": PresetKind.EGALITARIAN,
    "util": PresetKind.UTILITARIAN,
    "rawlsdp": PresetKind.RAWLS,
    "rawls_dp": PresetKind.RAWLS,
    "q-fedavg": PresetKind.QFED,
    "qffl": PresetKind.QFED,
    "fedavgbaseline": PresetKind.FEDAVG,
}


@dataclass(frozen=True)
class FairnessPreset:
    kind: PresetKind
    beta: float | None = None
    r: float | None = None
    gamma: int | None = None

    def __post_init__(self):
        kind = PresetKind(self.kind)
        object.__setattr__(self, "kind", kind)
        beta = self.beta
        if kind is PresetKind.RAWLS:
            beta = 5.0 if beta is None else float(beta)
            if not beta > 0:
                raise ConfigError(f"rawls needs beta > 0, got {beta}")
        elif kind is PresetKind.QFED:
            beta = 0.0 if beta is None else float(beta)
            if not beta >= 0:
                raise ConfigError(f"qfed needs q >= 0, got {beta}")
        elif kind is PresetKind.CUSTOM:
            if beta is None or self.r is None or self.gamma is None:
                raise ConfigError("custom preset needs r, beta and gamma")
            if self.gamma not in (-1, 0, 1):
                raise ConfigError(f"gamma must be -1, 0 or 1, got {self.gamma}")
            beta = float(beta)
        elif beta is not None:
            raise ConfigError(f"{kind.value} takes no beta")
        object.__setattr__(self, "beta", beta)

    @classmethod
    def parse(cls, text: str) -> FairnessPreset:
        """Parse ``NAME``, ``NAME:BETA`` or ``custom:R:BETA:GAMMA``."""
        parts = text.strip().lower().split(":")
        name = parts[0]
        try:
            kind = _ALIASES.get(name) or PresetKind(name)
        except ValueError:
            raise ConfigError(f"unknown preset {name!r}") from None
        try:
            nums = [float(p) for p in parts[1:]]
        except ValueError:
            raise ConfigError(f"bad preset parameters in {text!r}") from None
        if kind is PresetKind.CUSTOM:
            if len(nums) != 3 or nums[2] not in (-1.0, 0.0, 1.0):
                raise ConfigError("custom preset is custom:R:BETA:GAMMA with GAMMA in {-1,0,1}")
            return cls(kind, beta=nums[1], r=nums[0], gamma=int(nums[2]))
        if len(nums) > 1:
            raise ConfigError(f"too many parameters in {text!r}")
        return cls(kind, beta=nums[0] if nums else None)

    @property
    def label(self) -> str:
        if self.kind is PresetKind.CUSTOM:
            return f"custom:{_fmt(self.r)}:{_fmt(self.beta)}:{self.gamma}"
        if self.kind in (PresetKind.RAWLS, PresetKind.QFED):
            return f"{self.kind.value}:{_fmt(self.beta)}"
        return self.kind.value

    @property
    def needs_uncertainty(self) -> bool:
        if self.kind is PresetKind.CUSTOM:
            return self.gamma != 0
        return self.kind in (PresetKind.EGALITARIAN, PresetKind.UTILITARIAN,
                             PresetKind.RAWLS, PresetKind.DESERT)

    def __str__(self):
        return self.label


def _fmt(x):
    return f"{x:g}"


@dataclass(frozen=True, eq=False)
class ClientCoefficients:
    weights: np.ndarray
    exponents: np.ndarray

    def __len__(self):
        return len(self.weights)


def desert_betas(upsilons) -> np.ndarray:
    """Per-client exponents proportional to ``1/upsilon``, summing to one."""
    inv = 1.0 / np.asarray(upsilons, dtype=np.float64)
    return inv / inv.sum()


def resolve_preset(preset: FairnessPreset, upsilons) -> ClientCoefficients:
    """Per-client weights and loss exponents for ``preset``.

    ``fedavg`` resolves to unit weights and exponents; the federation loop
    handles it with size-weighted model averaging instead.
    """
    u = np.asarray(upsilons, dtype=np.float64)
    if u.ndim != 1 or u.size < 1:
        raise DomainError("need at least one uncertainty score")
    n = u.size
    ones = np.ones(n)
    kind = preset.kind
    if kind in (PresetKind.FEDAVG, PresetKind.QFED) or (
            kind is PresetKind.CUSTOM and preset.gamma == 0):
        if not np.all(np.isfinite(u)):
            raise DomainError("uncertainty scores must be finite")
    elif not np.all(np.isfinite(u)) or np.any(u <= 0):
        raise DomainError(f"uncertainty scores must be positive, got {u}")

    if kind is PresetKind.FEDAVG:
        return ClientCoefficients(ones, ones.copy())
    if kind is PresetKind.QFED:
        return ClientCoefficients(ones, np.full(n, 1.0 + preset.beta))
    if kind is PresetKind.DESERT:
        return ClientCoefficients(ones, -desert_betas(u))

    norm = u / u.sum()
    if kind is PresetKind.EGALITARIAN:
        return ClientCoefficients(norm, ones)
    if kind is PresetKind.UTILITARIAN:
        return ClientCoefficients(1.0 / norm, ones)
    if kind is PresetKind.RAWLS:
        return ClientCoefficients(norm, np.full(n, 1.0 + preset.beta))
    # custom
    weights = norm ** preset.gamma if preset.gamma != 0 else ones
    return ClientCoefficients(weights, np.full(n, preset.r * preset.beta))


def objective_value(losses, coeffs: ClientCoefficients) -> float:
    """``sum_i w_i * max(H_i, LOSS_FLOOR) ** e_i``."""
    H = np.asarray(losses, dtype=np.float64)
    if H.shape != coeffs.weights.shape:
        raise DomainError(f"{H.size} losses for {len(coeffs)} clients")
    H = np.maximum(H, LOSS_FLOOR)
    total = 0.0
    try:
        for w, h, e in zip(coeffs.weights, H, coeffs.exponents):
            total += w * h ** e
    except OverflowError:
        total = math.inf
    if not math.isfinite(total):
        raise DomainError("objective is not finite")
    return float(total)
