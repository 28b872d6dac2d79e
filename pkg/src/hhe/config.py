"""Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments. Angles are given in degrees and
converted to radians when the loss configuration is built. Tuple-valued
keys take comma-separated integers (``hidden = 128,64``).
"""

import dataclasses
import math
from dataclasses import dataclass, fields

from .data import SynthConfig
from .errors import InvalidConfig
from .evaluation import AP_MODES, PROTOCOLS
from .losses import VARIANTS, LossConfig
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    variant: str = "JAL_o"
    protocol: str = "market"
    # loss
    lam: float = 0.2
    theta_m_deg: float = 3.0
    alpha: float = 12.0
    gamma: float = 1e-3
    m: float = 0.5
    # synthetic data
    num_ids: int = 32
    samples_per_id: int = 20
    num_cameras: int = 4
    dim: int = 64
    sigma_id: float = 0.08
    sigma_cam: float = 0.15
    scale: float = 1.0
    # network and optimizer
    hidden: tuple = (128, 64)
    d_embed: int = 32
    P: int = 8
    N: int = 4
    stage_epochs: tuple = (1500, 500, 500)
    lr: float = 1e-3
    lr_sgd: float = 0.1
    momentum: float = 0.9
    # evaluation
    test_fraction: float = 0.4
    query_fraction: float = 0.25
    k_max: int = 10
    repeats: int = 10
    ap_mode: str = "hit"
    tta: int = 1
    sigma_tta: float = 0.05
    out: str = "runs"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.protocol not in PROTOCOLS:
            raise InvalidConfig(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.ap_mode not in AP_MODES:
            raise InvalidConfig(f"ap_mode must be one of {AP_MODES}, got {self.ap_mode!r}")
        if self.tta < 1:
            raise InvalidConfig("tta must be >= 1")
        if self.k_max < 1 or self.repeats < 1:
            raise InvalidConfig("k_max and repeats must be >= 1")
        # trigger component validation early
        self.loss_config()
        self.synth_config()

    def loss_config(self, variant=None):
        return LossConfig(
            lam=self.lam,
            theta_m=math.radians(self.theta_m_deg),
            alpha=self.alpha,
            gamma=self.gamma,
            m=self.m,
            variant=variant or self.variant,
        )

    def synth_config(self):
        return SynthConfig(
            num_ids=self.num_ids,
            samples_per_id=self.samples_per_id,
            num_cameras=self.num_cameras,
            dim=self.dim,
            sigma_id=self.sigma_id,
            sigma_cam=self.sigma_cam,
            scale=self.scale,
            seed=self.seed,
        )

    def train_config(self, variant=None):
        return TrainConfig(
            loss=self.loss_config(variant),
            hidden=tuple(self.hidden),
            d_embed=self.d_embed,
            P=self.P,
            N=self.N,
            stage_epochs=tuple(self.stage_epochs),
            lr=self.lr,
            lr_sgd=self.lr_sgd,
            momentum=self.momentum,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key, raw):
    if key not in _FIELDS:
        raise InvalidConfig(f"unknown config key {key!r}")
    kind = type(_FIELDS[key].default)
    raw = raw.strip()
    try:
        if kind is tuple:
            return tuple(int(t) for t in raw.split(",") if t.strip()) if raw else ()
        if kind is bool:
            return raw.lower() in ("1", "true", "yes")
        return kind(raw)
    except ValueError:
        raise InvalidConfig(f"bad value {raw!r} for {key}") from None


def parse_assignments(pairs):
    """Turn ``key=value`` strings into typed overrides."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise InvalidConfig(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = _convert(key.strip(), value)
    return out


def load_config(path=None, overrides=None):
    """Defaults, then the file at ``path``, then ``overrides`` (later wins)."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise InvalidConfig(f"{path}:{lineno}: expected 'key = value'")
                key, value = line.split("=", 1)
                values[key.strip()] = _convert(key.strip(), value)
    values.update(overrides or {})
    return RunConfig(**values)


def dump_config(config):
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(t) for t in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
