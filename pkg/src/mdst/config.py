"""Model, training and dataset configuration plus the key-value config loader.

Config files are a flat TOML subset: top-level ``key = value`` pairs feed
:class:`Config`; an optional ``[data]`` table feeds :class:`SyntheticSpec`.
``profile = "ucf"`` selects the dropout triplet for that dataset, and
``preset = "desk"`` starts from the small CPU widths of :meth:`Config.desk`.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

# (d_enc, d_proj, d_wproj) per dataset profile
DROPOUT_PROFILES = {
    "vggsound": (0.20, 0.25, 0.10),
    "ucf": (0.25, 0.20, 0.10),
    "activitynet": (0.10, 0.15, 0.10),
}


@dataclass
class Config:
    model: str = "mdst"               # mdst | mdstpp
    body: str | None = None           # mlp | spikeformer; None picks per model
    profile: str = "ucf"

    t_in: int | None = None           # inferred from the data when None
    t_hid: int = 512
    t_emb: int = 512
    t_proj: int = 64
    t_fin: int = 300
    word_dim: int = 300
    n_heads: int = 8
    head_dim: int = 64
    mlp_ratio: float = 2.0
    norm: str = "batch"
    spiking_norm: str = "batch"
    rjlu_window: int = 4
    learn_h0: bool = False

    d_enc: float | None = None
    d_proj: float | None = None
    d_wproj: float | None = None

    tau_m: float = 2.0
    resistance: float = 1.0
    v_reset: float = 0.0
    v_th_init: float = 1.0
    v_th_min: float = 0.1
    surrogate: str = "sigmoid"
    surrogate_alpha: float = 4.0
    dynamic_threshold: bool = True
    attention_scale: float | None = None   # None means 1/d

    timesteps: int = 6
    mlp_layers: int = 3
    stages: list = field(default_factory=lambda: [[8, 1], [6, 1], [4, 1]])
    egm_threshold: float = 0.30
    use_mim: bool = True

    gamma: float = 1.0
    stage_weights: list | None = None
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0

    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.profile not in DROPOUT_PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {sorted(DROPOUT_PROFILES)}")
        enc, proj, wproj = DROPOUT_PROFILES[self.profile]
        if self.d_enc is None:
            self.d_enc = enc
        if self.d_proj is None:
            self.d_proj = proj
        if self.d_wproj is None:
            self.d_wproj = wproj
        if self.model not in ("mdst", "mdstpp"):
            raise ConfigError(f"model must be 'mdst' or 'mdstpp', got {self.model!r}")
        if self.body is None:
            self.body = "mlp" if self.model == "mdst" else "spikeformer"
        if self.body not in ("mlp", "spikeformer"):
            raise ConfigError(f"body must be 'mlp' or 'spikeformer', got {self.body!r}")
        if self.gamma <= 0:
            raise ConfigError("triplet margin gamma must be positive")
        if self.stage_weights is not None and any(w < 0 for w in self.stage_weights):
            raise ConfigError("stage weights must be non-negative")
        for name in ("d_enc", "d_proj", "d_wproj"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        self.stages = [list(map(int, s)) for s in self.stages]

    def schedule(self):
        """Stage plan actually run by the spiking body."""
        from .spiking import StageSchedule

        if self.model == "mdst":
            units = self.mlp_layers if self.body == "mlp" else 1
            return StageSchedule([(self.timesteps, units)])
        return StageSchedule(self.stages)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def desk(cls, **changes):
        """Small widths that train in seconds on one CPU core."""
        base = dict(t_hid=64, t_emb=64, t_proj=64, n_heads=8, head_dim=8, rjlu_window=4,
                    lr=2e-3, epochs=25, batch_size=32)
        base.update(changes)
        return cls(**base)


def load_config(path):
    """Parse a flat key-value (TOML subset) config file into :class:`Config`."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    data = raw.pop("data", {})
    for key, val in raw.items():
        if isinstance(val, dict):
            raise ConfigError(f"{path}: nested table [{key}] not supported (only [data])")
    if any(isinstance(v, dict) for v in data.values()):
        raise ConfigError(f"{path}: [data] must be flat")
    preset = raw.pop("preset", None)
    if preset == "desk":
        return Config.desk(data=data, **raw)
    if preset not in (None, "full"):
        raise ConfigError(f"{path}: unknown preset {preset!r}")
    return Config.from_dict({**raw, "data": data})
