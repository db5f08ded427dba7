"""Run configuration and the frozen protocol constants.

The module-level constants are the published operating point: grid
geometry, per-category element capacity and point counts, evaluation
thresholds, loss weights.  RunConfig defaults mirror them; tiny test
configs may override geometry, but the defaults are what the conformance
tests pin down.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field

CATEGORIES = ("ped_crossing", "divider", "boundary")
CLASS_COUNT = 4  # three foreground categories plus background
BACKGROUND_INDEX = 3

ELEMENT_CAPS = {"ped_crossing": 25, "divider": 20, "boundary": 15}
POINTS_PER_ELEMENT = {"ped_crossing": 2, "divider": 10, "boundary": 30}

X_RANGE = (-15.0, 15.0)
Y_RANGE = (-60.0, 60.0)
GRID_SHAPE = (100, 25)  # rows sweep y, columns sweep x; 1.2 m cells

HARD_THRESHOLDS = (0.2, 0.5, 1.0)
EASY_THRESHOLDS = (0.5, 1.0, 1.5)
RESAMPLE_INTERVAL = 0.5
CONFIDENCE_THRESHOLD = 0.4

LOSS_WEIGHTS = {"class": 2.0, "keypoint": 5.0, "mask": 1.0, "flow": 1.0}
BACKGROUND_CLASS_WEIGHT = 0.1
MATCH_CURVE_WEIGHT = 5.0
COLLINEARITY_WEIGHT = 0.1
QUERY_INIT_SCALE = 0.02


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps this to exit code 2."""


@dataclass
class ModelConfig:
    channels: int = 64
    decoder_layers: int = 3
    grid_h: int = GRID_SHAPE[0]
    grid_w: int = GRID_SHAPE[1]
    x_min: float = X_RANGE[0]
    x_max: float = X_RANGE[1]
    y_min: float = Y_RANGE[0]
    y_max: float = Y_RANGE[1]
    caps: dict = field(default_factory=lambda: dict(ELEMENT_CAPS))
    points: dict = field(default_factory=lambda: dict(POINTS_PER_ELEMENT))
    confidence_threshold: float = CONFIDENCE_THRESHOLD

    @property
    def cell_size(self) -> tuple[float, float]:
        return (
            (self.y_max - self.y_min) / self.grid_h,
            (self.x_max - self.x_min) / self.grid_w,
        )

    @property
    def total_elements(self) -> int:
        return sum(self.caps[c] for c in CATEGORIES)

    @property
    def total_points(self) -> int:
        return sum(self.caps[c] * self.points[c] for c in CATEGORIES)


def slot_ranges(cfg: ModelConfig) -> dict:
    """Category -> (start, stop) rows of that category's element slots in
    the concatenated [M_total, ...] layout (category order is fixed)."""
    out = {}
    start = 0
    for cat in CATEGORIES:
        out[cat] = (start, start + int(cfg.caps[cat]))
        start += int(cfg.caps[cat])
    return out


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    lr_decay: float = 0.95
    epochs: int = 10
    batch_size: int = 4
    flow_loss: bool = True
    dtype: str = "float32"
    checkpoint_every: int = 0  # 0 = final epoch only


@dataclass
class SceneConfig:
    dividers: tuple = (1, 4)
    crossings: tuple = (0, 3)
    boundary_pivots: tuple = (8, 12)
    divider_pivots: tuple = (5, 10)
    disparity_max: float = 2.0  # cells
    lidar_range: float = 30.0  # meters of effective return
    lidar_dropout: float = 0.15
    camera_jitter: float = 0.3  # meters, per vertex
    feature_noise: float = 0.02
    mixing_noise: float = 0.05
    soft_sigma: float = 0.7  # cells


@dataclass
class EvalConfig:
    resample_interval: float = RESAMPLE_INTERVAL
    hard: tuple = HARD_THRESHOLDS
    easy: tuple = EASY_THRESHOLDS


@dataclass
class AblationConfig:
    fusion: str = "coupled"  # coupled | concat
    interaction: str = "coupled"  # coupled | single


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    seed: int = 0
    workers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def model_hash(self) -> str:
        """Hash of everything a checkpoint's parameter shapes depend on."""
        blob = json.dumps(
            {"model": asdict(self.model), "ablation": asdict(self.ablation)},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "scene": SceneConfig,
    "eval": EvalConfig,
    "ablation": AblationConfig,
}

_TUPLE_FIELDS = {
    "dividers", "crossings", "boundary_pivots", "divider_pivots", "hard", "easy",
}


def _fill_section(cls, values: dict, path: str):
    obj = cls()
    known = set(obj.__dataclass_fields__)
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {path}.{key}")
        if key in _TUPLE_FIELDS:
            val = tuple(val)
        setattr(obj, key, val)
    return obj


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = RunConfig()
    for key, val in d.items():
        if key in _SECTIONS:
            if not isinstance(val, dict):
                raise ConfigError(f"section {key} must be an object")
            setattr(cfg, key, _fill_section(_SECTIONS[key], val, key))
        elif key in ("seed", "workers"):
            setattr(cfg, key, int(val))
        else:
            raise ConfigError(f"unknown key {key}")
    validate_config(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return config_from_dict(raw)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply dotted-path overrides like {"train.lr": 1e-3} in place."""
    for dotted, val in overrides.items():
        parts = dotted.split(".")
        if len(parts) == 1 and parts[0] in ("seed", "workers"):
            setattr(cfg, parts[0], int(val))
            continue
        if len(parts) != 2 or parts[0] not in _SECTIONS:
            raise ConfigError(f"unknown override {dotted}")
        section = getattr(cfg, parts[0])
        if parts[1] not in section.__dataclass_fields__:
            raise ConfigError(f"unknown override {dotted}")
        current = getattr(section, parts[1])
        if parts[1] in _TUPLE_FIELDS:
            val = tuple(val)
        elif isinstance(current, bool):
            val = val if isinstance(val, bool) else str(val).lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            val = int(val)
        elif isinstance(current, float):
            val = float(val)
        setattr(section, parts[1], val)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    m = cfg.model
    if m.channels < 4:
        raise ConfigError("model.channels must be >= 4")
    if m.decoder_layers < 1:
        raise ConfigError("model.decoder_layers must be >= 1")
    if m.grid_h < 4 or m.grid_w < 4:
        raise ConfigError("grid must be at least 4x4")
    if not (m.x_min < m.x_max and m.y_min < m.y_max):
        raise ConfigError("coordinate ranges must be increasing")
    if set(m.caps) != set(CATEGORIES) or set(m.points) != set(CATEGORIES):
        raise ConfigError(f"caps/points must cover exactly {CATEGORIES}")
    for c in CATEGORIES:
        if int(m.caps[c]) < 1:
            raise ConfigError(f"caps[{c}] must be >= 1")
        if int(m.points[c]) < 2:
            raise ConfigError(f"points[{c}] must be >= 2")
    t = cfg.train
    if t.lr <= 0 or t.epochs < 1 or t.batch_size < 1:
        raise ConfigError("train.lr must be positive, epochs/batch_size >= 1")
    if t.dtype not in ("float32", "float64"):
        raise ConfigError("train.dtype must be float32 or float64")
    if not 0.0 < t.lr_decay <= 1.0:
        raise ConfigError("train.lr_decay must be in (0, 1]")
    s = cfg.scene
    for name in ("dividers", "crossings", "boundary_pivots", "divider_pivots"):
        lo, hi = getattr(s, name)
        if lo > hi or lo < 0:
            raise ConfigError(f"scene.{name} must be a (lo, hi) range with 0 <= lo <= hi")
    if s.boundary_pivots[1] > m.points["boundary"]:
        raise ConfigError("boundary pivots exceed the boundary point budget")
    if s.divider_pivots[1] > m.points["divider"]:
        raise ConfigError("divider pivots exceed the divider point budget")
    if not 0.0 <= s.lidar_dropout < 1.0:
        raise ConfigError("scene.lidar_dropout must be in [0, 1)")
    if s.disparity_max < 0:
        raise ConfigError("scene.disparity_max must be >= 0")
    e = cfg.eval
    if e.resample_interval <= 0:
        raise ConfigError("eval.resample_interval must be positive")
    for name in ("hard", "easy"):
        thr = getattr(e, name)
        if len(thr) != 3 or list(thr) != sorted(thr) or thr[0] <= 0:
            raise ConfigError(f"eval.{name} must be three ascending positive thresholds")
    a = cfg.ablation
    if a.fusion not in ("coupled", "concat"):
        raise ConfigError("ablation.fusion must be coupled|concat")
    if a.interaction not in ("coupled", "single"):
        raise ConfigError("ablation.interaction must be coupled|single")
    if not 0.0 < m.confidence_threshold < 1.0:
        raise ConfigError("model.confidence_threshold must be in (0, 1)")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")


def default_config() -> RunConfig:
    return copy.deepcopy(RunConfig())
