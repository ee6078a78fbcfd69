"""Experiment configuration, synthetic federations and on-disk artefacts."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
from PIL import Image

from . import noise
from .errors import ConfigError, NoPairsFound
from .learner import LearnerConfig

log = logging.getLogger(__name__)

MODES = ("fedavg", "intra_gw", "full")

# rng stream tags; every stream is keyed by (seed, tag, ...)
STREAM_TRAIN_DATA = 1
STREAM_TEST_DATA = 2
STREAM_SIZES = 3
STREAM_CEM_ASSIGN = 4
STREAM_CORRUPT = 5
STREAM_LOCAL_TRAIN = 6
STREAM_INIT = 7
STREAM_GMM = 8


def stream(seed: int, tag: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), tag, *(int(k) for k in keys)])


@dataclass
class ShapeConfig:
    axis_min: float = 10.0
    axis_max: float = 22.0
    background: float = 0.2
    contrast: float = 0.6
    pixel_noise: float = 0.1
    blob_prob: float = 0.5
    blob_amplitude: float = 0.15


@dataclass
class NoiseConfig:
    mu_max: float = 8.0
    mu_min: float = -8.0
    sigma_max: float = 3.0
    p_d: float = 0.2
    l_sub: int | None = None
    degree_p: int = noise.DEFAULT_DEGREE

    def hetero(self) -> noise.HeteroNoiseParams:
        return noise.HeteroNoiseParams(self.mu_max, self.mu_min, self.sigma_max, self.p_d)


@dataclass
class VerifyConfig:
    """Setting used by ``verify-noise``: one annotator on a centred disk."""

    mu: float = 3.0
    sigma: float = 1.5
    radius: int = 12
    size: int = 64
    epsilon: float = 6.0


@dataclass
class ExperimentConfig:
    seed: int = 0
    height: int = 64
    width: int = 64
    num_clients: int = 10
    samples_per_client: int = 20
    size_distribution: str = "equal"
    size_spread: float = 0.5
    test_samples: int = 50
    shapes: ShapeConfig = field(default_factory=ShapeConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    rounds: int = 40
    warmup_rounds: int = 8
    local_epochs: int = 5
    mode: str = "full"
    balance_r: float = 0.5
    pooled_difficulty: bool = False
    workers: int = 1

    def __post_init__(self):
        for name, cls in _NESTED.items():
            value = getattr(self, name)
            if isinstance(value, dict):
                setattr(self, name, _build_nested(name, cls, value))
        self.validate()

    def validate(self):
        if self.height < 8 or self.width < 8:
            raise ConfigError("height", "images must be at least 8x8")
        if self.num_clients < 1:
            raise ConfigError("num_clients", "need at least one client")
        if self.samples_per_client < 1:
            raise ConfigError("samples_per_client", "need at least one sample per client")
        if self.size_distribution not in ("equal", "lognormal"):
            raise ConfigError("size_distribution", "must be 'equal' or 'lognormal'")
        if self.test_samples < 1:
            raise ConfigError("test_samples", "need at least one test sample")
        if self.rounds < 1:
            raise ConfigError("rounds", "must be >= 1")
        if not 0 <= self.warmup_rounds < self.rounds:
            raise ConfigError("warmup_rounds", "must satisfy 0 <= warmup_rounds < rounds")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs", "must be >= 1")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")
        if not 0.0 <= self.balance_r <= 1.0:
            raise ConfigError("balance_r", "must lie in [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        s = self.shapes
        if not 0 < s.axis_min < s.axis_max:
            raise ConfigError("shapes.axis_min", "need 0 < axis_min < axis_max")
        if s.pixel_noise < 0:
            raise ConfigError("shapes.pixel_noise", "must be >= 0")
        try:
            self.noise.hetero()
        except ValueError as exc:
            raise ConfigError("noise", str(exc)) from None
        if self.learner.channels[0] != 1:
            raise ConfigError("learner.channels", "synthetic images have one channel")

    # -- (de)serialisation ------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["learner"] = self.learner.to_dict()
        return d

    def canonical_json(self) -> str:
        """Sorted compact JSON of everything that can change results.

        ``workers`` only changes how client updates are scheduled, so it is
        left out and sequential and parallel runs share a hash.
        """
        d = self.to_dict()
        del d["workers"]
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown field")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from None

    def replace(self, **changes) -> "ExperimentConfig":
        return self.from_dict({**self.to_dict(), **changes})


_NESTED = {
    "shapes": ShapeConfig,
    "noise": NoiseConfig,
    "learner": LearnerConfig,
    "verify": VerifyConfig,
}


def _build_nested(name: str, cls, value):
    if not isinstance(value, dict):
        raise ConfigError(name, "must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    for k in value:
        if k not in known:
            raise ConfigError(f"{name}.{k}", "unknown field")
    try:
        return cls(**value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from None


def load_config(path) -> ExperimentConfig:
    """Read a TOML or JSON config; the suffix decides the parser."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    try:
        if path.suffix.lower() == ".toml":
            data = tomli.loads(raw.decode())
        else:
            data = json.loads(raw)
    except (ValueError, tomli.TOMLDecodeError) as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    return ExperimentConfig.from_dict(data)


# -- synthetic data ---------------------------------------------------------


@dataclass
class SyntheticSample:
    image: np.ndarray  # (H, W, 1) float32 in [0, 1]
    clean_mask: np.ndarray  # (H, W) bool


@dataclass
class NoisySample:
    image: np.ndarray
    clean_mask: np.ndarray
    noisy_mask: np.ndarray
    noise_map: np.ndarray
    dropped: int = 0


def render_shape(shape_cfg: ShapeConfig, height: int, width: int, rng) -> np.ndarray:
    """One ellipse, optionally bent into a blob by low-frequency radial waves."""
    cy = rng.uniform(0.3 * height, 0.7 * height)
    cx = rng.uniform(0.3 * width, 0.7 * width)
    a = rng.uniform(shape_cfg.axis_min, shape_cfg.axis_max)
    b = rng.uniform(shape_cfg.axis_min, shape_cfg.axis_max)
    theta = rng.uniform(0, math.pi)
    blob = rng.random() < shape_cfg.blob_prob
    amps = rng.uniform(-1, 1, size=2) * shape_cfg.blob_amplitude
    phases = rng.uniform(0, 2 * math.pi, size=2)
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    dy, dx = yy - cy, xx - cx
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    rho = np.hypot(u / a, v / b)
    limit = 1.0
    if blob:
        phi = np.arctan2(v / b, u / a)
        limit = 1.0 + amps[0] * np.cos(2 * phi + phases[0]) + amps[1] * np.cos(3 * phi + phases[1])
    return rho <= limit


def make_sample(config: ExperimentConfig, rng) -> SyntheticSample:
    s = config.shapes
    area = config.height * config.width
    for _ in range(100):
        mask = render_shape(s, config.height, config.width, rng)
        frac = mask.sum() / area
        if 0.02 <= frac <= 0.60:
            break
    else:
        raise ConfigError("shapes", "cannot meet the 2%-60% foreground fraction in 100 attempts")
    img = np.where(mask, s.background + s.contrast, s.background)
    if s.pixel_noise > 0:
        img = img + rng.normal(0.0, s.pixel_noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return SyntheticSample(image=img[..., None], clean_mask=mask)


def client_sizes(config: ExperimentConfig) -> list[int]:
    k, n = config.num_clients, config.samples_per_client
    if config.size_distribution == "equal":
        return [n] * k
    w = stream(config.seed, STREAM_SIZES).lognormal(0.0, config.size_spread, size=k)
    return [max(1, int(round(x))) for x in k * n * w / w.sum()]


def generate_synthetic_dataset(config: ExperimentConfig) -> list[list[SyntheticSample]]:
    """Clean training samples per client, deterministic per (seed, client, index)."""
    out = []
    for cid, size in enumerate(client_sizes(config), start=1):
        out.append(
            [make_sample(config, stream(config.seed, STREAM_TRAIN_DATA, cid, i)) for i in range(size)]
        )
    return out


def generate_test_set(config: ExperimentConfig) -> list[SyntheticSample]:
    return [
        make_sample(config, stream(config.seed, STREAM_TEST_DATA, i))
        for i in range(config.test_samples)
    ]


@dataclass
class CorruptedFederation:
    clients: list[list[NoisySample]]
    cems: list[noise.CemParams]
    warnings: list[list[str]]  # per client, one entry per affected sample

    def manifest(self) -> dict:
        return {
            "clients": [
                {
                    "client_id": cid,
                    "cem": cem.to_dict(),
                    "samples": len(samples),
                    "warnings": warn,
                }
                for cid, (cem, samples, warn) in enumerate(
                    zip(self.cems, self.clients, self.warnings), start=1
                )
            ]
        }


def corrupt_federation(
    clean: list[list[SyntheticSample]],
    hetero: noise.HeteroNoiseParams,
    seed: int,
    l_sub: int | None = None,
    degree_p: int = noise.DEFAULT_DEGREE,
    cems: list[noise.CemParams] | None = None,
) -> CorruptedFederation:
    """Draw one annotator per client and corrupt every training mask with it."""
    if cems is None:
        cems = noise.assign_client_cems(
            len(clean), hetero, stream(seed, STREAM_CEM_ASSIGN), l_sub=l_sub, degree_p=degree_p
        )
    clients, warnings = [], []
    for cid, (samples, cem) in enumerate(zip(clean, cems), start=1):
        noisy, warn = [], []
        for i, s in enumerate(samples):
            res = noise.apply_cem(s.clean_mask, cem, stream(seed, STREAM_CORRUPT, cid, i))
            if res.dropped:
                warn.append(f"sample {i}: {res.dropped} component(s) annihilated")
            noisy.append(
                NoisySample(
                    image=s.image,
                    clean_mask=s.clean_mask,
                    noisy_mask=res.noisy_mask,
                    noise_map=res.noise_map,
                    dropped=res.dropped,
                )
            )
        clients.append(noisy)
        warnings.append(warn)
    return CorruptedFederation(clients=clients, cems=list(cems), warnings=warnings)


# -- PNG io -----------------------------------------------------------------


def write_mask_png(mask, path):
    Image.fromarray(np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8), mode="L").save(path)


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr >= 128


def write_image_png(image, path):
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[..., 0]
    Image.fromarray(np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8), mode="L").save(path)


def read_image_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    return arr[..., None]


def load_external_masks(directory) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairs of ``<stem>_img.png`` / ``<stem>_mask.png`` sorted by stem."""
    directory = Path(directory)
    imgs = {p.name[: -len("_img.png")]: p for p in directory.glob("*_img.png")}
    masks = {p.name[: -len("_mask.png")]: p for p in directory.glob("*_mask.png")}
    unmatched = sorted(set(imgs) ^ set(masks))
    if unmatched:
        log.warning("unmatched files for stems: %s", ", ".join(unmatched))
    pairs = []
    for stem in sorted(set(imgs) & set(masks)):
        try:
            mask = read_mask_png(masks[stem])
            image = read_image_png(imgs[stem])
        except OSError as exc:
            log.warning("skipping %s: %s", stem, exc)
            continue
        pairs.append((image, mask))
    if not pairs:
        raise NoPairsFound(f"no image/mask pairs in {directory}")
    return pairs


# -- run artefacts ----------------------------------------------------------


def format_number(x) -> str:
    return format(float(x), ".17g")


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "metric", "value"])
    for r in rows:
        w.writerow([r["round"], r["metric"], format_number(r["value"])])
    return buf.getvalue()


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _fresh_dir(out_dir: Path) -> Path:
    if (out_dir / "manifest.json").exists():
        stamp = time.strftime("%Y%m%d-%H%M%S")
        candidate = out_dir / f"run-{stamp}"
        n = 1
        while candidate.exists():
            candidate = out_dir / f"run-{stamp}-{n}"
            n += 1
        return candidate
    return out_dir


def persist_run(report, config: ExperimentConfig, out_dir, noise_manifest=None, checkpoint=None) -> Path:
    """Write config, metrics, report and noise manifest plus a hash manifest.

    If ``out_dir`` already holds a run, a timestamped subdirectory is used.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        target = _fresh_dir(out_dir)
        target.mkdir(parents=True, exist_ok=True)
        files = {
            "config.json": dumps_canonical(config.to_dict()).encode(),
            "metrics.csv": metrics_csv(report.metric_rows()).encode(),
            "report.json": report.to_json().encode(),
            "noise_manifest.json": dumps_canonical(noise_manifest or {}).encode(),
        }
        if checkpoint is not None:
            files["model.ckpt"] = checkpoint
        for name, blob in files.items():
            (target / name).write_bytes(blob)
        manifest = {
            "config_hash": config.hash(),
            "files": {name: hashlib.sha256(blob).hexdigest() for name, blob in sorted(files.items())},
        }
        path = target / "manifest.json"
        path.write_text(dumps_canonical(manifest))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write run to {out_dir}: {exc.strerror}", str(out_dir)) from exc
    return path


def ensure_writable(path) -> None:
    path = Path(path)
    probe = path if path.exists() else path.parent
    while not probe.exists():
        probe = probe.parent
    if not os.access(probe, os.W_OK):
        raise PermissionError(f"{path} is not writable")
