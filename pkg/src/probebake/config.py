"""Pipeline configuration: defaults, TOML files and command-line overrides."""

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class PipelineConfig:
    density: float = 100.0
    bake_dirs: int = 960
    train_dirs: int = 120
    train_min_angle: float = 30.0
    train_rays: int = 256
    train_bounces: int = 1
    n_scenarios: int = 6
    reg_lambda: float = 0.1
    iters: int = 400
    lr_start: float = 0.01
    lr_end: float = 0.001
    probe_count: object = "auto"
    n_assoc: int = 2
    k_neighbors: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.density <= 0:
            raise ValueError("density must be positive")
        if self.bake_dirs < 8 or self.train_dirs < 8:
            raise ValueError("direction sets need at least 8 directions")
        if not 0 <= self.train_min_angle < 90:
            raise ValueError("train_min_angle must lie in [0, 90) degrees")
        if self.reg_lambda < 0:
            raise ValueError("lambda must be nonnegative")
        if self.iters < 0:
            raise ValueError("iters must be nonnegative")
        if not 1 <= self.n_assoc <= 4:
            raise ValueError("n_assoc must lie in [1, 4]")
        if self.probe_count != "auto" and not (isinstance(self.probe_count, int) and self.probe_count >= 1):
            raise ValueError("probe_count must be 'auto' or a positive integer")

    def to_dict(self):
        return asdict(self)

    def digest(self):
        """Short stable hash of the resolved configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def meta(self):
        return {"config": self.to_dict(), "config_hash": self.digest(), "seed": self.seed}

    def distributor(self):
        from .distribution import ProbeDistributor

        return ProbeDistributor(
            n_probes=self.probe_count, n_assoc=self.n_assoc, density=self.density,
            k_neighbors=self.k_neighbors, n_scenarios=self.n_scenarios, iters=self.iters,
            lr_start=self.lr_start, lr_end=self.lr_end, train_dirs=self.train_dirs,
            train_min_angle=self.train_min_angle, train_rays=self.train_rays,
            train_bounces=self.train_bounces, random_state=self.seed)

    def bake_params(self):
        from .baker import BakeParams

        return BakeParams(self.reg_lambda, self.bake_dirs, self.density, self.seed)


_ALIASES = {"lambda": "reg_lambda"}


def _normalize(raw):
    out = {}
    names = {f.name for f in fields(PipelineConfig)}
    for key, value in raw.items():
        key = key.replace("-", "_")
        if key == "lr":
            if isinstance(value, (list, tuple)) and len(value) == 2:
                out["lr_start"], out["lr_end"] = float(value[0]), float(value[1])
                continue
            raise ValueError("lr must be a [start, end] pair")
        key = _ALIASES.get(key, key)
        if key not in names:
            raise ValueError(f"unknown config key {key!r}")
        out[key] = value
    return out


def load_config(path=None, overrides=None):
    """Defaults, then the TOML file, then ``overrides`` (None values skipped)."""
    values = {}
    if path is not None:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        values.update(_normalize(doc.get("pipeline", doc)))
    if overrides:
        values.update(_normalize({k: v for k, v in overrides.items() if v is not None}))
    if "probe_count" in values and values["probe_count"] != "auto":
        values["probe_count"] = int(values["probe_count"])
    return PipelineConfig(**values)
