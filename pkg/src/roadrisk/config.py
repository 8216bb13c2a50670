"""Run configuration: one JSON file drives the whole pipeline.

A run is reproducible from the config plus the input files alone, so every
artifact embeds the config hash (sha256 of the canonical JSON form) and
manifests record input-file digests next to it.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .diffusion import DiffusionConfig
from .errors import ConfigError
from .graph import GraphParams
from .ingest import RegionSpec
from .model import ModelConfig
from .training import TrainConfig


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Short stable fingerprint of any JSON-serializable structure."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:12]


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunConfig:
    data_csv: str
    out_dir: str
    region: RegionSpec
    schema: dict[str, str] = field(default_factory=dict)
    graph: GraphParams = field(default_factory=GraphParams)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    weight_tables: str | None = None  # None: packaged defaults
    mape_eps: float = 1e-8
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def to_dict(self) -> dict:
        return {
            "data_csv": self.data_csv,
            "out_dir": self.out_dir,
            "region": {
                "name": self.region.name,
                "bbox": list(self.region.bbox),
                "period": [d.isoformat() for d in self.region.period],
            },
            "schema": self.schema,
            "graph": self.graph.to_dict(),
            "diffusion": self.diffusion.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "seed": self.seed,
            "weight_tables": self.weight_tables,
            "mape_eps": self.mape_eps,
            "split_fractions": list(self.split_fractions),
        }

    @property
    def fingerprint(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            region = RegionSpec(
                name=raw["region"]["name"],
                bbox=tuple(raw["region"]["bbox"]),
                period=(
                    dt.date.fromisoformat(raw["region"]["period"][0]),
                    dt.date.fromisoformat(raw["region"]["period"][1]),
                ),
            )
            cfg = cls(
                data_csv=raw["data_csv"],
                out_dir=raw["out_dir"],
                region=region,
                schema=dict(raw.get("schema", {})),
                graph=GraphParams(**raw.get("graph", {})),
                diffusion=DiffusionConfig.from_dict(raw.get("diffusion", {"preset": "Differentiated_B"})),
                model=ModelConfig.from_dict(raw.get("model", {})) if raw.get("model") else ModelConfig(),
                train=TrainConfig.from_dict(raw.get("train", {})) if raw.get("train") else TrainConfig(),
                seed=int(raw.get("seed", 0)),
                weight_tables=raw.get("weight_tables"),
                mape_eps=float(raw.get("mape_eps", 1e-8)),
                split_fractions=tuple(raw.get("split_fractions", (0.6, 0.2, 0.2))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid run config: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        """Relative paths inside the config resolve against the working directory."""
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read run config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def write_manifest(
    out_dir: str | Path,
    command: str,
    config: RunConfig,
    inputs: dict[str, str | Path],
    outputs: list[str],
    runtime_s: float,
) -> Path:
    """Per-command provenance record; runtime is the only varying field."""
    manifest = {
        "command": command,
        "config_hash": config.fingerprint,
        "seed": config.seed,
        "inputs": {name: file_sha256(p) for name, p in sorted(inputs.items())},
        "outputs": sorted(outputs),
        "runtime_s": round(runtime_s, 3),
    }
    path = Path(out_dir) / f"manifest_{command.replace('-', '_')}.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
