"""Pipeline configuration and the builtin procedural asset registry.

The config file is a flat `key = value` text format mirroring
PipelineConfig; unknown keys and out-of-bounds values raise ConfigError.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .assets import (
    CatalogEntry,
    CategorySpec,
    load_category_registry,
    make_box,
    make_cube,
    make_cylinder,
    make_icosphere,
    make_wedge,
    write_obj,
)
from .errors import ConfigError, EmptyRegistry


@dataclass
class PipelineConfig:
    # generation
    global_seed: int = 0
    n_episodes: int = 100
    n_workers: int = 1
    assets_dir: str = "builtin"
    output_root: str = "dataset"
    mu: float = 0.15
    objects_min: int = 1
    objects_max: int = 3
    grasp_candidates: int = 6
    plan_attempts: int = 10
    simplify_target: int = 96
    scale_buckets: int = 64
    queue_size: int = 1024
    # planner
    approach_duration: float = 6.0
    close_duration: float = 0.5
    lift_duration: float = 2.5
    duration_jitter: float = 0.2
    lift_height: float = 0.18
    v_max: float = 0.5
    start_height: float = 0.35
    # model / training
    vocab: int = 256
    embed_dim: int = 16
    hidden_dim: int = 32
    vf_hidden: int = 64
    mixer_ratio: float = 0.5  # grounding fraction per batch
    train_steps: int = 2000
    learning_rate: float = 0.05
    batch_size: int = 8
    samples_per_episode: int = 4
    # evaluation
    eval_scenes: int = 50
    eval_max_steps: int = 400
    attempt_limit: int = 3
    integration_steps: int = 10
    # control
    filter_cutoff: float = 10.0
    filter_sample_rate: float = 1000.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.n_episodes >= 1, "n_episodes must be >= 1"),
            (self.n_workers >= 1, "n_workers must be >= 1"),
            (self.mu > 0.0, "mu must be positive"),
            (1 <= self.objects_min <= self.objects_max, "need 1 <= objects_min <= objects_max"),
            (self.objects_max <= 6, "objects_max must be <= 6 (feature slots)"),
            (self.grasp_candidates >= 1, "grasp_candidates must be >= 1"),
            (self.plan_attempts >= 1, "plan_attempts must be >= 1"),
            (self.simplify_target >= 4, "simplify_target must be >= 4"),
            (self.scale_buckets >= 1, "scale_buckets must be >= 1"),
            (self.vocab >= 2, "vocab must be >= 2"),
            (0.0 <= self.mixer_ratio < 1.0, "mixer_ratio must be in [0, 1)"),
            (self.train_steps >= 1, "train_steps must be >= 1"),
            (self.learning_rate > 0.0, "learning_rate must be positive"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.eval_scenes >= 1, "eval_scenes must be >= 1"),
            (self.attempt_limit >= 1, "attempt_limit must be >= 1"),
            (self.integration_steps >= 1, "integration_steps must be >= 1"),
            (0.0 < self.filter_cutoff < self.filter_sample_rate / 2.0,
             "need 0 < filter_cutoff < filter_sample_rate / 2"),
            (self.queue_size >= 1, "queue_size must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        values: dict[str, object] = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in fields:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            ftype = fields[key].type
            try:
                if ftype == "int":
                    values[key] = int(value)
                elif ftype == "float":
                    values[key] = float(value)
                elif ftype == "bool":
                    values[key] = value.lower() in ("1", "true", "yes")
                else:
                    values[key] = value
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value}") from exc
        return cls(**values)

    def to_file(self, path: str | Path) -> None:
        lines = [
            f"{f.name} = {getattr(self, f.name)}"
            for f in dataclasses.fields(self)
        ]
        Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# builtin procedural registry: desk-scale graspable stand-ins

def builtin_entries() -> list[CatalogEntry]:
    specs = {
        "block": CategorySpec("block", 0.02, 0.07),
        "ball": CategorySpec("ball", 0.02, 0.075),
        "bar": CategorySpec("bar", 0.08, 0.28),
        "tile": CategorySpec("tile", 0.05, 0.2),
        "can": CategorySpec("can", 0.05, 0.11, upright_only=True),
        "prism": CategorySpec("prism", 0.04, 0.13),
    }
    meshes = {
        ("block", "cube"): make_cube(1.0),
        ("block", "slab"): make_box(1.0, 0.9, 0.75),
        ("ball", "smooth"): make_icosphere(0.5, subdivisions=2),
        ("ball", "coarse"): make_icosphere(0.5, subdivisions=1),
        ("bar", "long"): make_box(1.0, 0.4, 0.25),
        ("bar", "square"): make_box(1.0, 0.27, 0.27),
        ("tile", "flat"): make_box(1.0, 0.7, 0.15),
        ("tile", "thin"): make_box(1.0, 0.85, 0.12),
        ("can", "round"): make_cylinder(0.35, 1.0, segments=24),
        ("can", "slim"): make_cylinder(0.28, 1.0, segments=20),
        ("prism", "wedge"): make_wedge(0.6, 1.0, 0.5),
    }
    entries = []
    for (category, name), mesh in meshes.items():
        entries.append(
            CatalogEntry(
                instance_id=f"{category}__{name}",
                spec=specs[category],
                mesh=mesh,
            )
        )
    return entries


def load_asset_entries(assets_dir: str | Path) -> list[CatalogEntry]:
    """Catalog from a directory: categories.json + meshes/<category>__<name>.obj."""
    if str(assets_dir) == "builtin":
        return builtin_entries()
    assets_dir = Path(assets_dir)
    registry = load_category_registry(assets_dir / "categories.json")
    entries = []
    for path in sorted((assets_dir / "meshes").glob("*.obj")):
        category = path.stem.split("__", 1)[0]
        if category not in registry:
            raise ConfigError(f"{path.name}: category {category!r} not in categories.json")
        entries.append(CatalogEntry(instance_id=path.stem, spec=registry[category], path=path))
    if not entries:
        raise EmptyRegistry(f"no .obj meshes under {assets_dir / 'meshes'}")
    return entries


def write_demo_assets(assets_dir: str | Path) -> list[CatalogEntry]:
    """Materialize the builtin registry as OBJ files + categories.json."""
    assets_dir = Path(assets_dir)
    (assets_dir / "meshes").mkdir(parents=True, exist_ok=True)
    entries = builtin_entries()
    categories = {}
    for entry in entries:
        spec = entry.spec
        categories[spec.name] = {
            "min_size": spec.min_size,
            "max_size": spec.max_size,
            "upright_only": spec.upright_only,
        }
        write_obj(entry.mesh, assets_dir / "meshes" / f"{entry.instance_id}.obj")
    (assets_dir / "categories.json").write_text(json.dumps(categories, indent=2))
    return load_asset_entries(assets_dir)
