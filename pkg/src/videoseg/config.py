"""INI run configuration: strict schema, typed access, helpful errors.

Unknown sections or keys are rejected outright; a typo should fail the run,
not silently fall back to a default.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from pathlib import Path

from .errors import ConfigError

_THRESHOLD_DEFAULTS = {
    "presence": 0.3,
    "history_n": 8,
    "history_delta": 2,
    "preview_window": 10,
    "rigid_inlier_ratio": 0.8,
    "rigid_frame_fraction": 0.7,
    "area_update_band": 1.3,
    "grabcut_iterations": 5,
    "reappear_similarity": 0.7,
    "box_expand": 0.10,
    "association_iou": 0.3,
    "mismatch_iou": 0.5,
    "area_ratio_low": 0.5,
    "area_ratio_high": 2.0,
    "rare_fraction": 0.05,
    "d_snap": 3,
    "boundary_tol_fraction": 0.008,
}

_INT_THRESHOLDS = {
    "history_n", "history_delta", "preview_window", "grabcut_iterations",
    "d_snap",
}

_RUN_KEYS = {
    "sequence_root", "names", "passes", "out", "seed", "workers",
    "strict_providers",
}

_WONDERLAND_DEFAULTS = {
    "leaf_capacity": 200,
    "branch_cap": 200,
    "count": 100,
    "pool_manifest": "",
    "allow_categories": "",
}

PASS_NAMES = ("preview", "contextual", "guided")


def _capability_names() -> set[str]:
    from .providers import Capability

    return {c.name for c in Capability}


@dataclasses.dataclass
class RunConfig:
    sequence_root: Path
    names: list[str]
    passes: str = "guided"
    out: Path = Path("out")
    seed: int = 0
    workers: int = 1
    strict_providers: bool = False
    providers: dict[str, str] = dataclasses.field(default_factory=dict)
    thresholds: dict[str, float] = dataclasses.field(
        default_factory=lambda: dict(_THRESHOLD_DEFAULTS)
    )
    wonderland: dict = dataclasses.field(
        default_factory=lambda: dict(_WONDERLAND_DEFAULTS)
    )

    def validate(self) -> None:
        if self.passes not in PASS_NAMES:
            raise ConfigError(
                f"passes must be one of {', '.join(PASS_NAMES)}: got {self.passes!r}"
            )
        if not self.names:
            raise ConfigError("no sequence names configured")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1: got {self.workers}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative: got {self.seed}")
        names = _capability_names()
        for cap in self.providers:
            if cap not in names:
                raise ConfigError(f"unknown provider capability {cap!r}")
        t = self.thresholds
        for key in t:
            if key not in _THRESHOLD_DEFAULTS:
                raise ConfigError(f"unknown threshold {key!r}")
        for key, value in t.items():
            if not math.isfinite(value):
                raise ConfigError(f"threshold {key} must be finite")
        for key in ("presence", "rigid_inlier_ratio", "rigid_frame_fraction",
                    "reappear_similarity", "association_iou", "mismatch_iou",
                    "rare_fraction", "boundary_tol_fraction"):
            if not (0.0 <= t[key] <= 1.0):
                raise ConfigError(f"threshold {key} must lie in [0, 1]")
        for key in ("history_n", "history_delta", "preview_window", "d_snap"):
            if int(t[key]) < 1:
                raise ConfigError(f"threshold {key} must be >= 1")
        if t["grabcut_iterations"] < 0:
            raise ConfigError("grabcut_iterations must be >= 0")
        if t["area_update_band"] <= 1.0:
            raise ConfigError("area_update_band must be > 1")
        if not (0.0 < t["area_ratio_low"] <= t["area_ratio_high"]):
            raise ConfigError("area ratio band is inverted or non-positive")
        if t["box_expand"] < 0.0:
            raise ConfigError("box_expand must be >= 0")
        w = self.wonderland
        if int(w["leaf_capacity"]) < 1 or int(w["branch_cap"]) < 1:
            raise ConfigError("wonderland tree parameters must be >= 1")
        if int(w["count"]) < 1:
            raise ConfigError("wonderland count must be >= 1")


def _parse_bool(raw: str, where: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {raw!r}")


def _parse_number(raw: str, where: str, as_int: bool):
    try:
        return int(raw) if as_int else float(raw)
    except ValueError as exc:
        kind = "an integer" if as_int else "a number"
        raise ConfigError(f"{where}: expected {kind}, got {raw!r}") from exc


def load_config(path: Path | str) -> RunConfig:
    """Parse and validate an INI run configuration."""
    ini = Path(path)
    if not ini.is_file():
        raise ConfigError(f"config file not found: {ini}")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(ini.read_text(), source=str(ini))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {ini}: {exc}") from exc

    known_sections = {"run", "providers", "thresholds", "wonderland"}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown section [{section}] in {ini}")
    if not parser.has_section("run"):
        raise ConfigError(f"missing [run] section in {ini}")

    run = dict(parser.items("run"))
    for key in run:
        if key not in _RUN_KEYS:
            raise ConfigError(f"unknown key {key!r} in [run]")
    for required in ("sequence_root", "names"):
        if required not in run:
            raise ConfigError(f"[run] is missing {required!r}")

    config = RunConfig(
        sequence_root=Path(run["sequence_root"]),
        names=[n.strip() for n in run["names"].split(",") if n.strip()],
    )
    if "passes" in run:
        config.passes = run["passes"].strip()
    if "out" in run:
        config.out = Path(run["out"])
    if "seed" in run:
        config.seed = _parse_number(run["seed"], "[run] seed", as_int=True)
    if "workers" in run:
        config.workers = _parse_number(run["workers"], "[run] workers", as_int=True)
    if "strict_providers" in run:
        config.strict_providers = _parse_bool(
            run["strict_providers"], "[run] strict_providers"
        )

    if parser.has_section("providers"):
        names = _capability_names()
        for cap, endpoint in parser.items("providers"):
            matched = next(
                (c for c in names if c.lower() == cap.lower()), None
            )
            if matched is None:
                raise ConfigError(f"unknown provider capability {cap!r}")
            config.providers[matched] = endpoint.strip()

    if parser.has_section("thresholds"):
        for key, raw in parser.items("thresholds"):
            if key not in _THRESHOLD_DEFAULTS:
                raise ConfigError(f"unknown key {key!r} in [thresholds]")
            config.thresholds[key] = _parse_number(
                raw, f"[thresholds] {key}", as_int=key in _INT_THRESHOLDS
            )

    if parser.has_section("wonderland"):
        for key, raw in parser.items("wonderland"):
            if key not in _WONDERLAND_DEFAULTS:
                raise ConfigError(f"unknown key {key!r} in [wonderland]")
            if key in ("pool_manifest", "allow_categories"):
                config.wonderland[key] = raw.strip()
            else:
                config.wonderland[key] = _parse_number(
                    raw, f"[wonderland] {key}", as_int=True
                )

    config.validate()
    return config


def config_fingerprint(config: RunConfig) -> str:
    """Stable digest of everything that affects outputs."""
    import hashlib
    import json

    payload = {
        "sequence_root": str(config.sequence_root),
        "names": config.names,
        "passes": config.passes,
        "seed": config.seed,
        "strict_providers": config.strict_providers,
        "providers": config.providers,
        "thresholds": config.thresholds,
        "wonderland": {k: str(v) for k, v in config.wonderland.items()},
    }
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
