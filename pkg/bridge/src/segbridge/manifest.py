"""What a bridge process offers: capabilities, model names, device."""

from __future__ import annotations

from dataclasses import dataclass, field

from .adapters import Adapter
from .wire import PROTOCOL_VERSION

STUB_MODEL_ID = "stub-centered-box"


@dataclass(slots=True)
class AdapterManifest:
    """Served capability list plus the models and device behind it.

    Invariant: every advertised capability answers requests, which
    `require_served` enforces against the adapter registry before the
    serve loop accepts anything.
    """

    capabilities: tuple[str, ...]
    models: dict[str, str] = field(default_factory=dict)
    device: str = "cpu"
    protocol_version: int = PROTOCOL_VERSION

    def __post_init__(self) -> None:
        self.capabilities = tuple(self.capabilities)
        seen = set()
        for cap in self.capabilities:
            if not cap or not isinstance(cap, str):
                raise ValueError(f"bad capability name {cap!r}")
            if cap in seen:
                raise ValueError(f"duplicate capability {cap!r}")
            seen.add(cap)

    def require_served(self, registry: dict[str, Adapter]) -> None:
        missing = [c for c in self.capabilities if c not in registry]
        if missing:
            raise ValueError(
                f"advertised capability without adapter: {', '.join(sorted(missing))}"
            )


def stub_manifest(
    capabilities: tuple[str, ...] = ("InstanceSegmentation",), device: str = "cpu"
) -> AdapterManifest:
    return AdapterManifest(
        capabilities=tuple(capabilities),
        models={cap: STUB_MODEL_ID for cap in capabilities},
        device=device,
    )
