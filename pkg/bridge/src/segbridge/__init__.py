"""Perception bridge: model adapters served over a stream wire protocol.

The package has three layers: framing (`wire`), the request loop
(`server` + `manifest` + `adapters`), and a client-side conformance
harness (`conformance`). It ships one deterministic stub adapter and no
model weights; real adapters plug into the same registry.
"""

from .adapters import (
    Adapter,
    JsonResult,
    MapResult,
    Proposal,
    ProposalResult,
    centered_box_proposal,
    stub_registry,
)
from .conformance import ConformanceReport, EndpointProbe, conformance_suite
from .manifest import AdapterManifest, stub_manifest
from .server import serve
from .wire import PROTOCOL_VERSION, StreamClosed, WireError

__version__ = "0.1.0"

__all__ = [
    "Adapter",
    "AdapterManifest",
    "ConformanceReport",
    "EndpointProbe",
    "JsonResult",
    "MapResult",
    "PROTOCOL_VERSION",
    "Proposal",
    "ProposalResult",
    "StreamClosed",
    "WireError",
    "centered_box_proposal",
    "conformance_suite",
    "serve",
    "stub_manifest",
    "stub_registry",
    "__version__",
]
