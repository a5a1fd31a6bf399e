"""Capability-keyed perception abstraction.

Every perception request resolves to either an external bridge process
(when an endpoint is registered for the capability) or the deterministic
classical fallback. External failures degrade to the fallback unless the
hub runs in strict mode, in which case they raise.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from ..core import BoundingBox, UNKNOWN_CATEGORY, mask_to_box
from ..errors import ProviderError
from . import fallbacks
from .wire import BridgeClient

log = logging.getLogger(__name__)


class Capability(enum.Enum):
    InstanceSegmentation = "InstanceSegmentation"
    SemanticSegmentation = "SemanticSegmentation"
    PoseSkeleton = "PoseSkeleton"
    DenseFlow = "DenseFlow"
    Depth = "Depth"
    Saliency = "Saliency"
    Contour = "Contour"
    SceneFeature = "SceneFeature"
    PersonReId = "PersonReId"


@dataclass(slots=True)
class InstanceProposal:
    box: BoundingBox
    mask: np.ndarray
    category: str
    score: float
    is_human: bool

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ProviderError(f"proposal score {self.score} outside [0,1]")


@dataclass(slots=True)
class Joint:
    name: str
    x: float
    y: float
    confidence: float


@dataclass(slots=True)
class Skeleton:
    joints: list[Joint] = field(default_factory=list)
    bones: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        for a, b in self.bones:
            if not (0 <= a < len(self.joints) and 0 <= b < len(self.joints)):
                raise ProviderError(f"bone ({a},{b}) references missing joint")


@dataclass(slots=True)
class SemanticRegion:
    category: str
    mask: np.ndarray
    score: float = 0.0


def _proposal_from_wire(raw: dict, shape: tuple[int, int]) -> InstanceProposal | None:
    mask = raw["mask"]
    box = mask_to_box(mask)
    if box is None:
        return None
    return InstanceProposal(
        box=box,
        mask=mask,
        category=raw["category"],
        score=raw["score"],
        is_human=raw["is_human"],
    )


class PerceptionHub:
    """Resolves capability requests; total over all capabilities.

    `endpoints` maps capability names to endpoint specs (a command line to
    spawn, or `pipe:<out>:<in>`). Fallbacks that depend on engine state
    (the online classifier's probability map) receive it as `prob_hint`.
    """

    def __init__(
        self,
        endpoints: dict[str, str] | None = None,
        strict: bool = False,
        timeout: float = 30.0,
    ):
        self.strict = strict
        self._timeout = timeout
        self._specs: dict[Capability, str] = {}
        for name, spec in (endpoints or {}).items():
            try:
                cap = Capability(name)
            except ValueError:
                raise ProviderError(f"unknown capability {name!r}")
            self._specs[cap] = spec
        self._clients: dict[Capability, BridgeClient | None] = {}

    def close(self) -> None:
        for client in self._clients.values():
            if client is not None:
                client.close()
        self._clients.clear()

    def __enter__(self) -> "PerceptionHub":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def registered(self, capability: Capability) -> bool:
        return capability in self._specs

    def _client(self, capability: Capability) -> BridgeClient | None:
        if capability not in self._specs:
            return None
        if capability not in self._clients:
            try:
                client = BridgeClient(self._specs[capability], timeout=self._timeout)
            except ProviderError:
                if self.strict:
                    raise
                log.warning("endpoint for %s unavailable; using fallback", capability.value)
                client = None
            else:
                if capability.value not in client.capabilities:
                    client.close()
                    if self.strict:
                        raise ProviderError(
                            f"endpoint does not serve {capability.value}"
                        )
                    client = None
            self._clients[capability] = client
        return self._clients[capability]

    def _external(self, capability: Capability, call):
        """Run `call` against the bridge; degrade to None on failure."""
        client = self._client(capability)
        if client is None:
            return None
        try:
            return call(client)
        except ProviderError:
            if self.strict:
                raise
            log.warning("%s call failed; using fallback", capability.value, exc_info=True)
            return None

    # -- capability entry points ------------------------------------------

    def instance_proposals(
        self, frame: np.ndarray, prob_hint: np.ndarray | None = None
    ) -> list[InstanceProposal]:
        shape = frame.shape[:2]
        raw = self._external(
            Capability.InstanceSegmentation,
            lambda c: c.infer_proposals("InstanceSegmentation", _as_rgb(frame)),
        )
        if raw is not None:
            out = [_proposal_from_wire(r, shape) for r in raw]
            return [p for p in out if p is not None]
        if prob_hint is None:
            return []
        proposals = []
        for mask, score in fallbacks.connected_component_proposals(prob_hint):
            box = mask_to_box(mask)
            if box is None:
                continue
            proposals.append(
                InstanceProposal(
                    box=box,
                    mask=mask,
                    category=UNKNOWN_CATEGORY,
                    score=min(1.0, max(0.0, score)),
                    is_human=False,
                )
            )
        return proposals

    def semantic_regions(
        self, frame: np.ndarray, prob_hint: np.ndarray | None = None
    ) -> list[SemanticRegion]:
        raw = self._external(
            Capability.SemanticSegmentation,
            lambda c: c.infer_proposals("SemanticSegmentation", _as_rgb(frame)),
        )
        if raw is not None:
            return [
                SemanticRegion(category=r["category"], mask=r["mask"], score=r["score"])
                for r in raw
            ]
        if prob_hint is None:
            return []
        return [
            SemanticRegion(category=UNKNOWN_CATEGORY, mask=mask, score=score)
            for mask, score in fallbacks.connected_component_proposals(prob_hint)
        ]

    def skeletons(
        self, frame: np.ndarray, mask_hint: np.ndarray | None = None
    ) -> list[Skeleton]:
        raw = self._external(
            Capability.PoseSkeleton, lambda c: c.infer_skeletons(_as_rgb(frame))
        )
        if raw is not None:
            out = []
            for sk in raw:
                joints = [
                    Joint(
                        name=str(j.get("name", f"joint_{i}")),
                        x=float(j.get("x", 0.0)),
                        y=float(j.get("y", 0.0)),
                        confidence=float(j.get("confidence", 0.0)),
                    )
                    for i, j in enumerate(sk.get("joints", []))
                ]
                bones = [(int(a), int(b)) for a, b in sk.get("bones", [])]
                out.append(Skeleton(joints=joints, bones=bones))
            return out
        if mask_hint is None or not mask_hint.any():
            return []
        pts, bones = fallbacks.medial_axis_joints(mask_hint)
        joints = [
            Joint(name=f"axis_{i}", x=x, y=y, confidence=1.0)
            for i, (x, y) in enumerate(pts)
        ]
        if not joints:
            return []
        return [Skeleton(joints=joints, bones=bones)]

    def flow(self, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
        """Displacement field moving src pixels toward dst, (H, W, 2)."""
        expect = (src.shape[0], src.shape[1], 2)
        pair = np.stack([_as_rgb(src), _as_rgb(dst)], axis=0)
        result = self._external(
            Capability.DenseFlow, lambda c: c.infer_map("DenseFlow", pair, expect)
        )
        if result is not None:
            return result
        return fallbacks.estimate_flow_fallback(src, dst)

    def _map_capability(self, capability: Capability, frame: np.ndarray, fallback) -> np.ndarray:
        expect = frame.shape[:2]
        result = self._external(
            capability, lambda c: c.infer_map(capability.value, _as_rgb(frame), expect)
        )
        if result is not None:
            return result
        return fallback(frame)

    def saliency(self, frame: np.ndarray) -> np.ndarray:
        return self._map_capability(
            Capability.Saliency, frame, fallbacks.estimate_saliency_fallback
        )

    def contour(self, frame: np.ndarray) -> np.ndarray:
        return self._map_capability(
            Capability.Contour, frame, fallbacks.estimate_contour_fallback
        )

    def depth(self, frame: np.ndarray) -> np.ndarray:
        return self._map_capability(
            Capability.Depth, frame, fallbacks.estimate_depth_fallback
        )

    def scene_feature(
        self, image: np.ndarray, mask: np.ndarray | None = None
    ) -> np.ndarray:
        result = self._external(
            Capability.SceneFeature,
            lambda c: c.infer_vector("SceneFeature", _as_rgb(_masked(image, mask))),
        )
        if result is not None:
            return result
        return fallbacks.scene_descriptor(image, mask)

    def reid_descriptor(
        self, image: np.ndarray, mask: np.ndarray | None = None
    ) -> np.ndarray:
        result = self._external(
            Capability.PersonReId,
            lambda c: c.infer_vector("PersonReId", _as_rgb(_masked(image, mask))),
        )
        if result is not None:
            return result
        return fallbacks.scene_descriptor(image, mask)


def _as_rgb(frame: np.ndarray) -> np.ndarray:
    if frame.ndim == 2:
        return np.repeat(frame[..., None], 3, axis=2).astype(np.uint8)
    return frame.astype(np.uint8)


def _masked(image: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return image
    out = image.copy()
    out[~mask.astype(bool)] = 0
    return out
