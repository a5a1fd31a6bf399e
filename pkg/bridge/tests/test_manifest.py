"""Manifest invariants and the stub registry."""

import numpy as np
import pytest

from segbridge.adapters import centered_box_proposal, stub_registry
from segbridge.manifest import STUB_MODEL_ID, AdapterManifest, stub_manifest


def test_stub_manifest_defaults():
    manifest = stub_manifest()
    assert manifest.capabilities == ("InstanceSegmentation",)
    assert manifest.models == {"InstanceSegmentation": STUB_MODEL_ID}
    assert manifest.device == "cpu"
    assert manifest.protocol_version == 1


def test_duplicate_capability_rejected():
    with pytest.raises(ValueError):
        AdapterManifest(("A", "A"))


def test_empty_capability_name_rejected():
    with pytest.raises(ValueError):
        AdapterManifest(("",))


def test_require_served_passes_when_registry_covers_all():
    manifest = stub_manifest()
    manifest.require_served(stub_registry(manifest.capabilities))


def test_require_served_names_the_missing_capability():
    manifest = AdapterManifest(("InstanceSegmentation", "Depth"))
    with pytest.raises(ValueError, match="Depth"):
        manifest.require_served(stub_registry(("InstanceSegmentation",)))


def test_stub_registry_rejects_unknown_capability():
    with pytest.raises(ValueError, match="PoseSkeleton"):
        stub_registry(("PoseSkeleton",))


def test_centered_box_covers_middle_half():
    frame = np.zeros((20, 30, 3), dtype=np.uint8)
    result = centered_box_proposal(frame, {})
    assert len(result.proposals) == 1
    prop = result.proposals[0]
    expected = np.zeros((20, 30), dtype=np.uint8)
    expected[5:15, 7:23] = 1
    assert np.array_equal(prop.mask, expected)
    assert prop.box == [7, 5, 16, 10]
    assert not prop.is_human
    assert 0.0 <= prop.score <= 1.0


def test_centered_box_survives_tiny_frames():
    result = centered_box_proposal(np.zeros((1, 2, 3), dtype=np.uint8), {})
    assert result.proposals[0].mask.sum() >= 1


def test_centered_box_rejects_missing_payload():
    with pytest.raises(ValueError):
        centered_box_proposal(None, {})
