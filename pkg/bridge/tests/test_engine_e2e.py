"""End-to-end: the engine drives the stub bridge as a live provider.

These tests exercise the engine strictly through its public surface, the
`videoseg` command line, and skip when that CLI is not on PATH.
"""

import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

PIL = pytest.importorskip("PIL")
from PIL import Image  # noqa: E402

ENGINE = shutil.which("videoseg")
STUB_ENDPOINT = f"{sys.executable} -m segbridge"

pytestmark = pytest.mark.skipif(ENGINE is None, reason="videoseg CLI not installed")


def _write_sequence(root: Path, name: str, frames: int = 4) -> np.ndarray:
    """Tiny DAVIS-layout clip: one bright square sliding over a dim floor."""
    rng = np.random.default_rng(21)
    h, w = 32, 48
    frame_dir = root / "JPEGImages" / name
    anno_dir = root / "Annotations" / name
    frame_dir.mkdir(parents=True)
    anno_dir.mkdir(parents=True)

    texture = rng.integers(20, 45, (h, w, 3), dtype=np.uint8)
    first_labels = None
    for t in range(frames):
        frame = texture.copy()
        left = 6 + 3 * t
        frame[11:21, left : left + 10] = (230, 60 + 4 * t, 40)
        Image.fromarray(frame).save(frame_dir / f"{t:05d}.png")
        if t == 0:
            labels = np.zeros((h, w), dtype=np.uint8)
            labels[11:21, left : left + 10] = 1
            first_labels = labels
            image = Image.fromarray(labels, mode="P")
            image.putpalette([0, 0, 0, 128, 0, 0] + [0] * 750)
            image.save(anno_dir / "00000.png")
    return first_labels


def _load_labels(path: Path) -> np.ndarray:
    return np.array(Image.open(path))


def test_engine_run_with_stub_bridge_attached(tmp_path):
    first_labels = _write_sequence(tmp_path / "data", "slide")
    out = tmp_path / "out"
    proc = subprocess.run(
        [
            ENGINE,
            "run",
            "--sequence-root",
            str(tmp_path / "data"),
            "--name",
            "slide",
            "--out",
            str(out),
            "--seed",
            "3",
            "--providers",
            f"InstanceSegmentation={STUB_ENDPOINT}",
            "--strict-providers",
        ],
        capture_output=True,
        text=True,
        timeout=240,
    )
    assert proc.returncode == 0, proc.stdout + proc.stderr

    final = out / "final" / "slide"
    files = sorted(final.glob("*.png"))
    assert [f.name for f in files] == [f"{t:05d}.png" for t in range(4)]
    for path in files:
        labels = _load_labels(path)
        assert labels.shape == (32, 48)
        assert set(np.unique(labels)) <= {0, 1}
    assert np.array_equal(_load_labels(files[0]), first_labels)
    assert (out / "manifest.json").is_file()


def test_engine_conformance_check_accepts_stub(tmp_path):
    proc = subprocess.run(
        [ENGINE, "providers", "check", "--endpoint", STUB_ENDPOINT],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "FAIL" not in proc.stdout
