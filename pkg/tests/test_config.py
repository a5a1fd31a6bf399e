"""Configuration schema: defaults, typing, rejection of unknowns."""

from pathlib import Path

import pytest

from videoseg.config import RunConfig, config_fingerprint, load_config
from videoseg.errors import ConfigError

MINIMAL = """\
[run]
sequence_root = /data/seqs
names = bear, camel
"""


def write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


def test_minimal_config_defaults(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    assert cfg.sequence_root == Path("/data/seqs")
    assert cfg.names == ["bear", "camel"]
    assert cfg.passes == "guided"
    assert cfg.seed == 0
    assert cfg.workers == 1
    assert cfg.strict_providers is False
    assert cfg.thresholds["presence"] == 0.3
    assert cfg.thresholds["history_n"] == 8
    assert cfg.thresholds["history_delta"] == 2
    assert cfg.thresholds["rigid_inlier_ratio"] == 0.8
    assert cfg.thresholds["rare_fraction"] == 0.05
    assert cfg.thresholds["d_snap"] == 3
    assert cfg.thresholds["boundary_tol_fraction"] == 0.008
    assert cfg.wonderland["leaf_capacity"] == 200
    assert cfg.wonderland["count"] == 100


def test_full_config_parses(tmp_path):
    cfg = load_config(write(tmp_path, """\
[run]
sequence_root = /d
names = a
passes = preview
out = /tmp/out
seed = 11
workers = 4
strict_providers = true

[providers]
denseflow = pipe:/tmp/o:/tmp/i
instancesegmentation = python3 -m bridge

[thresholds]
presence = 0.4
grabcut_iterations = 3

[wonderland]
leaf_capacity = 50
count = 10
pool_manifest = /pool.tsv
allow_categories = city,forest
"""))
    assert cfg.passes == "preview"
    assert cfg.workers == 4
    assert cfg.strict_providers is True
    assert cfg.providers == {
        "DenseFlow": "pipe:/tmp/o:/tmp/i",
        "InstanceSegmentation": "python3 -m bridge",
    }
    assert cfg.thresholds["presence"] == 0.4
    assert cfg.thresholds["grabcut_iterations"] == 3
    assert cfg.thresholds["mismatch_iou"] == 0.5  # untouched default
    assert cfg.wonderland["leaf_capacity"] == 50
    assert cfg.wonderland["pool_manifest"] == "/pool.tsv"


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/does/not/exist.ini")


def test_missing_run_section(tmp_path):
    with pytest.raises(ConfigError, match="run"):
        load_config(write(tmp_path, "[thresholds]\npresence = 0.4\n"))


def test_missing_required_key(tmp_path):
    with pytest.raises(ConfigError, match="names"):
        load_config(write(tmp_path, "[run]\nsequence_root = /d\n"))


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ConfigError, match="mystery"):
        load_config(write(tmp_path, MINIMAL + "[mystery]\nx = 1\n"))


def test_unknown_run_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="speed"):
        load_config(write(tmp_path, MINIMAL + "speed = fast\n"))


def test_unknown_threshold_rejected(tmp_path):
    with pytest.raises(ConfigError, match="presense"):
        load_config(write(tmp_path, MINIMAL + "[thresholds]\npresense = 0.3\n"))


def test_unknown_capability_rejected(tmp_path):
    with pytest.raises(ConfigError, match="Telepathy|telepathy"):
        load_config(write(tmp_path, MINIMAL + "[providers]\ntelepathy = cmd\n"))


def test_bad_pass_name(tmp_path):
    with pytest.raises(ConfigError, match="passes"):
        load_config(write(tmp_path, MINIMAL + "passes = warp\n"))


def test_bad_types(tmp_path):
    with pytest.raises(ConfigError, match="integer"):
        load_config(write(tmp_path, MINIMAL + "seed = eleven\n"))
    with pytest.raises(ConfigError, match="boolean"):
        load_config(write(tmp_path, MINIMAL + "strict_providers = maybe\n"))
    with pytest.raises(ConfigError, match="number"):
        load_config(
            write(tmp_path, MINIMAL + "[thresholds]\npresence = high\n")
        )


def test_domain_checks(tmp_path):
    with pytest.raises(ConfigError, match="workers"):
        load_config(write(tmp_path, MINIMAL + "workers = 0\n"))
    with pytest.raises(ConfigError, match=r"\[0, 1\]"):
        load_config(write(tmp_path, MINIMAL + "[thresholds]\npresence = 1.5\n"))
    with pytest.raises(ConfigError, match="band"):
        load_config(
            write(tmp_path, MINIMAL + "[thresholds]\narea_update_band = 0.9\n")
        )
    with pytest.raises(ConfigError, match="ratio"):
        load_config(
            write(
                tmp_path,
                MINIMAL + "[thresholds]\narea_ratio_low = 3.0\n",
            )
        )


def test_empty_names_rejected(tmp_path):
    with pytest.raises(ConfigError, match="names"):
        load_config(write(tmp_path, "[run]\nsequence_root = /d\nnames = ,\n"))


def test_fingerprint_stable_and_sensitive(tmp_path):
    a = load_config(write(tmp_path, MINIMAL))
    b = load_config(write(tmp_path, MINIMAL))
    assert config_fingerprint(a) == config_fingerprint(b)
    c = load_config(write(tmp_path, MINIMAL + "seed = 5\n"))
    assert config_fingerprint(a) != config_fingerprint(c)


def test_fingerprint_ignores_worker_count(tmp_path):
    a = load_config(write(tmp_path, MINIMAL + "workers = 1\n"))
    b = load_config(write(tmp_path, MINIMAL + "workers = 8\n"))
    assert config_fingerprint(a) == config_fingerprint(b)
