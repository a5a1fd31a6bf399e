"""CLI behavior: flags, exit codes, printed output."""

import json
from pathlib import Path

import numpy as np
import pytest

from videoseg.cli import main
from videoseg.seqio import save_image_png, save_labelmap_png

from synth import noise_texture, two_color_sequence, write_davis_sequence


@pytest.fixture(scope="module")
def seq_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliseqs")
    frames, annotation, _ = two_color_sequence(frames=4)
    write_davis_sequence(root, "drift", frames, annotation)
    return root


def make_labelmap_dir(path, count=3, offset=0):
    path.mkdir(parents=True, exist_ok=True)
    for t in range(count):
        labels = np.zeros((40, 50), dtype=np.int32)
        labels[10:20, (5 + offset) : (15 + offset)] = 1
        labels[25:32, 30:44] = 2
        save_labelmap_png(path / f"{t:05d}.png", labels)


def test_eval_from_means_prints_global(capsys):
    assert main(["eval", "--from-means", "72.4", "78.4"]) == 0
    assert capsys.readouterr().out.strip() == "75.4"


def test_eval_identical_dirs_scores_one(tmp_path, capsys):
    make_labelmap_dir(tmp_path / "pred")
    make_labelmap_dir(tmp_path / "gt")
    code = main(
        ["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"),
         "--json"]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["global_g"] == 1.0
    assert report["j"]["mean"] == 1.0
    assert report["f"]["mean"] == 1.0


def test_eval_percent_mode(tmp_path, capsys):
    make_labelmap_dir(tmp_path / "pred")
    make_labelmap_dir(tmp_path / "gt")
    main(
        ["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"),
         "--percent", "--json"]
    )
    assert json.loads(capsys.readouterr().out)["global_g"] == 100.0


def test_eval_missing_frame_names_it(tmp_path, capsys):
    make_labelmap_dir(tmp_path / "pred", count=2)
    make_labelmap_dir(tmp_path / "gt", count=3)
    code = main(
        ["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt")]
    )
    assert code == 4
    assert "00002.png" in capsys.readouterr().err


def test_eval_without_inputs_is_config_error(capsys):
    assert main(["eval"]) == 2
    assert "--pred" in capsys.readouterr().err


def test_run_preview_via_flags(seq_root, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(
        ["run", "--sequence-root", str(seq_root), "--name", "drift",
         "--passes", "preview", "--out", str(out), "--seed", "3"]
    )
    assert code == 0
    assert (out / "preview" / "drift" / "01" / "00000.png").is_file()
    assert (out / "final" / "drift" / "00003.png").is_file()
    assert not (out / "contextual").exists()
    assert "drift: 4 frames" in capsys.readouterr().out


def test_run_flag_overrides_config_file(seq_root, tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text(
        f"[run]\nsequence_root = {seq_root}\nnames = drift\npasses = guided\n"
    )
    out = tmp_path / "out"
    code = main(
        ["run", "--config", str(ini), "--passes", "preview", "--out", str(out)]
    )
    assert code == 0
    assert not (out / "contextual").exists()


def test_run_without_names_is_config_error(capsys):
    assert main(["run", "--sequence-root", "/tmp"]) == 2
    assert "name" in capsys.readouterr().err


def test_bad_provider_spec_is_config_error(seq_root, tmp_path, capsys):
    code = main(
        ["run", "--sequence-root", str(seq_root), "--name", "drift",
         "--out", str(tmp_path / "out"), "--providers", "DenseFlowNoEquals"]
    )
    assert code == 2
    assert "Capability=endpoint" in capsys.readouterr().err


def test_missing_sequence_is_config_error(tmp_path, capsys):
    code = main(
        ["run", "--sequence-root", str(tmp_path), "--name", "ghost",
         "--out", str(tmp_path / "out")]
    )
    assert code == 2


def test_unknown_pass_rejected_by_parser(seq_root):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--sequence-root", str(seq_root), "--name", "drift",
              "--passes", "warp"])
    assert exc.value.code == 2


def test_providers_check_unreachable_endpoint(capsys):
    assert main(["providers", "check", "--endpoint", "/no/such/bridge"]) == 3
    assert "FAIL handshake" in capsys.readouterr().out


def test_wonderland_cli_generates_pairs(seq_root, tmp_path, capsys):
    pool_dir = tmp_path / "pool"
    pool_dir.mkdir()
    rows = []
    for k in range(6):
        img = noise_texture(48, 64, seed=40 + k)
        save_image_png(pool_dir / f"bg{k}.png", img)
        rows.append(f"bg{k}.png\tfield")
    manifest = pool_dir / "pool.tsv"
    manifest.write_text("\n".join(rows) + "\n")

    out = tmp_path / "out"
    code = main(
        ["wonderland", "--sequence-root", str(seq_root), "--name", "drift",
         "--out", str(out), "--seed", "9", "--count", "4",
         "--pool-manifest", str(manifest)]
    )
    assert code == 0
    pair_dir = out / "wonderland" / "drift"
    images = sorted(p.name for p in pair_dir.glob("*.png"))
    assert images == sorted(
        [f"{i:06d}.png" for i in range(4)]
        + [f"{i:06d}_mask.png" for i in range(4)]
    )
    assert str(pair_dir) in capsys.readouterr().out

    code = main(
        ["wonderland", "--sequence-root", str(seq_root), "--name", "drift",
         "--out", str(tmp_path / "out2"), "--seed", "9", "--count", "4",
         "--pool-manifest", str(manifest)]
    )
    assert code == 0
    again = tmp_path / "out2" / "wonderland" / "drift"
    for name in ("000000.png", "000002_mask.png", "000003.json"):
        assert (pair_dir / name).read_bytes() == (again / name).read_bytes()


def test_wonderland_without_manifest_is_config_error(seq_root, tmp_path, capsys):
    code = main(
        ["wonderland", "--sequence-root", str(seq_root), "--name", "drift",
         "--out", str(tmp_path / "out")]
    )
    assert code == 2
    assert "manifest" in capsys.readouterr().err
