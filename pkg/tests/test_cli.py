import json

import numpy as np
import pytest

from helpers import tree_digest, write_dataset
from papreid.cli import main
from papreid.data_model import read_matrix
from papreid.synth import canonical_keypoints, stripe_aligned_keypoints

SMALL = ["--num_ids", "6", "--images_per_id", "3", "--target_ids", "3", "--embed_dim", "16"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth") / "data"
    assert main(["synth", "--seed", "3", "--out", str(out), *SMALL]) == 0
    return out


def test_synth_deterministic(tmp_path, synth_dir):
    again = tmp_path / "again"
    assert main(["synth", "--seed", "3", "--out", str(again), *SMALL]) == 0
    assert tree_digest(again) == tree_digest(synth_dir)
    other = tmp_path / "other"
    main(["synth", "--seed", "4", "--out", str(other), *SMALL])
    assert tree_digest(other) != tree_digest(synth_dir)


def test_eval_single_pair(tmp_path, capsys):
    fmap = np.random.default_rng(0).random((4, 24, 8)).astype(np.float32)
    kp = [canonical_keypoints()]
    q = write_dataset(tmp_path, "q", [fmap], kp, [1], [1], "query")
    g = write_dataset(tmp_path, "g", [fmap], kp, [1], [2], "gallery")
    assert main(["eval", "--query", str(q), "--gallery", str(g)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["rank1"] == 1.0 and report["mAP"] == 1.0


def test_pap6_equals_pcb6(tmp_path):
    rng = np.random.default_rng(1)
    H = 24
    fmaps = [rng.normal(size=(5, H, 6)).astype(np.float32) for _ in range(10)]
    m = write_dataset(tmp_path, "a", fmaps, [stripe_aligned_keypoints(H)] * 10)
    assert main(["pool", "--manifest", str(m), "--mode", "pap6", "--foot_ratio", "inf", "--out", str(tmp_path / "pap")]) == 0
    assert main(["pool", "--manifest", str(m), "--mode", "pcb:6", "--out", str(tmp_path / "pcb")]) == 0
    for f in sorted((tmp_path / "pcb").glob("*.etns")):
        assert (tmp_path / "pap" / f.name).read_bytes() == f.read_bytes()


def test_pool_index(tmp_path, synth_dir):
    out = tmp_path / "pooled"
    assert main(["pool", "--manifest", str(synth_dir / "gallery.csv"), "--out", str(out)]) == 0
    rows = [json.loads(line) for line in (out / "parts.jsonl").read_text().splitlines()]
    assert rows and all(len(r["visible"]) == 9 for r in rows)
    assert read_matrix((out / rows[0]["file"]).read_bytes()).shape[0] == 9


def test_config_file_and_override(tmp_path, synth_dir, capsys):
    cfg = tmp_path / "eval.cfg"
    cfg.write_text(
        f"# eval defaults\nquery = {synth_dir / 'query.csv'}\ngallery = {synth_dir / 'gallery.csv'}\n"
        f"mode = pcb:6\nsave_dist = {tmp_path / 'cfg.etns'}\n"
    )
    assert main(["eval", "--config", str(cfg)]) == 0
    from_cfg = json.loads(capsys.readouterr().out)
    assert main(["eval", "--query", str(synth_dir / "query.csv"), "--gallery", str(synth_dir / "gallery.csv"),
                 "--mode", "pcb:6", "--save_dist", str(tmp_path / "flags.etns")]) == 0
    assert json.loads(capsys.readouterr().out) == from_cfg
    assert (tmp_path / "cfg.etns").read_bytes() == (tmp_path / "flags.etns").read_bytes()
    # a flag beats the config value
    assert main(["eval", "--config", str(cfg), "--mode", "global", "--save_dist", str(tmp_path / "g.etns")]) == 0
    assert read_matrix((tmp_path / "g.etns").read_bytes()).shape == read_matrix((tmp_path / "cfg.etns").read_bytes()).shape
    assert (tmp_path / "g.etns").read_bytes() != (tmp_path / "cfg.etns").read_bytes()
    capsys.readouterr()
    cfg.write_text("bogus = 1\n")
    assert main(["eval", "--config", str(cfg), "--query", "x", "--gallery", "y"]) == 2
    assert main(["eval", "--query", "x"]) == 2
    assert "--gallery" in capsys.readouterr().err


def test_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,pid\n")
    assert main(["pool", "--manifest", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ManifestError"
    feat = tmp_path / "features"
    feat.mkdir()
    (feat / "x.etns").write_bytes(b"NOPE")
    m = tmp_path / "m.csv"
    m.write_text("image_id,person_id,camera_id,split,feature,keypoints,labelmap\nx,,,train,features/x.etns,,\n")
    assert main(["pool", "--manifest", str(m), "--mode", "global", "--out", str(tmp_path / "o")]) == 2
    assert "BadMagic" in capsys.readouterr().err
    assert main(["pool", "--manifest", str(m), "--mode", "pcb:0", "--out", str(tmp_path / "o")]) == 2


def test_cluster_and_simmatrix(tmp_path, synth_dir, capsys):
    out = tmp_path / "cl"
    assert main(["cluster", "--manifest", str(synth_dir / "target.csv"), "--heads", str(synth_dir / "heads"),
                 "--percentile", "5", "--min_pts", "2", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"num_clusters", "num_noise", "eps_used", "min_pts"}
    assert summary["num_clusters"] >= 1
    assert main(["simmatrix", "--manifest", str(synth_dir / "gallery.csv"), "--out", str(tmp_path / "s.etns")]) == 0
    sim = read_matrix((tmp_path / "s.etns").read_bytes())
    assert sim.shape == (9, 9) and np.allclose(np.diag(sim), 1.0)


def test_gradcheck_command(tmp_path):
    out = tmp_path / "gc.json"
    assert main(["gradcheck", "--trials", "3", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"] and len(report["suites"]) == 4


def test_fuse_labels(tmp_path, synth_dir):
    assert main(["fuse-labels", "--manifest", str(synth_dir / "gallery.csv"), "--out", str(tmp_path / "f")]) == 0
    assert len(list((tmp_path / "f").glob("*.etns"))) > 0
    assert main(["fuse-labels", "--dump_table", "--out", str(tmp_path / "t.json")]) == 0
    assert len(json.loads((tmp_path / "t.json").read_text())) == 15


def test_thread_count_does_not_change_outputs(tmp_path, synth_dir):
    digests = []
    for threads in ("1", "3"):
        out = tmp_path / f"t{threads}"
        args = ["--threads", threads, "--seed", "0"]
        main(["pool", "--manifest", str(synth_dir / "gallery.csv"), "--out", str(out / "pool"), *args])
        main(["eval", "--query", str(synth_dir / "query.csv"), "--gallery", str(synth_dir / "gallery.csv"),
              "--heads", str(synth_dir / "heads"), "--save_dist", str(out / "d.etns"), "--out", str(out / "m.json"), *args])
        main(["cluster", "--manifest", str(synth_dir / "target.csv"), "--percentile", "5", "--min_pts", "2",
              "--out", str(out / "cl"), *args])
        digests.append(tree_digest(out))
    assert digests[0] == digests[1]
