"""Acceptance suite: one check per criterion, each reported as a PASS/FAIL line.

Run under pytest (lines appear in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import tree_digest  # noqa: E402
from oracles import brute_force_dbscan, brute_force_eval, literal_qg_distance  # noqa: E402
from papreid import gradcheck  # noqa: E402
from papreid.adaptation import dbscan  # noqa: E402
from papreid.cli import main as cli_main  # noqa: E402
from papreid.data_model import LabelMap, Tensor3  # noqa: E402
from papreid.heads import HeadStack, TrainSchedule, id_loss_and_grads, train_toy  # noqa: E402
from papreid.losses import pcb_id_loss, ps_loss_balanced, ps_loss_simple, visibility_id_loss  # noqa: E402
from papreid.pipeline import Dataset, PoolMode, embed_dataset, pool_dataset  # noqa: E402
from papreid.pooling import PartFeatureSet, pap_pool, pcb_pool  # noqa: E402
from papreid.regions import RegionConfig, pap_regions  # noqa: E402
from papreid.retrieval import EmbeddingSet, cos_dist, distance_matrix, evaluate, query_gallery_distance  # noqa: E402
from papreid.synth import SynthSpec, generate, stripe_aligned_keypoints  # noqa: E402
from heads_fixture import separable_two_ids  # noqa: E402

RESULTS = {}


def check_gradients():
    t0 = time.perf_counter()
    suites = gradcheck.run_all(seed=0, trials=100)
    secs = time.perf_counter() - t0
    worst = max(s.max_rel_err for s in suites)
    ok = all(s.passed and s.trials >= 100 for s in suites) and secs < 60
    return ok, f"{len(suites)} suites x 100 trials, max rel err {worst:.2e}, {secs:.1f}s"


def check_distance_reductions():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        q = EmbeddingSet(rng.normal(size=(9, 16)), [True] * 9)
        g = EmbeddingSet(rng.normal(size=(9, 16)), [True] * 9)
        mean = np.mean([cos_dist(a, b) for a, b in zip(q.parts, g.parts)])
        worst = max(worst, abs(query_gallery_distance(q, g) - mean))
    e0 = np.array([[1.0, 0.0]] * 3)
    q = EmbeddingSet(np.array([[0.8, 0.6], [0.6, 0.8], [0.1, math.sqrt(0.99)]]), [True, True, False])
    masked = query_gallery_distance(q, EmbeddingSet(e0, [True] * 3))
    ok = worst < 1e-6 and f"{masked:.6f}" == "0.300000"
    return ok, f"all-visible max |diff| {worst:.1e}, masked example {masked:.6f}"


def check_id_loss_equivalence():
    rng = np.random.default_rng(1)
    exact = all(
        visibility_id_loss(x, [True] * len(x)) == pcb_id_loss(x)
        for x in (rng.exponential(1.0, size=int(rng.integers(1, 12))) for _ in range(1000))
    )
    stack = HeadStack.init(9, 16, 5, embed_dim=32, seed=1)
    zero = True
    for _ in range(20):
        vis = rng.random(9) > 0.4
        parts = np.abs(rng.normal(size=(9, 16)))
        parts[~vis] = 0
        res = id_loss_and_grads(stack, PartFeatureSet(parts, vis), int(rng.integers(5)))
        for p in np.flatnonzero(~vis):
            zero &= all(not np.any(g) for g in res.param_grads[4 * p : 4 * p + 4])
    return exact and zero, f"1000 bit-exact: {exact}, invisible grads all zero: {zero}"


def check_balance():
    labels = np.zeros((10, 10), dtype=np.uint8)
    labels[3, 7] = 1
    z = np.zeros((2, 10, 10))
    z[1, 3, 7] = -1.5  # single class-1 pixel: loss a
    z[0][labels == 0] = 2.0  # class-0 pixels: loss b each
    a = math.log1p(math.exp(1.5))
    b = math.log1p(math.exp(-2.0))
    lm = LabelMap(labels, 2)
    bal = ps_loss_balanced(z, lm)[0]
    simple = ps_loss_simple(z, lm)[0]
    err = max(abs(bal - (a + b) / 2), abs(simple - (a + 99 * b) / 100))
    return err < 1e-9, f"balanced {bal:.9f}, simple {simple:.9f}, max closed-form err {err:.1e}"


def check_pap6_pcb():
    rng = np.random.default_rng(2)
    cfg = RegionConfig(foot_ratio=math.inf)
    same = 0
    for _ in range(100):
        H = int(rng.integers(6, 49))
        fmap = Tensor3(rng.normal(size=(int(rng.integers(1, 9)), H, int(rng.integers(1, 9)))).astype(np.float32))
        bands = pap_regions(stripe_aligned_keypoints(H), H, cfg)[:6]
        a, b = pap_pool(fmap, bands), pcb_pool(fmap, 6)
        same += a.parts.tobytes() == b.parts.tobytes() and bool(a.visible.all())
    return same == 100, f"{same}/100 feature maps identical"


def _synthetic_retrieval(noise, seed, tmp, occlusion=0.1):
    spec = SynthSpec(num_ids=50, images_per_id=4, noise=noise, occlusion=occlusion, target_ids=1)
    generate(spec, seed, tmp)
    from papreid.heads import load_checkpoint

    heads = load_checkpoint(Path(tmp) / "heads")
    out = []
    for name in ("query", "gallery"):
        ds = Dataset(Path(tmp) / f"{name}.csv")
        feats = pool_dataset(ds, PoolMode.parse("pap"), RegionConfig())
        out.append((ds, embed_dataset(ds, feats, heads)))
    (qd, qe), (gd, ge) = out
    D = distance_matrix(qe, ge)
    labels = (
        [e.person_id for e in qd.entries],
        [e.camera_id for e in qd.entries],
        [e.person_id for e in gd.entries],
        [e.camera_id for e in gd.entries],
    )
    return D, labels


def check_retrieval_oracle():
    worst = 0.0
    with tempfile.TemporaryDirectory() as tmp:
        for seed, noise in ((0, 0.3), (1, 0.6), (2, 1.0)):
            D, labels = _synthetic_retrieval(noise, seed, Path(tmp) / f"n{seed}")
            r = evaluate(D, *labels)
            cmc, mAP, _ = brute_force_eval(D.tolist(), *[list(x) for x in labels])
            worst = max(worst, abs(r.mAP - mAP), float(np.max(np.abs(r.cmc - np.array(cmc)))))
        # noise-free: no additive noise, no keypoint jitter, no occluded feet
        D, labels = _synthetic_retrieval(0.0, 3, Path(tmp) / "clean", occlusion=0.0)
        clean = evaluate(D, *labels)
    ok = worst < 1e-9 and clean.rank(1) == 1.0 and clean.mAP == 1.0
    return ok, f"oracle max |diff| {worst:.1e}; noise 0: rank1 {clean.rank(1):.3f}, mAP {clean.mAP:.3f}"


def check_dbscan():
    rng = np.random.default_rng(3)
    agree = 0
    for _ in range(500):
        n = int(rng.integers(1, 51))
        pts = rng.random((n, 2))
        d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        eps, min_pts = float(rng.uniform(0.02, 0.3)), int(rng.integers(1, 6))
        agree += dbscan(d, eps, min_pts).labels.tolist() == brute_force_dbscan(d.tolist(), eps, min_pts)
    blobs = np.full((10, 10), 1.0)
    blobs[:5, :5] = blobs[5:, 5:] = 0.1
    np.fill_diagonal(blobs, 0)
    two = dbscan(blobs, 0.3, 3)
    ok = agree == 500 and two.num_clusters == 2 and two.num_noise == 0
    return ok, f"{agree}/500 match brute force; two blobs: {two.num_clusters} clusters, {two.num_noise} noise"


def check_toy_training():
    data = separable_two_ids()
    stack = HeadStack.init(9, data[0][0].parts.shape[1], 2, embed_dim=256, seed=0)
    log = train_toy(data, stack, TrainSchedule(lr=0.02, epochs=200))
    init_gap = abs(log.epochs[0].loss_per_visible_part - math.log(2))
    ok = log.final.accuracy >= 0.99 and log.final.steps <= 200 and init_gap < 1e-3
    first = next((e.steps for e in log.epochs + [log.final] if e.accuracy >= 0.99), None)
    return ok, (f"accuracy {log.final.accuracy:.3f} after {log.final.steps} steps (>=0.99 from step {first}); "
                f"initial loss/part off ln 2 by {init_gap:.1e}")


def check_throughput():
    rng = np.random.default_rng(4)

    def sets(n):
        parts = rng.normal(size=(n, 9, 256))
        vis = rng.random((n, 9)) > 0.2
        vis[:, 8] = True
        return [EmbeddingSet(p, v) for p, v in zip(parts, vis)]

    qs, gs = sets(2000), sets(2000)
    distance_matrix(qs[:64], gs[:64])
    t0 = time.perf_counter()
    one = distance_matrix(qs, gs, threads=1)
    t1 = time.perf_counter() - t0
    t0 = time.perf_counter()
    four = distance_matrix(qs, gs, threads=4)
    t4 = time.perf_counter() - t0
    same = one.tobytes() == four.tobytes()
    speedup = t1 / t4
    ok = t1 < 5 and speedup >= 3 and same
    return ok, (f"1 thread {t1:.2f}s, 4 threads {t4:.2f}s, speedup {speedup:.2f}x, "
                f"bit-identical {same}, cpus {os.cpu_count()}")


def check_determinism():
    commands = {
        "synth": lambda d, out, t: ["synth", "--num_ids", "8", "--target_ids", "4", "--out", out],
        "pool": lambda d, out, t: ["pool", "--manifest", f"{d}/gallery.csv", "--out", out],
        "eval": lambda d, out, t: ["eval", "--query", f"{d}/query.csv", "--gallery", f"{d}/gallery.csv",
                                   "--heads", f"{d}/heads", "--save_dist", f"{out}/d.etns", "--out", f"{out}/m.json"],
        "cluster": lambda d, out, t: ["cluster", "--manifest", f"{d}/target.csv", "--heads", f"{d}/heads",
                                      "--percentile", "5", "--min_pts", "2", "--out", out],
        "gradcheck": lambda d, out, t: ["gradcheck", "--trials", "10", "--out", f"{out}/g.json"],
        "simmatrix": lambda d, out, t: ["simmatrix", "--manifest", f"{d}/gallery.csv", "--out", f"{out}/s.etns"],
        "fuse-labels": lambda d, out, t: ["fuse-labels", "--manifest", f"{d}/gallery.csv", "--out", out],
    }
    bad = []
    with tempfile.TemporaryDirectory() as tmp:
        data = f"{tmp}/data"
        cli_main(["synth", "--num_ids", "8", "--target_ids", "4", "--seed", "5", "--out", data])
        for name, build in commands.items():
            digests = set()
            for run, threads in enumerate((1, 4, 1, 3)):
                out = f"{tmp}/{name}{run}"
                Path(out).mkdir()
                code = cli_main(build(data, out, threads) + ["--seed", "5", "--threads", str(threads)])
                digests.add((code, tree_digest(out)))
            if len(digests) != 1 or next(iter(digests))[0] != 0:
                bad.append(name)
    return not bad, f"{len(commands)} commands x 4 runs (threads 1,4,1,3); differing: {bad or 'none'}"


CRITERIA = [
    (1, "gradient suite", check_gradients),
    (2, "distance reductions", check_distance_reductions),
    (3, "identity loss equivalence", check_id_loss_equivalence),
    (4, "segmentation balance property", check_balance),
    (5, "six-part keypoint pooling equals stripes", check_pap6_pcb),
    (6, "retrieval oracle", check_retrieval_oracle),
    (7, "DBSCAN oracle", check_dbscan),
    (8, "toy training", check_toy_training),
    (9, "throughput", check_throughput),
    (10, "determinism", check_determinism),
]


def run(number, title, fn):
    try:
        ok, detail = fn()
    except Exception as exc:  # report, then let pytest see the failure
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[number] = line
    return ok, line


@pytest.mark.parametrize("number, title, fn", CRITERIA, ids=[f"c{n}" for n, _, _ in CRITERIA])
def test_acceptance(number, title, fn):
    ok, line = run(number, title, fn)
    print(line)
    assert ok, line


if __name__ == "__main__":
    results = [run(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
