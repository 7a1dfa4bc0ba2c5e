"""Command-line entry point: ``papreid <command> [flags]``.

A flat ``key=value`` config file (``--config``) supplies defaults; any key
can be overridden by the flag of the same name.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gradcheck
from .adaptation import (
    DEFAULT_MIN_PTS,
    DEFAULT_PERCENTILE,
    dbscan,
    estimate_eps,
    pseudo_label_manifest,
    symmetrize,
)
from .data_model import (
    DataError,
    LabelMap,
    decode_array,
    dump_manifest,
    encode_array,
    save_bytes,
    write_matrix,
)
from .heads import load_checkpoint
from .pipeline import Dataset, PoolMode, embed_dataset, parallel_map, pool_dataset
from .regions import RegionConfig
from .retrieval import distance_matrix, evaluate, part_similarity_matrix
from .seg_labels import DENSEPOSE_CLASSES, FUSED_CLASSES, fuse_densepose, fusion_table
from .synth import SynthSpec, generate

log = logging.getLogger("papreid")


class ConfigError(ValueError):
    pass


def read_config(path: str | Path) -> dict[str, str]:
    cfg = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off", ""):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _write_json(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        save_bytes(out, text.encode())
    else:
        sys.stdout.write(text)


def _load_heads(path: str | None):
    if not path:
        return None
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"cannot read head checkpoint {path}: {exc}") from None


def _region_cfg(args) -> RegionConfig:
    return RegionConfig(tau=args.tau, foot_ratio=args.foot_ratio)


def _embeddings(args, manifest: str):
    ds = Dataset(manifest)
    mode = PoolMode.parse(args.mode)
    feats = pool_dataset(ds, mode, _region_cfg(args), args.threads)
    heads = _load_heads(args.heads)
    if heads is not None and heads.num_parts != mode.parts:
        raise DataError(f"head checkpoint has {heads.num_parts} parts, mode {mode} pools {mode.parts}")
    return ds, embed_dataset(ds, feats, heads, args.threads)


# ---------------------------------------------------------------------------
# commands


def cmd_pool(args) -> int:
    if not args.out:
        raise ConfigError("pool needs --out")
    ds = Dataset(args.manifest)
    mode = PoolMode.parse(args.mode)
    cfg = _region_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if mode.needs_keypoints:
        ds.preload_keypoints()

    def work(entry):
        feats = ds.pool(entry, mode, cfg)
        fname = f"{entry.image_id}.etns"
        (out / fname).write_bytes(encode_array(feats.parts.astype(np.float32)))
        return {"image_id": entry.image_id, "file": fname, "visible": [bool(v) for v in feats.visible]}

    records = parallel_map(work, ds.entries, args.threads)
    index = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    (out / "parts.jsonl").write_text(index)
    log.info("pooled %d images (mode %s) into %s", len(records), mode, out)
    return 0


def cmd_eval(args) -> int:
    q_ds, queries = _embeddings(args, args.query)
    g_ds, gallery = _embeddings(args, args.gallery)
    dists = distance_matrix(queries, gallery, args.threads)
    if args.save_dist:
        save_bytes(args.save_dist, write_matrix(dists))
    result = evaluate(
        dists,
        [e.person_id for e in q_ds.entries],
        [e.camera_id for e in q_ds.entries],
        [e.person_id for e in g_ds.entries],
        [e.camera_id for e in g_ds.entries],
        single_shot=args.single_shot,
    )
    _write_json(result.report(), args.out)
    return 0


def cmd_cluster(args) -> int:
    if not args.out:
        raise ConfigError("cluster needs --out")
    ds, embs = _embeddings(args, args.manifest)
    dists = symmetrize(distance_matrix(embs, embs, args.threads))
    eps = args.eps if args.eps is not None else estimate_eps(dists, args.percentile)
    assignment = dbscan(dists, eps, args.min_pts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = pseudo_label_manifest(ds.entries, assignment)
    root = ds.root.resolve()

    def absolute(ref):
        return str(root / ref) if ref and not Path(ref).is_absolute() else ref

    # resource paths must stay valid relative to the new manifest's directory
    entries = [
        replace(
            e,
            feature_path=absolute(e.feature_path),
            keypoint_ref=absolute(e.keypoint_ref),
            labelmap_path=absolute(e.labelmap_path),
        )
        for e in entries
    ]
    (out / "pseudo_labels.csv").write_text(dump_manifest(entries))
    summary = {
        "num_clusters": assignment.num_clusters,
        "num_noise": assignment.num_noise,
        "eps_used": assignment.eps,
        "min_pts": assignment.min_pts,
    }
    _write_json(summary, str(out / "summary.json"))
    log.info("%d clusters, %d noise samples (eps %.6f)", summary["num_clusters"], summary["num_noise"], eps)
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(args.seed, args.trials)
    for r in results:
        log.info("%-26s %s  max rel err %.3e  (%d trials, %.2fs)",
                 r.name, "PASS" if r.passed else "FAIL", r.max_rel_err, r.trials, r.seconds)
    report = {
        "seed": args.seed,
        "tolerance": gradcheck.TOLERANCE,
        "step": gradcheck.STEP,
        "suites": [{k: v for k, v in r.as_dict().items() if k != "seconds"} for r in results],
        "passed": all(r.passed for r in results),
    }
    _write_json(report, args.out)
    return 0 if report["passed"] else 1


def _format_matrix(m: np.ndarray) -> str:
    head = "      " + "".join(f"{j + 1:>7d}" for j in range(m.shape[1]))
    rows = [f"{i + 1:>5d} " + "".join(f"{v:7.3f}" for v in row) for i, row in enumerate(m)]
    return "\n".join([head, *rows]) + "\n"


def cmd_simmatrix(args) -> int:
    ds = Dataset(args.manifest)
    mode = PoolMode.parse(args.mode)
    feats = pool_dataset(ds, mode, _region_cfg(args), args.threads)
    sim = part_similarity_matrix(feats, mode.parts)
    if args.out:
        save_bytes(args.out, write_matrix(sim))
    sys.stdout.write(_format_matrix(sim))
    return 0


def cmd_fuse_labels(args) -> int:
    if args.dump_table:
        rows = [{"from": i, "from_name": a, "to": j, "to_name": b} for i, a, j, b in fusion_table()]
        _write_json(rows, args.out if not args.manifest and not args.input else None)
        if not args.manifest and not args.input:
            return 0
    if not args.out:
        raise ConfigError("fuse-labels needs --out")
    if args.input:
        lm = LabelMap(decode_array(Path(args.input).read_bytes()), len(DENSEPOSE_CLASSES))
        save_bytes(args.out, encode_array(fuse_densepose(lm).labels))
        return 0
    if not args.manifest:
        raise ConfigError("fuse-labels needs --manifest, --input or --dump_table")
    ds = Dataset(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def work(entry):
        if not entry.labelmap_path:
            raise DataError(f"{entry.image_id}: no label map in manifest")
        raw = ds.resolve(entry.labelmap_path).read_bytes()
        fused = fuse_densepose(LabelMap(decode_array(raw), len(DENSEPOSE_CLASSES)))
        (out / f"{entry.image_id}.etns").write_bytes(encode_array(fused.labels))

    parallel_map(work, ds.entries, args.threads)
    log.info("fused %d label maps into %d classes", len(ds.entries), len(FUSED_CLASSES))
    return 0


def cmd_synth(args) -> int:
    if not args.out:
        raise ConfigError("synth needs --out")
    spec = SynthSpec.from_mapping(vars(args))
    summary = generate(spec, args.seed, args.out)
    log.info("wrote %d query, %d gallery, %d target images to %s",
             summary["num_query"], summary["num_gallery"], summary["num_target"], args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file supplying flag defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")


def _region_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", default="pap", help="pap, pap6, pcb:P or global")
    p.add_argument("--tau", type=float, default=RegionConfig.tau)
    p.add_argument("--foot_ratio", type=float, default=RegionConfig.foot_ratio)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="papreid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pool", help="pool part features for every manifest entry")
    _common(p)
    _region_flags(p)
    p.add_argument("--manifest", help="required (flag or config)")
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("eval", help="rank a gallery for each query and report CMC / mAP")
    _common(p)
    _region_flags(p)
    p.add_argument("--query", help="required (flag or config)")
    p.add_argument("--gallery", help="required (flag or config)")
    p.add_argument("--heads", help="head checkpoint directory; omit to compare pooled features")
    p.add_argument("--single_shot", type=_bool, default=False)
    p.add_argument("--save_dist", help="write the distance matrix as a 2-D ETNS file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cluster", help="DBSCAN pseudo labels for an unlabeled manifest")
    _common(p)
    _region_flags(p)
    p.add_argument("--manifest", help="required (flag or config)")
    p.add_argument("--heads")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--percentile", type=float, default=DEFAULT_PERCENTILE)
    p.add_argument("--min_pts", type=int, default=DEFAULT_MIN_PTS)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("gradcheck", help="finite-difference check of all loss gradients")
    _common(p)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("simmatrix", help="average part-feature cosine similarity matrix")
    _common(p)
    _region_flags(p)
    p.add_argument("--manifest", help="required (flag or config)")
    p.set_defaults(func=cmd_simmatrix)

    p = sub.add_parser("fuse-labels", help="fuse 15-class Densepose label maps into 8 classes")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--input", help="single label-map file instead of a manifest")
    p.add_argument("--dump_table", type=_bool, nargs="?", const=True, default=False)
    p.set_defaults(func=cmd_fuse_labels)

    p = sub.add_parser("synth", help="generate a synthetic dataset with planted identities")
    _common(p)
    defaults = SynthSpec()
    for name, value in vars(defaults).items():
        p.add_argument(f"--{name}", type=type(value), default=value)
    p.set_defaults(func=cmd_synth)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    cfg = read_config(args.config)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ConfigError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    cfg.pop("config", None)
    subparser.set_defaults(**cfg)
    return parser.parse_args(argv)


# flags that may come from either the command line or the config file
_REQUIRED = {"pool": ("manifest",), "eval": ("query", "gallery"), "cluster": ("manifest",),
             "simmatrix": ("manifest",)}


def _check_required(args: argparse.Namespace) -> None:
    missing = [f"--{name}" for name in _REQUIRED.get(args.command, ()) if not getattr(args, name, None)]
    if missing:
        raise ConfigError(f"{args.command} needs {', '.join(missing)}")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        _check_required(args)
        if getattr(args, "threads", 1) < 1:
            raise ConfigError("--threads must be at least 1")
        return args.func(args)
    except (DataError, ConfigError, ValueError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
