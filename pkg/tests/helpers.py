"""Small builders shared by the CLI and acceptance tests."""
import hashlib
from pathlib import Path

from papreid.data_model import ManifestEntry, Tensor3, dump_keypoints, dump_manifest, write_tensor


def write_dataset(root, name, fmaps, keypoints, pids=None, cams=None, split="train"):
    """Write feature maps, one shared keypoints file and a manifest; returns the manifest path."""
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    kp_file = f"{name}_keypoints.jsonl"
    entries, kps = [], {}
    for i, (fmap, kp) in enumerate(zip(fmaps, keypoints)):
        image_id = f"{name}{i:04d}"
        rel = f"features/{image_id}.etns"
        (root / rel).write_bytes(write_tensor(Tensor3(fmap)))
        kps[image_id] = kp
        pid = -1 if pids is None else int(pids[i])
        cam = None if cams is None else int(cams[i])
        entries.append(ManifestEntry(image_id, pid, cam, split, rel, kp_file, None))
    (root / kp_file).write_text(dump_keypoints(kps))
    path = root / f"{name}.csv"
    path.write_text(dump_manifest(entries))
    return path


def tree_digest(directory):
    """Hash of every file (relative name and bytes) under a directory."""
    h = hashlib.sha256()
    for p in sorted(Path(directory).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(directory)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
