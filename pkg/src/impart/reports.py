"""TSV report files, poison manifests and config hashing.

Every artifact embeds the hash of the effective configuration that
produced it. Report files are TSV with '#'-prefixed header lines naming
the config hash and statistic definitions; writes are append-only in the
sense that an existing file is never overwritten, a versioned sibling
(name.2.tsv, name.3.tsv, ...) is created instead.
"""

import hashlib
import json
import os
from contextlib import contextmanager

POISON_MANIFEST_COLUMNS = [
    "index",
    "orig_label",
    "target_label",
    "success",
    "iters_used",
    "mean_e00",
    "psnr_db",
    "ssim",
    "l2",
    "linf",
    "trivial",
]


def config_hash(config: dict) -> str:
    """Stable short hash of a JSON-serializable configuration."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def versioned_path(path: str) -> str:
    """First nonexistent member of path, path.2.ext, path.3.ext, ..."""
    if not os.path.exists(path):
        return path
    base, ext = os.path.splitext(path)
    v = 2
    while os.path.exists(f"{base}.{v}{ext}"):
        v += 1
    return f"{base}.{v}{ext}"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        # enough digits that quality columns recompute to 1e-6 from disk
        return f"{v:.10g}"
    return str(v)


def write_tsv(path: str, columns: list[str], rows, header_lines=(),
              cfg_hash: str = "") -> str:
    """Write a TSV report; returns the actual (possibly versioned) path."""
    path = versioned_path(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        if cfg_hash:
            fh.write(f"# config_hash={cfg_hash}\n")
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            if isinstance(row, dict):
                fh.write("\t".join(_fmt(row[c]) for c in columns) + "\n")
            else:
                fh.write("\t".join(_fmt(v) for v in row) + "\n")
    return path


def read_tsv(path: str) -> tuple[list[dict], dict]:
    """Read a TSV report; returns (rows, attributes from '#' headers)."""
    attrs = {}
    rows = []
    with open(path) as fh:
        columns = None
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    attrs[k.strip()] = v.strip()
                continue
            if columns is None:
                columns = line.split("\t")
                continue
            rows.append(dict(zip(columns, line.split("\t"))))
    return rows, attrs


def write_poison_manifest(path: str, rows: list[dict], cfg_hash: str,
                          extra_header=()) -> str:
    header = [
        "poison manifest: one row per poisoned sample",
        "mean_e00 = per-pixel mean CIEDE2000 vs the clean source image",
        "trivial = 1 when the target label equals the original label",
        *extra_header,
    ]
    return write_tsv(path, POISON_MANIFEST_COLUMNS, rows, header, cfg_hash)


def read_poison_manifest(path: str) -> tuple[list[dict], dict]:
    rows, attrs = read_tsv(path)
    for r in rows:
        r["index"] = int(r["index"])
        r["orig_label"] = int(r["orig_label"])
        r["target_label"] = int(r["target_label"])
        r["success"] = r["success"] == "1"
        r["trivial"] = r["trivial"] == "1"
        r["iters_used"] = int(r["iters_used"])
        for k in ("mean_e00", "psnr_db", "ssim", "l2", "linf"):
            r[k] = float(r[k])
    return rows, attrs


@contextmanager
def output_lock(out_dir: str):
    """Exclusive lock file guarding an output directory."""
    os.makedirs(out_dir, exist_ok=True)
    lock = os.path.join(out_dir, ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"output directory is locked by another run: {lock}"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        os.unlink(lock)
