"""Model checkpoints: one JSON header line plus raw little-endian f64 blobs.

Layout::

    <json header>\n
    <params blob><exp_avg blob><exp_avg_sq blob>

The header documents the blob order, dtype and element counts, and carries a
SHA-256 of the concatenated blob bytes for integrity checking, along with
the predictor config, the noise schedule, the packing and the step counter,
so a checkpoint is self-contained for sampling and resuming.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .diffusion import NoiseSchedule
from .geometry import PackingResult
from .predictor import PredictorConfig, PredictorParams, _layout, attach_feature_buffers

__all__ = ["save_checkpoint", "load_checkpoint"]

_FORMAT = "gmdiff-checkpoint-v1"
_BLOBS = ("params", "exp_avg", "exp_avg_sq")


def save_checkpoint(
    path: str | Path,
    params: PredictorParams,
    sched: NoiseSchedule,
    pack: PackingResult,
    meta: dict | None = None,
) -> None:
    arrays = {
        "params": params.flat,
        "exp_avg": params.exp_avg,
        "exp_avg_sq": params.exp_avg_sq,
    }
    blob = b"".join(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes() for n in _BLOBS)
    header = {
        "format": _FORMAT,
        "byte_layout": [
            {"name": n, "dtype": "<f8", "count": int(arrays[n].size)} for n in _BLOBS
        ],
        "sha256": hashlib.sha256(blob).hexdigest(),
        "predictor_config": params.config.to_dict(),
        "schedule": sched.to_dict(),
        "packing": {
            "K": pack.num_categories,
            "d": pack.latent_dim,
            "means": [[float(x) for x in row] for row in pack.means],
            "min_pair_sq_dist": float(pack.min_pair_sq_dist),
            "sigma": float(pack.sigma),
            "seed": int(pack.seed),
        },
        "step": int(params.step),
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[PredictorParams, NoiseSchedule, PackingResult, dict]:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"corrupted checkpoint {path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"corrupted checkpoint {path}: unreadable header ({exc})") from None
    if header.get("format") != _FORMAT:
        raise ValueError(f"corrupted checkpoint {path}: unknown format {header.get('format')!r}")

    blob = raw[newline + 1 :]
    if hashlib.sha256(blob).hexdigest() != header["sha256"]:
        raise ValueError(f"corrupted checkpoint {path}: blob digest mismatch")

    arrays = {}
    offset = 0
    for entry in header["byte_layout"]:
        nbytes = entry["count"] * 8
        arrays[entry["name"]] = np.frombuffer(
            blob[offset : offset + nbytes], dtype="<f8"
        ).astype(np.float64)
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"corrupted checkpoint {path}: trailing bytes")

    config = PredictorConfig.from_dict(header["predictor_config"])
    offsets = {}
    total = 0
    for name, shape in _layout(config):
        offsets[name] = (total, shape)
        total += int(np.prod(shape))
    if total != arrays["params"].size:
        raise ValueError(f"corrupted checkpoint {path}: parameter count mismatch")

    params = PredictorParams(
        config,
        arrays["params"],
        offsets,
        arrays["exp_avg"],
        arrays["exp_avg_sq"],
        int(header["step"]),
    )
    sched = NoiseSchedule.from_dict(header["schedule"])
    pdoc = header["packing"]
    pack = PackingResult(
        means=np.asarray(pdoc["means"], dtype=np.float64),
        min_pair_sq_dist=float(pdoc["min_pair_sq_dist"]),
        sigma=float(pdoc["sigma"]),
        seed=int(pdoc["seed"]),
    )
    if config.needs_buffers:
        attach_feature_buffers(params, pack, sched)
    return params, sched, pack, header.get("meta", {})
