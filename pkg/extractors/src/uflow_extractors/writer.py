"""Standalone writer for the UFD1 dataset directory format.

Implements the documented container layout directly (magic ``UFD1``, u32
version 1, u32 dimension, little-endian f32 payload; manifest.json with
per-episode byte offsets) so extraction has no dependency on the consuming
library.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"UFD1"
VERSION = 1
FEATURE_DIM = 1024
TEXT_DIM = 1536
_HEADER = struct.Struct("<4sII")


def _write_blob(path: Path, dim: int, chunks: list[np.ndarray]) -> list[int]:
    offsets = []
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, dim))
        pos = _HEADER.size
        for chunk in chunks:
            offsets.append(pos)
            blob = np.ascontiguousarray(chunk, dtype="<f4").tobytes()
            f.write(blob)
            pos += len(blob)
    return offsets


def write_dataset_dir(
    out_dir: str | Path,
    records: list[dict],
    features: list[np.ndarray],
    texts: np.ndarray,
    meta: dict[str, str],
    skips: list[dict] | None = None,
    split_seed: int = 0,
) -> None:
    """records[i] needs id/description/thumbnails; features[i] is (n_i, 1024)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feature_offsets = _write_blob(out_dir / "features.bin", FEATURE_DIM, features)
    text_offsets = _write_blob(
        out_dir / "texts.bin", TEXT_DIM, [t.reshape(1, TEXT_DIM) for t in texts]
    )
    episodes = []
    for rec, feats, foff, toff in zip(records, features, feature_offsets, text_offsets):
        episodes.append(
            {
                "id": rec["id"],
                "description": rec["description"],
                "n_screens": int(feats.shape[0]),
                "archetype_label": rec.get("archetype_label"),
                "thumbnails": rec.get("thumbnails", []),
                "features_offset": foff,
                "text_offset": toff,
            }
        )
    manifest = {
        "format": MAGIC.decode("ascii"),
        "version": VERSION,
        "feature_dim": FEATURE_DIM,
        "text_dim": TEXT_DIM,
        "split_seed": split_seed,
        "meta": meta,
        "episodes": episodes,
        "skips": skips or [],
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
