"""The extraction job: images -> resized screens -> features -> dataset dir.

Episodes with undecodable images are skipped (with the reason logged and
recorded in the output manifest's ``skips`` list) rather than failing the
whole batch.  Thumbnail refs in the output point back at the source images,
relative to the manifest directory, so the retrieval service can serve them.

AITW-style raw captures are not parsed here; to ingest them, render each
step's screenshot to an image file and list the files per episode in the
input manifest (goal text becomes the description).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .encoders import get_encoder, resize_screen
from .manifest import load_manifest
from .textprov import embed_texts, get_text_provider
from .writer import write_dataset_dir

log = logging.getLogger(__name__)


@dataclass
class ExtractJob:
    manifest_path: str
    out_dir: str
    encoder: str = "stub"
    text_provider: str = "toy"
    provider_url: str | None = None


def extract_features(job: ExtractJob) -> dict:
    """Run the extraction; returns {"episodes": n, "skips": [...]}."""
    episodes = load_manifest(job.manifest_path)
    encoder = get_encoder(job.encoder)
    provider = get_text_provider(job.text_provider, job.provider_url)
    manifest_root = Path(job.manifest_path).parent

    records, features, skips = [], [], []
    for ep in episodes:
        images = []
        failure = None
        for path in ep.screens:
            try:
                with Image.open(path) as img:
                    images.append(resize_screen(img))
            except (UnidentifiedImageError, OSError) as exc:
                failure = f"cannot decode {path.name}: {exc}"
                break
        if failure is not None:
            log.warning("skipping episode %s: %s", ep.id, failure)
            skips.append({"id": ep.id, "reason": failure})
            continue
        features.append(encoder.encode(images))
        thumbs = []
        for p in ep.screens:
            try:
                thumbs.append(str(p.relative_to(manifest_root)))
            except ValueError:
                thumbs.append(str(p))
        records.append(
            {"id": ep.id, "description": ep.description, "thumbnails": thumbs}
        )

    if not records:
        raise RuntimeError("no episodes survived extraction")
    texts = embed_texts([r["description"] for r in records], provider)
    meta = {
        "source": "extracted",
        "encoder": encoder.name,
        "text_provider": provider.name,
        "input_manifest": str(job.manifest_path),
    }
    write_dataset_dir(job.out_dir, records, features, texts, meta, skips=skips)
    return {"episodes": len(records), "skips": skips, "out": str(job.out_dir)}
