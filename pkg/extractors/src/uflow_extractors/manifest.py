"""Input manifest: which images make up which episode.

Schema (JSON):

    {
      "episodes": [
        {"id": "ep-1", "description": "add batteries to a cart",
         "screens": ["shots/a/0.png", "shots/a/1.png", ...]}
      ]
    }

Image paths are resolved relative to the manifest's directory unless
absolute.  Ids must be unique, descriptions non-empty, and every listed
image must exist on disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


class ManifestError(ValueError):
    pass


@dataclass
class InputEpisode:
    id: str
    description: str
    screens: list[Path]


def load_manifest(path: str | Path) -> list[InputEpisode]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: unreadable manifest: {exc}") from exc
    records = data.get("episodes")
    if not isinstance(records, list) or not records:
        raise ManifestError(f"{path}: 'episodes' must be a non-empty list")

    root = path.parent
    episodes = []
    seen = set()
    for i, rec in enumerate(records):
        eid = rec.get("id")
        if not eid or not isinstance(eid, str):
            raise ManifestError(f"{path}: episode {i}: missing id")
        if eid in seen:
            raise ManifestError(f"{path}: duplicate episode id {eid!r}")
        seen.add(eid)
        description = rec.get("description")
        if not description or not str(description).strip():
            raise ManifestError(f"{path}: episode {eid!r}: empty description")
        screens = rec.get("screens")
        if not isinstance(screens, list) or not screens:
            raise ManifestError(f"{path}: episode {eid!r}: no screens listed")
        paths = []
        for s in screens:
            p = Path(s)
            if not p.is_absolute():
                p = root / p
            if not p.is_file():
                raise ManifestError(f"{path}: episode {eid!r}: missing image {s}")
            paths.append(p)
        episodes.append(InputEpisode(id=eid, description=str(description), screens=paths))
    return episodes
