"""Episode data model, dataset container format, and the synthetic generator.

A dataset directory holds three files:

* ``manifest.json`` -- dataset metadata plus one record per episode
  (id, description, screen count, archetype label, thumbnail refs, byte
  offsets into the binary files).
* ``features.bin``  -- per-screen feature vectors, all episodes concatenated
  in manifest order.
* ``texts.bin``     -- one text embedding per episode, in manifest order.

Both binary files share the same header layout: 4-byte magic ``UFD1``,
u32 little-endian version (currently 1), u32 little-endian vector
dimension, followed by a payload of little-endian 32-bit floats.  Feature
vectors are 1024-dimensional and text embeddings 1536-dimensional; both
dimensions are hard requirements validated at load time.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, NumericError, UsageError

FEATURE_DIM = 1024
TEXT_DIM = 1536

DATASET_MAGIC = b"UFD1"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sII")

MANIFEST_NAME = "manifest.json"
FEATURES_NAME = "features.bin"
TEXTS_NAME = "texts.bin"


def _as_float32(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{name} contains non-finite values")
    return out


@dataclass
class Episode:
    """One user flow: ordered per-screen feature vectors plus its description.

    ``screens`` has shape (n_screens, 1024) and ``text_embedding`` shape
    (1536,); both are finite float32.  ``archetype_label`` is only set by
    the synthetic generator and ``thumbnail_refs`` are opaque relative
    image paths (may be empty).
    """

    id: str
    description: str
    screens: np.ndarray
    text_embedding: np.ndarray
    archetype_label: str | None = None
    thumbnail_refs: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.id:
            raise UsageError("episode id must be a non-empty string")
        self.screens = _as_float32(self.screens, f"episode {self.id}: screens")
        if self.screens.ndim != 2 or self.screens.shape[0] < 1:
            raise DataFormatError(
                f"episode {self.id}: screens must be a non-empty 2-d array, "
                f"got shape {self.screens.shape}"
            )
        if self.screens.shape[1] != FEATURE_DIM:
            raise DataFormatError(
                f"episode {self.id}: feature dim must be {FEATURE_DIM}, "
                f"got {self.screens.shape[1]}"
            )
        self.text_embedding = _as_float32(
            self.text_embedding, f"episode {self.id}: text_embedding"
        )
        if self.text_embedding.shape != (TEXT_DIM,):
            raise DataFormatError(
                f"episode {self.id}: text embedding dim must be {TEXT_DIM}, "
                f"got shape {self.text_embedding.shape}"
            )
        self.thumbnail_refs = list(self.thumbnail_refs)

    @property
    def n_screens(self) -> int:
        return self.screens.shape[0]


@dataclass
class Dataset:
    """A collection of episodes with a split seed and free-form metadata."""

    episodes: list[Episode]
    split_seed: int = 0
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        ids = [ep.id for ep in self.episodes]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataFormatError(f"duplicate episode ids: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.episodes)

    def by_id(self, episode_id: str) -> Episode:
        for ep in self.episodes:
            if ep.id == episode_id:
                return ep
        raise KeyError(episode_id)


def filter_episodes(
    episodes: list[Episode], min_len: int, max_len: int
) -> list[Episode]:
    """Keep exactly the episodes with min_len <= n_screens <= max_len.

    Original order is preserved; an empty result is valid.
    """
    if min_len < 1:
        raise UsageError(f"min_len must be >= 1, got {min_len}")
    if max_len < min_len:
        raise UsageError(f"max_len ({max_len}) must be >= min_len ({min_len})")
    return [ep for ep in episodes if min_len <= ep.n_screens <= max_len]


def split(
    dataset: Dataset, train_fraction: float, seed: int
) -> tuple[list[Episode], list[Episode]]:
    """Deterministically partition episodes into train and validation lists.

    Uses a seeded Fisher-Yates shuffle of episode indices followed by a
    prefix cut at round(train_fraction * N).  Raises when the dataset
    cannot yield two non-empty splits (N < 2, or the rounded cut would
    leave one side empty).
    """
    if not 0.0 < train_fraction < 1.0:
        raise UsageError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset.episodes)
    if n < 2:
        raise DataFormatError(
            f"cannot form two non-empty splits from {n} episode(s)"
        )
    n_train = round(train_fraction * n)
    if n_train == 0 or n_train == n:
        raise DataFormatError(
            f"cannot form two non-empty splits: round({train_fraction} * {n}) "
            f"= {n_train}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n)
    train = [dataset.episodes[i] for i in order[:n_train]]
    val = [dataset.episodes[i] for i in order[n_train:]]
    return train, val


# --- toy text embedder ------------------------------------------------------

def toy_text_embed(text: str) -> np.ndarray:
    """Deterministic hash-bucket text embedder producing a 1536-d unit vector.

    Algorithm (the cross-implementation contract, bit-exact everywhere):

    1. Lowercase the input with ``str.lower`` and tokenize as maximal runs
       of Unicode alphanumerics, i.e. ``re.findall(r"[^\\W_]+", text.lower())``.
    2. For each token, take ``h = sha256(token.encode("utf-8"))``; the
       bucket is ``int.from_bytes(h[:8], "little") % 1536`` and the sign is
       +1 when ``h[8]`` is even, else -1.
    3. Accumulate signed counts per bucket in float64, L2-normalize in
       float64, and cast the result to float32.
    4. If there are no tokens the result is the fixed constant unit vector
       with 1.0 at index 0.
    """
    acc = np.zeros(TEXT_DIM, dtype=np.float64)
    tokens = re.findall(r"[^\W_]+", text.lower())
    if not tokens:
        out = np.zeros(TEXT_DIM, dtype=np.float32)
        out[0] = 1.0
        return out
    for token in tokens:
        h = hashlib.sha256(token.encode("utf-8")).digest()
        bucket = int.from_bytes(h[:8], "little") % TEXT_DIM
        sign = 1.0 if h[8] % 2 == 0 else -1.0
        acc[bucket] += sign
    norm = float(np.sqrt(np.dot(acc, acc)))
    if norm == 0.0:
        # Possible only if signed counts cancel in every bucket.
        out = np.zeros(TEXT_DIM, dtype=np.float32)
        out[0] = 1.0
        return out
    return (acc / norm).astype(np.float32)


# --- synthetic dataset ------------------------------------------------------

# Task-phrase templates for synthetic descriptions; the <noun> slot keeps
# text embeddings non-degenerate across archetypes.
DESCRIPTION_TEMPLATES = (
    "search for {noun}",
    "add {noun} to a cart",
    "check the price of {noun}",
    "open the settings for {noun}",
    "share {noun} with a friend",
    "browse reviews of {noun}",
    "track an order of {noun}",
    "compare two {noun} listings",
    "save {noun} to a wishlist",
    "remove {noun} from the cart",
    "filter results by {noun}",
    "sort listings by {noun}",
    "look up directions to {noun}",
    "book a reservation for {noun}",
    "cancel a subscription to {noun}",
    "rate a recent {noun} purchase",
    "report a problem with {noun}",
    "update the delivery address for {noun}",
    "apply a coupon to {noun}",
    "check availability of {noun}",
    "read the description of {noun}",
    "watch a demo of {noun}",
    "change between tabs for {noun}",
    "scroll to a product detail for {noun}",
    "check a search result for {noun}",
    "sign up for {noun} alerts",
    "verify the account for {noun}",
    "send a message about {noun}",
    "upload a photo of {noun}",
    "download the manual for {noun}",
    "schedule a pickup of {noun}",
    "renew the warranty on {noun}",
    "redeem points for {noun}",
    "follow the store selling {noun}",
    "turn on notifications for {noun}",
    "check out with {noun}",
)

DESCRIPTION_NOUNS = (
    "batteries",
    "headphones",
    "a phone case",
    "sneakers",
    "a coffee maker",
    "groceries",
    "a backpack",
    "sunscreen",
    "a desk lamp",
    "notebooks",
    "a water bottle",
    "chargers",
    "a keyboard",
    "succulents",
    "dog food",
    "a yoga mat",
    "tea",
    "a monitor",
    "socks",
    "paint",
    "a blender",
    "candles",
    "a router",
    "toothpaste",
    "a suitcase",
    "vitamins",
)


@dataclass
class SynthConfig:
    """Configuration for the deterministic synthetic dataset generator."""

    n_archetypes: int
    n_episodes: int
    noise_sigma: float
    seed: int
    min_len: int = 3
    max_len: int = 6

    def __post_init__(self):
        if self.n_archetypes < 1:
            raise UsageError(f"n_archetypes must be positive, got {self.n_archetypes}")
        if self.n_episodes < 1:
            raise UsageError(f"n_episodes must be positive, got {self.n_episodes}")
        if self.noise_sigma < 0:
            raise UsageError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 1 <= self.min_len <= self.max_len:
            raise UsageError(
                f"need 1 <= min_len <= max_len, got ({self.min_len}, {self.max_len})"
            )
        if self.seed < 0:
            raise UsageError(f"seed must be non-negative, got {self.seed}")


def synth_dataset(config: SynthConfig) -> Dataset:
    """Generate a deterministic synthetic dataset of archetype-derived episodes.

    Each archetype is a distinct description (template + noun) plus
    ``max_len`` L2-normalized prototype screen vectors.  Each episode picks
    an archetype and a length uniformly, takes the first ``len`` prototypes,
    and adds i.i.d. Gaussian noise (sigma = ``noise_sigma``) per coordinate.
    With sigma = 0, same-archetype episodes of equal length have bitwise
    identical screens.
    """
    k = config.n_archetypes
    if k < 2:
        raise UsageError(
            "n_archetypes must be >= 2 (contrastive batches degenerate otherwise)"
        )
    n_combos = len(DESCRIPTION_TEMPLATES) * len(DESCRIPTION_NOUNS)
    if k > n_combos:
        raise UsageError(
            f"n_archetypes ({k}) exceeds the {n_combos} distinct descriptions"
        )

    rng = np.random.Generator(np.random.PCG64(config.seed))

    combo_ids = rng.choice(n_combos, size=k, replace=False)
    descriptions = []
    for combo in combo_ids:
        template = DESCRIPTION_TEMPLATES[int(combo) // len(DESCRIPTION_NOUNS)]
        noun = DESCRIPTION_NOUNS[int(combo) % len(DESCRIPTION_NOUNS)]
        descriptions.append(template.format(noun=noun))
    text_embeddings = [toy_text_embed(d) for d in descriptions]

    prototypes = []
    for _ in range(k):
        protos = rng.standard_normal((config.max_len, FEATURE_DIM), dtype=np.float32)
        protos /= np.linalg.norm(protos, axis=1, keepdims=True).astype(np.float32)
        prototypes.append(protos)

    sigma = np.float32(config.noise_sigma)
    episodes = []
    for i in range(config.n_episodes):
        arch = int(rng.integers(0, k))
        length = int(rng.integers(config.min_len, config.max_len + 1))
        screens = prototypes[arch][:length]
        if config.noise_sigma > 0:
            noise = rng.standard_normal((length, FEATURE_DIM), dtype=np.float32)
            screens = screens + sigma * noise
        else:
            screens = screens.copy()
        episodes.append(
            Episode(
                id=f"ep-{i:05d}",
                description=descriptions[arch],
                screens=screens,
                text_embedding=text_embeddings[arch],
                archetype_label=f"arch-{arch:03d}",
            )
        )

    meta = {
        "source": "synthetic",
        "n_archetypes": str(config.n_archetypes),
        "n_episodes": str(config.n_episodes),
        "noise_sigma": str(config.noise_sigma),
        "seed": str(config.seed),
        "min_len": str(config.min_len),
        "max_len": str(config.max_len),
    }
    return Dataset(episodes=episodes, split_seed=config.seed, meta=meta)


# --- container format -------------------------------------------------------

def _write_vector_file(path: Path, dim: int, chunks: list[np.ndarray]) -> list[int]:
    """Write a UFD1 binary and return the byte offset of each chunk."""
    offsets = []
    with open(path, "wb") as f:
        f.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, dim))
        pos = _HEADER.size
        for chunk in chunks:
            offsets.append(pos)
            blob = np.ascontiguousarray(chunk, dtype="<f4").tobytes()
            f.write(blob)
            pos += len(blob)
    return offsets


def _read_vector_file(path: Path, expected_dim: int, n_expected: int) -> np.ndarray:
    """Read a UFD1 binary, validating magic/version/dim and payload size."""
    name = path.name
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"{name}: cannot read file: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise DataFormatError(
            f"{name}: truncated header, expected {_HEADER.size} bytes, "
            f"got {len(raw)}"
        )
    magic, version, dim = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise DataFormatError(
            f"{name}: bad magic {magic!r} (expected {DATASET_MAGIC!r})"
        )
    if version != DATASET_VERSION:
        raise DataFormatError(
            f"{name}: unsupported version {version} (expected {DATASET_VERSION})"
        )
    if dim != expected_dim:
        raise DataFormatError(
            f"{name}: vector dimension must be {expected_dim}, got {dim}"
        )
    expected_bytes = n_expected * dim * 4
    actual_bytes = len(raw) - _HEADER.size
    if actual_bytes != expected_bytes:
        raise DataFormatError(
            f"{name}: payload size mismatch, expected {expected_bytes} bytes "
            f"({n_expected} x {dim} float32), got {actual_bytes}"
        )
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(
        n_expected, dim
    )


def write_dataset(dataset: Dataset, directory: str | Path) -> None:
    """Serialize a dataset to a directory; the round trip is bit-exact."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    feature_chunks = [ep.screens for ep in dataset.episodes]
    text_chunks = [ep.text_embedding.reshape(1, TEXT_DIM) for ep in dataset.episodes]
    feature_offsets = _write_vector_file(
        directory / FEATURES_NAME, FEATURE_DIM, feature_chunks
    )
    text_offsets = _write_vector_file(directory / TEXTS_NAME, TEXT_DIM, text_chunks)

    records = []
    for ep, foff, toff in zip(dataset.episodes, feature_offsets, text_offsets):
        records.append(
            {
                "id": ep.id,
                "description": ep.description,
                "n_screens": ep.n_screens,
                "archetype_label": ep.archetype_label,
                "thumbnails": ep.thumbnail_refs,
                "features_offset": foff,
                "text_offset": toff,
            }
        )
    manifest = {
        "format": DATASET_MAGIC.decode("ascii"),
        "version": DATASET_VERSION,
        "feature_dim": FEATURE_DIM,
        "text_dim": TEXT_DIM,
        "split_seed": dataset.split_seed,
        "meta": dataset.meta,
        "episodes": records,
    }
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def read_dataset(directory: str | Path) -> Dataset:
    """Load a dataset directory, validating the container format strictly."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DataFormatError(f"{MANIFEST_NAME}: missing in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{MANIFEST_NAME}: unreadable: {exc}") from exc

    fmt = manifest.get("format")
    if fmt != DATASET_MAGIC.decode("ascii"):
        raise DataFormatError(
            f"{MANIFEST_NAME}: format must be {DATASET_MAGIC.decode()!r}, got {fmt!r}"
        )
    version = manifest.get("version")
    if version != DATASET_VERSION:
        raise DataFormatError(
            f"{MANIFEST_NAME}: unsupported version {version!r} "
            f"(expected {DATASET_VERSION})"
        )
    for key, want in (("feature_dim", FEATURE_DIM), ("text_dim", TEXT_DIM)):
        got = manifest.get(key)
        if got != want:
            raise DataFormatError(f"{MANIFEST_NAME}: {key} must be {want}, got {got!r}")
    records = manifest.get("episodes")
    if not isinstance(records, list):
        raise DataFormatError(f"{MANIFEST_NAME}: episodes must be a list")

    total_screens = 0
    for rec in records:
        n = rec.get("n_screens")
        if not isinstance(n, int) or n < 1:
            raise DataFormatError(
                f"{MANIFEST_NAME}: episode {rec.get('id')!r}: invalid n_screens {n!r}"
            )
        total_screens += n

    features = _read_vector_file(directory / FEATURES_NAME, FEATURE_DIM, total_screens)
    texts = _read_vector_file(directory / TEXTS_NAME, TEXT_DIM, len(records))

    episodes = []
    row = 0
    for i, rec in enumerate(records):
        n = rec["n_screens"]
        expected_foff = _HEADER.size + row * FEATURE_DIM * 4
        if rec.get("features_offset") != expected_foff:
            raise DataFormatError(
                f"{MANIFEST_NAME}: episode {rec.get('id')!r}: features_offset "
                f"{rec.get('features_offset')!r} does not match position "
                f"{expected_foff}"
            )
        expected_toff = _HEADER.size + i * TEXT_DIM * 4
        if rec.get("text_offset") != expected_toff:
            raise DataFormatError(
                f"{MANIFEST_NAME}: episode {rec.get('id')!r}: text_offset "
                f"{rec.get('text_offset')!r} does not match position {expected_toff}"
            )
        episodes.append(
            Episode(
                id=rec["id"],
                description=rec.get("description", ""),
                screens=features[row : row + n].copy(),
                text_embedding=texts[i].copy(),
                archetype_label=rec.get("archetype_label"),
                thumbnail_refs=rec.get("thumbnails") or [],
            )
        )
        row += n

    meta = manifest.get("meta") or {}
    return Dataset(
        episodes=episodes,
        split_seed=int(manifest.get("split_seed", 0)),
        meta={str(k): str(v) for k, v in meta.items()},
    )
