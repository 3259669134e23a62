from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from uflow_extractors.encoders import StubEncoder, resize_screen
from uflow_extractors.extract import ExtractJob, extract_features
from uflow_extractors.manifest import ManifestError, load_manifest
from uflow_extractors.textprov import (
    HttpTextProvider,
    ProviderError,
    ToyTextProvider,
    embed_texts,
)

DATA = Path(__file__).parent / "data"


def _make_image(path: Path, seed: int, size=(120, 260)) -> None:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def _write_manifest(root: Path, episodes: list[dict]) -> Path:
    path = root / "manifest.json"
    path.write_text(json.dumps({"episodes": episodes}), encoding="utf-8")
    return path


@pytest.fixture()
def image_manifest(tmp_path):
    episodes = []
    seed = 0
    for i, n in enumerate((3, 4, 7)):
        screens = []
        for j in range(n):
            rel = f"shots/ep{i}/{j}.png"
            _make_image(tmp_path / rel, seed)
            seed += 1
            screens.append(rel)
        episodes.append(
            {"id": f"real-{i}", "description": f"recorded flow {i}", "screens": screens}
        )
    return _write_manifest(tmp_path, episodes), tmp_path


def test_extract_output_passes_primary_validation(image_manifest, tmp_path):
    manifest_path, _ = image_manifest
    out = tmp_path / "dataset"
    summary = extract_features(ExtractJob(str(manifest_path), str(out)))
    assert summary["episodes"] == 3 and summary["skips"] == []

    from uflow.dataio import read_dataset

    ds = read_dataset(out)
    assert [ep.id for ep in ds.episodes] == ["real-0", "real-1", "real-2"]
    assert [ep.n_screens for ep in ds.episodes] == [3, 4, 7]
    for ep in ds.episodes:
        assert ep.screens.shape[1] == 1024
        assert ep.text_embedding.shape == (1536,)
        assert abs(float(np.linalg.norm(ep.text_embedding)) - 1.0) < 1e-6
        assert len(ep.thumbnail_refs) == ep.n_screens


def test_seven_screen_episode_survives_then_filtered(image_manifest, tmp_path):
    manifest_path, _ = image_manifest
    out = tmp_path / "dataset"
    extract_features(ExtractJob(str(manifest_path), str(out)))

    from uflow.dataio import filter_episodes, read_dataset

    ds = read_dataset(out)
    assert any(ep.n_screens == 7 for ep in ds.episodes)
    kept = filter_episodes(ds.episodes, 3, 6)
    assert [ep.id for ep in kept] == ["real-0", "real-1"]


def test_extract_is_deterministic(image_manifest, tmp_path):
    manifest_path, _ = image_manifest
    extract_features(ExtractJob(str(manifest_path), str(tmp_path / "a")))
    extract_features(ExtractJob(str(manifest_path), str(tmp_path / "b")))
    for name in ("features.bin", "texts.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_undecodable_image_skips_episode(image_manifest, tmp_path):
    manifest_path, root = image_manifest
    (root / "shots/ep1/2.png").write_bytes(b"this is not an image")
    out = tmp_path / "dataset"
    summary = extract_features(ExtractJob(str(manifest_path), str(out)))
    assert summary["episodes"] == 2
    assert summary["skips"][0]["id"] == "real-1"
    assert "decode" in summary["skips"][0]["reason"]
    written = json.loads((out / "manifest.json").read_text())
    assert [s["id"] for s in written["skips"]] == ["real-1"]

    from uflow.dataio import read_dataset

    assert [ep.id for ep in read_dataset(out).episodes] == ["real-0", "real-2"]


def test_toy_provider_matches_primary_bit_for_bit():
    from uflow.dataio import toy_text_embed

    strings = json.loads((DATA / "toy_embed_strings.json").read_text(encoding="utf-8"))
    assert len(strings) == 100
    provider = ToyTextProvider()
    for text in strings:
        ours = provider.embed(text)
        theirs = toy_text_embed(text)
        assert ours.tobytes() == theirs.tobytes(), f"mismatch for {text!r}"


def test_embed_texts_rejects_empty_description():
    with pytest.raises(ProviderError):
        embed_texts(["fine", "   "], ToyTextProvider())


def test_http_provider_dim_mismatch(monkeypatch):
    import requests

    class FakeResponse:
        def raise_for_status(self):
            pass

        def json(self):
            return {"embedding": [0.0] * 10}

    monkeypatch.setattr(requests, "post", lambda *a, **kw: FakeResponse())
    with pytest.raises(ProviderError):
        HttpTextProvider("http://example.invalid").embed("x")


def test_manifest_validation(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "missing.json")
    bad = _write_manifest(tmp_path, [{"id": "a", "description": "", "screens": ["x.png"]}])
    with pytest.raises(ManifestError):
        load_manifest(bad)
    bad = _write_manifest(tmp_path, [{"id": "a", "description": "ok", "screens": ["x.png"]}])
    with pytest.raises(ManifestError):
        load_manifest(bad)  # image file does not exist


def test_resize_is_non_uniform(tmp_path):
    img = Image.new("RGB", (100, 400), (255, 0, 0))
    resized = resize_screen(img)
    assert resized.size == (224, 224)


def test_stub_encoder_shape_and_sensitivity(tmp_path):
    _make_image(tmp_path / "a.png", 1)
    _make_image(tmp_path / "b.png", 2)
    with Image.open(tmp_path / "a.png") as ia, Image.open(tmp_path / "b.png") as ib:
        feats = StubEncoder().encode([resize_screen(ia), resize_screen(ib)])
    assert feats.shape == (2, 1024)
    assert feats.dtype == np.float32
    assert np.abs(feats[0] - feats[1]).max() > 0.0
