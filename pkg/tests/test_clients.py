import numpy as np
import pytest

from rym.assemble import AudioClip
from rym.clients import (
    EMBED_DIMS,
    HttpImageClient,
    HttpMusicClient,
    HttpRewriterClient,
    HttpSettings,
    ImageRequest,
    MockEmbeddingClient,
    MockImageClient,
    MockMusicClient,
    MusicRequest,
    ServiceRejectionError,
    TransportError,
    post_json,
)
from rym.prompts import PromptRewriteError
from rym.data import ValenceState


def melody(rate=16000, dur=0.5):
    t = np.arange(int(rate * dur)) / rate
    return AudioClip(samples=0.3 * np.sin(2 * np.pi * 220 * t), sample_rate_hz=rate)


def sketch(h=8, w=8):
    img = np.zeros((h, w, 3), np.uint8)
    img[..., 0] = np.linspace(0, 255, w, dtype=np.uint8)
    return img


class TestMockMusic:
    def test_length_contract(self):
        client = MockMusicClient()
        asset = client.generate(MusicRequest(prompt="calm sea", melody=melody(), duration_s=2.0))
        assert asset.kind == "audio"
        assert len(asset.payload) == 64_000
        assert asset.payload.sample_rate_hz == 32_000
        assert asset.provenance == "mock"

    def test_deterministic(self):
        client = MockMusicClient()
        req = MusicRequest(prompt="calm sea", melody=melody(), duration_s=1.0)
        a = client.generate(req)
        b = MockMusicClient().generate(req)
        np.testing.assert_array_equal(a.payload.samples, b.payload.samples)

    def test_idempotency_cache(self):
        client = MockMusicClient()
        req = MusicRequest(prompt="x", melody=melody(), duration_s=0.5)
        assert client.generate(req) is client.generate(req)

    def test_prompts_spectrally_distinct(self):
        client = MockMusicClient()
        a = client.generate(MusicRequest(prompt="joyful bright", melody=melody(), duration_s=1.0))
        b = client.generate(MusicRequest(prompt="gloomy heavy", melody=melody(), duration_s=1.0))
        fa = np.argmax(np.abs(np.fft.rfft(a.payload.samples)))
        fb = np.argmax(np.abs(np.fft.rfft(b.payload.samples)))
        assert fa != fb

    def test_invalid_request(self):
        with pytest.raises(ValueError, match="duration"):
            MusicRequest(prompt="x", melody=melody(), duration_s=0.0)
        with pytest.raises(ValueError, match="melody"):
            MusicRequest(prompt="x", melody=AudioClip(samples=np.zeros(0), sample_rate_hz=1.0), duration_s=1.0)


class TestMockImage:
    def test_zero_strength_identity(self):
        client = MockImageClient()
        img = sketch()
        frames = client.generate(ImageRequest(prompt="p", sketch=img, strength=0.0, frame_count=1))
        assert len(frames) == 1
        np.testing.assert_array_equal(frames[0].payload, img)

    def test_frame_count_and_shape(self):
        client = MockImageClient()
        frames = client.generate(ImageRequest(prompt="p", sketch=sketch(), strength=0.4, frame_count=5))
        assert len(frames) == 5
        for f in frames:
            assert f.payload.shape == (8, 8, 3)

    def test_full_strength_distinct_tints(self):
        client = MockImageClient()
        a = client.generate(ImageRequest(prompt="joyful", sketch=sketch(), strength=1.0))[0]
        b = client.generate(ImageRequest(prompt="gloomy", sketch=sketch(), strength=1.0))[0]
        assert len(np.unique(a.payload.reshape(-1, 3), axis=0)) == 1  # solid tint
        assert not np.array_equal(a.payload, b.payload)

    def test_strength_bounds(self):
        with pytest.raises(ValueError, match="strength"):
            ImageRequest(prompt="p", sketch=sketch(), strength=1.5)


class TestMockEmbedding:
    def test_deterministic_per_content(self):
        client = MockEmbeddingClient()
        a = client.embed("same text", "text", "text-image")
        b = client.embed("same text", "text", "text-image")
        np.testing.assert_array_equal(a.values, b.values)
        c = client.embed("other text", "text", "text-image")
        assert not np.array_equal(a.values, c.values)

    def test_unit_norm_and_dim(self):
        client = MockEmbeddingClient()
        for space in EMBED_DIMS:
            v = client.embed("hello", "text", space)
            assert v.values.size == EMBED_DIMS[space]
            assert np.linalg.norm(v.values) == pytest.approx(1.0, abs=1e-9)

    def test_kind_admissibility(self):
        client = MockEmbeddingClient()
        with pytest.raises(ValueError, match="not admissible"):
            client.embed(melody(), "audio", "text-image")
        with pytest.raises(ValueError, match="not admissible"):
            client.embed(sketch(), "image", "text-audio")
        client.embed(melody(), "audio", "text-audio")
        client.embed(sketch(), "image", "text-image")


class _FakeResponse:
    def __init__(self, status, body=None, text=""):
        self.status_code = status
        self._body = body or {}
        self.text = text

    def json(self):
        return self._body


class _FakeSession:
    """Scripted transport; records calls."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def post(self, url, json=None, timeout=None):
        self.calls.append((url, json, timeout))
        action = self.script.pop(0)
        if isinstance(action, Exception):
            raise action
        return action


class TestHttpRetries:
    def test_retries_then_succeeds(self):
        import requests

        session = _FakeSession(
            [requests.ConnectionError("boom"), _FakeResponse(500, text="oops"), _FakeResponse(200, {"ok": 1})]
        )
        sleeps = []
        out = post_json(
            HttpSettings(base_url="http://svc", max_retries=3, backoff_base_s=0.5),
            "/x",
            {"a": 1},
            sleep=sleeps.append,
            session=session,
        )
        assert out == {"ok": 1}
        assert len(session.calls) == 3
        assert sleeps == [0.5, 1.0]  # exponential backoff

    def test_retries_exhausted(self):
        import requests

        session = _FakeSession([requests.Timeout("t")] * 3)
        with pytest.raises(TransportError):
            post_json(
                HttpSettings(base_url="http://svc", max_retries=3),
                "/x",
                {},
                sleep=lambda s: None,
                session=session,
            )
        assert len(session.calls) == 3

    def test_rejection_not_retried(self):
        session = _FakeSession([_FakeResponse(422, text="bad prompt")])
        with pytest.raises(ServiceRejectionError, match="bad prompt"):
            post_json(
                HttpSettings(base_url="http://svc"),
                "/x",
                {},
                sleep=lambda s: None,
                session=session,
            )
        assert len(session.calls) == 1


class TestHttpClients:
    def test_music_roundtrip(self, monkeypatch):
        captured = {}

        def fake_post_json(settings, path, payload, sleep):
            captured["path"] = path
            captured["payload"] = payload
            from rym.clients import _wav_b64

            return {"audio_wav_b64": _wav_b64(melody())}

        import rym.clients as mod

        monkeypatch.setattr(mod, "post_json", fake_post_json)
        client = HttpMusicClient(HttpSettings(base_url="http://music"))
        asset = client.generate(MusicRequest(prompt="p", melody=melody(), duration_s=0.5))
        assert asset.provenance == "live"
        assert captured["path"] == "/generate"
        assert "idempotency_key" in captured["payload"]
        assert len(asset.payload) == len(melody())

    def test_image_roundtrip(self, monkeypatch):
        def fake_post_json(settings, path, payload, sleep):
            from rym.clients import _png_b64

            return {"frames_png_b64": [_png_b64(sketch()), _png_b64(sketch())]}

        import rym.clients as mod

        monkeypatch.setattr(mod, "post_json", fake_post_json)
        client = HttpImageClient(HttpSettings(base_url="http://img"))
        frames = client.generate(ImageRequest(prompt="p", sketch=sketch(), strength=0.3, frame_count=2))
        assert len(frames) == 2
        np.testing.assert_array_equal(frames[0].payload, sketch())

    def test_rewriter_maps_errors(self, monkeypatch):
        import rym.clients as mod

        def failing(settings, path, payload, sleep):
            raise TransportError("down")

        monkeypatch.setattr(mod, "post_json", failing)
        client = HttpRewriterClient(HttpSettings(base_url="http://llm"))
        with pytest.raises(PromptRewriteError) as err:
            client.rewrite("base", ["w"], ValenceState.POSITIVE, "instr")
        assert err.value.retryable
