import base64
import json
import math
import threading
import time

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fixture_text
from siteinspect.errors import DecodeError, EmptyInputError, ProviderError, ProviderTimeoutError
from siteinspect.providers import (
    EvidenceItem,
    PatchMatrix,
    ProviderConfig,
    ReportPrompt,
    StubProvider,
    caption_image,
    embed_page,
    embed_query_tokens,
    embed_text,
    generate_report,
    tokenize,
    transcribe_audio,
)
from siteinspect.providers.http import HttpProvider
from siteinspect.providers.media import make_png, make_wav

SCAFFOLD_CAPTION = (
    "Time: 02/02/2025 8:00 a.m.\nLocation: 12 York St, Sydney NSW 2000\n"
    "The image shows a construction site with two workers on scaffolding."
)


def test_tokenize_lowercases_and_splits_on_punctuation():
    assert tokenize("  Construction   SAFETY ") == ["construction", "safety"]
    assert tokenize("12 York St., Sydney") == ["12", "york", "st", "sydney"]
    assert tokenize("hard-hat under_score") == ["hard", "hat", "under", "score"]
    assert tokenize("the hard hat", stop_words=["The"]) == ["hard", "hat"]


class TestProviderConfig:
    def test_defaults_valid(self):
        cfg = ProviderConfig(endpoint_url="http://x", api_key_ref="MY_KEY", model_id="m")
        assert cfg.max_concurrent_requests >= 1

    @pytest.mark.parametrize(
        "kw",
        [
            {"timeout": 0},
            {"max_concurrent_requests": 0},
            {"max_retries": -1},
            {"api_key_ref": "sk-abc123/secret"},
            {"endpoint_url": ""},
        ],
    )
    def test_rejects_invalid(self, kw):
        base = {"endpoint_url": "http://x", "model_id": "m"}
        base.update(kw)
        with pytest.raises(ValueError):
            ProviderConfig(**base)

    def test_stub_needs_no_endpoint(self):
        assert ProviderConfig.stub().kind == "stub"


class TestCaption:
    def test_scaffold_image_mentions_scaffold(self, stub):
        img = make_png(64, 48, {"Description": SCAFFOLD_CAPTION})
        text = caption_image(img, stub)
        assert "workers" in text and "scaffold" in text

    def test_deterministic(self, stub):
        img = make_png(40, 30, seed=3)
        assert caption_image(img, stub) == caption_image(img, StubProvider())
        assert caption_image(img, stub).strip()

    @pytest.mark.parametrize("data", [b"", b"GIF89a....", b"\x89PNG\r\n\x1a\nbroken"])
    def test_bad_image(self, stub, data):
        with pytest.raises(DecodeError):
            caption_image(data, stub)

    def test_jpeg_accepted(self, stub):
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.new("RGB", (20, 20), (200, 10, 10)).save(buf, format="JPEG", comment=b"Time: 01/01/2025 9:00 AM")
        assert caption_image(buf.getvalue(), stub).startswith("Time:")


class TestTranscribe:
    def test_sample_transcript(self, stub):
        transcript = fixture_text("transcript_sample.txt")
        wav = make_wav(transcript, seconds=0.5)
        out = transcribe_audio(wav, stub)
        assert out.startswith("Time: 02/02/2025 8:00 a.m.")
        assert out == transcript

    def test_deterministic(self, stub):
        wav = make_wav(None, seconds=0.3)
        assert transcribe_audio(wav, stub) == transcribe_audio(wav, StubProvider())
        assert transcribe_audio(wav, stub).strip()

    def test_truncated(self, stub):
        wav = make_wav("hello", seconds=0.5)
        with pytest.raises(DecodeError):
            transcribe_audio(wav[: len(wav) // 2], stub)

    @pytest.mark.parametrize("data", [b"", b"RIFF\x00\x00", b"OggS0000"])
    def test_corrupt(self, stub, data):
        with pytest.raises(DecodeError):
            transcribe_audio(data, stub)


class TestEmbedText:
    def test_unit_norm(self, stub):
        e = embed_text("12 York St, Sydney", stub)
        assert abs(np.linalg.norm(e.values) - 1) < 1e-6
        assert e.dim == 128 and len(e.values) == e.dim

    def test_deterministic(self, stub):
        assert embed_text("a b c", stub) == embed_text("a b c", StubProvider())

    def test_abbreviation_closer_than_other_street(self, stub):
        a = embed_text("12 York St Sydney", stub).values
        b = embed_text("12 York Street, Sydney", stub).values
        c = embed_text("45 George St", stub).values
        # frozen from an independent re-implementation of the token-hash scheme
        assert float(a @ b) == pytest.approx(0.7197930663, abs=1e-6)
        assert float(a @ c) == pytest.approx(0.3516089118, abs=1e-6)

    def test_empty(self, stub):
        with pytest.raises(EmptyInputError):
            embed_text("   ", stub)

    @settings(max_examples=50, deadline=None)
    @given(st.text(min_size=1).filter(lambda s: s.strip()))
    def test_unit_norm_property(self, text):
        e = embed_text(text, StubProvider())
        assert np.all(np.isfinite(e.values))
        assert abs(np.linalg.norm(e.values) - 1) < 1e-6


class TestEmbedPage:
    @pytest.mark.parametrize("w,h,n", [(32, 32, 4), (16, 16, 1), (17, 16, 2), (33, 17, 6), (1, 1, 1)])
    def test_grid_rule(self, stub, w, h, n):
        pm = embed_page("p", make_png(w, h), stub)
        assert len(pm) == n and pm.dim == 128
        assert np.allclose(np.linalg.norm(pm.patches.astype(np.float64), axis=1), 1, atol=1e-6)

    def test_deterministic(self, stub):
        img = make_png(48, 40, {"page_text": "toe boards"}, seed=9)
        assert embed_page("p", img, stub) == embed_page("p", img, StubProvider())

    def test_page_text_planted_in_leading_cells(self, stub):
        img = make_png(64, 64, {"page_text": "Toe boards, toe BOARDS"})
        pm = embed_page("85", img, stub)
        q = embed_query_tokens("toe boards", stub)
        assert float(pm.patches[0] @ q[0].values) == pytest.approx(1.0, abs=1e-6)
        assert float(pm.patches[1] @ q[1].values) == pytest.approx(1.0, abs=1e-6)

    def test_black_page(self, stub):
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.new("RGB", (32, 16)).save(buf, format="PNG")
        pm = embed_page("black", buf.getvalue(), stub)
        assert len(pm) == 2

    def test_bad_image(self, stub):
        with pytest.raises(DecodeError):
            embed_page("x", b"nope", stub)

    def test_patch_matrix_invariants(self):
        with pytest.raises(ValueError):
            PatchMatrix("x", np.zeros((0, 128), dtype=np.float32))
        with pytest.raises(ValueError):
            PatchMatrix("x", np.full((1, 128), 0.5, dtype=np.float32))


class TestQueryTokens:
    def test_two_tokens(self, stub):
        vecs = embed_query_tokens("construction safety", stub)
        assert len(vecs) == 2 and all(v.dim == 128 for v in vecs)

    def test_single(self, stub):
        assert len(embed_query_tokens("scaffold", stub)) == 1

    def test_normalised_query_same_tokens(self, stub):
        a = embed_query_tokens("construction safety", stub)
        b = embed_query_tokens("  Construction   SAFETY ", stub)
        assert a == b

    def test_order_preserved(self, stub):
        a = embed_query_tokens("safety construction", stub)
        b = embed_query_tokens("construction safety", stub)
        assert a[0] == b[1] and a[1] == b[0]

    def test_empty(self, stub):
        with pytest.raises(EmptyInputError):
            embed_query_tokens(" ,, ", stub)


def _prompt(evidence=()):
    return ReportPrompt(
        rendered="prompt",
        time="02/02/2025 08:00 AM",
        location="12 York St, Sydney NSW 2000",
        caption="Two workers on scaffolding. Neither wore high-visibility vests.",
        evidence=tuple(EvidenceItem(p) for p in evidence),
    )


class TestGenerateReport:
    def test_cites_every_page(self, stub):
        text = generate_report(_prompt(["56", "83"]), stub)
        assert "page 56" in text and "page 83" in text
        assert text.startswith("Time: 02/02/2025 08:00 AM\nLocation: 12 York St")
        assert "Neither wore high-visibility vests." in text

    def test_no_evidence(self, stub):
        text = generate_report(_prompt(), stub)
        assert "page" not in text.lower()
        assert "Regulatory Support: None" in text

    def test_empty_output_rejected(self):
        class Silent(StubProvider):
            def generate_report(self, prompt):
                return "  "

        with pytest.raises(ProviderError):
            generate_report(_prompt(), Silent())


# --- HTTP client -------------------------------------------------------------


def _http(handler, **kw):
    cfg = ProviderConfig(endpoint_url="http://provider.test/v1", model_id="m1", **kw)
    delays = []
    prov = HttpProvider(cfg, transport=httpx.MockTransport(handler), sleep=delays.append)
    return prov, delays


def _ok(output):
    return httpx.Response(200, json={"output": output})


class TestHttpProvider:
    def test_wire_format(self, monkeypatch):
        monkeypatch.setenv("TEST_PROVIDER_KEY", "sekrit")
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("authorization")
            seen["body"] = json.loads(request.content)
            return _ok("a caption")

        prov, _ = _http(handler, api_key_ref="TEST_PROVIDER_KEY")
        img = make_png(8, 8)
        assert caption_image(img, prov) == "a caption"
        assert seen["auth"] == "Bearer sekrit"
        assert seen["body"]["model_id"] == "m1"
        assert seen["body"]["capability"] == "caption_image"
        assert base64.b64decode(seen["body"]["payload"]["image_b64"]) == img

    def test_embeddings_normalised(self):
        prov, _ = _http(lambda r: _ok([3.0, 4.0]))
        e = embed_text("x", prov)
        assert np.allclose(e.values, [0.6, 0.8])

    @pytest.mark.parametrize("max_retries", [0, 1, 3])
    def test_fails_after_exactly_max_retries_plus_one(self, max_retries):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(503)

        prov, delays = _http(handler, max_retries=max_retries)
        with pytest.raises(ProviderError) as ei:
            prov.caption_image(b"x")
        assert len(calls) == max_retries + 1
        assert ei.value.attempts == max_retries + 1 and ei.value.status == 503
        assert delays == [0.5 * 2**i for i in range(max_retries)]

    def test_transient_failures_invisible(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(502) if len(calls) < 3 else _ok("fine")

        prov, delays = _http(handler, max_retries=2)
        assert prov.caption_image(b"x") == "fine"
        assert delays == [0.5, 1.0]

    def test_4xx_not_retried(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(401, json={"error": {"message": "bad key"}})

        prov, delays = _http(handler, max_retries=3)
        with pytest.raises(ProviderError) as ei:
            prov.caption_image(b"x")
        assert len(calls) == 1 and ei.value.status == 401 and delays == []

    def test_timeouts_retried_then_raise_timeout(self):
        calls = []

        def handler(request):
            calls.append(1)
            raise httpx.ReadTimeout("slow", request=request)

        prov, _ = _http(handler, max_retries=2)
        with pytest.raises(TimeoutError) as ei:
            prov.caption_image(b"x")
        assert isinstance(ei.value, ProviderTimeoutError)
        assert len(calls) == 3 and ei.value.attempts == 3

    def test_error_body(self):
        prov, _ = _http(lambda r: httpx.Response(200, json={"error": {"message": "model overloaded"}}))
        with pytest.raises(ProviderError, match="model overloaded"):
            prov.caption_image(b"x")

    def test_empty_string_is_not_success(self):
        prov, _ = _http(lambda r: _ok(""))
        with pytest.raises(ProviderError):
            caption_image(make_png(4, 4), prov)

    def test_missing_key_env(self, monkeypatch):
        monkeypatch.delenv("ABSENT_KEY_VAR", raising=False)
        prov, _ = _http(lambda r: _ok("x"), api_key_ref="ABSENT_KEY_VAR")
        with pytest.raises(ProviderError, match="ABSENT_KEY_VAR"):
            prov.caption_image(b"x")

    def test_page_dims_checked(self):
        prov, _ = _http(lambda r: _ok([[1.0, 0.0]]))
        with pytest.raises(ProviderError):
            embed_page("p", make_png(16, 16), prov)

    def test_query_token_count_checked(self):
        prov, _ = _http(lambda r: _ok([[1.0] * 128]))
        with pytest.raises(ProviderError):
            embed_query_tokens("two tokens", prov)

    def test_concurrency_cap(self):
        active, peak = [0], [0]
        lock = threading.Lock()

        def handler(request):
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            time.sleep(0.02)
            with lock:
                active[0] -= 1
            return _ok("ok")

        prov, _ = _http(handler, max_concurrent_requests=2)
        threads = [threading.Thread(target=prov.caption_image, args=(b"x",)) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert peak[0] <= 2

    def test_generate_sends_rendered_prompt_and_context(self):
        seen = {}

        def handler(request):
            seen.update(json.loads(request.content)["payload"])
            return _ok("report (page 7)")

        prov, _ = _http(handler)
        assert generate_report(_prompt(["7"]), prov) == "report (page 7)"
        assert seen["prompt"] == "prompt"
        assert seen["context"]["evidence"] == [{"page_id": "7", "excerpt": ""}]
