import json
import math

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from instarepaint.backends.base import BackendDescriptor, GenerationRequest
from instarepaint.backends.mocks import (
    LossyCodec,
    LossyCodecSpec,
    MockInpainter,
    MockNsfw,
    fnv1a64,
    mock_color,
    splitmix64,
)
from instarepaint.backends.remote import (
    RemoteClient,
    RemoteInpainter,
    RemoteNsfw,
    RemoteVqa,
    decode_raster,
    encode_raster,
)
from instarepaint.errors import BackendUnavailableError, ProtocolError, RemoteContentError
from instarepaint.metrics import psnr


def _request(base, mask, prompt="cup", seed=1, **ctx):
    h, w = base.shape[:2]
    return GenerationRequest(base, mask, prompt, np.zeros((h, w)), np.zeros((h, w)), seed, context=ctx)


def test_hash_reference_values():
    # published FNV-1a 64 test vectors
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    # splitmix64 first output for state 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_mock_inpainter_deterministic_and_local(rng):
    base = rng.integers(0, 256, (8, 9, 3), dtype=np.uint8)
    mask = np.zeros((8, 9), bool)
    mask[2:5, 3:6] = True
    inp = MockInpainter()
    a = inp.inpaint(_request(base, mask))
    assert np.array_equal(a, inp.inpaint(_request(base, mask)))
    assert np.array_equal(a[~mask], base[~mask])
    assert np.all(a[mask] == mock_color("cup", 1))
    assert not np.array_equal(a, inp.inpaint(_request(base, mask, seed=2)))
    assert np.array_equal(inp.inpaint(_request(base, np.zeros((8, 9), bool))), base)


@given(st.text(max_size=10), st.integers(0, 2**64 - 1))
def test_mock_inpainter_always_changes_masked_pixels(prompt, seed):
    color = mock_color(prompt, seed)
    base = np.broadcast_to(color, (3, 3, 3)).astype(np.uint8)
    mask = np.ones((3, 3), bool)
    out = MockInpainter().inpaint(_request(base, mask, prompt, seed))
    assert np.any(out[mask] != base[mask])


def test_textured_mode_varies():
    out = MockInpainter("textured").inpaint(_request(np.zeros((16, 16, 3), np.uint8), np.ones((16, 16), bool)))
    assert len(np.unique(out.reshape(-1, 3), axis=0)) == 2


def test_codec_properties():
    codec = LossyCodec()
    flat = np.full((16, 16, 3), 77, np.uint8)
    assert np.array_equal(codec.roundtrip(flat), flat)
    checker = ((np.indices((16, 16)).sum(0) % 2) * 255).astype(np.uint8)
    rt = codec.roundtrip(np.dstack([checker] * 3))
    assert not np.array_equal(rt[..., 0], checker)
    with pytest.raises(ValueError):
        LossyCodecSpec(down_factor=1)


def test_codec_unmasked_region_degrades():
    checker = ((np.indices((16, 16)).sum(0) % 2) * 255).astype(np.uint8)
    base = np.dstack([checker] * 3)
    mask = np.zeros((16, 16), bool)
    mask[4:8, 4:8] = True
    out = MockInpainter(codec=LossyCodec()).inpaint(_request(base, mask))
    assert np.any(out[~mask] != base[~mask])
    assert math.isfinite(psnr(base, out, ~mask))


def test_nsfw_script_band_and_threshold():
    f = MockNsfw(script=[False, False, True], after_script=False)
    assert [f.check(np.zeros((2, 2))).passed for _ in range(5)] == [False, False, True, False, False]
    assert f.calls == 5
    band = MockNsfw(trigger_band=(100, 150))
    assert not band.check(np.full((2, 2), 120)).passed
    assert band.check(np.full((2, 2), 10)).passed
    assert not MockNsfw(always_fail=True).check(np.zeros((1, 1))).passed


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_nsfw_threshold_monotone(score, t1, t2):
    lo, hi = sorted((t1, t2))
    # raising the threshold never turns a pass into a fail
    if MockNsfw.threshold(score, lo).passed:
        assert MockNsfw.threshold(score, hi).passed


@pytest.mark.parametrize("arr", [
    np.arange(24, dtype=np.uint8).reshape(2, 4, 3),
    np.array([[True, False], [False, True]]),
    np.arange(6, dtype=np.uint8).reshape(2, 3),
])
def test_raster_roundtrip_exact(arr):
    assert np.array_equal(decode_raster(encode_raster(arr)), arr)


def test_float_raster_roundtrip(rng):
    arr = rng.random((5, 7)) * 4 - 1
    np.testing.assert_allclose(decode_raster(encode_raster(arr)), arr, atol=5 / 65535)


def test_file_ref(tmp_path, rng):
    arr = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    desc = encode_raster(arr, shared_dir=tmp_path, inline_limit=10)
    assert desc["encoding"] == "file_ref"
    assert np.array_equal(decode_raster(desc), arr)
    (tmp_path / f"{desc['sha256']}.png").write_bytes(b"tampered")
    with pytest.raises(ProtocolError):
        decode_raster(desc)


def _client(handler, **kw):
    sleeps = []
    client = RemoteClient("http://backend", transport=httpx.MockTransport(handler), sleep=sleeps.append, **kw)
    return client, sleeps


def _echo(request):
    body = json.loads(request.content)
    assert body["schema"] == 1 and body["kind"] == "inpaint"
    assert request.url.path == "/v1/inpaint"
    base = decode_raster(body["images"]["base"])
    mask = decode_raster(body["images"]["mask"])
    base[mask] = 9
    return httpx.Response(200, json={"schema": 1, "ok": True, "payload": {"image": encode_raster(base)}})


def test_remote_inpaint_echo(rng):
    client, _ = _client(_echo)
    base = rng.integers(0, 256, (6, 6, 3), dtype=np.uint8)
    mask = np.eye(6, dtype=bool)
    out = RemoteInpainter(client).inpaint(_request(base, mask))
    assert np.all(out[mask] == 9) and np.array_equal(out[~mask], base[~mask])


def test_remote_retries_then_succeeds():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"schema": 1, "ok": True, "payload": {"answer": "skiing"}})

    client, sleeps = _client(handler)
    assert RemoteVqa(client).answer(np.zeros((2, 2, 3), np.uint8), "q") == "skiing"
    assert len(calls) == 3
    assert sleeps == pytest.approx([0.1, 0.2])
    assert [a for _, a, _ in client.attempt_log] == [1, 2, 3]


def test_remote_gives_up():
    def handler(request):
        raise httpx.ConnectError("refused")

    client, sleeps = _client(handler)
    with pytest.raises(BackendUnavailableError):
        RemoteVqa(client).answer(np.zeros((2, 2, 3), np.uint8), "q")
    assert len(client.attempt_log) == 3 and len(sleeps) == 2


@pytest.mark.parametrize("response", [
    httpx.Response(200, content=b"not json"),
    httpx.Response(200, json={"schema": 2, "ok": True, "payload": {}}),
    httpx.Response(200, json={"schema": 1, "ok": True, "payload": {}}),
    httpx.Response(500, json=[1, 2]),
])
def test_malformed_is_not_retried(response):
    calls = []

    def handler(request):
        calls.append(1)
        return response

    client, _ = _client(handler)
    with pytest.raises(ProtocolError):
        RemoteVqa(client).answer(np.zeros((2, 2, 3), np.uint8), "q")
    assert len(calls) == 1


def test_remote_error_envelope():
    def handler(request):
        return httpx.Response(400, json={"schema": 1, "ok": False, "error": {"type": "bad_prompt", "message": "no"}})

    client, _ = _client(handler)
    with pytest.raises(RemoteContentError) as exc:
        RemoteVqa(client).answer(np.zeros((2, 2, 3), np.uint8), "q")
    assert exc.value.error_type == "bad_prompt"


def test_remote_nsfw_failure_counts_as_fail():
    def handler(request):
        return httpx.Response(504)

    client, _ = _client(handler)
    nsfw = RemoteNsfw(client)
    result = nsfw.check(np.zeros((4, 4, 3), np.uint8))
    assert not result.passed and len(nsfw.failures) == 1


def test_descriptor_validation():
    with pytest.raises(ValueError):
        BackendDescriptor("inpaint", "x", max_in_flight=0)
    with pytest.raises(ValueError):
        BackendDescriptor("teleport", "x")
