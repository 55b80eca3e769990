"""HTTP client for remotely served backends.

See ``docs/protocol.md`` for the wire format. In short: one endpoint per
kind (``/v1/inpaint``, ``/v1/depth``, ...), JSON request bodies of the form
``{"schema": 1, "kind": ..., "images": {...}, "fields": {...}}`` and JSON
responses ``{"schema": 1, "ok": true, "payload": {...}}`` or
``{"schema": 1, "ok": false, "error": {"type": ..., "message": ...}}``.
"""

import base64
import hashlib
import io
import logging
import threading
import time
from pathlib import Path

import httpx
import numpy as np
from PIL import Image

from ..errors import BackendError, BackendUnavailableError, ProtocolError, RemoteContentError
from .base import (
    BackendDescriptor,
    DepthEstimator,
    EdgeDetector,
    Inpainter,
    NsfwFilter,
    NsfwResult,
    SaliencyModel,
    VqaModel,
)

logger = logging.getLogger(__name__)

WIRE_SCHEMA = 1
INLINE_LIMIT = 1 << 20
RETRY_STATUS = frozenset({502, 503, 504})


def _png_bytes(array):
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(array)).save(buf, format="PNG")
    return buf.getvalue()


def encode_raster(array, shared_dir=None, inline_limit=INLINE_LIMIT):
    """Encode a raster for the wire.

    ``uint8`` rasters (RGB or single channel) and ``bool`` masks are sent as
    8-bit PNG; float rasters as 16-bit PNG scaled to the recorded
    ``[lo, hi]`` range. Encodings larger than ``inline_limit`` become file
    references under ``shared_dir`` when one is configured.
    """
    arr = np.asarray(array)
    desc = {}
    if arr.dtype == bool:
        data = _png_bytes(np.where(arr, 255, 0).astype(np.uint8))
        desc["dtype"] = "bool"
    elif arr.dtype == np.uint8:
        data = _png_bytes(arr)
        desc["dtype"] = "uint8"
    else:
        arr = arr.astype(np.float64)
        lo, hi = float(arr.min()), float(arr.max())
        scaled = np.zeros(arr.shape, np.uint16) if hi == lo else np.rint((arr - lo) / (hi - lo) * 65535)
        data = _png_bytes(scaled.astype(np.uint16))
        desc.update(dtype="float", range=[lo, hi])
    if shared_dir is not None and len(data) > inline_limit:
        digest = hashlib.sha256(data).hexdigest()
        path = Path(shared_dir) / f"{digest}.png"
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        desc.update(encoding="file_ref", sha256=digest, path=str(path))
    else:
        desc.update(encoding="png_base64", data=base64.b64encode(data).decode("ascii"))
    return desc


def decode_raster(desc):
    try:
        if desc["encoding"] == "png_base64":
            data = base64.b64decode(desc["data"], validate=True)
        elif desc["encoding"] == "file_ref":
            data = Path(desc["path"]).read_bytes()
            if hashlib.sha256(data).hexdigest() != desc["sha256"]:
                raise ProtocolError(f"file reference {desc['path']} fails its checksum")
        else:
            raise ProtocolError(f"unknown raster encoding {desc['encoding']!r}")
        with Image.open(io.BytesIO(data)) as im:
            arr = np.asarray(im).copy()
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise ProtocolError(f"undecodable raster: {exc}") from exc
    dtype = desc.get("dtype", "uint8")
    if dtype == "bool":
        return arr > 127
    if dtype == "float":
        lo, hi = desc["range"]
        return lo + arr.astype(np.float64) / 65535.0 * (hi - lo)
    return arr.astype(np.uint8)


class RemoteClient:
    """Sends requests to one backend server.

    Transport errors (connection failures, timeouts, HTTP 502/503/504) are
    retried up to ``retries`` times with exponential backoff; anything the
    server actually answered is final. Concurrent calls are capped at the
    descriptor's ``max_in_flight``.
    """

    def __init__(self, base_url, retries=3, backoff=0.1, timeout=60.0, transport=None,
                 sleep=time.sleep, shared_dir=None, inline_limit=INLINE_LIMIT):
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self.sleep = sleep
        self.shared_dir = shared_dir
        self.inline_limit = inline_limit
        self.attempt_log = []
        self._http = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport)
        self._slots = {}
        self._slots_lock = threading.Lock()

    def close(self):
        self._http.close()

    def _slot(self, descriptor):
        with self._slots_lock:
            if descriptor.name not in self._slots:
                self._slots[descriptor.name] = threading.BoundedSemaphore(descriptor.max_in_flight)
            return self._slots[descriptor.name]

    def remote_call(self, descriptor: BackendDescriptor, payload: dict) -> dict:
        body = {"schema": WIRE_SCHEMA, "kind": descriptor.kind, **payload}
        url = f"/v1/{descriptor.kind}"
        with self._slot(descriptor):
            last_exc = None
            for attempt in range(1, self.retries + 1):
                try:
                    response = self._http.post(url, json=body)
                except httpx.TransportError as exc:
                    last_exc = exc
                    outcome = f"transport error: {exc!r}"
                else:
                    if response.status_code in RETRY_STATUS:
                        last_exc = BackendError(f"HTTP {response.status_code}")
                        outcome = f"HTTP {response.status_code}"
                    else:
                        self.attempt_log.append((descriptor.kind, attempt, "ok"))
                        logger.debug("%s attempt %d ok", url, attempt)
                        return self._parse(response)
                self.attempt_log.append((descriptor.kind, attempt, outcome))
                logger.warning("%s attempt %d/%d failed: %s", url, attempt, self.retries, outcome)
                if attempt < self.retries:
                    self.sleep(self.backoff * 2 ** (attempt - 1))
            raise BackendUnavailableError(
                f"{descriptor.name} at {self.base_url}{url} unavailable after {self.retries} attempts"
            ) from last_exc

    @staticmethod
    def _parse(response):
        try:
            doc = response.json()
        except ValueError as exc:
            raise ProtocolError(f"HTTP {response.status_code}: body is not JSON") from exc
        if not isinstance(doc, dict) or doc.get("schema") != WIRE_SCHEMA or not isinstance(doc.get("ok"), bool):
            raise ProtocolError(f"HTTP {response.status_code}: malformed response envelope")
        if not doc["ok"]:
            err = doc.get("error")
            if not isinstance(err, dict):
                raise ProtocolError("error response without an error object")
            raise RemoteContentError(str(err.get("message", "")), err.get("type"))
        payload = doc.get("payload")
        if not isinstance(payload, dict):
            raise ProtocolError("response payload is not an object")
        return payload

    def encode(self, array):
        return encode_raster(array, self.shared_dir, self.inline_limit)


def _require(payload, key):
    if key not in payload:
        raise ProtocolError(f"response payload lacks '{key}'")
    return payload[key]


class _RemoteBackend:
    kind = None

    def __init__(self, client: RemoteClient, name=None, max_in_flight=1, native_resolution=None):
        self.client = client
        self.descriptor = BackendDescriptor(
            self.kind, name or f"remote-{self.kind}", deterministic=False,
            max_in_flight=max_in_flight, native_resolution=native_resolution,
        )


class RemoteInpainter(_RemoteBackend, Inpainter):
    kind = "inpaint"

    def inpaint(self, request):
        c = self.client
        payload = c.remote_call(self.descriptor, {
            "images": {
                "base": c.encode(request.base_image),
                "mask": c.encode(np.asarray(request.mask, dtype=bool)),
                "depth": c.encode(np.asarray(request.depth_control, dtype=np.float64)),
                "edge": c.encode(np.asarray(request.edge_control, dtype=np.float64)),
            },
            "fields": {
                "prompt": request.prompt_text,
                "seed": int(request.seed),
                "negative_prompt": request.negative_hint,
            },
        })
        out = decode_raster(_require(payload, "image"))
        if out.shape[:2] != request.size:
            raise ProtocolError(f"inpaint returned {out.shape[:2]}, expected {request.size}")
        return out


class RemoteDepth(_RemoteBackend, DepthEstimator):
    kind = "depth"

    def __init__(self, client, larger_is_farther=True, **kw):
        super().__init__(client, **kw)
        self.larger_is_farther = larger_is_farther

    def estimate(self, image):
        payload = self.client.remote_call(self.descriptor, {"images": {"image": self.client.encode(image)}, "fields": {}})
        return decode_raster(_require(payload, "map"))


class RemoteEdge(_RemoteBackend, EdgeDetector):
    kind = "edge"

    def detect(self, image):
        payload = self.client.remote_call(self.descriptor, {"images": {"image": self.client.encode(image)}, "fields": {}})
        return decode_raster(_require(payload, "map"))


class RemoteVqa(_RemoteBackend, VqaModel):
    kind = "vqa"

    def answer(self, image, question):
        payload = self.client.remote_call(
            self.descriptor, {"images": {"image": self.client.encode(image)}, "fields": {"question": question}}
        )
        answer = _require(payload, "answer")
        if not isinstance(answer, str):
            raise ProtocolError("vqa answer is not a string")
        return answer


class RemoteNsfw(_RemoteBackend, NsfwFilter):
    """Remote safety filter; any failure to get a verdict counts as a fail."""

    kind = "nsfw"

    def __init__(self, client, **kw):
        super().__init__(client, **kw)
        self.failures = []

    def check(self, region):
        try:
            payload = self.client.remote_call(
                self.descriptor, {"images": {"image": self.client.encode(region)}, "fields": {}}
            )
            return NsfwResult(bool(_require(payload, "passed")), float(payload.get("score", 0.0)))
        except BackendError as exc:
            self.failures.append(str(exc))
            logger.warning("nsfw check failed, treating as fail: %s", exc)
            return NsfwResult(False, 1.0)


class RemoteSaliency(_RemoteBackend, SaliencyModel):
    kind = "saliency"

    def predict(self, image, hint_mask=None):
        images = {"image": self.client.encode(image)}
        if hint_mask is not None:
            images["hint_mask"] = self.client.encode(np.asarray(hint_mask, dtype=bool))
        payload = self.client.remote_call(self.descriptor, {"images": images, "fields": {}})
        out = decode_raster(_require(payload, "map"))
        if out.dtype == bool:
            out = np.where(out, 255, 0).astype(np.uint8)
        elif out.dtype != np.uint8:
            out = np.clip(np.rint(out * 255 if out.max() <= 1.0 else out), 0, 255).astype(np.uint8)
        return out


REMOTE_CLASSES = {
    "inpaint": RemoteInpainter,
    "depth": RemoteDepth,
    "edge": RemoteEdge,
    "vqa": RemoteVqa,
    "nsfw": RemoteNsfw,
    "saliency": RemoteSaliency,
}
