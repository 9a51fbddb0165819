"""Provider-agnostic client for a remote multimodal annotation service, with
deterministic geometric fallback, content-addressed caching, and bounded
request parallelism.

The deterministic labeler is both the offline default and the oracle the
remote path falls back to, so the downstream tree/recipe machinery never
depends on a live model being reachable or reproducible.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from PIL import Image, ImageDraw

from . import features as feat
from .geometry import ControlPoint, PlacedClip


class AnnotatorError(RuntimeError):
    pass


class SchemaError(AnnotatorError):
    """Remote reply did not match the requested JSON schema."""

    def __init__(self, message, raw_text):
        super().__init__(f"{message}; raw reply: {raw_text[:200]!r}")
        self.raw_text = raw_text


class AnnotatorConfigError(ValueError):
    pass


MODES = ("deterministic", "remote", "remote-with-fallback")


@dataclass(frozen=True)
class AnnotatorConfig:
    mode: str = "deterministic"
    endpoint: str = ""
    model: str = ""
    credential_env: str = "OPCRECIPE_API_KEY"
    timeout_s: float = 30.0
    max_parallel: int = 4
    cache_dir: str = ""
    retries: int = 3
    backoff_s: float = 0.5

    def validate(self):
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}")
        if self.mode != "deterministic":
            if not self.endpoint:
                problems.append("remote modes require an endpoint")
            if not os.environ.get(self.credential_env):
                problems.append(f"remote modes require ${self.credential_env} to be set")
        if self.max_parallel < 1:
            problems.append("max_parallel must be >= 1")
        if problems:
            raise AnnotatorConfigError("; ".join(problems))
        return self


def load_prompt(name: str) -> str:
    return resources.files("opcrecipe").joinpath(f"prompts/{name}").read_text(encoding="utf-8")


# ---------------------------------------------------------------------------
# Point image rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RenderedPointImage:
    png_bytes: bytes
    clip_id: str
    point_id: int
    width_nm: int
    height_nm: int
    marker_px: tuple  # image-space pixel of the marked point


def render_point_image(placed: PlacedClip, pt: ControlPoint, canvas_px: int = 256) -> RenderedPointImage:
    """Polygons filled on a fixed canvas with the point marked red; the marker
    sits at the point's current (offset-applied) position."""
    clip = placed.clip
    scale = canvas_px / max(clip.width_nm, clip.height_nm)
    img = Image.new("RGB", (canvas_px, canvas_px), (255, 255, 255))
    draw = ImageDraw.Draw(img)

    def to_px(x, y):
        return (x * scale, (clip.height_nm - y) * scale)

    for poly in clip.polygons:
        draw.polygon([to_px(x, y) for x, y in poly.vertices], fill=(120, 120, 120))
    px, py = placed.point_position(pt)
    mx, my = to_px(px, py)
    mx, my = int(round(mx)), int(round(my))
    mx = min(max(mx, 1), canvas_px - 2)
    my = min(max(my, 1), canvas_px - 2)
    draw.rectangle([mx - 1, my - 1, mx + 1, my + 1], fill=(255, 0, 0))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return RenderedPointImage(buf.getvalue(), clip.id, pt.id,
                              clip.width_nm, clip.height_nm, (mx, my))


# ---------------------------------------------------------------------------
# Transport and cache
# ---------------------------------------------------------------------------


def _http_transport(cfg: AnnotatorConfig):
    import requests

    def send(payload: dict) -> dict:
        headers = {"Authorization": f"Bearer {os.environ.get(cfg.credential_env, '')}"}
        resp = requests.post(cfg.endpoint, json=payload, headers=headers,
                             timeout=cfg.timeout_s)
        resp.raise_for_status()
        return resp.json()

    return send


def _extract_content(response: dict) -> str:
    if "content" in response:
        return response["content"]
    try:
        return response["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise SchemaError("no content field in reply", json.dumps(response)) from None


class _Cache:
    """Content-addressed JSON cache; one file per key hash, atomic writes."""

    def __init__(self, directory):
        self.dir = Path(directory) if directory else None
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def key(self, *parts) -> str:
        h = hashlib.sha256()
        for p in parts:
            h.update(p if isinstance(p, bytes) else str(p).encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    def get(self, key: str):
        if not self.dir:
            return None
        path = self.dir / f"{key}.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put(self, key: str, obj: dict):
        if not self.dir:
            return
        path = self.dir / f"{key}.json"
        tmp = path.with_suffix(".tmp")
        with self._lock:
            tmp.write_text(json.dumps(obj, sort_keys=True), encoding="utf-8")
            os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------


class AnnotatorClient:
    """Feature mining and point labeling against any chat-completion-style
    endpoint, or fully offline in deterministic mode."""

    def __init__(self, config: AnnotatorConfig, transport=None, labeler=None):
        self.config = config.validate() if config.mode != "deterministic" else config
        self.transport = transport or (_http_transport(config)
                                       if config.mode != "deterministic" else None)
        self.labeler = labeler or feat.label_point
        self.cache = _Cache(config.cache_dir)
        self._sem = threading.BoundedSemaphore(config.max_parallel)
        self.network_calls = 0
        self.warnings = 0

    # -- plumbing ----------------------------------------------------------

    def _request(self, prompt: str, image: RenderedPointImage) -> str:
        payload = {
            "model": self.config.model,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image", "image_b64":
                        base64.b64encode(image.png_bytes).decode("ascii")},
                ],
            }],
        }
        last = None
        for attempt in range(self.config.retries):
            try:
                with self._sem:
                    self.network_calls += 1
                    response = self.transport(payload)
                return _extract_content(response)
            except SchemaError:
                raise
            except Exception as exc:  # transport/timeout: retry with backoff
                last = exc
                if attempt + 1 < self.config.retries:
                    time.sleep(self.config.backoff_s * (2 ** attempt))
        raise AnnotatorError(f"remote annotation failed after "
                             f"{self.config.retries} attempts: {last}")

    def _cached_content(self, kind: str, prompt: str, image: RenderedPointImage,
                        pool_names) -> str:
        key = self.cache.key(kind, image.png_bytes, ",".join(pool_names),
                             self.config.model)
        hit = self.cache.get(key)
        if hit is not None:
            return hit["content"]
        content = self._request(prompt, image)
        self.cache.put(key, {"content": content})
        return content

    # -- feature mining ------------------------------------------------------

    def mine_features(self, images, prompt_template: str = None) -> feat.FeaturePool:
        """Pool features mined per image, unioned and deduplicated keeping the
        first description; deterministic mode returns the builtin pool."""
        if self.config.mode == "deterministic":
            return feat.builtin_pool()
        if not images:
            raise AnnotatorError("feature mining needs at least one image")
        prompt = prompt_template or load_prompt("feature_mining_v1.txt")
        merged = {}
        for image in images:
            content = self._cached_content("mine", prompt, image, ())
            try:
                obj = json.loads(content)
                explain = obj["explain"]
                mined = obj["features"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise SchemaError("mining reply must carry features + explain maps",
                                  content) from None
            for name in mined:
                if name == "types":
                    continue
                desc = explain.get(name)
                if not isinstance(name, str) or not isinstance(desc, str):
                    self.warnings += 1
                    continue
                merged.setdefault(name, desc)
        defs = tuple(feat.FeatureDef(n, d) for n, d in merged.items())
        return feat.FeaturePool(defs).validate()

    # -- labeling ------------------------------------------------------------

    def annotate_point(self, placed: PlacedClip, pt: ControlPoint,
                       pool: feat.FeaturePool, index=None):
        """One boolean per pool feature plus provenance; cache hits bypass the
        network and missing replies are filled by the deterministic labeler."""
        if self.config.mode == "deterministic":
            vec = self.labeler(placed, pt, pool, index)
            return vec, {"source": "deterministic", "filled": []}
        image = render_point_image(placed, pt)
        names = pool.names()
        prompt = load_prompt("feature_labeling_v1.txt").replace(
            "{FEATURES}", "\n".join(f"- {f.name}: {f.description}" for f in pool.features))
        try:
            content = self._cached_content("label", prompt, image, names)
        except AnnotatorError:
            if self.config.mode != "remote-with-fallback":
                raise
            vec = self.labeler(placed, pt, pool, index)
            return vec, {"source": "deterministic-fallback", "filled": list(names)}
        try:
            obj = json.loads(content)
            remote = obj["features"]
            if not isinstance(remote, dict):
                raise KeyError("features")
        except (json.JSONDecodeError, KeyError, TypeError):
            raise SchemaError("labeling reply must carry a features map",
                              content) from None
        filled = [n for n in names if n not in remote]
        if filled:
            det = self.labeler(placed, pt, pool, index)
            values = {n: bool(remote.get(n, det.values[n])) for n in names}
            tag = det.type_tag
        else:
            values = {n: bool(remote[n]) for n in names}
            tag = remote.get("types") if remote.get("types") in ("CV", "CH", "H", "V") \
                else self.labeler(placed, pt, pool, index).type_tag
        vec = feat.FeatureVector(pt.id, pt.kind.value, tag, values)
        return vec, {"source": "remote", "filled": filled}

    def annotate_clip(self, placed: PlacedClip, pool: feat.FeaturePool):
        """Label every point of a clip; remote requests fan out up to
        max_parallel in flight."""
        index = feat.ClipIndex(placed)
        if self.config.mode == "deterministic":
            return [self.annotate_point(placed, pt, pool, index) for pt in placed.points]
        with ThreadPoolExecutor(max_workers=self.config.max_parallel) as pool_exec:
            futs = [pool_exec.submit(self.annotate_point, placed, pt, pool, index)
                    for pt in placed.points]
            return [f.result() for f in futs]
