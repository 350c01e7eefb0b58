"""Feature extraction backends and the on-disk embedding cache.

A backend supplies the four feature families the fusion network consumes:
global image/text embeddings (512-d each), one 4096-d vector per detected face
or object box, and one 768-d vector per detected image attribute.
"""

from __future__ import annotations

import hashlib
import importlib
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .container import RecordFile
from .types import MemeRecord

logger = logging.getLogger(__name__)

GLOBAL_DIM = 512
PROPOSAL_DIM = 4096
ATTRIBUTE_DIM = 768
CROP_SIZE = 224

Box = tuple[float, float, float, float]  # x0, y0, x1, y1 in pixels


class Capability(str, Enum):
    CLIP_IMAGE = "clip_image"
    CLIP_TEXT = "clip_text"
    FACE_DETECT = "face_detect"
    OBJECT_DETECT = "object_detect"
    ATTRIBUTE_DETECT = "attribute_detect"
    PROPOSAL_ENCODE = "proposal_encode"
    ATTRIBUTE_ENCODE = "attribute_encode"


ALL_CAPABILITIES = frozenset(Capability)


class MissingCapabilityError(RuntimeError):
    def __init__(self, missing: Sequence[Capability]) -> None:
        names = ", ".join(sorted(c.value for c in missing))
        super().__init__(f"backend lacks capabilities: {names}")
        self.missing = tuple(missing)


class BackendError(RuntimeError):
    def __init__(self, capability: Capability, record_id: str, cause: BaseException) -> None:
        super().__init__(f"{capability.value} failed on {record_id!r}: {cause}")
        self.capability = capability
        self.record_id = record_id


class BundleValidationError(ValueError):
    pass


class MissingEmbeddingsError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing embeddings"


@dataclass
class EmbeddingBundle:
    f_image: np.ndarray
    f_text: np.ndarray
    proposals: np.ndarray
    attributes: np.ndarray
    proposal_boxes: np.ndarray = field(default=None)  # type: ignore[assignment]
    attribute_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.f_image = np.asarray(self.f_image, dtype=np.float32).reshape(-1)
        self.f_text = np.asarray(self.f_text, dtype=np.float32).reshape(-1)
        self.proposals = np.asarray(self.proposals, dtype=np.float32).reshape(-1, PROPOSAL_DIM)
        self.attributes = np.asarray(self.attributes, dtype=np.float32).reshape(-1, ATTRIBUTE_DIM)
        if self.proposal_boxes is None:
            self.proposal_boxes = np.zeros((len(self.proposals), 4), dtype=np.float32)
        self.proposal_boxes = np.asarray(self.proposal_boxes, dtype=np.float32).reshape(-1, 4)
        self.attribute_names = tuple(self.attribute_names)
        if not self.attribute_names:
            self.attribute_names = tuple(f"attribute-{i}" for i in range(len(self.attributes)))

    @property
    def n_proposals(self) -> int:
        return self.proposals.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.attributes.shape[0]

    def validate(self) -> "EmbeddingBundle":
        problems = []
        if self.f_image.shape != (GLOBAL_DIM,):
            problems.append(f"f_image shape {self.f_image.shape}")
        if self.f_text.shape != (GLOBAL_DIM,):
            problems.append(f"f_text shape {self.f_text.shape}")
        if len(self.proposal_boxes) != self.n_proposals:
            problems.append("proposal_boxes count differs from proposals")
        if len(self.attribute_names) != self.n_attributes:
            problems.append("attribute_names count differs from attributes")
        for name in ("f_image", "f_text", "proposals", "attributes"):
            if not np.all(np.isfinite(getattr(self, name))):
                problems.append(f"{name} has non-finite entries")
        if problems:
            raise BundleValidationError("; ".join(problems))
        return self

    def equals(self, other: "EmbeddingBundle") -> bool:
        """Bitwise equality of every array plus attribute names."""
        return (
            self.attribute_names == other.attribute_names
            and all(
                a.shape == b.shape and a.tobytes() == b.tobytes()
                for a, b in (
                    (self.f_image, other.f_image),
                    (self.f_text, other.f_text),
                    (self.proposals, other.proposals),
                    (self.attributes, other.attributes),
                    (self.proposal_boxes, other.proposal_boxes),
                )
            )
        )


# --- synthetic generator ------------------------------------------------------


def seed_hash(seed_material: str) -> int:
    return int.from_bytes(hashlib.blake2b(seed_material.encode("utf-8"), digest_size=16).digest(), "little")


def synthetic_count(seed_material: str, modulus: int) -> int:
    return 1 + seed_hash(seed_material) % modulus


def synthetic_encode(seed_material: str, dim: int, rows: int) -> np.ndarray:
    """``rows x dim`` float32 matrix of unit-norm rows, a pure function of its arguments.

    Entries come from the Philox counter-based generator keyed by a 128-bit hash
    of ``seed_material``.
    """
    key = seed_hash(seed_material)
    rng = np.random.Generator(np.random.Philox(key=key))
    raw = rng.standard_normal((rows, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    return (raw / np.where(norms == 0, 1.0, norms)).astype(np.float32)


# --- backend interface --------------------------------------------------------


class EncoderBackend(ABC):
    """Source of raw features. ``image`` is whatever ``load_image`` returned (may be None)."""

    capabilities: frozenset = ALL_CAPABILITIES

    def load_image(self, record: MemeRecord):
        return None

    @abstractmethod
    def clip_image(self, record: MemeRecord, image) -> np.ndarray: ...

    @abstractmethod
    def clip_text(self, record: MemeRecord, text: str) -> np.ndarray: ...

    @abstractmethod
    def detect_faces(self, record: MemeRecord, image) -> list[Box]: ...

    @abstractmethod
    def detect_objects(self, record: MemeRecord, image) -> list[Box]: ...

    @abstractmethod
    def detect_attributes(self, record: MemeRecord, image) -> list[str]: ...

    @abstractmethod
    def encode_proposals(self, record: MemeRecord, image, boxes: Sequence[Box]) -> np.ndarray: ...

    @abstractmethod
    def encode_attributes(self, record: MemeRecord, names: Sequence[str]) -> np.ndarray: ...


class SyntheticBackend(EncoderBackend):
    """Deterministic stand-in keyed on ``(record.id, record.ocr_text)``; never touches pixels.

    ``n_proposals``/``n_attributes`` override the hash-derived counts.
    """

    def __init__(self, n_proposals: Optional[int] = None, n_attributes: Optional[int] = None) -> None:
        self.n_proposals = n_proposals
        self.n_attributes = n_attributes

    def clip_image(self, record, image):
        return synthetic_encode(f"image|{record.id}", GLOBAL_DIM, 1)[0]

    def clip_text(self, record, text):
        return synthetic_encode(f"text|{record.id}|{text}", GLOBAL_DIM, 1)[0]

    def _boxes(self, record: MemeRecord, kind: str, count: int) -> list[Box]:
        if count == 0:
            return []
        u = synthetic_encode(f"{kind}-boxes|{record.id}", 4, count)
        u = (np.abs(u) / np.abs(u).max(axis=1, keepdims=True)).astype(np.float64)
        w, h = float(record.width), float(record.height)
        boxes = []
        for a, b, c, d in u:
            x0, x1 = sorted((a * w * 0.5, w * (0.5 + 0.5 * c)))
            y0, y1 = sorted((b * h * 0.5, h * (0.5 + 0.5 * d)))
            boxes.append((x0, y0, x1, y1))
        return boxes

    def _proposal_split(self, record: MemeRecord) -> tuple[int, int]:
        n = self.n_proposals if self.n_proposals is not None else synthetic_count(f"proposals|{record.id}", 4)
        faces = n // 2
        return faces, n - faces

    def detect_faces(self, record, image):
        return self._boxes(record, "face", self._proposal_split(record)[0])

    def detect_objects(self, record, image):
        return self._boxes(record, "object", self._proposal_split(record)[1])

    def detect_attributes(self, record, image):
        m = self.n_attributes if self.n_attributes is not None else synthetic_count(f"attributes|{record.id}", 3)
        return [f"attr-{seed_hash(f'{record.id}|{i}') % 10**6:06d}" for i in range(m)]

    def encode_proposals(self, record, image, boxes):
        if not boxes:
            return np.zeros((0, PROPOSAL_DIM), dtype=np.float32)
        return synthetic_encode(f"proposals|{record.id}", PROPOSAL_DIM, len(boxes))

    def encode_attributes(self, record, names):
        if not names:
            return np.zeros((0, ATTRIBUTE_DIM), dtype=np.float32)
        return synthetic_encode(f"attributes|{record.id}|{record.ocr_text}", ATTRIBUTE_DIM, len(names))


def letterbox(crop: np.ndarray, size: int = CROP_SIZE) -> np.ndarray:
    """Resize ``crop`` (H x W or H x W x C) to fit a ``size`` square, edge-padding the short side."""
    from PIL import Image

    crop = np.asarray(crop)
    h, w = crop.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("empty crop")
    scale = size / max(h, w)
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    resized = np.asarray(Image.fromarray(crop).resize((nw, nh), Image.BILINEAR))
    top, left = (size - nh) // 2, (size - nw) // 2
    pad = [(top, size - nh - top), (left, size - nw - left)] + [(0, 0)] * (resized.ndim - 2)
    return np.pad(resized, pad, mode="edge")


def crop_box(image: np.ndarray, box: Box) -> np.ndarray:
    h, w = image.shape[:2]
    x0, y0, x1, y1 = box
    x0, x1 = int(np.clip(np.floor(x0), 0, w - 1)), int(np.clip(np.ceil(x1), 1, w))
    y0, y1 = int(np.clip(np.floor(y0), 0, h - 1)), int(np.clip(np.ceil(y1), 1, h))
    return image[y0:max(y1, y0 + 1), x0:max(x1, x0 + 1)]


class CallableBackend(EncoderBackend):
    """Adapter wrapping externally supplied models.

    Each keyword is a callable; omitted ones are simply absent from ``capabilities``.
    ``crop_encoder`` maps a letterboxed RGB crop to a 4096-vector; ``token_encoder``
    maps an attribute string to a ``tokens x 768`` matrix, mean-pooled here.
    """

    def __init__(
        self,
        clip_image: Optional[Callable] = None,
        clip_text: Optional[Callable] = None,
        face_detector: Optional[Callable] = None,
        object_detector: Optional[Callable] = None,
        attribute_detector: Optional[Callable] = None,
        crop_encoder: Optional[Callable] = None,
        token_encoder: Optional[Callable] = None,
        crop_size: int = CROP_SIZE,
    ) -> None:
        self._fns = {
            Capability.CLIP_IMAGE: clip_image,
            Capability.CLIP_TEXT: clip_text,
            Capability.FACE_DETECT: face_detector,
            Capability.OBJECT_DETECT: object_detector,
            Capability.ATTRIBUTE_DETECT: attribute_detector,
            Capability.PROPOSAL_ENCODE: crop_encoder,
            Capability.ATTRIBUTE_ENCODE: token_encoder,
        }
        self.capabilities = frozenset(c for c, fn in self._fns.items() if fn is not None)
        self.crop_size = crop_size

    def load_image(self, record):
        from PIL import Image

        with Image.open(record.image_ref) as img:
            return np.asarray(img.convert("RGB"))

    def clip_image(self, record, image):
        return self._fns[Capability.CLIP_IMAGE](image)

    def clip_text(self, record, text):
        return self._fns[Capability.CLIP_TEXT](text)

    def detect_faces(self, record, image):
        return list(self._fns[Capability.FACE_DETECT](image))

    def detect_objects(self, record, image):
        return list(self._fns[Capability.OBJECT_DETECT](image))

    def detect_attributes(self, record, image):
        return list(self._fns[Capability.ATTRIBUTE_DETECT](image))

    def encode_proposals(self, record, image, boxes):
        enc = self._fns[Capability.PROPOSAL_ENCODE]
        rows = [np.asarray(enc(letterbox(crop_box(image, b), self.crop_size)), dtype=np.float32) for b in boxes]
        return np.stack(rows) if rows else np.zeros((0, PROPOSAL_DIM), dtype=np.float32)

    def encode_attributes(self, record, names):
        enc = self._fns[Capability.ATTRIBUTE_ENCODE]
        rows = [np.asarray(enc(name), dtype=np.float32).reshape(-1, ATTRIBUTE_DIM).mean(axis=0) for name in names]
        return np.stack(rows) if rows else np.zeros((0, ATTRIBUTE_DIM), dtype=np.float32)


def load_backend(spec: str) -> EncoderBackend:
    """Instantiate a backend from ``module:factory`` (factory called with no arguments)."""
    if spec == "synthetic":
        return SyntheticBackend()
    module_name, _, attr = spec.partition(":")
    if not attr:
        raise ValueError(f"backend spec must be 'synthetic' or 'module:factory', got {spec!r}")
    backend = getattr(importlib.import_module(module_name), attr)()
    if not isinstance(backend, EncoderBackend):
        raise TypeError(f"{spec} did not return an EncoderBackend")
    return backend


def _call(capability: Capability, record: MemeRecord, fn, *args):
    try:
        return fn(record, *args)
    except (MissingCapabilityError, BackendError):
        raise
    except Exception as exc:
        raise BackendError(capability, record.id, exc) from exc


def encode_bundle(record: MemeRecord, backend: EncoderBackend) -> EmbeddingBundle:
    """Run every feature branch for one meme. Proposals are faces first, then objects."""
    missing = ALL_CAPABILITIES - set(backend.capabilities)
    if missing:
        raise MissingCapabilityError(sorted(missing, key=lambda c: c.value))
    try:
        image = backend.load_image(record)
    except Exception as exc:
        raise BackendError(Capability.CLIP_IMAGE, record.id, exc) from exc
    f_image = _call(Capability.CLIP_IMAGE, record, backend.clip_image, image)
    f_text = _call(Capability.CLIP_TEXT, record, backend.clip_text, record.ocr_text)
    faces = _call(Capability.FACE_DETECT, record, backend.detect_faces, image)
    objects = _call(Capability.OBJECT_DETECT, record, backend.detect_objects, image)
    names = _call(Capability.ATTRIBUTE_DETECT, record, backend.detect_attributes, image)
    boxes = list(faces) + list(objects)
    proposals = _call(Capability.PROPOSAL_ENCODE, record, backend.encode_proposals, image, boxes)
    attributes = _call(Capability.ATTRIBUTE_ENCODE, record, backend.encode_attributes, names)
    bundle = EmbeddingBundle(
        f_image=f_image,
        f_text=f_text,
        proposals=proposals,
        attributes=attributes,
        proposal_boxes=np.asarray(boxes, dtype=np.float32).reshape(-1, 4),
        attribute_names=tuple(names),
    )
    return bundle.validate()


# --- cache --------------------------------------------------------------------


class EmbeddingCache:
    """Bundles keyed by meme id in a checksummed :class:`RecordFile`."""

    def __init__(self, path: Union[str, Path], mode: str = "r") -> None:
        self.path = Path(path)
        self._file = RecordFile(path, mode)

    def __contains__(self, meme_id: str) -> bool:
        return meme_id in self._file

    def __len__(self) -> int:
        return len(self._file)

    def ids(self) -> list[str]:
        return self._file.keys()

    def put(self, meme_id: str, bundle: EmbeddingBundle) -> bool:
        """Store a bundle; True means an earlier entry for ``meme_id`` was replaced."""
        bundle.validate()
        overwrite = self._file.put(
            meme_id,
            {
                "f_image": bundle.f_image,
                "f_text": bundle.f_text,
                "proposals": bundle.proposals,
                "attributes": bundle.attributes,
                "proposal_boxes": bundle.proposal_boxes,
            },
            {"attribute_names": list(bundle.attribute_names)},
        )
        if overwrite:
            logger.info("cache overwrite for %s", meme_id)
        return overwrite

    def get(self, meme_id: str) -> Optional[EmbeddingBundle]:
        stored = self._file.get(meme_id)
        if stored is None:
            return None
        t = stored.tensors
        return EmbeddingBundle(
            f_image=t["f_image"],
            f_text=t["f_text"],
            proposals=t["proposals"],
            attributes=t["attributes"],
            proposal_boxes=t["proposal_boxes"],
            attribute_names=tuple(stored.meta.get("attribute_names", ())),
        )

    def require(self, ids: Sequence[str]) -> list[EmbeddingBundle]:
        missing = [i for i in ids if i not in self]
        if missing:
            raise MissingEmbeddingsError(f"missing embeddings for {len(missing)} ids, e.g. {missing[:3]}")
        return [self.get(i) for i in ids]  # type: ignore[misc]


def encode_manifest(records: Sequence[MemeRecord], backend: EncoderBackend, cache: EmbeddingCache, threads: int = 1) -> int:
    """Encode every record not already cached. Returns the number of new entries."""
    todo = [r for r in records if r.id not in cache]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            bundles = list(pool.map(lambda r: encode_bundle(r, backend), todo))
    else:
        bundles = [encode_bundle(r, backend) for r in todo]
    for record, bundle in zip(todo, bundles):
        cache.put(record.id, bundle)
    return len(todo)
