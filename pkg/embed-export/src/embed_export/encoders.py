"""Text encoders behind a single encode(texts, batch_size) -> float32 array.

Two families:

- "hashing" / "hashing-<dim>": offline character-trigram and word feature
  hashing with signed buckets. Deterministic across runs and platforms
  (hashlib, not the salted builtin hash), needs no model files, and keeps
  paraphrases close: shared surface features dominate the vector.
- anything else: a sentence-transformers model name, loaded lazily.

Encoders return raw (unnormalized) vectors; normalization is the export
step's decision.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

from .errors import ModelError

_HASHING_NAME = re.compile(r"^hashing(?:-(\d+))?$")


class HashingEncoder:
    """Signed feature hashing over character trigrams and whole words."""

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ModelError(f"hashing dimension must be positive, got {dim}")
        self.dim = dim

    @staticmethod
    def _features(text: str) -> list[str]:
        words = text.lower().split()
        feats = ["w:" + w for w in words]
        padded = " " + " ".join(words) + " "
        feats.extend(padded[i:i + 3] for i in range(len(padded) - 2))
        return feats

    def _vector(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float32)
        for feat in self._features(text):
            digest = hashlib.blake2b(feat.encode("utf-8"), digest_size=5).digest()
            index = int.from_bytes(digest[:4], "little") % self.dim
            vec[index] += 1.0 if digest[4] & 1 else -1.0
        return vec

    def encode(self, texts: list[str], batch_size: int = 32) -> np.ndarray:
        # Rows are independent, so batch size cannot affect the output.
        return np.stack([self._vector(t) for t in texts]) if texts \
            else np.zeros((0, self.dim), dtype=np.float32)


class SentenceEncoder:
    """sentence-transformers wrapper; import and load failures become
    ModelError so the CLI can report them cleanly."""

    def __init__(self, model_name: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as e:
            raise ModelError(
                f"model {model_name!r} needs the sentence-transformers package: {e}"
            ) from e
        try:
            self._model = SentenceTransformer(model_name)
        except Exception as e:
            raise ModelError(f"cannot load model {model_name!r}: {e}") from e
        self.model_name = model_name

    def encode(self, texts: list[str], batch_size: int = 32) -> np.ndarray:
        out = self._model.encode(list(texts), batch_size=batch_size,
                                 convert_to_numpy=True, normalize_embeddings=False,
                                 show_progress_bar=False)
        return np.asarray(out, dtype=np.float32)


def load_encoder(model_name: str):
    m = _HASHING_NAME.match(model_name)
    if m:
        return HashingEncoder(dim=int(m.group(1)) if m.group(1) else 256)
    return SentenceEncoder(model_name)
