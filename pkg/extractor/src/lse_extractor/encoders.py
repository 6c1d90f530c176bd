"""Image/text encoders behind a model-id string.

Model ids:

* ``toy:<dim>`` (default ``toy:64``) - deterministic offline encoder, no
  model weights: images are downsampled to a 16x16 grayscale patch and
  pushed through a fixed seeded random projection; text goes through hashed
  character trigrams and the same kind of projection.  Good for pipeline
  smoke tests, not for semantics.
* ``st:<name>`` - a sentence-transformers checkpoint with image support
  (e.g. ``st:clip-ViT-B-32``); requires the optional dependency and local
  model availability.

Every encoder returns unit-norm float32 rows.
"""

import hashlib

import numpy as np
from PIL import Image

_TOY_PATCH = 16          # images become patches of _TOY_PATCH**2 grayscale values
_TOY_BUCKETS = 512       # text trigram hash buckets
_TOY_SEED = 0x701_5EED


class EncoderError(Exception):
    pass


def _normalize_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return (x / norms).astype(np.float32)


def _projection(in_dim, out_dim):
    rng = np.random.default_rng(np.random.SeedSequence([_TOY_SEED, in_dim, out_dim]))
    return rng.normal(size=(in_dim, out_dim)) / np.sqrt(in_dim)


class ToyEncoder:
    """Deterministic stand-in encoder for offline smoke tests."""

    def __init__(self, dim=64):
        if dim < 1:
            raise EncoderError("toy encoder dimension must be >= 1")
        self.dim = int(dim)
        self._img_proj = _projection(_TOY_PATCH * _TOY_PATCH, self.dim)
        self._txt_proj = _projection(_TOY_BUCKETS, self.dim)

    def encode_images(self, paths):
        feats = np.empty((len(paths), _TOY_PATCH * _TOY_PATCH))
        for i, path in enumerate(paths):
            with Image.open(path) as img:
                patch = img.convert("L").resize((_TOY_PATCH, _TOY_PATCH), Image.BILINEAR)
            feats[i] = np.asarray(patch, dtype=np.float64).ravel() / 255.0
        return _normalize_rows(feats @ self._img_proj)

    def encode_texts(self, sentences):
        feats = np.zeros((len(sentences), _TOY_BUCKETS))
        for i, sentence in enumerate(sentences):
            text = sentence.lower()
            for j in range(len(text) - 2):
                trigram = text[j : j + 3].encode("utf-8")
                bucket = int.from_bytes(hashlib.blake2b(trigram, digest_size=4).digest(), "little")
                feats[i, bucket % _TOY_BUCKETS] += 1.0
        return _normalize_rows(feats @ self._txt_proj)


class SentenceTransformerEncoder:
    """Real vision-language features via sentence-transformers (optional)."""

    def __init__(self, model_name):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise EncoderError(
                "sentence-transformers is not installed; use a toy:<dim> model id"
            ) from exc
        self._model = SentenceTransformer(model_name)
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode_images(self, paths):  # pragma: no cover - needs model weights
        images = [Image.open(p).convert("RGB") for p in paths]
        feats = self._model.encode(images, convert_to_numpy=True, show_progress_bar=False)
        return _normalize_rows(feats)

    def encode_texts(self, sentences):  # pragma: no cover - needs model weights
        feats = self._model.encode(sentences, convert_to_numpy=True, show_progress_bar=False)
        return _normalize_rows(feats)


def load_encoder(model_id):
    if model_id.startswith("toy"):
        _, _, dim = model_id.partition(":")
        return ToyEncoder(dim=int(dim) if dim else 64)
    if model_id.startswith("st:"):
        return SentenceTransformerEncoder(model_id[3:])
    raise EncoderError(f"unknown model id {model_id!r}; expected 'toy:<dim>' or 'st:<name>'")
