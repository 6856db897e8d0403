"""Deterministic built-in text embedder plus ingestion of precomputed ones.

The built-in embedder is a hash-indexed random table: each lowercased
whitespace token seeds a PCG64 stream from its SHA-256 digest, making the
embedding a pure function of the prompt — identical across runs and
platforms, with no learned state. Real encoder outputs can be supplied
offline through the checkpoint container format.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, ContractError
from .numerics import Tensor

MAX_TOKENS = 16
EMBED_DIM = 64


def _token_vector(token: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.default_rng(np.random.PCG64(seed))
    return (rng.standard_normal(dim) / np.sqrt(dim)).astype(np.float32)


def embed_text(prompt: str, length: int = MAX_TOKENS, dim: int = EMBED_DIM) -> Tensor:
    """Embed a prompt as [length, dim]; rows beyond the token count are zero."""
    tokens = prompt.lower().split()
    if not tokens:
        raise ContractError("prompt must contain at least one token")
    out = np.zeros((length, dim), dtype=np.float32)
    for i, tok in enumerate(tokens[:length]):
        out[i] = _token_vector(tok, dim)
    return Tensor(out)


class EmbeddingStore:
    """Prompt -> embedding map loaded from a checkpoint container."""

    def __init__(self, table: dict[str, np.ndarray]):
        self._table = table

    def __contains__(self, prompt: str) -> bool:
        return prompt in self._table

    def __len__(self) -> int:
        return len(self._table)

    def get(self, prompt: str) -> Tensor:
        if prompt not in self._table:
            raise ContractError(f"no embedding stored for prompt {prompt!r}")
        return Tensor(self._table[prompt])


def save_embeddings(embeddings: dict[str, np.ndarray], path) -> None:
    save_checkpoint(embeddings, path)


def load_embeddings(path, length: int = MAX_TOKENS, dim: int = EMBED_DIM) -> EmbeddingStore:
    """Load externally computed embeddings, validating every shape."""
    table = load_checkpoint(path)
    for name, arr in table.items():
        if arr.shape != (length, dim):
            raise CheckpointError(
                f"embedding '{name}' has shape {arr.shape}, expected {(length, dim)}")
    return EmbeddingStore(table)
