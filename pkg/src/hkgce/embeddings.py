"""Atom embedding table: word2vec-style text files with a seeded fallback."""

from __future__ import annotations

import zlib
from pathlib import Path
from typing import Iterable, Optional

import numpy as np


class MissingEmbedding(KeyError):
    pass


class EmbeddingTable:
    """Label → vector lookup shared by entities and relations.

    Labels absent from the loaded rows get a unit-normal vector seeded by
    ``(seed, crc32(label))`` when ``fallback`` is on, so lookups are stable
    across processes.
    """

    def __init__(self, dim: int, rows: Optional[dict[str, np.ndarray]] = None,
                 seed: int = 0, fallback: bool = True):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self.fallback = fallback
        self._rows: dict[str, np.ndarray] = {}
        for label, vec in (rows or {}).items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (dim,):
                raise ValueError(f"row {label!r} has shape {vec.shape}, expected ({dim},)")
            self._rows[label] = vec
        self._cache: dict[str, np.ndarray] = {}

    def __contains__(self, label: str) -> bool:
        return label in self._rows

    def __len__(self) -> int:
        return len(self._rows)

    def labels(self) -> list[str]:
        return list(self._rows)

    def lookup(self, label: str) -> np.ndarray:
        row = self._rows.get(label)
        if row is not None:
            return row
        if not self.fallback:
            raise MissingEmbedding(label)
        row = self._cache.get(label)
        if row is None:
            rng = np.random.default_rng([self.seed, zlib.crc32(label.encode("utf-8"))])
            row = rng.standard_normal(self.dim)
            self._cache[label] = row
        return row

    def matrix(self, labels: Iterable[str]) -> np.ndarray:
        labels = list(labels)
        if not labels:
            return np.zeros((0, self.dim))
        return np.stack([self.lookup(l) for l in labels])

    @classmethod
    def from_word2vec(cls, path, seed: int = 0, fallback: bool = False) -> "EmbeddingTable":
        """Read ``D`` or ``N D`` header, then ``label v1 .. vD`` per line."""
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) not in (1, 2):
                raise ValueError(f"{path}: bad header {' '.join(header)!r}")
            dim = int(header[-1])
            rows = {}
            for lineno, line in enumerate(fh, start=2):
                parts = line.rstrip("\n").split(" ")
                if not parts or parts == [""]:
                    continue
                if len(parts) != dim + 1:
                    raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
                rows[parts[0]] = np.array([float(v) for v in parts[1:]])
        if len(header) == 2 and int(header[0]) != len(rows):
            raise ValueError(f"{path}: header says {header[0]} rows, found {len(rows)}")
        return cls(dim, rows, seed=seed, fallback=fallback)

    def to_word2vec(self, path) -> None:
        with open(Path(path), "w", encoding="utf-8") as fh:
            fh.write(f"{len(self._rows)} {self.dim}\n")
            for label, vec in self._rows.items():
                fh.write(label + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def variable_vector(index: int, dim: int, qualifier: bool = False) -> np.ndarray:
    """Variable ``index`` (0-based, canonical order) → ``[index+1, 0|1, ...]``."""
    vec = np.ones(dim) if qualifier else np.zeros(dim)
    vec[0] = index + 1
    return vec
