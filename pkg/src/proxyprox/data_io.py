"""Dataset ingestion (sparse ``label idx:val`` text), feature scaling and
reproducible seed derivation."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import sparse

from .core import ContractViolation, ProxyProxError

DATA_DIR_ENV = "PROXYPROX_DATA_DIR"

MUSHROOMS_N = 8124
MUSHROOMS_D = 112


class ParseError(ProxyProxError, ValueError):
    """Malformed input; carries 1-based ``line`` and ``column``."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class FormatError(ProxyProxError, ValueError):
    """Structurally invalid input (decreasing indices, empty file, ...)."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (dense array or CSR) with a label vector.

    ``task`` is ``"classification"`` (labels in {0, 1}) or ``"regression"``.
    """

    features: Union[np.ndarray, sparse.csr_matrix]
    labels: np.ndarray
    task: str = "classification"
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = self.features
        if X.ndim != 2:
            raise ContractViolation("features must be a 2-D matrix")
        y = np.asarray(self.labels, dtype=np.float64)
        object.__setattr__(self, "labels", y)
        if y.shape != (X.shape[0],):
            raise ContractViolation(f"labels shape {y.shape} does not match {X.shape[0]} rows")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ContractViolation("empty dataset")
        data = X.data if sparse.issparse(X) else X
        if np.isnan(data).any() or np.isnan(y).any():
            raise ContractViolation("dataset contains NaN")
        if self.task == "classification" and not np.isin(y, (0.0, 1.0)).all():
            raise ContractViolation("classification labels must be in {0, 1}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def dense_features(self) -> np.ndarray:
        X = self.features
        return X.toarray() if sparse.issparse(X) else np.asarray(X, dtype=np.float64)

    def content_hash(self) -> str:
        X = sparse.csr_matrix(self.features)
        h = hashlib.sha256()
        for arr in (X.indptr, X.indices, X.data, self.labels):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(X.shape).encode())
        return h.hexdigest()[:16]


# Checked in order, so a file whose labels are all 1 keeps the {0, 1} encoding.
_LABEL_MAPS = {
    frozenset({0.0, 1.0}): ({0.0: 0.0, 1.0: 1.0}, "01"),
    frozenset({1.0, -1.0}): ({1.0: 1.0, -1.0: 0.0}, "pm1"),
    frozenset({1.0, 2.0}): ({1.0: 1.0, 2.0: 0.0}, "12"),
}
_LABEL_OUT = {
    "pm1": {1.0: "+1", 0.0: "-1"},
    "12": {1.0: "1", 0.0: "2"},
    "01": {1.0: "1", 0.0: "0"},
}


def _parse_lines(lines, zero_based):
    labels, indptr, indices, values = [], [0], [], []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        hash_at = line.find("#")
        if hash_at >= 0:
            line = line[:hash_at]
        if not line.strip():
            continue
        col = 0
        tokens = []
        for tok in line.split():
            col = line.index(tok, col)
            tokens.append((tok, col + 1))
            col += len(tok)
        tok, c = tokens[0]
        try:
            labels.append(float(tok))
        except ValueError:
            raise ParseError(f"invalid label {tok!r}", lineno, c) from None
        prev = 0 if zero_based else 1
        prev -= 1
        for tok, c in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"expected 'index:value', got {tok!r}", lineno, c)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"malformed token {tok!r}", lineno, c) from None
            if idx < (0 if zero_based else 1):
                raise ParseError(f"index {idx} out of range", lineno, c)
            if idx <= prev:
                raise FormatError(f"line {lineno}: indices must be strictly increasing "
                                  f"({idx} after {prev})")
            prev = idx
            indices.append(idx if zero_based else idx - 1)
            values.append(val)
        indptr.append(len(indices))
    return labels, indptr, indices, values


def parse_sparse_classification(path, *, n_features: Optional[int] = None,
                                zero_based: bool = False,
                                task: str = "classification") -> Dataset:
    """Read a sparse ``<label> <i>:<v> ...`` file (1-based indices by default).

    Classification labels {+1, -1} or {1, 2} are mapped to {1, 0}; {0, 1} is
    kept. ``#`` starts a comment. The feature count is the largest index seen
    unless ``n_features`` is given.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        labels, indptr, indices, values = _parse_lines(fh, zero_based)
    if not labels:
        raise FormatError(f"{path}: no data rows")
    d_seen = (max(indices) + 1) if indices else 1
    d = d_seen if n_features is None else int(n_features)
    if d < d_seen:
        raise FormatError(f"{path}: index {d_seen} exceeds declared n_features={d}")
    X = sparse.csr_matrix((np.asarray(values, dtype=np.float64),
                           np.asarray(indices, dtype=np.int64),
                           np.asarray(indptr, dtype=np.int64)), shape=(len(labels), d))
    y = np.asarray(labels, dtype=np.float64)
    meta = {"source": str(path), "zero_based": zero_based, "scaling": "none"}
    if task == "classification":
        key = frozenset(np.unique(y).tolist())
        for known, (mapping, encoding) in _LABEL_MAPS.items():
            if key <= known:
                y = np.array([mapping[v] for v in y])
                meta["label_encoding"] = encoding
                break
        else:
            raise ContractViolation(f"{path}: labels {sorted(key)} are not binary")
    ds = Dataset(X, y, task=task, metadata=meta)
    ds.metadata["hash"] = ds.content_hash()
    return ds


def format_sparse_classification(data: Dataset, *, zero_based: bool = False) -> str:
    """Serialize ``data`` to the sparse text format (values printed with ``repr``,
    which round-trips float64 exactly)."""
    X = sparse.csr_matrix(data.features)
    X.sort_indices()
    if data.task == "classification":
        out_map = _LABEL_OUT[data.metadata.get("label_encoding", "01")]
        labels = [out_map[v] for v in data.labels]
    else:
        labels = [repr(float(v)) for v in data.labels]
    offset = 0 if zero_based else 1
    lines = []
    for i, lab in enumerate(labels):
        start, end = X.indptr[i], X.indptr[i + 1]
        toks = [f"{j + offset}:{float(v)!r}" for j, v in zip(X.indices[start:end], X.data[start:end])
                if v != 0.0]
        lines.append(" ".join([lab] + toks))
    return "\n".join(lines) + "\n"


def write_sparse_classification(data: Dataset, path, *, zero_based: bool = False) -> None:
    Path(path).write_text(format_sparse_classification(data, zero_based=zero_based),
                          encoding="utf-8")


SCALING_MODES = ("none", "unit_columns", "unit_rows")


def scale_features(data: Dataset, mode: str = "unit_columns") -> Dataset:
    """Column max-abs scaling or row L2 normalization; zero columns/rows untouched."""
    if mode not in SCALING_MODES:
        raise ContractViolation(f"unknown scaling mode {mode!r}")
    meta = dict(data.metadata, scaling=mode)
    if mode == "none":
        return replace(data, metadata=meta)
    X = data.features
    is_sparse = sparse.issparse(X)
    if mode == "unit_columns":
        scale = np.asarray(abs(X).max(axis=0).todense()).ravel() if is_sparse else np.abs(X).max(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        Xs = X @ sparse.diags(1.0 / scale) if is_sparse else X / scale
    else:
        if is_sparse:
            norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
        else:
            norms = np.linalg.norm(X, axis=1)
        norms = np.where(norms > 0, norms, 1.0)
        Xs = sparse.diags(1.0 / norms) @ X if is_sparse else X / norms[:, None]
    if is_sparse:
        Xs = sparse.csr_matrix(Xs)
    return replace(data, features=Xs, metadata=meta)


def rng_fork(master_seed: int, stream_label: str) -> int:
    """Deterministic 64-bit child seed for a named random stream."""
    digest = hashlib.blake2b(f"{int(master_seed)}/{stream_label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def find_dataset(name: str, data_dir=None) -> Optional[Path]:
    """Locate ``name`` in ``data_dir`` or ``$PROXYPROX_DATA_DIR``; None if absent."""
    base = data_dir or os.environ.get(DATA_DIR_ENV)
    if not base:
        return None
    for candidate in (Path(base) / name, Path(base) / f"{name}.txt", Path(base) / f"{name}.libsvm"):
        if candidate.is_file():
            return candidate
    return None


def load_mushrooms(data_dir=None, scaling: str = "unit_columns") -> Dataset:
    path = find_dataset("mushrooms", data_dir)
    if path is None:
        raise FileNotFoundError(
            f"mushrooms dataset not found; set {DATA_DIR_ENV} to a directory containing it")
    return scale_features(parse_sparse_classification(path), scaling)


# Cardinalities of 22 one-hot encoded categorical attributes (sum = 112).
_SURROGATE_CARDINALITIES = (6, 4, 10, 2, 9, 2, 2, 2, 12, 2, 4, 4, 4, 9, 9, 1, 4, 3, 5, 8, 5, 5)


def make_mushrooms_surrogate(seed: int = 0, n: int = MUSHROOMS_N) -> Dataset:
    """Synthetic stand-in with the shape of the ``mushrooms`` data.

    ``n`` rows of 22 one-hot encoded categorical attributes (112 binary
    columns, exactly 22 ones per row). Labels follow a planted logistic model
    with large weights, so the classes are nearly separable.
    """
    rng = np.random.default_rng(rng_fork(seed, "mushrooms-surrogate"))
    cards = np.asarray(_SURROGATE_CARDINALITIES)
    offsets = np.concatenate([[0], np.cumsum(cards)[:-1]])
    d = int(cards.sum())
    cols = np.empty((n, cards.size), dtype=np.int64)
    for j, (k, off) in enumerate(zip(cards, offsets)):
        p = rng.dirichlet(np.full(k, 0.7))
        cols[:, j] = off + rng.choice(k, size=n, p=p)
    rows = np.repeat(np.arange(n), cards.size)
    X = sparse.csr_matrix((np.ones(rows.size), (rows, cols.ravel())), shape=(n, d))
    theta = rng.standard_normal(d) * 2.0
    z = X @ theta
    z -= np.median(z)
    p1 = 1.0 / (1.0 + np.exp(-z))
    y = (rng.random(n) < p1).astype(np.float64)
    ds = Dataset(X, y, metadata={"source": f"surrogate(seed={seed})", "scaling": "none",
                                 "label_encoding": "pm1"})
    ds.metadata["hash"] = ds.content_hash()
    return ds
