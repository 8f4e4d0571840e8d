"""Peptide records, tokenization, residue-chain graphs and dataset I/O."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .rng import RngState

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
UNK_ID = 20
PAD_ID = 21
VOCAB_SIZE = 22

_TO_ID = {aa: i for i, aa in enumerate(AMINO_ACIDS)}
_SYMBOLS = list(AMINO_ACIDS) + ["<unk>", "<pad>"]

CLASSIFICATION = "classification"
REGRESSION = "regression"
TASK_KINDS = (CLASSIFICATION, REGRESSION)


def symbol(token_id: int) -> str:
    return _SYMBOLS[token_id]


@dataclass(frozen=True)
class PeptideRecord:
    id: str
    sequence: str
    label: float


@dataclass
class Dataset:
    records: list[PeptideRecord]
    task: str

    def __post_init__(self):
        if self.task not in TASK_KINDS:
            raise ValidationError(f"unknown task kind {self.task!r}")
        if self.task == CLASSIFICATION:
            bad = [r.id for r in self.records if r.label not in (0, 1)]
            if bad:
                raise ValidationError(f"non-binary classification labels on records {bad[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.float64)

    @property
    def sequences(self) -> list[str]:
        return [r.sequence for r in self.records]


@dataclass
class TokenizedSequence:
    ids: np.ndarray
    mask: np.ndarray


def validate_sequence(sequence: str) -> None:
    if not sequence:
        raise ValidationError("empty peptide sequence")
    if not (sequence.isascii() and sequence.isalpha() and sequence.isupper()):
        bad = sorted({c for c in sequence if not ("A" <= c <= "Z")})
        raise ValidationError(f"illegal residue characters {''.join(bad)!r} in {sequence!r}")


def tokenize(sequence: str, max_len: int) -> TokenizedSequence:
    validate_sequence(sequence)
    if len(sequence) > max_len:
        raise ValidationError(f"sequence length {len(sequence)} exceeds max_len {max_len}")
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[: len(sequence)] = [_TO_ID.get(c, UNK_ID) for c in sequence]
    mask = np.zeros(max_len, dtype=bool)
    mask[: len(sequence)] = True
    return TokenizedSequence(ids, mask)


def detokenize(tokens: TokenizedSequence) -> str:
    return "".join(symbol(int(i)) for i in tokens.ids[tokens.mask])


# ---------------------------------------------------------------- graphs

@dataclass
class PeptideGraph:
    node_ids: np.ndarray
    edges: list[tuple[int, int]]
    adjacency: np.ndarray = field(repr=False)
    norm_adjacency: np.ndarray = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)


def normalize_adjacency(adjacency) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2, with D the degree matrix of A + I."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValidationError("adjacency matrix is not symmetric")
    if np.any(np.diag(a) != 0):
        raise ValidationError("adjacency matrix must have a zero diagonal")
    tilde = a + np.eye(len(a))
    inv_sqrt = 1.0 / np.sqrt(tilde.sum(axis=1))
    return tilde * inv_sqrt[:, None] * inv_sqrt[None, :]


def build_chain_graph(sequence: str) -> PeptideGraph:
    """One node per residue, one undirected edge per backbone bond."""
    validate_sequence(sequence)
    n = len(sequence)
    edges = [(i, i + 1) for i in range(n - 1)]
    adj = np.zeros((n, n))
    for i, j in edges:
        adj[i, j] = adj[j, i] = 1.0
    ids = np.array([_TO_ID.get(c, UNK_ID) for c in sequence], dtype=np.int64)
    return PeptideGraph(ids, edges, adj, normalize_adjacency(adj))


def mean_neighbor_matrix(adjacency: np.ndarray) -> np.ndarray:
    """Row-normalized adjacency without self loops; isolated nodes get a zero row."""
    deg = adjacency.sum(axis=1, keepdims=True)
    return np.divide(adjacency, deg, out=np.zeros_like(adjacency), where=deg > 0)


@dataclass
class EncodedBatch:
    """Padded arrays for a block of records; graph tensors are padded to max_len."""

    ids: np.ndarray          # (B, M) int
    mask: np.ndarray         # (B, M) bool
    norm_adj: np.ndarray     # (B, M, M)
    mean_adj: np.ndarray     # (B, M, M)
    labels: np.ndarray       # (B,)

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, idx) -> "EncodedBatch":
        return EncodedBatch(self.ids[idx], self.mask[idx], self.norm_adj[idx],
                            self.mean_adj[idx], self.labels[idx])


def encode_records(records: Sequence[PeptideRecord], max_len: int) -> EncodedBatch:
    b = len(records)
    ids = np.full((b, max_len), PAD_ID, dtype=np.int64)
    mask = np.zeros((b, max_len), dtype=bool)
    norm_adj = np.zeros((b, max_len, max_len))
    mean_adj = np.zeros((b, max_len, max_len))
    for row, rec in enumerate(records):
        tok = tokenize(rec.sequence, max_len)
        graph = build_chain_graph(rec.sequence)
        n = graph.num_nodes
        ids[row], mask[row] = tok.ids, tok.mask
        norm_adj[row, :n, :n] = graph.norm_adjacency
        mean_adj[row, :n, :n] = mean_neighbor_matrix(graph.adjacency)
    labels = np.array([r.label for r in records], dtype=np.float64)
    return EncodedBatch(ids, mask, norm_adj, mean_adj, labels)


# ---------------------------------------------------------------- CSV I/O

def _parse_label(text: str, task: str, where: str) -> float:
    text = text.strip()
    if task == CLASSIFICATION:
        if text not in ("0", "1"):
            raise ParseError(f"{where}: classification label must be 0 or 1, got {text!r}")
        return float(text)
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{where}: malformed regression label {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"{where}: non-finite regression label {text!r}")
    return value


def load_csv_dataset(path, task: str) -> Dataset:
    """Read a ``sequence,label`` CSV; record ids are the 1-based data row numbers."""
    if task not in TASK_KINDS:
        raise ValidationError(f"unknown task kind {task!r}")
    path = os.fspath(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or [h.strip() for h in header] != ["sequence", "label"]:
            raise ParseError(f"{path}:1: expected header 'sequence,label', got {header!r}")
        records = []
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            where = f"{path}:{lineno}"
            if len(row) != 2:
                raise ParseError(f"{where}: expected 2 fields, got {len(row)}")
            seq = row[0].strip()
            try:
                validate_sequence(seq)
            except ValidationError as exc:
                raise ValidationError(f"{where}: {exc}") from None
            records.append(PeptideRecord(str(lineno - 1), seq, _parse_label(row[1], task, where)))
    return Dataset(records, task)


def write_csv_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("sequence,label\n")
        for r in ds:
            label = str(int(r.label)) if ds.task == CLASSIFICATION else repr(float(r.label))
            fh.write(f"{r.sequence},{label}\n")


# ---------------------------------------------------------------- splitting

def split_sizes(n: int, ratios: Sequence[float] = (8, 1, 1)) -> tuple[int, int, int]:
    total = float(sum(ratios))
    n_train = math.floor(n * ratios[0] / total)
    n_val = math.floor(n * ratios[1] / total)
    return n_train, n_val, n - n_train - n_val


def split_dataset(ds: Dataset, ratios: Sequence[float] = (8, 1, 1),
                  seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValidationError(f"ratios must be three positive numbers, got {tuple(ratios)}")
    if len(ds) < 3:
        raise ValidationError(f"need at least 3 records to split, got {len(ds)}")
    n_train, n_val, _ = split_sizes(len(ds), ratios)
    order = RngState(seed).permutation(len(ds))
    shuffled = [ds.records[i] for i in order]
    return (Dataset(shuffled[:n_train], ds.task),
            Dataset(shuffled[n_train:n_train + n_val], ds.task),
            Dataset(shuffled[n_train + n_val:], ds.task))


# ---------------------------------------------------------------- synthetic corpus

HYDROPHOBIC = set("AILFVM")
SYNTH_LENGTH = 10


def synth_label(sequence: str, task: str) -> float:
    if task == CLASSIFICATION:
        return 1.0 if sequence.count("K") + sequence.count("R") >= 3 else 0.0
    return sum(c in HYDROPHOBIC for c in sequence) / SYNTH_LENGTH


def synth_dataset(n: int, seed: int, task: str) -> Dataset:
    """Random length-10 peptides labelled by a simple composition rule."""
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    if task not in TASK_KINDS:
        raise ValidationError(f"unknown task kind {task!r}")
    letters = RngState(seed).integers(0, len(AMINO_ACIDS), (n, SYNTH_LENGTH))
    records = []
    for i, row in enumerate(letters):
        seq = "".join(AMINO_ACIDS[j] for j in row)
        records.append(PeptideRecord(f"synth{i}", seq, synth_label(seq, task)))
    return Dataset(records, task)


def concat_datasets(parts: Iterable[Dataset]) -> Dataset:
    parts = list(parts)
    return Dataset([r for p in parts for r in p.records], parts[0].task)
