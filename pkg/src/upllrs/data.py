"""Datasets: synthesis, CSV loading, 4:1:1 splitting and UPLL corruption.

Corruption happens in two passes. Labels are first flipped with
probability ``mu`` to a uniformly chosen wrong class, then every other
class joins the candidate set independently with probability ``eta``.
The flipped label is always a candidate; the true label may not be.
"""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AuditUnavailableError, ConfigError, DataFormatError


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.labels) != len(self.features):
            raise DataFormatError("features must be n x d with one label per row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataFormatError("labels outside 0..C-1")
        if not np.isfinite(self.features).all():
            raise DataFormatError("non-finite feature values")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.class_count)


@dataclass
class UpllDataset:
    """Features plus a boolean (n, C) candidate mask.

    ``hidden_truth`` and ``noisy_labels`` are kept for auditing only; the
    training code never reads them.
    """

    features: np.ndarray
    candidates: np.ndarray
    class_count: int
    hidden_truth: np.ndarray | None = None
    noisy_labels: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.candidates = np.asarray(self.candidates, dtype=bool)
        n = len(self.features)
        if self.candidates.shape != (n, self.class_count):
            raise DataFormatError(f"candidate mask shape {self.candidates.shape} != ({n}, {self.class_count})")
        if n and not self.candidates.any(axis=1).all():
            raise DataFormatError("empty candidate set")
        for name in ("hidden_truth", "noisy_labels"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.int64)
                if len(v) != n:
                    raise DataFormatError(f"{name} length mismatch")
                setattr(self, name, v)

    def __len__(self):
        return len(self.features)

    def subset(self, idx) -> "UpllDataset":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda v: None if v is None else v[idx]  # noqa: E731
        return UpllDataset(self.features[idx], self.candidates[idx], self.class_count,
                           pick(self.hidden_truth), pick(self.noisy_labels))

    def reliability(self) -> np.ndarray:
        """Per-instance flag: true label inside the candidate set."""
        if self.hidden_truth is None:
            raise AuditUnavailableError("dataset carries no hidden truth")
        return self.candidates[np.arange(len(self)), self.hidden_truth]


@dataclass
class SplitTriple:
    train: UpllDataset
    val: LabeledDataset
    test: LabeledDataset
    indices: tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass
class AuditReport:
    n: int
    empirical_unreliable_rate: float
    membership_rate: float
    flip_rate: float | None
    mean_candidate_size: float
    size_histogram: dict[int, int]
    per_class_counts: list[int]

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["size_histogram"] = {str(k): v for k, v in sorted(self.size_histogram.items())}
        return d


def _rng(seed, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def synth_gaussians(n: int, C: int, d: int, separation: float, seed: int) -> LabeledDataset:
    """Balanced isotropic unit-variance Gaussian classes.

    Means sit on a seeded random orthonormal frame, scaled so every pair of
    means is ``separation`` apart (exactly when d >= C).
    """
    if C < 2 or n < C or d < 2 or separation < 0:
        raise ConfigError(f"invalid synth sizes n={n} C={C} d={d} separation={separation}")
    rng = _rng(seed, 0)
    if d >= C:
        q, _ = np.linalg.qr(rng.standard_normal((d, C)))
        means = q.T * (separation / np.sqrt(2.0))
    else:
        dirs = rng.standard_normal((C, d))
        means = dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * (separation / np.sqrt(2.0))
    labels = rng.permutation(np.arange(n) % C)
    features = means[labels] + rng.standard_normal((n, d))
    return LabeledDataset(features, labels, C)


def load_csv(path, label_column: str) -> LabeledDataset:
    """Read a header+rows CSV. Labels are densely re-indexed, features z-scored."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataFormatError(f"{path}: no column named {label_column!r}")
        li = header.index(label_column)
        feat_cols = [i for i in range(len(header)) if i != li]
        raw_labels, rows = [], []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
            cell = row[li].strip()
            try:
                raw_labels.append(int(cell))
            except ValueError:
                raise DataFormatError(f"{path}: row {r}, column {label_column!r}: bad label {cell!r}") from None
            vals = []
            for c in feat_cols:
                cell = row[c].strip()
                if cell == "" or cell.lower() in ("na", "nan"):
                    raise DataFormatError(f"{path}: row {r}, column {header[c]!r}: missing value")
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataFormatError(f"{path}: row {r}, column {header[c]!r}: not numeric: {cell!r}") from None
            rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    X = np.array(rows, dtype=np.float64)
    if not np.isfinite(X).all():
        raise DataFormatError(f"{path}: non-finite feature values")
    classes, labels = np.unique(np.array(raw_labels), return_inverse=True)
    return LabeledDataset(standardize(X), labels, len(classes))


def standardize(X: np.ndarray) -> np.ndarray:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    out = np.zeros_like(X)
    ok = std > 0
    out[:, ok] = (X[:, ok] - mean[ok]) / std[ok]
    return out


def write_csv(ds: LabeledDataset, path, label_column: str = "label") -> None:
    d = ds.features.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(d)] + [label_column])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def split_4_1_1(n: int, seed: int):
    """Seeded shuffle cut into floor(4n/6) / floor(n/6) / remainder."""
    if n < 6:
        raise ConfigError(f"need at least 6 samples to split, got {n}")
    perm = _rng(seed, 1).permutation(n)
    n_train, n_val = (4 * n) // 6, n // 6
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def corrupt_labels(labels, C: int, mu: float, seed: int) -> np.ndarray:
    if not 0 <= mu < 1:
        raise ConfigError(f"mu must be in [0, 1), got {mu}")
    if C < 2:
        raise ConfigError("need at least 2 classes")
    labels = np.asarray(labels, dtype=np.int64)
    rng = _rng(seed, 2)
    flip = rng.random(len(labels)) < mu
    # offset in 1..C-1 picks each wrong class with probability 1/(C-1)
    offset = rng.integers(1, C, size=len(labels))
    return np.where(flip, (labels + offset) % C, labels)


def generate_candidates(noisy_labels, C: int, eta: float, seed: int) -> np.ndarray:
    if not 0 <= eta < 1:
        raise ConfigError(f"eta must be in [0, 1), got {eta}")
    noisy_labels = np.asarray(noisy_labels, dtype=np.int64)
    mask = _rng(seed, 3).random((len(noisy_labels), C)) < eta
    mask[np.arange(len(noisy_labels)), noisy_labels] = True
    return mask


def make_upll(ds: LabeledDataset, mu: float, eta: float, seed: int) -> UpllDataset:
    noisy = corrupt_labels(ds.labels, ds.class_count, mu, seed)
    cands = generate_candidates(noisy, ds.class_count, eta, seed)
    return UpllDataset(ds.features, cands, ds.class_count, ds.labels.copy(), noisy)


def synthesize(ds: LabeledDataset, mu: float, eta: float, seed: int) -> SplitTriple:
    """Split 4:1:1, then corrupt the training part only. Val/test stay clean."""
    tr, va, te = split_4_1_1(len(ds), seed)
    train = make_upll(ds.subset(tr), mu, eta, seed)
    return SplitTriple(train, ds.subset(va), ds.subset(te), (tr, va, te))


def audit(upll: UpllDataset) -> AuditReport:
    if upll.hidden_truth is None:
        raise AuditUnavailableError("audit needs hidden truth labels")
    n = len(upll)
    member = upll.reliability()
    sizes = upll.candidates.sum(axis=1)
    flip = None
    if upll.noisy_labels is not None:
        flip = float(np.mean(upll.noisy_labels != upll.hidden_truth)) if n else 0.0
    return AuditReport(
        n=n,
        empirical_unreliable_rate=float(1.0 - member.mean()) if n else 0.0,
        membership_rate=float(member.mean()) if n else 0.0,
        flip_rate=flip,
        mean_candidate_size=float(sizes.mean()) if n else 0.0,
        size_histogram=dict(sorted(Counter(int(s) for s in sizes).items())),
        per_class_counts=np.bincount(upll.hidden_truth, minlength=upll.class_count).tolist(),
    )


# --- on-disk formats -------------------------------------------------------

def write_upll(upll: UpllDataset, features_path, candidates_path) -> None:
    """Features go to a little-endian .npy; candidates to one JSON record per line."""
    np.save(features_path, np.ascontiguousarray(upll.features, dtype="<f8"))
    truth = upll.hidden_truth
    noisy = upll.noisy_labels
    with open(candidates_path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(upll.candidates):
            rec = {
                "index": i,
                "candidates": np.flatnonzero(row).tolist(),
                "hidden_truth": None if truth is None else int(truth[i]),
            }
            if noisy is not None:
                rec["noisy_label"] = int(noisy[i])
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_upll(features_path, candidates_path, class_count: int) -> UpllDataset:
    try:
        X = np.load(features_path).astype(np.float64)
        lines = Path(candidates_path).read_text(encoding="utf-8").splitlines()
    except (OSError, ValueError) as exc:
        raise DataFormatError(str(exc)) from exc
    cands = np.zeros((len(lines), class_count), dtype=bool)
    truth, noisy = [], []
    for ln, line in enumerate(lines, start=1):
        try:
            rec = json.loads(line)
            i = rec["index"]
            cands[i, rec["candidates"]] = True
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise DataFormatError(f"{candidates_path}: line {ln}: {exc}") from exc
        truth.append(rec.get("hidden_truth"))
        noisy.append(rec.get("noisy_label"))
    hidden = None if any(t is None for t in truth) else np.array(truth)
    nl = None if any(t is None for t in noisy) else np.array(noisy)
    return UpllDataset(X, cands, class_count, hidden, nl)


def write_labeled(ds: LabeledDataset, directory, name: str) -> None:
    """``<name>_features.npy`` and ``<name>_labels.npy`` (npz archives embed timestamps)."""
    directory = Path(directory)
    np.save(directory / f"{name}_features.npy", np.ascontiguousarray(ds.features, dtype="<f8"))
    np.save(directory / f"{name}_labels.npy", ds.labels.astype("<i8"))


def read_labeled(directory, name: str, class_count: int) -> LabeledDataset:
    directory = Path(directory)
    try:
        X = np.load(directory / f"{name}_features.npy")
        y = np.load(directory / f"{name}_labels.npy")
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"{directory}/{name}: {exc}") from exc
    return LabeledDataset(X, y, class_count)
