"""Heterogeneous IoT data: synthetic generation, CSV ingestion, partitioning.

Samples are stored column-wise in :class:`Samples` (features, labels, a
validity flag and a global sample id).  A :class:`PooledDataset` groups
samples by modality; :func:`partition_non_iid` turns it into per-client
:class:`ClientDataset` objects with an 80/20 train/validation split.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .encoder import ModalityKind, ModalitySpec
from .errors import ConfigurationError, IngestionError, UsageError
from .numeric import RngStream

log = logging.getLogger(__name__)

VALIDATION_FRACTION = 0.2


@dataclass
class Samples:
    x: np.ndarray
    y: np.ndarray
    valid: np.ndarray
    ids: np.ndarray

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def take(self, idx) -> "Samples":
        idx = np.asarray(idx, dtype=np.int64)
        return Samples(self.x[idx], self.y[idx], self.valid[idx], self.ids[idx])

    @classmethod
    def concat(cls, parts: list["Samples"], raw_dim: int) -> "Samples":
        if not parts:
            return cls(np.empty((0, raw_dim)), np.empty(0, np.int64), np.empty(0, bool), np.empty(0, np.int64))
        return cls(
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.valid for p in parts]),
            np.concatenate([p.ids for p in parts]),
        )


@dataclass
class ModalityPool:
    spec: ModalitySpec
    samples: Samples


@dataclass
class PooledDataset:
    pools: dict[str, ModalityPool]
    num_classes: int
    label_mapping: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(p.samples) for p in self.pools.values())

    @property
    def modalities(self) -> list[ModalitySpec]:
        return [p.spec for p in self.pools.values()]


@dataclass
class ClientDataset:
    client_id: int
    modality: ModalitySpec
    train: Samples
    validation: Samples

    @property
    def n_i(self) -> int:
        return len(self.train) + len(self.validation)

    def all_samples(self) -> Samples:
        return Samples.concat([self.train, self.validation], self.modality.raw_dim)


@dataclass(frozen=True)
class PartitionConfig:
    num_clients: int = 10
    skew_mode: Literal["by_source_type", "dirichlet"] = "dirichlet"
    dirichlet_alpha: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigurationError("num_clients must be >= 1")
        if self.skew_mode not in ("by_source_type", "dirichlet"):
            raise ConfigurationError(f"unknown skew_mode {self.skew_mode!r}")
        if self.dirichlet_alpha <= 0:
            raise ConfigurationError("dirichlet_alpha must be positive")


DEFAULT_MODALITIES = (
    ModalitySpec("telemetry", 8, ModalityKind.TELEMETRY),
    ModalitySpec("network_flow", 16, ModalityKind.NETWORK_FLOW),
    ModalitySpec("system_log", 12, ModalityKind.SYSTEM_LOG_NUMERIC),
)


def _class_means(num_classes: int, dim: int, separation: float, rng: RngStream) -> np.ndarray:
    # Orthonormal directions scaled by sep/sqrt(2) put every pair exactly
    # `separation` apart; falls back to random unit vectors when classes > dim.
    if num_classes <= dim:
        q, _ = np.linalg.qr(rng.generator.standard_normal((dim, num_classes)))
        dirs = q.T
    else:
        dirs = rng.generator.standard_normal((num_classes, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * (separation / math.sqrt(2.0))


def generate_synthetic(
    modalities=DEFAULT_MODALITIES,
    samples_per_modality: int = 2000,
    num_classes: int = 2,
    class_separation: float = 4.0,
    rng: RngStream | None = None,
    *,
    corruption_rate: float = 0.02,
    corruption_scale: float = 3.0,
) -> PooledDataset:
    """Class-conditional unit-variance Gaussians per modality.

    Classes are balanced within each modality.  A ``corruption_rate`` share
    of samples gets extra Gaussian noise and ``valid=False``.
    """
    if num_classes < 2:
        raise UsageError("num_classes must be >= 2")
    if samples_per_modality < num_classes:
        raise UsageError("samples_per_modality must be >= num_classes")
    if class_separation < 0:
        raise UsageError("class_separation must be non-negative")
    if not 0.0 <= corruption_rate <= 1.0:
        raise UsageError("corruption_rate must lie in [0, 1]")
    rng = rng or RngStream(0)
    pools: dict[str, ModalityPool] = {}
    next_id = 0
    for spec in modalities:
        if spec.modality_id in pools:
            raise UsageError(f"duplicate modality {spec.modality_id!r}")
        sub = rng.derive("modality", spec.modality_id)
        means = _class_means(num_classes, spec.raw_dim, class_separation, sub)
        y = np.arange(samples_per_modality, dtype=np.int64) % num_classes
        x = means[y] + sub.generator.standard_normal((samples_per_modality, spec.raw_dim))
        n_bad = int(round(corruption_rate * samples_per_modality))
        valid = np.ones(samples_per_modality, dtype=bool)
        bad = sub.generator.choice(samples_per_modality, size=n_bad, replace=False)
        valid[bad] = False
        x[bad] += corruption_scale * sub.generator.standard_normal((n_bad, spec.raw_dim))
        ids = np.arange(next_id, next_id + samples_per_modality, dtype=np.int64)
        next_id += samples_per_modality
        pools[spec.modality_id] = ModalityPool(spec, Samples(x, y, valid, ids))
    names = {"normal": 0, "attack": 1} if num_classes == 2 else {str(c): c for c in range(num_classes)}
    return PooledDataset(pools, num_classes, names)


def _split_counts(fractions: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of ``fractions * total`` to integers."""
    raw = fractions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _assign_modalities(pooled: PooledDataset, num_clients: int) -> dict[str, list[int]]:
    specs = pooled.modalities
    if num_clients < len(specs):
        raise UsageError(
            f"{num_clients} clients cannot cover {len(specs)} modalities (one modality per client)"
        )
    owners: dict[str, list[int]] = {s.modality_id: [] for s in specs}
    for cid in range(num_clients):
        owners[specs[cid % len(specs)].modality_id].append(cid)
    return owners


def split_train_validation(samples: Samples, rng: RngStream) -> tuple[Samples, Samples]:
    """Shuffle and hold out ``floor(0.2 * n)`` samples for validation."""
    n = len(samples)
    order = rng.permutation(n)
    n_val = int(math.floor(VALIDATION_FRACTION * n))
    return samples.take(np.sort(order[n_val:])), samples.take(np.sort(order[:n_val]))


def partition_non_iid(pooled: PooledDataset, config: PartitionConfig, rng: RngStream | None = None) -> list[ClientDataset]:
    """Split the pool into ``config.num_clients`` disjoint client datasets.

    Modalities are dealt to clients round-robin, so each client holds a
    single modality.  ``by_source_type`` then spreads a modality's samples
    evenly over its clients; ``dirichlet`` draws per-class client shares
    from ``Dirichlet(alpha)`` within each modality.
    """
    if len(pooled) == 0:
        raise UsageError("pooled dataset is empty")
    if config.num_clients > len(pooled):
        raise UsageError(f"{config.num_clients} clients but only {len(pooled)} samples")
    rng = rng or RngStream(config.seed)
    owners = _assign_modalities(pooled, config.num_clients)
    per_client: dict[int, list[np.ndarray]] = {}
    for mod_id, clients in owners.items():
        samples = pooled.pools[mod_id].samples
        sub = rng.derive("partition", mod_id)
        if config.skew_mode == "by_source_type":
            order = sub.permutation(len(samples))
            chunks = np.array_split(order, len(clients))
        else:
            buckets: list[list[np.ndarray]] = [[] for _ in clients]
            for cls in range(pooled.num_classes):
                cls_idx = np.flatnonzero(samples.y == cls)
                cls_idx = cls_idx[sub.permutation(cls_idx.size)]
                shares = sub.dirichlet(np.full(len(clients), config.dirichlet_alpha))
                counts = _split_counts(shares, cls_idx.size)
                bounds = np.concatenate([[0], np.cumsum(counts)])
                for j in range(len(clients)):
                    buckets[j].append(cls_idx[bounds[j] : bounds[j + 1]])
            chunks = [np.concatenate(b) for b in buckets]
        _repair_empty(chunks, mod_id)
        for cid, chunk in zip(clients, chunks):
            per_client[cid] = np.sort(chunk)

    result = []
    for cid in range(config.num_clients):
        mod_id = pooled.modalities[cid % len(pooled.modalities)].modality_id
        pool = pooled.pools[mod_id]
        own = pool.samples.take(per_client[cid])
        train, val = split_train_validation(own, rng.derive("split", cid))
        result.append(ClientDataset(cid, pool.spec, train, val))
    return result


def _repair_empty(chunks: list[np.ndarray], mod_id: str) -> None:
    for j, chunk in enumerate(chunks):
        if chunk.size:
            continue
        donor = max(range(len(chunks)), key=lambda i: (chunks[i].size, -i))
        if chunks[donor].size < 2:
            raise UsageError(f"modality {mod_id!r} has too few samples for its clients")
        log.warning("client slot %d of modality %r was empty; moved one sample from slot %d", j, mod_id, donor)
        chunks[j] = chunks[donor][-1:]
        chunks[donor] = chunks[donor][:-1]


def data_quality(ds: ClientDataset, num_bins: int = 16, *, valid_weight: float = 0.5, entropy_weight: float = 0.5) -> float:
    """Quality score Q in [0, 1] from valid-sample ratio and feature entropy.

    The entropy term is the mean over features of the Shannon entropy of an
    equal-width histogram on ``[min, max]``, divided by ``log(num_bins)``.
    Constant features contribute 0.
    """
    if num_bins < 2:
        raise UsageError("num_bins must be >= 2")
    samples = ds.all_samples() if isinstance(ds, ClientDataset) else ds
    n = len(samples)
    if n == 0:
        raise UsageError("dataset is empty")
    total = valid_weight + entropy_weight
    if total <= 0:
        raise ConfigurationError("quality weights must sum to a positive value")
    valid_ratio = float(np.count_nonzero(samples.valid)) / n
    entropies = []
    for col in samples.x.T:
        lo, hi = float(col.min()), float(col.max())
        if hi <= lo:
            entropies.append(0.0)
            continue
        counts, _ = np.histogram(col, bins=num_bins, range=(lo, hi))
        p = counts[counts > 0] / n
        entropies.append(float(-(p * np.log(p)).sum()) / math.log(num_bins))
    mean_entropy = float(np.mean(entropies)) if entropies else 0.0
    q = (valid_weight * valid_ratio + entropy_weight * mean_entropy) / total
    return min(1.0, max(0.0, q))


def min_max_scale(x: np.ndarray) -> np.ndarray:
    """Column-wise scaling to [0, 1]; constant columns map to 0. NaNs pass through."""
    lo = np.nanmin(x, axis=0)
    hi = np.nanmax(x, axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (x - lo) / span


def scale_clients(clients: list[ClientDataset]) -> list[ClientDataset]:
    """Per-client min-max scaling using each client's own train statistics."""
    out = []
    for c in clients:
        lo = c.train.x.min(axis=0)
        hi = c.train.x.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)

        def _scaled(s: Samples) -> Samples:
            return Samples((s.x - lo) / span, s.y, s.valid, s.ids)

        out.append(ClientDataset(c.client_id, c.modality, _scaled(c.train), _scaled(c.validation)))
    return out


# --- CSV ingestion ---------------------------------------------------------

ROLES = ("feature_numeric", "feature_categorical", "label", "ignore")


@dataclass
class CsvSchema:
    """Column-role mapping for :func:`load_csv`.

    Columns absent from ``columns`` are ignored.  ``normal_label`` is the
    raw label value mapped to class 0; other values follow in sorted order
    unless ``label_classes`` pins the full ordering.
    """

    columns: dict[str, str]
    normal_label: str | None = None
    label_classes: list[str] | None = None
    max_bad_fraction: float = 0.05

    def __post_init__(self):
        bad = {c: r for c, r in self.columns.items() if r not in ROLES}
        if bad:
            raise ConfigurationError(f"unknown column roles: {bad}")
        labels = [c for c, r in self.columns.items() if r == "label"]
        if len(labels) != 1:
            raise ConfigurationError(f"schema must name exactly one label column, got {labels}")

    @property
    def label_column(self) -> str:
        return next(c for c, r in self.columns.items() if r == "label")

    @classmethod
    def from_file(cls, path) -> "CsvSchema":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read schema {path}: {exc}") from exc
        if "columns" not in raw:
            raise ConfigurationError(f"schema {path} has no 'columns' mapping")
        return cls(**raw)


_MISSING = {"", "na", "nan", "null", "none", "-", "?"}


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in _MISSING


def load_csv(path, schema: CsvSchema, modality: ModalitySpec | None = None, *, modality_id: str | None = None,
             kind=ModalityKind.NETWORK_FLOW, id_offset: int = 0) -> PooledDataset:
    """Read a headed CSV into a single-modality pool.

    Numeric columns are min-max scaled over the whole file; categorical ones
    are one-hot encoded (categories sorted).  Rows with missing cells become
    ``valid=False`` with the gap filled by 0 after scaling.  Rows whose
    numeric cells fail to parse are dropped; more than
    ``schema.max_bad_fraction`` of them is an error.  When ``modality`` is
    given its ``raw_dim`` must match the encoded width.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestionError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise IngestionError(f"{path} has a header but no data rows")
    if schema.label_column not in header:
        raise IngestionError(f"label column {schema.label_column!r} missing from {path}")
    col_at = {name: i for i, name in enumerate(header)}
    missing_cols = [c for c, r in schema.columns.items() if r != "ignore" and c not in col_at]
    if missing_cols:
        raise IngestionError(f"columns {missing_cols} declared in schema but absent from {path}")
    numeric = [c for c in header if schema.columns.get(c) == "feature_numeric"]
    categorical = [c for c in header if schema.columns.get(c) == "feature_categorical"]
    label_i = col_at[schema.label_column]

    num_vals, cat_vals, labels, valid, bad_rows = [], [], [], [], []
    for line_no, row in enumerate(body, start=2):
        if len(row) != len(header) or _is_missing(row[label_i]):
            bad_rows.append(line_no)
            continue
        ok = True
        parsed = []
        for c in numeric:
            cell = row[col_at[c]]
            if _is_missing(cell):
                parsed.append(math.nan)
                continue
            try:
                v = float(cell)
            except ValueError:
                ok = False
                break
            if not math.isfinite(v):
                ok = False
                break
            parsed.append(v)
        if not ok:
            bad_rows.append(line_no)
            continue
        cats = [row[col_at[c]].strip() for c in categorical]
        num_vals.append(parsed)
        cat_vals.append(cats)
        labels.append(row[label_i].strip())
        valid.append(not any(math.isnan(v) for v in parsed) and not any(_is_missing(c) for c in cats))
    if len(bad_rows) > schema.max_bad_fraction * len(body):
        raise IngestionError(f"{len(bad_rows)} of {len(body)} rows unparseable in {path}", bad_rows)
    if bad_rows:
        log.warning("dropped %d unparseable rows from %s", len(bad_rows), path)
    if not labels:
        raise IngestionError(f"no usable rows in {path}")

    blocks = []
    if numeric:
        x_num = min_max_scale(np.array(num_vals, dtype=np.float64))
        blocks.append(np.nan_to_num(x_num, nan=0.0))
    for j, c in enumerate(categorical):
        levels = sorted({row[j] for row in cat_vals if not _is_missing(row[j])})
        onehot = np.zeros((len(cat_vals), len(levels)))
        pos = {lv: i for i, lv in enumerate(levels)}
        for r, row in enumerate(cat_vals):
            if row[j] in pos:
                onehot[r, pos[row[j]]] = 1.0
        blocks.append(onehot)
    if not blocks:
        raise IngestionError(f"schema declares no feature columns for {path}")
    x = np.hstack(blocks)

    mapping = label_mapping(labels, schema)
    y = np.array([mapping[v] for v in labels], dtype=np.int64)
    if modality is None:
        modality = ModalitySpec(modality_id or path.stem, x.shape[1], kind)
    elif modality.raw_dim != x.shape[1]:
        raise IngestionError(f"{path} encodes to {x.shape[1]} features but modality expects {modality.raw_dim}")
    ids = np.arange(id_offset, id_offset + len(y), dtype=np.int64)
    samples = Samples(x, y, np.array(valid, dtype=bool), ids)
    return PooledDataset({modality.modality_id: ModalityPool(modality, samples)}, max(2, len(mapping)), mapping)


def label_mapping(values: list[str], schema: CsvSchema) -> dict[str, int]:
    seen = sorted(set(values))
    if schema.label_classes is not None:
        unknown = [v for v in seen if v not in schema.label_classes]
        if unknown:
            raise IngestionError(f"labels {unknown} not listed in label_classes")
        return {v: i for i, v in enumerate(schema.label_classes)}
    normal = schema.normal_label
    if normal is None:
        normal = next((v for v in ("normal", "0", "benign") if v in seen), seen[0])
    ordered = [normal] + [v for v in seen if v != normal]
    return {v: i for i, v in enumerate(ordered)}


def merge_pools(parts: list[PooledDataset]) -> PooledDataset:
    """Combine single-modality pools that share one label mapping."""
    if not parts:
        raise UsageError("nothing to merge")
    mapping = parts[0].label_mapping
    pools: dict[str, ModalityPool] = {}
    for p in parts:
        if p.label_mapping != mapping:
            raise IngestionError("label mappings differ between files; pin schema.label_classes")
        for mid, pool in p.pools.items():
            if mid in pools:
                raise ConfigurationError(f"modality {mid!r} appears twice")
            pools[mid] = pool
    return PooledDataset(pools, max(p.num_classes for p in parts), mapping)


def write_columnar(clients: list[ClientDataset], path) -> None:
    """Dump client datasets as tab-separated text for inspection.

    Columns: ``client_id, split, sample_id, modality, label, valid, x0..``;
    feature columns are padded with empty cells up to the widest modality.
    """
    width = max(c.modality.raw_dim for c in clients)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(["client_id", "split", "sample_id", "modality", "label", "valid"] + [f"x{i}" for i in range(width)])
        for c in clients:
            for split, s in (("train", c.train), ("validation", c.validation)):
                for r in range(len(s)):
                    feats = [repr(float(v)) for v in s.x[r]] + [""] * (width - s.x.shape[1])
                    w.writerow([c.client_id, split, int(s.ids[r]), c.modality.modality_id, int(s.y[r]), int(s.valid[r])] + feats)
