"""File formats: EMB1 binary embeddings, JSON manifests / attribute banks /
run results / confusion reports, and accuracy metrics.

All formats are little-endian / UTF-8 and round-trip bit-exactly: floats
in JSON are emitted with ``repr`` precision (exact for float64), EMB1
payloads are float32 row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .state import (
    AttributeBank,
    AttributeRecord,
    FeatureMatrix,
)

SCHEMA_VERSION = 1

EMB1_MAGIC = b"EMB1"
_EMB1_HEADER = struct.Struct("<4sIII")  # magic, N, D, dtype
_EMB1_DTYPE_F32 = 1

# Rows are renormalized on load when within this distance of unit norm;
# anything further out is rejected as corrupt.
LOAD_NORM_TOL = 1e-3


class FormatError(ValueError):
    """A file failed a header, size, or content check."""


# ---------------------------------------------------------------------------
# EMB1 binary embeddings
# ---------------------------------------------------------------------------

def write_embeddings(data: np.ndarray, path) -> None:
    """Write an (N, D) array as EMB1: 16-byte header then float32 rows."""
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64), dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-d array, got shape {arr.shape}")
    n, d = arr.shape
    with open(path, "wb") as f:
        f.write(_EMB1_HEADER.pack(EMB1_MAGIC, n, d, _EMB1_DTYPE_F32))
        f.write(arr.astype("<f4").tobytes(order="C"))


def read_embeddings(path) -> np.ndarray:
    """Read an EMB1 file into a float64 (N, D) array (no norm checks)."""
    with open(path, "rb") as f:
        header = f.read(_EMB1_HEADER.size)
        if len(header) < _EMB1_HEADER.size:
            raise FormatError(f"truncated header: {len(header)} bytes")
        magic, n, d, dtype = _EMB1_HEADER.unpack(header)
        if magic != EMB1_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {EMB1_MAGIC!r}")
        if dtype != _EMB1_DTYPE_F32:
            raise FormatError(f"unsupported dtype code {dtype}")
        expected = n * d * 4
        payload = f.read()
    if len(payload) != expected:
        raise FormatError(f"expected {expected} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)


def parse_embeddings(blob: bytes) -> np.ndarray:
    """Decode an EMB1 byte string (e.g. an HTTP response body)."""
    if len(blob) < _EMB1_HEADER.size:
        raise FormatError(f"truncated header: {len(blob)} bytes")
    magic, n, d, dtype = _EMB1_HEADER.unpack(blob[: _EMB1_HEADER.size])
    if magic != EMB1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EMB1_MAGIC!r}")
    if dtype != _EMB1_DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}")
    payload = blob[_EMB1_HEADER.size:]
    expected = n * d * 4
    if len(payload) != expected:
        raise FormatError(f"expected {expected} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)


def save_features(features: FeatureMatrix, path) -> None:
    write_embeddings(features.data, path)


def load_features(path, ids=None, manifest: "DatasetManifest | None" = None) -> FeatureMatrix:
    """Load an EMB1 file as a FeatureMatrix.

    Rows within ``LOAD_NORM_TOL`` of unit norm are renormalized exactly;
    larger deviations, non-finite values, or a row count that disagrees
    with the manifest are errors.
    """
    data = read_embeddings(path)
    if manifest is not None:
        if data.shape[0] != len(manifest.images):
            raise FormatError(
                f"{data.shape[0]} rows but manifest lists {len(manifest.images)} images"
            )
        ids = [im.id for im in manifest.images]
    if not np.all(np.isfinite(data)):
        bad = np.argwhere(~np.isfinite(data))[0]
        raise FormatError(f"non-finite value at row {bad[0]}, column {bad[1]}")
    norms = np.linalg.norm(data, axis=1)
    off = np.abs(norms - 1.0)
    if np.any(off > LOAD_NORM_TOL):
        i = int(np.argmax(off))
        raise FormatError(f"row {i} norm {float(norms[i])!r} outside tolerance")
    data = data / norms[:, None]
    return FeatureMatrix(data, ids)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageEntry:
    id: str
    class_index: int | None = None
    split: str | None = None


@dataclass
class DatasetManifest:
    """The image set, class list, and optional supervision for one run."""

    dataset_name: str
    classes: list[str]
    domain_word: str
    images: list[ImageEntry]
    fewshot_labels: list[tuple[str, int]] = field(default_factory=list)
    seen_classes: list[str] | None = None

    def __post_init__(self):
        m = len(self.classes)
        seen_ids = set()
        for im in self.images:
            if im.id in seen_ids:
                raise FormatError(f"duplicate image id {im.id!r}")
            seen_ids.add(im.id)
            if im.class_index is not None and not (0 <= im.class_index < m):
                raise FormatError(f"image {im.id!r} class index {im.class_index} out of range")
        for img_id, j in self.fewshot_labels:
            if not (0 <= j < m):
                raise FormatError(f"fewshot label for {img_id!r} class index {j} out of range")
        if self.seen_classes is not None:
            unknown = [c for c in self.seen_classes if c not in self.classes]
            if unknown:
                raise FormatError(f"seen classes not in class list: {unknown}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def truth(self) -> np.ndarray | None:
        """Ground-truth class indices aligned with ``images``, or None if
        any image lacks one."""
        if any(im.class_index is None for im in self.images):
            return None
        return np.array([im.class_index for im in self.images], dtype=np.int64)


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "dataset_name": manifest.dataset_name,
        "classes": manifest.classes,
        "domain_word": manifest.domain_word,
        "images": [
            {k: v for k, v in
             (("id", im.id), ("class_index", im.class_index), ("split", im.split))
             if v is not None}
            for im in manifest.images
        ],
    }
    if manifest.fewshot_labels:
        doc["fewshot_labels"] = [
            {"id": i, "class_index": j} for i, j in manifest.fewshot_labels
        ]
    if manifest.seen_classes is not None:
        doc["seen_classes"] = manifest.seen_classes
    _dump_json(doc, path)


def load_manifest(path) -> DatasetManifest:
    doc = _load_json(path)
    images = [
        ImageEntry(str(e["id"]), e.get("class_index"), e.get("split"))
        for e in doc["images"]
    ]
    fewshot = [(str(e["id"]), int(e["class_index"])) for e in doc.get("fewshot_labels", [])]
    return DatasetManifest(
        dataset_name=doc["dataset_name"],
        classes=list(doc["classes"]),
        domain_word=doc["domain_word"],
        images=images,
        fewshot_labels=fewshot,
        seen_classes=doc.get("seen_classes"),
    )


# ---------------------------------------------------------------------------
# Attribute bank
# ---------------------------------------------------------------------------

def save_bank(bank: AttributeBank, path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "classes": bank.classes,
        "attributes": [
            [
                {
                    "text": r.text,
                    "embedding": [float(v) for v in r.embedding],
                    "origin": r.origin,
                    "iteration_added": r.iteration_added,
                }
                for r in recs
            ]
            for recs in bank.attrs
        ],
    }
    _dump_json(doc, path)


def load_bank(path) -> AttributeBank:
    doc = _load_json(path)
    attrs = [
        [
            AttributeRecord(
                text=r["text"],
                embedding=np.array(r["embedding"], dtype=np.float64),
                origin=r["origin"],
                iteration_added=int(r["iteration_added"]),
            )
            for r in recs
        ]
        for recs in doc["attributes"]
    ]
    return AttributeBank(classes=list(doc["classes"]), attrs=attrs)


# ---------------------------------------------------------------------------
# Run results
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    """Final labels plus optional soft assignments, metrics, the
    per-iteration objective traces, and a reference to the bank snapshot."""

    image_ids: list[str]
    labels: np.ndarray
    z: np.ndarray | None = None
    metrics: dict[str, float] | None = None
    objective_traces: list[list[float]] = field(default_factory=list)
    bank_ref: str | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.z is not None:
            self.z = np.asarray(self.z, dtype=np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RunResult):
            return NotImplemented
        if self.image_ids != other.image_ids:
            return False
        if not np.array_equal(self.labels, other.labels):
            return False
        if (self.z is None) != (other.z is None):
            return False
        if self.z is not None and not np.array_equal(self.z, other.z):
            return False
        if self.metrics != other.metrics:
            return False
        if self.objective_traces != other.objective_traces:
            return False
        return self.bank_ref == other.bank_ref


def save_result(result: RunResult, path) -> None:
    doc: dict = {
        "schema_version": SCHEMA_VERSION,
        "image_ids": result.image_ids,
        "labels": [int(v) for v in result.labels],
        "objective_traces": [[float(v) for v in t] for t in result.objective_traces],
    }
    if result.z is not None:
        doc["z"] = [[float(v) for v in row] for row in result.z]
    if result.metrics is not None:
        doc["metrics"] = {k: float(v) for k, v in result.metrics.items()}
    if result.bank_ref is not None:
        doc["bank_ref"] = result.bank_ref
    _dump_json(doc, path)


def load_result(path) -> RunResult:
    doc = _load_json(path)
    return RunResult(
        image_ids=[str(i) for i in doc["image_ids"]],
        labels=np.array(doc["labels"], dtype=np.int64),
        z=np.array(doc["z"], dtype=np.float64) if "z" in doc else None,
        metrics=doc.get("metrics"),
        objective_traces=[list(map(float, t)) for t in doc["objective_traces"]],
        bank_ref=doc.get("bank_ref"),
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def compute_metrics(labels, manifest: DatasetManifest) -> dict[str, float]:
    """Top-1 accuracy and unweighted mean per-class accuracy.

    Classes with no ground-truth images are left out of the per-class
    mean.  Raises when any evaluated image lacks ground truth.
    """
    truth = manifest.truth()
    if truth is None:
        raise ValueError("ground truth missing for some images")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != truth.shape:
        raise ValueError(f"{labels.shape[0]} labels for {truth.shape[0]} images")
    correct = labels == truth
    top1 = float(np.mean(correct))
    per_class = []
    for j in range(manifest.num_classes):
        mask = truth == j
        if np.any(mask):
            per_class.append(float(np.mean(correct[mask])))
    return {
        "top1_accuracy": top1,
        "mean_per_class_accuracy": float(np.mean(per_class)),
    }


# ---------------------------------------------------------------------------
# Confusion report dump (audit format; the miner lives in confusion.py)
# ---------------------------------------------------------------------------

def save_confusion_report(report, path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "alpha": float(report.alpha),
        "coverage_fraction": float(report.coverage_fraction),
        "entries": [
            {"image_index": int(e.image_index), "pair": list(e.pair), "margin": float(e.margin)}
            for e in report.entries
        ],
        "pair_counts": {f"{a},{b}": int(c) for (a, b), c in sorted(report.pair_counts.items())},
        "selected_pairs": [list(p) for p in report.selected_pairs],
    }
    _dump_json(doc, path)


def load_confusion_report(path):
    from .confusion import ConfusionEntry, ConfusionReport

    doc = _load_json(path)
    entries = [
        ConfusionEntry(int(e["image_index"]), (int(e["pair"][0]), int(e["pair"][1])),
                       float(e["margin"]))
        for e in doc["entries"]
    ]
    counts = {}
    for key, c in doc["pair_counts"].items():
        a, b = key.split(",")
        counts[(int(a), int(b))] = int(c)
    return ConfusionReport(
        entries=entries,
        pair_counts=counts,
        selected_pairs=[tuple(p) for p in doc["selected_pairs"]],
        alpha=float(doc["alpha"]),
        coverage_fraction=float(doc["coverage_fraction"]),
    )


# ---------------------------------------------------------------------------
# Bank export for embedding-space analysis (t-SNE etc. happens elsewhere)
# ---------------------------------------------------------------------------

def export_bank_embeddings(bank: AttributeBank, out_prefix) -> tuple[str, str]:
    """Dump every attribute embedding to ``<prefix>.emb1`` plus a JSON
    sidecar with (class, text, origin, iteration) per row, in row order."""
    rows = []
    meta = []
    for j, recs in enumerate(bank.attrs):
        for r in recs:
            rows.append(r.embedding)
            meta.append({
                "class_index": j,
                "class_name": bank.classes[j],
                "text": r.text,
                "origin": r.origin,
                "iteration_added": r.iteration_added,
            })
    if not rows:
        raise ValueError("bank has no attributes to export")
    emb_path = f"{out_prefix}.emb1"
    meta_path = f"{out_prefix}.meta.json"
    write_embeddings(np.stack(rows), emb_path)
    _dump_json({"schema_version": SCHEMA_VERSION, "rows": meta}, meta_path)
    return emb_path, meta_path


# ---------------------------------------------------------------------------

def _dump_json(doc, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, ensure_ascii=False, indent=1)
        f.write("\n")


def _load_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
