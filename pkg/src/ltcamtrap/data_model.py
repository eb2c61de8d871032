"""Manifest schema and the dataset-construction pipeline.

A manifest is a flat list of 3-frame sequences. Construction runs in the
order used for the benchmark datasets:

    select_frames -> split_train_test -> filter_categories -> balance_test_domains

Every step is a pure function of its inputs and a seed.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path


import numpy as np

from .errors import ConfigError, ContractViolation, MalformedImageError

log = logging.getLogger(__name__)

DOMAINS = ("day", "night")
SPLITS = ("train", "test", "unassigned")
FRAMES_PER_SEQUENCE = 3


@dataclass(frozen=True)
class SequenceSample:
    sequence_id: str
    frame_paths: tuple
    class_label: int
    domain: str
    location_id: str = ""
    split: str = "unassigned"

    def __post_init__(self):
        object.__setattr__(self, "frame_paths", tuple(self.frame_paths))
        if len(self.frame_paths) != FRAMES_PER_SEQUENCE:
            raise ContractViolation(
                f"{self.sequence_id}: expected {FRAMES_PER_SEQUENCE} frames, "
                f"got {len(self.frame_paths)}")
        if self.domain not in DOMAINS:
            raise ContractViolation(f"{self.sequence_id}: unknown domain {self.domain!r}")
        if self.split not in SPLITS:
            raise ContractViolation(f"{self.sequence_id}: unknown split {self.split!r}")
        if int(self.class_label) < 0:
            raise ContractViolation(f"{self.sequence_id}: negative class label")

    def with_split(self, split):
        return dataclasses.replace(self, split=split)

    def to_json(self):
        return {
            "id": self.sequence_id,
            "frames": list(self.frame_paths),
            "class": int(self.class_label),
            "domain": self.domain,
            "location": self.location_id,
            "split": self.split,
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            sequence_id=d["id"],
            frame_paths=tuple(d["frames"]),
            class_label=int(d["class"]),
            domain=d["domain"],
            location_id=d.get("location", ""),
            split=d.get("split", "unassigned"),
        )


@dataclass(frozen=True)
class DatasetManifest:
    """Sequences plus class names.

    ``root`` is the directory frame paths are relative to; it is not
    serialized (the manifest file's own directory takes its place on load).
    """
    samples: tuple
    class_names: tuple
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        C = len(self.class_names)
        for s in self.samples:
            if s.class_label >= C:
                raise ContractViolation(
                    f"{s.sequence_id}: class {s.class_label} out of range for C={C}")

    @property
    def num_classes(self):
        return len(self.class_names)

    def split(self, name):
        return [s for s in self.samples if s.split == name]

    def count_table(self, split="train"):
        """n[c][z]: sequences of class c in domain z (columns ordered as DOMAINS)."""
        n = np.zeros((self.num_classes, len(DOMAINS)), dtype=np.int64)
        for s in self.samples:
            if s.split == split:
                n[s.class_label, DOMAINS.index(s.domain)] += 1
        return n

    @property
    def counts(self):
        return self.count_table("train")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def by_id(self):
        return {s.sequence_id: s for s in self.samples}

    def resolve(self, path):
        root = self.root if self.root is not None else Path(".")
        return Path(root) / path

    # serialization -----------------------------------------------------

    def to_json(self):
        return {
            "classes": list(self.class_names),
            "samples": [s.to_json() for s in self.samples],
        }

    def dumps(self):
        return json.dumps(self.to_json(), indent=1) + "\n"

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path

    @classmethod
    def from_json(cls, d, root=None):
        return cls(
            samples=tuple(SequenceSample.from_json(s) for s in d["samples"]),
            class_names=tuple(d["classes"]),
            root=None if root is None else Path(root),
        )

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path) as f:
            return cls.from_json(json.load(f), root=path.parent)


@dataclass(frozen=True)
class DomainStats:
    """Per-class dominant domain(s) and max/min domain count ratio."""
    counts: np.ndarray
    dominant: tuple
    ratio: np.ndarray

    def is_dominant(self, class_label, domain):
        return domain in self.dominant[class_label]


# ---------------------------------------------------------------------------
# operations


def detect_domain(image, tolerance=0):
    """Return "night" when all three channels agree to within ``tolerance``.

    IR frames are stored as gray RGB, so the largest per-pixel channel spread
    is the discriminating statistic.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise MalformedImageError(f"expected an HxWx3 image, got shape {image.shape}")
    if tolerance < 0:
        raise ConfigError("tolerance must be non-negative")
    spread = image.max(axis=-1).astype(np.float64) - image.min(axis=-1)
    if spread.size == 0 or spread.max() <= tolerance:
        return "night"
    return "day"


def select_frames(raw_sequence):
    """First three frames of a time-ordered sequence, or None if it is too short."""
    frames = list(raw_sequence)
    if len(frames) < FRAMES_PER_SEQUENCE:
        return None
    return frames[:FRAMES_PER_SEQUENCE]


def samples_from_sequences(raw_sequences, root, tolerance=0):
    """Build unassigned samples from raw frame lists.

    ``raw_sequences`` is an iterable of dicts with keys ``id``, ``frames``
    (time-ordered paths relative to ``root``), ``class`` and optionally
    ``location``. Sequences with fewer than three frames are skipped and
    their ids returned in the second element.
    """
    from PIL import Image

    samples, rejected = [], []
    for raw in raw_sequences:
        frames = select_frames(raw["frames"])
        if frames is None:
            rejected.append(raw["id"])
            continue
        domains = set()
        for p in frames:
            with Image.open(Path(root) / p) as im:
                domains.add(detect_domain(np.asarray(im.convert("RGB")), tolerance))
        if len(domains) != 1:
            raise MalformedImageError(f"{raw['id']}: frames disagree on domain")
        samples.append(SequenceSample(
            sequence_id=raw["id"], frame_paths=tuple(frames),
            class_label=int(raw["class"]), domain=domains.pop(),
            location_id=raw.get("location", "")))
    return samples, rejected


def _stratum_rng(seed, class_label, domain):
    return np.random.default_rng([int(seed), int(class_label), DOMAINS.index(domain)])


def _strata(samples):
    strata = {}
    for s in samples:
        strata.setdefault((s.class_label, s.domain), []).append(s)
    return {k: sorted(v, key=lambda s: s.sequence_id) for k, v in sorted(
        strata.items(), key=lambda kv: (kv[0][0], DOMAINS.index(kv[0][1])))}


def train_count(n, fraction):
    """ceil(fraction * n); the small slack keeps 0.6 * 100 from rounding up to 61."""
    return min(n, math.ceil(fraction * n - 1e-9))


def split_train_test(manifest, train_fraction, seed):
    """Stratified (class x domain) random split; train gets ceil(fraction * n)."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    assigned = {}
    for (c, z), group in _strata(manifest.samples).items():
        order = _stratum_rng(seed, c, z).permutation(len(group))
        k = train_count(len(group), train_fraction)
        for rank, idx in enumerate(order):
            assigned[group[idx].sequence_id] = "train" if rank < k else "test"
    samples = [s.with_split(assigned[s.sequence_id]) for s in manifest.samples]
    return manifest.replace(samples=samples)


def filter_categories(manifest):
    """Keep classes present in every (domain x split) cell and re-index them densely."""
    cells = np.zeros((manifest.num_classes, len(DOMAINS), 2), dtype=np.int64)
    for s in manifest.samples:
        if s.split in ("train", "test"):
            cells[s.class_label, DOMAINS.index(s.domain), ("train", "test").index(s.split)] += 1
    keep = [c for c in range(manifest.num_classes) if (cells[c] >= 1).all()]
    if not keep:
        raise ConfigError("no class has samples in every domain and split")
    remap = {old: new for new, old in enumerate(keep)}
    samples = [dataclasses.replace(s, class_label=remap[s.class_label])
               for s in manifest.samples if s.class_label in remap]
    names = [manifest.class_names[c] for c in keep]
    dropped = [manifest.class_names[c] for c in range(manifest.num_classes) if c not in remap]
    if dropped:
        log.info("filter_categories dropped %d classes: %s", len(dropped), dropped)
    return manifest.replace(samples=samples, class_names=names)


def balance_test_domains(manifest, seed, report=None):
    """Subsample each class's over-represented test domain down to the other one.

    A class with no test samples in one domain loses all its test samples
    (training samples are kept); a message is appended to ``report`` when a
    list is supplied, and logged either way.
    """
    test = [s for s in manifest.samples if s.split == "test"]
    by_class = {}
    for (c, z), group in _strata(test).items():
        by_class.setdefault(c, {})[z] = group
    drop = set()
    for c, groups in by_class.items():
        sizes = {z: len(groups.get(z, ())) for z in DOMAINS}
        target = min(sizes.values())
        if target == 0:
            msg = (f"class {c} ({manifest.class_names[c]}) has test counts {sizes}; "
                   "excluded from the test set")
            log.warning(msg)
            if report is not None:
                report.append(msg)
            drop.update(s.sequence_id for g in groups.values() for s in g)
            continue
        for z in DOMAINS:
            group = groups[z]
            if len(group) > target:
                rng = np.random.default_rng([int(seed), int(c), DOMAINS.index(z), 1])
                kept = set(rng.choice(len(group), size=target, replace=False).tolist())
                drop.update(s.sequence_id for i, s in enumerate(group) if i not in kept)
    samples = [s for s in manifest.samples if s.sequence_id not in drop]
    return manifest.replace(samples=samples)


def build_benchmark(manifest, train_fraction, seed, report=None):
    """split -> filter -> balance, the full construction pipeline on unassigned samples."""
    m = split_train_test(manifest, train_fraction, seed)
    m = filter_categories(m)
    return balance_test_domains(m, seed, report=report)


def compute_stats(manifest_or_counts):
    counts = manifest_or_counts
    if isinstance(manifest_or_counts, DatasetManifest):
        counts = manifest_or_counts.counts
    counts = np.asarray(counts)
    dominant = []
    ratio = np.empty(len(counts), dtype=np.float64)
    for c, row in enumerate(counts):
        top = row.max()
        dominant.append(frozenset(z for z, n in zip(DOMAINS, row) if n == top))
        lo = row.min()
        if lo > 0:
            ratio[c] = top / lo
        else:
            ratio[c] = math.inf if top > 0 else math.nan
    return DomainStats(counts=counts, dominant=tuple(dominant), ratio=ratio)


def check_manifest(manifest):
    """Raise ContractViolation if the benchmark invariants do not hold.

    Used after construction: every class has train and test samples in both
    domains, test domains are balanced per class, splits are disjoint.
    """
    ids = [s.sequence_id for s in manifest.samples]
    if len(ids) != len(set(ids)):
        raise ContractViolation("duplicate sequence ids")
    train = manifest.count_table("train")
    test = manifest.count_table("test")
    if (train < 1).any():
        raise ContractViolation("a class lacks training samples in some domain")
    if (test < 1).any():
        raise ContractViolation("a class lacks test samples in some domain")
    if (test[:, 0] != test[:, 1]).any():
        raise ContractViolation("test set is not domain-balanced")
