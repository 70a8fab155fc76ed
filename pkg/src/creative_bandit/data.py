"""Dataset layer: impression-log and feature-file schemas, a synthetic
creative-ranking generator with ground-truth CTRs, product-level splitting,
and the mushroom benchmark loader.

File formats (UTF-8, LF, headers required):

* impressions.csv  - product_id, creative_id, day, click; rows in logged order
* features.jsonl   - one {"creative_id": ..., "vector": [...]} per line
* ground_truth.csv - product_id, creative_id, true_ctr
* meta.json        - generator provenance, notably the logging policy
"""

from __future__ import annotations

import csv
import json
import math
import pathlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import rng_stream
from .exceptions import (
    InvalidClick,
    MissingFeature,
    ParseError,
    WrongColumnCount,
)
from .prior import ProductGroup

IMPRESSION_COLUMNS = ("product_id", "creative_id", "day", "click")


class ImpressionRecord(NamedTuple):
    """One logged display event."""

    product_id: str
    creative_id: str
    day: int
    click: int


# ---------------------------------------------------------------------------
# Synthetic creative-ranking generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the synthetic creative-ranking environment.

    Candidate counts follow min + Poisson(mean - min) truncated at max
    (defaults mirror the 3 / 3.4 / 11 shape of real candidate sets); lifetimes
    are uniform in [days_min, days_max] which must stay within the 5..14-day
    aligned window; per-day traffic is Poisson. Each creative's true CTR is
    ``ctr_scale * sigmoid(f @ weights + offset)`` clipped to
    [ctr_min, ctr_max]; ``best_worst_ratio`` optionally rescales every
    product's CTRs so best/worst hits a planted ratio. Logging is uniform
    over candidates, which is what makes downstream replay unbiased.
    """

    products: int = 1000
    feature_dim: int = 8
    creatives_min: int = 3
    creatives_mean: float = 3.4
    creatives_max: int = 11
    days_min: int = 5
    days_max: int = 14
    impressions_per_day: float = 40.0
    weights: tuple | None = None
    offset_noise: float = 0.0
    ctr_scale: float = 0.06
    ctr_min: float = 0.001
    ctr_max: float = 0.2
    best_worst_ratio: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.products < 1:
            raise ValueError("products must be >= 1")
        if self.creatives_min < 2:
            raise ValueError("creatives_min must be >= 2")
        if not (self.creatives_min <= self.creatives_mean <= self.creatives_max):
            raise ValueError("need creatives_min <= creatives_mean <= creatives_max")
        if not (5 <= self.days_min <= self.days_max <= 14):
            raise ValueError("lifetimes must lie within the 5..14 day window")
        if self.impressions_per_day <= 0:
            raise ValueError("impressions_per_day must be positive")
        if not (0 < self.ctr_min < self.ctr_max <= 1):
            raise ValueError("need 0 < ctr_min < ctr_max <= 1")
        if self.best_worst_ratio is not None and self.best_worst_ratio <= 1:
            raise ValueError("best_worst_ratio must exceed 1")

    def weight_vector(self) -> np.ndarray:
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (self.feature_dim,):
                raise ValueError("weights must match feature_dim")
            return w
        w = rng_stream(self.seed, 0).standard_normal(self.feature_dim)
        return w / np.linalg.norm(w)


@dataclass
class SyntheticDataset:
    """Generated impressions with their features and ground-truth CTRs."""

    impressions: list  # ImpressionRecord in logged order
    features: dict  # creative_id -> np.ndarray (d,)
    true_ctr: dict  # creative_id -> float
    config: GeneratorConfig

    @property
    def product_ids(self) -> list:
        seen = dict.fromkeys(rec.product_id for rec in self.impressions)
        return list(seen)

    def subset(self, product_ids) -> "SyntheticDataset":
        wanted = set(product_ids)
        impressions = [r for r in self.impressions if r.product_id in wanted]
        keep = {r.creative_id for r in impressions}
        return SyntheticDataset(
            impressions=impressions,
            features={cid: v for cid, v in self.features.items() if cid in keep},
            true_ctr={cid: v for cid, v in self.true_ctr.items() if cid in keep},
            config=self.config,
        )

    def write(self, root):
        root = pathlib.Path(root)
        root.mkdir(parents=True, exist_ok=True)
        write_impressions(root / "impressions.csv", self.impressions)
        write_features(root / "features.jsonl", self.features)
        write_truth(root / "ground_truth.csv", self.impressions, self.true_ctr)
        (root / "meta.json").write_text(
            json.dumps(
                {"logging_policy": "uniform", "seed": self.config.seed,
                 "products": self.config.products, "feature_dim": self.config.feature_dim},
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate(config: GeneratorConfig) -> SyntheticDataset:
    """Sample a uniformly-logged synthetic dataset with known true CTRs.

    Every product gets its own random stream, so regenerating with the same
    config is byte-stable and generation may be sharded by product.
    """
    w = config.weight_vector()
    impressions: list = []
    features: dict = {}
    true_ctr: dict = {}

    for p in range(config.products):
        pid = f"p{p:06d}"
        rng = rng_stream(config.seed, 1, p)
        m = config.creatives_min + int(rng.poisson(config.creatives_mean - config.creatives_min))
        m = min(m, config.creatives_max)
        F = rng.standard_normal((m, config.feature_dim))
        offsets = (
            config.offset_noise * rng.standard_normal(m) if config.offset_noise else np.zeros(m)
        )
        ctr = np.clip(
            config.ctr_scale * _sigmoid(F @ w + offsets), config.ctr_min, config.ctr_max
        )
        if config.best_worst_ratio is not None:
            ctr = _plant_ratio(ctr, config)
        cids = tuple(f"{pid}_c{j}" for j in range(m))
        for j, cid in enumerate(cids):
            features[cid] = F[j]
            true_ctr[cid] = float(ctr[j])

        days = int(rng.integers(config.days_min, config.days_max + 1))
        counts = rng.poisson(config.impressions_per_day, size=days)
        total = int(counts.sum())
        choices = rng.integers(m, size=total)
        clicks = (rng.random(total) < ctr[choices]).astype(np.int64)
        day_col = np.repeat(np.arange(days), counts)
        impressions.extend(
            ImpressionRecord(pid, cids[choices[i]], int(day_col[i]), int(clicks[i]))
            for i in range(total)
        )
    return SyntheticDataset(impressions, features, true_ctr, config)


def _plant_ratio(ctr: np.ndarray, config: GeneratorConfig) -> np.ndarray:
    """Rescale one product's CTRs so max/min equals the configured ratio."""
    ratio = config.best_worst_ratio
    lo = config.ctr_scale / (1.0 + ratio)
    hi = lo * ratio
    span = float(ctr.max() - ctr.min())
    if span < 1e-12:
        out = np.linspace(lo, hi, num=ctr.size)
    else:
        out = lo + (ctr - ctr.min()) / span * (hi - lo)
    return np.clip(out, config.ctr_min, config.ctr_max)


def build_groups(impressions, features) -> list:
    """Aggregate a log into per-product training groups.

    Products whose log touches fewer than two creatives cannot be ranked and
    are dropped.
    """
    stats: dict = {}
    order: dict = {}
    for pid, cid, _day, click in impressions:
        order.setdefault(pid, len(order))
        imp_clk = stats.setdefault(pid, {}).setdefault(cid, [0, 0])
        imp_clk[0] += 1
        imp_clk[1] += click
    groups = []
    for pid in sorted(stats):
        per_creative = stats[pid]
        if len(per_creative) < 2:
            continue
        cids = tuple(sorted(per_creative))
        for cid in cids:
            if cid not in features:
                raise MissingFeature(f"creative {cid!r} has no feature vector")
        groups.append(
            ProductGroup(
                product_id=pid,
                creative_ids=cids,
                features=np.array([features[c] for c in cids]),
                impressions=np.array([per_creative[c][0] for c in cids]),
                clicks=np.array([per_creative[c][1] for c in cids]),
            )
        )
    return groups


# ---------------------------------------------------------------------------
# Train/validation/test split
# ---------------------------------------------------------------------------


def split(product_ids, fractions, seed: int = 0):
    """Partition products into train/val/test by largest-remainder rounding.

    Deterministic given the seed; the split is by product, never by
    impression, so no product's history straddles two sets.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("fractions must be three nonnegative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    ids = sorted(set(product_ids))
    rng = rng_stream(seed, 2)
    perm = rng.permutation(len(ids))
    n = len(ids)
    raw = [f * n for f in fractions]
    sizes = [math.floor(r) for r in raw]
    remainders = sorted(range(3), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in remainders[: n - sum(sizes)]:
        sizes[i] += 1
    out = []
    start = 0
    for size in sizes:
        out.append({ids[perm[i]] for i in range(start, start + size)})
        start += size
    return tuple(out)


# ---------------------------------------------------------------------------
# Impression / feature file IO
# ---------------------------------------------------------------------------


def write_impressions(path, impressions):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(IMPRESSION_COLUMNS)
        for pid, cid, day, click in impressions:
            writer.writerow([pid, cid, day, click])


def load_impressions(path, columns: dict | None = None) -> list:
    """Read an impression log; ``columns`` remaps canonical to actual headers.

    An empty or header-only file yields an empty list. Click labels outside
    {0, 1} and malformed rows raise positional parse errors.
    """
    colmap = {c: c for c in IMPRESSION_COLUMNS}
    if columns:
        colmap.update(columns)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return records
        index = {}
        for canonical, actual in colmap.items():
            if actual not in header:
                raise ParseError(f"missing column {actual!r}", path=str(path), line=1)
            index[canonical] = header.index(actual)
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise WrongColumnCount(
                    f"expected {width} columns, got {len(row)}", path=str(path), line=lineno
                )
            try:
                day = int(row[index["day"]])
                click = int(row[index["click"]])
            except ValueError as exc:
                raise ParseError(str(exc), path=str(path), line=lineno) from exc
            if click not in (0, 1):
                raise InvalidClick(f"click must be 0 or 1, got {click}", path=str(path), line=lineno)
            if day < 0:
                raise ParseError(f"day must be >= 0, got {day}", path=str(path), line=lineno)
            records.append(
                ImpressionRecord(row[index["product_id"]], row[index["creative_id"]], day, click)
            )
    return records


def write_features(path, features: dict):
    with open(path, "w", encoding="utf-8") as fh:
        for cid in sorted(features):
            vec = np.asarray(features[cid], dtype=np.float64)
            fh.write(json.dumps({"creative_id": cid, "vector": vec.tolist()}) + "\n")


def load_features(path) -> dict:
    """Read a creative -> vector table, enforcing one uniform dimension."""
    features: dict = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                cid = doc["creative_id"]
                vec = np.asarray(doc["vector"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(str(exc), path=str(path), line=lineno) from exc
            if vec.ndim != 1 or not np.all(np.isfinite(vec)):
                raise ParseError("vector must be 1-d and finite", path=str(path), line=lineno)
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ParseError(
                    f"dimension {vec.size} != {dim} seen earlier", path=str(path), line=lineno
                )
            if cid in features:
                raise ParseError(f"duplicate creative {cid!r}", path=str(path), line=lineno)
            features[cid] = vec
    return features


def write_truth(path, impressions, true_ctr: dict):
    pid_of = {}
    for pid, cid, _day, _click in impressions:
        pid_of.setdefault(cid, pid)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["product_id", "creative_id", "true_ctr"])
        for cid in sorted(true_ctr):
            writer.writerow([pid_of.get(cid, ""), cid, repr(true_ctr[cid])])


def load_truth(path) -> dict:
    truth: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return truth
        try:
            cid_col = header.index("creative_id")
            ctr_col = header.index("true_ctr")
        except ValueError as exc:
            raise ParseError(str(exc), path=str(path), line=1) from exc
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                truth[row[cid_col]] = float(row[ctr_col])
            except ValueError as exc:
                raise ParseError(str(exc), path=str(path), line=lineno) from exc
    return truth


@dataclass
class Dataset:
    """A loaded dataset directory with referential integrity enforced."""

    impressions: list
    features: dict
    true_ctr: dict | None
    meta: dict

    @property
    def logging_policy(self) -> str:
        return self.meta.get("logging_policy", "unknown")


def load_dataset(root, columns: dict | None = None) -> Dataset:
    """Load impressions + features (+ optional truth/meta) from a directory.

    Every creative referenced by the log must carry a feature vector;
    violations raise MissingFeature with the offending id.
    """
    root = pathlib.Path(root)
    impressions = load_impressions(root / "impressions.csv", columns=columns)
    features = load_features(root / "features.jsonl")
    for rec in impressions:
        if rec.creative_id not in features:
            raise MissingFeature(f"creative {rec.creative_id!r} has no feature vector")
    truth_path = root / "ground_truth.csv"
    true_ctr = load_truth(truth_path) if truth_path.exists() else None
    meta_path = root / "meta.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return Dataset(impressions, features, true_ctr, meta)


# ---------------------------------------------------------------------------
# Mushroom benchmark data
# ---------------------------------------------------------------------------

MUSHROOM_ATTRIBUTES = (
    "cap-shape",
    "cap-surface",
    "cap-color",
    "bruises",
    "odor",
    "gill-attachment",
    "gill-spacing",
    "gill-size",
    "gill-color",
    "stalk-shape",
    "stalk-root",
    "stalk-surface-above-ring",
    "stalk-surface-below-ring",
    "stalk-color-above-ring",
    "stalk-color-below-ring",
    "veil-type",
    "veil-color",
    "ring-number",
    "ring-type",
    "spore-print-color",
    "population",
    "habitat",
)


@dataclass
class MushroomData:
    """Parsed mushroom records with a one-hot (plus bias) encoding.

    ``encoded`` has one column per (attribute, value) pair realized in the
    file, with '?' treated as a value of its own, plus a trailing all-ones
    bias column. ``safe`` flags edible records.
    """

    raw: np.ndarray  # (n, 22) attribute codes
    safe: np.ndarray  # (n,) bool
    encoded: np.ndarray  # (n, n_onehot + 1)
    columns: tuple  # names of encoded columns

    @property
    def n(self) -> int:
        return self.raw.shape[0]

    @property
    def safe_fraction(self) -> float:
        return float(self.safe.mean())

    def attribute_values(self, name: str) -> np.ndarray:
        try:
            j = MUSHROOM_ATTRIBUTES.index(name)
        except ValueError as exc:
            raise KeyError(f"unknown mushroom attribute {name!r}") from exc
        return self.raw[:, j]


def load_mushroom(path) -> MushroomData:
    """Parse a UCI-format mushroom file: class code then 22 attribute codes."""
    classes = []
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 1 + len(MUSHROOM_ATTRIBUTES):
                raise WrongColumnCount(
                    f"expected {1 + len(MUSHROOM_ATTRIBUTES)} fields, got {len(parts)}",
                    path=str(path),
                    line=lineno,
                )
            if parts[0] not in ("e", "p"):
                raise ParseError(
                    f"class must be 'e' or 'p', got {parts[0]!r}", path=str(path), line=lineno
                )
            classes.append(parts[0] == "e")
            rows.append(parts[1:])
    if not rows:
        raise ParseError("mushroom file contains no records", path=str(path), line=1)
    raw = np.array(rows, dtype="<U4")
    safe = np.array(classes, dtype=bool)

    columns = []
    blocks = []
    for j, attr in enumerate(MUSHROOM_ATTRIBUTES):
        values = sorted(set(raw[:, j]))
        for v in values:
            columns.append(f"{attr}={v}")
            blocks.append(raw[:, j] == v)
    onehot = np.array(blocks, dtype=np.float64).T
    encoded = np.hstack([onehot, np.ones((raw.shape[0], 1))])
    columns.append("bias")
    return MushroomData(raw=raw, safe=safe, encoded=encoded, columns=tuple(columns))


# Attribute value pools for the synthetic stand-in file. A few attributes are
# strongly class-dependent (odor above all, like the canonical data where a
# handful of rules nearly separate the classes); the rest are noise.
_MUSHROOM_POOLS = {
    "cap-shape": "bcfkxs",
    "cap-surface": "fgys",
    "cap-color": "nbcgrpuewy",
    "gill-attachment": "af",
    "gill-spacing": "cwd",
    "gill-color": "knbhgropuewy",
    "stalk-shape": "et",
    "stalk-root": "bcez?",
    "stalk-surface-above-ring": "fyks",
    "stalk-surface-below-ring": "fyks",
    "stalk-color-above-ring": "nbcgopewy",
    "stalk-color-below-ring": "nbcgopewy",
    "veil-type": "pu",
    "veil-color": "nowy",
    "ring-number": "not",
    "ring-type": "ceflnpsz",
    "population": "acnsvy",
    "habitat": "glmpuwd",
}


def generate_mushroom(path, n: int = 8124, seed: int = 0, safe_fraction: float = 0.518):
    """Write a synthetic UCI-format mushroom file.

    Stand-in for the canonical benchmark file when it is not on disk: same
    record layout, a near-matching class balance, and classes that are almost
    linearly separable from the one-hot encoding (odor, spore print color,
    bruises and gill size carry the signal).
    """
    rng = rng_stream(seed, 3)
    lines = []
    for _ in range(n):
        edible = rng.random() < safe_fraction
        if edible:
            odor = rng.choice(list("nal"), p=[0.75, 0.15, 0.10])
            spore = rng.choice(list("nkbu"), p=[0.45, 0.35, 0.15, 0.05])
            bruises = "t" if rng.random() < 0.65 else "f"
            gill_size = "b" if rng.random() < 0.80 else "n"
        else:
            odor = rng.choice(list("fyspcmn"), p=[0.45, 0.14, 0.13, 0.08, 0.05, 0.05, 0.10])
            spore = rng.choice(list("whrnk"), p=[0.40, 0.20, 0.15, 0.15, 0.10])
            bruises = "t" if rng.random() < 0.25 else "f"
            gill_size = "b" if rng.random() < 0.30 else "n"
        fields = ["e" if edible else "p"]
        for attr in MUSHROOM_ATTRIBUTES:
            if attr == "odor":
                fields.append(odor)
            elif attr == "spore-print-color":
                fields.append(spore)
            elif attr == "bruises":
                fields.append(bruises)
            elif attr == "gill-size":
                fields.append(gill_size)
            else:
                pool = _MUSHROOM_POOLS[attr]
                fields.append(pool[int(rng.integers(len(pool)))])
        lines.append(",".join(fields))
    pathlib.Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
