"""Layer weights from the distribution of OCR-measured letter widths.

Letter widths are read from an OCR box table, a parametric distribution is
fitted to them, and each contributing layer receives the probability mass
of an interval of widths.  The OCR engine itself runs out of process; this
module only consumes its box table.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from mesa.backbone import LAYER_SPECS, LAYERS

logger = logging.getLogger(__name__)

FAMILIES = ("normal", "lognormal", "gamma")
SCHEMES = ("rf-partition", "sigma-intervals")
MIN_FIT_SAMPLES = 8
BOX_COLUMNS = ("image_id", "box_id", "left", "top", "width", "height", "text")

# sigma brackets, in layer order
_SIGMA_BRACKETS = ((-2, -1), (-1, 0), (0, 1), (1, 2), (2, math.inf))


class WeightingError(ValueError):
    pass


class InsufficientSampleError(WeightingError):
    pass


@dataclass
class LetterWidthSample:
    widths: np.ndarray
    sources: list[tuple[str, str]] = field(default_factory=list)
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.widths)


@dataclass
class WidthDistribution:
    family: str
    params: tuple[float, ...]
    mu: float
    sigma: float
    fit_score: float

    def frozen(self):
        if self.family == "normal":
            return stats.norm(*self.params)
        if self.family == "lognormal":
            return stats.lognorm(*self.params)
        if self.family == "gamma":
            return stats.gamma(*self.params)
        raise WeightingError(f"unknown distribution family {self.family!r}")

    def cdf(self, w):
        return self.frozen().cdf(w)

    def pdf(self, w):
        return self.frozen().pdf(w)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": list(self.params),
            "mu": self.mu,
            "sigma": self.sigma,
            "fit_score": self.fit_score,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "WidthDistribution":
        return cls(doc["family"], tuple(doc["params"]), doc["mu"], doc["sigma"], doc["fit_score"])

    @classmethod
    def from_family(cls, family: str, params: Sequence[float]) -> "WidthDistribution":
        """Wrap known parameters (scipy parameterization) without fitting."""
        dist = cls(family, tuple(float(p) for p in params), 0.0, 1.0, float("nan"))
        frozen = dist.frozen()
        dist.mu, dist.sigma = float(frozen.mean()), float(frozen.std())
        return dist


@dataclass
class LayerWeighting:
    layers: tuple[str, ...]
    raw: tuple[float, ...]
    normalized: tuple[float, ...]
    intervals: tuple[tuple[float, float], ...]
    scheme: str = "rf-partition"

    def __post_init__(self) -> None:
        n = len(self.layers)
        if n == 0:
            raise WeightingError("a weighting needs at least one layer")
        if not (len(self.raw) == len(self.normalized) == len(self.intervals) == n):
            raise WeightingError("layers, raw weights, normalized weights and intervals differ in length")
        if any(w < 0 or not math.isfinite(w) for w in self.normalized):
            raise WeightingError(f"normalized weights must be finite and non-negative: {self.normalized}")
        if abs(sum(self.normalized) - 1.0) > 1e-9:
            raise WeightingError(f"normalized weights sum to {sum(self.normalized)!r}, not 1")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.layers, self.normalized))

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "layers": [
                {
                    "layer": name,
                    "interval": [_enc(a), _enc(b)],
                    "raw": raw,
                    "normalized": w,
                }
                for name, (a, b), raw, w in zip(self.layers, self.intervals, self.raw, self.normalized)
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LayerWeighting":
        rows = doc["layers"]
        return cls(
            tuple(r["layer"] for r in rows),
            tuple(float(r["raw"]) for r in rows),
            tuple(float(r["normalized"]) for r in rows),
            tuple((_dec(r["interval"][0]), _dec(r["interval"][1])) for r in rows),
            doc.get("scheme", "explicit"),
        )


def _enc(v: float):
    # JSON has no infinity or NaN literal
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _dec(v) -> float:
    return math.nan if v is None else float(v)


# -- box tables ---------------------------------------------------------------


def read_box_table(path: str | os.PathLike) -> list[dict[str, str]]:
    """Read a tab-separated OCR box table with a header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        if reader.fieldnames is None:
            return []
        missing = [c for c in ("width", "text") if c not in reader.fieldnames]
        if missing:
            raise WeightingError(f"box table {path} lacks column(s) {missing}")
        return list(reader)


def write_box_table(path: str | os.PathLike, rows: Iterable[Mapping]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=BOX_COLUMNS, delimiter="\t", quoting=csv.QUOTE_NONE,
            escapechar="\\", lineterminator="\n", extrasaction="ignore",
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def boxes_from_tesseract_tsv(path: str | os.PathLike, image_id: str | None = None) -> list[dict[str, str]]:
    """Convert ``tesseract <img> out tsv`` output to box-table rows (word level only)."""
    image_id = image_id or Path(path).stem
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE):
            text = (rec.get("text") or "").strip()
            if rec.get("level") != "5" or not text:
                continue
            box_id = "-".join(rec.get(k, "0") for k in ("page_num", "block_num", "par_num", "line_num", "word_num"))
            rows.append(
                {
                    "image_id": image_id,
                    "box_id": box_id,
                    "left": rec["left"],
                    "top": rec["top"],
                    "width": rec["width"],
                    "height": rec["height"],
                    "text": text,
                }
            )
    return rows


def extract_letter_widths(boxes: Iterable[Mapping]) -> LetterWidthSample:
    """Average letter width per box, emitted once per character of the box.

    Whitespace does not count as a character.  Rows with a non-positive or
    unparsable width, or without a text field, are skipped and counted.
    """
    widths: list[float] = []
    sources: list[tuple[str, str]] = []
    skipped = 0
    for row in boxes:
        text = row.get("text")
        try:
            width = float(row.get("width"))
        except (TypeError, ValueError):
            skipped += 1
            continue
        if text is None or not math.isfinite(width) or width <= 0:
            skipped += 1
            continue
        n_chars = len("".join(str(text).split()))
        if n_chars == 0:
            continue
        src = (str(row.get("image_id", "")), str(row.get("box_id", "")))
        widths.extend([width / n_chars] * n_chars)
        sources.extend([src] * n_chars)
    if skipped:
        logger.warning("skipped %d malformed box rows", skipped)
    if not widths:
        raise WeightingError("no usable boxes")
    return LetterWidthSample(np.asarray(widths, dtype=np.float64), sources, skipped)


# -- distribution fitting -----------------------------------------------------


def _fit_family(family: str, data: np.ndarray):
    if family == "normal":
        return stats.norm.fit(data)
    if family == "lognormal":
        return stats.lognorm.fit(data, floc=0)
    if family == "gamma":
        return stats.gamma.fit(data, floc=0)
    raise WeightingError(f"unknown distribution family {family!r}")


def fit_distribution(sample: LetterWidthSample | Sequence[float], families: Sequence[str] = FAMILIES) -> WidthDistribution:
    """Maximum-likelihood fit of every candidate family; keep the smallest KS statistic."""
    data = np.asarray(sample.widths if isinstance(sample, LetterWidthSample) else sample, dtype=np.float64)
    if data.size < MIN_FIT_SAMPLES:
        raise InsufficientSampleError(f"need at least {MIN_FIT_SAMPLES} widths to fit, got {data.size}")
    if np.any(data <= 0) or not np.all(np.isfinite(data)):
        raise WeightingError("letter widths must be positive and finite")
    if np.ptp(data) == 0:
        raise WeightingError("zero-variance sample: all letter widths are equal")

    best: WidthDistribution | None = None
    for family in families:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            params = tuple(float(p) for p in _fit_family(family, data))
        candidate = WidthDistribution.from_family(family, params)
        ks = float(stats.kstest(data, candidate.cdf).statistic)
        candidate.fit_score = ks
        logger.debug("fit %s params=%s ks=%.5f", family, params, ks)
        if best is None or ks < best.fit_score:
            best = candidate
    assert best is not None
    if not best.sigma > 0:
        raise WeightingError("fitted distribution has zero spread")
    return best


# -- weights ------------------------------------------------------------------


def _normalize(raw: Sequence[float]) -> tuple[float, ...]:
    total = math.fsum(raw)
    if not total > 0 or not math.isfinite(total):
        warnings.warn("all layer intervals carry zero probability; using uniform weights", stacklevel=3)
        return tuple([1.0 / len(raw)] * len(raw))
    out = [r / total for r in raw]
    # push the rounding residue onto the largest weight so the sum is 1 to the last ulp we can manage
    residue = 1.0 - math.fsum(out)
    i = max(range(len(out)), key=out.__getitem__)
    out[i] = max(out[i] + residue, 0.0)
    return tuple(out)


def weights_from_intervals(
    dist: WidthDistribution,
    layers: Sequence[str],
    intervals: Sequence[tuple[float, float]],
    scheme: str = "explicit",
) -> LayerWeighting:
    if len(layers) != len(intervals) or not layers:
        raise WeightingError("one interval per layer is required")
    frozen = dist.frozen()
    raw = tuple(max(float(frozen.cdf(b) - frozen.cdf(a)), 0.0) for a, b in intervals)
    return LayerWeighting(tuple(layers), raw, _normalize(raw), tuple((float(a), float(b)) for a, b in intervals), scheme)


def layer_intervals(dist: WidthDistribution, layers: Sequence[str], scheme: str = "rf-partition") -> list[tuple[float, float]]:
    layers = list(layers)
    if not layers:
        raise WeightingError("at least one layer is required")
    unknown = [name for name in layers if name not in LAYER_SPECS]
    if unknown:
        raise WeightingError(f"unknown layer(s) {unknown}")
    rfs = [LAYER_SPECS[name].receptive_field for name in layers]
    if any(b <= a for a, b in zip(rfs, rfs[1:])):
        raise WeightingError(f"layers must be ordered by strictly increasing receptive field: {layers}")
    if scheme == "rf-partition":
        edges = [0.0] + [float(r) for r in rfs[:-1]] + [math.inf]
        return list(zip(edges[:-1], edges[1:]))
    if scheme == "sigma-intervals":
        if len(layers) > len(_SIGMA_BRACKETS):
            raise WeightingError(f"sigma-intervals supports at most {len(_SIGMA_BRACKETS)} layers")
        mu, sd = dist.mu, dist.sigma
        return [(mu + lo * sd, mu + hi * sd if math.isfinite(hi) else math.inf) for lo, hi in _SIGMA_BRACKETS[: len(layers)]]
    raise WeightingError(f"scheme must be one of {SCHEMES}, got {scheme!r}")


def derive_weights(dist: WidthDistribution, layers: Sequence[str] = LAYERS, scheme: str = "rf-partition") -> LayerWeighting:
    """Probability mass ``F(b_l) - F(a_l)`` per layer, normalized to sum to one."""
    return weights_from_intervals(dist, layers, layer_intervals(dist, layers, scheme), scheme)


def uniform_weighting(layers: Sequence[str] = LAYERS) -> LayerWeighting:
    n = len(layers)
    if n == 0:
        raise WeightingError("at least one layer is required")
    w = tuple([1.0 / n] * n)
    w = _normalize(w)
    return LayerWeighting(tuple(layers), w, w, tuple((math.nan, math.nan) for _ in layers), "uniform")


def explicit_weighting(values: Mapping[str, float], tol: float = 1e-6) -> LayerWeighting:
    """Weights supplied directly by the user; they must already sum to one within ``tol``."""
    layers = [name for name in LAYERS if name in values]
    unknown = set(values) - set(LAYERS)
    if unknown:
        raise WeightingError(f"unknown layer(s) {sorted(unknown)}")
    if not layers:
        raise WeightingError("no layer weights given")
    raw = [float(values[name]) for name in layers]
    if any(w < 0 or not math.isfinite(w) for w in raw):
        raise WeightingError("layer weights must be finite and non-negative")
    if abs(math.fsum(raw) - 1.0) > tol:
        raise WeightingError(f"layer weights sum to {math.fsum(raw)!r}, expected 1")
    return LayerWeighting(tuple(layers), tuple(raw), _normalize(raw), tuple((math.nan, math.nan) for _ in layers), "explicit")


def weighting_for(
    sample: LetterWidthSample | None,
    layers: Sequence[str] = LAYERS,
    scheme: str = "rf-partition",
) -> tuple[LayerWeighting, WidthDistribution | None]:
    """Fit and derive, falling back to uniform weights when the sample is too small."""
    if sample is None or len(sample) < MIN_FIT_SAMPLES:
        n = 0 if sample is None else len(sample)
        warnings.warn(f"only {n} letter widths (< {MIN_FIT_SAMPLES}); using uniform layer weights", stacklevel=2)
        return uniform_weighting(layers), None
    dist = fit_distribution(sample)
    return derive_weights(dist, layers, scheme), dist


# -- report -------------------------------------------------------------------


def weights_report(
    weighting: LayerWeighting,
    dist: WidthDistribution | None,
    json_path: str | os.PathLike | None = None,
    plot_path: str | os.PathLike | None = None,
    sample: LetterWidthSample | None = None,
) -> dict:
    """Weights document; optionally written as JSON and accompanied by a PNG plot."""
    doc = {
        "distribution": dist.to_dict() if dist is not None else None,
        "weighting": weighting.to_dict(),
        "sample_size": None if sample is None else len(sample),
    }
    if json_path is not None:
        Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if plot_path is not None:
        from mesa.plotting import plot_width_distribution

        plot_width_distribution(plot_path, dist, weighting, None if sample is None else sample.widths)
    return doc


def parse_weights_report(doc: Mapping | str | os.PathLike) -> LayerWeighting:
    if not isinstance(doc, Mapping):
        doc = json.loads(Path(doc).read_text(encoding="utf-8"))
    if "weighting" in doc:
        return LayerWeighting.from_dict(doc["weighting"])
    return LayerWeighting.from_dict(doc)


def load_weights_file(path: str | os.PathLike) -> LayerWeighting:
    """Read injected weights: a weights report or a flat ``{layer: weight}`` map."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, Mapping) and ("weighting" in doc or "layers" in doc):
        weighting = parse_weights_report(doc)
        return explicit_weighting(weighting.as_dict(), tol=1e-9)
    if not isinstance(doc, Mapping):
        raise WeightingError(f"{path} must contain a JSON object")
    return explicit_weighting(doc)
