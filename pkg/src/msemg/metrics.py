"""Evaluation measures: SNR improvement, waveform RMSE, and RMSE of the
windowed ARV (average rectified value) and MF (mean frequency) features,
plus per-input-SNR report aggregation with JSON/CSV serialization.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .data import NoisyPair, Signal
from .errors import ValidationError

# Zero-residual comparisons report this capped value instead of +inf.
SNR_CAP_DB = 300.0

DEFAULT_FEATURE_WINDOW_MS = 500.0

# Published overall scores on the full NINAPro DB2 / MIT-BIH NSRD protocol,
# kept for context in reports; desk-scale runs are not expected to match.
REFERENCE_OVERALL_METRICS = {
    "HP": {"snr_imp_db": 13.885, "rmse": 1.735e-2, "rmse_arv": 3.064e-3, "rmse_mf_hz": 19.471},
    "TS": {"snr_imp_db": 14.279, "rmse": 1.626e-2, "rmse_arv": 3.859e-3, "rmse_mf_hz": 23.149},
    "FCN": {"snr_imp_db": 17.758, "rmse": 1.178e-2, "rmse_arv": 3.864e-3, "rmse_mf_hz": 18.038},
    "SDEMG": {"snr_imp_db": 18.467, "rmse": 1.138e-2, "rmse_arv": 2.809e-3, "rmse_mf_hz": 14.435},
    "MSEMG": {"snr_imp_db": 20.317, "rmse": 8.603e-3, "rmse_arv": 2.382e-3, "rmse_mf_hz": 11.379},
}

METRIC_COLUMNS = ("snr_imp_db", "rmse", "rmse_arv", "rmse_mf_hz")


@dataclass
class FeatureVector:
    """Per-window feature values over non-overlapping windows."""

    values: np.ndarray
    window_ms: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("feature values contain non-finite entries")


def _check_equal_length(a: Signal, b: Signal) -> None:
    if len(a) != len(b):
        raise ValidationError(f"length mismatch: {len(a)} vs {len(b)}")


def snr_db(reference: Signal, estimate: Signal) -> float:
    """10 log10 of reference power over residual power, capped at SNR_CAP_DB
    when the residual is exactly zero."""
    _check_equal_length(reference, estimate)
    ref_power = float(np.sum(reference.samples ** 2))
    if ref_power == 0.0:
        raise ValidationError("reference signal has zero power")
    resid = float(np.sum((estimate.samples - reference.samples) ** 2))
    if resid == 0.0:
        return SNR_CAP_DB
    return 10.0 * math.log10(ref_power / resid)


def snr_is_capped(value_db: float) -> bool:
    return value_db >= SNR_CAP_DB


def snr_improvement(clean: Signal, mixed: Signal, denoised: Signal) -> float:
    """Output SNR minus input SNR, both against the clean reference."""
    return snr_db(clean, denoised) - snr_db(clean, mixed)


def rmse(a: Signal | np.ndarray, b: Signal | np.ndarray) -> float:
    xa = a.samples if isinstance(a, Signal) else np.asarray(a, dtype=np.float64)
    xb = b.samples if isinstance(b, Signal) else np.asarray(b, dtype=np.float64)
    if len(xa) != len(xb):
        raise ValidationError(f"length mismatch: {len(xa)} vs {len(xb)}")
    if len(xa) == 0:
        raise ValidationError("rmse of empty sequences is undefined "
                              "(feature window longer than the segment?)")
    return float(np.sqrt(np.mean((xa - xb) ** 2)))


def arv_features(x: Signal, window_ms: float = DEFAULT_FEATURE_WINDOW_MS) -> FeatureVector:
    """Mean of |x| per non-overlapping window; trailing partial window dropped."""
    w = int(round(window_ms / 1000.0 * x.fs))
    if w < 1:
        raise ValidationError("ARV window must be at least one sample")
    count = len(x.samples) // w
    trimmed = np.abs(x.samples[:count * w]).reshape(count, w)
    return FeatureVector(values=trimmed.mean(axis=1), window_ms=window_ms)


def mf_features(x: Signal, window_ms: float = DEFAULT_FEATURE_WINDOW_MS) -> FeatureVector:
    """Power-spectrum centroid per non-overlapping window.

    Each window is Hamming-weighted and transformed on a power-of-two FFT of
    at least the window length; the centroid runs over (0, fs/2], DC excluded.
    """
    w = int(round(window_ms / 1000.0 * x.fs))
    if w < 64:
        raise ValidationError("MF window must be at least 64 samples")
    count = len(x.samples) // w
    if count == 0:
        return FeatureVector(values=np.array([]), window_ms=window_ms)
    nfft = 1 << (w - 1).bit_length()
    window = np.hamming(w)
    freqs = np.fft.rfftfreq(nfft, d=1.0 / x.fs)
    values = np.empty(count)
    for i in range(count):
        chunk = x.samples[i * w:(i + 1) * w] * window
        power = np.abs(np.fft.rfft(chunk, nfft)) ** 2
        power[0] = 0.0
        total = power.sum()
        values[i] = float((freqs * power).sum() / total) if total > 0 else 0.0
    return FeatureVector(values=values, window_ms=window_ms)


@dataclass
class PairRecord:
    """Metrics for one (clean, mixed, denoised) evaluation."""

    index: int
    input_snr_db: float
    snr_imp_db: float
    rmse: float
    rmse_arv: float
    rmse_mf_hz: float
    output_snr_capped: bool = False

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "input_snr_db": self.input_snr_db,
            "snr_imp_db": self.snr_imp_db,
            "rmse": self.rmse,
            "rmse_arv": self.rmse_arv,
            "rmse_mf_hz": self.rmse_mf_hz,
            "output_snr_capped": self.output_snr_capped,
        }


@dataclass
class MetricsReport:
    """Per-pair records plus per-input-SNR and overall aggregates."""

    denoiser: str
    window_ms: float
    records: list[PairRecord]
    excluded: list[dict] = field(default_factory=list)

    def aggregate_by_snr(self) -> dict[float, dict[str, float]]:
        by_snr: dict[float, list[PairRecord]] = {}
        for r in self.records:
            by_snr.setdefault(r.input_snr_db, []).append(r)
        return {
            snr: {col: float(np.mean([getattr(r, col) for r in recs]))
                  for col in METRIC_COLUMNS}
            for snr, recs in sorted(by_snr.items())
        }

    def aggregate_overall(self) -> dict[str, float]:
        if not self.records:
            raise ValidationError("no records to aggregate")
        return {col: float(np.mean([getattr(r, col) for r in self.records]))
                for col in METRIC_COLUMNS}

    def to_json(self) -> str:
        return json.dumps({
            "denoiser": self.denoiser,
            "window_ms": self.window_ms,
            "records": [r.as_dict() for r in self.records],
            "excluded": self.excluded,
            "aggregates_by_input_snr": {repr(k): v for k, v in self.aggregate_by_snr().items()},
            "aggregate_overall": self.aggregate_overall(),
        }, indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        d = json.loads(text)
        records = [PairRecord(**{k: v for k, v in rec.items()}) for rec in d["records"]]
        return cls(denoiser=d["denoiser"], window_ms=float(d["window_ms"]),
                   records=records, excluded=list(d.get("excluded", [])))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["row_type", "denoiser", "index", "input_snr_db",
                         *METRIC_COLUMNS, "output_snr_capped"])
        for r in self.records:
            writer.writerow(["pair", self.denoiser, r.index, r.input_snr_db,
                             r.snr_imp_db, r.rmse, r.rmse_arv, r.rmse_mf_hz,
                             r.output_snr_capped])
        for snr, agg in self.aggregate_by_snr().items():
            writer.writerow(["aggregate_snr", self.denoiser, "", snr,
                             *[agg[c] for c in METRIC_COLUMNS], ""])
        overall = self.aggregate_overall()
        writer.writerow(["aggregate_overall", self.denoiser, "", "",
                         *[overall[c] for c in METRIC_COLUMNS], ""])
        return buf.getvalue()


def evaluate(pairs: Iterable[NoisyPair], denoiser: Callable[[Signal], Signal],
             name: str, window_ms: float = DEFAULT_FEATURE_WINDOW_MS) -> MetricsReport:
    """Run the denoiser over every pair and compute all four metrics.

    Pairs whose denoised output length disagrees with the input are recorded
    under `excluded` and skipped; everything else is deterministic in input
    order.
    """
    records: list[PairRecord] = []
    excluded: list[dict] = []
    count = 0
    for idx, pair in enumerate(pairs):
        count += 1
        denoised = denoiser(pair.mixed)
        if len(denoised) != len(pair.mixed):
            excluded.append({"index": idx, "reason":
                             f"output length {len(denoised)} != input {len(pair.mixed)}"})
            continue
        out_snr = snr_db(pair.clean, denoised)
        records.append(PairRecord(
            index=idx,
            input_snr_db=pair.target_snr_db,
            snr_imp_db=out_snr - snr_db(pair.clean, pair.mixed),
            rmse=rmse(pair.clean, denoised),
            rmse_arv=rmse(arv_features(pair.clean, window_ms).values,
                          arv_features(denoised, window_ms).values),
            rmse_mf_hz=rmse(mf_features(pair.clean, window_ms).values,
                            mf_features(denoised, window_ms).values),
            output_snr_capped=snr_is_capped(out_snr),
        ))
    if count == 0:
        raise ValidationError("evaluate needs at least one pair")
    return MetricsReport(denoiser=name, window_ms=window_ms,
                         records=records, excluded=excluded)
