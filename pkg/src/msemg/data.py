"""Signals, canonical file I/O, SNR-controlled contamination, the dataset
manifest/split protocol, and seeded synthetic surrogates.

The synthetic sEMG and ECG generators make the whole toolkit testable at
desk scale: every property in the test suite runs on them, with real
recordings entering only through external conversion scripts that emit the
same canonical format.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ManifestError, ValidationError

SPLITS = ("train", "val", "test")
_SPLIT_CODE = {"train": 0, "val": 1, "test": 2}

SIGNAL_MAGIC = b"MSG1"
SIGNAL_FORMAT_VERSION = 1

DEFAULT_SNR_GRIDS_DB = {
    "train": [-15.0, -13.0, -11.0, -9.0, -7.0, -5.0],
    "val": [-15.0, -13.0, -11.0, -9.0, -7.0, -5.0],
    "test": [-14.0, -12.0, -10.0, -8.0, -6.0, -4.0, -2.0, 0.0],
}


@dataclass
class Signal:
    """A sampled real waveform with its rate and free-form provenance."""

    samples: np.ndarray
    fs: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("samples contain non-finite values")
        arr.setflags(write=False)
        self.samples = arr
        self.fs = float(self.fs)
        if not math.isfinite(self.fs) or self.fs <= 0:
            raise ValidationError("fs must be positive and finite")
        self.provenance = dict(self.provenance)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.fs

    def with_samples(self, samples: np.ndarray) -> "Signal":
        return Signal(samples=samples, fs=self.fs, provenance=dict(self.provenance))


@dataclass
class NoisyPair:
    """(clean, artifact, mixed) triple with the target SNR and applied scale.

    mixed = clean + scale * artifact, sample for sample.
    """

    clean: Signal
    artifact: Signal
    mixed: Signal
    target_snr_db: float
    scale: float

    def __post_init__(self):
        n = len(self.clean)
        if not (len(self.artifact) == n and len(self.mixed) == n):
            raise ValidationError("pair signals must share length")
        if not (abs(self.clean.fs - self.artifact.fs) < 1e-9
                and abs(self.clean.fs - self.mixed.fs) < 1e-9):
            raise ValidationError("pair signals must share fs")
        if self.scale <= 0 or not math.isfinite(self.scale):
            raise ValidationError("scale must be positive and finite")


def mean_power(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x))


def normalize(x: Signal) -> tuple[Signal, float]:
    """Divide by the max absolute amplitude; all-zero input passes through
    with scale 1 so the operation is always invertible."""
    peak = float(np.max(np.abs(x.samples)))
    if peak == 0.0:
        return x.with_samples(x.samples.copy()), 1.0
    return x.with_samples(x.samples / peak), peak


def denormalize(x: Signal, scale: float) -> Signal:
    return x.with_samples(x.samples * scale)


def segment(x: Signal, seconds: float) -> list[Signal]:
    """Non-overlapping contiguous segments of floor(seconds * fs) samples;
    the trailing remainder is dropped."""
    seg_len = int(seconds * x.fs)
    if seg_len < 1:
        raise ValidationError("segment length must be at least one sample")
    count = len(x.samples) // seg_len
    out = []
    for i in range(count):
        prov = dict(x.provenance)
        prov["segment"] = str(i)
        out.append(Signal(samples=x.samples[i * seg_len:(i + 1) * seg_len],
                          fs=x.fs, provenance=prov))
    return out


def mix_at_snr(clean: Signal, artifact: Signal, snr_db: float) -> NoisyPair:
    """Scale the artifact so 10 log10(P_clean / P_scaled_artifact) = snr_db
    and superimpose it on the clean signal."""
    if len(clean) != len(artifact):
        raise ValidationError("clean and artifact must share length")
    if abs(clean.fs - artifact.fs) > 1e-9:
        raise ValidationError("clean and artifact must share fs")
    p_clean = mean_power(clean.samples)
    p_art = mean_power(artifact.samples)
    if p_clean == 0.0:
        raise ValidationError("clean signal has zero power")
    if p_art == 0.0:
        raise ValidationError("artifact signal has zero power")
    scale = math.sqrt(p_clean / (p_art * 10.0 ** (snr_db / 10.0)))
    mixed = clean.samples + scale * artifact.samples
    prov = dict(clean.provenance)
    prov["mixed_snr_db"] = repr(float(snr_db))
    return NoisyPair(
        clean=clean,
        artifact=artifact,
        mixed=Signal(samples=mixed, fs=clean.fs, provenance=prov),
        target_snr_db=float(snr_db),
        scale=scale,
    )


# ---------------------------------------------------------------------------
# canonical file format


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via temp file + rename so interrupted runs never leave a
    half-written file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def signal_to_bytes(x: Signal) -> bytes:
    """Binary canonical format: magic, version, u32 fs, u64 count,
    little-endian f64 samples, then length-prefixed JSON provenance."""
    fs_int = round(x.fs)
    if abs(x.fs - fs_int) > 1e-9 or fs_int <= 0 or fs_int > 0xFFFFFFFF:
        raise ValidationError("canonical format stores integer fs in Hz")
    prov = json.dumps(x.provenance, sort_keys=True).encode("utf-8")
    parts = [
        SIGNAL_MAGIC,
        struct.pack("<B", SIGNAL_FORMAT_VERSION),
        struct.pack("<I", fs_int),
        struct.pack("<Q", len(x.samples)),
        np.ascontiguousarray(x.samples, dtype="<f8").tobytes(),
        struct.pack("<I", len(prov)),
        prov,
    ]
    return b"".join(parts)


def signal_from_bytes(data: bytes) -> Signal:
    if len(data) < 17 or data[:4] != SIGNAL_MAGIC:
        raise ValidationError("not a canonical signal: bad magic")
    version = data[4]
    if version != SIGNAL_FORMAT_VERSION:
        raise ValidationError(f"unsupported canonical signal version {version}")
    fs = struct.unpack_from("<I", data, 5)[0]
    n = struct.unpack_from("<Q", data, 9)[0]
    end = 17 + 8 * n
    if len(data) < end + 4:
        raise ValidationError("canonical signal truncated")
    samples = np.frombuffer(data[17:end], dtype="<f8").copy()
    prov_len = struct.unpack_from("<I", data, end)[0]
    prov_bytes = data[end + 4:end + 4 + prov_len]
    if len(prov_bytes) != prov_len:
        raise ValidationError("canonical signal truncated in provenance")
    provenance = json.loads(prov_bytes.decode("utf-8")) if prov_len else {}
    return Signal(samples=samples, fs=float(fs), provenance=provenance)


def write_signal(x: Signal, path: str | Path) -> None:
    atomic_write_bytes(path, signal_to_bytes(x))


def read_signal(path: str | Path) -> Signal:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_signal_csv(path)
    return signal_from_bytes(path.read_bytes())


def write_signal_csv(x: Signal, path: str | Path) -> None:
    fs_int = round(x.fs)
    if abs(x.fs - fs_int) > 1e-9:
        raise ValidationError("CSV debug format stores integer fs in Hz")
    lines = [f"fs,{fs_int}"]
    lines.extend(repr(float(v)) for v in x.samples)
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_signal_csv(path: str | Path) -> Signal:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not text or not text[0].lower().startswith("fs"):
        raise ValidationError("CSV debug format needs an fs header row")
    fs = float(text[0].split(",")[1])
    samples = np.array([float(line) for line in text[1:]], dtype=np.float64)
    return Signal(samples=samples, fs=fs)


# ---------------------------------------------------------------------------
# dataset manifest and assembly


@dataclass
class ManifestEntry:
    path: str
    subject: str
    split: str

    def __post_init__(self):
        if not self.subject:
            raise ManifestError("manifest entry needs a subject id")
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")


@dataclass
class DatasetManifest:
    """Canonical-file references for clean and artifact segments, split
    labels, per-split SNR grids and draw counts, and the mixing seed."""

    clean: list[ManifestEntry]
    artifact: list[ManifestEntry]
    snr_grids_db: dict[str, list[float]]
    draws_per_segment: dict[str, int]
    seed: int = 0
    schema_version: int = 1
    base_dir: Path = field(default_factory=Path, repr=False, compare=False)

    def validate(self) -> None:
        if self.schema_version != 1:
            raise ManifestError(f"unsupported manifest schema {self.schema_version}")
        for name, entries in (("clean", self.clean), ("artifact", self.artifact)):
            per_split: dict[str, set] = {}
            for e in entries:
                per_split.setdefault(e.split, set()).add(e.subject)
            for s1 in per_split:
                for s2 in per_split:
                    if s1 < s2 and per_split[s1] & per_split[s2]:
                        leaked = sorted(per_split[s1] & per_split[s2])
                        raise ManifestError(
                            f"{name} subjects {leaked} appear in both {s1!r} and {s2!r}")
        used_splits = {e.split for e in self.clean}
        for split in used_splits:
            grid = self.snr_grids_db.get(split, [])
            if not grid:
                raise ManifestError(f"SNR grid for split {split!r} is empty")
            draws = self.draws_per_segment.get(split, 0)
            if draws < 1:
                raise ManifestError(f"draws_per_segment for split {split!r} must be >= 1")
            if not any(e.split == split for e in self.artifact):
                raise ManifestError(f"split {split!r} has clean segments but no artifacts")

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": self.schema_version,
            "seed": self.seed,
            "clean": [{"path": e.path, "subject": e.subject, "split": e.split}
                      for e in self.clean],
            "artifact": [{"path": e.path, "subject": e.subject, "split": e.split}
                         for e in self.artifact],
            "snr_grids_db": self.snr_grids_db,
            "draws_per_segment": self.draws_per_segment,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, base_dir: str | Path = ".") -> "DatasetManifest":
        d = json.loads(text)
        if "schema_version" not in d:
            raise ManifestError("manifest is missing schema_version")
        try:
            manifest = cls(
                clean=[ManifestEntry(**e) for e in d["clean"]],
                artifact=[ManifestEntry(**e) for e in d["artifact"]],
                snr_grids_db={k: [float(v) for v in vs]
                              for k, vs in d["snr_grids_db"].items()},
                draws_per_segment={k: int(v) for k, v in d["draws_per_segment"].items()},
                seed=int(d.get("seed", 0)),
                schema_version=int(d["schema_version"]),
                base_dir=Path(base_dir),
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc
        return manifest

    def save(self, path: str | Path) -> None:
        atomic_write_bytes(path, self.to_json().encode("utf-8"))

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        return cls.from_json(path.read_text(encoding="utf-8"), base_dir=path.parent)


def build_dataset(manifest: DatasetManifest, split: str) -> list[NoisyPair]:
    """Materialize the contamination protocol for one split.

    Every clean segment is paired with `draws_per_segment` seeded artifact
    draws from the split's artifact pool, each mixed at every SNR in the
    split's grid.  Artifacts are resampled to the clean rate before mixing.
    Fully deterministic under the manifest seed.
    """
    from . import dsp  # local import; dsp depends on this module for Signal

    manifest.validate()
    if split not in SPLITS:
        raise ValidationError(f"unknown split {split!r}")
    clean_entries = [e for e in manifest.clean if e.split == split]
    artifact_entries = [e for e in manifest.artifact if e.split == split]
    if not clean_entries:
        return []
    if not artifact_entries:
        raise ManifestError(f"split {split!r} has no artifact segments")

    grid = manifest.snr_grids_db[split]
    draws = manifest.draws_per_segment[split]
    artifact_cache: dict[str, Signal] = {}
    pairs: list[NoisyPair] = []
    for clean_idx, entry in enumerate(clean_entries):
        clean_sig = read_signal(manifest.base_dir / entry.path)
        rng = np.random.default_rng([manifest.seed, _SPLIT_CODE[split], clean_idx])
        choices = rng.integers(0, len(artifact_entries), size=draws)
        for draw_idx in range(draws):
            art_entry = artifact_entries[int(choices[draw_idx])]
            art = artifact_cache.get(art_entry.path)
            if art is None:
                art = read_signal(manifest.base_dir / art_entry.path)
                artifact_cache[art_entry.path] = art
            if abs(art.fs - clean_sig.fs) > 1e-9:
                art = dsp.resample(art, clean_sig.fs)
            if len(art) < len(clean_sig):
                raise ValidationError(
                    f"artifact {art_entry.path} shorter than clean segment after resampling")
            art = Signal(samples=art.samples[:len(clean_sig)], fs=art.fs,
                         provenance=dict(art.provenance))
            for snr in grid:
                pairs.append(mix_at_snr(clean_sig, art, snr))
    return pairs


# ---------------------------------------------------------------------------
# synthetic surrogates


def synth_semg(duration_s: float, fs: float, seed: int) -> Signal:
    """Surrogate sEMG: band-shaped Gaussian noise under a slow burst envelope.

    Spectrum is shaped to roughly 20-150 Hz; bursts alternate active and
    rest periods of 0.5-2 s with softened edges, mimicking contractions.
    Output is max-abs normalized.
    """
    n = int(round(duration_s * fs))
    if n < 1:
        raise ValidationError("duration too short for the sampling rate")
    rng = np.random.default_rng([int(seed), 0xE5])
    noise = rng.standard_normal(n)

    spectrum = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    mask = _raised_cosine_band(freqs, lo=(15.0, 25.0), hi=(145.0, 155.0))
    shaped = np.fft.irfft(spectrum * mask, n)

    envelope = np.empty(n)
    pos = 0
    active = bool(rng.integers(0, 2))
    while pos < n:
        length = int(rng.uniform(0.5, 2.0) * fs)
        level = rng.uniform(0.6, 1.5) if active else 0.15
        envelope[pos:pos + length] = level
        pos += length
        active = not active
    smooth_w = max(1, int(round(0.15 * fs)))
    window = np.hanning(smooth_w + 2)[1:-1]
    if window.sum() > 0:
        envelope = np.convolve(envelope, window / window.sum(), mode="same")

    sig = Signal(samples=shaped * envelope, fs=fs,
                 provenance={"source": "synth-semg", "seed": str(int(seed))})
    return normalize(sig)[0]


def _raised_cosine_band(freqs: np.ndarray, lo: tuple[float, float],
                        hi: tuple[float, float]) -> np.ndarray:
    mask = np.zeros_like(freqs)
    rising = (freqs >= lo[0]) & (freqs < lo[1])
    mask[rising] = 0.5 * (1 - np.cos(np.pi * (freqs[rising] - lo[0]) / (lo[1] - lo[0])))
    mask[(freqs >= lo[1]) & (freqs <= hi[0])] = 1.0
    falling = (freqs > hi[0]) & (freqs <= hi[1])
    mask[falling] = 0.5 * (1 + np.cos(np.pi * (freqs[falling] - hi[0]) / (hi[1] - hi[0])))
    return mask


# beat morphology: (offset_s, sigma_s, amplitude) per wave, at 1 s period;
# offsets and widths scale linearly with the actual beat period.
ECG_MORPHOLOGY = (
    (-0.170, 0.025, 0.12),   # P
    (-0.022, 0.008, -0.10),  # Q
    (0.000, 0.011, 1.00),    # R
    (0.022, 0.009, -0.18),   # S
    (0.220, 0.040, 0.35),    # T
)


def synth_ecg(duration_s: float, fs: float, bpm: float = 60.0, seed: int = 0,
              period_jitter: float = 0.03,
              amp_jitter: float = 0.10) -> tuple[Signal, np.ndarray]:
    """Surrogate ECG: Gaussian-bump P-QRS-T beats at the given rate.

    Per-beat period jitter (+/- period_jitter, uniform) and amplitude jitter
    (+/- amp_jitter) are seeded.  Returns the signal and the planted R-peak
    sample indices; the indices are also stored in provenance as JSON.
    """
    if not 30.0 <= bpm <= 180.0:
        raise ValidationError("bpm must be within [30, 180]")
    n = int(round(duration_s * fs))
    if n < 1:
        raise ValidationError("duration too short for the sampling rate")
    rng = np.random.default_rng([int(seed), 0xEC])
    period_s = 60.0 / bpm

    half_w = int(round(0.45 * period_s * fs))
    offsets = np.arange(-half_w, half_w + 1, dtype=np.float64) / fs
    template = np.zeros_like(offsets)
    for off, sigma, amp in ECG_MORPHOLOGY:
        o, s = off * period_s, max(sigma * period_s, 0.5 / fs)
        template += amp * np.exp(-0.5 * ((offsets - o) / s) ** 2)

    samples = np.zeros(n)
    peaks = []
    t = 0.5 * period_s
    while t < duration_s - 0.25 * period_s:
        idx = int(round(t * fs))
        if idx >= n:
            break
        gain = 1.0 + amp_jitter * rng.uniform(-1.0, 1.0)
        lo, hi = idx - half_w, idx + half_w + 1
        src_lo, src_hi = max(0, -lo), len(template) - max(0, hi - n)
        samples[max(0, lo):min(n, hi)] += gain * template[src_lo:src_hi]
        peaks.append(idx)
        t += period_s * (1.0 + period_jitter * rng.uniform(-1.0, 1.0))

    peaks_arr = np.asarray(peaks, dtype=np.int64)
    prov = {
        "source": "synth-ecg",
        "seed": str(int(seed)),
        "bpm": repr(float(bpm)),
        "r_peaks": json.dumps([int(p) for p in peaks]),
    }
    sig = normalize(Signal(samples=samples, fs=fs, provenance=prov))[0]
    return sig, peaks_arr
