"""Classical signal processing: IIR Butterworth design and application,
rational resampling, and the two baseline denoisers (highpass, template
subtraction) with an R-peak detector.

Filter design goes analog prototype -> frequency transform -> bilinear
transform with prewarped edges -> stable biquad sections, all in zpk form.
No external DSP library is used at runtime; tests cross-check the designs
against an independent implementation.
"""

from __future__ import annotations

import cmath
import json
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import Signal
from .errors import ValidationError

FILTER_TYPES = ("lowpass", "highpass", "bandpass")

# Highpass baseline defaults; the cutoff is exposed as a flag on the CLI.
HP_BASELINE_CUTOFF_HZ = 40.0
HP_BASELINE_ORDER = 4

TEMPLATE_WINDOW_MS = 600.0
TEMPLATE_TAPER_MS = 10.0


@dataclass
class BiquadSection:
    """One second-order section, a0 normalized to 1."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def poles(self) -> np.ndarray:
        return np.roots([1.0, self.a1, self.a2])


@dataclass
class BiquadCascade:
    """Cascade of biquads with a single overall gain and design metadata."""

    sections: list[BiquadSection]
    gain: float
    order: int
    kind: str
    cutoffs_hz: tuple[float, ...]
    fs: float

    def freq_response(self, freqs_hz: np.ndarray) -> np.ndarray:
        """Complex response H(e^{j 2 pi f / fs}) at the given frequencies."""
        w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / self.fs
        zinv = np.exp(-1j * w)
        h = np.full_like(zinv, self.gain, dtype=np.complex128)
        for s in self.sections:
            h *= (s.b0 + s.b1 * zinv + s.b2 * zinv**2) / (1.0 + s.a1 * zinv + s.a2 * zinv**2)
        return h

    def is_stable(self) -> bool:
        return all(np.all(np.abs(s.poles()) < 1.0) for s in self.sections)

    def impulse_length(self, tol: float = 1e-6, max_len: int | None = None) -> int:
        """Samples until the impulse response stays below tol in magnitude."""
        cap = max_len if max_len is not None else max(int(10 * self.fs), 256)
        impulse = np.zeros(min(cap, 1 << 20))
        impulse[0] = 1.0
        h = _sos_filter_causal(self, impulse)
        above = np.nonzero(np.abs(h) >= tol)[0]
        return int(above[-1]) + 1 if above.size else 1

    def to_json(self) -> str:
        return json.dumps({
            "sections": [[s.b0, s.b1, s.b2, s.a1, s.a2] for s in self.sections],
            "gain": self.gain,
            "order": self.order,
            "kind": self.kind,
            "cutoffs_hz": list(self.cutoffs_hz),
            "fs": self.fs,
        })

    @classmethod
    def from_json(cls, text: str) -> "BiquadCascade":
        d = json.loads(text)
        return cls(
            sections=[BiquadSection(*coeffs) for coeffs in d["sections"]],
            gain=float(d["gain"]),
            order=int(d["order"]),
            kind=d["kind"],
            cutoffs_hz=tuple(float(c) for c in d["cutoffs_hz"]),
            fs=float(d["fs"]),
        )


@dataclass
class RPeakList:
    """Detected beat locations (sample indices, strictly increasing)."""

    indices: np.ndarray
    mean_period_samples: float = 0.0

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.size and np.any(np.diff(self.indices) <= 0):
            raise ValidationError("peak indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.indices)


def _butter_prototype_poles(order: int) -> list[complex]:
    """Analog lowpass prototype poles on the unit circle, left half plane."""
    return [cmath.exp(1j * math.pi * (2 * k + order + 1) / (2 * order))
            for k in range(order)]


def _prewarp(f_hz: float, fs: float) -> float:
    return 2.0 * fs * math.tan(math.pi * f_hz / fs)


def design_butterworth(order: int, kind: str, cutoffs, fs: float) -> BiquadCascade:
    """Design a digital Butterworth filter as a stable biquad cascade.

    cutoffs: a single frequency in Hz for lowpass/highpass, or (low, high)
    for bandpass.  Edges are prewarped so the digital magnitude is exactly
    -3.0103 dB at each requested cutoff; the passband reference (DC for
    lowpass, Nyquist for highpass, the geometric center for bandpass) is
    normalized to unit gain.
    """
    if order < 1:
        raise ValidationError("filter order must be >= 1")
    if kind not in FILTER_TYPES:
        raise ValidationError(f"unknown filter type {kind!r}")
    if np.isscalar(cutoffs):
        cut = (float(cutoffs),)
    else:
        cut = tuple(float(f) for f in cutoffs)
    for f in cut:
        if not 0.0 < f < fs / 2.0:
            raise ValidationError(f"cutoff {f} Hz outside (0, fs/2)")

    poles = _butter_prototype_poles(order)
    zeros: list[complex] = []
    gain = 1.0

    if kind in ("lowpass", "highpass"):
        if len(cut) != 1:
            raise ValidationError(f"{kind} takes a single cutoff")
        w0 = _prewarp(cut[0], fs)
        if kind == "lowpass":
            poles = [p * w0 for p in poles]
            gain = w0**order
        else:
            # B_N(0) = prod(-p) = 1 for the Butterworth prototype, so the
            # highpass transform leaves the gain at 1.
            poles = [w0 / p for p in poles]
            zeros = [0.0 + 0.0j] * order
    else:
        if len(cut) != 2 or not cut[0] < cut[1]:
            raise ValidationError("bandpass takes (low, high) with low < high")
        w1, w2 = _prewarp(cut[0], fs), _prewarp(cut[1], fs)
        bw, w0 = w2 - w1, math.sqrt(w1 * w2)
        bp_poles = []
        for p in poles:
            half = p * bw / 2.0
            disc = cmath.sqrt(half * half - w0 * w0)
            bp_poles.extend([half + disc, half - disc])
        poles = bp_poles
        zeros = [0.0 + 0.0j] * order
        gain = bw**order

    # Bilinear transform s -> 2 fs (z-1)/(z+1); degree deficit maps to z = -1.
    fs2 = 2.0 * fs
    num = np.prod([fs2 - z for z in zeros]) if zeros else 1.0
    den = np.prod([fs2 - p for p in poles])
    gain_d = gain * (num / den)
    z_d = [(fs2 + z) / (fs2 - z) for z in zeros]
    p_d = [(fs2 + p) / (fs2 - p) for p in poles]
    z_d.extend([-1.0 + 0.0j] * (len(p_d) - len(z_d)))

    sections = _pair_into_biquads(z_d, p_d, kind)
    cascade = BiquadCascade(
        sections=sections,
        gain=float(np.real(gain_d)),
        order=order,
        kind=kind,
        cutoffs_hz=cut,
        fs=float(fs),
    )

    ref_hz = _reference_frequency(cascade)
    ref_gain = abs(cascade.freq_response(np.array([ref_hz]))[0])
    if ref_gain <= 0.0 or not math.isfinite(ref_gain):
        raise ValidationError("degenerate design: zero gain at passband reference")
    cascade.gain /= ref_gain

    if not cascade.is_stable():
        raise ValidationError("design produced an unstable section")
    return cascade


def _reference_frequency(cascade: BiquadCascade) -> float:
    if cascade.kind == "lowpass":
        return 0.0
    if cascade.kind == "highpass":
        return cascade.fs / 2.0
    w1 = _prewarp(cascade.cutoffs_hz[0], cascade.fs)
    w2 = _prewarp(cascade.cutoffs_hz[1], cascade.fs)
    w0 = math.sqrt(w1 * w2)
    # Map the analog center back through the bilinear warp.
    return cascade.fs / math.pi * math.atan(w0 / (2.0 * cascade.fs))


def _pair_into_biquads(zeros: list[complex], poles: list[complex],
                       kind: str) -> list[BiquadSection]:
    """Group conjugate pole pairs (and matching zeros) into sections.

    All zeros here sit at z = +1 or z = -1, so assignment is just a matter
    of drawing from the multiset; bandpass sections each get one of each,
    which keeps every section itself bandpass-shaped.
    """
    pos = sorted([z for z in zeros if z.real > 0.0], key=lambda v: -abs(v))
    neg = sorted([z for z in zeros if z.real <= 0.0], key=lambda v: -abs(v))

    complex_poles = [p for p in poles if abs(p.imag) > 1e-12]
    real_poles = sorted((p.real for p in poles if abs(p.imag) <= 1e-12), reverse=True)
    # one representative per conjugate pair, closest to the unit circle first
    reps = sorted([p for p in complex_poles if p.imag > 0], key=lambda p: -abs(p))
    if 2 * len(reps) != len(complex_poles):
        raise ValidationError("unpaired complex pole in design")

    def take_zero_pair() -> tuple[complex, ...]:
        if kind == "bandpass":
            got = []
            if pos:
                got.append(pos.pop())
            if neg:
                got.append(neg.pop())
            while len(got) < 2 and (pos or neg):
                got.append((pos or neg).pop())
            return tuple(got)
        pool = pos if kind == "highpass" else neg
        got = [pool.pop() for _ in range(min(2, len(pool)))]
        return tuple(got)

    sections = []
    for p in reps:
        zs = take_zero_pair()
        b = _poly_from_roots(zs)
        sections.append(BiquadSection(
            b0=b[0], b1=b[1], b2=b[2],
            a1=-2.0 * p.real, a2=abs(p) ** 2,
        ))
    while len(real_poles) >= 2:
        p1, p2 = real_poles.pop(0), real_poles.pop(0)
        zs = take_zero_pair()
        b = _poly_from_roots(zs)
        sections.append(BiquadSection(b0=b[0], b1=b[1], b2=b[2],
                                      a1=-(p1 + p2), a2=p1 * p2))
    if real_poles:
        p1 = real_poles.pop(0)
        zs = take_zero_pair()[:1]
        b = _poly_from_roots(zs)
        sections.append(BiquadSection(b0=b[0], b1=b[1], b2=b[2], a1=-p1, a2=0.0))
    leftovers = len(pos) + len(neg)
    if leftovers:
        raise ValidationError("zeros left unassigned in section pairing")
    return sections


def _poly_from_roots(roots: tuple[complex, ...]) -> tuple[float, float, float]:
    """Monic polynomial coefficients (1, c1, c2) from up to two real roots."""
    if len(roots) == 0:
        return (1.0, 0.0, 0.0)
    if len(roots) == 1:
        return (1.0, -float(roots[0].real), 0.0)
    r1, r2 = roots
    return (1.0, -float((r1 + r2).real), float((r1 * r2).real))


def _sos_filter_causal(cascade: BiquadCascade, x: np.ndarray) -> np.ndarray:
    """Direct-form-II-transposed evaluation of the cascade, zero initial state."""
    y = [float(v) for v in np.asarray(x, dtype=np.float64)]
    for sec in cascade.sections:
        b0, b1, b2, a1, a2 = sec.b0, sec.b1, sec.b2, sec.a1, sec.a2
        s1 = 0.0
        s2 = 0.0
        for n in range(len(y)):
            xn = y[n]
            yn = b0 * xn + s1
            s1 = b1 * xn - a1 * yn + s2
            s2 = b2 * xn - a2 * yn
            y[n] = yn
    out = np.asarray(y, dtype=np.float64)
    return cascade.gain * out


def filter_apply(x: Signal, cascade: BiquadCascade, mode: str = "zero-phase") -> Signal:
    """Run the cascade over a signal, causal or forward-backward.

    Zero-phase mode filters forward, reverses, filters again and reverses,
    with odd-reflection edge padding of 3x the cascade impulse length so
    startup transients stay outside the returned samples.
    """
    if abs(x.fs - cascade.fs) > 1e-9:
        raise ValidationError(f"signal fs {x.fs} does not match design fs {cascade.fs}")
    if mode == "causal":
        out = _sos_filter_causal(cascade, x.samples)
    elif mode == "zero-phase":
        pad = min(3 * cascade.impulse_length(), len(x.samples) - 1)
        data = x.samples
        if pad > 0:
            left = 2.0 * data[0] - data[pad:0:-1]
            right = 2.0 * data[-1] - data[-2:-pad - 2:-1]
            data = np.concatenate([left, data, right])
        out = _sos_filter_causal(cascade, data)[::-1]
        out = _sos_filter_causal(cascade, out)[::-1]
        if pad > 0:
            out = out[pad:-pad]
    else:
        raise ValidationError(f"unknown filter mode {mode!r}")
    return Signal(samples=out, fs=x.fs, provenance=dict(x.provenance))


def resample(x: Signal, fs_out: float, max_denominator: int = 1000) -> Signal:
    """Rational polyphase resampling with a Kaiser-windowed sinc filter.

    The anti-alias/anti-image lowpass cuts at 0.9x the lower of the two
    Nyquist rates (120 dB design); output length is round(n * fs_out / fs_in).
    Edges are odd-reflected before filtering to suppress boundary ringing.
    """
    if fs_out <= 0:
        raise ValidationError("fs_out must be positive")
    ratio = (Fraction(float(fs_out)).limit_denominator(10**6)
             / Fraction(float(x.fs)).limit_denominator(10**6))
    if ratio.numerator > max_denominator or ratio.denominator > max_denominator:
        raise ValidationError(
            f"fs ratio {fs_out}/{x.fs} is not rational within denominator {max_denominator}")
    up, down = ratio.numerator, ratio.denominator
    n_in = len(x.samples)
    n_out = int(round(n_in * fs_out / x.fs))
    if up == down:
        return Signal(samples=x.samples.copy(), fs=fs_out, provenance=dict(x.provenance))

    mx = max(up, down)
    atten_db = 120.0
    half = 78 * mx  # taps per side; sized for the 120 dB Kaiser design
    beta = 0.1102 * (atten_db - 8.7)
    j = np.arange(-half, half + 1, dtype=np.float64)
    cutoff = 0.45 / mx  # cycles per upsampled sample: 0.9 * (Nyquist / mx)
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * j) * np.kaiser(2 * half + 1, beta)
    h *= up / h.sum()

    # extend pad_in input samples each side by linear prediction so the
    # boundary looks statistically like the signal; pad_in multiple of
    # `down` keeps the output trim an integer number of samples.
    half_in = (half + up - 1) // up
    pad_in = ((half_in + down - 1) // down) * down
    data = x.samples
    if pad_in > 0:
        left = _ar_extend(data[::-1], pad_in)[::-1]
        right = _ar_extend(data, pad_in)
        data = np.concatenate([left, data, right])

    upsampled = np.zeros(len(data) * up)
    upsampled[::up] = data
    filtered = _fft_convolve(upsampled, h)[half:half + len(upsampled)]
    pad_out = pad_in * up // down
    y = filtered[::down][pad_out:pad_out + n_out]
    if len(y) < n_out:
        y = np.concatenate([y, np.zeros(n_out - len(y))])
    return Signal(samples=y, fs=fs_out, provenance=dict(x.provenance))


def _fft_convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    n = len(x) + len(h) - 1
    nfft = 1 << (n - 1).bit_length()
    out = np.fft.irfft(np.fft.rfft(x, nfft) * np.fft.rfft(h, nfft), nfft)
    return out[:n]


def _levinson(r: np.ndarray, order: int) -> np.ndarray:
    """Levinson-Durbin recursion; returns (1, a_1..a_order) prediction
    polynomial for autocorrelation sequence r[0..order]."""
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = r[0]
    for i in range(1, order + 1):
        if err <= 1e-12 * r[0]:
            break
        k = -(r[i] + np.dot(a[1:i], r[i - 1:0:-1])) / err
        a[1:i + 1] = (np.concatenate([a[1:i], [0.0]])
                      + k * np.concatenate([a[1:i][::-1], [1.0]]))
        err *= 1.0 - k * k
    return a


def _ar_extend(x: np.ndarray, n_ext: int, order: int = 32) -> np.ndarray:
    """Extrapolate forward past the end of x with a stable AR predictor.

    Biased autocorrelation keeps the predictor minimum phase, so the
    extension decays rather than blows up.  Degenerate signals fall back to
    holding the last value.
    """
    order = min(order, len(x) - 2)
    if order < 1:
        return np.full(n_ext, x[-1] if len(x) else 0.0)
    mean = x.mean()
    xc = x - mean
    r = np.correlate(xc, xc, "full")[len(xc) - 1:len(xc) + order] / len(xc)
    if r[0] <= 0.0:
        return np.full(n_ext, x[-1])
    coefs = -_levinson(r, order)[1:]
    buf = list(xc[-order:][::-1])  # most recent first
    out = np.empty(n_ext)
    for i in range(n_ext):
        v = float(np.dot(coefs, buf))
        out[i] = v
        buf.pop()
        buf.insert(0, v)
    return out + mean


def highpass_denoise(x: Signal, cutoff_hz: float = HP_BASELINE_CUTOFF_HZ,
                     order: int = HP_BASELINE_ORDER) -> Signal:
    """Highpass baseline: zero-phase Butterworth above the cardiac band."""
    cascade = design_butterworth(order, "highpass", cutoff_hz, x.fs)
    return filter_apply(x, cascade, mode="zero-phase")


def preprocess_semg(x: Signal, target_fs: float = 1000.0,
                    band: tuple[float, float] = (20.0, 500.0),
                    order: int = 4) -> Signal:
    """Conditioning chain for raw sEMG: 4th-order Butterworth bandpass,
    downsample to the working rate, max-abs normalize."""
    from .data import normalize

    if band[1] >= x.fs / 2.0:
        raise ValidationError("bandpass upper edge must sit below Nyquist")
    cascade = design_butterworth(order, "bandpass", band, x.fs)
    filtered = filter_apply(x, cascade, mode="zero-phase")
    if abs(x.fs - target_fs) > 1e-9:
        filtered = resample(filtered, target_fs)
    return normalize(filtered)[0]


def preprocess_ecg(x: Signal, hp_hz: float = 10.0, lp_hz: float = 200.0,
                   order: int = 3) -> Signal:
    """Conditioning chain for raw ECG at its native rate: 3rd-order highpass,
    plus the matching lowpass when the rate leaves room for it below Nyquist
    (a 128 Hz record has no content near 200 Hz to remove)."""
    cascade = design_butterworth(order, "highpass", hp_hz, x.fs)
    out = filter_apply(x, cascade, mode="zero-phase")
    if lp_hz < x.fs / 2.0:
        low = design_butterworth(order, "lowpass", lp_hz, x.fs)
        out = filter_apply(out, low, mode="zero-phase")
    return out


def detect_r_peaks(x: Signal, threshold_factor: float = 3.0,
                   search_back_factor: float = 1.3) -> RPeakList:
    """Locate QRS complexes: bandpass, square, integrate, adaptive threshold.

    Front end: 5-15 Hz bandpass -> squaring -> 150 ms moving average ->
    running median threshold (2 s window, scaled by threshold_factor) ->
    200 ms refractory.  Detections are then reconciled with the beat-period
    structure (gap search-back at the lower search_back_factor threshold,
    relocation of off-grid detections, pruning of extras) and finally refined
    to the local maximum of the bandpassed signal within +/-50 ms.
    """
    if x.fs < 100.0:
        raise ValidationError("R-peak detection needs fs >= 100 Hz")
    n = len(x.samples)
    if n < 2 * x.fs:
        raise ValidationError("R-peak detection needs at least 2 s of signal")

    band = design_butterworth(3, "bandpass", (5.0, 15.0), x.fs)
    filtered = filter_apply(x, band, mode="zero-phase").samples
    squared = filtered * filtered
    win = max(1, int(round(0.150 * x.fs)))
    integrated = _moving_average(squared, win)

    median_floor = _running_median(integrated, int(round(2.0 * x.fs)),
                                   hop=max(1, int(round(0.25 * x.fs))))
    above = integrated > threshold_factor * median_floor
    if not np.any(above):
        return RPeakList(indices=np.array([], dtype=np.int64))

    # contiguous supra-threshold regions -> candidate at each region's maximum
    starts, stops = _region_bounds(above)
    candidates = [int(s + np.argmax(integrated[s:e])) for s, e in zip(starts, stops)]

    refractory = int(round(0.200 * x.fs))
    guard = int(round(0.150 * x.fs))  # integration edge effects live here
    candidates = [c for c in candidates if guard <= c < n - guard]
    kept: list[int] = []
    for idx in sorted(candidates, key=lambda i: -integrated[i]):
        if all(abs(idx - k) >= refractory for k in kept):
            kept.append(idx)
    kept.sort()

    kept = _reconcile_with_period(kept, integrated, search_back_factor * median_floor,
                                  refractory, guard, n)

    half = int(round(0.050 * x.fs))
    refined = []
    for idx in kept:
        lo, hi = max(0, idx - half), min(n, idx + half + 1)
        refined.append(int(lo + np.argmax(filtered[lo:hi])))
    refined = sorted(set(refined))
    final: list[int] = []
    for idx in refined:
        if not final or idx - final[-1] >= refractory:
            final.append(idx)

    peaks = np.asarray(final, dtype=np.int64)
    period = float(np.median(np.diff(peaks))) if len(peaks) >= 2 else 0.0
    return RPeakList(indices=peaks, mean_period_samples=period)


def _reconcile_with_period(kept: list[int], integrated: np.ndarray,
                           low_threshold: np.ndarray, refractory: int,
                           guard: int, n: int) -> list[int]:
    """Use beat-period regularity to recover missed beats, re-center
    detections that drifted onto noise, and drop spurious extras."""

    def clear(c, others):
        return all(abs(c - k) >= refractory for k in others)

    def window_peak(expected, period):
        lo = int(max(guard, expected - 0.25 * period))
        hi = int(min(n - guard, expected + 0.25 * period))
        if hi <= lo:
            return None
        c = lo + int(np.argmax(integrated[lo:hi]))
        return c if integrated[c] >= low_threshold[c] else None

    for _ in range(4):
        if len(kept) < 3:
            return kept
        period = float(np.median(np.diff(kept)))
        if period < refractory:
            return kept
        changed = False

        # fill gaps, including a possible leading/trailing beat
        expected_points: list[float] = []
        if kept[0] - guard > 1.55 * period:
            expected_points.append(kept[0] - period)
        for a, b in zip(kept[:-1], kept[1:]):
            span = b - a
            if span > 1.55 * period:
                beats = round(span / period)
                expected_points.extend(a + j * span / beats for j in range(1, beats))
        if (n - guard) - kept[-1] > 1.55 * period:
            expected_points.append(kept[-1] + period)
        for expected in expected_points:
            c = window_peak(expected, period)
            if c is not None and clear(c, kept):
                kept.append(c)
                changed = True
        kept.sort()

        # re-center detections that sit far from the previous beat's prediction
        period = float(np.median(np.diff(kept)))
        relocated = [kept[0]]
        for d in kept[1:]:
            predicted = relocated[-1] + period
            if abs(d - predicted) > 0.22 * period and d - relocated[-1] < 1.55 * period:
                c = window_peak(predicted, 0.8 * period)
                if c is not None and abs(c - d) > 0.1 * period and clear(c, relocated):
                    relocated.append(c)
                    changed = True
                    continue
            relocated.append(d)
        kept = sorted(set(relocated))

        # prune extras: a triple squeezed into under 1.4 periods has one too many
        i = 1
        while i < len(kept) - 1:
            a, d, b = kept[i - 1], kept[i], kept[i + 1]
            if b - a < 1.4 * period:
                kept.remove(min((a, d, b), key=lambda j: integrated[j]))
                changed = True
            else:
                i += 1
        if not changed:
            break
    return kept


def _region_bounds(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.concatenate([[False], mask, [False]])
    diff = np.diff(padded.astype(np.int8))
    return np.flatnonzero(diff == 1), np.flatnonzero(diff == -1)


def _moving_average(x: np.ndarray, win: int) -> np.ndarray:
    """Centered moving average, edges averaged over the in-bounds part."""
    csum = np.cumsum(np.concatenate([[0.0], x]))
    half = win // 2
    idx = np.arange(len(x))
    lo = np.clip(idx - half, 0, len(x))
    hi = np.clip(idx + (win - half), 0, len(x))
    return (csum[hi] - csum[lo]) / np.maximum(hi - lo, 1)


def _running_median(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    """Median over a sliding window, evaluated every `hop` samples and
    linearly interpolated back to full length."""
    n = len(x)
    win = min(max(win, 1), n)
    centers = np.arange(0, n, hop)
    meds = np.empty(len(centers))
    for i, c in enumerate(centers):
        lo = max(0, c - win // 2)
        hi = min(n, lo + win)
        lo = max(0, hi - win)
        meds[i] = np.median(x[lo:hi])
    return np.interp(np.arange(n), centers, meds)


class TemplateSubtractWarning(UserWarning):
    """Raised as a warning when template subtraction cannot run."""


def template_subtract(x: Signal, peaks: RPeakList,
                      window_ms: float = TEMPLATE_WINDOW_MS,
                      taper_ms: float = TEMPLATE_TAPER_MS) -> Signal:
    """Subtract the mean beat-aligned window at every detected beat.

    The template is the pointwise mean over beats whose full window fits in
    the signal; it is subtracted at every beat with cosine-tapered edges so
    the seams stay continuous.  Samples outside all windows are untouched.
    With fewer than 2 usable beats this is a warned no-op.
    """
    n = len(x.samples)
    half = max(1, int(round(window_ms / 1000.0 * x.fs / 2.0)))
    width = 2 * half + 1
    full = [int(p) for p in peaks.indices if p - half >= 0 and p + half < n]
    if len(full) < 2:
        warnings.warn("need at least 2 beats with full windows; returning input unchanged",
                      TemplateSubtractWarning)
        return Signal(samples=x.samples.copy(), fs=x.fs, provenance=dict(x.provenance))

    template = np.mean([x.samples[p - half:p + half + 1] for p in full], axis=0)
    taper = np.ones(width)
    ramp_len = min(max(1, int(round(taper_ms / 1000.0 * x.fs))), half)
    ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(1, ramp_len + 1) / (ramp_len + 1)))
    taper[:ramp_len] = ramp
    taper[-ramp_len:] = ramp[::-1]
    shaped = template * taper

    out = x.samples.copy()
    for p in peaks.indices:
        lo, hi = int(p) - half, int(p) + half + 1
        src_lo, src_hi = max(0, -lo), width - max(0, hi - n)
        lo, hi = max(0, lo), min(n, hi)
        out[lo:hi] -= shaped[src_lo:src_hi]
    return Signal(samples=out, fs=x.fs, provenance=dict(x.provenance))


def template_subtract_denoise(x: Signal, window_ms: float = TEMPLATE_WINDOW_MS) -> Signal:
    """TS baseline: detect beats in the contaminated signal, then subtract."""
    peaks = detect_r_peaks(x)
    if len(peaks) < 2:
        warnings.warn("fewer than 2 beats detected; returning input unchanged",
                      TemplateSubtractWarning)
        return Signal(samples=x.samples.copy(), fs=x.fs, provenance=dict(x.provenance))
    return template_subtract(x, peaks, window_ms=window_ms)
