"""Selective state-space model core.

A linear state-space layer h'(t) = A h(t) + B x(t), y(t) = C h(t) with
diagonal A, discretized by zero-order hold:

    a_bar = exp(delta * A)
    b_bar = (delta * A)^-1 (exp(delta * A) - 1) * delta * B

run either as a recurrence (``ssm_step`` / ``ssm_scan_lti``), as a causal
convolution with the unrolled kernel (CB_bar, C A_bar B_bar, ...), or with
input-dependent delta/B/C per step (``selective_scan``).  A dense-A RK4
integrator of the continuous system is included as a slow reference.

A is stored as its H diagonal entries; this keeps ZOH closed-form and the
scan O(T*H).  All arithmetic here is double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# |delta*A| below this uses the truncated series for (e^z - 1)/z.
SMALL_ARG_THRESHOLD = 1e-4


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 1-D array")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def phi1(z: np.ndarray) -> np.ndarray:
    """(e^z - 1) / z, with a 4-term series below SMALL_ARG_THRESHOLD.

    The series branch keeps b_bar well defined and cancellation-free as
    delta*A -> 0 (value 1 at z = 0).
    """
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    small = np.abs(z) < SMALL_ARG_THRESHOLD
    zb = z[~small]
    out[~small] = np.expm1(zb) / zb
    zs = z[small]
    out[small] = 1.0 + zs / 2.0 + zs**2 / 6.0 + zs**3 / 24.0
    return out


def phi1_prime(z: np.ndarray) -> np.ndarray:
    """Derivative of phi1, series branch matched to ``phi1``."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    small = np.abs(z) < SMALL_ARG_THRESHOLD
    zb = z[~small]
    out[~small] = (np.exp(zb) * (zb - 1.0) + 1.0) / zb**2
    zs = z[small]
    out[small] = 0.5 + zs / 3.0 + zs**2 / 8.0 + zs**3 / 30.0
    return out


@dataclass
class SsmParams:
    """Continuous-time parameters (diagonal A) plus the step size delta."""

    a: np.ndarray  # (H,) diagonal of the state transition matrix
    b: np.ndarray  # (H,) input projection
    c: np.ndarray  # (H,) output projection
    delta: float

    def __post_init__(self):
        self.a = _as_vector(self.a, "a")
        self.b = _as_vector(self.b, "b")
        self.c = _as_vector(self.c, "c")
        if not (len(self.a) == len(self.b) == len(self.c)):
            raise ValidationError("a, b, c must share the state dimension")
        self.delta = float(self.delta)
        if not np.isfinite(self.delta) or self.delta <= 0.0:
            raise ValidationError("delta must be positive and finite")

    @property
    def state_dim(self) -> int:
        return len(self.a)


@dataclass
class SsmState:
    """Hidden state plus the step index it corresponds to."""

    h: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.h = _as_vector(self.h, "h")
        if self.t < 0:
            raise ValidationError("step index must be non-negative")

    @classmethod
    def zeros(cls, state_dim: int) -> "SsmState":
        return cls(h=np.zeros(state_dim), t=0)


@dataclass
class DiscretizedSsm:
    """ZOH-discretized transition and input maps (diagonal system)."""

    a_bar: np.ndarray
    b_bar: np.ndarray

    def __post_init__(self):
        self.a_bar = _as_vector(self.a_bar, "a_bar")
        self.b_bar = _as_vector(self.b_bar, "b_bar")
        if len(self.a_bar) != len(self.b_bar):
            raise ValidationError("a_bar and b_bar must share the state dimension")

    @property
    def state_dim(self) -> int:
        return len(self.a_bar)


@dataclass
class SsmKernel:
    """Causal convolution kernel (C b_bar, C a_bar b_bar, ..., C a_bar^k b_bar)."""

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = _as_vector(self.coeffs, "coeffs")

    @property
    def k(self) -> int:
        return len(self.coeffs) - 1


@dataclass
class SelectiveInputs:
    """Per-step delta, B and C for the input-dependent scan.

    delta: (T,), strictly positive. b, c: (T, H).
    """

    delta: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.delta = _as_vector(self.delta, "delta")
        self.b = np.asarray(self.b, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.b.ndim != 2 or self.c.ndim != 2:
            raise ValidationError("b and c must be (T, H) arrays")
        t = len(self.delta)
        if self.b.shape[0] != t or self.c.shape[0] != t:
            raise ValidationError("delta, b, c must share the sequence length")
        if self.b.shape[1] != self.c.shape[1]:
            raise ValidationError("b and c must share the state dimension")
        if not (np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.c))):
            raise ValidationError("selective inputs contain non-finite entries")
        if np.any(self.delta <= 0.0):
            raise ValidationError("every delta_t must be positive")

    @property
    def seq_len(self) -> int:
        return len(self.delta)

    @property
    def state_dim(self) -> int:
        return self.b.shape[1]


def stable_params(rng: np.random.Generator, state_dim: int,
                  delta_range: tuple[float, float] = (0.02, 0.2)) -> SsmParams:
    """Random stable system: every diagonal entry of A strictly negative."""
    a = -rng.uniform(0.05, 2.0, size=state_dim)
    b = rng.normal(size=state_dim)
    c = rng.normal(size=state_dim)
    delta = float(rng.uniform(*delta_range))
    return SsmParams(a=a, b=b, c=c, delta=delta)


def discretize_zoh(params: SsmParams) -> DiscretizedSsm:
    """Zero-order-hold discretization of a diagonal system.

    a_bar[i] = exp(delta * a[i]); b_bar[i] = phi1(delta * a[i]) * delta * b[i],
    which equals (delta a)^-1 (exp(delta a) - 1) delta b away from a = 0 and
    tends to delta * b as delta * a -> 0.
    """
    z = params.delta * params.a
    a_bar = np.exp(z)
    b_bar = phi1(z) * params.delta * params.b
    return DiscretizedSsm(a_bar=a_bar, b_bar=b_bar)


def ssm_step(disc: DiscretizedSsm, state: SsmState, x_t: float,
             c: np.ndarray) -> tuple[SsmState, float]:
    """One recurrence step: h_t = a_bar * h_{t-1} + b_bar * x_t, y_t = c . h_t."""
    c = _as_vector(c, "c")
    if len(state.h) != disc.state_dim or len(c) != disc.state_dim:
        raise ValidationError("state/output projection dimension mismatch")
    h = disc.a_bar * state.h + disc.b_bar * float(x_t)
    y = float(c @ h)
    return SsmState(h=h, t=state.t + 1), y


def ssm_scan_lti(disc: DiscretizedSsm, c: np.ndarray, x: np.ndarray,
                 h0: SsmState | None = None) -> np.ndarray:
    """Fold ``ssm_step`` over x (time-invariant system). Output length = len(x)."""
    c = _as_vector(c, "c")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError("input sequence must be non-empty")
    if len(c) != disc.state_dim:
        raise ValidationError("output projection dimension mismatch")
    h = np.zeros(disc.state_dim) if h0 is None else h0.h.copy()
    if len(h) != disc.state_dim:
        raise ValidationError("initial state dimension mismatch")
    a_bar, b_bar = disc.a_bar, disc.b_bar
    y = np.empty(len(x))
    for t in range(len(x)):
        h = a_bar * h + b_bar * x[t]
        y[t] = c @ h
    return y


def unroll_kernel(disc: DiscretizedSsm, c: np.ndarray, k: int) -> SsmKernel:
    """Kernel coefficients c . a_bar^j . b_bar for j = 0..k."""
    c = _as_vector(c, "c")
    if len(c) != disc.state_dim:
        raise ValidationError("output projection dimension mismatch")
    if k < 0:
        raise ValidationError("k must be non-negative")
    # powers[j] = a_bar^j via cumulative product; (k+1, H)
    powers = np.ones((k + 1, disc.state_dim))
    if k > 0:
        powers[1:] = np.cumprod(np.broadcast_to(disc.a_bar, (k, disc.state_dim)), axis=0)
    coeffs = powers @ (c * disc.b_bar)
    return SsmKernel(coeffs=coeffs)


def apply_kernel(x: np.ndarray, kernel: SsmKernel) -> np.ndarray:
    """Causal convolution y_t = sum_j coeffs[j] * x_{t-j}; length preserved."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError("input sequence must be non-empty")
    if kernel.coeffs.size == 0:
        raise ValidationError("kernel must be non-empty")
    return np.convolve(x, kernel.coeffs)[: len(x)]


def selective_scan(x: np.ndarray, sel: SelectiveInputs, a: np.ndarray,
                   h0: np.ndarray | None = None) -> np.ndarray:
    """Input-dependent scan: re-discretize (a_bar, b_bar) at every step.

    At step t the pair (a_bar_t, b_bar_t) comes from the ZOH formulas applied
    to (delta_t, a, b_t); then h_t = a_bar_t * h_{t-1} + b_bar_t * x_t and
    y_t = c_t . h_t.  Causal by construction.  With constant delta/b/c this is
    arithmetically identical to ``ssm_scan_lti`` after ``discretize_zoh``.
    """
    a = _as_vector(a, "a")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("input sequence must be 1-D")
    if len(x) != sel.seq_len:
        raise ValidationError("input length must match selective inputs")
    if sel.state_dim != len(a):
        raise ValidationError("state dimension mismatch")
    h = np.zeros(len(a)) if h0 is None else np.asarray(h0, dtype=np.float64).copy()
    y = np.empty(len(x))
    for t in range(len(x)):
        z = sel.delta[t] * a
        a_bar = np.exp(z)
        b_bar = phi1(z) * sel.delta[t] * sel.b[t]
        h = a_bar * h + b_bar * x[t]
        y[t] = sel.c[t] @ h
    return y


def simulate_continuous_rk4(a, b: np.ndarray, c: np.ndarray, x: np.ndarray,
                            delta: float, substeps: int,
                            h0: np.ndarray | None = None) -> np.ndarray:
    """RK4 integration of h' = A h + B x with x held constant per interval.

    Reference oracle for the discrete recurrence: accepts diagonal A as an
    (H,) vector or a dense (H, H) matrix.  y_t samples C h at the end of
    interval t, matching the h_t = a_bar h_{t-1} + b_bar x_t convention.
    """
    a = np.asarray(a, dtype=np.float64)
    b = _as_vector(b, "b")
    c = _as_vector(c, "c")
    x = np.asarray(x, dtype=np.float64)
    if substeps < 1:
        raise ValidationError("substeps must be >= 1")
    if a.ndim == 1:
        apply_a = lambda h: a * h
        dim = len(a)
    elif a.ndim == 2 and a.shape[0] == a.shape[1]:
        apply_a = lambda h: a @ h
        dim = a.shape[0]
    else:
        raise ValidationError("a must be a vector (diagonal) or square matrix")
    if len(b) != dim or len(c) != dim:
        raise ValidationError("b/c dimension mismatch")
    h = np.zeros(dim) if h0 is None else np.asarray(h0, dtype=np.float64).copy()
    dt = float(delta) / substeps
    y = np.empty(len(x))
    for t in range(len(x)):
        u = x[t]
        bu = b * u
        for _ in range(substeps):
            k1 = apply_a(h) + bu
            k2 = apply_a(h + 0.5 * dt * k1) + bu
            k3 = apply_a(h + 0.5 * dt * k2) + bu
            k4 = apply_a(h + dt * k3) + bu
            h = h + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y[t] = c @ h
    return y
