"""Pulsed-update physics of a single resistive crossbar element.

Two update laws are modelled:

* ``SOFT_BOUNDS``: the step taken by one pulse shrinks linearly with the
  distance to the bound it approaches. With ``gamma = 2 * dw / (b_max - b_min)``
  an up pulse moves ``gamma * (b_max - w)`` and a down pulse moves
  ``gamma * (w - b_min)``, so at the midpoint of a symmetric device the step is
  exactly ``dw``.
* ``IDEAL_LINEAR``: constant steps inside wide fixed bounds. This is the limit
  in which pulsed training degenerates to plain SGD and is used as an oracle.

Weights are signed and live on a single element (no G+/G- pair).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import as_rng

__all__ = [
    "DeviceKind",
    "DeviceSpec",
    "DeviceElement",
    "DeviceArray",
    "skew_to_bounds",
    "measure_skew",
    "symmetry_point",
    "pulse_update",
    "apply_pulses",
    "sample_device_array",
]


class DeviceKind(str, enum.Enum):
    SOFT_BOUNDS = "soft_bounds"
    IDEAL_LINEAR = "ideal_linear"


UP = 1
DOWN = -1


def skew_to_bounds(sps_percent: float, weight_range: float = 2.0) -> tuple[float, float]:
    """Invert the symmetry-point-skew percentage into ``(b_max, b_min)``.

    ``b_max = sps * range / 100`` and ``b_min = b_max - range``.
    """
    if not 0.0 < sps_percent < 100.0:
        raise ValueError(f"sps_percent must lie in (0, 100), got {sps_percent}")
    if not weight_range > 0.0:
        raise ValueError(f"weight range must be positive, got {weight_range}")
    b_max = sps_percent * weight_range / 100.0
    b_min = b_max - weight_range
    return b_max, b_min


def measure_skew(b_max: float, b_min: float) -> float:
    """Symmetry-point skew in percent: ``b_max * 100 / (b_max - b_min)``."""
    if not b_max > b_min:
        raise ValueError(f"b_max ({b_max}) must exceed b_min ({b_min})")
    return b_max * 100.0 / (b_max - b_min)


@dataclass
class DeviceSpec:
    """Mean device parameters plus the spreads used when sampling an array.

    ``sps_percent`` is optional; when given, the mean bounds are re-derived
    from it while keeping the range ``w_max_mean - w_min_mean``.
    ``spv_mode`` selects how symmetry-point variability is realised:
    ``"bounds"`` shifts both bounds jointly, ``"steps"`` skews the up/down step
    ratio instead.
    """

    dw_min_up: float = 0.002
    dw_min_down: float = 0.002
    w_max_mean: float = 1.0
    w_min_mean: float = -1.0
    dw_min_dtod: float = 0.0
    dw_min_c2c: float = 0.0
    bounds_dtod: float = 0.0
    sps_percent: float | None = None
    spv_percent: float = 0.0
    spv_mode: str = "bounds"
    kind: DeviceKind = DeviceKind.SOFT_BOUNDS
    ideal_bound: float = 10.0

    def __post_init__(self):
        self.kind = DeviceKind(self.kind)
        if self.dw_min_up <= 0 or self.dw_min_down <= 0:
            raise ValueError("dw_min_up and dw_min_down must be positive")
        if not self.w_max_mean > self.w_min_mean:
            raise ValueError("w_max_mean must exceed w_min_mean")
        for name in ("dw_min_dtod", "dw_min_c2c", "bounds_dtod", "spv_percent"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.sps_percent is not None and not 0.0 < self.sps_percent < 100.0:
            raise ValueError(f"sps_percent must lie in (0, 100), got {self.sps_percent}")
        if self.spv_mode not in ("bounds", "steps"):
            raise ValueError(f"spv_mode must be 'bounds' or 'steps', got {self.spv_mode!r}")
        if self.ideal_bound <= 0:
            raise ValueError("ideal_bound must be positive")
        if self.kind is DeviceKind.SOFT_BOUNDS and max(self.dw_min_up, self.dw_min_down) >= self.weight_range / 2:
            raise ValueError("dw_min must be smaller than half the weight range")

    @property
    def weight_range(self) -> float:
        return self.w_max_mean - self.w_min_mean

    @property
    def mean_bounds(self) -> tuple[float, float]:
        if self.kind is DeviceKind.IDEAL_LINEAR:
            return self.ideal_bound, -self.ideal_bound
        if self.sps_percent is not None:
            return skew_to_bounds(self.sps_percent, self.weight_range)
        return self.w_max_mean, self.w_min_mean

    @property
    def dw_min(self) -> float:
        """Reference step used for pulse-count normalisation."""
        return 0.5 * (self.dw_min_up + self.dw_min_down)


@dataclass(frozen=True)
class DeviceElement:
    w: float
    dw_up: float
    dw_down: float
    b_max: float
    b_min: float
    kind: DeviceKind = DeviceKind.SOFT_BOUNDS
    dw_c2c: float = 0.0

    def __post_init__(self):
        if not (self.dw_up > 0 and self.dw_down > 0):
            raise ValueError("element steps must be positive")
        if not self.b_max > self.b_min:
            raise ValueError("b_max must exceed b_min")
        if not self.b_min <= self.w <= self.b_max:
            raise ValueError(f"w={self.w} outside [{self.b_min}, {self.b_max}]")

    @property
    def w_star(self) -> float:
        return symmetry_point(self)


def _symmetry_point(dw_up, dw_down, b_max, b_min):
    # gamma+ (b_max - w) = gamma- (w - b_min); the shared 2/range factor cancels
    return (dw_up * b_max + dw_down * b_min) / (dw_up + dw_down)


def symmetry_point(elem: DeviceElement) -> float:
    """Weight at which up and down soft-bounds steps have equal size."""
    return float(_symmetry_point(elem.dw_up, elem.dw_down, elem.b_max, elem.b_min))


def apply_pulses(w, counts, dw_up, dw_down, b_max, b_min, kind, c2c=0.0, rng=None):
    """Apply ``counts`` signed pulses element-wise and return the new weights.

    All arguments broadcast against ``w``. With ``c2c == 0`` the soft-bounds
    response to ``n`` same-direction pulses is evaluated in closed form; with
    cycle-to-cycle noise each pulse is drawn individually.
    """
    w = np.asarray(w, dtype=float)
    counts = np.asarray(counts)
    n = np.abs(counts)
    up = counts > 0
    kind = DeviceKind(kind)
    if not np.any(n):
        return w.copy()
    if kind is DeviceKind.IDEAL_LINEAR:
        step = np.where(up, dw_up, -np.asarray(dw_down))
        if c2c > 0:
            rng = as_rng(rng)
            total = np.zeros(np.broadcast(w, counts).shape)
            for k in range(int(n.max())):
                active = n > k
                factor = np.maximum(1.0 + c2c * rng.standard_normal(total.shape), 0.0)
                total += np.where(active, factor, 0.0)
            delta = step * total
        else:
            delta = step * n
        return np.clip(w + delta, b_min, b_max)

    span = np.asarray(b_max) - np.asarray(b_min)
    gamma_up = 2.0 * np.asarray(dw_up) / span
    gamma_down = 2.0 * np.asarray(dw_down) / span
    if c2c == 0:
        new_up = b_max - (b_max - w) * (1.0 - gamma_up) ** n
        new_down = b_min + (w - b_min) * (1.0 - gamma_down) ** n
        out = np.where(n == 0, w, np.where(up, new_up, new_down))
        return np.clip(out, b_min, b_max)

    rng = as_rng(rng)
    out = np.array(np.broadcast_to(w, np.broadcast(w, counts).shape), dtype=float)
    gamma = np.where(up, gamma_up, gamma_down)
    for k in range(int(n.max())):
        active = n > k
        factor = np.maximum(1.0 + c2c * rng.standard_normal(out.shape), 0.0)
        dist = np.where(up, b_max - out, out - b_min)
        step = gamma * dist * factor
        out = np.where(active, out + np.where(up, step, -step), out)
        out = np.clip(out, b_min, b_max)
    return out


def pulse_update(elem: DeviceElement, direction, rng=None) -> DeviceElement:
    """Return ``elem`` after one pulse in ``direction`` (``"up"``/``"down"`` or +1/-1)."""
    if isinstance(direction, str):
        sign = {"up": UP, "down": DOWN}[direction.lower()]
    else:
        sign = UP if direction > 0 else DOWN
    w = apply_pulses(
        elem.w, sign, elem.dw_up, elem.dw_down, elem.b_max, elem.b_min,
        elem.kind, elem.dw_c2c, rng,
    )
    return replace(elem, w=float(w))


@dataclass
class DeviceArray:
    """Struct-of-arrays view of a ``rows x cols`` block of elements."""

    w: np.ndarray
    dw_up: np.ndarray
    dw_down: np.ndarray
    b_max: np.ndarray
    b_min: np.ndarray
    kind: DeviceKind = DeviceKind.SOFT_BOUNDS
    c2c: float = 0.0
    dw_ref: float = field(default=0.002)

    @property
    def shape(self) -> tuple[int, int]:
        return self.w.shape

    @property
    def w_star(self) -> np.ndarray:
        return _symmetry_point(self.dw_up, self.dw_down, self.b_max, self.b_min)

    def element(self, i: int, j: int) -> DeviceElement:
        return DeviceElement(
            w=float(self.w[i, j]), dw_up=float(self.dw_up[i, j]),
            dw_down=float(self.dw_down[i, j]), b_max=float(self.b_max[i, j]),
            b_min=float(self.b_min[i, j]), kind=self.kind, dw_c2c=self.c2c,
        )

    def __getitem__(self, idx) -> DeviceElement:
        return self.element(*idx)

    def copy(self) -> "DeviceArray":
        return replace(
            self, w=self.w.copy(), dw_up=self.dw_up.copy(), dw_down=self.dw_down.copy(),
            b_max=self.b_max.copy(), b_min=self.b_min.copy(),
        )

    def pulse(self, counts, rng=None, cols=None) -> None:
        """Apply signed pulse counts in place, optionally to a column subset."""
        sl = (slice(None), cols) if cols is not None else (slice(None), slice(None))
        self.w[sl] = apply_pulses(
            self.w[sl], counts, self.dw_up[sl], self.dw_down[sl], self.b_max[sl],
            self.b_min[sl], self.kind, self.c2c, rng,
        )

    def saturation(self, direction) -> np.ndarray:
        """Expected step per pulse relative to ``dw_ref`` for each direction sign."""
        up = np.asarray(direction) > 0
        if self.kind is DeviceKind.IDEAL_LINEAR:
            return np.where(up, self.dw_up, self.dw_down) / self.dw_ref
        span = self.b_max - self.b_min
        dist = np.where(up, self.b_max - self.w, self.w - self.b_min)
        dw = np.where(up, self.dw_up, self.dw_down)
        return 2.0 * dw * dist / span / self.dw_ref


def sample_device_array(spec: DeviceSpec, rows: int, cols: int, rng_seed=None) -> DeviceArray:
    """Draw per-element steps, bounds and symmetry points from ``spec``."""
    if rows < 1 or cols < 1:
        raise ValueError(f"rows and cols must be >= 1, got {rows}x{cols}")
    rng = as_rng(rng_seed)
    shape = (rows, cols)
    g_up, g_down, g_bmax, g_bmin, g_spv = (rng.standard_normal(shape) for _ in range(5))

    dw_up = spec.dw_min_up * (1.0 + spec.dw_min_dtod * g_up)
    dw_down = spec.dw_min_down * (1.0 + spec.dw_min_dtod * g_down)
    dw_up = np.maximum(dw_up, 1e-3 * spec.dw_min_up)
    dw_down = np.maximum(dw_down, 1e-3 * spec.dw_min_down)

    bmax_mean, bmin_mean = spec.mean_bounds
    if spec.kind is DeviceKind.IDEAL_LINEAR:
        b_max = np.full(shape, bmax_mean)
        b_min = np.full(shape, bmin_mean)
    else:
        weight_range = spec.weight_range
        b_max = bmax_mean * (1.0 + spec.bounds_dtod * g_bmax)
        b_min = bmin_mean * (1.0 + spec.bounds_dtod * g_bmin)
        b_max = np.maximum(b_max, b_min + 1e-2 * weight_range)
        offset = spec.spv_percent / 100.0 * weight_range * g_spv
        if spec.spv_mode == "bounds":
            b_max = b_max + offset
            b_min = b_min + offset
        elif spec.spv_percent > 0:
            margin = 1e-2 * (b_max - b_min)
            target = np.clip(
                _symmetry_point(dw_up, dw_down, b_max, b_min) + offset,
                b_min + margin, b_max - margin,
            )
            ratio = (target - b_min) / (b_max - target)
            geo = np.sqrt(dw_up * dw_down)
            dw_up = geo * np.sqrt(ratio)
            dw_down = geo / np.sqrt(ratio)
        # soft-bounds steps larger than half the span would overshoot
        half = 0.5 * (b_max - b_min) * (1 - 1e-9)
        dw_up = np.minimum(dw_up, half)
        dw_down = np.minimum(dw_down, half)

    w = np.clip(np.zeros(shape), b_min, b_max)
    return DeviceArray(
        w=w, dw_up=dw_up, dw_down=dw_down, b_max=b_max, b_min=b_min,
        kind=spec.kind, c2c=spec.dw_min_c2c, dw_ref=spec.dw_min,
    )

