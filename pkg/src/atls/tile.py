"""Crossbar tile: a matrix of device elements with MVM, programming and updates."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .device import DeviceArray, DeviceSpec, sample_device_array
from .rng import as_rng

__all__ = ["UpdateMode", "AnalogTile", "TILE_MAGIC"]

TILE_MAGIC = b"ATLSTILE"


@dataclass(frozen=True)
class UpdateMode:
    """How gradient outer products are written to the devices.

    ``"pulsed"`` draws stochastic pulse trains of ``bit_length`` slots whose
    coincidences fire device pulses; ``"expected"`` applies the mean of that
    process deterministically.
    """

    kind: str = "pulsed"
    bit_length: int = 31

    def __post_init__(self):
        if self.kind not in ("pulsed", "expected"):
            raise ValueError(f"unknown update mode {self.kind!r}")
        if self.bit_length < 1:
            raise ValueError("bit_length must be >= 1")

    @classmethod
    def pulsed(cls, bit_length: int = 31) -> "UpdateMode":
        return cls("pulsed", bit_length)

    @classmethod
    def expected(cls) -> "UpdateMode":
        return cls("expected")


class AnalogTile:
    """A ``rows x cols`` crossbar computing ``y = W x``.

    Parameters
    ----------
    devices : DeviceArray
        Per-element physics and current weights.
    out_noise_std : float
        Additive Gaussian noise on every MVM output line.
    read_noise_std : float
        Additive Gaussian noise on explicit weight reads.
    update_mode : UpdateMode
    rng : seed or Generator
        Stream for all noise and pulse sampling of this tile.
    """

    def __init__(self, devices: DeviceArray, out_noise_std=0.0, read_noise_std=0.0,
                 update_mode: UpdateMode | None = None, rng=None):
        if out_noise_std < 0 or read_noise_std < 0:
            raise ValueError("noise stds must be >= 0")
        self.devices = devices
        self.out_noise_std = float(out_noise_std)
        self.read_noise_std = float(read_noise_std)
        self.update_mode = update_mode or UpdateMode.pulsed()
        self.rng = as_rng(rng)
        self.program_count = 0

    @classmethod
    def from_spec(cls, spec: DeviceSpec, rows: int, cols: int, seed=None, **kwargs) -> "AnalogTile":
        rng = as_rng(seed)
        devices = sample_device_array(spec, rows, cols, rng)
        return cls(devices, rng=rng, **kwargs)

    @property
    def shape(self) -> tuple[int, int]:
        return self.devices.shape

    @property
    def weights(self) -> np.ndarray:
        return self.devices.w

    @property
    def dw_min(self) -> float:
        return self.devices.dw_ref

    def _rng(self, rng):
        return self.rng if rng is None else as_rng(rng)

    def program_weights(self, target, tau: float = 0.0, rng=None) -> "AnalogTile":
        """Write ``target`` once, perturbed by ``tau * N(0, 1)`` and clipped to the bounds."""
        target = np.asarray(target, dtype=float)
        if target.shape != self.shape:
            raise ValueError(f"target shape {target.shape} does not match tile {self.shape}")
        if tau < 0:
            raise ValueError("tau must be >= 0")
        w = target
        if tau > 0:
            w = target + tau * self._rng(rng).standard_normal(self.shape)
        self.devices.w = np.clip(w, self.devices.b_min, self.devices.b_max)
        self.program_count += 1
        return self

    def _noisy(self, y, rng):
        if self.out_noise_std > 0:
            y = y + self.out_noise_std * self._rng(rng).standard_normal(y.shape)
        return y

    def forward(self, x, rng=None) -> np.ndarray:
        """``W x`` (+ output noise). ``x`` may carry leading batch axes."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.shape[1]:
            raise ValueError(f"input size {x.shape[-1]} != tile cols {self.shape[1]}")
        return self._noisy(x @ self.devices.w.T, rng)

    def backward(self, delta, rng=None) -> np.ndarray:
        """``W^T delta`` (+ output noise)."""
        delta = np.asarray(delta, dtype=float)
        if delta.shape[-1] != self.shape[0]:
            raise ValueError(f"delta size {delta.shape[-1]} != tile rows {self.shape[0]}")
        return self._noisy(delta @ self.devices.w, rng)

    def read_weights(self, with_noise: bool = False, rng=None) -> np.ndarray:
        w = self.devices.w.copy()
        if with_noise and self.read_noise_std > 0:
            w += self.read_noise_std * self._rng(rng).standard_normal(w.shape)
        return w

    def read_column(self, j: int, with_noise: bool = False, rng=None) -> np.ndarray:
        if not 0 <= j < self.shape[1]:
            raise IndexError(f"column {j} out of range for {self.shape[1]} columns")
        col = self.devices.w[:, j].copy()
        if with_noise and self.read_noise_std > 0:
            col += self.read_noise_std * self._rng(rng).standard_normal(col.shape)
        return col

    def update(self, x, delta, lr: float, rng=None) -> "AnalogTile":
        """Write ``-lr * delta x^T`` (summed over any leading batch axes)."""
        if not lr > 0:
            if lr == 0:
                return self
            raise ValueError("lr must be positive")
        x = np.asarray(x, dtype=float)
        delta = np.asarray(delta, dtype=float)
        rows, cols = self.shape
        if x.shape[-1] != cols or delta.shape[-1] != rows:
            raise ValueError(
                f"outer product of delta {delta.shape} and x {x.shape} does not fit tile {self.shape}"
            )
        x = x.reshape(-1, cols)
        delta = delta.reshape(-1, rows)
        if x.shape[0] != delta.shape[0]:
            raise ValueError("x and delta batch sizes differ")
        if self.update_mode.kind == "expected":
            self.apply_dense(-lr * delta.T @ x)
        else:
            rng = self._rng(rng)
            for xb, db in zip(x, delta):
                self._pulsed_rank_one(xb, db, lr, rng)
        return self

    def apply_dense(self, dw, rng=None) -> "AnalogTile":
        """Write an arbitrary weight change.

        In expected mode the change is scaled by the soft-bounds saturation
        factor; in pulsed mode ``|dw| / dw_min`` is stochastically rounded to a
        pulse count.
        """
        dw = np.asarray(dw, dtype=float)
        dev = self.devices
        if self.update_mode.kind == "expected":
            w = dev.w + dw * dev.saturation(dw)
            dev.w = np.clip(w, dev.b_min, dev.b_max)
        else:
            ratio = np.abs(dw) / dev.dw_ref
            base = np.floor(ratio)
            n = base + (self._rng(rng).random(dw.shape) < ratio - base)
            dev.pulse(np.sign(dw) * n.astype(np.int64), self._rng(rng))
        return self

    def _pulsed_rank_one(self, x, delta, lr, rng):
        bl = self.update_mode.bit_length
        ax = np.max(np.abs(x))
        if ax == 0 or not np.any(delta):
            return
        px = np.minimum(np.abs(x) / ax, 1.0)
        pd = np.minimum(np.abs(delta) * ax * lr / (self.devices.dw_ref * bl), 1.0)
        x_bits = rng.random((bl, px.size)) < px
        d_bits = rng.random((bl, pd.size)) < pd
        counts = d_bits.T.astype(np.int64) @ x_bits.astype(np.int64)
        if not counts.any():
            return
        direction = -np.sign(np.outer(delta, x)).astype(np.int64)
        self.devices.pulse(counts * direction, rng)

    def pulse_column(self, j: int, counts, rng=None) -> None:
        self.devices.pulse(np.asarray(counts), self._rng(rng), cols=j)

    def to_bytes(self) -> bytes:
        """Weights as magic + rows + cols (uint32 LE) + row-major float32 LE."""
        rows, cols = self.shape
        header = TILE_MAGIC + struct.pack("<II", rows, cols)
        return header + np.ascontiguousarray(self.devices.w, dtype="<f4").tobytes()

    @staticmethod
    def weights_from_bytes(buf: bytes) -> np.ndarray:
        if buf[:8] != TILE_MAGIC:
            raise ValueError("not a tile weight blob")
        rows, cols = struct.unpack_from("<II", buf, 8)
        data = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=16)
        return data.reshape(rows, cols).astype(float)
