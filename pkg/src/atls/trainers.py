"""Optimizers: digital SGD, naive analog SGD, TTv2 and chopped TTv2.

TTv2 splits every analog weight into a fast gradient-accumulating tile ``A``,
a digital low-pass buffer ``H`` and the slow tile ``W`` used in the
forward/backward passes. At transfer events one column of ``A`` is read
(relative to a programmed reference), filtered into ``H``, and whenever an
entry of ``H`` crosses the threshold ``theta`` it is written to ``W`` as
whole pulses. The chopped variant multiplies each column's gradient writes and
reads by a random sign so that constant offsets in the ``A`` reads average out.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .device import DeviceSpec
from .rng import as_rng, make_rng
from .tile import AnalogTile

__all__ = [
    "TransferConfig",
    "TransferState",
    "TRAINER_KINDS",
    "digital_sgd_step",
    "analog_sgd_step",
    "compute_granularity",
    "chopper_flip",
    "ttv2_step",
    "ttv2_transfer",
    "Trainer",
]

TRAINER_KINDS = ("digital_sgd", "analog_sgd", "ttv2", "cttv2")


@dataclass
class TransferConfig:
    """Control knobs of the transfer-based optimizers.

    Defaults are the published c-TTv2 settings. ``transfer_every`` counts
    mini-batch update steps unless ``units_in_mbatch`` is set, in which case it
    counts individual samples. ``granularity`` overrides the automatic
    threshold. ``ref_offset``/``ref_std`` perturb the programmed references of
    the ``A`` tile (a constant error and a per-element spread).
    ``fast_lr`` is the learning rate of ``A`` writes (defaults to ``lr``).
    """

    lr: float = 0.01
    batch_size: int = 8
    transfer_every: float = 1.0
    autogranularity: float = 10000.0
    device_momentum: float = 0.0
    auto_scale: bool = True
    in_chop_prob: float = 0.10
    units_in_mbatch: bool = False
    forget_buffer: bool = True
    auto_momentum: float = 0.99
    granularity: float | None = None
    fast_lr: float | None = None
    ref_offset: float = 0.0
    ref_std: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.in_chop_prob <= 1.0:
            raise ValueError("in_chop_prob must lie in [0, 1]")
        if not 0.0 <= self.auto_momentum < 1.0:
            raise ValueError("auto_momentum must lie in [0, 1)")
        if not self.transfer_every > 0:
            raise ValueError("transfer_every must be positive")
        if not self.autogranularity > 0:
            raise ValueError("autogranularity must be positive")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.granularity is not None and not self.granularity > 0:
            raise ValueError("granularity override must be positive")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def digital_sgd_step(weights, grads, lr: float) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if weights.shape != grads.shape:
        raise ValueError(f"weight shape {weights.shape} != grad shape {grads.shape}")
    return weights - lr * grads


def analog_sgd_step(tile: AnalogTile, x, delta, lr: float, rng=None) -> AnalogTile:
    """Write the gradient straight onto the single tile used for inference."""
    return tile.update(x, delta, lr, rng)


def compute_granularity(cfg: TransferConfig, tile_W: AnalogTile, lr: float | None = None) -> float:
    """Base transfer threshold ``dw_min(W) * max(1, autogranularity * lr)``."""
    if cfg.granularity is not None:
        return float(cfg.granularity)
    lr = cfg.lr if lr is None else lr
    return tile_W.dw_min * max(1.0, cfg.autogranularity * lr)


def chopper_flip(sign: int, in_chop_prob: float, rng) -> int:
    if sign not in (-1, 1):
        raise ValueError("chopper sign must be +1 or -1")
    if in_chop_prob > 0 and as_rng(rng).random() < in_chop_prob:
        return -sign
    return sign


@dataclass
class TransferState:
    tile_A: AnalogTile
    tile_W: AnalogTile
    H: np.ndarray
    chopper: np.ndarray
    ref: np.ndarray
    chopped: bool = True
    next_col: int = 0
    running_scale: float = 0.0
    step_accum: float = 0.0
    transfers: int = 0
    flips: int = 0
    pulses_written: int = 0
    momentum: np.ndarray | None = None
    rng: np.random.Generator = field(default_factory=lambda: make_rng(0))

    def __post_init__(self):
        shape = self.tile_W.shape
        if not (self.tile_A.shape == shape == self.H.shape == self.ref.shape):
            raise ValueError("A, W, H and ref must share one shape")
        if self.chopper.shape != (shape[1],) or not np.all(np.abs(self.chopper) == 1):
            raise ValueError("chopper must hold one +/-1 sign per column")

    @classmethod
    def create(cls, tile_W: AnalogTile, spec: DeviceSpec, cfg: TransferConfig,
               chopped: bool = True, seed=0) -> "TransferState":
        """Build ``A`` from ``spec``, park it at its symmetry points and program references."""
        rng = as_rng(seed)
        rows, cols = tile_W.shape
        tile_A = AnalogTile.from_spec(
            spec, rows, cols, seed=rng,
            out_noise_std=tile_W.out_noise_std, read_noise_std=tile_W.read_noise_std,
            update_mode=tile_W.update_mode,
        )
        w_star = tile_A.devices.w_star
        tile_A.devices.w = w_star.copy()
        ref = w_star + cfg.ref_offset
        if cfg.ref_std > 0:
            ref = ref + cfg.ref_std * rng.standard_normal(ref.shape)
        chopper = np.ones(cols, dtype=np.int64)
        if chopped and cfg.in_chop_prob > 0:
            # start from the stationary distribution of the random sign process
            chopper = rng.choice(np.array([-1, 1]), size=cols)
        return cls(
            tile_A=tile_A, tile_W=tile_W, H=np.zeros((rows, cols)),
            chopper=chopper, ref=ref, chopped=chopped, rng=rng,
        )

    def threshold(self, cfg: TransferConfig) -> float:
        theta = compute_granularity(cfg, self.tile_W)
        if cfg.auto_scale:
            theta *= 1.0 + self.running_scale
        return theta


def ttv2_transfer(state: TransferState, col_j: int, cfg: TransferConfig, rng=None) -> TransferState:
    """Read column ``col_j`` of ``A``, filter it into ``H`` and pulse ``W`` where due."""
    rng = state.rng if rng is None else as_rng(rng)
    cols = state.tile_W.shape[1]
    if not 0 <= col_j < cols:
        raise IndexError(f"column {col_j} out of range for {cols} columns")
    c = state.chopper[col_j]
    r = c * (state.tile_A.read_column(col_j, with_noise=True, rng=rng) - state.ref[:, col_j])
    h = cfg.auto_momentum * state.H[:, col_j] + r
    if cfg.auto_scale:
        state.running_scale = max(cfg.auto_momentum * state.running_scale, float(np.max(np.abs(r))))
    theta = state.threshold(cfg)
    n = np.floor(np.abs(h) / theta)
    fire = n > 0
    if np.any(fire):
        counts = (np.sign(h) * n).astype(np.int64)
        state.tile_W.pulse_column(col_j, counts, rng)
        state.pulses_written += int(n.sum())
        if cfg.forget_buffer:
            h = np.where(fire, 0.0, h)
        else:
            h = h - np.sign(h) * n * theta
    state.H[:, col_j] = h
    if state.chopped:
        flipped = chopper_flip(int(c), cfg.in_chop_prob, rng)
        if flipped != c:
            state.flips += 1
        state.chopper[col_j] = flipped
    state.transfers += 1
    return state


def ttv2_step(state: TransferState, x, delta, cfg: TransferConfig, rng=None) -> TransferState:
    """Accumulate one mini-batch gradient on ``A`` and run the due transfers."""
    rng = state.rng if rng is None else as_rng(rng)
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    rows, cols = state.tile_W.shape
    if x.shape[-1] != cols or delta.shape[-1] != rows:
        raise ValueError(f"x {x.shape} / delta {delta.shape} do not fit tile {state.tile_W.shape}")
    x = x.reshape(-1, cols)
    delta = delta.reshape(-1, rows)
    lr = cfg.fast_lr if cfg.fast_lr is not None else cfg.lr
    chopped_x = x * state.chopper
    if cfg.device_momentum != 0:
        grad_step = -lr * delta.T @ chopped_x
        if state.momentum is None:
            state.momentum = np.zeros_like(grad_step)
        state.momentum = cfg.device_momentum * state.momentum + grad_step
        state.tile_A.apply_dense(state.momentum, rng)
    elif lr > 0:
        state.tile_A.update(chopped_x, delta, lr, rng)

    state.step_accum += x.shape[0] if cfg.units_in_mbatch else 1
    while state.step_accum >= cfg.transfer_every:
        state.step_accum -= cfg.transfer_every
        ttv2_transfer(state, state.next_col, cfg, rng)
        state.next_col = (state.next_col + 1) % cols
    return state


class Trainer:
    """Applies one optimizer to every trainable layer of a model.

    Digital weights and all biases always take plain SGD steps. Analog weights
    follow ``kind``: ``analog_sgd`` writes gradients directly to the tile,
    ``ttv2``/``cttv2`` go through a :class:`TransferState` per layer.
    """

    def __init__(self, kind: str = "cttv2", cfg: TransferConfig | None = None, seed: int = 0):
        if kind not in TRAINER_KINDS:
            raise ValueError(f"unknown trainer {kind!r}; expected one of {TRAINER_KINDS}")
        self.kind = kind
        self.cfg = cfg or TransferConfig()
        self.seed = seed
        self.states: dict[int, TransferState] = {}
        self._rng = make_rng(seed, 0x7E)

    def attach(self, model) -> "Trainer":
        self.states.clear()
        if self.kind in ("ttv2", "cttv2"):
            for idx, layer in enumerate(model.linear_layers()):
                if layer.is_analog:
                    self.states[id(layer)] = TransferState.create(
                        layer.tile, layer.device_spec, self.cfg,
                        chopped=self.kind == "cttv2", seed=make_rng(self.seed, 0xA, idx),
                    )
        return self

    def step(self, model) -> None:
        lr = self.cfg.lr
        for layer in model.linear_layers():
            if layer.bias is not None and layer.grad_b is not None:
                layer.bias = digital_sgd_step(layer.bias, layer.grad_b, lr)
            if not layer.is_analog:
                layer.weight = digital_sgd_step(layer.weight, layer.grad_w, lr)
            elif self.kind in ("analog_sgd", "digital_sgd"):
                analog_sgd_step(layer.tile, layer.last_x, layer.last_delta, lr, self._rng)
            else:
                state = self.states.get(id(layer))
                if state is None:
                    raise RuntimeError("trainer not attached to this model; call attach() first")
                ttv2_step(state, layer.last_x, layer.last_delta, self.cfg)
