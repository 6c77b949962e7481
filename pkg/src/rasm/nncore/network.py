"""Convolutional feature extractor followed by stacked BLSTMs and a classifier."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from rasm.errors import InfeasibleConfigError, ShapeError
from rasm.nncore import layers as L
from rasm.nncore.functional import softmax


@dataclass
class NetworkConfig:
    num_classes: int
    input_height: int = 64
    input_width: int = 800
    conv_channels: tuple[int, ...] = (32, 64)
    kernel_size: int = 3
    dense_units: int = 128
    dropout: float = 0.5
    lstm_units: int = 256
    lstm_layers: int = 2
    max_label_len: int = 70
    seed: int = 0

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)

    @property
    def time_steps(self) -> int:
        return self.input_width // (2 ** len(self.conv_channels))


class Network:
    """Ordered layer stack with a shared train/infer mode flag.

    ``logits`` returns pre-softmax scores ``(B, T, K)``; ``forward`` applies
    the softmax. ``backward`` takes the gradient w.r.t. the logits.
    """

    def __init__(self, config: NetworkConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.mode = "infer"
        self.layers: list[L.Layer] = []
        self._build()

    def _build(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        dt = self.dtype
        if not cfg.conv_channels:
            raise InfeasibleConfigError("at least one convolution block is required")
        c_in = 1
        for i, c_out in enumerate(cfg.conv_channels, 1):
            self.layers += [
                L.Conv2D(f"conv{i}", c_in, c_out, cfg.kernel_size, rng=rng, dtype=dt),
                L.BatchNorm(f"bn{i}", c_out, dtype=dt),
                L.ReLU(f"relu{i}"),
                L.MaxPool2D(f"pool{i}", 2),
            ]
            c_in = c_out
        factor = 2 ** len(cfg.conv_channels)
        feat = (cfg.input_height // factor) * c_in
        self.layers += [
            L.ColumnsToSequence("columns"),
            L.Dense("proj", feat, cfg.dense_units, rng=rng, dtype=dt),
            L.ReLU("proj_relu"),
            L.Dropout("dropout", cfg.dropout, rng=np.random.default_rng(cfg.seed + 1)),
        ]
        d_in = cfg.dense_units
        for i in range(1, cfg.lstm_layers + 1):
            self.layers.append(L.BiLSTM(f"blstm{i}", d_in, cfg.lstm_units, rng=rng, dtype=dt))
            d_in = 2 * cfg.lstm_units
        self.layers.append(L.Dense("classifier", d_in, cfg.num_classes, rng=rng, dtype=dt))
        self.output_shape = self._validate()

    def _validate(self):
        cfg = self.config
        if cfg.num_classes < 2:
            raise InfeasibleConfigError("need at least one label class plus the blank")
        shape = (cfg.input_height, cfg.input_width, 1)
        try:
            for layer in self.layers:
                shape = layer.output_shape(shape)
        except ShapeError as exc:
            raise InfeasibleConfigError(f"layer chain does not fit: {exc}") from exc
        T = shape[0]
        need = 2 * cfg.max_label_len + 1
        if T < need:
            raise InfeasibleConfigError(
                f"network emits {T} frames but labels of length {cfg.max_label_len} need {need}")
        return shape

    # ------------------------------------------------------------ parameters

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.params.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.grads.items()}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.buffers.items()}

    def state(self) -> dict[str, np.ndarray]:
        """Every tensor needed to reproduce the network's outputs."""
        return {**self.named_params(), **self.named_buffers()}

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for layer in self.layers:
            for store in (layer.params, layer.buffers):
                for key, current in store.items():
                    name = f"{layer.name}.{key}"
                    if name not in tensors:
                        raise KeyError(f"missing tensor {name}")
                    value = np.asarray(tensors[name])
                    if value.shape != current.shape:
                        raise ShapeError(f"{name}: expected {current.shape}, got {value.shape}")
                    store[key] = value.astype(self.dtype).copy()

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.named_params().values()))

    def layer_parameter_counts(self) -> dict[str, int]:
        return {l.name: int(sum(p.size for p in l.params.values())) for l in self.layers if l.params}

    # ------------------------------------------------------------- execution

    def set_mode(self, mode: str) -> "Network":
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        self.mode = mode
        return self

    def logits(self, images: np.ndarray) -> np.ndarray:
        cfg = self.config
        x = np.asarray(images, dtype=self.dtype)
        if x.ndim == 3:
            x = x[..., None]
        if x.shape[1:] != (cfg.input_height, cfg.input_width, 1):
            raise ShapeError(
                f"expected images of shape (B, {cfg.input_height}, {cfg.input_width}, 1), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, self.mode)
        return x

    def forward(self, images: np.ndarray) -> np.ndarray:
        return softmax(self.logits(images))

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = np.asarray(dlogits, dtype=self.dtype)
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d


def build_network(config: NetworkConfig, dtype=np.float32) -> Network:
    return Network(config, dtype)
