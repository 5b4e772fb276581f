"""Shared-backbone dual-head predictor with exact analytic gradients.

A tanh MLP backbone feeds two linear heads: a regression head squashed
through softplus (predicted magnitude, always >= 0) and a percentile head
squashed through the logistic function (predicted percentile in (0, 1)).
Gradients are computed by hand and are checked against central finite
differences by the verification suite.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np
from scipy.special import expit

CHECKPOINT_MAGIC = b"PCTCKPT1"


def _softplus(z: float) -> float:
    return float(np.logaddexp(0.0, z))


class DualHeadModel:
    """One hidden tanh stack shared by a magnitude head and a percentile head.

    Parameters live in ``self.params`` as float64 arrays keyed by name:
    ``W0, b0, ...`` for the backbone layers, then ``reg_w, reg_b, pct_w,
    pct_b`` for the heads. Weights start uniform in +-1/sqrt(fan_in),
    biases at zero, all drawn from the given seed.
    """

    def __init__(self, feature_dim: int, hidden: tuple[int, ...] = (32,), seed: int = 0):
        if feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
        hidden = tuple(int(h) for h in hidden)
        if not hidden or any(h < 1 for h in hidden):
            raise ValueError(f"hidden layer sizes must all be >= 1, got {hidden}")
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.feature_dim = int(feature_dim)
        self.hidden = hidden
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        fan_in = self.feature_dim
        for i, width in enumerate(hidden):
            bound = 1.0 / np.sqrt(fan_in)
            self.params[f"W{i}"] = rng.uniform(-bound, bound, size=(width, fan_in))
            self.params[f"b{i}"] = np.zeros(width)
            fan_in = width
        bound = 1.0 / np.sqrt(fan_in)
        self.params["reg_w"] = rng.uniform(-bound, bound, size=fan_in)
        self.params["reg_b"] = np.zeros(1)
        self.params["pct_w"] = rng.uniform(-bound, bound, size=fan_in)
        self.params["pct_b"] = np.zeros(1)

    # ---------------------------------------------------------------- core

    def _trace(self, x) -> tuple[list[np.ndarray], float, float, float, float]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.feature_dim,):
            raise ValueError(
                f"feature vector has shape {x.shape}, model expects ({self.feature_dim},)"
            )
        activations = [x]
        h = x
        for i in range(len(self.hidden)):
            h = np.tanh(self.params[f"W{i}"] @ h + self.params[f"b{i}"])
            activations.append(h)
        z_reg = float(self.params["reg_w"] @ h) + float(self.params["reg_b"][0])
        z_pct = float(self.params["pct_w"] @ h) + float(self.params["pct_b"][0])
        return activations, z_reg, z_pct, _softplus(z_reg), float(expit(z_pct))

    def forward(self, x) -> tuple[float, float]:
        """Evaluate both heads from one shared backbone pass.

        Returns (predicted magnitude, predicted percentile).
        """
        _, _, _, y_hat, p_hat = self._trace(x)
        return y_hat, p_hat

    def backward(
        self, x, d_loss_d_yhat: float, d_loss_d_phat: float
    ) -> dict[str, np.ndarray]:
        """Exact parameter gradients for the given upstream loss derivatives.

        A zero percentile upstream yields exactly-zero gradients for the
        percentile head and contributes exactly zero to the backbone.
        """
        activations, z_reg, _, _, p_hat = self._trace(x)
        h_top = activations[-1]
        d_zreg = d_loss_d_yhat * float(expit(z_reg))
        d_zpct = d_loss_d_phat * p_hat * (1.0 - p_hat)
        grads: dict[str, np.ndarray] = {
            "reg_w": d_zreg * h_top,
            "reg_b": np.array([d_zreg]),
            "pct_w": d_zpct * h_top,
            "pct_b": np.array([d_zpct]),
        }
        d_h = d_zreg * self.params["reg_w"] + d_zpct * self.params["pct_w"]
        for i in reversed(range(len(self.hidden))):
            h_i = activations[i + 1]
            d_z = d_h * (1.0 - h_i * h_i)
            grads[f"W{i}"] = np.outer(d_z, activations[i])
            grads[f"b{i}"] = d_z
            d_h = self.params[f"W{i}"].T @ d_z
        return grads

    def sgd_step(self, grads: dict[str, np.ndarray], learning_rate: float) -> None:
        """In-place descent step: theta <- theta - lr * grad, parameter-wise."""
        if learning_rate <= 0:
            raise ValueError(f"learning rate must be > 0, got {learning_rate}")
        for name, param in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            param -= learning_rate * g

    # ------------------------------------------------------------ persistence

    def save(self, sink: BinaryIO) -> None:
        sink.write(CHECKPOINT_MAGIC)
        sink.write(struct.pack("<IQ", self.feature_dim, self.seed))
        sink.write(struct.pack("<I", len(self.hidden)))
        for width in self.hidden:
            sink.write(struct.pack("<I", width))
        sink.write(struct.pack("<I", len(self.params)))
        for name, param in self.params.items():
            encoded = name.encode("utf-8")
            sink.write(struct.pack("<H", len(encoded)))
            sink.write(encoded)
            sink.write(struct.pack("<I", param.ndim))
            for dim in param.shape:
                sink.write(struct.pack("<I", dim))
            sink.write(np.ascontiguousarray(param, dtype="<f8").tobytes())

    @classmethod
    def load(cls, source: BinaryIO) -> "DualHeadModel":
        data = source.read()
        if data[:8] != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {data[:8]!r}")
        pos = 8
        feature_dim, seed = struct.unpack_from("<IQ", data, pos)
        pos += 12
        (n_hidden,) = struct.unpack_from("<I", data, pos)
        pos += 4
        hidden = []
        for _ in range(n_hidden):
            (width,) = struct.unpack_from("<I", data, pos)
            pos += 4
            hidden.append(width)
        model = cls(feature_dim, tuple(hidden), seed)
        (n_params,) = struct.unpack_from("<I", data, pos)
        pos += 4
        for _ in range(n_params):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = []
            for _ in range(ndim):
                (dim,) = struct.unpack_from("<I", data, pos)
                pos += 4
                shape.append(dim)
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += count * 8
            if name not in model.params or model.params[name].shape != arr.shape:
                raise ValueError(f"checkpoint parameter {name!r} does not fit the model")
            model.params[name] = arr.astype(np.float64).copy()
        if pos != len(data):
            raise ValueError("trailing bytes after last checkpoint parameter")
        return model

    def params_equal(self, other: "DualHeadModel") -> bool:
        if self.params.keys() != other.params.keys():
            return False
        return all(np.array_equal(self.params[k], other.params[k]) for k in self.params)
