from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layers import Layer, ShapeError, layer_from_config


class NonFiniteError(FloatingPointError):
    """NaN or Inf crossed a layer boundary."""


class Sequential:
    """A fixed layer pipeline with recorded forward pass and exact backward pass."""

    def __init__(self, layers: list[Layer], input_shape, seed: int = 0, dtype="float32") -> None:
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.build(shape, rng, self.dtype)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
            if min(shape) < 1:
                raise ShapeError(f"layer {i} ({layer.kind}): output shape {shape} is empty")
        self.output_shape = shape
        self._recorded = False
        self.trained = False

    def shape_trace(self) -> list[tuple[str, tuple[int, ...]]]:
        return [("input", self.input_shape)] + [(layer.kind, layer.output_shape) for layer in self.layers]

    @property
    def n_params(self) -> int:
        return sum(p.size for layer in self.layers for p in layer.params.values())

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{i}.{name}": p for i, layer in enumerate(self.layers) for name, p in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{i}.{name}": g for i, layer in enumerate(self.layers) for name, g in layer.grads.items()}

    def forward(self, x, training: bool = False, seed: int | None = None, stop: int | None = None) -> np.ndarray:
        """Run the pipeline; ``stop`` truncates after that many layers."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"layer 0 ({self.layers[0].kind}): expected input {self.input_shape}, got {x.shape[1:]}")
        if not np.isfinite(x).all():
            raise NonFiniteError("non-finite values in model input")
        rng = np.random.default_rng(seed) if training else None
        layers = self.layers if stop is None else self.layers[:stop]
        for i, layer in enumerate(layers):
            x = layer.forward(x, training=training, rng=rng)
            if not np.isfinite(x).all():
                raise NonFiniteError(f"non-finite output from layer {i} ({layer.kind})")
        self._recorded = True
        return x

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    def backward(self, grad, start: int | None = None) -> np.ndarray:
        """Backpropagate ``grad`` from the model output (or from layer ``start``)."""
        if not self._recorded:
            raise RuntimeError("backward called without a recorded forward pass")
        layers = self.layers if start is None else self.layers[:start]
        for layer in reversed(layers):
            grad = layer.backward(grad)
        return grad

    def save(self, path) -> None:
        """Write ``.npz``: an ``arch`` JSON string plus one array per parameter."""
        arch = {
            "input_shape": list(self.input_shape),
            "dtype": self.dtype.name,
            "trained": self.trained,
            "layers": [{"kind": layer.kind, "config": layer.config()} for layer in self.layers],
        }
        arrays = {f"p{key}": value for key, value in self.parameters().items()}
        with open(path, "wb") as fh:
            np.savez(fh, arch=np.array(json.dumps(arch)), **arrays)

    @classmethod
    def load(cls, path) -> "Sequential":
        with np.load(Path(path), allow_pickle=False) as data:
            arch = json.loads(str(data["arch"]))
            layers = [layer_from_config(spec["kind"], spec["config"]) for spec in arch["layers"]]
            model = cls(layers, arch["input_shape"], dtype=arch["dtype"])
            for key, param in model.parameters().items():
                stored = data[f"p{key}"]
                if stored.shape != param.shape:
                    raise ShapeError(f"parameter {key}: stored shape {stored.shape} != {param.shape}")
                param[...] = stored
        model.trained = arch.get("trained", False)
        return model
