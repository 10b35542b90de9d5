"""Differentiable surrogate editing models f(x, c) -> y.

Two architecture classes stand in for heavyweight editors:

* ``cond-conv`` — a stack of 3x3 tanh convolutions where every layer's
  per-channel bias is a linear function of the conditioning embedding.
  Its conditioning-free prefix doubles as an encoder sub-map.
* ``cond-mlp`` — one 3x3 patch-gathering layer (embedding injected
  additively, equivalent to concatenating it before a linear layer)
  followed by per-pixel 1x1 layers with softplus hidden activations.

Models are fixed at construction (no training); a seeded family
generator yields architecturally distinct instances for cross-model
transfer experiments. All models are immutable and shareable; gradient
call counting lives in the per-run wrapper from :meth:`EditModel.instrument`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from tdae import tensor as T

FAMILIES = ("cond-conv", "cond-mlp")


@dataclass(frozen=True)
class ModelFamilySpec:
    """Deterministic recipe for one surrogate model instance."""

    family: str = "cond-conv"
    seed: int = 0
    height: int = 32
    width: int = 32
    channels: int = 3
    embed_dim: int = 16
    hidden: int = 8
    depth: int = 3  # cond-conv conv layers; cond-mlp ignores this

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family: {self.family!r}")
        if self.family == "cond-conv" and self.depth not in (2, 3):
            raise ValueError(f"cond-conv depth must be 2 or 3, got {self.depth}")
        for name in ("height", "width", "channels", "embed_dim", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def label(self) -> str:
        return f"{self.family}/s{self.seed}"


def _uniform_fan_in(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.uniform(-0.5, 0.5, size=shape) / np.sqrt(fan_in)


@dataclass(frozen=True)
class EditModel:
    """Fixed-parameter editing surrogate. Output shape equals input shape.

    ``weights`` holds the conv kernels layer by layer; ``embed_maps``
    holds the per-layer (out_channels, embed_dim) matrices that turn the
    conditioning vector into a bias field (zero on layers that ignore
    the embedding).
    """

    spec: ModelFamilySpec
    weights: Tuple[np.ndarray, ...]
    embed_maps: Tuple[Optional[np.ndarray], ...]

    def _check_inputs(self, x: np.ndarray, c: np.ndarray) -> None:
        expected = (self.spec.height, self.spec.width, self.spec.channels)
        if x.shape != expected:
            raise T.ShapeError(f"image shape {x.shape} != model shape {expected}")
        if c.shape != (self.spec.embed_dim,):
            raise T.ShapeError(
                f"embedding shape {c.shape} != ({self.spec.embed_dim},)")

    def _forward_graph(self, x: T.Tensor, c: T.Tensor) -> T.Tensor:
        h, w = self.spec.height, self.spec.width
        act = x
        last = len(self.weights) - 1
        for i, (kern, emap) in enumerate(zip(self.weights, self.embed_maps)):
            z = T.conv2d(act, T.Tensor(kern))
            if emap is not None:
                bias = T.matmul(T.Tensor(emap), c)
                z = T.add(z, T.broadcast(bias, (h, w, kern.shape[3])))
            if self.spec.family == "cond-mlp" and i != last:
                act = T.softplus(z) if i == 0 else T.tanh(z)
            else:
                act = T.tanh(z)
        # map the bounded activation into (0, 1) so outputs live on the
        # same scale as the input images
        return T.add(T.smul(act, 0.5), T.Tensor(0.5))

    def forward(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Edited image for (x, c); pure function of the inputs."""
        self._check_inputs(x, c)
        out = self._forward_graph(T.Tensor(x), T.Tensor(c))
        return out.data

    # -- encoder sub-map (conditioning-free prefix of cond-conv) --------

    @property
    def has_encoder(self) -> bool:
        return self.spec.family == "cond-conv"

    def _encoder_layers(self) -> int:
        # first half of the stack, conditioning excluded
        return max(1, len(self.weights) // 2)

    def _encoder_graph(self, x: T.Tensor) -> T.Tensor:
        if not self.has_encoder:
            raise ValueError(f"family {self.spec.family!r} has no encoder sub-map")
        act = x
        for kern in self.weights[: self._encoder_layers()]:
            act = T.tanh(T.conv2d(act, T.Tensor(kern)))
        return act

    def encoder_output(self, x: np.ndarray) -> np.ndarray:
        """Latent of the conditioning-free encoder prefix."""
        expected = (self.spec.height, self.spec.width, self.spec.channels)
        if x.shape != expected:
            raise T.ShapeError(f"image shape {x.shape} != model shape {expected}")
        return self._encoder_graph(T.Tensor(x)).data

    def instrument(self) -> "InstrumentedModel":
        """Per-run handle that counts gradient evaluations."""
        return InstrumentedModel(self)


@dataclass
class InstrumentedModel:
    """Couples a shared immutable model with a per-run gradient-call counter.

    Each ``grad_*`` call runs exactly one forward/backward pair and
    increments ``grad_calls`` by one; ``forward`` is not counted.
    """

    model: EditModel
    grad_calls: int = 0

    @property
    def spec(self) -> ModelFamilySpec:
        return self.model.spec

    def forward(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        return self.model.forward(x, c)

    def encoder_output(self, x: np.ndarray) -> np.ndarray:
        return self.model.encoder_output(x)

    def _mse_graph(self, y: T.Tensor, y0: np.ndarray) -> T.Tensor:
        d = T.sub(y, T.Tensor(y0))
        return T.tmean(T.mul(d, d))

    def grad_x(self, x: np.ndarray, c: np.ndarray, y_target: np.ndarray):
        """(loss, dL/dx) for L = MSE(f(x, c), y_target). One gradient call."""
        self.model._check_inputs(x, c)
        xt = T.Tensor(x, requires_grad=True)
        loss = self._mse_graph(self.model._forward_graph(xt, T.Tensor(c)), y_target)
        grad = T.backward(loss, leaves=[xt])[xt].data
        self.grad_calls += 1
        return loss.item(), grad

    def grad_c(self, x: np.ndarray, c: np.ndarray, y_target: np.ndarray):
        """(loss, dL/dc) for L = MSE(f(x, c), y_target). One gradient call."""
        self.model._check_inputs(x, c)
        ct = T.Tensor(c, requires_grad=True)
        loss = self._mse_graph(self.model._forward_graph(T.Tensor(x), ct), y_target)
        grad = T.backward(loss, leaves=[ct])[ct].data
        self.grad_calls += 1
        return loss.item(), grad

    def grad_x_encoder(self, x: np.ndarray, latent_target: np.ndarray):
        """(loss, dL/dx) for L = MSE(encoder(x), latent_target). One gradient call."""
        xt = T.Tensor(x, requires_grad=True)
        loss = self._mse_graph(self.model._encoder_graph(xt), latent_target)
        grad = T.backward(loss, leaves=[xt])[xt].data
        self.grad_calls += 1
        return loss.item(), grad


def build_model(spec: ModelFamilySpec) -> EditModel:
    """Construct the deterministic model an (architecture, seed) pair names.

    Parameters are uniform(-0.5, 0.5) draws scaled by 1/sqrt(fan-in)
    from a generator seeded with ``spec.seed``, so identical specs give
    bitwise-identical models.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    cin, d, hid = spec.channels, spec.embed_dim, spec.hidden

    weights = []
    embed_maps = []
    if spec.family == "cond-conv":
        chans = [cin] + [hid] * (spec.depth - 1) + [cin]
        for ci, co in zip(chans[:-1], chans[1:]):
            fan_in = 3 * 3 * ci
            weights.append(_uniform_fan_in(rng, (3, 3, ci, co), fan_in))
            embed_maps.append(_uniform_fan_in(rng, (co, d), d))
    else:  # cond-mlp: 3x3 gather, then per-pixel 1x1 layers
        weights.append(_uniform_fan_in(rng, (3, 3, cin, hid), 3 * 3 * cin))
        embed_maps.append(_uniform_fan_in(rng, (hid, d), d))
        weights.append(_uniform_fan_in(rng, (1, 1, hid, hid), hid))
        embed_maps.append(None)
        weights.append(_uniform_fan_in(rng, (1, 1, hid, cin), hid))
        embed_maps.append(None)

    return EditModel(
        spec=spec,
        weights=tuple(w.copy() for w in weights),
        embed_maps=tuple(m.copy() if m is not None else None for m in embed_maps),
    )
