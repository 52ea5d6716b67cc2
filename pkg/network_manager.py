# network_manager.py: modulated base network and the federated modulator

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from autodiff import (
    Tensor, add, concat, matmul, mean, multiply, one_hot, relu, reshape, sigmoid, slice_last,
)
from errors import ArchitectureError, EmptyDataError, ShapeError


# ---------------------------
# Logging
# ---------------------------

logger = logging.getLogger(__name__)

MODULATION_MODES = ("gating", "affine", "open")

# sigma(40) == 1.0 in float64, so an "open" gate is an exact identity
OPEN_GATE_VALUE = 40.0


# ---------------------------
# Configuration
# ---------------------------

@dataclass(frozen=True)
class ArchConfig:
    """
    Shapes of the base network (psi) and of the modulator (mu).

    modulator_feature_dims sizes h_x; h is one ReLU layer of the last feature
    width applied to h_x(x) concatenated with one_hot(y); modulator_head_dims
    are the hidden sizes of part C, whose output layer emits zeta.
    """
    input_dim: int
    hidden_widths: Tuple[int, ...]
    n_classes: int
    modulator_feature_dims: Tuple[int, ...] = (32,)
    modulator_head_dims: Tuple[int, ...] = (32,)
    modulation_mode: str = "gating"

    def validate(self) -> "ArchConfig":
        if self.input_dim < 1:
            raise ArchitectureError(f"NETWORK: input_dim must be >= 1, got {self.input_dim}")
        if self.n_classes < 2:
            raise ArchitectureError(f"NETWORK: n_classes must be >= 2, got {self.n_classes}")
        if len(self.hidden_widths) < 1:
            raise ArchitectureError("NETWORK: the base network needs at least one hidden layer")
        if len(self.modulator_feature_dims) < 1:
            raise ArchitectureError("NETWORK: modulator_feature_dims needs at least one width")
        for name in ("hidden_widths", "modulator_feature_dims", "modulator_head_dims"):
            widths = getattr(self, name)
            if any(int(w) < 1 for w in widths):
                raise ArchitectureError(f"NETWORK: every entry of {name} must be >= 1, got {widths}")
        if self.modulation_mode not in MODULATION_MODES:
            raise ArchitectureError(
                f"NETWORK: modulation_mode must be one of {MODULATION_MODES}, got '{self.modulation_mode}'"
            )
        return self

    @property
    def modulated_units(self) -> int:
        return int(sum(self.hidden_widths))

    @property
    def zeta_width(self) -> int:
        return self.modulated_units * (2 if self.modulation_mode == "affine" else 1)


# ---------------------------
# Parameter containers
# ---------------------------

@dataclass(frozen=True)
class LinearStack:
    """Weights (fan_in x fan_out) and biases of a fully connected stack."""
    weights: Tuple[Tensor, ...]
    biases: Tuple[Tensor, ...]

    def tensors(self) -> List[Tensor]:
        out: List[Tensor] = []
        for weight, bias in zip(self.weights, self.biases):
            out.extend((weight, bias))
        return out

    def with_tensors(self, tensors: Sequence[Tensor]):
        if len(tensors) != 2 * len(self.weights):
            raise ShapeError(f"NETWORK: expected {2 * len(self.weights)} tensors, got {len(tensors)}")
        for old, new in zip(self.tensors(), tensors):
            if old.shape != new.shape:
                raise ShapeError(f"NETWORK: parameter shape {new.shape} does not match {old.shape}")
        return type(self)(weights=tuple(tensors[0::2]), biases=tuple(tensors[1::2]))

    @property
    def n_layers(self) -> int:
        return len(self.weights)


class BaseParams(LinearStack):
    """psi: hidden layers followed by the output layer."""


@dataclass(frozen=True)
class ModulatorParams:
    """mu: the feature net h_x, the joint net h and the head; mean pooling has no parameters."""
    feature: LinearStack
    joint: LinearStack
    head: LinearStack

    def tensors(self) -> List[Tensor]:
        return self.feature.tensors() + self.joint.tensors() + self.head.tensors()

    def with_tensors(self, tensors: Sequence[Tensor]) -> "ModulatorParams":
        n_feature = len(self.feature.tensors())
        n_joint = len(self.joint.tensors())
        tensors = list(tensors)
        return ModulatorParams(
            feature=self.feature.with_tensors(tensors[:n_feature]),
            joint=self.joint.with_tensors(tensors[n_feature:n_feature + n_joint]),
            head=self.head.with_tensors(tensors[n_feature + n_joint:]),
        )


@dataclass(frozen=True)
class ModulationParams:
    """
    zeta: one vector per hidden layer.

    `scales` holds zeta (gating/open) or zeta_a (affine); `shifts` holds zeta_b
    and is empty outside affine mode.
    """
    scales: Tuple[Tensor, ...]
    shifts: Tuple[Tensor, ...] = ()
    mode: str = "gating"

    def __len__(self) -> int:
        return len(self.scales)

    @classmethod
    def open_gates(cls, widths: Sequence[int]) -> "ModulationParams":
        return cls(scales=tuple(Tensor(np.full(w, OPEN_GATE_VALUE)) for w in widths), mode="open")

    @classmethod
    def identity_film(cls, widths: Sequence[int]) -> "ModulationParams":
        return cls(
            scales=tuple(Tensor(np.ones(w)) for w in widths),
            shifts=tuple(Tensor(np.zeros(w)) for w in widths),
            mode="affine",
        )

    def as_arrays(self) -> List[np.ndarray]:
        return [t.numpy() for t in self.scales + self.shifts]


@dataclass(frozen=True)
class GlobalModel:
    """omega = {mu, psi}. Flattened order is always mu first, then psi."""
    mu: ModulatorParams
    psi: BaseParams
    arch: ArchConfig

    def tensors(self) -> List[Tensor]:
        return self.mu.tensors() + self.psi.tensors()

    def with_tensors(self, tensors: Sequence[Tensor]) -> "GlobalModel":
        n_mu = len(self.mu.tensors())
        tensors = list(tensors)
        return GlobalModel(
            mu=self.mu.with_tensors(tensors[:n_mu]),
            psi=self.psi.with_tensors(tensors[n_mu:]),
            arch=self.arch,
        )

    def shapes(self) -> List[Tuple[int, ...]]:
        return [t.shape for t in self.tensors()]


# ---------------------------
# Initialization
# ---------------------------

def _init_stack(dims: Sequence[int], rng: np.random.Generator, cls=LinearStack):
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)), requires_grad=True))
        biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return cls(weights=tuple(weights), biases=tuple(biases))


def init_base(arch: ArchConfig, rng: np.random.Generator) -> BaseParams:
    dims = [arch.input_dim, *arch.hidden_widths, arch.n_classes]
    return _init_stack(dims, rng, BaseParams)


def init_modulator(arch: ArchConfig, rng: np.random.Generator) -> ModulatorParams:
    feature_width = arch.modulator_feature_dims[-1]
    return ModulatorParams(
        feature=_init_stack([arch.input_dim, *arch.modulator_feature_dims], rng),
        joint=_init_stack([feature_width + arch.n_classes, feature_width], rng),
        head=_init_stack([feature_width, *arch.modulator_head_dims, arch.zeta_width], rng),
    )


def init_global(arch: ArchConfig, seed: int) -> GlobalModel:
    """
    Randomly initialize omega = {mu, psi}.

    Weights ~ N(0, 1/fan_in), biases zero; psi is drawn before mu from one
    generator seeded with `seed`, so the same seed gives bit-identical models.
    """
    arch.validate()
    rng = np.random.default_rng(seed)
    psi = init_base(arch, rng)
    mu = init_modulator(arch, rng)
    logger.debug(f"NETWORK: initialized model seed={seed} base={[t.shape for t in psi.weights]}")
    return GlobalModel(mu=mu, psi=psi, arch=arch)


# ---------------------------
# Modulation
# ---------------------------

def _check_width(activations: Tensor, vector: Tensor, name: str) -> None:
    if activations.data.ndim != 2 or vector.data.ndim != 1 or activations.shape[1] != vector.shape[0]:
        raise ShapeError(f"NETWORK: {name} width mismatch, activations {activations.shape} vs {vector.shape}")


def gate(activations: Tensor, zeta: Tensor) -> Tensor:
    """activations * sigmoid(zeta), broadcast over the batch."""
    _check_width(activations, zeta, "gate")
    return multiply(activations, sigmoid(zeta))


def film(activations: Tensor, zeta_a: Tensor, zeta_b: Tensor) -> Tensor:
    _check_width(activations, zeta_a, "film scale")
    _check_width(activations, zeta_b, "film shift")
    return add(multiply(activations, zeta_a), zeta_b)


def _modulate(activations: Tensor, zeta: ModulationParams, layer: int) -> Tensor:
    if zeta.mode == "affine":
        return film(activations, zeta.scales[layer], zeta.shifts[layer])
    return gate(activations, zeta.scales[layer])


# ---------------------------
# Forward passes
# ---------------------------

def _dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return add(matmul(x, weight), bias)


def stack_forward(x: Tensor, stack: LinearStack, relu_last: bool) -> Tensor:
    for index, (weight, bias) in enumerate(zip(stack.weights, stack.biases)):
        x = _dense(x, weight, bias)
        if relu_last or index < stack.n_layers - 1:
            x = relu(x)
    return x


def base_forward(x, psi: BaseParams, zeta: Optional[ModulationParams] = None) -> Tensor:
    """
    Logits of f_psi | zeta.

    Each hidden layer is relu(x W + b) followed by the modulation of that
    layer; the output layer is never modulated. With zeta None this is the
    plain MLP.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2 or x.shape[1] != psi.weights[0].shape[0]:
        raise ShapeError(f"NETWORK: input shape {x.shape} does not fit first layer {psi.weights[0].shape}")
    n_hidden = psi.n_layers - 1
    if zeta is not None and len(zeta) != n_hidden:
        raise ShapeError(f"NETWORK: {len(zeta)} modulation vectors for {n_hidden} hidden layers")

    for layer in range(n_hidden):
        x = relu(_dense(x, psi.weights[layer], psi.biases[layer]))
        if zeta is not None:
            x = _modulate(x, zeta, layer)
    return _dense(x, psi.weights[-1], psi.biases[-1])


def client_representation(x, y: Sequence[int], mu: ModulatorParams, n_classes: int) -> Tensor:
    """Client embedding z: mean over the batch of joint(features(x_b) ++ one_hot(y_b))."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    labels = np.asarray(y, dtype=np.int64).reshape(-1)
    if x.data.ndim != 2 or x.shape[0] == 0:
        raise EmptyDataError("empty modulation batch")
    if labels.shape[0] != x.shape[0]:
        raise ShapeError(f"NETWORK: {labels.shape[0]} labels for {x.shape[0]} modulation inputs")

    features = stack_forward(x, mu.feature, relu_last=True)
    joint = concat([features, one_hot(labels, n_classes)])
    return mean(stack_forward(joint, mu.joint, relu_last=True))


def modulator_forward(batch: Tuple, mu: ModulatorParams, arch: ArchConfig) -> ModulationParams:
    """
    g_mu: predict the per-layer modulation parameters from one labeled batch.

    The output depends only on the multiset of examples in the batch.
    """
    x, y = batch
    if len(y) == 0:
        raise EmptyDataError("empty modulation batch")
    if arch.modulation_mode == "open":
        return ModulationParams.open_gates(arch.hidden_widths)

    z = client_representation(x, y, mu, arch.n_classes)
    head_out = stack_forward(reshape(z, (1, z.shape[0])), mu.head, relu_last=False)
    flat = reshape(head_out, (arch.zeta_width,))

    scales, shifts = [], []
    offset = 0
    for width in arch.hidden_widths:
        scales.append(slice_last(flat, offset, offset + width))
        offset += width
    if arch.modulation_mode == "affine":
        for width in arch.hidden_widths:
            shifts.append(slice_last(flat, offset, offset + width))
            offset += width
    return ModulationParams(scales=tuple(scales), shifts=tuple(shifts), mode=arch.modulation_mode)
