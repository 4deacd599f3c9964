"""
The forecasting network.

Stage 0 standardizes every input window per channel (``instance_normalize``)
and keeps the window statistics so that the forecast can be mapped back to
the input scale at the end (``denormalize``).

Stage 1 refines the normalized window with a stack of ``M`` residual mixer
blocks (time mixing along the lookback axis, then a per-time-step MLP across
variates). The same stack is applied ``N`` times with the same parameters,
so ``N`` changes the depth of the computation but not the parameter count.

Stage 2 adds a correction read from ``S`` learnable slots (external
attention), which costs two products linear in the lookback length.

Stage 3 reads the horizon out of the lookback axis with one linear map,
keeps the target channels and undoes the Stage 0 normalization.

All functions accept a single window ``L x C`` or a batch ``B x L x C``.
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import attr
import numpy as np

from tied_mixer.autograd import Rng, Tensor, as_tensor
from tied_mixer.autograd.ops import (
    RunningStats,
    activation,
    add_broadcast,
    clamp_magnitude,
    div,
    dropout,
    matmul,
    mul,
    normalize,
    reshape,
    row_softmax,
    sub,
    take,
    transpose,
)
from tied_mixer.defs import ACTIVATIONS, NORM_EPS, NORM_KINDS, SLOT_INIT_STD
from tied_mixer.errors import ConfigurationError, ContractError
from tied_mixer.validators import (
    in_range,
    one_of,
    optional_positive,
    positive,
    to_float,
    to_int,
    to_int_tuple,
    to_optional_int,
)


@attr.s(auto_attribs=True, frozen=True)
class ModelConfig:
    """Structural hyperparameters of one network.

    ``lookback`` (L), ``horizon`` (T), ``n_channels`` (C) and
    ``target_channels`` (whose length is C_out) fix the tensor shapes;
    ``n_rounds`` (N) is the number of tied refinement rounds, ``n_blocks``
    (M) the depth of the mixer stack, ``n_slots`` (S) the attention memory
    and ``hidden_dim`` (d_h) the feature-mixing width.
    """

    lookback: int = attr.ib(converter=to_int, validator=positive)
    horizon: int = attr.ib(converter=to_int, validator=positive)
    n_channels: int = attr.ib(converter=to_int, validator=positive)
    target_channels: Tuple[int, ...] = attr.ib(converter=to_int_tuple)
    n_rounds: int = attr.ib(default=2, converter=to_int, validator=positive)
    n_blocks: int = attr.ib(default=2, converter=to_int, validator=positive)
    n_slots: int = attr.ib(default=32, converter=to_int, validator=positive)
    hidden_dim: int = attr.ib(default=64, converter=to_int, validator=positive)
    norm_kind: str = attr.ib(default="layer", validator=one_of(sorted(NORM_KINDS)))
    activation: str = attr.ib(default="relu", validator=one_of(sorted(ACTIVATIONS)))
    dropout_rate: float = attr.ib(
        default=0.0, converter=to_float, validator=in_range(0.0, 0.5)
    )

    @target_channels.validator
    def _check_targets(self, attribute, value):
        if not value:
            raise ConfigurationError("at least one target channel is needed", field=attribute.name)
        if len(set(value)) != len(value):
            raise ConfigurationError(f"duplicated channels in {value}", field=attribute.name)
        if min(value) < 0 or max(value) >= self.n_channels:
            raise ConfigurationError(
                f"channels {value} outside [0, {self.n_channels})", field=attribute.name
            )

    @property
    def n_targets(self) -> int:
        return len(self.target_channels)

    @property
    def selects_channels(self) -> bool:
        return self.target_channels != tuple(range(self.n_channels))

    def architecture(self) -> "Architecture":
        return Architecture(
            n_rounds=self.n_rounds,
            n_blocks=self.n_blocks,
            n_slots=self.n_slots,
            hidden_dim=self.hidden_dim,
            norm_kind=self.norm_kind,
            activation=self.activation,
            dropout_rate=self.dropout_rate,
            lookback=self.lookback,
        )


@attr.s(auto_attribs=True, frozen=True)
class Architecture:
    """The part of ``ModelConfig`` chosen by the user or by the search, as
    stored in run manifests. Shapes come from the dataset; ``lookback`` may be
    left to the dataset manifest."""

    n_rounds: int = attr.ib(default=2, converter=to_int, validator=positive)
    n_blocks: int = attr.ib(default=2, converter=to_int, validator=positive)
    n_slots: int = attr.ib(default=32, converter=to_int, validator=positive)
    hidden_dim: int = attr.ib(default=64, converter=to_int, validator=positive)
    norm_kind: str = attr.ib(default="layer", validator=one_of(sorted(NORM_KINDS)))
    activation: str = attr.ib(default="relu", validator=one_of(sorted(ACTIVATIONS)))
    dropout_rate: float = attr.ib(
        default=0.0, converter=to_float, validator=in_range(0.0, 0.5)
    )
    lookback: Optional[int] = attr.ib(
        default=None, converter=to_optional_int, validator=optional_positive
    )

    def model_config(
        self,
        *,
        horizon: int,
        n_channels: int,
        target_channels: Sequence[int],
        lookback: Optional[int] = None,
    ) -> ModelConfig:
        lookback = self.lookback if self.lookback is not None else lookback
        if lookback is None:
            raise ConfigurationError("no lookback given", field="lookback")
        return ModelConfig(
            lookback=lookback,
            horizon=horizon,
            n_channels=n_channels,
            target_channels=tuple(target_channels),
            n_rounds=self.n_rounds,
            n_blocks=self.n_blocks,
            n_slots=self.n_slots,
            hidden_dim=self.hidden_dim,
            norm_kind=self.norm_kind,
            activation=self.activation,
            dropout_rate=self.dropout_rate,
        )


@attr.s(auto_attribs=True, eq=False)
class InstanceNormParams:
    gamma: Tensor
    beta: Tensor


@attr.s(auto_attribs=True, eq=False)
class InstanceNormState:
    """Per-window statistics of the last ``instance_normalize`` call, shaped
    ``B x 1 x C``, together with the learnable affine."""

    mean: np.ndarray
    std: np.ndarray
    affine: InstanceNormParams


@attr.s(auto_attribs=True, eq=False)
class MixerBlockParams:
    time_weight: Tensor  # L x L
    time_bias: Tensor  # L
    feature_weight1: Tensor  # C x d_h
    feature_bias1: Tensor  # d_h
    feature_weight2: Tensor  # d_h x C
    feature_bias2: Tensor  # C
    norm1_gamma: Tensor
    norm1_beta: Tensor
    norm2_gamma: Tensor
    norm2_beta: Tensor
    norm1_running: Optional[RunningStats] = None
    norm2_running: Optional[RunningStats] = None

    @property
    def lookback(self) -> int:
        return self.time_weight.shape[0]

    @property
    def n_channels(self) -> int:
        return self.feature_weight1.shape[0]


@attr.s(auto_attribs=True, eq=False)
class ExternalAttentionParams:
    keys: Tensor  # S x C
    values: Tensor  # S x C


@attr.s(auto_attribs=True, eq=False)
class TemporalHead:
    weight: Tensor  # T x L
    bias: Tensor  # T


_BLOCK_TENSORS = (
    "time_weight",
    "time_bias",
    "feature_weight1",
    "feature_bias1",
    "feature_weight2",
    "feature_bias2",
    "norm1_gamma",
    "norm1_beta",
    "norm2_gamma",
    "norm2_beta",
)


@attr.s(auto_attribs=True, eq=False)
class ModelParams:
    instance_norm: InstanceNormParams
    blocks: List[MixerBlockParams]
    attention: ExternalAttentionParams
    head: TemporalHead

    def named_tensors(self) -> List[Tuple[str, Tensor]]:
        """All learnable tensors in a fixed order with dotted names."""
        named = [
            ("instance_norm.gamma", self.instance_norm.gamma),
            ("instance_norm.beta", self.instance_norm.beta),
        ]
        for m, block in enumerate(self.blocks):
            named.extend((f"blocks.{m}.{n}", getattr(block, n)) for n in _BLOCK_TENSORS)
        named.extend(
            [
                ("attention.keys", self.attention.keys),
                ("attention.values", self.attention.values),
                ("head.weight", self.head.weight),
                ("head.bias", self.head.bias),
            ]
        )
        return named

    def tensors(self) -> List[Tensor]:
        return [t for _, t in self.named_tensors()]

    def named_buffers(self) -> List[Tuple[str, np.ndarray]]:
        """Non-learnable state (batch-normalization running statistics)."""
        buffers = []
        for m, block in enumerate(self.blocks):
            for norm in ("norm1_running", "norm2_running"):
                stats = getattr(block, norm)
                if stats is not None:
                    buffers.append((f"blocks.{m}.{norm}.mean", stats.mean))
                    buffers.append((f"blocks.{m}.{norm}.var", stats.var))
        return buffers

    def snapshot(self) -> Dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.named_tensors()}
        state.update((name, value.copy()) for name, value in self.named_buffers())
        return state

    def restore(self, state: Dict[str, np.ndarray]):
        """Load values from ``snapshot()`` (or a checkpoint) in place."""
        for name, tensor in self.named_tensors():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ContractError(f"{name}: expected shape {tensor.shape}, got {value.shape}")
            tensor.data[...] = value
        for m, block in enumerate(self.blocks):
            for norm in ("norm1_running", "norm2_running"):
                stats = getattr(block, norm)
                if stats is not None:
                    stats.mean = np.array(state[f"blocks.{m}.{norm}.mean"], dtype=np.float64)
                    stats.var = np.array(state[f"blocks.{m}.{norm}.var"], dtype=np.float64)


def _uniform(rng: Rng, fan_in: int, shape: Tuple[int, ...], name: str) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True, name=name)


def _constant(value: float, n: int, name: str) -> Tensor:
    return Tensor(np.full(n, value), requires_grad=True, name=name)


def init_params(config: ModelConfig, rng: Rng) -> ModelParams:
    """Linear maps uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, slots
    normal with std 0.02, every normalization affine at ``gamma=1, beta=0``."""
    L, T, C = config.lookback, config.horizon, config.n_channels
    d_h, S = config.hidden_dim, config.n_slots
    blocks = []
    for m in range(config.n_blocks):
        batch = config.norm_kind == "batch"
        blocks.append(
            MixerBlockParams(
                time_weight=_uniform(rng, L, (L, L), f"blocks.{m}.time_weight"),
                time_bias=_uniform(rng, L, (L,), f"blocks.{m}.time_bias"),
                feature_weight1=_uniform(rng, C, (C, d_h), f"blocks.{m}.feature_weight1"),
                feature_bias1=_uniform(rng, C, (d_h,), f"blocks.{m}.feature_bias1"),
                feature_weight2=_uniform(rng, d_h, (d_h, C), f"blocks.{m}.feature_weight2"),
                feature_bias2=_uniform(rng, d_h, (C,), f"blocks.{m}.feature_bias2"),
                norm1_gamma=_constant(1.0, C, f"blocks.{m}.norm1_gamma"),
                norm1_beta=_constant(0.0, C, f"blocks.{m}.norm1_beta"),
                norm2_gamma=_constant(1.0, C, f"blocks.{m}.norm2_gamma"),
                norm2_beta=_constant(0.0, C, f"blocks.{m}.norm2_beta"),
                norm1_running=RunningStats.fresh(C) if batch else None,
                norm2_running=RunningStats.fresh(C) if batch else None,
            )
        )
    return ModelParams(
        instance_norm=InstanceNormParams(
            gamma=_constant(1.0, C, "instance_norm.gamma"),
            beta=_constant(0.0, C, "instance_norm.beta"),
        ),
        blocks=blocks,
        attention=ExternalAttentionParams(
            keys=Tensor(rng.normal(0.0, SLOT_INIT_STD, (S, C)), True, "attention.keys"),
            values=Tensor(rng.normal(0.0, SLOT_INIT_STD, (S, C)), True, "attention.values"),
        ),
        head=TemporalHead(
            weight=_uniform(rng, L, (T, L), "head.weight"),
            bias=_uniform(rng, L, (T,), "head.bias"),
        ),
    )


def instance_normalize(
    x, affine: InstanceNormParams, eps: float = NORM_EPS
) -> Tuple[Tensor, InstanceNormState]:
    """Standardize each channel of each window over its time axis and apply
    the learnable per-channel affine. The standard deviation uses the
    population convention and is clamped below at ``eps``; the statistics are
    treated as constants.

    >>> affine = InstanceNormParams(Tensor([1.0]), Tensor([0.0]))
    >>> h, state = instance_normalize([[1.0], [2.0], [3.0]], affine)
    >>> [round(v, 6) for v in h.data.ravel()]
    [-1.224745, 0.0, 1.224745]
    """
    x = as_tensor(x)
    mean = x.data.mean(axis=-2, keepdims=True)
    std = np.maximum(x.data.std(axis=-2, keepdims=True), eps)
    scaled = Tensor.wrap((x.data - mean) / std)
    h = add_broadcast(mul(scaled, affine.gamma), affine.beta)
    return h, InstanceNormState(mean=mean, std=std, affine=affine)


def denormalize(
    y,
    state: InstanceNormState,
    channels: Optional[Sequence[int]] = None,
    eps: float = NORM_EPS,
) -> Tensor:
    """Inverse of ``instance_normalize`` for the given channels (all when
    ``None``), using the stored window statistics of those channels. The
    affine scale is divided out with its magnitude floored at ``eps``, so a
    scale that reaches zero keeps the forecast finite."""
    y = as_tensor(y)
    if channels is None:
        channels = range(state.mean.shape[-1])
    idx = list(channels)
    gamma = clamp_magnitude(take(state.affine.gamma, idx, axis=0), eps)
    beta = take(state.affine.beta, idx, axis=0)
    mean = state.mean[..., idx]
    std = state.std[..., idx]
    unscaled = div(sub(y, beta), gamma)
    return add_broadcast(mul(unscaled, Tensor.wrap(std)), Tensor.wrap(mean))


def residual_mixer_block(
    h,
    block: MixerBlockParams,
    dropout_rate: float,
    training: bool,
    rng: Optional[Rng] = None,
    *,
    norm_kind: str = "layer",
    activation_kind: str = "relu",
) -> Tensor:
    """Time mixing then feature mixing, each normalized first and added back
    to its input. Dropout follows the activation in the time branch and the
    second linear map in the feature branch."""
    h = as_tensor(h)
    if h.ndim not in (2, 3) or h.shape[-2:] != (block.lookback, block.n_channels):
        raise ContractError(
            f"mixer block expects (..., {block.lookback}, {block.n_channels}), got {h.shape}"
        )
    L = block.lookback

    s = normalize(
        h, norm_kind, block.norm1_gamma, block.norm1_beta,
        running=block.norm1_running, training=training,
    )
    time_mixed = add_broadcast(matmul(block.time_weight, s), reshape(block.time_bias, (L, 1)))
    t = add_broadcast(
        h, dropout(activation(time_mixed, activation_kind), dropout_rate, training, rng)
    )

    q = normalize(
        t, norm_kind, block.norm2_gamma, block.norm2_beta,
        running=block.norm2_running, training=training,
    )
    hidden = activation(
        add_broadcast(matmul(q, block.feature_weight1), block.feature_bias1),
        activation_kind,
    )
    feature_mixed = add_broadcast(matmul(hidden, block.feature_weight2), block.feature_bias2)
    return add_broadcast(t, dropout(feature_mixed, dropout_rate, training, rng))


def apply_stack(
    h,
    blocks: Sequence[MixerBlockParams],
    dropout_rate: float,
    training: bool,
    rng: Optional[Rng] = None,
    *,
    norm_kind: str = "layer",
    activation_kind: str = "relu",
) -> Tensor:
    """One refinement round: the blocks applied in order."""
    out = as_tensor(h)
    for block in blocks:
        out = residual_mixer_block(
            out, block, dropout_rate, training, rng,
            norm_kind=norm_kind, activation_kind=activation_kind,
        )
    return out


def iterative_refine(
    h0,
    blocks: Sequence[MixerBlockParams],
    n_rounds: int,
    dropout_rate: float,
    training: bool,
    rng: Optional[Rng] = None,
    *,
    norm_kind: str = "layer",
    activation_kind: str = "relu",
) -> Tensor:
    """Apply the same stack ``n_rounds`` times. Dropout masks are drawn anew
    at every application."""
    if n_rounds <= 0:
        raise ConfigurationError(f"must be >= 1, got {n_rounds}", field="n_rounds")
    h = as_tensor(h0)
    for _ in range(n_rounds):
        h = apply_stack(
            h, blocks, dropout_rate, training, rng,
            norm_kind=norm_kind, activation_kind=activation_kind,
        )
    return h


def attention_weights(h, attention: ExternalAttentionParams) -> Tensor:
    """Row-wise softmax of the affinities ``H E^T`` (``... x L x S``)."""
    h = as_tensor(h)
    keys, values = attention.keys, attention.values
    if keys.shape != values.shape or h.ndim not in (2, 3) or h.shape[-1] != keys.shape[-1]:
        raise ContractError(
            f"external attention expects (..., L, C) with slots (S, C); got input "
            f"{h.shape}, keys {keys.shape}, values {values.shape}"
        )
    return row_softmax(matmul(h, transpose(keys)))


def external_attention(h, attention: ExternalAttentionParams) -> Tensor:
    """``Z = H + softmax(H E^T) V``."""
    h = as_tensor(h)
    weights = attention_weights(h, attention)
    return add_broadcast(h, matmul(weights, attention.values))


def check_params(params: ModelParams, config: ModelConfig):
    L, T, C = config.lookback, config.horizon, config.n_channels
    expected = {
        "instance_norm.gamma": (C,),
        "instance_norm.beta": (C,),
        "attention.keys": (config.n_slots, C),
        "attention.values": (config.n_slots, C),
        "head.weight": (T, L),
        "head.bias": (T,),
    }
    if len(params.blocks) != config.n_blocks:
        raise ContractError(f"config has {config.n_blocks} blocks, params {len(params.blocks)}")
    d_h = config.hidden_dim
    block_shapes = {
        "time_weight": (L, L),
        "time_bias": (L,),
        "feature_weight1": (C, d_h),
        "feature_bias1": (d_h,),
        "feature_weight2": (d_h, C),
        "feature_bias2": (C,),
    }
    for name in _BLOCK_TENSORS:
        for m in range(config.n_blocks):
            expected[f"blocks.{m}.{name}"] = block_shapes.get(name, (C,))
    for name, tensor in params.named_tensors():
        if tensor.shape != expected[name]:
            raise ContractError(
                f"{name}: params have shape {tensor.shape}, config needs {expected[name]}"
            )


def forward(
    x,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[Rng] = None,
) -> Tensor:
    """Forecast ``T x C_out`` (or ``B x T x C_out``) from ``L x C`` windows."""
    x = as_tensor(x)
    if x.ndim not in (2, 3) or x.shape[-2:] != (config.lookback, config.n_channels):
        raise ContractError(
            f"input must be (..., {config.lookback}, {config.n_channels}), got {x.shape}"
        )
    check_params(params, config)
    single = x.ndim == 2
    if single:
        x = Tensor.wrap(x.data[np.newaxis])

    h0, state = instance_normalize(x, params.instance_norm)
    h = iterative_refine(
        h0, params.blocks, config.n_rounds, config.dropout_rate, training, rng,
        norm_kind=config.norm_kind, activation_kind=config.activation,
    )
    z = external_attention(h, params.attention)
    if config.selects_channels:
        z = take(z, config.target_channels, axis=-1)
    readout = add_broadcast(
        matmul(params.head.weight, z), reshape(params.head.bias, (config.horizon, 1))
    )
    y = denormalize(readout, state, config.target_channels)
    if single:
        y = reshape(y, (config.horizon, config.n_targets))
    return y


def count_parameters(params: ModelParams) -> int:
    return sum(t.size for t in params.tensors())


def expected_parameter_count(config: ModelConfig) -> int:
    """Closed form of ``count_parameters``::

        2C + M (L^2 + L + 2 C d_h + d_h + 5C) + 2 S C + T L + T

    Both normalization kinds carry one affine pair of length C, so the count
    does not depend on ``norm_kind``; it never depends on ``n_rounds``.

    >>> expected_parameter_count(ModelConfig(8, 4, 3, (0, 1, 2), n_blocks=2, n_slots=4, hidden_dim=5))
    310
    """
    L, T, C = config.lookback, config.horizon, config.n_channels
    M, S, d_h = config.n_blocks, config.n_slots, config.hidden_dim
    per_block = L * L + L + 2 * C * d_h + d_h + 5 * C
    return 2 * C + M * per_block + 2 * S * C + T * L + T


@attr.s(auto_attribs=True, eq=False)
class Forecaster:
    """A configured network with its parameters."""

    config: ModelConfig
    params: ModelParams

    @classmethod
    def initialize(cls, config: ModelConfig, rng: Rng) -> "Forecaster":
        return cls(config, init_params(config, rng))

    def __call__(self, x, training: bool = False, rng: Optional[Rng] = None) -> Tensor:
        return forward(x, self.params, self.config, training, rng)

    def predict(self, inputs: Union[np.ndarray, Sequence], batch_size: int = 256) -> np.ndarray:
        """Inference-mode forecasts for ``B x L x C`` (or ``L x C``) inputs."""
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim == 2:
            return self(inputs).numpy()
        chunks = [
            self(inputs[start : start + batch_size]).data
            for start in range(0, len(inputs), batch_size)
        ]
        if not chunks:
            return np.zeros((0, self.config.horizon, self.config.n_targets))
        return np.concatenate(chunks, axis=0)

    def with_dropout(self, rate: float) -> "Forecaster":
        return Forecaster(attr.evolve(self.config, dropout_rate=rate), self.params)

    def parameter_count(self) -> int:
        return count_parameters(self.params)
