"""The two-tower matching network: attentions, three MLP towers and the joint loss."""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import attention as A
from . import tensor as T
from .embedding import (
    DEFAULT_DIMS,
    INIT_RANGE,
    EmbeddedInstance,
    EmbeddingDictionary,
    embed_instance,
    embed_items,
    group_dim,
    init_dictionaries,
)
from .errors import ConfigurationError, DimensionError, InvalidArgumentError
from .features import EncodedInstance, Vocabulary

Layer = tuple[T.Tensor, T.Tensor]


@dataclass(frozen=True)
class ModelConfig:
    embedding_dims: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_DIMS))
    self_attention_dim: int = 32
    n_heads: int = 8
    intention_hidden: tuple[int, ...] = (32,)
    user_hidden: tuple[int, ...] = (64,)
    item_hidden: tuple[int, ...] = (64,)
    repr_dim: int = 32
    disable_profile_itinerary_attention: bool = False
    disable_self_attention: bool = False
    disable_behavior_attention: bool = False
    single_order_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_heads < 1 or self.self_attention_dim % self.n_heads:
            raise ConfigurationError(
                f"self_attention_dim {self.self_attention_dim} must be divisible by n_heads {self.n_heads}"
            )
        if self.repr_dim < 1:
            raise ConfigurationError("repr_dim must be positive")
        object.__setattr__(self, "embedding_dims", dict(self.embedding_dims))
        for name in ("intention_hidden", "user_hidden", "item_hidden"):
            object.__setattr__(self, name, tuple(int(h) for h in getattr(self, name)))

    @property
    def intention_enabled(self) -> bool:
        return not self.disable_profile_itinerary_attention

    @property
    def d_profile(self) -> int:
        return group_dim(self.embedding_dims, "profile")

    @property
    def d_order(self) -> int:
        return group_dim(self.embedding_dims, "itinerary")

    @property
    def d_behavior(self) -> int:
        return group_dim(self.embedding_dims, "behavior")

    @property
    def d_target(self) -> int:
        return group_dim(self.embedding_dims, "target")

    @property
    def d_intention(self) -> int:
        return self.d_profile if self.disable_profile_itinerary_attention else self.d_order + self.d_profile

    @property
    def d_query(self) -> int:
        return self.d_intention + self.self_attention_dim

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["embedding_dims"] = dict(sorted(self.embedding_dims.items()))
        for k in ("intention_hidden", "user_hidden", "item_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**dict(d))


# method name -> config overrides
METHOD_VARIANTS: dict[str, dict] = {
    "fitnet": {},
    "fitnet-minus": {"single_order_mode": True},
    "avgpool": {
        "disable_profile_itinerary_attention": True,
        "disable_self_attention": True,
        "disable_behavior_attention": True,
    },
    "var1": {"disable_profile_itinerary_attention": True},
    "var2": {"disable_self_attention": True},
    "var3": {"disable_behavior_attention": True},
}


def config_for_method(base: ModelConfig, method: str) -> ModelConfig:
    if method not in METHOD_VARIANTS:
        raise ConfigurationError(f"unknown trainable method {method!r}")
    return dataclasses.replace(base, **METHOD_VARIANTS[method])


@dataclass
class ForwardOutput:
    p_i: T.Tensor | None
    p_c: T.Tensor
    v_u: T.Tensor
    v_t: T.Tensor
    raw_score: T.Tensor


@dataclass
class UserTowerOutput:
    v_u: T.Tensor
    v_i: T.Tensor
    v_p: T.Tensor
    v_b: T.Tensor
    p_i: T.Tensor | None
    alpha: T.Tensor | None
    beta: T.Tensor | None


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(rng: np.random.Generator, sizes: Sequence[int], prefix: str) -> list[Layer]:
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = T.parameter(_glorot(rng, a, b), name=f"{prefix}.{i}.w")
        bias = T.parameter(np.zeros((1, b)), name=f"{prefix}.{i}.b")
        layers.append((w, bias))
    return layers


def mlp_forward(stack: Sequence[Layer], x: T.Tensor, final_sigmoid: bool = False) -> T.Tensor:
    """ReLU hidden layers, linear output layer (sigmoid output when ``final_sigmoid``)."""
    for i, (w, b) in enumerate(stack):
        if x.shape[-1] != w.shape[0]:
            raise ConfigurationError(
                f"MLP layer {i} expects input dim {w.shape[0]}, got {x.shape[-1]}"
            )
        x = T.add(T.matmul(x, w), b)
        if i < len(stack) - 1:
            x = T.relu(x)
    return T.sigmoid(x) if final_sigmoid else x


@dataclass
class ModelParams:
    embeddings: dict[str, EmbeddingDictionary]
    attention: A.AttentionParams
    intention_mlp: list[Layer]
    user_mlp: list[Layer]
    item_mlp: list[Layer]

    def named(self) -> dict[str, T.Tensor]:
        out: dict[str, T.Tensor] = {}
        for key in sorted(self.embeddings):
            out[f"emb.{key}"] = self.embeddings[key].matrix
        out.update(self.attention.named())
        for prefix, stack in (("mlp.intent", self.intention_mlp), ("mlp.user", self.user_mlp), ("mlp.item", self.item_mlp)):
            for i, (w, b) in enumerate(stack):
                out[f"{prefix}.{i}.w"] = w
                out[f"{prefix}.{i}.b"] = b
        return out

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named().values())

    @classmethod
    def initialize(cls, config: ModelConfig, vocabs: Mapping[str, Vocabulary]) -> ModelParams:
        rng = np.random.default_rng(config.seed)
        emb = init_dictionaries(vocabs, config.embedding_dims, rng)
        d_e, d_p, d_b, d_t = config.d_order, config.d_profile, config.d_behavior, config.d_target
        d_m, n = config.self_attention_dim, config.n_heads

        def uni(shape, name):
            return T.parameter(rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape), name=name)

        att = A.AttentionParams()
        if not config.disable_profile_itinerary_attention:
            att.w1 = uni((d_p, d_e), "att.w1")
        if not config.disable_self_attention:
            att.w_query = uni((n, d_e, d_m // n), "att.w_query")
            att.w_key = uni((n, d_e, d_m // n), "att.w_key")
            att.w_value = uni((n, d_e, d_m // n), "att.w_value")
            att.w_out = uni((d_m, d_m), "att.w_out")
        else:
            att.pool_proj = uni((d_e, d_m), "att.pool_proj")
        if not config.disable_behavior_attention:
            att.w2 = uni((config.d_query, d_b), "att.w2")

        intention = []
        if config.intention_enabled:
            intention = init_mlp(rng, [config.d_intention, *config.intention_hidden, 1], "mlp.intent")
        user = init_mlp(rng, [config.d_query + d_b, *config.user_hidden, config.repr_dim], "mlp.user")
        item = init_mlp(rng, [d_t, *config.item_hidden, config.repr_dim], "mlp.item")
        return cls(emb, att, intention, user, item)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Mapping[str, np.ndarray]) -> ModelParams:
        emb = {
            name[len("emb."):]: EmbeddingDictionary(name[len("emb."):], T.parameter(a, name=name))
            for name, a in arrays.items()
            if name.startswith("emb.")
        }
        att = A.AttentionParams()
        for name, a in arrays.items():
            if name.startswith("att."):
                setattr(att, name[len("att."):], T.parameter(a, name=name))

        def stack(prefix):
            layers = []
            i = 0
            while f"{prefix}.{i}.w" in arrays:
                layers.append(
                    (
                        T.parameter(arrays[f"{prefix}.{i}.w"], name=f"{prefix}.{i}.w"),
                        T.parameter(arrays[f"{prefix}.{i}.b"], name=f"{prefix}.{i}.b"),
                    )
                )
                i += 1
            return layers

        params = cls(emb, att, stack("mlp.intent"), stack("mlp.user"), stack("mlp.item"))
        expected = ModelParams.shapes(config, {k: v.rows for k, v in emb.items()})
        got = {k: v.shape for k, v in params.named().items()}
        if expected != got:
            raise ConfigurationError(f"parameter shapes do not match config: expected {expected}, got {got}")
        return params

    @staticmethod
    def shapes(config: ModelConfig, vocab_sizes: Mapping[str, int]) -> dict[str, tuple[int, ...]]:
        fake = {k: Vocabulary(k, ["<unk>", *[str(i) for i in range(n - 1)]]) for k, n in vocab_sizes.items()}
        return {k: v.shape for k, v in ModelParams.initialize(config, fake).named().items()}


class FitNet:
    """A configured network: config, vocabularies and parameters together."""

    def __init__(self, config: ModelConfig, vocabs: Mapping[str, Vocabulary], params: ModelParams | None = None):
        self.config = config
        self.vocabs = dict(vocabs)
        self.params = params if params is not None else ModelParams.initialize(config, self.vocabs)
        self.checkpoint_hash: str | None = None

    def named_parameters(self) -> dict[str, T.Tensor]:
        return self.params.named()

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, t in self.named_parameters().items():
            h.update(name.encode())
            h.update(np.asarray(t.shape, dtype="<i8").tobytes())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def embed(self, enc: EncodedInstance) -> EmbeddedInstance:
        return embed_instance(enc, self.params.embeddings, single_order=self.config.single_order_mode)

    def user_tower(self, emb: EmbeddedInstance) -> UserTowerOutput:
        return user_tower(emb, self.params, self.config)

    def item_tower(self, e_F: T.Tensor) -> T.Tensor:
        return item_tower(e_F, self.params)

    def embed_targets(self, target_indices: np.ndarray) -> T.Tensor:
        return embed_items("target", np.asarray(target_indices).reshape(-1, 3), self.params.embeddings)

    def forward(self, enc: EncodedInstance) -> ForwardOutput:
        if enc.target is None:
            raise InvalidArgumentError("forward needs an instance with a target item")
        emb = self.embed(enc)
        user = self.user_tower(emb)
        v_t = self.item_tower(emb.e_F)
        raw = T.matmul(user.v_u, T.transpose(v_t))
        return ForwardOutput(user.p_i, T.sigmoid(raw), user.v_u, v_t, raw)

    def user_vector(self, enc: EncodedInstance) -> np.ndarray:
        return self.user_tower(self.embed(enc)).v_u.data[0].copy()

    def item_vectors(self, target_indices: np.ndarray) -> np.ndarray:
        return self.item_tower(self.embed_targets(target_indices)).data

    def group_loss(self, enc: EncodedInstance, targets: np.ndarray, labels: np.ndarray) -> T.Tensor:
        """Summed joint loss of one user's instances that differ only in their target.

        Equivalent to summing :func:`loss` over the instances individually, but
        runs the user tower once.
        """
        user = self.user_tower(self.embed(enc))
        v_t = self.item_tower(self.embed_targets(targets))
        p_c = T.sigmoid(T.matmul(v_t, T.transpose(user.v_u)))
        out = T.total(T.bce(p_c, np.asarray(labels, dtype=np.float64).reshape(-1, 1)))
        if self.config.intention_enabled:
            loss_i = T.scale(T.total(T.bce(user.p_i, enc.label_intent)), float(len(labels)))
            out = T.add(out, loss_i)
        return out


def user_tower(emb: EmbeddedInstance, params: ModelParams, config: ModelConfig) -> UserTowerOutput:
    att = params.attention
    e_P, e_I, e_B = emb.e_P, emb.e_I, emb.e_B
    if config.single_order_mode and e_I.shape[0] > 1:
        e_I = T.gather(e_I, [e_I.shape[0] - 1])

    alpha = None
    if config.disable_profile_itinerary_attention:
        v_i = e_P
    else:
        context, alpha = A.profile_itinerary_attention(e_P, e_I, att.w1)
        v_i = A.intention_vector(context, e_P)

    if config.disable_self_attention:
        v_p = T.matmul(A.mean_pool(e_I, e_I.shape[1]), att.pool_proj)
    else:
        v_p = A.multi_head_self_attention(e_I, att.w_query, att.w_key, att.w_value, att.w_out)

    beta = None
    if config.disable_behavior_attention:
        v_b = A.mean_pool(e_B, config.d_behavior)
    else:
        v_c = T.concat([v_i, v_p], axis=1)
        v_b, beta = A.behavior_attention(v_c, e_B, att.w2)

    p_i = mlp_forward(params.intention_mlp, v_i, final_sigmoid=True) if config.intention_enabled else None
    v_u = mlp_forward(params.user_mlp, T.concat([v_i, v_p, v_b], axis=1))
    return UserTowerOutput(v_u, v_i, v_p, v_b, p_i, alpha, beta)


def item_tower(e_F: T.Tensor, params: ModelParams) -> T.Tensor:
    return mlp_forward(params.item_mlp, e_F)


def score(v_u, v_t) -> float:
    """Inner product of a user and an item representation."""
    a = np.asarray(getattr(v_u, "data", v_u), dtype=np.float64).reshape(-1)
    b = np.asarray(getattr(v_t, "data", v_t), dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"score: dimensions {a.shape} and {b.shape} differ")
    return float(np.sum(a * b))


def loss(out: ForwardOutput, label_intent: int, label_click: int, intention_enabled: bool = True) -> T.Tensor:
    """Unweighted sum of the click loss and (when enabled) the intention loss."""
    for lab in (label_intent, label_click):
        if lab not in (0, 1):
            raise InvalidArgumentError(f"labels must be 0 or 1, got {lab!r}")
    total = T.total(T.bce(out.p_c, label_click))
    if intention_enabled:
        if out.p_i is None:
            raise InvalidArgumentError("intention loss requested but the model has no intention tower")
        total = T.add(total, T.total(T.bce(out.p_i, label_intent)))
    return total
