"""The three itinerary-aware attention mechanisms.

All inputs are stacked row matrices: ``e_I`` is |I| x D_e (one row per
order), ``e_B`` is |B| x D_b. Scores are divided by sqrt(d) before the
softmax, with d = D_e for the profile query and d = D_b for the behaviour
query unless overridden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, InvalidArgumentError


@dataclass
class AttentionParams:
    """Learnable attention matrices.

    ``w_query``/``w_key``/``w_value`` stack the per-head projections as
    (N, D_e, D_m / N) arrays. Entries are ``None`` when the mechanism that
    owns them is ablated; ``pool_proj`` exists only when self-attention is
    replaced by mean pooling.
    """

    w1: T.Tensor | None = None
    w_query: T.Tensor | None = None
    w_key: T.Tensor | None = None
    w_value: T.Tensor | None = None
    w_out: T.Tensor | None = None
    pool_proj: T.Tensor | None = None
    w2: T.Tensor | None = None

    def named(self) -> dict[str, T.Tensor]:
        return {
            f"att.{k}": v
            for k, v in (
                ("w1", self.w1),
                ("w_query", self.w_query),
                ("w_key", self.w_key),
                ("w_value", self.w_value),
                ("w_out", self.w_out),
                ("pool_proj", self.pool_proj),
                ("w2", self.w2),
            )
            if v is not None
        }


def _bilinear_attention(query: T.Tensor, w: T.Tensor, values: T.Tensor, d: float):
    scores = T.matmul(T.matmul(query, w), T.transpose(values))
    weights = T.softmax(T.scale(scores, 1.0 / math.sqrt(d)))
    return T.matmul(weights, values), weights


def profile_itinerary_attention(e_P: T.Tensor, e_I: T.Tensor, w1: T.Tensor, d: float | None = None):
    """Attend over orders with the profile as query.

    Returns the 1 x D_e context vector and the 1 x |I| weight row alpha.
    """
    if e_I.shape[0] == 0:
        raise InvalidArgumentError("itinerary must contain at least one order")
    return _bilinear_attention(e_P, w1, e_I, e_I.shape[1] if d is None else d)


def intention_vector(context: T.Tensor, e_P: T.Tensor) -> T.Tensor:
    return T.concat([context, e_P], axis=1)


def multi_head_self_attention(
    e_I: T.Tensor,
    w_query: T.Tensor,
    w_key: T.Tensor,
    w_value: T.Tensor,
    w_out: T.Tensor,
    return_weights: bool = False,
):
    """Self-attention among orders, heads concatenated, projected, then mean-pooled.

    Each head n computes softmax(Q_n K_n^T / sqrt(D_m/N)) V_n with
    Q_n = E W_n^Q etc.; head outputs are concatenated along the feature
    axis, multiplied by W^O and averaged over order positions to a single
    1 x D_m row.
    """
    n_heads, d_e, d_head = w_query.shape
    length = e_I.shape[0]
    if length == 0:
        raise InvalidArgumentError("itinerary must contain at least one order")
    if e_I.shape[1] != d_e:
        raise ConfigurationError(f"order embedding dim {e_I.shape[1]} != projection input dim {d_e}")
    d_model = n_heads * d_head
    if w_out.shape != (d_model, d_model):
        raise ConfigurationError(f"output projection must be {d_model}x{d_model}, got {w_out.shape}")
    q = T.matmul(e_I, w_query)
    k = T.matmul(e_I, w_key)
    v = T.matmul(e_I, w_value)
    weights = T.softmax(T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d_head)))
    heads = T.matmul(weights, v)  # N x L x d_head
    joined = T.reshape(T.permute(heads, (1, 0, 2)), (length, d_model))
    pooled = T.mean_rows(T.matmul(joined, w_out))
    if return_weights:
        return pooled, weights
    return pooled


def behavior_attention(v_c: T.Tensor, e_B: T.Tensor | None, w2: T.Tensor, d: float | None = None):
    """Attend over behaviour items with the itinerary-aware query ``v_c``.

    Returns the 1 x D_b vector and the weight row beta. An empty behaviour
    sequence yields a zero vector and ``None`` weights.
    """
    d_b = w2.shape[1]
    if e_B is None or e_B.shape[0] == 0:
        return T.constant(np.zeros((1, d_b))), None
    return _bilinear_attention(v_c, w2, e_B, d_b if d is None else d)


def mean_pool(values: T.Tensor | None, dim: int) -> T.Tensor:
    """Average pooling used when a mechanism is ablated; zero for an empty list."""
    if values is None or values.shape[0] == 0:
        return T.constant(np.zeros((1, dim)))
    return T.mean_rows(values)
