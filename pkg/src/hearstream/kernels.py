"""Deterministic numpy kernels for causal neural inference.

Layout conventions (fixed; the weight container relies on them):
  * 2-D feature maps are [C, T, F] (channels, frames, frequency bins);
  * 1-D sequences are [L, C] (steps, channels);
  * conv kernels are [C_out, C_in, K_t, K_f] / [C_out, C_in, K],
    transposed-conv kernels are [C_in, C_out, K];
  * LSTM gate order is (i, f, g, o): sigmoid input/forget/output gates,
    tanh cell candidate and output squash.

Everything is float32 with float64 accumulation inside statistical
reductions (means, variances, softmax). All functions are pure; causality
claims (conv causal-time padding, forward LSTM, masked attention) hold as
exact equality, not approximately.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "conv1d",
    "conv2d",
    "conv_transpose1d",
    "conv_transpose2d",
    "film",
    "layer_norm",
    "linear",
    "lstm_forward",
    "masked_attention",
    "prelu",
    "sigmoid",
    "unfold1d",
]


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def prelu(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """max(0, x) + alpha * min(0, x); alpha broadcasts against axis 0."""
    alpha = np.asarray(alpha, dtype=x.dtype)
    if alpha.ndim == 1 and x.ndim > 1:
        alpha = alpha.reshape((-1,) + (1,) * (x.ndim - 1))
    return np.where(x >= 0, x, alpha * x)


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """x[..., D_in] @ weight[D_out, D_in].T + bias."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight fan-in {weight.shape[1]}")
    y = x @ weight.T
    return y if bias is None else y + bias


# -- convolution -------------------------------------------------------------


def _corr2d_valid(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of x[C_in, T, F] with kernel[C_out, C_in, Kt, Kf]."""
    c_out, c_in, kt, kf = kernel.shape
    view = np.lib.stride_tricks.sliding_window_view(x, (kt, kf), axis=(1, 2))
    t_out, f_out = view.shape[1], view.shape[2]
    cols = view.transpose(1, 2, 0, 3, 4).reshape(t_out * f_out, c_in * kt * kf)
    flat = cols @ kernel.reshape(c_out, c_in * kt * kf).T
    return flat.reshape(t_out, f_out, c_out).transpose(2, 0, 1)


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    *,
    stride: tuple[int, int] = (1, 1),
    causal_time: bool = True,
) -> np.ndarray:
    """2-D cross-correlation over [C_in, T, F] maps.

    Time padding is applied entirely on the past side when ``causal_time``
    (output frame t sees frames <= t only), symmetrically otherwise.
    Frequency padding is always 'same'. With stride (st, sf) the stride-1
    output is subsampled, giving ceil(T/st) x ceil(F/sf).
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3 or kernel.ndim != 4 or x.shape[0] != kernel.shape[1]:
        raise ValueError(
            f"conv2d: incompatible shapes, input {x.shape} vs kernel {kernel.shape}"
        )
    _, _, kt, kf = kernel.shape
    if causal_time:
        pad_t = (kt - 1, 0)
    else:
        pad_t = ((kt - 1) // 2, kt // 2)
    pad_f = ((kf - 1) // 2, kf // 2)
    xp = np.pad(x, ((0, 0), pad_t, pad_f))
    y = _corr2d_valid(xp, np.asarray(kernel, dtype=np.float32))
    st, sf = stride
    y = y[:, ::st, ::sf]
    if bias is not None:
        y = y + np.asarray(bias, dtype=np.float32)[:, None, None]
    return y


def conv_transpose2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    *,
    causal_time: bool = True,
) -> np.ndarray:
    """Stride-1 transposed 2-D convolution back to the input (T, F) extent.

    Equivalent to full-padded correlation with the axis-flipped kernel.
    The full output is cropped to keep frame t a function of inputs <= t
    (head crop) and frequency centered. Kernel layout [C_in, C_out, Kt, Kf].
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3 or kernel.ndim != 4 or x.shape[0] != kernel.shape[0]:
        raise ValueError(
            f"conv_transpose2d: incompatible shapes, input {x.shape} vs kernel {kernel.shape}"
        )
    c_in, c_out, kt, kf = kernel.shape
    flipped = np.asarray(kernel, dtype=np.float32).transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    xp = np.pad(x, ((0, 0), (kt - 1, kt - 1), (kf - 1, kf - 1)))
    y = _corr2d_valid(xp, np.ascontiguousarray(flipped))
    _, t_in, f_in = x.shape
    t0 = 0 if causal_time else (kt - 1) // 2
    f0 = (kf - 1) // 2
    y = y[:, t0 : t0 + t_in, f0 : f0 + f_in]
    if bias is not None:
        y = y + np.asarray(bias, dtype=np.float32)[:, None, None]
    return y


def conv1d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    *,
    dilation: int = 1,
    groups: int = 1,
) -> np.ndarray:
    """'Same'-padded dilated 1-D convolution over [C_in, L] sequences.

    ``groups == C_in == C_out`` gives a depthwise convolution (kernel
    [C, 1, K]); only groups 1 or C_in are supported.
    """
    x = np.asarray(x, dtype=np.float32)
    kernel = np.asarray(kernel, dtype=np.float32)
    c_out, ck, k = kernel.shape
    span = (k - 1) * dilation
    xp = np.pad(x, ((0, 0), (span - span // 2, span // 2)))
    view = np.lib.stride_tricks.sliding_window_view(xp, span + 1, axis=1)[:, :, ::dilation]
    if groups == 1:
        if ck != x.shape[0]:
            raise ValueError(f"conv1d: kernel fan-in {ck} != input channels {x.shape[0]}")
        y = np.einsum("clk,ock->ol", view, kernel, optimize=True)
    elif groups == x.shape[0] and c_out == x.shape[0] and ck == 1:
        y = np.einsum("clk,ck->cl", view, kernel[:, 0, :], optimize=True)
    else:
        raise ValueError("conv1d: groups must be 1 or equal to the channel count")
    if bias is not None:
        y = y + np.asarray(bias, dtype=np.float32)[:, None]
    return y.astype(np.float32)


def conv_transpose1d(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None, *, stride: int = 1
) -> np.ndarray:
    """Transposed 1-D convolution of x[L, C_in] with kernel[C_in, C_out, K].

    Returns the full output of length (L - 1) * stride + K; callers crop.
    out[o] sums x[i] * kernel[:, :, o - i*stride], so out[o] depends only on
    inputs at positions i <= o when stride == 1 (head crop keeps causality).
    A leading batch axis is accepted: x[N, L, C_in] -> [N, L_out, C_out].
    """
    x = np.asarray(x, dtype=np.float32)
    c_in, c_out, k = kernel.shape
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != c_in:
        raise ValueError(f"conv_transpose1d: input {x.shape} vs kernel {kernel.shape}")
    n, length = x.shape[0], x.shape[1]
    y = x.reshape(n * length, c_in) @ np.asarray(kernel, dtype=np.float32).reshape(
        c_in, c_out * k
    )
    y = y.reshape(n, length, c_out, k)
    out = np.zeros((n, (length - 1) * stride + k, c_out), dtype=np.float32)
    for tap in range(k):
        out[:, tap : tap + (length - 1) * stride + 1 : stride] += y[:, :, :, tap]
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float32)
    return out[0] if squeeze else out


def unfold1d(x: np.ndarray, kernel: int, *, causal: bool) -> np.ndarray:
    """Concatenate sliding windows of x[L, D] into [L', kernel * D] features.

    Causal: zero-pad kernel-1 steps of history, window t holds steps
    [t-kernel+1 .. t] (L' == L). Non-causal: no padding, window j holds
    steps [j .. j+kernel-1] (L' == L - kernel + 1). Windows are flattened
    oldest step first.
    """
    if kernel < 1:
        raise ValueError("unfold1d: kernel must be >= 1")
    x = np.asarray(x)
    if causal:
        x = np.concatenate([np.zeros((kernel - 1,) + x.shape[1:], dtype=x.dtype), x])
    elif x.shape[0] < kernel:
        raise ValueError(f"unfold1d: sequence of {x.shape[0]} shorter than kernel {kernel}")
    view = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=0)
    return np.ascontiguousarray(view.transpose(0, 2, 1)).reshape(view.shape[0], -1)


# -- normalization and modulation --------------------------------------------


def layer_norm(
    x: np.ndarray,
    axes: tuple[int, ...],
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-5,
) -> np.ndarray:
    """Zero-mean/unit-variance over ``axes`` (float64 statistics), then affine.

    gamma and beta must broadcast against x (e.g. shape [D, 1, 1] for
    per-channel affine over a [D, T, F] map).
    """
    if any(x.shape[a] == 0 for a in axes):
        raise ValueError("layer_norm: cannot normalize over a zero-size axis")
    x64 = np.asarray(x, dtype=np.float64)
    mu = x64.mean(axis=axes, keepdims=True)
    var = x64.var(axis=axes, keepdims=True)
    y = (x64 - mu) / np.sqrt(var + eps)
    return (np.asarray(gamma) * y.astype(np.float32) + np.asarray(beta)).astype(np.float32)


def film(
    x: np.ndarray,
    embedding: np.ndarray,
    w_gamma: np.ndarray,
    b_gamma: np.ndarray,
    w_beta: np.ndarray,
    b_beta: np.ndarray,
) -> np.ndarray:
    """Feature-wise linear modulation of x[D, T, F] by a conditioning vector."""
    embedding = np.asarray(embedding, dtype=np.float32)
    if embedding.ndim != 1 or w_gamma.shape[1] != embedding.shape[0]:
        raise ValueError(
            f"film: embedding length {embedding.shape} does not match projection "
            f"fan-in {w_gamma.shape[1]}"
        )
    gamma = linear(embedding, w_gamma, b_gamma)
    beta = linear(embedding, w_beta, b_beta)
    return (gamma[:, None, None] * x + beta[:, None, None]).astype(np.float32)


# -- recurrent and attention layers ------------------------------------------


def lstm_forward(
    x: np.ndarray,
    w: np.ndarray,
    r: np.ndarray,
    b: np.ndarray,
    *,
    reverse: bool = False,
    state: tuple[np.ndarray, np.ndarray] | None = None,
    return_state: bool = False,
):
    """LSTM over x[T, D_in] or a batch x[N, T, D_in]; returns [.., T, H].

    Weights: w[4H, D_in] input projection, r[4H, H] recurrence, b[4H] bias,
    gates packed (i, f, g, o). ``reverse`` runs right-to-left (output stays

    in input order). ``state`` carries (h, c) between calls for streaming.
    """
    squeeze = x.ndim == 2
    x = np.asarray(x, dtype=np.float32)
    if squeeze:
        x = x[None]
    n, t_len, d_in = x.shape
    four_h, h_size = r.shape
    if w.shape != (four_h, d_in) or four_h != 4 * h_size or b.shape != (four_h,):
        raise ValueError(
            f"lstm_forward: inconsistent weights w{w.shape} r{r.shape} b{b.shape} "
            f"for input dim {d_in}"
        )
    if state is None:
        h = np.zeros((n, h_size), dtype=np.float32)
        c = np.zeros((n, h_size), dtype=np.float32)
    else:
        h, c = (np.asarray(s, dtype=np.float32) for s in state)

    xw = x.reshape(n * t_len, d_in) @ w.T + b
    xw = xw.reshape(n, t_len, four_h)
    rt = np.ascontiguousarray(r.T)
    out = np.empty((n, t_len, h_size), dtype=np.float32)
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t in steps:
        gates = xw[:, t] + h @ rt
        i = sigmoid(gates[:, :h_size])
        f = sigmoid(gates[:, h_size : 2 * h_size])
        g = np.tanh(gates[:, 2 * h_size : 3 * h_size])
        o = sigmoid(gates[:, 3 * h_size :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[:, t] = h
    if squeeze:
        out = out[0]
        h, c = h[0], c[0]
    return (out, (h, c)) if return_state else out


def masked_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    *,
    heads: int = 1,
    causal: bool = True,
    return_weights: bool = False,
):
    """Scaled dot-product attention over time with optional causal masking.

    q, k: [T, heads * E]; v: [T, heads * Dv]. Per head: softmax(Q Kᵀ / sqrt(E)) V,
    with key indices greater than the query index masked out when causal.
    Softmax runs in float64 with max subtraction. Returns [T, heads * Dv].
    """
    q, k, v = (np.asarray(a, dtype=np.float32) for a in (q, k, v))
    for name, a in (("q", q), ("k", k), ("v", v)):
        if np.isnan(a).any():
            raise ValueError(f"masked_attention: NaN in {name}")
    t_q, dq = q.shape
    t_k = k.shape[0]
    if dq % heads or v.shape[1] % heads or k.shape != (t_k, dq):
        raise ValueError("masked_attention: dims must divide evenly into heads")
    e = dq // heads
    dv = v.shape[1] // heads
    qh = q.reshape(t_q, heads, e).transpose(1, 0, 2)
    kh = k.reshape(t_k, heads, e).transpose(1, 0, 2)
    vh = v.reshape(t_k, heads, dv).transpose(1, 0, 2)

    scores = (qh @ kh.transpose(0, 2, 1)).astype(np.float64) / np.sqrt(e)
    if causal:
        # key strictly in the future of the query gets zero weight
        future = np.arange(t_k)[None, :] > np.arange(t_q)[:, None] + (t_k - t_q)
        scores[:, future] = -np.inf
    scores -= scores.max(axis=2, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=2, keepdims=True)
    out = (weights @ vh.astype(np.float64)).astype(np.float32)
    out = out.transpose(1, 0, 2).reshape(t_q, heads * dv)
    if return_weights:
        return out, weights
    return out
