"""Forward/backward pairs for the closed set of network operations.

Every differentiable op is a pair: ``*_forward`` returns ``(output, cache)``
and ``*_backward`` consumes ``(grad_output, cache)``.  There is no tape; the
model layer composes these by hand, which keeps the surface small and every
gradient directly checkable against finite differences.

Convolutions dispatch to the selected backend (compiled extension or numpy
fallback); everything else is plain numpy.
"""

import numpy as np

from . import backend
from .faults import maybe_check_finite


# ---------------------------------------------------------------------------
# dilated causal convolution
# ---------------------------------------------------------------------------

def conv1d_causal_forward(x, weight, bias, dilation):
    """Dilated causal conv1d.

    x: [B, Cin, T]; weight: [Cout, Cin, k]; bias: [Cout].  The input is
    left-padded by (k - 1) * dilation zeros so the output keeps length T and
    output[t] depends only on input[<= t].
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError("conv1d expects x [B,Cin,T] and weight [Cout,Cin,k]")
    b, cin, t = x.shape
    cout, cin_w, k = weight.shape
    if cin_w != cin:
        raise ValueError(f"conv1d channel mismatch: input {cin}, weight {cin_w}")
    if bias.shape != (cout,):
        raise ValueError(f"conv1d bias shape {bias.shape}, expected ({cout},)")
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    pad = (k - 1) * dilation
    xp = np.ascontiguousarray(np.pad(x, ((0, 0), (0, 0), (pad, 0))))
    w = np.ascontiguousarray(weight)
    out = backend.active_impl.conv1d_forward(
        xp, w, np.ascontiguousarray(bias), dilation, t
    )
    maybe_check_finite(out, "conv1d_causal_forward")
    return out, (xp, w, dilation, k, pad)


def conv1d_causal_backward(grad_out, cache):
    """Gradients (dx, dweight, dbias) for conv1d_causal_forward."""
    xp, weight, dilation, k, pad = cache
    impl = backend.active_impl
    g = np.ascontiguousarray(grad_out)
    dw, db = impl.conv1d_backward_weight(xp, g, dilation, k)
    dxp = impl.conv1d_backward_input(weight, g, dilation, xp.shape[2])
    dx = dxp[:, :, pad:] if pad else dxp
    return np.ascontiguousarray(dx), dw, db


# ---------------------------------------------------------------------------
# batch normalization with per-session statistic banks
# ---------------------------------------------------------------------------

def batch_norm_forward(x, gamma, beta, bank, training, update_stats=True,
                       momentum=0.1, eps=1e-5):
    """Channel-wise batch norm over [B, C, T].

    ``bank`` is the running-statistics pair for the session the batch came
    from.  Training mode normalizes by batch statistics and, when
    ``update_stats`` is set, folds them into the bank by exponential moving
    average; inference mode normalizes by the bank.
    """
    if x.ndim != 3:
        raise ValueError("batch_norm expects [B, C, T]")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError("gamma/beta must be shaped [C]")
    if training:
        mu = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu[None, :, None]) * inv[None, :, None]
        if update_stats:
            bank.mean += momentum * (mu - bank.mean)
            bank.var += momentum * (var - bank.var)
        cache = (xhat, inv, gamma, True)
    else:
        inv = 1.0 / np.sqrt(bank.var + eps)
        xhat = (x - bank.mean[None, :, None]) * inv[None, :, None]
        cache = (xhat, inv, gamma, False)
    out = gamma[None, :, None] * xhat + beta[None, :, None]
    maybe_check_finite(out, "batch_norm_forward")
    return out, cache


def batch_norm_backward(grad_out, cache):
    """Gradients (dx, dgamma, dbeta) for batch_norm_forward."""
    xhat, inv, gamma, was_training = cache
    dgamma = (grad_out * xhat).sum(axis=(0, 2))
    dbeta = grad_out.sum(axis=(0, 2))
    dxhat = grad_out * gamma[None, :, None]
    if was_training:
        # batch statistics were functions of x; the full derivative applies
        n = xhat.shape[0] * xhat.shape[2]
        s1 = dxhat.sum(axis=(0, 2))[None, :, None]
        s2 = (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
        dx = (inv[None, :, None] / n) * (n * dxhat - s1 - xhat * s2)
    else:
        dx = dxhat * inv[None, :, None]
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# elementwise / pooling / linear
# ---------------------------------------------------------------------------

def leaky_relu_forward(x, slope):
    pos = x >= 0
    out = np.where(pos, x, slope * x)
    maybe_check_finite(out, "leaky_relu_forward")
    return out, (pos, slope)


def leaky_relu_backward(grad_out, cache):
    pos, slope = cache
    return np.where(pos, grad_out, slope * grad_out)


def dropout_forward(x, rate, training, rng=None):
    """Inverted dropout: active only in training mode; identity otherwise."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    scale = x.dtype.type(1.0 / (1.0 - rate))
    out = x * keep * scale
    return out, (keep, scale)


def dropout_backward(grad_out, cache):
    if cache is None:
        return grad_out
    keep, scale = cache
    return grad_out * keep * scale


def global_avg_pool_forward(x):
    """[B, C, T] -> [B, C], mean over time."""
    if x.ndim != 3:
        raise ValueError("global_avg_pool expects [B, C, T]")
    out = x.mean(axis=2)
    maybe_check_finite(out, "global_avg_pool_forward")
    return out, (x.shape[2], x.dtype)


def global_avg_pool_backward(grad_out, cache):
    t, dtype = cache
    return np.repeat(grad_out[:, :, None], t, axis=2) / dtype.type(t)


def linear_forward(x, weight, bias):
    """x [B, In] @ weight [In, Out] + bias [Out]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(
            f"linear shape mismatch: x {x.shape}, weight {weight.shape}"
        )
    out = x @ weight + bias
    maybe_check_finite(out, "linear_forward")
    return out, (x, weight)


def linear_backward(grad_out, cache):
    x, weight = cache
    dx = grad_out @ weight.T
    dw = x.T @ grad_out
    db = grad_out.sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# loss, gradient reversal, projection
# ---------------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch; returns (loss, dlogits)."""
    if logits.ndim != 2:
        raise ValueError("logits must be [B, K]")
    b, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape}, expected ({b},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -logp[np.arange(b), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    maybe_check_finite(dlogits, "softmax_cross_entropy")
    return float(loss), dlogits.astype(logits.dtype)


def gradient_reversal_forward(x):
    """Identity; pair with gradient_reversal_backward(-lam * grad)."""
    return x, None


def gradient_reversal_backward(grad_out, lam):
    return -lam * grad_out


def clamp_coefficient(value, lo=0.0, hi=2.0):
    """Projection onto [lo, hi]; applied to fusion coefficients after updates."""
    return np.clip(value, lo, hi)
