"""TCN gesture classifier, domain head, and the two-network fusion assembly.

The network is three (by default) blocks of dilated causal convolution,
per-session batch norm, leaky ReLU and dropout, then global average pooling
and a linear output layer.  A two-unit domain head attaches to the pooled
features through a gradient-reversal point for adversarial pre-training.

Backpropagation is written out by hand per model class: the architecture set
is closed, so every backward path is explicit and finite-difference checkable.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .kernel import ops
from .kernel.params import BnBank, Parameter


@dataclass(frozen=True)
class TcnConfig:
    in_channels: int = 10
    window_len: int = 150
    channels: tuple = (128, 128, 128)
    kernel_size: int = 3
    dropout: float = 0.5
    leaky_slope: float = 0.1
    num_gestures: int = 11
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels:
            raise ValueError("need at least one block")
        if self.kernel_size < 1 or self.in_channels < 1 or self.num_gestures < 2:
            raise ValueError("bad architecture sizes")

    @property
    def num_blocks(self):
        return len(self.channels)

    @property
    def dilations(self):
        """Dilation doubles per block: 2^i for block index i."""
        return tuple(2 ** i for i in range(self.num_blocks))

    @property
    def receptive_field(self):
        return 1 + (self.kernel_size - 1) * sum(self.dilations)

    def to_items(self):
        return {
            "in_channels": str(self.in_channels),
            "window_len": str(self.window_len),
            "channels": ",".join(str(c) for c in self.channels),
            "kernel_size": str(self.kernel_size),
            "dropout": repr(self.dropout),
            "leaky_slope": repr(self.leaky_slope),
            "num_gestures": str(self.num_gestures),
            "bn_momentum": repr(self.bn_momentum),
            "bn_eps": repr(self.bn_eps),
        }

    @classmethod
    def from_items(cls, items):
        return cls(
            in_channels=int(items["in_channels"]),
            window_len=int(items["window_len"]),
            channels=tuple(int(c) for c in items["channels"].split(",")),
            kernel_size=int(items["kernel_size"]),
            dropout=float(items["dropout"]),
            leaky_slope=float(items["leaky_slope"]),
            num_gestures=int(items["num_gestures"]),
            bn_momentum=float(items["bn_momentum"]),
            bn_eps=float(items["bn_eps"]),
        )


def parameter_count(config: TcnConfig) -> int:
    """Analytic learnable-parameter count of the classifier path.

    The domain head is excluded.  For uniform width C and kernel k this
    reduces to 2kC^2 + 10kC + 20C + 11 at the default input/output sizes.
    """
    total = 0
    cin = config.in_channels
    for c in config.channels:
        total += c * cin * config.kernel_size + c   # conv weight + bias
        total += 2 * c                              # bn gamma + beta
        cin = c
    total += cin * config.num_gestures + config.num_gestures
    return total


# The published reference architecture reports 104 788 learnable parameters;
# the closest uniform-width configuration (C=128, k=3) gives 104 715, a
# documented difference of 73.
DEFAULT_CONFIG = TcnConfig()


class TcnModel:
    """The gesture classifier with per-session BN banks and a domain head."""

    def __init__(self, config: TcnConfig, rng, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.banks = [dict() for _ in config.channels]
        cin = config.in_channels
        slope = config.leaky_slope
        for i, c in enumerate(config.channels, start=1):
            fan_in = cin * config.kernel_size
            gain = np.sqrt(2.0 / (1.0 + slope * slope))
            bound = gain * np.sqrt(3.0 / fan_in)
            self._add(
                f"block{i}.conv.weight",
                rng.uniform(-bound, bound, (c, cin, config.kernel_size)),
            )
            self._add(f"block{i}.conv.bias", np.zeros(c))
            self._add(f"block{i}.bn.gamma", np.ones(c))
            self._add(f"block{i}.bn.beta", np.zeros(c))
            cin = c
        bound = np.sqrt(1.0 / cin)
        self._add("head.weight", rng.uniform(-bound, bound, (cin, config.num_gestures)))
        self._add("head.bias", np.zeros(config.num_gestures))
        self._add("domain.weight", rng.uniform(-bound, bound, (cin, 2)))
        self._add("domain.bias", np.zeros(2))

    def _add(self, name, value):
        self.params[name] = Parameter(name, np.asarray(value, dtype=self.dtype))

    # -- banks --------------------------------------------------------------

    def ensure_bank(self, session_key):
        """Create fresh running statistics for a session on first exposure."""
        for i, bank_map in enumerate(self.banks):
            if session_key not in bank_map:
                bank_map[session_key] = BnBank.fresh(
                    self.config.channels[i], self.dtype
                )

    def _bank(self, block_index, session_key, training):
        bank_map = self.banks[block_index]
        if session_key not in bank_map:
            if not training:
                raise ValueError(f"unknown session bank {session_key!r}")
            self.ensure_bank(session_key)
        return bank_map[session_key]

    def session_keys(self):
        return sorted(self.banks[0])

    # -- forward / backward pieces -------------------------------------------

    def forward_block(self, i, x, session_key, training, update_stats, rng):
        """One block: conv -> BN(session bank) -> leaky ReLU -> dropout."""
        cfg = self.config
        name = f"block{i + 1}"
        conv_out, conv_cache = ops.conv1d_causal_forward(
            x,
            self.params[f"{name}.conv.weight"].value,
            self.params[f"{name}.conv.bias"].value,
            cfg.dilations[i],
        )
        bn_out, bn_cache = ops.batch_norm_forward(
            conv_out,
            self.params[f"{name}.bn.gamma"].value,
            self.params[f"{name}.bn.beta"].value,
            self._bank(i, session_key, training),
            training,
            update_stats=update_stats,
            momentum=cfg.bn_momentum,
            eps=cfg.bn_eps,
        )
        act_out, act_cache = ops.leaky_relu_forward(bn_out, cfg.leaky_slope)
        out, drop_cache = ops.dropout_forward(act_out, cfg.dropout, training, rng)
        return out, (conv_cache, bn_cache, act_cache, drop_cache)

    def backward_block(self, i, grad, block_cache):
        """Accumulate gradients for one block; returns grad w.r.t. its input."""
        conv_cache, bn_cache, act_cache, drop_cache = block_cache
        name = f"block{i + 1}"
        grad = ops.dropout_backward(grad, drop_cache)
        grad = ops.leaky_relu_backward(grad, act_cache)
        grad, dgamma, dbeta = ops.batch_norm_backward(grad, bn_cache)
        self.params[f"{name}.bn.gamma"].grad += dgamma
        self.params[f"{name}.bn.beta"].grad += dbeta
        grad, dw, db = ops.conv1d_causal_backward(grad, conv_cache)
        self.params[f"{name}.conv.weight"].grad += dw
        self.params[f"{name}.conv.bias"].grad += db
        return grad

    def forward_features(self, x, session_key, training=False,
                         update_stats=True, rng=None):
        """Blocks then global average pooling: [B, 10, T] -> [B, C]."""
        self._check_input(x)
        caches = []
        out = x
        for i in range(self.config.num_blocks):
            out, cache = self.forward_block(
                i, out, session_key, training, update_stats, rng
            )
            caches.append(cache)
        pooled, gap_cache = ops.global_avg_pool_forward(out)
        caches.append(gap_cache)
        return pooled, caches

    def backward_features(self, dpooled, caches):
        grad = ops.global_avg_pool_backward(dpooled, caches[-1])
        for i in range(self.config.num_blocks - 1, -1, -1):
            grad = self.backward_block(i, grad, caches[i])
        return grad

    def head_forward(self, pooled):
        return ops.linear_forward(
            pooled, self.params["head.weight"].value, self.params["head.bias"].value
        )

    def head_backward(self, dlogits, head_cache):
        dpooled, dw, db = ops.linear_backward(dlogits, head_cache)
        self.params["head.weight"].grad += dw
        self.params["head.bias"].grad += db
        return dpooled

    def domain_head_forward(self, pooled):
        reversed_in, _ = ops.gradient_reversal_forward(pooled)
        return ops.linear_forward(
            reversed_in,
            self.params["domain.weight"].value,
            self.params["domain.bias"].value,
        )

    def domain_head_backward(self, dlogits, head_cache, lam):
        """Backward through the domain head, then the reversal point."""
        dpooled, dw, db = ops.linear_backward(dlogits, head_cache)
        self.params["domain.weight"].grad += dw
        self.params["domain.bias"].grad += db
        return ops.gradient_reversal_backward(dpooled, lam)

    # -- whole-network passes -------------------------------------------------

    def forward_classify(self, x, session_key, training=False,
                         update_stats=True, rng=None):
        """Logits [B, num_gestures]; cache usable by backward_classify."""
        pooled, feat_caches = self.forward_features(
            x, session_key, training, update_stats, rng
        )
        logits, head_cache = self.head_forward(pooled)
        return logits, (feat_caches, head_cache)

    def backward_classify(self, dlogits, cache):
        feat_caches, head_cache = cache
        dpooled = self.head_backward(dlogits, head_cache)
        return self.backward_features(dpooled, feat_caches)

    def forward_domain(self, x, session_key, lam, training=True,
                       update_stats=False, rng=None):
        """Domain logits [B, 2]; the classification head is untouched."""
        pooled, feat_caches = self.forward_features(
            x, session_key, training, update_stats, rng
        )
        logits, head_cache = self.domain_head_forward(pooled)
        return logits, (feat_caches, head_cache, lam)

    def backward_domain(self, dlogits, cache):
        feat_caches, head_cache, lam = cache
        dpooled = self.domain_head_backward(dlogits, head_cache, lam)
        return self.backward_features(dpooled, feat_caches)

    def infer_logits(self, x, session_key):
        logits, _ = self.forward_classify(x, session_key, training=False)
        return logits

    def _check_input(self, x):
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.window_len:
            raise ValueError(
                f"expected input [B, {cfg.in_channels}, {cfg.window_len}], "
                f"got {x.shape}"
            )

    # -- bookkeeping ----------------------------------------------------------

    def classifier_params(self):
        return [p for n, p in self.params.items() if not n.startswith("domain.")]

    def parameter_count(self):
        """Enumerated size of the classifier path (domain head excluded)."""
        return sum(p.value.size for p in self.classifier_params())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def snapshot(self):
        """Deep copy of parameter values and banks (for best-epoch restore)."""
        return (
            {n: p.value.copy() for n, p in self.params.items()},
            [
                {k: bank.copy() for k, bank in bank_map.items()}
                for bank_map in self.banks
            ],
        )

    def restore(self, snap):
        values, banks = snap
        for n, v in values.items():
            self.params[n].value[...] = v
        self.banks = [
            {k: bank.copy() for k, bank in bank_map.items()} for bank_map in banks
        ]

    def clone(self):
        other = TcnModel.__new__(TcnModel)
        other.config = self.config
        other.dtype = self.dtype
        other.params = {
            n: Parameter(n, p.value.copy(), trainable=p.trainable)
            for n, p in self.params.items()
        }
        other.banks = [
            {k: bank.copy() for k, bank in bank_map.items()}
            for bank_map in self.banks
        ]
        return other


def predict(model, windows, **forward_kw):
    """Gesture labels by logit argmax; ties resolve to the lowest index."""
    logits = model.infer_logits(windows, **forward_kw)
    return np.argmax(logits, axis=1)


# ---------------------------------------------------------------------------
# TADANN fusion assembly
# ---------------------------------------------------------------------------

class TadannModel:
    """Frozen pre-trained network fused layer-wise into a fresh target.

    At every block boundary (and at the pooled features) the source
    activation, scaled by a learnable coefficient clamped to [0, 2], is
    summed elementwise into the target activation.  The target keeps its own
    output head; only the source's BN gamma/beta stay trainable on the
    source side.
    """

    def __init__(self, source: TcnModel, target: TcnModel, coeffs,
                 source_key, target_key="default"):
        self.source = source
        self.target = target
        self.coeffs = coeffs
        self.source_key = source_key
        self.target_key = target_key

    @property
    def config(self):
        return self.target.config

    def forward(self, x, training=False, update_stats=True, rng=None):
        cfg = self.config
        s = t = x
        s_caches, t_caches, s_acts = [], [], []
        for i in range(cfg.num_blocks):
            s, s_cache = self.source.forward_block(
                i, s, self.source_key, training, update_stats, rng
            )
            t_raw, t_cache = self.target.forward_block(
                i, t, self.target_key, training, update_stats, rng
            )
            t = t_raw + self.coeffs[i].value * s
            s_caches.append(s_cache)
            t_caches.append(t_cache)
            s_acts.append(s)
        s_pooled, s_gap = ops.global_avg_pool_forward(s)
        t_pooled_raw, t_gap = ops.global_avg_pool_forward(t)
        t_pooled = t_pooled_raw + self.coeffs[-1].value * s_pooled
        logits, head_cache = self.target.head_forward(t_pooled)
        cache = (s_caches, t_caches, s_acts, s_pooled, s_gap, t_gap, head_cache)
        return logits, cache

    def backward(self, dlogits, cache):
        s_caches, t_caches, s_acts, s_pooled, s_gap, t_gap, head_cache = cache
        n = self.config.num_blocks
        dt_pooled = self.target.head_backward(dlogits, head_cache)
        self.coeffs[-1].grad += (dt_pooled * s_pooled).sum()
        # source pooled features feed only the fused pool
        ds = ops.global_avg_pool_backward(
            self.coeffs[-1].value * dt_pooled, s_gap
        )
        dt = ops.global_avg_pool_backward(dt_pooled, t_gap)
        for i in range(n - 1, -1, -1):
            # dt is the gradient at the fused output of block i
            self.coeffs[i].grad += (dt * s_acts[i]).sum()
            ds = ds + self.coeffs[i].value * dt
            dt = self.target.backward_block(i, dt, t_caches[i])
            ds = self.source.backward_block(i, ds, s_caches[i])
        return dt + ds

    def infer_logits(self, x):
        logits, _ = self.forward(x, training=False)
        return logits

    def trainable_params(self):
        out = [p for p in self.target.params.values() if p.trainable]
        out += [p for p in self.source.params.values() if p.trainable]
        out += list(self.coeffs)
        return out

    def zero_grad(self):
        self.source.zero_grad()
        self.target.zero_grad()
        for c in self.coeffs:
            c.zero_grad()

    def clamp_coefficients(self):
        for c in self.coeffs:
            c.value[...] = ops.clamp_coefficient(c.value)

    def snapshot(self):
        return (
            self.source.snapshot(),
            self.target.snapshot(),
            [c.value.copy() for c in self.coeffs],
        )

    def restore(self, snap):
        s_snap, t_snap, coeff_values = snap
        self.source.restore(s_snap)
        self.target.restore(t_snap)
        for c, v in zip(self.coeffs, coeff_values):
            c.value[...] = v


SOURCE_FROZEN_PREFIXES = ("block", "head.", "domain.")


def _is_source_trainable(name):
    # only BN gamma/beta adapt on the frozen source side
    return ".bn.gamma" in name or ".bn.beta" in name


def build_tadann(source: TcnModel, calibration_key, config: TcnConfig = None,
                 rng=None, target_key="default") -> TadannModel:
    """Assemble the fusion model around a pre-trained source network.

    The source is copied, frozen apart from BN gamma/beta, and given a fresh
    BN bank for the calibration session; the target is a freshly initialized
    network of the identical architecture.  Fusion coefficients start at 1.
    """
    if config is not None and config != source.config:
        raise ValueError(
            f"architecture mismatch: source {source.config}, requested {config}"
        )
    if rng is None:
        raise ValueError("build_tadann needs an rng for target initialization")
    frozen = source.clone()
    for name, p in frozen.params.items():
        p.trainable = _is_source_trainable(name)
    frozen.ensure_bank(calibration_key)
    target = TcnModel(source.config, rng, dtype=source.dtype)
    target.ensure_bank(target_key)
    coeffs = [
        Parameter(f"fusion.coeff{i}", np.asarray(1.0, dtype=source.dtype))
        for i in range(source.config.num_blocks + 1)
    ]
    return TadannModel(frozen, target, coeffs, calibration_key, target_key)
