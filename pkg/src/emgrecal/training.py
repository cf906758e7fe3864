"""Training loops and the long-term calibration schemes.

Supervised training holds out a stratified validation split, anneals the
learning rate (/5 after 5 non-improving epochs), stops after 10, and
restores the best-validation weights.  Adversarial pre-training treats each
pre-calibration session as a labeled domain; the calibration schemes
orchestrate these loops across a participant's ordered sessions.

All randomness flows from explicit seeds through named SeedSequence spawns,
so a full scheme run is a pure function of (plan, scheme, spec, seed).
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import datasets as ds
from .evaluation import accuracy
from .kernel import Adam, check_finite, softmax_cross_entropy
from .model import TadannModel, TcnModel, build_tadann, predict


@dataclass(frozen=True)
class TrainSpec:
    lr: float = 0.002233
    batch_size: int = 512
    val_fraction: float = 0.10
    early_stop_patience: int = 10
    anneal_factor: float = 5.0
    anneal_patience: int = 5
    max_epochs: int = 500
    domain_loss_weight: float = 1.0
    grl_lambda: float = 1.0
    seed: int = 0

    def validate(self):
        if not 0 < self.val_fraction < 1:
            raise ValueError("validation fraction must be in (0, 1)")
        if self.early_stop_patience < 1 or self.anneal_patience < 1:
            raise ValueError("patiences must be >= 1")
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("bad training spec")

    def to_items(self):
        return {
            name: ds.fmt_value(getattr(self, name))
            for name in self.__dataclass_fields__
        }

    @classmethod
    def from_items(cls, items):
        kwargs = {}
        for name, f in cls.__dataclass_fields__.items():
            if name in items:
                kwargs[name] = f.type(items[name])
        return cls(**kwargs)


class CalibrationScheme(str, Enum):
    NO_CALIBRATION = "no_calibration"
    RECALIBRATION = "recalibration"
    DELAYED_CALIBRATION = "delayed_calibration"
    TADANN = "tadann"


@dataclass
class SessionPlan:
    """One participant's ordered sessions and the cycle protocol."""

    sessions: list
    train_cycles: tuple = (1, 3)
    test_cycle: int = 4

    def validate(self):
        indices = [s.session_index for s in self.sessions]
        if not indices or indices != sorted(set(indices)):
            raise ValueError(f"session indices must increase: {indices}")
        if 2 in self.train_cycles or self.test_cycle == 2:
            raise ValueError("cycle 2 (maximal intensity) is excluded by protocol")

    @property
    def participant(self):
        return self.sessions[0].participant


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    anneal_epochs: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1

    def to_lines(self):
        lines = []
        for e, (tl, vl, lr) in enumerate(
            zip(self.train_loss, self.val_loss, self.lr)
        ):
            lines.append(
                f"epoch={e} train_loss={ds.fmt_value(tl)} "
                f"val_loss={ds.fmt_value(vl)} lr={ds.fmt_value(lr)}"
            )
        lines.append(f"best_epoch={self.best_epoch}")
        lines.append(f"stopped_epoch={self.stopped_epoch}")
        lines.append(
            "anneal_epochs=" + ",".join(str(e) for e in self.anneal_epochs)
        )
        return lines


def stratified_split(labels, fraction, rng):
    """Per-class split; returns (train_idx, val_idx), both shuffled."""
    labels = np.asarray(labels)
    train_parts, val_parts = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = rng.permutation(idx)
        n_val = int(round(idx.size * fraction))
        n_val = min(n_val, idx.size - 1)
        val_parts.append(idx[:n_val])
        train_parts.append(idx[n_val:])
        if idx.size - n_val == 0:
            raise ValueError(f"class {cls} empty in training split")
    train_idx = rng.permutation(np.concatenate(train_parts))
    val_idx = np.sort(np.concatenate(val_parts)) if val_parts else np.array([], int)
    return train_idx, val_idx


class _EarlyStopper:
    """Patience bookkeeping for annealing and stopping, plus best snapshots."""

    def __init__(self, spec, optimizer, snapshot_fn, restore_fn):
        self.spec = spec
        self.optimizer = optimizer
        self.snapshot_fn = snapshot_fn
        self.restore_fn = restore_fn
        self.best_val = math.inf
        self.best_snap = None
        self.best_epoch = -1
        self.since_best = 0
        self.since_anneal = 0

    def observe(self, epoch, val_loss, history):
        """Returns True when training should stop."""
        if val_loss < self.best_val:
            self.best_val = val_loss
            self.best_snap = self.snapshot_fn()
            self.best_epoch = epoch
            self.since_best = 0
            self.since_anneal = 0
        else:
            self.since_best += 1
            self.since_anneal += 1
        if self.since_best >= self.spec.early_stop_patience:
            return True
        if self.since_anneal >= self.spec.anneal_patience:
            self.optimizer.lr /= self.spec.anneal_factor
            self.since_anneal = 0
            history.anneal_epochs.append(epoch)
        return False

    def finish(self, epoch, history):
        history.best_epoch = self.best_epoch
        history.stopped_epoch = epoch
        if self.best_snap is not None:
            self.restore_fn(self.best_snap)


def _batches(order, batch_size):
    for start in range(0, order.size, batch_size):
        yield order[start:start + batch_size]


def _eval_loss(forward_fn, x, y, batch_size):
    total, count = 0.0, 0
    for start in range(0, len(y), batch_size):
        xb = x[start:start + batch_size]
        yb = y[start:start + batch_size]
        logits = forward_fn(xb)
        loss, _ = softmax_cross_entropy(logits, yb)
        total += loss * len(yb)
        count += len(yb)
    return total / count


def train_supervised(model: TcnModel, x, y, spec: TrainSpec,
                     session_key="default", trace=None,
                     step_callback=None) -> TrainHistory:
    """Standard supervised training with annealing and early stopping."""
    spec.validate()
    split_rng, shuffle_rng, dropout_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(3)
    ]
    train_idx, val_idx = stratified_split(y, spec.val_fraction, split_rng)
    model.ensure_bank(session_key)
    optimizer = Adam(model.params.values(), lr=spec.lr)
    history = TrainHistory()
    stopper = _EarlyStopper(spec, optimizer, model.snapshot, model.restore)
    epoch = -1
    for epoch in range(spec.max_epochs):
        order = shuffle_rng.permutation(train_idx)
        epoch_loss, seen = 0.0, 0
        for batch in _batches(order, spec.batch_size):
            if trace is not None:
                trace.append(batch)
            model.zero_grad()
            logits, cache = model.forward_classify(
                x[batch], session_key, training=True, rng=dropout_rng
            )
            loss, dlogits = softmax_cross_entropy(logits, y[batch])
            check_finite(np.asarray(loss), "training loss")
            model.backward_classify(dlogits, cache)
            optimizer.step()
            if step_callback is not None:
                step_callback(model)
            epoch_loss += loss * batch.size
            seen += batch.size
        val_loss = _eval_loss(
            lambda xb: model.infer_logits(xb, session_key),
            x[val_idx], y[val_idx], spec.batch_size,
        )
        history.train_loss.append(epoch_loss / seen)
        history.val_loss.append(val_loss)
        history.lr.append(optimizer.lr)
        if stopper.observe(epoch, val_loss, history):
            break
    stopper.finish(epoch, history)
    return history


# ---------------------------------------------------------------------------
# adversarial multi-domain pre-training
# ---------------------------------------------------------------------------

class _SessionCursor:
    """Cyclic shuffled batch iterator over one session's training indices."""

    def __init__(self, indices, rng):
        self.indices = np.asarray(indices)
        self.rng = rng
        self.order = rng.permutation(self.indices)
        self.pos = 0

    def take(self, n):
        out = []
        while n > 0:
            if self.pos >= self.order.size:
                self.order = self.rng.permutation(self.indices)
                self.pos = 0
            chunk = self.order[self.pos:self.pos + n]
            out.append(chunk)
            self.pos += chunk.size
            n -= chunk.size
        return np.concatenate(out)


def adann_pretrain(model: TcnModel, session_data, spec: TrainSpec,
                   step_audit=None) -> TrainHistory:
    """Adversarial pre-training over >= 2 sessions.

    ``session_data`` maps session key -> (x, y).  Each step draws a source
    batch from one random session (domain label 0, classification loss,
    BN-bank update) and a target batch from a different one (domain label 1,
    no bank update); the domain loss reaches the feature extractor through
    gradient reversal.
    """
    spec.validate()
    keys = sorted(session_data)
    if len(keys) < 2:
        raise ValueError("adversarial pre-training needs at least two sessions")
    streams = np.random.SeedSequence(spec.seed).spawn(4 + len(keys))
    split_rng, pick_rng, dropout_rng, target_rng = (
        np.random.default_rng(s) for s in streams[:4]
    )
    cursors, val_x, val_y, val_keys, total_train = {}, [], [], [], 0
    for key, stream in zip(keys, streams[4:]):
        x, y = session_data[key]
        train_idx, val_idx = stratified_split(y, spec.val_fraction, split_rng)
        cursors[key] = (_SessionCursor(train_idx, np.random.default_rng(stream)), x, y)
        val_x.append(x[val_idx])
        val_y.append(y[val_idx])
        val_keys.extend([key] * val_idx.size)
        total_train += train_idx.size
        model.ensure_bank(key)
    val_x = np.concatenate(val_x)
    val_y = np.concatenate(val_y)
    val_keys = np.asarray(val_keys)
    steps_per_epoch = max(1, math.ceil(total_train / spec.batch_size))
    optimizer = Adam(model.params.values(), lr=spec.lr)
    history = TrainHistory()
    stopper = _EarlyStopper(spec, optimizer, model.snapshot, model.restore)
    lam = spec.grl_lambda
    w_dom = spec.domain_loss_weight
    epoch = -1
    for epoch in range(spec.max_epochs):
        epoch_loss, seen = 0.0, 0
        for _ in range(steps_per_epoch):
            s_key = keys[pick_rng.integers(len(keys))]
            others = [k for k in keys if k != s_key]
            t_key = others[pick_rng.integers(len(others))]
            cursor, xs_all, ys_all = cursors[s_key]
            src = cursor.take(min(spec.batch_size, cursor.indices.size))
            _, xt_all, _ = cursors[t_key]
            tgt = target_rng.integers(xt_all.shape[0], size=src.size)
            model.zero_grad()
            pooled_s, caches_s = model.forward_features(
                xs_all[src], s_key, training=True, update_stats=True,
                rng=dropout_rng,
            )
            cls_logits, cls_cache = model.head_forward(pooled_s)
            dom_logits_s, dom_cache_s = model.domain_head_forward(pooled_s)
            pooled_t, caches_t = model.forward_features(
                xt_all[tgt], t_key, training=True, update_stats=False,
                rng=dropout_rng,
            )
            dom_logits_t, dom_cache_t = model.domain_head_forward(pooled_t)
            cls_loss, dcls = softmax_cross_entropy(cls_logits, ys_all[src])
            dom_s_loss, ddom_s = softmax_cross_entropy(
                dom_logits_s, np.zeros(src.size, dtype=np.int64)
            )
            dom_t_loss, ddom_t = softmax_cross_entropy(
                dom_logits_t, np.ones(tgt.size, dtype=np.int64)
            )
            loss = cls_loss + w_dom * 0.5 * (dom_s_loss + dom_t_loss)
            check_finite(np.asarray(loss), "pre-training loss")
            dpool_s = model.head_backward(dcls, cls_cache)
            dpool_s = dpool_s + model.domain_head_backward(
                (w_dom * 0.5) * ddom_s, dom_cache_s, lam
            )
            model.backward_features(dpool_s, caches_s)
            dpool_t = model.domain_head_backward(
                (w_dom * 0.5) * ddom_t, dom_cache_t, lam
            )
            model.backward_features(dpool_t, caches_t)
            optimizer.step()
            if step_audit is not None:
                step_audit.append(
                    dict(source=s_key, target=t_key,
                         source_domain_label=0, target_domain_label=1)
                )
            epoch_loss += loss * src.size
            seen += src.size
        val_loss = _multi_bank_val_loss(model, val_x, val_y, val_keys, spec)
        history.train_loss.append(epoch_loss / seen)
        history.val_loss.append(val_loss)
        history.lr.append(optimizer.lr)
        if stopper.observe(epoch, val_loss, history):
            break
    stopper.finish(epoch, history)
    return history


def _multi_bank_val_loss(model, val_x, val_y, val_keys, spec):
    total, count = 0.0, 0
    for key in np.unique(val_keys):
        mask = val_keys == key
        loss = _eval_loss(
            lambda xb: model.infer_logits(xb, str(key)),
            val_x[mask], val_y[mask], spec.batch_size,
        )
        total += loss * int(mask.sum())
        count += int(mask.sum())
    return total / count


# ---------------------------------------------------------------------------
# fused-network training
# ---------------------------------------------------------------------------

def train_tadann(tadann: TadannModel, x, y, spec: TrainSpec,
                 trace=None) -> TrainHistory:
    """Train the fusion assembly on the calibration session.

    Trainable set: the whole target network, the source BN gamma/beta, and
    the fusion coefficients (clamped to [0, 2] after every step).
    """
    spec.validate()
    split_rng, shuffle_rng, dropout_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(3)
    ]
    train_idx, val_idx = stratified_split(y, spec.val_fraction, split_rng)
    optimizer = Adam(tadann.trainable_params(), lr=spec.lr)
    history = TrainHistory()
    stopper = _EarlyStopper(spec, optimizer, tadann.snapshot, tadann.restore)
    epoch = -1
    for epoch in range(spec.max_epochs):
        order = shuffle_rng.permutation(train_idx)
        epoch_loss, seen = 0.0, 0
        for batch in _batches(order, spec.batch_size):
            if trace is not None:
                trace.append(batch)
            tadann.zero_grad()
            logits, cache = tadann.forward(
                x[batch], training=True, rng=dropout_rng
            )
            loss, dlogits = softmax_cross_entropy(logits, y[batch])
            check_finite(np.asarray(loss), "fusion training loss")
            tadann.backward(dlogits, cache)
            optimizer.step()
            tadann.clamp_coefficients()
            epoch_loss += loss * batch.size
            seen += batch.size
        val_loss = _eval_loss(
            tadann.infer_logits, x[val_idx], y[val_idx], spec.batch_size
        )
        history.train_loss.append(epoch_loss / seen)
        history.val_loss.append(val_loss)
        history.lr.append(optimizer.lr)
        if stopper.observe(epoch, val_loss, history):
            break
    stopper.finish(epoch, history)
    return history


# ---------------------------------------------------------------------------
# calibration schemes
# ---------------------------------------------------------------------------

_STAGES = {"init": 0, "train": 1, "source-init": 2, "target-init": 3,
           "pretrain": 4, "fusion-train": 5}


def derive_seed(seed, session_index, stage):
    """Stable per-(seed, session, stage) integer, scheme-independent."""
    ss = np.random.SeedSequence([int(seed), int(session_index), _STAGES[stage]])
    return int(ss.generate_state(1)[0])


def _rng(seed, session_index, stage):
    return np.random.default_rng(derive_seed(seed, session_index, stage))


@dataclass
class SessionResult:
    session_index: int
    day_offset: float
    n_test: int
    accuracy: float
    model: object
    inference_key: object        # session key for TcnModel, None for fused
    history: TrainHistory


@dataclass
class SchemeResult:
    scheme: CalibrationScheme
    participant: int
    seed: int
    sessions: list

    def accuracy_by_session(self):
        return {r.session_index: r.accuracy for r in self.sessions}

    def mean_accuracy(self, min_session=2):
        values = [r.accuracy for r in self.sessions if r.session_index >= min_session]
        if not values:
            raise ValueError("no evaluated sessions at or after the cutoff")
        return float(np.mean(values))


def _evaluate(model, windows, inference_key):
    if inference_key is None:
        labels = predict(model, windows.x)
    else:
        labels = predict(model, windows.x, session_key=inference_key)
    return accuracy(labels, windows.y)


def _prepared(plan, window_spec, sos, dtype):
    train_sets, test_sets = {}, {}
    for session in plan.sessions:
        train_sets[session.session_index] = ds.prepare_training_windows(
            session, plan.train_cycles, window_spec, sos, dtype
        )
        test_sets[session.session_index] = ds.prepare_training_windows(
            session, (plan.test_cycle,), window_spec, sos, dtype
        )
    return train_sets, test_sets


def run_calibration_scheme(plan: SessionPlan, scheme, spec: TrainSpec,
                           model_config, window_spec=None, sos=None,
                           dtype=np.float32) -> SchemeResult:
    """Run one calibration scheme over a participant's ordered sessions."""
    plan.validate()
    scheme = CalibrationScheme(scheme)
    indices = [s.session_index for s in plan.sessions]
    if scheme is CalibrationScheme.DELAYED_CALIBRATION and len(indices) < 3:
        raise ValueError("delayed calibration needs at least three sessions")
    if scheme is CalibrationScheme.TADANN and len(indices) < 2:
        raise ValueError("the fusion scheme needs at least one earlier session")
    train_sets, test_sets = _prepared(plan, window_spec, sos, dtype)
    results = []

    def fresh_model(session_index, stage="init"):
        return TcnModel(model_config, _rng(spec.seed, session_index, stage), dtype)

    def train_spec_for(session_index, stage="train"):
        return replace(spec, seed=derive_seed(spec.seed, session_index, stage))

    if scheme is CalibrationScheme.NO_CALIBRATION:
        first = indices[0]
        model = fresh_model(first)
        history = train_supervised(
            model, train_sets[first].x, train_sets[first].y,
            train_spec_for(first),
        )
        for idx in indices:
            acc = _evaluate(model, test_sets[idx], "default")
            results.append(
                SessionResult(idx, _day(plan, idx), len(test_sets[idx]), acc,
                              model, "default", history)
            )
    elif scheme in (CalibrationScheme.RECALIBRATION,
                    CalibrationScheme.DELAYED_CALIBRATION):
        delayed = scheme is CalibrationScheme.DELAYED_CALIBRATION
        model = None
        trained_through = {}
        for idx in indices:
            if model is None:
                model = fresh_model(indices[0])
            else:
                model = model.clone()     # fine-tune from previous weights
            history = train_supervised(
                model, train_sets[idx].x, train_sets[idx].y,
                train_spec_for(idx),
            )
            trained_through[idx] = (model, history)
        if delayed:
            # session n (third onward) is evaluated by the model trained
            # only through session n-1
            for pos in range(2, len(indices)):
                idx = indices[pos]
                prev_model, history = trained_through[indices[pos - 1]]
                acc = _evaluate(prev_model, test_sets[idx], "default")
                results.append(
                    SessionResult(idx, _day(plan, idx), len(test_sets[idx]),
                                  acc, prev_model, "default", history)
                )
        else:
            for idx in indices:
                m, history = trained_through[idx]
                acc = _evaluate(m, test_sets[idx], "default")
                results.append(
                    SessionResult(idx, _day(plan, idx), len(test_sets[idx]),
                                  acc, m, "default", history)
                )
    elif scheme is CalibrationScheme.TADANN:
        for pos in range(1, len(indices)):
            idx = indices[pos]
            earlier = indices[:pos]
            source = fresh_model(idx, "source-init")
            pre_spec = train_spec_for(idx, "pretrain")
            if len(earlier) == 1:
                key = f"s{earlier[0]}"
                train_supervised(
                    source, train_sets[earlier[0]].x, train_sets[earlier[0]].y,
                    pre_spec, session_key=key,
                )
            else:
                session_data = {
                    f"s{e}": (train_sets[e].x, train_sets[e].y) for e in earlier
                }
                adann_pretrain(source, session_data, pre_spec)
            fused = build_tadann(
                source, calibration_key=f"s{idx}",
                rng=_rng(spec.seed, idx, "target-init"),
            )
            history = train_tadann(
                fused, train_sets[idx].x, train_sets[idx].y,
                train_spec_for(idx, "fusion-train"),
            )
            acc = _evaluate(fused, test_sets[idx], None)
            results.append(
                SessionResult(idx, _day(plan, idx), len(test_sets[idx]), acc,
                              fused, None, history)
            )
    return SchemeResult(scheme, plan.participant, spec.seed, results)


def _day(plan, session_index):
    for s in plan.sessions:
        if s.session_index == session_index:
            return s.day_offset
    raise ValueError(f"session {session_index} not in plan")
