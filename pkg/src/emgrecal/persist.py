"""Model serialization on top of the kernel checkpoint container.

A checkpoint is self-contained: the model-config block rides in the header
as plain key=value entries, parameter tensors and every BN session bank ride
in the binary section, and optimizer moments can be attached when a run
wants to resume.
"""

import numpy as np

from .kernel.checkpoint import (
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .kernel.params import BnBank, Parameter
from .model import TadannModel, TcnModel


def _tcn_tensors(model, prefix=""):
    tensors = {}
    for name, p in model.params.items():
        tensors[f"{prefix}param.{name}"] = p.value
    for i, bank_map in enumerate(model.banks):
        for key in sorted(bank_map):
            tensors[f"{prefix}bank.{i}.{key}.mean"] = bank_map[key].mean
            tensors[f"{prefix}bank.{i}.{key}.var"] = bank_map[key].var
    return tensors


def _tcn_config_items(model, prefix=""):
    items = {}
    for key, value in model.config.to_items().items():
        items[f"{prefix}model.{key}"] = value
    items[f"{prefix}dtype"] = model.dtype.name
    frozen = sorted(n for n, p in model.params.items() if not p.trainable)
    items[f"{prefix}frozen"] = ",".join(frozen)
    return items


def _rebuild_tcn(items, tensors, prefix=""):
    from .model import TcnConfig

    config = TcnConfig.from_items(
        {
            k[len(prefix) + 6:]: v
            for k, v in items.items()
            if k.startswith(f"{prefix}model.")
        }
    )
    dtype = np.dtype(items[f"{prefix}dtype"])
    model = TcnModel.__new__(TcnModel)
    model.config = config
    model.dtype = dtype
    model.params = {}
    model.banks = [dict() for _ in config.channels]
    frozen = set(filter(None, items.get(f"{prefix}frozen", "").split(",")))
    for full_name, arr in tensors.items():
        if not full_name.startswith(prefix):
            continue
        name = full_name[len(prefix):]
        if name.startswith("param."):
            pname = name[6:]
            model.params[pname] = Parameter(
                pname, arr.astype(dtype), trainable=pname not in frozen
            )
        elif name.startswith("bank."):
            _, block_s, key, stat = name.split(".", 3)
            bank_map = model.banks[int(block_s)]
            if key not in bank_map:
                bank_map[key] = BnBank.fresh(config.channels[int(block_s)], dtype)
            setattr(bank_map[key], stat, arr.astype(dtype))
    if "head.weight" not in model.params:
        raise CheckpointError("checkpoint lacks classifier parameters")
    return model


def save_model(path, model, extra_config=None, optimizer=None):
    """Serialize a TcnModel or TadannModel with optional run metadata."""
    config = dict(extra_config or {})
    if isinstance(model, TadannModel):
        config["kind"] = "tadann"
        config["source_key"] = model.source_key
        config["target_key"] = model.target_key
        config.update(_tcn_config_items(model.source, "source."))
        config.update(_tcn_config_items(model.target, "target."))
        tensors = _tcn_tensors(model.source, "source.")
        tensors.update(_tcn_tensors(model.target, "target."))
        for i, c in enumerate(model.coeffs):
            tensors[f"fusion.coeff{i}"] = c.value
    elif isinstance(model, TcnModel):
        config["kind"] = "tcn"
        config.update(_tcn_config_items(model))
        tensors = _tcn_tensors(model)
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    if optimizer is not None:
        config["adam.step"] = str(optimizer.step_count)
        config["adam.lr"] = repr(optimizer.lr)
        tensors.update(optimizer.state_tensors())
    save_checkpoint(path, config, tensors)


def load_model(path):
    """Load a checkpoint; returns (model, config dict)."""
    config, tensors = load_checkpoint(path)
    kind = config.get("kind")
    if kind == "tcn":
        return _rebuild_tcn(config, tensors), config
    if kind == "tadann":
        source = _rebuild_tcn(config, tensors, "source.")
        target = _rebuild_tcn(config, tensors, "target.")
        coeffs = []
        i = 0
        while f"fusion.coeff{i}" in tensors:
            coeffs.append(
                Parameter(
                    f"fusion.coeff{i}",
                    tensors[f"fusion.coeff{i}"].astype(source.dtype),
                )
            )
            i += 1
        model = TadannModel(
            source, target, coeffs, config["source_key"], config["target_key"]
        )
        return model, config
    raise CheckpointError(f"{path}: unknown model kind {kind!r}")
