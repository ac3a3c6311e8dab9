"""Checkpoint persistence.

One file holds everything a run owns: a JSON header line (format tag,
config echo, class/channel counts, tensor name list) followed by the named
tensors in the shared binary layout. Loading rebuilds the state structurally
from the config echo and then overwrites every array in place, so a
round-trip reproduces evaluation output bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .adain import ChannelStats, build_style_net
from .config import RunConfig
from .errors import ContractError
from .heads import BatchNormLayer, LinearLayer
from .tensor import read_tensor, write_tensor
from .train import StyleContext, TrainState, init_state

__all__ = ["CHECKPOINT_FORMAT", "save_checkpoint", "load_checkpoint"]

CHECKPOINT_FORMAT = "cfalign-checkpoint"
CHECKPOINT_VERSION = 1


def _state_arrays(state: TrainState) -> list[tuple[str, np.ndarray]]:
    """Name every array a run owns, in a fixed order shared by save and load."""
    entries: list[tuple[str, np.ndarray]] = []
    for name, layer in (
        ("enc1", state.model.enc1),
        ("enc2", state.model.enc2),
        ("classifier", state.model.classifier),
    ):
        entries.append((f"model.{name}.weight", layer.weight.data))
        entries.append((f"model.{name}.bias", layer.bias.data))
    for i, layer in enumerate(state.head.layers):
        if isinstance(layer, LinearLayer):
            entries.append((f"head.{i}.weight", layer.weight.data))
            entries.append((f"head.{i}.bias", layer.bias.data))
        elif isinstance(layer, BatchNormLayer):
            entries.append((f"head.{i}.gamma", layer.gamma.data))
            entries.append((f"head.{i}.beta", layer.beta.data))
            entries.append((f"head.{i}.running_mean", layer.running.mean))
            entries.append((f"head.{i}.running_var", layer.running.var))
    for prefix, bank in (("bank_feat", state.bank_feat), ("bank_head", state.bank_head)):
        entries.append((f"{prefix}.v_source", bank.v_source))
        entries.append((f"{prefix}.v_target", bank.v_target))
        entries.append((f"{prefix}.init_source", bank.init_source))
        entries.append((f"{prefix}.init_target", bank.init_target))
    if state.style is not None:
        mean, var = state.style.stats.as_arrays()
        entries.append(("style.stats_mean", mean))
        entries.append(("style.stats_var", var))
        if state.style.net is not None:
            net = state.style.net
            entries.append(("style.net.enc_w", net.enc_w.data))
            entries.append(("style.net.enc_b", net.enc_b.data))
            entries.append(("style.net.dec_w", net.dec_w.data))
            entries.append(("style.net.dec_b", net.dec_b.data))
            n_mean, n_var = state.style.net_stats.as_arrays()
            entries.append(("style.net_stats_mean", n_mean))
            entries.append(("style.net_stats_var", n_var))
    return entries


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    entries = _state_arrays(state)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "classes": state.classes,
        "channels": state.channels,
        "tensors": [name for name, _ in entries],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for _, array in entries:
            # bank flags are bool; the layout is float-only, so widen on the way out
            write_tensor(fh, np.asarray(array, dtype=np.float64))


def load_checkpoint(path: str | Path) -> TrainState:
    """Rebuild a TrainState from a checkpoint file.

    The state is constructed structurally from the config echo (so shapes and
    layer kinds match by design), then every stored array replaces the fresh
    one. Mismatched names or shapes raise ContractError.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContractError(f"{path} does not start with a checkpoint header: {exc}") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ContractError(f"{path} has format {header.get('format')!r}, expected {CHECKPOINT_FORMAT!r}")
        config = RunConfig.from_mapping(header["config"])
        state = init_state(config, int(header["classes"]), int(header["channels"]))
        names = list(header["tensors"])
        if any(n.startswith("style.") for n in names):
            state.style = _empty_style(config, state.channels, with_net="style.net.enc_w" in names)
        stored = {}
        for name in names:
            array, _ = _read_entry(fh, path, name)
            stored[name] = array
    targets = dict(_state_arrays(state))
    if set(stored) != set(targets):
        missing = sorted(set(targets) - set(stored))
        extra = sorted(set(stored) - set(targets))
        raise ContractError(f"checkpoint tensor set mismatch: missing {missing}, unexpected {extra}")
    for name, array in stored.items():
        dst = targets[name]
        if dst.shape != array.shape:
            raise ContractError(f"tensor {name} has shape {array.shape}, expected {dst.shape}")
        dst[...] = array  # bool flag rows cast back from their 0/1 float form
    return state


def _empty_style(config: RunConfig, channels: int, with_net: bool) -> StyleContext:
    ctx = StyleContext(
        direction=config.transfer_direction,
        stats=ChannelStats(mean=np.zeros(channels), var=np.ones(channels)),
        eps=config.adain_eps,
    )
    if with_net:
        ctx.net = build_style_net(channels, config.style_net_dim, np.random.default_rng(0))
        ctx.net_stats = ChannelStats(
            mean=np.zeros(config.style_net_dim), var=np.ones(config.style_net_dim)
        )
    return ctx


def _read_entry(fh, path: Path, name: str) -> tuple[np.ndarray, str]:
    try:
        array = read_tensor(fh)
    except Exception as exc:
        raise ContractError(f"cannot read tensor {name} from {path}: {exc}") from exc
    return array, name
