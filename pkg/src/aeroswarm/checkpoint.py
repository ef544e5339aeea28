"""Binary checkpoints.

Layout (all integers and floats little-endian)::

    8 bytes   magic  b"AERSWCKP"
    uint32    format version
    uint32    header length H
    H bytes   UTF-8 JSON header: layer dims, counters, block table
    float64[] blocks, concatenated in block-table order

The block table lists ``(name, shape)`` pairs; a reader in any language can
walk it to slice the float64 payload. Blocks cover actor and critic weights
(W0, b0, W1, ...), both Adam moment sets, the reward normaliser moments and
the per-policy reward-variance windows.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .config import ScenarioConfig
from .env import N_ACTIONS
from .learner import TrainerState, actor_input_dim, critic_input_dim
from .metrics import POLICY_TAGS, RewardWindow
from .nn import AdamState, MlpParams
from .reward import NormalizerState

MAGIC = b"AERSWCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _blocks(ts: TrainerState):
    out = []
    for net, params in (("actor", ts.actor), ("critic", ts.critic)):
        out += [(f"{net}.p{k}", a) for k, a in enumerate(params.arrays())]
    for net, opt in (("actor", ts.actor_opt), ("critic", ts.critic_opt)):
        out += [(f"{net}.adam_m{k}", a) for k, a in enumerate(opt.m)]
        out += [(f"{net}.adam_v{k}", a) for k, a in enumerate(opt.v)]
    out += [("norm.count", ts.norm.count), ("norm.mean", ts.norm.mean), ("norm.m2", ts.norm.m2)]
    out += [(f"window.{tag}", np.asarray(ts.reward_window.history[tag], dtype=float))
            for tag in POLICY_TAGS]
    return out


def save_checkpoint(ts: TrainerState, cfg: ScenarioConfig, path) -> None:
    blocks = _blocks(ts)
    header = {
        "version": VERSION,
        "actor_dims": ts.actor.dims,
        "critic_dims": ts.critic.dims,
        "next_episode": ts.next_episode,
        "seed": cfg.seed,
        "adam": {"actor": [ts.actor_opt.t, ts.actor_opt.lr], "critic": [ts.critic_opt.t, ts.critic_opt.lr]},
        "norm": {"warmup_min": ts.norm.warmup_min, "epsilon": ts.norm.epsilon},
        "blocks": [[name, list(np.shape(a))] for name, a in blocks],
    }
    raw_header = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(raw_header)))
        fh.write(raw_header)
        for _, a in blocks:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path, cfg: ScenarioConfig | None = None) -> TrainerState:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(data) < 16:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from None
    sizes = [int(np.prod(shape)) if shape else 1 for _, shape in header["blocks"]]
    if len(data) - 16 - hlen != 8 * sum(sizes):
        raise CheckpointError(f"{path}: payload size does not match block table")
    payload = np.frombuffer(data, dtype="<f8", offset=16 + hlen)
    arrays, pos = {}, 0
    for (name, shape), size in zip(header["blocks"], sizes):
        arrays[name] = payload[pos:pos + size].reshape(shape).astype(float)
        pos += size
    if cfg is not None:
        want = ([actor_input_dim(cfg), *cfg.actor_hidden, N_ACTIONS],
                [critic_input_dim(cfg), *cfg.critic_hidden, 1])
        got = (list(header["actor_dims"]), list(header["critic_dims"]))
        if tuple(want) != got:
            raise CheckpointError(f"{path}: network dims {got} do not match config {want}")

    def net(prefix, dims):
        n = 2 * (len(dims) - 1)
        return MlpParams.from_arrays([arrays[f"{prefix}.p{k}"] for k in range(n)])

    def adam(prefix, dims):
        n = 2 * (len(dims) - 1)
        t, lr = header["adam"][prefix]
        return AdamState([arrays[f"{prefix}.adam_m{k}"] for k in range(n)],
                         [arrays[f"{prefix}.adam_v{k}"] for k in range(n)], int(t), float(lr))

    ad, cd = header["actor_dims"], header["critic_dims"]
    norm = NormalizerState(arrays["norm.count"], arrays["norm.mean"], arrays["norm.m2"],
                           int(header["norm"]["warmup_min"]), float(header["norm"]["epsilon"]))
    window = RewardWindow({tag: arrays[f"window.{tag}"].tolist() for tag in POLICY_TAGS})
    return TrainerState(net("actor", ad), net("critic", cd), adam("actor", ad),
                        adam("critic", cd), norm, int(header["next_episode"]), window)
