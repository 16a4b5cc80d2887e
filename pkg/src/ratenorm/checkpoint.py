"""JSON checkpoints for networks with Rate Norm state.

Floats are written with Python's shortest round-trip repr, so a
save/load cycle reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ratenorm.core.layers import Network
from ratenorm.errors import FormatError
from ratenorm.rnl import tie_shared_p

FORMAT_VERSION = 1


def network_to_dict(net: Network) -> dict:
    params = {p.name: np.asarray(p.data).tolist() for p in net.params()}
    states = []
    for s in net.rate_norm_states():
        states.append(
            {
                "p_raw": float(s.p_raw.data),
                "running_max": float(s.running_max),
                "momentum": float(s.momentum),
                "shared_group": s.shared_group,
                "locked": bool(s.locked),
                "p_trained": bool(s.p_trained),
            }
        )
    return {
        "format_version": FORMAT_VERSION,
        "layers": [spec.to_dict() for spec in net.specs],
        "params": params,
        "rate_norm_states": states,
    }


def network_from_dict(doc: dict) -> Network:
    if not isinstance(doc, dict):
        raise FormatError("checkpoint root must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format_version {version!r}, expected {FORMAT_VERSION}")
    try:
        net = Network(doc["layers"])
        params = doc["params"]
        for p in net.params():
            value = np.asarray(params[p.name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise FormatError(f"parameter {p.name}: shape {value.shape} != expected {p.data.shape}")
            p.data = value
        states = net.rate_norm_states()
        saved = doc["rate_norm_states"]
        if len(saved) != len(states):
            raise FormatError(f"checkpoint has {len(saved)} rate-norm states, network has {len(states)}")
        for s, d in zip(states, saved):
            s.p_raw.data = np.asarray(float(d["p_raw"]), dtype=np.float64)
            s.running_max = float(d["running_max"])
            s.momentum = float(d["momentum"])
            s.locked = bool(d["locked"])
            s.p_trained = bool(d.get("p_trained", False))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed checkpoint: {e}") from e

    groups: dict[str, list] = {}
    for s, d in zip(states, saved):
        if d["shared_group"] is not None:
            groups.setdefault(d["shared_group"], []).append((s, d))
    for name, members in groups.items():
        flags = [(s.locked, s.p_trained) for s, _ in members]
        for s, _ in members:
            s.p_trained = False
        tie_shared_p([s for s, _ in members], group=name, p_raw=float(members[0][1]["p_raw"]))
        for (s, _), (locked, trained) in zip(members, flags):
            s.locked, s.p_trained = locked, trained
    net.eval()
    return net


def save_checkpoint(net: Network, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net)))


def load_checkpoint(path: str | Path) -> Network:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from e
    return network_from_dict(doc)
