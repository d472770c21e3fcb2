"""Model snapshots: an ``.npz`` of arrays next to a ``.json`` of structure."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .equivariant import UnconstrainedTerm
from .exceptions import ContractError
from .experiments.model import build_model
from .experiments.tasks import TaskSpec, make_dataset

FORMAT_VERSION = 1


def _paths(path):
    base = Path(path)
    if base.suffix in (".npz", ".json"):
        base = base.with_suffix("")
    return base.with_suffix(".npz"), base.with_suffix(".json")


def model_arrays(model):
    arrays = {}
    for i, layer in enumerate(model.layers):
        pre = f"layer{i}/"
        arrays[pre + "eq"] = layer.eq_path.weight.data
        for j, term in enumerate(layer.un_terms):
            arrays[pre + f"term{j}"] = term.params.data
        arrays[pre + "h"] = layer.state.h
        arrays[pre + "w_alpha"] = layer.state.w_alpha.data
        arrays[pre + "w_beta"] = layer.state.w_beta.data
        for k, (w, b) in enumerate(zip(layer.update_net.weights, layer.update_net.biases)):
            arrays[pre + f"theta_w{k}"] = w.data
            arrays[pre + f"theta_b{k}"] = b.data
        if layer.frozen is not None:
            arrays[pre + "frozen_alphas"] = np.asarray(layer.frozen["alphas"], dtype=np.float64)
            arrays[pre + "frozen_beta"] = np.asarray(layer.frozen["beta"], dtype=np.float64)
    if model.head is not None:
        arrays["head/weight"] = model.head.weight.data
        arrays["head/bias"] = model.head.bias.data
    return arrays


def save_model(model, path):
    """Write ``<path>.npz`` and ``<path>.json``; returns both paths."""
    npz, meta_path = _paths(path)
    meta = {
        "format": FORMAT_VERSION,
        "task": model.meta["task"],
        "build": model.meta["build"],
        "layers": [
            {
                "name": layer.name,
                "terms": layer.term_kinds,
                "t": layer.state.t,
                "frozen": layer.frozen is not None,
            }
            for layer in model.layers
        ],
    }
    np.savez(npz, **model_arrays(model))
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return npz, meta_path


def load_model(path):
    npz, meta_path = _paths(path)
    meta = json.loads(meta_path.read_text())
    if meta.get("format") != FORMAT_VERSION:
        raise ContractError(f"unsupported snapshot format {meta.get('format')!r}")
    dataset = make_dataset(TaskSpec.from_dict(meta["task"]))
    build = dict(meta["build"])
    build["hidden"] = tuple(build["hidden"])
    build["terms"] = tuple(build["terms"])
    model = build_model(dataset, **build)
    with np.load(npz) as arrays:
        for i, (layer, info) in enumerate(zip(model.layers, meta["layers"])):
            pre = f"layer{i}/"
            layer.name = info["name"]
            layer.eq_path.weight.data = arrays[pre + "eq"].copy()
            n_in = layer.rep_z.dim
            n_out = layer.eq_path.weight.shape[0]
            layer.un_terms = [
                UnconstrainedTerm(kind, n_in, n_out, build["norm_bound"], params=arrays[pre + f"term{j}"].copy())
                for j, kind in enumerate(info["terms"])
            ]
            layer.state.h = arrays[pre + "h"].copy()
            layer.state.t = int(info["t"])
            layer.state.w_alpha.data = arrays[pre + "w_alpha"].copy()
            layer.state.w_beta.data = arrays[pre + "w_beta"].copy()
            for k, (w, b) in enumerate(zip(layer.update_net.weights, layer.update_net.biases)):
                w.data = arrays[pre + f"theta_w{k}"].copy()
                b.data = arrays[pre + f"theta_b{k}"].copy()
            if info["frozen"]:
                layer.frozen = {
                    "alphas": arrays[pre + "frozen_alphas"].copy(),
                    "beta": float(arrays[pre + "frozen_beta"]),
                }
        if model.head is not None:
            model.head.weight.data = arrays["head/weight"].copy()
            model.head.bias.data = arrays["head/bias"].copy()
    return model
