"""Checkpoint files for trained control-variate models.

Layout: a UTF-8 text header of ``key value`` lines terminated by a line
``end_header``, followed by the raw little-endian float64 values of every
array declared in the header, in declaration order. A file holds one or more
models (``model <k>`` opens a section) and optionally Adam moments.

Example header::

    neuralcv-checkpoint 1
    step 500
    models 1
    model 0
    role circle2d
    arch mgc_siren
    param_dim 1
    cond_dim 2
    hidden 64,64,64,64
    omega0 30.0
    grid_lo 0.0125,0.0125
    ...
    array 0/W0 64,9
    ...
    array 0/adam_m/W0 64,9
    end_header
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .networks import AntiderivativeNet, FeatureGrid
from .poly import PolyModel

MAGIC = "neuralcv-checkpoint 1"
_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    models: list
    roles: list
    step: int = 0
    # per-model Adam state as plain dicts (see training.AdamState.to_dict)
    adam: list = field(default_factory=list)


def _fmt(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(repr(float(x)) if isinstance(x, (float, np.floating)) else str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _model_header(model) -> list[tuple[str, str]]:
    rows = [("arch", model.arch), ("param_dim", model.param_dim), ("cond_dim", model.cond_dim)]
    if isinstance(model, PolyModel):
        rows.append(("degree", model.degree))
    else:
        rows += [("hidden", ",".join(str(h) for h in model.hidden)), ("omega0", float(model.omega0))]
    grid = model.grid
    if grid is not None:
        rows += [(k, v) for k, v in grid.spec().items()]
    return [(k, _fmt(v)) for k, v in rows]


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    lines = [MAGIC, f"step {int(ckpt.step)}", f"models {len(ckpt.models)}"]
    arrays = []
    for k, (model, role) in enumerate(zip(ckpt.models, ckpt.roles)):
        lines.append(f"model {k}")
        lines.append(f"role {role}")
        lines += [f"{a} {b}" for a, b in _model_header(model)]
        for name in model.param_order():
            arr = np.asarray(model.params[name], dtype=np.float64)
            arrays.append((f"{k}/{name}", arr))
        if k < len(ckpt.adam) and ckpt.adam[k] is not None:
            st = ckpt.adam[k]
            lines.append(f"adam_step {int(st['step'])}")
            lines.append(f"adam_skipped {int(st.get('skipped', 0))}")
            lines.append(f"adam_hyper {_fmt([st['lr'], st['beta1'], st['beta2'], st['eps']])}")
            for name in model.param_order():
                arrays.append((f"{k}/adam_m/{name}", np.asarray(st["m"][name], dtype=np.float64)))
                arrays.append((f"{k}/adam_v/{name}", np.asarray(st["v"][name], dtype=np.float64)))
    for name, arr in arrays:
        lines.append(f"array {name} {','.join(str(s) for s in arr.shape)}")
    lines.append("end_header")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())
    tmp.replace(path)


def _parse_floats(s):
    return [float(x) for x in s.split(",")]


def _build_model(h: dict):
    arch = h["arch"]
    pd, cd = int(h["param_dim"]), int(h["cond_dim"])
    grid = None
    if "grid_lo" in h:
        grid = FeatureGrid(
            _parse_floats(h["grid_lo"]), _parse_floats(h["grid_hi"]), int(h["grid_levels"]),
            int(h["grid_base"]), float(h["grid_growth"]), int(h["grid_features"]),
        )
        # grid bounds are stored already inflated
    if arch == "poly":
        return PolyModel(pd, cd, grid, int(h["degree"]))
    hidden = tuple(int(x) for x in h["hidden"].split(","))
    return AntiderivativeNet(arch, pd, cd, hidden, float(h["omega0"]), grid)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    marker = b"\nend_header\n"
    cut = blob.find(marker)
    if cut < 0 or not blob.startswith(MAGIC.encode()):
        raise ValueError(f"{path} is not a checkpoint file")
    header = blob[:cut].decode().splitlines()
    body = blob[cut + len(marker):]

    step = 0
    sections: list[dict] = []
    shapes: list[tuple[str, tuple]] = []
    for line in header[1:]:
        key, _, value = line.partition(" ")
        if key == "step":
            step = int(value)
        elif key == "models":
            continue
        elif key == "model":
            sections.append({})
        elif key == "array":
            name, dims = value.split(" ")
            shapes.append((name, tuple(int(d) for d in dims.split(",")) if dims else ()))
        else:
            sections[-1][key] = value

    arrays = {}
    offset = 0
    for name, shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * _DTYPE.itemsize
        if offset + nbytes > len(body):
            raise ValueError("checkpoint body is truncated")
        arrays[name] = np.frombuffer(body, dtype=_DTYPE, count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(body):
        raise ValueError("checkpoint body has trailing bytes")

    models, roles, adam = [], [], []
    for k, h in enumerate(sections):
        model = _build_model(h)
        expected = model.param_shapes()
        params = {}
        for name, shape in expected.items():
            arr = arrays.get(f"{k}/{name}")
            if arr is None or arr.shape != tuple(shape):
                raise ValueError(f"checkpoint parameter {name} missing or mis-shaped")
            params[name] = arr
        model.params = params
        models.append(model)
        roles.append(h.get("role", ""))
        if "adam_step" in h:
            lr, b1, b2, eps = _parse_floats(h["adam_hyper"])
            adam.append({
                "step": int(h["adam_step"]), "skipped": int(h.get("adam_skipped", 0)),
                "lr": lr, "beta1": b1, "beta2": b2, "eps": eps,
                "m": {n: arrays[f"{k}/adam_m/{n}"] for n in expected},
                "v": {n: arrays[f"{k}/adam_v/{n}"] for n in expected},
            })
        else:
            adam.append(None)
    return Checkpoint(models, roles, step, adam)


def save_model(path, model, role: str = "", step: int = 0) -> None:
    save_checkpoint(path, Checkpoint([model], [role], step))


def load_model(path, index: Optional[int] = 0):
    return load_checkpoint(path).models[index]
