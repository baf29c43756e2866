"""On-disk formats: JSON checkpoints with base64 tensors, and CSV tables."""

from __future__ import annotations

import base64
import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset
from .netcore import LayerKind, LayerSpec, ModelCheckpoint, Task

FORMAT_VERSION = 1
_TENSOR_NAMES = ("w0", "bias", "b", "a", "d")


def encode_tensor(x: np.ndarray) -> dict:
    x = np.ascontiguousarray(x, dtype="<f8")
    return {"shape": list(x.shape), "data": base64.b64encode(x.tobytes()).decode("ascii")}


def decode_tensor(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(obj["shape"])


def checkpoint_to_json(ckpt: ModelCheckpoint) -> str:
    bayes = ckpt.meta.get("bayes")
    layers = []
    for i, spec in enumerate(ckpt.topology):
        entry = {}
        for name in _TENSOR_NAMES:
            key = f"{i}.{name}"
            if key in ckpt.tensors:
                entry[name] = encode_tensor(ckpt.tensors[key])
        if bayes is not None and i in bayes["layers"]:
            entry["sigma_q"] = bayes["sigma_q"]
            entry["family"] = bayes["family"]
        layers.append(entry)
    doc = {
        "format_version": FORMAT_VERSION,
        "task": ckpt.meta.get("task", Task.REGRESSION.value),
        "topology": [s.to_dict() for s in ckpt.topology],
        "meta": ckpt.meta,
        "layers": layers,
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def checkpoint_from_json(text: str) -> ModelCheckpoint:
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {doc.get('format_version')}")
    topology = [LayerSpec.from_dict(d) for d in doc["topology"]]
    tensors = {}
    for i, entry in enumerate(doc["layers"]):
        for name in _TENSOR_NAMES:
            if name in entry:
                tensors[f"{i}.{name}"] = decode_tensor(entry[name])
        required = ("w0", "bias", "b", "a") if topology[i].kind is LayerKind.ADAPTED else ("w0", "bias")
        missing = [n for n in required if n not in entry]
        if missing:
            raise ValueError(f"layer {i} is missing tensors {missing}")
    meta = doc.get("meta", {})
    meta["task"] = doc["task"]
    return ModelCheckpoint(topology, tensors, meta)


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    Path(path).write_text(checkpoint_to_json(ckpt), encoding="utf-8")


def load_checkpoint(path) -> ModelCheckpoint:
    return checkpoint_from_json(Path(path).read_text(encoding="utf-8"))


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(header, rows))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def dataset_to_csv(ds: Dataset, path) -> None:
    d = ds.inputs.shape[1]
    header = [f"x{j}" for j in range(d)]
    if ds.targets is None:
        rows = ds.inputs.tolist()
    elif ds.task is Task.CLASSIFICATION:
        header.append("y")
        rows = [list(x) + [int(y)] for x, y in zip(ds.inputs, ds.targets)]
    else:
        header += [f"y{j}" for j in range(ds.targets.shape[1])] if ds.targets.shape[1] > 1 else ["y"]
        rows = [list(x) + list(y) for x, y in zip(ds.inputs, ds.targets)]
    write_csv(path, header, rows)


def dataset_from_csv(path, task: Task, class_count: int = 0) -> Dataset:
    header, rows = read_csv(path)
    xcols = [k for k, h in enumerate(header) if h.startswith("x")]
    ycols = [k for k, h in enumerate(header) if h.startswith("y")]
    x = np.array([[float(r[k]) for k in xcols] for r in rows], dtype=np.float64).reshape(len(rows), len(xcols))
    if not ycols:
        return Dataset(x, None, task, class_count)
    if Task(task) is Task.CLASSIFICATION:
        y = np.array([int(r[ycols[0]]) for r in rows], dtype=np.int64)
    else:
        y = np.array([[float(r[k]) for k in ycols] for r in rows], dtype=np.float64)
    return Dataset(x, y, task, class_count)
