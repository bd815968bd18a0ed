"""On-disk format for trained heads and students.

Arrays are stored as individual .npy files (atomic temp+rename writes)
next to a JSON descriptor, so identical training runs produce byte-
identical directories — archive formats with embedded timestamps would
not.
"""

import io
import json
import os

import numpy as np

from ..errors import DataValidationError
from ..fileio import atomic_write_bytes, atomic_write_text
from .head import ProjectionHead
from .student import IdentityStudent, MlpStudent

_HEAD_ARRAYS = ("weight", "gamma", "beta", "running_mean", "running_var")


def _save_array(path, arr):
    buf = io.BytesIO()
    np.save(buf, np.asarray(arr, dtype=np.float64))
    atomic_write_bytes(path, buf.getvalue())


def save_head(head: ProjectionHead, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    state = head.state_dict()
    for name in _HEAD_ARRAYS:
        _save_array(os.path.join(out_dir, f"{name}.npy"), state[name])
    desc = {
        "kind": "projection_head",
        "d_in": head.d_in,
        "d_out": head.d_out,
        "momentum": head.momentum,
        "eps": head.eps,
        "arrays": {name: f"{name}.npy" for name in _HEAD_ARRAYS},
    }
    atomic_write_text(os.path.join(out_dir, "head.json"), json.dumps(desc, indent=2) + "\n")


def load_head(out_dir) -> ProjectionHead:
    desc_path = os.path.join(out_dir, "head.json")
    if not os.path.isfile(desc_path):
        raise DataValidationError(f"no trained head at {out_dir!s}: missing head.json")
    with open(desc_path, "r", encoding="utf-8") as f:
        desc = json.load(f)
    if desc.get("kind") != "projection_head":
        raise DataValidationError(f"{desc_path!s} does not describe a projection head")
    head = ProjectionHead(int(desc["d_in"]), int(desc["d_out"]), momentum=desc["momentum"], eps=desc["eps"])
    state = {
        name: np.load(os.path.join(out_dir, rel)) for name, rel in desc["arrays"].items()
    }
    return head.load_state_dict(state)


def save_student(student, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    if isinstance(student, IdentityStudent):
        desc = {"kind": "identity", "d": student.d, "arrays": {}}
    elif isinstance(student, MlpStudent):
        desc = {"kind": "mlp", "d": student.d, "hidden": list(student.hidden), "arrays": {}}
        for name, arr in student.parameters().items():
            rel = f"student_{name}.npy"
            _save_array(os.path.join(out_dir, rel), arr)
            desc["arrays"][name] = rel
    else:
        raise TypeError(f"unknown student type {type(student).__name__}")
    atomic_write_text(os.path.join(out_dir, "student.json"), json.dumps(desc, indent=2) + "\n")


def load_student(out_dir):
    desc_path = os.path.join(out_dir, "student.json")
    if not os.path.isfile(desc_path):
        raise DataValidationError(f"no student at {out_dir!s}: missing student.json")
    with open(desc_path, "r", encoding="utf-8") as f:
        desc = json.load(f)
    if desc["kind"] == "identity":
        return IdentityStudent(int(desc["d"]))
    if desc["kind"] == "mlp":
        student = MlpStudent(int(desc["d"]), hidden=tuple(desc["hidden"]))
        for name, rel in desc["arrays"].items():
            arr = np.load(os.path.join(out_dir, rel))
            idx = int(name[1:])
            if name.startswith("w"):
                if student.weights[idx].shape != arr.shape:
                    raise DataValidationError(f"stored {name} has shape {arr.shape}, expected {student.weights[idx].shape}")
                student.weights[idx] = arr
            else:
                student.biases[idx] = arr
        return student
    raise DataValidationError(f"unknown student kind {desc['kind']!r} in {desc_path!s}")
