"""Portable persistence: CSV series and traces, versioned JSON model files.

Model files store every array as ``{"shape": [...], "data": [...]}`` with the
data flattened in row-major (C) order. Floats are written with Python's
shortest round-trip representation, so ``load(save(m))`` is exact and saving a
loaded model reproduces the file byte for byte. All writes go to a temporary
file in the target directory which is then renamed over the destination.
"""

import csv
import io
import json
import math
import os
import tempfile

import numpy as np

from .baselines import ArhmmParams
from .hmm import TransitionModel
from .lds import LdsParams
from .model import SaltParams
from .tensor import ShapeError, TuckerFactors

SCHEMA_VERSION = 1
KINDS = ("SALT", "ARHMM", "LDS")


class DataError(ValueError):
    """Unreadable, malformed or inconsistent input file."""


class SchemaVersionError(DataError):
    pass


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_text(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _fmt(x):
    return repr(float(x))


# ---- CSV ----

def format_series(y):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"y{n}" for n in range(y.shape[1])])
    for t, row in enumerate(y):
        w.writerow([t] + [_fmt(v) for v in row])
    return buf.getvalue()


def save_series(path, y):
    """Write a ``(T, N)`` series with header ``t,y0,...,y{N-1}``."""
    atomic_write(path, format_series(y))


def _read_table(path, first_col="t"):
    rows = list(csv.reader(io.StringIO(_read_text(path))))
    if not rows or not rows[0] or rows[0][0] != first_col:
        raise DataError(f"{path}: expected a header starting with '{first_col}'")
    header, body = rows[0], [r for r in rows[1:] if r]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
    return header, body


def load_series(path):
    header, body = _read_table(path)
    if len(header) < 2 or header[1:] != [f"y{n}" for n in range(len(header) - 1)]:
        raise DataError(f"{path}: series header must be t,y0,...,y{{N-1}}")
    try:
        y = np.array([[float(v) for v in r[1:]] for r in body], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if len(y) == 0:
        raise DataError(f"{path}: series has no rows")
    if not np.all(np.isfinite(y)):
        raise DataError(f"{path}: series contains non-finite values")
    return y.reshape(len(body), len(header) - 1)


def save_states(path, states):
    lines = ["t,state"] + [f"{t},{int(s)}" for t, s in enumerate(states)]
    atomic_write(path, "\n".join(lines) + "\n")


def load_states(path):
    header, body = _read_table(path)
    if header != ["t", "state"]:
        raise DataError(f"{path}: state header must be t,state")
    try:
        return np.array([int(r[1]) for r in body], dtype=int)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def save_trace(path, loglik):
    lines = ["iter,loglik"] + [f"{i},{_fmt(v)}" for i, v in enumerate(loglik)]
    atomic_write(path, "\n".join(lines) + "\n")


def load_trace(path):
    header, body = _read_table(path, "iter")
    if header != ["iter", "loglik"]:
        raise DataError(f"{path}: trace header must be iter,loglik")
    return np.array([float(r[1]) for r in body])


def save_table(path, header, rows):
    """Generic CSV with floats written at full precision."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    atomic_write(path, buf.getvalue())


# ---- JSON models ----

def _enc(a):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("model arrays must be finite")
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _dec(obj, name, shape=None):
    try:
        dims = [int(s) for s in obj["shape"]]
        data = obj["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"array {name!r} needs integer 'shape' and 'data' fields") from exc
    if any(s < 0 for s in dims):
        raise ShapeError(f"array {name!r} has a negative dimension")
    expected = math.prod(dims)
    if len(data) != expected:
        raise ShapeError(f"array {name!r} declares shape {dims} ({expected} values) "
                         f"but holds {len(data)}")
    if shape is not None and tuple(dims) != tuple(shape):
        raise ShapeError(f"array {name!r} has shape {dims}, expected {list(shape)}")
    try:
        return np.array(data, dtype=float).reshape(dims)
    except (TypeError, ValueError) as exc:
        raise DataError(f"array {name!r} holds non-numeric data") from exc


def model_to_dict(m):
    """JSON-ready dictionary for SaltParams, ArhmmParams or LdsParams."""
    head = {"schema_version": SCHEMA_VERSION, "layout": "row-major"}
    if isinstance(m, SaltParams):
        arrays = {"b": _enc(m.b), "Sigma": _enc(m.Sigma), "pi": _enc(m.tm.pi),
                  "init": _enc(m.tm.init)}
        for h, f in enumerate(m.factors):
            for name in ("U", "V", "W", "G"):
                arrays[f"{name}{h}"] = _enc(getattr(f, name))
        return {**head, "kind": "SALT", "mode": m.mode, "H": m.H, "N": m.N, "L": m.L,
                "D": m.D, "arrays": arrays}
    if isinstance(m, ArhmmParams):
        arrays = {"A": _enc(m.A), "b": _enc(m.b), "Sigma": _enc(m.Sigma),
                  "pi": _enc(m.tm.pi), "init": _enc(m.tm.init)}
        return {**head, "kind": "ARHMM", "mode": None, "H": m.H, "N": m.N, "L": m.L,
                "D": None, "arrays": arrays}
    if isinstance(m, LdsParams):
        arrays = {k: _enc(getattr(m, k)) for k in ("A", "b", "Q", "C", "d", "R")}
        return {**head, "kind": "LDS", "mode": None, "H": 1, "N": m.obs_dim, "L": None,
                "D": m.latent_dim, "arrays": arrays}
    raise TypeError(f"cannot serialize {type(m).__name__}")


def dumps_model(m):
    return json.dumps(model_to_dict(m), indent=1, allow_nan=False) + "\n"


def _int_field(doc, key):
    v = doc.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise DataError(f"model field {key!r} must be a positive integer, got {v!r}")
    return v


def model_from_dict(doc):
    if not isinstance(doc, dict):
        raise DataError("model file must contain a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported schema_version {version!r}, "
                                 f"expected {SCHEMA_VERSION}")
    if doc.get("layout") != "row-major":
        raise DataError(f"unsupported array layout {doc.get('layout')!r}")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise DataError(f"unknown model kind {kind!r}")
    arrays = doc.get("arrays")
    if not isinstance(arrays, dict):
        raise DataError("model file has no 'arrays' object")

    def get(name, shape=None):
        if name not in arrays:
            raise DataError(f"model file is missing array {name!r}")
        return _dec(arrays[name], name, shape)

    if kind == "LDS":
        N, D = _int_field(doc, "N"), _int_field(doc, "D")
        shapes = {"A": (D, D), "b": (D,), "Q": (D, D), "C": (N, D), "d": (N,), "R": (N, N)}
        return LdsParams(**{k: get(k, s) for k, s in shapes.items()})

    H, N, L = (_int_field(doc, k) for k in ("H", "N", "L"))
    try:
        tm = TransitionModel(get("pi", (H, H)), get("init", (H,)))
    except ValueError as exc:
        raise DataError(f"invalid transition model: {exc}") from exc
    b, Sigma = get("b", (H, N)), get("Sigma", (H, N, N))
    if kind == "ARHMM":
        return ArhmmParams(get("A", (H, N, N, L)), b, Sigma, tm)

    D, mode = _int_field(doc, "D"), doc.get("mode")
    if mode not in ("cp", "tucker"):
        raise DataError(f"unknown SALT mode {mode!r}")
    factors = [TuckerFactors(get(f"U{h}", (N, D)), get(f"V{h}", (N, D)), get(f"W{h}", (L, D)),
                             get(f"G{h}", (D, D, D))) for h in range(H)]
    return SaltParams(factors, b, Sigma, tm, mode)


def loads_model(text, source="<string>"):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise DataError(f"{source}: JSON parse error at byte offset {offset}: {exc.msg}") from exc
    return model_from_dict(doc)


def save_model(path, m):
    atomic_write(path, dumps_model(m))


def load_model(path):
    return loads_model(_read_text(path), os.fspath(path))


def save_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=1, allow_nan=False) + "\n")
