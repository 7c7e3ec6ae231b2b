"""Text model files and binary dual-value field files.

Model file layout (``#`` starts a comment; numbers are whitespace separated,
row-major over ``(x, a, s)``)::

    [meta]
    beta = 0.4
    states = 2
    actions = 3
    shocks = 1
    constraints = 1
    x0 = 0

    [transition]
    1.0

    [reward]
    ...
    [constraint 0]
    ...
    [threshold 0]      # a single number is broadcast to every (x, a, s)
    0.0
    [horizon 0]
    inf                # or 1
    [feasible]         # optional, 0/1 flags, default all feasible
    [zeta]             # optional, next-state indices, default x' = x

Field file layout (little endian)::

    magic  b"RDVF" | u32 version | u8 variant (0 inf-sup, 1 sup-inf)
    u32 I | u32 X | u32 S | f64 lipschitz
    I x u8 reset flag
    I x (u32 n_i, n_i x f64 knots)
    X*S*prod(n_i) x f64 values
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .model import ModelSpec

__all__ = ["ModelParseError", "load_model", "save_model", "dump_model", "parse_model",
           "save_field", "load_field"]

_META_KEYS = ("beta", "states", "actions", "shocks", "constraints")
_MAGIC = b"RDVF"
_VERSION = 1


class ModelParseError(ValueError):
    pass


def _fmt(v):
    return repr(float(v))


def dump_model(spec: ModelSpec) -> str:
    X, A, S = spec.reward.shape
    lines = [
        "[meta]",
        f"beta = {_fmt(spec.beta)}",
        f"states = {X}",
        f"actions = {A}",
        f"shocks = {S}",
        f"constraints = {spec.n_constraints}",
        f"x0 = {spec.x0}",
        "",
        "[transition]",
    ]
    lines += [" ".join(_fmt(v) for v in row) for row in spec.transition]

    def table(name, arr, fmt=_fmt):
        lines.append("")
        lines.append(f"[{name}]")
        for row in arr.reshape(X * A, S):
            lines.append(" ".join(fmt(v) for v in row))

    table("reward", spec.reward)
    for i in range(spec.n_constraints):
        table(f"constraint {i}", spec.constraints[i])
        gb = spec.thresholds[i]
        if np.all(gb == gb.flat[0]):
            lines += ["", f"[threshold {i}]", _fmt(gb.flat[0])]
        else:
            table(f"threshold {i}", gb)
        h = spec.horizons[i]
        lines += ["", f"[horizon {i}]", "inf" if h == math.inf else "1"]
    table("feasible", spec.feasible.astype(int), fmt=str)
    table("zeta", spec.next_state, fmt=str)
    return "\n".join(lines) + "\n"


def save_model(spec: ModelSpec, path) -> None:
    Path(path).write_text(dump_model(spec))


def parse_model(text: str, source="<string>") -> ModelSpec:
    sections: dict[str, list[tuple[int, str]]] = {}
    order = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ModelParseError(f"{source}:{lineno}: malformed section header {raw!r}")
            current = " ".join(line[1:-1].split())
            if current in sections:
                raise ModelParseError(f"{source}:{lineno}: duplicate section [{current}]")
            sections[current] = []
            order.append(current)
            continue
        if current is None:
            raise ModelParseError(f"{source}:{lineno}: content before first section")
        sections[current].append((lineno, line))

    if "meta" not in sections:
        raise ModelParseError(f"{source}: missing [meta] section")
    meta = {}
    for lineno, line in sections["meta"]:
        if "=" not in line:
            raise ModelParseError(f"{source}:{lineno}: expected key = value in [meta]")
        k, v = (t.strip() for t in line.split("=", 1))
        meta[k] = (lineno, v)
    for k in _META_KEYS:
        if k not in meta:
            raise ModelParseError(f"{source}: [meta] missing key '{k}'")

    def meta_val(k, conv):
        lineno, v = meta[k]
        try:
            return conv(v)
        except ValueError:
            raise ModelParseError(f"{source}:{lineno}: bad value for '{k}': {v!r}") from None

    beta = meta_val("beta", float)
    X, A, S, I = (meta_val(k, int) for k in ("states", "actions", "shocks", "constraints"))
    x0 = meta_val("x0", int) if "x0" in meta else 0

    def numbers(name, count, conv=float, required=True, allow_scalar=False):
        if name not in sections:
            if required:
                raise ModelParseError(f"{source}: missing section [{name}]")
            return None
        toks = []
        for lineno, line in sections[name]:
            for t in line.split():
                try:
                    toks.append(conv(t))
                except ValueError:
                    raise ModelParseError(
                        f"{source}:{lineno}: bad number {t!r} in [{name}]") from None
        if allow_scalar and len(toks) == 1:
            return np.full(count, toks[0])
        if len(toks) != count:
            first = sections[name][0][0] if sections[name] else "?"
            raise ModelParseError(
                f"{source}:{first}: [{name}] has {len(toks)} values, expected {count}")
        return np.array(toks)

    n = X * A * S
    P = numbers("transition", S * S).reshape(S, S)
    r = numbers("reward", n).reshape(X, A, S)
    g = np.empty((I, X, A, S))
    gb = np.empty((I, X, A, S))
    horizons = []
    for i in range(I):
        g[i] = numbers(f"constraint {i}", n).reshape(X, A, S)
        gb[i] = numbers(f"threshold {i}", n, allow_scalar=True).reshape(X, A, S)
        key = f"horizon {i}"
        if key not in sections:
            horizons.append(math.inf)
            continue
        vals = [t for _, line in sections[key] for t in line.split()]
        if vals not in (["inf"], ["1"]):
            lineno = sections[key][0][0] if sections[key] else "?"
            raise ModelParseError(f"{source}:{lineno}: [{key}] must be '1' or 'inf'")
        horizons.append(math.inf if vals[0] == "inf" else 1)
    feas = numbers("feasible", n, conv=int, required=False)
    zeta = numbers("zeta", n, conv=int, required=False)
    known = {"meta", "transition", "reward", "feasible", "zeta"}
    known |= {f"{p} {i}" for p in ("constraint", "threshold", "horizon") for i in range(I)}
    extra = [sec for sec in order if sec not in known]
    if extra:
        raise ModelParseError(f"{source}: unknown section(s) {extra}")
    return ModelSpec(
        transition=P,
        beta=beta,
        reward=r,
        constraints=g,
        thresholds=gb,
        horizons=tuple(horizons),
        feasible=None if feas is None else feas.reshape(X, A, S).astype(bool),
        next_state=None if zeta is None else zeta.reshape(X, A, S).astype(np.int64),
        x0=x0,
    )


def load_model(path) -> ModelSpec:
    path = Path(path)
    return parse_model(path.read_text(), source=str(path))


def save_field(field, path) -> None:
    variant = {"infsup": 0, "supinf": 1}[field.variant]
    I = len(field.grids)
    X, S = field.values.shape[:2]
    buf = [_MAGIC, struct.pack("<IBIIId", _VERSION, variant, I, X, S, field.lipschitz)]
    buf.append(bytes(int(b) for b in field.reset))
    for gr in field.grids:
        buf.append(struct.pack("<I", len(gr)))
        buf.append(np.ascontiguousarray(gr, dtype="<f8").tobytes())
    buf.append(np.ascontiguousarray(field.values, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(buf))


def load_field(path):
    from .dual_value import DualValueField

    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a dual-value field file")
    off = 4
    head = struct.Struct("<IBIIId")
    version, variant, I, X, S, L = head.unpack_from(data, off)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported field file version {version}")
    off += head.size
    reset = np.frombuffer(data, dtype=np.uint8, count=I, offset=off).astype(bool)
    off += I
    grids = []
    for _ in range(I):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        grids.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(float))
        off += 8 * n
    shape = (X, S) + tuple(len(gr) for gr in grids)
    count = int(np.prod(shape))
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(float)
    return DualValueField(
        grids=tuple(grids),
        values=values.reshape(shape),
        lipschitz=L,
        variant=("infsup", "supinf")[variant],
        reset=reset,
    )
