"""File formats: PGM images, raw float field files, and config parsing.

Field files ("LFM1") are a minimal bit-exact container: a text header
followed by little-endian float32 samples, row-major, component-interleaved.
PGM covers P2 (ASCII) and P5 (binary) with maxval up to 65535 on read;
writes are always P5 with maxval 255, quantizing floor(value * 255).

Configuration files are strict "key = value" text with '#' comments and
nested kernel blocks:

    n_timesteps = 8
    sim_weight = 1.0
    kernel {
        family = sum
        term {
            family = symmetrized
            c = 0.5
            term {
                family = gaussian
                sigma = 25
            }
        }
        term {
            family = gaussian
            sigma = 7
        }
    }

Block openers ("name {") and closers ("}") sit on their own lines. Unknown
keys are errors. Partition parts carry a `weights_file` key naming a
components=1 field file (resolved relative to the config file).
"""

from __future__ import annotations

import os

import numpy as np

from .errors import (BadMagicError, BadValueError, HeaderMismatchError,
                     MalformedHeaderError, MissingKernelError,
                     TruncatedPayloadError, UnknownKeyError)
from .grid import Grid2D, Image, Mask, VectorField
from .kernels import (GaussianKernel, PartitionKernel, SumKernel,
                      SymmetrizedKernel)
from .matching import MatchConfig

_MAGIC = b"LFM1\n"


# --- field files -------------------------------------------------------------

def write_field(path, obj):
    """Write an Image (components=1) or VectorField (components=2)."""
    if isinstance(obj, VectorField):
        comps = 2
        payload = np.empty(obj.grid.shape + (2,), dtype="<f4")
        payload[:, :, 0] = obj.ux
        payload[:, :, 1] = obj.uy
    elif isinstance(obj, (Image, Mask)):
        comps = 1
        payload = np.asarray(obj.data, dtype="<f4")
    else:
        raise TypeError(f"cannot write {type(obj).__name__} as a field file")
    g = obj.grid
    header = (f"width={g.width}\nheight={g.height}\n"
              f"spacing={format(g.spacing, '.17g')}\ncomponents={comps}\ndata:\n")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(header.encode("ascii"))
        f.write(payload.tobytes())


def read_field(path):
    """Read a field file; returns an Image or a VectorField per its header."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(_MAGIC):
        raise BadMagicError(f"{path}: missing LFM1 magic")
    rest = blob[len(_MAGIC):]
    fields = {}
    for key in ("width", "height", "spacing", "components"):
        nl = rest.find(b"\n")
        if nl < 0:
            raise MalformedHeaderError(f"{path}: truncated header")
        line = rest[:nl].decode("ascii", errors="replace")
        rest = rest[nl + 1:]
        k, sep, val = line.partition("=")
        if sep != "=" or k != key:
            raise MalformedHeaderError(f"{path}: expected '{key}=...', got {line!r}")
        fields[key] = val
    if not rest.startswith(b"data:\n"):
        raise MalformedHeaderError(f"{path}: missing 'data:' marker")
    payload = rest[len(b"data:\n"):]
    try:
        width = int(fields["width"])
        height = int(fields["height"])
        spacing = float(fields["spacing"])
        comps = int(fields["components"])
    except ValueError as e:
        raise MalformedHeaderError(f"{path}: bad header value ({e})") from None
    if comps not in (1, 2):
        raise MalformedHeaderError(f"{path}: components must be 1 or 2")
    expected = width * height * comps * 4
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}")
    grid = Grid2D(width, height, spacing)
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if comps == 1:
        return Image(grid, data.reshape(height, width))
    data = data.reshape(height, width, 2)
    return VectorField(grid, data[:, :, 0], data[:, :, 1])


def read_vector_field(path) -> VectorField:
    obj = read_field(path)
    if not isinstance(obj, VectorField):
        raise HeaderMismatchError(f"{path}: expected components=2, found a scalar field")
    return obj


def read_scalar_field(path) -> Image:
    obj = read_field(path)
    if not isinstance(obj, Image):
        raise HeaderMismatchError(f"{path}: expected components=1, found a vector field")
    return obj


# --- PGM ----------------------------------------------------------------------

def _pgm_tokens(blob):
    """Yield header tokens, skipping whitespace and '#' comments."""
    i = 0
    n = len(blob)
    while i < n:
        c = blob[i:i + 1]
        if c.isspace():
            i += 1
            continue
        if c == b"#":
            j = blob.find(b"\n", i)
            i = n if j < 0 else j + 1
            continue
        j = i
        while j < n and not blob[j:j + 1].isspace():
            j += 1
        yield blob[i:j], j
        i = j


def read_pgm(path, spacing: float = 1.0) -> Image:
    """Read a P2 or P5 grayscale image, mapping intensities to [0, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    toks = _pgm_tokens(blob)
    try:
        magic, _ = next(toks)
    except StopIteration:
        raise MalformedHeaderError(f"{path}: empty file") from None
    if magic not in (b"P2", b"P5"):
        raise MalformedHeaderError(f"{path}: not a PGM (magic {magic!r})")
    try:
        (wtok, _), (htok, _), (mtok, mend) = next(toks), next(toks), next(toks)
        width, height, maxval = int(wtok), int(htok), int(mtok)
    except (StopIteration, ValueError):
        raise MalformedHeaderError(f"{path}: unparsable PGM header") from None
    if width < 1 or height < 1 or not (0 < maxval <= 65535):
        raise MalformedHeaderError(f"{path}: bad PGM dimensions or maxval")
    count = width * height
    if magic == b"P5":
        payload = blob[mend + 1:]
        if maxval <= 255:
            raw = np.frombuffer(payload[:count], dtype=np.uint8)
        else:
            raw = np.frombuffer(payload[:2 * count], dtype=">u2")
        if raw.size != count:
            raise TruncatedPayloadError(
                f"{path}: {raw.size} samples, header promises {count}")
    else:
        vals = []
        for tok, _ in _pgm_tokens(blob[mend:]):
            vals.append(int(tok))
            if len(vals) == count:
                break
        if len(vals) != count:
            raise TruncatedPayloadError(
                f"{path}: {len(vals)} samples, header promises {count}")
        raw = np.array(vals)
    data = raw.astype(np.float64).reshape(height, width) / float(maxval)
    return Image(Grid2D(width, height, spacing), data)


def write_pgm(path, img: Image):
    """Write binary P5 with maxval 255; values clamp to [0,1], quantize by floor."""
    q = np.floor(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{img.grid.width} {img.grid.height}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(q.tobytes())


def read_mask_pgm(path) -> Mask:
    """Read a mask stored as PGM; samples must be exactly 0 or maxval."""
    img = read_pgm(path)
    return Mask(img.grid, img.data)


# --- configuration -------------------------------------------------------------

_TOP_KEYS = {"n_timesteps": int, "sim_weight": float, "max_iters": int,
             "step_init": float, "step_shrink": float, "tol_grad": float,
             "stepper": str, "mask_file": str, "momentum_mask_file": str}


class _Block(dict):
    """Parsed block: scalar entries plus a list of child (name, _Block)."""

    def __init__(self):
        super().__init__()
        self.children = []


def _parse_blocks(text, path="<config>"):
    root = _Block()
    stack = [root]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.endswith("{"):
            name = line[:-1].strip()
            if not name.isidentifier():
                raise BadValueError(f"{path}:{lineno}: bad block name {name!r}")
            child = _Block()
            stack[-1].children.append((name, child))
            stack.append(child)
            continue
        if line == "}":
            if len(stack) == 1:
                raise BadValueError(f"{path}:{lineno}: unmatched '}}'")
            stack.pop()
            continue
        key, sep, value = line.partition("=")
        if sep != "=":
            raise BadValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise BadValueError(f"{path}:{lineno}: empty key or value")
        if key in stack[-1]:
            raise BadValueError(f"{path}:{lineno}: duplicate key {key!r}")
        stack[-1][key] = value
    if len(stack) != 1:
        raise BadValueError(f"{path}: unclosed block")
    return root


def _coerce(key, value, typ, path):
    if typ is str:
        return value
    try:
        return typ(value)
    except ValueError:
        raise BadValueError(f"{path}: key {key!r} has bad value {value!r}") from None


def _build_kernel(block, base_dir, path):
    family = block.get("family")
    if family is None:
        raise BadValueError(f"{path}: kernel block lacks a 'family' key")
    known = {"family"}
    children = block.children

    def reject_unknown(allowed):
        for k in block:
            if k not in allowed:
                raise UnknownKeyError(f"{path}: unknown kernel key {k!r} for {family}")

    try:
        if family == "gaussian":
            reject_unknown({"family", "sigma"})
            if children:
                raise BadValueError(f"{path}: gaussian kernels take no sub-blocks")
            if "sigma" not in block:
                raise BadValueError(f"{path}: gaussian kernel needs sigma")
            return GaussianKernel(_coerce("sigma", block["sigma"], float, path))
        if family == "sum":
            reject_unknown(known)
            terms = [_build_kernel(c, base_dir, path) for name, c in children
                     if _expect_term(name, path)]
            if not terms:
                raise BadValueError(f"{path}: sum kernel needs at least one term")
            return SumKernel(terms)
        if family == "symmetrized":
            reject_unknown({"family", "c"})
            if "c" not in block:
                raise BadValueError(f"{path}: symmetrized kernel needs c")
            inner = [_build_kernel(c, base_dir, path) for name, c in children
                     if _expect_term(name, path)]
            if len(inner) != 1:
                raise BadValueError(f"{path}: symmetrized kernel needs exactly one term")
            return SymmetrizedKernel(_coerce("c", block["c"], float, path), inner[0])
        if family == "partition":
            reject_unknown(known)
            parts = []
            for name, c in children:
                _expect_term(name, path)
                wf = c.get("weights_file")
                if wf is None:
                    raise BadValueError(f"{path}: partition term needs weights_file")
                weights = read_scalar_field(os.path.join(base_dir, wf))
                sub = _Block()
                sub.update({k: v for k, v in c.items() if k != "weights_file"})
                sub.children = c.children
                parts.append((weights, _build_kernel(sub, base_dir, path)))
            if not parts:
                raise BadValueError(f"{path}: partition kernel needs at least one term")
            return PartitionKernel(parts)
    except ValueError as e:
        raise BadValueError(f"{path}: {e}") from None
    raise BadValueError(f"{path}: unknown kernel family {family!r}")


def _expect_term(name, path):
    if name != "term":
        raise UnknownKeyError(f"{path}: unexpected block {name!r} inside a kernel")
    return True


def parse_config(path) -> MatchConfig:
    """Parse a registration config file into a validated MatchConfig."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    base_dir = os.path.dirname(os.path.abspath(path))
    root = _parse_blocks(text, path)

    kernels = [c for name, c in root.children if name == "kernel"]
    others = [name for name, _ in root.children if name != "kernel"]
    if others:
        raise UnknownKeyError(f"{path}: unknown block {others[0]!r}")
    if not kernels:
        raise MissingKernelError(f"{path}: no kernel block")
    if len(kernels) > 1:
        raise BadValueError(f"{path}: more than one kernel block")
    kernel = _build_kernel(kernels[0], base_dir, path)

    kwargs = {}
    for key, value in root.items():
        if key not in _TOP_KEYS:
            raise UnknownKeyError(f"{path}: unknown key {key!r}")
        kwargs[key] = _coerce(key, value, _TOP_KEYS[key], path)

    mask_file = kwargs.pop("mask_file", None)
    momentum_mask_file = kwargs.pop("momentum_mask_file", None)
    try:
        cfg = MatchConfig(kernel=kernel, **kwargs)
    except ValueError as e:
        raise BadValueError(f"{path}: {e}") from None
    if mask_file:
        cfg.mask = _load_mask(os.path.join(base_dir, mask_file))
    if momentum_mask_file:
        cfg.momentum_mask = _load_mask(os.path.join(base_dir, momentum_mask_file))
    return cfg


def _load_mask(path) -> Mask:
    if path.endswith(".pgm"):
        return read_mask_pgm(path)
    img = read_scalar_field(path)
    return Mask(img.grid, img.data)
