"""Reading and writing point sets, correspondences, transforms and traces."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .correspondence import CorrespondenceSet
from .errors import DimensionMismatchError, InvalidRotationError, RegistrationError
from .geometry import PointSet, RigidTransform, check_rotation

FLOAT_FMT = ".17g"
TRACE_HEADER = ["iteration", "objective", "primal_residual", "dual_residual"]


class PointFileError(RegistrationError, ValueError):
    """A point file could not be parsed."""


def _fmt(x: float) -> str:
    return format(float(x), FLOAT_FMT)


def _rows_to_points(rows, path) -> np.ndarray:
    if not rows:
        raise PointFileError(f"{path}: no points")
    dims = {len(r) for r in rows}
    if len(dims) > 1:
        first = len(rows[0])
        bad = next(k for k, r in enumerate(rows) if len(r) != first)
        raise DimensionMismatchError(
            f"{path}: row {bad + 1} has {len(rows[bad])} coordinates, expected {first}")
    try:
        return np.array(rows, dtype=float)
    except ValueError as exc:
        raise PointFileError(f"{path}: non-numeric coordinate ({exc})") from None


def _read_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            row = [c.strip() for c in row if c.strip() != ""]
            if not row or row[0].startswith("#"):
                continue
            if k == 0 and not _is_number(row[0]):
                continue  # header
            rows.append(row)
    return _rows_to_points(rows, path)


def _read_xyz(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].split()
            if line:
                rows.append(line)
    return _rows_to_points(rows, path)


def _read_json(path: Path) -> np.ndarray:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PointFileError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(doc, dict):
        doc = doc.get("points")
    if not isinstance(doc, list) or not all(isinstance(r, list) for r in doc):
        raise PointFileError(f"{path}: expected an array of coordinate arrays")
    return _rows_to_points(doc, path)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _read_ply(path: Path) -> np.ndarray:
    """ASCII PLY; only the x, y(, z) properties of the vertex element are used."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        text = raw.decode("latin-1")
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PointFileError(f"{path}: missing 'ply' magic line")

    elements = []  # (name, count, [property names])
    fmt = None
    k = 1
    while True:
        if k >= len(lines):
            raise PointFileError(f"{path}: header has no end_header")
        tok = lines[k].split()
        k += 1
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element" and len(tok) == 3:
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property" and elements:
            elements[-1][2].append(tok[-1])
        else:
            raise PointFileError(f"{path}: malformed header line {k}: {lines[k - 1]!r}")
    if fmt != "ascii":
        raise PointFileError(f"{path}: only ASCII PLY is supported (format {fmt})")

    body = lines[k:]
    pos = 0
    for name, count, props in elements:
        if name != "vertex":
            pos += count
            continue
        axes = [p for p in ("x", "y", "z") if p in props]
        if axes[:2] != ["x", "y"]:
            raise PointFileError(f"{path}: vertex element lacks x/y properties")
        cols = [props.index(a) for a in axes]
        rows = []
        for line in body[pos:pos + count]:
            vals = line.split()
            if len(vals) < len(props):
                raise PointFileError(f"{path}: vertex line {line!r} has too few values")
            rows.append([vals[c] for c in cols])
        if len(rows) != count:
            raise PointFileError(f"{path}: expected {count} vertices, found {len(rows)}")
        return _rows_to_points(rows, path)
    raise PointFileError(f"{path}: no vertex element")


_READERS = {".ply": _read_ply, ".csv": _read_csv, ".json": _read_json,
            ".xyz": _read_xyz, ".txt": _read_xyz}


def load_point_set(path, id: int = 0, center: bool = False) -> PointSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    reader = _READERS.get(path.suffix.lower())
    if reader is None:
        raise PointFileError(f"{path}: unsupported extension {path.suffix!r}")
    pts = reader(path)
    if center:
        pts = pts - pts.mean(axis=0)
    try:
        return PointSet(pts, id=id)
    except ValueError as exc:
        raise PointFileError(f"{path}: {exc}") from None


def save_point_set(ps: PointSet, path) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".json":
        path.write_text(json.dumps(ps.points.tolist()))
    elif suffix == ".ply":
        if ps.dim != 3:
            raise DimensionMismatchError("PLY output needs 3-d points")
        head = ["ply", "format ascii 1.0", f"element vertex {len(ps)}",
                "property double x", "property double y", "property double z", "end_header"]
        body = [" ".join(_fmt(v) for v in p) for p in ps.points]
        path.write_text("\n".join(head + body) + "\n")
    else:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for p in ps.points:
                w.writerow([_fmt(v) for v in p])


def load_correspondences(path) -> CorrespondenceSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        return CorrespondenceSet.from_json(path.read_text())
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise RegistrationError(f"{path}: malformed correspondence file ({exc})") from None


def save_correspondences(corr: CorrespondenceSet, path) -> None:
    Path(path).write_text(corr.to_json())


def transforms_to_dict(transforms) -> dict:
    return {"transforms": [
        {
            "d": t.dim,
            "rotation": t.rotation.reshape(-1).tolist(),
            "translation": t.translation.tolist(),
            "determinant": float(np.linalg.det(t.rotation)),
        }
        for t in transforms
    ]}


def transforms_from_dict(doc: dict) -> list:
    out = []
    for k, entry in enumerate(doc["transforms"]):
        d = int(entry["d"])
        R = np.asarray(entry["rotation"], dtype=float)
        if R.size != d * d:
            raise DimensionMismatchError(f"transform {k}: {R.size} rotation entries for d={d}")
        try:
            R = check_rotation(R.reshape(d, d), tol=1e-6)
        except InvalidRotationError as exc:
            raise InvalidRotationError(f"transform {k}: {exc}") from None
        out.append(RigidTransform(R, entry["translation"]))
    return out


def save_transforms(transforms, path) -> None:
    Path(path).write_text(json.dumps(transforms_to_dict(transforms), indent=1))


def load_transforms(path) -> list:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return transforms_from_dict(json.loads(path.read_text()))


def write_trace(history, path) -> None:
    """Per-iteration objective and residuals as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for k, rec in enumerate(history, start=1):
            w.writerow([k, _fmt(rec.objective), _fmt(rec.primal_residual), _fmt(rec.dual_residual)])


def read_trace(path) -> list:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def load_pairing(path) -> list:
    """Pair list from JSON (``[[i, j], ...]``) or text with one ``i j`` / ``i,j`` pair per line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = [line.replace(",", " ").split() for line in text.splitlines()
               if line.strip() and not line.lstrip().startswith("#")]
    try:
        return [(int(a), int(b)) for a, b in doc]
    except (TypeError, ValueError) as exc:
        raise RegistrationError(f"{path}: malformed pairing ({exc})") from None
