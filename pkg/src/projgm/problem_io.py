"""Reading and writing problem files (format ``pgm/1``).

A problem file is a JSON object::

    {
      "format_version": "pgm/1",
      "n": 2, "m": 2,
      "basis": [{"Q": [[1, 0], [0, 1]], "xf": [0, 0]},
                {"Q": [[2, 0], [0, 1]], "phi": [-4, 0]}],
      "polytope": {"A_eq": [], "b_eq": [], "A": [[1, 0]], "b": [3]},
      "y": [1, 1],
      "metadata": {}
    }

``polytope`` and ``metadata`` are optional. Each basis entry carries ``Q``
and exactly one of ``phi`` or ``xf``. Numbers are written with Python's
shortest round-trip float repr, so parse(serialize(p)) is exact.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .core import Polytope, ProblemInstance, QuadraticFunction

__all__ = ["FORMAT_VERSION", "ProblemFormatError", "parse", "serialize", "load", "dump", "sha256"]

FORMAT_VERSION = "pgm/1"


class ProblemFormatError(ValueError):
    pass


def _matrix(raw, rows: int, cols: int, name: str) -> np.ndarray:
    a = np.asarray(raw, dtype=float)
    if a.size == 0 and rows == 0:
        return np.zeros((0, cols))
    if a.shape != (rows, cols):
        raise ProblemFormatError(f"{name} has shape {a.shape}, expected {(rows, cols)}")
    return a


def _vector(raw, size: int, name: str) -> np.ndarray:
    a = np.asarray(raw, dtype=float)
    if a.shape != (size,):
        raise ProblemFormatError(f"{name} has shape {a.shape}, expected ({size},)")
    return a


def parse(data: dict) -> ProblemInstance:
    """Build a :class:`ProblemInstance` from a decoded problem file.

    Raises :class:`ProblemFormatError` on a version mismatch, a missing
    field or inconsistent dimensions.
    """
    if not isinstance(data, dict):
        raise ProblemFormatError("problem file must be a JSON object")
    if data.get("format_version") != FORMAT_VERSION:
        raise ProblemFormatError(f"format_version must be {FORMAT_VERSION!r}")
    try:
        n, m = int(data["n"]), int(data["m"])
        raw_basis, raw_y = data["basis"], data["y"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ProblemFormatError(f"missing or malformed field: {exc}") from exc
    if n < 1 or m < 1:
        raise ProblemFormatError("n and m must be >= 1")
    if not isinstance(raw_basis, list) or len(raw_basis) != m:
        raise ProblemFormatError(f"basis must list m={m} functions")
    try:
        basis = []
        for j, f in enumerate(raw_basis, start=1):
            if not isinstance(f, dict) or "Q" not in f or (("phi" in f) == ("xf" in f)):
                raise ProblemFormatError(f"basis entry {j} needs Q and exactly one of phi / xf")
            Q = _matrix(f["Q"], n, n, f"Q_{j}")
            if "xf" in f:
                basis.append(QuadraticFunction.from_center(Q, _vector(f["xf"], n, f"xf_{j}")))
            else:
                basis.append(QuadraticFunction(Q, _vector(f["phi"], n, f"phi_{j}")))
        y = _vector(raw_y, n, "y")
        polytope = None
        if data.get("polytope") is not None:
            P = data["polytope"]
            A_eq = np.asarray(P.get("A_eq", []), dtype=float)
            A = np.asarray(P.get("A", []), dtype=float)
            q = A_eq.shape[0] if A_eq.size else 0
            r = A.shape[0] if A.size else 0
            polytope = Polytope(
                _matrix(P.get("A_eq", []), q, n, "A_eq"),
                _vector(P.get("b_eq", []), q, "b_eq"),
                _matrix(P.get("A", []), r, n, "A"),
                _vector(P.get("b", []), r, "b"),
            )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ProblemFormatError):
            raise
        raise ProblemFormatError(str(exc)) from exc
    metadata = data.get("metadata") or {}
    if not isinstance(metadata, dict):
        raise ProblemFormatError("metadata must be an object")
    return ProblemInstance(basis, y, polytope, dict(metadata))


def serialize(instance: ProblemInstance) -> dict:
    basis = []
    for f in instance.basis:
        entry = {"Q": f.Q.tolist()}
        if f.center is not None:
            entry["xf"] = f.center.tolist()
        else:
            entry["phi"] = f.phi.tolist()
        basis.append(entry)
    out = {"format_version": FORMAT_VERSION, "n": instance.n, "m": instance.m, "basis": basis}
    P = instance.polytope
    if P is not None:
        out["polytope"] = {
            "A_eq": P.A_eq.tolist(),
            "b_eq": P.b_eq.tolist(),
            "A": P.A.tolist(),
            "b": P.b.tolist(),
        }
    out["y"] = instance.y.tolist()
    if instance.metadata:
        out["metadata"] = dict(instance.metadata)
    return out


def load(path) -> tuple[ProblemInstance, bytes]:
    """Parse the file at ``path``; also returns its raw bytes (for hashing)."""
    raw = Path(path).read_bytes()
    try:
        data = json.loads(raw)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProblemFormatError(f"not valid JSON: {exc}") from exc
    return parse(data), raw


def dump(instance: ProblemInstance, path) -> None:
    Path(path).write_text(json.dumps(serialize(instance), indent=2) + "\n")


def sha256(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()
