"""Spectral emulation model standing in for the quantum device.

A :class:`Spectrum` holds normalised eigenvalues ``lambda_r`` in [-1, 1] with
initial-state weights ``p_r``. Chebyshev moments of the Hamiltonian in the
initial state are then ``sum_r p_r T_k(lambda_r)``, which is all either
algorithm ever sees.

Physical energies follow ``E = shift + scale * lambda``. Spectra produced by
:func:`flip_for_spe` carry ``flipped=True`` and map back through
``E = shift + scale * (1/2 - v)``.
"""
from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ContractError, ParseError, ValidationError
from .numerics import chebyshev_t

__all__ = [
    "Spectrum",
    "MomentEntry",
    "MomentTable",
    "load_spectrum",
    "save_spectrum",
    "synth_exponential",
    "flip_for_spe",
    "chebyshev_moment",
    "moment_table",
    "qpe_backenvelope",
    "write_atomic",
]

_MERGE_TOL = 1e-14
_EDGE_TOL = 1e-12


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    tmp.replace(path)


@dataclass(frozen=True)
class Spectrum:
    """Normalised spectrum with initial-state weights.

    Use :meth:`from_pairs` to build one from unsorted or degenerate data; the
    constructor itself only validates.
    """

    values: np.ndarray
    weights: np.ndarray
    shift: float = 0.0
    scale: float = 1.0
    label: str = ""
    flipped: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if v.size == 0 or v.size != w.size:
            raise ValidationError("values and weights must be non-empty and of equal length")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ValidationError("non-finite value or weight")
        bad = np.flatnonzero(np.abs(v) > 1.0 + _EDGE_TOL)
        if bad.size:
            raise ValidationError(f"normalised value {v[bad[0]]!r} lies outside [-1, 1]")
        if np.any(np.diff(v) < 0):
            raise ValidationError("values must be sorted ascending")
        if np.any(w < 0):
            raise ValidationError("weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"weights sum to {w.sum()!r}, expected 1")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValidationError("scale must be positive")
        v = np.clip(v, -1.0, 1.0)
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "shift", float(self.shift))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def from_pairs(cls, values, weights, shift=0.0, scale=1.0, label="", flipped=False,
                   renormalize: bool = False) -> "Spectrum":
        """Sort, merge coincident values and optionally renormalise weights.

        With ``renormalize=True`` weights summing to within [0.99, 1.01] are
        rescaled to 1; sums outside that band raise :class:`ValidationError`.
        """
        v = np.asarray(values, dtype=float).reshape(-1)
        w = np.asarray(weights, dtype=float).reshape(-1)
        if v.size != w.size or v.size == 0:
            raise ValidationError("values and weights must be non-empty and of equal length")
        bad = np.flatnonzero(~np.isfinite(v) | (np.abs(v) > 1.0 + _EDGE_TOL))
        if bad.size:
            raise ValidationError(f"normalised value {v[bad[0]]!r} lies outside [-1, 1]")
        if np.any(w < 0):
            raise ValidationError("weights must be non-negative")
        order = np.argsort(v, kind="stable")
        v, w = v[order], w[order]
        # merge runs of values equal to within the tolerance
        keep_v, keep_w = [v[0]], [w[0]]
        for vi, wi in zip(v[1:], w[1:]):
            if vi - keep_v[-1] <= _MERGE_TOL:
                keep_w[-1] += wi
            else:
                keep_v.append(vi)
                keep_w.append(wi)
        v, w = np.array(keep_v), np.array(keep_w)
        total = w.sum()
        if renormalize:
            if not 0.99 <= total <= 1.01:
                raise ValidationError(f"weights sum to {total:.6g}, outside [0.99, 1.01]")
            w = w / total
        return cls(v, w, shift, scale, label, flipped)

    # -- derived quantities -------------------------------------------------

    @property
    def size(self) -> int:
        return int(self.values.size)

    def physical_energies(self) -> np.ndarray:
        """Energies in Hartree, aligned with :attr:`values`."""
        if self.flipped:
            return self.shift + self.scale * (0.5 - self.values)
        return self.shift + self.scale * self.values

    @property
    def ground_index(self) -> int:
        """Index (into :attr:`values`) of the lowest physical energy."""
        return self.size - 1 if self.flipped else 0

    @property
    def ground_energy(self) -> float:
        return float(self.physical_energies()[self.ground_index])

    @property
    def p0(self) -> float:
        """Initial-state weight on the ground state."""
        return float(self.weights[self.ground_index])

    @property
    def ground_value(self) -> float:
        return float(self.values[self.ground_index])


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentEntry:
    value: float
    shots: int = 0
    is_exact: bool = False


@dataclass(frozen=True)
class MomentTable:
    """Chebyshev moments by degree.

    ``shots == 0`` on a non-exact entry means a noiseless reference value;
    sampled entries carry ``shots >= 1``. Degrees 0 and 1 are exact.
    """

    entries: Mapping[int, MomentEntry] = field(default_factory=dict)

    def __post_init__(self):
        ent = {int(k): v for k, v in dict(self.entries).items()}
        if any(k < 0 for k in ent):
            raise ContractError("moment degrees must be non-negative")
        if 0 in ent and not (ent[0].is_exact and ent[0].value == 1.0):
            raise ValidationError("degree-0 moment must be exact and equal to 1")
        for k, e in ent.items():
            if e.shots < 0:
                raise ValidationError(f"negative shot count at degree {k}")
        object.__setattr__(self, "entries", dict(sorted(ent.items())))

    @property
    def degrees(self) -> list[int]:
        return list(self.entries)

    @property
    def max_degree(self) -> int:
        return max(self.entries) if self.entries else -1

    def __contains__(self, k) -> bool:
        return int(k) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def value(self, k: int) -> float:
        try:
            return self.entries[int(k)].value
        except KeyError:
            raise ContractError(f"moment table lacks degree {k}") from None

    def values_array(self, degrees: Iterable[int] | None = None) -> np.ndarray:
        """Dense array ``a[k] = <T_k>`` over ``0..max`` (NaN where absent)."""
        if degrees is not None:
            return np.array([self.value(k) for k in degrees])
        out = np.full(self.max_degree + 1, np.nan)
        for k, e in self.entries.items():
            out[k] = e.value
        return out

    def sampled_degrees(self) -> list[int]:
        """Degrees that are not exact (targets for shot allocation)."""
        return [k for k, e in self.entries.items() if not e.is_exact]

    def with_values(self, values: Mapping[int, float], shots: Mapping[int, int] | None = None) -> "MomentTable":
        """Copy with selected values (and shot counts) replaced."""
        ent = dict(self.entries)
        for k, v in values.items():
            old = ent[int(k)]
            m = old.shots if shots is None else int(shots.get(k, old.shots))
            ent[int(k)] = MomentEntry(float(v), m, old.is_exact)
        return MomentTable(ent)

    # -- CSV ------------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["degree", "value", "shots", "is_exact"])
        for k, e in self.entries.items():
            wr.writerow([k, repr(float(e.value)), e.shots, "true" if e.is_exact else "false"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MomentTable":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["degree", "value", "shots", "is_exact"]:
            raise ParseError("expected header degree,value,shots,is_exact", 1)
        ent = {}
        for i, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            try:
                k, v, m, ex = row
                ent[int(k)] = MomentEntry(float(v), int(m), ex.strip().lower() == "true")
            except ValueError as err:
                raise ParseError(f"malformed row {row!r}: {err}", i) from None
        return cls(ent)


def chebyshev_moment(s: Spectrum, k: int) -> float:
    """``<T_k> = sum_r p_r cos(k arccos lambda_r)``."""
    return float(np.dot(s.weights, chebyshev_t(int(k), s.values)))


def _moments(s: Spectrum, degrees: np.ndarray) -> np.ndarray:
    theta = np.arccos(s.values)
    out = np.empty(degrees.size)
    # chunk to bound memory for very high degree tables
    step = max(1, 2_000_000 // max(1, theta.size))
    for i in range(0, degrees.size, step):
        d = degrees[i : i + step]
        out[i : i + step] = np.cos(np.outer(d, theta)) @ s.weights
    return out


def moment_table(s: Spectrum, degrees: Iterable[int]) -> MomentTable:
    """Exact moments for the requested degrees (0 and 1 flagged exact)."""
    degs = np.array(sorted({int(k) for k in degrees}), dtype=np.int64)
    if degs.size and degs[0] < 0:
        raise ContractError("degrees must be non-negative")
    vals = _moments(s, degs)
    ent = {}
    for k, v in zip(degs.tolist(), vals.tolist()):
        if k == 0:
            ent[0] = MomentEntry(1.0, 0, True)
        else:
            ent[k] = MomentEntry(v, 0, k == 1)
    return MomentTable(ent)


def qpe_backenvelope(K: int, M: int, p0: float) -> float:
    """Expected phase error ``pi / (K sqrt(M p0))`` of textbook phase estimation."""
    if K < 1 or M < 1 or not 0 < p0 <= 1:
        raise ContractError("need K >= 1, M >= 1 and p0 in (0, 1]")
    return math.pi / (K * math.sqrt(M * p0))


# ---------------------------------------------------------------------------
# constructors and transforms
# ---------------------------------------------------------------------------


def synth_exponential(energies, p0: float, alpha: float, shift: float, scale: float,
                      label: str = "") -> Spectrum:
    """Ground state with weight ``p0``, the rest decaying as ``exp(-alpha r)``.

    ``p_r = (1 - p0) e^{-alpha r} / sum_{k=1}^{R-1} e^{-alpha k}`` for r >= 1,
    with ``r`` counting energies in ascending order.
    """
    e = np.sort(np.asarray(energies, dtype=float).reshape(-1))
    if e.size < 2:
        raise ValidationError("need at least two energies")
    if not 0 < p0 < 1 or alpha <= 0:
        raise ValidationError("need p0 in (0, 1) and alpha > 0")
    if scale <= 0:
        raise ValidationError("scale must be positive")
    vals = (e - shift) / scale
    bad = np.flatnonzero(np.abs(vals) > 1.0)
    if bad.size:
        raise ValidationError(
            f"energy {e[bad[0]]!r} maps to {vals[bad[0]]!r} outside [-1, 1]; use a larger scale"
        )
    r = np.arange(1, e.size)
    tail = np.exp(-alpha * r)
    w = np.concatenate([[p0], (1.0 - p0) * tail / tail.sum()])
    # merge degeneracies without rescaling; the weights already sum to one
    spec = Spectrum.from_pairs(vals, w, shift, scale, label)
    return spec


def flip_for_spe(s: Spectrum, margin: float = 1e-3) -> Spectrum:
    """Map a spectrum into [0, 1] with the ground state nearest 1.

    Values are rescaled by ``2 * scale * (1 + margin)`` into [-1/2, 1/2] and
    then sent to ``v' = 1/2 - v``.
    """
    if s.flipped:
        raise ContractError("spectrum is already flipped")
    if margin < 0:
        raise ContractError("margin must be non-negative")
    new_scale = 2.0 * s.scale * (1.0 + margin)
    v = 0.5 - s.values * (s.scale / new_scale)
    return Spectrum.from_pairs(v, s.weights, s.shift, new_scale, s.label, flipped=True)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

_HEADER = re.compile(r"#\s*(shift_hartree|scale_hartree|normalized|label)\s*=\s*(.*)$")
_ROW = re.compile(r"^\(?\s*([^,()]+?)\s*,\s*([^,()]+?)\s*\)?\s*,?$")


def load_spectrum(path) -> Spectrum:
    """Read a spectrum file.

    Header comments ``# shift_hartree=``, ``# scale_hartree=`` and
    ``# normalized=true|false`` configure the transform; body rows are
    ``value,weight`` (optionally parenthesised). Several parenthesised pairs
    may share one line.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ParseError(f"cannot read {path}: {err}") from err
    meta = {"shift_hartree": 0.0, "scale_hartree": 1.0, "normalized": True, "label": path.stem}
    vals, wts = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER.match(line)
            if m:
                key, val = m.group(1), m.group(2).strip()
                try:
                    if key == "normalized":
                        if val.lower() not in ("true", "false"):
                            raise ValueError(val)
                        meta[key] = val.lower() == "true"
                    elif key == "label":
                        meta[key] = val
                    else:
                        meta[key] = float(val)
                except ValueError:
                    raise ParseError(f"bad header value for {key}: {val!r}", lineno) from None
            continue
        pieces = re.findall(r"\([^()]*\)", line) if "(" in line else [line]
        if "(" in line and re.sub(r"\([^()]*\)|[,\s]", "", line):
            raise ParseError(f"malformed row {raw!r}", lineno)
        for piece in pieces:
            m = _ROW.match(piece.strip())
            if not m:
                raise ParseError(f"malformed row {raw!r}", lineno)
            try:
                vals.append(float(m.group(1)))
                wts.append(float(m.group(2)))
            except ValueError:
                raise ParseError(f"non-numeric entry in {raw!r}", lineno) from None
    if not vals:
        raise ParseError("no spectrum rows found")
    shift, scale = meta["shift_hartree"], meta["scale_hartree"]
    if scale <= 0:
        raise ValidationError("scale_hartree must be positive")
    v = np.array(vals)
    if not meta["normalized"]:
        v = (v - shift) / scale
    bad = np.flatnonzero(np.abs(v) > 1.0 + _EDGE_TOL)
    if bad.size:
        raise ValidationError(f"normalised value {v[bad[0]]!r} (row {bad[0] + 1}) outside [-1, 1]")
    return Spectrum.from_pairs(v, wts, shift, scale, meta["label"], renormalize=True)


def save_spectrum(s: Spectrum, path) -> None:
    """Write ``s`` in the normalised text format read by :func:`load_spectrum`."""
    if s.flipped:
        raise ContractError("flipped spectra carry a non-affine transform; save the source spectrum")
    lines = [
        f"# label={s.label}",
        f"# shift_hartree={s.shift!r}",
        f"# scale_hartree={s.scale!r}",
        "# normalized=true",
    ]
    lines += [f"{v!r},{w!r}" for v, w in zip(s.values.tolist(), s.weights.tolist())]
    write_atomic(path, "\n".join(lines) + "\n")
