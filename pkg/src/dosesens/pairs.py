"""Matched-pair data model: ingestion, dose transforms, outcome adjustment.

A study is a collection of pairs matched on observed covariates, where the
two units of a pair received different doses of the treatment.  Within each
pair the units are stored dose-ordered (``z_lo < z_hi`` strictly); the
original unit labels are kept so files round-trip, and ``orientation``
records which original unit received the higher dose.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

REQUIRED_COLUMNS = ("pair_id", "unit_id", "z", "y")
COVARIATE_PREFIX = "x_"


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DataError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class MatchedPair:
    """One matched pair, dose-ordered.

    ``unit_of_lo`` / ``unit_of_hi`` are the original unit labels;
    ``orientation`` is 1 when the label-sorted first unit received the
    higher dose and 2 otherwise, so it is determined by the doses alone and
    is unaffected by the order the two units were supplied in.
    """

    pair_id: str
    z_lo: float
    z_hi: float
    y_of_lo: float
    y_of_hi: float
    x_of_lo: tuple = ()
    x_of_hi: tuple = ()
    unit_of_lo: str = "2"
    unit_of_hi: str = "1"

    def __post_init__(self):
        for name in ("z_lo", "z_hi", "y_of_lo", "y_of_hi"):
            object.__setattr__(self, name, _require_finite(name, getattr(self, name)))
        object.__setattr__(self, "x_of_lo", tuple(float(v) for v in self.x_of_lo))
        object.__setattr__(self, "x_of_hi", tuple(float(v) for v in self.x_of_hi))
        if self.z_lo == self.z_hi:
            raise DataError(f"pair {self.pair_id!r}: tied doses ({self.z_lo})")
        if self.z_lo > self.z_hi:
            raise DataError(f"pair {self.pair_id!r}: z_lo must be < z_hi")
        if len(self.x_of_lo) != len(self.x_of_hi):
            raise DataError(f"pair {self.pair_id!r}: covariate length mismatch")

    @property
    def orientation(self) -> int:
        first = min(str(self.unit_of_lo), str(self.unit_of_hi))
        return 1 if first == str(self.unit_of_hi) else 2

    @classmethod
    def from_units(cls, pair_id, unit_a, unit_b) -> "MatchedPair":
        """Build from two ``(unit_id, z, y, x_tuple)`` records in any order."""
        a_id, a_z, a_y, a_x = unit_a
        b_id, b_z, b_y, b_x = unit_b
        if str(a_id) == str(b_id):
            raise DataError(f"pair {pair_id!r}: duplicate unit id {a_id!r}")
        if float(a_z) == float(b_z):
            raise DataError(f"pair {pair_id!r}: tied doses ({a_z})")
        lo, hi = (unit_a, unit_b) if float(a_z) < float(b_z) else (unit_b, unit_a)
        return cls(
            pair_id=str(pair_id),
            z_lo=lo[1],
            z_hi=hi[1],
            y_of_lo=lo[2],
            y_of_hi=hi[2],
            x_of_lo=tuple(lo[3]),
            x_of_hi=tuple(hi[3]),
            unit_of_lo=str(lo[0]),
            unit_of_hi=str(hi[0]),
        )


@dataclass(frozen=True)
class MatchedSample:
    """An ordered collection of matched pairs with unique pair ids."""

    pairs: tuple

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if not self.pairs:
            raise DataError("a matched sample needs at least one pair")
        seen = set()
        widths = set()
        for pair in self.pairs:
            if pair.pair_id in seen:
                raise DataError(f"duplicate pair id {pair.pair_id!r}")
            seen.add(pair.pair_id)
            widths.add(len(pair.x_of_hi))
        if len(widths) > 1:
            raise DataError("pairs disagree on the number of covariates")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def n_covariates(self) -> int:
        return len(self.pairs[0].x_of_hi)

    @property
    def pair_ids(self) -> tuple:
        return tuple(p.pair_id for p in self.pairs)

    def z_lo(self) -> np.ndarray:
        return np.array([p.z_lo for p in self.pairs])

    def z_hi(self) -> np.ndarray:
        return np.array([p.z_hi for p in self.pairs])

    def y_of_lo(self) -> np.ndarray:
        return np.array([p.y_of_lo for p in self.pairs])

    def y_of_hi(self) -> np.ndarray:
        return np.array([p.y_of_hi for p in self.pairs])

    def dose_diff(self) -> np.ndarray:
        """z_hi - z_lo, strictly positive."""
        return self.z_hi() - self.z_lo()

    def outcome_diff(self) -> np.ndarray:
        """y_hi - y_lo (higher-dose minus lower-dose outcome)."""
        return self.y_of_hi() - self.y_of_lo()


def sample_from_arrays(z1, z2, y1, y2, pair_ids=None) -> MatchedSample:
    """Assemble a sample from parallel per-unit arrays (units in given order)."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if not (z1.shape == z2.shape == y1.shape == y2.shape):
        raise DataError("z1, z2, y1, y2 must have identical shapes")
    n = z1.size
    if pair_ids is None:
        pair_ids = [str(i + 1) for i in range(n)]
    pairs = [
        MatchedPair.from_units(
            pair_ids[i], ("1", z1[i], y1[i], ()), ("2", z2[i], y2[i], ())
        )
        for i in range(n)
    ]
    return MatchedSample(tuple(pairs))


# -------------------------------------------------------------- dose link --


@dataclass(frozen=True)
class DoseLink:
    """Strictly monotone transform applied to doses before gap calculus.

    ``identity`` and ``log`` are closed forms; ``table`` is an explicit
    dose -> value map with no interpolation: every observed dose must appear
    in the table, and the mapped values must be strictly monotone in dose.
    """

    kind: str = "identity"
    table: tuple = ()

    _KINDS = ("identity", "log", "table")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ConfigError(f"unknown dose link {self.kind!r}")
        if self.kind == "table":
            if not self.table:
                raise ConfigError("table link needs at least one (dose, value) row")
            object.__setattr__(
                self,
                "table",
                tuple((float(d), float(v)) for d, v in self.table),
            )
            doses = [d for d, _ in self.table]
            if len(set(doses)) != len(doses):
                raise ConfigError("table link has duplicate dose entries")

    def apply(self, doses) -> np.ndarray:
        doses = np.asarray(doses, dtype=float)
        if self.kind == "identity":
            return doses.copy()
        if self.kind == "log":
            if np.any(doses <= 0):
                raise DataError("log dose link requires strictly positive doses")
            return np.log(doses)
        mapping = dict(self.table)
        try:
            values = np.array([mapping[float(d)] for d in np.atleast_1d(doses)])
        except KeyError as exc:
            raise DataError(f"dose {exc.args[0]!r} missing from table link") from exc
        return values.reshape(doses.shape)

    def validate_on(self, doses) -> None:
        """Check strict monotonicity of the link over the observed doses."""
        doses = np.unique(np.asarray(doses, dtype=float))
        values = self.apply(doses)
        diffs = np.diff(values)
        if doses.size > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise DataError("dose link is not strictly monotone over observed doses")


def link_gaps(sample: MatchedSample, link: DoseLink) -> np.ndarray:
    """|link(z_hi) - link(z_lo)| per pair, after validating the link."""
    doses = np.concatenate([sample.z_lo(), sample.z_hi()])
    link.validate_on(doses)
    return np.abs(link.apply(sample.z_hi()) - link.apply(sample.z_lo()))


# ----------------------------------------------------------- effect model --


@dataclass(frozen=True)
class EffectModel:
    """Hypothesised treatment-effect model used to adjust observed outcomes.

    Supported kinds and their per-pair offsets (applied to the higher-dose
    unit; ``d = z_hi - z_lo``):

    * ``constant``: beta[0] * d
    * ``effect-modification``: (beta[0] + beta[1] * x_k) * d, where x_k is
      the designated covariate of the higher-dose unit
    * ``kink``: slope beta[0] below a bend at z0 + beta[2] and beta[1] above
      it; the offset uses whichever branch the pair's doses fall in, with
      the crossing branch written out literally as
      beta[1]*(z_hi - z0) - beta[0]*(z_hi - z0).

    ``z0`` defaults to the smallest low dose in the sample being adjusted.
    """

    kind: str
    beta: tuple
    modifier_index: int | None = None
    z0: float | None = None

    _SIZES = {"constant": 1, "effect-modification": 2, "kink": 3}

    def __post_init__(self):
        if self.kind not in self._SIZES:
            raise ConfigError(f"unknown effect model {self.kind!r}")
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        object.__setattr__(self, "beta", beta)
        if len(beta) != self._SIZES[self.kind]:
            raise ConfigError(
                f"{self.kind} model needs {self._SIZES[self.kind]} coefficients, "
                f"got {len(beta)}"
            )
        if self.kind == "effect-modification":
            if self.modifier_index is None:
                raise ConfigError("effect-modification model needs modifier_index")
        if self.kind == "kink" and beta[2] <= 0:
            raise ConfigError("kink model needs a positive bend offset beta[2]")

    def offsets(self, sample: MatchedSample) -> np.ndarray:
        """Per-pair hypothesised effect of moving from z_lo to z_hi."""
        z_lo = sample.z_lo()
        z_hi = sample.z_hi()
        d = z_hi - z_lo
        if self.kind == "constant":
            return self.beta[0] * d
        if self.kind == "effect-modification":
            k = self.modifier_index
            if not 0 <= k < sample.n_covariates:
                raise DataError(
                    f"modifier_index {k} out of range for "
                    f"{sample.n_covariates} covariates"
                )
            x = np.array([p.x_of_hi[k] for p in sample])
            return (self.beta[0] + self.beta[1] * x) * d
        # kink
        b1, b2, bend = self.beta
        z0 = self.z0 if self.z0 is not None else float(sample.z_lo().min())
        if z0 > sample.z_lo().min():
            raise DataError("kink reference z0 must not exceed the smallest low dose")
        lo_rel = z_lo - z0
        hi_rel = z_hi - z0
        below = hi_rel < bend
        above = lo_rel >= bend
        crossing = ~below & ~above
        out = np.empty_like(d)
        out[below] = b1 * d[below]
        out[above] = b2 * d[above]
        out[crossing] = b2 * (hi_rel[crossing]) - b1 * (hi_rel[crossing])
        return out


def adjust_outcomes(sample: MatchedSample, model: EffectModel) -> MatchedSample:
    """Remove the hypothesised effect from the higher-dose unit's outcome.

    Under the hypothesised model the adjusted outcomes are free of the
    treatment effect, so downstream tests behave as under a null of no
    effect.
    """
    offsets = model.offsets(sample)
    pairs = [
        replace(pair, y_of_hi=pair.y_of_hi - float(off))
        for pair, off in zip(sample, offsets)
    ]
    return MatchedSample(tuple(pairs))


# -------------------------------------------------------------------- csv --


def read_csv(path) -> MatchedSample:
    """Read matched pairs from ``pair_id,unit_id,z,y[,x_*...]`` rows.

    Each pair id must appear on exactly two rows with distinct unit ids and
    distinct doses.  Rows may come in any order; extra columns are ignored.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DataError(f"missing required columns: {', '.join(missing)}")
        x_cols = [c for c in header if c.startswith(COVARIATE_PREFIX)]
        by_pair: dict = {}
        order: list = []
        for line_no, row in enumerate(reader, start=2):
            pid = row["pair_id"]
            if pid is None or pid == "":
                raise DataError(f"line {line_no}: empty pair_id")
            try:
                z = float(row["z"])
                y = float(row["y"])
                x = tuple(float(row[c]) for c in x_cols)
            except (TypeError, ValueError) as exc:
                raise DataError(f"line {line_no}: non-numeric field: {exc}") from exc
            if pid not in by_pair:
                by_pair[pid] = []
                order.append(pid)
            by_pair[pid].append((row["unit_id"], z, y, x))
    pairs = []
    for pid in order:
        units = by_pair[pid]
        if len(units) != 2:
            raise DataError(f"pair {pid!r} has {len(units)} rows, expected 2")
        # canonicalize by unit label so row order in the file is irrelevant
        units = sorted(units, key=lambda u: str(u[0]))
        pairs.append(MatchedPair.from_units(pid, units[0], units[1]))
    return MatchedSample(tuple(pairs))


def write_csv(sample: MatchedSample, path) -> None:
    """Write a sample back to the ingestion schema (numeric fields via repr,
    so a read/write/read cycle reproduces the floats bit for bit)."""
    x_cols = [f"x_{i + 1}" for i in range(sample.n_covariates)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*REQUIRED_COLUMNS, *x_cols])
        for pair in sample:
            rows = [
                (pair.unit_of_lo, pair.z_lo, pair.y_of_lo, pair.x_of_lo),
                (pair.unit_of_hi, pair.z_hi, pair.y_of_hi, pair.x_of_hi),
            ]
            for unit_id, z, y, x in sorted(rows, key=lambda r: str(r[0])):
                writer.writerow([pair.pair_id, unit_id, repr(z), repr(y), *map(repr, x)])
