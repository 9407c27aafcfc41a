"""Areal panel ingestion and covariate construction.

Builds the transformed response panel from raw counts, derives the six
neighborhood predictors (population, segregation, log income, square
roots of poverty, vacancy and commercial/residential share) from raw
demographic inputs, and applies unit exclusion rules.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import InputError

LOG2 = math.log(2.0)

# Linearly decreasing weights over the seven income-to-poverty brackets,
# highest weight on the deepest-poverty bracket.
POVERTY_WEIGHTS = np.array([1.0, 5 / 6, 4 / 6, 3 / 6, 2 / 6, 1 / 6, 0.0])

ETHNICITY_CATEGORIES = ("white", "black", "hispanic", "asian", "other")

COVARIATE_NAMES = (
    "pop_total",
    "segregation",
    "log_income",
    "sqrt_poverty",
    "sqrt_vacancy",
    "sqrt_comresprop",
)


def ihs(c):
    """Inverse hyperbolic sine transform centered to track log(c).

    Returns log(c + sqrt(c^2 + 1)) - log(2), which is defined at zero
    counts and converges to log(c) for large c.  Accepts scalars or
    arrays; counts must be non-negative.
    """
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise ValueError("ihs is defined for non-negative counts only")
    out = np.arcsinh(c) - LOG2
    return float(out) if out.ndim == 0 else out


def ihs_to_count(y):
    """Invert the transform back to count space, rounding to integers >= 0."""
    y = np.asarray(y, dtype=float)
    with np.errstate(over="raise"):
        try:
            counts = np.rint(np.sinh(y + LOG2))
        except FloatingPointError:
            raise ValueError("transformed values too large to invert to counts") from None
    return np.maximum(counts, 0.0).astype(np.int64)


def segregation(unit_props: Sequence[float], city_props: Sequence[float]) -> float:
    """Total-variation distance between a unit's ethnicity mix and the city's.

    Both arguments are probability vectors over the same categories.
    The result lies in [0, 1]; 0 means the unit mirrors the city exactly.
    """
    p = np.asarray(unit_props, dtype=float)
    q = np.asarray(city_props, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"proportion vectors differ in length: {p.shape} vs {q.shape}")
    for name, v in (("unit", p), ("city", q)):
        if np.any(v < 0):
            raise ValueError(f"{name} proportions contain negative entries")
        if abs(v.sum() - 1.0) > 1e-6:
            raise ValueError(f"{name} proportions sum to {v.sum():.8f}, expected 1")
    return 0.5 * float(np.abs(p - q).sum())


def poverty_index(bracket_props: Sequence[float]) -> float:
    """Weighted poverty score from the seven income-to-poverty brackets.

    Weights decrease linearly from 1 (deepest poverty) to 0 (above twice
    the poverty line), so the score lies in [0, 1].
    """
    q = np.asarray(bracket_props, dtype=float)
    if q.shape != (7,):
        raise ValueError(f"expected 7 poverty brackets, got shape {q.shape}")
    if np.any(q < 0):
        raise ValueError("poverty bracket proportions contain negative entries")
    if abs(q.sum() - 1.0) > 1e-6:
        raise ValueError(f"poverty brackets sum to {q.sum():.8f}, expected 1")
    return float(POVERTY_WEIGHTS @ q)


def landuse_ratios(areas: Mapping[str, float]) -> tuple[float, float]:
    """Vacancy share and commercial-vs-residential share from land-use areas.

    ``areas`` maps land-use class names (``vacant``, ``commercial``,
    ``residential``, plus anything else contributing to the total) to
    non-negative areas in a common unit.  An explicit ``total`` entry, if
    present, overrides the sum of the classes.

    Returns ``(vacancy, comresprop)``.  A zero denominator yields NaN for
    that ratio, flagging the unit as a candidate for exclusion.
    """
    for k, v in areas.items():
        if v < 0:
            raise ValueError(f"negative area for land-use class {k!r}")
    total = areas.get("total", sum(v for k, v in areas.items() if k != "total"))
    vacancy = areas.get("vacant", 0.0) / total if total > 0 else math.nan
    comm = areas.get("commercial", 0.0)
    res = areas.get("residential", 0.0)
    comresprop = comm / (comm + res) if comm + res > 0 else math.nan
    return vacancy, comresprop


@dataclass(frozen=True)
class RawUnitDemographics:
    """Raw census-style inputs for one unit, before covariate construction.

    ``ethnic_counts`` holds population counts for the five collapsed
    ethnicity categories in :data:`ETHNICITY_CATEGORIES` order.  Missing
    economic values are represented as NaN and flag the unit for
    exclusion rather than being imputed.
    """

    ethnic_counts: tuple[float, ...]
    poverty_bracket_props: tuple[float, ...]
    income_per_capita: float
    land_area: Mapping[str, float]
    pop_total: float

    def missing_economic(self) -> bool:
        """True when any economic/land-use covariate cannot be computed."""
        if math.isnan(self.income_per_capita):
            return True
        if any(math.isnan(v) for v in self.poverty_bracket_props):
            return True
        vac, crp = landuse_ratios(self.land_area)
        return math.isnan(vac) or math.isnan(crp)


@dataclass(frozen=True)
class ArealPanel:
    """Counts and transformed responses for n units over T periods.

    ``counts[i, t]`` is the raw count for unit ``unit_ids[i]`` in period
    ``periods[t]``; ``y`` holds the IHS-transformed counts.  Integer time
    codes run 1..T in period order regardless of the period labels.
    """

    unit_ids: tuple[str, ...]
    periods: tuple[int, ...]
    counts: np.ndarray
    y: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.unit_ids), len(self.periods)):
            raise ValueError(
                f"counts shape {counts.shape} does not match "
                f"{len(self.unit_ids)} units x {len(self.periods)} periods"
            )
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if len(set(self.unit_ids)) != len(self.unit_ids):
            raise ValueError("unit_ids contain duplicates")
        if list(self.periods) != sorted(self.periods):
            raise ValueError("periods must be sorted ascending")
        object.__setattr__(self, "counts", counts)
        y = self.y if self.y is not None else ihs(counts)
        y = np.asarray(y, dtype=float)
        if y.shape != counts.shape or not np.all(np.isfinite(y)):
            raise ValueError("y must be finite and match the counts shape")
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @property
    def t_index(self) -> np.ndarray:
        """Time codes 1..T assigned in period order."""
        return np.arange(1, self.n_periods + 1)

    def t_of_period(self, period: int) -> int:
        try:
            return self.periods.index(period) + 1
        except ValueError:
            raise KeyError(f"period {period} not present in panel") from None

    def restrict(self, keep_ids: Sequence[str]) -> "ArealPanel":
        """Panel restricted to ``keep_ids``, preserving their given order."""
        index = {u: i for i, u in enumerate(self.unit_ids)}
        rows = [index[u] for u in keep_ids]
        return ArealPanel(tuple(keep_ids), self.periods, self.counts[rows], self.y[rows])


@dataclass(frozen=True)
class CovariateMatrix:
    """Standardized n x d predictor matrix with its transform metadata.

    ``Z`` holds the standardized values actually used in the models;
    ``means``/``scales`` store the pre-standardization column mean and
    sample SD so the original (transformed) values can be recovered.
    """

    unit_ids: tuple[str, ...]
    names: tuple[str, ...]
    Z: np.ndarray
    transform_log: tuple[str, ...] = ()
    transform_sqrt: tuple[str, ...] = ()
    standardized: bool = True
    means: np.ndarray = None  # type: ignore[assignment]
    scales: np.ndarray = None  # type: ignore[assignment]

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    @property
    def d(self) -> int:
        return len(self.names)

    def destandardize(self) -> np.ndarray:
        """Recover the pre-standardization (but transformed) column values."""
        if not self.standardized:
            return self.Z.copy()
        return self.Z * self.scales + self.means

    def restrict(self, keep_ids: Sequence[str]) -> "CovariateMatrix":
        """Restrict to the given units and re-standardize over them."""
        index = {u: i for i, u in enumerate(self.unit_ids)}
        rows = [index[u] for u in keep_ids]
        raw = self.destandardize()[rows]
        return _standardize(tuple(keep_ids), self.names, raw, self.transform_log, self.transform_sqrt)


def _standardize(unit_ids, names, values, transform_log=(), transform_sqrt=()) -> CovariateMatrix:
    values = np.asarray(values, dtype=float)
    means = values.mean(axis=0)
    scales = values.std(axis=0, ddof=1)
    for j, s in enumerate(scales):
        if not np.isfinite(s) or s <= 0:
            raise ValueError(f"covariate {names[j]!r} has zero variance; cannot standardize")
    Z = (values - means) / scales
    return CovariateMatrix(
        unit_ids=tuple(unit_ids),
        names=tuple(names),
        Z=Z,
        transform_log=tuple(transform_log),
        transform_sqrt=tuple(transform_sqrt),
        standardized=True,
        means=means,
        scales=scales,
    )


def collapse_ethnicities(
    counts: Mapping[str, float], mapping: Mapping[str, str] | None = None
) -> tuple[float, ...]:
    """Collapse raw ethnicity-category counts into the five model categories.

    Without a mapping the keys must already be the five categories.  A
    mapping sends each raw category name to one of the five.
    """
    if mapping is None:
        extra = set(counts) - set(ETHNICITY_CATEGORIES)
        if extra:
            raise ValueError(
                f"unexpected ethnicity categories {sorted(extra)}; provide a mapping file"
            )
        return tuple(float(counts.get(c, 0.0)) for c in ETHNICITY_CATEGORIES)
    out = dict.fromkeys(ETHNICITY_CATEGORIES, 0.0)
    for raw, value in counts.items():
        target = mapping.get(raw)
        if target not in out:
            raise ValueError(f"ethnicity category {raw!r} maps to unknown target {target!r}")
        out[target] += float(value)
    return tuple(out[c] for c in ETHNICITY_CATEGORIES)


def build_covariates(
    raw: Mapping[str, RawUnitDemographics], unit_ids: Sequence[str] | None = None
) -> CovariateMatrix:
    """Construct the six standardized predictors from raw unit demographics.

    Applies the square-root transform to poverty, vacancy and the
    commercial/residential share, the log transform to income, and then
    z-scores every column (mean 0, sample SD 1) so partial effects are
    directly comparable.  All retained units must have complete data;
    run :func:`apply_exclusions` first.

    Raises on non-positive income (named unit) and on zero-variance
    columns.
    """
    ids = tuple(unit_ids) if unit_ids is not None else tuple(raw)
    missing = [u for u in ids if u not in raw]
    if missing:
        raise ValueError(f"raw demographics missing for units: {missing[:5]}")

    city_totals = np.zeros(len(ETHNICITY_CATEGORIES))
    for u in ids:
        city_totals += np.asarray(raw[u].ethnic_counts, dtype=float)
    if city_totals.sum() <= 0:
        raise ValueError("city-wide ethnicity counts are all zero")
    city_props = city_totals / city_totals.sum()

    values = np.empty((len(ids), 6))
    for i, u in enumerate(ids):
        r = raw[u]
        counts = np.asarray(r.ethnic_counts, dtype=float)
        unit_props = counts / counts.sum() if counts.sum() > 0 else city_props
        vac, crp = landuse_ratios(r.land_area)
        if math.isnan(vac) or math.isnan(crp):
            raise ValueError(f"unit {u!r} has missing land-use ratios; exclude it first")
        if not r.income_per_capita > 0:
            raise ValueError(f"unit {u!r} has non-positive income {r.income_per_capita}")
        values[i] = (
            r.pop_total,
            segregation(unit_props, city_props),
            math.log(r.income_per_capita),
            math.sqrt(poverty_index(r.poverty_bracket_props)),
            math.sqrt(vac),
            math.sqrt(crp),
        )
    return _standardize(
        ids,
        COVARIATE_NAMES,
        values,
        transform_log=("log_income",),
        transform_sqrt=("sqrt_poverty", "sqrt_vacancy", "sqrt_comresprop"),
    )


def covariates_from_table(
    unit_ids: Sequence[str], names: Sequence[str], values: np.ndarray
) -> CovariateMatrix:
    """Standardize precomputed (already transformed) covariate columns."""
    values = np.asarray(values, dtype=float)
    if np.any(~np.isfinite(values)):
        bad = [unit_ids[i] for i in np.where(~np.isfinite(values).all(axis=1))[0]]
        raise ValueError(f"covariate table has missing values for units: {bad[:5]}")
    return _standardize(unit_ids, names, values)


def apply_exclusions(
    panel: ArealPanel,
    raw: Mapping[str, RawUnitDemographics] | None = None,
    exclude_ids: Iterable[str] = (),
    missing_ids: Iterable[str] = (),
) -> tuple[ArealPanel, list[str]]:
    """Drop explicitly listed units and units with missing covariates.

    ``raw`` (when given) is scanned for units whose economic covariates
    cannot be computed; ``missing_ids`` lets callers with precomputed
    covariates report missing units directly.  No imputation is ever
    performed.  Returns the reduced panel and the sorted list of
    excluded unit ids.  Listing a unit not present in the panel is an
    error.
    """
    present = set(panel.unit_ids)
    explicit = list(exclude_ids)
    absent = [u for u in explicit if u not in present]
    if absent:
        raise ValueError(f"cannot exclude units not in the panel: {absent[:5]}")

    dropped = set(explicit)
    dropped.update(u for u in missing_ids if u in present)
    if raw is not None:
        for u in panel.unit_ids:
            if u in raw and raw[u].missing_economic():
                dropped.add(u)
    keep = [u for u in panel.unit_ids if u not in dropped]
    return panel.restrict(keep), sorted(dropped)


# ---------------------------------------------------------------------------
# File formats


def load_crimes_csv(path) -> ArealPanel:
    """Read a long-format ``unit_id,year,count`` panel.

    Every unit-year cell must be present explicitly (zero counts
    included); missing cells or duplicates are errors.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["unit_id", "year", "count"]:
            raise InputError(f"{path}: expected header 'unit_id,year,count', got {header}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 3:
                raise InputError(f"{path}:{lineno}: expected 3 fields, got {len(rec)}")
            try:
                rows.append((rec[0], int(rec[1]), int(rec[2])))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None

    unit_ids = sorted({r[0] for r in rows})
    periods = sorted({r[1] for r in rows})
    uidx = {u: i for i, u in enumerate(unit_ids)}
    pidx = {p: j for j, p in enumerate(periods)}
    counts = np.full((len(unit_ids), len(periods)), -1, dtype=np.int64)
    for u, p, c in rows:
        if counts[uidx[u], pidx[p]] != -1:
            raise InputError(f"{path}: duplicate row for unit {u!r}, year {p}")
        if c < 0:
            raise InputError(f"{path}: negative count for unit {u!r}, year {p}")
        counts[uidx[u], pidx[p]] = c
    if np.any(counts < 0):
        i, j = np.argwhere(counts < 0)[0]
        raise InputError(
            f"{path}: missing row for unit {unit_ids[i]!r}, year {periods[j]} "
            "(zero counts must be explicit)"
        )
    return ArealPanel(tuple(unit_ids), tuple(periods), counts)


def write_crimes_csv(panel: ArealPanel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "year", "count"])
        for i, u in enumerate(panel.unit_ids):
            for j, p in enumerate(panel.periods):
                writer.writerow([u, p, int(panel.counts[i, j])])


def load_covariates_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    """Read ``unit_id,<name>...`` numeric covariate columns (NaN for blanks)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "unit_id" or len(header) < 2:
            raise InputError(f"{path}: expected header 'unit_id,<name>...', got {header}")
        names = header[1:]
        unit_ids, values = [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            unit_ids.append(rec[0])
            try:
                values.append([float(v) if v != "" else math.nan for v in rec[1:]])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    if len(set(unit_ids)) != len(unit_ids):
        raise InputError(f"{path}: duplicate unit ids")
    return unit_ids, names, np.asarray(values, dtype=float)


def write_covariates_csv(path, unit_ids, names, values) -> None:
    values = np.asarray(values, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", *names])
        for i, u in enumerate(unit_ids):
            writer.writerow([u] + [repr(float(v)) for v in values[i]])


RAW_COVARIATE_COLUMNS = (
    ["pop_total"]
    + [f"eth_{c}" for c in ETHNICITY_CATEGORIES]
    + [f"pov_q{j}" for j in range(1, 8)]
    + ["income_per_capita", "area_total", "area_vacant", "area_commercial", "area_residential"]
)


def load_raw_covariates_csv(path, ethnicity_map=None) -> dict[str, RawUnitDemographics]:
    """Read raw demographic inputs, one row per unit.

    Expected columns are ``unit_id`` followed by
    :data:`RAW_COVARIATE_COLUMNS`.  Extra ``eth_*`` columns are allowed
    when ``ethnicity_map`` maps their suffixes onto the five model
    categories.  Empty economic fields become NaN (exclusion candidates).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "unit_id" not in reader.fieldnames:
            raise InputError(f"{path}: missing unit_id column")
        eth_cols = [c for c in reader.fieldnames if c.startswith("eth_")]
        required = {"unit_id", "pop_total", "income_per_capita"}
        required.update(f"pov_q{j}" for j in range(1, 8))
        missing = required - set(reader.fieldnames)
        if missing:
            raise InputError(f"{path}: missing columns {sorted(missing)}")

        out: dict[str, RawUnitDemographics] = {}
        for lineno, rec in enumerate(reader, start=2):
            u = rec["unit_id"]
            if u in out:
                raise InputError(f"{path}:{lineno}: duplicate unit {u!r}")

            def num(col, default=math.nan):
                v = rec.get(col, "")
                return float(v) if v not in ("", None) else default

            eth_counts = {c[len("eth_"):]: num(c, 0.0) for c in eth_cols}
            try:
                ethnic = collapse_ethnicities(eth_counts, ethnicity_map)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            out[u] = RawUnitDemographics(
                ethnic_counts=ethnic,
                poverty_bracket_props=tuple(num(f"pov_q{j}") for j in range(1, 8)),
                income_per_capita=num("income_per_capita"),
                land_area={
                    "total": num("area_total", 0.0),
                    "vacant": num("area_vacant", 0.0),
                    "commercial": num("area_commercial", 0.0),
                    "residential": num("area_residential", 0.0),
                },
                pop_total=num("pop_total", 0.0),
            )
    return out


def load_exclusions(path) -> list[str]:
    """Read one unit id per line, ignoring blanks."""
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]
