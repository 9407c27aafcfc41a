"""Posterior summaries and exports.

Turns retained draws into per-unit interval summaries, per-edge barrier
probabilities with thresholds, extreme-unit rankings, and a GeoJSON
export carrying the unit summaries plus a line layer for flagged
barriers.  Quantiles use linear interpolation between order statistics
throughout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import ModelFamily, variable_border_targets
from .sampler import ChainOutput

MIN_DRAWS = 100


@dataclass(frozen=True)
class UnitSummary:
    unit_id: str
    alpha_mean: float
    alpha_sd: float
    alpha_lo: float
    alpha_hi: float
    alpha_sig: bool
    beta_mean: float
    beta_sd: float
    beta_lo: float
    beta_hi: float
    beta_sig: bool

    @property
    def alpha_ci_width(self) -> float:
        return self.alpha_hi - self.alpha_lo

    @property
    def beta_ci_width(self) -> float:
        return self.beta_hi - self.beta_lo


def summarize_units(chain: ChainOutput, level: float = 0.95) -> list[UnitSummary]:
    """Per-unit posterior means, SDs and credible intervals.

    Significance flags a unit whose interval excludes the posterior mean
    of the corresponding global parameter (alpha0 or beta0).
    """
    if chain.n_draws < MIN_DRAWS:
        raise ValueError(f"need at least {MIN_DRAWS} retained draws, have {chain.n_draws}")
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    alpha, beta = chain.draws["alpha"], chain.draws["beta"]
    a0 = float(chain.draws["alpha0"].mean())
    b0 = float(chain.draws["beta0"].mean())
    a_lo, a_hi = np.quantile(alpha, [lo_q, hi_q], axis=0, method="linear")
    b_lo, b_hi = np.quantile(beta, [lo_q, hi_q], axis=0, method="linear")
    a_mean, a_sd = alpha.mean(axis=0), alpha.std(axis=0, ddof=1)
    b_mean, b_sd = beta.mean(axis=0), beta.std(axis=0, ddof=1)
    out = []
    for i, u in enumerate(chain.unit_ids):
        out.append(
            UnitSummary(
                unit_id=u,
                alpha_mean=float(a_mean[i]),
                alpha_sd=float(a_sd[i]),
                alpha_lo=float(a_lo[i]),
                alpha_hi=float(a_hi[i]),
                alpha_sig=bool(a0 < a_lo[i] or a0 > a_hi[i]),
                beta_mean=float(b_mean[i]),
                beta_sd=float(b_sd[i]),
                beta_lo=float(b_lo[i]),
                beta_hi=float(b_hi[i]),
                beta_sig=bool(b0 < b_lo[i] or b0 > b_hi[i]),
            )
        )
    return out


@dataclass(frozen=True)
class BarrierEdge:
    unit_id_a: str
    unit_id_b: str
    p_barrier_alpha: float
    flag_alpha: bool
    p_barrier_beta: float
    flag_beta: bool


@dataclass(frozen=True)
class BarrierReport:
    edges: tuple[BarrierEdge, ...]
    alpha_threshold: float
    beta_threshold: float


def barrier_report(
    chain: ChainOutput, alpha_threshold: float = 0.6, beta_threshold: float = 0.5
) -> BarrierReport:
    """Posterior barrier probabilities P(w = 0) per base edge with flags.

    Flags are strict: an edge is a barrier when its probability strictly
    exceeds the threshold.  Only variable-border families qualify; for
    the alpha-only variant the beta side is fixed and reported as zero.
    """
    family = ModelFamily(chain.family)
    var_a, var_b = variable_border_targets(family)
    if not (var_a or var_b):
        raise ValueError(f"barrier report requires a variable-border family, got {family.value}")
    m = len(chain.edge_ids)
    p_a = 1.0 - chain.draws["w_alpha"].mean(axis=0) if var_a else np.zeros(m)
    p_b = 1.0 - chain.draws["w_beta"].mean(axis=0) if var_b else np.zeros(m)
    edges = tuple(
        BarrierEdge(
            unit_id_a=a,
            unit_id_b=b,
            p_barrier_alpha=float(p_a[k]),
            flag_alpha=bool(p_a[k] > alpha_threshold),
            p_barrier_beta=float(p_b[k]),
            flag_beta=bool(p_b[k] > beta_threshold),
        )
        for k, (a, b) in enumerate(chain.edge_ids)
    )
    return BarrierReport(edges=edges, alpha_threshold=alpha_threshold, beta_threshold=beta_threshold)


def extremes(summaries: Sequence[UnitSummary], k: int) -> dict[str, list[UnitSummary]]:
    """Top-k and bottom-k units by posterior-mean level and trend.

    Ties break toward the lexicographically smaller unit id.
    """
    if k > len(summaries):
        raise ValueError(f"k={k} exceeds the number of units {len(summaries)}")

    def ranked(key, reverse):
        if reverse:
            return sorted(summaries, key=lambda s: (-key(s), s.unit_id))[:k]
        return sorted(summaries, key=lambda s: (key(s), s.unit_id))[:k]

    return {
        "alpha_top": ranked(lambda s: s.alpha_mean, True),
        "alpha_bottom": ranked(lambda s: s.alpha_mean, False),
        "beta_top": ranked(lambda s: s.beta_mean, True),
        "beta_bottom": ranked(lambda s: s.beta_mean, False),
    }


# ---------------------------------------------------------------------------
# File outputs

SUMMARY_COLUMNS = (
    "unit_id",
    "alpha_mean",
    "alpha_sd",
    "alpha_lo",
    "alpha_hi",
    "alpha_ci_width",
    "alpha_sig",
    "beta_mean",
    "beta_sd",
    "beta_lo",
    "beta_hi",
    "beta_ci_width",
    "beta_sig",
)

BARRIER_COLUMNS = (
    "unit_id_a",
    "unit_id_b",
    "p_barrier_alpha",
    "flag_alpha",
    "p_barrier_beta",
    "flag_beta",
)


def write_summary_csv(summaries: Sequence[UnitSummary], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            writer.writerow(
                [
                    s.unit_id,
                    repr(s.alpha_mean),
                    repr(s.alpha_sd),
                    repr(s.alpha_lo),
                    repr(s.alpha_hi),
                    repr(s.alpha_ci_width),
                    int(s.alpha_sig),
                    repr(s.beta_mean),
                    repr(s.beta_sd),
                    repr(s.beta_lo),
                    repr(s.beta_hi),
                    repr(s.beta_ci_width),
                    int(s.beta_sig),
                ]
            )


def write_barriers_csv(report: BarrierReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(BARRIER_COLUMNS)
        for e in report.edges:
            writer.writerow(
                [
                    e.unit_id_a,
                    e.unit_id_b,
                    repr(e.p_barrier_alpha),
                    int(e.flag_alpha),
                    repr(e.p_barrier_beta),
                    int(e.flag_beta),
                ]
            )


UNIT_PROPERTY_KEYS = (
    "unit_id",
    "alpha_mean",
    "alpha_sd",
    "alpha_lo",
    "alpha_hi",
    "alpha_ci_width",
    "alpha_sig",
    "beta_mean",
    "beta_sd",
    "beta_lo",
    "beta_hi",
    "beta_ci_width",
    "beta_sig",
)

BARRIER_PROPERTY_KEYS = ("unit_id_a", "unit_id_b", "which", "p_barrier")


def export_geojson(
    summaries: Sequence[UnitSummary],
    report: BarrierReport | None,
    polygons: Mapping[str, Sequence],
    path,
) -> None:
    """Write unit polygons with summary properties plus flagged-barrier lines.

    Every summarized unit must have a geometry.  A flagged barrier is
    drawn along the shared boundary of its two units when that
    intersection has positive length, otherwise as the segment joining
    the unit centroids.
    """
    from shapely.geometry import LineString, MultiPolygon, Polygon, mapping

    geom_by_unit = {}
    for s in summaries:
        if s.unit_id not in polygons:
            raise KeyError(f"unit {s.unit_id!r} has no geometry")
        parts = [Polygon(p[0], p[1:]) for p in polygons[s.unit_id]]
        geom_by_unit[s.unit_id] = parts[0] if len(parts) == 1 else MultiPolygon(parts)

    features = []
    for s in summaries:
        props = {
            "unit_id": s.unit_id,
            "alpha_mean": s.alpha_mean,
            "alpha_sd": s.alpha_sd,
            "alpha_lo": s.alpha_lo,
            "alpha_hi": s.alpha_hi,
            "alpha_ci_width": s.alpha_ci_width,
            "alpha_sig": s.alpha_sig,
            "beta_mean": s.beta_mean,
            "beta_sd": s.beta_sd,
            "beta_lo": s.beta_lo,
            "beta_hi": s.beta_hi,
            "beta_ci_width": s.beta_ci_width,
            "beta_sig": s.beta_sig,
        }
        features.append(
            {
                "type": "Feature",
                "geometry": mapping(geom_by_unit[s.unit_id]),
                "properties": props,
            }
        )

    if report is not None:
        for e in report.edges:
            for which, flagged, prob in (
                ("alpha", e.flag_alpha, e.p_barrier_alpha),
                ("beta", e.flag_beta, e.p_barrier_beta),
            ):
                if not flagged:
                    continue
                ga = geom_by_unit.get(e.unit_id_a)
                gb = geom_by_unit.get(e.unit_id_b)
                if ga is None or gb is None:
                    raise KeyError(f"barrier edge ({e.unit_id_a}, {e.unit_id_b}) lacks geometry")
                shared = ga.boundary.intersection(gb.boundary)
                if shared.is_empty or shared.length == 0:
                    shared = LineString([ga.centroid.coords[0], gb.centroid.coords[0]])
                features.append(
                    {
                        "type": "Feature",
                        "geometry": mapping(shared),
                        "properties": {
                            "unit_id_a": e.unit_id_a,
                            "unit_id_b": e.unit_id_b,
                            "which": which,
                            "p_barrier": prob,
                        },
                    }
                )

    doc = {"type": "FeatureCollection", "features": features}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
