"""Aggregation of filtered records and mileage into benchmark rates.

Counting is vehicle-level throughout: the numerator for a severity is
the weighted number of qualifying vehicle involvements in crashes at
that severity, not the number of crashes.  Crash-level tallies are kept
alongside for the reporting-share diagnostics and the vehicles-per-crash
ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import UndefinedStatistic, ValidationError
from .filters import (
    ImputationWeight,
    Subset,
    audit_subset,
    compute_imputation_weight,
    effective_passenger_count,
)
from .model import (
    AdjustmentScheme,
    AreaType,
    BenchmarkRate,
    FunctionalClass,
    MileageCell,
    PassengerShareTable,
    Region,
    SCHEMES,
    SHARE_GROUP_OF_CLASS,
    SeverityLevel,
    ShareGroup,
)

_OBSERVED_LEVELS = (
    SeverityLevel.POLICE_REPORTED,
    SeverityLevel.ANY_INJURY_REPORTED,
    SeverityLevel.TOW_AWAY,
    SeverityLevel.AIRBAG_DEPLOYED,
    SeverityLevel.SUSPECTED_SERIOUS_INJURY_PLUS,
    SeverityLevel.FATAL,
)


@dataclass(frozen=True)
class SeverityCounts:
    """Weighted counts at each observed severity level.

    The adjustment class split is derived: pdo = police_reported minus
    any_injury_reported, nonfatal_injury = any_injury_reported minus
    fatal.  The split therefore sums back to police_reported by
    construction.
    """

    police_reported: float
    any_injury_reported: float
    tow_away: float
    airbag_deployed: float
    suspected_serious_injury_plus: float
    fatal: float

    def __post_init__(self) -> None:
        for level in _OBSERVED_LEVELS:
            if self.get(level) < 0.0:
                raise ValidationError(f"negative count at {level.value}")
        chain = (self.police_reported, self.any_injury_reported,
                 self.suspected_serious_injury_plus, self.fatal)
        for i, (outer, inner) in enumerate(zip(chain, chain[1:])):
            if inner > outer * (1.0 + 1e-12):
                raise ValidationError(
                    f"severity counts break containment: {chain[i]} < {chain[i + 1]}"
                )
        for name in ("tow_away", "airbag_deployed"):
            if getattr(self, name) > self.police_reported * (1.0 + 1e-12):
                raise ValidationError(f"{name} count exceeds police_reported")

    def get(self, level: SeverityLevel) -> float:
        if level is SeverityLevel.ANY_PROPERTY_DAMAGE_OR_INJURY:
            raise ValidationError(
                "any_property_damage_or_injury has no observed count; "
                "apply an adjustment scheme"
            )
        return getattr(self, level.value)

    @property
    def pdo(self) -> float:
        return self.police_reported - self.any_injury_reported

    @property
    def nonfatal_injury(self) -> float:
        return self.any_injury_reported - self.fatal


def _tally(subset: Subset, contribution) -> SeverityCounts:
    totals = {level: 0.0 for level in _OBSERVED_LEVELS}
    for s in subset.slices.values():
        amount = contribution(s)
        if amount == 0.0:
            continue
        flags = subset.flags_for(s.crash.crash_id)
        for level in _OBSERVED_LEVELS:
            if flags.has(level):
                totals[level] += amount
    return SeverityCounts(**{level.value: totals[level] for level in _OBSERVED_LEVELS})


def tally_vehicle_counts(subset: Subset, w: float) -> SeverityCounts:
    """Weighted crashed-vehicle counts per severity, with NFS imputation."""
    return _tally(
        subset,
        lambda s: effective_passenger_count(s.passenger, s.nfs, w) * s.crash.sample_weight,
    )


def tally_crash_counts(subset: Subset) -> SeverityCounts:
    """Weighted crash counts per severity (diagnostic, not the benchmark)."""
    return _tally(subset, lambda s: s.crash.sample_weight)


def resolve_imputation(subset: Subset, region: Region) -> ImputationWeight | None:
    """The subset's imputation weight, or None when nothing needs imputing."""
    has_nfs = any(s.nfs for s in subset.slices.values())
    has_classified = any(s.passenger or s.other for s in subset.slices.values())
    if not has_classified:
        if has_nfs:
            raise UndefinedStatistic(
                f"imputation weight undefined for {region.name}: "
                "NFS vehicles present but no classified vehicles"
            )
        return None
    return compute_imputation_weight(subset, region)


def count_crashed_vehicles(subset: Subset, severity: SeverityLevel,
                           w: float | None = None) -> float:
    """Weighted qualifying vehicle involvements in crashes at a severity."""
    if w is None:
        imputation = resolve_imputation(subset, _subset_region(subset))
        w = 1.0 if imputation is None else imputation.w
    total = 0.0
    for s in subset.slices.values():
        if subset.flags_for(s.crash.crash_id).has(severity):
            total += effective_passenger_count(s.passenger, s.nfs, w) * s.crash.sample_weight
    return total


def _subset_region(subset: Subset) -> Region:
    if subset.crashes:
        return subset.crashes[0].region
    return Region.national()


def crash_vs_vehicle_ratio(subset: Subset) -> float:
    """Weighted vehicle involvements per weighted crash."""
    crashes = sum(s.crash.sample_weight for s in subset.slices.values())
    if crashes <= 0.0:
        raise UndefinedStatistic("vehicles-per-crash ratio undefined: no crashes")
    vehicles = sum(
        (s.passenger + s.nfs + s.other) * s.crash.sample_weight
        for s in subset.slices.values()
    )
    return vehicles / crashes


def apply_adjustment(counts: SeverityCounts, scheme: AdjustmentScheme,
                     severity: SeverityLevel = SeverityLevel.ANY_PROPERTY_DAMAGE_OR_INJURY,
                     ) -> float:
    """Underreporting-corrected numerator at a severity level.

    The unadjusted scheme returns the observed count (police_reported for
    the any-property-damage-or-injury level).  Corrections are defined
    only down to the any-injury level; fatal counts never scale.
    """
    if scheme.pdo_unreported == 0.0 and scheme.injury_unreported == 0.0:
        if severity is SeverityLevel.ANY_PROPERTY_DAMAGE_OR_INJURY:
            return counts.police_reported
        return counts.get(severity)
    if severity is SeverityLevel.ANY_PROPERTY_DAMAGE_OR_INJURY:
        return (counts.pdo * scheme.pdo_factor
                + counts.nonfatal_injury * scheme.injury_factor
                + counts.fatal)
    if severity is SeverityLevel.ANY_INJURY_REPORTED:
        return counts.nonfatal_injury * scheme.injury_factor + counts.fatal
    raise ValidationError(
        f"scheme {scheme.name} does not define an adjustment at {severity.value}"
    )


def pdo_share(counts: SeverityCounts) -> float:
    """Property-damage-only fraction of police-reported counts."""
    if counts.police_reported <= 0.0:
        raise UndefinedStatistic("PDO share undefined: no police-reported counts")
    return counts.pdo / counts.police_reported


# ---------------------------------------------------------------------------
# Mileage merging


@dataclass(frozen=True)
class MileageRule:
    """How one dataset family turns mileage cells into passenger surface VMT.

    ``surface_excluded`` names the functional classes dropped by the road
    filter.  ``share_mode`` is "by_group" (each cell scaled by its class
    group's passenger share) or "mean_arterial_other" (every cell scaled
    by the mean of the other-arterial and other group shares, for sources
    that publish one undifferentiated local total).
    """

    name: str
    surface_excluded: frozenset[FunctionalClass]
    share_mode: str

    def includes(self, cell: MileageCell, scope: str) -> bool:
        if scope == "all":
            return True
        return cell.functional_class not in self.surface_excluded


_EXCL_INTERSTATE = frozenset({FunctionalClass.INTERSTATE})
_EXCL_FREEWAYS = frozenset({
    FunctionalClass.INTERSTATE, FunctionalClass.OTHER_FREEWAYS_EXPRESSWAYS,
})

ROAD_RULES = {
    rule.name: rule
    for rule in (
        MileageRule("all_roads", frozenset(), "by_group"),
        MileageRule("national_functional", _EXCL_INTERSTATE, "by_group"),
        MileageRule("national_fatal", _EXCL_FREEWAYS, "by_group"),
        MileageRule("county_functional", _EXCL_FREEWAYS, "by_group"),
        MileageRule("county_jurisdiction", _EXCL_FREEWAYS, "mean_arterial_other"),
    )
}


def _share_area(cell: MileageCell) -> AreaType:
    # undifferentiated county totals use urban shares: the benchmark
    # counties are urbanized areas
    if cell.area_type is AreaType.ALL:
        return AreaType.URBAN
    return cell.area_type


def _cell_share(cell: MileageCell, shares: PassengerShareTable, region: Region,
                mode: str) -> float:
    area = _share_area(cell)
    state = region.share_state
    if mode == "mean_arterial_other":
        return (shares.get(state, area, ShareGroup.OTHER_ARTERIAL)
                + shares.get(state, area, ShareGroup.OTHER)) / 2.0
    return shares.get(state, area, SHARE_GROUP_OF_CLASS[cell.functional_class])


def merge_mileage(
    cells: list[MileageCell],
    shares: PassengerShareTable | None,
    region: Region,
    road_rule: str,
    scope: str = "surface",
) -> float:
    """Annual VMT (millions) for a region under a road rule.

    ``scope="surface"`` applies the rule's road filter; ``scope="all"``
    keeps every class.  With a share table the result is passenger-vehicle
    VMT; without one it is total VMT.  Additive over disjoint cell sets.
    """
    if road_rule not in ROAD_RULES:
        raise ValidationError(
            f"unknown road rule {road_rule!r}; expected one of {sorted(ROAD_RULES)}"
        )
    if scope not in ("surface", "all"):
        raise ValidationError(f"scope must be 'surface' or 'all', got {scope!r}")
    rule = ROAD_RULES[road_rule]
    total = 0.0
    matched = 0
    for cell in cells:
        if cell.region != region:
            continue
        matched += 1
        if not rule.includes(cell, scope):
            continue
        vmt = cell.vmt_millions
        if shares is not None:
            vmt *= _cell_share(cell, shares, region, rule.share_mode)
        total += vmt
    if matched == 0:
        raise ValidationError(f"no mileage cells for region {region.name}")
    if total <= 0.0:
        raise ValidationError(
            f"no mileage remains for region {region.name} under rule {road_rule}"
        )
    return total


# ---------------------------------------------------------------------------
# Rates and intervals


def garwood_interval(count: int, confidence: float = 0.95) -> tuple[float, float]:
    """Exact Poisson confidence interval on an observed integer count."""
    from scipy.stats import chi2

    if count < 0 or count != int(count):
        raise ValidationError(f"exact interval needs a nonnegative integer, got {count!r}")
    if not 0.0 < confidence < 1.0:
        raise ValidationError(f"confidence must lie in (0, 1), got {confidence!r}")
    alpha = 1.0 - confidence
    low = 0.0 if count == 0 else chi2.ppf(alpha / 2.0, 2 * count) / 2.0
    high = chi2.ppf(1.0 - alpha / 2.0, 2 * count + 2) / 2.0
    return float(low), float(high)


def compute_rate(
    numerator: float,
    vmt_millions: float,
    *,
    region: Region,
    year: int,
    severity: SeverityLevel,
    adjustment: str = "unadjusted",
    ci_count: int | None = None,
) -> BenchmarkRate:
    """Package a numerator and mileage into a rate record.

    ``ci_count`` attaches an exact Poisson interval and is only valid
    when the numerator is that same unweighted integer count.
    """
    if not vmt_millions > 0.0:
        raise ValidationError(f"vmt_millions must be positive, got {vmt_millions!r}")
    ci_low = ci_high = None
    if ci_count is not None:
        if ci_count != numerator:
            raise ValidationError(
                "exact intervals apply only to unadjusted integer counts"
            )
        lo, hi = garwood_interval(ci_count)
        ci_low, ci_high = lo / vmt_millions, hi / vmt_millions
    return BenchmarkRate(
        region=region,
        year=year,
        severity=severity,
        adjustment=adjustment,
        numerator=numerator,
        vmt_millions=vmt_millions,
        rate_ipmm=numerator / vmt_millions,
        ci_low_ipmm=ci_low,
        ci_high_ipmm=ci_high,
    )


# ---------------------------------------------------------------------------
# Report assembly

# Severity/scheme rows emitted by default, outermost first.
DEFAULT_ROWS: tuple[tuple[SeverityLevel, str], ...] = (
    (SeverityLevel.ANY_PROPERTY_DAMAGE_OR_INJURY, "blincoe"),
    (SeverityLevel.ANY_PROPERTY_DAMAGE_OR_INJURY, "blanco"),
    (SeverityLevel.POLICE_REPORTED, "unadjusted"),
    (SeverityLevel.ANY_INJURY_REPORTED, "unadjusted"),
    (SeverityLevel.ANY_INJURY_REPORTED, "blincoe"),
    (SeverityLevel.TOW_AWAY, "unadjusted"),
    (SeverityLevel.AIRBAG_DEPLOYED, "unadjusted"),
    (SeverityLevel.SUSPECTED_SERIOUS_INJURY_PLUS, "unadjusted"),
    (SeverityLevel.FATAL, "unadjusted"),
)


@dataclass
class BenchmarkReport:
    """Everything the benchmark table prints for one region and year."""

    region: Region
    year: int
    road_rule: str
    weighted: bool
    mileage: dict                    # all_roads_total / all_roads_passenger / surface_passenger
    intermediates: dict              # crashes / vehicles_any_type / passenger_all_roads
    vehicle_counts: SeverityCounts   # surface passenger, vehicle-level
    crash_counts: SeverityCounts | None
    imputation_w: float | None
    vehicles_per_crash: float | None
    rows: list[BenchmarkRate]
    pdo_share_vehicle: float | None
    pdo_share_crash: float | None
    caveats: tuple[str, ...]
    audit: dict


def _benchmark_rows(
    counts: SeverityCounts,
    vmt: float,
    region: Region,
    year: int,
    rows: tuple[tuple[SeverityLevel, str], ...],
    exact_counts: bool,
) -> list[BenchmarkRate]:
    out = []
    for severity, scheme_name in rows:
        scheme = SCHEMES.get(scheme_name)
        if scheme is None:
            raise ValidationError(f"unknown adjustment scheme {scheme_name!r}")
        numerator = apply_adjustment(counts, scheme, severity)
        ci_count = None
        if exact_counts and scheme_name == "unadjusted":
            if numerator == int(numerator):
                ci_count = int(numerator)
        out.append(compute_rate(
            numerator, vmt, region=region, year=year, severity=severity,
            adjustment=scheme_name, ci_count=ci_count,
        ))
    return out


def build_benchmark(dataset, rows: tuple[tuple[SeverityLevel, str], ...] = DEFAULT_ROWS,
                    ) -> BenchmarkReport:
    """Compute the full benchmark report from loaded microdata."""
    from .filters import select_subset

    manifest = dataset.manifest
    records = dataset.records
    region, year = manifest.region, manifest.year
    road_rule = manifest.road_rule
    if road_rule not in ROAD_RULES:
        raise ValidationError(
            f"unknown road rule {road_rule!r}; expected one of {sorted(ROAD_RULES)}"
        )

    common = dict(
        in_transport_only=True,
        unit_tow_flags=records.unit_tow_flags,
        unit_airbag_flags=records.unit_airbag_flags,
        weighted=records.weighted,
        caveats=records.caveats,
    )
    all_subset = select_subset(records.crashes, records.vehicles, road="all", **common)
    surface = select_subset(records.crashes, records.vehicles, road="surface", **common)

    surface_imp = resolve_imputation(surface, region)
    w = 1.0 if surface_imp is None else surface_imp.w
    all_imp = resolve_imputation(all_subset, region)
    w_all = 1.0 if all_imp is None else all_imp.w

    counts = tally_vehicle_counts(surface, w)
    crash_counts = tally_crash_counts(surface)

    shares = dataset.shares
    mileage_all_total = merge_mileage(dataset.mileage, None, region, road_rule, scope="all")
    mileage_all_passenger = (
        merge_mileage(dataset.mileage, shares, region, road_rule, scope="all")
        if shares is not None else None
    )
    mileage_surface = (
        merge_mileage(dataset.mileage, shares, region, road_rule, scope="surface")
        if shares is not None
        else merge_mileage(dataset.mileage, None, region, road_rule, scope="surface")
    )

    weighted_crashes = sum(s.crash.sample_weight for s in all_subset.slices.values())
    vehicles_any = sum(
        (s.passenger + s.nfs + s.other) * s.crash.sample_weight
        for s in all_subset.slices.values()
    )
    passenger_all = count_crashed_vehicles(
        all_subset, SeverityLevel.POLICE_REPORTED, w_all,
    )

    exact = not records.weighted
    report_rows = _benchmark_rows(counts, mileage_surface, region, year, rows, exact)

    audit = {
        "sources": dataset.source_audits,
        "road_rule": road_rule,
        "surface": audit_subset(surface, surface_imp),
        "all_roads": audit_subset(all_subset, all_imp),
        "diagnostics": dict(sorted(records.diagnostics.items())),
    }
    return BenchmarkReport(
        region=region,
        year=year,
        road_rule=road_rule,
        weighted=records.weighted,
        mileage={
            "all_roads_total_mmi": mileage_all_total,
            "all_roads_passenger_mmi": mileage_all_passenger,
            "surface_passenger_mmi": mileage_surface,
        },
        intermediates={
            "crashes": weighted_crashes,
            "vehicles_any_type": vehicles_any,
            "passenger_vehicles_all_roads": passenger_all,
        },
        vehicle_counts=counts,
        crash_counts=crash_counts,
        imputation_w=w if surface_imp is not None else None,
        vehicles_per_crash=(
            crash_vs_vehicle_ratio(all_subset) if all_subset.crashes else None
        ),
        rows=report_rows,
        pdo_share_vehicle=(
            pdo_share(counts) if counts.police_reported > 0 else None
        ),
        pdo_share_crash=(
            pdo_share(crash_counts) if crash_counts.police_reported > 0 else None
        ),
        caveats=records.caveats,
        audit=audit,
    )


# ---------------------------------------------------------------------------
# Published-aggregate inputs: reproduce the benchmark table without microdata


@dataclass(frozen=True)
class AggregateInputs:
    """One region-year of published intermediate totals.

    Severity levels the source did not publish carry NaN counts; rows
    needing them are skipped rather than invented.
    """

    region: Region
    year: int
    weighted: bool
    mileage_all_roads_mmi: float
    crashes_all_roads: float
    vehicles_all_roads: float
    mileage_all_roads_passenger_mmi: float
    vehicles_all_roads_passenger: float
    mileage_surface_passenger_mmi: float
    counts: SeverityCounts           # surface-street passenger, vehicle-level


def _row_published(counts: SeverityCounts, severity: SeverityLevel,
                   scheme_name: str) -> bool:
    if severity is SeverityLevel.ANY_PROPERTY_DAMAGE_OR_INJURY:
        needed = (SeverityLevel.POLICE_REPORTED, SeverityLevel.ANY_INJURY_REPORTED,
                  SeverityLevel.FATAL)
    elif scheme_name != "unadjusted":
        needed = (severity, SeverityLevel.FATAL)
    else:
        needed = (severity,)
    return all(not math.isnan(counts.get(level)) for level in needed)


def benchmark_from_aggregates(
    agg: AggregateInputs,
    rows: tuple[tuple[SeverityLevel, str], ...] = DEFAULT_ROWS,
) -> BenchmarkReport:
    """Benchmark report straight from published totals."""
    available = tuple(
        (severity, scheme) for severity, scheme in rows
        if _row_published(agg.counts, severity, scheme)
    )
    exact = not agg.weighted
    report_rows = _benchmark_rows(
        agg.counts, agg.mileage_surface_passenger_mmi,
        agg.region, agg.year, available, exact,
    )
    ratio = (agg.vehicles_all_roads / agg.crashes_all_roads
             if agg.crashes_all_roads > 0 else None)
    share_defined = (
        agg.counts.police_reported > 0
        and not math.isnan(agg.counts.any_injury_reported)
    )
    return BenchmarkReport(
        region=agg.region,
        year=agg.year,
        road_rule="published_aggregates",
        weighted=agg.weighted,
        mileage={
            "all_roads_total_mmi": agg.mileage_all_roads_mmi,
            "all_roads_passenger_mmi": agg.mileage_all_roads_passenger_mmi,
            "surface_passenger_mmi": agg.mileage_surface_passenger_mmi,
        },
        intermediates={
            "crashes": agg.crashes_all_roads,
            "vehicles_any_type": agg.vehicles_all_roads,
            "passenger_vehicles_all_roads": agg.vehicles_all_roads_passenger,
        },
        vehicle_counts=agg.counts,
        crash_counts=None,
        imputation_w=None,
        vehicles_per_crash=ratio,
        rows=report_rows,
        pdo_share_vehicle=pdo_share(agg.counts) if share_defined else None,
        pdo_share_crash=None,
        caveats=(),
        audit={"road_rule": "published_aggregates"},
    )


_AGGREGATE_COLUMNS = (
    "region", "region_state", "year", "weighted",
    "mileage_all_roads_mmi", "crashes_all_roads", "vehicles_all_roads",
    "mileage_all_roads_passenger_mmi", "vehicles_all_roads_passenger",
    "mileage_surface_passenger_mmi",
    "police_reported", "any_injury_reported", "tow_away", "airbag_deployed",
    "suspected_serious_injury_plus", "fatal",
)


def load_aggregates(source: str) -> list[AggregateInputs]:
    """Read published-aggregate rows from a CSV file or a shipped year.

    ``source`` is a path, or a bare year like "2022" naming a table
    shipped with the package.  Empty severity cells mean the source did
    not publish that level.
    """
    import csv
    import re
    from importlib import resources
    from pathlib import Path

    if re.fullmatch(r"\d{4}", source):
        resource = resources.files("crashbench").joinpath(
            "data", f"aggregates_{source}.csv"
        )
        if not resource.is_file():
            raise ValidationError(f"no shipped aggregate table for {source}")
        text = resource.read_text(encoding="utf-8")
    else:
        path = Path(source)
        if not path.is_file():
            raise ValidationError(f"aggregate table {source!r} not found")
        text = path.read_text(encoding="utf-8")

    reader = csv.DictReader(text.splitlines())
    missing = set(_AGGREGATE_COLUMNS) - set(reader.fieldnames or [])
    if missing:
        raise ValidationError(
            f"aggregate table {source}: missing column(s) {', '.join(sorted(missing))}"
        )

    def cell(row: dict, key: str, context: str) -> float:
        raw = (row.get(key) or "").strip()
        if not raw:
            return math.nan
        try:
            return float(raw)
        except ValueError:
            raise ValidationError(f"{context}: unreadable {key} {raw!r}")

    out = []
    for i, row in enumerate(reader, start=2):
        context = f"aggregate table {source} row {i}"
        name = (row.get("region") or "").strip()
        state = (row.get("region_state") or "").strip()
        region = Region.national() if name == "national" else Region.county(name, state)
        counts = SeverityCounts(
            police_reported=cell(row, "police_reported", context),
            any_injury_reported=cell(row, "any_injury_reported", context),
            tow_away=cell(row, "tow_away", context),
            airbag_deployed=cell(row, "airbag_deployed", context),
            suspected_serious_injury_plus=cell(
                row, "suspected_serious_injury_plus", context),
            fatal=cell(row, "fatal", context),
        )
        out.append(AggregateInputs(
            region=region,
            year=int(row["year"]),
            weighted=row["weighted"].strip() == "1",
            mileage_all_roads_mmi=cell(row, "mileage_all_roads_mmi", context),
            crashes_all_roads=cell(row, "crashes_all_roads", context),
            vehicles_all_roads=cell(row, "vehicles_all_roads", context),
            mileage_all_roads_passenger_mmi=cell(
                row, "mileage_all_roads_passenger_mmi", context),
            vehicles_all_roads_passenger=cell(
                row, "vehicles_all_roads_passenger", context),
            mileage_surface_passenger_mmi=cell(
                row, "mileage_surface_passenger_mmi", context),
            counts=counts,
        ))
    if not out:
        raise ValidationError(f"aggregate table {source}: no rows")
    return out
