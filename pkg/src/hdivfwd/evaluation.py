"""Error metrics and eccentricity sweeps against the layered-sphere reference.

Numerical surface values are read at the labeled skin element nearest to each
evaluation point: the element value for the mixed methods, the trilinear
interpolant inside that element for the nodal baseline.  Numerical and
reference vectors are both shifted to zero mean over the samples before the
metrics are computed (the Neumann problem fixes the potential only up to a
constant).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree
from threadpoolctl import threadpool_limits

from .analytic import LayeredSphere, SeriesConfig, surface_potential
from .assembly import SaddleSystem, assemble_system
from .cg_baseline import NodalSystem, assemble_stiffness, interpolate_nodal, rhs_partial_integration, solve_nodal
from .errors import HdivError, MetricError, ValidationError
from .hexmesh import CompartmentTable, HexMesh
from .solver import SolverConfig, line_solver, solve_potential, _preconditioner
from .sources import Dipole, rhs_direct, rhs_projected

log = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "ErrorRecord",
    "SummaryRow",
    "SurfaceSampler",
    "SweepConfig",
    "SweepSummary",
    "lnmag",
    "max_current_by_label",
    "mixed_element_current",
    "rdm",
    "run_sweep",
    "summarize",
    "write_records",
    "write_summary",
]

METHODS = ("mixed-direct", "mixed-projected", "cg-pi")
GAUGE = "mean-zero over samples"


def _pair(u_num, u_ref) -> tuple[np.ndarray, np.ndarray, float, float]:
    a = np.asarray(u_num, dtype=float).ravel()
    b = np.asarray(u_ref, dtype=float).ravel()
    if a.shape != b.shape:
        raise MetricError(f"sample count mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0 or not (np.isfinite(na) and np.isfinite(nb)):
        raise MetricError("metric undefined for a zero or non-finite vector")
    return a, b, na, nb


def rdm(u_num, u_ref) -> float:
    """Relative difference measure ``|| u/|u| - v/|v| ||``, in [0, 2]."""
    a, b, na, nb = _pair(u_num, u_ref)
    return float(np.linalg.norm(a / na - b / nb))


def lnmag(u_num, u_ref) -> float:
    """``ln(|u_num| / |u_ref|)``."""
    _, _, na, nb = _pair(u_num, u_ref)
    return math.log(na) - math.log(nb)


# -- records ------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorRecord:
    model: str
    method: str
    dipole_id: int
    eccentricity: float
    outside: bool
    rdm: float
    lnmag: float
    iterations: int = 0
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


RECORD_HEADER = "model,method,dipole_id,eccentricity,outside_flag,rdm,lnmag"


def _fmt(v: float) -> str:
    return f"{float(v) + 0.0:.17g}"


def write_records(records: Iterable[ErrorRecord], path, header_line: str | None = None) -> None:
    with open(path, "w") as fh:
        if header_line:
            fh.write(header_line.rstrip("\n") + "\n")
        fh.write(RECORD_HEADER + "\n")
        for r in records:
            fh.write(
                f"{r.model},{r.method},{r.dipole_id},{_fmt(r.eccentricity)},{int(r.outside)},"
                f"{_fmt(r.rdm)},{_fmt(r.lnmag)}\n"
            )


# -- sampling -----------------------------------------------------------------


class SurfaceSampler:
    """Maps evaluation points to their nearest element of one label."""

    def __init__(self, mesh: HexMesh, points, label: int):
        self.mesh = mesh
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        candidates = np.flatnonzero(mesh.element_labels == label)
        if candidates.size == 0:
            raise ValidationError(f"mesh has no elements with label {label}")
        _, k = cKDTree(mesh.element_centers[candidates]).query(self.points)
        self.elements = candidates[k]

    def element_values(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.elements]

    def nodal_values(self, u: np.ndarray) -> np.ndarray:
        return interpolate_nodal(self.mesh, u, self.elements, self.points)


# -- sweeps -------------------------------------------------------------------


@dataclass
class SweepConfig:
    """Settings shared by every dipole of a sweep."""

    table: CompartmentTable = field(default_factory=CompartmentTable.four_layer)
    solver: SolverConfig = field(default_factory=SolverConfig)
    series: SeriesConfig = field(default_factory=SeriesConfig)
    brain_label: int = 1
    skin_label: int = 4
    nodal_tol: float = 1e-8
    nodal_precond: str = "amg"
    threads: int = 1
    model_name: str = "sphere"


@dataclass(eq=False)
class _Context:
    mesh: HexMesh
    config: SweepConfig
    sampler: SurfaceSampler
    mixed: SaddleSystem | None
    nodal: NodalSystem | None


def _check_model(model: LayeredSphere, config: SweepConfig) -> None:
    labels = sorted(config.table.entries)
    if len(model.sigmas) > len(labels):
        raise ValidationError("analytic model has more layers than the compartment table")
    for k, s in enumerate(model.sigmas):
        t = config.table.sigma(labels[k])
        if not math.isclose(s, t, rel_tol=1e-12):
            raise ValidationError(f"layer {k + 1}: analytic sigma {s} differs from table sigma {t}")


def _solve_one(ctx: _Context, method: str, dipole: Dipole, observer) -> tuple[np.ndarray, int]:
    mesh = ctx.mesh
    if method == "cg-pi":
        u = solve_nodal(
            ctx.nodal, rhs_partial_integration(dipole, mesh), ctx.config.nodal_tol, ctx.config.nodal_precond
        )
        if observer:
            observer(dipole, method, u)
        return ctx.sampler.nodal_values(u), 0
    if method == "mixed-direct":
        rhs = rhs_direct(dipole, ctx.mixed, mesh)
    else:
        rhs = rhs_projected(dipole, ctx.mixed, mesh)
    sol = solve_potential(ctx.mixed, rhs, ctx.config.solver)
    if observer:
        observer(dipole, method, sol)
    return ctx.sampler.element_values(sol.potential), sol.iterations


def _dipole_records(ctx, model, methods, dipole, points, observer) -> list[ErrorRecord]:
    cfg = ctx.config
    e = int(ctx.mesh.locate(dipole.x0)[0])
    outside = e < 0 or ctx.mesh.element_labels[e] != cfg.brain_label
    out = []
    try:
        ref = surface_potential(model, dipole.x0, dipole.m, points, cfg.series)
        ref = ref - ref.mean()
    except HdivError as exc:
        return [ErrorRecord(cfg.model_name, m, dipole.id, dipole.eccentricity, True, math.nan, math.nan, 0,
                            f"reference: {exc}") for m in methods]
    for method in methods:
        try:
            vals, its = _solve_one(ctx, method, dipole, observer)
            vals = vals - vals.mean()
            out.append(ErrorRecord(cfg.model_name, method, dipole.id, dipole.eccentricity, bool(outside),
                                   rdm(vals, ref), lnmag(vals, ref), its))
        except HdivError as exc:
            log.warning("dipole %d, %s failed: %s", dipole.id, method, exc)
            out.append(ErrorRecord(cfg.model_name, method, dipole.id, dipole.eccentricity, bool(outside),
                                   math.nan, math.nan, 0, str(exc)))
    return out


def run_sweep(
    mesh: HexMesh,
    model: LayeredSphere,
    methods: Sequence[str],
    dipoles: Sequence[Dipole],
    sensors,
    config: SweepConfig | None = None,
    observer: Callable | None = None,
    systems: dict | None = None,
) -> list[ErrorRecord]:
    """Solve every dipole with every method and compare with the analytic reference.

    ``sensors`` are evaluation points on the outer surface.  Records are
    ordered by dipole id, then by method order.  Failed solves are kept as
    records with NaN metrics and a non-``ok`` status.  ``observer(dipole,
    method, solution)`` is called after each solve (from worker threads when
    ``threads > 1``).  ``systems`` may pass prebuilt ``"mixed"`` / ``"nodal"``
    systems to share assembly between sweeps.
    """
    config = config or SweepConfig()
    methods = list(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValidationError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
    if not dipoles:
        return []
    _check_model(model, config)
    systems = {} if systems is None else systems
    points = np.atleast_2d(np.asarray(sensors, dtype=float))
    with threadpool_limits(limits=1):
        if any(m.startswith("mixed") for m in methods) and "mixed" not in systems:
            systems["mixed"] = assemble_system(mesh, config.table)
        if "cg-pi" in methods and "nodal" not in systems:
            systems["nodal"] = assemble_stiffness(mesh, config.table)
        ctx = _Context(mesh, config, SurfaceSampler(mesh, points, config.skin_label),
                       systems.get("mixed"), systems.get("nodal"))
        # build shared factorizations before workers start
        if ctx.mixed is not None:
            line_solver(ctx.mixed)
            _preconditioner(ctx.mixed, config.solver)
        if ctx.nodal is not None:
            from .cg_baseline import _nodal_preconditioner

            _nodal_preconditioner(ctx.nodal, config.nodal_precond)
        ordered = sorted(dipoles, key=lambda d: d.id)

        def task(d):
            return _dipole_records(ctx, model, methods, d, points, observer)

        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                chunks = list(pool.map(task, ordered))
        else:
            chunks = [task(d) for d in ordered]
    return [r for chunk in chunks for r in chunk]


# -- statistics ---------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    method: str
    eccentricity: float
    metric: str
    min: float
    q1: float
    median: float
    q3: float
    max: float
    count: int


@dataclass
class SweepSummary:
    rows: list

    def get(self, method: str, metric: str = "rdm") -> list[SummaryRow]:
        return [r for r in self.rows if r.method == method and r.metric == metric]

    def row(self, method: str, eccentricity: float, metric: str = "rdm") -> SummaryRow:
        for r in self.get(method, metric):
            if math.isclose(r.eccentricity, eccentricity, rel_tol=0, abs_tol=1e-9):
                return r
        raise KeyError((method, eccentricity, metric))


SUMMARY_HEADER = "method,eccentricity,metric,min,q1,median,q3,max,count"


def summarize(records: Iterable[ErrorRecord], metrics=("rdm", "lnmag")) -> SweepSummary:
    """Order statistics per (method, eccentricity); quartiles by linear interpolation (R-7).

    Failed records are skipped.
    """
    records = [r for r in records if r.ok]
    if not records:
        raise ValidationError("cannot summarize an empty record set")
    groups: dict = {}
    for r in records:
        groups.setdefault((r.method, round(r.eccentricity, 12)), []).append(r)
    method_rank = {m: i for i, m in enumerate(METHODS)}
    rows = []
    for (method, ecc) in sorted(groups, key=lambda k: (method_rank.get(k[0], 99), k[0], k[1])):
        recs = groups[(method, ecc)]
        for metric in metrics:
            v = np.array([getattr(r, metric) for r in recs])
            q = np.percentile(v, [0, 25, 50, 75, 100], method="linear")
            rows.append(SummaryRow(method, float(ecc), metric, *map(float, q), len(v)))
    return SweepSummary(rows)


def write_summary(summary: SweepSummary, path, header_line: str | None = None) -> None:
    with open(path, "w") as fh:
        if header_line:
            fh.write(header_line.rstrip("\n") + "\n")
        fh.write(SUMMARY_HEADER + "\n")
        for r in summary.rows:
            vals = ",".join(_fmt(x) for x in (r.min, r.q1, r.median, r.q3, r.max))
            fh.write(f"{r.method},{_fmt(r.eccentricity)},{r.metric},{vals},{r.count}\n")


# -- current fields -----------------------------------------------------------


def mixed_element_current(mesh: HexMesh, system: SaddleSystem, j: np.ndarray) -> np.ndarray:
    """Element averages of the RT0 current, shape (n_elements, 3).

    The average of the RT0 field over a cube is the mean of the normal
    values on the two opposite faces of each axis.
    """
    full = np.zeros(mesh.topology.n_faces)
    full[system.interior_faces] = j
    ef = mesh.element_faces
    return np.stack([0.5 * (full[ef[:, 2 * a]] + full[ef[:, 2 * a + 1]]) for a in range(3)], axis=1)


def max_current_by_label(mesh: HexMesh, current: np.ndarray) -> dict:
    """Largest current magnitude per compartment label."""
    mag = np.linalg.norm(current, axis=1)
    labels = mesh.element_labels
    return {int(l): float(mag[labels == l].max()) for l in np.unique(labels)}
