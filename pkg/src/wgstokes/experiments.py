"""Convergence studies, lower-bound reports, and result export.

``run_study`` reproduces the paper-style eigenvalue tables: one row per
(mesh size, eigenvalue index) with the signed error against a reference
eigenvalue and the pairwise convergence order.  References are either
user-supplied or extrapolated from degree-2 runs.  ``export`` writes a
deterministic CSV (plus SVG error plots and raster snapshots of the
first eigenfunction) so identical studies produce identical files.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import assemble, eval_interior, eval_pressure
from .eigensolver import SolverError, solve_smallest
from .mesh import Mesh, build_l_shape_mesh, build_unit_square_mesh
from .space import GammaSchedule, StabilizerKind, WeakFunction, build_space

__all__ = [
    "StudyConfig",
    "StudyRow",
    "StudyResult",
    "LowerBoundReport",
    "run_study",
    "reference_eigenvalues",
    "lower_bound_report",
    "export",
    "fit_order",
    "locate_points",
    "DOMAINS",
]

DOMAINS = ("square", "l-shape")
RASTER_SIZE = 129


def build_domain_mesh(domain: str, n: int) -> Mesh:
    if domain == "square":
        return build_unit_square_mesh(n)
    if domain == "l-shape":
        return build_l_shape_mesh(n)
    raise ValueError(f"unknown domain {domain!r}; expected one of {DOMAINS}")


@dataclass(frozen=True)
class StudyConfig:
    """Parameters of one convergence study."""

    domain: str = "square"
    k: int = 1
    gamma: GammaSchedule = GammaSchedule("power", 0.1)
    stabilizer: StabilizerKind = StabilizerKind()
    h_denominators: tuple[int, ...] = (4, 8, 16, 32)
    num_eigs: int = 6
    references: tuple[float, ...] | None = None
    reference_provenance: str = ""
    export_fields: bool = False
    tol: float = 1e-9

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.num_eigs < 1:
            raise ValueError("num_eigs must be >= 1")
        denoms = tuple(int(n) for n in self.h_denominators)
        if len(denoms) == 0 or any(n < 1 for n in denoms):
            raise ValueError("h denominators must be positive integers")
        if any(b <= a for a, b in zip(denoms, denoms[1:])):
            raise ValueError("h sequence must be strictly decreasing (denominators increasing)")
        object.__setattr__(self, "h_denominators", denoms)
        if self.references is not None:
            if len(self.references) < self.num_eigs:
                raise ValueError("need one reference per requested eigenvalue")
            object.__setattr__(self, "references", tuple(float(x) for x in self.references))


@dataclass
class StudyRow:
    domain: str
    k: int
    gamma_label: str
    n: int                  # h = 1/n
    h: float
    j: int                  # eigenvalue index, 1-based
    lambda_h: float
    lambda_ref: float
    error: float            # lambda_ref - lambda_h
    order: float | None     # defined from the second level on
    lower_bound: bool       # error >= 0
    failed: bool = False
    note: str = ""


@dataclass
class StudyResult:
    config: StudyConfig
    rows: list[StudyRow]
    references: np.ndarray
    reference_provenance: str
    fields: dict | None = None  # raster grids of the first eigenpair


_REFERENCE_CACHE: dict = {}

_DEFAULT_REF_LEVELS = {"square": (8, 16), "l-shape": (8, 16, 32)}


def reference_eigenvalues(
    domain: str,
    m: int,
    levels: tuple[int, ...] | None = None,
    k: int = 2,
    tol: float = 1e-10,
) -> tuple[np.ndarray, str, bool]:
    """Reference eigenvalues by extrapolation of degree-k (default 2) runs.

    Uses the h^{2k} Richardson model on the two finest levels.  When
    three or more levels are available and a mode's empirical rate
    deviates clearly from 2k (the reentrant-corner mode does), that
    mode is extrapolated with its measured rate instead; the h^{2k}
    model would leave most of the singular error in place.  Returns
    (values, provenance, low_confidence).
    """
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    if levels is None:
        levels = _DEFAULT_REF_LEVELS[domain]
    levels = tuple(sorted(int(n) for n in levels))
    if len(levels) < 2:
        raise ValueError("need at least two levels to extrapolate")
    key = (domain, m, k, levels)
    if key in _REFERENCE_CACHE:
        return _REFERENCE_CACHE[key]

    vals = []
    for n in levels:
        mesh = build_domain_mesh(domain, n)
        space = build_space(mesh, k)
        system = assemble(mesh, space, GammaSchedule(), StabilizerKind())
        vals.append(solve_smallest(system, m, tol=tol).values)
    vals = np.array(vals)

    low_confidence = False
    if not np.all(np.diff(vals, axis=0) > -1e-9):
        warnings.warn(
            "reference extrapolation: eigenvalue sequence not monotone; "
            "references flagged low-confidence"
        )
        low_confidence = True

    model_rate = 2.0 * k
    refs = np.empty(m)
    modes = []
    for j in range(m):
        lam = vals[:, j]
        d_last = lam[-1] - lam[-2]
        if abs(d_last) < 1e-10 * max(abs(lam[-1]), 1.0):
            refs[j] = lam[-1]
            modes.append("converged")
            continue
        rate = model_rate
        tag = f"richardson-h{int(model_rate)}"
        if len(levels) >= 3:
            d1 = lam[-2] - lam[-3]
            d2 = d_last
            if d1 * d2 > 0 and abs(d2) < abs(d1):
                measured = float(np.log2(d1 / d2))
                if measured < model_rate - 0.5 and 0.2 < measured:
                    rate = measured
                    tag = f"aitken-rate{measured:.2f}"
        refs[j] = lam[-1] + d_last / (2.0**rate - 1.0)
        modes.append(tag)

    provenance = (
        f"extrapolated from k={k}, gamma=const WG eigenvalues at "
        f"n={levels} ({'; '.join(modes)})"
    )
    result = (refs, provenance, low_confidence)
    _REFERENCE_CACHE[key] = result
    return result


def run_study(config: StudyConfig) -> StudyResult:
    """Solve the eigenproblem over the configured h sequence."""
    m = config.num_eigs
    if config.references is not None:
        refs = np.array(config.references[:m])
        provenance = config.reference_provenance or "user-supplied"
    else:
        refs, provenance, _ = reference_eigenvalues(config.domain, m)

    rows: list[StudyRow] = []
    prev_err: dict[int, float] = {}
    fields = None
    for n in config.h_denominators:
        h = 1.0 / n
        try:
            mesh = build_domain_mesh(config.domain, n)
            space = build_space(mesh, config.k)
            system = assemble(mesh, space, config.gamma, config.stabilizer)
            res = solve_smallest(system, m, tol=config.tol)
        except (SolverError, ValueError) as exc:
            for j in range(1, m + 1):
                rows.append(
                    StudyRow(
                        domain=config.domain,
                        k=config.k,
                        gamma_label=config.gamma.label(),
                        n=n,
                        h=h,
                        j=j,
                        lambda_h=float("nan"),
                        lambda_ref=float(refs[j - 1]),
                        error=float("nan"),
                        order=None,
                        lower_bound=False,
                        failed=True,
                        note=str(exc),
                    )
                )
            prev_err = {}
            continue

        for j in range(1, m + 1):
            lam_h = float(res.values[j - 1])
            err = float(refs[j - 1]) - lam_h
            order = None
            if j in prev_err and prev_err[j] * err > 0:
                order = float(np.log2(prev_err[j] / err))
            rows.append(
                StudyRow(
                    domain=config.domain,
                    k=config.k,
                    gamma_label=config.gamma.label(),
                    n=n,
                    h=h,
                    j=j,
                    lambda_h=lam_h,
                    lambda_ref=float(refs[j - 1]),
                    error=err,
                    order=order,
                    lower_bound=err >= 0,
                )
            )
            prev_err[j] = err

        if config.export_fields and n == config.h_denominators[-1]:
            fields = _raster_fields(space, res)

    return StudyResult(
        config=config,
        rows=rows,
        references=refs,
        reference_provenance=provenance,
        fields=fields,
    )


@dataclass
class LowerBoundReport:
    """Summary of the lower-bound flags of a study table."""

    gamma_vanishing: bool
    total: int
    positive: int
    fraction: float
    per_mode: dict[int, float]
    statuses: list[str]


def lower_bound_report(rows: list[StudyRow]) -> LowerBoundReport:
    """Fraction of rows observing lambda_h <= lambda_ref.

    The asymptotic guarantee only applies when gamma(h) -> 0; for a
    constant gamma the rows are marked "uncertified" (no claim is made
    either way).
    """
    ok_rows = [r for r in rows if not r.failed]
    vanishing = all(
        GammaSchedule.parse(r.gamma_label).vanishing for r in ok_rows
    ) if ok_rows else False
    positive = sum(1 for r in ok_rows if r.lower_bound)
    per_mode: dict[int, float] = {}
    for j in sorted({r.j for r in ok_rows}):
        sub = [r for r in ok_rows if r.j == j]
        per_mode[j] = sum(1 for r in sub if r.lower_bound) / len(sub)
    statuses = []
    for r in rows:
        if r.failed:
            statuses.append("failed")
        elif not vanishing:
            statuses.append("uncertified")
        elif r.lower_bound:
            statuses.append("lower-bound")
        else:
            statuses.append("violated")
    return LowerBoundReport(
        gamma_vanishing=vanishing,
        total=len(ok_rows),
        positive=positive,
        fraction=positive / len(ok_rows) if ok_rows else 0.0,
        per_mode=per_mode,
        statuses=statuses,
    )


def fit_order(hs, errors) -> float:
    """Least-squares slope of log(error) vs log(h)."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if np.any(errors <= 0):
        raise ValueError("order fit needs positive errors")
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


# ---------------------------------------------------------------------------
# eigenfunction rasters


def locate_points(mesh: Mesh, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Containing cell of each point, -1 outside the mesh."""
    pts = np.asarray(pts, dtype=float)
    out = np.full(len(pts), -1, dtype=np.int64)
    coords = mesh.vertex_coords
    tris = mesh.cell_vertices
    unassigned = np.arange(len(pts))
    for c in range(mesh.num_cells):
        if unassigned.size == 0:
            break
        v0, v1, v2 = coords[tris[c, 0]], coords[tris[c, 1]], coords[tris[c, 2]]
        lo = np.minimum(np.minimum(v0, v1), v2) - tol
        hi = np.maximum(np.maximum(v0, v1), v2) + tol
        p = pts[unassigned]
        boxed = np.all((p >= lo) & (p <= hi), axis=1)
        if not boxed.any():
            continue
        cand = unassigned[boxed]
        p = pts[cand]
        det = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1])
        l1 = ((p[:, 0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (p[:, 1] - v0[1])) / det
        l2 = ((v1[0] - v0[0]) * (p[:, 1] - v0[1]) - (p[:, 0] - v0[0]) * (v1[1] - v0[1])) / det
        inside = (l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1 + tol)
        hit = cand[inside]
        out[hit] = c
        unassigned = np.setdiff1d(unassigned, hit, assume_unique=True)
    return out


def _raster_fields(space, eigres) -> dict:
    """Sample u1, u2, |u|, p of the first eigenpair on a uniform raster."""
    mesh = space.mesh
    lo = mesh.vertex_coords.min(axis=0)
    hi = mesh.vertex_coords.max(axis=0)
    xs = np.linspace(lo[0], hi[0], RASTER_SIZE)
    ys = np.linspace(lo[1], hi[1], RASTER_SIZE)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    cells = locate_points(mesh, pts)
    inside = cells >= 0

    w = WeakFunction(space, eigres.vectors[:, 0])
    vel = np.full((len(pts), 2), np.nan)
    vel[inside] = eval_interior(w, cells[inside], pts[inside])
    pval = np.full(len(pts), np.nan)
    pval[inside] = eval_pressure(space, eigres.pressures[:, 0], cells[inside], pts[inside])

    shape = (RASTER_SIZE, RASTER_SIZE)
    return {
        "x": xs,
        "y": ys,
        "u1": vel[:, 0].reshape(shape),
        "u2": vel[:, 1].reshape(shape),
        "umag": np.hypot(vel[:, 0], vel[:, 1]).reshape(shape),
        "p": pval.reshape(shape),
    }


# ---------------------------------------------------------------------------
# export


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and np.isnan(x):
        return "nan"
    return f"{x:.12g}"


def export(result: StudyResult, prefix: str, metadata: dict | None = None) -> list[str]:
    """Write the study CSV, per-mode error plots, and field rasters.

    Returns the list of files written.  The CSV is deterministic:
    identical studies export byte-identical tables.
    """
    import os

    cfg = result.config
    os.makedirs(os.path.dirname(os.path.abspath(f"{prefix}.csv")), exist_ok=True)
    written = []

    csv_path = f"{prefix}.csv"
    meta = {
        "domain": cfg.domain,
        "k": cfg.k,
        "gamma": cfg.gamma.label(),
        "stabilizer": cfg.stabilizer.label(),
        "h_seq": ",".join(str(n) for n in cfg.h_denominators),
        "num_eigs": cfg.num_eigs,
        "tol": _fmt(cfg.tol),
        "references": result.reference_provenance,
    }
    if metadata:
        meta.update(metadata)
    with open(csv_path, "w", encoding="utf-8", newline="\n") as f:
        for key, val in meta.items():
            f.write(f"# {key} = {val}\n")
        f.write("domain,k,gamma,h,j,lambda_h,lambda_ref,error,order,lower_bound\n")
        for r in result.rows:
            f.write(
                ",".join(
                    [
                        r.domain,
                        str(r.k),
                        r.gamma_label,
                        _fmt(r.h),
                        str(r.j),
                        _fmt(r.lambda_h),
                        _fmt(r.lambda_ref),
                        _fmt(r.error),
                        _fmt(r.order),
                        "1" if r.lower_bound else "0",
                    ]
                )
                + "\n"
            )
    written.append(csv_path)

    written += _export_plots(result, prefix)

    if result.fields is not None:
        for name in ("u1", "u2", "umag", "p"):
            path = f"{prefix}_field_{name}.csv"
            _write_grid(path, result.fields, name)
            written.append(path)
    return written


def _export_plots(result: StudyResult, prefix: str) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "wgstokes"
    written = []
    cfg = result.config
    for j in range(1, cfg.num_eigs + 1):
        rows = [r for r in result.rows if r.j == j and not r.failed]
        if not rows:
            continue
        hs = [r.h for r in rows]
        errs = [abs(r.error) for r in rows]
        fig, ax = plt.subplots(figsize=(4.5, 3.4))
        ax.loglog(hs, errs, "o-", label=f"|lambda_ref - lambda_h|, j={j}")
        if all(e > 0 for e in errs) and len(hs) > 1:
            slope = fit_order(hs, errs)
            ax.loglog(
                hs,
                [errs[-1] * (h / hs[-1]) ** slope for h in hs],
                "--",
                label=f"slope {slope:.2f}",
            )
        ax.set_xlabel("h")
        ax.set_ylabel("eigenvalue error")
        ax.set_title(f"{cfg.domain}, k={cfg.k}, gamma={cfg.gamma.label()}")
        ax.legend(fontsize=8)
        ax.grid(True, which="both", alpha=0.3)
        fig.tight_layout()
        path = f"{prefix}_eig{j}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    return written


def _write_grid(path: str, fields: dict, name: str) -> None:
    grid = fields[name]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# field = {name}, rows follow y, columns follow x\n")
        f.write("# x = " + ",".join(_fmt(v) for v in fields["x"]) + "\n")
        f.write("# y = " + ",".join(_fmt(v) for v in fields["y"]) + "\n")
        for row in grid:
            f.write(",".join(_fmt(v) for v in row) + "\n")
