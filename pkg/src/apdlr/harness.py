"""Run configuration, orchestration of single runs and studies, and file output.

Configuration files are flat ``section.key = value`` text; every key has a
command-line flag of the same meaning (see :data:`CONFIG_KEYS`) and flags
override the file.  All output files except ``timing.txt`` are a pure
function of the configuration and seed, so repeated runs are byte-identical.
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import mesh
from .diagnostics import (RANK_THRESHOLD, RunRecord, convergence_slope,
                          l2_error_centers, singular_values)
from .integrator import (CFL_KINDS, ORDERINGS, SchemeConfig, State, advance, masses,
                         select_dt, time_steps)
from .lowrank import DEFAULT_SEED, orthonormality_defect
from .problems import CATALOG, discretize, get_problem
from .reference import dense_initial_g, diffusion_step, full_tensor_step
from .velocity import QuadratureError, available_sizes, load_velocity_set

COMPARE_MODES = ("none", "full-tensor", "diffusion")


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(",", " ").split()]


def _ints(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).replace(",", " ").split()]


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# config key -> (RunConfig field, parser, CLI flag)
CONFIG_KEYS = {
    "problem.name": ("problem", str, "--problem"),
    "problem.eps": ("eps", float, "--eps"),
    "grid.nx": ("Nx", int, "--nx"),
    "grid.ny": ("Ny", int, "--ny"),
    "velocity.n": ("n_v", int, "--nv"),
    "velocity.dir": ("quadrature_dir", str, "--quadrature-dir"),
    "lowrank.rank": ("rank", int, "--rank"),
    "lowrank.augment": ("augment", _bool, "--augment"),
    "scheme.order": ("order", int, "--order"),
    "scheme.substep_order": ("substep_order", str, "--substep-order"),
    "scheme.cfl": ("cfl", str, "--cfl"),
    "scheme.c1": ("c1", float, "--c1"),
    "scheme.c2": ("c2", float, "--c2"),
    "scheme.t_end": ("t_end", float, "--t-end"),
    "scheme.dt": ("dt", float, "--dt"),
    "output.dir": ("output_dir", str, "--out"),
    "output.snapshot_every": ("snapshot_every", int, "--snapshot-every"),
    "run.compare": ("compare", str, "--compare"),
    "run.seed": ("seed", int, "--seed"),
    "run.paper_scale": ("paper_scale", _bool, "--paper-scale"),
    "study.grids": ("grids", _ints, "--grids"),
    "study.eps_list": ("eps_list", _floats, "--eps-list"),
    "study.ranks": ("ranks", _ints, "--ranks"),
}


@dataclass
class RunConfig:
    """User-facing run description; ``None`` means "problem default"."""

    problem: str = "manufactured"
    eps: Optional[float] = None
    Nx: Optional[int] = None
    Ny: Optional[int] = None
    n_v: Optional[int] = None
    quadrature_dir: Optional[str] = None
    rank: Optional[int] = None
    augment: bool = True
    order: int = 1
    substep_order: str = "KLS"
    cfl: Optional[str] = None
    c1: Optional[float] = None
    c2: Optional[float] = None
    t_end: Optional[float] = None
    dt: Optional[float] = None
    output_dir: str = "apdlr_out"
    snapshot_every: int = 0
    compare: str = "none"
    seed: int = DEFAULT_SEED
    paper_scale: bool = False
    grids: list = field(default_factory=lambda: [16, 32, 64, 128])
    eps_list: list = field(default_factory=lambda: [1.0, 1e-6])
    ranks: list = field(default_factory=lambda: [10, 20, 40, 60])

    def updated(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def parse_config_text(text) -> dict:
    """``section.key = value`` lines to ``{field: value}``; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(str(text).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'section.key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if key not in CONFIG_KEYS:
            raise ConfigError(key, f"unknown key; known keys: {', '.join(CONFIG_KEYS)}")
        name, parse, _ = CONFIG_KEYS[key]
        try:
            out[name] = parse(value)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for key, (name, _, _) in CONFIG_KEYS.items():
        v = getattr(cfg, name)
        if v is None:
            continue
        if isinstance(v, (list, tuple)):
            v = ",".join(_fmt(x) for x in v)
        lines.append(f"{key} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- resolve --

@dataclass
class ResolvedRun:
    cfg: RunConfig
    disc: object
    scheme: SchemeConfig
    rank: int
    dt: float


def resolve(cfg: RunConfig) -> ResolvedRun:
    """Fill problem defaults and validate every field before anything runs."""
    if cfg.problem not in CATALOG:
        raise ConfigError("problem.name", f"unknown problem {cfg.problem!r}; "
                          f"available: {', '.join(CATALOG)}")
    kw = {} if cfg.eps is None else {"eps": cfg.eps}
    if cfg.eps is not None and not cfg.eps > 0:
        raise ConfigError("problem.eps", "must be positive")
    problem = get_problem(cfg.problem, **kw)
    defaults = problem.defaults(cfg.paper_scale)
    pick = lambda v, k: defaults.get(k) if v is None else v
    Nx = pick(cfg.Nx, "Nx")
    Ny = cfg.Ny if cfg.Ny is not None else Nx
    n_v = pick(cfg.n_v, "n_v")
    rank = pick(cfg.rank, "rank")
    cfl = pick(cfg.cfl, "cfl")
    c1, c2 = pick(cfg.c1, "c1"), pick(cfg.c2, "c2")
    t_end = pick(cfg.t_end, "t_end")
    for key, v in (("grid.nx", Nx), ("grid.ny", Ny)):
        if v < 4:
            raise ConfigError(key, f"needs at least 4 cells, got {v}")
    sizes = available_sizes(cfg.quadrature_dir)
    if n_v not in sizes:
        raise ConfigError("velocity.n", f"no quadrature with {n_v} nodes; available: {sizes}")
    if cfg.order not in (1, 2):
        raise ConfigError("scheme.order", f"must be 1 or 2, got {cfg.order}")
    if cfg.substep_order not in ORDERINGS:
        raise ConfigError("scheme.substep_order", f"must be one of {', '.join(ORDERINGS)}")
    if cfl not in CFL_KINDS:
        raise ConfigError("scheme.cfl", f"must be one of {', '.join(CFL_KINDS)}")
    for key, v in (("scheme.c1", c1), ("scheme.c2", c2), ("scheme.t_end", t_end)):
        if not v > 0:
            raise ConfigError(key, f"must be positive, got {v}")
    if cfg.dt is not None and not cfg.dt > 0:
        raise ConfigError("scheme.dt", "must be positive")
    if cfg.compare not in COMPARE_MODES:
        raise ConfigError("run.compare", f"must be one of {', '.join(COMPARE_MODES)}")
    if cfg.snapshot_every < 0:
        raise ConfigError("output.snapshot_every", "must be >= 0")
    m = 2 * Nx * Ny
    if not 1 <= rank <= min(m, n_v):
        raise ConfigError("lowrank.rank", f"must lie in [1, {min(m, n_v)}], got {rank}")
    if cfg.augment and rank < 4:
        raise ConfigError("lowrank.rank", "augmentation with xi, eta, gamma needs rank >= 4")
    try:
        vs = load_velocity_set(n_v, cfg.quadrature_dir)
    except QuadratureError as exc:
        raise ConfigError("velocity.n", str(exc)) from None
    disc = discretize(problem, Nx, Ny=Ny, vs=vs)
    if cfl == "mixed" and disc.coeffs.sigma_s_min <= 0:
        raise ConfigError("scheme.cfl", "mixed CFL needs some positive sigma_S")
    if cfg.compare == "diffusion" and np.any(disc.coeffs.sigma_s_faces <= 0):
        raise ConfigError("run.compare", "the diffusion limit needs sigma_S > 0 everywhere")
    scheme = SchemeConfig(order=cfg.order, substep_order=cfg.substep_order, cfl=cfl,
                          c1=c1, c2=c2, t_end=t_end, seed=cfg.seed)
    dt = select_dt(scheme, disc.grid, disc.coeffs) if cfg.dt is None else cfg.dt
    resolved = cfg.updated(eps=problem.eps, Nx=Nx, Ny=Ny, n_v=n_v, rank=rank, cfl=cfl,
                           c1=c1, c2=c2, t_end=t_end)
    return ResolvedRun(resolved, disc, scheme, rank, dt)


# ----------------------------------------------------------------- output --

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _grid_header(grid, **extra):
    meta = dict(grid.metadata(), **extra)
    return "# " + " ".join(f"{k}={_fmt(v)}" for k, v in meta.items())


def write_density_csv(path, rho, grid, t):
    """Both density families with coordinates; the header carries grid metadata."""
    X, Y = grid.macro_points()
    lines = [_grid_header(grid, t=t, families="vertex,center"), "family,l,k,x,y,rho"]
    for fam, name in ((mesh.VERTEX, "vertex"), (mesh.CENTER, "center")):
        for l in range(grid.Ny):
            for k in range(grid.Nx):
                lines.append(f"{name},{l},{k},{float(X[fam, l, k])!r},{float(Y[fam, l, k])!r},"
                             f"{float(rho[fam, l, k])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_density_csv(path):
    """Inverse of :func:`write_density_csv`: ``(rho, metadata)``."""
    text = Path(path).read_text().splitlines()
    meta = dict(kv.split("=", 1) for kv in text[0][2:].split())
    Nx, Ny = int(meta["Nx"]), int(meta["Ny"])
    rho = np.empty((2, Ny, Nx))
    for line in text[2:]:
        fam, l, k, _, _, v = line.split(",")
        rho[0 if fam == "vertex" else 1, int(l), int(k)] = float(v)
    return rho, meta


def write_sigma_csv(path, record: RunRecord, grid):
    r = max(len(s) for s in record.sigmas)
    head = ["step", "t", "dt", "effective_rank", "mass_vertex", "mass_center"]
    head += [f"sigma_{j + 1}" for j in range(r)]
    lines = [_grid_header(grid, threshold=RANK_THRESHOLD), ",".join(head)]
    for i in range(len(record.steps)):
        row = [record.steps[i], record.times[i], record.dts[i], record.ranks[i],
               *record.masses[i], *record.sigmas[i]]
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_table_csv(path, header, rows, comment=None):
    lines = [] if comment is None else [comment]
    lines.append(",".join(header))
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary(path, items: dict):
    Path(path).write_text("".join(f"{k} = {_fmt(v)}\n" for k, v in items.items()))


def read_summary(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k] = v
    return out


# ------------------------------------------------------------------- runs --

@dataclass
class RunOutcome:
    record: RunRecord
    rho: np.ndarray
    resolved: ResolvedRun
    trace: list = field(default_factory=list)
    reference_rho: Optional[np.ndarray] = None
    wall_time: float = 0.0
    reference_wall_time: float = 0.0


def simulate(rr: ResolvedRun, compare="none", snapshot=None, track_orthonormality=True):
    """Low-rank run with an optional reference solver advanced in lockstep.

    ``snapshot(step, t, rho)`` is called at every recorded step.
    """
    disc, scheme = rr.disc, rr.scheme
    grid, vs, coeffs = disc.grid, disc.vs, disc.coeffs
    F = disc.initial_factors(rr.rank, augment=rr.cfg.augment)
    state = State(F, disc.initial_rho(), 0.0)
    steps = time_steps(rr.dt, scheme.t_end)
    every = rr.cfg.snapshot_every or len(steps)
    record = RunRecord(config=dataclasses.asdict(rr.cfg))
    record.add(0, 0.0, 0.0, singular_values(F.S), masses(state.rho),
               orthonormality_defect(F, grid, vs) if track_orthonormality else None)
    ref = None
    if compare == "full-tensor":
        ref = (disc.initial_rho(), dense_initial_g(disc))
    elif compare == "diffusion":
        # the order-2 limit lags the half-step flux; the first lag is flux free
        ref = (disc.initial_rho(), np.zeros(grid.shape))
    trace = []
    if ref is not None:
        trace.append((0, 0.0, l2_error_centers(state.rho, ref[0], grid)))
    if snapshot is not None:
        snapshot(0, 0.0, state.rho)
    wall = wall_ref = 0.0
    for i, h in enumerate(steps, start=1):
        t0 = time.perf_counter()
        t_old = state.t
        state = advance(state, scheme, disc, h, i)
        if i == len(steps):
            state.t = scheme.t_end
        wall += time.perf_counter() - t0
        if ref is not None:
            t0 = time.perf_counter()
            if compare == "full-tensor":
                ref = full_tensor_step(ref[0], ref[1], coeffs, grid, vs, h,
                                       disc.macro_source, disc.micro_source, t_old)
            elif scheme.order == 1:
                ref = (diffusion_step(ref[0], coeffs, grid, h, disc.macro_source, t_old), None)
            else:
                ref = diffusion_step(ref[0], coeffs, grid, h, disc.macro_source, t_old,
                                     "rk2", ref[1])
            wall_ref += time.perf_counter() - t0
        if i % every == 0 or i == len(steps):
            record.add(i, state.t, h, singular_values(state.F.S), masses(state.rho),
                       orthonormality_defect(state.F, grid, vs) if track_orthonormality
                       else None)
            if ref is not None:
                trace.append((i, state.t, l2_error_centers(state.rho, ref[0], grid)))
            if snapshot is not None:
                snapshot(i, state.t, state.rho)
    record.wall_time = wall
    return RunOutcome(record, state.rho, rr, trace, None if ref is None else ref[0],
                      wall, wall_ref)


def _summary_items(out: RunOutcome, extra=None):
    rr = out.resolved
    rec = out.record
    items = {"problem": rr.cfg.problem, "eps": rr.disc.coeffs.eps, "Nx": rr.disc.grid.Nx,
             "Ny": rr.disc.grid.Ny, "n_v": rr.disc.vs.n, "rank": rr.rank,
             "order": rr.scheme.order, "substep_order": rr.scheme.substep_order,
             "cfl": rr.scheme.cfl, "c1": rr.scheme.c1, "c2": rr.scheme.c2, "dt": rr.dt,
             "t_end": rr.scheme.t_end, "seed": rr.scheme.seed, "steps": rec.steps[-1],
             "effective_rank": rec.final_rank, "rank_threshold": RANK_THRESHOLD,
             "mass_drift": rec.mass_drift()}
    ortho = [o for o in rec.ortho if o is not None]
    if ortho:
        items["max_orthonormality_defect"] = max(ortho)
    exact = rr.disc.exact_rho(rr.scheme.t_end)
    if exact is not None:
        items["l2_error_exact"] = l2_error_centers(out.rho, exact, rr.disc.grid)
    if out.trace:
        items["compare"] = rr.cfg.compare
        items["l2_diff_final"] = out.trace[-1][2]
        items["l2_diff_max"] = max(d for _, _, d in out.trace)
    if extra:
        items.update(extra)
    return items


def _prepare_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_timing(outdir, items):
    write_summary(Path(outdir) / "timing.txt", items)


def cmd_run(cfg: RunConfig) -> RunOutcome:
    """Single run: density snapshots, singular-value trace, summary, config echo."""
    rr = resolve(cfg)
    outdir = _prepare_dir(rr.cfg.output_dir)
    grid = rr.disc.grid

    def snap(i, t, rho):
        write_density_csv(outdir / f"density_{i:07d}.csv", rho, grid, t)

    out = simulate(rr, rr.cfg.compare, snapshot=snap)
    write_sigma_csv(outdir / "singular_values.csv", out.record, grid)
    if out.trace:
        write_table_csv(outdir / "comparison.csv", ["step", "t", "l2_diff"], out.trace,
                        _grid_header(grid, compare=rr.cfg.compare))
    write_summary(outdir / "summary.txt", _summary_items(out))
    (outdir / "config.txt").write_text(format_config(rr.cfg))
    _write_timing(outdir, {"wall_time_lowrank": out.wall_time,
                           "wall_time_reference": out.reference_wall_time})
    return out


def cmd_compare_diffusion(cfg: RunConfig) -> RunOutcome:
    return cmd_run(cfg.updated(compare="diffusion"))


def cmd_compare_full(cfg: RunConfig) -> RunOutcome:
    return cmd_run(cfg.updated(compare="full-tensor"))


@dataclass
class StudyResult:
    rows: list
    slopes: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)


def converge_errors(cfg: RunConfig, grids, eps):
    """``(h, error)`` pairs for one ``eps`` against the exact density."""
    rows = []
    for N in grids:
        rr = resolve(cfg.updated(Nx=N, Ny=N, eps=eps))
        if rr.disc.problem.exact_rho is None:
            raise ConfigError("problem.name", f"{cfg.problem!r} has no exact solution")
        out = simulate(rr, track_orthonormality=False)
        err = l2_error_centers(out.rho, rr.disc.exact_rho(rr.scheme.t_end), rr.disc.grid)
        rows.append((rr.disc.grid.dx, err, out.wall_time))
    return rows


def cmd_converge(cfg: RunConfig, grids=None, eps_list=None) -> StudyResult:
    """Grid refinement for each ``eps``; errors against the exact density."""
    grids = list(cfg.grids if grids is None else grids)
    eps_list = list(cfg.eps_list if eps_list is None else eps_list)
    if len(grids) < 3:
        raise ConfigError("study.grids", "need at least three grids for a slope")
    outdir = _prepare_dir(cfg.output_dir)
    res = StudyResult(rows=[])
    for eps in eps_list:
        pts = converge_errors(cfg, grids, eps)
        slope = convergence_slope([e for _, e, _ in pts], [h for h, _, _ in pts])
        res.slopes[eps] = slope
        for N, (h, e, w) in zip(grids, pts):
            res.rows.append((eps, N, h, e, slope))
            res.timing[f"wall_time_eps{_fmt(eps)}_N{N}"] = w
    write_table_csv(outdir / "converge.csv", ["eps", "Nx", "h", "l2_error", "slope"], res.rows)
    write_summary(outdir / "summary.txt",
                  {f"slope_eps_{_fmt(e)}": s for e, s in res.slopes.items()})
    (outdir / "config.txt").write_text(format_config(cfg))
    _write_timing(outdir, res.timing)
    return res


def cmd_rank_sweep(cfg: RunConfig, ranks=None) -> StudyResult:
    """Low-rank runs at several ranks against one full-tensor baseline."""
    ranks = list(cfg.ranks if ranks is None else ranks)
    outdir = _prepare_dir(cfg.output_dir)
    base = resolve(cfg.updated(rank=max(ranks)))
    disc = base.disc
    rho = disc.initial_rho()
    g = dense_initial_g(disc)
    t = 0.0
    t0 = time.perf_counter()
    for h in time_steps(base.dt, base.scheme.t_end):
        rho, g = full_tensor_step(rho, g, disc.coeffs, disc.grid, disc.vs, h,
                                  disc.macro_source, disc.micro_source, t)
        t += h
    full_wall = time.perf_counter() - t0
    res = StudyResult(rows=[], timing={"wall_time_full_tensor": full_wall})
    for r in ranks:
        rr = resolve(cfg.updated(rank=r))
        out = simulate(rr, track_orthonormality=False)
        diff = l2_error_centers(out.rho, rho, disc.grid)
        res.rows.append((r, diff, out.record.final_rank))
        res.timing[f"wall_time_rank{r}"] = out.wall_time
    write_table_csv(outdir / "rank_sweep.csv", ["rank", "l2_diff_full_tensor", "effective_rank"],
                    res.rows, _grid_header(disc.grid, n_v=disc.vs.n, eps=disc.coeffs.eps))
    write_summary(outdir / "summary.txt",
                  {f"l2_diff_rank{r}": d for r, d, _ in res.rows})
    (outdir / "config.txt").write_text(format_config(cfg))
    _write_timing(outdir, res.timing)
    return res


COMMANDS = {
    "run": cmd_run,
    "converge": cmd_converge,
    "rank-sweep": cmd_rank_sweep,
    "compare-diffusion": cmd_compare_diffusion,
    "compare-full": cmd_compare_full,
}
