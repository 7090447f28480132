"""Experiment orchestration: problem generation, presets and file output."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import krylov, outer
from .geometry import GeometryBounds, GeometryParams, make_partition
from .phantom import ImageGrid, shepp_logan
from .projector import DetectorSpec, apply, assemble

log = logging.getLogger(__name__)

SCHEMES = ("bcd", "bcds", "abcds-1", "abcds-b", "anderson")
TRACE_HEADER = ["iter", "rel_err_d", "rel_err_dtheta", "rel_err_x", "secs_geometry", "secs_image", "objective"]


class ExperimentError(RuntimeError):
    """A run failed; ``stage`` names the step that raised."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage} failed: {cause}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    name: str = "run"
    side: int = 32
    n_views: int = 360
    n_blocks: int = 10
    noise_level: float = 0.01
    budget: int = 100
    d_bounds: tuple = (1.5, 2.5)
    d_init: float = 2.0
    dtheta_bounds: tuple = (-0.5, 0.5)
    dtheta_init: float = 0.0
    scheme: str = "bcds"
    regularize: str = "wgcv"
    w: float = 0.8
    memory: int = 5
    nls_solver: str = "stencil"
    active: str = "d"
    seed: int = 7
    max_outer: int = 20
    tol: float = 0.0
    coeff_mode: str = "standard"
    max_k: int = 50
    stop_tol: float = 1e-4
    golden_tol: float = 1e-4
    n_det: int = 0
    det_width: float = 8.0
    sdd: float = 4.0
    modified_phantom: bool = True
    workers: int = 1

    def __post_init__(self):
        self.d_bounds = tuple(float(v) for v in self.d_bounds)
        self.dtheta_bounds = tuple(float(v) for v in self.dtheta_bounds)
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.noise_level < 0:
            raise ValueError("noise_level must be nonnegative")
        if len(self.d_bounds) != 2 or len(self.dtheta_bounds) != 2:
            raise ValueError("bounds need exactly two values")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def detector(self):
        if self.n_det > 0:
            return DetectorSpec(self.n_det, self.det_width, self.sdd)
        return DetectorSpec.default(self.side, self.det_width, self.sdd)

    def bounds(self):
        return GeometryBounds(self.d_bounds, self.dtheta_bounds)

    def initial_geometry(self):
        return GeometryParams.constant(self.n_blocks, self.d_init, self.dtheta_init, self.active)

    def outer_options(self):
        hybrid = krylov.HybridOptions(max_k=self.max_k, w=self.w, regularize=self.regularize,
                                      stop_tol=self.stop_tol)
        return outer.OuterOptions(hybrid=hybrid, budget=self.budget, nls_solver=self.nls_solver,
                                  golden_tol=self.golden_tol, max_outer=self.max_outer,
                                  tol=self.tol, workers=self.workers)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(name, raw):
    ftype = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    if name not in ftype:
        raise KeyError(f"unknown config key {name!r}")
    default = ftype[name].default
    raw = raw.strip() if isinstance(raw, str) else raw
    if not isinstance(raw, str):
        return raw
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(float(p) for p in raw.replace("[", "").replace("]", "").split(","))
    return raw


def parse_config_text(text, base=None):
    """Parse ``key = value`` lines (``#`` starts a comment) over ``base``."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    return (base or ExperimentConfig()).replace(**values)


def load_config(path, overrides=None):
    cfg = parse_config_text(Path(path).read_text(encoding="utf-8"))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def apply_overrides(cfg, overrides):
    return cfg.replace(**{k: _coerce(k, v) for k, v in overrides.items()})


# -- problem generation --------------------------------------------------------

def add_noise(b, level, seed):
    """``b + eta`` with ``||eta|| / ||b|| = level`` and Gaussian direction."""
    b = np.asarray(b, dtype=float)
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    if level == 0:
        return b.copy()
    nb = np.linalg.norm(b)
    if nb == 0:
        raise ValueError("cannot scale noise relative to a zero sinogram")
    z = np.random.default_rng(seed).standard_normal(b.shape)
    return b + (level * nb / np.linalg.norm(z)) * z


@dataclass
class ProblemBundle:
    config: ExperimentConfig
    x_true: np.ndarray
    r_true: GeometryParams
    b_clean: np.ndarray
    b_noisy: np.ndarray
    problem: outer.Problem


def draw_true_geometry(config):
    """Per-block ``d`` then ``dtheta``, uniform on their bounds when active."""
    rng = np.random.default_rng(config.seed)
    n = config.n_blocks
    if config.active in ("d", "both"):
        d_true = rng.uniform(*config.d_bounds, size=n)
    else:
        d_true = np.full(n, config.d_init)
    if config.active in ("dtheta", "both"):
        dtheta_true = rng.uniform(*config.dtheta_bounds, size=n)
    else:
        dtheta_true = np.zeros(n)
    return GeometryParams(d_true, dtheta_true, config.active)


def make_problem(config):
    """Phantom, random true geometry and noisy sinogram for ``config``."""
    partition = make_partition(config.n_views, config.n_blocks)
    det = config.detector()
    x_true = shepp_logan(config.side, config.modified_phantom).values
    r_true = draw_true_geometry(config)
    b = apply(assemble(partition, r_true, det, config.side), x_true)
    noise_seed = np.random.SeedSequence([config.seed, 1])
    b_noisy = add_noise(b, config.noise_level, noise_seed)
    problem = outer.Problem(b_noisy, partition, det, config.side, config.bounds(), x_true, r_true)
    return ProblemBundle(config, x_true, r_true, b, b_noisy, problem)


def solve(bundle):
    cfg = bundle.config
    opts = cfg.outer_options()
    r0 = cfg.initial_geometry()
    p = bundle.problem
    if cfg.scheme == "bcd":
        return outer.bcd(p, r0, opts, separable=False)
    if cfg.scheme == "bcds":
        return outer.bcd(p, r0, opts, separable=True)
    if cfg.scheme == "abcds-1":
        return outer.abcd(p, r0, opts, mode="x-only", coeff_mode=cfg.coeff_mode)
    if cfg.scheme == "abcds-b":
        return outer.abcd(p, r0, opts, mode="both", coeff_mode=cfg.coeff_mode)
    return outer.anderson(p, r0, opts, m=cfg.memory)


# -- file formats --------------------------------------------------------------

def write_pgm(image, path):
    """ASCII ``P2`` image, min..max mapped linearly onto 0..255."""
    if isinstance(image, ImageGrid):
        arr = image.as_array()
    else:
        arr = np.atleast_2d(np.asarray(image, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise ValueError("image has non-finite values")
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        q = np.rint((arr - lo) / (hi - lo) * 255.0).astype(int)
    else:
        q = np.zeros(arr.shape, dtype=int)
    rows, cols = arr.shape
    lines = ["P2", f"{cols} {rows}", "255"]
    lines += [" ".join(str(v) for v in row) for row in q]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    return Path(path)


def read_pgm(path):
    tokens = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        tokens += line.split("#", 1)[0].split()
    if tokens[0] != "P2":
        raise ValueError("not an ASCII PGM file")
    cols, rows = int(tokens[1]), int(tokens[2])
    vals = np.array([int(t) for t in tokens[4:4 + rows * cols]])
    return vals.reshape(rows, cols)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_trace_csv(trace, path, timings=True):
    """One row per trace entry, 17 significant digits, empty for n/a.

    ``timings=False`` blanks the wall-clock columns (byte-stable output).
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for row in trace:
        vals = [getattr(row, h) for h in TRACE_HEADER]
        if not timings:
            vals[4] = vals[5] = None
        writer.writerow([_fmt(v) for v in vals])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return Path(path)


def read_trace_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            vals = {k: (None if rec[k] == "" else float(rec[k])) for k in TRACE_HEADER[1:]}
            rows.append(outer.TraceRow(int(rec["iter"]), **vals))
    return outer.SolveTrace(rows)


def _meta_text(cfg, bundle, result):
    lines = ["# resolved configuration", cfg.to_text().rstrip(), "",
             "# dtheta_true drawn uniformly from dtheta_bounds when active",
             "r_true_d = " + ", ".join(format(v, ".17g") for v in bundle.r_true.d),
             "r_true_dtheta = " + ", ".join(format(v, ".17g") for v in bundle.r_true.dtheta),
             "r_final_d = " + ", ".join(format(v, ".17g") for v in result.r.d),
             "r_final_dtheta = " + ", ".join(format(v, ".17g") for v in result.r.dtheta)]
    return "\n".join(lines) + "\n"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    x: np.ndarray
    r: GeometryParams
    trace: outer.SolveTrace
    files: dict = field(default_factory=dict)
    bundle: ProblemBundle | None = None


def run_experiment(config, out_dir=None):
    """Build the problem, run the configured scheme and write the outputs.

    Writes ``<name>_trace.csv``, ``<name>_recon.pgm``, ``<name>_true.pgm`` and
    ``<name>_meta.txt`` into ``out_dir`` when given.
    """
    stage = "problem generation"
    try:
        bundle = make_problem(config)
        stage = f"reconstruction ({config.scheme})"
        t = time.perf_counter()
        result = solve(bundle)
        log.info("%s: %d outer iterations in %.1fs", config.name, len(result.trace) - 1,
                 time.perf_counter() - t)
        files = {}
        if out_dir is not None:
            stage = "output"
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            side = config.side
            files["trace"] = write_trace_csv(result.trace, out / f"{config.name}_trace.csv")
            files["recon"] = write_pgm(result.x.reshape(side, side), out / f"{config.name}_recon.pgm")
            files["true"] = write_pgm(bundle.x_true.reshape(side, side), out / f"{config.name}_true.pgm")
            meta = out / f"{config.name}_meta.txt"
            meta.write_text(_meta_text(config, bundle, result), encoding="utf-8")
            files["meta"] = meta
    except ExperimentError:
        raise
    except (ValueError, KeyError, OSError, ArithmeticError) as exc:
        raise ExperimentError(stage, exc) from exc
    return ExperimentResult(config, result.x, result.r, result.trace, files, bundle)


def simulate(config, out_dir):
    """Write the phantom and the noisy sinogram for ``config``."""
    try:
        bundle = make_problem(config)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        side = config.side
        sino = bundle.b_noisy.reshape(config.n_views, config.detector().n_det)
        files = {
            "true": write_pgm(bundle.x_true.reshape(side, side), out / f"{config.name}_true.pgm"),
            "sinogram_pgm": write_pgm(sino, out / f"{config.name}_sinogram.pgm"),
        }
        txt = out / f"{config.name}_sinogram.txt"
        txt.write_text("\n".join(" ".join(format(v, ".17g") for v in row) for row in sino) + "\n",
                       encoding="utf-8")
        files["sinogram"] = txt
        meta = out / f"{config.name}_meta.txt"
        meta.write_text("# resolved configuration\n" + config.to_text()
                        + "r_true_d = " + ", ".join(format(v, ".17g") for v in bundle.r_true.d) + "\n"
                        + "r_true_dtheta = " + ", ".join(format(v, ".17g") for v in bundle.r_true.dtheta)
                        + "\n", encoding="utf-8")
        files["meta"] = meta
    except (ValueError, OSError) as exc:
        raise ExperimentError("simulation", exc) from exc
    return files


# -- presets -------------------------------------------------------------------

def preset_configs(name, base=None):
    """Configurations run by a named preset, in order."""
    base = base or ExperimentConfig()

    def v(tag, **kw):
        return base.replace(name=f"{name}_{tag}", **kw)

    if name == "exp-separability":
        return [v("bcd", scheme="bcd", budget=1000, max_outer=10),
                v("bcds", scheme="bcds", budget=1000, max_outer=10)]
    if name == "exp-nangles":
        return [v(f"NA{n}", n_blocks=n, budget=10) for n in (5, 10, 20)]
    if name == "exp-accel":
        return [v(s, scheme=s) for s in ("bcds", "abcds-1", "abcds-b", "anderson")]
    if name == "exp-reg":
        return [v(reg, regularize=reg) for reg in ("none", "gcv", "wgcv")]
    if name == "exp-budget":
        return [v(f"budget{b}", budget=b) for b in (10, 100, 1000, 10000)]
    if name == "exp-1dsolver":
        return [v(s, nls_solver=s) for s in ("stencil", "golden")]
    if name == "exp-dtheta":
        return [v(s, scheme=s, active="both") for s in ("bcds", "abcds-1")]
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("exp-separability", "exp-nangles", "exp-accel", "exp-reg", "exp-budget",
           "exp-1dsolver", "exp-dtheta")


def run_preset(name, out_dir=None, overrides=None):
    base = ExperimentConfig()
    if overrides:
        base = apply_overrides(base, overrides)
    results = {}
    for cfg in preset_configs(name, base):
        results[cfg.name] = run_experiment(cfg, out_dir)
    return results


def first_reach(values, threshold):
    """First index at which ``values`` drops to ``threshold`` or below (or None)."""
    for i, val in enumerate(values):
        if val <= threshold:
            return i
    return None


def semi_convergence_gap(values):
    """``(final - min) / min``: positive when the series turned back up."""
    values = np.asarray(values, dtype=float)
    lo = float(values.min())
    return (float(values[-1]) - lo) / lo if lo > 0 else math.inf
