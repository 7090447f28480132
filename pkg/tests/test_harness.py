import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tomocal import harness
from tomocal.harness import (
    ExperimentConfig,
    add_noise,
    draw_true_geometry,
    first_reach,
    make_problem,
    parse_config_text,
    read_pgm,
    read_trace_csv,
    semi_convergence_gap,
    write_pgm,
    write_trace_csv,
)
from tomocal.outer import SolveTrace, TraceRow

SMALL = ExperimentConfig(side=16, n_views=40, n_blocks=4, max_outer=2, max_k=20, budget=20)


# -- noise -------------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500), st.integers(0, 2 ** 32 - 1), st.floats(1e-4, 1.0))
def test_noise_ratio_exact(n, seed, level):
    b = np.random.default_rng(seed).uniform(0.1, 5.0, n)
    bn = add_noise(b, level, seed)
    assert abs(np.linalg.norm(bn - b) / np.linalg.norm(b) - level) <= 1e-12


def test_noise_level_001():
    b = np.linspace(1, 2, 1000)
    assert abs(np.linalg.norm(add_noise(b, 0.01, 3) - b) / np.linalg.norm(b) - 0.01) <= 1e-12


def test_noise_zero_is_identity_and_seeds_differ():
    b = np.arange(1.0, 6.0)
    assert np.array_equal(add_noise(b, 0.0, 1), b)
    e1, e2 = add_noise(b, 0.1, 1) - b, add_noise(b, 0.1, 2) - b
    assert not np.allclose(e1, e2)
    assert np.linalg.norm(e1) == pytest.approx(np.linalg.norm(e2), rel=1e-12)


def test_noise_errors():
    with pytest.raises(ValueError):
        add_noise(np.zeros(3), 0.01, 0)
    with pytest.raises(ValueError):
        add_noise(np.ones(3), -0.1, 0)


# -- problem generation --------------------------------------------------------------

def test_true_geometry_within_bounds_over_1000_draws():
    for seed in range(1000):
        r = draw_true_geometry(ExperimentConfig(seed=seed, active="both"))
        assert all(1.5 <= d <= 2.5 for d in r.d)
        assert all(-0.5 <= t <= 0.5 for t in r.dtheta)


def test_inactive_parameters_fixed():
    r = draw_true_geometry(ExperimentConfig(active="d"))
    assert r.dtheta == (0.0,) * 10
    r = draw_true_geometry(ExperimentConfig(active="dtheta"))
    assert r.d == (2.0,) * 10


def test_make_problem_deterministic_and_noise_free():
    a, b = make_problem(SMALL), make_problem(SMALL)
    assert np.array_equal(a.b_noisy, b.b_noisy)
    assert np.array_equal(a.x_true, b.x_true)
    assert a.r_true == b.r_true
    clean = make_problem(SMALL.replace(noise_level=0.0))
    assert np.array_equal(clean.b_noisy, clean.b_clean)
    assert np.array_equal(clean.b_clean, a.b_clean)


def test_make_problem_shapes():
    p = make_problem(SMALL)
    assert p.b_noisy.shape == (40 * SMALL.detector().n_det,)
    assert p.x_true.shape == (256,)


# -- config ----------------------------------------------------------------------------

def test_defaults():
    c = ExperimentConfig()
    assert (c.side, c.n_views, c.n_blocks, c.noise_level, c.budget) == (32, 360, 10, 0.01, 100)
    assert c.d_bounds == (1.5, 2.5) and c.d_init == 2.0
    assert c.dtheta_bounds == (-0.5, 0.5) and c.dtheta_init == 0.0
    assert (c.w, c.memory, c.max_outer) == (0.8, 5, 20)


def test_parse_config_text():
    cfg = parse_config_text("""
        # comment line
        name = demo
        side = 24   # trailing comment
        noise_level = 0.02
        d_bounds = 1.6, 2.4
        modified_phantom = false
        scheme = abcds-1
    """)
    assert cfg.name == "demo" and cfg.side == 24 and cfg.noise_level == 0.02
    assert cfg.d_bounds == (1.6, 2.4) and cfg.modified_phantom is False
    assert cfg.scheme == "abcds-1"


def test_to_text_round_trip():
    cfg = ExperimentConfig(name="x", d_bounds=(1.6, 2.4), seed=42)
    assert parse_config_text(cfg.to_text()) == cfg


@pytest.mark.parametrize("text", ["bogus = 1", "side 32", "scheme = fast", "noise_level = -1",
                                  "modified_phantom = maybe"])
def test_bad_config(text):
    with pytest.raises((KeyError, ValueError)):
        parse_config_text(text)


def test_load_config_with_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("side = 20\nbudget = 5\n")
    cfg = harness.load_config(path, {"budget": "7"})
    assert cfg.side == 20 and cfg.budget == 7


# -- PGM ------------------------------------------------------------------------------

def test_pgm_example(tmp_path):
    path = write_pgm(np.array([[0.0, 1.0], [1.0, 0.0]]), tmp_path / "a.pgm")
    assert path.read_text() == "P2\n2 2\n255\n0 255\n255 0\n"


def test_pgm_constant_is_zero(tmp_path):
    path = write_pgm(np.full((3, 2), 0.7), tmp_path / "c.pgm")
    assert np.array_equal(read_pgm(path), np.zeros((2, 3)).T)


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).standard_normal((5, 7))
    q = np.rint((img - img.min()) / (img.max() - img.min()) * 255).astype(int)
    assert np.array_equal(read_pgm(write_pgm(img, tmp_path / "r.pgm")), q)


def test_pgm_rejects_nan(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(np.array([[np.nan]]), tmp_path / "n.pgm")


# -- CSV --------------------------------------------------------------------------------

HEADER = "iter,rel_err_d,rel_err_dtheta,rel_err_x,secs_geometry,secs_image,objective\n"


def test_empty_trace_header_only(tmp_path):
    assert write_trace_csv(SolveTrace(), tmp_path / "e.csv").read_text() == HEADER


def test_trace_round_trip(tmp_path):
    rows = [TraceRow(0, 0.1, None, 0.7, 0.0, 0.25, 3.0),
            TraceRow(1, 1 / 3, None, np.pi / 10, 1e-300, 12345.678, 2.0 ** -40)]
    path = write_trace_csv(SolveTrace(rows), tmp_path / "t.csv")
    text = path.read_text()
    assert text.startswith(HEADER) and "0.33333333333333331" in text
    assert read_trace_csv(path).rows == rows


def test_trace_without_timings(tmp_path):
    rows = [TraceRow(0, 0.1, 0.2, 0.7, 1.5, 0.25, 3.0)]
    text = write_trace_csv(SolveTrace(rows), tmp_path / "t.csv", timings=False).read_text()
    assert text.splitlines()[1] == "0,0.10000000000000001,0.20000000000000001,0.69999999999999996,,,3"


# -- metrics ------------------------------------------------------------------------------

def test_first_reach_and_gap():
    assert first_reach([3, 2, 1, 0.5], 1) == 2
    assert first_reach([3, 2], 1) is None
    assert semi_convergence_gap([1.0, 0.5, 0.6]) == pytest.approx(0.2)
    assert semi_convergence_gap([1.0, 0.5]) == 0.0


# -- end to end ------------------------------------------------------------------------------

def test_run_experiment_outputs(tmp_path):
    res = harness.run_experiment(SMALL.replace(name="e2e"), tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["e2e_meta.txt", "e2e_recon.pgm", "e2e_trace.csv", "e2e_true.pgm"]
    trace = read_trace_csv(tmp_path / "e2e_trace.csv")
    assert [r.iter for r in trace] == [0, 1, 2]
    assert trace.rows[0].rel_err_dtheta is None
    meta = (tmp_path / "e2e_meta.txt").read_text()
    assert "r_true_d = " in meta and "r_final_d = " in meta and "seed = 7" in meta
    assert res.trace.rows[-1].rel_err_x == trace.rows[-1].rel_err_x


def test_run_experiment_deterministic(tmp_path):
    cfg = SMALL.replace(name="det", scheme="abcds-b", active="both")
    for sub in ("a", "b"):
        res = harness.run_experiment(cfg, tmp_path / sub)
        write_trace_csv(res.trace, tmp_path / sub / "nt.csv", timings=False)
    for f in ("nt.csv", "det_recon.pgm", "det_true.pgm", "det_meta.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.mark.parametrize("scheme", harness.SCHEMES)
def test_every_scheme_runs(scheme):
    res = harness.run_experiment(SMALL.replace(scheme=scheme))
    assert len(res.trace) == SMALL.max_outer + 1


def test_simulate_outputs(tmp_path):
    files = harness.simulate(SMALL.replace(name="sim"), tmp_path)
    sino = np.loadtxt(files["sinogram"])
    assert sino.shape == (40, SMALL.detector().n_det)
    bundle = make_problem(SMALL)
    assert np.allclose(sino.ravel(), bundle.b_noisy, rtol=1e-15, atol=0)
    assert read_pgm(files["sinogram_pgm"]).shape == sino.shape


def test_stage_named_in_errors():
    with pytest.raises(harness.ExperimentError) as info:
        harness.run_experiment(SMALL.replace(d_init=3.0))
    assert "reconstruction" in str(info.value)


def test_presets_listed():
    for name in harness.PRESETS:
        cfgs = harness.preset_configs(name)
        assert cfgs and all(c.name.startswith(name + "_") for c in cfgs)
    assert [c.budget for c in harness.preset_configs("exp-budget")] == [10, 100, 1000, 10000]
    assert [c.n_blocks for c in harness.preset_configs("exp-nangles")] == [5, 10, 20]
    with pytest.raises(KeyError):
        harness.preset_configs("exp-nope")
