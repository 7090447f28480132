import subprocess
import sys


from tomocal import cli, harness

SMALL = "side = 16\nn_views = 40\nn_blocks = 4\nmax_outer = 2\nmax_k = 20\nbudget = 20\n"


def test_simulate(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("name = sim\n" + SMALL)
    assert cli.main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "sim_sinogram.txt" in out
    assert (tmp_path / "o" / "sim_true.pgm").exists()


def test_reconstruct_with_overrides(tmp_path, capsys):
    cfg = tmp_path / "r.cfg"
    cfg.write_text("name = rec\n" + SMALL)
    code = cli.main(["reconstruct", "--config", str(cfg), "--out-dir", str(tmp_path),
                     "--scheme", "abcds-1", "--set", "max_outer=1"])
    assert code == 0
    trace = harness.read_trace_csv(tmp_path / "rec_trace.csv")
    assert len(trace) == 2
    assert "scheme = abcds-1" in (tmp_path / "rec_meta.txt").read_text()
    assert "rec: 1 iterations" in capsys.readouterr().out


def test_experiment_preset(tmp_path, capsys):
    code = cli.main(["experiment", "exp-1dsolver", "--out-dir", str(tmp_path),
                     "--side", "16", "--n-views", "40", "--n-blocks", "4", "--max-outer", "1",
                     "--max-k", "10"])
    assert code == 0
    for tag in ("stencil", "golden"):
        assert (tmp_path / f"exp-1dsolver_{tag}_trace.csv").exists()
        assert (tmp_path / f"exp-1dsolver_{tag}_recon.pgm").exists()
    assert "exp-1dsolver_golden: rel_err_x=" in capsys.readouterr().out


def test_failure_exit_code_names_stage(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(SMALL + "d_init = 9\n")
    assert cli.main(["reconstruct", "--config", str(cfg)]) == 2
    assert "reconstruction" in capsys.readouterr().err


def test_bad_key_exit_code(capsys):
    assert cli.main(["reconstruct", "--set", "nope=1"]) == 2
    assert "configuration" in capsys.readouterr().err


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "tomocal.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "simulate" in out.stdout and "experiment" in out.stdout
