import json

import pytest

from wignerfrag.cli import EXIT_ANALYSIS, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK, main
from wignerfrag.formats import read_positions


def test_list_presets(capsys):
    assert main(["--list-presets"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "paper-n16-hex " in out and out.count("-square ") == 19


def test_classical_run_writes_stamped_artifacts(tmp_path, capsys):
    code = main(["--preset", "paper-n3-square", "--out", str(tmp_path), "--seed", "2"])
    assert code == EXIT_OK
    (run,) = [p for p in tmp_path.iterdir() if p.is_dir()]
    names = {p.name for p in run.iterdir()}
    assert {"config.yaml", "run.log", "positions.csv", "minima.json", "positions.png"} <= names
    conf, cell, stamp = read_positions(run / "positions.csv")
    assert stamp["config"] == run.name
    for name in ("minima.json", "classical-lattice.json"):
        assert json.loads((run / name).read_text())["config_hash"] == run.name


def test_classical_runs_are_bitwise_reproducible(tmp_path):
    for sub in ("a", "b"):
        assert main(["--preset", "paper-n4-square", "--out", str(tmp_path / sub), "--no-plots"]) == EXIT_OK
    (ra,), (rb,) = (list((tmp_path / s).iterdir()) for s in ("a", "b"))
    assert ra.name == rb.name
    assert (ra / "positions.csv").read_bytes() == (rb / "positions.csv").read_bytes()


def test_invalid_aspect_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("aspect: -1\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "aspect" in capsys.readouterr().err


def test_unknown_preset_is_config_error(tmp_path):
    assert main(["--preset", "paper-n99-square", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_mode_flag_exits_with_config_status():
    with pytest.raises(SystemExit) as info:
        main(["--mode", "fast"])
    assert info.value.code == EXIT_CONFIG


def test_not_converged_exit_code(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("mode: quantum\nn_electrons: 2\nbasis: {nx: 6, ny: 6}\n"
                   "scf: {max_iter: 2, max_newton_iter: 1, stability: false}\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path), "--no-plots"]) == EXIT_NOT_CONVERGED


def test_analysis_failure_exit_code(tmp_path, monkeypatch):
    import wignerfrag.cli as cli
    from wignerfrag.errors import PeakCountMismatch

    def fail(*args, **kwargs):
        raise PeakCountMismatch(1, 2)

    monkeypatch.setattr(cli, "analyze_density", fail)
    cfg = tmp_path / "c.yaml"
    cfg.write_text("mode: quantum\nn_electrons: 2\nbasis: {nx: 6, ny: 6}\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path), "--no-plots"]) == EXIT_ANALYSIS
    # the SCF result survives a failed analysis
    (run,) = [p for p in tmp_path.iterdir() if p.is_dir() and p.name != "integrals-cache"]
    assert (run / "scf.json").exists() and (run / "density.dat").exists()


def test_compare_run(tmp_path, capsys):
    code = main(["--preset", "paper-n2-square-quantum-desk", "--mode", "compare", "--out", str(tmp_path)])
    assert code == EXIT_OK
    (run,) = [p for p in tmp_path.iterdir() if p.is_dir() and p.name != "integrals-cache"]
    summary = json.loads((run / "compare.json").read_text())
    assert summary["hf_above_classical"] and summary["matched_rms"] < summary["basis_spacing"]
    for name in ("density.dat", "density.png", "scf.json", "lattice.json"):
        assert (run / name).exists()
    assert (run / "density.dat").read_text().startswith(f"# wignerfrag-density 1 config={run.name}")
