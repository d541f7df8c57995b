"""End-to-end tests of the command line interface."""

import subprocess
import sys

import pytest

from sdestep.cli import main, parse_levels


def test_parse_levels_geometric_spec():
    assert parse_levels("25x2^0..7") == (25, 50, 100, 200, 400, 800, 1600, 3200)
    assert parse_levels("4x3^1..2") == (12, 36)
    assert parse_levels("100x2^0..0") == (100,)


def test_parse_levels_comma_list():
    assert parse_levels("25,50,100") == (25, 50, 100)
    assert parse_levels(" 25,50 ") == (25, 50)


def test_parse_levels_rejects_garbage():
    for text in ("abc", "25;50", "25x2^3..1", "", "25x2"):
        with pytest.raises(ValueError):
            parse_levels(text)


def test_converge_small_study_to_stdout(capsys):
    rc = main([
        "converge", "--model", "vol32", "--schemes", "bem",
        "--levels", "25,50", "--samples", "8", "--ref-steps", "400",
        "--seed", "1",
    ])
    captured = capsys.readouterr()
    assert rc == 0
    lines = captured.out.splitlines()
    assert lines[0] == "N,h,bem_error,bem_eoc,bem_exploded"
    assert lines[1] == "25,0.04,0.0937913,,0"
    assert lines[2].startswith("50,0.02,")
    assert len(lines) == 3


def test_converge_writes_csv_file(tmp_path, capsys):
    out = tmp_path / "study.csv"
    rc = main([
        "converge", "--model", "vol32", "--schemes", "bem,bdf2",
        "--levels", "25,50", "--samples", "8", "--ref-steps", "400",
        "--seed", "1", "--out", str(out),
    ])
    assert rc == 0
    assert capsys.readouterr().out == ""
    text = out.read_text()
    assert text.startswith("N,h,bem_error,bem_eoc,bem_exploded,bdf2_error,")
    assert text.endswith("\n")


def test_simulate_emits_time_state_csv(capsys):
    rc = main([
        "simulate", "--model", "vol32", "--sigma", "0",
        "--scheme", "bem", "--steps", "10", "--seed", "0",
    ])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t,x1"
    assert lines[1] == "0,1"
    assert lines[2].startswith("0.1,")
    assert len(lines) == 12


def test_simulate_multidimensional_header_and_file_output(tmp_path, capsys):
    args = [
        "simulate", "--model", "toy2d", "--scheme", "bdf2",
        "--steps", "50", "--seed", "3",
    ]
    rc = main(args)
    stdout_text = capsys.readouterr().out
    assert rc == 0
    assert stdout_text.splitlines()[0] == "t,x1,x2"
    assert stdout_text.splitlines()[1] == "0,2,3"

    out = tmp_path / "path.csv"
    rc = main(args + ["--out", str(out)])
    assert rc == 0
    assert out.read_text() == stdout_text  # same seed, same path


def test_check_model_reports_satisfied(capsys):
    rc = main([
        "check-model", "--model", "vol32", "--condition", "monotonicity",
        "--pairs", "20000",
    ])
    out = capsys.readouterr().out
    assert rc == 0
    assert "condition: monotonicity" in out
    assert "eta: 2" in out
    assert "violations: 0" in out
    assert out.rstrip().endswith("status: SATISFIED")


def test_check_model_reports_violations(capsys):
    rc = main([
        "check-model", "--model", "vol32", "--lambda", "1", "--sigma", "1",
        "--condition", "coercivity", "--pairs", "20000", "--show", "2",
    ])
    out = capsys.readouterr().out
    assert rc == 0  # a violated condition is a finding, not a failure
    assert "status: VIOLATED" in out
    assert out.count("  violation:") == 2


def test_residuals_table_and_ratio_lines(capsys):
    rc = main([
        "residuals", "--model", "vol32", "--levels", "25,50,100",
        "--samples", "100", "--ref-steps", "400", "--seed", "2",
    ])
    out = capsys.readouterr().out
    assert rc == 0
    lines = out.splitlines()
    assert lines[0] == "N,h,one_step_defect,two_step_pair_defect"
    assert lines[1].startswith("25,0.04,")
    assert len(lines) == 6
    assert lines[4].startswith("# one-step defect ratios: ")
    assert lines[5].startswith("# pair defect ratios: ")
    assert len(lines[4].split(": ")[1].split(",")) == 2  # three levels, two ratios


def test_bad_configuration_exits_two(capsys):
    rc = main([
        "converge", "--model", "vol32", "--x0", "1,2",
        "--levels", "25", "--samples", "1", "--ref-steps", "100",
    ])
    assert rc == 2
    assert "error:" in capsys.readouterr().err

    rc = main([
        "converge", "--model", "vol32", "--levels", "25,30",
        "--samples", "1", "--ref-steps", "400",
    ])
    assert rc == 2

    rc = main([
        "residuals", "--model", "vol32", "--levels", "25",
        "--samples", "10", "--ref-steps", "100",
    ])
    assert rc == 2  # too few samples for a defect estimate


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_singular_solve_exits_three(capsys):
    rc = main([
        "simulate", "--model", "vol32", "--sigma", "0", "--x0", "0",
        "--steps", "1", "--scheme", "bem", "--solver", "newton",
        "--force-step",
    ])
    assert rc == 3
    assert "singular" in capsys.readouterr().err


def test_argparse_rejections_exit_two():
    for argv in (
        ["frobnicate"],
        ["simulate", "--model", "vol32"],            # --steps missing
        ["simulate", "--model", "vol32", "--steps", "4", "--scheme", "rk4"],
        ["check-model", "--model", "vol32"],         # --condition missing
        [],
    ):
        with pytest.raises(SystemExit) as excinfo:
            main(argv)
        assert excinfo.value.code == 2


def test_module_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "sdestep", "simulate", "--model", "vol32",
         "--sigma", "0", "--scheme", "bem", "--steps", "2"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "t,x1"
