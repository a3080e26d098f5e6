import json

import pytest
from hypothesis import given, strategies as st

from sheetwkb.cli import RunConfig, fmt, main, parse_config_text
from sheetwkb.errors import ParseError


def test_parse_config_text_types_and_comments():
    vals = parse_config_text("K = 12  # modes\n dt = 0.01\n eps_ladder = [4, 8]\n root_choice = minus\n")
    assert vals == {"K": 12, "dt": 0.01, "eps_ladder": [4, 8], "root_choice": "minus"}


@pytest.mark.parametrize("text", ["bogus = 1", "K 12", "K = twelve", "u_plus = 1, 2, 3",
                                  "eps_ladder = [a, b]"])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_config_text(text)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_format_roundtrips(x):
    assert float(fmt(x)) == x


def test_digest_ignores_output_directory():
    a = RunConfig.load(None, {"out": "a"})
    b = RunConfig.load(None, {"out": "b"})
    c = RunConfig.load(None, {"K": 9})
    assert a.digest == b.digest != c.digest


def test_check_command_exit_codes(tmp_path, capsys):
    assert main(["check"]) == 0
    bad = tmp_path / "bad.cfg"
    bad.write_text("u_plus = [1, 0, 0]\nu_minus = [-1, 0, 0]\nh_plus = [0, 0, 0]\nh_minus = [0, 0, 0]\n")
    assert main(["check", "--config", str(bad)]) == 2
    assert main(["check", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_verify_suites_pass(capsys):
    assert main(["verify", "--suite", "algebra"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["suites"]["algebra"]["passed"]


def test_amplitude_output_is_reproducible(tmp_path):
    args = ["amplitude", "--modes", "4", "--dt", "0.01", "--t-final", "0.05"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("amplitude_spectrum.csv", "amplitude_plot.dat", "amplitude_manifest.json"):
        first = (tmp_path / "a" / name).read_bytes()
        assert first == (tmp_path / "b" / name).read_bytes()
        assert first.startswith(b"# sheetwkb")


def test_residuals_command_writes_table(tmp_path):
    out = tmp_path / "r"
    assert main(["residuals", "--modes", "4", "--dt", "0.01", "--t-final", "0.02",
                 "--eps-ladder", "16,32", "--out", str(out)]) == 0
    lines = (out / "residuals_M1.csv").read_text().splitlines()
    assert lines[1] == "eps,residual_name,sup_value"
    slopes = json.loads((out / "residual_slopes_M1.json").read_text().split("\n", 1)[1])
    assert "interior" in slopes["slopes"]
