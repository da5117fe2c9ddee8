import json
import math
import shutil
import subprocess

import pytest

from hyperdsf.cli import main
from hyperdsf.forest import Forest
from hyperdsf.ppp import PointCloud

from conftest import make_cloud

SMALL_TOML = """\
R = 20.0
y_lo = 0.0183156388887342
y_hi = 54.598150033144236
replicates = 60
levels = [0.5]
depths = [1.0]
region = 6.0
mt_region = 3.0
separating_levels = [1.0]
t_grid = [1.0, 2.0, 3.0]
forward_grid = [1.0, 2.0]
forward_base = -1.0
backward_grid = [1.0, 2.0]
backward_top = 1.5
backward_region = 6.0
coalescence_base = -1.5
bottom_margin = 2.0
"""


def empty_cloud_json():
    doc = json.loads(make_cloud([[0.0, 1.0]]).to_json())
    doc["points"] = []
    return json.dumps(doc)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def cloud_file(tmp_path):
    path = tmp_path / "cloud.json"
    assert run("sample", "--dim", 1, "--lambda", 1, "--r", 1, "--ylo", 1, "--yhi", 2.71828, "--seed", 42, "--out", path) == 0
    return path


@pytest.fixture
def three_point(tmp_path):
    path = tmp_path / "three.json"
    cloud = make_cloud([(0.0, 1.0), (10.0, 1.5), (0.0, 2.0)], R=20.0, y_hi=50.0)
    path.write_text(cloud.to_json())
    return path


class TestSample:
    def test_byte_identical(self, tmp_path, cloud_file):
        again = tmp_path / "again.json"
        run("sample", "--dim", 1, "--lambda", 1, "--r", 1, "--ylo", 1, "--yhi", 2.71828, "--seed", 42, "--out", again)
        assert again.read_bytes() == cloud_file.read_bytes()
        m1 = json.loads((tmp_path / "cloud.json.manifest.json").read_text())
        m2 = json.loads((tmp_path / "again.json.manifest.json").read_text())
        assert m1["seed"] == 42 and m1["command"] == "sample"
        assert m1["output_sha256"][str(cloud_file)] == m2["output_sha256"][str(again)]

    def test_round_trip(self, cloud_file):
        c = PointCloud.from_json(cloud_file.read_text())
        assert c.seed == 42 and c.dim == 1

    def test_bad_bounds(self, tmp_path, capsys):
        assert run("sample", "--r", 1, "--ylo", 0, "--yhi", 2, "--seed", 1, "--out", tmp_path / "x.json") == 2
        assert "bounds" in capsys.readouterr().err
        assert not (tmp_path / "x.json").exists()

    def test_refuses_cap(self, tmp_path, capsys):
        assert run("sample", "--r", 100, "--ylo", 1e-6, "--yhi", 1, "--seed", 1, "--out", tmp_path / "x.json") == 2
        assert "expected point count" in capsys.readouterr().err

    def test_missing_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("sample", "--r", 1, "--ylo", 1, "--yhi", 2, "--out", tmp_path / "x.json")
        assert exc.value.code == 2


class TestBuild:
    def test_empty_cloud(self, tmp_path):
        src = tmp_path / "empty.json"
        src.write_text(empty_cloud_json())
        out = tmp_path / "forest.json"
        assert run("build", "--in", src, "--out", out) == 0
        doc = json.loads(out.read_text())
        assert doc["verification"]["structure"]["ok"] and doc["verification"]["noncrossing"]["ok"]
        assert len(Forest.from_json(out.read_text())) == 0

    def test_three_point_parents(self, tmp_path, three_point):
        out = tmp_path / "forest.json"
        assert run("build", "--in", three_point, "--out", out) == 0
        f = Forest.from_json(out.read_text())
        assert list(f.parent) == [2, 2, -1]

    def test_corrupted_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"dim": 1,\n "points": [')
        assert run("build", "--in", bad, "--out", tmp_path / "f.json") == 2
        err = capsys.readouterr().err
        assert "line 2" in err

    def test_missing_field(self, tmp_path, three_point, capsys):
        doc = json.loads(three_point.read_text())
        del doc["window"]
        three_point.write_text(json.dumps(doc))
        assert run("build", "--in", three_point, "--out", tmp_path / "f.json") == 2
        assert "window" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert run("build", "--in", tmp_path / "nope.json", "--out", tmp_path / "f.json") == 2


class TestRender:
    def _forest(self, tmp_path, src):
        out = tmp_path / "forest.json"
        assert run("build", "--in", src, "--out", out) == 0
        return out

    def test_three_point_svg(self, tmp_path, three_point):
        f = self._forest(tmp_path, three_point)
        svg = tmp_path / "f.svg"
        assert run("render", "--in", f, "--out", svg) == 0
        text = svg.read_text()
        assert text.startswith("<svg") or text.startswith("<?xml")
        assert text.count("<line") == 2
        assert text.count("<circle") == 3
        again = tmp_path / "g.svg"
        run("render", "--in", f, "--out", again)
        assert again.read_bytes() == svg.read_bytes()

    def test_empty_svg(self, tmp_path):
        src = tmp_path / "empty.json"
        src.write_text(empty_cloud_json())
        svg = tmp_path / "e.svg"
        assert run("render", "--in", self._forest(tmp_path, src), "--out", svg) == 0
        text = svg.read_text()
        assert "</svg>" in text and "<line" not in text and "<circle" not in text

    def test_rejects_d2(self, tmp_path, capsys):
        src = tmp_path / "c2.json"
        assert run("sample", "--dim", 2, "--r", 1, "--ylo", 1, "--yhi", 3, "--seed", 3, "--out", src) == 0
        f = self._forest(tmp_path, src)
        assert run("render", "--in", f, "--out", tmp_path / "x.svg") == 2
        assert "d = 1" in capsys.readouterr().err


class TestVerify:
    def test_geometry_suite(self, tmp_path):
        out = tmp_path / "geo.json"
        assert run("verify", "--suite", "geometry", "--out", out) == 0
        doc = json.loads(out.read_text())
        assert doc["pass"] and all(c["pass"] for c in doc["checks"])
        assert {"check", "params", "estimate", "std_error", "bound", "pass"} <= set(doc["checks"][0])

    def test_identities_and_negative_control(self, tmp_path):
        cfg = tmp_path / "small.toml"
        cfg.write_text(SMALL_TOML)
        out = tmp_path / "id.json"
        assert run("verify", "--config", cfg, "--suite", "identities", "--out", out, "--threads", 1) == 0
        rows = (tmp_path / "id.csv").read_text().splitlines()
        assert rows[0] == "replicate,seed,statistic,params,value,censored"
        assert len({r.split(",")[0] for r in rows[1:]}) == 60
        bad = tmp_path / "bad.json"
        assert run("verify", "--config", cfg, "--suite", "identities", "--out", bad, "--threads", 1, "--inject-exponent-error", 1.5) == 1
        failed = [c["check"] for c in json.loads(bad.read_text())["checks"] if not c["pass"]]
        assert failed == ["expected_descendants"]

    def test_unknown_suite(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("verify", "--suite", "bogus", "--out", tmp_path / "x.json")
        assert exc.value.code == 2

    def test_bad_config(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("R = [")
        assert run("verify", "--config", cfg, "--suite", "geometry", "--out", tmp_path / "x.json") == 2
        cfg.write_text("bogus = 1\n")
        assert run("verify", "--config", cfg, "--suite", "geometry", "--out", tmp_path / "x.json") == 2
        assert "unknown" in capsys.readouterr().err

    def test_summary_has_no_nan(self, tmp_path):
        out = tmp_path / "geo.json"
        run("verify", "--suite", "geometry", "--out", out)
        json.loads(out.read_text(), parse_constant=lambda c: pytest.fail(f"non-finite {c}"))


def test_manifest_content_hash_stable(tmp_path, three_point):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run("build", "--in", three_point, "--out", a)
    m1 = json.loads((tmp_path / "a.json.manifest.json").read_text())
    run("build", "--in", three_point, "--out", a)
    m2 = json.loads((tmp_path / "a.json.manifest.json").read_text())
    assert m1["content_sha256"] == m2["content_sha256"]
    assert math.isfinite(m1["wall_time_s"])
    run("build", "--in", three_point, "--out", b)
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.skipif(shutil.which("hyperdsf") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(
        ["hyperdsf", "sample", "--r", "1", "--ylo", "0", "--yhi", "2", "--seed", "1", "--out", str(tmp_path / "x.json")],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 2 and "bounds" in res.stderr
