import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from conftest import smooth_texture, subpixel_shift
from zup.cli import main
from zup.flow import read_flo
from zup.volume import read_volume, write_volume, Volume
from zup.synthetic import sphere_volume


def run_cli(*args) -> int:
    return main([str(a) for a in args])


@pytest.fixture
def sphere_tif(tmp_path):
    path = tmp_path / "sphere.tif"
    write_volume(sphere_volume(9, 32, 32, radius=10.0), path)
    return path


class TestSynthCommand:
    def test_sphere_written(self, tmp_path, capsys):
        out = tmp_path / "s.tif"
        assert run_cli("synth", "--kind", "sphere", "--size", "9x32x32", "--radius", "10", "--out", out) == 0
        vol = read_volume(out)
        assert vol.shape == (9, 32, 32)
        assert "9x32x32" in capsys.readouterr().out

    def test_ramp_values(self, tmp_path):
        out = tmp_path / "r.tif"
        assert run_cli("synth", "--kind", "ramp", "--size", "9x8x8", "--out", out) == 0
        vol = read_volume(out)
        assert vol.data[4, 0, 0] == pytest.approx(0.5, abs=1 / 255)

    def test_disk_translate_endpoints(self, tmp_path):
        out = tmp_path / "d.tif"
        assert run_cli("synth", "--kind", "disk-translate", "--size", "3x48x48",
                       "--radius", "8", "--shift", "6,0", "--out", out) == 0
        vol = read_volume(out)
        assert vol.data[1].max() == 0.0
        assert vol.data[0].max() == 1.0

    def test_sixteen_bit_output(self, tmp_path):
        out = tmp_path / "s16.tif"
        assert run_cli("synth", "--kind", "sphere", "--size", "5x16x16", "--radius", "5",
                       "--bit-depth", "16", "--out", out) == 0
        assert read_volume(out).source_bit_depth == 16

    def test_unknown_kind_is_usage_error(self, tmp_path):
        assert run_cli("synth", "--kind", "cube", "--size", "4x16x16", "--out", tmp_path / "x.tif") == 2

    def test_malformed_size_is_usage_error(self, tmp_path):
        assert run_cli("synth", "--kind", "sphere", "--size", "9x32", "--out", tmp_path / "x.tif") == 2


class TestUpscaleCommand:
    def test_bicubic_roundtrip(self, sphere_tif, tmp_path, capsys):
        out = tmp_path / "up.tif"
        assert run_cli("upscale", "--input", sphere_tif, "--factor", "2",
                       "--method", "bicubic", "--output", out) == 0
        assert read_volume(out).depth == 17
        assert "9 -> 17" in capsys.readouterr().out

    def test_flow_method_keeps_originals(self, sphere_tif, tmp_path):
        out = tmp_path / "up.tif"
        assert run_cli("upscale", "--input", sphere_tif, "--factor", "2",
                       "--threads", "2", "--output", out) == 0
        up = read_volume(out)
        orig = read_volume(sphere_tif)
        assert np.array_equal(up.data[::2], orig.data)

    def test_non_power_of_two_factor_names_the_constraint(self, sphere_tif, tmp_path, capsys):
        code = run_cli("upscale", "--input", sphere_tif, "--factor", "3", "--output", tmp_path / "x.tif")
        assert code == 2
        assert "power of two" in capsys.readouterr().err

    def test_missing_input_is_processing_error(self, tmp_path, capsys):
        code = run_cli("upscale", "--input", tmp_path / "nope.tif", "--factor", "2",
                       "--output", tmp_path / "x.tif")
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_env_thread_fallback(self, sphere_tif, tmp_path, monkeypatch):
        monkeypatch.setenv("ZUP_THREADS", "2")
        out = tmp_path / "up.tif"
        assert run_cli("upscale", "--input", sphere_tif, "--factor", "2", "--output", out) == 0
        assert read_volume(out).depth == 17


class TestEvalCommand:
    def test_table_on_stdout_and_json_report(self, sphere_tif, tmp_path, capsys):
        report = tmp_path / "r.json"
        assert run_cli("eval", "--input", sphere_tif, "--factor", "2",
                       "--methods", "average,bicubic", "--report", report) == 0
        out = capsys.readouterr().out
        assert "average" in out and "bicubic" in out
        parsed = json.loads(report.read_text())
        assert [r["method"] for r in parsed["rows"]] == ["average", "bicubic"]

    def test_csv_format(self, sphere_tif, tmp_path):
        report = tmp_path / "r.csv"
        assert run_cli("eval", "--input", sphere_tif, "--factor", "2",
                       "--methods", "average", "--report", report, "--format", "csv") == 0
        assert report.read_text().startswith("method,factor,dataset")

    def test_factor8_skips_seven_slices(self, sphere_tif, tmp_path):
        report = tmp_path / "r.json"
        assert run_cli("eval", "--input", sphere_tif, "--factor", "8",
                       "--methods", "average", "--report", report) == 0
        parsed = json.loads(report.read_text())
        assert [e["z"] for e in parsed["rows"][0]["per_slice"]] == [1, 2, 3, 4, 5, 6, 7]

    def test_unknown_method_is_usage_error(self, sphere_tif, tmp_path, capsys):
        assert run_cli("eval", "--input", sphere_tif, "--factor", "2", "--methods", "magic") == 2
        assert "unknown methods" in capsys.readouterr().err

    def test_too_shallow_volume_is_processing_error(self, tmp_path, capsys):
        path = tmp_path / "tiny.tif"
        write_volume(Volume(data=np.zeros((2, 16, 16))), path)
        assert run_cli("eval", "--input", path, "--factor", "4", "--methods", "average") == 1
        assert "depth" in capsys.readouterr().err

    def test_methods_default_from_config(self, sphere_tif, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text('[eval]\nmethods = ["average"]\n')
        report = tmp_path / "r.json"
        assert run_cli("eval", "--input", sphere_tif, "--factor", "2",
                       "--config", cfg, "--report", report) == 0
        parsed = json.loads(report.read_text())
        assert [r["method"] for r in parsed["rows"]] == ["average"]


class TestConfigPrecedence:
    def test_config_file_sets_alpha(self, sphere_tif, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("[flow]\nalpha = 7.0\n")
        report = tmp_path / "r.json"
        assert run_cli("eval", "--input", sphere_tif, "--factor", "2", "--methods", "average",
                       "--config", cfg, "--report", report) == 0
        assert json.loads(report.read_text())["config"]["flow"]["alpha"] == 7.0

    def test_cli_flag_beats_config(self, sphere_tif, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("[flow]\nalpha = 7.0\n")
        report = tmp_path / "r.json"
        assert run_cli("eval", "--input", sphere_tif, "--factor", "2", "--methods", "average",
                       "--config", cfg, "--alpha", "9.5", "--report", report) == 0
        assert json.loads(report.read_text())["config"]["flow"]["alpha"] == 9.5

    def test_json_config_accepted(self, sphere_tif, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"flow": {"alpha": 11.0}}))
        report = tmp_path / "r.json"
        assert run_cli("eval", "--input", sphere_tif, "--factor", "2", "--methods", "average",
                       "--config", cfg, "--report", report) == 0
        assert json.loads(report.read_text())["config"]["flow"]["alpha"] == 11.0

    def test_missing_config_is_processing_error(self, sphere_tif, tmp_path, capsys):
        assert run_cli("eval", "--input", sphere_tif, "--factor", "2", "--methods", "average",
                       "--config", tmp_path / "nope.toml") == 1
        assert "config" in capsys.readouterr().err


class TestPrepCommand:
    def test_grid_of_blocks(self, tmp_path):
        src = tmp_path / "v.tif"
        write_volume(sphere_volume(8, 8, 8, radius=3.0), src)
        out_dir = tmp_path / "blocks"
        assert run_cli("prep", "--input", src, "--sub-shape", "4x4x4", "--out-dir", out_dir) == 0
        files = sorted(p.name for p in out_dir.glob("*.tif"))
        assert files == [f"{i:03d}.tif" for i in range(8)]
        assert read_volume(out_dir / "000.tif").shape == (4, 4, 4)

    def test_max_count(self, tmp_path):
        src = tmp_path / "v.tif"
        write_volume(sphere_volume(8, 8, 8, radius=3.0), src)
        out_dir = tmp_path / "blocks"
        assert run_cli("prep", "--input", src, "--sub-shape", "4x4x4",
                       "--max-count", "3", "--out-dir", out_dir) == 0
        assert len(list(out_dir.glob("*.tif"))) == 3

    def test_triplet_manifest(self, tmp_path):
        src = tmp_path / "v.tif"
        write_volume(sphere_volume(5, 4, 4, radius=2.0), src)
        out_dir = tmp_path / "blocks"
        assert run_cli("prep", "--input", src, "--sub-shape", "5x4x4",
                       "--triplets", "--out-dir", out_dir) == 0
        manifest = json.loads((out_dir / "triplets.json").read_text())
        assert manifest == [{"file": "000.tif", "triplets": [[0, 1, 2], [2, 3, 4]]}]

    def test_oversized_sub_shape_is_processing_error(self, tmp_path, capsys):
        src = tmp_path / "v.tif"
        write_volume(sphere_volume(4, 8, 8, radius=3.0), src)
        assert run_cli("prep", "--input", src, "--sub-shape", "8x8x8", "--out-dir", tmp_path / "b") == 1
        assert "exceeds" in capsys.readouterr().err


class TestFlowCommand:
    def test_shifted_pngs_produce_expected_flow(self, tmp_path, rng):
        img = smooth_texture(rng, (64, 64))
        shifted = subpixel_shift(img, 0.0, 2.0)
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        Image.fromarray((img * 255).astype(np.uint8), mode="L").save(a)
        Image.fromarray((shifted * 255).astype(np.uint8), mode="L").save(b)
        out = tmp_path / "f.flo"
        viz = tmp_path / "f.png"
        assert run_cli("flow", "--a", a, "--b", b, "--out", out, "--viz", viz) == 0
        field = read_flo(out)
        center = np.s_[16:48, 16:48]
        assert abs(float(np.median(field.u[center])) - 2.0) < 0.3
        assert abs(float(np.median(field.v[center]))) < 0.3
        assert viz.exists()

    def test_identical_tiffs_give_zero_flow(self, sphere_tif, tmp_path):
        out = tmp_path / "f.flo"
        assert run_cli("flow", "--a", sphere_tif, "--b", sphere_tif, "--out", out) == 0
        field = read_flo(out)
        assert float(field.magnitude().max()) == 0.0

    def test_mismatched_sizes_are_processing_error(self, tmp_path, capsys):
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        Image.fromarray(np.zeros((32, 32), dtype=np.uint8), mode="L").save(a)
        Image.fromarray(np.zeros((32, 48), dtype=np.uint8), mode="L").save(b)
        assert run_cli("flow", "--a", a, "--b", b, "--out", tmp_path / "f.flo") == 1
        assert "differ" in capsys.readouterr().err


class TestEntryPoint:
    def test_console_script_reports_version(self):
        result = subprocess.run([sys.executable, "-m", "zup.cli", "--version"],
                                capture_output=True, text=True)
        assert result.returncode == 0
        assert "zup" in result.stdout

    def test_no_subcommand_is_usage_error(self):
        assert main([]) == 2

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "upscale" in capsys.readouterr().out
