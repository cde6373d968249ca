import numpy as np
import pytest

from sgflow.config import ConfigError, RunConfig, parse_config_text
from sgflow.dynamics import SimState
from sgflow.geometry import SeedCloud, WeightVector
from sgflow import io as sgio


class TestParse:
    def test_basic_pairs_and_comments(self):
        text = """
        # a comment
        solver.eta = 1e-4   # trailing comment
        ic.grid = 4 4 4

        integrator.method = Heun
        """
        kv = parse_config_text(text)
        assert kv["solver.eta"] == "1e-4"
        assert kv["ic.grid"] == "4 4 4"
        assert kv["integrator.method"] == "Heun"

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("solver.eta 1e-4")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_text("solver.typo = 3\n")

    def test_bad_boolean_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_text("domain.periodic_x1 = maybe\n")

    def test_defaults(self):
        cfg = RunConfig.from_text("")
        assert cfg.a == 3.66 and cfg.b == 1.75 and cfg.c == 0.45
        assert cfg.method == "RK4"
        assert cfg.n_steps == 480

    def test_non_integer_step_count_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_text(
                "integrator.h_seconds = 7000\nintegrator.horizon_days = 1\n")

    def test_missing_seed_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.from_text("ic.kind = file\nic.seed_file = missing.csv\n",
                                base_dir=tmp_path)

    def test_day_marks_default_scales_with_horizon(self):
        cfg = RunConfig.from_text("integrator.horizon_days = 12.5\n"
                                  "integrator.h_seconds = 1800\n")
        marks = cfg.resolved_day_marks()
        assert marks[0] == pytest.approx(1.0)
        assert marks[-1] == pytest.approx(12.5)

    def test_roundtrip_text(self):
        cfg = RunConfig.from_text("solver.eta = 0.0001\nic.grid = 8 8 8\n")
        cfg2 = RunConfig.from_text(cfg.to_text())
        assert cfg2.eta == cfg.eta and cfg2.grid == cfg.grid

    def test_output_root_override(self, tmp_path, monkeypatch):
        cfg = RunConfig.from_text("output.dir = rel/run\n")
        monkeypatch.setenv("SGFLOW_OUTPUT_ROOT", str(tmp_path))
        assert cfg.resolve_out_dir() == tmp_path / "rel" / "run"


class TestSnapshotIo:
    def test_csv_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        pos = rng.normal(size=(17, 3))
        w = rng.normal(size=17)
        sgio.write_snapshot(tmp_path, 42, 123.0, pos, w)
        pos2, w2 = sgio.read_snapshot_csv(tmp_path / "snap_000042.csv")
        assert np.array_equal(pos, pos2)
        assert np.array_equal(w, w2)

    def test_bin_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        pos = rng.normal(size=(5, 3))
        w = rng.normal(size=5)
        sgio.write_snapshot(tmp_path, 7, 99.5, pos, w)
        t, pos2, w2 = sgio.read_snapshot_bin(tmp_path / "snap_000007.bin")
        assert t == 99.5
        assert np.array_equal(pos, pos2)
        assert np.array_equal(w, w2)

    def test_bin_magic_checked(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 24)
        with pytest.raises(sgio.IoError):
            sgio.read_snapshot_bin(p)

    def test_list_snapshots_sorted(self, tmp_path):
        for step in (30, 0, 10):
            sgio.write_snapshot(tmp_path, step, float(step), np.zeros((2, 3)),
                                np.zeros(2))
        assert [s for s, _ in sgio.list_snapshots(tmp_path)] == [0, 10, 30]


class TestCheckpoint:
    def test_roundtrip_with_ab2_history(self, tmp_path):
        rng = np.random.default_rng(2)
        state = SimState(
            t=3600.0,
            seeds=SeedCloud(rng.normal(size=(6, 3))),
            warm_weights=WeightVector(rng.normal(size=6)),
            step_index=12,
            prev_rhs=rng.normal(size=(6, 3)),
        )
        sgio.write_checkpoint(tmp_path, state)
        out = sgio.read_checkpoint(tmp_path)
        assert out.t == state.t and out.step_index == 12
        assert np.array_equal(out.seeds.positions, state.seeds.positions)
        assert np.array_equal(out.warm_weights.w, state.warm_weights.w)
        assert np.array_equal(out.prev_rhs, state.prev_rhs)

    def test_roundtrip_without_history(self, tmp_path):
        state = SimState(t=0.0, seeds=SeedCloud(np.zeros((1, 3))),
                         warm_weights=WeightVector.zeros(1))
        sgio.write_checkpoint(tmp_path, state)
        assert sgio.read_checkpoint(tmp_path).prev_rhs is None


class TestSeedFile:
    def test_roundtrip_with_metadata(self, tmp_path):
        rng = np.random.default_rng(3)
        pos = rng.normal(size=(9, 3))
        path = tmp_path / "seeds.csv"
        sgio.write_seed_file(path, pos, {"grid": "3x3x1", "shear": 0.1})
        pos2, meta = sgio.read_seed_file(path)
        assert np.array_equal(pos, pos2)
        assert meta["grid"] == "3x3x1"
        assert meta["shear"] == "0.1"

    def test_two_column_seed_file(self, tmp_path):
        pos = np.random.default_rng(4).normal(size=(5, 2))
        path = tmp_path / "seeds2d.csv"
        sgio.write_seed_file(path, pos, {})
        pos2, _ = sgio.read_seed_file(path)
        assert pos2.shape == (5, 2)
        assert np.array_equal(pos, pos2)


class TestStepLog:
    def test_append_and_truncate(self, tmp_path):
        log = sgio.StepLog(tmp_path / "log.csv", "step,value")
        for k in range(5):
            log.append(k, float(k) * 1.5)
        log.truncate_to(3)
        rows = sgio.read_log(tmp_path / "log.csv")
        assert rows.shape == (3, 2)
        assert rows[-1, 0] == 2
        log.append(3, 4.5)
        rows = sgio.read_log(tmp_path / "log.csv")
        assert rows.shape == (4, 2)
