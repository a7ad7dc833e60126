import numpy as np
import pytest

from dyncs.harness import (
    ExperimentGrid,
    ResultTable,
    emit_results,
    run_bg_amp,
    run_dynamics_plane,
    run_phase_plane,
    tnmse,
    tnmse_db,
)
from dyncs.model import DynamicDataset, ModelParams, generate_synthetic, rho_for_variance
from dyncs.scheduler import SolverConfig, run_filter, run_smooth


def params_with(sigma2=1.0, **kw):
    base = dict(lam=0.2, p01=0.05, zeta=0.0, alpha=0.1, sigma_e2=1e-2)
    base.update(kw)
    base["rho"] = base.pop("rho", rho_for_variance(sigma2, base["alpha"]))
    return ModelParams(**base)


class TestTnmse:
    def test_exact_estimate_is_zero(self):
        x = np.ones((3, 4), complex)
        assert tnmse(x, x) == 0.0

    def test_zero_estimate_is_one(self):
        x = np.ones((3, 4), complex)
        assert tnmse(x, np.zeros_like(x)) == pytest.approx(1.0)
        assert tnmse_db(x, np.zeros_like(x)) == pytest.approx(0.0)

    def test_single_frame_value(self):
        x = np.array([[1.0, 0.0]])
        est = np.array([[0.5, 0.0]])
        assert tnmse(x, est) == pytest.approx(0.25)

    def test_zero_norm_frame_rejected(self):
        x = np.zeros((2, 3), complex)
        x[0, 0] = 1.0
        with pytest.raises(ValueError):
            tnmse(x, x)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            tnmse(np.ones((2, 3)), np.ones((3, 2)))


class TestBgAmp:
    def test_single_frame_equals_filter(self):
        p = params_with(lam=0.25, sigma2=0.5, alpha=0.5)
        d = generate_synthetic(p, n=48, m=24, t=1, seed=0)
        bg = run_bg_amp(d, p)
        filt = run_filter(d, p, SolverConfig(mode="filter"))
        assert np.array_equal(bg.x_mean[0], filt.mu[0])

    def test_timestep_permutation_commutes(self):
        p = params_with(lam=0.25)
        d = generate_synthetic(p, n=32, m=16, t=5, seed=1, snr_db=20.0)
        perm = np.array([3, 0, 4, 2, 1])
        d_perm = DynamicDataset(y=d.y[perm], a=d.a[perm])
        out = run_bg_amp(d, d.params)
        out_perm = run_bg_amp(d_perm, d.params)
        assert np.array_equal(out.x_mean[perm], out_perm.x_mean)

    def test_temporal_structure_helps_when_correlated(self):
        p = params_with(lam=0.15, p01=0.0, alpha=0.01, sigma2=1.0)
        gaps = []
        for seed in range(40):
            d = generate_synthetic(p, n=64, m=24, t=6, seed=seed, snr_db=25.0)
            bg = run_bg_amp(d, d.params)
            sm = run_smooth(d, d.params, SolverConfig())
            x = d.truth.x
            norms = np.sum(np.abs(x) ** 2, axis=1)
            keep = norms > 0
            err_bg = np.mean(np.sum(np.abs(bg.x_mean - x) ** 2, axis=1)[keep] / norms[keep])
            err_sm = np.mean(np.sum(np.abs(sm.mu - x) ** 2, axis=1)[keep] / norms[keep])
            gaps.append(10 * np.log10(err_bg) - 10 * np.log10(err_sm))
        assert np.mean(gaps) >= -0.2


class TestPhasePlane:
    def grid(self, **kw):
        base = dict(delta_values=(0.5,), beta_values=(0.5,), n=48, t=3, trials=2,
                    snr_db=25.0, p01=0.05, alpha=0.05, seed=7)
        base.update(kw)
        return ExperimentGrid(**base)

    def test_deterministic_csv_bytes(self):
        grid = self.grid()
        t1 = run_phase_plane(grid, algorithms=("bg-amp", "amp-smooth"),
                             record_runtime=False)
        t2 = run_phase_plane(grid, algorithms=("bg-amp", "amp-smooth"),
                             record_runtime=False)
        assert t1.to_csv().encode() == t2.to_csv().encode()

    def test_parallel_jobs_match_serial(self):
        grid = self.grid(trials=3)
        serial = run_phase_plane(grid, algorithms=("bg-amp",), record_runtime=False)
        parallel = run_phase_plane(grid, algorithms=("bg-amp",), record_runtime=False,
                                   jobs=3)
        assert serial.to_csv() == parallel.to_csv()

    def test_infeasible_cell_annotated(self):
        grid = self.grid(delta_values=(0.9,), beta_values=(2.0,))
        table = run_phase_plane(grid, algorithms=("bg-amp",))
        assert len(table.rows) == 1
        assert table.rows[0]["algorithm"].startswith("skipped")
        assert table.rows[0]["trials"] == 0

    def test_unknown_algorithm_rejected(self):
        with pytest.raises(ValueError):
            run_phase_plane(self.grid(), algorithms=("nope",))

    def test_every_registered_algorithm_runs(self):
        grid = self.grid(n=40, t=3, trials=1)
        table = run_phase_plane(
            grid, algorithms=("sks", "skf", "amp-smooth", "amp-filter", "amp-em", "bg-amp"),
            record_runtime=False)
        by_alg = {r["algorithm"]: r for r in table.rows}
        assert len(by_alg) == 6
        for row in by_alg.values():
            assert np.isfinite(row["tnmse_db_median"])
        # causal runs cannot beat their non-causal counterparts on average,
        # but with one trial just check they produced sane numbers
        assert by_alg["skf"]["tnmse_db_median"] >= by_alg["sks"]["tnmse_db_median"] - 0.5

    def test_oracle_not_worse_than_amp(self):
        grid = self.grid(n=64, t=4, trials=4)
        table = run_phase_plane(grid, algorithms=("sks", "amp-smooth"))
        by_alg = {r["algorithm"]: r for r in table.rows}
        assert by_alg["sks"]["tnmse_db_median"] <= by_alg["amp-smooth"]["tnmse_db_median"] + 0.2


class TestDynamicsPlane:
    def test_correlation_trends(self):
        # Moderate-size sweep at a cell where the frame-independent baseline
        # is undersampling-limited: its score is then flat across the plane,
        # the oracle improves as amplitude correlation grows (alpha shrinks),
        # and the smoother beats the baseline in the correlated cells.
        table = run_dynamics_plane(
            p01_values=(0.01, 0.10), alpha_values=(0.005, 0.05, 0.5),
            delta=0.2, beta=0.7, n=256, t=12, trials=12, seed=11,
            algorithms=("sks", "amp-smooth", "bg-amp"), jobs=2,
            record_runtime=False,
        )
        med = {(r["p01"], r["alpha"], r["algorithm"]): r["tnmse_db_median"]
               for r in table.rows}
        bg_vals = [v for (p01, a, alg), v in med.items() if alg == "bg-amp"]
        assert max(bg_vals) - min(bg_vals) < 3.0  # flat within a +-1.5 dB band
        for p01 in (0.01, 0.10):
            sks_by_alpha = [med[(p01, a, "sks")] for a in (0.005, 0.05, 0.5)]
            for lo, hi in zip(sks_by_alpha, sks_by_alpha[1:]):
                assert lo <= hi + 0.3  # more correlation helps, up to trial noise
            for a in (0.005, 0.05):
                assert med[(p01, a, "amp-smooth")] <= med[(p01, a, "bg-amp")] + 0.2

    def test_smoke_and_shape(self):
        table = run_dynamics_plane(
            p01_values=(0.0, 0.05), alpha_values=(0.01, 0.5), delta=0.5, beta=0.4,
            n=32, t=3, trials=2, seed=3, algorithms=("bg-amp",),
        )
        assert table.axes == ("p01", "alpha")
        assert len(table.rows) == 4
        for row in table.rows:
            assert set(("p01", "alpha", "algorithm", "tnmse_db_median")) <= set(row)

    def test_invalid_combination_rejected(self):
        with pytest.raises(ValueError):
            run_dynamics_plane(p01_values=(0.0,), alpha_values=(0.5,),
                               delta=0.9, beta=2.0, n=16, t=2, trials=1)


class TestEmission:
    def make_table(self):
        return ResultTable(
            axes=("delta", "beta"),
            rows=[{"delta": 0.5, "beta": 0.3, "algorithm": "bg-amp",
                   "tnmse_db_mean": -12.3456789, "tnmse_db_median": -12.0,
                   "tnmse_db_std": 1.23456789, "runtime_s": 0.0,
                   "trials": 2, "skipped_frames": 0}],
            config={"axes": ["delta", "beta"], "note": "unit"},
        )

    def test_empty_table_gives_header_only(self, tmp_path):
        table = ResultTable(axes=("delta", "beta"))
        emit_results(table, tmp_path / "out.csv", "csv")
        text = (tmp_path / "out.csv").read_text()
        assert text.splitlines() == [",".join(table.header())]

    def test_csv_six_significant_digits(self):
        csv = self.make_table().to_csv()
        assert "-12.3457" in csv  # 6 significant digits
        assert "1.23457" in csv

    def test_json_roundtrip(self, tmp_path):
        table = self.make_table()
        emit_results(table, tmp_path / "out.json", "json")
        back = ResultTable.from_json((tmp_path / "out.json").read_text())
        assert back.rows == table.rows
        assert back.axes == table.axes

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_results(self.make_table(), tmp_path / "out.xml", "xml")
