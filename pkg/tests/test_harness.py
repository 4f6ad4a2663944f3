from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from hybridloc import load_config, rmse, run_protocol, run_trial
from hybridloc.protocol import (
    TrialResult,
    clear_dictionary_memo,
    config_for,
    dictionaries_for,
    run_batch,
    summarize,
    sweep,
)
from hybridloc.fusion import Box
from hybridloc.scene import spherical_to_global

TINY = Path(__file__).parent / "data" / "tiny.toml"


@pytest.fixture(scope="module")
def tiny():
    return load_config(TINY)


def result(fused_final, seed=0):
    fused = np.asarray(fused_final, dtype=float)[None]
    return TrialResult(seed, fused, np.zeros(len(fused[0])), 0.0)


class TestRmse:
    def test_zero(self):
        truth = np.array([[1.0, 2.0, 3.0]])
        assert rmse([result(truth)], truth) == 0

    def test_pythagorean(self):
        assert rmse([result([[3.0, 4.0, 0.0]])], [[0.0, 0.0, 0.0]]) == 5

    def test_constant(self):
        truth = np.zeros((2, 3))
        trials = [result([[1.0, 0, 0], [0, 1.0, 0]]), result([[0, 0, 1.0], [0, -1.0, 0]])]
        assert rmse(trials, truth) == 1

    def test_failed_trials_are_skipped(self):
        bad = TrialResult(1, np.zeros((0, 1, 3)), np.full(1, np.nan), 0.0, error="boom")
        assert rmse([result([[3.0, 4.0, 0.0]]), bad], [[0.0, 0.0, 0.0]]) == 5
        with pytest.raises(ValueError):
            rmse([bad], [[0.0, 0.0, 0.0]])


class TestProtocol:
    def test_single_cycle(self, tiny):
        records = run_protocol(replace(tiny, cycles=1), seed=3)
        assert len(records) == 1
        assert records[0].selection is None and records[0].next_phases is None

    def test_determinism(self, tiny):
        a = run_protocol(tiny, seed=11)
        clear_dictionary_memo()
        b = run_protocol(tiny, seed=11)
        for x, y in zip(a, b):
            assert np.array_equal(x.samples, y.samples)
            assert np.array_equal(x.fused, y.fused)
            assert np.array_equal(x.crb, y.crb)
            assert x.selection == y.selection
            assert np.array_equal(x.phases, y.phases)

    def test_cycle_one_uses_every_surface(self, tiny):
        rec = run_protocol(tiny, seed=2)
        assert [e.ris_id for e in rec[0].estimates[0]] == [0, 1, 2]
        for r in rec[1:]:
            assert len(r.estimates[0]) == tiny.l_sel

    def test_fused_inside_box(self, tiny):
        box = Box(tiny.box_lower, tiny.box_upper)
        for seed in range(3):
            for r in run_protocol(tiny, seed=seed, snr_db=-10.0):
                assert all(box.contains(p, tol=1e-12) for p in r.fused)

    def test_ff_only_shares_synthesis(self, tiny):
        a = run_protocol(tiny, seed=5)
        b = run_protocol(replace(tiny, ff_only=True), seed=5)
        assert np.array_equal(a[0].samples, b[0].samples)
        assert np.array_equal(a[0].phases, b[0].phases)
        assert all(not e.is_near for e in b[0].estimates[0])

    def test_on_grid_noiseless_near_field(self, tiny):
        cfg = replace(tiny, num_scatterers=0, l_sel=1, active_ris=1, cycles=4)
        d = dictionaries_for(cfg)[0]
        # an NF atom well inside the angular grid
        j = int(np.flatnonzero((np.abs(d.nf_params[:, 1] - np.deg2rad(10)) < 1e-9)
                               & (np.abs(d.nf_params[:, 2]) < 1e-9))[1])
        point = spherical_to_global(tuple(d.nf_params[j]), cfg.ris_poses[0])
        cfg = replace(cfg, users=point[None])
        records = run_protocol(cfg, seed=0, snr_db=np.inf)
        # one scalar sample cannot tell atoms apart; from two samples on the atom is exact
        for r in records[1:]:
            assert np.allclose(r.fused[0], point, atol=1e-9)
            assert r.estimates[0][0].support == (j,)

    def test_selection_follows_estimates(self, tiny):
        records = run_protocol(replace(tiny, cycles=6), seed=4, snr_db=30.0)
        for a, b in zip(records[:-2], records[1:-1]):
            if np.array_equal(a.fused, b.fused):
                assert a.selection == b.selection

    def test_errors_become_diagnostics(self, tiny):
        # two co-located surfaces share a BS-side direction, so separation fails
        pose = tiny.ris_pool[0]
        cfg = replace(tiny, ris_pool=(pose, pose), active_ris=None, l_sel=1)
        res = run_trial(cfg, seed=0)
        assert not res.ok
        assert res.error.startswith("SeparationInfeasible")
        assert np.all(np.isnan(res.errors))


class TestSweep:
    def test_single_value_is_a_batch(self, tiny):
        rows = sweep(tiny, "snr", [5.0], trials=2, seed=9)
        batch = run_batch(tiny, 5.0, trials=2, seed=9)
        err, crb, failed = summarize(batch, tiny.users)
        assert len(rows) == 1
        assert rows[0].rmse == err and rows[0].mean_crb == crb and rows[0].failures == failed

    def test_rows_in_input_order(self, tiny):
        rows = sweep(tiny, "snr", [20.0, 0.0, 10.0], trials=1, seed=3)
        assert [r.value for r in rows] == [20.0, 0.0, 10.0]
        assert all(r.seed == 3 and r.trials == 1 for r in rows)

    def test_num_ris_keeps_half_selected(self, tiny):
        cfg, _ = config_for(tiny, "num_ris", 3)
        assert cfg.num_ris == 3 and cfg.l_sel == 2
        cfg, _ = config_for(tiny, "num_ris", 1)
        assert cfg.l_sel == 1

    def test_unknown_axis(self, tiny):
        with pytest.raises(ValueError):
            sweep(tiny, "bandwidth", [1.0])


@pytest.mark.slow
def test_many_cycles_beat_one():
    from hybridloc import desk_config
    rows = sweep(desk_config(), "cycles", [1, 20], trials=50)
    assert rows[1].rmse <= rows[0].rmse
