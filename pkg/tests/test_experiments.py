import csv
import math

import pytest
from hypothesis import given, strategies as st

from revmark import experiments as X
from revmark import training as tr


def test_grid_and_toy_config():
    assert X.PENALTY_GRID == (0.0, 1e2, 1e4, 1e6)
    cfg = X.toy_config(seed=2, epochs=7, p=0.0)
    assert cfg.geometry == X.TOY_GEOMETRY and cfg.epochs == 7 and cfg.seed == 2
    assert cfg.weights.p == 0.0 and cfg.weights.w == 1e4 and cfg.weights.z == 1e-3
    train, test = X.toy_covers("train"), X.toy_covers("test")
    assert train.shape == (16, 1, 32, 32) and not (train == test).all()


def test_check_trace_examples():
    good = [1e4, 1e4, 7500.0, 5625.0] + [5625.0] * 5
    assert X.check_trace(good) == {"geometric": True, "non_increasing": True, "stabilized": True}
    assert not X.check_trace([1e4, 7500.0, 1e4])["non_increasing"]
    assert not X.check_trace([1e4, 9000.0])["geometric"]
    assert not X.check_trace([1e4, 7500.0, 5625.0])["stabilized"]


@given(st.lists(st.floats(0, 1), min_size=6, max_size=60))
def test_schedule_traces_pass(accs):
    sched = tr.ScheduleState()
    trace = []
    for a in accs:
        sched = tr.adapt_lambda_w(sched, a)
        trace.append(sched.lambda_w)
    res = X.check_trace(trace, 1e4, sched.v, sched.n)
    assert res["geometric"] and res["non_increasing"]


def test_clean_target():
    assert X.clean_target({"min_accuracy": 1.0, "psnr": 35.0})
    assert not X.clean_target({"min_accuracy": 0.99, "psnr": 50.0})
    assert not X.clean_target({"min_accuracy": 1.0, "psnr": 34.9})


def test_quick_ablations(tmp_path):
    runs = {}
    for lp in (0.0, 1e6):
        runs[(0, lp)], _ = X.train_toy(X.toy_config(0, 2, p=lp))
    rows, summary = X.ablate_penalty(seeds=(0,), grid=(0.0, 1e6), runs=runs,
                                     csv_path=tmp_path / "p.csv")
    assert len(rows) == 2 and set(summary[0]) == {"fewer_overflow", "fewer_o_bits", "higher_psnr"}
    assert all(r["finite"] and r["epochs"] == 2 for r in rows)
    with open(tmp_path / "p.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2
    trows, tsum = X.trace_lambda_w(seeds=(0,), grid=(0.0, 1e6), runs=runs)
    assert len(trows) == 4 and tsum[(0, 0.0)]["geometric"]
    zruns = {(0, 1e-3): runs[(0, 1e6)]}
    zruns[(0, 0.0)], _ = X.train_toy(X.toy_config(0, 2, z=0.0))
    zrows, zsum = X.ablate_z_reg(seeds=(0,), runs=zruns)
    assert [r["lambda_z"] for r in zrows] == [0.0, 1e-3]
    assert all(r["max_abs_z"] == max(-r["z_min"], r["z_max"]) for r in zrows)


def test_early_stop(tmp_path):
    seen = []
    state, scores = X.train_toy(X.toy_config(0, 6), val=X.toy_covers("val", 2),
                                stop_when=lambda s: True, check_every=2, log=seen.append)
    assert state.epoch == 2 and len(seen) == 2 and math.isfinite(scores["psnr"])


def test_main_writes_csv(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert X.main(["trace", "--seeds", "0", "--epochs", "1", "--csv", str(out)]) == 0
    assert out.read_text().startswith("seed,lambda_p,epoch,lambda_w,acc")
    assert "geometric" in capsys.readouterr().out
