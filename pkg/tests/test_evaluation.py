import warnings

import numpy as np
import pytest

from clearreg import evaluation as ev, forward_model as fm, icnn, io as cio, phantoms, training as tr
from clearreg.icnn import ArchSpec
from clearreg.metrics import PSNR_CAP
from clearreg.solver import PGDConfig

ARCH = ArchSpec(input_shape=(2, 32, 32), stem_channels=4, widths=(4, 4, 8, 8, 8, 8))


def _ck(mode, seed=0):
    net = icnn.build(ARCH, seed=seed, mode="CLEAR" if mode == "CLEAR" else "UNCLEAR")
    return tr.Checkpoint.from_net(net, mode, tr.TrainConfig(mode=mode))


def _cfg(**kw):
    base = dict(pgd=PGDConfig(max_iters=3, record_trace=False), tv_weights=(0.0, 0.01),
                tv_iters=5, tv_inner_iters=5)
    base.update(kw)
    return ev.EvalConfig(**base)


def test_full_mask_every_method_hits_cap():
    images = phantoms.phantom_set(3, 32, seed=0)
    full = fm.SamplingMask(np.ones((32, 32)))
    recs = ev.evaluate_suite([_ck(m) for m in ev.LEARNED], images, [("full", full)], 0.0, _cfg())
    assert [r.method for r in recs] == list(ev.METHODS)
    for r in recs:
        assert np.all(r.psnr == PSNR_CAP), r.method


def test_empty_checkpoints_only_baselines():
    images = phantoms.phantom_set(2, 32, seed=1)
    mask = fm.make_mask("uniform-1d", (32, 32), 3)
    with pytest.warns(RuntimeWarning):
        recs = ev.evaluate_suite([], images, [mask], 0.0, _cfg())
    assert [r.method for r in recs] == ["zero-filled", "TV"]
    assert recs[1].extra["tv_weight"] in (0.0, 0.01)


@pytest.mark.filterwarnings("ignore:no checkpoint")
def test_missing_checkpoint_path_warns(tmp_path):
    images = phantoms.phantom_set(2, 32, seed=1)
    mask = fm.make_mask("uniform-1d", (32, 32), 3)
    cio.write_checkpoint(tmp_path / "clear.ckpt", _ck("CLEAR"))
    with pytest.warns(RuntimeWarning, match="not found"):
        recs = ev.evaluate_suite([tmp_path / "clear.ckpt", tmp_path / "nope.ckpt"], images,
                                 [mask], 0.0, _cfg())
    assert [r.method for r in recs] == ["zero-filled", "TV", "CLEAR"]


def test_tv_picks_best_weight():
    images = phantoms.phantom_set(2, 32, seed=2)
    mask = fm.make_mask("uniform-1d", (32, 32), 3)
    cfg = _cfg(tv_weights=(0.001, 0.03, 1.0), tv_iters=20)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        best = ev.evaluate_suite([], images, [mask], 0.0, cfg)[1]
        singles = [ev.evaluate_suite([], images, [mask], 0.0, _cfg(tv_weights=(w,), tv_iters=20))[1]
                   for w in cfg.tv_weights]
    assert best.mean()["nmse"] == min(s.mean()["nmse"] for s in singles)


def test_csv_aggregates_recompute(tmp_path):
    images = phantoms.phantom_set(4, 32, seed=3)
    mask = fm.make_mask("uniform-1d", (32, 32), 3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        recs = ev.evaluate_suite([_ck("CLEAR")], images, [mask], 0.1, _cfg())
    ev.write_metrics_csv(recs, tmp_path / "m.csv")
    rows = ev.read_metrics_csv(tmp_path / "m.csv")
    assert list(rows[0]) == list(ev.CSV_COLUMNS)
    for method in ("zero-filled", "TV", "CLEAR"):
        per = [r for r in rows if r["method"] == method and r["image_id"] not in ("mean", "std")]
        mean = next(r for r in rows if r["method"] == method and r["image_id"] == "mean")
        std = next(r for r in rows if r["method"] == method and r["image_id"] == "std")
        assert len(per) == 4
        for k in ("nmse", "psnr_db", "ssim"):
            vals = np.array([r[k] for r in per])
            assert abs(vals.mean() - mean[k]) <= 1e-12
            assert abs(vals.std() - std[k]) <= 1e-12
    table = ev.summary_table(recs)
    assert "CLEAR" in table and "+-" in table


def test_threads_do_not_change_results():
    images = phantoms.phantom_set(3, 32, seed=4)
    mask = fm.make_mask("random-1d", (32, 32), 3, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = ev.evaluate_suite([_ck("CLEAR")], images, [mask], 0.2, _cfg(threads=1))
        b = ev.evaluate_suite([_ck("CLEAR")], images, [mask], 0.2, _cfg(threads=3))
    for ra, rb in zip(a, b):
        assert ra.psnr.tobytes() == rb.psnr.tobytes() and ra.ssim.tobytes() == rb.ssim.tobytes()


def test_measurement_noise_seeded_per_image():
    images = phantoms.phantom_set(2, 32, seed=5)
    mask = fm.make_mask("uniform-1d", (32, 32), 3)
    a = ev.measurements(mask, images, 0.5, seed=1)
    b = ev.measurements(mask, images, 0.5, seed=1)
    c = ev.measurements(mask, images[1:], 0.5, seed=1)
    assert a[0].tobytes() == b[0].tobytes()
    assert not np.array_equal(a[1], c[0])
    assert np.all(a[0][~mask.data] == 0)


def test_image_metrics_use_magnitude():
    x = phantoms.make_phantom("ellipses", 32, 0)
    y = np.stack([np.zeros((32, 32)), x[0]])  # same magnitude, rotated phase
    n, p, s = ev.image_metrics(x, y)
    assert n == 0.0 and p == PSNR_CAP and s == 1.0
