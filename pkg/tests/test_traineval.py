import numpy as np
import pytest

from lanedet import tensor as T
from lanedet.evaluate import (
    Detector,
    EvalReport,
    evaluate,
    fps_benchmark,
    lane_distance,
    match_lanes,
    render_overlay,
)
from lanedet.geometry import QuadraticLane
from lanedet.images import read_ppm
from lanedet.localizer import LocalizerConfig
from lanedet.proposal import ProposalNetConfig, init_proposal_params
from lanedet.localizer import init_localizer_params
from lanedet.scenes import Sample, easy_spec, generate_dataset
from lanedet.training import (
    ColdStartError,
    TrainConfig,
    edge_points_from_sample,
    finetune_weak,
    train_localizer,
    train_proposal,
)

from helpers import optimal_matching

H = 32
SPEC = easy_spec(size=(H, 64), min_gap=16.0, lane_count_range=(1, 2))
PROP_CFG = ProposalNetConfig(in_size=(H, 64), widths=(4, 8))
LOC_CFG = LocalizerConfig(
    stage_widths=((8, 16), (16, 32)), hidden_width=16, max_lanes=2,
    image_width=64, image_height=H,
)


def vlane(x):
    return QuadraticLane(0.0, 0.0, float(x))


def fake_sample(lanes, h=H, w=64):
    return Sample(
        image=np.zeros((1, h, w)),
        edge_map=np.zeros((1, h, w)),
        lanes=lanes,
        weak_count=len(lanes),
    )


class TestMatching:
    def test_identical_predictions_are_perfect(self):
        gt = [vlane(10), vlane(40)]
        report = evaluate(lambda s: list(s.lanes), [fake_sample(gt)], tau_match=8.0)
        assert report.tpr == 1.0 and report.fpr == 0.0

    def test_duplicate_detection_is_false_positive(self):
        gt = [vlane(10)]
        det, fp = match_lanes([vlane(10), vlane(10)], gt, H, 8.0)
        assert det == 1 and fp == 1

    def test_table_counts_arithmetic(self):
        # 1146 of 1170 targets matched, 31 unmatched predictions
        samples = []
        preds = []
        for i in range(1170):
            gt = [vlane(30)]
            if i < 1146:
                p = [vlane(30)]
            else:
                p = []
            if i < 31:
                p = p + [vlane(300)]  # far away: never matches
            samples.append(fake_sample(gt))
            preds.append(p)
        it = iter(preds)
        report = evaluate(lambda s: next(it), samples, tau_match=8.0)
        # compare at the report's 4-decimal rate precision, with float slack
        assert abs(round(report.tpr * 100, 2) - 97.9) <= 0.05 + 1e-9
        assert abs(round(report.fpr * 100, 2) - 2.7) <= 0.05 + 1e-9

    def test_prediction_order_irrelevant(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            gt = [vlane(x) for x in rng.uniform(0, 64, size=3)]
            pred = [vlane(x) for x in rng.uniform(0, 64, size=3)]
            base = match_lanes(pred, gt, H, 8.0)
            for _ in range(5):
                perm = rng.permutation(3)
                assert match_lanes([pred[i] for i in perm], gt, H, 8.0) == base

    def test_greedy_equals_optimal_in_separated_regime(self):
        rng = np.random.default_rng(5)
        tau = 4.0
        for _ in range(50):
            # ground-truth lanes separated by > 2*tau
            xs = np.cumsum(rng.uniform(2 * tau + 1, 20, size=3)) + rng.uniform(0, 5)
            gt = [vlane(x) for x in xs]
            pred = [vlane(x + rng.uniform(-6, 6)) for x in xs[: rng.integers(1, 4)]]
            if rng.uniform() < 0.3:
                pred.append(vlane(rng.uniform(200, 300)))
            greedy = match_lanes(pred, gt, H, tau)
            assert greedy == optimal_matching(pred, gt, H, tau)

    def test_empty_dataset_is_error(self):
        with pytest.raises(ValueError):
            evaluate(lambda s: [], [], 8.0)

    def test_report_tsv(self):
        r = EvalReport(split="easy", targets=10, detected=9, false_positives=1, tau_match=8.0)
        assert r.as_tsv() == "easy\t10\t9\t0.9000\t0.1000\t8"


class TestRenderOverlay:
    def test_zero_lanes_is_grayscale_promotion(self, tmp_path):
        img = np.random.default_rng(7).uniform(size=(1, 8, 10))
        out = render_overlay(img, [], tmp_path / "o.ppm")
        expected = np.repeat((np.clip(img[0], 0, 1) * 255)[:, :, None], 3, axis=2).astype(np.uint8)
        assert np.array_equal(out, expected)

    def test_vertical_lane_colors_band(self):
        img = np.zeros((1, 16, 32))
        out = render_overlay(img, [vlane(10)])
        assert np.all(out[:, 9:12].reshape(-1, 3) == out[0, 10])
        assert np.all(out[:, 13] == 0)

    def test_ppm_roundtrip_dimensions(self, tmp_path):
        img = np.zeros((1, 16, 32))
        path = tmp_path / "o.ppm"
        render_overlay(img, [vlane(5), vlane(20)], path)
        back = read_ppm(path)
        assert back.shape == (16, 32, 3)

    def test_nonfinite_lane_rejected(self):
        with pytest.raises(ValueError):
            render_overlay(np.zeros((1, 8, 8)), [QuadraticLane(np.nan, 0, 0)])


def tiny_dataset(count, seed=0):
    return generate_dataset(SPEC, count, seed)


class TestTrainProposal:
    def test_loss_decreases(self):
        samples = tiny_dataset(12)
        losses = []
        cfg = TrainConfig(epochs=5, batch_size=4, lr=0.5, momentum=0.9, seed=1,
                          log=lambda e, l: losses.append(l))
        train_proposal(samples, cfg, PROP_CFG)
        assert losses[4] < losses[0]

    def test_lr_zero_keeps_params(self):
        samples = tiny_dataset(4)
        cfg = TrainConfig(epochs=1, batch_size=2, lr=0.0, momentum=0.0, seed=2)
        params = init_proposal_params(PROP_CFG, np.random.default_rng(2))
        before = {k: v.data.copy() for k, v in params.items()}
        train_proposal(samples, cfg, PROP_CFG, params=params)
        for k in params:
            assert np.array_equal(params[k].data, before[k])

    def test_same_seed_identical_checkpoints(self, tmp_path):
        samples = tiny_dataset(6)
        cfg = TrainConfig(epochs=2, batch_size=3, lr=0.3, momentum=0.9, seed=3)
        a = train_proposal(samples, cfg, PROP_CFG)
        b = train_proposal(samples, cfg, PROP_CFG)
        pa, pb = tmp_path / "a.ck", tmp_path / "b.ck"
        T.save_checkpoint(a, pa)
        T.save_checkpoint(b, pb)
        assert pa.read_bytes() == pb.read_bytes()


class TestTrainLocalizer:
    def test_supervised_loss_decreases(self):
        samples = tiny_dataset(16, seed=5)
        losses = []
        cfg = TrainConfig(epochs=20, batch_size=8, lr=0.5, momentum=0.9, seed=5,
                          log=lambda e, l: losses.append(l))
        train_localizer(samples, cfg, LOC_CFG)
        assert losses[-1] < losses[0]

    def test_combined_alpha_zero_identical_to_supervised(self, tmp_path):
        samples = tiny_dataset(8, seed=6)
        sup = TrainConfig(epochs=2, batch_size=4, lr=0.2, seed=6, regime="supervised")
        com = TrainConfig(epochs=2, batch_size=4, lr=0.2, seed=6, regime="combined", alpha=0.0)
        import copy
        a = train_localizer(samples, sup, copy.deepcopy(LOC_CFG))
        b = train_localizer(samples, com, copy.deepcopy(LOC_CFG))
        pa, pb = tmp_path / "a.ck", tmp_path / "b.ck"
        T.save_checkpoint(a, pa)
        T.save_checkpoint(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_deterministic_under_seed(self, tmp_path):
        samples = tiny_dataset(6, seed=7)
        cfg = TrainConfig(epochs=2, batch_size=3, lr=0.2, seed=7)
        import copy
        a = train_localizer(samples, cfg, copy.deepcopy(LOC_CFG))
        b = train_localizer(samples, cfg, copy.deepcopy(LOC_CFG))
        for k in a:
            assert np.array_equal(a[k].data, b[k].data)

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(alpha=-1.0)

    def test_decoder_scope_freezes_encoder(self):
        samples = tiny_dataset(6, seed=9)
        params = init_localizer_params(LOC_CFG, np.random.default_rng(9))
        before = {k: v.data.copy() for k, v in params.items()}
        cfg = TrainConfig(epochs=1, batch_size=3, lr=0.5, seed=9, scope="decoder")
        train_localizer(samples, cfg, LOC_CFG, params=params)
        for k in params:
            frozen = np.array_equal(params[k].data, before[k])
            assert frozen == (k.startswith("stage")), k

    def test_unknown_scope_rejected(self):
        with pytest.raises(ValueError, match="scope"):
            TrainConfig(scope="heads-only")

    def test_proposal_rejects_decoder_scope(self):
        with pytest.raises(ValueError, match="scope"):
            train_proposal(tiny_dataset(2), TrainConfig(scope="decoder"), PROP_CFG)


class TestFinetuneWeak:
    def test_cold_start_rejected(self):
        with pytest.raises(ColdStartError, match="supervised"):
            finetune_weak(tiny_dataset(2), None, TrainConfig(), LOC_CFG)

    def test_zero_epochs_keeps_checkpoint(self):
        params = init_localizer_params(LOC_CFG, np.random.default_rng(8))
        before = {k: v.data.copy() for k, v in params.items()}
        finetune_weak(
            [s.as_weak() for s in tiny_dataset(4, seed=8)],
            params,
            TrainConfig(epochs=0, seed=8),
            LOC_CFG,
        )
        for k in params:
            assert np.array_equal(params[k].data, before[k])

    def test_weak_count_zero_contributes_confidence_target(self):
        params = init_localizer_params(LOC_CFG, np.random.default_rng(9))
        s = tiny_dataset(1, seed=9)[0].as_weak()
        s.weak_count = 0
        s.edge_map = np.zeros_like(s.edge_map)  # no points either
        out = finetune_weak([s], params, TrainConfig(epochs=1, batch_size=1, lr=0.1, seed=9), LOC_CFG)
        for k in out:
            assert np.all(np.isfinite(out[k].data))


class TestBenchmark:
    def test_reports_positive_fps_and_stage_ratio(self):
        prop = init_proposal_params(PROP_CFG, np.random.default_rng(10))
        loc = init_localizer_params(LOC_CFG, np.random.default_rng(10))
        det = Detector(prop, PROP_CFG, loc, LOC_CFG)
        sample = tiny_dataset(1, seed=10)[0]
        result = fps_benchmark(det, sample, iterations=5)
        assert result["stage1"]["fps"] > 0
        assert result["stage2"]["fps"] > 0
        assert result["end_to_end"]["fps"] > 0
        assert result["stage2_over_stage1_speed_ratio"] > 0
        assert result["stage1"]["p95_s"] >= result["stage1"]["median_s"]

    def test_warmup_validation(self):
        prop = init_proposal_params(PROP_CFG, np.random.default_rng(11))
        loc = init_localizer_params(LOC_CFG, np.random.default_rng(11))
        det = Detector(prop, PROP_CFG, loc, LOC_CFG)
        with pytest.raises(ValueError):
            fps_benchmark(det, tiny_dataset(1)[0], iterations=2, warmup=1)

    def test_latency_monotone_with_area(self):
        small_cfg = ProposalNetConfig(in_size=(16, 32), widths=(4, 8))
        big_cfg = ProposalNetConfig(in_size=(64, 128), widths=(4, 8))
        loc = init_localizer_params(LOC_CFG, np.random.default_rng(12))
        results = {}
        for name, cfg, size in (("small", small_cfg, (16, 32)), ("big", big_cfg, (64, 128))):
            prop = init_proposal_params(cfg, np.random.default_rng(12))
            det = Detector(prop, cfg, loc, LOC_CFG)
            spec = easy_spec(size=size, min_gap=8.0, lane_count_range=(1, 1),
                             arrow_count=0, blob_count=0, box_count=0)
            sample = generate_dataset(spec, 1, seed=12)[0]
            results[name] = fps_benchmark(det, sample, iterations=5)
        assert results["small"]["stage1"]["fps"] > results["big"]["stage1"]["fps"]


def test_edge_points_from_sample():
    s = tiny_dataset(1, seed=13)[0]
    ps = edge_points_from_sample(s)
    assert ps.count > 0
    ys = ps.points[:, 1].astype(int)
    xs = ps.points[:, 0].astype(int)
    assert np.all(s.edge_map[0, ys, xs] == 1.0)
