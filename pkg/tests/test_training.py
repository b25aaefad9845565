import numpy as np
import pytest

from codepth import autodiff as ad
from codepth import runner
from codepth import worlds as W
from codepth.autodiff import Tensor
from codepth.config import RunConfig
from codepth.detector import BoundaryDetector
from codepth.losses import LossWeights, photometric_l1
from codepth.replay import ONLINE, REPLAY, ReplayBuffer
from codepth.training import Nets, OnlineLearner, predict_depth, pretrain_step, task_loss
from codepth.warp import warp_stereo

CFG = RunConfig(width=32, height=24, frames_per_domain=20)
BENCH = runner.benchmark_for(CFG)


def sample(dom="B3", idx=4, mode="stereo"):
    return W.render(BENCH.domains[dom], idx, mode).inputs()


def learner(gamma=0.01, replay=True, replay_reg="last_online", mode="stereo", warmup=10):
    cfg = CFG.with_overrides(mode=mode)
    buf = ReplayBuffer(16, np.random.default_rng(0)) if replay else None
    return OnlineLearner(
        nets=runner.make_nets(cfg, 3),
        adam=runner.adam_for(cfg),
        weights=LossWeights(),
        gamma=gamma,
        detector=BoundaryDetector(warmup=warmup),
        buffer=buf,
        coin=np.random.default_rng(1),
        replay_reg=replay_reg,
    )


def params_copy(nets):
    return {k: p.data.copy() for k, p in nets.params.items()}


def test_anchor_lags_one_step():
    lr = learner()
    before = params_copy(lr.nets)
    lr.train_step(sample(), ONLINE)
    assert all(np.array_equal(lr.anchor.theta_prev[k], before[k]) for k in before)
    assert not all(np.array_equal(lr.nets.params[k].data, before[k]) for k in before)


def test_fine_tune_never_adds_penalty():
    lr = learner(gamma=0.0, replay=False, warmup=1)
    for i in range(6):
        rec = lr.train_step(sample(idx=i))
        assert rec.source == ONLINE and rec.reg == 0.0
    assert len(lr.detector.trace) == 6


def test_penalty_present_when_evidence_positive():
    lr = learner(warmup=1)
    recs = [lr.train_step(sample(idx=i), ONLINE) for i in range(4)]
    assert recs[0].d == 0.0 and recs[0].reg == 0.0
    assert all(r.d > 0 and r.reg > 0 for r in recs[2:])


def test_replay_step_skips_detector_and_admission():
    lr = learner(warmup=1)
    lr.buffer.preload([sample("B0", 1)])
    lr.train_step(sample(idx=0), ONLINE)
    lr.train_step(sample(idx=1), ONLINE)
    stats, trace_len, size = lr.detector.stats, len(lr.detector.trace), len(lr.buffer)
    rec = lr.train_step(sample(idx=2), REPLAY)
    assert lr.detector.stats == stats and len(lr.detector.trace) == trace_len
    assert len(lr.buffer) == size and not rec.admitted
    assert rec.d == lr.detector.last_d


def test_replay_reg_off():
    lr = learner(warmup=1, replay_reg="off")
    lr.buffer.preload([sample("B0", 1)])
    for i in range(3):
        lr.train_step(sample(idx=i), ONLINE)
    rec = lr.train_step(sample(idx=3), REPLAY)
    assert rec.d == 0.0 and rec.reg == 0.0


def test_bad_replay_reg():
    with pytest.raises(ValueError):
        learner(replay_reg="sometimes")


def test_admission_follows_evidence():
    lr = learner(warmup=1)
    for i in range(8):
        rec = lr.train_step(sample(idx=i), ONLINE)
        assert rec.admitted == (rec.d > 1.0)
    assert len(lr.buffer) == sum(r.admitted for r in lr.history)


def test_sfm_loss_and_depth():
    nets = runner.make_nets(CFG.with_overrides(mode="sfm"), 0)
    s = sample(mode="sfm")
    loss = task_loss(nets, s, LossWeights())
    ad.backward(loss)
    assert np.isfinite(loss.item()) and all(p.grad is not None for p in nets.params.values())
    depth = predict_depth(nets, s.frames, "sfm", 1.0)
    assert depth.shape == (24, 32) and np.all(depth > 0)


def test_sfm_requires_pose_net():
    nets = runner.make_nets(CFG, 0)
    with pytest.raises(ValueError, match="pose"):
        task_loss(nets, sample(mode="sfm"), LossWeights())


def _photometric(nets, s):
    with ad.no_grad():
        left = Tensor(s.frames[0][None])
        res = warp_stereo(left, nets.disp(left))
        return photometric_l1(res.reconstructed, Tensor(s.frames[1][None]), res.valid_mask[0, 0] > 0).item()


@pytest.mark.parametrize("dom", ["A3", "B0"])
def test_overfit_single_pair(dom):
    cfg = RunConfig(frames_per_domain=200)
    spec = runner.benchmark_for(cfg).domains[dom]
    s = W.render_stereo(spec, 50)
    nets = runner.make_nets(cfg, 0)
    adam = runner.adam_for(cfg)
    start = _photometric(nets, s)
    for _ in range(500):
        pretrain_step(nets, adam, s.inputs(), LossWeights())
    assert _photometric(nets, s) < 0.2 * start
