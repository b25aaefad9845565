import time

import pytest

from codepth import runner
from codepth.config import METHODS, RunConfig
from codepth.evaluation import read_report_csv

import acceptance_log

SEEDS = (0, 1, 2)
# reduced benchmark: 200 frames per domain (180 trained), 10 held-out frames each
BENCH_SCALE = dict(frames_per_domain=200, eval_frames_per_domain=10)
# plumbing scale for runner and CLI tests
TINY = dict(width=32, height=24, frames_per_domain=20, domains_per_distribution=2,
            eval_frames_per_domain=2, pretrain_epochs=1, eval_every=5, checkpoint_every=5)


@pytest.fixture(scope="session")
def benchmark_runs(tmp_path_factory):
    """Pretrain and all four methods for three seeds on the stereo benchmark."""
    root = tmp_path_factory.mktemp("benchmark")
    t0 = time.perf_counter()
    runs = {}
    for seed in SEEDS:
        cfg = RunConfig(seed=seed, out=str(root), **BENCH_SCALE)
        ckpt = runner.cmd_pretrain(cfg)
        losses = runner.read_pretrain_losses(ckpt.replace("pretrain.ckpt", "pretrain_loss.csv"))
        runs[seed] = {"pretrain": ckpt, "pretrain_losses": losses}
        for method in METHODS:
            out = runner.cmd_online(cfg.with_overrides(method=method))
            runs[seed][method] = {"dir": out, "report": read_report_csv(f"{out}/report.csv")}
    return {"root": str(root), "runs": runs, "seconds": time.perf_counter() - t0}


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_log.lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
