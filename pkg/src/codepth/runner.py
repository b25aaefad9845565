"""Experiment lifecycle: pretrain, online training, evaluation, reporting."""

from __future__ import annotations

import csv
import functools
import json
import logging
import math
import os
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import worlds
from .config import METHOD_LABELS, METHODS, RunConfig, dump_config
from .detector import BoundaryDetector, LossStats, TraceRow
from .evaluation import (
    CATEGORIES,
    MetricSet,
    ProtocolReport,
    ReportRow,
    evaluate_checkpoint,
    normalize_curves,
    read_report_csv,
    write_domain_csv,
    write_report_csv,
)
from .losses import LossWeights
from .models import build_default_nets, write_manifest
from .regularizer import ImportanceSnapshot
from .replay import Admission, ReplayBuffer
from .training import Nets, OnlineLearner, StepRecord, predict_depth, pretrain_step

log = logging.getLogger(__name__)

PRETRAIN_CKPT = "pretrain.ckpt"
FINAL_CKPT = "final.ckpt"


@functools.lru_cache(maxsize=8192)
def render_cached(spec: worlds.DomainSpec, idx: int, mode: str) -> worlds.LabeledSample:
    return worlds.render(spec, idx, mode)


def benchmark_for(cfg: RunConfig) -> worlds.Benchmark:
    return worlds.make_benchmark(
        seed=cfg.world_seed,
        width=cfg.width,
        height=cfg.height,
        frames_per_domain=cfg.frames_per_domain,
        domains_per_distribution=cfg.domains_per_distribution,
        online_distribution=cfg.online_distribution,
        eval_frames_per_domain=cfg.eval_frames_per_domain or None,
        mode=cfg.mode,
    )


def seed_streams(seed: int) -> Dict[str, object]:
    """Independent generators per concern, all derived from the master seed."""
    w, s, r, c = np.random.SeedSequence(seed).spawn(4)
    return {
        "weights": int(w.generate_state(1)[0]),
        "stream": np.random.default_rng(s),
        "replay": np.random.default_rng(r),
        "coin": np.random.default_rng(c),
    }


def make_nets(cfg: RunConfig, weight_seed: int) -> Nets:
    disp, pose = build_default_nets(cfg.height, cfg.width, weight_seed)
    return Nets(disp, pose if cfg.mode == "sfm" else None)


def loss_weights(cfg: RunConfig) -> LossWeights:
    return LossWeights(cfg.beta_p, cfg.beta_ss, cfg.beta_s)


def adam_for(cfg: RunConfig) -> ad.AdamState:
    return ad.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)


def pretrain_dir(cfg: RunConfig) -> str:
    return os.path.join(cfg.out, f"pretrain_{cfg.mode}_s{cfg.seed}")


def run_dir(cfg: RunConfig) -> str:
    return os.path.join(cfg.out, f"{cfg.mode}_{cfg.method}_s{cfg.seed}")


def _write_json(path: str, data) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
    os.replace(tmp, path)


def _load_nets(cfg: RunConfig, path: str) -> Tuple[Nets, Optional[ad.AdamState]]:
    arrays, state = ad.load_checkpoint(path)
    has_pose = any(k.startswith("pose.") for k in arrays)
    if has_pose != (cfg.mode == "sfm"):
        kind = "sfm" if has_pose else "stereo"
        raise ValueError(f"checkpoint {path} was trained in {kind} mode, config asks for {cfg.mode}")
    nets = make_nets(cfg, 0)
    expected = set(nets.params)
    extra = set(arrays) - expected
    if extra:
        raise ValueError(f"checkpoint {path} has unexpected parameters: {', '.join(sorted(extra))}")
    nets.disp.load_arrays(arrays)
    if nets.pose is not None:
        nets.pose.load_arrays(arrays)
    return nets, state


# --------------------------------------------------------------------------
# pretrain


def cmd_pretrain(cfg: RunConfig) -> str:
    """Shuffled multi-epoch training over the pre-training domains."""
    cfg.validate()
    out = pretrain_dir(cfg)
    os.makedirs(out, exist_ok=True)
    bench = benchmark_for(cfg)
    rng = seed_streams(cfg.seed)
    nets = make_nets(cfg, rng["weights"])
    adam = adam_for(cfg)
    w = loss_weights(cfg)
    pairs = list(bench.pretrain)
    rows = []
    step = 0
    for epoch in range(cfg.pretrain_epochs):
        for i in rng["stream"].permutation(len(pairs)):
            spec, idx = pairs[i]
            sample = render_cached(spec, idx, cfg.mode)
            loss = pretrain_step(nets, adam, sample.inputs(), w)
            if not math.isfinite(loss):
                raise FloatingPointError(f"pretrain: non-finite loss at step {step}")
            rows.append((step, epoch, spec.domain_id, idx, loss))
            step += 1
    ckpt = os.path.join(out, PRETRAIN_CKPT)
    ad.save_checkpoint(ckpt, nets.params, adam)
    with open(os.path.join(out, "pretrain_loss.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "epoch", "domain_id", "frame", "loss"])
        for r in rows:
            wr.writerow(list(r[:4]) + [repr(r[4])])
    write_manifest(os.path.join(out, "layers.json"), [n for n in (nets.disp, nets.pose) if n is not None])
    _write_json(
        os.path.join(out, "manifest.json"),
        {
            "phase": "pretrain",
            "mode": cfg.mode,
            "seed": cfg.seed,
            "steps": step,
            "domains": bench.pretrain.domains(),
            "layers": [e for n in (nets.disp, nets.pose) if n is not None for e in n.manifest()],
            "config": cfg.to_dict(),
            "deviations": cfg.deviations(),
        },
    )
    return ckpt


def read_pretrain_losses(path: str) -> List[float]:
    with open(path, newline="") as fh:
        return [float(r["loss"]) for r in csv.DictReader(fh)]


# --------------------------------------------------------------------------
# online


class _Evaluator:
    def __init__(self, cfg: RunConfig, bench: worlds.Benchmark):
        self.cfg = cfg
        self.bench = bench
        self.sets = {
            dom: [render_cached(spec, idx, cfg.mode) for spec, idx in frames]
            for dom, frames in bench.eval_sets.items()
        }
        self.dist = {d: s.distribution for d, s in bench.domains.items()}
        self.align = "median" if cfg.mode == "sfm" else "none"

    def __call__(self, nets: Nets, step: int, history: Sequence[str], current: Optional[str]) -> ReportRow:
        def predict(sample):
            fb = self.bench.domains[sample.domain_id].fb
            return predict_depth(nets, sample.frames, self.cfg.mode, fb)

        return evaluate_checkpoint(
            predict, self.sets, step, history, self.bench.online_distribution, self.dist, current, self.align
        )


def _row_to_json(r: ReportRow) -> dict:
    return {
        "step": r.step,
        "domain": r.domain,
        "categories": {k: (None if v is None else list(v.values())) for k, v in r.categories.items()},
        "per_domain": {k: list(v.values()) for k, v in r.per_domain.items()},
        "frame_counts": r.frame_counts,
    }


def _row_from_json(d: dict) -> ReportRow:
    return ReportRow(
        d["step"],
        d["domain"],
        {k: (None if v is None else MetricSet(*v)) for k, v in d["categories"].items()},
        {k: MetricSet(*v) for k, v in d["per_domain"].items()},
        d["frame_counts"],
    )


def _save_state(path: str, learner: OnlineLearner, report: ProtocolReport, rngs: dict) -> None:
    os.makedirs(path, exist_ok=True)
    ad.save_checkpoint(os.path.join(path, "params.ckpt"), learner.nets.params, learner.adam)
    anchor = OrderedDict((k, ad.Tensor(v)) for k, v in learner.anchor.theta_prev.items())
    ad.save_checkpoint(os.path.join(path, "anchor.ckpt"), anchor)
    buf = learner.buffer
    state = {
        "step": learner.step,
        "detector": {
            "stats": learner.detector.stats.to_dict(),
            "last_d": learner.detector.last_d,
            "trace": [list(t.__dict__.values()) for t in learner.detector.trace],
        },
        "history": [list(h.__dict__.values()) for h in learner.history],
        "buffer": None
        if buf is None
        else {
            "keys": [list(s.key) for s in buf.items],
            "meta": [list(m.__dict__.values()) for m in buf.meta],
            "next_id": buf._next_id,
            "rng": buf.rng.bit_generator.state,
        },
        "coin": rngs["coin"].bit_generator.state,
        "report": [_row_to_json(r) for r in report.rows],
    }
    _write_json(os.path.join(path, "state.json"), state)


def _load_state(path: str, learner: OnlineLearner, report: ProtocolReport, rngs: dict, bench, mode) -> None:
    arrays, adam = ad.load_checkpoint(os.path.join(path, "params.ckpt"))
    learner.nets.disp.load_arrays(arrays)
    if learner.nets.pose is not None:
        learner.nets.pose.load_arrays(arrays)
    learner.adam = adam
    anchor, _ = ad.load_checkpoint(os.path.join(path, "anchor.ckpt"))
    learner.anchor = ImportanceSnapshot(anchor, OrderedDict((k, np.abs(v)) for k, v in anchor.items()))
    with open(os.path.join(path, "state.json")) as fh:
        st = json.load(fh)
    learner.step = st["step"]
    det = learner.detector
    det.stats = LossStats.from_dict(st["detector"]["stats"])
    det.last_d = st["detector"]["last_d"]
    det.trace = [TraceRow(*t) for t in st["detector"]["trace"]]
    learner.history = [StepRecord(*h) for h in st["history"]]
    if learner.buffer is not None:
        b = st["buffer"]
        buf = learner.buffer
        buf.items = [render_cached(bench.domains[k[0]], k[1], mode).inputs() for k in b["keys"]]
        buf.meta = [Admission(*m) for m in b["meta"]]
        buf._next_id = b["next_id"]
        buf.rng.bit_generator.state = b["rng"]
    rngs["coin"].bit_generator.state = st["coin"]
    report.rows = [_row_from_json(r) for r in st["report"]]


def cmd_online(
    cfg: RunConfig,
    checkpoint: Optional[str] = None,
    resume: bool = False,
    stop_after: Optional[int] = None,
) -> str:
    """Single in-order pass over the online plan.

    ``stop_after`` ends the run after that many steps with the state saved,
    as an interruption would; ``resume`` continues from the saved state.
    """
    cfg.validate()
    out = run_dir(cfg)
    os.makedirs(out, exist_ok=True)
    checkpoint = checkpoint or os.path.join(pretrain_dir(cfg), PRETRAIN_CKPT)
    if not os.path.exists(checkpoint):
        raise FileNotFoundError(f"pretrained checkpoint not found: {checkpoint} (run pretrain first)")
    nets, _ = _load_nets(cfg, checkpoint)
    bench = benchmark_for(cfg)
    rngs = seed_streams(cfg.seed)
    buffer = ReplayBuffer(cfg.replay_capacity, rngs["replay"]) if cfg.use_replay else None
    learner = OnlineLearner(
        nets=nets,
        adam=adam_for(cfg),
        weights=loss_weights(cfg),
        gamma=cfg.effective_gamma,
        detector=BoundaryDetector(cfg.alpha_l, cfg.detector_warmup, cfg.detector_init_var),
        buffer=buffer,
        coin=rngs["coin"],
        replay_reg=cfg.replay_reg,
    )
    evaluate = _Evaluator(cfg, bench)
    report = ProtocolReport()
    state_dir = os.path.join(out, "state")
    if resume and os.path.exists(os.path.join(state_dir, "state.json")):
        _load_state(state_dir, learner, report, rngs, bench, cfg.mode)
        log.info("resumed %s at step %d", out, learner.step)
    elif buffer is not None and cfg.replay_preload:
        buffer.preload(render_cached(spec, idx, cfg.mode).inputs() for spec, idx in bench.pretrain)

    plan = list(bench.online)
    ends = set(np.cumsum([stop - start for _, start, stop in bench.online.blocks]).tolist())
    pre_domains = bench.pretrain.domains()

    def history_at(n_steps: int) -> Tuple[List[str], Optional[str]]:
        seen = list(pre_domains)
        current = None
        for spec, _ in plan[:n_steps]:
            if spec.domain_id != current:
                current = spec.domain_id
                seen.append(current)
        return seen, current

    if not report.rows:
        report.rows.append(evaluate(nets, 0, pre_domains, None))
    while learner.step < len(plan):
        spec, idx = plan[learner.step]
        learner.train_step(render_cached(spec, idx, cfg.mode).inputs())
        done = learner.step
        if done % cfg.eval_every == 0 or done in ends:
            seen, current = history_at(done)
            report.rows.append(evaluate(nets, done, seen, current))
        if done % cfg.checkpoint_every == 0 or (stop_after is not None and done == stop_after):
            _save_state(state_dir, learner, report, rngs)
        if stop_after is not None and done == stop_after and done < len(plan):
            return out

    ad.save_checkpoint(os.path.join(out, FINAL_CKPT), nets.params, learner.adam)
    _write_outputs(out, cfg, bench, learner, report, evaluate.dist)
    return out


def _write_outputs(out, cfg, bench, learner: OnlineLearner, report, dist) -> None:
    write_report_csv(os.path.join(out, "report.csv"), report)
    write_domain_csv(os.path.join(out, "domains.csv"), report, dist)
    with open(os.path.join(out, "detector_trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "mu", "var", "D", "boundary"])
        for t in learner.detector.trace:
            w.writerow([t.step, repr(t.loss), repr(t.mu), repr(t.var), repr(t.D), int(t.boundary)])
    with open(os.path.join(out, "steps.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "source", "loss", "D", "reg", "admitted"])
        for h in learner.history:
            w.writerow([h.step, h.source, repr(h.loss), repr(h.d), repr(h.reg), int(h.admitted)])
    if learner.buffer is not None:
        with open(os.path.join(out, "replay_index.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "mode", "origin", "admission_step", "admission_D", "domain_id", "frame"])
            for s, m in sorted(zip(learner.buffer.items, learner.buffer.meta), key=lambda p: p[1].sample_id):
                w.writerow([m.sample_id, s.mode, m.origin, m.step, repr(m.d), s.key[0], s.key[1]])
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(dump_config(cfg))
    _write_json(
        os.path.join(out, "run_manifest.json"),
        {
            "phase": "online",
            "mode": cfg.mode,
            "method": cfg.method,
            "seed": cfg.seed,
            "steps": learner.step,
            "online_domains": bench.online.domains(),
            "pretrain_domains": bench.pretrain.domains(),
            "effective_gamma": cfg.effective_gamma,
            "replay": cfg.use_replay,
            "config": cfg.to_dict(),
            "deviations": cfg.deviations(),
        },
    )


# --------------------------------------------------------------------------
# eval and report


def cmd_eval(cfg: RunConfig, checkpoint: str, out_csv: Optional[str] = None) -> ReportRow:
    """Evaluate a checkpoint as if the whole online plan had been trained."""
    nets, _ = _load_nets(cfg, checkpoint)
    bench = benchmark_for(cfg)
    evaluate = _Evaluator(cfg, bench)
    online = bench.online.domains()
    trained_online = os.path.basename(checkpoint) == FINAL_CKPT
    history = bench.pretrain.domains() + (online if trained_online else [])
    row = evaluate(nets, 0, history, online[-1] if trained_online else None)
    if out_csv:
        write_report_csv(out_csv, ProtocolReport([row]))
        write_domain_csv(os.path.splitext(out_csv)[0] + "_domains.csv", ProtocolReport([row]), evaluate.dist)
    return row


def find_runs(root: str) -> List[dict]:
    runs = []
    for name in sorted(os.listdir(root)):
        path = os.path.join(root, name)
        man = os.path.join(path, "run_manifest.json")
        if os.path.isfile(man):
            with open(man) as fh:
                m = json.load(fh)
            m["path"] = path
            runs.append(m)
    return runs


def format_cell(values: Sequence[float]) -> str:
    mean = math.fsum(values) / len(values)
    if len(values) == 1:
        return f"{mean:.4f}"
    sd = float(np.std(values, ddof=1))
    return f"{mean:.4f} ± {sd:.4f}"


def summarize(runs: Sequence[dict], metric_names: Sequence[str] = ("rmse", "abs_rel")) -> List[dict]:
    """Final-row protocol table, one entry per (mode, method), FT/Reg./Rep./Prop. order."""
    groups: Dict[Tuple[str, str], List[ProtocolReport]] = {}
    for r in runs:
        groups.setdefault((r["mode"], r["method"]), []).append(read_report_csv(os.path.join(r["path"], "report.csv")))
    table = []
    for mode in sorted({k[0] for k in groups}):
        for method in METHODS:
            reps = groups.get((mode, method))
            if not reps:
                continue
            entry = {"mode": mode, "method": METHOD_LABELS[method], "seeds": len(reps), "values": {}}
            for cat in CATEGORIES:
                for m in metric_names:
                    vals = [getattr(rep.final.categories[cat], m) for rep in reps if rep.final.categories[cat] is not None]
                    if vals:
                        entry["values"][f"{cat}_{m}"] = vals
            table.append(entry)
    return table


def cmd_report(root: str, metric_names: Sequence[str] = ("rmse", "abs_rel")) -> List[str]:
    runs = find_runs(root)
    if not runs:
        raise FileNotFoundError(f"no completed runs under {root}")
    table = summarize(runs, metric_names)
    cols = [f"{c}_{m}" for c in CATEGORIES for m in metric_names]
    written = []
    summary = os.path.join(root, "summary.csv")
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "method", "seeds"] + cols)
        for e in table:
            w.writerow([e["mode"], e["method"], e["seeds"]] + [format_cell(e["values"][c]) if c in e["values"] else "" for c in cols])
    written.append(summary)
    values = os.path.join(root, "summary_values.csv")
    with open(values, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "method", "column", "seeds", "mean", "sd"])
        for e in table:
            for c in cols:
                if c in e["values"]:
                    v = e["values"][c]
                    sd = repr(float(np.std(v, ddof=1))) if len(v) > 1 else ""
                    w.writerow([e["mode"], e["method"], c, len(v), repr(math.fsum(v) / len(v)), sd])
    written.append(values)
    # normalised curves against the same-seed fine-tune run
    base = {(r["mode"], r["seed"]): r for r in runs if r["method"] == "fine_tune"}
    curves_path = os.path.join(root, "curves.csv")
    rows = []
    for r in runs:
        b = base.get((r["mode"], r["seed"]))
        if b is None:
            log.warning("no fine-tune baseline for %s seed %s; curves omitted", r["mode"], r["seed"])
            continue
        rep = read_report_csv(os.path.join(r["path"], "report.csv"))
        brep = read_report_csv(os.path.join(b["path"], "report.csv"))
        for c in normalize_curves(rep, brep):
            rows.append([r["mode"], METHOD_LABELS[r["method"]], r["seed"], c["step"], c["domain"],
                         "" if c["current_dist"] is None else repr(c["current_dist"]),
                         "" if c["cross_dist"] is None else repr(c["cross_dist"])])
    if rows:
        with open(curves_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "method", "seed", "step", "domain", "current_dist_rmse_norm", "cross_dist_rmse_norm"])
            w.writerows(rows)
        written.append(curves_path)
    return written
