"""Continual-training orchestration.

Per task: optimize the combined objective with batch size 1 for both the
current sample and the memory sample, cosine-annealed Adam restarted each
task. At each task boundary: update the replay buffer, freeze a copy of the
model as the old model, retrain the principal projector on old-model features
of the buffer, evaluate on every seen test set, and checkpoint everything
needed to resume.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .backbone import RestorationModel, build_model, clone_model, restore_image
from .config import RunConfig
from .errors import InvalidArgumentError, NumericError
from .imaging import Dataset, Image, SamplePair, load_dataset
from .losses import (
    knowledge_replay_loss,
    principal_kd_loss,
    single_weather_loss,
    total_loss,
)
from .metrics import MetricRow, aggregate, psnr, ssim
from .perceptual import PerceptualPyramid
from .projector import ProjectorConfig, train_autoencoder
from .replay import ReplayBuffer


@dataclass
class TrainerState:
    model: RestorationModel
    pyramid: PerceptualPyramid
    buffer: ReplayBuffer
    old_model: RestorationModel | None = None
    projector: object = None
    task_index: int = 0
    step_counter: int = 0


@dataclass
class TaskReport:
    rows: list = field(default_factory=list)
    averages: list = field(default_factory=list)
    forgetting: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_clock_sec: float = 0.0

    def to_dict(self, include_wall_clock: bool = False) -> dict:
        d = {
            "rows": self.rows,
            "averages": self.averages,
            "forgetting": self.forgetting,
            "config": self.config,
        }
        if include_wall_clock:
            d["wall_clock_sec"] = self.wall_clock_sec
        return d

    def psnr_at(self, trained_through: int, eval_task: int) -> float:
        for r in self.rows:
            if r["trained_through_task"] == trained_through and r["eval_task"] == eval_task:
                return r["psnr_db"]
        raise KeyError((trained_through, eval_task))


def cosine_lr(lr0: float, step: int, total_steps: int) -> float:
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total_steps))


def center_crop(img: Image, size: int) -> Image:
    if img.height == size and img.width == size:
        return img
    y = (img.height - size) // 2
    x = (img.width - size) // 2
    return Image(img.pixels[y : y + size, x : x + size])


def _random_patch(pair: SamplePair, size: int, rng: np.random.Generator) -> SamplePair:
    h, w = pair.degraded.height, pair.degraded.width
    if h == size and w == size:
        return pair
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return SamplePair(
        Image(pair.degraded.pixels[y : y + size, x : x + size]),
        Image(pair.clean.pixels[y : y + size, x : x + size]),
        pair.task_id,
    )


def evaluate(model: RestorationModel, test_sets) -> list:
    """test_sets: sequence of (name, Dataset) -> MetricRow per set."""
    rows = []
    for name, ds in test_sets:
        if len(ds) == 0:
            raise InvalidArgumentError(f"empty test set {name!r}")
        per = []
        for p in ds.pairs:
            out = restore_image(model, p.degraded)
            per.append((psnr(out, p.clean), ssim(out, p.clean)))
        rows.append(MetricRow(
            psnr_db=float(np.mean([v[0] for v in per])),
            ssim=float(np.mean([v[1] for v in per])),
            dataset_id=name,
            version_tag=model.version_tag,
        ))
    return rows


def train_task(state: TrainerState, task: Dataset, cfg: RunConfig,
               task_id: int, log_rows: list) -> TrainerState:
    if len(task) == 0:
        raise InvalidArgumentError("empty task dataset")
    model = state.model
    w, ctc = cfg.loss, cfg.contrastive
    opt = torch.optim.Adam(model.parameters(), lr=cfg.optimizer.lr0,
                           betas=(cfg.optimizer.decay, 0.999))
    rng_data = np.random.default_rng((cfg.seeds.data, task_id))
    rng_replay = np.random.default_rng((cfg.seeds.data, task_id, 7))
    replay_active = task_id >= 2 and len(state.buffer) > 0
    use_kd = replay_active and cfg.replay_mode == "kd" and (w.alpha > 0 or w.lam > 0)
    use_er = replay_active and cfg.replay_mode == "er"
    use_pkd = use_kd and w.lam > 0 and state.projector is not None

    for step in range(cfg.steps_per_task):
        if cfg.optimizer.schedule == "cosine":
            lr = cosine_lr(cfg.optimizer.lr0, step, cfg.steps_per_task)
        else:
            lr = cfg.optimizer.lr0
        for g in opt.param_groups:
            g["lr"] = lr

        pair = _random_patch(task[int(rng_data.integers(len(task)))],
                             cfg.patch_size, rng_data)
        l_sw = single_weather_loss(model, pair, state.pyramid, w, ctc)
        l_kd = torch.zeros(())
        l_pkd = torch.zeros(())
        if use_kd:
            mem = state.buffer.sample(1, rng_replay)[0]
            mem_img = mem[0]
            l_kd = knowledge_replay_loss(model, state.old_model, mem_img,
                                         state.pyramid, w, ctc)
            if use_pkd:
                l_pkd = principal_kd_loss(model, state.old_model,
                                          state.projector, mem_img)
            loss = total_loss(l_sw, l_kd, l_pkd, w)
        elif use_er:
            mem_deg, mem_clean, mem_tid = state.buffer.sample(1, rng_replay)[0]
            mem_pair = SamplePair(mem_deg, mem_clean, mem_tid)
            l_kd = single_weather_loss(model, mem_pair, state.pyramid, w, ctc)
            loss = l_sw + l_kd  # memory pair weighted equally with the new pair
        else:
            loss = l_sw

        total = float(loss.detach())
        parts = tuple(
            float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
            for v in (l_sw, l_kd, l_pkd)
        )
        if not math.isfinite(total):
            raise NumericError(
                f"non-finite loss at task {task_id} step {step}: "
                f"l_sw={parts[0]} l_kd={parts[1]} l_pkd={parts[2]}"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        log_rows.append((task_id, step, lr, *parts, total))
    state.step_counter += cfg.steps_per_task
    state.task_index = task_id
    model.version_tag = task_id
    return state


def between_tasks(state: TrainerState, cfg: RunConfig, finished_task: Dataset,
                  task_id: int, train_projector: bool) -> TrainerState:
    patch_pairs = tuple(
        SamplePair(center_crop(p.degraded, cfg.patch_size),
                   center_crop(p.clean, cfg.patch_size), p.task_id)
        for p in finished_task.pairs
    )
    patch_ds = Dataset(patch_pairs, finished_task.task_kind, finished_task.split)
    state.buffer.update_after_task(patch_ds, task_id)

    old = clone_model(state.model)
    for p in old.parameters():
        p.requires_grad_(False)
    state.old_model = old

    if train_projector and len(state.buffer) > 0:
        dtype = next(state.model.parameters()).dtype
        with torch.no_grad():
            feats = [
                old.features(_img_tensor(deg, dtype))
                for deg, *_ in state.buffer.entries
            ]
        pc = ProjectorConfig(in_channels=cfg.backbone.base_channels,
                             out_channels=cfg.projector.out_channels)
        state.projector = train_autoencoder(
            feats, pc, epochs=cfg.projector.epochs, lr=cfg.projector.lr,
            batch_size=cfg.projector.batch_size,
            seed=cfg.seeds.projector + task_id, dtype=dtype,
        )
    return state


def _img_tensor(pixels: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(pixels.transpose(2, 0, 1))).to(dtype).unsqueeze(0)


def _load_tasks(cfg: RunConfig):
    train_sets, test_sets = [], []
    for i, spec in enumerate(cfg.tasks, 1):
        train_sets.append(load_dataset(spec.train_dir, task_id=i))
        test_sets.append((spec.kind, load_dataset(spec.test_dir, task_id=i)))
    if cfg.joint:
        merged = tuple(
            SamplePair(p.degraded, p.clean, 1)
            for ds in train_sets for p in ds.pairs
        )
        train_sets = [Dataset(merged, "custom", "train")]
    return train_sets, test_sets


def _boundary_eval(state: TrainerState, test_sets, t: int, report: TaskReport,
                   num_eval_tasks: int) -> None:
    seen = test_sets[:num_eval_tasks]
    rows = evaluate(state.model, seen)
    for k, row in enumerate(rows, 1):
        report.rows.append({
            "trained_through_task": t,
            "eval_task": k,
            "dataset": row.dataset_id,
            "psnr_db": row.psnr_db,
            "ssim": row.ssim,
        })
    avg = aggregate(rows)
    report.averages.append({"trained_through_task": t, **avg})
    for k in range(1, len(rows)):
        report.forgetting.append({
            "trained_through_task": t,
            "eval_task": k,
            "psnr_delta_db": report.psnr_at(t, k) - report.psnr_at(k, k),
        })


def _save_boundary(state: TrainerState, out: Path, t: int) -> None:
    ckdir = out / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    ckpt.save_backbone(state.model, ckdir / f"task_{t}.backbone.ckpt")
    if state.projector is not None:
        ckpt.save_projector(state.projector, ckdir / f"task_{t}.projector.ckpt", t)
    state.buffer.snapshot(ckdir / f"task_{t}.buffer")
    (out / "state.json").write_text(json.dumps({"completed_tasks": t}) + "\n")


def _resume_boundary(cfg: RunConfig, out: Path, state: TrainerState) -> int:
    state_path = out / "state.json"
    if not state_path.exists():
        return 0
    t = json.loads(state_path.read_text())["completed_tasks"]
    ckdir = out / "checkpoints"
    state.model = ckpt.load_backbone(ckdir / f"task_{t}.backbone.ckpt")
    state.buffer = ReplayBuffer.restore(ckdir / f"task_{t}.buffer")
    proj_path = ckdir / f"task_{t}.projector.ckpt"
    if proj_path.exists():
        state.projector = ckpt.load_projector(proj_path)
    old = clone_model(state.model)
    for p in old.parameters():
        p.requires_grad_(False)
    state.old_model = old
    state.task_index = t
    return t


def write_runlog(path: Path, rows, append: bool = False) -> None:
    mode = "a" if append and path.exists() else "w"
    with open(path, mode) as f:
        if mode == "w":
            f.write("task,step,lr,l_sw,l_kd,l_pkd,total\n")
        for task_id, step, lr, l_sw, l_kd, l_pkd, total in rows:
            f.write(f"{task_id},{step},{lr:.10g},{l_sw:.10g},{l_kd:.10g},"
                    f"{l_pkd:.10g},{total:.10g}\n")


def write_report(report: TaskReport, out: Path) -> None:
    (out / "report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    lines = ["trained_through_task,eval_task,dataset,psnr_db,ssim"]
    for r in report.rows:
        lines.append(f"{r['trained_through_task']},{r['eval_task']},"
                     f"{r['dataset']},{r['psnr_db']:.6f},{r['ssim']:.6f}")
    for a in report.averages:
        lines.append(f"{a['trained_through_task']},average,all,"
                     f"{a['psnr_db']:.6f},{a['ssim']:.6f}")
    (out / "report.csv").write_text("\n".join(lines) + "\n")
    (out / "runmeta.json").write_text(
        json.dumps({"wall_clock_sec": report.wall_clock_sec}) + "\n")


def run_sequence(cfg: RunConfig, out_dir: Path | str, resume: bool = False) -> TaskReport:
    torch.set_num_threads(1)  # bit-exact reruns regardless of host core count
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    train_sets, test_sets = _load_tasks(cfg)

    state = TrainerState(
        model=build_model(cfg.backbone, cfg.seeds.init),
        pyramid=PerceptualPyramid(cfg.seeds.perceptual),
        buffer=ReplayBuffer(cfg.buffer_capacity, cfg.seeds.buffer,
                            store_clean=(cfg.replay_mode == "er")),
    )
    report = TaskReport(config=cfg.to_dict())
    first_task = 1
    if resume:
        done = _resume_boundary(cfg, out, state)
        if done:
            first_task = done + 1
            partial = out / "report_partial.json"
            if partial.exists():
                saved = json.loads(partial.read_text())
                report.rows = saved["rows"]
                report.averages = saved["averages"]
                report.forgetting = saved["forgetting"]

    num_stages = len(train_sets)
    needs_pkd = cfg.replay_mode == "kd" and cfg.loss.lam > 0
    try:
        for t in range(first_task, num_stages + 1):
            log_rows: list = []
            train_task(state, train_sets[t - 1], cfg, t, log_rows)
            write_runlog(out / "runlog.csv", log_rows, append=(t > 1))
            n_eval = len(test_sets) if cfg.joint else t
            _boundary_eval(state, test_sets, t, report, n_eval)
            if t < num_stages:
                between_tasks(state, cfg, train_sets[t - 1], t, needs_pkd)
            else:
                # final boundary still records the buffer/old model for reuse
                between_tasks(state, cfg, train_sets[t - 1], t, False)
            _save_boundary(state, out, t)
            (out / "report_partial.json").write_text(
                json.dumps(report.to_dict(), sort_keys=True) + "\n")
    except Exception:
        report.wall_clock_sec = time.monotonic() - started
        write_report(report, out)
        raise
    report.wall_clock_sec = time.monotonic() - started
    write_report(report, out)
    return report
