"""Training engine: the baseline adversarial phase and the self-collaboration
outer loop that promotes the trained denoiser into the NE module.

Each training step alternates three players:

1. discriminator on the detached synthetics,
2. generator (plus the learnable NE denoiser before the first replacement)
   on the adversarial + background loss,
3. denoiser on the pseudo-pair loss, or on the distillation loss once a
   frozen teacher sits in the NE module.

The best validation snapshot of each phase is kept automatically.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .branches import FULL, BranchStructure, ModelBundle, forward_branches
from .config import RunConfig
from .data import (BatchStream, CorpusSpec, NoiseModelParams, UnpairedCorpus, ValidationPair,
                   build_corpus, validation_pairs)
from .imaging import BlurBank, psnr, ssim_per_image
from .losses import LossWeights, dn_loss, dn_sc_loss, total_objective
from .networks import NetworkHandle, load_handle, make_denoiser, make_discriminator, make_generator

log = logging.getLogger(__name__)

ABLATION_VARIANTS = {
    # name: (structure, use_bgm)
    "V1": (BranchStructure(use_ne=False, self_synthesis=False, parallel=False), False),
    "V2": (BranchStructure(use_ne=False, self_synthesis=False, parallel=False), True),
    "V3": (BranchStructure(use_ne=True, self_synthesis=False, parallel=False), True),
    "V4": (BranchStructure(use_ne=True, self_synthesis=True, parallel=False), True),
    "V5": (FULL, True),
}
# SIDD Benchmark PSNR reported for the full-scale ablation; context only.
ABLATION_REFERENCE_DB = {"V1": 33.14, "V2": 33.26, "V3": 33.45, "V4": 34.27, "V5": 34.67}


class DivergenceError(RuntimeError):
    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


@dataclass
class MetricsRecord:
    k: int
    step: int
    psnr_val: float
    ssim_val: float
    losses: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    status: str = "ok"

    def log_dict(self) -> dict:
        """The deterministic part of the record (everything except wall clock)."""
        d = asdict(self)
        d.pop("wall_clock")
        return d


def _dtype(name: str) -> torch.dtype:
    return {"float32": torch.float32, "float64": torch.float64}[name]


def loss_weights(cfg: RunConfig) -> LossWeights:
    t = cfg.train
    bank = BlurBank(tuple((lv.size, lv.weight) for lv in t.blur_levels), t.blur_std_ratio)
    return LossWeights(lambda_bgm=t.lambda_bgm, lambda_ssim=t.lambda_ssim, bank=bank)


def build_denoiser(cfg: RunConfig, seed: int, variant: str | None = None) -> NetworkHandle:
    n = cfg.networks
    return make_denoiser(
        variant or n.denoiser,
        {"channels": cfg.corpus.channels, "width": n.denoiser_width, "depth": n.denoiser_depth},
        seed=seed,
        dtype=_dtype(cfg.train.dtype),
    )


def build_models(cfg: RunConfig, *, noise_skip: bool | None = None) -> ModelBundle:
    n, c, dtype, s = cfg.networks, cfg.corpus.channels, _dtype(cfg.train.dtype), cfg.seed
    G = make_generator({"channels": c, "width": n.generator_width, "blocks": n.generator_blocks,
                        "noise_skip": n.noise_skip if noise_skip is None else noise_skip},
                       seed=s * 10 + 1, dtype=dtype)
    D = make_discriminator({"channels": c, "width": n.discriminator_width, "layers": n.discriminator_layers},
                           seed=s * 10 + 2, dtype=dtype)
    DN = build_denoiser(cfg, seed=s * 10 + 3)
    DN0 = make_denoiser("linear_conv", {"channels": c, "init": n.ne_init}, seed=s * 10 + 4, dtype=dtype)
    return ModelBundle(G=G, D=D, DN=DN, DN0=DN0, k=0)


# -- evaluation --------------------------------------------------------------

def evaluate(dn, pairs: list[ValidationPair], dtype=torch.float32, k: int = 0, step: int = 0) -> MetricsRecord:
    """Mean PSNR / SSIM of ``dn`` outputs (clamped to [0, 1]) on aligned pairs."""
    module = getattr(dn, "module", None)
    was_training = module.training if module is not None else False
    if module is not None:
        module.eval()
    psnrs, ssims = [], []
    try:
        with torch.no_grad():
            for pair in pairs:
                noisy = torch.as_tensor(pair.noisy, dtype=dtype)[None]
                clean = torch.as_tensor(pair.clean, dtype=dtype)[None]
                out = torch.clamp(dn(noisy), 0.0, 1.0)
                psnrs.append(psnr(out, clean))
                ssims.append(float(ssim_per_image(out.double(), clean.double())[0]))
    finally:
        if module is not None:
            module.train(was_training)
    return MetricsRecord(k=k, step=step, psnr_val=float(np.mean(psnrs)), ssim_val=float(np.mean(ssims)))


# -- one phase ---------------------------------------------------------------

@dataclass
class PhaseResult:
    best_state: dict | None
    best_record: MetricsRecord | None
    records: list[MetricsRecord]


class PhaseTrainer:
    """Alternating D / G / DN optimization for one phase (one value of k)."""

    def __init__(self, models: ModelBundle, stream: BatchStream, val_pairs, cfg: RunConfig, *,
                 structure: BranchStructure = FULL, use_bgm: bool = True, on_record=None):
        models.check()
        self.models = models
        self.stream = stream
        self.val_pairs = val_pairs
        self.cfg = cfg
        self.structure = structure
        self.use_bgm = use_bgm
        self.weights = loss_weights(cfg)
        self.dtype = _dtype(cfg.train.dtype)
        self.on_record = on_record
        self.step_index = 0
        self.records: list[MetricsRecord] = []
        self.best_state = None
        self.best_record = None
        self._collapse_run = 0
        self._t0 = time.perf_counter()
        self._make_optimizers()

    @property
    def k(self) -> int:
        return self.models.k

    def _adam(self, params):
        t = self.cfg.train
        return torch.optim.Adam(params, lr=t.lr, betas=(t.beta1, t.beta2))

    def _make_optimizers(self):
        m = self.models
        g_params = m.G.trainable_parameters()
        if not m.DN0.frozen and self.structure.use_ne:
            g_params += m.DN0.trainable_parameters()
        self.opt_d = self._adam(m.D.trainable_parameters())
        self.opt_g = self._adam(g_params)
        self.opt_dn = self._adam(m.DN.trainable_parameters())

    # the three player updates, exposed separately for isolation checks
    def forward(self, batch) -> "object":
        for h in self.models.handles().values():
            h.train()
        return forward_branches(batch["x"], batch["y"], self.models, self.structure)

    def d_step(self, bundle) -> dict:
        self.opt_d.zero_grad(set_to_none=True)
        parts = total_objective("d", bundle, self.models.D, self.weights)
        parts["total"].backward()
        self.opt_d.step()
        return parts

    def g_step(self, bundle) -> dict:
        self.opt_g.zero_grad(set_to_none=True)
        parts = total_objective("g", bundle, self.models.D, self.weights, use_bgm=self.use_bgm,
                                bgm_mode=self.cfg.train.bgm_mode)
        parts["total"].backward()
        self.opt_g.step()
        return parts

    def dn_step(self, bundle) -> dict:
        m = self.models
        self.opt_dn.zero_grad(set_to_none=True)
        x_u = bundle.x_u_syn.detach()
        x_rec = m.DN(x_u)
        if m.DN0.frozen:
            loss = dn_sc_loss(x_rec, bundle.x, m.DN(bundle.y), x_u, bundle.y, m.DN0, self.weights)
        else:
            loss = dn_loss(x_rec, bundle.x, self.weights)
        loss.backward()
        self.opt_dn.step()
        return {"dn": loss}

    def train_step(self, batch) -> dict[str, float]:
        bundle = self.forward(batch)
        parts = {}
        parts.update(self.d_step(bundle))
        parts.update(self.g_step(bundle))
        parts.update(self.dn_step(bundle))
        parts.pop("total", None)
        losses = {name: float(v.detach()) for name, v in sorted(parts.items())}
        self.step_index += 1
        self._guard(losses)
        return losses

    def _guard(self, losses):
        bad = [n for n, v in losses.items() if not math.isfinite(v)]
        if bad:
            raise DivergenceError(f"non-finite loss {bad} at k={self.k} step={self.step_index}",
                                  MetricsRecord(self.k, self.step_index, float("nan"), float("nan"),
                                                losses, status="diverged"))
        n_fakes = max(1, len(FAKES_FOR[self.structure]))
        if losses["adv_d"] / n_fakes < self.cfg.train.collapse_threshold:
            self._collapse_run += 1
        else:
            self._collapse_run = 0
        if self._collapse_run >= self.cfg.train.collapse_steps:
            raise DivergenceError(f"discriminator loss collapsed at k={self.k} step={self.step_index}",
                                  MetricsRecord(self.k, self.step_index, float("nan"), float("nan"),
                                                losses, status="collapsed"))

    def _evaluate(self, losses) -> MetricsRecord:
        rec = evaluate(self.models.DN, self.val_pairs, self.dtype, k=self.k, step=self.step_index)
        rec.losses = losses
        rec.wall_clock = time.perf_counter() - self._t0
        self.records.append(rec)
        if self.best_record is None or rec.psnr_val > self.best_record.psnr_val:
            self.best_record = rec
            self.best_state = self.models.DN.state()
        if self.on_record is not None:
            self.on_record(rec)
        return rec

    def run(self, steps: int, checkpoint_fn=None) -> PhaseResult:
        """Train until ``step_index == steps``, evaluating every ``eval_interval``
        steps and at the final step. ``checkpoint_fn(trainer)`` is called every
        ``checkpoint_interval`` steps (0 means at every evaluation)."""
        t = self.cfg.train
        ckpt_every = t.checkpoint_interval or t.eval_interval
        while self.step_index < steps:
            losses = self.train_step(self.stream.batch_at(self.step_index))
            if self.step_index % t.eval_interval == 0 or self.step_index == steps:
                self._evaluate(losses)
            if checkpoint_fn is not None and self.step_index % ckpt_every == 0 and self.step_index < steps:
                checkpoint_fn(self)
        return PhaseResult(self.best_state, self.best_record, list(self.records))

    def inherit_optimizers(self, previous: "PhaseTrainer") -> None:
        """Carry Adam moments over from the previous phase.

        The generator optimizer of the baseline phase also holds the NE
        denoiser; only the generator's own entries are kept.
        """
        self.opt_d.load_state_dict(previous.opt_d.state_dict())
        self.opt_dn.load_state_dict(previous.opt_dn.state_dict())
        n = len(self.opt_g.param_groups[0]["params"])
        g = previous.opt_g.state_dict()
        g["state"] = {i: v for i, v in g["state"].items() if i < n}
        g["param_groups"][0]["params"] = list(range(n))
        self.opt_g.load_state_dict(g)

    # checkpointing
    def state_dict(self) -> dict:
        return {
            "k": self.k,
            "step_index": self.step_index,
            "collapse_run": self._collapse_run,
            "opt_d": self.opt_d.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_dn": self.opt_dn.state_dict(),
            "best_state": self.best_state,
            "best_record": None if self.best_record is None else asdict(self.best_record),
            "records": [asdict(r) for r in self.records],
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_index = state["step_index"]
        self._collapse_run = state["collapse_run"]
        self.opt_d.load_state_dict(state["opt_d"])
        self.opt_g.load_state_dict(state["opt_g"])
        self.opt_dn.load_state_dict(state["opt_dn"])
        self.best_state = state["best_state"]
        self.best_record = None if state["best_record"] is None else MetricsRecord(**state["best_record"])
        self.records = [MetricsRecord(**r) for r in state["records"]]


class _FakesFor(dict):
    def __missing__(self, structure):
        names = ["x_u_syn"]
        if structure.self_synthesis:
            names.append("x_s_syn")
        if structure.parallel:
            names += ["y_s_syn", "y_u_syn"]
        self[structure] = names
        return names


FAKES_FOR = _FakesFor()


def train_phase(models: ModelBundle, stream: BatchStream, val_pairs, cfg: RunConfig, steps: int,
                **kw) -> tuple[ModelBundle, PhaseResult]:
    """Run one phase and return ``(models, result)``; models are trained in place."""
    trainer = PhaseTrainer(models, stream, val_pairs, cfg, **kw)
    return models, trainer.run(steps)


def sc_replace(models: ModelBundle) -> ModelBundle:
    """Promote the current denoiser into the NE module as a frozen teacher."""
    models.DN0 = models.DN.snapshot(frozen=True)
    models.k += 1
    return models


# -- data / run context ------------------------------------------------------

@dataclass
class RunData:
    corpus: UnpairedCorpus
    val_pairs: list[ValidationPair]

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "RunData":
        c = cfg.corpus
        spec = CorpusSpec(kind=c.kind, n_sources=c.n_sources, n_validation=c.n_validation,
                          size=c.size, channels=c.channels, path=c.path)
        params = NoiseModelParams(cfg.noise.sigma_read, cfg.noise.sigma_shot, cfg.noise.seed)
        corpus = build_corpus(spec, params, cfg.seed)
        val = validation_pairs(spec, params, cfg.seed, exclude_ids=corpus.clean_ids + corpus.noisy_ids)
        return cls(corpus, val)

    def noisy_baseline(self) -> MetricsRecord:
        """Metrics of the identity map, i.e. of the noisy inputs themselves."""
        return evaluate(lambda t: t, self.val_pairs)

    def stream(self, cfg: RunConfig, k: int) -> BatchStream:
        s = cfg.schedule
        stage2 = k >= s.stage2_start
        batch = s.stage2_batch if stage2 else cfg.train.batch
        patch = s.stage2_patch if stage2 else cfg.train.patch
        return BatchStream(self.corpus, batch, patch, seed=cfg.seed * 1000 + k,
                           dtype=_dtype(cfg.train.dtype), augment=cfg.train.augment)


# -- run directory -----------------------------------------------------------

class RunDir:
    """Files of one run: effective config, corpus manifest, metrics log,
    per-iteration history, checkpoints."""

    def __init__(self, root):
        self.root = Path(root)

    @property
    def metrics(self):
        return self.root / "metrics.jsonl"

    @property
    def timing(self):
        return self.root / "timing.jsonl"

    @property
    def history(self):
        return self.root / "history.jsonl"

    @property
    def complete(self):
        return self.root / "complete.json"

    @property
    def checkpoints(self):
        return self.root / "checkpoints"

    def prepare(self):
        self.root.mkdir(parents=True, exist_ok=True)

    def rewrite_logs(self, records: list[MetricsRecord], history: list[dict]):
        self.metrics.write_text("".join(json.dumps(r.log_dict(), sort_keys=True) + "\n" for r in records))
        self.timing.write_text("".join(json.dumps({"k": r.k, "step": r.step, "wall_clock": r.wall_clock}) + "\n"
                                       for r in records))
        self.history.write_text("".join(json.dumps(h, sort_keys=True) + "\n" for h in history))

    def append_record(self, rec: MetricsRecord):
        with self.metrics.open("a") as f:
            f.write(json.dumps(rec.log_dict(), sort_keys=True) + "\n")
        with self.timing.open("a") as f:
            f.write(json.dumps({"k": rec.k, "step": rec.step, "wall_clock": rec.wall_clock}) + "\n")

    def append_history(self, summary: dict):
        with self.history.open("a") as f:
            f.write(json.dumps(summary, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def save_models(models: ModelBundle, directory, manifest: dict) -> None:
    directory = Path(directory)
    for name, h in models.handles().items():
        h.save(directory, name)
    (directory / "manifest.json").write_text(json.dumps({**manifest, "k": models.k}, indent=2, sort_keys=True))


def load_models(directory) -> ModelBundle:
    directory = Path(directory)
    meta = json.loads((directory / "manifest.json").read_text())
    h = {name: load_handle(directory / f"{name}.json") for name in ("G", "D", "DN", "DN0")}
    return ModelBundle(G=h["G"], D=h["D"], DN=h["DN"], DN0=h["DN0"], k=meta["k"])


# -- the outer loop ----------------------------------------------------------

@dataclass
class SCResult:
    history: list[dict]
    records: list[MetricsRecord]
    models: ModelBundle
    status: str = "ok"


def _summary(k, result: PhaseResult, prev_best, stage) -> dict:
    rec = result.best_record
    best = None if rec is None else rec.psnr_val
    delta = None if (best is None or prev_best is None) else best - prev_best
    return {
        "k": k,
        "stage": stage,
        "best_step": None if rec is None else rec.step,
        "psnr_val": best,
        "ssim_val": None if rec is None else rec.ssim_val,
        "delta_psnr": delta,
        "status": "ok",
    }


def run_sc(cfg: RunConfig, out_dir=None, *, resume: bool = False, data: RunData | None = None,
           models: ModelBundle | None = None, dry_run_steps: int | None = None,
           structure: BranchStructure = FULL, use_bgm: bool = True) -> SCResult:
    """Baseline phase followed by replace/boost iterations.

    Stops after ``schedule.max_iterations`` phases in total (the baseline
    counts as the first) or as soon as an iteration improves the best
    validation PSNR by less than ``schedule.stop_delta_db``. With ``out_dir``
    every evaluation is logged and a checkpoint is written at every
    evaluation and at the end of every iteration; ``resume=True`` continues
    from the newest checkpoint in ``out_dir``.
    """
    s = cfg.schedule
    data = data or RunData.from_config(cfg)
    run = RunDir(out_dir) if out_dir is not None else None
    history: list[dict] = []
    all_records: list[MetricsRecord] = []
    resume_state = None

    if run is not None and resume and run.complete.exists():
        history = read_jsonl(run.history)
        records = [MetricsRecord(**r) for r in read_jsonl(run.metrics)]
        last = run.checkpoints / f"iter_{history[-1]['k']}"
        log.info("run in %s is already complete", run.root)
        status = history[-1]["status"]
        return SCResult(history, records, load_models(last if last.exists() else run.checkpoints / "failed"),
                        status=status)
    if run is not None and resume and (run.checkpoints / "latest" / "manifest.json").exists():
        latest = run.checkpoints / "latest"
        models = load_models(latest)
        resume_state = torch.load(latest / "trainer.pt", weights_only=False)
        history = resume_state["history"]
        all_records = [MetricsRecord(**r) for r in resume_state["all_records"]]
        run.rewrite_logs(all_records, history)
        log.info("resuming at k=%d step=%d", models.k, resume_state["trainer"]["step_index"])
    elif run is not None:
        run.prepare()
        run.complete.unlink(missing_ok=True)
        run.rewrite_logs([], [])
        from .config import write_effective
        write_effective(cfg, run.root)
        data.corpus.write_manifest(run.root / "corpus.json")

    if models is None:
        models = build_models(cfg, noise_skip=None if structure.use_ne else False)
    phase_steps = s.baseline_steps

    def on_record(rec):
        all_records.append(rec)
        if run is not None:
            run.append_record(rec)

    def checkpoint(trainer: PhaseTrainer, directory=None):
        if run is None:
            return
        directory = directory or run.checkpoints / "latest"
        save_models(trainer.models, directory, {"step": trainer.step_index, "seed": cfg.seed,
                                                "config_hash": cfg.hash()})
        torch.save({"trainer": trainer.state_dict(), "history": history,
                    "all_records": [asdict(r) for r in all_records]}, directory / "trainer.pt")

    def make_trainer(previous):
        trainer = PhaseTrainer(models, data.stream(cfg, models.k), data.val_pairs, cfg,
                               structure=structure, use_bgm=use_bgm, on_record=on_record)
        if previous is not None and not s.reset_optimizer:
            trainer.inherit_optimizers(previous)
        return trainer

    prev_trainer = None
    prev_best = None
    if history:
        prev_best = max(h["psnr_val"] for h in history if h["psnr_val"] is not None)

    while True:
        k = models.k
        steps = s.baseline_steps if k == 0 else s.steps_per_iteration
        if dry_run_steps is not None:
            steps = dry_run_steps
        stage = 2 if k >= s.stage2_start else 1
        trainer = make_trainer(prev_trainer)
        if resume_state is not None:
            trainer.load_state_dict(resume_state["trainer"])
            resume_state = None
        try:
            result = trainer.run(steps, checkpoint_fn=checkpoint)
        except DivergenceError as err:
            log.error("%s", err)
            if trainer.best_state is not None:
                models.DN.load_state(trainer.best_state)
            summary = {"k": k, "stage": stage, "best_step": None, "psnr_val": None, "ssim_val": None,
                       "delta_psnr": None, "status": err.record.status if err.record else "diverged"}
            history.append(summary)
            if run is not None:
                run.append_history(summary)
                save_models(models, run.checkpoints / "failed", {"step": trainer.step_index, "seed": cfg.seed,
                                                                  "config_hash": cfg.hash()})
            run_status = summary["status"]
            if run is not None:
                run.complete.write_text(json.dumps({"iterations": len(history), "status": run_status}))
            return SCResult(history, all_records, models, status=run_status)

        if cfg.train.restore_best and result.best_state is not None:
            models.DN.load_state(result.best_state)
        summary = _summary(k, result, prev_best, stage)
        history.append(summary)
        if run is not None:
            run.append_history(summary)
            save_models(models, run.checkpoints / f"iter_{k}",
                        {"step": trainer.step_index, "seed": cfg.seed, "config_hash": cfg.hash(),
                         "metrics": summary})

        best = summary["psnr_val"]
        if k >= 1 and summary["delta_psnr"] is not None and summary["delta_psnr"] < s.stop_delta_db:
            break
        if best is not None:
            prev_best = best if prev_best is None else max(prev_best, best)
        if k + 1 >= s.max_iterations:
            break

        sc_replace(models)
        if s.reinit_denoiser:
            models.DN = build_denoiser(cfg, seed=cfg.seed * 10 + 3 + 100 * models.k)
        if s.reinit_gan:
            fresh = build_models(cfg.with_overrides(seed=cfg.seed + 100 * models.k))
            models.G, models.D = fresh.G, fresh.D
        prev_trainer = None if (s.reinit_denoiser or s.reinit_gan) else trainer
        if run is not None:
            # iteration boundary: a resume starts the next phase from its first step
            checkpoint(make_trainer(prev_trainer))
    if run is not None:
        models.DN.save(run.root / "final", "DN")
        run.complete.write_text(json.dumps({"iterations": len(history), "status": "ok"}))
    return SCResult(history, all_records, models)


def run_ablation(variant: str, cfg: RunConfig, steps: int | None = None, data: RunData | None = None,
                 out_dir=None) -> MetricsRecord:
    """Train one structural variant of the baseline and report its best validation metrics."""
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}; expected one of {sorted(ABLATION_VARIANTS)}")
    structure, use_bgm = ABLATION_VARIANTS[variant]
    if steps is not None:
        cfg = cfg.with_overrides(schedule={"baseline_steps": steps})
    cfg = cfg.with_overrides(schedule={"max_iterations": 1})
    result = run_sc(cfg, out_dir, data=data, structure=structure, use_bgm=use_bgm)
    if result.status != "ok" or not result.records:
        return MetricsRecord(0, 0, float("nan"), float("nan"), status=result.status)
    best = max(result.records, key=lambda r: r.psnr_val)
    return best


def ablation_table(records: dict[str, MetricsRecord]) -> str:
    """Markdown table shaped like the ablation ladder, with reference values."""
    flags = {
        "U": {"V1", "V2", "V3", "V4", "V5"},
        "BGMloss": {"V2", "V3", "V4", "V5"},
        "NE module": {"V3", "V4", "V5"},
        "S": {"V4", "V5"},
        "P": {"V5"},
    }
    names = [v for v in ABLATION_VARIANTS if v in records]
    lines = ["| Methods | " + " | ".join(names) + " |", "|---" * (len(names) + 1) + "|"]
    for flag, members in flags.items():
        lines.append(f"| {flag} | " + " | ".join("x" if v in members else "" for v in names) + " |")
    lines.append("| PSNR(dB) | " + " | ".join(f"{records[v].psnr_val:.2f}" for v in names) + " |")
    lines.append("| SSIM | " + " | ".join(f"{records[v].ssim_val:.4f}" for v in names) + " |")
    lines.append("| reference PSNR(dB) | " + " | ".join(f"{ABLATION_REFERENCE_DB[v]:.2f}" for v in names) + " |")
    return "\n".join(lines) + "\n"


def run_transfer(cfg: RunConfig, variants=("linear_conv", "dncnn_lite", "unet_lite"),
                 data: RunData | None = None) -> dict[str, list[dict]]:
    """Baseline plus one replace/boost iteration for each denoiser variant."""
    data = data or RunData.from_config(cfg)
    out = {}
    for v in variants:
        vcfg = cfg.with_overrides(networks={"denoiser": v}, schedule={"max_iterations": 2})
        out[v] = run_sc(vcfg, data=data).history
    return out


def load_denoiser(path) -> NetworkHandle:
    """Accept a handle manifest, its ``.pt`` blob, or a checkpoint directory."""
    path = Path(path)
    if path.is_dir() and (path / "final" / "DN.json").exists():
        path = path / "final"
    if path.is_dir():
        path = path / "DN.json"
    if path.suffix == ".pt":
        path = path.with_suffix(".json")
    return load_handle(path)
