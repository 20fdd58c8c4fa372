"""Training and evaluation orchestration.

Pretraining runs the four-stream Siamese forward pass (two timestamps, two
augmented views each), combines the differencing, invariant-prediction, and
change-consistency objectives, and optimizes with layer-adaptive rate
scaling under a cosine schedule. Finetuning transfers the encoder into a
change-detection model trained with per-pixel binary cross-entropy. The
evaluator produces clean precision/recall/F1, the optional corruption grid
with its robustness summaries, and an optional second report on an
out-of-distribution dataset.

Everything is deterministic given (config, data, seed): data order,
augmentation draws, parameter init, and corruption noise all come from
counter-based streams.
"""

from __future__ import annotations

import csv
import hashlib
import io
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import datagen, losses, metrics, nn
from . import tensor as tk
from .augment import AugmentConfig, augment_pair
from .config import FinetuneConfig, PretrainConfig
from .rand import stream, subseed
from .tensor import Tensor

STRATEGIES = {
    "dsp": dict(use_differencing=True, use_ip=True, use_cr=True),
    "dsp_no_ip": dict(use_differencing=True, use_ip=False, use_cr=True),
    "dsp_no_tc": dict(use_differencing=True, use_ip=False, use_cr=False),
    "ssl_baseline": dict(use_differencing=False, use_ip=False, use_cr=False),
}


class PipelineError(RuntimeError):
    pass


# -- run ledger -----------------------------------------------------------------

LEDGER_COLUMNS = ("epoch", "l_ssl", "l_ip", "l_cr", "total", "alpha", "beta", "lr", "wall_time", "seed")


@dataclass
class RunLedger:
    rows: list = field(default_factory=list)

    def append(self, **kw):
        if self.rows and kw["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("ledger epochs must strictly increase")
        missing = set(LEDGER_COLUMNS) - set(kw)
        if missing:
            raise ValueError(f"ledger row missing columns {sorted(missing)}")
        self.rows.append(dict(kw))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=LEDGER_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: row[k] for k in LEDGER_COLUMNS})
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RunLedger":
        rows = []
        for raw in csv.DictReader(io.StringIO(text)):
            row = {k: raw[k] for k in LEDGER_COLUMNS}
            row["epoch"] = int(row["epoch"])
            row["seed"] = int(row["seed"])
            for k in ("l_ssl", "l_ip", "l_cr", "total", "alpha", "beta", "lr", "wall_time"):
                row[k] = float(row[k])
            rows.append(row)
        return cls(rows=rows)

    def save(self, path: Path):
        Path(path).write_text(self.to_csv())


# -- data access ------------------------------------------------------------------


class PairCache:
    """All images of a manifest split, loaded once into memory."""

    def __init__(self, manifest: datagen.DatasetManifest, split: str | None, need_masks: bool):
        if split is not None and any(e.split for e in manifest.entries):
            entries = manifest.with_split(split)
        else:
            entries = list(manifest.entries)
        if need_masks:
            entries = [e for e in entries if e.mask is not None]
        self.entries = entries
        self.names = [e.name for e in entries]
        self.t0 = []
        self.t1 = []
        self.masks = []
        for e in entries:
            p0, p1, pm = manifest.entry_paths(e)
            self.t0.append(datagen.load_image(p0))
            self.t1.append(datagen.load_image(p1))
            if need_masks:
                self.masks.append(datagen.load_mask(pm).astype(np.float32))

    def __len__(self):
        return len(self.entries)


def _batches(n: int, batch: int, order: np.ndarray, min_size: int = 2):
    for start in range(0, n, batch):
        idx = order[start : start + batch]
        if len(idx) >= min_size:
            yield idx


# -- model construction -------------------------------------------------------------


def build_encoder(cfg: PretrainConfig, seed: int) -> nn.Encoder:
    enc_cfg = nn.EncoderConfig(
        widths=tuple(cfg.encoder_widths),
        kernel=cfg.encoder_kernel,
        downsample=cfg.encoder_downsample,
    )
    return nn.Encoder(enc_cfg, rng=stream(seed, "init", "encoder"))


def build_pretrain_model(cfg: PretrainConfig, seed: int) -> nn.PretrainModel:
    encoder = build_encoder(cfg, seed)
    proj_cfg = nn.ProjectorConfig(
        in_features=encoder.out_channels,
        hidden=cfg.projector_hidden,
        out_features=cfg.projector_out,
    )
    projector = nn.Projector(proj_cfg, rng=stream(seed, "init", "projector"))
    return nn.PretrainModel(encoder, projector)


def build_change_model(cfg: PretrainConfig, head_mode: str, seed: int) -> nn.ChangeModel:
    encoder = build_encoder(cfg, seed)
    head = nn.ChangeHead(
        nn.ChangeHeadConfig(in_channels=encoder.out_channels, mode=head_mode),
        rng=stream(seed, "init", "head"),
    )
    return nn.ChangeModel(encoder, head)


def _model_meta(cfg: PretrainConfig, head_mode: str | None = None) -> dict:
    meta = {
        "encoder_widths": list(cfg.encoder_widths),
        "encoder_kernel": cfg.encoder_kernel,
        "encoder_downsample": cfg.encoder_downsample,
        "projector_hidden": cfg.projector_hidden,
        "projector_out": cfg.projector_out,
        "image_size": cfg.image_size,
    }
    if head_mode is not None:
        meta["head_mode"] = head_mode
    return meta


def _entries_from_module(module: nn.Module, role: str, prefix: str) -> list:
    out = [
        ckpt_io.Entry(f"{prefix}.{name}", role, np.array(p.data))
        for name, p in module.named_parameters().items()
    ]
    out += [
        ckpt_io.Entry(f"{prefix}.buffer.{name}", role, np.array(b))
        for name, b in module.named_buffers().items()
    ]
    return out


def _load_module(module: nn.Module, ckpt: ckpt_io.Checkpoint, role: str, prefix: str):
    params = {}
    buffers = {}
    for name, arr in ckpt.by_role(role).items():
        if not name.startswith(prefix + "."):
            continue
        rest = name[len(prefix) + 1 :]
        if rest.startswith("buffer."):
            buffers[rest[len("buffer.") :]] = arr
        else:
            params[rest] = arr
    module.load_state(params, buffers)


def transfer_encoder(ckpt: ckpt_io.Checkpoint, encoder: nn.Encoder) -> nn.Encoder:
    """Copy role=encoder entries into ``encoder``; other roles are dropped.

    Head entries in a pretraining checkpoint would be unexpected, so their
    presence is warned about (and ignored) rather than silently skipped.
    """
    if not ckpt.by_role("encoder"):
        raise PipelineError("checkpoint has no encoder entries to transfer")
    if ckpt.by_role("head"):
        warnings.warn("checkpoint contains head entries; ignored during encoder transfer")
    _load_module(encoder, ckpt, "encoder", "encoder")
    return encoder


# -- pretraining -----------------------------------------------------------------


def pretrain(
    manifest: datagen.DatasetManifest,
    cfg: PretrainConfig,
    augment_cfg: AugmentConfig,
    seed: int,
    out_dir: Path | None = None,
    strategy_name: str = "dsp",
) -> tuple[ckpt_io.Checkpoint, RunLedger]:
    """Self-supervised pretraining over the unlabeled train pairs.

    Per step: augment each sampled pair into four views, run all views
    through the shared encoder and projector, form the absolute-difference
    embeddings, and descend the weighted sum of the correlation, invariance,
    and consistency objectives. Ablation flags reroute the correlation loss
    to the raw cross-time embeddings (no differencing) or zero the weight of
    either consistency term.
    """
    data = PairCache(manifest, split="train", need_masks=False)
    if len(data) < cfg.batch_size:
        raise PipelineError(
            f"need at least {cfg.batch_size} unlabeled pairs, found {len(data)}"
        )
    model = build_pretrain_model(cfg, seed)
    params = model.named_parameters()
    opt = nn.Lars(
        params,
        weight_decay=cfg.weight_decay,
        momentum=cfg.momentum,
        trust_coeff=cfg.trust_coeff,
    )
    need_second_branch = cfg.use_differencing or cfg.use_ip or cfg.use_cr
    weights = losses.LossWeights(
        lam=cfg.lam,
        alpha=cfg.alpha if cfg.use_ip else 0.0,
        beta=cfg.beta if cfg.use_cr else 0.0,
    )
    steps_per_epoch = len(data) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    ledger = RunLedger()
    checkpoint = None
    global_step = 0
    zero = Tensor(np.zeros((), dtype=np.float32))

    for epoch in range(cfg.epochs):
        t_start = time.perf_counter()
        order = stream(seed, "order", epoch).permutation(len(data))
        aug = AugmentConfig(**{**augment_cfg.__dict__, "master_seed": subseed(seed, "aug", epoch)})
        sums = np.zeros(4, dtype=np.float64)
        for idx in _batches(len(data), cfg.batch_size, order, min_size=cfg.batch_size):
            views = [augment_pair(data.t0[i], data.t1[i], aug, sample_id=int(i)) for i in idx]
            stacks = [Tensor(np.stack([v[k] for v in views])) for k in range(4)]
            t0p, t0pp, t1p, t1pp = stacks

            f0p, z0p = model.embed(t0p)
            f1p, z1p = model.embed(t1p)
            if need_second_branch:
                f0pp, z0pp = model.embed(t0pp)
                f1pp, z1pp = model.embed(t1pp)

            if cfg.use_differencing:
                d1 = losses.feature_difference(z0p, z1p)
                d2 = losses.feature_difference(z0pp, z1pp)
                ssl = losses.barlow_loss(losses.cross_correlation(d1, d2), cfg.lam)
            else:
                ssl = losses.barlow_loss(losses.cross_correlation(z0p, z1p), cfg.lam)
            ip = (
                losses.invariant_prediction_loss(losses.ProjectionSet(z0p, z0pp, z1p, z1pp))
                if cfg.use_ip
                else zero
            )
            cr = (
                losses.change_consistency_loss(
                    losses.gram_similarity(f0p, f1p, normalize_rows=cfg.cr_normalize_rows),
                    losses.gram_similarity(f0pp, f1pp, normalize_rows=cfg.cr_normalize_rows),
                )
                if cfg.use_cr
                else zero
            )
            try:
                total = losses.total_loss(ssl, ip, cr, weights)
            except ValueError as err:
                raise nn.TrainingAborted(
                    f"non-finite loss at epoch {epoch} step {global_step}: {err}"
                ) from err

            model.zero_grad()
            total.backward()
            lr_t = nn.cosine_lr(global_step, total_steps, cfg.effective_lr)
            opt.step(lr_t)
            global_step += 1
            sums += (ssl.item(), ip.item(), cr.item(), total.item())

        means = sums / steps_per_epoch
        ledger.append(
            epoch=epoch,
            l_ssl=means[0], l_ip=means[1], l_cr=means[2], total=means[3],
            alpha=weights.alpha, beta=weights.beta,
            lr=nn.cosine_lr(global_step - 1, total_steps, cfg.effective_lr),
            wall_time=time.perf_counter() - t_start,
            seed=seed,
        )
        checkpoint = _pretrain_checkpoint(model, opt, cfg, seed, strategy_name, epoch)
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            ckpt_io.save(out_dir / "pretrain.ckpt", checkpoint)
            ledger.save(out_dir / "pretrain_ledger.csv")
    return checkpoint, ledger


def _pretrain_checkpoint(model, opt, cfg, seed, strategy_name, epoch) -> ckpt_io.Checkpoint:
    entries = _entries_from_module(model.encoder, "encoder", "encoder")
    entries += _entries_from_module(model.projector, "projector", "projector")
    entries += [
        ckpt_io.Entry(f"lars.{n}", "optimizer", np.array(arr))
        for n, arr in opt.state_arrays().items()
    ]
    meta = {
        "kind": "pretrain",
        "strategy": strategy_name,
        "seed": seed,
        "epochs_done": epoch + 1,
        "model": _model_meta(cfg),
        "flags": {
            "use_differencing": cfg.use_differencing,
            "use_ip": cfg.use_ip,
            "use_cr": cfg.use_cr,
        },
    }
    return ckpt_io.Checkpoint(entries=entries, meta=meta)


# -- finetuning ------------------------------------------------------------------


def finetune(
    manifest: datagen.DatasetManifest,
    pre_cfg: PretrainConfig,
    cfg: FinetuneConfig,
    seed: int,
    init_checkpoint: ckpt_io.Checkpoint | None = None,
    out_dir: Path | None = None,
) -> tuple[ckpt_io.Checkpoint, RunLedger]:
    """Supervised change detection on raw (non-augmented) labeled pairs."""
    if cfg.init != "random" and init_checkpoint is None:
        raise PipelineError(f"init mode {cfg.init!r} needs a pretraining checkpoint")
    work = manifest
    if cfg.label_fraction < 1.0:
        work = datagen.limited_label_sample(manifest, cfg.label_fraction, seed)
    data = PairCache(work, split="train", need_masks=True)
    if not len(data):
        raise PipelineError("no labeled training pairs")

    model = build_change_model(pre_cfg, cfg.head_mode, seed)
    if init_checkpoint is not None:
        transfer_encoder(init_checkpoint, model.encoder)
    opt = nn.Adam(model.named_parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)

    ledger = RunLedger()
    checkpoint = None
    for epoch in range(cfg.epochs):
        t_start = time.perf_counter()
        order = stream(seed, "order", epoch).permutation(len(data))
        epoch_loss = 0.0
        n_batches = 0
        for idx in _batches(len(data), cfg.batch_size, order):
            t0 = Tensor(np.stack([data.t0[i] for i in idx]))
            t1 = Tensor(np.stack([data.t1[i] for i in idx]))
            target = Tensor(np.stack([data.masks[i] for i in idx]))
            logits = model(t0, t1)
            loss = nn.binary_cross_entropy_with_logits(logits, target, pos_weight=cfg.pos_weight)
            if not np.isfinite(loss.data).all():
                raise nn.TrainingAborted(f"non-finite loss at epoch {epoch}")
            model.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.item()
            n_batches += 1
        ledger.append(
            epoch=epoch,
            l_ssl=0.0, l_ip=0.0, l_cr=0.0,
            total=epoch_loss / max(n_batches, 1),
            alpha=0.0, beta=0.0,
            lr=cfg.lr,
            wall_time=time.perf_counter() - t_start,
            seed=seed,
        )
        checkpoint = _finetune_checkpoint(model, opt, pre_cfg, cfg, seed)
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            ckpt_io.save(out_dir / "finetune.ckpt", checkpoint)
            ledger.save(out_dir / "finetune_ledger.csv")
    return checkpoint, ledger


def _finetune_checkpoint(model, opt, pre_cfg, cfg, seed) -> ckpt_io.Checkpoint:
    entries = _entries_from_module(model.encoder, "encoder", "encoder")
    entries += _entries_from_module(model.head, "head", "head")
    entries += [
        ckpt_io.Entry(f"adam.{n}", "optimizer", np.array(arr))
        for n, arr in opt.state_arrays().items()
    ]
    meta = {
        "kind": "finetune",
        "init": cfg.init,
        "seed": seed,
        "label_fraction": cfg.label_fraction,
        "model": _model_meta(pre_cfg, head_mode=cfg.head_mode),
    }
    return ckpt_io.Checkpoint(entries=entries, meta=meta)


def change_model_from_checkpoint(checkpoint: ckpt_io.Checkpoint) -> nn.ChangeModel:
    meta = checkpoint.meta.get("model", {})
    if "head_mode" not in meta:
        raise PipelineError("checkpoint is not a finetuned change-detection model")
    cfg = PretrainConfig(
        image_size=meta["image_size"],
        encoder_widths=tuple(meta["encoder_widths"]),
        encoder_kernel=meta["encoder_kernel"],
        encoder_downsample=meta["encoder_downsample"],
        projector_hidden=meta["projector_hidden"],
        projector_out=meta["projector_out"],
    )
    model = build_change_model(cfg, meta["head_mode"], seed=0)
    _load_module(model.encoder, checkpoint, "encoder", "encoder")
    _load_module(model.head, checkpoint, "head", "head")
    return model


# -- evaluation -------------------------------------------------------------------


def _predict_counts(model, cache: PairCache, batch: int, threshold: float,
                    corruption=None, seed: int = 0) -> metrics.ConfusionCounts:
    counts = metrics.ConfusionCounts()
    with tk.no_grad():
        for start in range(0, len(cache), batch):
            sl = slice(start, start + batch)
            t0s, t1s = cache.t0[sl], cache.t1[sl]
            names = cache.names[sl]
            if corruption is not None:
                t0s = [metrics.corrupt(a, corruption, seed, f"{n}/t0") for a, n in zip(t0s, names)]
                t1s = [metrics.corrupt(a, corruption, seed, f"{n}/t1") for a, n in zip(t1s, names)]
            logits = model(Tensor(np.stack(t0s)), Tensor(np.stack(t1s)))
            pred = metrics.binarize(logits.numpy(), threshold=threshold, logits=True)
            gt = np.stack(cache.masks[sl]).astype(np.uint8)
            counts = counts.add(metrics.confusion(pred, gt))
    return counts


def _checkpoint_id(checkpoint: ckpt_io.Checkpoint) -> str:
    h = hashlib.sha256()
    for e in sorted(checkpoint.entries, key=lambda e: (e.role, e.name)):
        h.update(e.name.encode())
        h.update(np.ascontiguousarray(e.array).tobytes())
    return h.hexdigest()[:16]


def evaluate(
    checkpoint: ckpt_io.Checkpoint,
    manifest: datagen.DatasetManifest,
    corruptions: bool = False,
    ood_manifest: datagen.DatasetManifest | None = None,
    seed: int = 0,
    threshold: float = 0.5,
    batch_size: int = 16,
    severity_tables: dict | None = None,
) -> dict[str, metrics.EvalReport]:
    """Score a finetuned checkpoint; returns reports keyed by distribution tag.

    The in-distribution report covers the manifest's test split (or all
    entries when the manifest carries no split assignments). With
    ``corruptions`` it adds the complete kinds x severities grid plus the
    mean-under-corruption and its ratio to the clean score.
    """
    model = change_model_from_checkpoint(checkpoint)
    model.eval()
    ckpt_id = _checkpoint_id(checkpoint)

    def one(manifest: datagen.DatasetManifest, tag: str, with_grid: bool) -> metrics.EvalReport:
        cache = PairCache(manifest, split="test", need_masks=True)
        if not len(cache):
            raise PipelineError(f"{tag}: no labeled test entries to evaluate")
        counts = _predict_counts(model, cache, batch_size, threshold)
        precision, recall, f1 = metrics.precision_recall_f1(counts)
        report = metrics.EvalReport(
            precision=precision, recall=recall, f1=f1, counts=counts,
            metadata={
                "checkpoint": ckpt_id,
                "dataset": Path(manifest.root).name,
                "threshold": threshold,
                "distribution": tag,
                "n_corruptions": len(metrics.CORRUPTION_KINDS),
                "n_severities": metrics.N_SEVERITIES,
            },
        )
        if with_grid:
            grid = {}
            for kind in metrics.CORRUPTION_KINDS:
                for severity in range(1, metrics.N_SEVERITIES + 1):
                    spec = metrics.CorruptionSpec.from_table(kind, severity, severity_tables)
                    cell = _predict_counts(
                        model, cache, batch_size, threshold, corruption=spec, seed=seed
                    )
                    grid[(kind, severity)] = metrics.precision_recall_f1(cell)[2]
            report.corruption_grid = grid
            report.mpc = metrics.mpc(grid)
            report.rpc = metrics.rpc(report.mpc, f1)
        return report

    reports = {"in_distribution": one(manifest, "in_distribution", corruptions)}
    if ood_manifest is not None:
        reports["out_of_distribution"] = one(ood_manifest, "out_of_distribution", False)
    return reports


def dump_prediction_masks(
    checkpoint: ckpt_io.Checkpoint,
    manifest: datagen.DatasetManifest,
    out_dir: Path,
    limit: int = 8,
    threshold: float = 0.5,
) -> list[str]:
    """Write predicted and ground-truth masks side by side for inspection."""
    model = change_model_from_checkpoint(checkpoint)
    model.eval()
    cache = PairCache(manifest, split="test", need_masks=True)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with tk.no_grad():
        for i in range(min(limit, len(cache))):
            logits = model(Tensor(cache.t0[i][None]), Tensor(cache.t1[i][None]))
            pred = metrics.binarize(logits.numpy()[0], threshold=threshold, logits=True)
            stem = Path(cache.names[i]).stem
            datagen.save_mask(out_dir / f"{stem}_pred.png", pred)
            datagen.save_mask(out_dir / f"{stem}_gt.png", cache.masks[i].astype(np.uint8))
            datagen.save_image(out_dir / f"{stem}_t0.png", cache.t0[i])
            datagen.save_image(out_dir / f"{stem}_t1.png", cache.t1[i])
            written.append(stem)
    return written
