"""
Training strategies: clean, augmentation-only, SE-joint, pretrained backend
and the full transfer-learned joint recipe are all one loop with switches.

Data flow per step::

    clean wav -> random crop -> online corruption -> FBANK (noisy)
                      \\-------------------------------> FBANK (clean)

With a front-end the noisy and clean features are stacked into a
:class:`~tlsej.dumenet.DualBatch`, both halves are masked and all ``2B``
enhanced rows go through the backend. The loss is ``L_ce + w_mse * L_mse``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentationPolicy, NoiseInventory, augment_online, worker_rng
from .backends import BACKENDS, ConformerConfig, LCNNConfig, ResNetConfig, build_backend
from .backends.weights import export_state, load_pretrained, read_manifest, write_manifest
from .dumenet import DUMENet, DualBatch, DumenetConfig, masked_mse_loss, pretrain_frontend
from .errors import ConfigError, InvalidInputError, NumericError
from .evaluate import ScoringStack, compute_eer
from .protocol import read_manifest as read_data_manifest
from .schema import dump_yaml, from_dict
from .signal import StftParams, Waveform, fbank, read_wav

log = logging.getLogger(__name__)

BCE_EPS = 1e-7


@dataclass
class FeatureConfig:
    stft: StftParams = field(default_factory=StftParams)
    n_mels: int = 80


@dataclass
class TrainConfig:
    backend: str = "conformer"
    conformer: ConformerConfig = field(default_factory=ConformerConfig)
    lcnn: LCNNConfig = field(default_factory=LCNNConfig)
    resnet18: ResNetConfig = field(default_factory=ResNetConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    use_frontend: bool = False
    frontend: DumenetConfig = field(default_factory=DumenetConfig)
    frontend_init: str = "random"  # "random" or a front-end weight manifest directory
    frontend_frozen: bool = False
    frontend_pretrain_epochs: int = 0
    backend_pretrained: str | None = None  # weight manifest directory
    backend_name_map: str | None = None
    backend_pretrained_prefix: str | None = None  # defaults to the backend's encoder prefix
    allow_partial: bool = False
    use_augmentation: bool = True
    augmentation: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    noise_dir: str | None = None
    lr: float = 1e-3
    scheduler_factor: float = 0.5
    scheduler_patience: int = 3
    epochs: int = 10
    batch_size: int = 16
    crop_seconds: float = 4.0
    w_mse: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {sorted(BACKENDS)}, got {self.backend!r}")
        if self.frontend_frozen and not self.use_frontend:
            raise ConfigError("frontend_frozen requires use_frontend")
        if self.frontend_init != "random" and not self.use_frontend:
            raise ConfigError("frontend_init given but use_frontend is false")
        for name in ("lr", "crop_seconds"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.scheduler_factor < 1:
            raise ConfigError("scheduler_factor must be in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.scheduler_patience < 0:
            raise ConfigError("epochs, batch_size and scheduler_patience must be non-negative (batch_size >= 1)")
        if self.w_mse < 0 or self.frontend_pretrain_epochs < 0:
            raise ConfigError("w_mse and frontend_pretrain_epochs must be non-negative")
        if self.frontend.n_mels != self.features.n_mels or self.backend_config.n_mels != self.features.n_mels:
            raise ConfigError("front-end, backend and feature n_mels must agree")

    @property
    def backend_config(self):
        return getattr(self, self.backend)

    def key(self):
        """Ablation row key: (backend, aug, SE, pretrained, frozen)."""
        return (self.backend, self.use_augmentation, self.use_frontend,
                self.backend_pretrained is not None, self.frontend_frozen)


@dataclass
class TrainState:
    epoch: int = 0  # completed epochs
    history: list = field(default_factory=list)  # one dict per (epoch, split)
    lr: float = 0.0
    best_dev: float = math.inf
    best_epoch: int = -1
    seed: int = 0

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def bce_loss(logits, labels):
    """
    Mean binary cross-entropy of the bona fide posterior.

    ``p = softmax(logits)[:, 1]`` is clamped to ``[eps, 1 - eps]``; ``labels``
    are 1 for bona fide and 0 for spoof.
    """
    labels = torch.as_tensor(labels, device=logits.device)
    if not bool(((labels == 0) | (labels == 1)).all()):
        raise InvalidInputError("labels must be 0 or 1")
    y = labels.to(logits.dtype)
    p = F.softmax(logits, dim=-1)[:, 1].clamp(BCE_EPS, 1 - BCE_EPS)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


def joint_loss(ce, mse, w_mse=1.0):
    for name, v in (("ce", ce), ("mse", mse)):
        v = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(v):
            raise NumericError(f"non-finite {name} loss: {v}")
    return ce + w_mse * mse


def crop_or_repeat(x, length, rng):
    """Random ``length``-sample window; shorter inputs are tiled first."""
    if len(x) < length:
        x = np.resize(x, length)
    start = int(rng.integers(0, len(x) - length + 1))
    return x[start:start + length]


def features_of(samples, sample_rate, config):
    f = config.features
    return fbank(Waveform(samples, sample_rate), f.n_mels, f.stft).values


def example_pair(clean, config, rng, inventory, crop):
    """``(noisy, clean)`` FBANK pair from one crop; ``inventory=None`` with noise policy skips corruption."""
    x = crop_or_repeat(clean.samples, crop, rng)
    cw = clean.with_samples(x)
    noisy = cw
    if config.use_augmentation and (inventory is not None or config.augmentation.mode == "reverb"):
        noisy, _ = augment_online(cw, config.augmentation, rng, inventory)
    return features_of(noisy.samples, clean.sample_rate, config), features_of(x, clean.sample_rate, config)


def pretrain_frontend_on(config, entries, inventory=None, epochs=None):
    """
    Pre-train a fresh front-end on ``(noisy, clean)`` pairs drawn once from ``entries``.

    Returns ``(model, history)``.
    """
    wavs = [read_wav(e.path) for e in entries]
    if not wavs:
        raise ConfigError("front-end pre-training needs a non-empty manifest")
    if inventory is None and config.use_augmentation and config.augmentation.mode != "reverb":
        if config.noise_dir is None:
            raise ConfigError("noise augmentation needs noise_dir or an inventory")
        inventory = NoiseInventory.from_dir(config.noise_dir)
    crop = int(round(config.crop_seconds * wavs[0].sample_rate))
    rng = worker_rng(config.seed, 2, 0)
    pairs = [example_pair(w, config, rng, inventory, crop) for w in wavs]
    torch.manual_seed(config.seed)
    model = DUMENet(config.frontend)
    epochs = config.frontend_pretrain_epochs if epochs is None else epochs
    hist = pretrain_frontend(model, pairs, epochs, lr=config.lr, batch_size=config.batch_size, seed=config.seed)
    return model, hist


def build_models(config):
    torch.manual_seed(config.seed)
    backend = build_backend(config.backend, config.backend_config)
    frontend = DUMENet(config.frontend) if config.use_frontend else None
    return frontend, backend


class Trainer:
    """Owns the models, optimiser and scheduler for one run."""

    def __init__(self, config, train_entries, dev_entries, inventory=None):
        self.config = config
        self.train_entries = list(train_entries)
        self.dev_entries = list(dev_entries)
        if not self.train_entries or not self.dev_entries:
            raise ConfigError("training and dev manifests must be non-empty")
        if config.use_augmentation and inventory is None and config.augmentation.mode != "reverb":
            if config.noise_dir is None:
                raise ConfigError("noise augmentation needs noise_dir or an inventory")
            inventory = NoiseInventory.from_dir(config.noise_dir)
        self.inventory = inventory
        self.frontend, self.backend = build_models(config)
        self._clean = [read_wav(e.path) for e in self.train_entries]
        self._dev_clean = [read_wav(e.path) for e in self.dev_entries]
        self.sample_rate = self._clean[0].sample_rate
        self.crop = int(round(config.crop_seconds * self.sample_rate))
        self._init_frontend()
        self._init_backend()
        params = list(self.backend.parameters())
        if self.frontend is not None and not config.frontend_frozen:
            params += list(self.frontend.parameters())
        self.optimizer = torch.optim.Adam(params, lr=config.lr)
        self.scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
            self.optimizer, mode="min", factor=config.scheduler_factor,
            patience=config.scheduler_patience, threshold=0.0,
        )
        self.state = TrainState(lr=config.lr, seed=config.seed)
        self._dev = self._fixed_dev_batch()

    # -- setup --------------------------------------------------------

    def _init_frontend(self):
        cfg = self.config
        if self.frontend is None:
            return
        if cfg.frontend_init != "random":
            load_pretrained(cfg.frontend_init, self.frontend, prefix="")
        elif cfg.frontend_pretrain_epochs > 0:
            pairs = self._pairs(self._clean, worker_rng(cfg.seed, 2, 0))
            hist = pretrain_frontend(self.frontend, pairs, cfg.frontend_pretrain_epochs,
                                     lr=cfg.lr, batch_size=cfg.batch_size, seed=cfg.seed)
            log.info("front-end pre-training: mse %.4f -> %.4f", hist[0], hist[-1])
        if cfg.frontend_frozen:
            for p in self.frontend.parameters():
                p.requires_grad_(False)

    def _init_backend(self):
        cfg = self.config
        if cfg.backend_pretrained is None:
            return
        prefix = cfg.backend_pretrained_prefix
        if prefix is None:
            prefix = getattr(self.backend, "encoder_prefix", lambda: "")()
        report = load_pretrained(cfg.backend_pretrained, self.backend, cfg.backend_name_map,
                                 prefix=prefix, allow_partial=cfg.allow_partial)
        log.info("backend pretrained import: %s", report.summary())

    # -- data ---------------------------------------------------------

    def _example(self, clean, rng, augment=True):
        return example_pair(clean, self.config, rng, self.inventory if augment else None, self.crop)

    def _pairs(self, wavs, rng):
        return [self._example(w, rng) for w in wavs]

    def _fixed_dev_batch(self):
        rng = worker_rng(self.config.seed, 1, 0)
        pairs = self._pairs(self._dev_clean, rng)
        noisy = torch.as_tensor(np.stack([p[0] for p in pairs]), dtype=torch.float32)
        clean = torch.as_tensor(np.stack([p[1] for p in pairs]), dtype=torch.float32)
        targets = torch.as_tensor([e.target for e in self.dev_entries])
        return noisy, clean, targets

    def batches(self, epoch):
        """Deterministic stream of ``(noisy, clean, targets)`` for ``epoch``."""
        rng = worker_rng(self.config.seed, 0, epoch)
        order = rng.permutation(len(self._clean))
        bs = self.config.batch_size
        for i in range(0, len(order), bs):
            idx = order[i:i + bs]
            pairs = [self._example(self._clean[j], rng) for j in idx]
            noisy = torch.as_tensor(np.stack([p[0] for p in pairs]), dtype=torch.float32)
            clean = torch.as_tensor(np.stack([p[1] for p in pairs]), dtype=torch.float32)
            yield noisy, clean, torch.as_tensor([self.train_entries[j].target for j in idx])

    # -- losses -------------------------------------------------------

    def losses(self, noisy, clean, targets):
        """Return ``(ce, mse, total, logits, batch_targets)`` for one batch."""
        if self.frontend is None:
            logits = self.backend(noisy)
            ce = bce_loss(logits, targets)
            mse = torch.zeros((), dtype=ce.dtype)
            return ce, mse, joint_loss(ce, mse, 0.0), logits, targets
        batch = DualBatch.build(noisy, clean, targets)
        if self.config.frontend_frozen:
            with torch.no_grad():
                masks = self.frontend(batch.inputs)
        else:
            masks = self.frontend(batch.inputs)
        logits = self.backend(batch.inputs * masks)
        ce = bce_loss(logits, batch.targets)
        mse = masked_mse_loss(batch, masks)
        return ce, mse, joint_loss(ce, mse, self.config.w_mse), logits, batch.targets

    def _set_mode(self, train):
        self.backend.train(train)
        if self.frontend is not None:
            self.frontend.train(train and not self.config.frontend_frozen)

    # -- loop ---------------------------------------------------------

    def step(self, noisy, clean, targets):
        self._set_mode(True)
        ce, mse, total, _, _ = self.losses(noisy, clean, targets)
        if not torch.isfinite(total):
            raise NumericError(f"non-finite loss {float(total)}")
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        return self._report(ce, mse)

    def _report(self, ce, mse):
        # the float32 graph total can be one ulp off; the logged total is the float64 sum
        ce, mse = float(ce.detach()), float(mse.detach())
        w = self.config.w_mse if self.frontend is not None else 0.0
        return ce, mse, ce + w * mse

    @torch.no_grad()
    def evaluate_dev(self):
        self._set_mode(False)
        noisy, clean, targets = self._dev
        sums = np.zeros(3)
        scores = []
        bs = self.config.batch_size
        for i in range(0, len(targets), bs):
            sl = slice(i, i + bs)
            ce, mse, _, logits, _ = self.losses(noisy[sl], clean[sl], targets[sl])
            n = len(targets[sl])
            sums += n * np.array(self._report(ce, mse))
            # noisy half only: the deployed system never sees the clean copy
            scores.append((logits[:n, 1] - logits[:n, 0]).numpy())
        ce, mse, total = sums / len(targets)
        eer, _ = compute_eer(np.concatenate(scores), targets.numpy())
        return ce, mse, total, eer

    def train(self, out_dir=None, log_file=None):
        cfg = self.config
        out_dir = Path(out_dir) if out_dir is not None else None
        sink = open(log_file, "a", encoding="utf-8") if log_file else None
        try:
            while self.state.epoch < cfg.epochs:
                epoch = self.state.epoch
                torch.manual_seed(int(np.random.SeedSequence([cfg.seed, epoch]).generate_state(1)[0]))
                sums, n = np.zeros(3), 0
                for noisy, clean, targets in self.batches(epoch):
                    try:
                        vals = self.step(noisy, clean, targets)
                    except NumericError:
                        if out_dir is not None:
                            self.save(out_dir / "diverged")
                        raise
                    sums += len(targets) * np.asarray(vals)
                    n += len(targets)
                tr = sums / n
                dce, dmse, dtotal, deer = self.evaluate_dev()
                lr = self.optimizer.param_groups[0]["lr"]
                rows = [
                    {"epoch": epoch, "split": "train", "ce": tr[0], "mse": tr[1], "total": tr[2], "lr": lr},
                    {"epoch": epoch, "split": "dev", "ce": dce, "mse": dmse, "total": dtotal, "lr": lr, "eer": deer},
                ]
                for r in rows:
                    line = f"{r['epoch']}\t{r['split']}\t{r['ce']:.6f}\t{r['mse']:.6f}\t{r['total']:.6f}\t{r['lr']:.3e}"
                    log.info(line)
                    if sink:
                        sink.write(line + "\n")
                        sink.flush()
                self.state.history.extend(rows)
                self.scheduler.step(dtotal)
                self.state.lr = self.optimizer.param_groups[0]["lr"]
                self.state.epoch = epoch + 1
                improved = dtotal < self.state.best_dev
                if improved:
                    self.state.best_dev = float(dtotal)
                    self.state.best_epoch = epoch
                    self._best = self._snapshot()
                if out_dir is not None:
                    if improved:
                        self.save(out_dir / "best")
                    self.save(out_dir / "last", with_optimizer=True)
        finally:
            if sink:
                sink.close()
        return self.state

    # -- persistence --------------------------------------------------

    def _snapshot(self):
        return {
            "backend": {k: v.clone() for k, v in self.backend.state_dict().items()},
            "frontend": None if self.frontend is None else {k: v.clone() for k, v in self.frontend.state_dict().items()},
        }

    def restore_best(self):
        """Load the best-dev weights back into the live models."""
        snap = getattr(self, "_best", None)
        if snap is None:
            return
        self.backend.load_state_dict(snap["backend"])
        if self.frontend is not None:
            self.frontend.load_state_dict(snap["frontend"])

    def save(self, path, with_optimizer=False):
        """Atomic checkpoint: write into a temp directory, then rename over ``path``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
        try:
            write_manifest(tmp / "backend", export_state(self.backend))
            if self.frontend is not None:
                write_manifest(tmp / "frontend", export_state(self.frontend))
            dump_yaml(self.config, tmp / "config.yaml")
            (tmp / "state.json").write_text(self.state.to_json(), encoding="utf-8")
            if with_optimizer:
                torch.save({"optimizer": self.optimizer.state_dict(), "scheduler": self.scheduler.state_dict()},
                           tmp / "optimizer.pt")
            if path.exists():
                shutil.rmtree(path)
            os.replace(tmp, path)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        return path

    def resume(self, path):
        """Continue from a checkpoint written with ``with_optimizer=True``."""
        path = Path(path)
        _load_weights(self.backend, path / "backend")
        if self.frontend is not None:
            _load_weights(self.frontend, path / "frontend")
        self.state = TrainState.from_json((path / "state.json").read_text(encoding="utf-8"))
        opt = torch.load(path / "optimizer.pt", weights_only=True)
        self.optimizer.load_state_dict(opt["optimizer"])
        self.scheduler.load_state_dict(opt["scheduler"])
        best = path.parent / "best"
        if best.exists():
            snap_b = {k: torch.from_numpy(np.array(v)) for k, v in read_manifest(best / "backend").items()}
            snap_f = None
            if self.frontend is not None:
                snap_f = {k: torch.from_numpy(np.array(v)) for k, v in read_manifest(best / "frontend").items()}
            self._best = {"backend": snap_b, "frontend": snap_f}
        return self.state

    def stack(self):
        f = self.config.features
        return ScoringStack(self.backend, self.frontend, f.stft, f.n_mels)


def _load_weights(module, manifest):
    arrays = read_manifest(manifest)
    state = {k: torch.from_numpy(np.array(v)) for k, v in arrays.items()}
    module.load_state_dict(state)


def train(config, train_manifest, dev_manifest, out_dir=None, inventory=None, resume=False):
    """
    Train one system.

    Parameters
    ----------
    config : TrainConfig
    train_manifest, dev_manifest : path or list of ManifestEntry
    out_dir : path, optional
        Receives ``best/`` and ``last/`` checkpoints and ``train.log``.
    inventory : NoiseInventory, optional
        Overrides ``config.noise_dir``.
    resume : bool
        Continue from ``out_dir/last`` when it exists.

    Returns
    -------
    Trainer
        With the best-dev weights loaded; ``trainer.state`` holds the history.
    """
    tr = read_data_manifest(train_manifest) if isinstance(train_manifest, (str, os.PathLike)) else train_manifest
    dv = read_data_manifest(dev_manifest) if isinstance(dev_manifest, (str, os.PathLike)) else dev_manifest
    trainer = Trainer(config, tr, dv, inventory)
    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = out_dir / "train.log"
        if resume and (out_dir / "last" / "optimizer.pt").exists():
            trainer.resume(out_dir / "last")
            log.info("resumed at epoch %d", trainer.state.epoch)
    trainer.train(out_dir, log_file)
    trainer.restore_best()
    return trainer


def load_checkpoint(path):
    """Rebuild ``(ScoringStack, TrainConfig, TrainState)`` from a checkpoint directory."""
    import yaml

    path = Path(path)
    config = from_dict(TrainConfig, yaml.safe_load((path / "config.yaml").read_text(encoding="utf-8")))
    backend = build_backend(config.backend, config.backend_config)
    _load_weights(backend, path / "backend")
    frontend = None
    if config.use_frontend:
        frontend = DUMENet(config.frontend)
        _load_weights(frontend, path / "frontend")
    state = TrainState.from_json((path / "state.json").read_text(encoding="utf-8"))
    f = config.features
    return ScoringStack(backend, frontend, f.stft, f.n_mels), config, state


def ablation_matrix(runs, train_manifest, dev_manifest, test_sets, inventory=None, out_dir=None):
    """
    Train and evaluate each named run.

    Parameters
    ----------
    runs : list of (name, TrainConfig)
    test_sets : dict
        Condition name to a manifest path or entry list.

    Returns
    -------
    list of dict
        One row per run: ``name``, the key fields ``backend``, ``aug``,
        ``se``, ``pretrained``, ``frozen``, then one EER fraction per
        condition in ``test_sets`` order.
    """
    from .evaluate import score_dataset

    names = [n for n, _ in runs]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError(f"duplicate run names: {dupes}")
    sets = {c: read_data_manifest(m) if isinstance(m, (str, os.PathLike)) else m for c, m in test_sets.items()}
    rows = []
    for name, cfg in runs:
        sub = Path(out_dir) / name if out_dir is not None else None
        trainer = train(cfg, train_manifest, dev_manifest, sub, inventory)
        stack = trainer.stack()
        backend, aug, se, pre, frozen = cfg.key()
        row = {"name": name, "backend": backend, "aug": aug, "se": se, "pretrained": pre, "frozen": frozen}
        for cond, entries in sets.items():
            row[cond] = compute_eer(score_dataset(stack, entries))[0]
        rows.append(row)
    return rows


def ablation_tsv(rows):
    if not rows:
        return ""
    cols = list(rows[0])
    out = ["\t".join(cols)]
    for r in rows:
        out.append("\t".join(f"{100 * r[c]:.2f}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    return "\n".join(out) + "\n"
