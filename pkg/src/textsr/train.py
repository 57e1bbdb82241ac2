"""Training loop: joint noise-prediction and reconstruction objective.

Per iteration a batch of records is drawn from a stream keyed by
(seed, iteration), so the loss curve is a pure function of the seed and
training is resumable mid-stream.  The diffusion term is the mean squared
noise-prediction error; when the latent coder is trainable a decoder
reconstruction term is added and the latents fed to the diffusion term
are detached, so the coder is shaped by reconstruction only.

Classifier-free guidance needs the model to also see unconditional
inputs, so each sample's textual priors are dropped (replaced by the
empty bundle) with probability ``train.cond_dropout_p``.

A NaN/Inf loss aborts with a diagnostic rather than writing a poisoned
checkpoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_from_dict, effective_latent_channels
from .dataset import load_manifest, load_record_images
from .denoiser import ConditionalDenoiser
from .diffusion import NoiseSchedule, make_schedule
from .latent import ConvLatentCoder, PixelShuffleCoder, to_float
from .nn import AdamW, ParamStore
from .priors import (HashingTextEncoder, PatchFeatureEncoder, collate_bundles,
                     empty_bundle, encode_caption_set)
from .resize import resize_bicubic
from .rng import SALT_TRAINING, keyed_generator


@dataclass
class TrainingExample:
    hr: np.ndarray        # (3, H, W) float in [0, 1]
    lr_up: np.ndarray     # (3, H, W) LR lifted to the HR grid
    bundle: object        # encoded captions
    f_lr: np.ndarray      # (m, d_f) LR feature tokens


class ModelBundle:
    """Schedule, latent coder, denoiser, and frozen encoders, wired together."""

    def __init__(self, config: RunConfig, init_seed: int | None = None):
        config.validate()
        self.config = config
        seed = config.train.seed if init_seed is None else init_seed
        self.store = ParamStore()
        if config.latent.coder == "conv":
            self.coder = ConvLatentCoder(self.store, channels=config.latent.channels,
                                         hidden=config.latent.hidden, init_seed=seed)
        else:
            self.coder = PixelShuffleCoder()
        self.denoiser = ConditionalDenoiser(config.denoiser, init_seed=seed,
                                            store=self.store)
        self.schedule: NoiseSchedule = make_schedule(
            config.diffusion.train_steps, config.diffusion.beta_start,
            config.diffusion.beta_end)
        self.denoiser.set_timestep_scales(self.schedule.alpha_bars)
        self.text_encoder = HashingTextEncoder(dim=config.denoiser.text_dim)
        lr_size = config.dataset.canvas // config.dataset.downscale_factor
        self.lr_feature_encoder = PatchFeatureEncoder(
            patch_size=4, dim=config.denoiser.lr_token_dim, seed=0,
            expected_size=(lr_size, lr_size))

    @classmethod
    def from_checkpoint(cls, path) -> tuple["ModelBundle", dict]:
        data = load_checkpoint(path)
        config = config_from_dict(data["config"])
        bundle = cls(config)
        bundle.store.load_arrays(data["params"])
        return bundle, data

    def save(self, path, iteration: int = 0, optimizer: AdamW | None = None) -> None:
        save_checkpoint(path, self.store, self.schedule, self.config.to_dict(),
                        iteration=iteration,
                        optimizer_arrays=optimizer.state_arrays() if optimizer else None)


def prepare_examples(bundle: ModelBundle, records, root) -> list[TrainingExample]:
    examples = []
    for record in records:
        hr_u8, lr_u8 = load_record_images(record, root)
        hr = to_float(hr_u8)
        lr = to_float(lr_u8)
        lr_up = resize_bicubic(lr, hr.shape[0], hr.shape[1])
        examples.append(TrainingExample(
            hr=hr.transpose(2, 0, 1),
            lr_up=lr_up.transpose(2, 0, 1),
            bundle=encode_caption_set(record.captions, bundle.text_encoder),
            f_lr=bundle.lr_feature_encoder.encode(lr).tokens,
        ))
    return examples


def _batch_latents(bundle: ModelBundle, images: np.ndarray):
    """Latents for a (B, 3, H, W) batch; graph output for the conv coder."""
    if bundle.coder.trainable:
        return bundle.coder.encode_graph(Tensor(images))
    lat = [bundle.coder.encode(img.transpose(1, 2, 0)) for img in images]
    return Tensor(np.stack(lat))


def training_step(bundle: ModelBundle, examples: list[TrainingExample],
                  iteration: int) -> dict:
    """One optimizer-ready loss graph; returns the losses and the graph."""
    cfg = bundle.config
    rng = keyed_generator(SALT_TRAINING, cfg.train.seed, iteration)
    batch_idx = rng.integers(len(examples), size=cfg.train.batch_size)
    batch = [examples[i] for i in batch_idx]
    b = len(batch)

    hr = np.stack([ex.hr for ex in batch])
    lr_up = np.stack([ex.lr_up for ex in batch])
    f_lr = np.stack([ex.f_lr for ex in batch])
    t = rng.integers(bundle.schedule.num_steps, size=b)
    drop = rng.random(b) < cfg.train.cond_dropout_p

    dim = cfg.denoiser.text_dim
    bundles = [empty_bundle(dim) if drop[i] else batch[i].bundle for i in range(b)]
    e_g, E_lf, E_hf, mask = collate_bundles(bundles)

    hr_t = Tensor(hr)
    z0_graph = _batch_latents(bundle, hr)
    recon = None
    if bundle.coder.trainable:
        recon = ad.mse(bundle.coder.decode_graph(z0_graph), hr_t)
        with ad.no_grad():
            lr_latent = bundle.coder.encode_graph(Tensor(lr_up)).data
    else:
        lr_latent = _batch_latents(bundle, lr_up).data

    z0 = z0_graph.data  # detached: diffusion loss does not shape the coder
    abar = bundle.schedule.alpha_bars[t][:, None, None, None]
    eps = rng.standard_normal(z0.shape)
    z_t = np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps

    pred = bundle.denoiser.forward(z_t, t, lr_latent, e_g, E_lf, E_hf, mask, f_lr)
    diff_loss = ad.mse(Tensor(eps), pred)
    total = diff_loss if recon is None else diff_loss + cfg.train.recon_weight * recon
    return {"total": total, "diff": diff_loss.item(),
            "recon": recon.item() if recon is not None else 0.0}


def train_model(config: RunConfig, manifest_path, out_dir, resume=None,
                progress=False) -> Path:
    """Run the configured number of iterations; returns the checkpoint path.

    Writes ``checkpoint.npz`` and an append-only ``loss_log.jsonl`` under
    ``out_dir``.  With ``resume`` pointing at a previous checkpoint the
    optimizer state and iteration counter continue where they left off.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.npz"
    log_path = out / "loss_log.jsonl"

    if resume is not None:
        bundle, data = ModelBundle.from_checkpoint(resume)
        bundle.config = config  # same architecture enforced by load_arrays
        start = data["iteration"]
        optimizer = AdamW(bundle.store, lr=config.train.learning_rate,
                          weight_decay=config.train.weight_decay)
        if data["optim"]:
            optimizer.load_arrays(data["optim"])
    else:
        bundle = ModelBundle(config)
        start = 0
        optimizer = AdamW(bundle.store, lr=config.train.learning_rate,
                          weight_decay=config.train.weight_decay)

    records = load_manifest(manifest_path)
    if not records:
        raise ValueError(f"manifest {manifest_path} holds no records")
    examples = prepare_examples(bundle, records, Path(manifest_path).parent)

    with open(log_path, "a", encoding="utf-8") as log:
        for iteration in range(start, config.train.iterations):
            bundle.store.zero_grad()
            losses = training_step(bundle, examples, iteration)
            total = losses["total"]
            value = total.item()
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss at iteration {iteration}: diff={losses['diff']},"
                    f" recon={losses['recon']}")
            total.backward()
            optimizer.step()
            if iteration % config.train.log_every == 0 or iteration == config.train.iterations - 1:
                entry = {"iteration": iteration, "loss": value,
                         "diff_loss": losses["diff"], "recon_loss": losses["recon"]}
                log.write(json.dumps(entry) + "\n")
                log.flush()
                if progress:
                    print(f"iter {iteration:6d}  loss {value:.6f}")

    bundle.save(ckpt_path, iteration=config.train.iterations, optimizer=optimizer)
    return ckpt_path
