"""Conditional VAE over silhouettes, conditioned on a key-pose/occlusion one-hot."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DimensionMismatch, EmptyCorpus, GeometryMismatch, InvalidState
from .silhouette import FrameGeometry, SilhouetteFrame

EPS = 1e-7
MODEL_VERSION = 1


@dataclass
class CvaeConfig:
    d_z: int = 64
    k: int = 16
    channels: tuple[int, int, int] = (32, 64, 128)
    cond_width: int = 32
    hidden: int = 256
    lambda1: float = 1.0
    lambda2: float = 0.5
    kl_form: str = "linear"
    epochs: int = 100
    lr: float = 0.01
    batch_size: int = 64
    max_frames: int = 0      # evenly thinned training set when > 0
    seed: int = 0


@dataclass(frozen=True)
class LatentDistribution:
    mu: np.ndarray
    log_sigma: np.ndarray


@dataclass(frozen=True)
class CvaeLossReport:
    l_rec: float
    l_kl: float
    l_total: float
    lambda1: float
    lambda2: float


def condition_vector(state: int, k: int = 16) -> np.ndarray:
    """One-hot of length ``k + 1``; state ``k + 1`` sets only the occlusion bit.

    States are 1-based, as in :mod:`gaitrecon.pose_graph`.
    """
    if not 1 <= int(state) <= k + 1 or int(state) != state:
        raise InvalidState(f"state {state} outside 1..{k + 1}")
    c = np.zeros(k + 1, dtype=np.float32)
    c[int(state) - 1] = 1.0
    return c


def condition_matrix(states, k: int = 16) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    if states.size and (states.min() < 1 or states.max() > k + 1):
        raise InvalidState(f"states must lie in 1..{k + 1}")
    c = np.zeros((states.size, k + 1), dtype=np.float32)
    c[np.arange(states.size), states - 1] = 1.0
    return c


def kl_terms(mu: torch.Tensor, log_sigma: torch.Tensor, form: str = "linear") -> torch.Tensor:
    """Per-sample KL penalty summed over latent dimensions.

    ``linear``: sum(mu^2 + sigma - log sigma - 1); ``standard``: the Gaussian
    KL to N(0, I), 0.5 * sum(mu^2 + sigma^2 - 2 log sigma - 1).
    """
    if form == "linear":
        terms = mu ** 2 + torch.exp(log_sigma) - log_sigma - 1.0
    elif form == "standard":
        terms = 0.5 * (mu ** 2 + torch.exp(2.0 * log_sigma) - 2.0 * log_sigma - 1.0)
    else:
        raise ValueError(f"unknown kl_form {form!r}")
    return terms.sum(dim=-1)


def reconstruction_terms(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Per-sample binary cross-entropy averaged over pixels; ``x_hat`` clamped to [eps, 1-eps]."""
    x_hat = x_hat.clamp(EPS, 1.0 - EPS)
    bce = -(x * torch.log(x_hat) + (1.0 - x) * torch.log(1.0 - x_hat))
    return bce.flatten(start_dim=1).mean(dim=1)


def cvae_loss(f, f_hat, dist: LatentDistribution, lambda1: float = 1.0, lambda2: float = 0.5,
              kl_form: str = "linear") -> CvaeLossReport:
    f = f.pixels if isinstance(f, SilhouetteFrame) else np.asarray(f)
    f_hat = f_hat.pixels if isinstance(f_hat, SilhouetteFrame) else np.asarray(f_hat)
    if f.shape != f_hat.shape:
        raise GeometryMismatch(f"frame shapes differ: {f.shape} vs {f_hat.shape}", module="cvae")
    x = torch.as_tensor(f, dtype=torch.float64)[None]
    x_hat = torch.as_tensor(f_hat, dtype=torch.float64)[None]
    mu = torch.as_tensor(np.asarray(dist.mu), dtype=torch.float64)[None]
    ls = torch.as_tensor(np.asarray(dist.log_sigma), dtype=torch.float64)[None]
    l_rec = float(reconstruction_terms(x, x_hat)[0])
    l_kl = float(kl_terms(mu, ls, kl_form)[0])
    return CvaeLossReport(l_rec, l_kl, lambda1 * l_rec + lambda2 * l_kl, lambda1, lambda2)


class CvaeNet(nn.Module):
    def __init__(self, cfg: CvaeConfig, geometry: FrameGeometry):
        super().__init__()
        c1, c2, c3 = cfg.channels
        n_cond = cfg.k + 1
        self.geometry = geometry
        self.cond_embed = nn.Sequential(
            nn.Linear(n_cond, cfg.cond_width), nn.ReLU(),
            nn.Linear(cfg.cond_width, cfg.cond_width), nn.ReLU(),
            nn.Linear(cfg.cond_width, cfg.cond_width),
        )
        self.conv = nn.Sequential(
            nn.Conv2d(1, c1, 3, stride=2, padding=1), nn.BatchNorm2d(c1), nn.ReLU(),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1), nn.BatchNorm2d(c2), nn.ReLU(),
            nn.Conv2d(c2, c3, 3, stride=2, padding=1), nn.BatchNorm2d(c3), nn.ReLU(),
        )
        fh, fw = geometry.height, geometry.width
        for _ in range(3):
            fh, fw = (fh + 1) // 2, (fw + 1) // 2
        self.feat_shape = (c3, fh, fw)
        flat = c3 * fh * fw
        self.enc_dense = nn.Sequential(
            nn.Linear(flat + cfg.cond_width, cfg.hidden), nn.ReLU(),
            nn.Linear(cfg.hidden, cfg.hidden), nn.ReLU(),
        )
        self.mu_head = nn.Linear(cfg.hidden, cfg.d_z)
        self.log_sigma_head = nn.Linear(cfg.hidden, cfg.d_z)
        self.dec_dense = nn.Sequential(
            nn.Linear(cfg.d_z + cfg.cond_width, cfg.hidden), nn.ReLU(),
            nn.Linear(cfg.hidden, flat), nn.ReLU(),
        )
        self.deconv = nn.Sequential(
            nn.ConvTranspose2d(c3, c2, 4, stride=2, padding=1), nn.BatchNorm2d(c2), nn.ReLU(),
            nn.ConvTranspose2d(c2, c1, 4, stride=2, padding=1), nn.BatchNorm2d(c1), nn.ReLU(),
            nn.ConvTranspose2d(c1, 1, 4, stride=2, padding=1),
        )

    def encode(self, x: torch.Tensor, c: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.conv(x[:, None]).flatten(start_dim=1)
        h = self.enc_dense(torch.cat([h, self.cond_embed(c)], dim=1))
        return self.mu_head(h), self.log_sigma_head(h)

    def decode(self, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        h = self.dec_dense(torch.cat([z, self.cond_embed(c)], dim=1))
        out = self.deconv(h.view(-1, *self.feat_shape))
        return torch.sigmoid(out[:, 0, :self.geometry.height, :self.geometry.width])


@dataclass
class CvaeModel:
    config: CvaeConfig
    geometry: FrameGeometry
    net: CvaeNet
    history: list[dict] = field(default_factory=list)

    @property
    def d_z(self) -> int:
        return self.config.d_z

    @property
    def k(self) -> int:
        return self.config.k

    def _check_frames(self, frames: np.ndarray) -> None:
        if frames.shape[1:] != self.geometry.shape:
            raise GeometryMismatch(f"frames {frames.shape[1:]} do not match model {self.geometry.shape}",
                                   module="cvae")

    @torch.no_grad()
    def encode_batch(self, frames, conds, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
        frames = np.asarray(frames, dtype=np.float32)
        conds = np.asarray(conds, dtype=np.float32)
        self._check_frames(frames)
        self.net.eval()
        mus, sigmas = [], []
        for lo in range(0, len(frames), batch_size):
            mu, ls = self.net.encode(torch.from_numpy(frames[lo:lo + batch_size]),
                                     torch.from_numpy(conds[lo:lo + batch_size]))
            mus.append(mu.numpy())
            sigmas.append(ls.numpy())
        return np.concatenate(mus), np.concatenate(sigmas)

    @torch.no_grad()
    def decode_batch(self, z, conds, batch_size: int = 256) -> np.ndarray:
        z = np.asarray(z, dtype=np.float32)
        if z.ndim != 2 or z.shape[1] != self.d_z:
            raise DimensionMismatch(f"latent width {z.shape[-1]} does not match d_z={self.d_z}")
        conds = np.asarray(conds, dtype=np.float32)
        self.net.eval()
        out = []
        for lo in range(0, len(z), batch_size):
            out.append(self.net.decode(torch.from_numpy(z[lo:lo + batch_size]),
                                       torch.from_numpy(conds[lo:lo + batch_size])).numpy())
        return np.concatenate(out)


def encode(frame: SilhouetteFrame, c, model: CvaeModel) -> LatentDistribution:
    pixels = frame.pixels if isinstance(frame, SilhouetteFrame) else np.asarray(frame)
    mu, ls = model.encode_batch(pixels[None], np.asarray(c)[None])
    return LatentDistribution(mu[0], ls[0])


def sample_latent(dist: LatentDistribution, seed: int) -> np.ndarray:
    """Reparameterised draw ``mu + exp(log_sigma) * eps``."""
    mu = np.asarray(dist.mu, dtype=np.float64)
    eps = np.random.default_rng(seed).standard_normal(mu.shape)
    return mu + np.exp(np.asarray(dist.log_sigma, dtype=np.float64)) * eps


def decode(z, c, model: CvaeModel) -> SilhouetteFrame:
    z = np.asarray(z)
    if z.ndim != 1 or z.shape[0] != model.d_z:
        raise DimensionMismatch(f"latent width {z.shape} does not match d_z={model.d_z}")
    return SilhouetteFrame(model.decode_batch(z[None], np.asarray(c)[None])[0])


def _seed_everything(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def train_cvae(frames, conds, config: CvaeConfig, geometry: FrameGeometry | None = None,
               val_frames=None, val_conds=None, verbose: bool = False) -> CvaeModel:
    """Adam on the mean weighted loss; one history row per epoch.

    ``frames`` is an (N, H, W) array and ``conds`` an (N, K+1) condition
    matrix. Results are bit-reproducible for a fixed seed on one thread.
    """
    frames = np.asarray(frames, dtype=np.float32)
    conds = np.asarray(conds, dtype=np.float32)
    if len(frames) == 0:
        raise EmptyCorpus("no training frames for the CVAE", module="cvae")
    if conds.shape != (len(frames), config.k + 1):
        raise DimensionMismatch(f"conditions must have shape ({len(frames)}, {config.k + 1})")
    if geometry is None:
        geometry = FrameGeometry(width=frames.shape[2], height=frames.shape[1])
    gen = _seed_everything(config.seed)
    net = CvaeNet(config, geometry)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    x_all = torch.from_numpy(frames)
    c_all = torch.from_numpy(conds)
    model = CvaeModel(config, geometry, net)
    for epoch in range(1, config.epochs + 1):
        net.train()
        order = rng.permutation(len(frames))
        sums = np.zeros(3)
        for lo in range(0, len(order), config.batch_size):
            idx = torch.from_numpy(order[lo:lo + config.batch_size])
            x, c = x_all[idx], c_all[idx]
            if len(idx) == 1:
                # batch norm needs two samples in training mode
                x, c = x.repeat(2, 1, 1), c.repeat(2, 1)
            mu, ls = net.encode(x, c)
            z = mu + torch.exp(ls) * torch.randn(mu.shape, generator=gen)
            x_hat = net.decode(z, c)
            l_rec = reconstruction_terms(x, x_hat).mean()
            l_kl = kl_terms(mu, ls, config.kl_form).mean()
            loss = config.lambda1 * l_rec + config.lambda2 * l_kl
            opt.zero_grad()
            loss.backward()
            opt.step()
            n = len(idx)
            sums += n * np.array([l_rec.item(), l_kl.item(), loss.item()])
        row = {"epoch": epoch, "l_rec": sums[0] / len(order), "l_kl": sums[1] / len(order),
               "l_total": sums[2] / len(order)}
        if val_frames is not None:
            row["val_dice"] = validation_dice(model, val_frames, val_conds)
        model.history.append(row)
        if verbose:
            print(json.dumps(row))
    net.eval()
    return model


def validation_dice(model: CvaeModel, frames, conds) -> float:
    from .evaluation import dice_score
    mu, _ = model.encode_batch(frames, conds)
    recon = model.decode_batch(mu, conds)
    return float(np.mean([dice_score(a, b) for a, b in zip(np.asarray(frames), recon)]))


def _state_arrays(net: nn.Module) -> dict[str, np.ndarray]:
    return {name: t.detach().cpu().numpy() for name, t in net.state_dict().items()}


def _load_state(net: nn.Module, arrays: dict[str, np.ndarray]) -> None:
    state = {name: torch.from_numpy(arr) for name, arr in arrays.items()}
    net.load_state_dict(state)


def save_cvae(model: CvaeModel, path) -> Path:
    cfg = asdict(model.config)
    cfg["channels"] = list(cfg["channels"])
    meta = {"model_version": MODEL_VERSION, "config": cfg,
            "width": model.geometry.width, "height": model.geometry.height}
    return save_checkpoint(path, "cvae", meta, _state_arrays(model.net))


def load_cvae(path) -> CvaeModel:
    meta, arrays = load_checkpoint(path, "cvae")
    cfg = dict(meta["config"])
    cfg["channels"] = tuple(cfg["channels"])
    config = CvaeConfig(**cfg)
    geometry = FrameGeometry(width=meta["width"], height=meta["height"])
    net = CvaeNet(config, geometry)
    _load_state(net, arrays)
    net.eval()
    return CvaeModel(config, geometry, net)


def write_loss_log(history: list[dict], path, columns=("epoch", "l_rec", "l_kl", "l_total")) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in history:
            writer.writerow([row["epoch"]] + [f"{row[c]:.8g}" for c in columns[1:]])
    return path
