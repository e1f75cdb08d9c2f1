"""Gait energy images and the GEINet classifier."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import EmptyGallery, EmptySequence, GeometryMismatch, SingleClass
from .silhouette import FrameGeometry, GaitSequence

MODEL_VERSION = 1


@dataclass
class GaitEnergyImage:
    pixels: np.ndarray
    subject_label: str | None = None
    source_sequence_id: str = ""


def compute_gei(seq: GaitSequence) -> GaitEnergyImage:
    """Pixelwise mean over every frame of the sequence."""
    if seq is None or len(seq.frames) == 0:
        raise EmptySequence("cannot average an empty sequence")
    stack = seq.stack().astype(np.float64)
    return GaitEnergyImage(stack.mean(axis=0), seq.subject_label, seq.sequence_id)


@dataclass
class GeinetConfig:
    kernels: tuple[int, int] = (18, 45)
    kernel_sizes: tuple[int, int] = (7, 5)
    pool: int = 2
    epochs: int = 50
    lr: float = 0.01
    batch_size: int = 32
    seed: int = 0


class GeinetNet(nn.Module):
    def __init__(self, cfg: GeinetConfig, geometry: FrameGeometry, n_classes: int):
        super().__init__()
        k1, k2 = cfg.kernels
        s1, s2 = cfg.kernel_sizes
        self.features = nn.Sequential(
            nn.Conv2d(1, k1, s1), nn.ReLU(), nn.MaxPool2d(cfg.pool),
            nn.Conv2d(k1, k2, s2), nn.ReLU(), nn.MaxPool2d(cfg.pool),
        )
        with torch.no_grad():
            flat = self.features(torch.zeros(1, 1, geometry.height, geometry.width)).numel()
        self.head = nn.Linear(flat, n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x[:, None]).flatten(start_dim=1))


@dataclass
class GeinetModel:
    config: GeinetConfig
    geometry: FrameGeometry
    class_labels: list[str]
    net: GeinetNet
    history: list[dict] = field(default_factory=list)

    @torch.no_grad()
    def probabilities(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float32)
        if x.shape[1:] != self.geometry.shape:
            raise GeometryMismatch(f"GEI shape {x.shape[1:]} does not match model {self.geometry.shape}",
                                   module="recognizer")
        self.net.eval()
        logits = self.net(torch.from_numpy(x)).double()
        return torch.softmax(logits, dim=1).numpy()


def _gei_array(items) -> np.ndarray:
    return np.stack([g.pixels if isinstance(g, GaitEnergyImage) else np.asarray(g) for g in items])


def train_geinet(gallery, config: GeinetConfig | None = None, verbose: bool = False) -> GeinetModel:
    """Fit on ``(GaitEnergyImage, label)`` pairs with cross-entropy and Adam."""
    config = config or GeinetConfig()
    gallery = list(gallery)
    if not gallery:
        raise EmptyGallery("no gallery GEIs to train on")
    labels = [str(lbl) for _, lbl in gallery]
    class_labels = sorted(set(labels))
    if len(class_labels) < 2:
        raise SingleClass("GEINet needs at least two classes")
    x = _gei_array([g for g, _ in gallery]).astype(np.float32)
    geometry = FrameGeometry(width=x.shape[2], height=x.shape[1])
    y = np.array([class_labels.index(lbl) for lbl in labels], dtype=np.int64)
    torch.manual_seed(config.seed)
    net = GeinetNet(config, geometry, len(class_labels))
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    loss_fn = nn.CrossEntropyLoss()
    rng = np.random.default_rng(config.seed)
    xt, yt = torch.from_numpy(x), torch.from_numpy(y)
    model = GeinetModel(config, geometry, class_labels, net)
    for epoch in range(1, config.epochs + 1):
        net.train()
        order = rng.permutation(len(y))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            idx = torch.from_numpy(order[lo:lo + config.batch_size])
            loss = loss_fn(net(xt[idx]), yt[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        acc = float((model.probabilities(x).argmax(axis=1) == y).mean())
        model.history.append({"epoch": epoch, "loss": total / len(y), "accuracy": acc})
        if verbose:
            print(json.dumps(model.history[-1]))
    net.eval()
    return model


def classify(gei, model: GeinetModel) -> list[tuple[str, float]]:
    """All classes ranked by probability, ties broken by label order."""
    pixels = gei.pixels if isinstance(gei, GaitEnergyImage) else np.asarray(gei)
    probs = model.probabilities(pixels[None])[0]
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], model.class_labels[i]))
    return [(model.class_labels[i], float(probs[i])) for i in order]


def save_geinet(model: GeinetModel, path) -> Path:
    cfg = asdict(model.config)
    cfg["kernels"] = list(cfg["kernels"])
    cfg["kernel_sizes"] = list(cfg["kernel_sizes"])
    meta = {"model_version": MODEL_VERSION, "config": cfg, "class_labels": model.class_labels,
            "width": model.geometry.width, "height": model.geometry.height}
    arrays = {name: t.detach().numpy() for name, t in model.net.state_dict().items()}
    return save_checkpoint(path, "geinet", meta, arrays)


def load_geinet(path) -> GeinetModel:
    meta, arrays = load_checkpoint(path, "geinet")
    cfg = dict(meta["config"])
    cfg["kernels"] = tuple(cfg["kernels"])
    cfg["kernel_sizes"] = tuple(cfg["kernel_sizes"])
    config = GeinetConfig(**cfg)
    geometry = FrameGeometry(width=meta["width"], height=meta["height"])
    net = GeinetNet(config, geometry, len(meta["class_labels"]))
    net.load_state_dict({name: torch.from_numpy(arr) for name, arr in arrays.items()})
    net.eval()
    return GeinetModel(config, geometry, list(meta["class_labels"]), net)


def save_gei_image(gei: GaitEnergyImage, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.clip(np.rint(gei.pixels * 255), 0, 255).astype(np.uint8), mode="L").save(path)
    return path


def write_predictions(rows, path) -> Path:
    """CSV ``sequence_id,rank,label,probability``; ``rows`` maps sequence id to a ranking."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sequence_id", "rank", "label", "probability"])
        for seq_id, ranking in rows:
            for r, (label, p) in enumerate(ranking, start=1):
                writer.writerow([seq_id, r, label, f"{p:.8f}"])
    return path


def write_training_log(history: list[dict], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "accuracy"])
        for row in history:
            writer.writerow([row["epoch"], f"{row['loss']:.8g}", f"{row['accuracy']:.6f}"])
    return path
