"""
Residual 1D-CNN for multi-label ECG classification
Stem, stacked residual blocks and a pooled sigmoid head
"""
import logging
from typing import List, Literal, Optional, Sequence, Union

import numpy as np

from . import flags
from .autodiff import (Tensor, adaptive_pool, concat, conv_output_length, flatten, maxpool1d,
                       no_grad, pool_output_length, relu, sigmoid)
from .errors import ShapeError
from .layers import BatchNorm1d, Conv1d, Dropout, Linear, Module
from .schemas import ModelConfig, ResidualBlockSpec
from .utils import chunks, spawn_rng

logger = logging.getLogger(__name__)

STEM_STRIDE = 2
STEM_POOL_KERNEL = 3
STEM_POOL_STRIDE = 2


def stage_lengths(cfg: ModelConfig) -> List[int]:
    """Sequence length after the stem conv, the stem pool and each residual block."""
    pad = cfg.kernel_size // 2
    lengths = [conv_output_length(cfg.nsteps, cfg.kernel_size, STEM_STRIDE, pad)]
    lengths.append(pool_output_length(lengths[-1], STEM_POOL_KERNEL, STEM_POOL_STRIDE)
                   if lengths[-1] >= STEM_POOL_KERNEL else 0)
    for _ in range(cfg.n_blocks):
        lengths.append(conv_output_length(lengths[-1], cfg.kernel_size, 2, pad) if lengths[-1] >= 1 else 0)
    return lengths


def block_specs(cfg: ModelConfig) -> List[ResidualBlockSpec]:
    specs = []
    in_channels = cfg.base_channels
    for out_channels in cfg.block_channels:
        specs.append(ResidualBlockSpec(in_channels=in_channels, out_channels=out_channels, stride=2,
                                       kernel_size=cfg.kernel_size, dropout_p=cfg.dropout_p))
        in_channels = out_channels
    return specs


def layer_names(cfg: ModelConfig) -> List[str]:
    """Flat list of the network's layers in forward order (stem, blocks, head)."""
    names = ["stem.conv", "stem.bn", "stem.relu", "stem.maxpool"]
    for i, spec in enumerate(block_specs(cfg)):
        names += [f"block{i}.{layer}" for layer in ("conv1", "bn1", "relu1", "dropout", "conv2", "bn2")]
        if spec.has_shortcut:
            names += [f"block{i}.shortcut_conv", f"block{i}.shortcut_pool"]
        names.append(f"block{i}.relu2")
    names += ["head.avgpool", "head.maxpool", "head.linear", "head.sigmoid"]
    return names


class ResidualBlock(Module):
    """
    conv -> BN -> relu -> dropout -> conv -> BN, plus shortcut, then relu.

    The shortcut is a kernel-1 conv followed by a max-pool of the block's
    stride (ceil mode, so lengths match the padded strided conv).
    """

    def __init__(self, spec: ResidualBlockSpec, rng: np.random.Generator):
        super().__init__()
        pad = spec.kernel_size // 2
        self.stride = spec.stride
        self.conv1 = Conv1d(spec.in_channels, spec.out_channels, spec.kernel_size, rng,
                            stride=spec.stride, padding=pad)
        self.bn1 = BatchNorm1d(spec.out_channels)
        self.dropout = Dropout(spec.dropout_p)
        self.conv2 = Conv1d(spec.out_channels, spec.out_channels, spec.kernel_size, rng,
                            stride=1, padding=pad)
        self.bn2 = BatchNorm1d(spec.out_channels)
        self.shortcut = Conv1d(spec.in_channels, spec.out_channels, 1, rng) if spec.has_shortcut else None

    def forward(self, x: Tensor) -> Tensor:
        out = relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(self.dropout(out)))
        skip = x
        if self.shortcut is not None:
            skip = self.shortcut(x)
            if self.stride > 1:
                skip = maxpool1d(skip, self.stride, self.stride, ceil_mode=True)
        return relu(out + skip)


class EcgResNet(Module):
    """Residual network mapping [B, n_leads, nsteps] to [B, n_classes] probabilities."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.config = cfg
        self.stem_conv = Conv1d(cfg.n_leads, cfg.base_channels, cfg.kernel_size, rng,
                                stride=STEM_STRIDE, padding=cfg.kernel_size // 2)
        self.stem_bn = BatchNorm1d(cfg.base_channels)
        self.blocks: List[ResidualBlock] = []
        for i, spec in enumerate(block_specs(cfg)):
            block = ResidualBlock(spec, rng)
            setattr(self, f"block{i}", block)
            self.blocks.append(block)
        self.fc = Linear(2 * cfg.block_channels[-1], cfg.n_classes, rng)

    def seed_dropout(self, rng: np.random.Generator):
        """Point every dropout layer at one shared generator."""
        for m in self.modules():
            if isinstance(m, Dropout):
                m.rng = rng

    def check_input(self, x: Tensor):
        expected = (self.config.n_leads, self.config.nsteps)
        if x.ndim != 3 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"network expects input [B, {expected[0]}, {expected[1]}], got {x.shape}")

    def logits(self, x: Union[Tensor, np.ndarray]) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        self.check_input(x)
        out = relu(self.stem_bn(self.stem_conv(x)))
        out = maxpool1d(out, STEM_POOL_KERNEL, STEM_POOL_STRIDE)
        for block in self.blocks:
            out = block(out)
        pooled = concat([adaptive_pool(out, "avg"), adaptive_pool(out, "max")], axis=1)
        return self.fc(flatten(pooled))

    def forward(self, x: Union[Tensor, np.ndarray]) -> Tensor:
        return sigmoid(self.logits(x))

    def predict_proba(self, x: np.ndarray, batch_size: Optional[int] = None) -> np.ndarray:
        """Eval-mode probabilities without recording a tape; restores the previous mode."""
        batch_size = batch_size or flags.EVAL_BATCH_SIZE
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                parts = [self.forward(x[start:stop]).data for start, stop in chunks(len(x), batch_size)]
        finally:
            if was_training:
                self.train()
        if not parts:
            return np.zeros((0, self.config.n_classes))
        return np.concatenate(parts, axis=0)


def build_network(cfg: ModelConfig, seed: int = 0, keys: Sequence[int] = ()) -> EcgResNet:
    """
    Build the residual network with deterministic initialization.

    Args:
        cfg: Architecture configuration
        seed: Run seed; init and dropout draw from separate streams
        keys: Extra stream keys (cross-validation round)

    Returns:
        EcgResNet in train mode

    Raises:
        ShapeError: If nsteps is too short for the downsampling chain
    """
    lengths = stage_lengths(cfg)
    if min(lengths) < 1:
        raise ShapeError(
            f"nsteps={cfg.nsteps} too short for {cfg.n_blocks} blocks (stage lengths {lengths})"
        )
    net = EcgResNet(cfg, spawn_rng(seed, "init", *keys))
    net.seed_dropout(spawn_rng(seed, "dropout", *keys))
    logger.info(
        f"Built network: {cfg.n_leads} leads x {cfg.nsteps} steps, blocks {cfg.block_channels}, "
        f"{net.num_parameters()} parameters"
    )
    return net


def forward_network(net: EcgResNet, x: Union[Tensor, np.ndarray],
                    mode: Literal["train", "eval"] = "eval") -> Tensor:
    """Set the mode, then run the forward pass."""
    if mode == "train":
        net.train()
    elif mode == "eval":
        net.eval()
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return net(x)
