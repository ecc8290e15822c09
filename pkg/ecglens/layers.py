"""
Neural network modules for ECGLens
Parameter containers with train/eval modes built on the autodiff primitives
"""
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .autodiff import Tensor, batchnorm1d, conv1d, dropout, linear
from .errors import CheckpointError, ShapeError


class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Fan-in scaled uniform initialization, bound 1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """
    Base class for layers and networks.

    Parameters, buffers (non-trainable arrays such as running statistics)
    and sub-modules are registered on attribute assignment, in order.
    """

    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        super().__setattr__(name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        array = np.array(value, dtype=np.float64)
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._parameters.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", True)
        return self

    def eval(self) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", False)
        return self

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Copies of every parameter and buffer, parameters first."""
        state = OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())
        state.update((name, b.copy()) for name, b in self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        """
        Copy arrays into parameters and buffers in place.

        Raises:
            CheckpointError: Unknown or missing tensor names
            ShapeError: Shape disagreement for a known name
        """
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(self.named_buffers())
        unknown = sorted(set(state) - set(targets))
        if unknown:
            raise CheckpointError(f"unknown tensor name(s): {unknown}")
        missing = sorted(set(targets) - set(state))
        if missing:
            raise CheckpointError(f"missing tensor(s): {missing}")
        for name, array in state.items():
            target = targets[name]
            if target.shape != tuple(np.shape(array)):
                raise ShapeError(f"tensor {name}: expected shape {target.shape}, got {np.shape(array)}")
            target[...] = array

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size
        self.weight = Parameter(uniform_init(rng, (out_channels, in_channels, kernel_size), fan_in))
        self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm1d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm1d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                           training=self.training, momentum=self.momentum, eps=self.eps)


class Dropout(Module):
    """Inverted dropout; draws from the generator assigned to .rng."""

    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p
        self.rng: Optional[np.random.Generator] = None

    def forward(self, x: Tensor) -> Tensor:
        return dropout(x, self.p, self.training, self.rng)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ShapeError(f"linear layer needs positive sizes, got {in_features} -> {out_features}")
        self.weight = Parameter(uniform_init(rng, (out_features, in_features), in_features))
        self.bias = Parameter(uniform_init(rng, (out_features,), in_features))

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)
