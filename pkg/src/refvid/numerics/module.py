"""Minimal parameter-container base for the trainable networks."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


class Parameter(Tensor):
    """A tensor that always participates in gradient recording."""

    def __init__(self, data):
        super().__init__(np.ascontiguousarray(np.asarray(data, dtype=np.float32)), requires_grad=True)


class Module:
    """Base class whose attributes define the parameter tree.

    Parameters and submodules are discovered from instance attributes in
    insertion order (lists of modules are walked by index), which makes
    checkpoint names stable: ``block.0.conv1.weight`` style dotted paths.
    """

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Parameter):
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
                    elif isinstance(item, Parameter):
                        out[f"{key}.{i}"] = item
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        if strict:
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            if missing or extra:
                raise ShapeError("load_state_dict", f"missing={missing} unexpected={extra}")
        for name, param in params.items():
            if name not in state:
                continue
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != param.data.shape:
                raise ShapeError(
                    "load_state_dict",
                    f"parameter '{name}' has shape {param.data.shape}, checkpoint has {arr.shape}")
            param.data = np.ascontiguousarray(arr)
