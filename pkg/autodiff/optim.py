"""
Adam optimizer with parameter groups.
Each group carries its own learning rate so the fitter can train triplanes and
the shared decoder at different rates from one optimizer.
"""

from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from autodiff.tensor import Tensor

ParamGroups = Union[Sequence[Tensor], Sequence[Dict[str, Any]]]


class Adam:
    def __init__(self, params: ParamGroups, lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        params = list(params)
        if params and isinstance(params[0], dict):
            self.param_groups = [{"params": list(g["params"]), "lr": float(g.get("lr", lr))}
                                 for g in params]
        else:
            self.param_groups = [{"params": params, "lr": float(lr)}]
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m: List[List[np.ndarray]] = [[np.zeros_like(p.data) for p in g["params"]]
                                          for g in self.param_groups]
        self.v: List[List[np.ndarray]] = [[np.zeros_like(p.data) for p in g["params"]]
                                          for g in self.param_groups]

    def zero_grad(self) -> None:
        for group in self.param_groups:
            for p in group["params"]:
                p.zero_grad()

    def set_lr(self, lr: float, group: int = None) -> None:
        groups = self.param_groups if group is None else [self.param_groups[group]]
        for g in groups:
            g["lr"] = float(lr)

    def step(self) -> None:
        """One Adam update on every parameter that received a gradient."""
        self.step_count += 1
        b1, b2 = self.betas
        correction1 = 1.0 - b1 ** self.step_count
        correction2 = 1.0 - b2 ** self.step_count

        for gi, group in enumerate(self.param_groups):
            lr = group["lr"]
            for pi, p in enumerate(group["params"]):
                if p.grad is None:
                    continue
                g = p.grad
                m = self.m[gi][pi]
                v = self.v[gi][pi]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                update = lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
                p.data = (p.data - update).astype(p.dtype)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {"step": np.array([self.step_count], dtype=np.float32)}
        for gi, group in enumerate(self.param_groups):
            state[f"lr.{gi}"] = np.array([group["lr"]], dtype=np.float32)
            for pi in range(len(group["params"])):
                state[f"m.{gi}.{pi}"] = self.m[gi][pi]
                state[f"v.{gi}.{pi}"] = self.v[gi][pi]
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.step_count = int(np.asarray(state["step"]).reshape(-1)[0])
        for gi, group in enumerate(self.param_groups):
            if f"lr.{gi}" in state:
                group["lr"] = float(np.asarray(state[f"lr.{gi}"]).reshape(-1)[0])
            for pi, p in enumerate(group["params"]):
                self.m[gi][pi] = np.asarray(state[f"m.{gi}.{pi}"], dtype=p.dtype).reshape(p.shape).copy()
                self.v[gi][pi] = np.asarray(state[f"v.{gi}.{pi}"], dtype=p.dtype).reshape(p.shape).copy()
