"""Finite-difference verification of the model's reverse-mode gradients.

Runs in float64 on a deliberately tiny model/graph so the central-difference
oracle is sharp.  The oracle never touches autograd: it re-evaluates the loss
at perturbed parameter values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .model import GraphSimulator, GraphTensors

GROUP_ERROR_FLOOR = 1e-8  # scales the error of groups whose gradient is ~0


@dataclass
class GradientReport:
    """Per-parameter-group agreement between autograd and central differences.

    ``max_rel_error`` is max |analytic - fd| over the group, divided by the
    larger of the group's peak |fd| gradient magnitude and a small floor, so
    groups with structurally tiny gradients do not produce spurious blowups.
    Frozen groups are listed with a zero gradient and no comparison.
    """

    epsilon: float
    groups: dict = field(default_factory=dict)

    def max_error(self) -> float:
        errs = [g["max_rel_error"] for g in self.groups.values() if g["trainable"]]
        return max(errs) if errs else 0.0

    def passed(self, tolerance: float) -> bool:
        return self.max_error() < tolerance

    def failures(self, tolerance: float) -> list[str]:
        return [name for name, g in self.groups.items()
                if g["trainable"] and g["max_rel_error"] >= tolerance]


def _loss(model: GraphSimulator, gt: GraphTensors, state: torch.Tensor,
          target: torch.Tensor) -> torch.Tensor:
    pred = model.forward_step(gt, state)
    return ((pred - target) ** 2).mean()


def gradient_check(model: GraphSimulator, gt: GraphTensors, state: torch.Tensor,
                   target: torch.Tensor, epsilon: float = 1e-5) -> GradientReport:
    """Compare autograd gradients of a scalar loss against central differences.

    Every named parameter tensor is one group; every element of every
    trainable group is perturbed individually (+/- epsilon).  The model must
    already be in float64 (``model.double()``).
    """
    if next(model.parameters()).dtype != torch.float64:
        raise ValueError("gradient_check requires a float64 model")
    state = state.double()
    target = target.double()

    model.zero_grad(set_to_none=True)
    loss = _loss(model, gt, state, target)
    loss.backward()

    report = GradientReport(epsilon=epsilon)
    for name, param in model.named_parameters():
        if not param.requires_grad:
            report.groups[name] = {
                "trainable": False, "max_rel_error": 0.0, "grad_norm": 0.0,
            }
            continue
        analytic = param.grad.detach().clone()
        fd = torch.zeros_like(analytic)
        flat = param.data.view(-1)
        fd_flat = fd.view(-1)
        with torch.no_grad():
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + epsilon
                up = _loss(model, gt, state, target).item()
                flat[k] = orig - epsilon
                down = _loss(model, gt, state, target).item()
                flat[k] = orig
                fd_flat[k] = (up - down) / (2.0 * epsilon)
        scale = max(float(fd.abs().max()), GROUP_ERROR_FLOOR)
        err = float((analytic - fd).abs().max()) / scale
        report.groups[name] = {
            "trainable": True,
            "max_rel_error": err,
            "grad_norm": float(analytic.norm()),
        }
    return report
