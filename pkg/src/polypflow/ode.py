"""Fixed-step Euler integration over t in [0, 1]."""
import json
import os
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np
import torch
from PIL import Image


class NonFiniteStateError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite value in ODE state at step {step}")
        self.step = step


@dataclass
class Trajectory:
    """States ``z_0 .. z_N`` at ``t_n = n / N`` and the N velocities between them."""

    states: List[torch.Tensor]
    times: List[float]
    velocities: List[torch.Tensor] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    @property
    def final(self) -> torch.Tensor:
        return self.states[-1]

    def __len__(self):
        return len(self.states)


def euler_integrate(velocity: Callable, x0: torch.Tensor, n_steps: int, check_finite: bool = True) -> Trajectory:
    """Integrate ``dz/dt = velocity(t, z)`` from ``z(0) = x0`` with ``n_steps`` uniform steps."""
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError(f"n_steps >= 1 required, got {n_steps}")
    n_steps = int(n_steps)
    if check_finite and not torch.isfinite(x0).all():
        raise NonFiniteStateError(0)
    dt = 1.0 / n_steps
    z = x0
    traj = Trajectory(states=[x0], times=[0.0])
    for n in range(n_steps):
        v = velocity(n / n_steps, z)
        z = z + v * dt
        if check_finite and not torch.isfinite(z).all():
            raise NonFiniteStateError(n + 1)
        traj.velocities.append(v)
        traj.states.append(z)
        traj.times.append((n + 1) / n_steps)
    return traj


def state_to_uint8(z: torch.Tensor) -> np.ndarray:
    """sigmoid(z) of a single H x W (or 1 x H x W) state as an 8-bit grayscale array."""
    p = torch.sigmoid(z.detach().to(torch.float64)).cpu().numpy().squeeze()
    return np.round(p * 255).astype(np.uint8)


def export_trajectory(traj: Trajectory, out_dir, index: int = 0) -> str:
    """Write one PNG per state plus ``index.json`` with ``{step, t, file}`` entries."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for n, (z, t) in enumerate(zip(traj.states, traj.times)):
        name = f"step_{n:03d}.png"
        Image.fromarray(state_to_uint8(z[index])).save(os.path.join(out_dir, name))
        entries.append({"step": n, "t": t, "file": name})
    path = os.path.join(out_dir, "index.json")
    with open(path, "w") as f:
        json.dump(entries, f, indent=2)
    return path
