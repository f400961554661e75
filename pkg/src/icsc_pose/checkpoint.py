"""Versioned checkpoint container: model config, parameters, Adam state, log-variances, seed.

Stored as an npz archive with a JSON metadata entry; array bits round-trip
losslessly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .network import ModelConfig
from .optim import Adam, AdamState

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict  # name -> np.ndarray
    adam: AdamState
    s_values: np.ndarray  # (s_x, s_q, s_c)
    seed: int
    loss_selector: str
    beta: float

    def save(self, path):
        meta = {
            "format_version": FORMAT_VERSION,
            "model_config": self.model_config.to_dict(),
            "adam": {
                "lr": self.adam.lr, "beta1": self.adam.beta1,
                "beta2": self.adam.beta2, "eps": self.adam.eps,
                "step": self.adam.step,
            },
            "seed": int(self.seed),
            "loss_selector": self.loss_selector,
            "beta": self.beta,
            "param_names": sorted(self.params),
            "moment_names": sorted(self.adam.m),
        }
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays.update({f"adam_m/{k}": v for k, v in self.adam.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in self.adam.v.items()})
        arrays["s_values"] = np.asarray(self.s_values)
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            if meta["format_version"] != FORMAT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['format_version']}")
            params = {k: z[f"param/{k}"] for k in meta["param_names"]}
            adam = AdamState(**meta["adam"])
            adam.m = {k: z[f"adam_m/{k}"] for k in meta["moment_names"]}
            adam.v = {k: z[f"adam_v/{k}"] for k in meta["moment_names"]}
            s_values = z["s_values"]
        return cls(
            model_config=ModelConfig.from_dict(meta["model_config"]),
            params=params,
            adam=adam,
            s_values=s_values,
            seed=meta["seed"],
            loss_selector=meta["loss_selector"],
            beta=meta["beta"],
        )

    @classmethod
    def from_optimizer(cls, model_config, optimizer: Adam, seed, loss_selector, beta) -> "Checkpoint":
        params = {}
        s_values = np.zeros(3)
        for name, tensor in optimizer.params.items():
            if name == "s":
                s_values = tensor.data.copy()
            else:
                params[name] = tensor.data.copy()
        state = AdamState(
            lr=optimizer.state.lr, beta1=optimizer.state.beta1,
            beta2=optimizer.state.beta2, eps=optimizer.state.eps,
            step=optimizer.state.step,
            m={k: v.copy() for k, v in optimizer.state.m.items()},
            v={k: v.copy() for k, v in optimizer.state.v.items()},
        )
        return cls(model_config, params, state, s_values, seed, loss_selector, beta)
