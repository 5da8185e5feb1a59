"""Trainable MLP approximators of the distance fields, with input gradients.

Architecture: 5 hidden GELU layers (width 256 by default) with the input
re-concatenated before hidden layers 2 and 4, linear output, inverted dropout
on hidden activations. Losses are MSE to the exact oracle plus an Eikonal
penalty pulling the configuration-gradient norm to one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .oracle import ContactDB, SelfCollisionDB, cell_cdf, scdf_values

_SKIP_LAYERS = (2, 4)  # input re-concatenated before these hidden layers (1-based)
N_HIDDEN = 5


@dataclass
class TrainConfig:
    lr: float = 2e-4
    iterations: int = 10000
    batch_configs: int = 10
    batch_points: int = 50
    lam: float = 0.05
    seed: int = 0
    val_every: int = 500
    val_size: int = 5000


class CdfMlp(torch.nn.Module):
    """MLP f(x) with explicit dropout masks; x is normalized to [-1, 1] internally."""

    def __init__(self, input_dim: int, width: int = 256, dropout_rate: float = 0.1,
                 input_lo=None, input_hi=None, dtype=torch.float32, seed: int = 0):
        super().__init__()
        self.input_dim = input_dim
        self.width = width
        self.dropout_rate = float(dropout_rate)
        lo = np.full(input_dim, -1.0) if input_lo is None else np.asarray(input_lo, dtype=float)
        hi = np.full(input_dim, 1.0) if input_hi is None else np.asarray(input_hi, dtype=float)
        self.register_buffer("in_center", torch.tensor((lo + hi) / 2.0, dtype=dtype))
        self.register_buffer("in_half", torch.tensor((hi - lo) / 2.0, dtype=dtype))
        torch.manual_seed(seed)
        dims_in = []
        for layer in range(1, N_HIDDEN + 1):
            if layer == 1:
                dims_in.append(input_dim)
            elif layer in _SKIP_LAYERS:
                dims_in.append(width + input_dim)
            else:
                dims_in.append(width)
        self.hidden = torch.nn.ModuleList(
            [torch.nn.Linear(d, width) for d in dims_in])
        self.out = torch.nn.Linear(width, 1)
        self.to(dtype)
        self._dtype = dtype
        self.history = []

    def forward(self, x: torch.Tensor, masks=None) -> torch.Tensor:
        """masks: optional per-layer activation masks, each broadcastable to (B, width)."""
        xn = (x - self.in_center) / self.in_half
        h = xn
        for i, lin in enumerate(self.hidden):
            layer = i + 1
            if layer in _SKIP_LAYERS:
                h = torch.cat([h, xn], dim=1)
            h = torch.nn.functional.gelu(lin(h))
            if masks is not None and masks[i] is not None:
                h = h * masks[i]
        return self.out(h).squeeze(-1)

    def unit_masks(self, generator) -> list[torch.Tensor]:
        """One inverted-dropout mask per hidden layer, shared across a batch."""
        if self.dropout_rate <= 0.0:
            return [None] * N_HIDDEN
        keep = 1.0 - self.dropout_rate
        return [
            (torch.rand(self.width, generator=generator, dtype=self._dtype) < keep).to(self._dtype) / keep
            for _ in range(N_HIDDEN)
        ]

    def element_masks(self, batch: int, generator) -> list[torch.Tensor]:
        if self.dropout_rate <= 0.0:
            return [None] * N_HIDDEN
        keep = 1.0 - self.dropout_rate
        return [
            (torch.rand(batch, self.width, generator=generator, dtype=self._dtype) < keep).to(self._dtype) / keep
            for _ in range(N_HIDDEN)
        ]


def forward_with_grad(model: CdfMlp, X: np.ndarray, masks=None):
    """Deterministic values and exact input gradients of the (masked) network."""
    xt = torch.tensor(np.atleast_2d(X), dtype=model._dtype, requires_grad=True)
    y = model(xt, masks=masks)
    (grad,) = torch.autograd.grad(y.sum(), xt)
    return y.detach().numpy(), grad.numpy()


def predict(model: CdfMlp, X: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return model(torch.tensor(np.atleast_2d(X), dtype=model._dtype)).numpy()


def mc_realizations(model: CdfMlp, X: np.ndarray, M2: int, seed: int = 0):
    """M2 stochastic passes; realization i applies one fresh unit mask to the batch.

    Returns (values (M2, B), grads (M2, B, D)). With dropout_rate=0 all
    realizations equal the deterministic forward pass.
    """
    if M2 < 1:
        raise ValueError("M2 >= 1 required")
    gen = torch.Generator().manual_seed(seed)
    X = np.atleast_2d(X)
    vals = np.empty((M2, X.shape[0]))
    grads = np.empty((M2, X.shape[0], X.shape[1]))
    for i in range(M2):
        masks = model.unit_masks(gen)
        v, g = forward_with_grad(model, X, masks=masks)
        vals[i] = v
        grads[i] = g
    return vals, grads


def _loss_terms(model, xt, targets, q_slice, lam, masks):
    xt.requires_grad_(True)
    y = model(xt, masks=masks)
    (grad,) = torch.autograd.grad(y.sum(), xt, create_graph=True)
    grad_q = grad[:, q_slice]
    mse = ((y - targets) ** 2).mean()
    eik = ((grad_q.norm(dim=1) - 1.0) ** 2).mean()
    return mse + lam * eik, mse, eik


def train_env_cdf(db: ContactDB, arm, cfg: TrainConfig, width: int = 256,
                  dropout_rate: float = 0.1, dtype=torch.float32) -> CdfMlp:
    """Fit the environment CDF on (point, config) batches drawn from the database."""
    reach_cells = db.reachable_cells()
    if reach_cells.size == 0:
        raise ValueError("contact database has no reachable cells")
    m = arm.m
    lo = np.concatenate([db.lo, arm.joint_limits_lo])
    hi = np.concatenate([db.hi, arm.joint_limits_hi])
    model = CdfMlp(input_dim=2 + m, width=width, dropout_rate=dropout_rate,
                   input_lo=lo, input_hi=hi, dtype=dtype, seed=cfg.seed)
    nodes = db.grid_points()
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 1)

    val_X, val_y = _env_holdout(db, arm, cfg, reach_cells, nodes, seed=cfg.seed + 2)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    q_slice = slice(2, 2 + m)

    for it in range(1, cfg.iterations + 1):
        cells = rng.choice(reach_cells, size=cfg.batch_points, replace=True)
        Q = rng.uniform(arm.joint_limits_lo, arm.joint_limits_hi, size=(cfg.batch_configs, m))
        X = np.empty((cfg.batch_points * cfg.batch_configs, 2 + m))
        y = np.empty(cfg.batch_points * cfg.batch_configs)
        for a, cell in enumerate(cells):
            rows = slice(a * cfg.batch_configs, (a + 1) * cfg.batch_configs)
            X[rows, :2] = nodes[cell]
            X[rows, 2:] = Q
            y[rows] = cell_cdf(db, int(cell), Q)
        xt = torch.tensor(X, dtype=model._dtype)
        yt = torch.tensor(y, dtype=model._dtype)
        masks = model.element_masks(xt.shape[0], gen)
        loss, mse, eik = _loss_terms(model, xt, yt, q_slice, cfg.lam, masks)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite training loss at iteration {it}: {loss}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        rec = {"iter": it, "loss": float(loss.detach()), "mse": float(mse.detach()), "eik": float(eik.detach())}
        if it % cfg.val_every == 0 or it == cfg.iterations:
            rec["val_mae"] = float(np.mean(np.abs(predict(model, val_X) - val_y)))
        model.history.append(rec)
    return model


def _env_holdout(db, arm, cfg, reach_cells, nodes, seed):
    rng = np.random.default_rng(seed)
    cells = rng.choice(reach_cells, size=cfg.val_size, replace=True)
    Q = rng.uniform(arm.joint_limits_lo, arm.joint_limits_hi, size=(cfg.val_size, arm.m))
    X = np.concatenate([nodes[cells], Q], axis=1)
    y = np.empty(cfg.val_size)
    order = np.argsort(cells, kind="stable")
    for idx in order:  # group queries by cell for speed
        y[idx] = cell_cdf(db, int(cells[idx]), Q[idx][None, :])[0]
    return X, y


def train_scdf(db: SelfCollisionDB, cfg: TrainConfig, width: int = 256,
               dropout_rate: float = 0.1, dtype=torch.float32) -> CdfMlp:
    """Fit the self-collision CDF on uniformly sampled configurations."""
    if db.empty:
        raise ValueError("self-collision database is empty")
    arm = db.arm
    m = arm.m
    model = CdfMlp(input_dim=m, width=width, dropout_rate=dropout_rate,
                   input_lo=arm.joint_limits_lo, input_hi=arm.joint_limits_hi,
                   dtype=dtype, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    batch = cfg.batch_configs * cfg.batch_points

    val_rng = np.random.default_rng(cfg.seed + 2)
    val_X = val_rng.uniform(arm.joint_limits_lo, arm.joint_limits_hi, size=(cfg.val_size, m))
    val_y = scdf_values(db, val_X)

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    for it in range(1, cfg.iterations + 1):
        Q = rng.uniform(arm.joint_limits_lo, arm.joint_limits_hi, size=(batch, m))
        y = scdf_values(db, Q)
        xt = torch.tensor(Q, dtype=model._dtype)
        yt = torch.tensor(y, dtype=model._dtype)
        masks = model.element_masks(batch, gen)
        loss, mse, eik = _loss_terms(model, xt, yt, slice(0, m), cfg.lam, masks)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite training loss at iteration {it}: {loss}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        rec = {"iter": it, "loss": float(loss.detach()), "mse": float(mse.detach()), "eik": float(eik.detach())}
        if it % cfg.val_every == 0 or it == cfg.iterations:
            rec["val_mae"] = float(np.mean(np.abs(predict(model, val_X) - val_y)))
        model.history.append(rec)
    return model


def history_to_csv(model: CdfMlp, path) -> None:
    import csv

    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["iter", "loss", "mse", "eik", "val_mae"])
        w.writeheader()
        for rec in model.history:
            w.writerow({**{"val_mae": ""}, **rec})


def save_model(model: CdfMlp, path) -> None:
    payload = {
        "version": 1,
        "kind": "cdf_mlp",
        "input_dim": model.input_dim,
        "width": model.width,
        "dropout_rate": model.dropout_rate,
        "skip_layers": list(_SKIP_LAYERS),
        "activation": "gelu_exact",
        "dtype": str(model._dtype).replace("torch.", ""),
        "input_lo": (model.in_center - model.in_half).tolist(),
        "input_hi": (model.in_center + model.in_half).tolist(),
        "weights": {k: v.tolist() for k, v in model.state_dict().items()},
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_model(path) -> CdfMlp:
    with open(path) as f:
        d = json.load(f)
    if d.get("kind") != "cdf_mlp" or d.get("version") != 1:
        raise ValueError("not a version-1 cdf_mlp file")
    dtype = getattr(torch, d["dtype"])
    model = CdfMlp(input_dim=d["input_dim"], width=d["width"],
                   dropout_rate=d["dropout_rate"], input_lo=d["input_lo"],
                   input_hi=d["input_hi"], dtype=dtype)
    state = {k: torch.tensor(v, dtype=dtype) for k, v in d["weights"].items()}
    model.load_state_dict(state)
    return model


class NeuralEnvField:
    """Learned environment CDF as a barrier field over (point, config) inputs."""

    def __init__(self, model: CdfMlp, m: int | None = None):
        self.model = model
        self.m = model.input_dim - 2 if m is None else m

    def _inputs(self, points, q):
        points = np.atleast_2d(points)
        return np.concatenate([points, np.tile(q, (points.shape[0], 1))], axis=1)

    def values(self, points, q):
        return predict(self.model, self._inputs(points, q)).astype(float)

    def evaluate(self, points, q):
        X = self._inputs(points, q)
        vals, grads = forward_with_grad(self.model, X)
        return vals.astype(float), grads[:, 2:].astype(float), grads[:, :2].astype(float)

    def realizations(self, points, q, M2, seed):
        X = self._inputs(points, q)
        vals, grads = mc_realizations(self.model, X, M2, seed)
        return vals.astype(float), grads[:, :, 2:].astype(float), grads[:, :, :2].astype(float)

    def values_batch(self, points, Q):
        points = np.atleast_2d(points)
        Q = np.atleast_2d(Q)
        P = np.repeat(points, Q.shape[0], axis=0)
        X = np.concatenate([P, np.tile(Q, (points.shape[0], 1))], axis=1)
        return predict(self.model, X).reshape(points.shape[0], Q.shape[0]).astype(float)


class NeuralSelfField:
    """Learned self-collision CDF as a barrier field over configurations."""

    def __init__(self, model: CdfMlp):
        self.model = model

    def value(self, q):
        return float(predict(self.model, np.asarray(q, dtype=float)[None, :])[0])

    def evaluate(self, q):
        vals, grads = forward_with_grad(self.model, np.asarray(q, dtype=float)[None, :])
        return float(vals[0]), grads[0].astype(float)

    def realizations(self, q, M2, seed):
        vals, grads = mc_realizations(self.model, np.asarray(q, dtype=float)[None, :], M2, seed)
        return vals[:, 0].astype(float), grads[:, 0, :].astype(float)

    def values_batch(self, Q):
        return predict(self.model, np.atleast_2d(Q)).astype(float)
