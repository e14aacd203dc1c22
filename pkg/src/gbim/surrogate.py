"""Learned influence estimator for seed sets.

A seed set is encoded as a sparse n x m selection matrix, projected to an
n x d status matrix (non-seed users are zero rows), diffused once through
a global attention layer over all users, mean-pooled, and regressed to a
scalar by an MLP. The attention layer exists in two forms:

* ``gkamp_exact``: plain softmax attention, O(n^2), kept as the reference
  implementation for tests;
* ``gkamp_linear``: the same kernel approximated with positive random
  features, O(n) in users, which is what ``forward`` uses.

Both share one kernel, exp(q . k / sqrt(d)), by folding the softmax
temperature into the query/key projections. The MLP's last hidden
activation doubles as the feature vector consumed by the Bayesian linear
regression head in the optimization loop.

Training standardizes targets internally (raw influence counts can be in
the hundreds; a fresh head would otherwise spend most of the budget
learning the offset) and minimizes mean absolute error with Adam.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .diffusion import SeedSet
from .netdata import SocialGraph, ValidationError


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; message carries epoch and loss diagnostics."""


_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class TrainConfig:
    """Surrogate architecture and optimization settings."""

    d: int = 64
    t: int = 256
    hidden: tuple[int, ...] = (512, 1024, 1024, 1024)
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    weight_decay: float = 0.0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.d < 1 or self.t < 1 or not self.hidden:
            raise ValidationError("d, t and hidden sizes must be positive")
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("bad optimization settings")
        if self.weight_decay < 0:
            raise ValidationError("weight decay must be nonnegative")
        if self.dtype not in _DTYPES:
            raise ValidationError(f"unsupported dtype {self.dtype!r}")

    @property
    def basis_dim(self) -> int:
        return self.hidden[-1]


def prf_map(x: np.ndarray, prf_rows: np.ndarray) -> np.ndarray:
    """Positive random feature map of a d-vector.

    phi(x) = exp(-||x||^2 / 2) / sqrt(t) * [exp(w_1 . x), ..., exp(w_t . x)],
    whose inner products unbiasedly estimate exp(x . x'). Every coordinate
    is strictly positive. Computed in log space before exponentiating.
    """
    x = np.asarray(x, dtype=np.float64)
    prf_rows = np.asarray(prf_rows, dtype=np.float64)
    t = prf_rows.shape[0]
    logs = prf_rows @ x - 0.5 * float(x @ x) - 0.5 * math.log(t)
    return np.exp(logs)


def degree_features(social: SocialGraph) -> np.ndarray:
    """Per-user structural scalars used to seed node features, (n, 3):
    max-normalized in-degree, out-degree, and weighted out-degree (total
    outgoing edge weight, the user's one-hop influence mass)."""
    indeg = social.in_degree.astype(np.float64)
    outdeg = social.out_degree.astype(np.float64)
    mass = np.zeros(social.n)
    np.add.at(mass, social.sources, social.weights)
    return np.stack([indeg / max(indeg.max(), 1.0),
                     outdeg / max(outdeg.max(), 1.0),
                     mass / max(mass.max(), 1.0)], axis=1)


def _init_linear(layer: nn.Linear, gen: torch.Generator) -> None:
    # torch's default Linear init, drawn from an explicit generator so
    # construction never touches global RNG state
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=gen)
        if layer.bias is not None:
            layer.bias.uniform_(-bound, bound, generator=gen)


class InfluenceSurrogate(nn.Module):
    """GKAMP + MLP regressor over seed sets on a fixed (n users, m items) instance."""

    def __init__(self, n: int, m: int, config: TrainConfig,
                 node_structure: np.ndarray | None = None):
        super().__init__()
        if n < 1 or m < 1:
            raise ValidationError("need at least one user and one item")
        self.n = int(n)
        self.m = int(m)
        self.config = config
        dtype = _DTYPES[config.dtype]
        d = config.d
        gen = torch.Generator().manual_seed(config.seed)

        self.item_encoder = nn.Parameter(
            torch.randn(m, d, generator=gen, dtype=dtype) * 0.1)
        # node features: small random values concatenated with structural
        # degree scalars, projected back to width d; trained jointly
        if node_structure is None:
            structure = torch.zeros(n, 3, dtype=dtype)
        else:
            structure = torch.as_tensor(np.asarray(node_structure), dtype=dtype)
            if structure.ndim != 2 or structure.shape[0] != n:
                raise ValidationError("node_structure must be (n, scalars)")
        width = structure.shape[1]
        base = torch.cat(
            [torch.randn(n, d, generator=gen, dtype=dtype) * 0.1, structure], dim=1)
        proj = torch.randn(d + width, d, generator=gen, dtype=dtype) / math.sqrt(d + width)
        self.node_features = nn.Parameter(base @ proj)

        scale = 1.0 / math.sqrt(d)
        self.w_query = nn.Parameter(torch.randn(d, d, generator=gen, dtype=dtype) * scale)
        self.w_key = nn.Parameter(torch.randn(d, d, generator=gen, dtype=dtype) * scale)
        self.w_value = nn.Parameter(torch.randn(d, d, generator=gen, dtype=dtype) * scale)
        # PRF projection rows: sampled from N(0, I) once, never trained
        self.register_buffer("prf_rows",
                             torch.randn(config.t, d, generator=gen, dtype=dtype))

        layers: list[nn.Module] = []
        widths = (d,) + config.hidden
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            lin = nn.Linear(fan_in, fan_out, dtype=dtype)
            _init_linear(lin, gen)
            layers += [lin, nn.ReLU()]
        self.hidden_net = nn.Sequential(*layers)
        self.head = nn.Linear(config.hidden[-1], 1, dtype=dtype)
        _init_linear(self.head, gen)

        self.register_buffer("target_mean", torch.zeros((), dtype=dtype))
        self.register_buffer("target_scale", torch.ones((), dtype=dtype))
        self.register_buffer("target_stats_set", torch.zeros((), dtype=torch.bool))

    # -- building blocks ----------------------------------------------------

    def encode_seeds(self, seed_sets: list[SeedSet]) -> torch.Tensor:
        """Status matrices X = S E, stacked to (batch, n, d)."""
        dtype = self.item_encoder.dtype
        batch = len(seed_sets)
        x = torch.zeros(batch, self.n, self.config.d, dtype=dtype)
        b_idx, u_idx, v_idx = [], [], []
        for b, ss in enumerate(seed_sets):
            ss.validate_against(self.n, self.m)
            for u, v in ss.pairs:
                b_idx.append(b)
                u_idx.append(u)
                v_idx.append(v)
        if b_idx:
            x[b_idx, u_idx] = self.item_encoder[v_idx]
        return x

    def _queries_keys(self) -> tuple[torch.Tensor, torch.Tensor]:
        # d**-0.25 on each side puts the 1/sqrt(d) softmax temperature
        # inside the projections, so exact softmax and the PRF path
        # approximate the same kernel exp(q . k)
        temp = self.config.d ** -0.25
        q = (self.node_features @ self.w_query) * temp
        k = (self.node_features @ self.w_key) * temp
        return q, k

    def _prf_log(self, x: torch.Tensor) -> torch.Tensor:
        return (x @ self.prf_rows.T
                - 0.5 * (x * x).sum(-1, keepdim=True)
                - 0.5 * math.log(self.config.t))

    def gkamp_exact(self, x: torch.Tensor) -> torch.Tensor:
        """Softmax attention reference, O(n^2); testing only."""
        q, k = self._queries_keys()
        attn = torch.softmax(q @ k.T, dim=-1)
        return torch.einsum("ij,bjd->bid", attn, x @ self.w_value)

    def gkamp_linear(self, x: torch.Tensor) -> torch.Tensor:
        """PRF-linearized attention; never materializes an n x n matrix.

        Log features are shifted before exponentiation (per query row, and
        globally for keys); both shifts cancel in the normalization ratio.
        """
        q, k = self._queries_keys()
        log_q = self._prf_log(q)
        log_k = self._prf_log(k)
        phi_q = torch.exp(log_q - log_q.max(dim=-1, keepdim=True).values)
        phi_k = torch.exp(log_k - log_k.max())
        values = x @ self.w_value                            # (b, n, d)
        kv = torch.einsum("nt,bnd->btd", phi_k, values)      # shared summation
        num = torch.einsum("nt,btd->bnd", phi_q, kv)
        den = phi_q @ phi_k.sum(dim=0)                       # (n,)
        if not bool((den > 0).all()):
            raise AssertionError("attention normalizer must be positive")
        return num / den[None, :, None]

    # -- inference ------------------------------------------------------

    def forward(self, seed_sets: list[SeedSet]) -> tuple[torch.Tensor, torch.Tensor]:
        """(predictions, basis vectors) for a batch of seed sets.

        Residual update Z = X + GKAMP(X), column-wise mean pooling over
        users, MLP; the last hidden activation is the basis vector.
        """
        x = self.encode_seeds(seed_sets)
        z = x + self.gkamp_linear(x)
        pooled = z.mean(dim=1)
        basis = self.hidden_net(pooled)
        pred = self.head(basis).squeeze(-1)
        return pred * self.target_scale + self.target_mean, basis

    @torch.no_grad()
    def predict(self, seed_sets: list[SeedSet]) -> np.ndarray:
        pred, _ = self(seed_sets)
        return pred.double().numpy()

    @torch.no_grad()
    def bases(self, seed_sets: list[SeedSet], batch_size: int = 256) -> np.ndarray:
        """Basis vectors phi(x), (batch, basis_dim), computed in chunks."""
        out = []
        for lo in range(0, len(seed_sets), batch_size):
            _, basis = self(seed_sets[lo:lo + batch_size])
            out.append(basis.double().numpy())
        return np.concatenate(out) if out else np.zeros((0, self.config.basis_dim))


def training_loss(model: InfluenceSurrogate, seed_sets: list[SeedSet],
                  targets: torch.Tensor) -> torch.Tensor:
    """Summed absolute error in the standardized target space."""
    pred, _ = model(seed_sets)
    pred_norm = (pred - model.target_mean) / model.target_scale
    target_norm = (targets - model.target_mean) / model.target_scale
    return (pred_norm - target_norm).abs().sum()


def train_surrogate(model: InfluenceSurrogate, seed_sets: list[SeedSet],
                    targets, epochs: int | None = None,
                    shuffle_seed: int = 0) -> dict:
    """Fit in place with Adam on the MAE objective; returns loss history.

    Target standardization statistics are frozen on the first call so the
    model can be warm-started on a grown dataset without invalidating the
    head it already learned.
    """
    if len(seed_sets) < 1:
        raise ValidationError("training needs at least one observation")
    if len(seed_sets) != len(targets):
        raise ValidationError("seed sets and targets differ in length")
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    dtype = _DTYPES[cfg.dtype]
    y = torch.as_tensor(np.asarray(targets, dtype=np.float64), dtype=dtype)
    if not bool(model.target_stats_set):
        with torch.no_grad():
            model.target_mean.copy_(y.mean())
            model.target_scale.copy_(torch.clamp(y.std(unbiased=False), min=1.0))
            model.target_stats_set.copy_(torch.tensor(True))

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                                 weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(shuffle_seed)
    n_obs = len(seed_sets)
    epoch_losses: list[float] = []
    model.train()
    for epoch in range(epochs):
        order = torch.randperm(n_obs, generator=gen).tolist()
        total_abs = 0.0
        for lo in range(0, n_obs, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            batch = [seed_sets[i] for i in idx]
            loss = training_loss(model, batch, y[idx])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch start {lo}: {loss.item()}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_abs += float(loss.detach())
        # report raw-scale mean absolute error
        epoch_losses.append(total_abs * float(model.target_scale) / n_obs)
    model.eval()
    return {"epochs": epochs, "losses": epoch_losses,
            "final_mae": epoch_losses[-1] if epoch_losses else math.nan}


# ---------------------------------------------------------------------------
# checkpoints: npz of flat arrays plus a json header, exact round trip
# ---------------------------------------------------------------------------


def save_checkpoint(model: InfluenceSurrogate, path) -> None:
    header = {"n": model.n, "m": model.m, "config": asdict(model.config)}
    arrays = {f"state.{k}": v.detach().numpy()
              for k, v in model.state_dict().items()}
    np.savez(path, header=np.frombuffer(
        json.dumps(header).encode("utf-8"), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> InfluenceSurrogate:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode("utf-8"))
        cfg_dict = dict(header["config"])
        cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
        config = TrainConfig(**cfg_dict)
        model = InfluenceSurrogate(header["n"], header["m"], config)
        state = {k[len("state."):]: torch.as_tensor(v)
                 for k, v in data.items() if k.startswith("state.")}
    model.load_state_dict(state)
    model.eval()
    return model
