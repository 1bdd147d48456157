"""Latent factor model, objective, analytic gradients, and training.

Training is full-batch gradient descent: each epoch computes the exact
gradient of the objective for every user and item factor from the
current state and applies both updates synchronously. The objective is

    0.5 * sum of squared residuals over observed ratings
  + 0.5 * lambda_u * ||U||_F^2  +  0.5 * lambda_v * ||V||_F^2
  + 0.5 * lambda_t * sum over users of || U_u - Uhat_u ||^2

where Uhat_u is the influence-weighted sum of the other users' factors
(zero vector for users with no influence entries, which turns the last
term into an extra ridge on those rows).

With lambda_t = 0 this reduces exactly to the plain ridge-regularized
factorization implemented standalone in train_baseline.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .data import RatingStore
from .errors import ColdStartError, ModelFormatError, TrainingDiverged
from .ioutil import atomic_write
from .similarity import InfluenceMatrix

MODEL_FORMAT_VERSION = 1

EpochCallback = Callable[[int, float, float, "FactorModel"], None]


@dataclass
class Hyperparams:
    """Training configuration; defaults follow the tuned optima."""

    k: int = 20
    lambda_u: float = 0.005
    lambda_v: float = 0.005
    lambda_t: float = 0.05
    alpha: float = 0.4
    gamma: float = 0.01
    epochs: int = 10
    seed: int = 42
    init_sigma: float = 0.1
    clamp_predictions: bool = True
    normalize_influence_rows: bool = False

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.init_sigma < 0:
            raise ValueError(f"init_sigma must be nonnegative, got {self.init_sigma}")
        if min(self.lambda_u, self.lambda_v, self.lambda_t) < 0:
            raise ValueError("regularization strengths must be nonnegative")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass
class FactorModel:
    """User and item factor matrices plus the id maps they were trained on."""

    user_factors: np.ndarray  # m x k
    item_factors: np.ndarray  # n x k
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    global_mean: float
    scale: tuple[float, float]
    user_pos: dict[str, int] = field(init=False, repr=False)
    item_pos: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.user_pos = {u: k for k, u in enumerate(self.user_ids)}
        self.item_pos = {i: k for k, i in enumerate(self.item_ids)}

    @property
    def m(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n(self) -> int:
        return self.item_factors.shape[0]

    @property
    def k(self) -> int:
        return self.user_factors.shape[1]

    def predict_index(self, u: int, i: int, clamp: bool = True) -> float:
        value = float(self.user_factors[u] @ self.item_factors[i])
        if clamp:
            value = min(max(value, self.scale[0]), self.scale[1])
        return value

    def predict(
        self,
        user_id: str,
        item_id: str,
        clamp: bool = True,
        on_unknown: str = "mean",
    ) -> float:
        """Predicted rating for external ids.

        Unknown users or items are a cold start: with ``on_unknown="mean"``
        the clamped global training mean is returned, with ``"raise"`` a
        ColdStartError is raised so the caller can pick its own fallback.
        """
        u = self.user_pos.get(user_id)
        i = self.item_pos.get(item_id)
        if u is None or i is None:
            if on_unknown == "raise":
                raise ColdStartError(
                    f"unknown {'user' if u is None else 'item'}: "
                    f"{user_id if u is None else item_id}"
                )
            value = self.global_mean
            return min(max(value, self.scale[0]), self.scale[1])
        return self.predict_index(u, i, clamp)


def init_factors(
    m: int, n: int, k: int, seed: int, init_sigma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded zero-mean Gaussian initialization of both factor matrices."""
    if m < 1 or n < 1 or k < 1:
        raise ValueError(f"dimensions must be positive, got m={m}, n={n}, k={k}")
    rng = np.random.default_rng(seed)
    user_factors = rng.normal(0.0, init_sigma, size=(m, k))
    item_factors = rng.normal(0.0, init_sigma, size=(n, k))
    return user_factors, item_factors


class _SocialTerm:
    """Merged influence entries as flat arrays, ready for vectorized use.

    With row normalization each target's incoming weights are divided by
    their sum (rows summing to zero are left untouched)."""

    def __init__(
        self, influence: Optional[InfluenceMatrix], m: int, normalize: bool
    ):
        merged = influence.merged() if influence is not None else {}
        keys = sorted(merged)
        self.src = np.array([k[0] for k in keys], dtype=np.int64)
        self.dst = np.array([k[1] for k in keys], dtype=np.int64)
        self.w = np.array([merged[k] for k in keys], dtype=np.float64)
        self.m = m
        if normalize and len(keys):
            row_sum = np.zeros(m)
            np.add.at(row_sum, self.dst, self.w)
            denom = row_sum[self.dst]
            safe = denom != 0.0
            self.w = np.where(safe, self.w / np.where(safe, denom, 1.0), self.w)

    def estimates(self, user_factors: np.ndarray) -> np.ndarray:
        """Weighted neighbor sums, one row per target user."""
        out = np.zeros_like(user_factors)
        if len(self.src):
            np.add.at(out, self.dst, self.w[:, None] * user_factors[self.src])
        return out

    def pullback(self, deficit: np.ndarray) -> np.ndarray:
        """Transpose action: route each target's deficit back to sources."""
        out = np.zeros_like(deficit)
        if len(self.src):
            np.add.at(out, self.src, self.w[:, None] * deficit[self.dst])
        return out


def _merged_row_weights(
    influence: Optional[InfluenceMatrix], m: int, normalize: bool
) -> dict[tuple[int, int], float]:
    """Merged (source, target) -> weight map with optional row normalization."""
    merged = influence.merged() if influence is not None else {}
    if not normalize:
        return dict(merged)
    row_sum: dict[int, float] = {}
    for (_, t), w in merged.items():
        row_sum[t] = row_sum.get(t, 0.0) + w
    return {
        key: (w / row_sum[key[1]] if row_sum[key[1]] != 0.0 else w)
        for key, w in merged.items()
    }


def social_estimate(
    u: int,
    influence: Optional[InfluenceMatrix],
    user_factors: np.ndarray,
    domain: Optional[str] = None,
    normalize: bool = False,
) -> np.ndarray:
    """Influence-weighted combination of the other users' factors for
    target ``u``; the zero vector when no entries exist.

    With ``normalize`` the kept weights are divided by their sum (skipped
    when the sum is zero)."""
    k = user_factors.shape[1]
    if influence is None:
        return np.zeros(k)
    sources = influence.sources_of(u, domain)
    if not sources:
        return np.zeros(k)
    weights = [w for _, w in sources]
    if normalize:
        total = sum(weights)
        if total != 0.0:
            weights = [w / total for w in weights]
    out = np.zeros(k)
    for (s, _), w in zip(sources, weights):
        out += w * user_factors[s]
    return out


def objective(
    model: FactorModel,
    train: RatingStore,
    influence: Optional[InfluenceMatrix],
    h: Hyperparams,
) -> float:
    """Regularized squared-error objective at the model's current state."""
    rows, cols, vals = train.arrays()
    U, V = model.user_factors, model.item_factors
    preds = np.einsum("ij,ij->i", U[rows], V[cols])
    err = preds - vals
    value = 0.5 * float(err @ err)
    value += 0.5 * h.lambda_u * float(np.sum(U * U))
    value += 0.5 * h.lambda_v * float(np.sum(V * V))
    if h.lambda_t != 0.0:
        social = _SocialTerm(influence, model.m, h.normalize_influence_rows)
        deficit = U - social.estimates(U)
        value += 0.5 * h.lambda_t * float(np.sum(deficit * deficit))
    return value


def gradient_user(
    model: FactorModel,
    train: RatingStore,
    influence: Optional[InfluenceMatrix],
    h: Hyperparams,
    u: int,
) -> np.ndarray:
    """Exact objective gradient with respect to one user's factor row.

    Besides the data residuals and the ridge, the social part contains
    the user's own deficit from its neighbor estimate plus the reflected
    deficits of every target the user feeds into."""
    U, V = model.user_factors, model.item_factors
    g = h.lambda_u * U[u].copy()
    for i, r in train.user_ratings(u):
        g += V[i] * (float(U[u] @ V[i]) - r)
    if h.lambda_t != 0.0:
        normalize = h.normalize_influence_rows
        weights = _merged_row_weights(influence, model.m, normalize)
        own = U[u] - social_estimate(u, influence, U, None, normalize)
        g += h.lambda_t * own
        for (s, t), w in weights.items():
            if s != u:
                continue
            deficit = U[t] - social_estimate(t, influence, U, None, normalize)
            g -= h.lambda_t * w * deficit
    return g


def gradient_item(
    model: FactorModel, train: RatingStore, h: Hyperparams, i: int
) -> np.ndarray:
    """Exact objective gradient with respect to one item's factor row."""
    U, V = model.user_factors, model.item_factors
    g = h.lambda_v * V[i].copy()
    for u, r in train.item_ratings(i):
        g += U[u] * (float(U[u] @ V[i]) - r)
    return g


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    objective: float
    train_rmse: float


def _data_gradients(
    U: np.ndarray,
    V: np.ndarray,
    rows: np.ndarray,
    cols: np.ndarray,
    vals: np.ndarray,
    lambda_u: float,
    lambda_v: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual-plus-ridge gradients for both factor matrices."""
    preds = np.einsum("ij,ij->i", U[rows], V[cols])
    err = preds - vals
    grad_u = lambda_u * U
    np.add.at(grad_u, rows, err[:, None] * V[cols])
    grad_v = lambda_v * V
    np.add.at(grad_v, cols, err[:, None] * U[rows])
    return grad_u, grad_v, err


def _epoch_stats(
    U: np.ndarray,
    V: np.ndarray,
    rows: np.ndarray,
    cols: np.ndarray,
    vals: np.ndarray,
    lambda_u: float,
    lambda_v: float,
    lambda_t: float,
    social: Optional[_SocialTerm],
) -> tuple[float, float]:
    preds = np.einsum("ij,ij->i", U[rows], V[cols])
    err = preds - vals
    obj = 0.5 * float(err @ err)
    obj += 0.5 * lambda_u * float(np.sum(U * U))
    obj += 0.5 * lambda_v * float(np.sum(V * V))
    if lambda_t != 0.0 and social is not None:
        deficit = U - social.estimates(U)
        obj += 0.5 * lambda_t * float(np.sum(deficit * deficit))
    rmse = float(np.sqrt(np.mean(err * err))) if len(err) else 0.0
    return obj, rmse


def _check_finite(obj: float, U: np.ndarray, V: np.ndarray, epoch: int) -> None:
    if not (np.isfinite(obj) and np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
        raise TrainingDiverged(
            epoch,
            f"objective became non-finite at epoch {epoch}; "
            f"try a smaller learning rate (gamma)",
        )


def train(
    train_store: RatingStore,
    influence: Optional[InfluenceMatrix],
    h: Hyperparams,
    on_epoch: Optional[EpochCallback] = None,
) -> tuple[FactorModel, list[EpochStats]]:
    """Full-batch gradient descent with the social regularizer.

    Returns the trained model and the per-epoch trace (objective after
    the update plus training RMSE). Deterministic given the seed. Raises
    TrainingDiverged when the objective stops being finite.
    """
    h.validate()
    U, V = init_factors(train_store.m, train_store.n, h.k, h.seed, h.init_sigma)
    rows, cols, vals = train_store.arrays()
    social = (
        _SocialTerm(influence, train_store.m, h.normalize_influence_rows)
        if h.lambda_t != 0.0
        else None
    )
    model = FactorModel(
        U, V, train_store.users, train_store.items,
        train_store.global_mean(), train_store.scale,
    )
    trace: list[EpochStats] = []
    for epoch in range(1, h.epochs + 1):
        grad_u, grad_v, _ = _data_gradients(
            U, V, rows, cols, vals, h.lambda_u, h.lambda_v
        )
        if social is not None:
            deficit = U - social.estimates(U)
            grad_u += h.lambda_t * deficit
            grad_u -= h.lambda_t * social.pullback(deficit)
        U -= h.gamma * grad_u
        V -= h.gamma * grad_v
        obj, rmse = _epoch_stats(
            U, V, rows, cols, vals, h.lambda_u, h.lambda_v, h.lambda_t, social
        )
        _check_finite(obj, U, V, epoch)
        trace.append(EpochStats(epoch, obj, rmse))
        if on_epoch is not None:
            on_epoch(epoch, obj, rmse, model)
    return model, trace


def train_baseline(
    train_store: RatingStore,
    h: Hyperparams,
    on_epoch: Optional[EpochCallback] = None,
) -> tuple[FactorModel, list[EpochStats]]:
    """Plain ridge-regularized factorization: no social term at all.

    Shares nothing with the social trainer beyond the init convention;
    training with lambda_t = 0 must reproduce it exactly.
    """
    h.validate()
    U, V = init_factors(train_store.m, train_store.n, h.k, h.seed, h.init_sigma)
    rows, cols, vals = train_store.arrays()
    model = FactorModel(
        U, V, train_store.users, train_store.items,
        train_store.global_mean(), train_store.scale,
    )
    trace: list[EpochStats] = []
    for epoch in range(1, h.epochs + 1):
        grad_u, grad_v, _ = _data_gradients(
            U, V, rows, cols, vals, h.lambda_u, h.lambda_v
        )
        U -= h.gamma * grad_u
        V -= h.gamma * grad_v
        obj, rmse = _epoch_stats(
            U, V, rows, cols, vals, h.lambda_u, h.lambda_v, 0.0, None
        )
        _check_finite(obj, U, V, epoch)
        trace.append(EpochStats(epoch, obj, rmse))
        if on_epoch is not None:
            on_epoch(epoch, obj, rmse, model)
    return model, trace


def save_model(model: FactorModel, h: Hyperparams, path: str) -> None:
    """Versioned container: one JSON header line, then the two factor
    matrices as row-major little-endian float64, checksummed."""
    payload = (
        model.user_factors.astype("<f8", copy=False).tobytes(order="C")
        + model.item_factors.astype("<f8", copy=False).tobytes(order="C")
    )
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "m": model.m,
        "n": model.n,
        "k": model.k,
        "hyperparams": asdict(h),
        "user_ids": list(model.user_ids),
        "item_ids": list(model.item_ids),
        "global_mean": model.global_mean,
        "scale": list(model.scale),
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + payload
    atomic_write(path, blob)


def load_model(path: str) -> tuple[FactorModel, Hyperparams]:
    """Load a saved model; rejects unknown versions, short payloads, and
    checksum mismatches without a partial result."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: unreadable header: {exc}") from exc
    version = header.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported format version {version!r} "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    m, n, k = header["m"], header["n"], header["k"]
    expected = (m * k + n * k) * 8
    if len(payload) != expected:
        raise ModelFormatError(
            f"{path}: truncated payload: {len(payload)} bytes, expected {expected}"
        )
    if hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise ModelFormatError(f"{path}: checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8")
    user_factors = flat[: m * k].reshape(m, k).astype(np.float64)
    item_factors = flat[m * k:].reshape(n, k).astype(np.float64)
    model = FactorModel(
        user_factors,
        item_factors,
        tuple(header["user_ids"]),
        tuple(header["item_ids"]),
        float(header["global_mean"]),
        (float(header["scale"][0]), float(header["scale"][1])),
    )
    hp = Hyperparams(**header["hyperparams"])
    return model, hp


def with_lambda_t(h: Hyperparams, lambda_t: float) -> Hyperparams:
    return replace(h, lambda_t=lambda_t)
