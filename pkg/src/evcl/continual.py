"""Class-incremental training on frozen features with replay and regularizers.

A small variational autoencoder doubles as the classifier (softmax head on
the latent) and as the rehearsal generator: before each new episode it can
sample feature/soft-label pairs standing in for earlier classes. Two
plasticity controls can be layered on top: per-unit habituation counters
that damp learning in frequently-active hidden units, and a quadratic
penalty anchoring parameters that mattered for earlier episodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Parameter,
    Tape,
    Tensor,
    backward,
    concat,
    gather_cols,
    soft_cross_entropy,
    softmax_cross_entropy,
)
from .contrastive import FeatureTable
from .optim import AdamState, adam_step


class NoTrainedModel(RuntimeError):
    pass


class ForeignClassInSlice(ValueError):
    pass


class ScheduleClassMissing(ValueError):
    pass


# ---------------------------------------------------------------------------
# episode schedules


@dataclass(frozen=True)
class EpisodeSchedule:
    """An ordered partition of class ids into training episodes."""

    episodes: tuple
    seed: int = 0

    def __post_init__(self):
        eps = tuple(tuple(int(c) for c in ep) for ep in self.episodes)
        object.__setattr__(self, "episodes", eps)
        if not eps or any(not ep for ep in eps):
            raise ValueError("schedule needs at least one non-empty episode")
        flat = [c for ep in eps for c in ep]
        if len(set(flat)) != len(flat):
            raise ValueError("a class id appears in more than one episode")
        if min(flat) < 0:
            raise ValueError("negative class id")

    def __len__(self) -> int:
        return len(self.episodes)

    def seen_through(self, episode: int) -> list:
        """Sorted class ids introduced in episodes 0..episode inclusive."""
        out = []
        for ep in self.episodes[: episode + 1]:
            out.extend(ep)
        return sorted(out)

    @property
    def all_classes(self) -> list:
        return self.seen_through(len(self.episodes) - 1)


def make_schedule(n_classes: int, classes_per_episode: int, seed: int) -> EpisodeSchedule:
    if n_classes % classes_per_episode:
        raise ValueError(
            f"{n_classes} classes do not split into episodes of {classes_per_episode}"
        )
    order = np.random.default_rng(seed).permutation(n_classes)
    eps = [
        tuple(int(c) for c in order[i : i + classes_per_episode])
        for i in range(0, n_classes, classes_per_episode)
    ]
    return EpisodeSchedule(tuple(eps), seed)


# ---------------------------------------------------------------------------
# habituation


@dataclass
class HabituationState:
    """Per-unit counters in (0, 1]; selected units decay and learn slower."""

    h: np.ndarray
    tau: float
    gamma: float

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64)
        if not (0.0 <= self.tau < 1.0):
            raise ValueError(f"tau must be in [0, 1), got {self.tau}")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.h.ndim != 1 or (self.h <= 0).any() or (self.h > 1).any():
            raise ValueError("counters must be a 1-d array in (0, 1]")

    @classmethod
    def fresh(cls, n_units: int, tau: float, gamma: float) -> "HabituationState":
        return cls(np.ones(n_units), tau, gamma)


def select_habituated(activations: np.ndarray, gamma: float) -> np.ndarray:
    """Indices (ascending) of the floor(gamma*n) most active units.

    Ties go to the lower index; gamma small enough to floor to zero selects
    nothing.
    """
    a = np.asarray(activations, dtype=np.float64)
    if not (0.0 < gamma <= 1.0):
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    k = int(math.floor(gamma * len(a)))
    if k == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(-a, kind="stable")
    return np.sort(order[:k])


def habituation_decay(state: HabituationState, indices: np.ndarray) -> None:
    """Multiply selected counters by (1 - tau), floored away from zero."""
    tiny = np.finfo(np.float64).tiny
    state.h[indices] = np.maximum((1.0 - state.tau) * state.h[indices], tiny)


def scale_unit_gradients(h: np.ndarray, weight: Parameter, bias: Parameter | None = None) -> None:
    """Damp each unit's incoming-weight and bias gradients by its counter.

    weight columns index units, so weight.grad broadcasts against h along
    its last axis; a fully-rested unit (h == 1) is bit-for-bit untouched.
    """
    weight.grad *= h
    if bias is not None:
        bias.grad *= h


# ---------------------------------------------------------------------------
# synaptic importance


@dataclass
class SIState:
    """Per-parameter running importance and the anchors they protect."""

    c: float
    xi: float = 1e-3
    omega: dict = field(default_factory=dict)
    big_omega: dict = field(default_factory=dict)
    theta_ref: dict = field(default_factory=dict)
    n_consolidations: int = 0

    def __post_init__(self):
        if self.c < 0 or self.xi <= 0:
            raise ValueError(f"bad SI settings c={self.c}, xi={self.xi}")


def si_accumulate(state: SIState, params, old_values: dict) -> None:
    """Credit each weight with -grad * step for the update just applied.

    old_values maps parameter id to the value snapshot taken before the
    optimizer step; gradients must still be those used for that step.
    """
    for p in params:
        delta = p.value - old_values[p.id]
        w = state.omega.get(p.id)
        if w is None:
            state.omega[p.id] = -p.grad * delta
            state.theta_ref.setdefault(p.id, old_values[p.id].copy())
        else:
            w -= p.grad * delta


def si_consolidate(state: SIState, params) -> None:
    """Fold path credit into anchored importance and re-anchor at current values."""
    for p in params:
        w = state.omega.get(p.id)
        if w is None:
            continue
        ref = state.theta_ref[p.id]
        drift = p.value - ref
        gain = np.maximum(w, 0.0) / (drift * drift + state.xi)
        prev = state.big_omega.get(p.id)
        state.big_omega[p.id] = gain if prev is None else prev + gain
        state.theta_ref[p.id] = p.value.copy()
        w.fill(0.0)
    state.n_consolidations += 1


def si_penalty(tape: Tape, state: SIState, params) -> Tensor | None:
    """Quadratic pull toward the anchors, or None when structurally off.

    Returns None (not a zero tensor) when the strength is zero or nothing
    has been consolidated yet, so the no-penalty path contributes no graph
    node at all.
    """
    if state.c == 0.0 or state.n_consolidations == 0:
        return None
    total = None
    for p in params:
        big = state.big_omega.get(p.id)
        if big is None:
            continue
        diff = tape.leaf(p) - tape.const(state.theta_ref[p.id])
        term = (diff * diff * tape.const(big)).sum()
        total = term if total is None else total + term
    if total is None:
        return None
    return total * state.c


# ---------------------------------------------------------------------------
# replay model


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """Per-row KL(N(mu, e^logvar) || N(0, I)); zero exactly at mu=0, logvar=0."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return 0.5 * (mu * mu + np.exp(logvar) - 1.0 - logvar).sum(axis=-1)


class ReplayVAE:
    """Feature-space VAE with a latent softmax classifier.

    encode: feature (64) -> relu hidden (the habituation site) -> mu/logvar.
    decode: latent -> relu hidden -> feature. Sampling the prior and
    decoding yields rehearsal features; the classifier labels them.
    """

    def __init__(self, rng, n_classes: int, feature_dim: int = 64, hidden_dim: int = 128, latent_dim: int = 16):
        def dense(n_in, n_out):
            return (
                Parameter(rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out))),
                Parameter(np.zeros(n_out)),
            )

        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.latent_dim = latent_dim
        self.n_classes = n_classes
        self.enc_w, self.enc_b = dense(feature_dim, hidden_dim)
        self.mu_w, self.mu_b = dense(hidden_dim, latent_dim)
        self.lv_w, self.lv_b = dense(hidden_dim, latent_dim)
        self.dec_w1, self.dec_b1 = dense(latent_dim, hidden_dim)
        self.dec_w2, self.dec_b2 = dense(hidden_dim, feature_dim)
        self.cls_w, self.cls_b = dense(latent_dim, n_classes)
        self.trained_episodes = 0

    def params(self):
        return [
            self.enc_w, self.enc_b, self.mu_w, self.mu_b, self.lv_w, self.lv_b,
            self.dec_w1, self.dec_b1, self.dec_w2, self.dec_b2, self.cls_w, self.cls_b,
        ]

    def encode(self, tape: Tape, x: Tensor):
        hidden = (x @ tape.leaf(self.enc_w) + tape.leaf(self.enc_b)).relu()
        mu = hidden @ tape.leaf(self.mu_w) + tape.leaf(self.mu_b)
        logvar = hidden @ tape.leaf(self.lv_w) + tape.leaf(self.lv_b)
        return hidden, mu, logvar

    def decode(self, tape: Tape, z: Tensor) -> Tensor:
        h = (z @ tape.leaf(self.dec_w1) + tape.leaf(self.dec_b1)).relu()
        return h @ tape.leaf(self.dec_w2) + tape.leaf(self.dec_b2)

    def classify(self, tape: Tape, z: Tensor) -> Tensor:
        return z @ tape.leaf(self.cls_w) + tape.leaf(self.cls_b)

    def elbo_terms(self, tape: Tape, x: Tensor, eps: np.ndarray):
        """Reconstruction and KL means plus intermediates for one batch.

        eps is the fixed standard-normal draw for the reparametrized sample
        z = mu + exp(logvar/2) * eps.
        """
        n = x.data.shape[0]
        hidden, mu, logvar = self.encode(tape, x)
        z = mu + (logvar * 0.5).exp() * tape.const(eps)
        recon = self.decode(tape, z)
        diff = recon - x
        recon_loss = (diff * diff).mean()
        ones = tape.const(np.ones_like(mu.data))
        kl = ((mu * mu + logvar.exp() - ones - logvar).sum()) * (0.5 / n)
        return hidden, mu, logvar, z, recon_loss, kl

    def clone(self) -> "ReplayVAE":
        """Frozen value copy (fresh Parameter objects, same architecture)."""
        other = ReplayVAE.__new__(ReplayVAE)
        for name in ("feature_dim", "hidden_dim", "latent_dim", "n_classes", "trained_episodes"):
            setattr(other, name, getattr(self, name))
        for name in (
            "enc_w", "enc_b", "mu_w", "mu_b", "lv_w", "lv_b",
            "dec_w1", "dec_b1", "dec_w2", "dec_b2", "cls_w", "cls_b",
        ):
            setattr(other, name, Parameter(getattr(self, name).value.copy()))
        return other

    def predict(self, features: np.ndarray, restrict_to=None) -> np.ndarray:
        """Deterministic class prediction (via the latent mean), optionally
        restricted to a subset of class ids."""
        h = np.maximum(features @ self.enc_w.value + self.enc_b.value, 0.0)
        mu = h @ self.mu_w.value + self.mu_b.value
        logits = mu @ self.cls_w.value + self.cls_b.value
        if restrict_to is None:
            return logits.argmax(axis=1)
        cols = np.asarray(sorted(restrict_to), dtype=np.int64)
        return cols[logits[:, cols].argmax(axis=1)]


def generate_replay(model: ReplayVAE, seen_classes, n: int, rng):
    """Sample rehearsal features with soft labels over the seen classes.

    Labels are full-width rows that are exactly zero outside seen_classes
    and sum to one across them.
    """
    if model.trained_episodes == 0:
        raise NoTrainedModel("replay requested before any training episode")
    seen = np.asarray(sorted(seen_classes), dtype=np.int64)
    if len(seen) == 0:
        raise ValueError("no seen classes to replay")
    z = rng.standard_normal((n, model.latent_dim))
    h = np.maximum(z @ model.dec_w1.value + model.dec_b1.value, 0.0)
    features = h @ model.dec_w2.value + model.dec_b2.value
    logits = (z @ model.cls_w.value + model.cls_b.value)[:, seen]
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    soft = np.zeros((n, model.n_classes))
    soft[:, seen] = p
    return features, soft


# ---------------------------------------------------------------------------
# methods and the incremental loop


@dataclass(frozen=True)
class MethodConfig:
    name: str
    replay: bool = False
    si_c: float = 0.0
    habituation: bool = False
    tau: float = 0.0
    gamma: float = 1.0


PRESETS = {
    "none": MethodConfig("none"),
    "bir": MethodConfig("bir", replay=True),
    "bir-si": MethodConfig("bir-si", replay=True, si_c=1e9),
    "bir-h": MethodConfig("bir-h", replay=True, habituation=True, tau=0.3, gamma=0.05),
    "bir-si-h": MethodConfig(
        "bir-si-h", replay=True, si_c=1e9, habituation=True, tau=0.02, gamma=0.01
    ),
}


@dataclass
class CilResult:
    preset: str
    seed: int
    schedule: EpisodeSchedule
    per_episode: list  # per_episode[e][j] = accuracy on episode j's classes after e
    overall: list  # overall[e] = accuracy on all classes seen through episode e
    steps: list  # dicts: episode, step, ce, replay_ce, vae, si, total

    @property
    def final_overall(self) -> float:
        return self.overall[-1]


def train_episode(
    model: ReplayVAE,
    slice_table: FeatureTable,
    episode_classes,
    seen_before,
    *,
    method: MethodConfig,
    opt: AdamState,
    hab: HabituationState | None,
    si: SIState | None,
    rng,
    steps: int = 200,
    batch_size: int = 32,
    beta: float = 1.0,
    episode_index: int = 0,
    log: list | None = None,
    log_every: int = 50,
) -> None:
    """Run one episode's optimization steps in place."""
    episode_classes = sorted(int(c) for c in episode_classes)
    seen_before = sorted(int(c) for c in seen_before)
    extra = set(slice_table.labels.tolist()) - set(episode_classes)
    if extra:
        raise ForeignClassInSlice(f"slice contains classes {sorted(extra)}")
    if len(slice_table) == 0:
        raise ValueError("empty training slice")
    seen_now = sorted(set(episode_classes) | set(seen_before))
    cols_now = np.asarray(seen_now, dtype=np.int64)
    cols_prev = np.asarray(seen_before, dtype=np.int64)
    params = model.params()
    use_replay = method.replay and seen_before and model.trained_episodes > 0
    # Rehearsal must come from the model as it stood when the episode began;
    # sampling the live model would let the generator erase itself mid-episode.
    frozen = model.clone() if use_replay else None

    for step in range(steps):
        idx = rng.integers(0, len(slice_table), batch_size)
        x_real = slice_table.features[idx]
        y_real = slice_table.labels[idx]
        if use_replay:
            x_rep, soft_rep = generate_replay(frozen, seen_before, batch_size, rng)
        tape = Tape()

        xt = tape.const(x_real)
        eps = rng.standard_normal((batch_size, model.latent_dim))
        hidden, mu, _, z, recon_loss, kl = model.elbo_terms(tape, xt, eps)
        logits = model.classify(tape, mu)
        label_pos = np.searchsorted(cols_now, y_real)
        ce = softmax_cross_entropy(gather_cols(logits, cols_now), label_pos)
        current = ce + recon_loss + kl * beta

        replay_ce_val = math.nan
        hidden_acts = hidden.data
        if use_replay:
            xr = tape.const(x_rep)
            eps_r = rng.standard_normal((batch_size, model.latent_dim))
            hidden_r, mu_r, _, _, recon_r, kl_r = model.elbo_terms(tape, xr, eps_r)
            logits_r = model.classify(tape, mu_r)
            # Targets are zero on this episode's classes, so scoring over the
            # whole seen set also pushes new-class logits down at replay points.
            replay_ce = soft_cross_entropy(
                gather_cols(logits_r, cols_now), soft_rep[:, cols_now]
            )
            loss = current + replay_ce + recon_r + kl_r * beta
            replay_ce_val = float(replay_ce.data)
            hidden_acts = np.concatenate([hidden_acts, hidden_r.data])
        else:
            loss = current

        si_val = math.nan
        if si is not None:
            pen = si_penalty(tape, si, params)
            if pen is not None:
                loss = loss + pen
                si_val = float(pen.data)

        backward(loss)

        if hab is not None:
            selected = select_habituated(hidden_acts.mean(axis=0), hab.gamma)
            habituation_decay(hab, selected)
            scale_unit_gradients(hab.h, model.enc_w, model.enc_b)

        if si is not None and si.c != 0.0:
            old = {p.id: p.value.copy() for p in params}
            adam_step(opt, params)
            si_accumulate(si, params, old)
        else:
            adam_step(opt, params)
        for p in params:
            p.zero_grad()

        if log is not None and (step % log_every == 0 or step == steps - 1):
            log.append(
                {
                    "episode": episode_index,
                    "step": step,
                    "ce": float(ce.data),
                    "replay_ce": replay_ce_val,
                    "vae": float(recon_loss.data + kl.data * beta),
                    "si": si_val,
                    "total": float(loss.data),
                }
            )

    if si is not None and si.c != 0.0:
        si_consolidate(si, params)
    model.trained_episodes += 1


def evaluate(model: ReplayVAE, table: FeatureTable, seen_classes) -> float:
    if len(table) == 0:
        raise ValueError("empty evaluation table")
    pred = model.predict(table.features, restrict_to=seen_classes)
    return float(np.mean(pred == table.labels))


def run_cil(
    train_table: FeatureTable,
    test_table: FeatureTable,
    schedule: EpisodeSchedule,
    method: MethodConfig,
    *,
    seed: int = 0,
    n_classes: int | None = None,
    steps_per_episode: int = 600,
    batch_size: int = 32,
    lr: float = 3e-3,
    hidden_dim: int = 128,
    latent_dim: int = 16,
    beta: float = 0.25,
    log_every: int = 50,
) -> CilResult:
    """Train through the schedule and score each episode's test slice as we go."""
    if n_classes is None:
        n_classes = int(max(train_table.labels.max(), test_table.labels.max())) + 1
    for c in schedule.all_classes:
        if c >= n_classes or not (train_table.labels == c).any() or not (test_table.labels == c).any():
            raise ScheduleClassMissing(f"class {c} not present in both tables")

    rng = np.random.default_rng(seed)
    model = ReplayVAE(
        rng, n_classes, feature_dim=train_table.dim, hidden_dim=hidden_dim, latent_dim=latent_dim
    )
    opt = AdamState(lr=lr)
    hab = (
        HabituationState.fresh(hidden_dim, method.tau, method.gamma)
        if method.habituation
        else None
    )
    si = SIState(c=method.si_c) if method.si_c > 0 else None

    per_episode: list = []
    overall: list = []
    steps_log: list = []
    for e, classes in enumerate(schedule.episodes):
        before = schedule.seen_through(e - 1) if e else []
        train_episode(
            model,
            train_table.select_classes(classes),
            classes,
            before,
            method=method,
            opt=opt,
            hab=hab,
            si=si,
            rng=rng,
            steps=steps_per_episode,
            batch_size=batch_size,
            beta=beta,
            episode_index=e,
            log=steps_log,
            log_every=log_every,
        )
        seen = schedule.seen_through(e)
        per_episode.append(
            [
                evaluate(model, test_table.select_classes(schedule.episodes[j]), seen)
                for j in range(e + 1)
            ]
        )
        overall.append(evaluate(model, test_table.select_classes(seen), seen))
    return CilResult(method.name, seed, schedule, per_episode, overall, steps_log)
