"""Soft actor-critic backbone over extracted features.

Squashed-gaussian actor, twin Q critics with target copies and exact
soft updates, and a learned temperature against a fixed entropy target.
One `update` consumes a mixed batch with importance weights, builds the
critic, actor and temperature losses on a single tape, backpropagates once
(the actor loss sees frozen critic weights, so each loss only reaches its
own parameters plus the shared features), then applies one Adam step per
parameter group.

The absolute TD error returned for priority refresh is the average over the
twin critics of |r + gamma * V_target(s') - Q_i(s, a)|, evaluated with the
pre-update parameters; V_target is the minimum of the twin target critics
minus the entropy term, and done transitions drop the bootstrap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Adam, Tape, Tensor, param
from .nets import MLP

LOGSTD_MIN = -20.0
LOGSTD_MAX = 2.0
_SQUASH_EPS = 1e-6


class ActorNetwork:
    def __init__(self, feature_dim, action_dim, hidden, rng):
        self.action_dim = action_dim
        self.net = MLP([feature_dim, hidden, hidden, 2 * action_dim], rng)

    def heads(self, tape, features):
        out = self.net.forward(tape, features)
        mean = tape.slice_cols(out, 0, self.action_dim)
        logstd = tape.clamp(tape.slice_cols(out, self.action_dim,
                                            2 * self.action_dim),
                            LOGSTD_MIN, LOGSTD_MAX)
        return mean, logstd

    def sample(self, tape, features, noise):
        """Reparameterized squashed draw; returns (action, log-prob (n,1))."""
        mean, logstd = self.heads(tape, features)
        xs = tape.gauss_sample(mean, logstd, noise)
        action = tape.tanh(xs)
        logp = tape.gauss_logp(mean, logstd, xs)
        one_minus_sq = tape.add_const(tape.scale(tape.square(action), -1.0),
                                      1.0 + _SQUASH_EPS)
        return action, tape.sub(logp, tape.sum(tape.log(one_minus_sq), axis=1))

    def heads_np(self, features):
        out = self.net.forward_np(features)
        mean = out[:, :self.action_dim]
        logstd = np.clip(out[:, self.action_dim:], LOGSTD_MIN, LOGSTD_MAX)
        return mean, logstd

    def act_np(self, features, deterministic=True, noise=None):
        mean, logstd = self.heads_np(features)
        if deterministic:
            return np.tanh(mean)
        return np.tanh(mean + np.exp(logstd) * noise)

    def sample_np(self, features, noise):
        mean, logstd = self.heads_np(features)
        xs = mean + np.exp(logstd) * noise
        action = np.tanh(xs)
        z = (xs - mean) / np.exp(logstd)
        logp = (-0.5 * z * z - logstd - 0.5 * np.log(2 * np.pi)).sum(
            axis=1, keepdims=True)
        logp -= np.log(1.0 + _SQUASH_EPS - action * action).sum(axis=1, keepdims=True)
        return action, logp

    def log_prob_np(self, features, actions):
        """Log-density of given squashed actions (|a| must be < 1)."""
        mean, logstd = self.heads_np(features)
        xs = np.arctanh(actions)
        z = (xs - mean) / np.exp(logstd)
        logp = (-0.5 * z * z - logstd - 0.5 * np.log(2 * np.pi)).sum(
            axis=1, keepdims=True)
        return logp - np.log(1.0 + _SQUASH_EPS - actions * actions).sum(
            axis=1, keepdims=True)

    def named_params(self):
        return self.net.named_params("actor")


class TwinCritics:
    """Two independent Q networks plus target copies with soft updates."""

    def __init__(self, feature_dim, action_dim, hidden, rng, tau=0.005):
        dims = [feature_dim + action_dim, hidden, hidden, 1]
        self.q1 = MLP(dims, rng)
        self.q2 = MLP(dims, rng)
        self.tau = float(tau)
        self._targets = [
            [(layer.w.data.copy(), layer.b.data.copy()) for layer in net.layers]
            for net in (self.q1, self.q2)
        ]

    def q_tape(self, tape, features, actions, which, frozen=False):
        net = self.q1 if which == 1 else self.q2
        return net.forward(tape, tape.concat([features, actions], axis=1),
                           frozen=frozen)

    def q_np(self, features, actions, which):
        net = self.q1 if which == 1 else self.q2
        return net.forward_np(np.concatenate([features, actions], axis=1))

    def target_q_np(self, features, actions, which):
        x = np.concatenate([features, actions], axis=1)
        layers = self._targets[which - 1]
        for w, b in layers[:-1]:
            x = np.maximum(x @ w + b, 0.0)
        w, b = layers[-1]
        return x @ w + b

    def soft_update(self):
        for net, target in zip((self.q1, self.q2), self._targets):
            for layer, (tw, tb) in zip(net.layers, target):
                tw[:] = self.tau * layer.w.data + (1.0 - self.tau) * tw
                tb[:] = self.tau * layer.b.data + (1.0 - self.tau) * tb

    def target_arrays(self):
        return self._targets

    def named_params(self):
        out = self.q1.named_params("critic1")
        out.update(self.q2.named_params("critic2"))
        return out

    def named_target_arrays(self):
        out = {}
        for qi, layers in enumerate(self._targets, start=1):
            for li, (w, b) in enumerate(layers, start=1):
                out[f"target{qi}.w{li}"] = w
                out[f"target{qi}.b{li}"] = b
        return out


@dataclass
class UpdateResult:
    critic_loss: float
    actor_loss: float
    alpha_loss: float
    abs_td_errors: np.ndarray


class SACAgent:
    def __init__(self, feature_dim, action_dim, hidden=64, lr=3e-4, tau=0.005,
                 gamma=0.99, eps_priority=1e-4, init_alpha=0.2,
                 actor_detach_features=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.action_dim = action_dim
        self.gamma = float(gamma)
        self.eps_priority = float(eps_priority)
        # the actor loss could inflate shared features to raise frozen-critic
        # Q values; by default the feature encoder learns from the critic
        # (and triplet) losses only
        self.actor_detach_features = bool(actor_detach_features)
        self.actor = ActorNetwork(feature_dim, action_dim, hidden, rng)
        self.critics = TwinCritics(feature_dim, action_dim, hidden, rng, tau=tau)
        self.log_alpha = param(np.array([[np.log(init_alpha)]]))
        self.target_entropy = -float(action_dim)
        self.adam_actor = Adam(self.actor.net.named_params("a").values(), lr=lr)
        critic_params = list(self.critics.q1.named_params("q1").values())
        critic_params += list(self.critics.q2.named_params("q2").values())
        self.adam_critic = Adam(critic_params, lr=lr)
        self.adam_alpha = Adam([self.log_alpha], lr=lr)

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha.data[0, 0]))

    def act(self, features, deterministic=True, noise=None):
        return self.actor.act_np(features, deterministic=deterministic, noise=noise)

    def target_value_np(self, next_features, noise):
        """V_target(s') = min_i Q_target_i(s', a') - alpha * log pi(a'|s')."""
        a2, logp2 = self.actor.sample_np(next_features, noise)
        q1 = self.critics.target_q_np(next_features, a2, 1)
        q2 = self.critics.target_q_np(next_features, a2, 2)
        return np.minimum(q1, q2)[:, 0] - self.alpha * logp2[:, 0]

    def td_error(self, features, actions, rewards, next_features, dones, noise,
                 gamma=None):
        """Average absolute TD error of the twin critics, per transition."""
        gamma = self.gamma if gamma is None else gamma
        y = rewards + gamma * (1.0 - dones.astype(np.float64)) * \
            self.target_value_np(next_features, noise)
        q1 = self.critics.q_np(features, actions, 1)[:, 0]
        q2 = self.critics.q_np(features, actions, 2)[:, 0]
        return 0.5 * (np.abs(y - q1) + np.abs(y - q2))

    def losses(self, tape, features, actions, rewards, next_features_np, dones,
               weights, noise_next, noise_new):
        """Build the three SAC losses on the tape; returns (c, a, t, deltas)."""
        y = rewards + self.gamma * (1.0 - dones.astype(np.float64)) * \
            self.target_value_np(next_features_np, noise_next)
        y_t = Tensor(y[:, None])
        w_t = Tensor(np.asarray(weights)[:, None])
        act_t = actions if isinstance(actions, Tensor) else Tensor(actions)

        q1 = self.critics.q_tape(tape, features, act_t, 1)
        q2 = self.critics.q_tape(tape, features, act_t, 2)
        d1 = tape.sub(y_t, q1)
        d2 = tape.sub(y_t, q2)
        critic_loss = tape.mean(
            tape.mul(tape.add(tape.square(d1), tape.square(d2)), w_t))

        actor_feats = features.detach() if self.actor_detach_features else features
        a_new, logp = self.actor.sample(tape, actor_feats, noise_new)
        q1_pi = self.critics.q_tape(tape, actor_feats, a_new, 1, frozen=True)
        q2_pi = self.critics.q_tape(tape, actor_feats, a_new, 2, frozen=True)
        q_min = tape.minimum(q1_pi, q2_pi)
        actor_loss = tape.mean(tape.sub(tape.scale(logp, self.alpha), q_min))

        ent_gap = float(np.mean(logp.data) + self.target_entropy)
        alpha_loss = tape.mean(tape.scale(self.log_alpha, -ent_gap))

        deltas = 0.5 * (np.abs(y - q1.data[:, 0]) + np.abs(y - q2.data[:, 0]))
        return critic_loss, actor_loss, alpha_loss, deltas

    def update(self, features, actions, rewards, next_features_np, dones,
               weights, rng, tape=None, aux_loss=None, extra_optimizers=()):
        """One training step on a mixed batch.

        `features` may be a tracked Tensor from the extractor (its gradients
        accumulate from the critic and actor losses; pass the extractor's
        optimizer via extra_optimizers) or a plain array.
        """
        tape = tape if tape is not None else Tape()
        if not isinstance(features, Tensor):
            features = Tensor(features)
        n = len(rewards)
        noise_next = rng.standard_normal((n, self.action_dim))
        noise_new = rng.standard_normal((n, self.action_dim))
        critic_loss, actor_loss, alpha_loss, deltas = self.losses(
            tape, features, actions, rewards, next_features_np, dones,
            weights, noise_next, noise_new)
        total = tape.add(tape.add(critic_loss, actor_loss), alpha_loss)
        if aux_loss is not None:
            total = tape.add(total, aux_loss)
        tape.backward(total)
        self.adam_critic.step()
        self.adam_actor.step()
        self.adam_alpha.step()
        for opt in extra_optimizers:
            opt.step()
        self.critics.soft_update()
        return UpdateResult(
            critic_loss=float(critic_loss.data),
            actor_loss=float(actor_loss.data),
            alpha_loss=float(alpha_loss.data),
            abs_td_errors=deltas,
        )

    def named_params(self):
        out = self.actor.named_params()
        out.update(self.critics.named_params())
        out["log_alpha"] = self.log_alpha
        return out
