"""Episode storage with geometric future-state sampling.

States are stored as compact integer rows (gridworld: human cell followed by
block cells; generic tabular MDPs: a single state index).  Featurization is
the caller's job, so the buffer stays small and environment-agnostic.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import UsageError

RESAMPLE_TRIES = 16


@dataclass(frozen=True)
class Episode:
    states: np.ndarray  # (T+1, D) int rows
    a_h: np.ndarray  # (T,)
    a_r: np.ndarray  # (T,)
    terminated: bool  # True when the episode ended in a terminal state (not a time cap)

    @property
    def length(self) -> int:
        return self.a_h.shape[0]


@dataclass(frozen=True)
class FutureBatch:
    """Raw sampled records: anchor states/actions and geometric future states."""

    s: np.ndarray  # (N, D)
    a_h: np.ndarray  # (N,)
    a_r: np.ndarray  # (N,)
    g: np.ndarray  # (N, D)
    offsets: np.ndarray  # (N,) realized K values (post-clamp)


class EpisodeBuffer:
    """FIFO-evicting trajectory store (capacity counted in transitions)."""

    def __init__(self, capacity: int = 100_000):
        self.capacity = capacity
        self._episodes: deque[Episode] = deque()
        self._num_transitions = 0

    def __len__(self) -> int:
        return self._num_transitions

    @property
    def num_episodes(self) -> int:
        return len(self._episodes)

    def add_episode(
        self, states: np.ndarray, a_h: np.ndarray, a_r: np.ndarray, terminated: bool
    ) -> None:
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        a_h = np.asarray(a_h, dtype=np.int64)
        a_r = np.asarray(a_r, dtype=np.int64)
        if states.shape[0] != a_h.shape[0] + 1 or a_h.shape != a_r.shape:
            raise UsageError("episode must hold T+1 states and T action pairs")
        if a_h.shape[0] < 1:
            raise UsageError("episode must contain at least one transition")
        self._episodes.append(Episode(states, a_h, a_r, terminated))
        self._num_transitions += a_h.shape[0]
        while self._num_transitions > self.capacity and len(self._episodes) > 1:
            gone = self._episodes.popleft()
            self._num_transitions -= gone.length

    def _pick_anchors(self, n: int, rng: np.random.Generator):
        """Episode proportional to length, anchor t uniform over transitions."""
        if not self._episodes:
            raise UsageError("cannot sample from an empty buffer")
        lengths = np.array([ep.length for ep in self._episodes])
        cum = np.cumsum(lengths)
        flat = rng.integers(0, cum[-1], size=n)
        ep_idx = np.searchsorted(cum, flat, side="right")
        t = flat - (cum[ep_idx] - lengths[ep_idx])
        return ep_idx, t

    def _geometric_future(self, ep_idx, t, gamma_future: float, rng: np.random.Generator):
        """K ~ Geom(1-gamma), K >= 1; bounded resampling then clamp at episode end."""
        lengths = np.array([ep.length for ep in self._episodes])
        remaining = lengths[ep_idx] - t  # max admissible K
        n = len(t)
        k = np.minimum(rng.geometric(1.0 - gamma_future, size=n), np.iinfo(np.int64).max)
        bad = k > remaining
        for _ in range(RESAMPLE_TRIES - 1):
            if not bad.any():
                break
            k[bad] = rng.geometric(1.0 - gamma_future, size=int(bad.sum()))
            bad = k > remaining
        k = np.minimum(k, remaining)  # clamp g to the final state after bounded resampling
        return k

    def sample_future(self, n: int, gamma_future: float, rng: np.random.Generator) -> FutureBatch:
        ep_idx, t = self._pick_anchors(n, rng)
        k = self._geometric_future(ep_idx, t, gamma_future, rng)
        dim = self._episodes[0].states.shape[1]
        s = np.empty((n, dim), dtype=np.int64)
        g = np.empty((n, dim), dtype=np.int64)
        a_h = np.empty(n, dtype=np.int64)
        a_r = np.empty(n, dtype=np.int64)
        for i in range(n):
            ep = self._episodes[ep_idx[i]]
            s[i] = ep.states[t[i]]
            g[i] = ep.states[t[i] + k[i]]
            a_h[i] = ep.a_h[t[i]]
            a_r[i] = ep.a_r[t[i]]
        return FutureBatch(s=s, a_h=a_h, a_r=a_r, g=g, offsets=k)

    def sample_future_from_state(
        self, state_row: np.ndarray, n: int, gamma_future: float, rng: np.random.Generator
    ) -> FutureBatch | None:
        """Condition anchors on a specific state row; None when the state was
        never visited as an anchor."""
        state_row = np.asarray(state_row, dtype=np.int64).reshape(-1)
        matches = []
        for e, ep in enumerate(self._episodes):
            hits = np.flatnonzero((ep.states[:-1] == state_row).all(axis=1))
            matches.extend((e, int(t)) for t in hits)
        if not matches:
            return None
        pick = rng.integers(0, len(matches), size=n)
        ep_idx = np.array([matches[i][0] for i in pick])
        t = np.array([matches[i][1] for i in pick])
        k = self._geometric_future(ep_idx, t, gamma_future, rng)
        dim = state_row.shape[0]
        g = np.empty((n, dim), dtype=np.int64)
        a_h = np.empty(n, dtype=np.int64)
        a_r = np.empty(n, dtype=np.int64)
        for i in range(n):
            ep = self._episodes[ep_idx[i]]
            g[i] = ep.states[t[i] + k[i]]
            a_h[i] = ep.a_h[t[i]]
            a_r[i] = ep.a_r[t[i]]
        return FutureBatch(s=np.tile(state_row, (n, 1)), a_h=a_h, a_r=a_r, g=g, offsets=k)

    def sample_transition_mixtures(self, n: int, gamma_future: float, rng: np.random.Generator):
        """RL batch with the exact geometric future mixture per anchor.

        Instead of one sampled future per anchor, returns every remaining
        state of the anchor's episode together with its Geom(1-gamma)
        probability, the tail mass clamped onto the final state.  Output:
        (s, a_h, a_r, s_next, done, g, g_weight, g_anchor) where g stacks
        the future states of all anchors and g_anchor maps each g row back
        to its anchor index.  Per-anchor weights sum to 1 exactly.
        """
        if not (0.0 < gamma_future < 1.0):
            raise UsageError("gamma_future must lie in (0, 1)")
        ep_idx, t = self._pick_anchors(n, rng)
        dim = self._episodes[0].states.shape[1]
        s = np.empty((n, dim), dtype=np.int64)
        s_next = np.empty((n, dim), dtype=np.int64)
        a_h = np.empty(n, dtype=np.int64)
        a_r = np.empty(n, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        g_rows, g_weight, g_anchor = [], [], []
        for i in range(n):
            ep = self._episodes[ep_idx[i]]
            ti = int(t[i])
            s[i] = ep.states[ti]
            s_next[i] = ep.states[ti + 1]
            a_h[i] = ep.a_h[ti]
            a_r[i] = ep.a_r[ti]
            done[i] = ep.terminated and ti == ep.length - 1
            m = ep.length - ti
            w = (1.0 - gamma_future) * gamma_future ** np.arange(m - 1)
            w = np.append(w, gamma_future ** (m - 1))  # clamped tail mass
            g_rows.append(ep.states[ti + 1 : ti + m + 1])
            g_weight.append(w)
            g_anchor.append(np.full(m, i))
        g = np.concatenate(g_rows, axis=0)
        return (
            s, a_h, a_r, s_next, done,
            g, np.concatenate(g_weight), np.concatenate(g_anchor),
        )

    def sample_transitions(self, n: int, gamma_future: float, rng: np.random.Generator):
        """RL batch: (s, a_h, a_r, s_next, g, done) raw rows.

        done marks terminal next-states only (time-cap truncations bootstrap).
        The future state g is drawn fresh at every call so rewards computed
        from it always reflect the current representations.
        """
        ep_idx, t = self._pick_anchors(n, rng)
        k = self._geometric_future(ep_idx, t, gamma_future, rng)
        dim = self._episodes[0].states.shape[1]
        s = np.empty((n, dim), dtype=np.int64)
        s_next = np.empty((n, dim), dtype=np.int64)
        g = np.empty((n, dim), dtype=np.int64)
        a_h = np.empty(n, dtype=np.int64)
        a_r = np.empty(n, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        for i in range(n):
            ep = self._episodes[ep_idx[i]]
            s[i] = ep.states[t[i]]
            s_next[i] = ep.states[t[i] + 1]
            g[i] = ep.states[t[i] + k[i]]
            a_h[i] = ep.a_h[t[i]]
            a_r[i] = ep.a_r[t[i]]
            done[i] = ep.terminated and t[i] == ep.length - 1
        return s, a_h, a_r, s_next, g, done
