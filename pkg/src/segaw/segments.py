"""Segment bookkeeping: action sequences and boundary sets.

Frames are 1-based throughout this module; a :class:`BoundarySet` is an
ordered list of (start, end) pairs, inclusive on both sides, that partitions
``[1, T]``.  Actions are numpy uint8 arrays with 1 = "segment", 0 = "pass".
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError

SEGMENT = 1
PASS = 0


@dataclass(frozen=True)
class BoundarySet:
    """Contiguous, non-overlapping segments covering an utterance."""

    segments: tuple  # ((t1, t2), ...) 1-based inclusive
    n_frames: int

    def __post_init__(self):
        if self.n_frames < 1:
            raise InputError("an utterance needs at least one frame")
        expect = 1
        for t1, t2 in self.segments:
            if t1 != expect or t2 < t1:
                raise InputError(f"segments do not partition [1, {self.n_frames}]")
            expect = t2 + 1
        if expect != self.n_frames + 1:
            raise InputError(f"segments do not partition [1, {self.n_frames}]")

    def __len__(self):
        return len(self.segments)

    @property
    def ends(self):
        """All segment end frames, final frame included."""
        return [t2 for _, t2 in self.segments]

    @property
    def interior_ends(self):
        """Segment end frames that are scoreable boundaries (excludes frame T)."""
        return [t2 for _, t2 in self.segments if t2 != self.n_frames]

    @classmethod
    def from_ends(cls, ends, n_frames=None):
        """Build a partition from segment end frames.

        ``ends`` may or may not include the final frame; it is appended when
        missing.  ``n_frames`` defaults to the last end given.
        """
        ends = sorted(set(int(e) for e in ends))
        if n_frames is None:
            if not ends:
                raise InputError("need ends or an explicit frame count")
            n_frames = ends[-1]
        ends = [e for e in ends if 1 <= e <= n_frames]
        if not ends or ends[-1] != n_frames:
            ends.append(n_frames)
        segs = []
        start = 1
        for e in ends:
            segs.append((start, e))
            start = e + 1
        return cls(tuple(segs), n_frames)


def actions_to_boundaries(actions):
    """Turn a per-frame action sequence into a :class:`BoundarySet`.

    A "segment" action at frame t closes a segment ending at t; frames left
    open at the end of the utterance form a final segment closed at T.
    """
    actions = np.asarray(actions)
    T = actions.shape[0]
    if T == 0:
        raise InputError("empty action sequence")
    segs = []
    start = 1
    for t in range(1, T + 1):
        if actions[t - 1] == SEGMENT:
            segs.append((start, t))
            start = t + 1
    if start <= T:
        segs.append((start, T))
    return BoundarySet(tuple(segs), T)


def boundaries_to_actions(bounds):
    """Inverse of :func:`actions_to_boundaries` up to the trailing-segment rule."""
    actions = np.zeros(bounds.n_frames, dtype=np.uint8)
    for _, t2 in bounds.segments:
        actions[t2 - 1] = SEGMENT
    return actions
