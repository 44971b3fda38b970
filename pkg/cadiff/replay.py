import logging
from dataclasses import dataclass

import numpy

from config import SIZE_OF_REPLAY_MEMORY

from .models import Transition

logger = logging.getLogger("cadiff.replay")


@dataclass
class TransitionBatch:
    histories: numpy.ndarray
    history_lengths: numpy.ndarray
    prev_histories: numpy.ndarray
    prev_history_lengths: numpy.ndarray
    prev_actions: numpy.ndarray
    actions: numpy.ndarray
    rewards: numpy.ndarray
    next_histories: numpy.ndarray
    next_history_lengths: numpy.ndarray
    dones: numpy.ndarray

    def __len__(self) -> int:
        return self.actions.shape[0]


def stack_transitions(transitions: list[Transition]) -> TransitionBatch:
    return TransitionBatch(
        histories=numpy.stack([t.history for t in transitions]),
        history_lengths=numpy.array([t.history_length for t in transitions]),
        prev_histories=numpy.stack([t.prev_history for t in transitions]),
        prev_history_lengths=numpy.array([t.prev_history_length for t in transitions]),
        prev_actions=numpy.stack([t.prev_action for t in transitions]),
        actions=numpy.stack([t.action for t in transitions]),
        rewards=numpy.array([t.reward for t in transitions], dtype=numpy.float64),
        next_histories=numpy.stack([t.next_history for t in transitions]),
        next_history_lengths=numpy.array([t.next_history_length for t in transitions]),
        dones=numpy.array([t.done for t in transitions], dtype=numpy.float64),
    )


class ReplayBuffer:
    """
    Fixed-capacity ring of transitions with FIFO eviction.
    """

    def __init__(self, capacity: int = SIZE_OF_REPLAY_MEMORY):
        if capacity < 1:
            raise RuntimeError(f"replay capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.storage: list[Transition] = []
        self.next_slot = 0

    def __len__(self) -> int:
        return len(self.storage)

    def add(self, transition: Transition) -> None:
        if len(self.storage) < self.capacity:
            self.storage.append(transition)
        else:
            self.storage[self.next_slot] = transition
        self.next_slot = (self.next_slot + 1) % self.capacity

    def sample(self, batch_size: int, rng: numpy.random.Generator) -> TransitionBatch:
        """
        Uniform draw without replacement; smaller than `batch_size` while the
        buffer holds fewer transitions.
        """
        if not self.storage:
            raise RuntimeError("cannot sample from an empty replay buffer")
        picks = rng.choice(len(self.storage), size=min(batch_size, len(self.storage)), replace=False)
        return stack_transitions([self.storage[i] for i in picks])
