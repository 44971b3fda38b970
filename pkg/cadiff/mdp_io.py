"""
Plain-text FiniteMDP tables.

    # comment
    <states> <actions> <gamma>
    <next-state probabilities> | <reward> <probability> [<reward> <probability> ...]

One body line per (state, action), state-major. The reward support is the
sorted union of every reward named in the file.
"""

import logging
from pathlib import Path

import numpy

from .errors import BisimError, ConfigError
from .models import FiniteMDP

logger = logging.getLogger("cadiff.mdp_io")


def _body_lines(text: str) -> list[tuple[int, str]]:
    lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append((number, line))
    return lines


def parse_mdp(text: str) -> FiniteMDP:
    """
    Raises:
        ConfigError: naming the offending line when the table is malformed.
    """
    lines = _body_lines(text)
    if not lines:
        raise ConfigError("empty MDP table")
    header_number, header = lines[0]
    try:
        n_states_raw, n_actions_raw, gamma_raw = header.split()
        n_states, n_actions, gamma = int(n_states_raw), int(n_actions_raw), float(gamma_raw)
    except ValueError as e:
        raise ConfigError(f"line {header_number}: expected 'states actions gamma', got {header!r}") from e

    rows = lines[1:]
    if len(rows) != n_states * n_actions:
        raise ConfigError(f"expected {n_states * n_actions} state-action lines, found {len(rows)}")

    P = numpy.zeros((n_states, n_actions, n_states))
    reward_rows: list[dict[float, float]] = []
    for index, (number, line) in enumerate(rows):
        s, a = divmod(index, n_actions)
        if "|" not in line:
            raise ConfigError(f"line {number}: missing '|' between transitions and rewards")
        transition_part, reward_part = line.split("|", 1)
        try:
            probs = [float(value) for value in transition_part.split()]
            reward_tokens = [float(value) for value in reward_part.split()]
        except ValueError as e:
            raise ConfigError(f"line {number}: {e}") from e
        if len(probs) != n_states:
            raise ConfigError(f"line {number}: expected {n_states} next-state probabilities, got {len(probs)}")
        if not reward_tokens or len(reward_tokens) % 2:
            raise ConfigError(f"line {number}: rewards must be 'value probability' pairs")
        P[s, a] = probs
        pairs: dict[float, float] = {}
        for value, prob in zip(reward_tokens[::2], reward_tokens[1::2]):
            pairs[value] = pairs.get(value, 0.0) + prob
        reward_rows.append(pairs)

    reward_values = sorted({value for pairs in reward_rows for value in pairs})
    R = numpy.zeros((n_states, n_actions, len(reward_values)))
    for index, pairs in enumerate(reward_rows):
        s, a = divmod(index, n_actions)
        for value, prob in pairs.items():
            R[s, a, reward_values.index(value)] = prob

    try:
        return FiniteMDP(P=P, R=R, reward_values=numpy.array(reward_values), gamma=gamma)
    except BisimError as e:
        raise ConfigError(f"invalid MDP table: {e}") from e


def format_mdp(mdp: FiniteMDP) -> str:
    lines = [f"{mdp.n_states} {mdp.n_actions} {mdp.gamma!r}"]
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            transitions = " ".join(repr(float(prob)) for prob in mdp.P[s, a])
            rewards = " ".join(
                f"{float(value)!r} {float(prob)!r}"
                for value, prob in zip(mdp.reward_values, mdp.R[s, a])
                if prob > 0.0
            )
            lines.append(f"{transitions} | {rewards}")
    return "\n".join(lines) + "\n"


def read_mdp(path: Path) -> FiniteMDP:
    with open(path, "r", encoding="utf-8") as f:
        mdp = parse_mdp(f.read())
    logger.info("read %d-state, %d-action MDP from %s", mdp.n_states, mdp.n_actions, path)
    return mdp


def write_mdp(mdp: FiniteMDP, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_mdp(mdp))
