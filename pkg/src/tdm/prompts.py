"""Task prompts and their deterministic embeddings.

Each whitespace token is hashed to a row of a seeded embedding table; rows
are mean-pooled and L2-normalised. Rows are generated lazily from
``(seed, row)`` so the table is never materialised.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TASKS",
    "TaskPrompt",
    "task_catalog",
    "embed_task",
    "prompt_for_task",
    "neutral_prompt",
    "start_token",
    "DEFAULT_PROMPT_DIM",
    "DEFAULT_PROMPT_SEED",
]

TASKS = ("dehaze", "derain", "denoise", "mp4", "sr4")
DEFAULT_PROMPT_DIM = 32
DEFAULT_PROMPT_SEED = 0
TABLE_ROWS = 1 << 16

_CATALOG = (
    ("denoise", "remove the noise"),
    ("derain", "remove the rain"),
    ("dehaze", "remove the haze"),
    ("mp4", "remove the compression artifacts"),
    ("sr4", "increase the resolution"),
)


@dataclass(frozen=True)
class TaskPrompt:
    task: str
    text: str
    embedding: np.ndarray


def task_catalog() -> list[tuple[str, str]]:
    return list(_CATALOG)


def _token_row(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % TABLE_ROWS


def _table_row(row: int, d_prompt: int, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, row]).standard_normal(d_prompt)


def embed_task(text: str, d_prompt: int = DEFAULT_PROMPT_DIM, seed: int = DEFAULT_PROMPT_SEED) -> TaskPrompt:
    tokens = text.split() if isinstance(text, str) else []
    if not tokens:
        raise ValueError("prompt text must be a nonempty string")
    if d_prompt < 1:
        raise ValueError(f"d_prompt must be positive, got {d_prompt}")
    rows = np.stack([_table_row(_token_row(tok), d_prompt, seed) for tok in tokens])
    pooled = rows.mean(axis=0)
    emb = pooled / np.linalg.norm(pooled)
    emb.setflags(write=False)
    canonical = " ".join(tokens)
    task = next((k for k, v in _CATALOG if v == canonical), "custom")
    return TaskPrompt(task=task, text=canonical, embedding=emb)


def prompt_for_task(task: str, d_prompt: int = DEFAULT_PROMPT_DIM, seed: int = DEFAULT_PROMPT_SEED) -> TaskPrompt:
    texts = dict(_CATALOG)
    if task not in texts:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(texts)}")
    return embed_task(texts[task], d_prompt, seed)


def neutral_prompt(d_prompt: int = DEFAULT_PROMPT_DIM) -> TaskPrompt:
    """All-zero embedding used when task prompt guidance is switched off."""
    emb = np.zeros(d_prompt)
    emb.setflags(write=False)
    return TaskPrompt(task="none", text="", embedding=emb)


def start_token(d_prompt: int = DEFAULT_PROMPT_DIM, seed: int = DEFAULT_PROMPT_SEED) -> np.ndarray:
    """Fixed unit-norm token placed before every prompt in the cross-attention context.

    It gives each location something other than the prompt to attend to, so
    the attention weight on the prompt is feature dependent.
    """
    row = _table_row(_token_row("<start>"), d_prompt, seed)
    return row / np.linalg.norm(row)
