"""Seed derivation. Every random stream in a campaign is a pure function of
(master_seed, indices), so plans and runs replay bit-for-bit."""

from __future__ import annotations

MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15

# stream tags keep the per-purpose streams statistically independent
_STREAM_DESCRIPTION = 0xD15C
_STREAM_SCENE = 0x5CE7E
_STREAM_ENV = 0xE7F
_STREAM_TRIAL = 0x7121A


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return (x ^ (x >> 31)) & MASK64


def mix(*parts: int) -> int:
    acc = 0
    for part in parts:
        acc = splitmix64(acc ^ (part & MASK64))
    return acc


def description_seed(master_seed: int) -> int:
    return mix(master_seed, _STREAM_DESCRIPTION)


def scene_seed(master_seed: int, scene_index: int) -> int:
    return mix(master_seed, _STREAM_SCENE, scene_index)


def env_seed(master_seed: int, scene_index: int) -> int:
    return mix(master_seed, _STREAM_ENV, scene_index)


def trial_seed(master_seed: int, scene_index: int, trial_index: int) -> int:
    return mix(master_seed, _STREAM_TRIAL, scene_index, trial_index)
