"""Splittable random streams keyed by (master seed, episode, purpose, step)."""

import numpy as np

_PURPOSES = {"background": 0, "init": 1, "mac": 2, "agent": 3, "train": 4, "rf": 5, "table": 6, "cp": 7, "sim": 8}


def stream(master_seed, *key):
    words = tuple(_PURPOSES[k] if isinstance(k, str) else int(k) for k in key)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master_seed), spawn_key=words)))


def episode_rng(master_seed, episode, purpose):
    return stream(master_seed, episode, purpose)


def interval_rng(master_seed, episode, step, sub=0):
    return stream(master_seed, episode, "mac", step, sub)
