import hashlib
import random

import numpy as np


def stream_seed(root_seed, name):
    """Derive an independent 64-bit seed for a named stream from the root seed."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode("utf-8")).hexdigest()
    return int(digest[:16], 16)


def stream_random(root_seed, name):
    return random.Random(stream_seed(root_seed, name))


def stream_generator(root_seed, name):
    return np.random.default_rng(stream_seed(root_seed, name))
