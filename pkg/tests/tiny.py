"""Tiny run configurations shared by the trainer, CLI and acceptance tests."""
from selfcollab.config import parse_config

TINY = {
    "seed": 3,
    "corpus": {"n_sources": 16, "n_validation": 2, "size": 32},
    "networks": {"denoiser_width": 4, "denoiser_depth": 1, "generator_width": 4, "generator_blocks": 1,
                 "discriminator_width": 4, "discriminator_layers": 2},
    "train": {"batch": 2, "patch": 16, "eval_interval": 2, "dtype": "float64"},
    "schedule": {"max_iterations": 2, "baseline_steps": 4, "steps_per_iteration": 4, "stage2_start": 4,
                 "stage2_patch": 24, "stage2_batch": 2, "stop_delta_db": 0.0},
}

# the acceptance profile for the end-to-end toy runs (see README)
TOY = {
    "seed": 0,
    "networks": {"generator_width": 16, "discriminator_width": 16, "denoiser_width": 16},
    "train": {"patch": 32, "eval_interval": 100},
    "schedule": {"baseline_steps": 2000, "steps_per_iteration": 1000},
}


def merge(base: dict, over: dict) -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for k, v in over.items():
        out[k] = {**out.get(k, {}), **v} if isinstance(v, dict) else v
    return out


def tiny_config(**over):
    return parse_config(merge(TINY, over))


def toy_config(**over):
    return parse_config(merge(TOY, over))
