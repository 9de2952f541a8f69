import numpy as np
import pytest

from promptsurv.data import SynthSpec, discretize_times, generate_synthetic


def build_cohort(n_patients=24, n_regions=3, patches_per_region=4, d=16,
                 n_prompts=4, noise_sigma=0.3, censor_rate=0.25, seed=11,
                 n_bins=3):
    spec = SynthSpec(
        n_patients=n_patients, n_regions=n_regions,
        patches_per_region=patches_per_region, d=d,
        n_prompts_patch=n_prompts, n_prompts_region=n_prompts,
        noise_sigma=noise_sigma, censor_rate=censor_rate, seed=seed,
    )
    records, prompts, truth = generate_synthetic(spec)
    discretize_times(records, n_bins)
    return records, prompts, truth


@pytest.fixture
def small_cohort():
    return build_cohort()


def params_bytes(model) -> bytes:
    return b"".join(node.value.tobytes()
                    for _, node in sorted(model.params.items()))


def read_all_bytes(paths) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in paths}
