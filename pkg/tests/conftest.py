from __future__ import annotations

import numpy as np
import pytest
import torch

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def backbone_weights(tmp_path_factory):
    """Deterministic stand-in trunk weights shared by the whole session."""
    from aerocensus.backbone import synthesize_backbone_weights

    path = tmp_path_factory.mktemp("weights") / "backbone.pt"
    synthesize_backbone_weights(path, seed=11, batches=5, batch_size=8, image_size=112)
    return path


@pytest.fixture(scope="session")
def backbone(backbone_weights):
    from aerocensus.backbone import build_backbone

    model = build_backbone(backbone_weights)
    model.eval()
    return model


@pytest.fixture(scope="session")
def small_city():
    """A 24-neighborhood synthetic city with learnable non-zero populations."""
    from aerocensus.synth import SyntheticSpec, generate_synthetic_city

    spec = SyntheticSpec(
        n_hoods=24,
        density_range=(400.0, 20_000.0),
        hood_px_range=(100, 180),
        seed=5,
        tile_grid=(2, 2),
    )
    return generate_synthetic_city(spec)


@pytest.fixture(scope="session")
def small_city_dir(small_city, tmp_path_factory):
    from aerocensus.synth import write_synthetic_city

    out = tmp_path_factory.mktemp("city")
    paths = write_synthetic_city(small_city, out)
    return out, paths


def make_rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
