"""Shared fixtures: desk-sized trained checkpoints for service-level tests."""

import pytest
import torch

from sketchgen.checkpoint import save_bundle
from sketchgen.fixtures import synth_dataset
from sketchgen.gat import GatConfig
from sketchgen.house import (HouseConfig, HouseModel, fit_house,
                             synth_house_dataset)
from sketchgen.locator import LocatorConfig
from sketchgen.sketcher import SketcherConfig
from sketchgen.training import TrainConfig, train


@pytest.fixture(scope="session")
def ckpt_dir(tmp_path_factory):
    """Directory holding a creature.ckpt (both stages) and a house.ckpt."""
    root = tmp_path_factory.mktemp("ckpts")
    data = synth_dataset(8, seed=0)
    gat = GatConfig(d_model=32, n_heads=2, n_blocks=1, ffn_mult=2)
    pl = train(TrainConfig(stage="PL", steps=30, batch_size=8, lr=1e-3,
                           seed=0),
               data,
               model_cfg=LocatorConfig(n_components=3, z_dim=8,
                                       n_decoder_layers=1,
                                       max_condition_points=24, gat=gat))
    ps = train(TrainConfig(stage="PS", steps=2, batch_size=2, seed=0),
               data,
               model_cfg=SketcherConfig(channels=8, n_patches=2,
                                        max_condition_points=24, gat=gat),
               locator=pl.locator)
    save_bundle(root / "creature.ckpt", locator=pl.locator,
                sketcher=ps.sketcher)

    torch.manual_seed(0)
    house = HouseModel(HouseConfig(
        n_room_types=10, max_rooms=6,
        locator=LocatorConfig(n_parts=6, n_components=3, z_dim=8,
                              n_decoder_layers=1,
                              gat=GatConfig(d_model=32, n_heads=2,
                                            n_blocks=1))))
    fit_house(house, synth_house_dataset(6, seed=0, n_rooms=4), steps=20)
    save_bundle(root / "house.ckpt", house=house)
    return root
