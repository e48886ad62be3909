import pytest

from common.config_controller import LayerConfig, PipelineConfig
from common.ensemble_controller import train_hierarchy
from common.selection_controller import SearchSpace
from common.synthetic_controller import SynthConfig, generate_synthetic

TINY_SYNTH = SynthConfig(channels=3, groups=2, length=3000, density=0.03)


def tiny_config(**overrides):
    """A desk-sized pipeline: one segment length, 2 x 2 masking, no hyperparameter search."""
    settings = dict(
        seed=3,
        workers=1,
        grid_step=30,
        segment_lengths=(20,),
        segment_strides=(5,),
        shapelet_lengths=(20,),
        pool_window=2,
        pool_stride=2,
        N=2,
        M=2,
        cca_len=600,
        K=2,
        shp_len=8,
        base=LayerConfig("gbt", {"n_trees": 10, "max_depth": 2, "min_leaf": 3}, SearchSpace(), 1, "random"),
        stack=LayerConfig("logreg"),
        cca=LayerConfig("logreg"),
    )
    settings.update(overrides)
    return PipelineConfig(**settings)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_synthetic(TINY_SYNTH, seed=11)


@pytest.fixture(scope="session")
def trained_model(tiny_dataset):
    return train_hierarchy(tiny_dataset, tiny_config())


@pytest.fixture
def make_config():
    return tiny_config


@pytest.fixture(scope="session")
def tree_cca_model(tiny_dataset):
    cca = LayerConfig("gbt", {"n_trees": 8, "max_depth": 2, "min_leaf": 3}, SearchSpace(), 1, "random")
    return train_hierarchy(tiny_dataset, tiny_config(cca=cca))
