import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from skelxai.data import SyntheticConfig, generate_synthetic_dataset, stack_inputs, synthetic_graph
from skelxai.model import GcnModel, ModelConfig, TrainConfig, train

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_model(V=6, seed=0, num_classes=3, C=2, strategy="spatial", branch_att="joint", main_att="joint",
                 branch_channels=(3,), main_channels=(4,)):
    """Small model with non-trivial edge importance and biases."""
    cfg = ModelConfig(in_channels=C, num_classes=num_classes, branch_channels=list(branch_channels),
                      main_channels=list(main_channels), partition_strategy=strategy,
                      branch_attention=branch_att, main_attention=main_att)
    m = GcnModel.initialize(cfg, synthetic_graph(V, 1 if strategy == "uniform" else 3), seed)
    rng = np.random.default_rng(seed + 100)
    for _, b in m.blocks():
        b.gcn.edge_importance[:] = rng.uniform(0.5, 1.5, b.gcn.edge_importance.shape)
        b.tcn.bias[:] = rng.normal(0, 0.1, b.tcn.bias.shape)
        b.att.bias[:] = rng.normal(0, 0.5, 1)
    m.classifier_bias[:] = rng.normal(0, 0.1, m.classifier_bias.shape)
    return m


def random_input(model, T=5, n=None, seed=0):
    rng = np.random.default_rng(seed)
    shape = (4, model.config.in_channels, T, model.graph.num_keypoints)
    return rng.normal(size=shape if n is None else (n,) + shape)


@pytest.fixture(scope="session")
def trained():
    """A model trained on the default synthetic dataset, with its splits."""
    cfg = SyntheticConfig()
    manifest, seqs = generate_synthetic_dataset(cfg, 7)
    xt, yt = stack_inputs([seqs[i] for i in manifest.split("train")], manifest.graph)
    xv, yv = stack_inputs([seqs[i] for i in manifest.split("val")], manifest.graph)
    model = train(GcnModel.initialize(ModelConfig(), manifest.graph, 7), xt, yt, TrainConfig(epochs=30, seed=7)).model
    return dict(model=model, manifest=manifest, xt=xt, yt=yt, xv=xv, yv=yv)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
