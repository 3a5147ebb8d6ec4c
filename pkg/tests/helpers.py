import numpy as np

from toolwear.dataset import WindowedDataset
from toolwear.neural import Hyperparameters, init_model


def random_model(n_layers, units, activation="tanh", regularizer="L2", reg_factor=1e-3,
                 seed=0, input_dim=6, rng=None, **hp):
    """A model pushed away from its init symmetry.

    Kernel entries are kept at least 1e-3 away from zero so a finite
    difference step never crosses the L1 kink.
    """
    rng = rng or np.random.default_rng(seed)
    h = Hyperparameters(n_layers=n_layers, units_per_layer=(units,) * n_layers,
                        activation=activation, regularizer=regularizer, reg_factor=reg_factor,
                        seed=seed, **hp)
    m = init_model(h, input_dim)
    for k in m.params:
        m.params[k] += 0.1 * rng.standard_normal(m.params[k].shape)
    for l in range(n_layers):
        W = m.params[f"layer{l}.W"]
        W[...] = np.where(W >= 0, 1.0, -1.0) * np.maximum(np.abs(W), 1e-3)
    return m


def toy_dataset(n=40, T=4, F=6, seed=0, scaled=True):
    """Smooth scaled sequences whose target is the mean of the last step."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, size=(n, T, F))
    y = x[:, -1, :].mean(axis=1)
    return WindowedDataset(x, y, np.arange(n), tuple(f"f{i}" for i in range(F)), scaled=scaled)
