"""Shared network builders for the test suite.

The canonical example networks are loaded from the shipped bundles so that
the tests and the CLI exercise the same files; the small ad-hoc networks used
by estimator tests are built here.
"""

from functools import lru_cache

from dynetid import DynamicNetwork, TransferFunction, load_network
from dynetid.bundles import bundle_file

TF = TransferFunction
fo = TransferFunction.first_order


@lru_cache(maxsize=None)
def fig1_net() -> DynamicNetwork:
    """Eight-node example network (four excitations, noise on every node)."""
    return load_network(bundle_file("figure1", "network.json"))


@lru_cache(maxsize=None)
def fig6b_net(feedthrough: bool = False) -> DynamicNetwork:
    name = "network-feedthrough.json" if feedthrough else "network.json"
    return load_network(bundle_file("figure6b", name))


@lru_cache(maxsize=None)
def twoloop_net() -> DynamicNetwork:
    return load_network(bundle_file("twoloop", "network.json"))


#: True interaction module of the feedback-loop test system (FIR).
LOOP_G21 = TF((0.0, 0.4, 0.25))
#: Feedback path of the loop.
LOOP_G12 = fo(0.5, 0.3)


@lru_cache(maxsize=None)
def loop_net(colored_v2: bool = False) -> DynamicNetwork:
    """Two-node feedback loop w1 = G12 w2 + r1 + v1, w2 = G21 w1 + v2."""
    h2 = TF((1.0,), (1.0, -0.8)) if colored_v2 else TF((1.0,))
    return DynamicNetwork(
        node_names=("w1", "w2"),
        G=[[None, LOOP_G12], [LOOP_G21, None]],
        H=[[TF((1.0,)), None], [None, h2]],
        lam=(0.5, 0.5),
        excitations=(1,),
    )


@lru_cache(maxsize=None)
def ar1_net() -> DynamicNetwork:
    """AR(1) loop w1 = 0.5 q^-1 w1 + e1, realized with a unit relay node."""
    return DynamicNetwork(
        node_names=("w1", "relay"),
        G=[[None, fo(0.5, 0.0)], [TF((1.0,)), None]],
        H=[[TF((1.0,))], [None]],
        lam=(1.0,),
    )
