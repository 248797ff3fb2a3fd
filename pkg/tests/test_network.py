import json

import numpy as np
import pytest

from conftest import fig1_net, fo
from dynetid import (
    DynamicNetwork,
    SchemaError,
    SingularAtPoint,
    TransferFunction,
    load_network,
    net_hash,
    network_from_dict,
    network_to_dict,
    network_transfer,
    validate_network,
)
from dynetid.bundles import bundle_file

TF = TransferFunction


def _identity_H(L):
    return [[TF((1.0,)) if i == j else None for j in range(L)] for i in range(L)]


class TestConstruction:
    def test_rejects_self_loop(self):
        with pytest.raises(ValueError, match="diagonal"):
            DynamicNetwork(("a", "b"), [[TF((0.0, 1.0)), None], [None, None]],
                           _identity_H(2), (1.0, 1.0))

    def test_rejects_non_monic_noise(self):
        H = [[TF((0.5,)), None], [None, TF((1.0,))]]
        with pytest.raises(ValueError, match="monic"):
            DynamicNetwork(("a", "b"), [[None, None], [None, None]], H, (1.0, 1.0))

    def test_rejects_nonpositive_lambda(self):
        with pytest.raises(ValueError, match="positive"):
            DynamicNetwork(("a", "b"), [[None, None], [None, None]],
                           _identity_H(2), (1.0, 0.0))

    def test_zero_entries_normalized_to_structural_zero(self):
        net = DynamicNetwork(("a", "b"), [[None, TF((0.0,))], [fo(0.5, 0.1), None]],
                             _identity_H(2), (1.0, 1.0))
        assert net.G[0][1] is None
        assert net.G[1][0] is not None

    def test_name_and_index_lookup(self):
        net = fig1_net()
        assert net.node_index("w3") == 3
        assert net.node_index(3) == 3
        with pytest.raises(KeyError):
            net.node_index("nope")
        with pytest.raises(KeyError):
            net.node_index(9)


class TestValidate:
    def test_fig1_strictly_delayed_is_well_posed(self):
        report = validate_network(fig1_net())
        assert report.well_posed
        assert report.algebraic_loops == ()
        assert not report.unstable_closed_loop

    def test_feedthrough_cycle_is_algebraic_loop(self):
        g = TF((0.6,), (1.0, -0.2))  # direct feedthrough
        net = DynamicNetwork(("a", "b"), [[None, g], [g, None]],
                             _identity_H(2), (1.0, 1.0))
        report = validate_network(net)
        assert report.algebraic_loops == ((1, 2),)
        assert report.well_posed  # I - G(inf) still invertible (0.36 != 1)

    def test_unit_gain_feedthrough_cycle_not_well_posed(self):
        g = TF((1.0,))
        net = DynamicNetwork(("a", "b"), [[None, g], [g, None]],
                             _identity_H(2), (1.0, 1.0))
        report = validate_network(net)
        assert not report.well_posed

    def test_empty_network_well_posed(self):
        net = DynamicNetwork(("a", "b"), [[None, None], [None, None]],
                             _identity_H(2), (1.0, 1.0))
        report = validate_network(net)
        assert report.well_posed
        assert report.algebraic_loops == ()

    def test_unstable_feedback_detected(self):
        net = DynamicNetwork(
            ("a", "b"),
            [[None, fo(1.2, 0.0)], [fo(1.1, 0.0), None]],  # loop gain 1.32 > 1
            _identity_H(2), (1.0, 1.0))
        assert validate_network(net).unstable_closed_loop

    def test_validation_is_pure(self):
        net = fig1_net()
        assert validate_network(net) == validate_network(net)


class TestNetworkTransfer:
    def test_decoupled_identity(self):
        net = DynamicNetwork(("a", "b"), [[None, None], [None, None]],
                             _identity_H(2), (1.0, 1.0), excitations=(1, 2))
        for z in (1.0, np.exp(1j * 0.4), -1.0):
            T = network_transfer(net, z)
            assert np.allclose(T, np.hstack([np.eye(2), np.eye(2)]), atol=1e-14)

    def test_single_loop_closed_form(self):
        g12, g21 = fo(0.5, 0.2), fo(0.4, 0.3)
        net = DynamicNetwork(("a", "b"), [[None, g12], [g21, None]],
                             _identity_H(2), (1.0, 1.0))
        for omega in np.linspace(0.1, 3.0, 7):
            z = np.exp(1j * omega)
            T = network_transfer(net, z)
            expected = 1.0 / (1.0 - g12(z) * g21(z))
            assert T[0, 0] == pytest.approx(expected, abs=1e-12)

    def test_fig5_reference_has_full_row_rank(self):
        # independent SVD oracle on the shipped five-node model set reference
        from dynetid import load_model_set
        net = load_model_set(bundle_file("figure5-case1", "model-set.json")).reference
        rng = np.random.default_rng(4)
        for z in np.exp(1j * rng.uniform(0, 2 * np.pi, size=8)):
            s = np.linalg.svd(network_transfer(net, z), compute_uv=False)
            assert int(np.sum(s > s[0] * 1e-10)) == 5

    def test_singular_at_point(self):
        g = TF((1.0,), (1.0,))
        net = DynamicNetwork(("a", "b"), [[None, g], [g, None]],
                             _identity_H(2), (1.0, 1.0))
        # I - G(1) = [[1, -1], [-1, 1]] is singular
        with pytest.raises(SingularAtPoint):
            network_transfer(net, 1.0 + 0j)


class TestJsonSchema:
    def test_round_trip_identity(self):
        net = fig1_net()
        doc = network_to_dict(net)
        again = network_from_dict(doc)
        assert again == net
        assert net_hash(again) == net_hash(net)

    def test_round_trip_through_text(self, tmp_path):
        net = fig1_net()
        path = tmp_path / "net.json"
        with open(path, "w") as fh:
            json.dump(network_to_dict(net), fh)
        assert load_network(path) == net

    def test_unknown_top_level_key_rejected(self):
        doc = network_to_dict(fig1_net())
        doc["surprise"] = 1
        with pytest.raises(SchemaError, match="surprise"):
            network_from_dict(doc)

    def test_unknown_module_key_rejected(self):
        doc = network_to_dict(fig1_net())
        doc["modules"][0]["gain"] = 2.0
        with pytest.raises(SchemaError, match="gain"):
            network_from_dict(doc)

    def test_duplicate_module_rejected(self):
        doc = network_to_dict(fig1_net())
        doc["modules"].append(dict(doc["modules"][0]))
        with pytest.raises(SchemaError, match="duplicate"):
            network_from_dict(doc)

    def test_non_diagonal_noise_round_trip(self):
        doc = {
            "nodes": ["a", "b"],
            "modules": [{"from": "a", "to": "b", "num": [0.0, 0.5], "den": [1.0]}],
            "noise": {
                "H": [
                    {"row": "a", "col": 1, "num": [1.0], "den": [1.0, -0.4]},
                    {"row": "b", "col": 1, "num": [0.0, 0.2], "den": [1.0]},
                    {"row": "b", "col": 2, "num": [1.0, 0.3], "den": [1.0]},
                ],
                "lambda": [1.0, 2.0],
            },
            "excitations": ["a"],
        }
        net = network_from_dict(doc)
        assert net.p == 2
        assert network_from_dict(network_to_dict(net)) == net
