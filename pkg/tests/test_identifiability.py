import json

import numpy as np
import pytest

from dynetid import (
    DynamicNetwork,
    ModelSetSpec,
    SchemaError,
    TransferFunction,
    check_identifiability,
    count_condition,
    load_model_set,
    model_set_from_dict,
    network_transfer,
    rank_condition,
)
from dynetid.bundles import bundle_file
from dynetid.identifiability import _mixed_model, _transfer_raw, report_to_dict

TF = TransferFunction
fo = TransferFunction.first_order


def _case(name):
    return load_model_set(bundle_file(f"figure5-{name}", "model-set.json"))


class TestCountCondition:
    def test_case2_first_two_rows_over_budget(self):
        counts = count_condition(_case("case2"))
        assert counts[0] == (6, 5, False)
        assert counts[1] == (6, 5, False)
        assert all(ok for n, b, ok in counts[2:])

    def test_case3_max_is_four(self):
        counts = count_condition(_case("case3"))
        assert max(n for n, _, _ in counts) == 4
        assert all(ok for _, _, ok in counts)

    def test_all_known_counts_zero(self):
        spec = _case("case3")
        g_tags = tuple(tuple("known" if t == "param" else t for t in row)
                       for row in spec.g_tags)
        h_tags = tuple(tuple("known" if t == "param" else t for t in row)
                       for row in spec.h_tags)
        frozen = ModelSetSpec(spec.reference, g_tags, h_tags, spec.r_tags)
        assert all(n == 0 for n, _, _ in count_condition(frozen))


class TestRankCondition:
    def test_case1_diagonal_shortcut(self):
        results = rank_condition(_case("case1"))
        assert all(ok for _, _, ok, _ in results)
        assert any("diagonal" in note for _, _, _, note in results)

    def test_case3_full_rank_rows(self):
        results = rank_condition(_case("case3"))
        assert [need for need, _, _, _ in results] == [2, 2, 1, 0, 1]
        assert all(ok for _, _, ok, _ in results)

    def test_row_without_parametrized_modules_is_vacuous(self):
        results = rank_condition(_case("case3"))
        need, found, ok, note = results[3]
        assert (need, found, ok) == (0, 0, True)
        assert "no parametrized modules" in note


class TestVerdicts:
    def test_triptych(self):
        assert check_identifiability(_case("case1")).verdict == "identifiable"
        assert check_identifiability(_case("case2")).verdict == "not_identifiable"
        assert check_identifiability(_case("case3")).verdict == "identifiable"

    def test_case2_witness_certificate(self):
        report = check_identifiability(_case("case2"))
        w = report.witness
        assert w is not None
        assert w.transfer_difference < 1e-8
        assert w.model_difference > 1e-3

    def test_witness_models_verified_independently(self):
        spec = _case("case2")
        net = spec.reference
        G2, H2, R2 = _mixed_model(net, 0, 1, 0.3)
        rng = np.random.default_rng(3)
        for z in np.exp(1j * rng.uniform(0, 2 * np.pi, size=16)):
            T1 = network_transfer(net, z)
            T2 = _transfer_raw(G2, H2, R2, z)
            assert np.max(np.abs(T1 - T2)) < 1e-8

    def test_rank_failure_alone_is_inconclusive(self):
        # node c is a pure function of node b, so the transfer rows of b and
        # c are pointwise proportional: row a needs rank 2 from them and
        # fails, while every count stays within the budget K + p = 2
        G = [[None, fo(0.3, 0.2), fo(0.2, 0.1)],
             [fo(0.4, 0.2), None, None],
             [None, fo(0.5, 0.3), None]]
        net = DynamicNetwork(("a", "b", "c"), G,
                             [[TF((1.0,))], [None], [None]], (1.0,), excitations=(1,))
        g_tags = [["zero", "param", "param"],
                  ["known", "zero", "zero"],
                  ["zero", "known", "zero"]]
        h_tags = [["known"], ["zero"], ["zero"]]
        r_tags = [["known"], ["zero"], ["zero"]]
        spec = ModelSetSpec(net, g_tags, h_tags, r_tags)
        counts = count_condition(spec)
        assert all(ok for _, _, ok in counts)
        need, found, ok, _ = rank_condition(spec)[0]
        assert (need, found, ok) == (2, 1, False)
        report = check_identifiability(spec)
        assert report.verdict == "inconclusive"
        assert any("sufficient" in n for n in report.notes)

    def test_seed_invariance(self):
        for name in ("case1", "case2", "case3"):
            a = check_identifiability(_case(name), seed=0).verdict
            b = check_identifiability(_case(name), seed=12345).verdict
            assert a == b

    def test_local_injectivity_for_identifiable_set(self):
        # random perturbations of the reference must move the transfer matrix
        spec = _case("case3")
        net = spec.reference
        rng = np.random.default_rng(8)
        zs = np.exp(1j * rng.uniform(0, 2 * np.pi, size=8))
        base = [network_transfer(net, z) for z in zs]
        for _ in range(50):
            G2 = [list(row) for row in net.G]
            model_diff = 0.0
            for i in range(net.L):
                for j in range(net.L):
                    if spec.g_tags[i][j] == "param" and net.G[i][j] is not None:
                        bump = rng.uniform(-0.05, 0.05)
                        num = np.asarray(net.G[i][j].num).copy()
                        num[-1] += bump
                        G2[i][j] = TF(tuple(num), net.G[i][j].den)
                        model_diff = max(model_diff, abs(bump))
            pert = DynamicNetwork(net.node_names, G2, net.H, net.lam, net.excitations)
            t_diff = max(
                float(np.max(np.abs(network_transfer(pert, z) - b)))
                for z, b in zip(zs, base))
            assert t_diff > 1e-6 * model_diff


class TestModelSetSchema:
    def test_zero_tag_with_nonzero_reference_rejected(self):
        spec = _case("case3")
        g_tags = [list(r) for r in spec.g_tags]
        g_tags[1][0] = "zero"  # reference has a module there
        with pytest.raises(ValueError, match="tagged zero"):
            ModelSetSpec(spec.reference, g_tags, spec.h_tags, spec.r_tags)

    def test_unknown_key_rejected(self):
        with open(bundle_file("figure5-case1", "model-set.json")) as fh:
            doc = json.load(fh)
        doc["extra"] = True
        with pytest.raises(SchemaError, match="extra"):
            model_set_from_dict(doc)

    def test_report_serialization(self):
        doc = report_to_dict(check_identifiability(_case("case2")))
        assert doc["verdict"] == "not_identifiable"
        assert doc["witness"]["model_difference"] > 1e-3
        assert len(doc["rows"]) == 5
        assert any("reference" in n for n in doc["notes"])
