import numpy as np
import pytest

from conftest import fig1_net, fo
from dynetid import (
    DynamicNetwork,
    ExcitationSource,
    NoiseSource,
    TransferFunction,
    check_input_selection,
    confounding_variables,
    correlated_nodes,
    has_path,
    immerse,
    method_sets,
    parents,
    select_inputs,
    simulate,
    simulate_immersed,
)
from dynetid.errors import AlgebraicEliminationFailure
from dynetid.transfer import evaluate, mul

TF = TransferFunction


def _cascade(n=2):
    """w1 -> w2 (-> w3), diagonal white noise, excitation at the head."""
    if n == 2:
        G = [[None, None], [fo(0.5, 0.2), None]]
    else:
        G = [[None] * 3 for _ in range(3)]
        G[1][0] = fo(0.6, 0.3)
        G[2][1] = fo(0.4, 0.5)
    H = [[TF((1.0,)) if i == j else None for j in range(n)] for i in range(n)]
    return DynamicNetwork(tuple(f"w{i+1}" for i in range(n)), G, H, (1.0,) * n,
                          excitations=(1,))


class TestParents:
    def test_fig1_node2(self):
        assert parents(fig1_net(), 2) == {1, 3, 6, 7}

    def test_disconnected(self):
        net = DynamicNetwork(("a", "b"), [[None, None], [None, None]],
                             [[TF((1.0,)), None], [None, TF((1.0,))]], (1.0, 1.0))
        assert parents(net, 1) == set()
        assert parents(net, 2) == set()

    def test_fig5_node2(self):
        from dynetid import load_model_set
        from dynetid.bundles import bundle_file
        net = load_model_set(bundle_file("figure5-case3", "model-set.json")).reference
        assert parents(net, 2) == {1, 3}


def _all_simple_paths(children, src, dst):
    """Exhaustive enumeration oracle: all simple paths src -> dst."""
    paths = []

    def walk(node, path):
        for nxt in children.get(node, ()):
            if nxt == dst:
                paths.append(path + [nxt])
            elif nxt not in path:
                walk(nxt, path + [nxt])

    walk(src, [src])
    return paths


def _children_of(net):
    out = {l: [] for l in range(1, net.L + 1)}
    for j in range(net.L):
        for l in range(net.L):
            if net.G[j][l] is not None:
                out[l + 1].append(j + 1)
    return out


class TestHasPath:
    def test_fig1_direct_edge_survives_avoiding(self):
        # module w7 -> w2 exists, so the avoid set cannot block it
        assert has_path(fig1_net(), 7, 2, avoiding={1, 3, 6})

    def test_fig1_w4_to_w2_avoiding_3(self):
        net = fig1_net()
        children = _children_of(net)
        paths = _all_simple_paths(children, 4, 2)
        open_paths = [p for p in paths if 3 not in p[1:-1]]
        assert open_paths  # oracle: the route through w8 and w1 stays open
        assert all(8 in p and 1 in p for p in open_paths)
        assert has_path(net, 4, 2, avoiding={3})
        # blocking that route too closes everything
        blocked = [p for p in paths if not {3, 8} & set(p[1:-1])]
        assert not blocked
        assert not has_path(net, 4, 2, avoiding={3, 8})

    def test_no_self_loops(self):
        net = fig1_net()
        others = set(range(1, 9)) - {2}
        assert not has_path(net, 2, 2, avoiding=others)

    def test_self_cycle_found_when_open(self):
        net = fig1_net()
        assert has_path(net, 2, 2)  # w2 sits on several loops

    def test_noise_source_entry_node_blocks(self):
        net = fig1_net()
        assert has_path(net, NoiseSource(7), 2)
        assert not has_path(net, NoiseSource(7), 2, avoiding={7})
        # the entry node itself is reachable even when avoided elsewhere
        assert has_path(net, NoiseSource(7), 7, avoiding={7})

    def test_excitation_source(self):
        net = fig1_net()
        assert has_path(net, ExcitationSource(1), 2)
        assert not has_path(net, ExcitationSource(1), 2, avoiding={1})


class TestBruteForceOracle:
    """parents/has_path/correlated_nodes vs matrix-power reachability."""

    def _random_net(self, rng):
        L = int(rng.integers(2, 7))
        G = [[None] * L for _ in range(L)]
        for j in range(L):
            for l in range(L):
                if j != l and rng.random() < 0.3:
                    G[j][l] = fo(0.3, 0.1)
        H = [[TF((1.0,)) if i == j else None for j in range(L)] for i in range(L)]
        exc = tuple(n + 1 for n in range(L) if rng.random() < 0.4)
        return DynamicNetwork(tuple(f"n{i}" for i in range(L)), G, H, (1.0,) * L, exc)

    @staticmethod
    def _adjacency(net):
        A = np.zeros((net.L, net.L), dtype=bool)
        for j in range(net.L):
            for l in range(net.L):
                if net.G[j][l] is not None:
                    A[j, l] = True
        return A

    @staticmethod
    def _reach_by_powers(A, src, dst, avoiding):
        """Path existence via boolean powers of the masked adjacency.

        A[j, l] encodes the edge l -> j.  Avoided intermediates lose all of
        their incident edges, except that the source keeps outgoing and the
        destination keeps incoming ones (endpoints are exempt).
        """
        L = A.shape[0]
        B = A.copy()
        for n in avoiding:
            idx = n - 1
            if idx != dst - 1:
                B[idx, :] = False
            if idx != src - 1:
                B[:, idx] = False
        power = B.copy()
        reach = power.copy()
        for _ in range(L):
            power = power @ B
            reach |= power
        return bool(reach[dst - 1, src - 1])

    def test_agreement_on_random_graphs(self):
        rng = np.random.default_rng(123)
        for _ in range(100):
            net = self._random_net(rng)
            A = self._adjacency(net)
            for j in range(1, net.L + 1):
                assert parents(net, j) == {l + 1 for l in range(net.L) if A[j - 1, l]}
            for _ in range(5):
                src = int(rng.integers(1, net.L + 1))
                dst = int(rng.integers(1, net.L + 1))
                avoid = {int(n) for n in rng.choice(np.arange(1, net.L + 1),
                                                    size=rng.integers(0, net.L),
                                                    replace=False)}
                avoid -= {src, dst}
                assert has_path(net, src, dst, avoiding=avoid) == \
                    self._reach_by_powers(A, src, dst, avoid)
            if net.excitations:
                reach = np.zeros(net.L, dtype=bool)
                for m in net.excitations:
                    reach[m - 1] = True
                    power = A.copy()
                    for _ in range(net.L):
                        reach |= power[:, m - 1]
                        power = power @ A
                assert correlated_nodes(net, net.excitations) == \
                    {i + 1 for i in range(net.L) if reach[i]}


class TestInputSelection:
    def test_fig1_sufficient_set(self):
        sel = check_input_selection(fig1_net(), 2, 1, {1, 3, 6})
        assert sel.satisfied.a and sel.satisfied.b and sel.satisfied.c
        assert sel.confounders == (7,)

    def test_fig1_single_input_fails_b(self):
        sel = check_input_selection(fig1_net(), 2, 1, {1})
        assert not sel.satisfied.b

    def test_fig1_full_set_no_confounders(self):
        sel = check_input_selection(fig1_net(), 2, 1, {1, 3, 6, 7})
        assert sel.satisfied.a and sel.satisfied.b and sel.satisfied.c
        assert sel.confounders == ()

    def test_select_minimal(self):
        sel = select_inputs(fig1_net(), 2, 1)
        assert sel.D == (1, 3, 6)
        assert sel.confounders == (7,)

    def test_select_no_confounders(self):
        sel = select_inputs(fig1_net(), 2, 1, require_no_confounders=True)
        assert sel.D == (1, 3, 6, 7)
        assert sel.confounders == ()

    def test_select_respects_costs(self):
        # make w6 expensive: blocking through w6 is still structurally forced,
        # so the answer is unchanged; make w3 expensive vs alternatives and the
        # optimizer has no cheaper feasible set either; sanity check invariance
        sel = select_inputs(fig1_net(), 2, 1, cost={6: 10.0})
        assert sel.D == (1, 3, 6)

    def test_cascade_single_parent(self):
        sel = select_inputs(_cascade(2), 2, 1)
        assert sel.D == (1,)
        assert sel.confounders == ()

    def test_selection_always_passes_checker(self):
        rng = np.random.default_rng(5)
        oracle = TestBruteForceOracle()
        for _ in range(40):
            net = oracle._random_net(rng)
            for j in range(1, net.L + 1):
                for i in sorted(parents(net, j)):
                    try:
                        sel = select_inputs(net, j, i)
                    except Exception:
                        continue
                    chk = check_input_selection(net, j, i, sel.D)
                    assert chk.satisfied.a and chk.satisfied.b and chk.satisfied.c


class TestConfounders:
    def test_fig1_examples(self):
        net = fig1_net()
        assert confounding_variables(net, 2, {1, 3, 6}) == {7}
        assert confounding_variables(net, 2, {1, 3, 6, 7}) == frozenset()

    def test_cascade_no_confounder(self):
        assert confounding_variables(_cascade(2), 2, {1}) == frozenset()

    def test_requires_nonempty_D(self):
        with pytest.raises(ValueError):
            confounding_variables(_cascade(2), 2, set())


class TestCorrelatedNodes:
    def test_fig1_r1_reaches_every_node(self):
        assert correlated_nodes(fig1_net(), (1,)) == set(range(1, 9))

    def test_fig1_method_sets(self):
        ms = method_sets(fig1_net(), 2, externals=(1,))
        assert ms.N_j == (1, 3, 6, 7)
        assert ms.U_j == (1, 3, 6, 7)
        assert ms.U_is == (1, 3, 6, 7)

    def test_no_externals(self):
        assert correlated_nodes(fig1_net(), ()) == set()

    def test_excitation_at_sink(self):
        net = DynamicNetwork(
            ("w1", "w2"), [[None, None], [fo(0.5, 0.2), None]],
            [[TF((1.0,)), None], [None, TF((1.0,))]], (1.0, 1.0), excitations=(2,))
        assert correlated_nodes(net, (2,)) == {2}


class TestImmersion:
    def test_keep_all_is_identity(self):
        net = fig1_net()
        imm = immerse(net, keep=range(1, 9))
        for j in range(8):
            for l in range(8):
                assert imm.G[j][l] == net.G[j][l]

    def test_cascade_composition(self):
        net = _cascade(3)
        imm = immerse(net, keep=(1, 3))
        expect = mul(net.G[2][1], net.G[1][0])
        assert imm.module(3, 1) == expect

    def test_fig1_target_module_preserved(self):
        net = fig1_net()
        imm = immerse(net, keep=(2, 1, 3, 6))
        g21 = net.G[1][0]
        m21 = imm.module(2, 1)
        for omega in np.linspace(0.05, 3.1, 16):
            z = np.exp(1j * omega)
            assert abs(evaluate(m21, z) - evaluate(g21, z)) < 1e-8

    def test_signal_invariance(self):
        net = fig1_net()
        data = simulate(net, N=3000, seed=11, burn_in=0)
        imm = immerse(net, keep=(1, 2, 3, 6))
        w_imm = simulate_immersed(imm, data.e, data.r)
        idx = [k - 1 for k in imm.kept]
        rms = np.sqrt(np.mean((w_imm[:, 200:] - data.w[idx, 200:]) ** 2, axis=1))
        assert np.all(rms < 1e-8)

    def test_order_independence(self):
        # full elimination vs stopping at an intermediate retained set: the
        # signals of the final retained nodes must agree either way, and so
        # must the target module's frequency response
        net = fig1_net()
        direct = immerse(net, keep=(1, 2, 3, 6))
        stage = immerse(net, keep=(1, 2, 3, 4, 6, 8))
        data = simulate(net, N=2000, seed=23, burn_in=0)
        w_direct = simulate_immersed(direct, data.e, data.r)
        w_stage = simulate_immersed(stage, data.e, data.r)
        pos = [stage.kept.index(k) for k in (1, 2, 3, 6)]
        assert np.max(np.abs(w_direct - w_stage[pos])) < 1e-8
        rng = np.random.default_rng(17)
        m_direct = direct.module(2, 1)
        m_stage = stage.module(2, 1)
        for z in np.exp(1j * rng.uniform(0, 2 * np.pi, size=16)):
            assert abs(evaluate(m_direct, z) - evaluate(m_stage, z)) < 1e-8

    def test_unit_feedthrough_self_loop_fails(self):
        g = TF((1.0,))
        net = DynamicNetwork(("a", "b"), [[None, g], [g, None]],
                             [[TF((1.0,)), None], [None, TF((1.0,))]], (1.0, 1.0))
        with pytest.raises(AlgebraicEliminationFailure):
            immerse(net, keep=(1,))
