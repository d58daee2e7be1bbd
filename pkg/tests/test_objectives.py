"""Objectives: hand-computed values, unbiasedness, equivalence, baselines."""

import numpy as np
import pytest

from csm import objectives as obj
from csm.autodiff import Tensor, gradient_check
from csm.exact import TabularDistribution, concrete_score_exact, kl_and_tv, reconstruct_density
from csm.graphs import DiscreteSpace, build_reverse_index, build_structure
from csm.models import LogitTableModel, MaskedARModel, ScoreNetModel, fit


class _FixedScore:
    """Stub score model returning preset entries (no parameters)."""

    def __init__(self, table):
        self.table = table  # state tuple -> vector

    def score_entries(self, structure, states, positions):
        return np.array(
            [self.table[tuple(s)][p] for s, p in zip(np.asarray(states), positions)]
        )

    def score_vector(self, structure, x):
        return np.asarray(self.table[tuple(x)], dtype=np.float64)


class TestExactLosses:
    def test_perfect_model_gives_zero(self):
        rng = np.random.default_rng(0)
        space = DiscreteSpace((8,))
        p = TabularDistribution.random_positive(space, rng)
        cycle = build_structure("cycle", space)
        table = {
            space.state_of(i): concrete_score_exact(p, cycle, space.state_of(i))
            for i in range(8)
        }
        assert obj.csm_loss_exact(_FixedScore(table), p, cycle).value == pytest.approx(0.0, abs=1e-18)

    def test_zero_model_hand_value(self):
        """0.25 * 2^2 + 0.75 * (2/3)^2 = 4/3 for the two-state example."""
        space = DiscreteSpace((2,))
        p = TabularDistribution(space, np.array([0.25, 0.75]))
        comp = build_structure("complete", space)
        zero = LogitTableModel(space)
        assert obj.csm_loss_exact(zero, p, comp).value == pytest.approx(4.0 / 3.0)
        out = obj.jcsm_exact(zero, p, comp)
        assert out.value == pytest.approx(0.0)
        assert out.meta["j1"] == pytest.approx(0.0)
        assert out.meta["j2"] == pytest.approx(0.0)

    def test_offset_constant_across_parameters(self):
        """L and J differ by the same constant at every parameter value."""
        rng = np.random.default_rng(1)
        space = DiscreteSpace((12,))
        p = TabularDistribution.random_positive(space, rng)
        star = build_structure("star", space)
        offsets = []
        for _ in range(10):
            m = LogitTableModel(space)
            m.params["logits"].data = rng.standard_normal(12)
            offsets.append(
                obj.csm_loss_exact(m, p, star).value - obj.jcsm_exact(m, p, star).value
            )
        assert max(offsets) - min(offsets) < 1e-8

    def test_consistency_training_recovers_distribution(self):
        """Minimizing the enumerated objective recovers the data distribution."""
        rng = np.random.default_rng(2)
        for kind, dims in (("cycle", (16,)), ("grid", (6, 6))):
            space = DiscreteSpace(dims)
            p = TabularDistribution.random_positive(space, rng)
            structure = build_structure(kind, space)
            model = LogitTableModel(space, seed=0)
            dummy = p.sample(4, rng)
            objective = lambda m, b, r: obj.jcsm_exact(m, p, structure)
            for lr, iters in ((0.1, 1500), (0.02, 1500), (0.004, 1500)):
                fit(model, objective, dummy, iterations=iters, batch_size=1, lr=lr, seed=0)
            _, tv = kl_and_tv(model.distribution(), p)
            assert tv < 1e-3, f"{kind}: tv={tv}"


class TestHandValuesMC:
    def test_j1_single_draws(self):
        """Alg-style contributions: deg * (c^2 + 2c) for the drawn slot."""
        space = DiscreteSpace((3,))
        comp = build_structure("complete", space)  # degree 2 everywhere
        table = {(0,): [0.5, -0.2], (1,): [0.5, -0.2], (2,): [0.5, -0.2]}
        model = _FixedScore(table)
        batch = np.array([[0]])

        class PickSlot:
            def __init__(self, k):
                self.k = k

            def integers(self, lo, hi, size=None):
                out = np.full_like(np.asarray(hi), self.k) if size is None else np.full(size, self.k)
                return out

        assert obj.estimate_j1(model, batch, comp, PickSlot(0)).value == pytest.approx(2.5)
        assert obj.estimate_j1(model, batch, comp, PickSlot(1)).value == pytest.approx(-0.72)

    def test_j2_reverse_draw(self):
        """2 * |reverse set| * entry for star hubs: 5 sources, entry 0.4."""
        space = DiscreteSpace((6,))
        star = build_structure("star", space)
        rev = build_reverse_index(star)
        table = {(i,): [0.4] for i in range(1, 6)}
        table[(0,)] = []
        model = _FixedScore(table)
        batch = np.array([[0]])  # the hub: |N^-1| = 5
        rng = np.random.default_rng(0)
        assert obj.estimate_j2(model, batch, star, rev, rng).value == pytest.approx(2 * 5 * 0.4)

    def test_j2_structured_cycle_hand_value(self):
        """Batch {x2} on a 4-cycle reads the predecessor's only entry."""
        space = DiscreteSpace((4,))
        cycle = build_structure("cycle", space)
        table = {(i,): [0.0] for i in range(4)}
        table[(1,)] = [0.3]
        model = _FixedScore(table)
        out = obj.estimate_j2_structured(model, np.array([[2]]), cycle, np.random.default_rng(0))
        assert out.value == pytest.approx(0.6)

    def test_j2_structured_chain_first_state(self):
        space = DiscreteSpace((5,))
        chain = build_structure("chain", space)
        table = {(i,): [1.0] for i in range(4)}
        table[(4,)] = []
        model = _FixedScore(table)
        out = obj.estimate_j2_structured(model, np.array([[0]]), chain, np.random.default_rng(0))
        assert out.value == pytest.approx(0.0)
        assert out.meta["j2_skipped_empty"] == 1

    def test_star_hub_skipped_in_j1(self):
        space = DiscreteSpace((6,))
        star = build_structure("star", space)
        model = _FixedScore({(i,): ([0.2] if i else []) for i in range(6)})
        out = obj.estimate_j1(model, np.array([[0]]), star, np.random.default_rng(0))
        assert out.value == 0.0
        assert out.meta["j1_skipped_empty"] == 1

    def test_structured_rejects_star(self):
        star = build_structure("star", DiscreteSpace((6,)))
        with pytest.raises(ValueError):
            obj.estimate_j2_structured(
                _FixedScore({}), np.array([[1]]), star, np.random.default_rng(0)
            )


class TestUnbiasedness:
    @pytest.mark.parametrize("kind,dims,boundary", [
        ("chain", (30,), "drop"),
        ("cycle", (30,), "drop"),
        ("star", (20,), "drop"),
        ("grid", (2, 2, 2, 2), "drop"),
        ("grid", (7, 7), "wrap"),
    ])
    def test_estimators_match_enumeration(self, kind, dims, boundary):
        """Estimator means sit within 3 exact standard errors of the truth."""
        from csm.checks import _enumerated_j_stats

        rng = np.random.default_rng(17)
        structure = build_structure(kind, DiscreteSpace(dims), boundary=boundary)
        space = structure.space
        p = TabularDistribution.random_positive(space, rng)
        model = LogitTableModel(space)
        model.params["logits"].data = 0.6 * rng.standard_normal(space.total_states)
        rev = build_reverse_index(structure)
        j1, var1, j2, var2, var2s = _enumerated_j_stats(model, p, structure)
        draws = 60_000
        batch = p.sample(draws, rng)
        est1 = obj.estimate_j1(model, batch, structure, rng).value
        assert abs(est1 - j1) < 3 * np.sqrt(var1 / draws)
        est2 = obj.estimate_j2(model, batch, structure, rev, rng).value
        assert abs(est2 - j2) < 3 * np.sqrt(var2 / draws)
        if var2s is not None:
            est2s = obj.estimate_j2_structured(model, batch, structure, rng).value
            assert abs(est2s - j2) < 3 * np.sqrt(var2s / draws)

    def test_structured_and_reverse_index_agree_on_cycle(self):
        """The two J2 estimators share their mean on a 91-state cycle."""
        rng = np.random.default_rng(23)
        structure = build_structure("cycle", DiscreteSpace((91,)))
        p = TabularDistribution.random_positive(structure.space, rng)
        model = LogitTableModel(structure.space)
        model.params["logits"].data = 0.5 * rng.standard_normal(91)
        rev = build_reverse_index(structure)
        batch = p.sample(60_000, rng)
        a = obj.estimate_j2(model, batch, structure, rev, rng).value
        b = obj.estimate_j2_structured(model, batch, structure, rng).value
        assert a == pytest.approx(b, abs=1e-12)  # both deterministic given the batch


class TestNoiseKernel:
    def test_rows_sum_to_one(self):
        kernel = obj.NoiseKernel(DiscreteSpace((91, 91)), w=0.9)
        for d in range(2):
            np.testing.assert_allclose(kernel.row(d).sum(axis=1), 1.0, atol=1e-12)

    def test_off_diagonal_value(self):
        kernel = obj.NoiseKernel(DiscreteSpace((91,)), w=0.9)
        assert kernel.row(0)[3, 7] == pytest.approx(0.1 / 90.0)

    def test_near_identity_limit(self):
        kernel = obj.NoiseKernel(DiscreteSpace((91,)), w=1 - 8e-5)
        row = kernel.row(0)
        assert row[0, 1] < 1e-6

    def test_w_out_of_range(self):
        with pytest.raises(ValueError):
            obj.NoiseKernel(DiscreteSpace((4,)), w=1.0)

    def test_sampler_matches_rows(self):
        rng = np.random.default_rng(5)
        kernel = obj.NoiseKernel(DiscreteSpace((5,)), w=0.7)
        states = np.full((200_000, 1), 2)
        noisy = kernel.sample(states, rng)
        freq = np.bincount(noisy[:, 0], minlength=5) / 200_000
        np.testing.assert_allclose(freq, kernel.row(0)[2], atol=5e-3)


class TestDCSM:
    def test_target_entry_hand_value(self):
        """Stay-vs-move ratio for w=0.9 over 91 categories."""
        kernel = obj.NoiseKernel(DiscreteSpace((91,)), w=0.9)
        clean = np.array([[40]])
        at = np.array([[40]])  # noisy == clean
        to = np.array([[41]])  # same-dimension move
        target = kernel.score_targets(clean, at, to)[0]
        assert target == pytest.approx((0.1 / 90.0 - 0.9) / 0.9, abs=1e-9)
        assert target == pytest.approx(-0.998765, abs=1e-6)

    def test_perfect_conditional_model_gives_zero(self):
        space = DiscreteSpace((6,))
        cycle = build_structure("cycle", space)
        kernel = obj.NoiseKernel(space, w=0.8)
        rng = np.random.default_rng(0)
        batch = rng.integers(0, 6, size=(40, 1))

        class KernelScore:
            def __init__(self):
                self.clean = None

            def score_entries(self, structure, states, positions):
                dst = structure.neighbor_states_at(states, positions)
                return kernel.score_targets(self.clean, states, dst)

        model = KernelScore()
        # mirror the objective's internal corruption draw
        probe_rng = np.random.default_rng(99)
        noisy = kernel.sample(batch, probe_rng)
        rows, pos, dst = cycle.all_neighbors_of(noisy)
        model.clean = batch[rows]
        entries = model.score_entries(cycle, noisy[rows], pos)
        targets = kernel.score_targets(batch[rows], noisy[rows], dst)
        np.testing.assert_allclose(entries, targets, atol=1e-15)

    def test_exact_dcsm_minimizer_is_perturbed_score(self):
        """Optimizing the enumerated objective lands on the noisy score."""
        rng = np.random.default_rng(4)
        space = DiscreteSpace((2,))
        comp = build_structure("complete", space)
        p = TabularDistribution(space, np.array([0.3, 0.7]))
        kernel = obj.NoiseKernel(space, w=0.9)
        model = LogitTableModel(space, seed=0)
        objective = lambda m, b, r: obj.dcsm_loss_exact(m, p, kernel, comp)
        for lr, iters in ((0.1, 1500), (0.01, 1500)):
            fit(model, objective, p.sample(4, rng), iterations=iters, batch_size=1, lr=lr, seed=0)
        q = kernel.row(0)
        perturbed = TabularDistribution(space, q.T @ p.mass, normalize=True)
        for i in range(2):
            np.testing.assert_allclose(
                model.score_vector(comp, (i,)),
                concrete_score_exact(perturbed, comp, (i,)),
                atol=1e-3,
            )

    def test_mc_dcsm_runs_and_is_finite(self):
        rng = np.random.default_rng(6)
        space = DiscreteSpace((8, 8))
        grid = build_structure("grid", space)
        kernel = obj.NoiseKernel(space, w=0.9)
        model = LogitTableModel(space, seed=0)
        batch = rng.integers(0, 8, size=(64, 2))
        out = obj.dcsm_loss(model, batch, kernel, grid, rng)
        assert np.isfinite(out.value)
        assert out.meta["neighbor_evals"] > 0


class TestConditionalBaselines:
    def _binary_model(self, p1: float):
        space = DiscreteSpace((2,))
        model = LogitTableModel(space)
        model.params["logits"].data = np.array([np.log(1 - p1), np.log(p1)])
        return model

    def test_ratio_fixed_hand_value(self):
        """(1 - 0.7)^2 + 0.3^2 = 0.18 for a lone binary dimension."""
        model = self._binary_model(0.7)
        out = obj.ratio_matching_loss(model, np.array([[1]]), "fixed")
        assert out.value == pytest.approx(0.18, abs=1e-12)

    def test_ratio_fixed_perfect_conditionals(self):
        model = self._binary_model(1 - 1e-12)
        out = obj.ratio_matching_loss(model, np.array([[1]]), "fixed")
        assert out.value == pytest.approx(0.0, abs=1e-9)

    def test_ratio_original_minimizer_is_uniform(self):
        """The degenerate form is minimized by uniform conditionals."""
        qs = np.linspace(0.05, 0.95, 19)
        losses = [(1 - q) ** 2 + (1 - (1 - q)) ** 2 for q in qs]
        assert qs[int(np.argmin(losses))] == pytest.approx(0.5)
        for q in (0.3, 0.5, 0.8):
            model = self._binary_model(q)
            val = obj.ratio_matching_loss(model, np.array([[1]]), "original").value
            assert val == pytest.approx((1 - q) ** 2 + q**2, abs=1e-12)

    def test_marginal_fixed_hand_values(self):
        model = self._binary_model(0.5)
        out = obj.marginalization_loss(model, np.array([[1]]), "fixed")
        assert out.value == pytest.approx(-4.0, abs=1e-9)
        model = self._binary_model(0.9)
        out = obj.marginalization_loss(model, np.array([[1]]), "fixed")
        assert out.value == pytest.approx(1 / 0.81 - 2 * (1 / 0.9 + 1 / 0.1), abs=1e-6)

    def test_marginal_fixed_rewards_observed_mass(self):
        """Loss decreases as conditional mass moves onto the data value."""
        values = []
        for q in (0.3, 0.5, 0.7, 0.9):
            model = self._binary_model(q)
            values.append(obj.marginalization_loss(model, np.array([[1]]), "fixed").value)
        assert values == sorted(values, reverse=True)

    def test_nll_uniform(self):
        model = LogitTableModel(DiscreteSpace((16,)))
        out = obj.nll_loss(model, np.array([[3], [9]]))
        assert out.value == pytest.approx(np.log(16.0))

    def test_original_variant_ignores_data(self):
        """Same ratio-original optimum for two different datasets."""
        rng = np.random.default_rng(9)
        space = DiscreteSpace((2, 2, 2))
        grid = build_structure("grid", space)
        results = []
        for seed in (0, 1):
            gen = np.random.default_rng(seed)
            if seed == 0:
                samples = (gen.random((2000, 3)) < 0.8).astype(np.int64)
            else:
                samples = (gen.random((2000, 3)) < 0.2).astype(np.int64)
            model = LogitTableModel(space, seed=0)
            fit(model, lambda m, b, r: obj.ratio_matching_loss(m, b, "original"),
                samples, iterations=2500, batch_size=128, lr=0.05, seed=0)
            probs = np.exp(model.conditional_log_probs_t(space.all_states(), 0).data)
            results.append(probs)
        np.testing.assert_allclose(results[0], 0.5, atol=0.02)
        np.testing.assert_allclose(results[0], results[1], atol=0.02)


class TestGradientsAcrossPairs:
    """Engine gradients against finite differences for model-objective pairs."""

    def test_logit_table_pairs(self):
        rng = np.random.default_rng(12)
        space = DiscreteSpace((6,))
        cycle = build_structure("cycle", space)
        rev = build_reverse_index(cycle)
        p = TabularDistribution.random_positive(space, rng)
        kernel = obj.NoiseKernel(space, w=0.85)
        batch = p.sample(48, rng)
        model = LogitTableModel(space)
        model.params["logits"].data = 0.5 * rng.standard_normal(6)
        cases = {
            "csm_exact": lambda: obj.csm_loss_exact(model, p, cycle),
            "jcsm": lambda: obj.jcsm_exact(model, p, cycle),
            "csm_mc": lambda: obj.csm_mc_loss(model, batch, cycle, rev, np.random.default_rng(0)),
            "structured": lambda: obj.csm_structured_loss(model, batch, cycle, np.random.default_rng(1)),
            "dcsm": lambda: obj.dcsm_loss(model, batch, kernel, cycle, np.random.default_rng(2)),
            "dcsm_exact": lambda: obj.dcsm_loss_exact(model, p, kernel, cycle),
            "ratio_fixed": lambda: obj.ratio_matching_loss(model, batch, "fixed"),
            "ratio_original": lambda: obj.ratio_matching_loss(model, batch, "original"),
            "marginal_fixed": lambda: obj.marginalization_loss(model, batch, "fixed"),
            "marginal_original": lambda: obj.marginalization_loss(model, batch, "original"),
            "nll": lambda: obj.nll_loss(model, batch),
        }
        for name, loss in cases.items():
            report = gradient_check(model.params, loss, rng=np.random.default_rng(3))
            assert report["max_rel_error"] < 1e-4, f"{name}: {report}"

    def test_score_net_pairs(self):
        rng = np.random.default_rng(13)
        space = DiscreteSpace((12,))
        cycle = build_structure("cycle", space)
        rev = build_reverse_index(cycle)
        p = TabularDistribution.random_positive(space, rng)
        kernel = obj.NoiseKernel(space, w=0.9)
        batch = p.sample(32, rng)
        net = ScoreNetModel(space, degree=1, hidden=(8,), seed=5)
        cases = {
            "jcsm": lambda: obj.jcsm_exact(net, p, cycle),
            "csm_mc": lambda: obj.csm_mc_loss(net, batch, cycle, rev, np.random.default_rng(0)),
            "structured": lambda: obj.csm_structured_loss(net, batch, cycle, np.random.default_rng(1)),
            "dcsm": lambda: obj.dcsm_loss(net, batch, kernel, cycle, np.random.default_rng(2)),
        }
        for name, loss in cases.items():
            report = gradient_check(net.params, loss, rng=np.random.default_rng(4))
            assert report["max_rel_error"] < 1e-4, f"{name}: {report}"

    def test_masked_ar_pairs(self):
        rng = np.random.default_rng(14)
        model = MaskedARModel(4, hidden=(10,), seed=6)
        grid = build_structure("grid", model.space)
        batch = rng.integers(0, 2, size=(24, 4))
        cases = {
            "nll": lambda: obj.nll_loss(model, batch),
            "ratio_fixed": lambda: obj.ratio_matching_loss(model, batch, "fixed"),
            "marginal_fixed": lambda: obj.marginalization_loss(model, batch, "fixed"),
            "structured": lambda: obj.csm_structured_loss(model, batch, grid, np.random.default_rng(5)),
        }
        for name, loss in cases.items():
            report = gradient_check(model.params, loss, rng=np.random.default_rng(6))
            assert report["max_rel_error"] < 1e-4, f"{name}: {report}"


class TestDispatch:
    def test_all_names_buildable(self):
        space = DiscreteSpace((6,))
        cycle = build_structure("cycle", space)
        rng = np.random.default_rng(0)
        p = TabularDistribution.random_positive(space, rng)
        rev = build_reverse_index(cycle)
        kernel = obj.NoiseKernel(space, w=0.9)
        model = LogitTableModel(space)
        batch = p.sample(16, rng)
        for name in obj.OBJECTIVE_NAMES:
            fn = obj.make_objective(
                name, structure=cycle, empirical=p, kernel=kernel, reverse_index=rev
            )
            out = fn(model, batch, rng)
            assert np.isfinite(out.value), name

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError):
            obj.make_objective("fisher")

    def test_missing_context_rejected(self):
        cycle = build_structure("cycle", DiscreteSpace((4,)))
        with pytest.raises(ValueError):
            obj.make_objective("csm_mc", structure=cycle)
