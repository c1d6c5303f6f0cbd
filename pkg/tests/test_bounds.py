"""Tests for interval bound propagation."""

import numpy as np
import pytest

from stablenet.bounds import bounds_table, classify_by_bounds, compute_bounds
from stablenet.netio import build_domain, forward_batch, random_network
from stablenet.stability import brute_force_oracle

from networks import coupled_net, single_neuron, unit_box


class TestComputeBounds:
    """Test interval propagation."""

    def test_single_inactive_neuron(self):
        """w=1, b=-2 on [0,1] gives y in [-2, -1]."""
        bounds = compute_bounds(single_neuron(1.0, -2.0), unit_box(1))
        neuron = bounds[0].neuron(0)
        assert neuron.lo == pytest.approx(-2.0)
        assert neuron.hi == pytest.approx(-1.0)
        assert neuron.big_m == 0.0
        assert neuron.big_mu == pytest.approx(2.0)

    def test_coupled_net_is_undecided(self):
        """Intervals give y3 in [-0.6, 0.4], which decides nothing."""
        bounds = compute_bounds(coupled_net(), unit_box(1))
        np.testing.assert_allclose(bounds[0].lo, [-0.5, -0.5])
        np.testing.assert_allclose(bounds[0].hi, [0.5, 0.5])
        np.testing.assert_allclose(bounds[1].lo, [-0.6])
        np.testing.assert_allclose(bounds[1].hi, [0.4])
        classification = classify_by_bounds(bounds)
        assert classification.unknown == [{0, 1}, {0}]
        assert classification.num_stable == 0

    def test_output_layer_included(self):
        """One bounds entry per layer."""
        assert len(compute_bounds(coupled_net(), unit_box(1))) == 3

    def test_dimension_mismatch(self):
        """Domain size must match the network input."""
        with pytest.raises(ValueError, match="network expects 1"):
            compute_bounds(coupled_net(), unit_box(2))

    def test_soundness_on_samples(self, rng):
        """Sampled preactivations and big-M constants respect the bounds."""
        net = random_network(rng, [6, 5], 3, bias_shift=0.3)
        domain = unit_box(3)
        bounds = compute_bounds(net, domain)
        _, pres = forward_batch(net, domain.sample(2000, rng))
        for layer, pre in enumerate(pres):
            assert np.all(pre >= bounds[layer].lo - 1e-9)
            assert np.all(pre <= bounds[layer].hi + 1e-9)
            assert np.all(np.maximum(pre, 0.0) <= bounds[layer].big_m + 1e-9)
            assert np.all(np.maximum(-pre, 0.0) <= bounds[layer].big_mu + 1e-9)

    def test_shrinking_the_box_never_widens(self, rng):
        """Bounds over a sub-box lie inside the bounds over the full box."""
        for _ in range(10):
            net = random_network(rng, [5, 4], 3, bias_shift=float(rng.uniform(-1, 1)))
            lower, upper = rng.uniform(-1.0, 0.0, size=3), rng.uniform(0.0, 1.0, size=3)
            width = upper - lower
            inner = build_domain(
                lower + rng.uniform(0.0, 0.5, size=3) * width,
                upper - rng.uniform(0.0, 0.5, size=3) * width,
            )
            outer = compute_bounds(net, build_domain(lower, upper))
            for tight, loose in zip(compute_bounds(net, inner), outer):
                assert np.all(tight.lo >= loose.lo - 1e-12)
                assert np.all(tight.hi <= loose.hi + 1e-12)


class TestClassification:
    """Test bound-based classification."""

    def test_active_and_inactive(self):
        """ReLU(x+1) is active, ReLU(x-2) inactive on [0,1]."""
        active = classify_by_bounds(compute_bounds(single_neuron(1.0, 1.0), unit_box(1)))
        inactive = classify_by_bounds(compute_bounds(single_neuron(1.0, -2.0), unit_box(1)))
        assert active.stable_active == [{0}]
        assert inactive.stable_inactive == [{0}]

    def test_bounds_table(self):
        """The report table lists every layer with big-M constants."""
        table = bounds_table(compute_bounds(single_neuron(1.0, -2.0), unit_box(1)))
        assert len(table) == 2
        assert set(table[0]) == {"lo", "hi", "big_m", "big_mu"}
        assert table[0]["big_mu"] == [2.0]

    def test_never_contradicts_enumeration(self, rng):
        """Whatever the intervals decide, pattern enumeration confirms."""
        decided = 0
        for shift in (-1.5, -0.5, 0.0, 0.5, 1.5, 0.0):
            net = random_network(rng, [4, 4], 2, bias_shift=shift)
            classification = classify_by_bounds(compute_bounds(net, unit_box(2)))
            oracle = brute_force_oracle(net, unit_box(2))
            for layer in range(len(net.hidden_widths)):
                assert classification.stable_inactive[layer] <= oracle.stable_inactive[layer]
                assert classification.stable_active[layer] <= oracle.stable_active[layer]
            decided += classification.num_stable
        assert decided >= 1
