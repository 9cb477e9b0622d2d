import numpy as np
import pytest
import scipy.stats

from faultrange.bits import bit_state, flip_bit
from faultrange.container import BoundsProfile
from faultrange.errors import ConfigError
from faultrange.faults import (
    NeuronFaultHook,
    FaultPlan,
    FaultSpec,
    apply_weight_faults,
    eligible_sites,
    load_plan,
    sample_faults,
    sample_neuron_plan,
    sample_weight_plan,
    save_plan,
    weight_bit_histogram,
)
from faultrange.graph import forward
from faultrange.protect import ProtectionHook
from faultrange.rng import derive_rng
from faultrange.train import build_fixture


@pytest.fixture(scope="module")
def fixture_model():
    return build_fixture(0, list("abcdef"))


def test_eligible_sites_weight(fixture_model):
    sites = eligible_sites(fixture_model, "weight")
    assert [(i, n) for i, _, n in sites] == [
        (0, 150), (3, 2400), (7, 30720), (9, 10080), (11, 504)]
    with_bias = eligible_sites(fixture_model, "weight", include_bias=True)
    assert sum(n for _, _, n in with_bias) == sum(n for _, _, n in sites) + 6 + 16 + 120 + 84 + 6


def test_eligible_sites_neuron(fixture_model):
    sites = eligible_sites(fixture_model, "neuron")
    assert [(i, n) for i, _, n in sites] == [
        (0, 6 * 24 * 24), (3, 16 * 8 * 8), (7, 120), (9, 84), (11, 6)]


def test_sample_distinct_and_in_range(fixture_model):
    plan = sample_weight_plan(fixture_model, 10, range(9), master_seed=1, epoch=0)
    keys = {(s.layer_index, s.slot, s.flat_index, s.bit) for s in plan.faults}
    assert len(keys) == 10
    assert all(0 <= s.bit <= 8 for s in plan.faults)


def test_sample_deterministic_in_key(fixture_model):
    a = sample_weight_plan(fixture_model, 5, range(9), master_seed=1, epoch=3)
    b = sample_weight_plan(fixture_model, 5, range(9), master_seed=1, epoch=3)
    assert a.faults == b.faults
    c = sample_weight_plan(fixture_model, 5, range(9), master_seed=1, epoch=4)
    assert a.faults != c.faults


def test_sample_degenerate_bit_range(fixture_model):
    plan = sample_weight_plan(fixture_model, 8, [1], master_seed=0, epoch=0)
    assert all(s.bit == 1 for s in plan.faults)


def test_sample_population_exhausted(fixture_model):
    with pytest.raises(ConfigError, match="cannot draw"):
        rng = derive_rng(0, "x")
        sample_faults(fixture_model, "neuron", 10**7, [1], rng)


def test_sample_uniformity_chi_square(fixture_model):
    # 100 plans x k=1000 gives 1e5 draws; within-plan distinctness barely
    # distorts the distribution over the ~395k (site, bit) population
    sites = eligible_sites(fixture_model, "weight")
    totals = np.array([n for _, _, n in sites], float)
    layer_order = [i for i, _, _ in sites]
    observed = np.zeros(len(sites))
    fc1 = []
    draws = 0
    for epoch in range(100):
        plan = sample_weight_plan(fixture_model, 1000, range(9), master_seed=123,
                                  epoch=epoch)
        draws += len(plan)
        for spec in plan.faults:
            observed[layer_order.index(spec.layer_index)] += 1
            if spec.layer_index == 7:
                fc1.append(spec.flat_index)

    # layer frequencies against the eligible-population distribution
    expected = totals / totals.sum() * draws
    _, p_layer = scipy.stats.chisquare(observed, expected)
    assert p_layer > 0.01

    # element frequencies within the largest layer, bucketed
    buckets, _ = np.histogram(fc1, bins=64, range=(0, 30720))
    _, p_elem = scipy.stats.chisquare(buckets)
    assert p_elem > 0.01


def test_apply_weight_faults_and_revert(fixture_model):
    plan = sample_weight_plan(fixture_model, 10, range(9), master_seed=2, epoch=0)
    before = {i: layer.weight.tobytes() for i, layer in enumerate(fixture_model.layers)
              if getattr(layer, "weight", None) is not None}
    faulted = apply_weight_faults(fixture_model, plan)
    changed = sum(faulted.layers[i].weight.tobytes() != before[i] for i in before)
    assert changed >= 1
    # original untouched: dropping the view is a bit-exact revert
    for i, blob in before.items():
        assert fixture_model.layers[i].weight.tobytes() == blob


def test_apply_weight_fault_value(fixture_model):
    layer_index = 0
    target = 7
    fixture_model.layers[layer_index].weight.reshape(-1)[target] = np.float32(0.5)
    plan = FaultPlan("weight", (FaultSpec("weight", layer_index, target, 1),), 0, 0)
    faulted = apply_weight_faults(fixture_model, plan)
    assert faulted.layers[0].weight.reshape(-1)[target] == np.float32(2.0**127)


def test_two_flips_same_weight_compose(fixture_model):
    w0 = fixture_model.layers[0].weight.reshape(-1)[0]
    plan = FaultPlan("weight", (FaultSpec("weight", 0, 0, 0),
                                FaultSpec("weight", 0, 0, 9)), 0, 0)
    faulted = apply_weight_faults(fixture_model, plan)
    expected = flip_bit(flip_bit(w0, 0), 9)
    assert faulted.layers[0].weight.reshape(-1)[0] == expected


def test_bias_faults_with_override(fixture_model):
    plan = FaultPlan("weight", (FaultSpec("weight", 0, 2, 0, slot="bias"),), 0, 0)
    faulted = apply_weight_faults(fixture_model, plan)
    assert bit_state(faulted.layers[0].bias[2], 0) != bit_state(
        fixture_model.layers[0].bias[2], 0)


def test_neuron_hook_flips_output(model, dataset, bounds):
    # find the first conv output element and flip its sign bit
    plan = FaultPlan("neuron", (FaultSpec("neuron", 0, 0, 0, slot="output"),), 0, 0)
    hook = NeuronFaultHook(plan)
    base = forward(model, dataset.images[0]).scores
    out = forward(model, dataset.images[0], hooks=(hook,))
    assert not out.is_due  # sign flip of one pre-relu value is benign here
    clean = forward(model, dataset.images[0]).scores
    assert np.array_equal(base, clean)


def test_neuron_hook_inf_due_unless_clipped(model, dataset, bounds):
    # force a 1.0 at a known output position, then flip its exponent MSB
    class Setter:
        def __call__(self, i, x):
            if i == 3:
                x = x.copy()
                x.reshape(-1)[5] = np.float32(1.0)
            return x

    plan = FaultPlan("neuron", (FaultSpec("neuron", 3, 5, 1, slot="output"),), 0, 0)
    fault = NeuronFaultHook(plan)

    out = forward(model, dataset.images[0], hooks=(Setter(), fault))
    assert out.is_due and out.due.kind == "inf" and out.due.layer_index == 3

    # protecting the faulted layer itself removes the Inf and the run continues
    amended = BoundsProfile(dict(bounds.entries), bounds.dataset_id, bounds.sample_count)
    amended.entries[3] = (np.float32(-100.0), np.float32(100.0))
    protection = ProtectionHook(amended, "clipper", (3,) + model.protection_points)
    out = forward(model, dataset.images[0], hooks=(Setter(), fault, protection))
    assert not out.is_due
    assert protection.any_oob


def test_neuron_hook_empty_plan_is_identity(model, dataset):
    plan = FaultPlan("neuron", (), 0, 0)
    hook = NeuronFaultHook(plan)
    a = forward(model, dataset.images[1]).scores
    b = forward(model, dataset.images[1], hooks=(hook,)).scores
    assert a.tobytes() == b.tobytes()


def test_weight_bit_histogram_zero_weights():
    model = build_fixture(0, list("abcdef"))
    for layer in model.layers:
        if layer.kind == "conv2d":
            layer.weight[:] = 0
    hist = weight_bit_histogram(model, range(9))
    assert all(v == 0.0 for v in hist.values())


def test_weight_bit_histogram_trained(model):
    hist = weight_bit_histogram(model, range(9))
    assert hist[1] == 0.0  # every conv weight has |w| < 2
    assert 0.25 <= hist[0] <= 0.75  # signs roughly balanced
    max_w = max(float(np.max(np.abs(layer.weight)))
                for layer in model.layers if layer.kind == "conv2d")
    assert max_w < 2.0


def test_plan_json_round_trip(fixture_model, tmp_path):
    plan = sample_neuron_plan(fixture_model, 4, range(9), master_seed=3, epoch=1, image=17)
    path = tmp_path / "plan.json"
    save_plan(plan, str(path))
    loaded = load_plan(str(path))
    assert loaded.kind == plan.kind
    assert loaded.faults == plan.faults
    assert loaded.master_seed == 3 and loaded.epoch == 1 and loaded.image == 17
