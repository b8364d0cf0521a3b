import numpy as np
import pytest

from beamsched.model import (
    TransitionRow,
    UserParams,
    holding_cost,
    holding_cost_table,
    slot_cost,
    step_queue,
    transition_row,
)


def make_params(a=0.4, d=0.3, P=10.0, q=2.0, n=100):
    return UserParams(
        arrival_prob=a, channel_prob=d, beam_cost=P, holding_coeff=q, buffer_size=n
    )


class TestStepQueue:
    def test_departure_then_arrival(self):
        assert step_queue(3, 1, 1, 1, 100) == 3

    def test_empty_queue_service_is_noop(self):
        assert step_queue(0, 1, 1, 0, 100) == 0

    def test_arrival_dropped_at_full_buffer(self):
        assert step_queue(100, 0, 0, 1, 100) == 100

    def test_bounds_hold_everywhere(self):
        rng = np.random.default_rng(7)
        for _ in range(2000):
            n = int(rng.integers(1, 30))
            x = int(rng.integers(0, n + 1))
            u, s, arr = (int(v) for v in rng.integers(0, 2, size=3))
            nxt = step_queue(x, u, s, arr, n)
            assert 0 <= nxt <= n
            assert abs(nxt - x) <= 1

    def test_rejects_out_of_range_state(self):
        with pytest.raises(ValueError):
            step_queue(101, 0, 0, 0, 100)

    @pytest.mark.parametrize("bad", [(2, 0, 0), (0, 2, 0), (0, 0, -1)])
    def test_rejects_non_binary_inputs(self, bad):
        u, s, arr = bad
        with pytest.raises(ValueError):
            step_queue(5, u, s, arr, 100)


class TestTransitionRow:
    def test_interior_active_row(self):
        row = transition_row(5, 1, make_params(a=0.4, d=0.3)).as_dict()
        assert row == pytest.approx({4: 0.18, 5: 0.54, 6: 0.28})

    def test_interior_passive_row(self):
        row = transition_row(5, 0, make_params(a=0.4, d=0.3)).as_dict()
        assert row == pytest.approx({5: 0.6, 6: 0.4})

    def test_active_at_zero_folds_to_passive(self):
        p = make_params(a=0.4, d=0.3)
        active = transition_row(0, 1, p).as_dict()
        passive = transition_row(0, 0, p).as_dict()
        assert active == pytest.approx({0: 0.6, 1: 0.4})
        assert active == pytest.approx(passive)

    def test_rows_sum_to_one_everywhere(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = make_params(
                a=float(rng.uniform(0.05, 0.95)),
                d=float(rng.uniform(0.05, 0.95)),
                n=int(rng.integers(1, 40)),
            )
            for x in range(p.buffer_size + 1):
                for u in (0, 1):
                    row = transition_row(x, u, p)
                    total = sum(prob for _, prob in row.entries)
                    assert abs(total - 1.0) <= 1e-12
                    assert len(row.entries) <= 3
                    assert all(abs(s - x) <= 1 for s, _ in row.entries)

    def test_row_matches_sampled_step_queue(self):
        # Monte Carlo marginal of step_queue vs the analytic row, 3-sigma.
        p = make_params(a=0.35, d=0.6, n=50)
        rng = np.random.default_rng(11)
        trials = 200_000
        for x, u in ((0, 1), (1, 1), (25, 1), (25, 0), (50, 0), (50, 1)):
            s = (rng.random(trials) < p.channel_prob).astype(int)
            arr = (rng.random(trials) < p.arrival_prob).astype(int)
            outcomes = np.array(
                [step_queue(x, u, int(si), int(ai), 50) for si, ai in zip(s, arr)]
            )
            for state, prob in transition_row(x, u, p).entries:
                freq = float(np.mean(outcomes == state))
                sigma = np.sqrt(prob * (1.0 - prob) / trials)
                assert abs(freq - prob) <= 3.0 * sigma + 1e-12

    def test_row_type_rejects_bad_mass(self):
        with pytest.raises(ValueError):
            TransitionRow(((0, 0.5), (1, 0.4)))


class TestCosts:
    def test_holding_cost_examples(self):
        p = make_params(q=30.0)
        assert holding_cost(0, p) == 0.0
        assert holding_cost(4, p) == 480.0
        assert holding_cost(1, p) == 30.0

    def test_holding_table_is_convex_nondecreasing(self):
        table = np.array(holding_cost_table(make_params(q=3.5, n=60)))
        assert np.all(np.diff(table) >= 0.0)
        assert np.all(np.diff(table, 2) >= 0.0)

    def test_slot_cost_examples(self):
        p0 = make_params(q=1.0, P=10.0)
        p1 = make_params(q=2.0, P=20.0)
        assert slot_cost([0, 0], [0, 0], [p0, p1]) == 0.0
        assert slot_cost([2, 3], [1, 0], [p0, p1]) == pytest.approx(32.0)
        assert slot_cost([1], [1], [make_params(q=5.0, P=7.0)]) == pytest.approx(12.0)

    def test_slot_cost_length_mismatch(self):
        with pytest.raises(ValueError):
            slot_cost([1, 2], [1], [make_params()])

    def test_slot_cost_monotone_in_state_and_action(self):
        rng = np.random.default_rng(5)
        params = [make_params(q=float(rng.uniform(0, 5)), P=float(rng.uniform(1, 20))) for _ in range(4)]
        for _ in range(200):
            states = rng.integers(0, 50, size=4).tolist()
            actions = rng.integers(0, 2, size=4).tolist()
            base = slot_cost(states, actions, params)
            i = int(rng.integers(0, 4))
            bumped = list(states)
            bumped[i] += 1
            assert slot_cost(bumped, actions, params) >= base
            if actions[i] == 0:
                flipped = list(actions)
                flipped[i] = 1
                assert slot_cost(states, flipped, params) >= base


class TestUserParams:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(arrival_prob=0.0),
            dict(arrival_prob=1.0),
            dict(channel_prob=0.0),
            dict(channel_prob=1.0),
            dict(beam_cost=0.0),
            dict(beam_cost=-1.0),
            dict(holding_coeff=-0.1),
            dict(buffer_size=0),
        ],
    )
    def test_invariants_rejected(self, kwargs):
        base = dict(
            arrival_prob=0.4, channel_prob=0.3, beam_cost=10.0, holding_coeff=2.0, buffer_size=50
        )
        base.update(kwargs)
        with pytest.raises(ValueError):
            UserParams(**base)

    def test_zero_holding_coeff_allowed(self):
        p = make_params(q=0.0)
        assert holding_cost(10, p) == 0.0
