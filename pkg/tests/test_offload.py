import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rtnetsim.offload.core import (BEST_FIT, FIRST_FIT, MS, REJECT, WORST_FIT, LatencyModel, OffloadTask,
                              accept, adjust_deadline, density, edf_feasible, laxity, normal_ms,
                              precheck, queue_density)
from rtnetsim.offload.central import OffloadConfig, OffloadSim, run_offload


def task(deadline, wcet, rel=None, setup=0, elapsed=0, seq=0, created=0):
    return OffloadTask(client=0, deadline=deadline, rel_deadline=rel if rel is not None else deadline - created,
                       conn_setup=setup, wcet=wcet, elapsed=elapsed, seq=seq, id=seq, created=created)


def test_expected_delay():
    t = task(deadline=150 * MS, wcet=30 * MS, rel=150 * MS)
    adj = adjust_deadline(t, now=30 * MS, uncertainty=1.0)
    assert adj.expected_delay == 30 * MS
    assert adj.adjusted_delay == 30 * MS and not adj.clamped


def test_setup_longer_than_wcet_extends_delay():
    t = task(deadline=150 * MS, wcet=30 * MS, rel=150 * MS, setup=40 * MS)
    adj = adjust_deadline(t, now=30 * MS, uncertainty=1.0)
    assert adj.adjusted_delay == 40 * MS


def test_uncertainty_scales_the_pull_forward():
    t = task(deadline=150 * MS, wcet=30 * MS, rel=150 * MS, setup=40 * MS)
    assert adjust_deadline(t, 30 * MS, 0.5).new_deadline == 150 * MS - 20 * MS


def test_clock_skew_is_clamped():
    t = task(deadline=150 * MS, wcet=30 * MS, rel=100 * MS)
    adj = adjust_deadline(t, 0, 1.0)
    assert adj.clamped and adj.expected_delay == 0 and adj.new_deadline == 150 * MS


def test_task_invariants():
    with pytest.raises(ValueError):
        task(100, 10, elapsed=11)
    with pytest.raises(ValueError):
        task(100, 0)


def test_laxity_and_density():
    t = task(200 * MS, 100 * MS, elapsed=50 * MS)
    assert laxity(t, 0) == 150 * MS
    assert density(t, 0) == pytest.approx(0.25)
    assert density(t, 200 * MS) == float("inf")


def test_accept_idle_worker():
    assert accept(task(300 * MS, 100 * MS), [[]], 0) == 0


def test_precheck_rejects_even_with_idle_workers():
    t = task(90 * MS, 100 * MS)
    assert not precheck(t, 0)
    assert accept(t, [[], [], []], 0) is REJECT


def test_worst_fit_picks_least_dense():
    q_hi = [task(1000 * MS, 600 * MS, seq=1)]
    q_lo = [task(1000 * MS, 300 * MS, seq=2)]
    new = task(2000 * MS, 100 * MS, seq=3)
    assert queue_density(q_lo, 0) == pytest.approx(0.3)
    assert accept(new, [q_hi, q_lo], 0, WORST_FIT) == 1
    assert accept(new, [q_hi, q_lo], 0, BEST_FIT) == 0
    assert accept(new, [q_hi, q_lo], 0, FIRST_FIT) == 0


def test_edf_capacity_example():
    assert edf_feasible([task(200 * MS, 50 * MS)], 0)
    assert not edf_feasible([task(60 * MS, 50 * MS, seq=0), task(60 * MS, 50 * MS, seq=1)], 0)


def _brute_force(tasks, now):
    # on one worker with everything released, some fixed order meets all deadlines iff any schedule does
    for perm in itertools.permutations(tasks):
        t, ok = now, True
        for x in perm:
            t += x.remaining
            if t > x.deadline:
                ok = False
                break
        if ok:
            return True
    return False


@settings(max_examples=500)
@given(st.lists(st.tuples(st.integers(1, 50), st.integers(0, 49), st.integers(1, 200)), max_size=5),
       st.integers(0, 20))
def test_edf_feasible_matches_brute_force(spec, now):
    tasks = []
    for i, (w, e, d) in enumerate(spec):
        tasks.append(task(now + d, w, elapsed=min(e, w), seq=i))
    assert edf_feasible(tasks, now) == _brute_force(tasks, now)


def test_latency_model_is_non_negative_and_in_us():
    rng = np.random.default_rng(0)
    xs = [LatencyModel(1.0, 4.0).sample(rng) for _ in range(2000)]
    assert min(xs) >= 0
    assert LatencyModel(30, 0).sample(rng) == 30 * MS
    assert normal_ms(rng, -5, 0) == 0


def _bench(latency_ms=10.0):
    cfg = OffloadConfig(clients=1, workers=1, duration_s=0, drain_s=1,
                        latency=LatencyModel(latency_ms, 0))
    return OffloadSim(cfg)


def test_earlier_deadline_preempts_and_keeps_progress():
    s = _bench()
    a = task(1000 * MS, 100 * MS, seq=0)
    b = task(30 * MS + 100 * MS, 20 * MS, seq=1, created=30 * MS)
    s.sim.at(0, lambda ev: s._arrive(a))
    s.sim.at(30 * MS, lambda ev: s._arrive(b))
    s.sim.run_until(40 * MS)
    assert a.elapsed == 30 * MS and s.workers[0].running is b
    s.run()
    assert s.out.preemptions == 1
    done = {tid: at for tid, _, kind, at in s.log if kind == "done"}
    assert done == {1: 60 * MS, 0: 130 * MS}


def test_reply_waits_for_connection():
    s = _bench()
    c = task(1000 * MS, 100 * MS, setup=150 * MS)
    s.sim.at(0, lambda ev: s._arrive(c))
    s.run()
    assert [e[3] for e in s.log] == [150 * MS + 10 * MS]


def test_uncontended_end_to_end_is_wait_plus_wcet_plus_latency():
    s = _bench(latency_ms=7)
    x = task(1000 * MS, 100 * MS, seq=0)
    y = task(1000 * MS, 100 * MS, seq=1)
    s.sim.at(0, lambda ev: s._arrive(x))
    s.sim.at(0, lambda ev: s._arrive(y))
    s.run()
    done = sorted(e[3] for e in s.log)
    assert done == [100 * MS + 7 * MS, 200 * MS + 7 * MS]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(10, 60))
def test_every_accepted_task_is_success_or_miss(seed, clients):
    for sched in ("latency-aware", "reference"):
        o = run_offload(OffloadConfig(clients=clients, duration_s=5, scheduler=sched), seed)
        assert o.accepted == o.success + o.missed
        assert o.submitted == o.accepted + o.rejected


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([20, 40]))
def test_acceptance_non_increasing_in_uncertainty(seed, clients):
    accepted = [run_offload(OffloadConfig(clients=clients, uncertainty=u, gated=False, duration_s=10), seed).accepted
                for u in (0.0, 0.5, 1.0, 1.5, 2.0, 3.0)]
    assert all(a >= b for a, b in zip(accepted, accepted[1:]))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1.0, 1.5, 2.0]))
def test_latency_aware_misses_no_more_than_reference(seed, u):
    base = dict(clients=40, gated=False, duration_s=10)
    ours = run_offload(OffloadConfig(uncertainty=u, **base), seed)
    ref = run_offload(OffloadConfig(scheduler="reference", **base), seed)
    assert ours.miss_rate <= ref.miss_rate


def _spread(heuristic, seed):
    o = run_offload(OffloadConfig(clients=30, heuristic=heuristic), seed)
    counts = [o.per_worker.get(i, 0) for i in range(4)]
    return (max(counts) - min(counts)) / (sum(counts) / 4)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_worst_fit_spreads_load(seed):
    band = 0.5
    assert _spread(WORST_FIT, seed) <= band
    assert _spread(WORST_FIT, seed) < _spread(FIRST_FIT, seed)


def test_runs_are_reproducible():
    cfg = OffloadConfig(clients=25, duration_s=5)
    assert run_offload(cfg, 3) == run_offload(cfg, 3)


def test_bad_scheduler_name():
    with pytest.raises(ValueError):
        OffloadConfig(scheduler="magic")
