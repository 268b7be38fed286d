#!/usr/bin/env python3
"""Tests for the Maximum Occupancy, Vehicle Actuated and random stage policies."""

import itertools
import logging

import numpy as np
import pytest

from core.baselines import (MaximumOccupancy, RandomPolicy, VAConfig, VehicleActuated, make_baseline,
                            served_movements)
from core.config_loader import ConfigError, ConfigLoader
from core.environment import TrafficEnvironment
from core.sensors import LaneSensorSnapshot, PedSensorSnapshot, SensorFrame
from core.signal_controller import ControllerConfig, ControllerMode, ControllerState, SignalController
from core.simulation import JunctionConfig

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

DT = 0.6
LANES = ['N1', 'N2', 'S1', 'S2', 'E1', 'W1']
CROSSINGS = ['PN', 'PS', 'PE', 'PW']


def build_controller():
    config = ConfigLoader.from_dict({})
    junction = JunctionConfig.from_dict(config.get('junction'))
    return SignalController(ControllerConfig.from_dict(config.get('controller'), DT), junction, DT)


def make_frame(queues=None, counts=None, peds=None):
    """Sensor frame with the given per-lane queues/counts and per-crossing waiting pedestrians."""
    queues = queues or {}
    counts = counts or {}
    peds = peds or {}
    lanes = tuple(LaneSensorSnapshot(lane=lane, queue=queues.get(lane, 0),
                                     count=max(counts.get(lane, 0), queues.get(lane, 0)),
                                     occupancy=0.0, sum_wait=0.0, speeds=(), flow=0)
                  for lane in LANES)
    crossings = tuple(PedSensorSnapshot(crossing=c, queue=peds.get(c, 0), sum_wait=0.0, button=peds.get(c, 0) > 0)
                      for c in CROSSINGS)
    return SensorFrame(step=0, time=0.0, lanes=lanes, peds=crossings)


def green_state(stage, elapsed_steps=10):
    return ControllerState(mode=ControllerMode.GREEN, active_stage=stage, target_stage=stage,
                           delta_t=DT, elapsed_steps=elapsed_steps)


def test_served_movements():
    served = served_movements(build_controller())
    assert sorted(served[2]['lanes']) == ['N1', 'N2', 'S1', 'S2'], "Stage 2 also serves the Stage 1 lanes"
    own = served_movements(build_controller(), routed=False)
    assert own[2]['lanes'] == ['N1', 'S1', 'S2']
    assert served[3] == {'lanes': [], 'crossings': CROSSINGS}
    assert served[4]['lanes'] == ['E1', 'W1']


def test_maximum_occupancy_picks_longest_queue():
    print("🧪 Testing Maximum Occupancy")
    print("=" * 50)
    policy = MaximumOccupancy(build_controller())
    frame = make_frame(queues={'N1': 3, 'S2': 4, 'E1': 2}, peds={'PN': 3})
    assert policy.stage_queue_sums(frame, 4) == {2: 7, 3: 3, 4: 2}
    assert policy.act(None, frame, green_state(4)) == 2

    frame = make_frame(queues={'N1': 3, 'S2': 4, 'E1': 2}, peds={'PN': 5, 'PE': 4})
    assert policy.act(None, frame, green_state(2)) == 3
    print("✅ Longest queue wins")


def test_maximum_occupancy_holds_on_ties():
    policy = MaximumOccupancy(build_controller())
    empty = make_frame()
    for stage in (2, 3, 4):
        assert policy.act(None, empty, green_state(stage)) == stage, "All-zero queues must hold the stage"

    tied = make_frame(queues={'E1': 2}, peds={'PS': 2})
    assert policy.act(None, tied, green_state(3)) == 3
    assert policy.act(None, tied, green_state(2)) == 3, "Ties away from the active stage go to the lowest id"


def test_maximum_occupancy_matches_brute_force():
    """Every small queue combination agrees with an exhaustive argmax."""
    policy = MaximumOccupancy(build_controller())
    for q2, q3, q4 in itertools.product(range(4), repeat=3):
        frame = make_frame(queues={'S1': q2, 'W1': q4}, peds={'PW': q3})
        sums = {2: q2, 3: q3, 4: q4}
        for active in (2, 3, 4):
            choice = policy.act(None, frame, green_state(active))
            assert sums[choice] == max(sums.values())
            if sums[active] == max(sums.values()):
                assert choice == active


def test_stage1_lane_queue_leaves_stage2():
    """A queue only the transit stage can serve pulls both baselines away from an active Stage 2."""
    print("🧪 Testing Stage 1 lane demand")
    print("=" * 50)
    mo = MaximumOccupancy(build_controller())
    frame = make_frame(queues={'N2': 6, 'E1': 3, 'W1': 2})
    assert mo.stage_queue_sums(frame, 2) == {2: 0, 3: 0, 4: 11}
    assert mo.act(None, frame, green_state(2)) == 4
    assert mo.stage_queue_sums(frame, 4) == {2: 6, 3: 0, 4: 5}
    assert mo.act(None, frame, green_state(4)) == 2, "From elsewhere Stage 2 reaches N2 through the transit"
    assert mo.act(None, make_frame(queues={'N2': 4}), green_state(2)) == 4

    va = VehicleActuated(build_controller())
    frame = make_frame(counts={'N2': 1}, peds={'PW': 1})
    assert not va.detects(2, frame), "N2 is not one of Stage 2's own lanes"
    assert va.act(None, frame, green_state(2, 10)) == 3
    va.reset()
    assert va.act(None, make_frame(counts={'N2': 1}), green_state(2, 10)) == 4
    print("✅ Stage 2 is left so the transit can run")


def expected_stage_sums(queues, peds, active):
    n2 = queues['N2'] if active == 2 else 0
    return {
        2: queues['N1'] + queues['S1'] + queues['S2'] + (queues['N2'] - n2),
        3: sum(peds.values()),
        4: queues['E1'] + queues['W1'] + n2,
    }


def test_maximum_occupancy_on_random_frames():
    """10000 random sensor frames: the request always attains the largest served-queue sum."""
    policy = MaximumOccupancy(build_controller())
    rng = np.random.default_rng(7)
    for _ in range(10000):
        queues = {lane: int(rng.integers(0, 6)) for lane in LANES}
        peds = {c: int(rng.integers(0, 4)) for c in CROSSINGS}
        active = int(rng.choice([2, 3, 4]))
        sums = expected_stage_sums(queues, peds, active)
        best = max(sums.values())
        choice = policy.act(None, make_frame(queues=queues, peds=peds), green_state(active))
        if sums[active] == best:
            assert choice == active
        else:
            assert choice == min(stage for stage, total in sums.items() if total == best)


@pytest.mark.parametrize('controller', ['mo', 'va'])
def test_north_arm_only_demand_is_served(controller):
    """With demand on the north arm only, the transit stage runs and N2 keeps draining."""
    env = TrafficEnvironment.from_config(
        ConfigLoader.from_dict({}),
        demand_overrides={'vehicle_rate': 300.0, 'ped_rate': 0.0,
                          'arm_split': {'N': 1.0, 'S': 0.0, 'E': 0.0, 'W': 0.0}},
        episode_steps=3000)
    policy = make_baseline(controller, env.controller)
    observation = env.reset(5)
    policy.reset(5)
    while not env.done:
        observation, _, _, _ = env.step(policy.act(observation, env.frame, env.ctrl))

    world = env.world
    assert env.ctrl.green_steps_by_stage[1] > 0, f"{controller} never ran Stage 1"
    assert len(world.holding['N2']) <= 2, f"{controller} left {len(world.holding['N2'])} vehicles held at N2"
    assert len(world.lanes['N2']) <= 10
    assert world.vehicles_exited >= 0.85 * world.vehicles_entered


def test_vehicle_actuated_extends_while_detecting():
    print("🧪 Testing Vehicle Actuated extensions")
    policy = VehicleActuated(build_controller())
    assert policy.extension_holds == 3 and policy.max_green_steps == 100

    busy = make_frame(counts={'E1': 1}, peds={'PN': 1})
    assert policy.act(None, busy, green_state(4, 10)) == 4

    quiet = make_frame(peds={'PN': 1})
    assert policy.act(None, quiet, green_state(4, 11)) == 4
    assert policy.act(None, quiet, green_state(4, 12)) == 4
    assert policy.act(None, quiet, green_state(4, 13)) == 3, "Gap-out rotates to the stage with a button press"
    print("✅ Extension units expire before the stage changes")


def test_vehicle_actuated_follows_rotation():
    policy = VehicleActuated(build_controller())
    frame = make_frame(counts={'E1': 1, 'S1': 1}, peds={'PS': 1})
    assert policy.act(None, frame, green_state(2, 10)) == 2
    policy.reset()
    # After stage 4 the rotation is 3 then 2
    frame = make_frame(counts={'N2': 1}, peds={'PS': 1})
    assert policy.act(None, frame, green_state(4, 10)) == 3
    frame = make_frame(counts={'N2': 1})
    assert policy.act(None, frame, green_state(4, 10)) == 2


def test_vehicle_actuated_holds_without_demand():
    policy = VehicleActuated(build_controller())
    assert policy.act(None, make_frame(), green_state(3, 10)) == 3


def test_vehicle_actuated_max_green():
    policy = VehicleActuated(build_controller())
    busy = make_frame(counts={'E1': 2, 'W1': 1})
    assert policy.act(None, busy, green_state(4, 99)) == 4
    assert policy.act(None, busy, green_state(4, 100)) == 2, \
        "At max green the stage changes to one with vehicle lanes even without demand"
    assert policy.holds_remaining == 0

    busy = make_frame(counts={'E1': 2}, peds={'PE': 1})
    assert policy.act(None, busy, green_state(4, 100)) == 3


def test_vehicle_actuated_green_never_exceeds_max_green():
    """At oversaturated demand every VA green ends by max green."""
    env = TrafficEnvironment.from_config(ConfigLoader.from_dict({}),
                                         demand_overrides={'vehicle_rate': 2400.0, 'ped_rate': 500.0},
                                         episode_steps=1500)
    policy = make_baseline('va', env.controller)
    observation = env.reset(8)
    policy.reset(8)
    longest = 0
    while not env.done:
        assert env.ctrl.elapsed_steps <= policy.max_green_steps
        longest = max(longest, env.ctrl.elapsed_steps)
        observation, _, _, _ = env.step(policy.act(observation, env.frame, env.ctrl))
    assert longest == policy.max_green_steps, "Continuous presence should extend a green to its cap"


def test_va_config_validation():
    with pytest.raises(ConfigError):
        VAConfig.from_dict({'extension': 0})
    with pytest.raises(ConfigError):
        VAConfig.from_dict({'rotation': [2, 3]})
    policy = VehicleActuated(build_controller(), VAConfig.from_dict({'extension': 3.0, 'max_green': 30.0}))
    assert policy.extension_holds == 5 and policy.max_green_steps == 50


def test_random_policy_is_seeded():
    policy = RandomPolicy(seed=4)
    first = [policy.act(None, None, None) for _ in range(300)]
    policy.reset(4)
    second = [policy.act(None, None, None) for _ in range(300)]
    assert first == second
    assert set(first) == {2, 3, 4}


def test_make_baseline():
    controller = build_controller()
    assert isinstance(make_baseline('mo', controller), MaximumOccupancy)
    va = make_baseline('va', controller, {'va': {'max_green': 12.0}})
    assert isinstance(va, VehicleActuated) and va.max_green_steps == 20
    assert isinstance(make_baseline('random', controller, seed=1), RandomPolicy)
    with pytest.raises(ConfigError):
        make_baseline('fixed_time', controller)


if __name__ == "__main__":
    test_served_movements()
    test_maximum_occupancy_picks_longest_queue()
    test_maximum_occupancy_holds_on_ties()
    test_maximum_occupancy_matches_brute_force()
    test_stage1_lane_queue_leaves_stage2()
    test_maximum_occupancy_on_random_frames()
    test_north_arm_only_demand_is_served('mo')
    test_north_arm_only_demand_is_served('va')
    test_vehicle_actuated_extends_while_detecting()
    test_vehicle_actuated_follows_rotation()
    test_vehicle_actuated_holds_without_demand()
    test_vehicle_actuated_max_green()
    test_vehicle_actuated_green_never_exceeds_max_green()
    test_va_config_validation()
    test_random_policy_is_seeded()
    test_make_baseline()
    print("\n🎉 Baseline tests passed!")
