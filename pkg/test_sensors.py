#!/usr/bin/env python3
"""Tests for the emulated lane and pedestrian sensors."""

import logging

import pytest

from core.config_loader import ConfigError, ConfigLoader
from core.sensors import SensorConfig, SensorFrame, collect_snapshot, empty_frame
from core.simulation import DemandSchedule, JunctionConfig, Pedestrian, SimConfig, Simulator, Vehicle

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def build(coverage=50.0, lane_coverage=None):
    config = ConfigLoader.from_dict({})
    sim_config = SimConfig.from_dict(config.get('simulation'))
    junction = JunctionConfig.from_dict(config.get('junction'))
    sensors = SensorConfig.from_dict({'coverage_length': coverage, 'lane_coverage': lane_coverage or {}},
                                     sim_config, junction)
    simulator = Simulator(sim_config, junction, DemandSchedule(0.0, 0.0))
    return simulator, sensors


def add_vehicle(world, lane, distance_to_stop_line, speed, wait=0.0, lane_length=150.0):
    vehicle = Vehicle(id=world.next_vehicle_id, lane=lane, position=lane_length - distance_to_stop_line,
                      speed=speed, entry_time=0.0, destination='ahead', accumulated_wait=wait)
    world.next_vehicle_id += 1
    world.lanes[lane].append(vehicle)
    return vehicle


def test_empty_network():
    print("🧪 Testing sensors on an empty network")
    print("=" * 50)
    simulator, sensors = build()
    world = simulator.new_world(0)
    frame = collect_snapshot(world, sensors)

    assert frame.vehicle_queue == 0 and frame.ped_queue == 0
    assert frame.occupancies == [0.0] * 6
    assert frame.buttons == [False] * 4
    assert frame == empty_frame(sensors, 0, 0.6), "Empty network must match the empty frame"
    print("✅ Empty network reads zero everywhere")


def test_stopped_queue_within_coverage():
    simulator, sensors = build()
    world = simulator.new_world(0)
    for i in range(3):
        add_vehicle(world, 'S2', i * 7.5, 0.0, wait=4.0)

    lane = collect_snapshot(world, sensors).lane('S2')
    assert lane.queue == 3 and lane.count == 3
    assert lane.occupancy == pytest.approx(3 / (50.0 / 7.5))
    assert lane.sum_wait == pytest.approx(12.0)
    assert lane.speeds == (0.0, 0.0, 0.0)


def test_vehicle_outside_coverage_is_invisible():
    simulator, sensors = build()
    world = simulator.new_world(0)
    add_vehicle(world, 'W1', 120.0, 0.0, wait=30.0)

    frame = collect_snapshot(world, sensors)
    lane = frame.lane('W1')
    assert (lane.queue, lane.count, lane.occupancy, lane.sum_wait) == (0, 0, 0.0, 0.0)
    assert frame.speeds == []


def test_moving_vehicles_counted_but_not_queued():
    simulator, sensors = build()
    world = simulator.new_world(0)
    add_vehicle(world, 'N1', 10.0, 8.0)
    add_vehicle(world, 'N1', 40.0, 0.05)

    lane = collect_snapshot(world, sensors).lane('N1')
    assert lane.count == 2
    assert lane.queue == 1, "Only vehicles below the wait threshold are queued"
    assert sorted(lane.speeds) == [0.05, 8.0]


def test_per_lane_coverage_override():
    simulator, sensors = build(lane_coverage={'E1': 100.0})
    world = simulator.new_world(0)
    add_vehicle(world, 'E1', 90.0, 0.0)
    add_vehicle(world, 'W1', 90.0, 0.0)

    frame = collect_snapshot(world, sensors)
    assert frame.lane('E1').count == 1
    assert frame.lane('W1').count == 0


def test_pedestrian_sensor():
    simulator, sensors = build()
    world = simulator.new_world(0)
    world.pedestrians.append(Pedestrian(id=0, crossing='PE', entry_time=0.0, accumulated_wait=5.0))
    world.pedestrians.append(Pedestrian(id=1, crossing='PE', entry_time=0.0, accumulated_wait=3.0))
    world.pedestrians.append(Pedestrian(id=2, crossing='PW', entry_time=0.0, state='crossing'))

    frame = collect_snapshot(world, sensors)
    assert frame.crossing('PE').queue == 2
    assert frame.crossing('PE').sum_wait == pytest.approx(8.0)
    assert frame.buttons == [False, False, True, False]
    assert frame.ped_wait == pytest.approx(8.0)


def test_sensors_match_world_under_traffic():
    """Frames recomputed by hand from the world agree with the sensor readings."""
    print("🧪 Testing sensors against a recomputation")
    config = ConfigLoader.from_dict({})
    sim_config = SimConfig.from_dict(config.get('simulation'))
    junction = JunctionConfig.from_dict(config.get('junction'))
    sensors = SensorConfig.from_dict(config.get('sensors'), sim_config, junction)
    simulator = Simulator(sim_config, junction, DemandSchedule(2117.0, 444.0))
    world = simulator.new_world(5)
    state = {phase: phase in ('N1', 'S1', 'S2') for phase in junction.phases}

    for _ in range(300):
        simulator.advance(world, state)
        frame = collect_snapshot(world, sensors)
        for lane in junction.lanes:
            visible = [v for v in world.lanes[lane] if 150.0 - v.position <= 50.0]
            snapshot = frame.lane(lane)
            assert snapshot.count == len(visible)
            assert snapshot.queue == sum(1 for v in visible if v.speed < 0.1)
            assert snapshot.occupancy == pytest.approx(min(len(visible) / (50.0 / 7.5), 1.0))
        for crossing in junction.crossings:
            waiting = [p for p in world.pedestrians if p.crossing == crossing and p.state == 'waiting']
            assert frame.crossing(crossing).queue == len(waiting)
            assert frame.crossing(crossing).button == bool(waiting)
    print("✅ Sensor readings agree with the world")


def test_frame_serialisation():
    simulator, sensors = build()
    world = simulator.new_world(0)
    add_vehicle(world, 'N2', 5.0, 0.0, wait=2.4)
    world.pedestrians.append(Pedestrian(id=0, crossing='PN', entry_time=0.0, accumulated_wait=1.2))
    frame = collect_snapshot(world, sensors)
    assert SensorFrame.from_dict(frame.to_dict()) == frame


def test_invalid_coverage_rejected():
    with pytest.raises(ConfigError):
        build(coverage=0.0)
    with pytest.raises(ConfigError):
        build(coverage=200.0)


if __name__ == "__main__":
    test_empty_network()
    test_stopped_queue_within_coverage()
    test_vehicle_outside_coverage_is_invisible()
    test_moving_vehicles_counted_but_not_queued()
    test_per_lane_coverage_override()
    test_pedestrian_sensor()
    test_sensors_match_world_under_traffic()
    test_frame_serialisation()
    test_invalid_coverage_rejected()
    print("\n🎉 Sensor tests passed!")
