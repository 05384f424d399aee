import json
import math

import pytest

from mcnoma_isac.config import (
    Geometry,
    SystemConfig,
    dbm_to_watt,
    preset_config,
    watt_to_dbm,
)


def test_dbm_round_trip():
    for p in (20.0, 25.0, 30.0, 35.0):
        assert watt_to_dbm(dbm_to_watt(p)) == pytest.approx(p, abs=1e-12)
    assert dbm_to_watt(30.0) == pytest.approx(1.0, rel=1e-12)
    assert dbm_to_watt(0.0) == pytest.approx(1e-3, rel=1e-12)


def test_presets_valid():
    desk = preset_config("desk-small")
    paper = preset_config("paper-default")
    assert desk.num_users == 3 and desk.num_subcarriers == 2
    assert paper.num_users == 5 and paper.bs_antennas == 18
    assert paper.rate_min == pytest.approx(1.6)
    assert paper.leakage_thresholds == (0.5, 1.0, 1.5)
    with pytest.raises(KeyError):
        preset_config("nope")


def test_security_levels_map_to_thresholds():
    c = preset_config("paper-default")
    # level 3 -> loosest threshold, level 1 -> tightest
    for k, level in enumerate(c.security_level_of_user):
        assert c.leakage_threshold_of_user(k) == c.leakage_thresholds[level - 1]
    assert c.leakage_threshold_of_user(0) == pytest.approx(1.5)
    assert c.leakage_threshold_of_user(4) == pytest.approx(0.5)


def test_enforced_threshold_backoff():
    c = preset_config("desk-small")
    for k in range(c.num_users):
        thr = c.leakage_threshold_of_user(k)
        eff = c.enforced_leakage_threshold(k)
        assert eff <= thr
        assert eff >= 0.5 * thr
    zero = c.replace(csi_error_fraction=0.0)
    for k in range(c.num_users):
        assert zero.enforced_leakage_threshold(k) == zero.leakage_threshold_of_user(k)


def test_json_round_trip(tmp_path):
    c = preset_config("desk-small").replace(seed=7, csi_error_fraction=0.05)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(c.to_json_dict()))
    c2 = SystemConfig.from_json(path)
    assert c2 == c
    assert c2.config_hash() == c.config_hash()


def test_config_hash_sensitivity():
    c = preset_config("desk-small")
    assert c.config_hash() != c.replace(rate_min=c.rate_min + 0.1).config_hash()
    assert c.config_hash() == preset_config("desk-small").config_hash()


def test_validation_rejects_bad_values():
    c = preset_config("desk-small")
    with pytest.raises(ValueError):
        c.replace(bs_power_max=-1.0)
    with pytest.raises(ValueError):
        c.replace(csi_error_fraction=-0.1)
    with pytest.raises(ValueError):
        c.replace(crb_mode="bogus")
    with pytest.raises(ValueError):
        c.replace(max_cluster_size=1)


def test_geometry_guard_fields_survive_json():
    c = preset_config("paper-default")
    g = Geometry(
        user_angle_range=c.geometry.user_angle_range,
        user_distance_range_m=c.geometry.user_distance_range_m,
        target_angle_range=c.geometry.target_angle_range,
        target_distance_range_m=c.geometry.target_distance_range_m,
        eve_angle_range=c.geometry.eve_angle_range,
        eve_distance_range_m=c.geometry.eve_distance_range_m,
        eve_angle_guard=math.radians(20.0),
        eve_separation_min_m=111.0,
    )
    c2 = SystemConfig.from_json_dict(c.replace(geometry=g).to_json_dict())
    assert c2.geometry.eve_angle_guard == pytest.approx(math.radians(20.0))
    assert c2.geometry.eve_separation_min_m == pytest.approx(111.0)
