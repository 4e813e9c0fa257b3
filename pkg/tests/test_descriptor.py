import random

import pytest

from database.hss import generate_subscribers
from errors import (
    DescriptorError,
    DescriptorSyntaxError,
    PoolBoundsError,
    UncoveredUnitType,
    UnknownUnitType,
)
from services.descriptor import BASE_UNIT_TYPES, GOLDEN_DESCRIPTORS, load_descriptor, parse_descriptor
from services.orchestrator import deploy_system
from utils.formatters import format_table_row

PINNED_HEADER = "[pool cu]\npouches=3\nmax=3\n\n[deployment]\nmode=pinned\n"


@pytest.mark.parametrize("name", GOLDEN_DESCRIPTORS)
def test_golden_descriptors_load(descriptor_dir, name):
    descriptor = load_descriptor(name, descriptor_dir)
    assert descriptor.name == name
    assert descriptor.initial_pouch_count == 8
    assert descriptor.mode == ("distributed" if name == "DIST" else "pinned")


@pytest.mark.parametrize("name, row", [
    ("NO1", ["SN", "H", "C", "C", "A", "T", "M", "M"]),
    ("NO2", ["SNH", "C", "C", "A", "T", "M", "M", "M"]),
    ("NO3", ["SN", "H", "C", "A", "T", "M", "M", "M"]),
    ("NO4", ["SN", "H", "C", "C", "T", "MA", "MA", "MA"]),
    ("NO5", ["SNH", "C", "C", "T", "MA", "MA", "MA", "MA"]),
])
def test_placement_rows(descriptor_dir, name, row):
    assert load_descriptor(name, descriptor_dir).table_row() == row


def test_table_row_formatting(descriptor_dir):
    row = load_descriptor("NO3", descriptor_dir).table_row()
    assert format_table_row("NO3", row) == "NO3 | SN | H | C | A | T | M | M | M"


def test_eligible_ordinals(descriptor_dir):
    descriptor = load_descriptor("NO4", descriptor_dir)
    assert descriptor.eligible_ordinals("A") == [6, 7, 8]
    assert descriptor.eligible_ordinals("Diah") == [2]
    assert descriptor.pin_map()[("C",)] == [3, 4]


def test_distributed_defaults(descriptor_dir):
    descriptor = load_descriptor("DIST", descriptor_dir)
    assert descriptor.pins == []
    assert descriptor.elasticity.cpu_high == 0.80
    assert descriptor.elasticity.cooldown_ms == 5000
    assert descriptor.costs.c_audit_interval_ms == 1000
    assert descriptor.costs.c_session_ms == 0.1


def test_load_by_path(tmp_path):
    path = tmp_path / "small.desc"
    path.write_text("[pool a]\npouches=1\nmax=2\nspeed=0.5\n[pool b]\npouches=2\n", encoding="utf-8")
    descriptor = load_descriptor(str(path), tmp_path)
    assert descriptor.name == "small"
    assert [(p.pool_id, p.pouches, p.max, p.speed) for p in descriptor.pools] == [
        ("a", 1, 2, 0.5), ("b", 2, 2, 1.0)]


def test_sections_override_defaults():
    text = ("[pool cu]\npouches=2\n[costs]\nc_audit_ms=4.5\n"
            "[network]\ninter_ms=1.25\n[elasticity]\ncpu_high=0.9\ncpu_low=0.1\n")
    descriptor = parse_descriptor(text)
    assert descriptor.costs.c_audit_ms == 4.5
    assert descriptor.network.inter_ms == 1.25
    assert descriptor.elasticity.cpu_low == 0.1


def test_with_speed_copies_pools(descriptor_dir):
    base = load_descriptor("DIST", descriptor_dir)
    slow = base.with_speed(0.5)
    assert slow.name == "DIST@0.5"
    assert [p.speed for p in slow.pools] == [0.5]
    assert base.pools[0].speed == 1.0


def test_unknown_unit_type():
    with pytest.raises(UnknownUnitType):
        parse_descriptor(PINNED_HEADER + "pin SIPh,X -> 1\n")


def test_every_type_must_be_pinned():
    text = PINNED_HEADER + "pin SIPh,NSS,H,Diah -> 1\npin C,A,T -> 2\n"
    with pytest.raises(UncoveredUnitType):
        parse_descriptor(text)


def test_pin_beyond_pouch_count():
    text = PINNED_HEADER + "pin SIPh,NSS,H,Diah -> 1\npin C,A,T -> 2\npin M -> 4\n"
    with pytest.raises(PoolBoundsError):
        parse_descriptor(text)


def test_pouches_above_max():
    with pytest.raises(PoolBoundsError):
        parse_descriptor("[pool cu]\npouches=5\nmax=4\n")


@pytest.mark.parametrize("text, line_no", [
    ("pouches=2\n", 1),
    ("[pool cu]\npouches=two\n", 2),
    ("[pool cu]\npouches=2\ncolour=red\n", 3),
    ("[pool cu\n", 1),
    ("[pool cu]\npouches=2\n[deployment]\nmode=pinned\npin C\n", 5),
    ("[pool cu]\npouches=2\n[costs]\nwarp_ms=1\n", 4),
    ("[weird]\n", 1),
    ("[pool cu]\npouches=2\nspeed=nan\n", 3),
    ("[pool cu]\npouches=1\n[costs]\nc_setup_ms=inf\n", 4),
])
def test_syntax_errors_carry_line_number(text, line_no):
    with pytest.raises(DescriptorSyntaxError) as info:
        parse_descriptor(text)
    assert info.value.line_no == line_no


def test_duplicate_pin():
    text = PINNED_HEADER + "pin C -> 2\npin C -> 2\n"
    with pytest.raises(DescriptorSyntaxError):
        parse_descriptor(text)


def test_no_pools():
    with pytest.raises(DescriptorSyntaxError):
        parse_descriptor("[deployment]\nmode=distributed\n")


def test_inverted_thresholds():
    with pytest.raises(DescriptorSyntaxError):
        parse_descriptor("[pool cu]\npouches=1\n[elasticity]\ncpu_high=0.2\ncpu_low=0.5\n")


@pytest.mark.parametrize("text", [
    "[pool cu]\npouches=0\nmax=4\n",
    "[pool cu]\nmax=4\n[pool spare]\npouches=0\nmax=2\n",
])
def test_descriptor_without_initial_pouches(text):
    with pytest.raises(PoolBoundsError):
        parse_descriptor(text)


def test_spare_pool_may_start_empty():
    descriptor = parse_descriptor("[pool cu]\npouches=1\n[pool spare]\npouches=0\nmax=2\n")
    assert descriptor.initial_pouch_count == 1


FRAGMENTS = (
    "[pool cu]", "[pool b]", "[deployment]", "[elasticity]", "[costs]", "[network]", "[pool]", "[bogus]",
    "[pool cu", "pouches=2", "pouches=0", "pouches=-1", "pouches=x", "max=3", "max=1", "speed=0.05",
    "speed=nan", "speed=2", "mode=pinned", "mode=distributed", "mode=weird", "pin SIPh,NSS,H,Diah -> 1",
    "pin C,A,T,M -> 2", "pin M -> CU3", "pin C -> 0", "pin X -> 1", "pin -> 1", "pin C 1",
    "cpu_high=0.9", "cpu_low=0.95", "cooldown_ms=-5", "c_setup_ms=nan", "c_setup_ms=1.5",
    "inter_ms=0.25", "colour=red", "=", "# comment", "key", "",
)
VALID_POOL = "[pool cu]\npouches=2\nmax=3"


def test_generated_descriptors_parse_or_raise_descriptor_errors():
    rng = random.Random(3)
    accepted = 0
    for _ in range(3000):
        prefix = [VALID_POOL] if rng.random() < 0.5 else []
        text = "\n".join(prefix + [rng.choice(FRAGMENTS) for _ in range(rng.randrange(12))])
        try:
            descriptor = parse_descriptor(text)
        except DescriptorError:
            continue
        accepted += 1
        system = deploy_system(descriptor, seed=1, hss=generate_subscribers(2))
        assert set(system.base_units) == set(BASE_UNIT_TYPES)
    assert accepted > 0


def test_pin_ordinal_starts_at_one():
    with pytest.raises(DescriptorSyntaxError):
        parse_descriptor(PINNED_HEADER + "pin C -> 0\n")
