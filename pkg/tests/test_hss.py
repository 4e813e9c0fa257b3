import pytest

from database.hss import (
    ADHOC_CONF,
    MMTEL,
    generate_subscribers,
    load_provisioning,
    parse_provisioning,
    subscriber_impu,
)
from errors import ProfileNotFound, ScenarioSyntaxError


def test_generated_population():
    hss = generate_subscribers(200)
    assert len(hss) == 200
    assert subscriber_impu(7) == "sip:user0007@unity"
    profiles = list(hss.profiles.values())
    assert all(p.has_mmtel for p in profiles)
    assert sum(p.has_adhoc_conf for p in profiles) == 20
    assert hss.get_profile("sip:user0010@unity").flags == [MMTEL, ADHOC_CONF]


def test_lookup_counts_queries_and_rejects_unknown():
    hss = generate_subscribers(3)
    hss.get_profile(subscriber_impu(1))
    with pytest.raises(ProfileNotFound) as info:
        hss.get_profile("sip:nobody@unity")
    assert info.value.impu == "sip:nobody@unity"
    assert hss.queries == 2


def test_binding_lifecycle():
    hss = generate_subscribers(2)
    impu = subscriber_impu(2)
    profile = hss.store_binding(impu, "UA:user0002")
    assert profile.registered and profile.binding == "UA:user0002"
    hss.clear_binding(impu)
    assert not hss.get_profile(impu).registered


def test_provisioning_text_round_trip():
    hss = generate_subscribers(12)
    again = parse_provisioning(hss.to_text())
    assert again.profiles == hss.profiles


def test_provisioning_file_with_comments(tmp_path):
    path = tmp_path / "subs.txt"
    path.write_text("# people\nsip:a@unity\tMMTEL,ADHOC-CONF\n\nsip:b@unity\t-\n", encoding="utf-8")
    hss = load_provisioning(path)
    assert hss.get_profile("sip:a@unity").has_adhoc_conf
    assert not hss.get_profile("sip:b@unity").has_mmtel
    assert len(load_provisioning(None, 5)) == 5


@pytest.mark.parametrize("text, line_no", [
    ("user@unity\tMMTEL\n", 1),
    ("sip:a@unity\tMMTEL\nsip:b@unity\tVIDEO\n", 2),
    ("sip:a@unity\tMMTEL\nsip:a@unity\tMMTEL\n", 2),
])
def test_provisioning_errors(text, line_no):
    with pytest.raises(ScenarioSyntaxError) as info:
        parse_provisioning(text)
    assert info.value.line_no == line_no
