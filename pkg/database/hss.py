import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from errors import ProfileNotFound, ScenarioSyntaxError

MMTEL = "MMTEL"
ADHOC_CONF = "ADHOC-CONF"
KNOWN_FLAGS = (MMTEL, ADHOC_CONF)
DOMAIN = "unity"


def subscriber_impu(index: int) -> str:
    return f"sip:user{index:04d}@{DOMAIN}"


@dataclass(frozen=True)
class SubscriberProfile:
    """Профиль абонента"""
    impu: str
    registered: bool = False
    binding: str = ""
    service_triggers: FrozenSet[str] = frozenset()
    supplementary: FrozenSet[str] = frozenset()
    codec_hints: Tuple[str, ...] = ()

    @property
    def has_mmtel(self) -> bool:
        return MMTEL in self.service_triggers

    @property
    def has_adhoc_conf(self) -> bool:
        return ADHOC_CONF in self.supplementary

    @property
    def flags(self) -> List[str]:
        return [f for f in KNOWN_FLAGS if f in self.service_triggers or f in self.supplementary]


def profile_from_flags(impu: str, flags: Iterable[str]) -> SubscriberProfile:
    flags = set(flags)
    return SubscriberProfile(
        impu=impu,
        service_triggers=frozenset(flags & {MMTEL}),
        supplementary=frozenset(flags & {ADHOC_CONF}),
    )


@dataclass
class HssDatabase:
    """База профилей; во время прогона меняются только регистрации"""
    profiles: Dict[str, SubscriberProfile] = field(default_factory=dict)
    queries: int = 0

    def __post_init__(self):
        self.logger = logging.getLogger(__name__)

    def __len__(self) -> int:
        return len(self.profiles)

    def add(self, profile: SubscriberProfile):
        if profile.impu in self.profiles:
            raise ValueError(f"Повторный impu: {profile.impu}")
        self.profiles[profile.impu] = profile

    def get_profile(self, impu: str) -> SubscriberProfile:
        self.queries += 1
        profile = self.profiles.get(impu)
        if profile is None:
            raise ProfileNotFound(impu)
        return profile

    def store_binding(self, impu: str, binding: str) -> SubscriberProfile:
        profile = self.get_profile(impu)
        updated = replace(profile, registered=True, binding=binding)
        self.profiles[impu] = updated
        return updated

    def clear_binding(self, impu: str):
        profile = self.profiles.get(impu)
        if profile is not None:
            self.profiles[impu] = replace(profile, registered=False, binding="")

    def to_text(self) -> str:
        """Файл провижининга: impu<TAB>flags"""
        lines = [f"{p.impu}\t{','.join(p.flags)}" for p in self.profiles.values()]
        return "\n".join(lines) + "\n"


def generate_subscribers(count: int = 200, conference_every: int = 10) -> HssDatabase:
    """user0001..userNNNN: MMTEL у всех, ADHOC-CONF у каждого conference_every-го"""
    hss = HssDatabase()
    for index in range(1, count + 1):
        flags = [MMTEL]
        if conference_every and index % conference_every == 0:
            flags.append(ADHOC_CONF)
        hss.add(profile_from_flags(subscriber_impu(index), flags))
    return hss


def parse_provisioning(text: str) -> HssDatabase:
    hss = HssDatabase()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        impu, _, flags_text = line.partition("\t")
        impu = impu.strip()
        if not impu.startswith("sip:"):
            raise ScenarioSyntaxError(line_no, f"некорректный impu: {impu!r}")
        flags = [f.strip() for f in flags_text.split(",") if f.strip() and f.strip() != "-"]
        unknown = [f for f in flags if f not in KNOWN_FLAGS]
        if unknown:
            raise ScenarioSyntaxError(line_no, f"неизвестные флаги: {', '.join(unknown)}")
        try:
            hss.add(profile_from_flags(impu, flags))
        except ValueError as e:
            raise ScenarioSyntaxError(line_no, str(e))
    return hss


def load_provisioning(path: Optional[Path], count: int = 200) -> HssDatabase:
    if path is None:
        return generate_subscribers(count)
    return parse_provisioning(Path(path).read_text(encoding="utf-8"))
