"""MRF policy parsing and default-policy classification.

Parses the verbatim metadata documents returned by the crawler into
``PolicyConfig`` and full ``InstanceSnapshot`` records, and classifies
enabled policies as defaults or deliberate choices by software version.
All functions are pure.
"""

import logging
import re
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple

from .constants import (
    DEFAULTS_THRESHOLD_VERSION,
    HASHTAG_RULE_KEYS,
    NOOP_POLICY,
    POST_THRESHOLD_DEFAULTS,
    PRE_THRESHOLD_DEFAULTS,
    SIMPLE_ACTIONS,
)
from .exceptions import PolicyParseError, UnexposedPolicyError
from .models import (
    FetchOutcome,
    HashtagRules,
    InstanceRef,
    InstanceSnapshot,
    MetadataDocument,
    PolicyConfig,
    SimpleAction,
    SimplePolicyTarget,
)

logger = logging.getLogger(__name__)

_VERSION_RE = re.compile(r"(\d+)\.(\d+)(?:\.(\d+))?")
_PLEROMA_VERSION_RE = re.compile(r"pleroma\s+v?(\d+\.\d+(?:\.\d+)?\S*)", re.IGNORECASE)
_NAMESPACE_SEPARATORS = re.compile(r"[.:/\\]")

# Extra keys Pleroma publishes next to the action lists
_SIMPLE_INFO_SUFFIX = "_info"


def strip_namespace(name: str) -> str:
    """Keep the final identifier segment of a qualified policy name.

    >>> strip_namespace("Pleroma.Web.ActivityPub.MRF.SimplePolicy")
    'SimplePolicy'
    """
    return _NAMESPACE_SEPARATORS.split(name.strip())[-1]


def parse_version(version: str) -> Optional[Tuple[int, int, int]]:
    """Extract a dotted numeric triple from a version string, tolerating suffixes.

    Returns:
        (major, minor, patch) or None when no numeric version is present
    """
    if not version:
        return None
    match = _PLEROMA_VERSION_RE.search(version)
    text = match.group(1) if match else version
    match = _VERSION_RE.search(text)
    if not match:
        return None
    return int(match.group(1)), int(match.group(2)), int(match.group(3) or 0)


def defaults_for(version: str) -> FrozenSet[str]:
    """Return the set of policies auto-enabled by ``version``.

    An unparseable version is read as a recent release.
    """
    parsed = parse_version(version)
    if parsed is None:
        logger.warning("Unparseable version %r; using post-%s defaults", version,
                       ".".join(map(str, DEFAULTS_THRESHOLD_VERSION)))
        return POST_THRESHOLD_DEFAULTS
    return POST_THRESHOLD_DEFAULTS if parsed >= DEFAULTS_THRESHOLD_VERSION else PRE_THRESHOLD_DEFAULTS


def classify_default(policy_name: str, version: str) -> bool:
    """Return True iff ``policy_name`` ships enabled by default in ``version``."""
    return policy_name in defaults_for(version)


def default_only(config: PolicyConfig, version: str) -> bool:
    """Return True iff every enabled policy is a default for ``version``.

    Raises:
        UnexposedPolicyError: If the instance does not expose its policies
    """
    if config.is_unexposed:
        raise UnexposedPolicyError("Instance does not expose its policies; exclude it before asking")
    defaults = defaults_for(version)
    return all(name in defaults for name in config.enabled_policies)


def policy_names(config: PolicyConfig) -> Set[str]:
    """Policies counted for footprint purposes.

    NoOpPolicy only counts when it is the sole enabled policy; any other
    policy overrides it.
    """
    names = set(config.enabled_policies)
    if names != {NOOP_POLICY}:
        names.discard(NOOP_POLICY)
    return names


def _target_domain(entry: Any, path: str) -> Tuple[Optional[str], str]:
    """Return (domain, verbatim) for one mrf_simple list entry."""
    if isinstance(entry, str):
        raw = entry
    elif isinstance(entry, (list, tuple)) and entry and isinstance(entry[0], str):
        raw = entry[0]
    elif isinstance(entry, Mapping):
        raw = entry.get("instance") or entry.get("domain")
        if not isinstance(raw, str):
            raise PolicyParseError("entry has no instance/domain string", path)
    else:
        raise PolicyParseError(f"unsupported entry {entry!r}", path)
    domain = raw.strip()
    if domain.startswith("*."):
        domain = domain[2:]
    return domain, raw


def extract_simple_targets(
    section: Mapping[str, Any],
    quarantined: Iterable[Any] = (),
    path: str = "$.mrf_simple",
) -> Tuple[Tuple[SimplePolicyTarget, ...], Tuple[Tuple[str, Tuple[str, ...]], ...]]:
    """Enumerate SimplePolicy action→target pairs.

    Unknown action keys are kept verbatim in the second element, as are
    entries whose domain is not a well-formed hostname (under
    ``<action>.unparsed``).

    Raises:
        PolicyParseError: If the section or an action list has the wrong shape
    """
    if not isinstance(section, Mapping):
        raise PolicyParseError(f"expected an object, got {type(section).__name__}", path)
    targets: List[SimplePolicyTarget] = []
    seen: Set[Tuple[SimpleAction, InstanceRef]] = set()
    other: Dict[str, List[str]] = {}

    def add(action_key: str, entries: Any, entries_path: str) -> None:
        if entries is None:
            return
        if not isinstance(entries, list):
            raise PolicyParseError(f"expected a list, got {type(entries).__name__}", entries_path)
        if action_key not in SIMPLE_ACTIONS:
            other.setdefault(action_key, []).extend(
                _target_domain(e, f"{entries_path}[{i}]")[1] for i, e in enumerate(entries)
            )
            return
        action = SimpleAction(action_key)
        for i, entry in enumerate(entries):
            domain, raw = _target_domain(entry, f"{entries_path}[{i}]")
            try:
                target = InstanceRef(domain)
            except ValueError:
                other.setdefault(f"{action_key}.unparsed", []).append(raw)
                continue
            if (action, target) not in seen:
                seen.add((action, target))
                targets.append(SimplePolicyTarget(action, target))

    for key in sorted(section):
        if key.endswith(_SIMPLE_INFO_SUFFIX):
            continue
        add(key, section[key], f"{path}.{key}")
    add("quarantine", list(quarantined), f"{path}.quarantine")
    return (
        tuple(targets),
        tuple((key, tuple(values)) for key, values in sorted(other.items())),
    )


def _parse_hashtag_rules(section: Any, path: str) -> HashtagRules:
    if section is None:
        return HashtagRules()
    if not isinstance(section, Mapping):
        raise PolicyParseError(f"expected an object, got {type(section).__name__}", path)
    counts = {}
    for key in HASHTAG_RULE_KEYS:
        values = section.get(key) or []
        if not isinstance(values, list):
            raise PolicyParseError(f"expected a list, got {type(values).__name__}", f"{path}.{key}")
        counts[key] = len(values)
    return HashtagRules(**counts)


def _federation_section(document: MetadataDocument) -> Tuple[Optional[Mapping[str, Any]], str]:
    nodeinfo = document.nodeinfo_json()
    if nodeinfo is not None:
        if not isinstance(nodeinfo, Mapping):
            raise PolicyParseError("expected an object", "$nodeinfo")
        metadata = nodeinfo.get("metadata")
        if isinstance(metadata, Mapping) and metadata.get("federation") is not None:
            return metadata["federation"], "$nodeinfo.metadata.federation"
    instance = document.instance_json()
    if not isinstance(instance, Mapping):
        raise PolicyParseError("expected an object", "$instance")
    pleroma = instance.get("pleroma")
    if isinstance(pleroma, Mapping):
        metadata = pleroma.get("metadata")
        if isinstance(metadata, Mapping) and metadata.get("federation") is not None:
            return metadata["federation"], "$instance.pleroma.metadata.federation"
    return None, ""


def parse_policies(document: MetadataDocument) -> PolicyConfig:
    """Parse the MRF policy state out of a metadata document.

    The federation section is read from nodeinfo ``metadata.federation``,
    falling back to the instance endpoint's ``pleroma.metadata.federation``.

    Returns:
        The parsed config, or ``PolicyConfig.unexposed()`` when neither
        document carries a federation section

    Raises:
        PolicyParseError: Naming the offending path when the section is malformed
    """
    federation, path = _federation_section(document)
    if federation is None:
        return PolicyConfig.unexposed()
    if not isinstance(federation, Mapping):
        raise PolicyParseError(f"expected an object, got {type(federation).__name__}", path)

    policies = federation.get("mrf_policies") or []
    if not isinstance(policies, list):
        raise PolicyParseError("expected a list of policy names", f"{path}.mrf_policies")
    enabled = set()
    for i, name in enumerate(policies):
        if not isinstance(name, str) or not name.strip():
            raise PolicyParseError(f"policy name must be a non-empty string, got {name!r}",
                                   f"{path}.mrf_policies[{i}]")
        enabled.add(strip_namespace(name))

    quarantined = federation.get("quarantined_instances") or []
    if not isinstance(quarantined, list):
        raise PolicyParseError("expected a list", f"{path}.quarantined_instances")
    simple = federation.get("mrf_simple") or {}
    targets, other = extract_simple_targets(simple, quarantined, path=f"{path}.mrf_simple")

    return PolicyConfig(
        enabled_policies=frozenset(enabled),
        simple_targets=targets,
        hashtag_rules=_parse_hashtag_rules(federation.get("mrf_hashtag"), f"{path}.mrf_hashtag"),
        other_actions=other,
        exposed=True,
    )


def _count(value: Any, path: str) -> int:
    if value is None:
        return 0
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise PolicyParseError(f"expected a number, got {value!r}", path)
    return max(int(value), 0)


def _get(mapping: Any, *keys: str) -> Any:
    for key in keys:
        if not isinstance(mapping, Mapping):
            return None
        mapping = mapping.get(key)
    return mapping


def _accounts(value: Any, path: str) -> FrozenSet[str]:
    if value is None:
        return frozenset()
    if not isinstance(value, list):
        raise PolicyParseError("expected a list of accounts", path)
    accounts = set()
    for i, account in enumerate(value):
        if isinstance(account, str):
            accounts.add(account)
        elif isinstance(account, Mapping) and isinstance(account.get("url") or account.get("acct"), str):
            accounts.add(account.get("url") or account.get("acct"))
        else:
            raise PolicyParseError(f"unsupported account {account!r}", f"{path}[{i}]")
    return frozenset(accounts)


def software_version(document: MetadataDocument) -> str:
    """Best-effort software version: nodeinfo first, then the instance banner."""
    nodeinfo = document.nodeinfo_json()
    version = _get(nodeinfo, "software", "version")
    if isinstance(version, str) and version:
        return version
    banner = _get(document.instance_json(), "version")
    if isinstance(banner, str):
        match = _PLEROMA_VERSION_RE.search(banner)
        return match.group(1) if match else banner
    return ""


def is_pleroma_compatible(document: MetadataDocument) -> bool:
    """True when nodeinfo or the instance banner identifies Pleroma-family software."""
    name = _get(document.nodeinfo_json(), "software", "name")
    if isinstance(name, str) and name.lower() in ("pleroma", "akkoma"):
        return True
    banner = _get(document.instance_json(), "version")
    return isinstance(banner, str) and "pleroma" in banner.lower()


def parse_metadata(document: MetadataDocument, instance: InstanceRef, observed_at: int) -> InstanceSnapshot:
    """Build a full snapshot from a metadata document.

    Counts come from the instance ``stats`` block with nodeinfo ``usage`` as
    fallback. Administrators are read from nodeinfo ``adminAccounts``, then
    ``staffAccounts``, then the instance ``contact_account``; moderators
    from ``moderatorAccounts``.

    Raises:
        PolicyParseError: If a document is structurally invalid
    """
    info = document.instance_json()
    if not isinstance(info, Mapping):
        raise PolicyParseError("expected an object", "$instance")
    nodeinfo = document.nodeinfo_json()
    usage = _get(nodeinfo, "usage")
    metadata = _get(nodeinfo, "metadata")

    user_count = _get(info, "stats", "user_count")
    user_path = "$instance.stats.user_count"
    if user_count is None:
        user_count, user_path = _get(usage, "users", "total"), "$nodeinfo.usage.users.total"
    post_count = _get(info, "stats", "status_count")
    post_path = "$instance.stats.status_count"
    if post_count is None:
        post_count, post_path = _get(usage, "localPosts"), "$nodeinfo.usage.localPosts"

    if _get(metadata, "adminAccounts") is not None:
        admins = _accounts(metadata["adminAccounts"], "$nodeinfo.metadata.adminAccounts")
    elif _get(metadata, "staffAccounts") is not None:
        admins = _accounts(metadata["staffAccounts"], "$nodeinfo.metadata.staffAccounts")
    elif isinstance(info.get("contact_account"), Mapping):
        admins = _accounts([info["contact_account"]], "$instance.contact_account")
    else:
        admins = frozenset()
    moderators = _accounts(_get(metadata, "moderatorAccounts"), "$nodeinfo.metadata.moderatorAccounts")

    return InstanceSnapshot(
        instance=instance,
        observed_at=observed_at,
        user_count=_count(user_count, user_path),
        post_count=_count(post_count, post_path),
        active_month=_count(_get(usage, "users", "activeMonth"), "$nodeinfo.usage.users.activeMonth"),
        active_halfyear=_count(_get(usage, "users", "activeHalfyear"), "$nodeinfo.usage.users.activeHalfyear"),
        version=software_version(document),
        admins=admins,
        moderators=moderators,
        policy_config=parse_policies(document),
        fetch_status=FetchOutcome.OK,
    )


def serialize_policies(config: PolicyConfig) -> Dict[str, Any]:
    """Render a config back into a federation section (inverse of ``parse_policies``)."""
    if config.is_unexposed:
        return {}
    simple: Dict[str, List[str]] = {action: [] for action in SIMPLE_ACTIONS if action != "quarantine"}
    quarantined: List[str] = []
    for target in config.simple_targets:
        if target.action is SimpleAction.QUARANTINE:
            quarantined.append(target.target.domain)
        else:
            simple[target.action.value].append(target.target.domain)
    for key, values in config.other_actions:
        simple[key] = list(values)
    hashtags = config.hashtag_rules.to_dict()
    return {
        "mrf_policies": sorted(config.enabled_policies),
        "mrf_simple": simple,
        "quarantined_instances": quarantined,
        "mrf_hashtag": {key: [f"tag{i}" for i in range(n)] for key, n in hashtags.items()},
    }
