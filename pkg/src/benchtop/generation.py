"""Natural-language scene descriptions compiled to scene configs.

Two compilation paths produce the same artifact:

- ``generate_scene`` prompts a chat provider for the object list (and
  optionally the environment), parses the JSON ops out of the reply,
  re-prompting with the parse error up to three times, then fills any
  missing poses by collision-free sampling and repairs residual validator
  violations before giving up.
- ``fallback_generate`` is fully offline: a small grammar pulls the object
  count, named objects, lighting, and camera out of the description, named
  objects are resolved against the catalog, and the rest of the scene is
  drawn from the remaining models with the seeded RNG.

Both attach provenance so downstream reports can split results on it.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, replace

from .catalog import Catalog, ObjectModel
from .errors import (
    CountMismatch,
    DescriptionParseError,
    NoJsonFound,
    SchemaViolation,
    UnknownModel,
    UnresolvableMention,
    ValidationFailed,
)
from .jsonio import quantize
from .scene import (
    CameraPose,
    EnvSetupOp,
    LightingSpec,
    ObjectAddOp,
    ObjectSpec,
    Pose,
    Provenance,
    SceneConfig,
    SceneDescription,
    default_env,
    pose_from_dict,
    sample_pose,
    validate_config,
)
from .seeds import description_seed

MAX_PROMPT_ATTEMPTS = 3

_WORD_COUNTS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
}

_COUNT_RE = re.compile(
    r"\b(\d+|one|two|three|four|five|six|seven|eight|nine|ten)\s+objects?\b",
    re.IGNORECASE,
)
_MENTION_RE = re.compile(
    r"\bone(?:\s+of\s+which)?\s+is\s+(?:an?\s+|the\s+)?([^,.;]+)",
    re.IGNORECASE,
)
_LIGHTING_RE = re.compile(
    r"\blighting(?:\s+intensity)?\s+(?:of\s+|at\s+|=\s*)?(\d+(?:\.\d+)?)",
    re.IGNORECASE,
)
_CAMERA_RE = re.compile(
    r"\bcamera\s+at\s*\(\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*,"
    r"\s*(-?\d+(?:\.\d+)?)\s*\)",
    re.IGNORECASE,
)


def parse_description(text: str) -> SceneDescription:
    """Parse a scene description into its structured form.

    Requires an object count ("<n> objects"); named objects, lighting, and
    camera clauses are optional.
    """
    stripped = text.strip()
    if not stripped:
        raise DescriptionParseError("empty scene description")
    count_match = _COUNT_RE.search(stripped)
    if count_match is None:
        raise DescriptionParseError(
            "description must state an object count, e.g. 'three objects'"
        )
    raw_count = count_match.group(1).lower()
    count = int(raw_count) if raw_count.isdigit() else _WORD_COUNTS[raw_count]
    if count < 1:
        raise DescriptionParseError(f"object count must be >= 1, got {count}")

    specs = []
    for match in _MENTION_RE.finditer(stripped):
        mention = " ".join(match.group(1).split()).strip()
        if mention:
            specs.append(ObjectSpec(mention=mention, pose=None))
    if len(specs) > count:
        raise DescriptionParseError(
            f"description names {len(specs)} objects but states a count of {count}"
        )

    lighting = None
    lm = _LIGHTING_RE.search(stripped)
    if lm is not None:
        lighting = LightingSpec(intensity=quantize(float(lm.group(1))))

    camera = None
    cm = _CAMERA_RE.search(stripped)
    if cm is not None:
        camera = CameraPose(
            position_m=(
                quantize(float(cm.group(1))),
                quantize(float(cm.group(2))),
                quantize(float(cm.group(3))),
            ),
            look_at_m=(0.0, 0.0, 0.0),
        )

    return SceneDescription(
        object_count=count,
        object_specs=tuple(specs),
        lighting=lighting,
        camera=camera,
        raw_text=stripped,
    )


# ---- prompting ------------------------------------------------------------


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    few_shot: tuple[tuple[str, str], ...]
    user_text: str


_OBJECT_SYSTEM = (
    "You configure tabletop manipulation scenes. Given a scene description, "
    "reply with a JSON array of object add operations and nothing else. Each "
    "element is {\"model_id\": \"<id from the object list>\", \"pose\": "
    "{\"position_m\": [x, y, z], \"yaw_rad\": r} or null}. Use null poses "
    "unless the description pins a position. Only use listed model ids."
)

_OBJECT_FEW_SHOT: tuple[tuple[str, str], ...] = (
    (
        "Scene description: 2 objects, one is an apple.\nRespond with a JSON "
        "array of exactly 2 add operations.",
        '[{"model_id": "apple", "pose": null}, '
        '{"model_id": "sponge", "pose": null}]',
    ),
    (
        "Scene description: 1 object.\nRespond with a JSON array of exactly "
        "1 add operation.",
        '[{"model_id": "orange", "pose": null}]',
    ),
)

_ENV_SYSTEM = (
    "You configure tabletop scene environments. Reply with a single JSON "
    "object {\"lighting\": {\"intensity\": f} or null, \"camera\": "
    "{\"position_m\": [x, y, z], \"look_at_m\": [x, y, z]} or null} and "
    "nothing else. Use null for anything the description leaves unspecified."
)

_ENV_FEW_SHOT: tuple[tuple[str, str], ...] = (
    (
        "Scene description: 1 object with lighting 0.5.",
        '{"lighting": {"intensity": 0.5}, "camera": null}',
    ),
    (
        "Scene description: 2 objects.",
        '{"lighting": null, "camera": null}',
    ),
)


def build_object_prompt(description: SceneDescription, catalog: Catalog) -> PromptBundle:
    lines = [f"- {model.display_name}" for model in catalog.models]
    user = (
        "Available objects:\n"
        + "\n".join(lines)
        + "\n\nScene description: "
        + description.raw_text
        + f"\nRespond with a JSON array of exactly {description.object_count} "
        "add operations."
    )
    return PromptBundle(
        system_text=_OBJECT_SYSTEM, few_shot=_OBJECT_FEW_SHOT, user_text=user
    )


def build_env_prompt(description: SceneDescription) -> PromptBundle:
    return PromptBundle(
        system_text=_ENV_SYSTEM,
        few_shot=_ENV_FEW_SHOT,
        user_text="Scene description: " + description.raw_text,
    )


def _first_json(text: str, want: type) -> object:
    decoder = json.JSONDecoder()
    opener = "[" if want is list else "{"
    idx = text.find(opener)
    while idx != -1:
        try:
            value, _ = decoder.raw_decode(text, idx)
        except ValueError:
            idx = text.find(opener, idx + 1)
            continue
        if isinstance(value, want):
            return value
        idx = text.find(opener, idx + 1)
    raise NoJsonFound(f"no JSON {'array' if want is list else 'object'} in reply")


def parse_llm_ops(
    text: str, catalog: Catalog, expected_count: int
) -> list[ObjectAddOp]:
    """Extract and validate add operations from an LLM reply."""
    raw = _first_json(text, list)
    ops: list[ObjectAddOp] = []
    for i, item in enumerate(raw):
        path = f"$[{i}]"
        if not isinstance(item, dict):
            raise SchemaViolation("expected an object", path=path)
        if "model_id" not in item:
            raise SchemaViolation("missing key 'model_id'", path=path)
        model_id = item["model_id"]
        if not isinstance(model_id, str) or not model_id:
            raise SchemaViolation("'model_id' must be a non-empty string", path=path)
        model = catalog.get(model_id) if model_id in catalog else None
        if model is None:
            model = catalog.resolve(model_id)
        if model is None:
            raise UnknownModel(f"unknown model id or name: {model_id!r}")
        pose = None
        raw_pose = item.get("pose")
        if raw_pose is not None:
            pose = pose_from_dict(raw_pose, path=f"{path}.pose")
        ops.append(ObjectAddOp(model_id=model.id, pose=pose))
    if len(ops) != expected_count:
        raise CountMismatch(
            f"expected {expected_count} add operations, got {len(ops)}"
        )
    return ops


def parse_llm_env(text: str) -> EnvSetupOp:
    raw = _first_json(text, dict)
    base = default_env()
    lighting = base.lighting
    camera = base.camera
    raw_light = raw.get("lighting")
    if raw_light is not None:
        if not isinstance(raw_light, dict) or "intensity" not in raw_light:
            raise SchemaViolation("'lighting' must be {\"intensity\": f} or null", path="$.lighting")
        value = raw_light["intensity"]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaViolation("'intensity' must be a number", path="$.lighting")
        lighting = LightingSpec(intensity=quantize(float(value)))
    raw_cam = raw.get("camera")
    if raw_cam is not None:
        if not isinstance(raw_cam, dict):
            raise SchemaViolation("'camera' must be an object or null", path="$.camera")
        from .scene import camera_from_dict

        camera = camera_from_dict(raw_cam, path="$.camera")
    return EnvSetupOp(lighting=lighting, camera=camera)


# ---- mention resolution ---------------------------------------------------


def resolve_mentions(
    description: SceneDescription, catalog: Catalog
) -> list[ObjectModel]:
    resolved = []
    for spec in description.object_specs:
        model = catalog.resolve(spec.mention)
        if model is None:
            raise UnresolvableMention(
                f"no catalog object matches mention {spec.mention!r}"
            )
        resolved.append(model)
    return resolved


def _env_from_description(description: SceneDescription) -> EnvSetupOp:
    base = default_env()
    lighting = description.lighting or base.lighting
    camera = description.camera or base.camera
    return EnvSetupOp(lighting=lighting, camera=camera)


# ---- generation -----------------------------------------------------------


def _fill_poses(
    ops: list[ObjectAddOp], catalog: Catalog, rng: random.Random
) -> list[ObjectAddOp]:
    placed: list[ObjectAddOp] = []
    for op in ops:
        model = catalog.get(op.model_id)
        assert model is not None
        pose = op.pose if op.pose is not None else sample_pose(rng, placed, model, catalog)
        placed.append(ObjectAddOp(model_id=op.model_id, pose=pose))
    return placed


def fallback_generate(
    description: SceneDescription | str,
    catalog: Catalog,
    seed: int,
    scene_id: str | None = None,
) -> SceneConfig:
    """Compile a description to a valid scene without any provider."""
    if isinstance(description, str):
        description = parse_description(description)
    rng = random.Random(description_seed(seed))
    mentioned = resolve_mentions(description, catalog)
    ops = [ObjectAddOp(model_id=m.id, pose=None) for m in mentioned]
    pool_catalog = catalog.without([m.id for m in mentioned])
    pool = list(pool_catalog.models)
    for _ in range(description.object_count - len(ops)):
        if not pool:
            pool = list(catalog.models)
        model = pool.pop(rng.randrange(len(pool)))
        ops.append(ObjectAddOp(model_id=model.id, pose=None))
    filled = _fill_poses(ops, catalog, rng)
    config = SceneConfig(
        scene_id=scene_id or f"scene-{seed & 0xFFFFFFFF:08x}",
        adds=tuple(filled),
        env=_env_from_description(description),
        seed=seed,
        provenance=Provenance.FALLBACK,
    )
    violations = validate_config(config, catalog)
    if violations:
        raise ValidationFailed(
            "fallback generation produced an invalid scene: "
            + "; ".join(str(v) for v in violations[:3])
        )
    return config


def generate_scene(
    description: SceneDescription | str,
    provider,
    catalog: Catalog,
    seed: int,
    scene_id: str | None = None,
) -> SceneConfig:
    """Compile a description to a valid scene via a chat provider.

    The object reply is re-requested up to 3 times with the parse error
    appended; after pose filling, any objects whose LLM-specified poses
    fail validation are re-sampled once before raising ValidationFailed.
    """
    from .providers import ChatRequest

    if isinstance(description, str):
        description = parse_description(description)
    rng = random.Random(description_seed(seed))
    bundle = build_object_prompt(description, catalog)
    user_text = bundle.user_text
    ops: list[ObjectAddOp] | None = None
    last_error: Exception | None = None
    for _ in range(MAX_PROMPT_ATTEMPTS):
        reply = provider.chat(
            ChatRequest(
                system=bundle.system_text,
                few_shot=bundle.few_shot,
                user=user_text,
            )
        )
        try:
            ops = parse_llm_ops(reply, catalog, description.object_count)
            break
        except (NoJsonFound, SchemaViolation, UnknownModel, CountMismatch) as exc:
            last_error = exc
            user_text = (
                bundle.user_text
                + f"\n\nYour previous reply was rejected: {exc}. Try again."
            )
    if ops is None:
        raise ValidationFailed(f"provider never produced usable ops: {last_error}")

    mentioned_ids = set()
    for spec in description.object_specs:
        model = catalog.resolve(spec.mention)
        if model is not None:
            mentioned_ids.add(model.id)
    present = {op.model_id for op in ops}
    missing = mentioned_ids - present
    if missing:
        raise ValidationFailed(
            f"provider scene omits described objects: {sorted(missing)}"
        )

    env_bundle = build_env_prompt(description)
    env = _env_from_description(description)
    if description.lighting is None and description.camera is None:
        env_text = env_bundle.user_text
        for _ in range(MAX_PROMPT_ATTEMPTS):
            reply = provider.chat(
                ChatRequest(
                    system=env_bundle.system_text,
                    few_shot=env_bundle.few_shot,
                    user=env_text,
                )
            )
            try:
                env = parse_llm_env(reply)
                break
            except (NoJsonFound, SchemaViolation) as exc:
                env_text = (
                    env_bundle.user_text
                    + f"\n\nYour previous reply was rejected: {exc}. Try again."
                )

    filled = _fill_poses(ops, catalog, rng)
    config = SceneConfig(
        scene_id=scene_id or f"scene-{seed & 0xFFFFFFFF:08x}",
        adds=tuple(filled),
        env=env,
        seed=seed,
        provenance=Provenance.LLM,
    )
    violations = validate_config(config, catalog)
    if violations:
        config = _repair(config, violations, catalog, rng)
    return config


def _repair(
    config: SceneConfig,
    violations: list,
    catalog: Catalog,
    rng: random.Random,
) -> SceneConfig:
    """One repair pass: re-sample offending poses, reset a broken env."""
    bad_indices = set()
    bad_env = False
    for v in violations:
        if v.kind in ("bad_yaw", "out_of_range", "overlap"):
            bad_indices.update(i for i in v.subject if isinstance(i, int))
        elif v.kind in ("bad_lighting", "bad_camera"):
            bad_env = True
        else:
            raise ValidationFailed(f"unrepairable scene: {v}")
    adds = list(config.adds)
    placed = [op for i, op in enumerate(adds) if i not in bad_indices]
    for i in sorted(bad_indices):
        model = catalog.get(adds[i].model_id)
        pose = sample_pose(rng, placed, model, catalog)
        adds[i] = ObjectAddOp(model_id=adds[i].model_id, pose=pose)
        placed.append(adds[i])
    env = default_env() if bad_env else config.env
    repaired = replace(config, adds=tuple(adds), env=env)
    remaining = validate_config(repaired, catalog)
    if remaining:
        raise ValidationFailed(
            "scene repair failed: " + "; ".join(str(v) for v in remaining[:3])
        )
    return repaired
