import json
from pathlib import Path

import jsonschema
import pytest
from referencing import Registry, Resource

SCHEMA_DIR = Path(__file__).resolve().parents[1] / "src" / "cacscore" / "schemas"


def _registry() -> Registry:
    resources = []
    for p in SCHEMA_DIR.glob("*.json"):
        resources.append((p.name, Resource.from_contents(json.loads(p.read_text()))))
    return Registry().with_resources(resources)


@pytest.fixture(scope="session")
def validate_json():
    registry = _registry()

    def check(instance: dict, schema_name: str) -> None:
        schema = json.loads((SCHEMA_DIR / schema_name).read_text())
        jsonschema.Draft202012Validator(schema, registry=registry).validate(instance)

    return check
