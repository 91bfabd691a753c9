import json
import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from driftguard.models import ExperimentConfig


def main() -> None:
    schema_path = REPO_ROOT / "configs" / "experiment.schema.json"
    schema_path.parent.mkdir(parents=True, exist_ok=True)

    schema = ExperimentConfig.model_json_schema(by_alias=True)
    with schema_path.open("w", encoding="utf-8") as handle:
        json.dump(schema, handle, indent=2, sort_keys=True)
        handle.write("\n")


if __name__ == "__main__":
    main()
