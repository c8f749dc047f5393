import os
import sys

import yaml

from .errors import AdvselError, ExprError, ValidationFailed
from .model import check_problem, load_config

REQUIRED_INDEX_FIELDS = ["version", "suites"]
REQUIRED_SUITE_FIELDS = ["description", "problems"]


def validate_problem_file(file_path, env=None):
    """
    Load and validate one problem config. Returns (ok, message); never raises.
    Warnings are appended to the message of a valid problem.
    """
    try:
        config = load_config(file_path, env=env)
        spec, findings = check_problem(config)
        if spec is None:
            return False, "; ".join(f"{v.kind}: {v.message}" for v in findings)
        msg = f"Valid ({len(spec.equilibria)} equilibria, support [{spec.support[0]:.6g}, {spec.support[1]:.6g}])"
        if findings:
            msg += "; warnings: " + "; ".join(v.kind for v in findings)
        return True, msg
    except ValidationFailed as e:
        return False, "; ".join(f"{v.kind}: {v.message}" for v in e.violations)
    except ExprError as e:
        return False, f"Expression error: {e}"
    except (OSError, yaml.YAMLError, ValueError) as e:
        return False, str(e)
    except AdvselError as e:
        return False, str(e)


def validate_index(index_path):
    """Check problems/index.yaml: suites exist and every listed file is present."""
    try:
        with open(index_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        return False, str(e)
    if not isinstance(data, dict):
        return False, "Invalid index format: expected a dictionary"
    missing = [k for k in REQUIRED_INDEX_FIELDS if k not in data]
    if missing:
        return False, f"Missing index fields: {', '.join(missing)}"
    base = os.path.dirname(index_path)
    for name, suite in (data.get("suites") or {}).items():
        if not isinstance(suite, dict):
            return False, f"Suite {name}: expected a dictionary"
        missing = [k for k in REQUIRED_SUITE_FIELDS if k not in suite]
        if missing:
            return False, f"Suite {name}: missing fields: {', '.join(missing)}"
        for rel in suite["problems"]:
            if not os.path.exists(os.path.join(base, rel)):
                return False, f"Suite {name}: problem file not found: {rel}"
    return True, "Valid"


def is_template(file_path):
    """True for sweep templates: expression strings with `{name}` placeholders."""
    try:
        config = load_config(file_path)
    except (AdvselError, OSError, yaml.YAMLError, ValueError):
        return False
    return any("{" in text for text in (config.f, config.r, config.n0))


def validate_all(problems_dir):
    print(f"Validating problems in {problems_dir}...")
    success = True
    for root, _dirs, files in os.walk(problems_dir):
        for file in sorted(files):
            if not file.endswith((".yaml", ".yml", ".json")):
                continue
            path = os.path.join(root, file)
            if file == "index.yaml":
                is_valid, msg = validate_index(path)
            elif is_template(path):
                print(f"⏭️  {file}: sweep template, checked per sweep point")
                continue
            else:
                is_valid, msg = validate_problem_file(path)
            if is_valid:
                print(f"✅ {file}: {msg}")
            else:
                print(f"❌ {file}: {msg}")
                success = False
    return success


if __name__ == "__main__":
    if hasattr(sys.stdout, "reconfigure"):
        sys.stdout.reconfigure(encoding="utf-8", errors="replace")
    if hasattr(sys.stderr, "reconfigure"):
        sys.stderr.reconfigure(encoding="utf-8", errors="replace")

    base_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    if not validate_all(os.path.join(base_dir, "problems")):
        sys.exit(1)
    print("All problems validated successfully.")
