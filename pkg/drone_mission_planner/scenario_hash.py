"""
MD5 fingerprints of scenario files.

The fingerprint is embedded in result.json so `validate` can tell whether an
output directory still belongs to a scenario, and a copy is kept next to the
outputs to spot reruns on an edited scenario.
"""

import hashlib
from pathlib import Path
from typing import Optional


def calculate_file_hash(file_path: Path) -> Optional[str]:
    """
    Calculate MD5 hash of a file.

    Args:
        file_path: Path to the file

    Returns:
        MD5 hex digest, or None if the file does not exist or cannot be read
    """
    file_path = Path(file_path)
    if not file_path.exists():
        return None
    try:
        hash_md5 = hashlib.md5()
        with open(file_path, "rb") as f:
            for chunk in iter(lambda: f.read(4096), b""):
                hash_md5.update(chunk)
        return hash_md5.hexdigest()
    except OSError:
        return None


class ScenarioHashCache:
    """Stores the fingerprint of the scenario an output directory was produced from."""

    def __init__(self, out_dir: Path) -> None:
        self.out_dir = Path(out_dir)
        self.hash_file = self.out_dir / "scenario.md5"

    def cached_hash(self) -> Optional[str]:
        if not self.hash_file.exists():
            return None
        try:
            return self.hash_file.read_text(encoding="utf-8").strip() or None
        except OSError:
            return None

    def save(self, hash_value: str) -> bool:
        """
        Save a scenario hash.

        Returns:
            True if successful, False otherwise
        """
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.hash_file.write_text(hash_value, encoding="utf-8")
            return True
        except OSError:
            return False

    def is_unchanged(self, scenario_path: Path) -> bool:
        """True when the scenario file matches the hash saved by the previous run."""
        current = calculate_file_hash(scenario_path)
        cached = self.cached_hash()
        if current is None or cached is None:
            return False
        return current == cached
