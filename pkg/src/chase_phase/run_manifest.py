from pathlib import Path
from typing import Any, Optional, Union

import yaml

from src.chase_phase.analysis.rates import RateProfile
from src.chase_phase.common import fingerprint, to_jsonable, version_stamp


class RunManifest:
    """
    The resolved configuration of one CLI run: what was computed, from which profile, with
    which parameters and master seed.

    Written next to result files so any run can be repeated exactly; no timestamps are stored
    so repeated runs produce identical manifests.
    """

    def __init__(
        self,
        command: str,
        params: dict[str, Any],
        profile_path: Optional[str] = None,
        profile_fingerprint: Optional[str] = None,
        version: Optional[str] = None,
    ):
        """
        Initialize a RunManifest.

        Args:
            command: Subcommand name, e.g. "simulate tree"
            params: Resolved numeric parameters (d, depth_cap, runs, seed, ...)
            profile_path: Profile file reference as given on the command line
            profile_fingerprint: Fingerprint of the canonical profile
            version: Version stamp; defaults to the running package
        """
        self._command = command
        self._params = dict(params)
        self._profile_path = profile_path
        self._profile_fingerprint = profile_fingerprint
        self._version = version or version_stamp()

    @classmethod
    def for_run(
        cls, command: str, params: dict[str, Any], profile: Optional[RateProfile], profile_path: Optional[str]
    ) -> "RunManifest":
        return cls(
            command,
            {k: v for k, v in params.items() if v is not None},
            profile_path=profile_path,
            profile_fingerprint=profile.fingerprint() if profile else None,
        )

    @classmethod
    def from_path(cls, path: Union[str, Path]) -> "RunManifest":
        """
        Read a manifest written by ``to_yaml``.

        Raises:
            ValueError: If the file is not a manifest
        """
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
        if not isinstance(data, dict) or "command" not in data or "params" not in data:
            raise ValueError(f"Invalid run manifest: {path}")
        profile = data.get("profile") or {}
        return cls(
            data["command"],
            data["params"] or {},
            profile_path=profile.get("path"),
            profile_fingerprint=profile.get("fingerprint"),
            version=data.get("version"),
        )

    @property
    def command(self) -> str:
        return self._command

    @property
    def params(self) -> dict[str, Any]:
        return dict(self._params)

    @property
    def seed(self) -> Optional[int]:
        return self._params.get("seed")

    @property
    def profile_path(self) -> Optional[str]:
        return self._profile_path

    @property
    def profile_fingerprint(self) -> Optional[str]:
        return self._profile_fingerprint

    @property
    def version(self) -> str:
        return self._version

    @property
    def fingerprint(self) -> str:
        """Identity of the run configuration; the version stamp is not part of it."""
        return fingerprint({"command": self._command, "params": self._params, "profile": self._profile_fingerprint})

    def to_dict(self) -> dict:
        return {
            "command": self._command,
            "params": to_jsonable(self._params),
            "profile": {"path": self._profile_path, "fingerprint": self._profile_fingerprint},
            "version": self._version,
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def manifest_path(self, output: Union[str, Path]) -> Path:
        """Manifest file that accompanies a result file, e.g. runs.csv -> runs.manifest.yaml."""
        output = Path(output)
        return output.with_name(f"{output.stem}.manifest.yaml")

    def __repr__(self) -> str:
        return f"RunManifest('{self._command}', {self.fingerprint})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, RunManifest):
            return False
        return self.fingerprint == other.fingerprint

    def __hash__(self) -> int:
        return hash(self.fingerprint)
