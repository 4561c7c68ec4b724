import dataclasses
import json
import logging
from typing import Any, Optional

from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions


class JSONReport:
    """
    Envelope of every JSON document the CLI emits: report kind, format version and payload.

    Attributes:
        kind (str): Report kind, e.g. "metrics", "macs", "bench", "prune", "ablation", "selftest".
        version (str): Comparability version of the tool that wrote the report.
        payload (Any): Report body.
    """
    kind: str
    version: str
    payload: Any

    _KIND_KEY = "report"
    _COMPARABILITY_VERSION_KEY = "comparability_version"
    _PAYLOAD_KEY = "payload"

    def __init__(self, json_bytes: bytes):
        """
        Decodes a report produced by `encode_report`.

        Raises:
            ValueError: If the bytes are not a JSON report envelope.
        """
        try:
            document = json.loads(json_bytes.decode('utf-8'))

            self.kind = document[self._KIND_KEY]
            self.version = document[self._COMPARABILITY_VERSION_KEY]
            self.payload = document[self._PAYLOAD_KEY]
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
            logging.error(f"Decode json report error: {e}")
            raise ValueError(f"Not a JSON report: {e}")

    @staticmethod
    def encode_report(kind: str, payload: Any) -> bytes:
        report = {
            JSONReport._KIND_KEY: kind,
            JSONReport._COMPARABILITY_VERSION_KEY: DefaultValuesAndOptions.get_util_comparability_version(),
            JSONReport._PAYLOAD_KEY: payload,
        }

        return json.dumps(report, indent=2, sort_keys=True, default=_to_jsonable).encode('utf-8')

    @staticmethod
    def emit(kind: str, payload: Any, out_path: Optional[str] = None) -> bytes:
        """
        Writes the encoded report to `out_path`, or prints it to stdout when no path is given.
        """
        data = JSONReport.encode_report(kind, payload)
        if out_path is None:
            print(data.decode('utf-8'))
        else:
            with open(out_path, 'wb') as file:
                file.write(data)
            logging.info(f'{kind} report written to "{out_path}"')

        return data


def _to_jsonable(value: Any):
    if hasattr(value, 'to_dict'):
        return value.to_dict()
    if hasattr(value, 'tolist'):
        return value.tolist()
    if dataclasses.is_dataclass(value):
        return dataclasses.asdict(value)

    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
