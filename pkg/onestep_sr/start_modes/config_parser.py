import dataclasses
import json
import logging
import os
from typing import Any, Dict, List, Optional, Tuple, Union, get_args, get_origin, get_type_hints

from onestep_sr.logging_config import Logger
from onestep_sr.models.backbone_config import BackboneConfig, LoraConfig
from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions
from onestep_sr.models.run_configs import (DegradationConfig, LossWeights, PromptConfig, PruneConfig, SchedulerConfig,
                                           TrainConfig)
from onestep_sr.settings import Settings


class RunConfigParser:
    """
    JSON run configuration: the sections below plus top-level seed, dtype, workers and is_error_log.
    Every key is optional; unknown keys and wrongly typed values are reported together in one ValueError.
    """
    __SECTIONS = {
        'backbone': BackboneConfig,
        'lora': LoraConfig,
        'scheduler': SchedulerConfig,
        'weights': LossWeights,
        'degradation': DegradationConfig,
        'prompt': PromptConfig,
        'train': TrainConfig,
        'prune': PruneConfig,
    }
    # Nested TrainConfig fields configured through their own sections.
    __TRAIN_NESTED = ('weights', 'sched')

    __SEED = ['seed', DefaultValuesAndOptions.get_default_seed(), int]
    __DTYPE = ['dtype', DefaultValuesAndOptions.get_default_dtype(), str]
    __WORKERS = ['workers', DefaultValuesAndOptions.get_default_workers(), int]
    __IS_ERROR_LOG = ['is_error_log', False, bool]

    __SCALARS = [__SEED, __DTYPE, __WORKERS, __IS_ERROR_LOG]

    @staticmethod
    def load(filename: str) -> Settings:
        """
        Raises:
            ValueError: If the file is missing, is not JSON, or holds invalid keys or values.
        """
        document = RunConfigParser.__read_document(filename)
        settings = RunConfigParser.from_dict(document)
        logging.info(f'Run config loaded from "{filename}"')

        return settings

    @staticmethod
    def from_dict(document: Dict[str, Any]) -> Settings:
        if not isinstance(document, dict):
            raise ValueError("Run config must be a JSON object")

        RunConfigParser.__validate_keys(document)
        RunConfigParser.__validate_values(document)

        if document.get(RunConfigParser.__IS_ERROR_LOG[0], False):
            Logger.init_warning_logger()

        backbone = BackboneConfig(**document.get('backbone', {}))

        prompt_values = dict(document.get('prompt', {}))
        prompt_values.setdefault('text_tokens', backbone.text_tokens)
        prompt_values.setdefault('text_width', backbone.text_width)

        sched_values = dict(document.get('scheduler', {}))
        sched_values.setdefault('sched_horizon', backbone.sched_horizon)

        train = TrainConfig(**document.get('train', {}),
                            weights=LossWeights(**document.get('weights', {})),
                            sched=SchedulerConfig(**sched_values))

        scalars = {key: document.get(key, default) for key, default, _ in RunConfigParser.__SCALARS}

        return Settings(backbone, LoraConfig(**document.get('lora', {})),
                        DegradationConfig(**document.get('degradation', {})), PromptConfig(**prompt_values),
                        train, PruneConfig(**document.get('prune', {})), scalars['seed'], scalars['dtype'],
                        scalars['workers'], scalars['is_error_log'])

    @staticmethod
    def to_dict(settings: Settings, only_non_default: bool = False) -> Dict[str, Any]:
        """
        Serializes the settings into the run-config layout; with only_non_default, keys equal to their
        defaults are left out.
        """
        configs = {
            'backbone': settings.backbone,
            'lora': settings.lora,
            'scheduler': settings.train.sched,
            'weights': settings.train.weights,
            'degradation': settings.degradation,
            'prompt': settings.prompt,
            'train': settings.train,
            'prune': settings.prune,
        }

        document: Dict[str, Any] = {}
        for section, value in configs.items():
            values = RunConfigParser.__section_values(section, value)
            if only_non_default:
                defaults = RunConfigParser.__section_values(section, RunConfigParser.__SECTIONS[section]())
                values = {key: item for key, item in values.items() if defaults.get(key) != item}
            if values or not only_non_default:
                document[section] = values

        for key, default, _ in RunConfigParser.__SCALARS:
            value = getattr(settings, key)
            if not only_non_default or value != default:
                document[key] = value

        return document

    @staticmethod
    def save(filename: str, settings: Settings):
        if not filename.endswith('.json'):
            filename += '.json'

        with open(filename, 'w', encoding='utf-8') as file:
            json.dump(RunConfigParser.to_dict(settings, only_non_default=True), file, indent=2, sort_keys=True)

        logging.info(f'Config file successfully saved in "{filename}"')

    @staticmethod
    def __section_values(section: str, value) -> Dict[str, Any]:
        values = {}
        for item in dataclasses.fields(value):
            if section == 'train' and item.name in RunConfigParser.__TRAIN_NESTED:
                continue
            field_value = getattr(value, item.name)
            values[item.name] = list(field_value) if isinstance(field_value, (tuple, list)) else field_value

        return values

    @staticmethod
    def __section_fields(section: str) -> Dict[str, Any]:
        hints = get_type_hints(RunConfigParser.__SECTIONS[section])
        names = [item.name for item in dataclasses.fields(RunConfigParser.__SECTIONS[section])]

        return {name: hints[name] for name in names
                if not (section == 'train' and name in RunConfigParser.__TRAIN_NESTED)}

    @staticmethod
    def __validate_keys(document: Dict[str, Any]):
        valid_top = list(RunConfigParser.__SECTIONS) + [key for key, _, _ in RunConfigParser.__SCALARS]
        bad_keys = [key for key in document if key not in valid_top]

        for section, values in document.items():
            if section not in RunConfigParser.__SECTIONS:
                continue
            if not isinstance(values, dict):
                bad_keys.append(f'{section} (must be an object)')
                continue
            valid = RunConfigParser.__section_fields(section)
            bad_keys.extend(f'{section}.{key}' for key in values if key not in valid)

        if bad_keys:
            raise ValueError(f"Invalid keys in config file: {', '.join(bad_keys)}{os.linesep}"
                             f"List of valid sections and keys: {os.linesep}{os.linesep.join(valid_top)}")

    @staticmethod
    def __validate_values(document: Dict[str, Any]):
        incorrect_values = []

        for key, _, need_type in RunConfigParser.__SCALARS:
            if key in document and not RunConfigParser.__matches(document[key], need_type):
                incorrect_values.append(RunConfigParser.__format_invalid_value_type_error_str(key, document[key],
                                                                                              need_type))

        for section in RunConfigParser.__SECTIONS:
            fields = RunConfigParser.__section_fields(section)
            for key, value in document.get(section, {}).items():
                if not RunConfigParser.__matches(value, fields[key]):
                    incorrect_values.append(
                        RunConfigParser.__format_invalid_value_type_error_str(f'{section}.{key}', value, fields[key]))

        if incorrect_values:
            raise ValueError(
                f"Next keys in config file has invalid type of value:{os.linesep}{os.linesep.join(incorrect_values)}"
            )

    @staticmethod
    def __matches(value: Any, need_type: Any) -> bool:
        origin = get_origin(need_type)

        if origin is Union:
            return any(RunConfigParser.__matches(value, option) for option in get_args(need_type))
        if need_type is type(None):
            return value is None
        if origin in (tuple, Tuple):
            args = get_args(need_type)
            return (isinstance(value, list) and len(value) == len(args)
                    and all(RunConfigParser.__matches(item, arg) for item, arg in zip(value, args)))
        if origin in (list, List):
            (arg,) = get_args(need_type)
            return isinstance(value, list) and all(RunConfigParser.__matches(item, arg) for item in value)
        if need_type is bool:
            return isinstance(value, bool)
        if need_type is int:
            return isinstance(value, int) and not isinstance(value, bool)
        if need_type is float:
            return isinstance(value, (int, float)) and not isinstance(value, bool)

        return isinstance(value, need_type)

    @staticmethod
    def __format_invalid_value_type_error_str(key: str, value: Any, need_type: Any) -> str:
        type_name = getattr(need_type, '__name__', str(need_type).replace('typing.', ''))

        return f'Value "{value}" of key "{key}" must be {type_name} type'

    @staticmethod
    def __read_document(file_path: str) -> Dict[str, Any]:
        if not os.path.isfile(file_path):
            raise ValueError(f'Config file "{file_path}" not found!')

        try:
            with open(file_path, 'r', encoding='utf-8') as file:
                return json.load(file)
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ValueError(f"Failed to decode config file: {e}")


def optional_config(filename: Optional[str]) -> Settings:
    return RunConfigParser.load(filename) if filename is not None else Settings()
