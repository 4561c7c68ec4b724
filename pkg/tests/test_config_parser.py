import json

import pytest

from onestep_sr.models.backbone_config import BackboneConfig
from onestep_sr.start_modes.config_parser import RunConfigParser, optional_config


def test_empty_document_gives_defaults():
    settings = RunConfigParser.from_dict({})

    assert settings.backbone == BackboneConfig()
    assert settings.train.sched.tau_g == 900
    assert RunConfigParser.to_dict(settings, only_non_default=True) == {}


def test_prompt_and_scheduler_follow_the_backbone():
    settings = RunConfigParser.from_dict({'backbone': {'text_tokens': 6, 'text_width': 8, 'sched_horizon': 500},
                                          'scheduler': {'tau_g': 400, 't_min': 10, 't_max': 300}})

    assert (settings.prompt.text_tokens, settings.prompt.text_width) == (6, 8)
    assert settings.train.sched.sched_horizon == 500


def test_unknown_keys_are_reported_together():
    with pytest.raises(ValueError) as error:
        RunConfigParser.from_dict({'colour': 1, 'train': {'stepz': 3}, 'optimizer': {}})

    message = str(error.value)
    assert 'colour' in message and 'train.stepz' in message and 'optimizer' in message


def test_wrongly_typed_values_are_rejected():
    with pytest.raises(ValueError) as error:
        RunConfigParser.from_dict({'seed': '7', 'train': {'steps': 1.5, 'detach_align': 1},
                                   'degradation': {'blur_sigma_range': [0.5]}})

    message = str(error.value)
    assert 'seed' in message and 'train.steps' in message and 'train.detach_align' in message
    assert 'degradation.blur_sigma_range' in message


def test_nullable_and_float_fields_accept_their_types():
    settings = RunConfigParser.from_dict({'prune': {'budget_params': None, 'keep_ratio': 1}})

    assert settings.prune.budget_params is None
    assert settings.prune.keep_ratio == 1


def test_semantic_errors_surface_from_the_configs():
    with pytest.raises(ValueError):
        RunConfigParser.from_dict({'train': {'crop': 48}})
    with pytest.raises(ValueError):
        RunConfigParser.from_dict({'prune': {'strategy': 'largest'}})


def test_save_writes_only_non_defaults_and_loads_back(tmp_path):
    settings = RunConfigParser.from_dict({'seed': 11, 'train': {'steps': 7, 'objective': 'no_align'},
                                          'degradation': {'blur_sigma_range': [0.1, 0.2]}})
    path = str(tmp_path / 'run')

    RunConfigParser.save(path, settings)
    with open(path + '.json', encoding='utf-8') as file:
        document = json.load(file)
    loaded = RunConfigParser.load(path + '.json')

    assert document == {'seed': 11, 'train': {'steps': 7, 'objective': 'no_align'},
                        'degradation': {'blur_sigma_range': [0.1, 0.2]}}
    assert loaded.seed == 11 and loaded.train.steps == 7
    assert loaded.degradation.blur_sigma_range == (0.1, 0.2)


def test_missing_or_broken_files(tmp_path):
    broken = tmp_path / 'broken.json'
    broken.write_text('{"seed": ', encoding='utf-8')

    with pytest.raises(ValueError):
        RunConfigParser.load(str(tmp_path / 'absent.json'))
    with pytest.raises(ValueError):
        RunConfigParser.load(str(broken))
    with pytest.raises(ValueError):
        RunConfigParser.from_dict([1, 2])


def test_optional_config_without_a_file():
    assert optional_config(None).seed == RunConfigParser.from_dict({}).seed
