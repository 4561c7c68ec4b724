from typing import List, Any


class OptionsFormatter:
    option_descr: str
    option_value: Any

    def __init__(self, option_list: List):
        self.option_descr = option_list[0]
        self.option_value = option_list[1]


class OptionsData:
    """
    A named preset group: the default choice plus every selectable option.

    Attributes:
        default_descr (str): Human-readable description of the default option.
        default_value (Any): Value of the default option.
        options (List[OptionsFormatter]): All options, default included.
    """
    default_descr: str
    default_value: Any
    options: List[OptionsFormatter]

    def __init__(self, default_value_list: List, options: List[List]):
        self.default_descr = default_value_list[0]
        self.default_value = default_value_list[1]

        self.options = [OptionsFormatter(option) for option in options]

    def get_values(self) -> List[Any]:
        return [option.option_value for option in self.options]

    def get_value_by_key(self, key: str) -> Any:
        """
        Looks up an option whose value (or value's first element for tuple presets) equals the key.

        Raises:
            ValueError: If no option matches.
        """
        for option in self.options:
            value = option.option_value
            option_key = value[0] if isinstance(value, tuple) else value
            if option_key == key:
                return value

        valid = [str(v[0] if isinstance(v, tuple) else v) for v in self.get_values()]
        raise ValueError(f'Unknown option "{key}", valid options: {", ".join(valid)}')

    def get_help_str(self) -> str:
        return '; '.join(option.option_descr for option in self.options) + f' (default={self.default_descr})'
