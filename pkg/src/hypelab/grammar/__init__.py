import importlib.resources

grammar = importlib.resources.files(__name__).joinpath("config.lark").read_text(encoding="utf-8")
