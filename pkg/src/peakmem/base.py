"""Estimator parameter plumbing (get_params/set_params convention)."""

from __future__ import annotations

import inspect


class ParamMixin:
    """Expose constructor keywords as inspectable, settable parameters.

    Subclasses keep the usual convention: __init__ stores each keyword
    verbatim on self and does no work, so parameters can be read back,
    cloned, and grid-searched.
    """

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        names = [p.name for p in sig.parameters.values()
                 if p.name != "self"
                 and p.kind in (p.POSITIONAL_OR_KEYWORD, p.KEYWORD_ONLY)]
        return sorted(names)

    def get_params(self, deep: bool = True) -> dict:
        del deep  # no nested estimators
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}; "
                    f"valid parameters: {sorted(valid)}")
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"
