from fractions import Fraction
from typing import Annotated, Any

import numpy as np
from pydantic import BeforeValidator, PlainSerializer


def validated_float_array(v: Any) -> np.ndarray:
    if isinstance(v, np.ndarray) and v.dtype == np.float64:
        return v

    return np.asarray(v, dtype=np.float64)


def validated_int_array(v: Any) -> np.ndarray:
    if isinstance(v, np.ndarray) and v.dtype == np.int64:
        return v

    return np.asarray(v, dtype=np.int64)


Float64Array = Annotated[
    np.ndarray,
    BeforeValidator(validated_float_array),
    PlainSerializer(lambda v: v.tolist(), return_type=list),
]

Int64Array = Annotated[
    np.ndarray,
    BeforeValidator(validated_int_array),
    PlainSerializer(lambda v: v.tolist(), return_type=list),
]


def validated_fraction(v: Any) -> Fraction:
    if isinstance(v, Fraction):
        return v

    # Floats go through their shortest repr so 0.55 reads back as 11/20.
    return Fraction(repr(v)) if isinstance(v, float) else Fraction(v)


Rational = Annotated[
    Fraction,
    BeforeValidator(validated_fraction),
    PlainSerializer(float, return_type=float),
]
