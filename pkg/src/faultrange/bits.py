"""Bit-exact IEEE-754 single-precision manipulation.

Bit positions use sign-first indexing: position 0 is the sign bit, positions
1-8 are the exponent bits with 1 the most significant (the "MSB"), and
positions 9-31 are the mantissa bits, most significant first. The physical
LSB-0 bit of the stored word is ``31 - position``.

All functions are pure and preserve payloads verbatim (NaNs included); the
only change ever made to a value is the addressed bit.
"""

from typing import Optional, Tuple

import numpy as np

SIGN_BIT = 0
EXPONENT_BITS = range(1, 9)
MANTISSA_BITS = range(9, 32)


def _check_bit(bit: int) -> int:
    if not 0 <= bit <= 31:
        raise ValueError(f"bit position must be in [0, 31], got {bit}")
    return bit


def bit_mask(bit: int) -> np.uint32:
    """Word mask selecting the addressed bit."""
    return np.uint32(1) << np.uint32(31 - _check_bit(bit))


def flip_bit(value, bit: int) -> np.float32:
    """Flip exactly one bit of an FP32 value; all other bits are untouched.

    An involution: flipping the same bit twice restores the input bit-exactly.
    """
    word = np.float32(value).view(np.uint32) ^ bit_mask(bit)
    return word.view(np.float32)


def bit_state(value, bit: int) -> int:
    """Stored state (0 or 1) of the addressed bit."""
    word = np.float32(value).view(np.uint32)
    return int((word >> np.uint32(31 - _check_bit(bit))) & np.uint32(1))


def flip_bit_inplace(tensor: np.ndarray, flat_index: int, bit: int) -> None:
    """Flip one bit of one element of a float32 array, in place and payload-exact."""
    if tensor.dtype != np.float32:
        raise ValueError("bit flips are defined on float32 tensors only")
    view = tensor.reshape(-1).view(np.uint32)
    view[flat_index] ^= bit_mask(bit)


def bit_fractions(values: np.ndarray, bits) -> dict[int, float]:
    """Fraction of elements whose addressed bit is in state 1, per bit position."""
    words = np.ascontiguousarray(values, dtype=np.float32).reshape(-1).view(np.uint32)
    out = {}
    for bit in bits:
        shift = np.uint32(31 - _check_bit(bit))
        out[bit] = float(np.mean((words >> shift) & np.uint32(1)))
    return out


def scan_non_finite(tensor: np.ndarray) -> Optional[Tuple[int, str]]:
    """First non-finite element of a tensor, or None if all elements are finite.

    Returns (flat row-major index, kind) where kind is "inf" or "nan".
    """
    flat = np.ascontiguousarray(tensor).reshape(-1)
    finite = np.isfinite(flat)
    if finite.all():
        return None
    index = int(np.argmin(finite))
    kind = "inf" if np.isinf(flat[index]) else "nan"
    return index, kind
