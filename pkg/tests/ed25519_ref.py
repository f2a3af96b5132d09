"""Minimal pure-Python Ed25519, used only as a cross-implementation oracle.

Textbook twisted-Edwards arithmetic (no constant-time tricks, test use
only). Ed25519 is deterministic, so an independent implementation must
produce byte-identical public keys and signatures for the same seed and
message; the signing tests check the production primitive against this
one before trusting it.
"""

import hashlib

b = 256
q = 2**255 - 19
l = 2**252 + 27742317777372353535851937790883648493


def _H(m: bytes) -> bytes:
    return hashlib.sha512(m).digest()


def _inv(x: int) -> int:
    return pow(x, q - 2, q)


d = -121665 * _inv(121666) % q
I = pow(2, (q - 1) // 4, q)


def _xrecover(y: int) -> int:
    xx = (y * y - 1) * _inv(d * y * y + 1)
    x = pow(xx, (q + 3) // 8, q)
    if (x * x - xx) % q != 0:
        x = (x * I) % q
    if x % 2 != 0:
        x = q - x
    return x


By = 4 * _inv(5) % q
Bx = _xrecover(By)
B = (Bx, By)


def _edwards_add(P, Q):
    x1, y1 = P
    x2, y2 = Q
    x3 = (x1 * y2 + x2 * y1) * _inv(1 + d * x1 * x2 * y1 * y2)
    y3 = (y1 * y2 + x1 * x2) * _inv(1 - d * x1 * x2 * y1 * y2)
    return (x3 % q, y3 % q)


def _scalarmult(P, e: int):
    if e == 0:
        return (0, 1)
    Q = _scalarmult(P, e // 2)
    Q = _edwards_add(Q, Q)
    if e & 1:
        Q = _edwards_add(Q, P)
    return Q


def _encodepoint(P) -> bytes:
    x, y = P
    return (y | ((x & 1) << 255)).to_bytes(32, "little")


def _isoncurve(P) -> bool:
    x, y = P
    return (-x * x + y * y - 1 - d * x * x * y * y) % q == 0


def _decodepoint(s: bytes):
    v = int.from_bytes(s, "little")
    y = v & ((1 << 255) - 1)
    x = _xrecover(y)
    if x & 1 != (v >> 255) & 1:
        x = q - x
    P = (x, y)
    if not _isoncurve(P):
        raise ValueError("point not on curve")
    return P


def _bit(h: bytes, i: int) -> int:
    return (h[i // 8] >> (i % 8)) & 1


def _clamped_scalar(h: bytes) -> int:
    return 2 ** (b - 2) + sum(2**i * _bit(h, i) for i in range(3, b - 2))


def _Hint(m: bytes) -> int:
    return int.from_bytes(_H(m), "little")


def publickey(seed: bytes) -> bytes:
    a = _clamped_scalar(_H(seed))
    return _encodepoint(_scalarmult(B, a))


def signature(message: bytes, seed: bytes, pk: bytes) -> bytes:
    h = _H(seed)
    a = _clamped_scalar(h)
    r = _Hint(h[32:64] + message)
    R = _scalarmult(B, r)
    S = (r + _Hint(_encodepoint(R) + pk + message) * a) % l
    return _encodepoint(R) + S.to_bytes(32, "little")


def checkvalid(sig: bytes, message: bytes, pk: bytes) -> bool:
    if len(sig) != 64 or len(pk) != 32:
        return False
    try:
        R = _decodepoint(sig[:32])
        A = _decodepoint(pk)
    except ValueError:
        return False
    S = int.from_bytes(sig[32:64], "little")
    h = _Hint(sig[:32] + pk + message)
    return _scalarmult(B, S) == _edwards_add(R, _scalarmult(A, h))
