from .group import GROUPS, GroupParams, decode, encode, exp_shuffle, get_group, hash_to_group, is_qr, powmod
from .protocol import PairRun, PartySecrets, Transcript, UidMap, pad_with_dummies, run_pair, run_psu, transcript_capture

__all__ = [
    "GROUPS",
    "GroupParams",
    "PairRun",
    "PartySecrets",
    "Transcript",
    "UidMap",
    "decode",
    "encode",
    "exp_shuffle",
    "get_group",
    "hash_to_group",
    "is_qr",
    "pad_with_dummies",
    "powmod",
    "run_pair",
    "run_psu",
    "transcript_capture",
]
