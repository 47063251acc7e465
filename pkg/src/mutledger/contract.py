"""Application contracts: named operations that turn arguments into object writes.

A handler is called as ``handler(reader, principal, args)`` and returns a
mapping ``object_key -> full post-state`` (``None`` deletes the object).
``reader.get(key)`` returns a private copy of the object as currently seen,
or ``None``. Handlers validate against what the reader shows and raise
:class:`~mutledger.errors.ValidationFailed` subclasses to reject.
"""
from __future__ import annotations

from typing import Callable, Mapping, Optional, Protocol

from .errors import AlreadyExists, AssetNotFound, ValidationFailed
from .model import Principal, Role


class Reader(Protocol):
    def get(self, key: str) -> Optional[dict]: ...


Handler = Callable[[Reader, Principal, Mapping], Mapping[str, Optional[dict]]]


class Contract:
    """Base contract: any non-observer may issue any registered operation."""

    def __init__(self):
        self.handlers: dict = {}

    def register(self, op_name: str, handler: Handler) -> None:
        self.handlers[op_name] = handler

    def authorize(self, p: Principal, op_name: str) -> bool:
        return p.role is not Role.OBSERVER

    def handler(self, op_name: str) -> Handler:
        try:
            return self.handlers[op_name]
        except KeyError:
            raise ValidationFailed(f"unknown operation {op_name!r}") from None


def asset_key(asset_id) -> str:
    return f"asset:{asset_id}"


class AssetContract(Contract):
    """Generic keyed assets: ``create``, ``update``, ``delete`` and raw ``put``.

    ``put`` writes ``args["writes"]`` verbatim and exists for workloads that
    need arbitrary multi-object transactions.
    """

    def __init__(self):
        super().__init__()
        self.register("create", self.create)
        self.register("update", self.update)
        self.register("delete", self.delete)
        self.register("put", self.put)

    @staticmethod
    def create(reader: Reader, p: Principal, args: Mapping) -> dict:
        key = asset_key(args["id"])
        if reader.get(key) is not None:
            raise AlreadyExists(f"{key} already exists")
        return {key: dict(args)}

    @staticmethod
    def update(reader: Reader, p: Principal, args: Mapping) -> dict:
        key = asset_key(args["id"])
        current = reader.get(key)
        if current is None:
            raise AssetNotFound(key)
        current.update(args)
        return {key: current}

    @staticmethod
    def delete(reader: Reader, p: Principal, args: Mapping) -> dict:
        key = asset_key(args["id"])
        if reader.get(key) is None:
            raise AssetNotFound(key)
        return {key: None}

    @staticmethod
    def put(reader: Reader, p: Principal, args: Mapping) -> dict:
        writes = dict(args["writes"])
        for key in writes:
            reader.get(key)
        return writes
