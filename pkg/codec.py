"""
Блочный код без потерь для бинарных векторов решений и нормированная
битовая стоимость B.

Все 2^m блоков длины m упорядочены по числу нулей (внутри одного числа
нулей лексикографически), и блок с рангом r получает r-й кодовый из
последовательности: пустое слово, два однобитных, четыре двухбитных, …
Отсюда длина кодового слова ℓ(r) = floor(log2(r + 1)).

Контейнер: байт 0xC7, m (1 байт), L (4 байта little-endian), затем для
каждого блока 4-битное поле длины и биты кодового слова, всё упаковано
в биты старшим битом вперёд. Биты полей длины в стоимость B не входят.
"""
import logging
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Tuple, Union

import numpy as np
import numpy.typing as npt

import config
from core import ArrayLike, as_decision

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<BBI")
_LENGTH_FIELD_BITS = 4


class CodecError(ValueError):
    """Ошибка кодирования или разбора контейнера"""


@dataclass(frozen=True)
class EncodedPayload:
    """Закодированный вектор решения"""
    data: bytes
    block_size: int
    length: int
    codeword_bits: int

    @property
    def cost(self) -> float:
        return self.codeword_bits / self.length

    def to_bytes(self) -> bytes:
        return self.data

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncodedPayload":
        """Разбор контейнера; число бит кодовых слов считается по полям длины"""
        block_size, length = _parse_header(data)
        words, _ = _split_codewords(_body_bits(data), length // block_size, block_size)
        codeword_bits = sum(size for size, _ in words)
        return cls(data=bytes(data), block_size=block_size, length=length, codeword_bits=codeword_bits)


class BlockCodec:
    def __init__(self, block_size: int = config.BLOCK_SIZE):
        if not 1 <= block_size <= config.MAX_BLOCK_SIZE:
            raise CodecError(
                f"Размер блока должен быть от 1 до {config.MAX_BLOCK_SIZE}, получено {block_size}"
            )
        self.block_size = block_size
        self.num_blocks = 1 << block_size

        values = np.arange(self.num_blocks, dtype=np.int64)
        ones = np.array([bin(v).count("1") for v in values], dtype=np.int64)
        zeros = block_size - ones

        # Первый бит блока старший: порядок чисел совпадает
        # с лексикографическим порядком блоков
        order = np.lexsort((values, zeros))
        self._block_of_rank = order
        self._rank_of_value = np.empty(self.num_blocks, dtype=np.int64)
        self._rank_of_value[order] = values

        self._length_of_rank = np.array(
            [(r + 1).bit_length() - 1 for r in range(self.num_blocks)], dtype=np.int64
        )
        self._length_of_value = self._length_of_rank[self._rank_of_value]
        self._place_values = 1 << np.arange(block_size - 1, -1, -1, dtype=np.int64)

        for table in (self._block_of_rank, self._rank_of_value,
                      self._length_of_rank, self._length_of_value):
            table.setflags(write=False)

        logger.debug(f"Кодек инициализирован: m={block_size}, блоков {self.num_blocks}")

    def _block_value(self, block: ArrayLike) -> int:
        bits = as_decision(block)
        if bits.ndim != 1 or bits.size != self.block_size:
            raise CodecError(f"Ожидался блок длины {self.block_size}, получено {bits.size}")
        return int(bits.astype(np.int64) @ self._place_values)

    def _block_values(self, prediction: ArrayLike) -> npt.NDArray[np.int64]:
        bits = as_decision(prediction)
        if bits.ndim != 1 or bits.size == 0:
            raise CodecError("Вектор решения должен быть одномерным и непустым")
        if bits.size % self.block_size:
            raise CodecError(
                f"Длина вектора {bits.size} не кратна размеру блока {self.block_size}"
            )
        blocks = bits.reshape(-1, self.block_size).astype(np.int64)
        return blocks @ self._place_values

    def rank_of_block(self, block: ArrayLike) -> int:
        """Позиция блока в порядке (число нулей, лексикографический порядок)"""
        return int(self._rank_of_value[self._block_value(block)])

    def block_of_rank(self, rank: int) -> npt.NDArray[np.bool_]:
        self._check_rank(rank)
        value = int(self._block_of_rank[rank])
        return ((value & self._place_values) != 0)

    def codeword_length(self, rank: int) -> int:
        """ℓ(r) = floor(log2(r + 1))"""
        self._check_rank(rank)
        return int(self._length_of_rank[rank])

    def _check_rank(self, rank: int):
        if not 0 <= rank < self.num_blocks:
            raise CodecError(f"Ранг {rank} вне диапазона [0, {self.num_blocks})")

    def bit_cost(self, prediction: ArrayLike) -> float:
        """Нормированная стоимость B: биты кодовых слов на одну метку"""
        values = self._block_values(prediction)
        return float(self._length_of_value[values].sum()) / (values.size * self.block_size)

    def encode(self, prediction: ArrayLike) -> Tuple[EncodedPayload, float]:
        """Кодирование вектора решения в контейнер; возвращает (payload, B)"""
        values = self._block_values(prediction)
        length = values.size * self.block_size
        if length > 0xFFFFFFFF:
            raise CodecError(f"Вектор длины {length} не помещается в заголовок")

        ranks = self._rank_of_value[values]
        lengths = self._length_of_rank[ranks]

        chunks = []
        for rank, size in zip(ranks.tolist(), lengths.tolist()):
            chunks.append(_to_bits(size, _LENGTH_FIELD_BITS))
            # Индекс внутри группы кодовых слов одной длины
            chunks.append(_to_bits(rank + 1 - (1 << size), size))

        body = np.packbits(np.concatenate(chunks)).tobytes()
        header = _HEADER.pack(config.PAYLOAD_MAGIC, self.block_size, length)
        codeword_bits = int(lengths.sum())

        payload = EncodedPayload(
            data=header + body,
            block_size=self.block_size,
            length=length,
            codeword_bits=codeword_bits,
        )
        return payload, codeword_bits / length

    def decode(self, payload: Union[EncodedPayload, bytes]) -> npt.NDArray[np.bool_]:
        """Восстановление вектора решения из контейнера"""
        data = bytes(payload) if isinstance(payload, (bytes, bytearray)) else payload.data
        block_size, length = _parse_header(data)
        if block_size != self.block_size:
            raise CodecError(
                f"Контейнер закодирован с m={block_size}, а кодек использует m={self.block_size}"
            )

        bits = _body_bits(data)
        num_blocks = length // self.block_size
        words, pos = _split_codewords(bits, num_blocks, self.block_size)
        out = np.empty((num_blocks, self.block_size), dtype=bool)
        for i, (size, index) in enumerate(words):
            rank = (1 << size) - 1 + index
            if rank >= self.num_blocks:
                raise CodecError(f"Ранг {rank} вне таблицы в блоке {i}")
            out[i] = self.block_of_rank(rank)

        # После последнего блока допускается только выравнивание до байта
        if bits.size - pos >= 8 or bits[pos:].any():
            raise CodecError("Лишние данные после последнего блока")
        return out.reshape(-1)

    def table(self):
        """Строки (блок, ранг, длина) в порядке рангов"""
        for rank in range(self.num_blocks):
            block = "".join("1" if b else "0" for b in self.block_of_rank(rank))
            yield block, rank, int(self._length_of_rank[rank])


def _to_bits(value: int, width: int) -> npt.NDArray[np.uint8]:
    """Младшие width бит числа, старший бит первым (width ≤ 16)"""
    return np.unpackbits(np.array([value], dtype=">u2").view(np.uint8))[16 - width:]


def _from_bits(bits: npt.NDArray[np.uint8]) -> int:
    padded = np.zeros(16, dtype=np.uint8)
    padded[16 - bits.size:] = bits
    return int.from_bytes(np.packbits(padded).tobytes(), "big")


def _parse_header(data: bytes) -> Tuple[int, int]:
    """(m, L) из заголовка контейнера"""
    if len(data) < _HEADER.size:
        raise CodecError(f"Контейнер короче заголовка: {len(data)} байт")
    magic, block_size, length = _HEADER.unpack_from(data)
    if magic != config.PAYLOAD_MAGIC:
        raise CodecError(f"Неверный magic-байт: 0x{magic:02X}")
    if not 1 <= block_size <= config.MAX_BLOCK_SIZE:
        raise CodecError(f"Недопустимый размер блока в заголовке: {block_size}")
    if length == 0 or length % block_size:
        raise CodecError(f"Длина {length} не кратна размеру блока {block_size}")
    return block_size, length


def _body_bits(data: bytes) -> npt.NDArray[np.uint8]:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size))


def _split_codewords(bits: npt.NDArray[np.uint8], num_blocks: int,
                     block_size: int) -> Tuple[List[Tuple[int, int]], int]:
    """
    Пары (длина, индекс внутри группы) по полям длины.
    Вторым значением возвращается позиция после последнего блока.
    """
    words = []
    pos = 0
    for i in range(num_blocks):
        if pos + _LENGTH_FIELD_BITS > bits.size:
            raise CodecError(f"Контейнер обрезан на блоке {i}")
        size = _from_bits(bits[pos:pos + _LENGTH_FIELD_BITS])
        pos += _LENGTH_FIELD_BITS
        if size > block_size:
            raise CodecError(f"Длина кодового слова {size} больше размера блока в блоке {i}")
        if pos + size > bits.size:
            raise CodecError(f"Контейнер обрезан на блоке {i}")
        words.append((size, _from_bits(bits[pos:pos + size])))
        pos += size
    return words, pos


@lru_cache(maxsize=None)
def get_codec(block_size: int = config.BLOCK_SIZE) -> BlockCodec:
    """Кэшированный (неизменяемый) кодек для размера блока"""
    return BlockCodec(block_size)
