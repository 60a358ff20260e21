"""Tagged memory hierarchy: DRAM with a shadow tag bitmap, write-back
set-associative data/instruction caches, an optional tag cache, and the
encryption boundary at the cache-DRAM edge.

Inside registers and caches data is plaintext; a word whose tag bit is set
rests in DRAM as ciphertext under (current thread key, word address as
tweak). Untagged words rest verbatim. The three cycle models share one
functional simulation and differ only in what they charge and count:

  baseline  no tag traffic, no cipher cycles, counters stay zero
  model A   one DRAM tag access per line fill and per dirty writeback
  model B   the same events go through a small tag cache (hit 1 cycle,
            miss one DRAM tag access; dirty tag-line eviction pays one
            more); one tag-cache line covers 4 KiB of data space

Encryption itself always happens (the DRAM image is identical across
models); baseline simply does not charge or count it. Cipher latency is
charged per tagged word in both directions, fill and writeback.

The byte_oracle bitmap is the byte-granularity golden taint reference
(one bit per DRAM byte) used to measure over-tagging; it is maintained on
the store paths and by the tag-management instructions and has no effect
on simulated behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

from .crypt import qarma_encrypt, qarma_decrypt

DRAM_BASE = 0x8000_0000
DRAM_SIZE = 64 * 1024 * 1024
LINE = 64
WORDS_PER_LINE = LINE // 8

MODELS = ("baseline", "a", "b")


class MemAccessError(Exception):
    pass


class OutOfBoundsAccess(MemAccessError):
    pass


class MisalignedAccess(MemAccessError):
    pass


class SoundnessViolation(AssertionError):
    """Raised in debug mode when a word's hardware tag under-approximates
    the byte oracle; must never happen."""


@dataclass
class CycleCosts:
    alu: int = 1
    mul: int = 3
    div: int = 33
    load_hit: int = 2
    load_hit_cross: int = 3  # access crossing an 8-byte boundary
    store_hit: int = 1
    branch: int = 1
    mispredict: int = 3
    jump: int = 2
    dram_access_latency: int = 60
    cipher_block: int = 4
    tag_cache_hit: int = 1


class _Line:
    __slots__ = ("base", "data", "tags", "dirty")

    def __init__(self, base, data, tags):
        self.base = base
        self.data = data
        self.tags = tags  # 8-bit mask, bit j = sensitivity of word j
        self.dirty = False


class CacheModel:
    """Set-associative, write-back, LRU. Each set is a list with the most
    recently used line first."""

    def __init__(self, name, size, ways, line_size=LINE):
        assert size % (ways * line_size) == 0
        self.name = name
        self.ways = ways
        self.line_size = line_size
        self.n_sets = size // (ways * line_size)
        self.sets = [[] for _ in range(self.n_sets)]
        self.hits = 0
        self.misses = 0

    def set_for(self, line_base):
        return self.sets[(line_base // self.line_size) % self.n_sets]

    def find(self, line_base):
        s = self.set_for(line_base)
        for ln in s:
            if ln.base == line_base:
                if s[0] is not ln:
                    s.remove(ln)
                    s.insert(0, ln)
                return ln
        return None

    def all_lines(self):
        for s in self.sets:
            yield from s

    def invalidate(self):
        for s in self.sets:
            s.clear()


class _TagLine:
    __slots__ = ("num", "dirty")

    def __init__(self, num):
        self.num = num
        self.dirty = False


class MemorySystem:
    def __init__(
        self,
        model="baseline",
        base=DRAM_BASE,
        size=DRAM_SIZE,
        costs=None,
        dcache=(32 * 1024, 8),
        icache=(32 * 1024, 8),
        tag_cache=(4 * 1024, 8),
        strict_align=True,
        no_cache=False,
        debug_soundness=False,
        debug_shadow=False,
    ):
        if model not in MODELS:
            raise ValueError(f"unknown model {model!r}")
        assert size % LINE == 0
        self.model = model
        self.base = base
        self.size = size
        self.costs = costs or CycleCosts()
        self.strict_align = strict_align
        self.no_cache = no_cache
        self.debug_soundness = debug_soundness
        # test aid: word address -> (logical value, key) recorded when a
        # tagged word is written to DRAM, so the at-rest invariant can be
        # checked by full scan
        self.debug_shadow = {} if debug_shadow else None

        self.dram = bytearray(size)
        self.tag_bits = bytearray(size // 64)  # 1 bit per word = 1/64 of data
        self.byte_oracle = bytearray(size // 8)  # 1 bit per byte

        self.dcache = CacheModel("dcache", dcache[0], dcache[1])
        self.icache = CacheModel("icache", icache[0], icache[1])
        # 4KB / 8 ways / 64B lines -> 8 sets; one line covers 4 KiB of data
        self.tagcache_sets = [[] for _ in range(tag_cache[0] // (tag_cache[1] * LINE))]
        self.tagcache_ways = tag_cache[1]
        self.tagcache_hits = 0
        self.tagcache_misses = 0

        self.dram_data_accesses = 0
        self.dram_tag_accesses = 0
        self.cipher_blocks = 0
        self.overtag_cipher_blocks = 0
        self.clean = True

    # ---- raw DRAM helpers -------------------------------------------------

    def _check_range(self, addr, length):
        if addr < self.base or addr + length > self.base + self.size:
            raise OutOfBoundsAccess(f"[{addr:#x}, {addr + length:#x}) outside DRAM")

    def write_raw_init(self, addr, data):
        """Image loading: place bytes directly, tags cleared."""
        self._check_range(addr, len(data))
        off = addr - self.base
        self.dram[off : off + len(data)] = data

    def word_tag(self, addr):
        wi = (addr - self.base) >> 3
        return (self.tag_bits[wi >> 3] >> (wi & 7)) & 1

    def oracle_word(self, addr):
        """The 8 oracle taint bits of the word containing addr."""
        wi = (addr - self.base) >> 3
        return self.byte_oracle[wi]

    def _oracle_update(self, addr, width, taints):
        # taints: int with bit k = taint of the k-th written byte
        bi = addr - self.base
        for k in range(width):
            idx = bi + k
            if (taints >> k) & 1:
                self.byte_oracle[idx >> 3] |= 1 << (idx & 7)
            else:
                self.byte_oracle[idx >> 3] &= ~(1 << (idx & 7)) & 0xFF

    def _oracle_set(self, base, length, on):
        bi = base - self.base
        for k in range(length):
            idx = bi + k
            if on:
                self.byte_oracle[idx >> 3] |= 1 << (idx & 7)
            else:
                self.byte_oracle[idx >> 3] &= ~(1 << (idx & 7)) & 0xFF

    def oracle_bits_for(self, addr, width):
        bi = addr - self.base
        out = 0
        for k in range(width):
            idx = bi + k
            out |= ((self.byte_oracle[idx >> 3] >> (idx & 7)) & 1) << k
        return out

    # ---- tag traffic accounting -------------------------------------------

    def _tag_access(self, line_base, write):
        """Charge the per-model cost of touching the shadow tags for one
        data line; returns cycles."""
        if self.model == "baseline":
            return 0
        lat = self.costs.dram_access_latency
        if self.model == "a":
            self.dram_tag_accesses += 1
            return lat
        # model B: through the tag cache
        num = line_base >> 12  # one tag line spans 4 KiB of data
        s = self.tagcache_sets[num % len(self.tagcache_sets)]
        for tl in s:
            if tl.num == num:
                if s[0] is not tl:
                    s.remove(tl)
                    s.insert(0, tl)
                tl.dirty = tl.dirty or write
                self.tagcache_hits += 1
                return self.costs.tag_cache_hit
        self.tagcache_misses += 1
        cycles = 0
        if len(s) == self.tagcache_ways:
            victim = s.pop()
            if victim.dirty:
                self.dram_tag_accesses += 1
                cycles += lat
        self.dram_tag_accesses += 1
        cycles += lat
        tl = _TagLine(num)
        tl.dirty = write
        s.insert(0, tl)
        return cycles

    # ---- line movement ----------------------------------------------------

    def _charge_cipher(self, word_addr):
        """Cipher latency for one tagged word crossing the DRAM boundary.
        Charged in models A and B; spurious work on fully over-tagged
        words is attributed separately."""
        if self.model == "baseline":
            return 0
        self.cipher_blocks += 1
        if self.oracle_word(word_addr) == 0:
            self.overtag_cipher_blocks += 1
        return self.costs.cipher_block

    def _writeback_line(self, line, key):
        off = line.base - self.base
        cycles = self.costs.dram_access_latency
        self.dram_data_accesses += 1
        cycles += self._tag_access(line.base, write=True)
        data = line.data
        if line.tags:
            out = bytearray(data)
            for j in range(WORDS_PER_LINE):
                if (line.tags >> j) & 1:
                    addr = line.base + 8 * j
                    word = int.from_bytes(data[8 * j : 8 * j + 8], "little")
                    enc = qarma_encrypt(key, addr, word)
                    out[8 * j : 8 * j + 8] = enc.to_bytes(8, "little")
                    cycles += self._charge_cipher(addr)
                    if self.debug_shadow is not None:
                        self.debug_shadow[addr] = (word, key)
                elif self.debug_shadow is not None:
                    self.debug_shadow.pop(line.base + 8 * j, None)
            self.dram[off : off + LINE] = out
        else:
            self.dram[off : off + LINE] = data
            if self.debug_shadow is not None:
                for j in range(WORDS_PER_LINE):
                    self.debug_shadow.pop(line.base + 8 * j, None)
        self.tag_bits[off >> 6] = line.tags
        line.dirty = False
        return cycles

    def _fill(self, cache, line_base, key):
        off = line_base - self.base
        cycles = self.costs.dram_access_latency
        self.dram_data_accesses += 1
        cycles += self._tag_access(line_base, write=False)
        tags = self.tag_bits[off >> 6]
        data = bytearray(self.dram[off : off + LINE])
        if tags:
            for j in range(WORDS_PER_LINE):
                if (tags >> j) & 1:
                    addr = line_base + 8 * j
                    raw = int.from_bytes(data[8 * j : 8 * j + 8], "little")
                    plain = qarma_decrypt(key, addr, raw)
                    data[8 * j : 8 * j + 8] = plain.to_bytes(8, "little")
                    cycles += self._charge_cipher(addr)
        line = _Line(line_base, data, tags)
        s = cache.set_for(line_base)
        if len(s) == cache.ways:
            victim = s.pop()
            if victim.dirty:
                cycles += self._writeback_line(victim, key)
        s.insert(0, line)
        return line, cycles

    def _access(self, cache, line_base, key):
        line = cache.find(line_base)
        if line is not None:
            cache.hits += 1
            return line, 0
        cache.misses += 1
        return self._fill(cache, line_base, key)

    # ---- architectural accesses --------------------------------------------

    def _align_check(self, addr, width):
        if self.strict_align and width > 1 and addr % width:
            raise MisalignedAccess(f"{width}-byte access at {addr:#x}")

    def _soundness_check(self, word_addr):
        if self.debug_soundness:
            if self.word_tag(word_addr) < (1 if self.oracle_word(word_addr) else 0):
                raise SoundnessViolation(
                    f"word {word_addr:#x}: tag 0 but oracle bits {self.oracle_word(word_addr):#04x}"
                )

    def load(self, addr, width, signed, key):
        """Returns (value, tag, cycles). The tag is the containing word's
        tag regardless of which bytes were read; a straddling access ORs
        the words it touches."""
        self._check_range(addr, width)
        self._align_check(addr, width)
        if self.no_cache:
            return self._load_direct(addr, width, signed, key)
        crosses = (addr & 7) + width > 8
        cycles = self.costs.load_hit_cross if crosses else self.costs.load_hit
        lo_line = addr & ~(LINE - 1)
        hi_line = (addr + width - 1) & ~(LINE - 1)
        line, c = self._access(self.dcache, lo_line, key)
        cycles += c
        raw = bytes(line.data[addr - lo_line : addr - lo_line + width])
        tag = 0
        w0 = addr & ~7
        w1 = (addr + width - 1) & ~7
        if hi_line != lo_line:
            take = lo_line + LINE - addr
            line2, c2 = self._access(self.dcache, hi_line, key)
            cycles += c2
            raw = bytes(line.data[addr - lo_line :]) + bytes(line2.data[: width - take])
            for w in range(w0, w1 + 8, 8):
                ln = line if w < hi_line else line2
                tag |= (ln.tags >> ((w - ln.base) >> 3)) & 1
        else:
            for w in range(w0, w1 + 8, 8):
                tag |= (line.tags >> ((w - line.base) >> 3)) & 1
        value = int.from_bytes(raw, "little")
        if signed and value & (1 << (8 * width - 1)):
            value -= 1 << (8 * width)
        return value & ((1 << 64) - 1), tag, cycles

    def store(self, addr, width, value, src_tag, key, taints=None):
        """Write-allocate write-back store. Full-word stores replace the
        word tag; narrower stores retain it (old OR src). Returns cycles.

        taints carries per-byte oracle bits for the written bytes; by
        default the word-level src_tag is broadcast."""
        self._check_range(addr, width)
        self._align_check(addr, width)
        if taints is None:
            taints = ((1 << width) - 1) if src_tag else 0
        if self.no_cache:
            return self._store_direct(addr, width, value, src_tag, taints, key)
        cycles = self.costs.store_hit
        data = (value & ((1 << (8 * width)) - 1)).to_bytes(width, "little")
        lo_line = addr & ~(LINE - 1)
        hi_line = (addr + width - 1) & ~(LINE - 1)
        line, c = self._access(self.dcache, lo_line, key)
        cycles += c
        if hi_line != lo_line:
            line2, c2 = self._access(self.dcache, hi_line, key)
            cycles += c2
            take = lo_line + LINE - addr
            line.data[addr - lo_line :] = data[:take]
            line2.data[: width - take] = data[take:]
        else:
            line.data[addr - lo_line : addr - lo_line + width] = data
            line2 = line
        for w in range(addr & ~7, ((addr + width - 1) & ~7) + 8, 8):
            ln = line if w < hi_line or hi_line == lo_line else line2
            j = (w - ln.base) >> 3
            covered_lo = max(addr, w)
            covered_hi = min(addr + width, w + 8)
            full = covered_lo == w and covered_hi == w + 8
            old = (ln.tags >> j) & 1
            new = src_tag if full else (old | src_tag)
            if new:
                ln.tags |= 1 << j
            else:
                ln.tags &= ~(1 << j) & 0xFF
            ln.dirty = True
        self._oracle_update(addr, width, taints)
        self.clean = False
        if self.debug_soundness:
            for w in range(addr & ~7, ((addr + width - 1) & ~7) + 8, 8):
                ln = line if w < hi_line or hi_line == lo_line else line2
                j = (w - ln.base) >> 3
                if self.oracle_word(w) and not ((ln.tags >> j) & 1):
                    raise SoundnessViolation(f"store left word {w:#x} under-tagged")
        return cycles

    def fetch(self, addr, key):
        """Instruction fetch: free on icache hit, a miss pays the fill."""
        self._check_range(addr, 4)
        if self.no_cache:
            v, _, _ = self._load_direct(addr, 4, False, key)
            return v & 0xFFFFFFFF, 0
        line_base = addr & ~(LINE - 1)
        line, cycles = self._access(self.icache, line_base, key)
        off = addr - line_base
        return int.from_bytes(line.data[off : off + 4], "little"), cycles

    # ---- tag management ---------------------------------------------------

    def ctag_set_range(self, base, length, key):
        """Tag every word overlapping [base, base+length); the byte oracle
        records exactly the covered bytes. Returns cycles."""
        if length == 0:
            return 0
        self._check_range(base, length)
        end = base + length
        if self.no_cache:
            for w in range(base & ~7, ((end - 1) & ~7) + 8, 8):
                # read before flipping the tag: it decides the decrypt
                self._set_word_at_rest(w, self._word_at_rest(w, key), 1, key)
            self._oracle_set(base, length, True)
            return self.costs.dram_access_latency
        cycles = 0
        first_line = base & ~(LINE - 1)
        last_line = (end - 1) & ~(LINE - 1)
        for lb in range(first_line, last_line + LINE, LINE):
            line, c = self._access(self.dcache, lb, key)
            cycles += c
            for j in range(WORDS_PER_LINE):
                w = lb + 8 * j
                if w < end and w + 8 > base:
                    line.tags |= 1 << j
            line.dirty = True
        self._oracle_set(base, length, True)
        self.clean = False
        return cycles

    def ctag_clear_range(self, base, length, key):
        """Clear tags of words fully inside [base, base+length); words
        only partially covered stay tagged. Covered oracle bytes clear.
        Lines pass through the cache, so cleared words will rest in DRAM
        as plaintext after the next writeback."""
        if length == 0:
            return 0
        self._check_range(base, length)
        end = base + length
        if self.no_cache:
            for w in range(base & ~7, ((end - 1) & ~7) + 8, 8):
                if w >= base and w + 8 <= end:
                    self._set_word_at_rest(w, self._word_at_rest(w, key), 0, key)
            self._oracle_set(base, length, False)
            return self.costs.dram_access_latency
        cycles = 0
        first_line = base & ~(LINE - 1)
        last_line = (end - 1) & ~(LINE - 1)
        for lb in range(first_line, last_line + LINE, LINE):
            line, c = self._access(self.dcache, lb, key)
            cycles += c
            for j in range(WORDS_PER_LINE):
                w = lb + 8 * j
                if w >= base and w + 8 <= end:
                    line.tags &= ~(1 << j) & 0xFF
            line.dirty = True
        self._oracle_set(base, length, False)
        self.clean = False
        return cycles

    def ctag_read(self, addr):
        """Tag bit of the word containing addr, plus the cycles the lookup
        cost. A resident line answers from its own metadata for free; a
        miss consults the tag store without filling data."""
        self._check_range(addr, 1)
        if self.no_cache:
            return self.word_tag(addr), 0
        line_base = addr & ~(LINE - 1)
        line = self.dcache.find(line_base)
        if line is not None:
            return (line.tags >> ((addr - line_base) >> 3)) & 1, 0
        return self.word_tag(addr), self._tag_access(line_base, write=False)

    # ---- maintenance -------------------------------------------------------

    def flush_and_sync(self, key):
        """Write back every dirty line under `key` and invalidate the
        caches; afterwards all of DRAM is at rest (tagged words encrypted,
        the rest plaintext)."""
        cycles = 0
        for cache in (self.dcache, self.icache):
            for line in cache.all_lines():
                if line.dirty:
                    cycles += self._writeback_line(line, key)
            cache.invalidate()
        for s in self.tagcache_sets:
            for tl in s:
                if tl.dirty:
                    self.dram_tag_accesses += 1
                    cycles += self.costs.dram_access_latency
            s.clear()
        self.clean = True
        return cycles

    def raw_dump(self, start, length):
        """The attacker's view: exact DRAM bytes plus per-word tag bits.
        Never decrypts. Requires a prior flush_and_sync."""
        if not self.clean:
            raise RuntimeError("raw_dump requires flush_and_sync first")
        self._check_range(start, length)
        off = start - self.base
        data = bytes(self.dram[off : off + length])
        tags = []
        for w in range(start & ~7, start + length, 8):
            tags.append(self.word_tag(w))
        return data, tags

    def format_dump(self, start, length):
        data, tags = self.raw_dump(start, length)
        out = []
        w0 = start & ~7
        for i, w in enumerate(range(w0, start + length, 8)):
            if i % 8 == 0:
                out.append(f"# line {w & ~(LINE - 1):#x}")
            chunk = data[max(0, w - start) : w - start + 8]
            word = int.from_bytes(chunk.ljust(8, b"\x00"), "little")
            out.append(f"{w:08x}: {word:016x} {tags[i]}")
        return "\n".join(out) + "\n"

    # ---- degenerate uncached mode (differential testing) --------------------

    def _word_at_rest(self, word_addr, key):
        off = word_addr - self.base
        raw = int.from_bytes(self.dram[off : off + 8], "little")
        if self.word_tag(word_addr):
            return qarma_decrypt(key, word_addr, raw)
        return raw

    def _set_word_at_rest(self, word_addr, value, tag, key):
        off = word_addr - self.base
        wi = off >> 3
        if tag:
            raw = qarma_encrypt(key, word_addr, value)
            self.tag_bits[wi >> 3] |= 1 << (wi & 7)
            if self.debug_shadow is not None:
                self.debug_shadow[word_addr] = (value, key)
        else:
            raw = value
            self.tag_bits[wi >> 3] &= ~(1 << (wi & 7)) & 0xFF
            if self.debug_shadow is not None:
                self.debug_shadow.pop(word_addr, None)
        self.dram[off : off + 8] = raw.to_bytes(8, "little")

    def _load_direct(self, addr, width, signed, key):
        cycles = self.costs.load_hit + self.costs.dram_access_latency
        out = bytearray()
        tag = 0
        w0 = addr & ~7
        w1 = (addr + width - 1) & ~7
        for w in range(w0, w1 + 8, 8):
            tag |= self.word_tag(w)
            out += self._word_at_rest(w, key).to_bytes(8, "little")
        lo = addr - w0
        value = int.from_bytes(out[lo : lo + width], "little")
        if signed and value & (1 << (8 * width - 1)):
            value -= 1 << (8 * width)
        return value & ((1 << 64) - 1), tag, cycles

    def _store_direct(self, addr, width, value, src_tag, taints, key):
        cycles = self.costs.store_hit + self.costs.dram_access_latency
        data = (value & ((1 << (8 * width)) - 1)).to_bytes(width, "little")
        pos = 0
        w0 = addr & ~7
        w1 = (addr + width - 1) & ~7
        for w in range(w0, w1 + 8, 8):
            word = self._word_at_rest(w, key)
            buf = bytearray(word.to_bytes(8, "little"))
            covered_lo = max(addr, w)
            covered_hi = min(addr + width, w + 8)
            n = covered_hi - covered_lo
            buf[covered_lo - w : covered_hi - w] = data[pos : pos + n]
            pos += n
            full = covered_lo == w and covered_hi == w + 8
            old = self.word_tag(w)
            new = src_tag if full else (old | src_tag)
            self._set_word_at_rest(w, int.from_bytes(buf, "little"), new, key)
        self._oracle_update(addr, width, taints)
        return cycles
