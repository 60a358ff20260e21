"""Minimal OS personality: a handful of Linux-flavored syscalls plus the
two hooks that make sensitive input channels work.

Files opened with O_SENSITIVE and all getrandom() output enter memory
already tagged, so protection starts at the OS boundary rather than
relying on the program to remember. write() of tagged data emits the
at-rest representation (the ciphertext bytes as DRAM would hold them)
instead of plaintext; --strict-write turns that into a trap.

The filesystem is a dict of virtual paths to bytes. Thread keys are
derived lazily from the master key and cached; switching threads flushes
all dirty state under the outgoing key first, so nothing of thread A
rests in DRAM under thread B's key.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .core import StrictWriteViolation
from .crypt import derive_thread_key, qarma_encrypt
from .isa import MASK64

SYS_OPENAT = 56
SYS_READ = 63
SYS_WRITE = 64
SYS_EXIT = 93
SYS_GETRANDOM = 278
SYS_THREAD_SWITCH = 5000  # not a Linux number; private to this machine

O_SENSITIVE = 0x0200_0000

ENOENT = 2
EBADF = 9
EINVAL = 22
ENOSYS = 38
ENAMETOOLONG = 36

_PATH_MAX = 4096


@dataclass
class FileDesc:
    path: str
    flags: int
    data: bytes
    pos: int = 0
    sensitive: bool = False


@dataclass
class OsShim:
    master_key: object
    seed: int = 0
    fs: dict = field(default_factory=dict)
    strict_write: bool = False

    def __post_init__(self):
        self.fds = {}
        self.next_fd = 3
        self.stdout = bytearray()
        self.stderr = bytearray()
        self.leak_averted_bytes = 0
        self.prng = random.Random(self.seed)
        self._thread_keys = {}

    def key_for(self, tid):
        key = self._thread_keys.get(tid)
        if key is None:
            key = derive_thread_key(self.master_key, tid)
            self._thread_keys[tid] = key
        return key

    # ---- kernel-side memory helpers (charged like normal accesses) ----------

    def _read_cstr(self, st, mem, addr):
        out = bytearray()
        cycles = 0
        for i in range(_PATH_MAX):
            b, _, c = mem.load((addr + i) & MASK64, 1, False, st.key)
            cycles += c
            if b == 0:
                return out.decode("utf-8", "replace"), cycles
            out.append(b)
        return None, cycles

    def _write_bytes(self, st, mem, addr, data, tag):
        """Copy data into guest memory, tagged or not, charging cycles.
        Uses doubleword stores on aligned runs."""
        cycles = 0
        i = 0
        n = len(data)
        while i < n:
            a = (addr + i) & MASK64
            if a % 8 == 0 and n - i >= 8:
                width = 8
            else:
                width = 1
            value = int.from_bytes(data[i : i + width], "little")
            taints = ((1 << width) - 1) if tag else 0
            cycles += mem.store(a, width, value, tag, st.key, taints)
            i += width
        return cycles

    # ---- syscalls ------------------------------------------------------------

    def handle_ecall(self, st, mem, oracle=None):
        """Dispatch on a7; the result lands in a0 (untagged). Returns the
        cycles of kernel-side memory work."""
        num = st.regs[17]
        a0, a1, a2 = st.regs[10], st.regs[11], st.regs[12]

        if num == SYS_EXIT:
            st.halted = True
            st.exit_code = a0 & 0xFF
            return 0

        if num == SYS_OPENAT:
            ret, cycles = self.sys_openat(st, mem, a0, a1, a2)
        elif num == SYS_READ:
            ret, cycles = self.sys_read(st, mem, a0, a1, a2)
        elif num == SYS_WRITE:
            ret, cycles = self.sys_write(st, mem, a0, a1, a2)
        elif num == SYS_GETRANDOM:
            ret, cycles = self.sys_getrandom(st, mem, a0, a1, a2)
        elif num == SYS_THREAD_SWITCH:
            ret, cycles = self.sys_thread_switch(st, mem, a0)
        else:
            ret, cycles = -ENOSYS, 0

        st.write_reg(10, ret & MASK64, 0)
        if oracle:
            oracle.oracle_step("clear", 10, None)
        return cycles

    def sys_openat(self, st, mem, dirfd, path_ptr, flags):
        path, cycles = self._read_cstr(st, mem, path_ptr)
        if path is None:
            return -ENAMETOOLONG, cycles
        if path not in self.fs:
            return -ENOENT, cycles
        fd = self.next_fd
        self.next_fd += 1
        self.fds[fd] = FileDesc(
            path=path,
            flags=flags,
            data=bytes(self.fs[path]),
            sensitive=bool(flags & O_SENSITIVE),
        )
        return fd, cycles

    def sys_read(self, st, mem, fd, buf, count):
        f = self.fds.get(fd)
        if f is None:
            return -EBADF, 0
        n = min(count, len(f.data) - f.pos)
        if n <= 0:
            return 0, 0
        chunk = f.data[f.pos : f.pos + n]
        f.pos += n
        cycles = self._write_bytes(st, mem, buf, chunk, 1 if f.sensitive else 0)
        return n, cycles

    def sys_write(self, st, mem, fd, buf, count):
        """Emit count bytes from guest memory. Bytes of tagged words leave
        as their at-rest ciphertext; each such byte counts as a leak
        averted. Under strict mode that is a trap instead."""
        if fd not in (1, 2):
            return -EBADF, 0
        sink = self.stdout if fd == 1 else self.stderr
        cycles = 0
        i = 0
        while i < count:
            a = (buf + i) & MASK64
            w = a & ~7
            value, tag, c = mem.load(w, 8, False, st.key)
            cycles += c
            take = min(count - i, w + 8 - a)
            if tag:
                if self.strict_write:
                    raise StrictWriteViolation(f"write of tagged word {w:#x}", st.pc)
                rest = qarma_encrypt(st.key, w, value).to_bytes(8, "little")
                sink += rest[a - w : a - w + take]
                self.leak_averted_bytes += take
            else:
                sink += value.to_bytes(8, "little")[a - w : a - w + take]
            i += take
        return count, cycles

    def sys_getrandom(self, st, mem, buf, count, flags):
        """Randomness is sensitive by definition: the returned bytes land
        in memory tagged."""
        data = self.prng.randbytes(count)
        cycles = self._write_bytes(st, mem, buf, data, 1)
        return count, cycles

    def sys_thread_switch(self, st, mem, tid):
        """Flush everything dirty under the outgoing thread's key, then
        switch the active derived key. Registers carry over; this models
        the key change, not a full context switch."""
        tid = tid & MASK64
        if tid >= 1 << 16:
            return -EINVAL, 0
        cycles = mem.flush_and_sync(st.key)
        st.tid = tid
        st.key = self.key_for(tid)
        return 0, cycles
