//! Host clocks used for timestamps and processing-time measurement.

/// `CLOCK_MONOTONIC` in nanoseconds. The clock is host-wide, so DU and RU
/// processes on one machine can compare timestamps directly.
pub fn mono_ns() -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: `ts` is a valid out-pointer and CLOCK_MONOTONIC always exists
    // on the platforms this crate supports.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
    assert_eq!(rc, 0, "clock_gettime(CLOCK_MONOTONIC) failed");
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

/// CPU time consumed by the calling thread, in nanoseconds. Unlike the
/// monotonic clock it does not advance while the thread is descheduled.
pub fn thread_cpu_ns() -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: as above; per-thread CPU clocks are available on Linux.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    assert_eq!(rc, 0, "clock_gettime(CLOCK_THREAD_CPUTIME_ID) failed");
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

/// Spin until the monotonic clock reaches `deadline_ns`; returns the time
/// actually observed.
pub fn wait_until(deadline_ns: u64) -> u64 {
    loop {
        let now = mono_ns();
        if now >= deadline_ns {
            return now;
        }
        if deadline_ns - now > 200_000 {
            std::thread::sleep(std::time::Duration::from_nanos((deadline_ns - now) / 2));
        } else {
            std::hint::spin_loop();
        }
    }
}
