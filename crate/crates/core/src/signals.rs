//! Fatal signal helpers and process hardening for worker processes.

/// Signals the harness can inject and classify.
pub const SUPPORTED_SIGNALS: [i32; 5] =
    [libc::SIGILL, libc::SIGABRT, libc::SIGBUS, libc::SIGFPE, libc::SIGSEGV];

pub fn signal_name(signal: i32) -> Option<&'static str> {
    Some(match signal {
        libc::SIGILL => "SIGILL",
        libc::SIGABRT => "SIGABRT",
        libc::SIGBUS => "SIGBUS",
        libc::SIGFPE => "SIGFPE",
        libc::SIGSEGV => "SIGSEGV",
        libc::SIGKILL => "SIGKILL",
        libc::SIGTERM => "SIGTERM",
        libc::SIGTRAP => "SIGTRAP",
        libc::SIGSYS => "SIGSYS",
        _ => return None,
    })
}

/// Terminates the process with `signal` under its default disposition.
pub fn raise_fatal(signal: i32) -> ! {
    // SAFETY: plain libc calls with valid arguments; the process is about to die.
    unsafe {
        libc::signal(signal, libc::SIG_DFL);
        let mut set: libc::sigset_t = std::mem::zeroed();
        libc::sigemptyset(&mut set);
        libc::sigaddset(&mut set, signal);
        libc::pthread_sigmask(libc::SIG_UNBLOCK, &set, std::ptr::null_mut());
        libc::raise(signal);
        libc::abort();
    }
}

/// Restores default dispositions for the fault signals so a native fault
/// terminates the process instead of entering the runtime's stack-overflow
/// handler, and disables core dumps.
pub fn prepare_for_faults() {
    // SAFETY: resetting dispositions and rlimits has no memory-safety preconditions.
    unsafe {
        for sig in SUPPORTED_SIGNALS {
            libc::signal(sig, libc::SIG_DFL);
        }
        let no_core = libc::rlimit { rlim_cur: 0, rlim_max: 0 };
        libc::setrlimit(libc::RLIMIT_CORE, &no_core);
        #[cfg(target_os = "linux")]
        libc::prctl(libc::PR_SET_DUMPABLE, 0, 0, 0, 0);
    }
}

/// Worker-only hardening: die with the parent and cap the address space.
pub fn harden_worker(address_space_limit: Option<u64>) {
    prepare_for_faults();
    // SAFETY: as above.
    unsafe {
        #[cfg(target_os = "linux")]
        libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL, 0, 0, 0);
        if let Some(limit) = address_space_limit {
            let cap = libc::rlimit { rlim_cur: limit as libc::rlim_t, rlim_max: limit as libc::rlim_t };
            if libc::setrlimit(libc::RLIMIT_AS, &cap) != 0 {
                log::warn!("could not apply address-space cap of {limit} bytes");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names() {
        assert_eq!(signal_name(11), Some("SIGSEGV"));
        assert_eq!(signal_name(6), Some("SIGABRT"));
        assert_eq!(signal_name(4), Some("SIGILL"));
        assert_eq!(signal_name(8), Some("SIGFPE"));
        assert_eq!(signal_name(0), None);
    }
}
