//! C ABI for the scenario runner: an opaque configuration handle, status
//! codes, and a flat metrics struct. All functions are safe to call from C;
//! pointers are checked and errors are reported through [`MsimStatus`] plus
//! a per-thread message retrievable with [`msim_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use manet_sim::metrics::DropCause;
use manet_sim::scenario::run_one;
use manet_sim::ScenarioConfig;

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsimStatus {
    MsimOk = 0,
    MsimNullPointer = 1,
    MsimInvalidUtf8 = 2,
    MsimInvalidKey = 3,
    MsimInvalidConfig = 4,
    MsimRunFailed = 5,
    MsimPanic = 6,
}

/// Aggregated results of one scenario run.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MsimMetrics {
    pub pdr: f64,
    pub avg_delay_ms: f64,
    pub throughput_bps: f64,
    pub energy_j: f64,
    pub sent: u64,
    pub received: u64,
    pub inflight: u64,
    pub drops_ttl: u64,
    pub drops_buffer: u64,
    pub drops_retry: u64,
    pub drops_collision: u64,
    pub drops_dieout: u64,
}

/// Opaque scenario configuration handle.
pub struct MsimConfig {
    inner: ScenarioConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

/// Copy the current thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length in bytes, excluding
/// the NUL; zero means no error recorded.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (then only the
/// length is returned).
#[no_mangle]
pub unsafe extern "C" fn msim_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Allocate a configuration with the base-scenario defaults. Free with
/// [`msim_config_free`].
#[no_mangle]
pub extern "C" fn msim_config_new() -> *mut MsimConfig {
    Box::into_raw(Box::new(MsimConfig { inner: ScenarioConfig::default() }))
}

/// Release a configuration handle. A null handle is ignored.
///
/// # Safety
/// `cfg` must be a pointer returned by [`msim_config_new`] that has not
/// been freed already.
#[no_mangle]
pub unsafe extern "C" fn msim_config_free(cfg: *mut MsimConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Set one configuration key from its string form, e.g.
/// `msim_config_set(cfg, "protocol", "aeerg")`.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn msim_config_set(
    cfg: *mut MsimConfig,
    key: *const c_char,
    value: *const c_char,
) -> MsimStatus {
    if cfg.is_null() || key.is_null() || value.is_null() {
        set_error("null pointer argument");
        return MsimStatus::MsimNullPointer;
    }
    let (Ok(key), Ok(value)) = (CStr::from_ptr(key).to_str(), CStr::from_ptr(value).to_str())
    else {
        set_error("key/value must be valid UTF-8");
        return MsimStatus::MsimInvalidUtf8;
    };
    match (*cfg).inner.set(key, value) {
        Ok(()) => MsimStatus::MsimOk,
        Err(e) => {
            set_error(e);
            MsimStatus::MsimInvalidKey
        }
    }
}

/// Execute one run of the configured scenario and fill `out`.
///
/// # Safety
/// `cfg` must be a live handle and `out` must point to writable storage for
/// one [`MsimMetrics`].
#[no_mangle]
pub unsafe extern "C" fn msim_run(cfg: *const MsimConfig, out: *mut MsimMetrics) -> MsimStatus {
    if cfg.is_null() || out.is_null() {
        set_error("null pointer argument");
        return MsimStatus::MsimNullPointer;
    }
    let inner = &(*cfg).inner;
    if let Err(e) = inner.validate() {
        set_error(e.to_string());
        return MsimStatus::MsimInvalidConfig;
    }
    let result = catch_unwind(AssertUnwindSafe(|| run_one(inner)));
    match result {
        Ok(Ok(report)) => {
            let row = &report.row;
            *out = MsimMetrics {
                pdr: row.pdr,
                avg_delay_ms: row.avg_delay_ms,
                throughput_bps: row.throughput_bps,
                energy_j: row.energy_j,
                sent: row.sent,
                received: row.received,
                inflight: row.inflight,
                drops_ttl: row.drop_count(DropCause::Ttl),
                drops_buffer: row.drop_count(DropCause::Buffer),
                drops_retry: row.drop_count(DropCause::Retry),
                drops_collision: row.drop_count(DropCause::Collision),
                drops_dieout: row.drop_count(DropCause::Dieout),
            };
            MsimStatus::MsimOk
        }
        Ok(Err(e)) => {
            set_error(e.to_string());
            MsimStatus::MsimRunFailed
        }
        Err(_) => {
            set_error("internal panic during run");
            MsimStatus::MsimPanic
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn set(cfg: *mut MsimConfig, k: &str, v: &str) -> MsimStatus {
        let k = CString::new(k).unwrap();
        let v = CString::new(v).unwrap();
        unsafe { msim_config_set(cfg, k.as_ptr(), v.as_ptr()) }
    }

    #[test]
    fn end_to_end_small_run() {
        let cfg = msim_config_new();
        assert_eq!(set(cfg, "n_nodes", "10"), MsimStatus::MsimOk);
        assert_eq!(set(cfg, "sim_time_s", "10"), MsimStatus::MsimOk);
        assert_eq!(set(cfg, "warmup_s", "0"), MsimStatus::MsimOk);
        assert_eq!(set(cfg, "flows", "2"), MsimStatus::MsimOk);
        let mut m = MsimMetrics {
            pdr: -1.0,
            avg_delay_ms: 0.0,
            throughput_bps: 0.0,
            energy_j: 0.0,
            sent: 0,
            received: 0,
            inflight: 0,
            drops_ttl: 0,
            drops_buffer: 0,
            drops_retry: 0,
            drops_collision: 0,
            drops_dieout: 0,
        };
        let st = unsafe { msim_run(cfg, &mut m) };
        assert_eq!(st, MsimStatus::MsimOk);
        assert!(m.sent > 0);
        assert!((0.0..=1.0).contains(&m.pdr));
        assert!(m.energy_j > 0.0);
        unsafe { msim_config_free(cfg) };
    }

    #[test]
    fn bad_key_reports_error_message() {
        let cfg = msim_config_new();
        assert_eq!(set(cfg, "does_not_exist", "1"), MsimStatus::MsimInvalidKey);
        let mut buf = [0i8; 128];
        let n = unsafe { msim_last_error(buf.as_mut_ptr() as *mut c_char, buf.len()) };
        assert!(n > 0);
        let msg = unsafe { CStr::from_ptr(buf.as_ptr() as *const c_char) };
        assert!(msg.to_str().unwrap().contains("unknown key"));
        unsafe { msim_config_free(cfg) };
    }

    #[test]
    fn invalid_config_rejected_at_run() {
        let cfg = msim_config_new();
        assert_eq!(set(cfg, "p_gossip", "1.5"), MsimStatus::MsimOk);
        let mut m = unsafe { std::mem::zeroed::<MsimMetrics>() };
        assert_eq!(unsafe { msim_run(cfg, &mut m) }, MsimStatus::MsimInvalidConfig);
        unsafe { msim_config_free(cfg) };
    }

    #[test]
    fn null_pointers_are_rejected() {
        assert_eq!(
            unsafe { msim_config_set(std::ptr::null_mut(), std::ptr::null(), std::ptr::null()) },
            MsimStatus::MsimNullPointer
        );
        assert_eq!(
            unsafe { msim_run(std::ptr::null(), std::ptr::null_mut()) },
            MsimStatus::MsimNullPointer
        );
        unsafe { msim_config_free(std::ptr::null_mut()) };
    }
}
