use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shadowprice_ffi::*;

fn toy(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let p = 3;
    let mut x = vec![0.0; n * p];
    let mut y = vec![0.0; n];
    for i in 0..n {
        x[i * p] = 1.0;
        x[i * p + 1] = rng.random_range(-1.0..1.0);
        x[i * p + 2] = rng.random_range(-1.0..1.0);
        y[i] = 0.5 + 0.8 * x[i * p + 1] + 0.05 * x[i * p + 2] + 0.4 * rng.random_range(-1.0..1.0);
    }
    (y, x)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sp_last_error()) }
        .to_string_lossy()
        .into_owned()
}

struct Handles {
    data: *mut SpDataset,
    sys: *mut SpRestrictions,
}

impl Handles {
    fn new(exprs: &[&str]) -> Result<Self, SpStatus> {
        let (y, x) = toy(300);
        let mut data = ptr::null_mut();
        let st = unsafe { sp_dataset_new(y.as_ptr(), x.as_ptr(), 300, 3, 1, &mut data) };
        if st != SpStatus::Ok {
            return Err(st);
        }
        let owned: Vec<CString> = exprs.iter().map(|e| CString::new(*e).unwrap()).collect();
        let ptrs: Vec<*const std::ffi::c_char> = owned.iter().map(|c| c.as_ptr()).collect();
        let mut sys = ptr::null_mut();
        let st =
            unsafe { sp_restrictions_new(ptrs.as_ptr(), ptrs.len(), 3, ptr::null(), &mut sys) };
        if st != SpStatus::Ok {
            unsafe { sp_dataset_free(data) };
            return Err(st);
        }
        Ok(Handles { data, sys })
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            sp_restrictions_free(self.sys);
            sp_dataset_free(self.data);
        }
    }
}

#[test]
fn fit_round_trip() {
    let h = Handles::new(&["theta[1] = 0", "theta[2] = 0"]).unwrap();
    let mut fit = ptr::null_mut();
    assert_eq!(
        unsafe { sp_fit(h.data, h.sys, ptr::null(), &mut fit) },
        SpStatus::Ok
    );
    assert_eq!(last_error(), "");
    let (mut p, mut q) = (0usize, 0usize);
    assert_eq!(unsafe { sp_fit_dims(fit, &mut p, &mut q) }, SpStatus::Ok);
    assert_eq!((p, q), (3, 2));
    let (mut c, mut lam, mut b, mut v) = (0.0, 0.0, 0.0, 0.0);
    assert_eq!(
        unsafe { sp_fit_summary(fit, &mut c, &mut lam, &mut b, &mut v) },
        SpStatus::Ok
    );
    assert!(c > 0.0 && lam >= 0.0 && b >= 0.0 && v > 0.0);

    let mut theta = [0.0; 3];
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    unsafe {
        assert_eq!(
            sp_fit_vector(fit, SpVector::Debiased, theta.as_mut_ptr(), 3),
            SpStatus::Ok
        );
        assert_eq!(
            sp_fit_vector(fit, SpVector::CiLower, lo.as_mut_ptr(), 3),
            SpStatus::Ok
        );
        assert_eq!(
            sp_fit_vector(fit, SpVector::CiUpper, hi.as_mut_ptr(), 3),
            SpStatus::Ok
        );
    }
    for j in 0..3 {
        assert!(lo[j] <= theta[j] && theta[j] <= hi[j]);
    }
    assert!((theta[1] - 0.8).abs() < 0.2);

    let mut isp = [0.0; 2];
    assert_eq!(
        unsafe { sp_fit_vector(fit, SpVector::Isp, isp.as_mut_ptr(), 2) },
        SpStatus::Ok
    );
    assert!(isp.iter().all(|v| *v >= 0.0));
    assert_eq!(
        unsafe { sp_fit_vector(fit, SpVector::Isp, isp.as_mut_ptr(), 3) },
        SpStatus::BufferSize
    );
    let mut m = 99usize;
    assert_eq!(unsafe { sp_fit_plateau_cutoff(fit, &mut m) }, SpStatus::Ok);
    assert!(m <= 2);
    unsafe { sp_fit_free(fit) };
}

#[test]
fn options_change_the_grid() {
    let h = Handles::new(&["theta[1] = 0", "theta[2] = 0"]).unwrap();
    let mut opts = sp_fit_options_default();
    opts.loss_scale = SpLossScale::Mean;
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    unsafe {
        assert_eq!(sp_fit(h.data, h.sys, ptr::null(), &mut a), SpStatus::Ok);
        assert_eq!(sp_fit(h.data, h.sys, &opts, &mut b), SpStatus::Ok);
    }
    let get = |f| {
        let (mut c, mut l, mut x, mut y) = (0.0, 0.0, 0.0, 0.0);
        unsafe { sp_fit_summary(f, &mut c, &mut l, &mut x, &mut y) };
        (c, l)
    };
    let (ca, la) = get(a);
    let (cb, lb) = get(b);
    assert_eq!(ca, cb);
    if la > 0.0 {
        assert!((lb / la - 2.0).abs() < 1e-6);
    }
    opts.grid_size = 1;
    let mut bad = ptr::null_mut();
    assert_eq!(
        unsafe { sp_fit(h.data, h.sys, &opts, &mut bad) },
        SpStatus::InvalidInput
    );
    assert!(bad.is_null());
    unsafe {
        sp_fit_free(a);
        sp_fit_free(b);
    }
}

#[test]
fn errors_map_to_codes() {
    match Handles::new(&["theta[7] = 0"]) {
        Err(st) => assert_eq!(st, SpStatus::InvalidInput),
        Ok(_) => panic!("index out of range accepted"),
    }
    assert!(last_error().contains("theta[7]"), "{}", last_error());
    assert!(matches!(
        Handles::new(&["theta[1] = = 0"]),
        Err(SpStatus::InvalidInput)
    ));

    let y = [1.0, 2.0, 3.0];
    let x = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
    let mut data = ptr::null_mut();
    assert_eq!(
        unsafe { sp_dataset_new(y.as_ptr(), x.as_ptr(), 3, 2, 1, &mut data) },
        SpStatus::Data
    );
    assert!(data.is_null());
    assert_eq!(
        unsafe { sp_dataset_new(ptr::null(), x.as_ptr(), 3, 2, 1, &mut data) },
        SpStatus::NullPointer
    );
    let mut p = 0;
    let mut q = 0;
    assert_eq!(
        unsafe { sp_fit_dims(ptr::null(), &mut p, &mut q) },
        SpStatus::NullPointer
    );
    unsafe {
        sp_fit_free(ptr::null_mut());
        sp_dataset_free(ptr::null_mut());
        sp_restrictions_free(ptr::null_mut());
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(sp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/shadowprice.h")).unwrap();
    for sym in [
        "sp_dataset_new",
        "sp_restrictions_new",
        "sp_fit",
        "sp_fit_vector",
        "sp_last_error",
        "SP_STATUS_OK",
    ] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
    // syntax-check the header and the demo when a C compiler is around
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(dir.join("include"))
        .arg(dir.join("examples/demo.c"))
        .output()
    else {
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
