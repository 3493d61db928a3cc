use std::ffi::{CStr, CString};
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::ptr;

use ggllvm_ffi::*;

const EDGES: &str = "# format_version=1.0\nlayer,src,dst,value\nL1,a,b,1\nL1,b,c,1\nL2,c,a,1\nL2,a,c,0\nL3,b,a,1\n";

fn last_error() -> String {
    let p = ggllvm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn dense_data() -> *mut GgllvmData {
    // Three nodes, four layers, directed.
    let mut values = [0u32; 4 * 9];
    for (k, cells) in [[1usize, 5, 6], [2, 3, 7], [1, 2, 5], [3, 6, 7]].iter().enumerate() {
        for &c in cells {
            values[k * 9 + c] = 1;
        }
    }
    let mut data = ptr::null_mut();
    let rc = unsafe { ggllvm_data_from_dense(3, 4, 1, values.as_ptr(), &mut data) };
    assert_eq!(rc, GGLLVM_OK);
    data
}

#[test]
fn reads_edge_list_file() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    file.write_all(EDGES.as_bytes()).unwrap();
    let path = CString::new(file.path().to_str().unwrap()).unwrap();
    let mut data = ptr::null_mut();
    let rc = unsafe { ggllvm_data_from_edge_list(path.as_ptr(), GGLLVM_FAMILY_BERNOULLI, -1, &mut data) };
    assert_eq!(rc, GGLLVM_OK);
    unsafe {
        assert_eq!(ggllvm_data_n_nodes(data), 3);
        assert_eq!(ggllvm_data_n_layers(data), 3);
        ggllvm_data_free(data);
    }
}

#[test]
fn error_codes_and_messages() {
    let mut data = ptr::null_mut();
    let rc = unsafe { ggllvm_data_from_edge_list(ptr::null(), GGLLVM_FAMILY_BERNOULLI, -1, &mut data) };
    assert_eq!(rc, GGLLVM_ERR_NULL);
    assert!(last_error().contains("path"));

    let mut file = tempfile::NamedTempFile::new().unwrap();
    file.write_all(b"layer,src,dst,value\nL1,a,a,1\n").unwrap();
    let path = CString::new(file.path().to_str().unwrap()).unwrap();
    let rc = unsafe { ggllvm_data_from_edge_list(path.as_ptr(), GGLLVM_FAMILY_BERNOULLI, -1, &mut data) };
    assert_eq!(rc, GGLLVM_ERR_PARSE);
    assert!(last_error().contains("line 2"));
    assert!(data.is_null());

    let missing = CString::new("/nonexistent/edges.csv").unwrap();
    let rc = unsafe { ggllvm_data_from_edge_list(missing.as_ptr(), GGLLVM_FAMILY_BERNOULLI, -1, &mut data) };
    assert_eq!(rc, GGLLVM_ERR_IO);

    let rc = unsafe { ggllvm_data_from_edge_list(path.as_ptr(), 9, -1, &mut data) };
    assert_eq!(rc, GGLLVM_ERR_INVALID);

    let values = [0u32, 1, 1, 0];
    let rc = unsafe { ggllvm_data_from_dense(2, 1, 0, values.as_ptr(), &mut data) };
    assert_eq!(rc, GGLLVM_OK);
    let mut config = ggllvm_fit_config_default();
    config.assumption = 7;
    let mut fit = ptr::null_mut();
    let rc = unsafe { ggllvm_fit(data, &config, &mut fit) };
    assert_eq!(rc, GGLLVM_ERR_INVALID);
    assert!(fit.is_null());
    unsafe { ggllvm_data_free(data) };
}

#[test]
fn fit_accessors_and_json_round_trip() {
    let data = dense_data();
    let mut config = ggllvm_fit_config_default();
    config.include_intercept = 0;
    config.seed = 3;
    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { ggllvm_fit(data, &config, &mut fit) }, GGLLVM_OK);

    let (m, p) = unsafe { (ggllvm_fit_n_dyads(fit), ggllvm_fit_n_cols(fit)) };
    assert_eq!((m, p), (6, 1));
    assert!(unsafe { ggllvm_fit_loglik(fit) }.is_finite());

    let mut required = 0usize;
    assert_eq!(unsafe { ggllvm_fit_alpha(fit, ptr::null_mut(), 0, &mut required) }, GGLLVM_OK);
    assert_eq!(required, 6);
    let mut small = [0.0; 2];
    assert_eq!(
        unsafe { ggllvm_fit_alpha(fit, small.as_mut_ptr(), small.len(), ptr::null_mut()) },
        GGLLVM_ERR_BUFFER
    );
    let mut alpha = vec![0.0; required];
    assert_eq!(unsafe { ggllvm_fit_alpha(fit, alpha.as_mut_ptr(), alpha.len(), ptr::null_mut()) }, GGLLVM_OK);
    assert!(alpha[0] >= 0.0, "sign anchor on the first loading");

    let mut sigma = [0.0; 1];
    assert_eq!(unsafe { ggllvm_fit_sigma(fit, sigma.as_mut_ptr(), 1, ptr::null_mut()) }, GGLLVM_OK);
    assert_eq!(sigma[0], 1.0);

    let mut pi = vec![0.0; 4 * 9];
    assert_eq!(unsafe { ggllvm_fit_pi_hat(fit, pi.as_mut_ptr(), pi.len(), ptr::null_mut()) }, GGLLVM_OK);
    for k in 0..4 {
        for i in 0..3 {
            assert_eq!(pi[k * 9 + i * 3 + i], 0.0);
        }
    }
    assert!(pi.iter().all(|v| (0.0..=1.0).contains(v)));

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { ggllvm_fit_to_json(fit, &mut json) }, GGLLVM_OK);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    assert!(text.contains("\"format_version\": \"1.0\""));

    let mut back = ptr::null_mut();
    assert_eq!(unsafe { ggllvm_fit_from_json(json, data, &mut back) }, GGLLVM_OK);
    let mut json2 = ptr::null_mut();
    assert_eq!(unsafe { ggllvm_fit_to_json(back, &mut json2) }, GGLLVM_OK);
    assert_eq!(unsafe { CStr::from_ptr(json2) }.to_str().unwrap(), text);
    assert_eq!(unsafe { ggllvm_fit_loglik(back) }, unsafe { ggllvm_fit_loglik(fit) });

    let future = CString::new(text.replace("\"format_version\": \"1.0\"", "\"format_version\": \"2.0\"")).unwrap();
    let mut rejected = ptr::null_mut();
    assert_eq!(unsafe { ggllvm_fit_from_json(future.as_ptr(), data, &mut rejected) }, GGLLVM_ERR_PARSE);

    unsafe {
        ggllvm_string_free(json);
        ggllvm_string_free(json2);
        ggllvm_fit_free(fit);
        ggllvm_fit_free(back);
        ggllvm_data_free(data);
    }
}

#[test]
fn null_handles_are_tolerated() {
    unsafe {
        ggllvm_data_free(ptr::null_mut());
        ggllvm_fit_free(ptr::null_mut());
        ggllvm_string_free(ptr::null_mut());
        assert_eq!(ggllvm_data_n_nodes(ptr::null()), 0);
        assert_eq!(ggllvm_fit_converged(ptr::null()), 0);
        assert!(ggllvm_fit_loglik(ptr::null()).is_nan());
    }
    let v = unsafe { CStr::from_ptr(ggllvm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ggllvm.h")).unwrap();
    for name in [
        "typedef struct GgllvmData GgllvmData;",
        "typedef struct GgllvmFit GgllvmFit;",
        "GgllvmFitConfig ggllvm_fit_config_default(void);",
        "int ggllvm_fit(const GgllvmData *data,",
        "const char *ggllvm_last_error(void);",
        "#define GGLLVM_ERR_NUMERICAL 4",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    if !cc.status.success() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"ggllvm.h\"\nint main(void) { GgllvmFitConfig c = ggllvm_fit_config_default(); return c.factors == 1 ? 0 : 1; }\n",
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}
