use std::ffi::{CStr, CString};
use std::ptr;

use framing_ffi::*;

fn builtin(name: &str) -> *mut FdiNetwork {
    let name = CString::new(name).unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { fdi_network_builtin(name.as_ptr(), &mut net) }, FdiStatus::Ok);
    assert!(!net.is_null());
    net
}

fn last_error() -> String {
    let p = fdi_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn design(net: *const FdiNetwork, adversary: &str, framed: &str) -> (FdiStatus, *mut FdiPlan) {
    let a = CString::new(adversary).unwrap();
    let f = CString::new(framed).unwrap();
    let mut plan = ptr::null_mut();
    let status = unsafe { fdi_design_framing(net, a.as_ptr(), f.as_ptr(), &mut plan) };
    (status, plan)
}

#[test]
fn ieee14_counts() {
    let net = builtin("ieee14");
    unsafe {
        assert_eq!(fdi_network_bus_count(net), 14);
        assert_eq!(fdi_network_line_count(net), 20);
        assert_eq!(fdi_network_meter_count(net), 54);
        assert_eq!(fdi_network_state_dim(net), 13);
        let mut obs = false;
        assert_eq!(fdi_network_observable(net, &mut obs), FdiStatus::Ok);
        assert!(obs);
        fdi_network_free(net);
    }
}

#[test]
fn null_handles_are_reported() {
    unsafe {
        assert_eq!(fdi_network_bus_count(ptr::null()), 0);
        assert!(fdi_plan_objective(ptr::null()).is_nan());
        fdi_network_free(ptr::null_mut());
        fdi_plan_free(ptr::null_mut());
        assert_eq!(fdi_network_builtin(ptr::null(), &mut ptr::null_mut()), FdiStatus::NullPointer);
        assert!(last_error().contains("null"));
        let name = CString::new("ieee14").unwrap();
        assert_eq!(fdi_network_builtin(name.as_ptr(), ptr::null_mut()), FdiStatus::NullPointer);
    }
}

#[test]
fn bad_input_codes() {
    let name = CString::new("ieee999").unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { fdi_network_builtin(name.as_ptr(), &mut net) }, FdiStatus::InvalidInput);
    assert!(net.is_null());
    assert!(last_error().contains("ieee999"));

    let text = CString::new("not a cdf file").unwrap();
    assert_eq!(unsafe { fdi_network_from_cdf(text.as_ptr(), &mut net) }, FdiStatus::InvalidInput);
    assert!(net.is_null());

    let net = builtin("ieee14");
    let (status, plan) = design(net, "2-3,99-4", "2");
    assert_eq!(status, FdiStatus::InvalidInput);
    assert!(plan.is_null());
    unsafe { fdi_network_free(net) };
}

#[test]
fn infeasible_framing_pair() {
    let net = builtin("ieee14");
    // A single flow meter cannot hide an attack that moves any other residual.
    let (status, plan) = design(net, "1-2", "5");
    assert_eq!(status, FdiStatus::Infeasible, "{}", last_error());
    assert!(plan.is_null());
    unsafe { fdi_network_free(net) };
}

#[test]
fn design_and_predict_bus3_framing() {
    let net = builtin("ieee14");
    let (status, plan) = design(net, "2-3,3-4,4-3", "2,3,4,3-2");
    assert_eq!(status, FdiStatus::Ok, "{}", last_error());
    unsafe {
        assert!(fdi_plan_objective(plan) > 0.0);
        assert!(fdi_plan_feasible_dim(plan) >= 1);
        assert_eq!(fdi_plan_eta(plan), 1.0);

        let mut written = 0usize;
        let mut small = [0.0; 4];
        assert_eq!(fdi_plan_attack_vector(plan, small.as_mut_ptr(), small.len(), &mut written), FdiStatus::BufferTooSmall);
        assert_eq!(written, 54);

        let mut a = vec![0.0; 54];
        assert_eq!(fdi_plan_attack_vector(plan, a.as_mut_ptr(), a.len(), &mut written), FdiStatus::Ok);
        let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert_eq!(a.iter().filter(|v| v.abs() > 0.0).count(), 3);

        let mut dx1 = vec![0.0; 13];
        assert_eq!(fdi_predict_perturbation(net, plan, dx1.as_mut_ptr(), 13, ptr::null_mut()), FdiStatus::Ok);
        assert!(dx1.iter().any(|v| v.abs() > 1e-6));

        assert_eq!(fdi_plan_set_eta(plan, -2.0), FdiStatus::Ok);
        let mut dx2 = vec![0.0; 13];
        assert_eq!(fdi_predict_perturbation(net, plan, dx2.as_mut_ptr(), 13, ptr::null_mut()), FdiStatus::Ok);
        for (p, q) in dx1.iter().zip(&dx2) {
            assert!((q + 2.0 * p).abs() < 1e-9);
        }
        assert_eq!(fdi_plan_set_eta(plan, f64::NAN), FdiStatus::InvalidInput);
        fdi_plan_free(plan);
        fdi_network_free(net);
    }
}

#[test]
fn plan_network_mismatch_is_rejected() {
    let n14 = builtin("ieee14");
    let n118 = builtin("ieee118");
    let (status, plan) = design(n14, "2-3,3-4,4-3", "2,3,4,3-2");
    assert_eq!(status, FdiStatus::Ok);
    let mut dx = vec![0.0; 117];
    let status = unsafe { fdi_predict_perturbation(n118, plan, dx.as_mut_ptr(), dx.len(), ptr::null_mut()) };
    assert_eq!(status, FdiStatus::InvalidInput);
    unsafe {
        fdi_plan_free(plan);
        fdi_network_free(n14);
        fdi_network_free(n118);
    }
}

#[test]
fn estimate_clean_and_attacked_measurements() {
    let net = builtin("ieee14");
    let (_, plan) = design(net, "2-3,3-4,4-3", "2,3,4,3-2");
    unsafe {
        assert_eq!(fdi_network_set_snr(net, 46.0), FdiStatus::Ok);
        let mut x = vec![0.0; 13];
        let mut removed = usize::MAX;
        // All-zero measurements are consistent with the zero state.
        let z = vec![0.0; 54];
        assert_eq!(fdi_estimate_dc(net, z.as_ptr(), 54, 0.04, x.as_mut_ptr(), 13, ptr::null_mut(), &mut removed), FdiStatus::Ok);
        assert_eq!(removed, 0);
        assert!(x.iter().all(|v| v.abs() < 1e-12));

        // A large attack on zero measurements must trip bad-data removal,
        // and the result must match the noiseless prediction.
        fdi_plan_set_eta(plan, 1.0);
        let mut a = vec![0.0; 54];
        fdi_plan_attack_vector(plan, a.as_mut_ptr(), 54, ptr::null_mut());
        let mut predicted = vec![0.0; 13];
        assert_eq!(fdi_predict_perturbation(net, plan, predicted.as_mut_ptr(), 13, ptr::null_mut()), FdiStatus::Ok, "{}", last_error());
        assert_eq!(fdi_estimate_dc(net, a.as_ptr(), 54, 0.04, x.as_mut_ptr(), 13, ptr::null_mut(), &mut removed), FdiStatus::Ok);
        assert!(removed > 0);
        for (p, q) in predicted.iter().zip(&x) {
            assert!((p - q).abs() < 1e-9, "{p} vs {q}");
        }

        assert_eq!(fdi_estimate_dc(net, z.as_ptr(), 53, 0.04, x.as_mut_ptr(), 13, ptr::null_mut(), ptr::null_mut()), FdiStatus::InvalidInput);
        assert_eq!(fdi_estimate_dc(net, z.as_ptr(), 54, 1.5, x.as_mut_ptr(), 13, ptr::null_mut(), ptr::null_mut()), FdiStatus::InvalidInput);
        fdi_plan_free(plan);
        fdi_network_free(net);
    }
}

#[test]
fn cdf_round_trip_through_text() {
    let net = framing::netmodel::load_case("ieee14").unwrap();
    let text = CString::new(framing::netmodel::write_ieee_cdf(&net)).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { fdi_network_from_cdf(text.as_ptr(), &mut handle) }, FdiStatus::Ok);
    unsafe {
        assert_eq!(fdi_network_bus_count(handle), 14);
        fdi_network_free(handle);
    }
}
