use std::sync::OnceLock;

use nalgebra::DVector;
use proptest::prelude::*;

use phobs_core::embedding::{
    compute_parameter_bounds, enumerate_vertices, scheduling_values, weights, OperatingDomain, ParameterBounds,
    VertexSet,
};
use phobs_core::lmi::{GainStructure, LmiSettings};
use phobs_core::model::{DeaParams, PHSystem, StateVec};
use phobs_core::simulate::{integrate, read_csv, InputSignal, Sample, Scenario, Trajectory};
use phobs_core::synthesis::{synthesize, verify_result, SynthesisResult};

struct Dea {
    sys: PHSystem,
    bounds: ParameterBounds,
    set: VertexSet,
    design: SynthesisResult,
}

fn dea() -> &'static Dea {
    static CELL: OnceLock<Dea> = OnceLock::new();
    CELL.get_or_init(|| {
        let sys = DeaParams::default().system().unwrap();
        let domain = OperatingDomain {
            q_min: vec![-8.1257e-6],
            q_max: vec![4.67545e-4],
            p_min: vec![-6.302908e-3],
            p_max: vec![2.228859e-3],
            u_min: vec![0.0],
            u_max: vec![2.64196e7],
        };
        let bounds = compute_parameter_bounds(&sys, &domain).unwrap();
        let set = enumerate_vertices(&sys, &bounds);
        let design = synthesize(&set, 0.5, GainStructure::Constant).unwrap();
        Dea {
            sys,
            bounds,
            set,
            design,
        }
    })
}

fn passes(r: &SynthesisResult) -> bool {
    verify_result(&dea().set, r, LmiSettings::default()).unwrap().passes
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Estimates anywhere, including far outside the box, give a convex
    // combination; inside the box the parameters stay within their bounds.
    #[test]
    fn weights_form_a_partition_of_unity(
        q in -5e-4..2e-3f64,
        p in -2e-2..2e-2f64,
        u in -1e7..5e7f64,
    ) {
        let d = dea();
        let xhat = StateVec::scalar(q, p);
        let input = DVector::from_element(1, u);
        let h = weights(&d.sys, &d.bounds, &xhat, &input);
        prop_assert_eq!(h.len(), 16);
        prop_assert!(h.h.iter().all(|w| *w >= 0.0));
        prop_assert!((h.h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let theta = scheduling_values(&d.sys, &d.bounds, &xhat, &input);
        let inside = theta.iter().zip(&d.bounds.params).all(|(t, b)| *t >= b.min && *t <= b.max);
        prop_assert_eq!(h.clamped, !inside);
    }

    // S_i is linear in (P, K), so positive scaling preserves feasibility.
    #[test]
    fn certificates_are_scale_invariant(c in 1e-3..1e3f64) {
        let base = &dea().design;
        let mut scaled = base.clone();
        scaled.p = &base.p * c;
        scaled.multipliers = base.multipliers.iter().map(|k| k * c).collect();
        prop_assert!(passes(&scaled));
    }

    // A certificate for rate λ also certifies every smaller rate.
    #[test]
    fn certificates_hold_for_smaller_rates(fraction in 0.0..1.0f64) {
        let mut slower = dea().design.clone();
        slower.decay_rate *= fraction;
        prop_assert!(passes(&slower));
    }

    // Unforced trajectories dissipate energy.
    #[test]
    fn unforced_energy_is_non_increasing(q in -4e-4..4e-4f64, p in -5e-2..5e-2f64) {
        let sys = &dea().sys;
        let mut sc = Scenario::new("unforced", StateVec::scalar(q, p), StateVec::zeros(1), InputSignal::Zero);
        sc.horizon_s = 0.2;
        sc.dt_s = 1e-4;
        sc.sample_every = 1;
        let traj = integrate(sys, None, &sc).unwrap();
        let energy: Vec<f64> = traj.samples.iter().map(|s| sys.hamiltonian(&s.x)).collect();
        let scale = energy[0].max(f64::MIN_POSITIVE);
        for pair in energy.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * scale);
        }
    }

    // Seventeen significant digits round-trip every finite double.
    #[test]
    fn csv_round_trip_is_exact(values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 6..60)) {
        let samples: Vec<Sample> = values
            .chunks_exact(5)
            .enumerate()
            .map(|(i, c)| Sample {
                t: i as f64 * 0.1,
                x: StateVec::scalar(c[0], c[1]),
                xhat: Some(StateVec::scalar(c[2], c[3])),
                u: DVector::from_element(1, c[4]),
                y: DVector::from_element(1, c[0]),
                yhat: Some(DVector::from_element(1, c[1])),
                gain: Some(vec![c[2], c[3]]),
                weights: None,
                clamped: false,
                in_domain: true,
            })
            .collect();
        let traj = Trajectory {
            scenario: "prop".into(),
            gain_source: "const".into(),
            dt_s: 0.1,
            horizon_s: 1.0,
            samples: samples.clone(),
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let (header, rows) = read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(header.len(), 12);
        prop_assert_eq!(rows.len(), samples.len());
        for (row, s) in rows.iter().zip(&samples) {
            prop_assert_eq!(row[1].to_bits(), s.x.q[0].to_bits());
            prop_assert_eq!(row[2].to_bits(), s.x.p[0].to_bits());
            prop_assert_eq!(row[3].to_bits(), s.xhat.as_ref().unwrap().q[0].to_bits());
            prop_assert_eq!(row[9].to_bits(), s.u[0].to_bits());
            prop_assert_eq!(row[11].to_bits(), s.gain.as_ref().unwrap()[1].to_bits());
        }
    }
}

// Replicating a constant gain at every vertex yields a scheduled certificate,
// so the scheduled maximum rate can never be below the constant one.
#[test]
fn constant_certificate_is_a_scheduled_certificate() {
    let d = dea();
    let count = d.set.len();
    let sched = SynthesisResult {
        mode: GainStructure::Scheduled,
        gains: vec![d.design.gains[0].clone(); count],
        multipliers: vec![d.design.multipliers[0].clone(); count],
        ..d.design.clone()
    };
    assert!(passes(&d.design));
    assert!(passes(&sched));
}

#[test]
fn tampered_certificate_fails() {
    let mut bad = dea().design.clone();
    bad.p = -&bad.p;
    bad.multipliers = bad.multipliers.iter().map(|k| -k).collect();
    let report = verify_result(&dea().set, &bad, LmiSettings::default()).unwrap();
    assert!(!report.passes);
    assert!(report.message.starts_with("P not positive definite"));
}
