use qtoksim_core::harness::{run_scenario, run_trial, Adversary, Metrics, ScenarioConfig};
use qtoksim_core::uupuf::acceptance_probability;

fn cfg(json: &str) -> ScenarioConfig {
    ScenarioConfig::from_json(json).unwrap()
}

#[test]
fn qrpuf_honest_and_emulation_accept_everything() {
    let honest = run_scenario(&cfg(r#"{"protocol":"qrpuf","lambda":4,"trials":100,"seed":1}"#)).unwrap();
    assert_eq!(honest.honest_accept_rate, Some(1.0));
    assert_eq!(honest.adversary_accept_rate, None);
    let emu = run_scenario(&cfg(r#"{"protocol":"qrpuf","lambda":4,"adversary":"emulation","trials":100,"seed":1}"#))
        .unwrap();
    assert_eq!(emu.adversary_accept_rate, Some(1.0));
}

#[test]
fn intercept_resend_degrades_qrpuf() {
    let base = run_scenario(&cfg(r#"{"protocol":"qrpuf","lambda":4,"trials":1000,"seed":2}"#)).unwrap();
    let attacked =
        run_scenario(&cfg(r#"{"protocol":"qrpuf","lambda":4,"adversary":"intercept_resend","trials":1000,"seed":2}"#))
            .unwrap();
    println!("intercept_resend: {} vs baseline {}", attacked.accept_rate(), base.accept_rate());
    assert!(attacked.accept_rate() < base.accept_rate());
}

#[test]
fn uupuf_random_guess_is_rejected() {
    let m = run_scenario(&cfg(
        r#"{"protocol":"uupuf","lambda":3,"k1":50,"k2":50,"tau":0.9,"adversary":"random_guess","trials":1000,"seed":3}"#,
    ))
    .unwrap();
    assert!(m.accept_rate() < 0.01, "{}", m.accept_rate());
    // a Haar guess has mean fidelity 1/8, far below the threshold
    assert!(acceptance_probability(50, 0.125, 0.9) < 1e-6);
}

#[test]
fn uupuf_honest_and_emulation_accept() {
    for adv in ["none", "emulation"] {
        let json = format!(r#"{{"protocol":"uupuf","lambda":2,"adversary":"{adv}","trials":100,"seed":4}}"#);
        assert_eq!(run_scenario(&cfg(&json)).unwrap().accept_rate(), 1.0, "{adv}");
    }
}

#[test]
fn hmp4_random_guess_within_oracle() {
    let m = run_scenario(&cfg(r#"{"protocol":"hmp4","t":12,"adversary":"random_guess","trials":1000,"seed":5}"#)).unwrap();
    let p = 0.5f64.powi(8);
    let sigma = (p * (1.0 - p) / 1000.0).sqrt();
    assert!((m.accept_rate() - p).abs() <= 3.0 * sigma, "{}", m.accept_rate());
}

#[test]
fn hmp4_token_clone_near_oracle() {
    let m = run_scenario(&cfg(r#"{"protocol":"hmp4","adversary":"token_clone","trials":1000,"seed":6}"#)).unwrap();
    let p = 0.75f64.powi(8);
    let sigma = (p * (1.0 - p) / 1000.0).sqrt();
    assert!((m.accept_rate() - p).abs() <= 3.0 * sigma, "{}", m.accept_rate());
}

#[test]
fn noise_never_helps_honest_parties() {
    let noisy = r#""channel":{"latency_us":40,"noise":{"t2_us":108.6,"readout_flip_prob":0.01581,"idle_depolarize_prob":0.0003654}}"#;
    let dwell = r#""dwell_us":60,"memory":{"t2_us":108.6}"#;
    let pairs = [
        (
            r#"{"protocol":"qrpuf","lambda":4,"hamming_threshold":0,"trials":300,"seed":7}"#.to_owned(),
            format!(r#"{{"protocol":"qrpuf","lambda":4,"hamming_threshold":0,{noisy},"trials":300,"seed":7}}"#),
        ),
        (
            r#"{"protocol":"uupuf","lambda":2,"trials":300,"seed":7}"#.to_owned(),
            format!(r#"{{"protocol":"uupuf","lambda":2,{noisy},"trials":300,"seed":7}}"#),
        ),
        (
            r#"{"protocol":"hmp4","trials":300,"seed":7}"#.to_owned(),
            format!(r#"{{"protocol":"hmp4",{dwell},{noisy},"trials":300,"seed":7}}"#),
        ),
    ];
    for (clean, noisy) in pairs {
        let a = run_scenario(&cfg(&clean)).unwrap();
        let b = run_scenario(&cfg(&noisy)).unwrap();
        println!("{}: clean {} noisy {}", a.protocol, a.accept_rate(), b.accept_rate());
        assert!(a.honest_accept_rate >= b.honest_accept_rate, "{}", a.protocol);
    }
}

#[test]
fn every_quantum_message_is_accounted_for() {
    for json in [
        r#"{"protocol":"qrpuf","lambda":2,"channel":{"loss_prob":0.2},"trials":200,"seed":8}"#,
        r#"{"protocol":"uupuf","lambda":2,"k1":5,"k2":5,"channel":{"loss_prob":0.05},"trials":200,"seed":8}"#,
        r#"{"protocol":"hmp4","channel":{"loss_prob":0.01},"trials":200,"seed":8}"#,
    ] {
        let m = run_scenario(&cfg(json)).unwrap();
        assert!(m.audit.balanced(), "{json}");
        assert!(m.audit.lost > 0 && m.lost > 0);
        for r in &m.records {
            assert!(r.audit.balanced());
            if r.lost {
                assert!(!r.accepted);
            }
        }
        assert!(m.accepts + m.lost <= m.trials);
    }
}

#[test]
fn trials_are_order_independent() {
    let c = cfg(r#"{"protocol":"hmp4","adversary":"random_guess","trials":20,"seed":9}"#);
    let forward = run_scenario(&c).unwrap();
    let mut backward: Vec<_> = (0..20).rev().map(|t| run_trial(&c, t).unwrap()).collect();
    backward.reverse();
    let merged = Metrics::aggregate(&c, backward);
    assert_eq!(forward.records_csv(), merged.records_csv());
    assert_eq!(forward.summary_json(), merged.summary_json());
}

#[test]
fn config_errors_surface_before_running() {
    for bad in [
        r#"{"protocol":"hmp4","t":10,"trials":1,"seed":1}"#,
        r#"{"protocol":"uupuf","lambda":2,"adversary":"token_clone","trials":1,"seed":1}"#,
        r#"{"protocol":"qrpuf","lambda":2,"channel":{"loss_prob":2},"trials":1,"seed":1}"#,
        r#"{"protocol":"qrpuf","lambda":2,"adversary":"emulation","grant_unitary_knowledge":false,"trials":1,"seed":1}"#,
        r#"{"protocol":"teleport","trials":1,"seed":1}"#,
    ] {
        assert!(ScenarioConfig::from_json(bad).is_err(), "{bad}");
    }
    let c = cfg(r#"{"protocol":"qrpuf","lambda":2,"trials":1,"seed":1}"#);
    assert_eq!(c.adversary, Adversary::None);
    assert_eq!(c.nodes().len(), 3);
}
