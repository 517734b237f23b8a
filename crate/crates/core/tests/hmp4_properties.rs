use qtoksim_core::hmp4::{
    average_pass_probability, encode_hmp4, hmp_check, issue, make_request, finish_validation, measure_hmp4,
    outcome_probabilities, pass_probability, session_accept_probability, token_clone_pass_probability, validate,
    HmpMatching, HonestHolder, RandomGuessHolder, TokenCloneHolder,
};
use qtoksim_core::quantum_core::{haar_state, NoiseParams};
use qtoksim_core::{BitString, QuantumState, RngStream};

fn within_sigmas(hits: usize, n: usize, p: f64, k: f64) -> bool {
    let rate = hits as f64 / n as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    (rate - p).abs() <= k * sigma
}

#[test]
fn random_guess_per_register_oracle() {
    let mut rng = RngStream::new(300, 0);
    let p = average_pass_probability(&QuantumState::Pure(haar_state(4, &mut rng))).unwrap();
    assert!((p - 0.5).abs() < 1e-12);
    let n = 20_000;
    let mut pass = 0;
    for _ in 0..n {
        let x = BitString::from_index(rng.below(16), 4);
        let m = HmpMatching::random(&mut rng);
        let (a, b) = measure_hmp4(&haar_state(4, &mut rng), m, &mut rng).unwrap();
        pass += usize::from(hmp_check(&x, m, a, b));
    }
    assert!(within_sigmas(pass, n, 0.5, 4.0));
}

#[test]
fn random_guess_sessions_match_oracle() {
    let mut rng = RngStream::new(301, 0);
    let trials = 1000;
    let mut accepts = 0;
    for _ in 0..trials {
        let (mut server, token) = issue(16, &mut rng).unwrap();
        let mut holder = RandomGuessHolder {
            token_id: token.token_id,
        };
        accepts += usize::from(validate(&mut server, &mut holder, 12, 0, 0.0, &mut rng).unwrap().accept);
    }
    let p = session_accept_probability(0.5, 8, 0);
    assert!(p <= 0.75f64.powi(8));
    assert!(within_sigmas(accepts, trials, p, 3.0), "{accepts} vs {p}");
}

#[test]
fn token_clone_sessions_match_oracle() {
    let mut rng = RngStream::new(302, 0);
    let p_reg = token_clone_pass_probability().unwrap();
    assert!((p_reg - 0.75).abs() < 1e-12);
    let trials = 1000;
    let mut accepts = 0;
    for _ in 0..trials {
        let (mut server, token) = issue(16, &mut rng).unwrap();
        let mut holder = TokenCloneHolder::capture(&token, &mut rng).unwrap();
        accepts += usize::from(validate(&mut server, &mut holder, 12, 0, 0.0, &mut rng).unwrap().accept);
    }
    let p = session_accept_probability(p_reg, 8, 0);
    assert!(within_sigmas(accepts, trials, p, 3.0), "{accepts} vs {p}");
}

#[test]
fn fixed_matching_clone_fails_half_of_the_other_matching() {
    // measured every register in m'=0 at issue; validation asks m=1
    let mut rng = RngStream::new(303, 0);
    let n = 20_000;
    let mut pass = 0;
    let mut oracle = 0.0;
    for _ in 0..n {
        let x = BitString::from_index(rng.below(16), 4);
        let s = encode_hmp4(&x).unwrap();
        let (a, b) = measure_hmp4(&s, HmpMatching::new(0).unwrap(), &mut rng).unwrap();
        let collapsed = QuantumState::Pure(HmpMatching::new(0).unwrap().basis_vector(a, b));
        let m1 = HmpMatching::new(1).unwrap();
        oracle += pass_probability(&collapsed, &x, m1).unwrap();
        let QuantumState::Pure(c) = collapsed else { unreachable!() };
        let (a2, b2) = measure_hmp4(&c, m1, &mut rng).unwrap();
        pass += usize::from(hmp_check(&x, m1, a2, b2));
    }
    let p = oracle / n as f64;
    assert!((p - 0.5).abs() < 1e-12);
    assert!(within_sigmas(pass, n, p, 4.0));
}

#[test]
fn honest_sessions_always_accept() {
    let mut rng = RngStream::new(304, 0);
    for _ in 0..1000 {
        let (mut server, token) = issue(16, &mut rng).unwrap();
        let mut holder = HonestHolder::new(token, None);
        assert!(validate(&mut server, &mut holder, 12, 0, 0.0, &mut rng).unwrap().accept);
    }
}

#[test]
fn registers_are_single_use_across_sessions() {
    let mut rng = RngStream::new(305, 0);
    let (mut server, token) = issue(24, &mut rng).unwrap();
    let mut holder = HonestHolder::new(token, None);
    let a = validate(&mut server, &mut holder, 12, 0, 0.0, &mut rng).unwrap();
    let b = validate(&mut server, &mut holder, 12, 0, 0.0, &mut rng).unwrap();
    assert!(a.accept && b.accept);
    assert!(a.l_s.iter().all(|i| !b.l_s.contains(i)));
    assert!(validate(&mut server, &mut holder, 3, 0, 0.0, &mut rng).is_err());
    // replaying the first request is refused
    let req = make_request(&server, 0, 0.0, &mut rng);
    assert!(req.is_err());
}

#[test]
fn complement_strings_have_identical_statistics() {
    let mut rng = RngStream::new(306, 0);
    for xi in 0..16 {
        let x = BitString::from_index(xi, 4);
        let xc = x.complement();
        for m in 0..2 {
            let m = HmpMatching::new(m).unwrap();
            let p = outcome_probabilities(&QuantumState::Pure(encode_hmp4(&x).unwrap()), m).unwrap();
            let pc = outcome_probabilities(&QuantumState::Pure(encode_hmp4(&xc).unwrap()), m).unwrap();
            assert_eq!(p, pc);
            // and the check itself treats x and its complement alike
            for k in 0..4u8 {
                assert_eq!(hmp_check(&x, m, k >> 1, k & 1), hmp_check(&xc, m, k >> 1, k & 1));
            }
        }
    }
    let _ = &mut rng;
}

#[test]
fn dephasing_memory_is_monotone() {
    let noise = NoiseParams::dephasing_only(108.6).unwrap();
    let mut previous = 1.0;
    for dwell in [0.0, 10.0, 30.0, 60.0, 120.0] {
        let mut rng = RngStream::new(307, 0);
        let trials = 1000;
        let mut accepts = 0;
        for _ in 0..trials {
            let (mut server, token) = issue(16, &mut rng).unwrap();
            let mut holder = HonestHolder::new(token, Some(noise));
            let request = make_request(&server, 12, dwell, &mut rng).unwrap();
            let reply = qtoksim_core::hmp4::HmpHolder::answer(&mut holder, &request, &mut rng);
            accepts += usize::from(finish_validation(&mut server, &request, &reply, 0).accept);
        }
        let rate = accepts as f64 / trials as f64;
        println!("dwell {dwell}us: honest acceptance {rate}");
        assert!(rate <= previous, "dwell {dwell}: {rate} > {previous}");
        previous = rate;
    }
}
