use missionmac::closed_form::{delay_bound_protocol1, delay_bound_protocol2};
use missionmac::markov::throughput;
use missionmac::optimizer::{solve, OptProblem};
use missionmac::protocol::{DecisionRule, MissionLength};
use missionmac::simulator::{
    exhaustive_capture_bound, run_concurrent, run_missions, run_normal, run_protocol3_cap, write_trace, Concurrency,
    ConcurrentSettings, SimConfig, Z99,
};
use missionmac::{one_period_protocol, protocol1, protocol2, protocol3, OnePeriodRule, Protocol};

fn f_norm(n: usize) -> OnePeriodRule {
    solve(&OptProblem::pnorm1(n, 0.1).with_busy_zero(true)).unwrap().rule
}

#[test]
fn alternating_pair_reaches_full_throughput() {
    let mut cfg = SimConfig::new(one_period_protocol(OnePeriodRule::alternating()), 2);
    cfg.slots = 1_000_000;
    cfg.seed = 3;
    let r = run_normal(&cfg).unwrap();
    assert_eq!(r.metrics.total_throughput, 1.0);
    for t in &r.metrics.per_user_throughput {
        assert!((t - 0.5).abs() < 0.002);
    }
    assert_eq!(r.metrics.fairness, 1.0);
    assert_eq!(r.inconsistent_slots, 0);
}

#[test]
fn empirical_throughput_matches_chain() {
    for (rule, n) in [
        (OnePeriodRule::tilde(10, 0.1).unwrap(), 10),
        (OnePeriodRule::two_state(5, 10.0).unwrap(), 5),
        (OnePeriodRule::uniform(1.0 / 3.0).unwrap(), 3),
    ] {
        let mut cfg = SimConfig::new(one_period_protocol(rule), n);
        cfg.slots = 400_000;
        cfg.replications = 4;
        let r = run_normal(&cfg).unwrap();
        let exact = throughput(&rule, n).unwrap();
        println!(
            "{rule} N={n}: {} vs {exact} (se {})",
            r.metrics.total_throughput, r.throughput_std_err
        );
        assert!((r.metrics.total_throughput - exact).abs() < 3.0 * r.throughput_std_err.max(1e-4));
        // Mean run length of a symmetric one-period rule is 1/θ.
        let theta = rule.fairness(n);
        assert!(
            (r.metrics.fairness - theta).abs() < 0.05 * theta,
            "{} vs {theta}",
            r.metrics.fairness
        );
    }
}

#[test]
fn silent_rule_is_all_idle() {
    let mut cfg = SimConfig::new(one_period_protocol(OnePeriodRule::uniform(0.0).unwrap()), 4);
    cfg.slots = 1000;
    let r = run_normal(&cfg).unwrap();
    assert_eq!(r.metrics.total_throughput, 0.0);
    let mut buf = Vec::new();
    write_trace(&cfg, 3, &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "slot,transmitters,actions,states,situations\n0,0,WWWW,IIII,NNNN\n1,0,WWWW,IIII,NNNN\n2,0,WWWW,IIII,NNNN\n"
    );
}

#[test]
fn same_seed_same_results() {
    let mut cfg = SimConfig::new(protocol2(f_norm(5)).unwrap(), 5);
    cfg.mission_count = 300;
    cfg.replications = 3;
    cfg.missions.length = MissionLength::Geometric { success: 0.2 };
    let a = run_missions(&cfg).unwrap();
    let b = run_missions(&cfg).unwrap();
    assert_eq!(a, b);
    cfg.seed += 1;
    assert_ne!(a.samples, run_missions(&cfg).unwrap().samples);
}

#[test]
fn mission_delays_and_bounds() {
    for n in [3, 10] {
        let f = f_norm(n);
        let mut results = Vec::new();
        for (k, protocol) in [protocol1(f).unwrap(), protocol2(f).unwrap()].into_iter().enumerate() {
            let mut cfg = SimConfig::new(protocol, n);
            cfg.mission_count = 5_000;
            cfg.replications = 8;
            cfg.seed = 11;
            let r = run_missions(&cfg).unwrap();
            let bound = if k == 0 {
                delay_bound_protocol1(&f, n)
            } else {
                delay_bound_protocol2(&f, n)
            }
            .unwrap();
            println!(
                "N={n} P{}: sim {} ± {} bound {}",
                k + 1,
                r.delay.mean,
                r.delay.std_err,
                bound.total
            );
            for c in &r.by_class {
                println!(
                    "   {} share {:.4} mean {:.4} se {:.4}",
                    c.label, c.share, c.delay.mean, c.delay.std_err
                );
            }
            assert_eq!(r.capture_violations, 0);
            assert!(r.delay.mean - Z99 * r.delay.std_err <= bound.total);
            assert_eq!(r.class("success-self").unwrap().delay.max, 0.0);
            let other = r.class("success-other").unwrap().delay;
            let expected = bound.success_other;
            assert!(
                (other.mean - expected).abs() < 3.0 * other.std_err,
                "{} vs {expected}",
                other.mean
            );
            results.push((r.delay.mean, bound.total));
        }
        assert!(results[1].0 < results[0].0);
        assert!(results[1].1 < results[0].1);
    }
}

#[test]
fn protocol3_cap() {
    let f = f_norm(10);
    for m in 2..=5 {
        assert_eq!(
            exhaustive_capture_bound(&protocol3(f, m).unwrap(), 3).unwrap(),
            Some(m as u64 + 1)
        );
    }
    let mut cfg = SimConfig::new(protocol1(f).unwrap(), 10);
    cfg.mission_count = 20_000;
    cfg.replications = 4;
    cfg.mission_gap = 30;
    cfg.missions.length = MissionLength::Fixed { packets: 1 };
    cfg.slots = 250_000;
    let r = run_protocol3_cap(&cfg, 5).unwrap();
    println!("{r:?}");
    assert!(r.within_cap());
    assert!((r.throughput_protocol3 - r.throughput_protocol1).abs() < 0.002);
}

#[test]
fn concurrent_policies() {
    let f = f_norm(10);
    let settings = ConcurrentSettings {
        episodes: 500,
        ..ConcurrentSettings::default()
    };
    for mode in [Concurrency::Fcfs, Concurrency::Sharing, Concurrency::Handshake] {
        let mut cfg = SimConfig::new(protocol2(f).unwrap(), 10);
        cfg.concurrency = mode;
        cfg.replications = 2;
        cfg.mission_gap = 50;
        let r = run_concurrent(&cfg, &settings).unwrap();
        println!(
            "{mode:?}: missions {} delay {:.3} order {} shared {} alt {} signal {} captures {} normal {}",
            r.missions.len(),
            r.delay.mean,
            r.order_violations,
            r.shared_slots,
            r.alternation_violations,
            r.signal_failures,
            r.normal_captures,
            r.normal_successes
        );
        assert_eq!(r.order_violations, 0);
        assert_eq!(r.alternation_violations, 0);
        assert_eq!(r.signal_failures, 0);
        assert_eq!(r.normal_captures, 0);
    }
}

#[test]
fn handshake_rejects_three_missions() {
    let mut cfg = SimConfig::new(protocol2(f_norm(5)).unwrap(), 5);
    cfg.concurrency = Concurrency::Handshake;
    let settings = ConcurrentSettings {
        missions_per_episode: 3,
        ..ConcurrentSettings::default()
    };
    assert!(matches!(
        run_concurrent(&cfg, &settings),
        Err(missionmac::Error::Unsupported(_))
    ));
    cfg.protocol = protocol1(f_norm(5)).unwrap();
    assert!(run_concurrent(&cfg, &ConcurrentSettings::default()).is_err());
}

#[test]
fn missions_need_capture() {
    let cfg = SimConfig::new(one_period_protocol(OnePeriodRule::tilde(5, 0.1).unwrap()), 5);
    assert!(run_missions(&cfg).is_err());
    let p = Protocol::symmetric(DecisionRule::Memoryless(0.2));
    assert!(run_missions(&SimConfig::new(p, 5)).is_err());
}

#[test]
fn protocol2_normal_phase_is_analytic() {
    let f = f_norm(6);
    let exact = missionmac::analyze(&protocol2(f).unwrap(), 6).unwrap();
    assert!((exact.total_throughput - throughput(&f, 6).unwrap()).abs() < 1e-15);
    assert_eq!(exact.complexity, 2);
    let mut cfg = SimConfig::new(protocol2(f).unwrap(), 6);
    cfg.slots = 400_000;
    cfg.replications = 2;
    let sim = run_normal(&cfg).unwrap();
    assert!((sim.metrics.total_throughput - exact.total_throughput).abs() < 3.0 * sim.throughput_std_err);
    assert!(matches!(
        missionmac::analyze(&protocol3(f, 5).unwrap(), 6),
        Err(missionmac::Error::Unsupported(_))
    ));
}
