use fscgrad::oracle::exact::ExactSolution;
use fscgrad::sim::*;
use fscgrad::stats::batch_means;
use fscgrad::testing::{random_model, random_policy};
use fscgrad::toy::*;
use fscgrad::*;

#[test]
fn occupancy_and_cost_rate_match_the_stationary_law() {
    let m = toy2();
    let p = toy2_controller();
    let sol = ExactSolution::compute(&m, &p, None).unwrap();
    let t = simulate(&m, &p, 400_000, 31, &InitialState::Model).unwrap();
    let d = sol.dims;

    let costs: Vec<f64> = t.steps.iter().map(|s| s.g).collect();
    let (eta, se) = batch_means(&costs, 100);
    assert!((eta - sol.eta).abs() <= 3.0 * se, "{eta} vs {} (se {se})", sol.eta);

    for (i, &pi) in sol.pi_xyzu.iter().enumerate() {
        let ind: Vec<f64> = t
            .steps
            .iter()
            .map(|s| f64::from(d.xyzu(s.x, s.y, s.z, s.u) == i))
            .collect();
        let (freq, se) = batch_means(&ind, 100);
        assert!(
            (freq - pi).abs() <= 4.0 * se + 1e-12,
            "state {i}: {freq} vs {pi} (se {se})"
        );
    }
}

#[test]
fn one_step_frequencies_follow_the_model_and_controller() {
    let m = random_model(17, 3, 2, 2);
    let p = random_policy(18, 2, 2, 2, TieMode::Free);
    let t = simulate(&m, &p, 300_000, 2, &InitialState::Model).unwrap();
    // (x, u) → x' counts and (z, y) → u counts
    let mut xu = [[0usize; 3]; 6];
    let mut zy = [[0usize; 2]; 4];
    for w in t.steps.windows(2) {
        let (a, b) = (w[0], w[1]);
        xu[a.x * 2 + a.u][b.x] += 1;
        zy[a.z * 2 + a.y][a.u] += 1;
    }
    let check = |counts: &[usize], prob: &dyn Fn(usize) -> f64| {
        let n: usize = counts.iter().sum();
        for (k, &c) in counts.iter().enumerate() {
            let p = prob(k);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() <= 5.0 * se + 1e-12);
        }
    };
    for x in 0..3 {
        for u in 0..2 {
            check(&xu[x * 2 + u], &|xn| m.transition(x, u, xn));
        }
    }
    for z in 0..2 {
        for y in 0..2 {
            check(&zy[z * 2 + y], &|u| p.mu(z, y, u));
        }
    }
}

#[test]
fn initial_state_options() {
    let m = toy2();
    let p = toy2_controller();
    for seed in 0..20 {
        let t = simulate(&m, &p, 3, seed, &InitialState::State(1)).unwrap();
        assert_eq!(t.steps[0].x, 1);
        assert_eq!(t.steps[0].z, 0);
        let t = simulate(&m, &p, 3, seed, &InitialState::Dist(vec![1.0, 0.0])).unwrap();
        assert_eq!(t.steps[0].x, 0);
    }
    assert!(simulate(&m, &p, 3, 0, &InitialState::State(2)).is_err());
    assert!(simulate(&m, &p, 3, 0, &InitialState::Dist(vec![1.0])).is_err());
    let wrong = make_direct_fsc(3, 2, 1, TieMode::Free).unwrap();
    assert!(simulate(&m, &wrong, 3, 0, &InitialState::Model).is_err());
}

#[test]
fn seeds_and_streams_determine_the_path() {
    let m = toy2();
    let p = toy2_controller();
    let a = simulate(&m, &p, 1_000, 4, &InitialState::Model).unwrap();
    assert_eq!(a, simulate(&m, &p, 1_000, 4, &InitialState::Model).unwrap());
    assert_ne!(a.steps, simulate(&m, &p, 1_000, 5, &InitialState::Model).unwrap().steps);

    let run = |stream| {
        let mut rng = rng_for(4, stream);
        simulate_with_rng(&m, &p, 1_000, &InitialState::Model, &mut rng).unwrap()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1).steps, run(2).steps);
    // a prefix of a longer run is the shorter run
    let long = simulate(&m, &p, 2_000, 4, &InitialState::Model).unwrap();
    assert_eq!(&long.steps[..1_000], &a.steps[..]);
    assert_eq!(long.steps[1_000].x, a.tail.0);
}

#[test]
fn hidden_view_drops_only_the_state() {
    let t = simulate(&toy2(), &toy2_controller(), 50, 0, &InitialState::Model).unwrap();
    let v = t.hidden_view();
    assert_eq!(v.len(), t.len());
    for (i, s) in t.steps.iter().enumerate() {
        let o = v.get(i);
        assert_eq!((o.y, o.z, o.u, o.g), (s.y, s.z, s.u, s.g));
        assert_eq!(v.z_next(i), if i + 1 < t.len() { t.steps[i + 1].z } else { t.tail.2 });
    }
    assert_eq!(v.tail(), (t.tail.1, t.tail.2));
}
