use fscgrad::cassandra::{parse_pomdp, write_pomdp};
use fscgrad::model::ModelTables;
use fscgrad::policy::PolicyCheckpoint;
use fscgrad::posmdp::{simulate_posmdp, PosmdpModel, Sojourn};
use fscgrad::testing::{random_feasible_theta, random_model, random_policy};
use fscgrad::toy::*;
use fscgrad::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NEAR_MIN: &str = include_str!("../assets/toy2_near_min.json");
const BEST: &str = include_str!("../assets/toy2_best.json");

fn observation_free(m: &PomdpModel) -> PomdpModel {
    let c = m.clone();
    m.map_costs(|x, _, u, _| c.cost(x, 0, u))
}

#[test]
fn bundled_model_round_trips_through_both_formats() {
    let m = toy2();
    assert_eq!(m.n_states(), 2);
    assert_eq!(m.declared_discount(), Some(0.95));
    assert_eq!(
        parse_pomdp(&write_pomdp(&m).unwrap()).unwrap().to_tables(),
        m.to_tables()
    );
    // JSON carries the numeric tables only
    assert_eq!(
        PomdpModel::from_json(&m.to_json().unwrap()).unwrap().to_tables(),
        m.to_tables()
    );
    assert_eq!(load_model("toy2").unwrap(), m);
}

#[test]
fn models_load_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = observation_free(&random_model(3, 4, 2, 3));
    let pomdp = dir.path().join("m.pomdp");
    let json = dir.path().join("m.json");
    std::fs::write(&pomdp, write_pomdp(&m).unwrap()).unwrap();
    std::fs::write(&json, m.to_json().unwrap()).unwrap();
    assert_eq!(load_model(pomdp.to_str().unwrap()).unwrap().to_tables(), m.to_tables());
    assert_eq!(load_model(json.to_str().unwrap()).unwrap().to_tables(), m.to_tables());
    assert!(matches!(load_model("/nonexistent/model.pomdp"), Err(Error::Io(_))));
}

#[test]
fn observation_dependent_costs_cannot_be_written() {
    let m = toy2().map_costs(|_, y, _, g| g + y as f64);
    assert!(matches!(write_pomdp(&m), Err(Error::Unrepresentable(_))));
    // JSON keeps them
    assert_eq!(
        PomdpModel::from_json(&m.to_json().unwrap()).unwrap().to_tables(),
        m.to_tables()
    );
}

#[test]
fn malformed_models_report_what_is_wrong() {
    let bad_row = "states: 2\nactions: 1\nobservations: 1\nT: 0\n0.5 0.4\n0.5 0.5\nO: * uniform\n";
    assert!(matches!(parse_pomdp(bad_row), Err(Error::NonStochasticRow { .. })));
    let undeclared = "states: a b\nactions: 1\nobservations: 1\nT: 0 : c : a 1.0\n";
    assert!(matches!(
        parse_pomdp(undeclared),
        Err(Error::UndeclaredIdentifier { line: 4, .. })
    ));
    let tables: ModelTables = serde_json::from_str(&toy2().to_json().unwrap()).unwrap();
    let mut broken = tables.clone();
    broken.transition[0][0] = vec![0.2, 0.2];
    assert!(PomdpModel::from_tables(&broken).is_err());
    let mut negative = tables;
    negative.observation[1][0] = vec![1.5, -0.5];
    assert!(PomdpModel::from_tables(&negative).is_err());
}

#[test]
fn frozen_checkpoints_load_as_feasible_controllers() {
    for text in [NEAR_MIN, BEST] {
        let p = FscPolicy::from_json(text).unwrap();
        assert!(p.is_feasible(1e-12));
        assert_eq!(p.tie_mode(), TieMode::TiedMemory);
        assert_eq!(p.dim(), toy2_controller().dim());
        assert!(exact_gradient(&toy2(), &p).is_ok());
    }
    let near = FscPolicy::from_json(NEAR_MIN).unwrap();
    let best = FscPolicy::from_json(BEST).unwrap();
    let eta = |p: &FscPolicy| ExactSolution::compute(&toy2(), p, None).unwrap().eta;
    assert!(eta(&best) <= eta(&near));
    assert!(eta(&near) - eta(&best) < 1e-4);
    assert!(eta(&toy2_controller()) - eta(&best) > 0.1);
}

#[test]
fn infeasible_checkpoints_are_rejected() {
    let mut c: PolicyCheckpoint = serde_json::from_str(NEAR_MIN).unwrap();
    c.theta[0] = 1.5;
    assert!(FscPolicy::from_checkpoint(&c).is_err());
    let mut c: PolicyCheckpoint = serde_json::from_str(NEAR_MIN).unwrap();
    c.theta.pop();
    assert!(FscPolicy::from_checkpoint(&c).is_err());
}

#[test]
fn trajectories_round_trip_through_csv() {
    let t = simulate(&toy2(), &toy2_controller(), 500, 12, &InitialState::Model).unwrap();
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let back = Trajectory::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, t);
    assert!(Trajectory::read_csv("t,x,y,z,u,g\n".as_bytes()).is_err());

    let m = PosmdpModel::uniform(toy2(), Sojourn::Exponential { mean: 2.0 }).unwrap();
    let tt = simulate_posmdp(&m, &toy2_controller(), 50, 1, &InitialState::Model).unwrap();
    let mut buf = Vec::new();
    tt.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# seed=1 "));
    assert_eq!(lines.next().unwrap(), "t,x,y,z,u,g,tau,sojourn");
    assert_eq!(lines.count(), 50);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_models_round_trip(seed in 0u64..10_000, ns in 1usize..5, no in 1usize..4, na in 1usize..4) {
        let m = observation_free(&random_model(seed, ns, no, na));
        let text = write_pomdp(&m).unwrap();
        prop_assert_eq!(parse_pomdp(&text).unwrap().to_tables(), m.to_tables());
        prop_assert_eq!(PomdpModel::from_json(&m.to_json().unwrap()).unwrap().to_tables(), m.to_tables());
    }

    #[test]
    fn random_controllers_round_trip(seed in 0u64..10_000, nz in 1usize..4, tied in any::<bool>()) {
        let (no, tie) = if tied { (nz, TieMode::TiedMemory) } else { (2, TieMode::Free) };
        let p = random_policy(seed, no, 3, nz, tie);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = p.with_theta(&random_feasible_theta(&p, &mut rng, 0.0)).unwrap();
        let back = FscPolicy::from_json(&p.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.theta(), p.theta());
        prop_assert_eq!(back.to_checkpoint(), p.to_checkpoint());
    }
}
