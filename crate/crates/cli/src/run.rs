//! The five subcommands.

use std::io::Write;
use std::time::Instant;

use fscgrad::actor::{alignment, alignment_trial, estimate as estimate_gradient, train as run_train, EstimatorKind};
use fscgrad::posmdp::{mean_sojourn, posmdp_average_cost, posmdp_gradient_exact, posmdp_td_estimate, simulate_posmdp};
use fscgrad::{exact_gradient, simulate, ExactSolution, InitialState};
use rayon::prelude::*;

use crate::config::Resolved;
use crate::output::{self, num, pm, summary};
use crate::CliError;

/// Trajectory seeds: `seed, seed + 1, …`.
fn trial_seeds(r: &Resolved) -> Vec<u64> {
    (0..r.cfg.estimator.seeds as u64).map(|i| r.cfg.seed + i).collect()
}

pub fn exact(r: &Resolved) -> Result<(), CliError> {
    let m = r.model()?;
    let p = r.policy(&m)?;
    let sol = ExactSolution::compute(&m, &p, Some(r.cfg.estimator.beta))?;
    let dir = r.out_dir()?;
    let mut f = output::file(&dir, "exact.csv", r)?;
    sol.write_csv(&mut f)?;
    f.flush()?;

    let g = sol.gradient(&p);
    let gb = sol.beta_gradient(&p).expect("discounted solution requested");
    let mut w = output::csv(&dir, "gradient.csv", r)?;
    w.write_record(["index", "theta", "grad", "grad_beta"])?;
    for (i, t) in p.theta().iter().enumerate() {
        w.write_record([i.to_string(), num(*t), num(g.0[i]), num(gb.0[i])])?;
    }
    w.flush()?;
    println!(
        "eta = {:.6}  |grad| = {:.4e}  cos(grad_beta, grad) = {:.6}",
        sol.eta,
        norm(&g.0),
        gb.cosine(&g)
    );
    Ok(())
}

pub fn estimate(r: &Resolved) -> Result<(), CliError> {
    let m = r.model()?;
    let p = r.policy(&m)?;
    let spec = &r.cfg.estimator;
    let cfg = spec.estimator();
    let exact = exact_gradient(&m, &p)?;
    let rows = trial_seeds(r)
        .into_par_iter()
        .map(|seed| {
            let t = simulate(&m, &p, spec.trajectory_len, seed, &InitialState::Model)?;
            let e = estimate_gradient(&t.hidden_view(), &p, &cfg)?;
            let a = alignment(&e.value, &exact.0, &p, spec.alignment);
            Ok((seed, a, e.value))
        })
        .collect::<Result<Vec<_>, fscgrad::Error>>()?;

    let dir = r.out_dir()?;
    let mut w = output::csv(&dir, "estimate.csv", r)?;
    let mut header = vec![
        "trial".to_string(),
        "seed".into(),
        "estimator".into(),
        "alignment".into(),
    ];
    header.extend((0..p.dim()).map(|i| format!("g{i}")));
    w.write_record(&header)?;
    let mut exact_row = vec![String::new(), String::new(), "exact".into(), String::new()];
    exact_row.extend(exact.0.iter().map(|v| num(*v)));
    w.write_record(&exact_row)?;
    for (i, (seed, a, g)) in rows.iter().enumerate() {
        let mut row = vec![i.to_string(), seed.to_string(), cfg.kind.tag().into(), num(*a)];
        row.extend(g.iter().map(|v| num(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    let aligns: Vec<f64> = rows.iter().map(|r| r.1).collect();
    println!("{} alignment: {}", cfg.kind.tag(), pm(&aligns));
    Ok(())
}

pub fn compare(r: &Resolved) -> Result<(), CliError> {
    let m = r.model()?;
    let p = r.policy(&m)?;
    let spec = &r.cfg.estimator;
    let cfg = spec.estimator();
    let exact = exact_gradient(&m, &p)?;
    let kinds = EstimatorKind::ALL;
    let rows = trial_seeds(r)
        .into_par_iter()
        .map(|seed| {
            alignment_trial(
                &m,
                &p,
                &exact.0,
                &cfg,
                &kinds,
                spec.trajectory_len,
                seed,
                spec.alignment,
            )
            .map(|a| (seed, a))
        })
        .collect::<Result<Vec<_>, fscgrad::Error>>()?;
    write_alignment_table(r, "compare", &kinds, &rows, None)
}

/// `<stem>.csv` with one row per trajectory and a summary row, and `<stem>_summary.csv`.
fn write_alignment_table(
    r: &Resolved,
    stem: &str,
    kinds: &[EstimatorKind],
    rows: &[(u64, Vec<f64>)],
    extra: Option<(&str, &[f64])>,
) -> Result<(), CliError> {
    let dir = r.out_dir()?;
    let mut w = output::csv(&dir, &format!("{stem}.csv"), r)?;
    let mut header = vec!["trial".to_string(), "seed".into()];
    header.extend(kinds.iter().map(|k| k.tag().to_string()));
    if let Some((name, _)) = extra {
        header.push(name.into());
    }
    w.write_record(&header)?;
    for (i, (seed, a)) in rows.iter().enumerate() {
        let mut row = vec![i.to_string(), seed.to_string()];
        row.extend(a.iter().map(|v| num(*v)));
        if let Some((_, e)) = extra {
            row.push(num(e[i]));
        }
        w.write_record(&row)?;
    }
    let column = |k: usize| rows.iter().map(|r| r.1[k]).collect::<Vec<f64>>();
    let mut row = vec!["mean ± std".to_string(), String::new()];
    row.extend((0..kinds.len()).map(|k| pm(&column(k))));
    w.write_record(&row)?;
    w.flush()?;

    let mut s = output::csv(&dir, &format!("{stem}_summary.csv"), r)?;
    s.write_record(["estimator", "mean", "std", "trials"])?;
    for (k, kind) in kinds.iter().enumerate() {
        let col = column(k);
        let (mean, sd) = summary(&col);
        s.write_record([
            kind.tag().to_string(),
            num(mean),
            sd.map(num).unwrap_or_default(),
            col.len().to_string(),
        ])?;
        println!("{:>7}  {}", kind.tag(), pm(&col));
    }
    s.flush()?;
    Ok(())
}

pub fn train(r: &Resolved) -> Result<(), CliError> {
    let m = r.model()?;
    let p = r.policy(&m)?;
    let cfg = r.train_config();
    let dir = r.out_dir()?;
    let start = Instant::now();
    let mut w = output::csv(&dir, "train.csv", r)?;
    w.write_record(["iter", "eta_oracle", "grad_norm", "alignment"])?;
    let mut write_err = None;
    let (last, records) = run_train(&m, &p, &cfg, |rec| {
        if rec.iter % 50 == 0 {
            log::info!("iter {} eta {:.6}", rec.iter, rec.eta);
        }
        let row = [
            rec.iter.to_string(),
            num(rec.eta),
            num(rec.grad_norm),
            num(rec.alignment),
        ];
        if let Err(e) = w.write_record(&row) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    w.flush()?;
    let wall = start.elapsed().as_secs_f64();
    std::fs::write(dir.join("checkpoint.json"), last.to_json()?)?;

    let mut t = output::csv(&dir, "timing.csv", r)?;
    t.write_record(["iterations", "wall_seconds"])?;
    t.write_record([cfg.iterations.to_string(), format!("{wall:.3}")])?;
    t.flush()?;
    let increases = records.windows(2).filter(|w| w[1].eta > w[0].eta).count();
    println!(
        "eta {:.6} -> {:.6} over {} iterations ({} increases, {:.1} s)",
        records[0].eta,
        records.last().unwrap().eta,
        cfg.iterations,
        increases,
        wall
    );
    Ok(())
}

pub fn posmdp(r: &Resolved) -> Result<(), CliError> {
    let m = r.posmdp(r.model()?)?;
    let p = r.policy(m.base())?;
    let spec = &r.cfg.estimator;
    let cfg = spec.estimator();
    let eta = posmdp_average_cost(&m, &p)?;
    let tau = mean_sojourn(&m, &p)?;
    let exact = posmdp_gradient_exact(&m, &p)?;
    let dir = r.out_dir()?;
    let mut w = output::csv(&dir, "posmdp_exact.csv", r)?;
    w.write_record(["quantity", "index", "value"])?;
    w.write_record(["eta".to_string(), String::new(), num(eta)])?;
    w.write_record(["mean_sojourn".to_string(), String::new(), num(tau)])?;
    for (i, g) in exact.0.iter().enumerate() {
        w.write_record(["grad".to_string(), i.to_string(), num(*g)])?;
    }
    w.flush()?;

    let kinds = EstimatorKind::ALL;
    let tracking = r.cfg.posmdp.tracking;
    let rows = trial_seeds(r)
        .into_par_iter()
        .map(|seed| {
            let t = simulate_posmdp(&m, &p, spec.trajectory_len, seed, &InitialState::Model)?;
            let view = t.timed_view();
            let a = kinds
                .iter()
                .map(|&kind| {
                    let c = fscgrad::actor::EstimatorConfig { kind, ..cfg.clone() };
                    let e = posmdp_td_estimate(&view, &p, &c, tracking)?;
                    Ok(alignment(&e.value, &exact.0, &p, spec.alignment))
                })
                .collect::<Result<Vec<f64>, fscgrad::Error>>()?;
            Ok(((seed, a), t.empirical_average_cost()))
        })
        .collect::<Result<Vec<_>, fscgrad::Error>>()?;
    let (rows, eta_hat): (Vec<_>, Vec<f64>) = rows.into_iter().unzip();
    println!(
        "eta = {eta:.6}  mean sojourn = {tau:.6}  empirical eta: {}",
        pm(&eta_hat)
    );
    write_alignment_table(r, "posmdp", &kinds, &rows, Some(("eta_hat", &eta_hat)))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;
    use crate::config::{ExperimentConfig, Overrides};

    fn resolved(dir: &Path, toml_text: &str) -> Result<Resolved, CliError> {
        let cfg = dir.join("cfg.toml");
        std::fs::write(&cfg, toml_text).unwrap();
        let over = Overrides {
            out: Some(dir.join("out")),
            ..Default::default()
        };
        ExperimentConfig::load(Some(&cfg), &over)
    }

    fn lines(dir: &Path, name: &str) -> Vec<String> {
        std::fs::read_to_string(dir.join("out").join(name))
            .unwrap()
            .lines()
            .map(str::to_string)
            .collect()
    }

    #[test]
    fn compare_writes_one_row_per_trajectory_and_a_summary() {
        let d = tempfile::tempdir().unwrap();
        let r = resolved(d.path(), "[estimator]\nseeds = 3\ntrajectory_len = 2000\n").unwrap();
        compare(&r).unwrap();
        let l = lines(d.path(), "compare.csv");
        assert_eq!(l[0], format!("# config_sha256={} seed=0", r.hash));
        assert_eq!(l[1], "trial,seed,B-TD,OL-TD,GPOMDP");
        assert_eq!(l.len(), 2 + 3 + 1);
        assert!(l[5].starts_with("mean ± std,,") && l[5].matches(" ± ").count() == 4);
    }

    #[test]
    fn single_trajectory_leaves_the_spread_empty() {
        let d = tempfile::tempdir().unwrap();
        let r = resolved(d.path(), "[estimator]\nseeds = 1\ntrajectory_len = 2000\n").unwrap();
        compare(&r).unwrap();
        let l = lines(d.path(), "compare_summary.csv");
        assert_eq!(l[1], "estimator,mean,std,trials");
        for row in &l[2..] {
            let f: Vec<&str> = row.split(',').collect();
            assert_eq!((f[2], f[3]), ("", "1"), "{row}");
        }
    }

    #[test]
    fn near_minimum_checkpoint_gives_per_trajectory_rows() {
        let d = tempfile::tempdir().unwrap();
        let r = resolved(
            d.path(),
            "[policy]\ncheckpoint = \"toy2-near-min\"\n[estimator]\nseeds = 20\ntrajectory_len = 1000\nalignment = \"projected\"\n",
        )
        .unwrap();
        compare(&r).unwrap();
        assert_eq!(lines(d.path(), "compare.csv").len(), 2 + 20 + 1);
    }

    #[test]
    fn exact_dump_for_toy2_starts_with_the_bundled_oracle() {
        let d = tempfile::tempdir().unwrap();
        let r = resolved(d.path(), "[estimator]\nbeta = 0.9\n").unwrap();
        exact(&r).unwrap();
        let got = lines(d.path(), "exact.csv");
        let golden: Vec<&str> = fscgrad::toy::TOY2_ORACLE_CSV.lines().collect();
        assert_eq!(&got[1..], &golden[..]);
    }

    #[test]
    fn constant_cost_gives_a_zero_gradient() {
        let d = tempfile::tempdir().unwrap();
        let m = fscgrad::toy::toy2().map_costs(|_, _, _, _| 0.25);
        std::fs::write(
            d.path().join("flat.pomdp"),
            fscgrad::cassandra::write_pomdp(&m).unwrap(),
        )
        .unwrap();
        let r = resolved(d.path(), "model = \"flat.pomdp\"\n").unwrap();
        exact(&r).unwrap();
        for row in &lines(d.path(), "gradient.csv")[2..] {
            let f: Vec<f64> = row.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
            assert!(f.iter().all(|g| g.abs() < 1e-14), "{row}");
        }
    }

    #[test]
    fn reducible_model_is_a_model_error() {
        let d = tempfile::tempdir().unwrap();
        let text = "states: 2\nactions: 1\nobservations: 1\nT: 0\nidentity\nO: 0\nuniform\nR: 0 : * : * : * 1.0\n";
        std::fs::write(d.path().join("split.pomdp"), text).unwrap();
        let r = resolved(d.path(), "model = \"split.pomdp\"\n[policy]\nn_internal = 1\n").unwrap();
        let e = exact(&r).unwrap_err();
        assert!(
            matches!(e, CliError::Model(fscgrad::Error::MultipleRecurrentClasses { .. })),
            "{e}"
        );
        assert_eq!(e.code(), 3);
    }

    #[test]
    fn configuration_problems_exit_with_code_two() {
        let d = tempfile::tempdir().unwrap();
        for text in [
            "[estimator]\nbeta = 1.0\n",
            "[estimator]\nlambda = 1.5\n",
            "[estimator]\nseeds = 0\n",
            "[estimatr]\nbeta = 0.5\n",
            "model = \"missing.pomdp\"\n",
            "[policy]\ncheckpoint = \"missing.json\"\n",
        ] {
            let e = resolved(d.path(), text).unwrap_err();
            assert_eq!(e.code(), 2, "{text}: {e}");
        }
        let r = resolved(d.path(), "[policy]\ntheta = [2.0, 0.5, 0.5, 0.5, 0.2]\n").unwrap();
        assert_eq!(exact(&r).unwrap_err().code(), 2);
    }

    #[test]
    fn zero_iterations_echo_the_start() {
        let d = tempfile::tempdir().unwrap();
        let r = resolved(d.path(), "[train]\niterations = 0\n").unwrap();
        train(&r).unwrap();
        let back =
            fscgrad::FscPolicy::from_json(&std::fs::read_to_string(d.path().join("out/checkpoint.json")).unwrap())
                .unwrap();
        assert_eq!(back.theta(), fscgrad::toy::toy2_controller().theta());
        let l = lines(d.path(), "train.csv");
        assert_eq!(l[1], "iter,eta_oracle,grad_norm,alignment");
        assert_eq!(l.len(), 3);
        assert!(l[2].ends_with(",,"));
    }

    #[test]
    fn resuming_from_a_checkpoint_continues_the_run() {
        let full = tempfile::tempdir().unwrap();
        let r = resolved(
            full.path(),
            "[estimator]\ntrajectory_len = 2000\n[train]\niterations = 6\n",
        )
        .unwrap();
        train(&r).unwrap();

        let half = tempfile::tempdir().unwrap();
        let r = resolved(
            half.path(),
            "[estimator]\ntrajectory_len = 2000\n[train]\niterations = 3\n",
        )
        .unwrap();
        train(&r).unwrap();
        std::fs::copy(half.path().join("out/checkpoint.json"), half.path().join("mid.json")).unwrap();
        let r = resolved(
            half.path(),
            "[policy]\ncheckpoint = \"mid.json\"\n[estimator]\ntrajectory_len = 2000\n[train]\niterations = 3\nfirst_iter = 3\n",
        )
        .unwrap();
        train(&r).unwrap();

        let a = std::fs::read(full.path().join("out/checkpoint.json")).unwrap();
        let b = std::fs::read(half.path().join("out/checkpoint.json")).unwrap();
        assert_eq!(a, b);
        let (la, lb) = (lines(full.path(), "train.csv"), lines(half.path(), "train.csv"));
        assert_eq!(la[5..], lb[2..]);
    }

    #[test]
    fn posmdp_with_unit_sojourns_reports_the_discrete_cost() {
        let d = tempfile::tempdir().unwrap();
        let r = resolved(
            d.path(),
            "[estimator]\nseeds = 2\ntrajectory_len = 2000\n[posmdp]\nsojourn = { family = \"deterministic\", value = 1.0 }\n",
        )
        .unwrap();
        posmdp(&r).unwrap();
        let l = lines(d.path(), "posmdp_exact.csv");
        let eta: f64 = l[2].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(
            eta,
            fscgrad::ExactSolution::compute(&fscgrad::toy::toy2(), &fscgrad::toy::toy2_controller(), None)
                .unwrap()
                .eta
        );
        assert_eq!(lines(d.path(), "posmdp.csv")[1], "trial,seed,B-TD,OL-TD,GPOMDP,eta_hat");
    }
}
