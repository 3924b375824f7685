use hpsde::harness::{read_rows, run_baseline_monolithic, run_hpsde, HpsdeConfig, PolicyBundle};

fn short(env: &str, seed: u64) -> HpsdeConfig {
    let mut cfg = HpsdeConfig::for_env(env).unwrap();
    cfg.seed = seed;
    cfg.iterations = 4;
    cfg.initial_rollouts = 80;
    cfg.rollouts_per_iter = 80;
    cfg
}

#[test]
fn config_survives_a_toml_round_trip() {
    for env in ["toy2", "toy3", "puddle", "arm"] {
        let cfg = short(env, 5);
        let back = HpsdeConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, back, "{env}");
    }
}

#[test]
fn partial_tables_keep_the_other_defaults() {
    let cfg =
        HpsdeConfig::from_toml_str("[mixture]\nalpha0 = 0.5\n[environment]\nname = \"toy3\"\n")
            .unwrap();
    let mut expected = HpsdeConfig::for_env("toy3").unwrap();
    expected.mixture.alpha0 = 0.5;
    assert_eq!(cfg, expected);
}

#[test]
fn short_run_learns_and_saves_a_replayable_bundle() {
    let r = run_hpsde(&short("toy2", 1)).unwrap();
    assert!(r.failure.is_none());
    let rows = r.trace.rows();
    assert_eq!(rows.len(), 5);
    assert!(rows.last().unwrap().mean_return > rows[0].mean_return);
    assert!(rows.iter().skip(1).any(|row| row.n_options >= 2));

    let mut csv = Vec::new();
    r.trace.write_csv(&mut csv).unwrap();
    assert_eq!(read_rows(csv.as_slice()).unwrap(), rows);

    let bundle = r.bundle.unwrap();
    let back = PolicyBundle::from_json(&bundle.to_json().unwrap()).unwrap();
    let a = bundle.evaluate(50, 9, true).unwrap();
    let b = back.evaluate(50, 9, true).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.option_counts.iter().sum::<usize>(), 50);
}

#[test]
fn baseline_keeps_a_single_option() {
    let r = run_baseline_monolithic(&short("toy2", 2)).unwrap();
    assert!(r.trace.rows().iter().all(|row| row.n_options == 1));
    assert_eq!(r.final_policies().unwrap().len(), 1);
}
