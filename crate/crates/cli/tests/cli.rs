use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scengan::data::{
    load_csv, read_scenario_csv, synth_solar, window_into_days, write_scenario_csv,
};
use scengan::{Checkpoint, Manifest};

fn scengan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scengan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = scengan(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    scengan(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, family: &str, samples: usize, seed: u64) -> PathBuf {
    let seed = seed.to_string();
    let n = samples.to_string();
    ok(&[
        "synth",
        "--family",
        family,
        "--samples",
        &n,
        "--seed",
        &seed,
        "--out",
        s(dir),
    ]);
    dir.to_path_buf()
}

fn write_config(dir: &Path, data: &Path, extra: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(
        &p,
        format!(
            "[data]\ncsv = \"{}\"\n\n[training]\nmax_epochs = 12\nm = 16\nn_discri = 2\nlatent_dim = 4\n{extra}\n\n\
             [network]\ngenerator_hidden = [8]\ndiscriminator_hidden = [8]\n\n[output]\ndir = \"{}\"\nlog_interval = 4\n",
            s(&data.join("dataset.csv")),
            s(&dir.join("run")),
        ),
    )
    .unwrap();
    p
}

#[test]
fn synth_mixed_counts_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(&tmp.path().join("a"), "mixed-wind-solar", 200, 5);
    let b = synth(&tmp.path().join("b"), "mixed-wind-solar", 200, 5);
    let c = synth(&tmp.path().join("c"), "mixed-wind-solar", 200, 6);
    let labels = fs::read_to_string(a.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().filter(|l| l.ends_with(",wind")).count(), 100);
    assert_eq!(
        labels.lines().filter(|l| l.ends_with(",solar")).count(),
        100
    );
    for f in ["dataset.csv", "manifest.toml", "labels.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        fs::read(a.join("dataset.csv")).unwrap(),
        fs::read(c.join("dataset.csv")).unwrap()
    );
    let rows = fs::read_to_string(a.join("dataset.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 1 + 200 * 24);
}

#[test]
fn synth_spatiotemporal_manifest_lists_sites() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "synth",
        "--family",
        "spatiotemporal",
        "--samples",
        "40",
        "--sites",
        "4",
        "--out",
        s(tmp.path()),
    ]);
    let m = Manifest::load(&tmp.path().join("manifest.toml")).unwrap();
    assert_eq!(m.sites.len(), 4);
    let header = fs::read_to_string(tmp.path().join("dataset.csv")).unwrap();
    assert!(header.starts_with("timestamp,site0,site1,site2,site3\n"));
}

#[test]
fn synth_rejects_bad_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(tmp.path());
    assert_eq!(
        code(&[
            "synth",
            "--family",
            "mixed-wind-solar",
            "--timesteps",
            "7",
            "--out",
            out
        ]),
        2
    );
    assert_eq!(
        code(&[
            "synth",
            "--family",
            "mixed-wind-solar",
            "--sites",
            "3",
            "--out",
            out
        ]),
        2
    );
    assert_eq!(
        code(&[
            "synth",
            "--family",
            "two-regime-wind",
            "--capacity",
            "-1",
            "--out",
            out
        ]),
        2
    );
    assert_eq!(
        code(&["synth", "--family", "no-such-family", "--out", out]),
        2
    );
    assert_eq!(
        code(&[
            "synth",
            "--family",
            "spatiotemporal",
            "--sites",
            "1",
            "--out",
            out
        ]),
        2
    );
}

#[test]
fn train_generate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"), "mixed-wind-solar", 64, 1);
    let cfg = write_config(tmp.path(), &data, "");
    let run = tmp.path().join("run");
    ok(&["train", "--config", s(&cfg)]);

    let ckpt = Checkpoint::load(&run.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.ensemble.generators.len(), 2);
    assert_eq!(ckpt.state.epoch, 12);
    assert_eq!(ckpt.sites.len(), 1);
    assert_eq!(ckpt.sites[0].capacity_mw, 100.0);

    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,l_g_0,l_g_1,l_d,v");
    assert_eq!(lines.len(), 1 + 3);
    assert!(lines[3].starts_with("12,"));

    // same config and seed reproduce the checkpoint byte for byte
    let first = fs::read(run.join("checkpoint.json")).unwrap();
    ok(&["train", "--config", s(&cfg)]);
    assert_eq!(first, fs::read(run.join("checkpoint.json")).unwrap());

    // the effective config is itself a valid config producing the same run
    let echo = run.join("effective_config.toml");
    let again = tmp.path().join("again");
    ok(&["train", "--config", s(&echo), "--out", s(&again)]);
    assert_eq!(first, fs::read(again.join("checkpoint.json")).unwrap());
    assert_eq!(
        fs::read_to_string(echo)
            .unwrap()
            .replace(s(&run.canonicalize().unwrap()), ""),
        fs::read_to_string(again.join("effective_config.toml"))
            .unwrap()
            .replace(s(&again.canonicalize().unwrap()), "")
    );

    // a different seed gives a different run
    let other = tmp.path().join("other");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--seed",
        "9",
        "--out",
        s(&other),
    ]);
    assert_ne!(first, fs::read(other.join("checkpoint.json")).unwrap());

    let ck = s(&run.join("checkpoint.json")).to_string();
    let gen = tmp.path().join("gen");
    ok(&[
        "generate",
        "--checkpoint",
        &ck,
        "--count",
        "10",
        "--seed",
        "3",
        "--out",
        s(&gen),
    ]);
    let groups = read_scenario_csv(&gen.join("scenarios.csv")).unwrap();
    assert_eq!(groups.len(), 2);
    assert!(groups.iter().all(|g| g.batch.len() == 10));
    let text = fs::read(gen.join("scenarios.csv")).unwrap();
    ok(&[
        "generate",
        "--checkpoint",
        &ck,
        "--count",
        "10",
        "--seed",
        "3",
        "--out",
        s(&gen),
    ]);
    assert_eq!(text, fs::read(gen.join("scenarios.csv")).unwrap());

    let mw = tmp.path().join("mw");
    ok(&[
        "generate",
        "--checkpoint",
        &ck,
        "--generator",
        "1",
        "--count",
        "5",
        "--seed",
        "3",
        "--mw",
        "--out",
        s(&mw),
    ]);
    let body = fs::read_to_string(mw.join("scenarios.csv")).unwrap();
    let vals: Vec<f64> = body
        .lines()
        .skip(1)
        .flat_map(|l| {
            l.split(',')
                .skip(3)
                .map(|v| v.parse::<f64>().unwrap())
                .collect::<Vec<_>>()
        })
        .collect();
    assert_eq!(vals.len(), 5 * 24);
    assert!(vals.iter().all(|v| (0.0..=100.0).contains(v)));
    assert!(vals.iter().any(|v| *v > 1.0));

    assert_eq!(
        code(&[
            "generate",
            "--checkpoint",
            &ck,
            "--generator",
            "2",
            "--out",
            s(&gen)
        ]),
        2
    );
    assert_eq!(
        code(&[
            "generate",
            "--checkpoint",
            &ck,
            "--generator",
            "x",
            "--out",
            s(&gen)
        ]),
        2
    );
    assert_eq!(
        code(&["generate", "--checkpoint", s(&cfg), "--out", s(&gen)]),
        2
    );
}

#[test]
fn train_needs_config_and_rejects_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["train"]), 2);
    let data = synth(&tmp.path().join("data"), "mixed-wind-solar", 32, 1);
    let cfg = write_config(tmp.path(), &data, "learning_rate = 0.1");
    assert_eq!(code(&["train", "--config", s(&cfg)]), 2);
    let cfg = write_config(tmp.path(), &data, "j_particles = 0");
    assert_eq!(code(&["train", "--config", s(&cfg)]), 2);
    fs::remove_file(data.join("manifest.toml")).unwrap();
    let cfg = write_config(tmp.path(), &data, "");
    assert_eq!(code(&["train", "--config", s(&cfg)]), 2);
}

#[test]
fn numeric_blow_up_exits_3_and_keeps_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"), "mixed-wind-solar", 32, 1);
    let cfg = write_config(tmp.path(), &data, "alpha = 1e300\neta = 0.0");
    assert_eq!(code(&["train", "--config", s(&cfg)]), 3);
    let ckpt = Checkpoint::load(&tmp.path().join("run/checkpoint.json")).unwrap();
    assert!(ckpt.ensemble.generators.iter().all(|p| p.theta.is_finite()));
}

#[test]
fn eval_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("data"), "mixed-wind-solar", 100, 2);
    let dataset = data.join("dataset.csv");
    let labels = data.join("labels.csv");

    // solar-only scenarios are pure
    let solar = synth_solar(50, 24, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let sc = tmp.path().join("solar.csv");
    write_scenario_csv(&sc, &[("0".to_string(), &solar)], None).unwrap();
    let out = tmp.path().join("purity");
    let o = ok(&[
        "eval",
        "--scenarios",
        s(&sc),
        "--reference",
        s(&dataset),
        "--labels",
        s(&labels),
        "--mode",
        "purity",
        "--out",
        s(&out),
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("solar"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["purity"]["0"]["purity"], 1.0);
    assert_eq!(report["purity"]["0"]["dominant_mode"], "solar");
    assert!(out.join("Fig3_profiles.csv").exists());
    assert_eq!(
        code(&[
            "eval",
            "--scenarios",
            s(&sc),
            "--mode",
            "purity",
            "--out",
            s(&out)
        ]),
        2
    );

    // reference against itself has zero correlation distance
    let st = tmp.path().join("st");
    ok(&[
        "synth",
        "--family",
        "spatiotemporal",
        "--samples",
        "60",
        "--out",
        s(&st),
    ]);
    let refs = tmp.path().join("ref.csv");
    let manifest = Manifest::load(&st.join("manifest.toml")).unwrap();
    let days = window_into_days(&load_csv(&st.join("dataset.csv"), &manifest).unwrap()).unwrap();
    write_scenario_csv(&refs, &[("0".to_string(), &days.batch)], None).unwrap();
    let gens = read_scenario_csv(&refs).unwrap();
    assert_eq!(gens[0].batch.n_sites(), 4);
    let out = tmp.path().join("corr");
    let corr_distance = |reference: &Path| {
        ok(&[
            "eval",
            "--scenarios",
            s(&refs),
            "--reference",
            s(reference),
            "--mode",
            "corr",
            "--out",
            s(&out),
        ]);
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("eval_report.json")).unwrap())
                .unwrap();
        report["correlation"]["distances"][0][2].as_f64().unwrap()
    };
    assert_eq!(corr_distance(&refs), 0.0);
    assert!(out.join("Fig4_corr.csv").exists());
    // the raw dataset differs from its 9-digit rendering only by rounding
    assert!(corr_distance(&st.join("dataset.csv")) < 1e-8);
    // with labels the reference splits into its two groups
    let out = tmp.path().join("corr2");
    ok(&[
        "eval",
        "--scenarios",
        s(&refs),
        "--reference",
        s(&refs),
        "--labels",
        s(&st.join("labels.csv")),
        "--mode",
        "corr",
        "--out",
        s(&out),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(
        report["correlation"]["distances"].as_array().unwrap().len(),
        2
    );

    // shape mismatch between scenarios and reference
    assert_eq!(
        code(&[
            "eval",
            "--scenarios",
            s(&sc),
            "--reference",
            s(&refs),
            "--mode",
            "corr",
            "--out",
            s(&out)
        ]),
        2
    );

    // four generators give four boxplot rows
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batches: Vec<_> = (0..4)
        .map(|_| synth_solar(20, 24, &mut rng).unwrap())
        .collect();
    let four = tmp.path().join("four.csv");
    let named: Vec<(String, &scengan::ScenarioBatch)> = batches
        .iter()
        .enumerate()
        .map(|(i, b)| (i.to_string(), b))
        .collect();
    write_scenario_csv(&four, &named, None).unwrap();
    let out = tmp.path().join("stats");
    ok(&[
        "eval",
        "--scenarios",
        s(&four),
        "--mode",
        "stats",
        "--out",
        s(&out),
    ]);
    let fig5 = fs::read_to_string(out.join("Fig5_stats.csv")).unwrap();
    assert_eq!(fig5.lines().count(), 1 + 4);
}
