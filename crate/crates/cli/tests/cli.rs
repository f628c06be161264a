use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vascmech::case_io;
use vascmech::isr;
use vascmech::report;
use vascmech::stress::{self, WeightedValue};
use vascmech::synth::{self, SynthCaseParams};
use vascmech_cli::exit;

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_vascmech")).args(args).output().expect("spawn vascmech");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> String {
    p.to_str().expect("utf-8 path").to_string()
}

fn small_case(dir: &Path, slices: usize) -> PathBuf {
    let case = dir.join("case");
    let (code, err) = run(&["--out", &s(&case), "synth", "--slices", &slices.to_string()]);
    assert_eq!(code, exit::SUCCESS, "{err}");
    case
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn assert_echo_and_manifest(dir: &Path, stage: &str) {
    assert!(dir.join("config.txt").is_file(), "{} lacks config.txt", dir.display());
    let m: serde_json::Value = serde_json::from_str(&read(&dir.join("manifest.json"))).expect("manifest json");
    assert_eq!(m["stage"], stage);
    assert!(m["version"].is_string());
    assert!(m["timings_s"].is_array());
}

#[test]
fn synth_writes_a_loadable_case() {
    let tmp = tempfile::tempdir().unwrap();
    let case = small_case(tmp.path(), 3);
    let bundle = case_io::load_case(&case).expect("valid case");
    assert_eq!(bundle.n_slices(), 3);
    assert_echo_and_manifest(&case, "synth");
}

#[test]
fn segment_is_deterministic_and_reports_model() {
    let tmp = tempfile::tempdir().unwrap();
    let case = small_case(tmp.path(), 3);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let (code, err) = run(&["--out", &s(out), "segment", &s(&case)]);
        assert_eq!(code, exit::SUCCESS, "{err}");
    }
    for f in ["gmm_model.csv", "histogram.csv", "labels.raw", "segment.json", "config.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert_echo_and_manifest(&a, "segment");
    let model = read(&a.join("gmm_model.csv"));
    assert_eq!(model.lines().count(), 5);
    assert!(model.starts_with("component,mean,variance,sd,weight"));
}

#[test]
fn two_cluster_case_has_two_dominant_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let mut case = synth::synth_case(&SynthCaseParams {
        n_slices: 2,
        ..SynthCaseParams::default()
    })
    .bundle;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let flags = case.mask.flags.clone();
    for (v, m) in case.volume.values.iter_mut().zip(flags) {
        if m != 0 {
            *v = if rng.random_bool(0.5) { 20 } else { 500 } + rng.random_range(-5..=5);
        }
    }
    let dir = tmp.path().join("two");
    case_io::save_case(&case, &dir).unwrap();
    let out = tmp.path().join("seg");
    let (code, err) = run(&["--out", &s(&out), "segment", &s(&dir)]);
    assert_eq!(code, exit::SUCCESS, "{err}");
    let mut weights: Vec<f64> = read(&out.join("gmm_model.csv"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    weights.sort_by(|a, b| b.total_cmp(a));
    assert!(weights[0] > 0.4 && weights[1] > 0.4, "{weights:?}");
    assert!(weights[2] + weights[3] < 0.05, "{weights:?}");
}

#[test]
fn missing_mask_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let case = small_case(tmp.path(), 2);
    fs::remove_file(case.join(case_io::MASK_RAW)).unwrap();
    let (code, err) = run(&["--out", &s(&tmp.path().join("o")), "segment", &s(&case)]);
    assert_eq!(code, exit::INPUT);
    assert!(err.contains("mask.raw"), "{err}");
}

#[test]
fn config_precedence_and_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.txt");
    fs::write(&cfg, "gmm.max_iter = 40\nisr.tau_step = 10\n").unwrap();
    let out = tmp.path().join("o");
    let (code, err) = run(&["--config", &s(&cfg), "--set", "gmm.max_iter=7", "--out", &s(&out), "synth", "--slices", "1"]);
    assert_eq!(code, exit::SUCCESS, "{err}");
    let echoed = read(&out.join("config.txt"));
    assert!(echoed.lines().any(|l| l.replace(' ', "") == "gmm.max_iter=7"), "{echoed}");
    assert!(echoed.lines().any(|l| l.replace(' ', "") == "isr.tau_step=10"), "{echoed}");

    let (code, _) = run(&["--set", "nope.key=1", "--out", &s(&out), "morphology-study"]);
    assert_eq!(code, exit::INPUT);
    let (code, _) = run(&["--set", "gmm.max_iter", "--out", &s(&out), "morphology-study"]);
    assert_eq!(code, exit::INPUT);
}

#[test]
fn self_test_without_case() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("st");
    let (code, err) = run(&["--out", &s(&out), "simulate", "--self-test"]);
    assert_eq!(code, exit::SUCCESS, "{err}");
    let v: serde_json::Value = serde_json::from_str(&read(&out.join("self_test.json"))).unwrap();
    assert_eq!(v["passed"], true);
    let exact = 1.0 * (1.5f64.powi(2) + 9.0) / (9.0 - 1.5f64.powi(2));
    assert!((v["exact"].as_f64().unwrap() - exact).abs() < 1e-12);
    assert_echo_and_manifest(&out, "simulate");

    let (code, _) = run(&["--out", &s(&out), "simulate"]);
    assert_eq!(code, exit::INPUT);
}

#[test]
fn degenerate_slice_fails_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let case = small_case(tmp.path(), 2);
    let mut bundle = case_io::load_case(&case).unwrap();
    // intima-outer contour pulled inside the lumen
    let c = &mut bundle.contours[1];
    let center = c.lumen.iter().sum::<vascmech::geometry::Vec2>() / c.lumen.len() as f64;
    for p in c.intima_outer.iter_mut() {
        *p = center + (*p - center) * 0.3;
    }
    let bad = tmp.path().join("bad");
    case_io::save_case(&bundle, &bad).unwrap();
    let out = tmp.path().join("sim");
    let (code, err) = run(&["--out", &s(&out), "simulate", &s(&bad)]);
    assert_eq!(code, exit::PARTIAL, "{err}");
    let status = read(&out.join("slice_status.csv"));
    let rows: Vec<&str> = status.lines().skip(1).collect();
    assert!(rows[0].starts_with("0,ok,"), "{status}");
    assert!(rows[1].starts_with("1,failed,"), "{status}");
    assert!(out.join("slices/slice_000_field.csv").is_file());
    assert!(!out.join("slices/slice_001_field.csv").exists());
    assert_eq!(read(&out.join("summary_residual.csv")).lines().count(), 2);
}

#[test]
fn simulate_then_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let case = small_case(tmp.path(), 1);
    let sim = tmp.path().join("sim");
    let (code, err) = run(&["--out", &s(&sim), "simulate", &s(&case)]);
    assert_eq!(code, exit::SUCCESS, "{err}");
    assert!(sim.join("slices/slice_000_residual.vtk").is_file());

    let an = tmp.path().join("an");
    let (code, err) = run(&["--out", &s(&an), "analyze", &s(&sim)]);
    assert_eq!(code, exit::SUCCESS, "{err}");
    assert_echo_and_manifest(&an, "analyze");
    // same config and field: recomputed summaries equal the simulate ones
    assert_eq!(read(&an.join("summary_residual.csv")), read(&sim.join("summary_residual.csv")));
    assert_eq!(read(&an.join("summary_max.csv")), read(&sim.join("summary_max.csv")));
    let th: serde_json::Value = serde_json::from_str(&read(&an.join("map_thresholds.json"))).unwrap();
    assert!(th["light"].as_f64().unwrap() <= th["dark"].as_f64().unwrap());
    let bands = read(&an.join("stress_bands.csv"));
    assert!(bands.lines().skip(1).all(|l| ["none", "light", "dark"].contains(&l.rsplit(',').next().unwrap())));
    roxmltree::Document::parse(&read(&an.join("stress_profile.svg"))).expect("well-formed svg");

    let intima = tmp.path().join("an_intima");
    let (code, _) = run(&["--set", "analysis.layers=intima", "--out", &s(&intima), "analyze", &s(&sim)]);
    assert_eq!(code, exit::SUCCESS);
    assert_ne!(read(&intima.join("summary_residual.csv")), read(&an.join("summary_residual.csv")));
}

#[test]
fn mesh_stage_writes_tables_and_quality() {
    let tmp = tempfile::tempdir().unwrap();
    let case = small_case(tmp.path(), 2);
    let out = tmp.path().join("mesh");
    let (code, err) = run(&["--out", &s(&out), "mesh", &s(&case)]);
    assert_eq!(code, exit::SUCCESS, "{err}");
    let q = read(&out.join("mesh_quality.csv"));
    assert_eq!(q.lines().count(), 3);
    for row in q.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[1], "ok");
        assert!(f[3].parse::<f64>().unwrap() > 0.0);
    }
    for suffix in ["nodes.csv", "elements.csv", "mesh.vtk"] {
        assert!(out.join(format!("slices/slice_001_{suffix}")).is_file());
    }
}

/// Summaries from random fields and restenosis `100 frac_above(30)`.
fn write_fixture(dir: &Path, n: usize, drop_followup: &[usize]) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = isr::default_tau_grid();
    let sums: Vec<_> = (0..n)
        .map(|i| {
            let scale = rng.random_range(5.0..60.0);
            let spread = rng.random_range(0.2..1.5);
            let field: Vec<WeightedValue> = (0..300)
                .map(|_| WeightedValue {
                    value: scale * (spread * rng.random_range(-1.5f64..1.5)).exp(),
                    weight: 1.0,
                })
                .collect();
            stress::summarize_field(i, &field, &grid).unwrap()
        })
        .collect();
    let summary = dir.join("summary.csv");
    let mut buf = Vec::new();
    report::write_summary_csv(&mut buf, &sums).unwrap();
    fs::write(&summary, buf).unwrap();
    let mut prof = String::from("s,d_pre,d_post,d_followup,in_stent\n");
    for (i, sm) in sums.iter().enumerate() {
        let fu = if drop_followup.contains(&i) {
            String::new()
        } else {
            (3.0 * (1.0 - sm.fraction_above(30.0))).to_string()
        };
        prof += &format!("{},2.5,3,{fu},1\n", i as f64 * 0.5);
    }
    let profiles = dir.join("profiles.csv");
    fs::write(&profiles, prof).unwrap();
    (summary, profiles)
}

#[test]
fn correlate_constructed_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let (summary, profiles) = write_fixture(tmp.path(), 30, &[4, 9]);
    let out = tmp.path().join("cor");
    let (code, err) = run(&["--out", &s(&out), "correlate", "--summary", &s(&summary), "--profiles", &s(&profiles)]);
    assert_eq!(code, exit::SUCCESS, "{err}");
    let v: serde_json::Value = serde_json::from_str(&read(&out.join("correlation.json"))).unwrap();
    assert_eq!(v["argmax_tau"], 30.0);
    assert!((v["argmax_r"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["n_points"], 28);
    let skipped: Vec<u64> = v["skipped_slices"].as_array().unwrap().iter().map(|x| x["slice"].as_u64().unwrap()).collect();
    assert_eq!(skipped, vec![4, 9]);
    let svg = read(&out.join("correlation.svg"));
    let doc = roxmltree::Document::parse(&svg).expect("well-formed svg");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert!(svg.contains("r(mean)") && svg.contains("r(p95)"));
    assert_eq!(read(&out.join("sweep.csv")).lines().count(), 1 + 2 + 20);
    assert_echo_and_manifest(&out, "correlate");
}

#[test]
fn correlate_rejects_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (summary, profiles) = write_fixture(tmp.path(), 10, &[]);
    let out = s(&tmp.path().join("cor"));
    let missing = s(&tmp.path().join("absent.csv"));
    let (code, _) = run(&["--out", &out, "correlate", "--summary", &s(&summary), "--profiles", &missing]);
    assert_eq!(code, exit::INPUT);
    let (code, _) = run(&["--out", &out, "correlate", "--summary", &s(&summary), "--summary", &s(&summary), "--profiles", &s(&profiles)]);
    assert_eq!(code, exit::INPUT);
    // a threshold grid the summary does not carry
    let (code, err) = run(&["--set", "isr.tau_step=7", "--out", &out, "correlate", "--summary", &s(&summary), "--profiles", &s(&profiles)]);
    assert_eq!(code, exit::INPUT, "{err}");
}

#[test]
fn morphology_study_orderings() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ms");
    let (code, err) = run(&["--out", &s(&out), "morphology-study"]);
    assert_eq!(code, exit::SUCCESS, "{err}");
    let v: serde_json::Value = serde_json::from_str(&read(&out.join("scenarios.json"))).unwrap();
    let names: Vec<&str> = v["scenarios"].as_array().unwrap().iter().map(|x| x["scenario"].as_str().unwrap()).collect();
    assert_eq!(names, ["homogeneous_fibrotic", "asymmetric_block_90", "opposing_blocks_60", "circumferential_270"]);
    for k in ["circumferential_above_block", "block_above_homogeneous", "behind_block_below_homogeneous"] {
        assert_eq!(v["orderings"][k], true, "{k}");
    }
    assert_eq!(read(&out.join("scenarios.csv")).lines().count(), 5);
}

#[test]
fn simulate_is_thread_count_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let case = small_case(tmp.path(), 2);
    let (a, b) = (tmp.path().join("t1"), tmp.path().join("t2"));
    for (out, t) in [(&a, "1"), (&b, "2")] {
        let (code, err) = run(&["--threads", t, "--out", &s(out), "simulate", &s(&case)]);
        assert_eq!(code, exit::SUCCESS, "{err}");
    }
    for f in ["summary_max.csv", "summary_residual.csv", "slice_status.csv", "slices/slice_001_field.csv", "slices/slice_001_residual.vtk"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}
